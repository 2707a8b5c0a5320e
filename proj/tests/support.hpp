#pragma once

#include "proton/random.hpp"
#include "proton/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testing {

using namespace proton;

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool grad = true) {
    std::normal_distribution<double> d(0.0, scale);
    Vector v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = d(rng);
    return Tensor(std::move(shape), std::move(v), grad);
}

inline double rel_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative error between taped gradients and central differences of
/// `loss` over the given coordinates of every parameter (all when empty).
/// The denominator floor grows with |loss| so that gradients below the
/// difference quotient's rounding noise do not dominate.
inline double gradient_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& params,
                             double h = 1e-5, Index max_coords = -1, std::uint64_t seed = 1) {
    for (auto p : params) p.zero_grad();
    double floor = 1e-6;
    {
        Tape tape;
        TapeScope scope(tape);
        const Tensor l = loss();
        floor *= std::max(1.0, std::abs(l.item()));
        backward(l);
    }
    Rng rng(seed);
    double worst = 0.0;
    for (auto p : params) {
        const Vector analytic = p.has_grad() ? p.grad() : Vector::Zero(p.size());
        std::vector<Index> coords(static_cast<std::size_t>(p.size()));
        for (Index i = 0; i < p.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
        if (max_coords > 0 && p.size() > max_coords) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(static_cast<std::size_t>(max_coords));
        }
        for (Index i : coords) {
            const double orig = p.data()[i];
            p.data()[i] = orig + h;
            const double up = loss().item();
            p.data()[i] = orig - h;
            const double down = loss().item();
            p.data()[i] = orig;
            worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * h), floor));
        }
    }
    return worst;
}

}  // namespace testing
