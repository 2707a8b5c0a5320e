#pragma once

#include "proton/random.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace testing {

using proton::Index;
using proton::Rng;

// Exhaustive threshold sweep written independently of the library: every
// count is recomputed pairwise at every candidate threshold.
struct Rational {
    __int128 num;
    __int128 den;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

inline __int128 gcd128(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    while (b != 0) {
        __int128 t = a % b;
        a = b;
        b = t < 0 ? -t : t;
    }
    return a;
}

inline Rational reduce(__int128 n, __int128 d) {
    if (d < 0) {
        n = -n;
        d = -d;
    }
    const __int128 g = gcd128(n, d);
    return g ? Rational{n / g, d / g} : Rational{n, d};
}

inline Rational oracle_eer(const std::vector<double>& gen, const std::vector<double>& imp) {
    std::vector<double> ts{-std::numeric_limits<double>::infinity()};
    for (double s : gen) ts.push_back(s);
    for (double s : imp) ts.push_back(s);
    std::sort(ts.begin() + 1, ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    const __int128 G = static_cast<__int128>(gen.size()), I = static_cast<__int128>(imp.size());
    __int128 prev_a = 0, prev_b = 0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        __int128 a = 0, b = 0;
        for (double s : imp) a += s <= ts[k];
        for (double s : gen) b += s > ts[k];
        // FRR − FAR in units of 1/(G·I)
        const __int128 d1 = b * I - a * G;
        if (d1 <= 0) {
            if (d1 == 0 || k == 0) return reduce(a, I);
            const __int128 d0 = prev_b * I - prev_a * G;
            // FAR(s) = prev_a/I + s·(a − prev_a)/I with s = d0 / (d0 − d1)
            return reduce(prev_a * (d0 - d1) + d0 * (a - prev_a), (d0 - d1) * I);
        }
        prev_a = a;
        prev_b = b;
    }
    return {1, 1};
}

inline double oracle_auc(const std::vector<double>& gen, const std::vector<double>& imp) {
    __int128 twice = 0;
    for (double g : gen)
        for (double i : imp) twice += g < i ? 2 : (g == i ? 1 : 0);
    return reduce(twice, 2 * static_cast<__int128>(gen.size()) * static_cast<__int128>(imp.size())).value();
}

inline std::vector<double> random_scores(Rng& rng, std::size_t n, double shift, int grid) {
    std::uniform_int_distribution<int> u(0, grid);
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(shift + static_cast<double>(u(rng)) / grid);
    return out;
}

/// 1-based rank of gallery row `truth` for a probe: rows strictly closer, plus
/// equally close rows whose id sorts first, come before it.
template <typename Probe, typename Gallery>
Index oracle_rank(const Probe& probe, const Gallery& gallery, const std::vector<std::string>& ids, Index truth) {
    const double dt = (gallery.row(truth) - probe).norm();
    Index r = 1;
    for (Index o = 0; o < gallery.rows(); ++o) {
        const double d = (gallery.row(o) - probe).norm();
        if (d < dt || (d == dt && ids[static_cast<std::size_t>(o)] < ids[static_cast<std::size_t>(truth)])) ++r;
    }
    return r;
}

}  // namespace testing
