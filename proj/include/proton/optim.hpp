#pragma once

#include "proton/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace proton {

struct AdamOptions {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment estimates for one parameter.
struct AdamState {
    std::uint64_t step = 0;
    Vector m;
    Vector v;
};

/// One bias-corrected adaptive-moment update of `param` in place.
void adam_step(Vector& param, const Vector& grad, AdamState& state, const AdamOptions& opt);

struct NamedParameter {
    std::string name;
    Tensor tensor;
};

/// Adam over a fixed parameter list. Parameters without a gradient are
/// treated as having a zero gradient.
class Adam {
public:
    Adam(std::vector<NamedParameter> params, AdamOptions options);

    void step();
    void zero_grad();

    const AdamOptions& options() const { return options_; }
    const std::vector<AdamState>& states() const { return states_; }

private:
    std::vector<NamedParameter> params_;
    std::vector<AdamState> states_;
    AdamOptions options_;
};

}  // namespace proton
