#include "proton/optim.hpp"

#include <cmath>

namespace proton {

void adam_step(Vector& param, const Vector& grad, AdamState& state, const AdamOptions& opt) {
    if (grad.size() != param.size()) {
        throw DimensionError("adam_step: gradient has " + std::to_string(grad.size()) + " entries, parameter has " +
                             std::to_string(param.size()));
    }
    if (state.m.size() == 0) {
        state.m = Vector::Zero(param.size());
        state.v = Vector::Zero(param.size());
    } else if (state.m.size() != param.size() || state.v.size() != param.size()) {
        throw DimensionError("adam_step: moment size does not match parameter");
    }
    ++state.step;
    state.m = opt.beta1 * state.m + (1.0 - opt.beta1) * grad;
    state.v = opt.beta2 * state.v + (1.0 - opt.beta2) * grad.cwiseAbs2();
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    param.array() -= opt.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + opt.eps);
}

Adam::Adam(std::vector<NamedParameter> params, AdamOptions options)
    : params_(std::move(params)), states_(params_.size()), options_(options) {}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].tensor;
        if (p.has_grad()) {
            adam_step(p.data(), p.grad(), states_[i], options_);
        } else {
            adam_step(p.data(), Vector::Zero(p.size()), states_[i], options_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace proton
