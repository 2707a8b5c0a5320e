#include "proton/encoder.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace proton {

namespace {

struct Dims4 {
    Index n, c, h, w;
};

Dims4 dims4(const Tensor& x, const char* op) {
    if (x.rank() != 4) throw DimensionError(std::string(op) + ": expected NCHW tensor, got " + shape_string(x.shape()));
    return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// Column matrix [cin*9, h*w] for one image.
void im2col(const double* img, Index cin, Index h, Index w, RowMatrix& cols) {
    cols.setZero(cin * 9, h * w);
    for (Index c = 0; c < cin; ++c) {
        const double* plane = img + c * h * w;
        for (Index ky = 0; ky < 3; ++ky) {
            for (Index kx = 0; kx < 3; ++kx) {
                double* dst = cols.row(c * 9 + ky * 3 + kx).data();
                for (Index y = 0; y < h; ++y) {
                    const Index sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (Index x = 0; x < w; ++x) {
                        const Index sx = x + kx - 1;
                        if (sx >= 0 && sx < w) dst[y * w + x] = plane[sy * w + sx];
                    }
                }
            }
        }
    }
}

void col2im(const RowMatrix& cols, Index cin, Index h, Index w, double* img) {
    for (Index c = 0; c < cin; ++c) {
        double* plane = img + c * h * w;
        for (Index ky = 0; ky < 3; ++ky) {
            for (Index kx = 0; kx < 3; ++kx) {
                const double* src = cols.row(c * 9 + ky * 3 + kx).data();
                for (Index y = 0; y < h; ++y) {
                    const Index sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (Index x = 0; x < w; ++x) {
                        const Index sx = x + kx - 1;
                        if (sx >= 0 && sx < w) plane[sy * w + sx] += src[y * w + x];
                    }
                }
            }
        }
    }
}

Vector flat_grad(const std::shared_ptr<TensorNode>& o) {
    if (o->grad.size() != o->value.size()) return Vector::Zero(o->value.size());
    return o->grad;
}

void add_grad(const Tensor& t, const Vector& g) {
    if (!t.requires_grad()) return;
    t.node()->ensure_grad();
    t.node()->grad += g;
}

}  // namespace

Preset parse_preset(const std::string& s) {
    if (s == "paper") return Preset::paper;
    if (s == "tiny") return Preset::tiny;
    throw std::invalid_argument("unknown preset '" + s + "' (expected paper or tiny)");
}

std::string to_string(Preset p) { return p == Preset::paper ? "paper" : "tiny"; }

EncoderConfig EncoderConfig::for_preset(Preset p) {
    EncoderConfig cfg;
    cfg.preset = p;
    if (p == Preset::paper) {
        cfg.input_hw = 128;
        cfg.channels = {64, 128, 256, 512};
        cfg.embed_dim = 512;
    }
    return cfg;
}

void EncoderConfig::validate() const {
    for (Index c : channels) {
        if (c <= 0) throw std::invalid_argument("encoder.channels must be positive");
    }
    if (embed_dim != channels.back()) {
        throw std::invalid_argument("encoder.embed_dim (" + std::to_string(embed_dim) +
                                    ") must equal the last channel count (" + std::to_string(channels.back()) + ")");
    }
    if (input_hw <= 0 || input_hw % 16 != 0) {
        throw std::invalid_argument("encoder.input_hw must be a positive multiple of 16, got " + std::to_string(input_hw));
    }
    for (double s : norm_std) {
        if (!(s > 0)) throw std::invalid_argument("encoder.norm_std entries must be positive");
    }
    if (augment_noise < 0) throw std::invalid_argument("encoder.augment_noise must be >= 0");
}

Tensor conv3x3(const Tensor& x, const Tensor& weight) {
    const auto [n, cin, h, w] = dims4(x, "conv3x3");
    if (weight.rank() != 4 || weight.dim(1) != cin || weight.dim(2) != 3 || weight.dim(3) != 3) {
        throw DimensionError("conv3x3: weight " + shape_string(weight.shape()) + " does not fit input " +
                             shape_string(x.shape()));
    }
    const Index cout = weight.dim(0);
    Eigen::Map<const RowMatrix> wm(weight.data().data(), cout, cin * 9);
    Vector out_v(n * cout * h * w);
    std::vector<RowMatrix> cols(static_cast<std::size_t>(n));
    for (Index b = 0; b < n; ++b) {
        im2col(x.data().data() + b * cin * h * w, cin, h, w, cols[b]);
        Eigen::Map<RowMatrix>(out_v.data() + b * cout * h * w, cout, h * w).noalias() = wm * cols[b];
    }
    Tensor out = make_result(Shape{n, cout, h, w}, std::move(out_v), {&x, &weight});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, weight, o, cols = std::move(cols), n, cin, cout, h, w] {
            Vector g = flat_grad(o);
            Eigen::Map<const RowMatrix> wm(weight.data().data(), cout, cin * 9);
            RowMatrix dw = RowMatrix::Zero(cout, cin * 9);
            Vector dx = x.requires_grad() ? Vector::Zero(x.size()) : Vector();
            RowMatrix dcols;
            for (Index b = 0; b < n; ++b) {
                Eigen::Map<const RowMatrix> gb(g.data() + b * cout * h * w, cout, h * w);
                if (weight.requires_grad()) dw.noalias() += gb * cols[b].transpose();
                if (x.requires_grad()) {
                    dcols.noalias() = wm.transpose() * gb;
                    col2im(dcols, cin, h, w, dx.data() + b * cin * h * w);
                }
            }
            if (weight.requires_grad()) add_grad(weight, Eigen::Map<Vector>(dw.data(), dw.size()));
            if (x.requires_grad()) add_grad(x, dx);
        });
    }
    return out;
}

Tensor max_pool2x2(const Tensor& x) {
    const auto [n, c, h, w] = dims4(x, "max_pool2x2");
    if (h % 2 || w % 2) throw DimensionError("max_pool2x2: odd spatial size " + shape_string(x.shape()));
    const Index oh = h / 2, ow = w / 2;
    Vector out_v(n * c * oh * ow);
    std::vector<Index> argmax(static_cast<std::size_t>(out_v.size()));
    const double* src = x.data().data();
    for (Index p = 0; p < n * c; ++p) {
        const double* plane = src + p * h * w;
        for (Index y = 0; y < oh; ++y) {
            for (Index xx = 0; xx < ow; ++xx) {
                Index best = (2 * y) * w + 2 * xx;
                for (Index dy = 0; dy < 2; ++dy) {
                    for (Index dx = 0; dx < 2; ++dx) {
                        const Index idx = (2 * y + dy) * w + 2 * xx + dx;
                        if (plane[idx] > plane[best]) best = idx;
                    }
                }
                const Index o = p * oh * ow + y * ow + xx;
                out_v[o] = plane[best];
                argmax[static_cast<std::size_t>(o)] = p * h * w + best;
            }
        }
    }
    Tensor out = make_result(Shape{n, c, oh, ow}, std::move(out_v), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, o, argmax = std::move(argmax)] {
            Vector g = flat_grad(o);
            Vector dx = Vector::Zero(x.size());
            for (Index i = 0; i < g.size(); ++i) dx[argmax[static_cast<std::size_t>(i)]] += g[i];
            add_grad(x, dx);
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    const auto [n, c, h, w] = dims4(x, "global_avg_pool");
    const Index hw = h * w;
    Eigen::Map<const RowMatrix> planes(x.data().data(), n * c, hw);
    Vector v = planes.rowwise().mean();
    Tensor out = make_result(Shape{n, c}, std::move(v), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, o, n, c, hw] {
            Vector g = flat_grad(o) / static_cast<double>(hw);
            RowMatrix dx = g.replicate(1, hw);
            add_grad(x, Eigen::Map<Vector>(dx.data(), n * c * hw));
        });
    }
    return out;
}

Tensor batch_norm2d(const Tensor& x, BatchNormState& state, bool training) {
    const auto [n, c, h, w] = dims4(x, "batch_norm2d");
    if (state.gamma.size() != c) throw DimensionError("batch_norm2d: channel count mismatch");
    const Index hw = h * w;
    const Index m = n * hw;
    Vector mean(c), invstd(c);
    const double* src = x.data().data();
    if (training) {
        mean.setZero();
        Vector sq = Vector::Zero(c);
        for (Index b = 0; b < n; ++b) {
            for (Index ch = 0; ch < c; ++ch) {
                Eigen::Map<const Vector> plane(src + (b * c + ch) * hw, hw);
                mean[ch] += plane.sum();
            }
        }
        mean /= static_cast<double>(m);
        for (Index b = 0; b < n; ++b) {
            for (Index ch = 0; ch < c; ++ch) {
                Eigen::Map<const Vector> plane(src + (b * c + ch) * hw, hw);
                sq[ch] += (plane.array() - mean[ch]).square().sum();
            }
        }
        Vector var = sq / static_cast<double>(m);
        invstd = (var.array() + state.eps).rsqrt();
        const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
        state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mean;
        state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * unbias * var;
    } else {
        mean = state.running_mean;
        invstd = (state.running_var.array() + state.eps).rsqrt();
    }
    Vector xhat(x.size());
    Vector out_v(x.size());
    const Vector& gamma = state.gamma.data();
    const Vector& beta = state.beta.data();
    for (Index b = 0; b < n; ++b) {
        for (Index ch = 0; ch < c; ++ch) {
            const Index off = (b * c + ch) * hw;
            Eigen::Map<const Vector> plane(src + off, hw);
            xhat.segment(off, hw) = (plane.array() - mean[ch]) * invstd[ch];
            out_v.segment(off, hw) = xhat.segment(off, hw).array() * gamma[ch] + beta[ch];
        }
    }
    Tensor gamma_t = state.gamma, beta_t = state.beta;
    Tensor out = make_result(x.shape(), std::move(out_v), {&x, &gamma_t, &beta_t});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, gamma_t, beta_t, o, xhat = std::move(xhat), invstd, training, n, c, hw, m] {
            Vector g = flat_grad(o);
            Vector dgamma = Vector::Zero(c), dbeta = Vector::Zero(c);
            for (Index b = 0; b < n; ++b) {
                for (Index ch = 0; ch < c; ++ch) {
                    const Index off = (b * c + ch) * hw;
                    dgamma[ch] += g.segment(off, hw).dot(xhat.segment(off, hw));
                    dbeta[ch] += g.segment(off, hw).sum();
                }
            }
            add_grad(gamma_t, dgamma);
            add_grad(beta_t, dbeta);
            if (!x.requires_grad()) return;
            const Vector& gam = gamma_t.data();
            Vector dx(x.size());
            for (Index b = 0; b < n; ++b) {
                for (Index ch = 0; ch < c; ++ch) {
                    const Index off = (b * c + ch) * hw;
                    if (training) {
                        // dx = γ·invstd/m · (m·g − Σg − x̂·Σ(g·x̂))
                        dx.segment(off, hw) = gam[ch] * invstd[ch] / static_cast<double>(m) *
                                              (static_cast<double>(m) * g.segment(off, hw).array() - dbeta[ch] -
                                               xhat.segment(off, hw).array() * dgamma[ch]);
                    } else {
                        dx.segment(off, hw) = gam[ch] * invstd[ch] * g.segment(off, hw);
                    }
                }
            }
            add_grad(x, dx);
        });
    }
    return out;
}

ConvEncoder::ConvEncoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(seed, {0xE1C0DE}));
    Index cin = 3;
    for (std::size_t i = 0; i < 4; ++i) {
        const Index cout = cfg_.channels[i];
        conv_[i] = init_uniform(Shape{cout, cin, 3, 3}, cin * 9, rng);
        bn_[i].gamma = Tensor(Shape{cout}, Vector::Ones(cout), true);
        bn_[i].beta = Tensor(Shape{cout}, Vector::Zero(cout), true);
        bn_[i].running_mean = Vector::Zero(cout);
        bn_[i].running_var = Vector::Ones(cout);
        cin = cout;
    }
}

Tensor ConvEncoder::encode(std::span<const Vector* const> images, bool training) {
    const Index hw = cfg_.input_hw;
    const Index n = static_cast<Index>(images.size());
    if (n == 0) throw DimensionError("encode: empty batch");
    const Index plane = hw * hw;
    Vector input(n * 3 * plane);
    for (Index b = 0; b < n; ++b) {
        const Vector& img = *images[static_cast<std::size_t>(b)];
        if (img.size() != 3 * plane) {
            throw DimensionError("encode: image " + std::to_string(b) + " has " + std::to_string(img.size()) +
                                 " values, expected 3x" + std::to_string(hw) + "x" + std::to_string(hw));
        }
        for (Index ch = 0; ch < 3; ++ch) {
            input.segment((b * 3 + ch) * plane, plane) =
                (img.segment(ch * plane, plane).array() - cfg_.norm_mean[ch]) / cfg_.norm_std[ch];
        }
    }
    Tensor h(Shape{n, 3, hw, hw}, std::move(input));
    for (std::size_t i = 0; i < 4; ++i) {
        h = relu(max_pool2x2(batch_norm2d(conv3x3(h, conv_[i]), bn_[i], training)));
    }
    return global_avg_pool(h);
}

std::vector<NamedParameter> ConvEncoder::parameters() const {
    std::vector<NamedParameter> out;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string p = "encoder.block" + std::to_string(i);
        out.push_back({p + ".conv", conv_[i]});
        out.push_back({p + ".bn_gamma", bn_[i].gamma});
        out.push_back({p + ".bn_beta", bn_[i].beta});
    }
    return out;
}

std::vector<TensorBlock> ConvEncoder::buffers() const {
    std::vector<TensorBlock> out;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string p = "encoder.block" + std::to_string(i);
        const Index c = bn_[i].running_mean.size();
        out.push_back({p + ".bn_running_mean", Shape{c}, bn_[i].running_mean});
        out.push_back({p + ".bn_running_var", Shape{c}, bn_[i].running_var});
    }
    return out;
}

void ConvEncoder::load(const Checkpoint& ckpt) {
    auto fetch = [&](const std::string& name, Index expected) -> const Vector& {
        const TensorBlock* b = ckpt.find(name);
        if (!b) throw CheckpointError("checkpoint lacks block " + name);
        if (b->values.size() != expected) {
            throw CheckpointError("block " + name + " has " + std::to_string(b->values.size()) + " values, model expects " +
                                  std::to_string(expected));
        }
        return b->values;
    };
    for (auto& p : parameters()) {
        Tensor t = p.tensor;
        t.data() = fetch(p.name, t.size());
    }
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string p = "encoder.block" + std::to_string(i);
        bn_[i].running_mean = fetch(p + ".bn_running_mean", bn_[i].running_mean.size());
        bn_[i].running_var = fetch(p + ".bn_running_var", bn_[i].running_var.size());
    }
}

Index ConvEncoder::parameter_count() const { return encoder_parameter_count(cfg_); }

Index encoder_parameter_count(const EncoderConfig& cfg) {
    Index total = 0;
    Index cin = 3;
    for (Index cout : cfg.channels) {
        total += cout * cin * 9 + 2 * cout;
        cin = cout;
    }
    return total;
}

}  // namespace proton
