#pragma once

#include "proton/checkpoint.hpp"
#include "proton/optim.hpp"
#include "proton/random.hpp"
#include "proton/tensor.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace proton {

enum class Preset { paper, tiny };

Preset parse_preset(const std::string& s);
std::string to_string(Preset p);

struct EncoderConfig {
    Preset preset = Preset::tiny;
    Index input_hw = 32;
    std::array<Index, 4> channels{8, 16, 32, 64};
    Index embed_dim = 64;
    std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
    std::array<double, 3> norm_std{0.229, 0.224, 0.225};
    bool augment_flip = false;
    double augment_noise = 0.0;

    static EncoderConfig for_preset(Preset p);
    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

// Differentiable image ops over NCHW tensors.

/// 3×3 convolution, stride 1, zero padding 1, no bias. weight: [Cout, Cin, 3, 3].
Tensor conv3x3(const Tensor& x, const Tensor& weight);
/// 2×2 max pooling with stride 2.
Tensor max_pool2x2(const Tensor& x);
/// [B, C, H, W] -> [B, C].
Tensor global_avg_pool(const Tensor& x);

struct BatchNormState {
    Tensor gamma;
    Tensor beta;
    Vector running_mean;
    Vector running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Batch statistics (and running-stat update) in training mode; running
/// statistics in evaluation mode, which leaves `state` untouched.
Tensor batch_norm2d(const Tensor& x, BatchNormState& state, bool training);

/// Four conv → BN → max-pool → ReLU blocks followed by global average pooling.
class ConvEncoder {
public:
    ConvEncoder(EncoderConfig cfg, std::uint64_t seed);

    const EncoderConfig& config() const { return cfg_; }

    /// `images` hold raw CHW pixels in [0, 1]; normalization is applied here.
    Tensor encode(std::span<const Vector* const> images, bool training);

    std::vector<NamedParameter> parameters() const;
    std::vector<TensorBlock> buffers() const;
    void load(const Checkpoint& ckpt);
    Index parameter_count() const;

private:
    EncoderConfig cfg_;
    std::array<Tensor, 4> conv_;
    std::array<BatchNormState, 4> bn_;
};

/// Learnable parameter count of the encoder for a given configuration.
Index encoder_parameter_count(const EncoderConfig& cfg);

}  // namespace proton
