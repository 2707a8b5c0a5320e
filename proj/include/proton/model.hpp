#pragma once

#include "proton/checkpoint.hpp"
#include "proton/dataset.hpp"
#include "proton/encoder.hpp"
#include "proton/graph.hpp"
#include "proton/pgnn.hpp"
#include "proton/protoloss.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace proton {

struct ModelConfig {
    SampleKind input = SampleKind::image;
    EncoderConfig encoder;
    PgnnConfig pgnn;

    static ModelConfig for_preset(Preset p);
    void validate() const;
    /// Width fed into the first PGNN layer.
    Index input_dim() const { return pgnn.layer_dims.front(); }

    std::vector<std::pair<std::string, std::string>> to_header() const;
    static ModelConfig from_header(const Checkpoint& ckpt);
};

/// Per-impression embeddings of a dataset: row `offsets[c] + i` belongs to
/// impression i of class c.
struct EmbeddingTable {
    RowMatrix rows;
    std::vector<Index> offsets;

    Eigen::Ref<const RowMatrix> row(std::size_t cls, Index impression) const {
        return rows.row(offsets[cls] + impression);
    }
};

struct RefinedPrototypes {
    RowMatrix support;  // [S×d_out]
    RowMatrix query;    // [Q×d_out]
};

/// Encoder (trainable CNN or pass-through for precomputed embeddings) feeding
/// the PGNN stack.
class ProtoNModel {
public:
    ProtoNModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const PgnnStack& pgnn() const { return pgnn_; }
    PgnnStack& pgnn() { return pgnn_; }
    bool has_encoder() const { return encoder_.has_value(); }

    /// [B×d] initial node embeddings.
    Tensor embed(std::span<const Vector* const> samples, bool training);

    /// Full differentiable pass over a sampled episode.
    EpisodeOutputs forward_episode(const Dataset& data, const Episode& episode, bool training, Rng* augment = nullptr);

    /// Evaluation-mode embeddings for every impression.
    EmbeddingTable embed_dataset(const Dataset& data);
    /// Final prototypes for graphs given as node-embedding blocks, refined
    /// together as one episode. No gradients are recorded.
    RefinedPrototypes refine(std::span<const RowMatrix> support, std::span<const RowMatrix> query) const;

    std::vector<NamedParameter> parameters() const;
    Index parameter_count() const;

    Checkpoint to_checkpoint() const;
    void load(const Checkpoint& ckpt);

private:
    ModelConfig cfg_;
    std::optional<ConvEncoder> encoder_;
    PgnnStack pgnn_;
};

}  // namespace proton
