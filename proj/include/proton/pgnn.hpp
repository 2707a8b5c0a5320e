#pragma once

#include "proton/checkpoint.hpp"
#include "proton/encoder.hpp"
#include "proton/graph.hpp"
#include "proton/optim.hpp"
#include "proton/random.hpp"
#include "proton/tensor.hpp"

#include <span>
#include <vector>

namespace proton {

/// Learnable maps of one PGNN layer. Linear maps are stored [d_out×d_in] and
/// applied to row features as H·Wᵀ; none carries a bias.
struct PgnnLayerParams {
    Tensor node_self;
    Tensor node_neighbor;
    Tensor node_correction;  // pulls a node toward its graph prototype
    Tensor proto_self;
    Tensor proto_feedback;   // node residuals flowing back into the prototype
    Tensor proto_align;      // other prototypes of the episode
    Tensor attention;        // [d_in×d_in]
    Tensor node_gate;        // [1×d_in]
    Tensor proto_gate;       // [1×d_in]
    Tensor align_gate;       // [1×2d_in], scores a prototype pair

    static PgnnLayerParams init(Index d_in, Index d_out, Rng& rng);
    /// Every weight set to `value` (gates included); useful for hand-checked cases.
    static PgnnLayerParams constant(Index d_in, Index d_out, double value);

    Index d_in() const { return node_self.cols(); }
    Index d_out() const { return node_self.rows(); }
    std::vector<NamedParameter> named(const std::string& prefix) const;
    void validate() const;
};

struct PgnnConfig {
    /// Feature widths through the stack; layer i maps dims[i] -> dims[i+1].
    std::vector<Index> layer_dims{64, 64, 32, 32};
    double align_strength = 1.0;
    bool projection_head = true;
    bool no_prototype_node = false;
    bool no_cross_graph_alignment = false;
    bool query_alignment_enabled = false;
    /// Off for the single-impression ablation: each node only sees itself.
    bool message_passing = true;

    static PgnnConfig for_preset(Preset p);
    void validate() const;
    Index output_dim() const { return layer_dims.back(); }
    double effective_align() const { return no_cross_graph_alignment ? 0.0 : align_strength; }
};

/// Node and prototype features of every graph in an episode, graph-major.
/// Support graphs come first, then query graphs.
struct EpisodeState {
    Tensor nodes;   // [T×d]
    Tensor protos;  // [G×d]
    std::vector<Index> graph_of_node;
    std::vector<Index> graph_sizes;
    std::vector<GraphRole> roles;
    RowMatrix neighbor_mask;  // [T×T], block-diagonal cycle adjacency
    RowMatrix membership;     // [G×T]

    static EpisodeState from_graphs(std::span<const ClassGraph> graphs);
    Index graph_count() const { return static_cast<Index>(graph_sizes.size()); }
    Index width() const { return nodes.cols(); }
};

// Single-node reference forms of the update rules.

/// softmax_j((A h_i)ᵀ(A h_j)) with A = attention; returns [1×|neighbors|].
Tensor attention_weights(const Tensor& h_i, std::span<const Tensor> neighbors, const Tensor& w_alpha);
/// ReLU(self·h + Σ_j a_j neighbor·h_j + b correction·(p − h)), where a are the
/// attention weights and b = logistic(node_gate·h).
Tensor real_node_update(const Tensor& h_i, std::span<const Tensor> neighbors, const Tensor& p_g,
                        const PgnnLayerParams& params);
/// ReLU(self·p + c Σ_i feedback·(h_i − p) + s Σ_k w_k align·(p_k − p)), with
/// c = logistic(proto_gate·p), s = align_strength and w the pair scores.
Tensor prototype_update_support(const Tensor& p_g, const Tensor& real_nodes, std::span<const Tensor> other_protos,
                                const PgnnLayerParams& params, double align_strength);
/// Support update without the cross-graph term.
Tensor prototype_update_query(const Tensor& p_g, const Tensor& real_nodes, const PgnnLayerParams& params);

/// One synchronous layer over the whole episode.
EpisodeState pgnn_layer_forward(const EpisodeState& state, const PgnnLayerParams& params, const PgnnConfig& cfg);

class PgnnStack {
public:
    PgnnStack(PgnnConfig cfg, std::uint64_t seed);

    const PgnnConfig& config() const { return cfg_; }
    std::vector<PgnnLayerParams>& layers() { return layers_; }
    const std::vector<PgnnLayerParams>& layers() const { return layers_; }
    const Tensor& projection() const { return projection_; }

    /// All layers, then the linear projection head on prototypes.
    EpisodeState forward(const EpisodeState& state) const;

    std::vector<NamedParameter> parameters() const;
    void load(const Checkpoint& ckpt);
    Index parameter_count() const;

private:
    PgnnConfig cfg_;
    std::vector<PgnnLayerParams> layers_;
    Tensor projection_;
};

Index pgnn_parameter_count(const PgnnConfig& cfg);

}  // namespace proton
