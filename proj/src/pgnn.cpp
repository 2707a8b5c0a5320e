#include "proton/pgnn.hpp"

#include <stdexcept>

namespace proton {

namespace {

Tensor constant(const RowMatrix& m) { return Tensor::from_matrix(m); }

Tensor as_row(const Tensor& t) { return t.rank() == 2 ? t : t.reshape(Shape{1, t.size()}); }

void check_width(const Tensor& t, Index d, const char* what) {
    if (t.cols() != d) {
        throw DimensionError(std::string(what) + ": width " + std::to_string(t.cols()) + " does not match layer input " +
                             std::to_string(d));
    }
}

}  // namespace

PgnnLayerParams PgnnLayerParams::init(Index d_in, Index d_out, Rng& rng) {
    PgnnLayerParams p;
    p.node_self = init_uniform(Shape{d_out, d_in}, d_in, rng);
    p.node_neighbor = init_uniform(Shape{d_out, d_in}, d_in, rng);
    p.node_correction = init_uniform(Shape{d_out, d_in}, d_in, rng);
    p.proto_self = init_uniform(Shape{d_out, d_in}, d_in, rng);
    p.proto_feedback = init_uniform(Shape{d_out, d_in}, d_in, rng);
    p.proto_align = init_uniform(Shape{d_out, d_in}, d_in, rng);
    p.attention = init_uniform(Shape{d_in, d_in}, d_in, rng);
    p.node_gate = init_uniform(Shape{1, d_in}, d_in, rng);
    p.proto_gate = init_uniform(Shape{1, d_in}, d_in, rng);
    p.align_gate = init_uniform(Shape{1, 2 * d_in}, 2 * d_in, rng);
    return p;
}

PgnnLayerParams PgnnLayerParams::constant(Index d_in, Index d_out, double value) {
    auto filled = [value](Index r, Index c) { return Tensor(Shape{r, c}, Vector::Constant(r * c, value), true); };
    PgnnLayerParams p;
    p.node_self = filled(d_out, d_in);
    p.node_neighbor = filled(d_out, d_in);
    p.node_correction = filled(d_out, d_in);
    p.proto_self = filled(d_out, d_in);
    p.proto_feedback = filled(d_out, d_in);
    p.proto_align = filled(d_out, d_in);
    p.attention = filled(d_in, d_in);
    p.node_gate = filled(1, d_in);
    p.proto_gate = filled(1, d_in);
    p.align_gate = filled(1, 2 * d_in);
    return p;
}

std::vector<NamedParameter> PgnnLayerParams::named(const std::string& prefix) const {
    return {
        {prefix + ".node_self", node_self},
        {prefix + ".node_neighbor", node_neighbor},
        {prefix + ".node_correction", node_correction},
        {prefix + ".proto_self", proto_self},
        {prefix + ".proto_feedback", proto_feedback},
        {prefix + ".proto_align", proto_align},
        {prefix + ".attention", attention},
        {prefix + ".node_gate", node_gate},
        {prefix + ".proto_gate", proto_gate},
        {prefix + ".align_gate", align_gate},
    };
}

void PgnnLayerParams::validate() const {
    const Index di = d_in(), dout = d_out();
    for (const Tensor* t : {&node_neighbor, &node_correction, &proto_self, &proto_feedback, &proto_align}) {
        if (t->rows() != dout || t->cols() != di) {
            throw DimensionError("PGNN map " + shape_string(t->shape()) + " differs from " +
                                 shape_string(node_self.shape()));
        }
    }
    if (attention.rows() != di || attention.cols() != di) throw DimensionError("PGNN attention map must be d_in×d_in");
    if (node_gate.cols() != di || proto_gate.cols() != di || align_gate.cols() != 2 * di) {
        throw DimensionError("PGNN gate widths do not match d_in");
    }
}

PgnnConfig PgnnConfig::for_preset(Preset p) {
    PgnnConfig cfg;
    if (p == Preset::paper) {
        cfg.layer_dims = {512, 256, 128, 128};
    } else {
        // The alignment sum runs over every other support graph; at desk
        // widths a unit weight swamps the self term early in training.
        cfg.align_strength = 0.1;
    }
    return cfg;
}

void PgnnConfig::validate() const {
    if (layer_dims.size() < 2) throw std::invalid_argument("pgnn.layer_dims needs at least one layer (two widths)");
    for (Index d : layer_dims) {
        if (d < 1) throw std::invalid_argument("pgnn.layer_dims entries must be positive");
    }
    if (!(align_strength >= 0)) throw std::invalid_argument("pgnn.align_strength must be >= 0");
}

// ---------------------------------------------------------------------------
// EpisodeState

EpisodeState EpisodeState::from_graphs(std::span<const ClassGraph> graphs) {
    if (graphs.empty()) throw std::invalid_argument("episode state needs at least one graph");
    EpisodeState s;
    std::vector<Tensor> node_parts, proto_parts;
    Index total = 0;
    const Index d = graphs.front().node_feats.cols();
    for (const auto& g : graphs) {
        if (g.node_feats.cols() != d || g.proto_feat.cols() != d) {
            throw DimensionError("episode graphs have mixed feature widths");
        }
        node_parts.push_back(g.node_feats);
        proto_parts.push_back(as_row(g.proto_feat));
        s.graph_sizes.push_back(g.size());
        s.roles.push_back(g.role);
        for (Index i = 0; i < g.size(); ++i) s.graph_of_node.push_back(static_cast<Index>(s.graph_sizes.size() - 1));
        total += g.size();
    }
    s.nodes = concat_rows(node_parts);
    s.protos = concat_rows(proto_parts);
    s.neighbor_mask = RowMatrix::Zero(total, total);
    s.membership = RowMatrix::Zero(static_cast<Index>(graphs.size()), total);
    Index at = 0;
    for (std::size_t g = 0; g < graphs.size(); ++g) {
        const Index n = s.graph_sizes[g];
        s.neighbor_mask.block(at, at, n, n) = cycle_mask(n);
        s.membership.block(static_cast<Index>(g), at, 1, n).setOnes();
        at += n;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Reference updates

Tensor attention_weights(const Tensor& h_i, std::span<const Tensor> neighbors, const Tensor& w_alpha) {
    if (neighbors.empty()) throw std::invalid_argument("attention_weights: empty neighbourhood");
    const Tensor a_i = matmul_nt(as_row(h_i), w_alpha);
    std::vector<Tensor> logits;
    for (const auto& h_j : neighbors) logits.push_back(matmul_nt(a_i, matmul_nt(as_row(h_j), w_alpha)));
    return softmax(transpose(concat_rows(logits)));
}

Tensor real_node_update(const Tensor& h_i, std::span<const Tensor> neighbors, const Tensor& p_g,
                        const PgnnLayerParams& params) {
    const Tensor h = as_row(h_i);
    const Tensor p = as_row(p_g);
    check_width(h, params.d_in(), "real_node_update");
    check_width(p, params.d_in(), "real_node_update");
    Tensor acc = matmul_nt(h, params.node_self);
    if (!neighbors.empty()) {
        const Tensor alpha = attention_weights(h, neighbors, params.attention);
        for (std::size_t j = 0; j < neighbors.size(); ++j) {
            check_width(as_row(neighbors[j]), params.d_in(), "real_node_update");
            acc = acc + mul(slice_cols(alpha, static_cast<Index>(j), 1),
                            matmul_nt(as_row(neighbors[j]), params.node_neighbor));
        }
    }
    const Tensor beta = logistic(matmul_nt(h, params.node_gate));
    acc = acc + mul(beta, matmul_nt(p - h, params.node_correction));
    return relu(acc);
}

namespace {

Tensor proto_pre_activation(const Tensor& p, const Tensor& nodes, const PgnnLayerParams& params) {
    check_width(p, params.d_in(), "prototype update");
    check_width(nodes, params.d_in(), "prototype update");
    const Tensor gamma = logistic(matmul_nt(p, params.proto_gate));
    const Tensor feedback = matmul_nt(sum_rows(nodes - p), params.proto_feedback);
    return matmul_nt(p, params.proto_self) + mul(gamma, feedback);
}

}  // namespace

Tensor prototype_update_support(const Tensor& p_g, const Tensor& real_nodes, std::span<const Tensor> other_protos,
                                const PgnnLayerParams& params, double align_strength) {
    const Tensor p = as_row(p_g);
    Tensor acc = proto_pre_activation(p, real_nodes, params);
    if (align_strength != 0.0 && !other_protos.empty()) {
        std::vector<Tensor> terms;
        for (const auto& other : other_protos) {
            const Tensor q = as_row(other);
            check_width(q, params.d_in(), "prototype_update_support");
            const Tensor w = logistic(matmul_nt(concat_cols(p, q), params.align_gate));
            terms.push_back(mul(w, matmul_nt(q - p, params.proto_align)));
        }
        acc = acc + scale(sum_rows(concat_rows(terms)), align_strength);
    }
    return relu(acc);
}

Tensor prototype_update_query(const Tensor& p_g, const Tensor& real_nodes, const PgnnLayerParams& params) {
    return relu(proto_pre_activation(as_row(p_g), real_nodes, params));
}

// ---------------------------------------------------------------------------
// Batched layer

EpisodeState pgnn_layer_forward(const EpisodeState& state, const PgnnLayerParams& params, const PgnnConfig& cfg) {
    const Tensor& h = state.nodes;
    const Tensor& p = state.protos;
    check_width(h, params.d_in(), "pgnn layer");
    const Index graphs = state.graph_count();

    EpisodeState next;
    next.graph_of_node = state.graph_of_node;
    next.graph_sizes = state.graph_sizes;
    next.roles = state.roles;
    next.neighbor_mask = state.neighbor_mask;
    next.membership = state.membership;

    Vector inv_sizes(graphs);
    for (Index g = 0; g < graphs; ++g) inv_sizes[g] = 1.0 / static_cast<double>(state.graph_sizes[g]);
    const Tensor mean_pool = constant(inv_sizes.asDiagonal() * state.membership);

    Tensor acc = matmul_nt(h, params.node_self);
    if (!cfg.message_passing) {
        next.nodes = relu(acc);
        next.protos = matmul(mean_pool, next.nodes);
        return next;
    }

    const Tensor att = matmul_nt(h, params.attention);
    const Tensor alpha = masked_softmax_rows(matmul_nt(att, att), state.neighbor_mask);
    acc = acc + matmul(alpha, matmul_nt(h, params.node_neighbor));

    if (cfg.no_prototype_node) {
        next.nodes = relu(acc);
        next.protos = matmul(mean_pool, next.nodes);
        return next;
    }

    const Tensor p_nodes = gather_rows(p, state.graph_of_node);
    const Tensor beta = logistic(matmul_nt(h, params.node_gate));
    acc = acc + mul(beta, matmul_nt(p_nodes - h, params.node_correction));
    next.nodes = relu(acc);

    // Σ_i (h_i − p_g) = Σ_i h_i − N_g p_g
    Vector sizes(graphs);
    for (Index g = 0; g < graphs; ++g) sizes[g] = static_cast<double>(state.graph_sizes[g]);
    const Tensor residual_sum =
        matmul(constant(state.membership), h) - mul(constant(RowMatrix(sizes)), p);
    const Tensor gamma = logistic(matmul_nt(p, params.proto_gate));
    Tensor proto_acc = matmul_nt(p, params.proto_self) + mul(gamma, matmul_nt(residual_sum, params.proto_feedback));

    const double lambda = cfg.effective_align();
    if (lambda != 0.0 && graphs > 1) {
        RowMatrix pair_mask = RowMatrix::Zero(graphs, graphs);
        bool any = false;
        for (Index g = 0; g < graphs; ++g) {
            const bool support = state.roles[static_cast<std::size_t>(g)] == GraphRole::support;
            if (!support && !cfg.query_alignment_enabled) continue;
            for (Index o = 0; o < graphs; ++o) {
                if (o == g) continue;
                // Support prototypes see other supports; aligned queries see every graph.
                if (support && state.roles[static_cast<std::size_t>(o)] != GraphRole::support) continue;
                pair_mask(g, o) = 1.0;
                any = true;
            }
        }
        if (any) {
            const Index d = params.d_in();
            const Tensor left = matmul_nt(p, slice_cols(params.align_gate, 0, d));       // [G×1]
            const Tensor right = matmul_nt(p, slice_cols(params.align_gate, d, d));      // [G×1]
            const Tensor weights = mul(logistic(left + transpose(right)), constant(pair_mask));
            const Tensor ones = constant(RowMatrix::Ones(graphs, 1));
            const Tensor pulled = matmul(weights, p) - mul(matmul(weights, ones), p);
            proto_acc = proto_acc + scale(matmul_nt(pulled, params.proto_align), lambda);
        }
    }
    next.protos = relu(proto_acc);
    return next;
}

// ---------------------------------------------------------------------------
// Stack

PgnnStack::PgnnStack(PgnnConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(seed, {0x96AA}));
    for (std::size_t i = 0; i + 1 < cfg_.layer_dims.size(); ++i) {
        layers_.push_back(PgnnLayerParams::init(cfg_.layer_dims[i], cfg_.layer_dims[i + 1], rng));
    }
    const Index d = cfg_.output_dim();
    projection_ = init_uniform(Shape{d, d}, d, rng);
}

EpisodeState PgnnStack::forward(const EpisodeState& state) const {
    if (state.width() != cfg_.layer_dims.front()) {
        throw DimensionError("PGNN input width " + std::to_string(state.width()) + " does not match configured " +
                             std::to_string(cfg_.layer_dims.front()));
    }
    EpisodeState s = state;
    for (const auto& layer : layers_) s = pgnn_layer_forward(s, layer, cfg_);
    if (cfg_.projection_head) s.protos = matmul_nt(s.protos, projection_);
    return s;
}

std::vector<NamedParameter> PgnnStack::parameters() const {
    std::vector<NamedParameter> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto named = layers_[i].named("pgnn.layer" + std::to_string(i));
        out.insert(out.end(), named.begin(), named.end());
    }
    if (cfg_.projection_head) out.push_back({"pgnn.projection", projection_});
    return out;
}

void PgnnStack::load(const Checkpoint& ckpt) {
    for (auto& p : parameters()) {
        const TensorBlock* b = ckpt.find(p.name);
        if (!b) throw CheckpointError("checkpoint lacks block " + p.name);
        if (b->shape != p.tensor.shape()) {
            throw CheckpointError("block " + p.name + " has shape " + shape_string(b->shape) + ", model expects " +
                                  shape_string(p.tensor.shape()));
        }
        Tensor t = p.tensor;
        t.data() = b->values;
    }
}

Index PgnnStack::parameter_count() const { return pgnn_parameter_count(cfg_); }

Index pgnn_parameter_count(const PgnnConfig& cfg) {
    Index total = 0;
    for (std::size_t i = 0; i + 1 < cfg.layer_dims.size(); ++i) {
        const Index di = cfg.layer_dims[i], dout = cfg.layer_dims[i + 1];
        total += 6 * dout * di + di * di + 4 * di;
    }
    if (cfg.projection_head) total += cfg.output_dim() * cfg.output_dim();
    return total;
}

}  // namespace proton
