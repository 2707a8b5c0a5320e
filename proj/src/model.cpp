#include "proton/model.hpp"

#include "proton/text.hpp"

#include <map>
#include <stdexcept>

namespace proton {

namespace {

std::string fmt_index(Index v) { return std::to_string(v); }

const std::string& require(const Checkpoint& ckpt, const std::string& key) {
    const std::string* v = ckpt.header_value(key);
    if (!v) throw CheckpointError("checkpoint header lacks " + key);
    return *v;
}

}  // namespace

ModelConfig ModelConfig::for_preset(Preset p) {
    ModelConfig cfg;
    cfg.encoder = EncoderConfig::for_preset(p);
    cfg.pgnn = PgnnConfig::for_preset(p);
    return cfg;
}

void ModelConfig::validate() const {
    pgnn.validate();
    if (input == SampleKind::image) {
        encoder.validate();
        if (encoder.embed_dim != pgnn.layer_dims.front()) {
            throw std::invalid_argument("encoder.embed_dim (" + std::to_string(encoder.embed_dim) +
                                        ") must equal the first pgnn.layer_dims entry (" +
                                        std::to_string(pgnn.layer_dims.front()) + ")");
        }
    }
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_header() const {
    std::vector<std::pair<std::string, std::string>> h;
    h.emplace_back("model.input", input == SampleKind::image ? "image" : "embedding");
    h.emplace_back("model.encoder.preset", to_string(encoder.preset));
    h.emplace_back("model.encoder.input_hw", std::to_string(encoder.input_hw));
    h.emplace_back("model.encoder.channels",
                   join(std::vector<Index>(encoder.channels.begin(), encoder.channels.end()), fmt_index));
    h.emplace_back("model.encoder.embed_dim", std::to_string(encoder.embed_dim));
    h.emplace_back("model.encoder.norm_mean",
                   join(std::vector<double>(encoder.norm_mean.begin(), encoder.norm_mean.end()), format_double));
    h.emplace_back("model.encoder.norm_std",
                   join(std::vector<double>(encoder.norm_std.begin(), encoder.norm_std.end()), format_double));
    h.emplace_back("model.pgnn.layer_dims", join(pgnn.layer_dims, fmt_index));
    h.emplace_back("model.pgnn.align_strength", format_double(pgnn.align_strength));
    h.emplace_back("model.pgnn.projection_head", pgnn.projection_head ? "true" : "false");
    h.emplace_back("model.pgnn.no_prototype_node", pgnn.no_prototype_node ? "true" : "false");
    h.emplace_back("model.pgnn.no_cross_graph_alignment", pgnn.no_cross_graph_alignment ? "true" : "false");
    h.emplace_back("model.pgnn.query_alignment_enabled", pgnn.query_alignment_enabled ? "true" : "false");
    h.emplace_back("model.pgnn.message_passing", pgnn.message_passing ? "true" : "false");
    return h;
}

ModelConfig ModelConfig::from_header(const Checkpoint& ckpt) {
    ModelConfig cfg;
    const std::string& input = require(ckpt, "model.input");
    if (input != "image" && input != "embedding") throw CheckpointError("unknown model.input '" + input + "'");
    cfg.input = input == "image" ? SampleKind::image : SampleKind::embedding;
    cfg.encoder.preset = parse_preset(require(ckpt, "model.encoder.preset"));
    cfg.encoder.input_hw = parse_int(require(ckpt, "model.encoder.input_hw"));
    const auto ch = parse_int_list(require(ckpt, "model.encoder.channels"));
    const auto mean = parse_double_list(require(ckpt, "model.encoder.norm_mean"));
    const auto stdv = parse_double_list(require(ckpt, "model.encoder.norm_std"));
    if (ch.size() != 4 || mean.size() != 3 || stdv.size() != 3) throw CheckpointError("malformed encoder header");
    for (std::size_t i = 0; i < 4; ++i) cfg.encoder.channels[i] = ch[i];
    for (std::size_t i = 0; i < 3; ++i) {
        cfg.encoder.norm_mean[i] = mean[i];
        cfg.encoder.norm_std[i] = stdv[i];
    }
    cfg.encoder.embed_dim = parse_int(require(ckpt, "model.encoder.embed_dim"));
    cfg.pgnn.layer_dims.clear();
    for (auto d : parse_int_list(require(ckpt, "model.pgnn.layer_dims"))) cfg.pgnn.layer_dims.push_back(d);
    cfg.pgnn.align_strength = parse_double(require(ckpt, "model.pgnn.align_strength"));
    cfg.pgnn.projection_head = parse_bool(require(ckpt, "model.pgnn.projection_head"));
    cfg.pgnn.no_prototype_node = parse_bool(require(ckpt, "model.pgnn.no_prototype_node"));
    cfg.pgnn.no_cross_graph_alignment = parse_bool(require(ckpt, "model.pgnn.no_cross_graph_alignment"));
    cfg.pgnn.query_alignment_enabled = parse_bool(require(ckpt, "model.pgnn.query_alignment_enabled"));
    cfg.pgnn.message_passing = parse_bool(require(ckpt, "model.pgnn.message_passing"));
    return cfg;
}

ProtoNModel::ProtoNModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), pgnn_(cfg_.pgnn, seed) {
    cfg_.validate();
    if (cfg_.input == SampleKind::image) encoder_.emplace(cfg_.encoder, seed);
}

Tensor ProtoNModel::embed(std::span<const Vector* const> samples, bool training) {
    if (encoder_) return encoder_->encode(samples, training);
    const Index d = cfg_.input_dim();
    RowMatrix m(static_cast<Index>(samples.size()), d);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i]->size() != d) {
            throw DimensionError("embedding has width " + std::to_string(samples[i]->size()) + ", model expects " +
                                 std::to_string(d));
        }
        m.row(static_cast<Index>(i)) = samples[i]->transpose();
    }
    return Tensor::from_matrix(m);
}

EpisodeOutputs ProtoNModel::forward_episode(const Dataset& data, const Episode& episode, bool training, Rng* augment) {
    // Unique impressions, in first-use order.
    std::map<std::pair<std::size_t, Index>, Index> row_of;
    std::vector<const Vector*> samples;
    std::vector<Vector> augmented;
    auto collect = [&](const GraphPlan& plan) {
        for (Index imp : plan.impressions) {
            auto key = std::make_pair(plan.class_index, imp);
            if (row_of.count(key)) continue;
            row_of[key] = static_cast<Index>(samples.size());
            samples.push_back(&data.classes[plan.class_index].impressions[static_cast<std::size_t>(imp)].values);
        }
    };
    for (const auto& g : episode.support) collect(g);
    for (const auto& g : episode.query) collect(g);

    const bool do_augment = training && augment && encoder_ &&
                            (cfg_.encoder.augment_flip || cfg_.encoder.augment_noise > 0);
    if (do_augment) {
        augmented.reserve(samples.size());
        for (auto& s : samples) {
            augmented.push_back(
                augment_image(*s, cfg_.encoder.input_hw, cfg_.encoder.augment_flip, cfg_.encoder.augment_noise, *augment));
            s = &augmented.back();
        }
    }
    const Tensor emb = embed(samples, training);

    std::vector<ClassGraph> graphs;
    auto build = [&](const GraphPlan& plan) {
        std::vector<Index> rows;
        for (Index imp : plan.impressions) rows.push_back(row_of.at({plan.class_index, imp}));
        graphs.push_back(build_graph(gather_rows(emb, rows), data.classes[plan.class_index].id, plan.role));
    };
    for (const auto& g : episode.support) build(g);
    for (const auto& g : episode.query) build(g);

    const EpisodeState refined = pgnn_.forward(EpisodeState::from_graphs(graphs));

    const auto ways = static_cast<Index>(episode.classes.size());
    const auto n_support = static_cast<Index>(episode.support.size());
    const auto n_query = static_cast<Index>(episode.query.size());
    std::vector<Index> support_rows(static_cast<std::size_t>(n_support)), query_rows(static_cast<std::size_t>(n_query));
    for (Index i = 0; i < n_support; ++i) support_rows[static_cast<std::size_t>(i)] = i;
    for (Index i = 0; i < n_query; ++i) query_rows[static_cast<std::size_t>(i)] = n_support + i;

    RowMatrix class_mean = RowMatrix::Zero(ways, n_support);
    Vector counts = Vector::Zero(ways);
    for (Index i = 0; i < n_support; ++i) counts[episode.support[static_cast<std::size_t>(i)].slot] += 1.0;
    for (Index i = 0; i < n_support; ++i) {
        const Index slot = episode.support[static_cast<std::size_t>(i)].slot;
        class_mean(slot, i) = 1.0 / counts[slot];
    }

    EpisodeOutputs out;
    out.class_protos = matmul(Tensor::from_matrix(class_mean), gather_rows(refined.protos, support_rows));
    out.query_protos = gather_rows(refined.protos, query_rows);
    for (const auto& q : episode.query) out.query_labels.push_back(q.slot);
    for (std::size_t c : episode.classes) out.class_ids.push_back(data.classes[c].id);
    return out;
}

EmbeddingTable ProtoNModel::embed_dataset(const Dataset& data) {
    EmbeddingTable table;
    const auto total = static_cast<Index>(data.impression_count());
    table.rows.resize(total, cfg_.input_dim());
    std::vector<const Vector*> all;
    for (const auto& c : data.classes) {
        table.offsets.push_back(static_cast<Index>(all.size()));
        for (const auto& imp : c.impressions) all.push_back(&imp.values);
    }
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < all.size(); start += kChunk) {
        const std::size_t n = std::min(kChunk, all.size() - start);
        const Tensor e = embed(std::span<const Vector* const>(all.data() + start, n), false);
        table.rows.middleRows(static_cast<Index>(start), static_cast<Index>(n)) = e.mat();
    }
    return table;
}

RefinedPrototypes ProtoNModel::refine(std::span<const RowMatrix> support, std::span<const RowMatrix> query) const {
    std::vector<ClassGraph> built;
    built.reserve(support.size() + query.size());
    for (const auto& g : support) built.push_back(build_graph(Tensor::from_matrix(g), "", GraphRole::support));
    for (const auto& g : query) built.push_back(build_graph(Tensor::from_matrix(g), "", GraphRole::query));
    const RowMatrix protos = pgnn_.forward(EpisodeState::from_graphs(built)).protos.mat();
    const auto s = static_cast<Index>(support.size());
    return {protos.topRows(s), protos.bottomRows(protos.rows() - s)};
}

std::vector<NamedParameter> ProtoNModel::parameters() const {
    std::vector<NamedParameter> out;
    if (encoder_) out = encoder_->parameters();
    auto p = pgnn_.parameters();
    out.insert(out.end(), p.begin(), p.end());
    return out;
}

Index ProtoNModel::parameter_count() const {
    Index n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
}

Checkpoint ProtoNModel::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.header = cfg_.to_header();
    for (const auto& p : parameters()) ckpt.blocks.push_back({p.name, p.tensor.shape(), p.tensor.data()});
    if (encoder_) {
        auto buffers = encoder_->buffers();
        ckpt.blocks.insert(ckpt.blocks.end(), buffers.begin(), buffers.end());
    }
    return ckpt;
}

void ProtoNModel::load(const Checkpoint& ckpt) {
    if (encoder_) encoder_->load(ckpt);
    pgnn_.load(ckpt);
}

}  // namespace proton
