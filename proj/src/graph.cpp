#include "proton/graph.hpp"

#include "proton/random.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace proton {

Adjacency build_adjacency(Index n) {
    if (n < 1) throw std::invalid_argument("graph needs at least one real node");
    Adjacency a = Adjacency::Zero(n + 1, n + 1);
    for (Index i = 0; i < n; ++i) {
        for (Index j : {(i + 1) % n, (i - 1 + n) % n}) {
            if (j != i) {
                a(i, j) = 1;
                a(j, i) = 1;
            }
        }
        a(i, n) = 1;
        a(n, i) = 1;
    }
    return a;
}

RowMatrix cycle_mask(Index n) { return build_adjacency(n).topLeftCorner(n, n).cast<double>(); }

ClassGraph build_graph(const Tensor& embeddings, std::string class_id, GraphRole role) {
    if (embeddings.rank() != 2) {
        throw DimensionError("build_graph: expected [N×d] embeddings, got " + shape_string(embeddings.shape()));
    }
    ClassGraph g;
    g.node_feats = embeddings;
    g.proto_feat = mean_rows(embeddings);
    g.adjacency = build_adjacency(embeddings.rows());
    g.class_id = std::move(class_id);
    g.role = role;
    return g;
}

void EpisodeSpec::validate() const {
    if (ways < 2) throw std::invalid_argument("episode.ways must be >= 2");
    if (graphs_per_class < 1) throw std::invalid_argument("episode.graphs_per_class must be >= 1");
    if (images_per_graph < 1) throw std::invalid_argument("episode.images_per_graph must be >= 1");
    if (query_graphs_per_class < 1) throw std::invalid_argument("episode.query_graphs_per_class must be >= 1");
}

namespace {

// N impressions from `pool`: distinct when the pool is large enough, the whole
// pool plus repeats otherwise.
std::vector<Index> draw_graph(const std::vector<Index>& pool, Index n, Rng& rng) {
    std::vector<Index> shuffled = pool;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (static_cast<Index>(shuffled.size()) >= n) return {shuffled.begin(), shuffled.begin() + n};
    std::vector<Index> out = shuffled;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    while (static_cast<Index>(out.size()) < n) out.push_back(pool[pick(rng)]);
    return out;
}

}  // namespace

Episode sample_episode(const Dataset& data, const EpisodeSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto available = static_cast<Index>(data.classes.size());
    if (available < spec.ways) {
        throw DatasetError("episode needs " + std::to_string(spec.ways) + " classes, dataset has " +
                           std::to_string(available));
    }
    Rng rng(seed);
    std::vector<std::size_t> order(data.classes.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    Episode ep;
    ep.classes.assign(order.begin(), order.begin() + spec.ways);
    const Index n = spec.images_per_graph;
    const Index k = spec.graphs_per_class;
    const Index q = spec.query_graphs_per_class;
    for (Index slot = 0; slot < spec.ways; ++slot) {
        const std::size_t ci = ep.classes[static_cast<std::size_t>(slot)];
        const auto r = static_cast<Index>(data.classes[ci].impressions.size());
        if (r < 1) throw DatasetError("class '" + data.classes[ci].id + "' has no impressions");
        std::vector<Index> all(static_cast<std::size_t>(r));
        std::iota(all.begin(), all.end(), 0);
        std::shuffle(all.begin(), all.end(), rng);

        std::vector<Index> support_pool, query_pool;
        if (r >= n * (k + q)) {
            const Index cut = std::max(n * k, r * k / (k + q));
            support_pool.assign(all.begin(), all.begin() + cut);
            query_pool.assign(all.begin() + cut, all.end());
        } else {
            support_pool = all;
            query_pool = all;
            ep.pools_overlap = true;
        }

        auto make = [&](std::vector<Index>& pool, GraphRole role) {
            GraphPlan plan{slot, ci, {}, role};
            if (spec.sample_with_replacement) {
                plan.impressions = draw_graph(pool, n, rng);
            } else {
                if (static_cast<Index>(pool.size()) < n) {
                    throw DatasetError("class '" + data.classes[ci].id + "' has too few impressions for sampling without replacement");
                }
                plan.impressions.assign(pool.end() - n, pool.end());
                pool.resize(pool.size() - static_cast<std::size_t>(n));
            }
            return plan;
        };
        for (Index g = 0; g < k; ++g) ep.support.push_back(make(support_pool, GraphRole::support));
        for (Index g = 0; g < q; ++g) ep.query.push_back(make(query_pool, GraphRole::query));
    }
    return ep;
}

}  // namespace proton
