#include "proton/biometric.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace proton {

ClassPartition partition_enrollment(std::span<const std::string> impression_ids, Index graphs_per_class,
                                    Index images_per_graph) {
    const auto r = static_cast<Index>(impression_ids.size());
    if (r < 2) {
        throw DatasetError("enrollment needs at least 2 impressions per class, got " + std::to_string(r));
    }
    if (graphs_per_class < 1 || images_per_graph < 1) throw std::invalid_argument("K and N must be positive");
    std::vector<Index> order(static_cast<std::size_t>(r));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return impression_ids[static_cast<std::size_t>(a)] < impression_ids[static_cast<std::size_t>(b)];
    });
    const Index kn = graphs_per_class * images_per_graph;
    const Index enroll = r > kn ? kn : r / 2;
    ClassPartition p;
    p.enrollment.assign(order.begin(), order.begin() + enroll);
    p.test.assign(order.begin() + enroll, order.end());
    return p;
}

ClassPartition partition_enrollment(const IdentityClass& cls, Index graphs_per_class, Index images_per_graph) {
    std::vector<std::string> ids;
    ids.reserve(cls.impressions.size());
    for (const auto& imp : cls.impressions) ids.push_back(imp.id);
    try {
        return partition_enrollment(ids, graphs_per_class, images_per_graph);
    } catch (const DatasetError& e) {
        throw DatasetError("class '" + cls.id + "': " + e.what());
    }
}

double eer_from_counts(const RocCounts& roc, std::int64_t genuine, std::int64_t imposter) {
    // Work in units of 1/(G·I) so the crossing is found on integers:
    // E = FRR·G·I − FAR·G·I = b·I − a·G.
    auto gap = [&](std::size_t i) { return roc.false_rejects[i] * imposter - roc.false_accepts[i] * genuine; };
    for (std::size_t i = 0; i < roc.thresholds.size(); ++i) {
        const std::int64_t e1 = gap(i);
        if (e1 > 0) continue;
        if (e1 == 0 || i == 0) return static_cast<double>(roc.false_accepts[i]) / static_cast<double>(imposter);
        const std::int64_t e0 = gap(i - 1);
        const std::int64_t a0 = roc.false_accepts[i - 1];
        const std::int64_t a1 = roc.false_accepts[i];
        // FAR at the crossing: (a0·(e0−e1) + e0·(a1−a0)) / ((e0−e1)·I).
        const double num = static_cast<double>(a0) * static_cast<double>(e0 - e1) +
                           static_cast<double>(e0) * static_cast<double>(a1 - a0);
        return num / (static_cast<double>(e0 - e1) * static_cast<double>(imposter));
    }
    return 1.0;
}

double auc_from_counts(const RocCounts& roc, std::int64_t genuine, std::int64_t imposter) {
    // Twice the trapezoid area in count units: Σ Δfa · (tp_prev + tp_cur).
    std::int64_t twice = 0;
    for (std::size_t i = 1; i < roc.thresholds.size(); ++i) {
        const std::int64_t dfa = roc.false_accepts[i] - roc.false_accepts[i - 1];
        const std::int64_t tp0 = genuine - roc.false_rejects[i - 1];
        const std::int64_t tp1 = genuine - roc.false_rejects[i];
        twice += dfa * (tp0 + tp1);
    }
    return static_cast<double>(twice) / (2.0 * static_cast<double>(genuine) * static_cast<double>(imposter));
}

std::vector<std::size_t> identify(const Eigen::Ref<const Eigen::RowVectorXd>& probe,
                                  const Eigen::Ref<const RowMatrix>& gallery, std::span<const std::string> gallery_ids) {
    if (gallery.rows() == 0) throw std::invalid_argument("identify: empty gallery");
    if (gallery.cols() != probe.size()) {
        throw DimensionError("identify: probe width " + std::to_string(probe.size()) + " vs gallery width " +
                             std::to_string(gallery.cols()));
    }
    if (static_cast<Index>(gallery_ids.size()) != gallery.rows()) {
        throw std::invalid_argument("identify: one id per gallery row required");
    }
    std::vector<double> dist(static_cast<std::size_t>(gallery.rows()));
    for (Index c = 0; c < gallery.rows(); ++c) dist[static_cast<std::size_t>(c)] = (gallery.row(c) - probe).norm();
    std::vector<std::size_t> order(dist.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return gallery_ids[a] < gallery_ids[b];
    });
    return order;
}

Index rank_of(std::span<const std::size_t> ranking, std::size_t true_index) {
    for (std::size_t i = 0; i < ranking.size(); ++i) {
        if (ranking[i] == true_index) return static_cast<Index>(i) + 1;
    }
    throw std::invalid_argument("true class absent from ranking");
}

EvalCurve cmc_curve(std::span<const Index> ranks, Index gallery_size) {
    if (ranks.empty()) throw std::invalid_argument("cmc_curve: no probes");
    std::vector<std::int64_t> at(static_cast<std::size_t>(gallery_size) + 1, 0);
    for (Index r : ranks) {
        if (r < 1 || r > gallery_size) throw std::invalid_argument("cmc_curve: rank out of range");
        ++at[static_cast<std::size_t>(r)];
    }
    EvalCurve curve;
    std::int64_t hits = 0;
    const auto n = static_cast<double>(ranks.size());
    for (Index k = 1; k <= gallery_size; ++k) {
        hits += at[static_cast<std::size_t>(k)];
        curve.points.emplace_back(static_cast<double>(k), static_cast<double>(hits) / n);
    }
    curve.summary["rank1"] = curve.points.front().second;
    curve.summary["rank5"] = curve.points[static_cast<std::size_t>(std::min<Index>(5, gallery_size) - 1)].second;
    return curve;
}

void BiometricConfig::validate() const {
    if (graphs_per_class < 1) throw std::invalid_argument("graphs_per_class must be >= 1");
    if (images_per_graph < 1) throw std::invalid_argument("images_per_graph must be >= 1");
    if (pairs_per_kind < 1) throw std::invalid_argument("pairs_per_kind must be >= 1");
    if (!(backfill_noise >= 0.0)) throw std::invalid_argument("backfill_noise must be >= 0");
}

double feature_scale(const EmbeddingTable& table) {
    const auto n = static_cast<double>(table.rows.size());
    if (n < 2) return 0.0;
    const double mean = table.rows.mean();
    return std::sqrt((table.rows.array() - mean).square().sum() / (n - 1));
}

std::vector<RowMatrix> make_graph_blocks(const EmbeddingTable& table, std::size_t cls, std::span<const Index> pool,
                                         Index count, Index images_per_graph, double noise_sigma, Rng& rng) {
    if (pool.empty()) throw std::invalid_argument("make_graph_blocks: empty impression pool");
    const auto r = static_cast<Index>(pool.size());
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<RowMatrix> blocks;
    blocks.reserve(static_cast<std::size_t>(count));
    for (Index k = 0; k < count; ++k) {
        RowMatrix b(images_per_graph, table.rows.cols());
        for (Index j = 0; j < images_per_graph; ++j) {
            b.row(j) = table.row(cls, pool[static_cast<std::size_t>((k * images_per_graph + j) % r)]);
            if (j >= r && noise_sigma > 0) {
                for (Index c = 0; c < b.cols(); ++c) b(j, c) += noise_sigma * noise(rng);
            }
        }
        blocks.push_back(std::move(b));
    }
    return blocks;
}

namespace {

RowMatrix mean_of_groups(const RowMatrix& protos, Index group) {
    RowMatrix out(protos.rows() / group, protos.cols());
    for (Index c = 0; c < out.rows(); ++c) out.row(c) = protos.middleRows(c * group, group).colwise().mean();
    return out;
}

}  // namespace

IdentificationResult run_identification(const ProtoNModel& model, const Dataset& data, const EmbeddingTable& table,
                                        const BiometricConfig& cfg) {
    cfg.validate();
    if (data.classes.empty()) throw DatasetError("identification needs at least one class");
    const Index K = cfg.graphs_per_class;
    const Index N = cfg.images_per_graph;
    const double sigma = cfg.backfill_noise * feature_scale(table);
    Rng rng(derive_seed(cfg.seed, {0x1D}));

    std::vector<RowMatrix> enroll, probes;
    IdentificationResult res;
    std::vector<std::string> ids;
    for (std::size_t c = 0; c < data.classes.size(); ++c) {
        const ClassPartition part = partition_enrollment(data.classes[c], K, N);
        auto e = make_graph_blocks(table, c, part.enrollment, K, N, sigma, rng);
        enroll.insert(enroll.end(), std::make_move_iterator(e.begin()), std::make_move_iterator(e.end()));
        const Index count = std::max<Index>(1, static_cast<Index>(part.test.size()) / N);
        auto p = make_graph_blocks(table, c, part.test, count, N, sigma, rng);
        probes.insert(probes.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
        res.probe_class.insert(res.probe_class.end(), static_cast<std::size_t>(count), c);
        ids.push_back(data.classes[c].id);
    }

    RefinedPrototypes refined;
    if (model.config().pgnn.query_alignment_enabled) {
        // Probes would otherwise see each other through alignment.
        refined.query.resize(static_cast<Index>(probes.size()), model.config().pgnn.output_dim());
        for (std::size_t i = 0; i < probes.size(); ++i) {
            auto one = model.refine(enroll, std::span<const RowMatrix>(&probes[i], 1));
            refined.support = std::move(one.support);
            refined.query.row(static_cast<Index>(i)) = one.query.row(0);
        }
    } else {
        refined = model.refine(enroll, probes);
    }
    res.gallery = mean_of_groups(refined.support, K);
    res.probes = std::move(refined.query);
    for (Index i = 0; i < res.probes.rows(); ++i) {
        const auto ranking = identify(res.probes.row(i), res.gallery, ids);
        res.ranks.push_back(rank_of(ranking, res.probe_class[static_cast<std::size_t>(i)]));
    }
    res.cmc = cmc_curve(res.ranks, res.gallery.rows());
    return res;
}

VerificationSplit verification_split(Index impressions, Index graphs_per_class, Index images_per_graph, Rng& rng) {
    const Index r = impressions, K = graphs_per_class, N = images_per_graph;
    if (r < 2) throw DatasetError("verification split needs at least 2 impressions");
    std::vector<Index> perm(static_cast<std::size_t>(r));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const bool enough = r >= N * (K + 1);
    const Index probe_n = enough ? N : std::max<Index>(1, r / (K + 1));
    const Index enroll_n = enough ? K * N : r - probe_n;
    VerificationSplit out;
    out.probe.assign(perm.begin(), perm.begin() + probe_n);
    out.enrollment.assign(perm.begin() + probe_n, perm.begin() + probe_n + enroll_n);
    return out;
}

ScoreSet build_verification_pairs(const ProtoNModel& model, const Dataset& data, const EmbeddingTable& table,
                                  const BiometricConfig& cfg) {
    cfg.validate();
    const Index K = cfg.graphs_per_class;
    const Index N = cfg.images_per_graph;
    std::vector<std::size_t> eligible;
    for (std::size_t c = 0; c < data.classes.size(); ++c) {
        if (data.classes[c].impressions.size() >= 2) eligible.push_back(c);
    }
    if (eligible.empty()) throw DatasetError("verification needs a class with at least 2 impressions");
    if (eligible.size() < 2) throw DatasetError("verification needs at least 2 classes for imposter pairs");
    const double sigma = cfg.backfill_noise * feature_scale(table);
    Rng rng(derive_seed(cfg.seed, {0x7E}));

    auto split = [&](std::size_t cls) {
        return verification_split(static_cast<Index>(data.classes[cls].impressions.size()), K, N, rng);
    };
    auto score = [&](std::size_t probe_cls, const std::vector<Index>& probe_pool, std::size_t enroll_cls,
                     const std::vector<Index>& enroll_pool) {
        auto probe = make_graph_blocks(table, probe_cls, probe_pool, 1, N, sigma, rng);
        auto enroll = make_graph_blocks(table, enroll_cls, enroll_pool, K, N, sigma, rng);
        const auto refined = model.refine(enroll, probe);
        return (refined.support.colwise().mean() - refined.query.row(0)).norm();
    };
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_other(0, eligible.size() - 2);

    ScoreSet scores;
    for (Index i = 0; i < cfg.pairs_per_kind; ++i) {
        const std::size_t c = eligible[pick(rng)];
        const auto sc = split(c);
        scores.genuine.push_back(score(c, sc.probe, c, sc.enrollment));
    }
    for (Index i = 0; i < cfg.pairs_per_kind; ++i) {
        const std::size_t ai = pick(rng);
        std::size_t bi = pick_other(rng);
        if (bi >= ai) ++bi;
        const std::size_t a = eligible[ai], b = eligible[bi];
        const auto sa = split(a);
        const auto sb = split(b);
        scores.imposter.push_back(score(a, sa.probe, b, sb.enrollment));
    }
    return scores;
}

}  // namespace proton
