#pragma once

#include "proton/dataset.hpp"
#include "proton/model.hpp"

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace proton {

/// Impression indices (into IdentityClass::impressions) for one class.
struct ClassPartition {
    std::vector<Index> enrollment;
    std::vector<Index> test;
};

/// Lexicographically first K·N impressions enroll when r > K·N, otherwise ⌊r/2⌋.
ClassPartition partition_enrollment(std::span<const std::string> impression_ids, Index graphs_per_class,
                                    Index images_per_graph);
ClassPartition partition_enrollment(const IdentityClass& cls, Index graphs_per_class, Index images_per_graph);

struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> imposter;
};

struct EvalCurve {
    std::vector<std::pair<double, double>> points;
    std::map<std::string, double> summary;
};

struct RocCounts {
    // Per threshold, starting below every score: imposters accepted (score ≤ t)
    // and genuines rejected (score > t).
    std::vector<std::int64_t> false_accepts;
    std::vector<std::int64_t> false_rejects;
    std::vector<double> thresholds;
};

/// Threshold sweep over every distinct score. Works on any random-access range
/// of arithmetic scores.
template <typename Scores>
RocCounts roc_counts(const Scores& genuine, const Scores& imposter) {
    std::vector<double> g(std::begin(genuine), std::end(genuine));
    std::vector<double> im(std::begin(imposter), std::end(imposter));
    if (g.empty() || im.empty()) throw std::invalid_argument("roc needs genuine and imposter scores");
    std::sort(g.begin(), g.end());
    std::sort(im.begin(), im.end());
    std::vector<double> all;
    all.reserve(g.size() + im.size());
    std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(all));
    all.erase(std::unique(all.begin(), all.end()), all.end());

    RocCounts out;
    out.thresholds.push_back(-std::numeric_limits<double>::infinity());
    out.false_accepts.push_back(0);
    out.false_rejects.push_back(static_cast<std::int64_t>(g.size()));
    std::size_t gi = 0, ii = 0;
    for (double t : all) {
        while (gi < g.size() && g[gi] <= t) ++gi;
        while (ii < im.size() && im[ii] <= t) ++ii;
        out.thresholds.push_back(t);
        out.false_accepts.push_back(static_cast<std::int64_t>(ii));
        out.false_rejects.push_back(static_cast<std::int64_t>(g.size() - gi));
    }
    return out;
}

/// EER from integer counts, interpolating linearly between the bracketing
/// thresholds.
double eer_from_counts(const RocCounts& roc, std::int64_t genuine, std::int64_t imposter);
/// Trapezoid area under (FAR, TPR); equals P(genuine < imposter) + ½·P(tie).
double auc_from_counts(const RocCounts& roc, std::int64_t genuine, std::int64_t imposter);

/// ROC points (FAR, TPR) with summary keys "eer" and "auc".
template <typename Scores>
EvalCurve roc_eer_auc(const Scores& genuine, const Scores& imposter) {
    const RocCounts roc = roc_counts(genuine, imposter);
    const auto ng = static_cast<std::int64_t>(std::size(genuine));
    const auto ni = static_cast<std::int64_t>(std::size(imposter));
    EvalCurve curve;
    for (std::size_t i = 0; i < roc.thresholds.size(); ++i) {
        curve.points.emplace_back(static_cast<double>(roc.false_accepts[i]) / static_cast<double>(ni),
                                  static_cast<double>(ng - roc.false_rejects[i]) / static_cast<double>(ng));
    }
    curve.summary["eer"] = eer_from_counts(roc, ng, ni);
    curve.summary["auc"] = auc_from_counts(roc, ng, ni);
    return curve;
}

inline EvalCurve roc_eer_auc(const ScoreSet& scores) { return roc_eer_auc(scores.genuine, scores.imposter); }

/// Gallery indices ordered by ascending Euclidean distance to the probe, ties
/// broken by class id.
std::vector<std::size_t> identify(const Eigen::Ref<const Eigen::RowVectorXd>& probe,
                                  const Eigen::Ref<const RowMatrix>& gallery, std::span<const std::string> gallery_ids);

/// 1-based rank of the true class in a ranking.
Index rank_of(std::span<const std::size_t> ranking, std::size_t true_index);

/// y(k) for k = 1..gallery_size from per-probe ranks; summary "rank1", "rank5".
EvalCurve cmc_curve(std::span<const Index> ranks, Index gallery_size);

struct BiometricConfig {
    Index graphs_per_class = 4;   // K
    Index images_per_graph = 5;   // N
    Index pairs_per_kind = 500;
    /// Backfill noise as a fraction of the embedding standard deviation.
    double backfill_noise = 0.01;
    std::uint64_t seed = 42;

    void validate() const;
};

/// Node blocks for `count` graphs of N nodes drawn cyclically from `pool`;
/// nodes that would repeat an impression inside one graph get Gaussian noise.
std::vector<RowMatrix> make_graph_blocks(const EmbeddingTable& table, std::size_t cls, std::span<const Index> pool,
                                         Index count, Index images_per_graph, double noise_sigma, Rng& rng);

struct IdentificationResult {
    std::vector<Index> ranks;  // one per probe graph
    std::vector<std::size_t> probe_class;
    RowMatrix gallery;         // class prototypes [C×d]
    RowMatrix probes;          // probe prototypes [P×d]
    EvalCurve cmc;
};

/// Enroll every class from its enrollment split, identify one probe graph per N
/// test impressions against the full gallery.
IdentificationResult run_identification(const ProtoNModel& model, const Dataset& data, const EmbeddingTable& table,
                                        const BiometricConfig& cfg);

struct VerificationSplit {
    std::vector<Index> probe;
    std::vector<Index> enrollment;
};

/// Disjoint probe and enrollment impressions of one shuffled class: N and K·N
/// when r ≥ N(K+1), otherwise max(1, r/(K+1)) probe impressions and the rest.
VerificationSplit verification_split(Index impressions, Index graphs_per_class, Index images_per_graph, Rng& rng);

/// Genuine and imposter distances between a 1×N graph prototype and a K×N
/// class prototype built from disjoint impressions.
ScoreSet build_verification_pairs(const ProtoNModel& model, const Dataset& data, const EmbeddingTable& table,
                                  const BiometricConfig& cfg);

/// Standard deviation over every entry of the table.
double feature_scale(const EmbeddingTable& table);

}  // namespace proton
