#include "proton/trainer.hpp"

#include "proton/text.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>

namespace proton {

Objective parse_objective(std::string_view s) {
    if (s == "hybrid") return Objective::hybrid;
    if (s == "episodic") return Objective::episodic;
    if (s == "overall") return Objective::overall;
    throw std::invalid_argument("unknown objective '" + std::string(s) + "' (expected hybrid, episodic or overall)");
}

std::string to_string(Objective o) {
    switch (o) {
        case Objective::hybrid: return "hybrid";
        case Objective::episodic: return "episodic";
        case Objective::overall: return "overall";
    }
    return "hybrid";
}

TrainConfig TrainConfig::for_preset(Preset p) {
    TrainConfig cfg;
    cfg.preset = p;
    if (p == Preset::tiny) {
        cfg.episodes_per_epoch = 40;
        cfg.epochs = 20;
        cfg.episode.graphs_per_class = 2;
        cfg.episode.images_per_graph = 3;
        cfg.eval_episodes = 50;
    }
    return cfg;
}

void TrainConfig::validate() const {
    episode.validate();
    if (episodes_per_epoch < 1) throw std::invalid_argument("episodes_per_epoch must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a finite value >= 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
    if (!(registry_momentum >= 0.0 && registry_momentum < 1.0)) {
        throw std::invalid_argument("registry_momentum must lie in [0, 1)");
    }
    if (!(train_fraction > 0.0 && test_fraction >= 0.0 && train_fraction + test_fraction <= 1.0)) {
        throw std::invalid_argument("split fractions must be positive and sum to at most 1");
    }
}

std::string TrainReport::to_csv() const {
    std::string out = "epoch,loss,episodic_acc,overall_acc\n";
    for (const auto& e : epochs) {
        out += std::to_string(e.epoch) + "," + format_double(e.loss) + "," + format_double(e.episodic_acc) + "," +
               format_double(e.overall_acc) + "\n";
    }
    return out;
}

std::string TrainReport::to_json() const {
    nlohmann::ordered_json j;
    j["epochs"] = epochs.size();
    j["best_epoch"] = best_epoch;
    j["best_episodic_acc"] = best_episodic_acc;
    if (!epochs.empty()) {
        const auto& last = epochs.back();
        j["final"] = {{"loss", last.loss}, {"episodic_acc", last.episodic_acc}, {"overall_acc", last.overall_acc}};
    }
    return j.dump(2) + "\n";
}

Checkpoint make_checkpoint(const ProtoNModel& model, const PrototypeRegistry& registry, const TrainConfig& cfg,
                           Index epoch) {
    Checkpoint ckpt = model.to_checkpoint();
    ckpt.header.emplace_back("train.seed", std::to_string(cfg.seed));
    ckpt.header.emplace_back("train.epoch", std::to_string(epoch));
    ckpt.header.emplace_back("train.objective", to_string(cfg.objective));
    ckpt.header.emplace_back("train.lambda", format_double(cfg.lambda));
    ckpt.header.emplace_back("train.registry_momentum", format_double(registry.momentum()));
    auto blocks = registry.to_blocks();
    ckpt.blocks.insert(ckpt.blocks.end(), blocks.begin(), blocks.end());
    return ckpt;
}

double evaluate_episodic(const ProtoNModel& model, const Dataset& data, const EmbeddingTable& table,
                         const EpisodeSpec& spec, Index num_episodes, std::uint64_t seed) {
    if (data.classes.size() < 2) throw DatasetError("episodic evaluation needs at least 2 classes");
    EpisodeSpec s = spec;
    s.ways = std::min<Index>(s.ways, static_cast<Index>(data.classes.size()));
    double total = 0.0;
    for (Index e = 0; e < num_episodes; ++e) {
        const Episode ep = sample_episode(data, s, derive_seed(seed, {static_cast<std::uint64_t>(e)}));
        auto blocks = [&](const std::vector<GraphPlan>& plans) {
            std::vector<RowMatrix> out;
            out.reserve(plans.size());
            for (const auto& g : plans) {
                RowMatrix b(static_cast<Index>(g.impressions.size()), table.rows.cols());
                for (std::size_t j = 0; j < g.impressions.size(); ++j) {
                    b.row(static_cast<Index>(j)) = table.row(g.class_index, g.impressions[j]);
                }
                out.push_back(std::move(b));
            }
            return out;
        };
        const auto refined = model.refine(blocks(ep.support), blocks(ep.query));
        RowMatrix protos = RowMatrix::Zero(s.ways, refined.support.cols());
        Vector counts = Vector::Zero(s.ways);
        for (std::size_t i = 0; i < ep.support.size(); ++i) {
            protos.row(ep.support[i].slot) += refined.support.row(static_cast<Index>(i));
            counts[ep.support[i].slot] += 1.0;
        }
        for (Index c = 0; c < s.ways; ++c) protos.row(c) /= counts[c];
        EpisodeOutputs out;
        out.class_protos = Tensor::from_matrix(protos);
        out.query_protos = Tensor::from_matrix(refined.query);
        for (const auto& q : ep.query) out.query_labels.push_back(q.slot);
        total += episode_accuracy(out);
    }
    return 100.0 * total / static_cast<double>(num_episodes);
}

double evaluate_episodic(ProtoNModel& model, const Dataset& data, const EpisodeSpec& spec, Index num_episodes,
                         std::uint64_t seed) {
    return evaluate_episodic(model, data, model.embed_dataset(data), spec, num_episodes, seed);
}

double evaluate_overall(ProtoNModel& model, const Dataset& data, const BiometricConfig& cfg) {
    const EmbeddingTable table = model.embed_dataset(data);
    return 100.0 * run_identification(model, data, table, cfg).cmc.summary.at("rank1");
}

TrainResult train(ProtoNModel& model, const Dataset& train_split, const Dataset& val_split, const TrainConfig& cfg,
                  const BiometricConfig& eval_cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    eval_cfg.validate();
    if (static_cast<Index>(train_split.classes.size()) < cfg.episode.ways) {
        throw DatasetError("training split has " + std::to_string(train_split.classes.size()) +
                           " classes, episodes need " + std::to_string(cfg.episode.ways));
    }
    if (train_split.sample_size() != val_split.sample_size()) {
        throw DatasetError("training and selection splits differ in sample size");
    }
    const auto start = std::chrono::steady_clock::now();

    Adam opt(model.parameters(), AdamOptions{.lr = cfg.lr});
    PrototypeRegistry registry(cfg.registry_momentum);
    TrainResult result{Checkpoint{}, Checkpoint{}, TrainReport{}, PrototypeRegistry(cfg.registry_momentum)};
    bool have_best = false;
    double best_overall = 0.0;

    for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (Index e = 0; e < cfg.episodes_per_epoch; ++e) {
            const auto ue = static_cast<std::uint64_t>(epoch), ui = static_cast<std::uint64_t>(e);
            const Episode ep = sample_episode(train_split, cfg.episode, derive_seed(cfg.seed, {1, ue, ui}));
            Rng augment(derive_seed(cfg.seed, {2, ue, ui}));

            Tape tape;
            TapeScope scope(tape);
            const EpisodeOutputs out = model.forward_episode(train_split, ep, true, &augment);
            Tensor loss;
            switch (cfg.objective) {
                case Objective::episodic: loss = episodic_loss(out); break;
                case Objective::overall: loss = overall_loss(out, registry); break;
                case Objective::hybrid:
                    loss = hybrid_loss(episodic_loss(out), overall_loss(out, registry), cfg.lambda);
                    break;
            }
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw NonFiniteLoss("non-finite loss " + format_double(value) + " at epoch " + std::to_string(epoch) +
                                    ", episode " + std::to_string(e + 1));
            }
            opt.zero_grad();
            backward(loss);
            opt.step();
            registry.update(out.class_ids, out.class_protos.mat());
            loss_sum += value;
        }

        const EmbeddingTable table = model.embed_dataset(val_split);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(cfg.episodes_per_epoch);
        rec.episodic_acc =
            evaluate_episodic(model, val_split, table, cfg.episode, cfg.eval_episodes, derive_seed(cfg.seed, {3}));
        rec.overall_acc = 100.0 * run_identification(model, val_split, table, eval_cfg).cmc.summary.at("rank1");
        result.report.epochs.push_back(rec);

        const bool better = !have_best || rec.episodic_acc > result.report.best_episodic_acc ||
                            (rec.episodic_acc == result.report.best_episodic_acc && rec.overall_acc > best_overall);
        if (better) {
            have_best = true;
            result.report.best_epoch = epoch;
            result.report.best_episodic_acc = rec.episodic_acc;
            best_overall = rec.overall_acc;
            result.best_checkpoint = make_checkpoint(model, registry, cfg, epoch);
            result.registry = registry;
        }
        if (on_epoch) on_epoch(rec);
    }

    result.final_checkpoint = make_checkpoint(model, registry, cfg, cfg.epochs);
    model.load(result.best_checkpoint);
    result.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace proton
