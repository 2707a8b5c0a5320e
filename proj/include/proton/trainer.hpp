#pragma once

#include "proton/biometric.hpp"
#include "proton/checkpoint.hpp"
#include "proton/dataset.hpp"
#include "proton/graph.hpp"
#include "proton/model.hpp"
#include "proton/optim.hpp"
#include "proton/protoloss.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace proton {

/// Raised when a training loss stops being finite.
class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Which loss drives the parameter update.
enum class Objective { hybrid, episodic, overall };

Objective parse_objective(std::string_view s);
std::string to_string(Objective o);

struct TrainConfig {
    Index episodes_per_epoch = 200;
    Index epochs = 1000;
    EpisodeSpec episode;
    double lr = 0.001;
    double lambda = 0.4;
    double registry_momentum = 0.9;
    Objective objective = Objective::hybrid;
    std::uint64_t seed = 42;
    Preset preset = Preset::paper;
    /// Episodes per epoch used to score the validation split.
    Index eval_episodes = 100;
    double train_fraction = 0.70;
    double test_fraction = 0.15;

    static TrainConfig for_preset(Preset p);
    void validate() const;
};

struct EpochRecord {
    Index epoch = 0;
    double loss = 0.0;
    double episodic_acc = 0.0;  // percent
    double overall_acc = 0.0;   // percent
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    Index best_epoch = 0;
    double best_episodic_acc = 0.0;
    double wall_seconds = 0.0;

    /// `epoch,loss,episodic_acc,overall_acc`
    std::string to_csv() const;
    /// Deterministic summary; wall-clock is left to the run manifest.
    std::string to_json() const;
};

struct TrainResult {
    Checkpoint final_checkpoint;
    Checkpoint best_checkpoint;
    TrainReport report;
    PrototypeRegistry registry;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Episodic training on `train`, model selection by episodic accuracy on
/// `val`. The model ends holding the best-epoch weights.
TrainResult train(ProtoNModel& model, const Dataset& train_split, const Dataset& val_split, const TrainConfig& cfg,
                  const BiometricConfig& eval_cfg, const EpochCallback& on_epoch = {});

/// Mean per-episode query accuracy in percent, using evaluation-mode embeddings.
/// Ways are clamped to the number of classes available.
double evaluate_episodic(const ProtoNModel& model, const Dataset& data, const EmbeddingTable& table,
                         const EpisodeSpec& spec, Index num_episodes, std::uint64_t seed);
double evaluate_episodic(ProtoNModel& model, const Dataset& data, const EpisodeSpec& spec, Index num_episodes,
                         std::uint64_t seed);

/// Rank-1 identification over every class of `data`, in percent.
double evaluate_overall(ProtoNModel& model, const Dataset& data, const BiometricConfig& cfg);

/// Checkpoint with model weights, registry blocks and training metadata.
Checkpoint make_checkpoint(const ProtoNModel& model, const PrototypeRegistry& registry, const TrainConfig& cfg,
                           Index epoch);

}  // namespace proton
