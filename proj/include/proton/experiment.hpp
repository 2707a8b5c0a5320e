#pragma once

#include "proton/biometric.hpp"
#include "proton/config.hpp"
#include "proton/dataset.hpp"
#include "proton/model.hpp"
#include "proton/trainer.hpp"

namespace proton {

/// Reads data.path or generates the synthetic set described by the config.
Dataset load_dataset(const RunConfig& cfg);

/// Class-level train/test/val split seeded by data.seed.
DatasetSplits make_splits(const Dataset& data, const RunConfig& cfg);

/// Classes used for evaluation; `heldout` is test ∪ val.
Dataset select_split(const DatasetSplits& splits, EvalSplit which);

/// Throws ConfigError or DimensionError when the data cannot feed the model.
void check_compatible(const ModelConfig& model, const Dataset& data);

struct RecognitionSummary {
    double episodic_acc = 0.0;  // percent
    EvalCurve cmc;
    EvalCurve roc;

    double rank1() const { return cmc.summary.at("rank1"); }
    double rank5() const { return cmc.summary.at("rank5"); }
    double eer() const { return roc.summary.at("eer"); }
    double auc() const { return roc.summary.at("auc"); }
};

/// Episodic accuracy, identification and verification on `classes`.
RecognitionSummary evaluate_recognition(ProtoNModel& model, const Dataset& classes, const RunConfig& cfg);

struct ExperimentResult {
    TrainResult train;
    RecognitionSummary recognition;
};

/// Trains on the training split (selecting on the test split), then evaluates
/// the selected model on the configured evaluation split.
ExperimentResult run_experiment(const RunConfig& cfg, const DatasetSplits& splits, const EpochCallback& on_epoch = {});

}  // namespace proton
