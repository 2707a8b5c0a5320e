#include "proton/experiment.hpp"

#include <filesystem>

namespace proton {

Dataset load_dataset(const RunConfig& cfg) {
    if (cfg.data.synthetic()) {
        SyntheticDatasetSpec spec;
        spec.num_classes = cfg.data.synthetic_classes;
        spec.impressions_per_class = cfg.data.synthetic_impressions;
        spec.noise_sigma = cfg.data.synthetic_noise;
        spec.max_shift = cfg.data.synthetic_shift;
        spec.seed = cfg.data.seed;
        if (cfg.model.input == SampleKind::embedding) {
            return generate_synthetic_embeddings(spec, cfg.model.input_dim());
        }
        spec.image_hw = cfg.model.encoder.input_hw;
        return generate_synthetic(spec);
    }
    const std::filesystem::path path(cfg.data.path);
    if (!std::filesystem::exists(path)) throw DatasetError("dataset path does not exist: " + path.string());
    if (std::filesystem::is_directory(path)) return load_image_folder(path, cfg.model.encoder.input_hw);
    return load_embeddings(path);
}

DatasetSplits make_splits(const Dataset& data, const RunConfig& cfg) {
    return split_by_class(data, cfg.train.train_fraction, cfg.train.test_fraction, cfg.data.seed);
}

Dataset select_split(const DatasetSplits& splits, EvalSplit which) {
    switch (which) {
        case EvalSplit::val: return splits.val;
        case EvalSplit::test: return splits.test;
        case EvalSplit::heldout: return merge_classes({&splits.test, &splits.val});
        case EvalSplit::all: return merge_classes({&splits.train, &splits.test, &splits.val});
    }
    return splits.val;
}

void check_compatible(const ModelConfig& model, const Dataset& data) {
    if (model.input != data.kind) {
        throw ConfigError(std::string("model expects ") + (model.input == SampleKind::image ? "images" : "embeddings") +
                          " but the dataset holds " + (data.kind == SampleKind::image ? "images" : "embeddings"));
    }
    if (data.kind == SampleKind::embedding && data.embed_dim != model.input_dim()) {
        throw DimensionError("dataset embedding width " + std::to_string(data.embed_dim) +
                             " does not match model input width " + std::to_string(model.input_dim()));
    }
    if (data.kind == SampleKind::image && data.image_hw != model.encoder.input_hw) {
        throw DimensionError("dataset image size " + std::to_string(data.image_hw) +
                             " does not match model input size " + std::to_string(model.encoder.input_hw));
    }
}

RecognitionSummary evaluate_recognition(ProtoNModel& model, const Dataset& classes, const RunConfig& cfg) {
    const EmbeddingTable table = model.embed_dataset(classes);
    RecognitionSummary s;
    s.episodic_acc =
        evaluate_episodic(model, classes, table, cfg.train.episode, cfg.eval.episodes, derive_seed(cfg.seed, {4}));
    s.cmc = run_identification(model, classes, table, cfg.eval.biometric).cmc;
    s.roc = roc_eer_auc(build_verification_pairs(model, classes, table, cfg.eval.biometric));
    return s;
}

ExperimentResult run_experiment(const RunConfig& cfg, const DatasetSplits& splits, const EpochCallback& on_epoch) {
    check_compatible(cfg.model, splits.train);
    ProtoNModel model(cfg.model, cfg.seed);
    ExperimentResult r;
    r.train = train(model, splits.train, splits.test, cfg.train, cfg.eval.biometric, on_epoch);
    r.recognition = evaluate_recognition(model, select_split(splits, cfg.eval.split), cfg);
    return r;
}

}  // namespace proton
