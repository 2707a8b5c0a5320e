#pragma once

#include "proton/biometric.hpp"
#include "proton/model.hpp"
#include "proton/trainer.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace proton {

/// Invalid or unknown configuration entries.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct DataConfig {
    /// Image folder or embedding CSV; empty when synthetic data is used.
    std::string path;
    Index synthetic_classes = 0;
    Index synthetic_impressions = 0;
    double synthetic_noise = 0.1;
    Index synthetic_shift = 0;
    /// Seeds synthetic generation and the class split.
    std::uint64_t seed = 42;

    bool synthetic() const { return synthetic_classes > 0; }
};

/// Which classes an evaluation runs on.
enum class EvalSplit { val, test, heldout, all };

struct EvalSettings {
    BiometricConfig biometric;
    Index episodes = 100;
    EvalSplit split = EvalSplit::heldout;
};

struct RunConfig {
    Preset preset = Preset::paper;
    ModelConfig model;
    TrainConfig train;
    EvalSettings eval;
    DataConfig data;
    std::uint64_t seed = 42;
    std::string out_dir = "out";

    static RunConfig for_preset(Preset p);

    /// `section.key` → value; throws ConfigError for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    /// Every key in canonical order, formatted so that parsing reproduces it.
    std::vector<std::pair<std::string, std::string>> entries() const;
    std::string to_text() const;

    /// Propagates the run seed and checks every field.
    void finalize();
};

/// Parsed `[section]` / `key = value` lines as `section.key` pairs, in order.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

/// Preset taken from `preset_override` or the text's `run.preset`, then every
/// entry applied on top of that preset's defaults.
RunConfig load_run_config(const std::string& text, const std::string& preset_override = "");

/// "CxI" → (classes, impressions per class).
std::pair<Index, Index> parse_synthetic_shape(const std::string& s);

enum class Variant { single_impression, no_cross_graph, query_alignment, no_prototype_node };
Variant parse_variant(const std::string& s);
std::string to_string(Variant v);
void apply_variant(RunConfig& cfg, Variant v);

EvalSplit parse_eval_split(const std::string& s);
std::string to_string(EvalSplit s);

}  // namespace proton
