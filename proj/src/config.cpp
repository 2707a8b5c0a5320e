#include "proton/config.hpp"

#include "proton/text.hpp"

#include <functional>
#include <map>
#include <sstream>

namespace proton {

namespace {

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::string fmt_bool(bool b) { return b ? "true" : "false"; }
std::string fmt_int(std::int64_t v) { return std::to_string(v); }

template <typename T, std::size_t N>
std::string fmt_array(const std::array<T, N>& a) {
    if constexpr (std::is_floating_point_v<T>) {
        return join(std::vector<T>(a.begin(), a.end()), format_double);
    } else {
        return join(std::vector<T>(a.begin(), a.end()), fmt_int);
    }
}

Index positive(const std::string& v) {
    const auto n = parse_int(v);
    if (n < 1) throw std::invalid_argument("expected a positive integer, got '" + v + "'");
    return n;
}

std::uint64_t parse_seed(const std::string& v) {
    const auto n = parse_int(v);
    if (n < 0) throw std::invalid_argument("seed must be non-negative");
    return static_cast<std::uint64_t>(n);
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"run.preset",
         [](RunConfig& c, const std::string& v) {
             if (parse_preset(v) != c.preset) {
                 throw std::invalid_argument("run.preset '" + v + "' conflicts with the selected preset '" +
                                             to_string(c.preset) + "'");
             }
         },
         [](const RunConfig& c) { return to_string(c.preset); }},
        {"run.seed", [](RunConfig& c, const std::string& v) { c.seed = parse_seed(v); },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
        {"run.out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
         [](const RunConfig& c) { return c.out_dir; }},

        {"data.path", [](RunConfig& c, const std::string& v) { c.data.path = v; },
         [](const RunConfig& c) { return c.data.path; }},
        {"data.synthetic",
         [](RunConfig& c, const std::string& v) {
             if (v.empty()) {
                 c.data.synthetic_classes = c.data.synthetic_impressions = 0;
                 return;
             }
             std::tie(c.data.synthetic_classes, c.data.synthetic_impressions) = parse_synthetic_shape(v);
         },
         [](const RunConfig& c) {
             return c.data.synthetic()
                        ? std::to_string(c.data.synthetic_classes) + "x" + std::to_string(c.data.synthetic_impressions)
                        : std::string();
         }},
        {"data.synthetic_noise", [](RunConfig& c, const std::string& v) { c.data.synthetic_noise = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.data.synthetic_noise); }},
        {"data.synthetic_shift", [](RunConfig& c, const std::string& v) { c.data.synthetic_shift = parse_int(v); },
         [](const RunConfig& c) { return fmt_int(c.data.synthetic_shift); }},
        {"data.seed", [](RunConfig& c, const std::string& v) { c.data.seed = parse_seed(v); },
         [](const RunConfig& c) { return std::to_string(c.data.seed); }},

        {"model.input",
         [](RunConfig& c, const std::string& v) {
             if (v == "image") c.model.input = SampleKind::image;
             else if (v == "embedding") c.model.input = SampleKind::embedding;
             else throw std::invalid_argument("model.input must be image or embedding");
         },
         [](const RunConfig& c) { return std::string(c.model.input == SampleKind::image ? "image" : "embedding"); }},
        {"model.input_hw", [](RunConfig& c, const std::string& v) { c.model.encoder.input_hw = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.model.encoder.input_hw); }},
        {"model.channels",
         [](RunConfig& c, const std::string& v) {
             const auto ch = parse_int_list(v);
             if (ch.size() != 4) throw std::invalid_argument("model.channels needs 4 entries");
             for (std::size_t i = 0; i < 4; ++i) c.model.encoder.channels[i] = ch[i];
         },
         [](const RunConfig& c) { return fmt_array(c.model.encoder.channels); }},
        {"model.embed_dim", [](RunConfig& c, const std::string& v) { c.model.encoder.embed_dim = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.model.encoder.embed_dim); }},
        {"model.norm_mean",
         [](RunConfig& c, const std::string& v) {
             const auto m = parse_double_list(v);
             if (m.size() != 3) throw std::invalid_argument("model.norm_mean needs 3 entries");
             for (std::size_t i = 0; i < 3; ++i) c.model.encoder.norm_mean[i] = m[i];
         },
         [](const RunConfig& c) { return fmt_array(c.model.encoder.norm_mean); }},
        {"model.norm_std",
         [](RunConfig& c, const std::string& v) {
             const auto m = parse_double_list(v);
             if (m.size() != 3) throw std::invalid_argument("model.norm_std needs 3 entries");
             for (std::size_t i = 0; i < 3; ++i) c.model.encoder.norm_std[i] = m[i];
         },
         [](const RunConfig& c) { return fmt_array(c.model.encoder.norm_std); }},
        {"model.augment_flip", [](RunConfig& c, const std::string& v) { c.model.encoder.augment_flip = parse_bool(v); },
         [](const RunConfig& c) { return fmt_bool(c.model.encoder.augment_flip); }},
        {"model.augment_noise",
         [](RunConfig& c, const std::string& v) { c.model.encoder.augment_noise = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.model.encoder.augment_noise); }},
        {"model.layer_dims",
         [](RunConfig& c, const std::string& v) {
             c.model.pgnn.layer_dims.clear();
             for (auto d : parse_int_list(v)) c.model.pgnn.layer_dims.push_back(d);
         },
         [](const RunConfig& c) { return join(c.model.pgnn.layer_dims, fmt_int); }},
        {"model.align_strength", [](RunConfig& c, const std::string& v) { c.model.pgnn.align_strength = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.model.pgnn.align_strength); }},
        {"model.projection_head", [](RunConfig& c, const std::string& v) { c.model.pgnn.projection_head = parse_bool(v); },
         [](const RunConfig& c) { return fmt_bool(c.model.pgnn.projection_head); }},
        {"model.no_prototype_node",
         [](RunConfig& c, const std::string& v) { c.model.pgnn.no_prototype_node = parse_bool(v); },
         [](const RunConfig& c) { return fmt_bool(c.model.pgnn.no_prototype_node); }},
        {"model.no_cross_graph_alignment",
         [](RunConfig& c, const std::string& v) { c.model.pgnn.no_cross_graph_alignment = parse_bool(v); },
         [](const RunConfig& c) { return fmt_bool(c.model.pgnn.no_cross_graph_alignment); }},
        {"model.query_alignment_enabled",
         [](RunConfig& c, const std::string& v) { c.model.pgnn.query_alignment_enabled = parse_bool(v); },
         [](const RunConfig& c) { return fmt_bool(c.model.pgnn.query_alignment_enabled); }},
        {"model.message_passing", [](RunConfig& c, const std::string& v) { c.model.pgnn.message_passing = parse_bool(v); },
         [](const RunConfig& c) { return fmt_bool(c.model.pgnn.message_passing); }},

        {"episode.ways", [](RunConfig& c, const std::string& v) { c.train.episode.ways = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.train.episode.ways); }},
        {"episode.graphs_per_class",
         [](RunConfig& c, const std::string& v) { c.train.episode.graphs_per_class = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.train.episode.graphs_per_class); }},
        {"episode.images_per_graph",
         [](RunConfig& c, const std::string& v) { c.train.episode.images_per_graph = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.train.episode.images_per_graph); }},
        {"episode.query_graphs_per_class",
         [](RunConfig& c, const std::string& v) { c.train.episode.query_graphs_per_class = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.train.episode.query_graphs_per_class); }},
        {"episode.sample_with_replacement",
         [](RunConfig& c, const std::string& v) { c.train.episode.sample_with_replacement = parse_bool(v); },
         [](const RunConfig& c) { return fmt_bool(c.train.episode.sample_with_replacement); }},

        {"train.episodes_per_epoch", [](RunConfig& c, const std::string& v) { c.train.episodes_per_epoch = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.train.episodes_per_epoch); }},
        {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.train.epochs); }},
        {"train.lr", [](RunConfig& c, const std::string& v) { c.train.lr = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.lr); }},
        {"train.lambda", [](RunConfig& c, const std::string& v) { c.train.lambda = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.lambda); }},
        {"train.registry_momentum",
         [](RunConfig& c, const std::string& v) { c.train.registry_momentum = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.registry_momentum); }},
        {"train.objective", [](RunConfig& c, const std::string& v) { c.train.objective = parse_objective(v); },
         [](const RunConfig& c) { return to_string(c.train.objective); }},
        {"train.eval_episodes", [](RunConfig& c, const std::string& v) { c.train.eval_episodes = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.train.eval_episodes); }},
        {"train.train_fraction", [](RunConfig& c, const std::string& v) { c.train.train_fraction = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.train_fraction); }},
        {"train.test_fraction", [](RunConfig& c, const std::string& v) { c.train.test_fraction = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.train.test_fraction); }},

        {"eval.graphs_per_class",
         [](RunConfig& c, const std::string& v) { c.eval.biometric.graphs_per_class = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.eval.biometric.graphs_per_class); }},
        {"eval.images_per_graph",
         [](RunConfig& c, const std::string& v) { c.eval.biometric.images_per_graph = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.eval.biometric.images_per_graph); }},
        {"eval.pairs_per_kind", [](RunConfig& c, const std::string& v) { c.eval.biometric.pairs_per_kind = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.eval.biometric.pairs_per_kind); }},
        {"eval.backfill_noise",
         [](RunConfig& c, const std::string& v) { c.eval.biometric.backfill_noise = parse_double(v); },
         [](const RunConfig& c) { return format_double(c.eval.biometric.backfill_noise); }},
        {"eval.episodes", [](RunConfig& c, const std::string& v) { c.eval.episodes = positive(v); },
         [](const RunConfig& c) { return fmt_int(c.eval.episodes); }},
        {"eval.split", [](RunConfig& c, const std::string& v) { c.eval.split = parse_eval_split(v); },
         [](const RunConfig& c) { return to_string(c.eval.split); }},
    };
    return table;
}

}  // namespace

RunConfig RunConfig::for_preset(Preset p) {
    RunConfig c;
    c.preset = p;
    c.model = ModelConfig::for_preset(p);
    c.train = TrainConfig::for_preset(p);
    c.eval.biometric.graphs_per_class = c.train.episode.graphs_per_class;
    c.eval.biometric.images_per_graph = c.train.episode.images_per_graph;
    if (p == Preset::tiny) c.eval.biometric.pairs_per_kind = 200;
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key != f.key) continue;
        try {
            f.set(*this, value);
        } catch (const std::exception& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
        return;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
    return out;
}

std::string RunConfig::to_text() const {
    std::string out, section;
    for (const auto& [key, value] : entries()) {
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += key.substr(dot + 1) + " = " + value + "\n";
    }
    return out;
}

void RunConfig::finalize() {
    try {
        train.seed = seed;
        train.preset = preset;
        eval.biometric.seed = seed;
        model.encoder.preset = preset;
        model.validate();
        train.validate();
        eval.biometric.validate();
        if (data.synthetic()) {
            if (!data.path.empty()) throw std::invalid_argument("data.path and data.synthetic are mutually exclusive");
            if (data.synthetic_impressions < 2) throw std::invalid_argument("synthetic classes need >= 2 impressions");
            if (!(data.synthetic_noise >= 0)) throw std::invalid_argument("data.synthetic_noise must be >= 0");
            if (data.synthetic_shift < 0) throw std::invalid_argument("data.synthetic_shift must be >= 0");
        } else if (data.path.empty()) {
            throw std::invalid_argument("no dataset: set data.path or data.synthetic");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string_view t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']' || t.size() < 3) {
                throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
            }
            section = std::string(trim(t.substr(1, t.size() - 2)));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key(trim(t.substr(0, eq)));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (section.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key + "' outside any section");
        }
        out.emplace_back(section + "." + key, std::string(trim(t.substr(eq + 1))));
    }
    return out;
}

RunConfig load_run_config(const std::string& text, const std::string& preset_override) {
    const auto pairs = parse_config_text(text);
    std::string preset = preset_override;
    if (preset.empty()) {
        for (const auto& [k, v] : pairs) {
            if (k == "run.preset") preset = v;
        }
    }
    Preset p = Preset::paper;
    if (!preset.empty()) {
        try {
            p = parse_preset(preset);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
    RunConfig cfg = RunConfig::for_preset(p);
    std::map<std::string, int> seen;
    for (const auto& [k, v] : pairs) {
        if (++seen[k] > 1) throw ConfigError("config key '" + k + "' given twice");
        if (k == "run.preset" && !preset_override.empty()) continue;
        cfg.set(k, v);
    }
    return cfg;
}

std::pair<Index, Index> parse_synthetic_shape(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ConfigError("synthetic shape must look like CxI, got '" + s + "'");
    try {
        const auto c = parse_int(s.substr(0, x));
        const auto i = parse_int(s.substr(x + 1));
        if (c < 1 || i < 1) throw std::invalid_argument("counts must be positive");
        return {c, i};
    } catch (const std::exception& e) {
        throw ConfigError("synthetic shape '" + s + "': " + e.what());
    }
}

Variant parse_variant(const std::string& s) {
    if (s == "single_impression") return Variant::single_impression;
    if (s == "no_cross_graph") return Variant::no_cross_graph;
    if (s == "query_alignment") return Variant::query_alignment;
    if (s == "no_prototype_node") return Variant::no_prototype_node;
    throw ConfigError("unknown variant '" + s +
                      "' (expected single_impression, no_cross_graph, query_alignment or no_prototype_node)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::single_impression: return "single_impression";
        case Variant::no_cross_graph: return "no_cross_graph";
        case Variant::query_alignment: return "query_alignment";
        case Variant::no_prototype_node: return "no_prototype_node";
    }
    return "";
}

void apply_variant(RunConfig& cfg, Variant v) {
    switch (v) {
        case Variant::single_impression:
            cfg.train.episode.graphs_per_class = 1;
            cfg.train.episode.images_per_graph = 1;
            cfg.eval.biometric.graphs_per_class = 1;
            cfg.eval.biometric.images_per_graph = 1;
            cfg.model.pgnn.message_passing = false;
            break;
        case Variant::no_cross_graph: cfg.model.pgnn.no_cross_graph_alignment = true; break;
        case Variant::query_alignment: cfg.model.pgnn.query_alignment_enabled = true; break;
        case Variant::no_prototype_node: cfg.model.pgnn.no_prototype_node = true; break;
    }
}

EvalSplit parse_eval_split(const std::string& s) {
    if (s == "val") return EvalSplit::val;
    if (s == "test") return EvalSplit::test;
    if (s == "heldout") return EvalSplit::heldout;
    if (s == "all") return EvalSplit::all;
    throw std::invalid_argument("eval.split must be val, test, heldout or all");
}

std::string to_string(EvalSplit s) {
    switch (s) {
        case EvalSplit::val: return "val";
        case EvalSplit::test: return "test";
        case EvalSplit::heldout: return "heldout";
        case EvalSplit::all: return "all";
    }
    return "";
}

}  // namespace proton
