// Command-line driver: train, eval, ablate, sweep-lambda, gen-synthetic.
//
// Exit codes: 0 success, 1 usage or internal error, 2 invalid config or
// width mismatch, 3 dataset or file error, 4 non-finite training loss.

#include "proton/checkpoint.hpp"
#include "proton/config.hpp"
#include "proton/experiment.hpp"
#include "proton/text.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#ifndef PROTON_GIT_REVISION
#define PROTON_GIT_REVISION "unknown"
#endif

namespace fs = std::filesystem;
using namespace proton;
using json = nlohmann::ordered_json;

namespace {

enum ExitCode { ok = 0, usage = 1, config_error = 2, data_error = 3, diverged = 4 };

struct CommonOptions {
    std::string config_path;
    std::string preset;
    std::string seed;
    std::string out_dir;
    std::string synthetic;
    std::string data;
    std::vector<std::string> overrides;
};

struct Run {
    std::string command;
    RunConfig cfg;
    std::vector<std::string> outputs;
    json phases = json::array();
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    fs::path out(const std::string& name) const { return fs::path(cfg.out_dir) / name; }

    void write(const std::string& name, const std::string& contents) {
        write_file_atomic(out(name), contents);
        outputs.push_back(name);
    }
    void write_checkpoint(const std::string& name, const Checkpoint& ckpt) {
        save_checkpoint(out(name), ckpt);
        outputs.push_back(name);
    }
    void phase(const std::string& name) { phases.push_back({{"name", name}, {"status", "ok"}}); }
};

void add_common(CLI::App* app, CommonOptions& o) {
    app->add_option("--config", o.config_path, "Config file (key = value lines under [section] headers)");
    app->add_option("--preset", o.preset, "Default set: paper or tiny")->check(CLI::IsMember({"paper", "tiny"}));
    app->add_option("--seed", o.seed, "Run seed");
    app->add_option("--out-dir", o.out_dir, "Output directory");
    app->add_option("--synthetic", o.synthetic, "Generate CxI synthetic data instead of reading a dataset");
    app->add_option("--data", o.data, "Image folder or embedding CSV");
    app->add_option("--set", o.overrides, "Extra section.key=value override (repeatable)");
}

RunConfig resolve_config(const CommonOptions& o) {
    std::string text;
    if (!o.config_path.empty()) {
        if (!fs::exists(o.config_path)) throw ConfigError("config file does not exist: " + o.config_path);
        text = read_file(o.config_path);
    }
    RunConfig cfg = load_run_config(text, o.preset);
    if (!o.seed.empty()) cfg.set("run.seed", o.seed);
    if (!o.out_dir.empty()) cfg.set("run.out_dir", o.out_dir);
    if (!o.synthetic.empty()) {
        cfg.set("data.synthetic", o.synthetic);
        cfg.set("data.path", "");
    }
    if (!o.data.empty()) {
        cfg.set("data.path", o.data);
        cfg.set("data.synthetic", "");
    }
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
        cfg.set(std::string(trim(kv.substr(0, eq))), std::string(trim(kv.substr(eq + 1))));
    }
    return cfg;
}

json config_json(const RunConfig& cfg) {
    json j = json::object();
    for (const auto& [k, v] : cfg.entries()) j[k] = v;
    return j;
}

std::string curve_csv(const EvalCurve& c, const char* header, bool integral_x) {
    std::string s = std::string(header) + "\n";
    for (const auto& [x, y] : c.points) {
        s += (integral_x ? std::to_string(static_cast<long long>(x)) : format_double(x)) + "," + format_double(y) + "\n";
    }
    return s;
}

json summary_json(const RecognitionSummary& r) {
    return {{"rank1", r.rank1()}, {"rank5", r.rank5()}, {"eer", r.eer()}, {"auc", r.auc()},
            {"episodic_acc", r.episodic_acc}};
}

void log_epoch(const EpochRecord& e) {
    std::fprintf(stderr, "epoch %ld  loss %.6f  episodic %.2f%%  overall %.2f%%\n", static_cast<long>(e.epoch), e.loss,
                 e.episodic_acc, e.overall_acc);
}

DatasetSplits load_splits(Run& run) {
    const Dataset data = load_dataset(run.cfg);
    check_compatible(run.cfg.model, data);
    run.phase("load_data");
    return make_splits(data, run.cfg);
}

void cmd_train(Run& run) {
    run.cfg.finalize();
    const DatasetSplits splits = load_splits(run);
    ProtoNModel model(run.cfg.model, run.cfg.seed);
    const TrainResult r = train(model, splits.train, splits.test, run.cfg.train, run.cfg.eval.biometric, log_epoch);
    run.phase("train");
    run.write_checkpoint("checkpoint.ckpt", r.best_checkpoint);
    run.write_checkpoint("checkpoint_final.ckpt", r.final_checkpoint);
    run.write("report.csv", r.report.to_csv());
    run.write("report.json", r.report.to_json());
}

std::string dims_string(const ModelConfig& m) {
    std::string s = "layer_dims " + join(m.pgnn.layer_dims, [](Index v) { return std::to_string(v); });
    if (m.input == SampleKind::image) {
        s += ", embed_dim " + std::to_string(m.encoder.embed_dim) + ", input_hw " + std::to_string(m.encoder.input_hw);
    }
    return s;
}

void cmd_eval(Run& run, const std::string& checkpoint, const std::string& mode) {
    run.cfg.finalize();
    if (!fs::exists(checkpoint)) throw DatasetError("checkpoint does not exist: " + checkpoint);
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    const ModelConfig stored = ModelConfig::from_header(ckpt);
    const ModelConfig& wanted = run.cfg.model;
    const bool same = stored.input == wanted.input && stored.pgnn.layer_dims == wanted.pgnn.layer_dims &&
                      (stored.input == SampleKind::embedding ||
                       (stored.encoder.channels == wanted.encoder.channels &&
                        stored.encoder.embed_dim == wanted.encoder.embed_dim &&
                        stored.encoder.input_hw == wanted.encoder.input_hw));
    if (!same) {
        throw DimensionError("checkpoint dims (" + dims_string(stored) + ") do not match config dims (" +
                             dims_string(wanted) + ")");
    }
    ProtoNModel model(stored, run.cfg.seed);
    model.load(ckpt);
    run.phase("load_checkpoint");

    const DatasetSplits splits = load_splits(run);
    const Dataset classes = select_split(splits, run.cfg.eval.split);
    const EmbeddingTable table = model.embed_dataset(classes);
    if (mode == "episodic") {
        const double acc = evaluate_episodic(model, classes, table, run.cfg.train.episode, run.cfg.eval.episodes,
                                             derive_seed(run.cfg.seed, {4}));
        run.write("episodic.json",
                  json{{"episodic_acc", acc}, {"episodes", run.cfg.eval.episodes}, {"classes", classes.classes.size()}}
                          .dump(2) +
                      "\n");
    } else if (mode == "identify") {
        const auto id = run_identification(model, classes, table, run.cfg.eval.biometric);
        run.write("cmc.csv", curve_csv(id.cmc, "rank,accuracy", true));
        run.write("identify.json", json{{"rank1", id.cmc.summary.at("rank1")},
                                        {"rank5", id.cmc.summary.at("rank5")},
                                        {"probes", id.ranks.size()},
                                        {"gallery", id.gallery.rows()}}
                                           .dump(2) +
                                       "\n");
    } else {
        const ScoreSet scores = build_verification_pairs(model, classes, table, run.cfg.eval.biometric);
        const EvalCurve roc = roc_eer_auc(scores);
        run.write("roc.csv", curve_csv(roc, "far,tpr", false));
        run.write("verify.json", json{{"eer", roc.summary.at("eer")},
                                      {"auc", roc.summary.at("auc")},
                                      {"genuine_pairs", scores.genuine.size()},
                                      {"imposter_pairs", scores.imposter.size()}}
                                         .dump(2) +
                                     "\n");
    }
    run.phase("evaluate_" + mode);
}

void cmd_ablate(Run& run, const std::string& variant_name) {
    const Variant variant = parse_variant(variant_name);
    run.cfg.finalize();
    RunConfig alt = run.cfg;
    apply_variant(alt, variant);
    alt.finalize();
    const DatasetSplits splits = load_splits(run);

    std::string csv = "model,rank1,rank5,eer,auc,episodic_acc\n";
    json rows = json::array();
    for (const auto& [name, cfg] : {std::pair<std::string, const RunConfig*>{"baseline", &run.cfg},
                                    std::pair<std::string, const RunConfig*>{variant_name, &alt}}) {
        std::fprintf(stderr, "training %s\n", name.c_str());
        const ExperimentResult r = run_experiment(*cfg, splits, log_epoch);
        run.phase("train_" + name);
        const auto& s = r.recognition;
        csv += name + "," + format_double(s.rank1()) + "," + format_double(s.rank5()) + "," + format_double(s.eer()) +
               "," + format_double(s.auc()) + "," + format_double(s.episodic_acc) + "\n";
        json row = summary_json(s);
        row["model"] = name;
        rows.push_back(row);
    }
    run.write("ablation.csv", csv);
    run.write("ablation.json", rows.dump(2) + "\n");
}

void cmd_sweep(Run& run, const std::string& lambdas_text) {
    run.cfg.finalize();
    std::vector<double> lambdas;
    try {
        lambdas = parse_double_list(lambdas_text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("--lambdas: ") + e.what());
    }
    if (lambdas.empty()) throw ConfigError("--lambdas is empty");
    std::set<double> seen;
    for (double l : lambdas) {
        if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambda " + format_double(l) + " outside [0, 1]");
        if (!seen.insert(l).second) throw ConfigError("lambda " + format_double(l) + " listed twice");
    }
    const DatasetSplits splits = load_splits(run);
    const Dataset classes = select_split(splits, run.cfg.eval.split);
    std::string csv = "lambda,overall_acc\n";
    for (double l : lambdas) {
        RunConfig cfg = run.cfg;
        cfg.train.lambda = l;
        std::fprintf(stderr, "training lambda=%s\n", format_double(l).c_str());
        ProtoNModel model(cfg.model, cfg.seed);
        train(model, splits.train, splits.test, cfg.train, cfg.eval.biometric, log_epoch);
        const double acc = evaluate_overall(model, classes, cfg.eval.biometric);
        csv += format_double(l) + "," + format_double(acc) + "\n";
        run.phase("lambda_" + format_double(l));
    }
    run.write("lambda_sweep.csv", csv);
}

void cmd_gen(Run& run) {
    if (!run.cfg.data.synthetic()) throw ConfigError("gen-synthetic needs --synthetic CxI");
    run.cfg.finalize();
    const Dataset data = load_dataset(run.cfg);
    if (data.kind == SampleKind::embedding) {
        run.write("embeddings.csv", format_embeddings(data));
    } else {
        // Built beside the target and renamed so a failure leaves no partial folder.
        const fs::path dst = run.out("images");
        const fs::path tmp = run.out("images.tmp");
        fs::remove_all(tmp);
        save_image_folder(tmp, data);
        fs::remove_all(dst);
        fs::rename(tmp, dst);
        run.outputs.push_back("images");
    }
    run.phase("generate");
}

void write_manifest(Run& run, const std::string& status, const std::string& error, int code) {
    json m;
    m["command"] = run.command;
    m["revision"] = PROTON_GIT_REVISION;
    m["seed"] = run.cfg.seed;
    m["config"] = config_json(run.cfg);
    m["outputs"] = run.outputs;
    m["phases"] = run.phases;
    m["status"] = status;
    if (!error.empty()) m["error"] = error;
    m["exit_code"] = code;
    m["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - run.start).count();
    write_file_atomic(run.out("manifest.json"), m.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph-prototypical few-shot training and biometric evaluation"};
    app.require_subcommand(1);

    CommonOptions common;
    Index epochs = 0;
    std::string checkpoint, mode = "episodic", variant, lambdas = "0,0.2,0.4,0.6,0.8,1.0";

    auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints and reports");
    add_common(train_cmd, common);
    train_cmd->add_option("--epochs", epochs, "Override train.epochs")->check(CLI::PositiveNumber);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--mode", mode, "episodic, identify or verify")
        ->check(CLI::IsMember({"episodic", "identify", "verify"}));

    auto* ablate_cmd = app.add_subcommand("ablate", "Train baseline and one ablation variant side by side");
    add_common(ablate_cmd, common);
    ablate_cmd->add_option("--variant", variant,
                           "single_impression, no_cross_graph, query_alignment or no_prototype_node")
        ->required();

    auto* sweep_cmd = app.add_subcommand("sweep-lambda", "Overall accuracy as a function of the loss weight");
    add_common(sweep_cmd, common);
    sweep_cmd->add_option("--lambdas", lambdas, "Comma-separated loss weights in [0, 1]");

    auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic dataset");
    add_common(gen_cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : usage;
    }

    Run run;
    run.command = app.get_subcommands().front()->get_name();
    int code = ok;
    std::string error;
    bool have_out_dir = false;
    try {
        run.cfg = resolve_config(common);
        if (epochs > 0) run.cfg.train.epochs = epochs;
        fs::create_directories(run.cfg.out_dir);
        have_out_dir = true;
        run.write("config.txt", run.cfg.to_text());
        if (run.command == "train") cmd_train(run);
        else if (run.command == "eval") cmd_eval(run, checkpoint, mode);
        else if (run.command == "ablate") cmd_ablate(run, variant);
        else if (run.command == "sweep-lambda") cmd_sweep(run, lambdas);
        else cmd_gen(run);
    } catch (const NonFiniteLoss& e) {
        code = diverged;
        error = e.what();
    } catch (const ConfigError& e) {
        code = config_error;
        error = e.what();
    } catch (const DimensionError& e) {
        code = config_error;
        error = e.what();
    } catch (const DatasetError& e) {
        code = data_error;
        error = e.what();
    } catch (const CheckpointError& e) {
        code = data_error;
        error = e.what();
    } catch (const std::invalid_argument& e) {
        code = config_error;
        error = e.what();
    } catch (const std::exception& e) {
        code = usage;
        error = e.what();
    }
    if (code != ok) std::fprintf(stderr, "error: %s\n", error.c_str());
    try {
        if (have_out_dir) write_manifest(run, code == ok ? "ok" : "failed", error, code);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: could not write manifest: %s\n", e.what());
        if (code == ok) code = data_error;
    }
    return code;
}
