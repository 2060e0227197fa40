#pragma once

// The `aeon` command line: synth, train, eval, sweep.
//
// Exit status: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure. AEON_SEED, when set, replaces the seed of the loaded config.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "aeon/benchmark.hpp"
#include "aeon/errors.hpp"
#include "aeon/evaluation.hpp"
#include "aeon/sweep.hpp"
#include "aeon/trainer.hpp"

namespace aeon::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;

/// AEON_SEED as an unsigned integer; nullopt when unset or empty.
inline std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("AEON_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    const std::string s(v);
    std::uint64_t seed = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("AEON_SEED must be an unsigned integer, got '" + s + "'");
    return seed;
}

inline nlohmann::json load_config(const std::filesystem::path& path) {
    if (path.extension() == ".toml") throw ConfigError("TOML configs are not supported; use JSON: " + path.string());
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

/// Converts a JSON config, reporting type mismatches as configuration errors.
template <class T>
T config_as(const nlohmann::json& j, const std::string& what) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

inline int cmd_synth(const std::filesystem::path& config, const std::filesystem::path& out, std::ostream& log) {
    SynthConfig cfg = config_as<SynthConfig>(load_config(config), "synth config");
    if (auto s = env_seed()) cfg.seed = *s;
    const SynthesizedBenchmark b = synthesize(cfg);
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    save_benchmark(b, out);
    log << "wrote " << out.string() << ": " << b.train.size() << " train records (clean " << b.train.count(Tag::clean)
        << ", id_noisy " << b.train.count(Tag::id_noisy) << ", ood " << b.train.count(Tag::ood) << "), "
        << b.test.size() << " test records\n";
    return kExitOk;
}

inline int cmd_train(const std::filesystem::path& data, const std::filesystem::path& config,
                     const std::filesystem::path& log_path, const std::filesystem::path& ckpt, std::ostream& log) {
    TrainConfig cfg = config_as<TrainConfig>(load_config(config), "train config");
    if (auto s = env_seed()) cfg.seed = *s;
    cfg.validate();
    const SynthesizedBenchmark b = load_benchmark(data);
    if (b.train.dim() != cfg.model.input_dim || b.train.num_classes != cfg.model.num_classes) {
        // The model shape always follows the data.
        cfg.model.input_dim = b.train.dim();
        cfg.model.num_classes = b.train.num_classes;
    }
    if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
    std::ofstream metrics(log_path, std::ios::binary);
    if (!metrics) throw DataError("cannot write " + log_path.string());
    FitOptions opt;
    opt.test = &b.test;
    opt.metrics = &metrics;
    opt.checkpoint_dir = ckpt;
    const FitResult r = fit(cfg, b.train, opt);
    const EpochRecord& last = r.log.back();
    log << "trained " << cfg.total_epochs << " epochs: test_acc " << last.test_acc.value_or(0.0) << ", eta_id "
        << r.estimators.id.estimate() << ", eta_ood " << r.estimators.ood.estimate() << "\n";
    return kExitOk;
}

inline int cmd_eval(const std::filesystem::path& data, const std::filesystem::path& ckpt,
                    const std::filesystem::path& report, std::ostream& log) {
    const Checkpoint c = read_checkpoint(ckpt);
    const SynthesizedBenchmark b = load_benchmark(data);
    const EvalReport r = evaluate(c.model, c.estimators, b.train, b.test, c.config);
    write_json(report, to_json(r));
    log << "test_accuracy " << r.test_accuracy << ", test_ece " << r.test_ece << ", eta_id " << r.eta_id
        << ", eta_ood " << r.eta_ood << "\n";
    return kExitOk;
}

/// Sweep spec: {"base": TrainConfig, "axes": {...}, "seeds": [...]} plus the
/// dataset, either "data": "<csv>" (relative to the spec file) or "synth":
/// SynthConfig to generate it in place.
inline int cmd_sweep(const std::filesystem::path& spec_path, const std::filesystem::path& out, int workers,
                     std::ostream& log) {
    const nlohmann::json j = load_config(spec_path);
    SweepSpec spec = sweep_spec_from_json(j);
    SynthesizedBenchmark data;
    if (j.contains("data")) {
        std::filesystem::path p = config_as<std::string>(j["data"], "sweep data path");
        if (p.is_relative()) p = spec_path.parent_path() / p;
        data = load_benchmark(p);
    } else if (j.contains("synth")) {
        SynthConfig sc = config_as<SynthConfig>(j["synth"], "sweep synth config");
        if (auto s = env_seed()) sc.seed = *s;
        data = synthesize(sc);
    } else {
        throw ConfigError("sweep spec needs \"data\" or \"synth\"");
    }
    spec.base.model.input_dim = data.train.dim();
    spec.base.model.num_classes = data.train.num_classes;
    const SweepResult r = run_sweep(spec, data, out, workers);
    std::size_t failed = 0;
    for (const SweepRun& run : r.runs) failed += run.report ? 0 : 1;
    log << "sweep: " << r.cells.size() << " cells, " << r.runs.size() << " runs, " << failed << " failed; wrote "
        << (out / "aggregate.csv").string() << "\n";
    return kExitOk;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"AEON noisy-label lab: synthesize benchmarks, train, evaluate, sweep"};
    app.require_subcommand(1);

    std::string synth_config, synth_out;
    auto* synth = app.add_subcommand("synth", "generate a tagged benchmark dataset");
    synth->add_option("--config", synth_config, "synthesis config (JSON)")->required();
    synth->add_option("--out", synth_out, "dataset CSV path")->required();

    std::string train_data, train_config, train_log, train_ckpt;
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    train->add_option("--data", train_data, "dataset CSV")->required();
    train->add_option("--config", train_config, "training config (JSON)")->required();
    train->add_option("--log", train_log, "metrics log (JSON lines)")->required();
    train->add_option("--ckpt", train_ckpt, "checkpoint directory")->required();

    std::string eval_data, eval_ckpt, eval_report;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--data", eval_data, "dataset CSV")->required();
    eval->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
    eval->add_option("--report", eval_report, "report JSON path")->required();

    std::string sweep_spec, sweep_out;
    int workers = 1;
    auto* sweep = app.add_subcommand("sweep", "run a grid sweep");
    sweep->add_option("--spec", sweep_spec, "sweep spec (JSON)")->required();
    sweep->add_option("--out", sweep_out, "output directory")->required();
    sweep->add_option("--workers", workers, "concurrent runs")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "aeon: " << e.what() << "\n" << app.help();
        return kExitConfig;
    }

    try {
        if (*synth) return cmd_synth(synth_config, synth_out, out);
        if (*train) return cmd_train(train_data, train_config, train_log, train_ckpt, out);
        if (*eval) return cmd_eval(eval_data, eval_ckpt, eval_report, out);
        return cmd_sweep(sweep_spec, sweep_out, workers, out);
    } catch (const Error& e) {
        err << "aeon: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::filesystem::filesystem_error& e) {
        err << "aeon: " << e.what() << "\n";
        return 3;
    }
}

} // namespace aeon::cli
