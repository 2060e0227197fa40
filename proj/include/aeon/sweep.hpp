#pragma once

// Grid sweeps over training-config fields: Cartesian product of axes times
// seeds, each run trained and evaluated independently, one report per run and
// an aggregate CSV with per-cell means.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "aeon/benchmark.hpp"
#include "aeon/errors.hpp"
#include "aeon/evaluation.hpp"
#include "aeon/trainer.hpp"

namespace aeon {

/// An axis name is a dotted path into the serialized TrainConfig
/// ("loss.mask.energy_temperature"); several paths joined by '+' move together
/// ("temperature_id+temperature_ood").
struct SweepSpec {
    TrainConfig base;
    std::map<std::string, std::vector<nlohmann::json>> axes;
    std::vector<std::uint64_t> seeds;

    std::size_t cell_count() const {
        std::size_t n = 1;
        for (const auto& [name, values] : axes) n *= values.size();
        return n;
    }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

inline nlohmann::json::json_pointer config_pointer(const std::string& dotted) {
    std::string p;
    for (const std::string& part : split(dotted, '.')) p += "/" + part;
    return nlohmann::json::json_pointer(p);
}

} // namespace detail

/// Throws ConfigError when an axis is empty or names a field the config lacks.
inline void validate(const SweepSpec& spec) {
    if (spec.seeds.empty()) throw ConfigError("sweep: at least one seed is required");
    // Optional fields are omitted from the serialized config when unset; fill
    // them in so that they can still be swept.
    TrainConfig probe = spec.base;
    probe.gamma_init_id = probe.gamma_init_id.value_or(0.0);
    probe.gamma_init_ood = probe.gamma_init_ood.value_or(0.0);
    probe.loss.force_w_id = probe.loss.force_w_id.value_or(1.0);
    probe.loss.force_w_ood = probe.loss.force_w_ood.value_or(1.0);
    const nlohmann::json base = probe;
    for (const auto& [name, values] : spec.axes) {
        if (values.empty()) throw ConfigError("sweep: axis '" + name + "' has no values");
        for (const std::string& path : detail::split(name, '+')) {
            if (path.empty() || !base.contains(detail::config_pointer(path))) {
                throw ConfigError("sweep: axis '" + path + "' is not a training config field");
            }
        }
    }
    spec.base.validate();
}

inline SweepSpec sweep_spec_from_json(const nlohmann::json& j) {
    try {
        SweepSpec s;
        s.base = j.value("base", nlohmann::json::object()).get<TrainConfig>();
        const nlohmann::json axes = j.value("axes", nlohmann::json::object());
        if (!axes.is_object()) throw ConfigError("sweep: axes must be an object");
        for (const auto& [name, values] : axes.items()) {
            if (!values.is_array()) throw ConfigError("sweep: axis '" + name + "' must be a list");
            s.axes[name] = values.get<std::vector<nlohmann::json>>();
        }
        s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        validate(s);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("sweep spec: ") + e.what());
    }
}

/// Axis values of one cell, in axis order.
struct SweepCell {
    std::size_t index = 0;
    std::vector<std::pair<std::string, nlohmann::json>> values;
};

/// Cells in row-major order over the (sorted) axis names; the last axis varies fastest.
inline std::vector<SweepCell> sweep_cells(const SweepSpec& spec) {
    std::vector<SweepCell> cells(1);
    for (const auto& [name, values] : spec.axes) {
        std::vector<SweepCell> next;
        for (const SweepCell& c : cells) {
            for (const nlohmann::json& v : values) {
                SweepCell d = c;
                d.values.emplace_back(name, v);
                next.push_back(std::move(d));
            }
        }
        cells = std::move(next);
    }
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i].index = i;
    return cells;
}

inline TrainConfig cell_config(const SweepSpec& spec, const SweepCell& cell, std::uint64_t seed) {
    nlohmann::json j = spec.base;
    for (const auto& [name, value] : cell.values)
        for (const std::string& path : detail::split(name, '+')) j[detail::config_pointer(path)] = value;
    j["seed"] = seed;
    TrainConfig cfg = j.get<TrainConfig>();
    cfg.validate();
    return cfg;
}

struct SweepRun {
    std::size_t cell = 0;
    std::uint64_t seed = 0;
    std::optional<EvalReport> report;
    std::string error;  // set when the run failed
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::vector<SweepRun> runs;  // cell-major, then seed order
};

inline std::string cell_name(const SweepCell& c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "cell_%04zu", c.index);
    return buf;
}

inline std::string csv_value(const nlohmann::json& v) {
    if (v.is_number_float()) return format_double(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

/// One row per cell: axis values, run/failure counts, then means over the
/// successful seeds. AUROC means skip runs where the metric is undefined.
inline void write_aggregate_csv(const SweepSpec& spec, const SweepResult& res, std::ostream& os) {
    os << "cell";
    for (const auto& [name, values] : spec.axes) os << ',' << name;
    os << ",runs,failed,test_accuracy,test_ece,eta_id,eta_ood,eta_id_abs_error,eta_ood_abs_error,"
          "ood_mask_auroc,id_mask_auroc\n";
    for (const SweepCell& cell : res.cells) {
        std::vector<const EvalReport*> ok;
        std::size_t runs = 0, failed = 0;
        for (const SweepRun& r : res.runs) {
            if (r.cell != cell.index) continue;
            ++runs;
            if (r.report) {
                ok.push_back(&*r.report);
            } else {
                ++failed;
            }
        }
        auto mean = [&](auto get) -> std::string {
            double sum = 0.0;
            std::size_t n = 0;
            for (const EvalReport* r : ok) {
                const std::optional<double> v = get(*r);
                if (v) {
                    sum += *v;
                    ++n;
                }
            }
            return n ? format_double(sum / static_cast<double>(n)) : std::string();
        };
        os << cell_name(cell);
        for (const auto& [name, value] : cell.values) os << ',' << csv_value(value);
        os << ',' << runs << ',' << failed;
        os << ',' << mean([](const EvalReport& r) { return std::optional(r.test_accuracy); });
        os << ',' << mean([](const EvalReport& r) { return std::optional(r.test_ece); });
        os << ',' << mean([](const EvalReport& r) { return std::optional(r.eta_id); });
        os << ',' << mean([](const EvalReport& r) { return std::optional(r.eta_ood); });
        os << ',' << mean([](const EvalReport& r) { return std::optional(r.eta_id_abs_error); });
        os << ',' << mean([](const EvalReport& r) { return std::optional(r.eta_ood_abs_error); });
        os << ',' << mean([](const EvalReport& r) { return r.ood_mask_auroc; });
        os << ',' << mean([](const EvalReport& r) { return r.id_mask_auroc; });
        os << '\n';
    }
}

/// Runs every (cell, seed) pair on up to `workers` threads. Each run writes
/// `<out>/<cell>/seed_<s>/report.json` (or `error.json`); `<out>/aggregate.csv`
/// is written once after all runs finish. A failing run never stops the sweep.
inline SweepResult run_sweep(const SweepSpec& spec, const SynthesizedBenchmark& data,
                             const std::filesystem::path& out, int workers = 1) {
    validate(spec);
    SweepResult res;
    res.cells = sweep_cells(spec);
    for (const SweepCell& c : res.cells)
        for (std::uint64_t s : spec.seeds) res.runs.push_back({c.index, s, std::nullopt, {}});

    std::filesystem::create_directories(out);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < res.runs.size(); i = next++) {
            SweepRun& run = res.runs[i];
            const SweepCell& cell = res.cells[run.cell];
            const std::filesystem::path dir = out / cell_name(cell) / ("seed_" + std::to_string(run.seed));
            std::filesystem::create_directories(dir);
            nlohmann::json record;
            try {
                const TrainConfig cfg = cell_config(spec, cell, run.seed);
                FitResult fr = fit(cfg, data.train);
                run.report = evaluate(fr.model, fr.estimators, data.train, data.test, cfg);
                record = to_json(*run.report);
            } catch (const Error& e) {
                run.error = e.what();
                record = {{"error", run.error}, {"exit_code", e.exit_code()}};
            } catch (const std::exception& e) {
                run.error = e.what();
                record = {{"error", run.error}, {"exit_code", 1}};
            }
            for (const auto& [name, value] : cell.values) record["axes"][name] = value;
            std::ofstream os(dir / (run.report ? "report.json" : "error.json"));
            os << record.dump(2) << '\n';
        }
    };
    const int n = std::max(1, workers);
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < n; ++k) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    std::ofstream csv(out / "aggregate.csv", std::ios::binary);
    if (!csv) throw DataError("sweep: cannot write " + (out / "aggregate.csv").string());
    write_aggregate_csv(spec, res, csv);
    return res;
}

} // namespace aeon
