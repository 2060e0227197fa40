#pragma once

// Training loop: plain cross-entropy warm-up, then the masked multi-objective
// loss with SGD+momentum on the model parameters and both noise-rate
// parameters. The main phase uses cosine learning-rate decay.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aeon/autodiff.hpp"
#include "aeon/benchmark.hpp"
#include "aeon/errors.hpp"
#include "aeon/metrics.hpp"
#include "aeon/model.hpp"
#include "aeon/noise_estimation.hpp"
#include "aeon/objective.hpp"
#include "aeon/rng.hpp"

namespace aeon {

enum class TrainMode { aeon, cross_entropy };

struct TrainConfig {
    ModelConfig model;
    LossConfig loss;
    AugmentConfig augment;
    TrainMode mode = TrainMode::aeon;
    int batch_size = 256;
    int warmup_epochs = 10;
    int total_epochs = 60;
    double lr = 0.1;
    double gamma_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-5;
    bool cosine = true;
    /// Rescale the model gradient to this global norm when larger; 0 disables.
    double grad_clip = 0.0;
    double temperature_id = 10.0;
    double temperature_ood = 10.0;
    /// Initial gamma values; unset draws both from U[-1, 1] with the run seed.
    std::optional<double> gamma_init_id;
    std::optional<double> gamma_init_ood;
    int checkpoint_interval = 0;  // epochs; 0 = final checkpoint only
    int ece_bins = 15;
    std::uint64_t seed = 0;

    int main_epochs() const { return total_epochs - warmup_epochs; }

    void validate() const {
        if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
        if (warmup_epochs < 0 || total_epochs < warmup_epochs) throw ConfigError("train: need 0 <= warmup_epochs <= total_epochs");
        if (!(lr > 0.0 && gamma_lr > 0.0)) throw ConfigError("train: learning rates must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be >= 0");
        if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
        if (!(temperature_id > 0.0 && temperature_ood > 0.0)) throw ConfigError("train: estimator temperatures must be positive");
        if (ece_bins < 1) throw ConfigError("train: ece_bins must be >= 1");
        loss.validate();
        augment.validate();
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"model", c.model},
                       {"loss", c.loss},
                       {"augment", c.augment},
                       {"mode", c.mode == TrainMode::aeon ? "aeon" : "ce"},
                       {"batch_size", c.batch_size},
                       {"warmup_epochs", c.warmup_epochs},
                       {"total_epochs", c.total_epochs},
                       {"lr", c.lr},
                       {"gamma_lr", c.gamma_lr},
                       {"momentum", c.momentum},
                       {"weight_decay", c.weight_decay},
                       {"cosine", c.cosine},
                       {"grad_clip", c.grad_clip},
                       {"temperature_id", c.temperature_id},
                       {"temperature_ood", c.temperature_ood},
                       {"checkpoint_interval", c.checkpoint_interval},
                       {"ece_bins", c.ece_bins},
                       {"seed", c.seed}};
    if (c.gamma_init_id) j["gamma_init_id"] = *c.gamma_init_id;
    if (c.gamma_init_ood) j["gamma_init_ood"] = *c.gamma_init_ood;
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.model = j.value("model", d.model);
    c.loss = j.value("loss", d.loss);
    c.augment = j.value("augment", d.augment);
    const std::string mode = j.value("mode", std::string("aeon"));
    if (mode == "aeon") {
        c.mode = TrainMode::aeon;
    } else if (mode == "ce") {
        c.mode = TrainMode::cross_entropy;
    } else {
        throw ConfigError("train: unknown mode '" + mode + "'");
    }
    c.batch_size = j.value("batch_size", d.batch_size);
    c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
    c.total_epochs = j.value("total_epochs", d.total_epochs);
    c.lr = j.value("lr", d.lr);
    c.gamma_lr = j.value("gamma_lr", d.gamma_lr);
    c.momentum = j.value("momentum", d.momentum);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.cosine = j.value("cosine", d.cosine);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.temperature_id = j.value("temperature_id", d.temperature_id);
    c.temperature_ood = j.value("temperature_ood", d.temperature_ood);
    c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
    c.ece_bins = j.value("ece_bins", d.ece_bins);
    c.seed = j.value("seed", d.seed);
    c.gamma_init_id = j.contains("gamma_init_id") ? std::optional<double>(j["gamma_init_id"].get<double>()) : std::nullopt;
    c.gamma_init_ood = j.contains("gamma_init_ood") ? std::optional<double>(j["gamma_init_ood"].get<double>()) : std::nullopt;
}

// ------------------------------------------------------------ optimizer

struct OptimizerState {
    Eigen::VectorXd velocity;
    long steps = 0;
};

/// Rescales g to norm `max_norm` when it is larger; max_norm <= 0 is a no-op.
inline Eigen::VectorXd clip_norm(Eigen::VectorXd g, double max_norm) {
    if (max_norm > 0.0) {
        const double n = g.norm();
        if (n > max_norm) g *= max_norm / n;
    }
    return g;
}

/// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
inline void sgd_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimizerState& state, double lr,
                     double momentum, double weight_decay) {
    if (params.size() != grads.size()) throw StructuralError("sgd_step: parameter/gradient length mismatch");
    if (!grads.allFinite()) throw NumericError("sgd_step: non-finite gradient");
    if (state.velocity.size() == 0) state.velocity = Eigen::VectorXd::Zero(params.size());
    if (state.velocity.size() != params.size()) throw StructuralError("sgd_step: velocity length mismatch");
    state.velocity = momentum * state.velocity + grads + weight_decay * params;
    params -= lr * state.velocity;
    if (!params.allFinite()) throw NumericError("sgd_step: parameters diverged to non-finite values");
    ++state.steps;
}

/// lr_max * 0.5 * (1 + cos(pi * epoch / total)).
inline double cosine_lr(int epoch, int total_main_epochs, double lr_max) {
    if (total_main_epochs <= 0) return lr_max;
    return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / total_main_epochs));
}

// ------------------------------------------------------------ records

struct EstimatorState {
    NoiseRateEstimator id;
    NoiseRateEstimator ood;
};

inline nlohmann::json estimators_to_json(const EstimatorState& e) {
    return nlohmann::json{{"gamma_id", e.id.gamma},
                          {"gamma_ood", e.ood.gamma},
                          {"T_id", e.id.temperature},
                          {"T_ood", e.ood.temperature}};
}

inline EstimatorState estimators_from_json(const nlohmann::json& j) {
    try {
        return EstimatorState{{j.at("gamma_id").get<double>(), j.at("T_id").get<double>()},
                              {j.at("gamma_ood").get<double>(), j.at("T_ood").get<double>()}};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("estimator checkpoint: ") + e.what());
    }
}

struct EpochRecord {
    int epoch = 0;
    std::string phase;  // "warmup" | "main"
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_sup = 0.0;
    double loss_unsup = 0.0;
    double loss_ood_margin = 0.0;
    double loss_id_margin = 0.0;
    double loss_cont = 0.0;
    double eta_id = 0.0;
    double eta_ood = 0.0;
    double tau_id = 0.0;
    double tau_ood = 0.0;
    double mean_w_id = 1.0;
    double mean_w_ood = 1.0;
    std::optional<double> test_acc;
    std::optional<double> test_ece;
    /// Mask value each training record received this epoch (main phase only).
    std::vector<double> w_id_by_record;
    std::vector<double> w_ood_by_record;
};

inline nlohmann::json to_json(const EpochRecord& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return nlohmann::json{{"epoch", r.epoch},
                          {"phase", r.phase},
                          {"lr", r.lr},
                          {"loss_total", r.loss_total},
                          {"loss_sup", r.loss_sup},
                          {"loss_unsup", r.loss_unsup},
                          {"loss_ood_margin", r.loss_ood_margin},
                          {"loss_id_margin", r.loss_id_margin},
                          {"loss_cont", r.loss_cont},
                          {"eta_id", r.eta_id},
                          {"eta_ood", r.eta_ood},
                          {"tau_id", r.tau_id},
                          {"tau_ood", r.tau_ood},
                          {"mean_w_id", r.mean_w_id},
                          {"mean_w_ood", r.mean_w_ood},
                          {"test_acc", opt(r.test_acc)},
                          {"test_ece", opt(r.test_ece)}};
}

// ------------------------------------------------------------ training state

struct TrainState {
    AeonModel model;
    EstimatorState estimators;
    OptimizerState theta_opt;
    OptimizerState gamma_opt;
};

inline TrainState init_train_state(const TrainConfig& cfg, int input_dim, int num_classes) {
    ModelConfig mc = cfg.model;
    mc.input_dim = input_dim;
    mc.num_classes = num_classes;
    TrainState s;
    s.model = init_params(mc, derive_seed(cfg.seed, {0x30DE1}));
    Rng rng(derive_seed(cfg.seed, {0x6A77A}));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double gi = u(rng), go = u(rng);
    s.estimators.id = {cfg.gamma_init_id.value_or(gi), cfg.temperature_id};
    s.estimators.ood = {cfg.gamma_init_ood.value_or(go), cfg.temperature_ood};
    return s;
}

/// Batch composition for an epoch: a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {0x5F1, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

inline Eigen::VectorXd collect_grads(const BoundModel& bm) {
    Eigen::VectorXd g(static_cast<Index>(bm.model->parameter_count()));
    Index k = 0;
    for (std::size_t l = 0; l < bm.weights.size(); ++l) {
        for (const ad::Var* v : {&bm.weights[l], &bm.biases[l]}) {
            Matrix gv = v->grad();
            g.segment(k, gv.size()) = Eigen::Map<const Eigen::VectorXd>(gv.data(), gv.size());
            k += gv.size();
        }
    }
    return g;
}

inline void gather_rows(const TaggedDataset& data, std::span<const std::size_t> idx, Matrix& x, std::vector<int>& y) {
    x.resize(static_cast<Index>(idx.size()), data.features.cols());
    y.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        x.row(static_cast<Index>(r)) = data.features.row(static_cast<Index>(idx[r]));
        y[r] = data.noisy_label[idx[r]];
    }
}

/// One step of plain mean cross-entropy on the model parameters.
inline double cross_entropy_step(TrainState& s, const Matrix& x, std::span<const int> labels, double lr,
                                 const TrainConfig& cfg) {
    ad::Tape tape;
    BoundModel bm = bind(tape, s.model, true);
    ad::Var loss = cross_entropy_loss(bm, x, one_hot(labels, s.model.config.num_classes));
    if (!std::isfinite(loss.scalar())) throw NumericError("cross-entropy step: non-finite loss");
    tape.backward(loss);
    Eigen::VectorXd theta = s.model.flatten();
    sgd_step(theta, collect_grads(bm), s.theta_opt, lr, cfg.momentum, cfg.weight_decay);
    s.model.unflatten(theta);
    return loss.scalar();
}

/// Evaluates predictions on a labelled split: (accuracy, ECE).
inline std::pair<double, double> test_metrics(const AeonModel& model, const TaggedDataset& test, int bins) {
    Matrix probs = softmax_rows(forward_logits(model, test.features));
    std::vector<int> pred = argmax_rows(probs);
    std::vector<double> conf(pred.size());
    std::vector<int> correct(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        conf[i] = probs(static_cast<Index>(i), pred[i]);
        correct[i] = pred[i] == test.true_label[i] ? 1 : 0;
    }
    return {accuracy(pred, test.true_label), ece(conf, correct, bins)};
}

/// Warm-up epoch: plain cross-entropy on noisy labels, estimators frozen.
inline EpochRecord warmup_epoch(TrainState& s, const TaggedDataset& data, const TrainConfig& cfg, int epoch,
                                double lr) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = "warmup";
    rec.lr = lr;
    const std::vector<std::size_t> order = epoch_order(data.size(), cfg.seed, epoch);
    Matrix x;
    std::vector<int> y;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        gather_rows(data, std::span(order).subspan(start, end - start), x, y);
        loss_sum += cross_entropy_step(s, x, y, lr, cfg);
        ++batches;
    }
    rec.loss_total = rec.loss_sup = loss_sum / static_cast<double>(batches);
    rec.eta_id = s.estimators.id.estimate();
    rec.eta_ood = s.estimators.ood.estimate();
    return rec;
}

/// Main-phase epoch: per batch compute rates, scores, thresholds, masks and
/// the combined loss, then update the model and both gamma parameters.
inline EpochRecord train_epoch(TrainState& s, const TaggedDataset& data, const TrainConfig& cfg, int epoch,
                               double lr) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = "main";
    rec.lr = lr;
    rec.w_id_by_record.assign(data.size(), 0.0);
    rec.w_ood_by_record.assign(data.size(), 0.0);
    rec.mean_w_id = rec.mean_w_ood = 0.0;

    const std::vector<std::size_t> order = epoch_order(data.size(), cfg.seed, epoch);
    Matrix x;
    std::vector<int> y;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const auto idx = std::span(order).subspan(start, end - start);
        gather_rows(data, idx, x, y);

        const std::uint64_t bseed = derive_seed(cfg.seed, {0xBA7C, static_cast<std::uint64_t>(epoch), batches});
        BatchInputs in = prepare_batch(s.model, x, y, cfg.augment, cfg.loss, bseed);

        ad::Tape tape;
        BoundModel bm = bind(tape, s.model, true);
        ad::Var g_id = tape.leaf(Matrix::Constant(1, 1, s.estimators.id.gamma));
        ad::Var g_ood = tape.leaf(Matrix::Constant(1, 1, s.estimators.ood.gamma));
        BatchLoss bl = batch_loss(bm, g_id, g_ood, s.estimators.id.temperature, s.estimators.ood.temperature, in, cfg.loss);
        if (!std::isfinite(bl.breakdown.total)) {
            throw NumericError("train_epoch: non-finite loss at epoch " + std::to_string(epoch));
        }
        tape.backward(bl.total);

        Eigen::VectorXd theta = s.model.flatten();
        sgd_step(theta, clip_norm(collect_grads(bm), cfg.grad_clip), s.theta_opt, lr, cfg.momentum, cfg.weight_decay);
        Eigen::VectorXd gamma(2);
        gamma << s.estimators.id.gamma, s.estimators.ood.gamma;
        Eigen::VectorXd ggrad(2);
        ggrad << g_id.grad()(0, 0), g_ood.grad()(0, 0);
        // Noise-rate parameters take no weight decay.
        sgd_step(gamma, ggrad, s.gamma_opt, cfg.gamma_lr, cfg.momentum, 0.0);
        s.model.unflatten(theta);
        s.estimators.id.gamma = gamma(0);
        s.estimators.ood.gamma = gamma(1);

        const BatchLossBreakdown& b = bl.breakdown;
        rec.loss_total += b.total;
        rec.loss_sup += b.supervised;
        rec.loss_unsup += b.unsupervised;
        rec.loss_ood_margin += b.ood_margin;
        rec.loss_id_margin += b.id_margin;
        rec.loss_cont += b.contrastive_sup + b.contrastive_uns;
        rec.tau_id += b.tau_id;
        rec.tau_ood += b.tau_ood;
        rec.mean_w_id += b.mean_w_id;
        rec.mean_w_ood += b.mean_w_ood;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            rec.w_id_by_record[idx[r]] = b.w_id(static_cast<Index>(r));
            rec.w_ood_by_record[idx[r]] = b.w_ood(static_cast<Index>(r));
        }
        ++batches;
    }
    const double nb = static_cast<double>(batches);
    for (double* f : {&rec.loss_total, &rec.loss_sup, &rec.loss_unsup, &rec.loss_ood_margin, &rec.loss_id_margin,
                      &rec.loss_cont, &rec.tau_id, &rec.tau_ood, &rec.mean_w_id, &rec.mean_w_ood}) {
        *f /= nb;
    }
    rec.eta_id = s.estimators.id.estimate();
    rec.eta_ood = s.estimators.ood.estimate();
    return rec;
}

/// Main-phase epoch of the cross-entropy baseline (same budget, no masks).
inline EpochRecord baseline_epoch(TrainState& s, const TaggedDataset& data, const TrainConfig& cfg, int epoch,
                                  double lr) {
    EpochRecord rec = warmup_epoch(s, data, cfg, epoch, lr);
    rec.phase = "main";
    return rec;
}

// ------------------------------------------------------------ fit

struct FitResult {
    AeonModel model;
    EstimatorState estimators;
    std::vector<EpochRecord> log;
};

struct FitOptions {
    const TaggedDataset* test = nullptr;            // per-epoch test_acc / test_ece
    std::ostream* metrics = nullptr;                // JSON lines, one per epoch
    std::optional<std::filesystem::path> checkpoint_dir;
    bool keep_masks = false;                        // keep per-record masks in the log
    std::function<void(const EpochRecord&)> on_epoch;
};

inline void write_checkpoint(const std::filesystem::path& dir, const AeonModel& model, const EstimatorState& est,
                             const TrainConfig& cfg) {
    std::filesystem::create_directories(dir);
    auto put = [&](const char* name, const nlohmann::json& j) {
        const std::filesystem::path tmp = dir / (std::string(name) + ".tmp");
        {
            std::ofstream os(tmp, std::ios::binary);
            if (!os) throw DataError("cannot write checkpoint file " + tmp.string());
            os << j.dump() << '\n';
        }
        std::filesystem::rename(tmp, dir / name);
    };
    put("model.json", model_to_json(model));
    put("estimators.json", estimators_to_json(est));
    put("train_config.json", cfg);
}

struct Checkpoint {
    AeonModel model;
    EstimatorState estimators;
    TrainConfig config;
};

inline Checkpoint read_checkpoint(const std::filesystem::path& dir) {
    auto get = [&](const char* name) {
        std::ifstream is(dir / name);
        if (!is) throw DataError("missing checkpoint file " + (dir / name).string());
        try {
            return nlohmann::json::parse(is);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("checkpoint ") + name + ": " + e.what());
        }
    };
    Checkpoint c;
    c.model = model_from_json(get("model.json"));
    c.estimators = estimators_from_json(get("estimators.json"));
    c.config = get("train_config.json").get<TrainConfig>();
    return c;
}

/// Warm-up epochs at constant lr, then main epochs with cosine decay.
inline FitResult fit(const TrainConfig& cfg, const TaggedDataset& data, const FitOptions& opt = {}) {
    cfg.validate();
    if (data.size() == 0) throw DataError("fit: empty dataset");
    TrainState s = init_train_state(cfg, data.dim(), data.num_classes);
    FitResult out;
    for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
        EpochRecord rec;
        if (epoch < cfg.warmup_epochs) {
            rec = warmup_epoch(s, data, cfg, epoch, cfg.lr);
        } else {
            const int e = epoch - cfg.warmup_epochs;
            const double lr = cfg.cosine ? cosine_lr(e, cfg.main_epochs(), cfg.lr) : cfg.lr;
            rec = cfg.mode == TrainMode::aeon ? train_epoch(s, data, cfg, epoch, lr) : baseline_epoch(s, data, cfg, epoch, lr);
        }
        if (opt.test) {
            auto [acc, e] = test_metrics(s.model, *opt.test, cfg.ece_bins);
            rec.test_acc = acc;
            rec.test_ece = e;
        }
        if (opt.metrics) *opt.metrics << to_json(rec).dump() << '\n' << std::flush;
        if (opt.checkpoint_dir && cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0) {
            write_checkpoint(*opt.checkpoint_dir, s.model, s.estimators, cfg);
        }
        if (opt.on_epoch) opt.on_epoch(rec);
        if (!opt.keep_masks) {
            rec.w_id_by_record.clear();
            rec.w_ood_by_record.clear();
        }
        out.log.push_back(std::move(rec));
    }
    if (opt.checkpoint_dir) write_checkpoint(*opt.checkpoint_dir, s.model, s.estimators, cfg);
    out.model = std::move(s.model);
    out.estimators = s.estimators;
    return out;
}

} // namespace aeon
