#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aeon/benchmark.hpp"
#include "aeon/metrics.hpp"
#include "aeon/model.hpp"
#include "aeon/noise_estimation.hpp"
#include "aeon/objective.hpp"
#include "aeon/trainer.hpp"

namespace aeon {

struct EvalReport {
    double test_accuracy = 0.0;
    double test_ece = 0.0;
    int ece_bins = 15;
    double eta_id = 0.0;
    double eta_ood = 0.0;
    double r_id = 0.0;
    double r_ood = 0.0;
    double eta_id_abs_error = 0.0;
    double eta_ood_abs_error = 0.0;
    std::optional<double> ood_mask_auroc;  // (1 - w_ood) vs tag == ood
    std::optional<double> id_mask_auroc;   // (1 - w_id) vs tag == id_noisy, non-OOD rows only
    std::string config_digest;
    std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return nlohmann::json{{"test_accuracy", r.test_accuracy},
                          {"test_ece", r.test_ece},
                          {"ece_bins", r.ece_bins},
                          {"eta_id", r.eta_id},
                          {"eta_ood", r.eta_ood},
                          {"r_id", r.r_id},
                          {"r_ood", r.r_ood},
                          {"eta_id_abs_error", r.eta_id_abs_error},
                          {"eta_ood_abs_error", r.eta_ood_abs_error},
                          {"ood_mask_auroc", opt(r.ood_mask_auroc)},
                          {"id_mask_auroc", opt(r.id_mask_auroc)},
                          {"config_digest", r.config_digest},
                          {"seed", r.seed}};
}

/// FNV-1a over the canonical JSON dump, as 16 hex digits.
inline std::string config_digest(const nlohmann::json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct SampleMasks {
    Eigen::VectorXd w_id;
    Eigen::VectorXd w_ood;
    double tau_id = 0.0;
    double tau_ood = 0.0;
};

/// Soft masks for every record with thresholds from whole-set statistics
/// (not per-batch), so the result does not depend on batch order.
inline SampleMasks compute_masks(const AeonModel& model, const EstimatorState& est, const TaggedDataset& data,
                                 const MaskConfig& mc) {
    ad::Tape tape;
    BoundModel bm = bind(tape, model, false);
    ad::Var logits = forward_logits(bm, tape.constant(data.features));
    ad::Var energy = energy_score(logits, mc.energy_temperature);
    ad::Var sup = supervised_loss(logits, one_hot(data.noisy_label, data.num_classes));
    const double tau_ood = adaptive_threshold(est.ood.estimate(), batch_stats(energy.value()), mc.eta_clamp);
    const double tau_id = adaptive_threshold(est.id.estimate(), batch_stats(sup.value()), mc.eta_clamp);
    SampleMasks m;
    m.tau_id = tau_id;
    m.tau_ood = tau_ood;
    m.w_id.resize(static_cast<Index>(data.size()));
    m.w_ood.resize(static_cast<Index>(data.size()));
    for (Index i = 0; i < static_cast<Index>(data.size()); ++i) {
        m.w_ood(i) = soft_mask(tau_ood, energy.value()(i, 0), mc.beta_ood);
        m.w_id(i) = soft_mask(tau_id, sup.value()(i, 0), mc.beta_id);
    }
    return m;
}

inline EvalReport evaluate(const AeonModel& model, const EstimatorState& est, const TaggedDataset& train,
                           const TaggedDataset& test, const TrainConfig& cfg) {
    EvalReport r;
    r.ece_bins = cfg.ece_bins;
    std::tie(r.test_accuracy, r.test_ece) = test_metrics(model, test, cfg.ece_bins);
    r.eta_id = est.id.estimate();
    r.eta_ood = est.ood.estimate();
    r.r_id = train.config.r_id;
    r.r_ood = train.config.r_ood;
    r.eta_id_abs_error = std::abs(r.eta_id - r.r_id);
    r.eta_ood_abs_error = std::abs(r.eta_ood - r.r_ood);

    const SampleMasks m = compute_masks(model, est, train, cfg.loss.mask);
    std::vector<double> ood_score, id_score;
    std::vector<int> is_ood, is_id_noisy;
    for (std::size_t i = 0; i < train.size(); ++i) {
        ood_score.push_back(1.0 - m.w_ood(static_cast<Index>(i)));
        is_ood.push_back(train.tag[i] == Tag::ood ? 1 : 0);
        if (train.tag[i] != Tag::ood) {
            id_score.push_back(1.0 - m.w_id(static_cast<Index>(i)));
            is_id_noisy.push_back(train.tag[i] == Tag::id_noisy ? 1 : 0);
        }
    }
    r.ood_mask_auroc = auroc(ood_score, is_ood);
    r.id_mask_auroc = auroc(id_score, is_id_noisy);
    r.config_digest = config_digest(nlohmann::json(cfg));
    r.seed = cfg.seed;
    return r;
}

} // namespace aeon
