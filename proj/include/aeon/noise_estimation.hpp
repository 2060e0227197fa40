#pragma once

// Learnable noise-rate estimators, energy scores, Gaussian-quantile
// thresholds and sigmoid soft masks.
//
// The same machinery serves both noise streams: the OOD stream scores samples
// by energy, the ID stream by per-sample supervised loss. A threshold sits at
// the (1 - eta) quantile of a Gaussian fitted to the batch scores, so roughly
// a fraction eta of the batch lands above it.

#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "aeon/autodiff.hpp"
#include "aeon/errors.hpp"
#include "aeon/special.hpp"

namespace aeon {

/// Lower bound on batch variance before taking the square root.
inline constexpr double kVarianceFloor = 1e-8;

/// eta = sigmoid(gamma / T).
struct NoiseRateEstimator {
    double gamma = 0.0;
    double temperature = 10.0;

    double estimate() const { return special::sigmoid(gamma / temperature); }
};

/// Tape form of NoiseRateEstimator::estimate; gradient flows to `gamma`.
inline ad::Var estimate_rate(const ad::Var& gamma, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("estimate_rate: temperature must be positive");
    return ad::sigmoid(ad::scale(gamma, 1.0 / temperature));
}

/// Population mean and variance of a batch of scores. Always treated as
/// constants on the tape.
struct BatchStats {
    double mean = 0.0;
    double variance = 0.0;
    bool detached = true;

    double stddev() const { return std::sqrt(std::max(variance, kVarianceFloor)); }
};

inline BatchStats batch_stats(std::span<const double> scores) {
    if (scores.empty()) throw StructuralError("batch_stats: empty batch");
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores.size());
    return BatchStats{mean, var, true};
}

inline BatchStats batch_stats(const Matrix& scores) {
    return batch_stats(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())));
}

struct MaskConfig {
    double beta_id = 0.1;
    double beta_ood = 0.1;
    double margin_id = 0.2;
    double margin_ood = 0.8;
    double energy_temperature = 1.0;
    double eta_clamp = 1e-3;

    void validate() const {
        if (!(beta_id > 0.0 && beta_ood > 0.0)) throw ConfigError("mask: beta must be positive");
        if (!(energy_temperature > 0.0)) throw ConfigError("mask: energy temperature must be positive");
        if (!(eta_clamp > 0.0 && eta_clamp < 0.5)) throw ConfigError("mask: eta clamp must be in (0, 0.5)");
    }
};

inline void to_json(nlohmann::json& j, const MaskConfig& c) {
    j = nlohmann::json{{"beta_id", c.beta_id},       {"beta_ood", c.beta_ood},
                       {"margin_id", c.margin_id},   {"margin_ood", c.margin_ood},
                       {"energy_temperature", c.energy_temperature}, {"eta_clamp", c.eta_clamp}};
}

inline void from_json(const nlohmann::json& j, MaskConfig& c) {
    MaskConfig d;
    c.beta_id = j.value("beta_id", d.beta_id);
    c.beta_ood = j.value("beta_ood", d.beta_ood);
    c.margin_id = j.value("margin_id", d.margin_id);
    c.margin_ood = j.value("margin_ood", d.margin_ood);
    c.energy_temperature = j.value("energy_temperature", d.energy_temperature);
    c.eta_clamp = j.value("eta_clamp", d.eta_clamp);
}

/// E = -T_E * logsumexp(logits / T_E), one score per row (N x C -> N x 1).
inline ad::Var energy_score(const ad::Var& logits, double energy_temperature) {
    if (!(energy_temperature > 0.0)) throw ConfigError("energy_score: temperature must be positive");
    if (logits.cols() < 1) throw StructuralError("energy_score: no classes");
    return ad::scale(ad::logsumexp_rows(ad::scale(logits, 1.0 / energy_temperature)), -energy_temperature);
}

inline double energy_score(std::span<const double> logits, double energy_temperature) {
    ad::Tape tape;
    Matrix row = Eigen::Map<const Matrix>(logits.data(), 1, static_cast<Index>(logits.size()));
    return energy_score(tape.constant(row), energy_temperature).scalar();
}

/// mu + sigma * sqrt(2) * erfinv(2p - 1). The derivative with respect to p is
/// sigma / phi(z), carried by the erfinv node.
inline ad::Var gaussian_quantile(const ad::Var& p, const BatchStats& stats) {
    const double pv = p.scalar();
    if (!(pv > 0.0 && pv < 1.0)) {
        throw DomainError("gaussian_quantile: probability " + std::to_string(pv) + " outside (0, 1)");
    }
    const double sigma = stats.stddev();
    ad::Var z = ad::erfinv(ad::add_scalar(ad::scale(p, 2.0), -1.0));
    return ad::add_scalar(ad::scale(z, sigma * std::numbers::sqrt2), stats.mean);
}

inline double gaussian_quantile(double p, const BatchStats& stats) {
    ad::Tape tape;
    return gaussian_quantile(tape.scalar(p), stats).scalar();
}

/// tau = quantile(1 - clamp(eta, eps, 1 - eps)).
inline ad::Var adaptive_threshold(const ad::Var& eta, const BatchStats& stats, double eta_clamp = 1e-3) {
    ad::Var clamped = ad::clamp(eta, eta_clamp, 1.0 - eta_clamp);
    return gaussian_quantile(1.0 - clamped, stats);
}

inline double adaptive_threshold(double eta, const BatchStats& stats, double eta_clamp = 1e-3) {
    ad::Tape tape;
    return adaptive_threshold(tape.scalar(eta), stats, eta_clamp).scalar();
}

/// w = sigmoid((tau - score) / beta) per score. `tau` is 1x1.
inline ad::Var soft_mask(const ad::Var& tau, const ad::Var& scores, double beta) {
    if (!(beta > 0.0)) throw ConfigError("soft_mask: beta must be positive");
    return ad::sigmoid(ad::scale(ad::sub(tau, scores), 1.0 / beta));
}

inline double soft_mask(double tau, double score, double beta) {
    if (!(beta > 0.0)) throw ConfigError("soft_mask: beta must be positive");
    return special::sigmoid((tau - score) / beta);
}

} // namespace aeon
