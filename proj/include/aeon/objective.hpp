#pragma once

// Multi-objective batch loss: mask-weighted supervised / pseudo-label terms,
// squared energy hinges, and in-batch supervised + instance contrastive terms.
//
// Per sample i:
//   L_id_i = w_id_i * Ls_i + (1 - w_id_i) * Lu_i + max(0, E_i - m_id)^2
//   L_i    = w_ood_i * L_id_i + (1 - w_ood_i) * max(0, m_ood - E_i)^2
//            + lambda * (Lcs_i + Lcu_i)
// and the batch loss is the mean over i.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "aeon/autodiff.hpp"
#include "aeon/errors.hpp"
#include "aeon/model.hpp"
#include "aeon/noise_estimation.hpp"
#include "aeon/rng.hpp"

namespace aeon {

struct AugmentConfig {
    double weak_std = 0.05;
    double strong_std = 0.2;
    double strong_dropout = 0.2;
    int num_weak_views = 2;

    void validate() const {
        if (!(weak_std >= 0.0 && weak_std <= strong_std)) throw ConfigError("augment: need 0 <= weak_std <= strong_std");
        if (!(strong_dropout >= 0.0 && strong_dropout < 1.0)) throw ConfigError("augment: strong_dropout must be in [0, 1)");
        if (num_weak_views < 1) throw ConfigError("augment: num_weak_views must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
    j = nlohmann::json{{"weak_std", c.weak_std},
                       {"strong_std", c.strong_std},
                       {"strong_dropout", c.strong_dropout},
                       {"num_weak_views", c.num_weak_views}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
    AugmentConfig d;
    c.weak_std = j.value("weak_std", d.weak_std);
    c.strong_std = j.value("strong_std", d.strong_std);
    c.strong_dropout = j.value("strong_dropout", d.strong_dropout);
    c.num_weak_views = j.value("num_weak_views", d.num_weak_views);
}

struct LossConfig {
    double sharpen = 2.0;                  // pseudo-label exponent
    double contrastive_temperature = 0.07;
    double contrastive_weight = 0.5;       // lambda
    double mixup_alpha = 0.2;
    bool mixup = true;
    bool margins = true;
    /// Whether the model receives gradient through the score inside each soft
    /// mask. Off by default: the score is detached there and only the
    /// noise-rate parameter learns through the mask. With it on, the model
    /// can lower its loss by moving scores across the threshold instead of
    /// fitting the data (energies race downward; supervised losses inflate
    /// to route samples into the cheaper pseudo-label branch).
    bool ood_mask_score_gradient = false;
    bool id_mask_score_gradient = false;
    /// Pins a mask to a constant instead of the learned soft mask.
    std::optional<double> force_w_id;
    std::optional<double> force_w_ood;
    MaskConfig mask;

    void validate() const {
        if (!(sharpen >= 1.0)) throw ConfigError("loss: sharpen exponent must be >= 1");
        if (!(contrastive_temperature > 0.0)) throw ConfigError("loss: contrastive temperature must be positive");
        if (!(contrastive_weight >= 0.0)) throw ConfigError("loss: contrastive weight must be >= 0");
        if (!(mixup_alpha > 0.0)) throw ConfigError("loss: mixup alpha must be positive");
        for (const auto& f : {force_w_id, force_w_ood}) {
            if (f && !(*f >= 0.0 && *f <= 1.0)) throw ConfigError("loss: forced mask must be in [0, 1]");
        }
        mask.validate();
    }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
    j = nlohmann::json{{"sharpen", c.sharpen},
                       {"contrastive_temperature", c.contrastive_temperature},
                       {"contrastive_weight", c.contrastive_weight},
                       {"mixup_alpha", c.mixup_alpha},
                       {"mixup", c.mixup},
                       {"margins", c.margins},
                       {"ood_mask_score_gradient", c.ood_mask_score_gradient},
                       {"id_mask_score_gradient", c.id_mask_score_gradient},
                       {"mask", c.mask}};
    if (c.force_w_id) j["force_w_id"] = *c.force_w_id;
    if (c.force_w_ood) j["force_w_ood"] = *c.force_w_ood;
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
    LossConfig d;
    c.sharpen = j.value("sharpen", d.sharpen);
    c.contrastive_temperature = j.value("contrastive_temperature", d.contrastive_temperature);
    c.contrastive_weight = j.value("contrastive_weight", d.contrastive_weight);
    c.mixup_alpha = j.value("mixup_alpha", d.mixup_alpha);
    c.mixup = j.value("mixup", d.mixup);
    c.margins = j.value("margins", d.margins);
    c.ood_mask_score_gradient = j.value("ood_mask_score_gradient", d.ood_mask_score_gradient);
    c.id_mask_score_gradient = j.value("id_mask_score_gradient", d.id_mask_score_gradient);
    c.mask = j.value("mask", d.mask);
    c.force_w_id = j.contains("force_w_id") ? std::optional<double>(j["force_w_id"].get<double>()) : std::nullopt;
    c.force_w_ood = j.contains("force_w_ood") ? std::optional<double>(j["force_w_ood"].get<double>()) : std::nullopt;
}

// ------------------------------------------------------------ augmentations

/// x + N(0, weak_std^2) per coordinate.
inline Eigen::VectorXd weak_view(const Eigen::VectorXd& x, const AugmentConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd y = x;
    for (Index k = 0; k < y.size(); ++k) y(k) += cfg.weak_std * n(rng);
    return y;
}

/// Coordinate dropout at rate strong_dropout applied to x + N(0, strong_std^2).
inline Eigen::VectorXd strong_view(const Eigen::VectorXd& x, const AugmentConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd y = x;
    for (Index k = 0; k < y.size(); ++k) {
        const double noisy = y(k) + cfg.strong_std * n(rng);
        y(k) = u(rng) < cfg.strong_dropout ? 0.0 : noisy;
    }
    return y;
}

/// Row-wise weak views of a batch; row i uses its own derived stream.
inline Matrix weak_views(const Matrix& x, const AugmentConfig& cfg, std::uint64_t seed) {
    Matrix y(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        y.row(i) = weak_view(x.row(i).transpose(), cfg, derive_seed(seed, {static_cast<std::uint64_t>(i)})).transpose();
    }
    return y;
}

inline Matrix strong_views(const Matrix& x, const AugmentConfig& cfg, std::uint64_t seed) {
    Matrix y(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        y.row(i) = strong_view(x.row(i).transpose(), cfg, derive_seed(seed, {static_cast<std::uint64_t>(i)})).transpose();
    }
    return y;
}

// ------------------------------------------------------------ pseudo-labels

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        p.row(i) = (logits.row(i).array() - m).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

/// Raises each row to `exponent` and renormalizes it to sum to one.
inline Matrix sharpen_rows(const Matrix& probs, double exponent) {
    if (!(exponent >= 1.0)) throw ConfigError("sharpen: exponent must be >= 1");
    Matrix q = probs.array().pow(exponent).matrix();
    for (Index i = 0; i < q.rows(); ++i) q.row(i) /= q.row(i).sum();
    return q;
}

/// Sharpened mean of softmax predictions over the given views. No gradient.
inline Matrix pseudo_label(const AeonModel& model, std::span<const Matrix> views, double exponent) {
    if (views.empty()) throw StructuralError("pseudo_label: no views");
    Matrix mean = Matrix::Zero(views[0].rows(), model.config.num_classes);
    for (const Matrix& v : views) mean += softmax_rows(forward_logits(model, v));
    mean /= static_cast<double>(views.size());
    return sharpen_rows(mean, exponent);
}

// ------------------------------------------------------------ loss terms

inline Matrix one_hot(std::span<const int> labels, int num_classes) {
    Matrix y = Matrix::Zero(static_cast<Index>(labels.size()), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) throw DataError("one_hot: label out of range");
        y(static_cast<Index>(i), labels[i]) = 1.0;
    }
    return y;
}

/// Per-row cross-entropy -sum_k target_k log softmax(logits)_k (N x 1).
/// Serves as the supervised loss (one-hot or mixed targets) and the
/// pseudo-label loss (soft targets).
inline ad::Var cross_entropy_rows(const ad::Var& logits, const Matrix& targets) {
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
        throw StructuralError("cross_entropy: target shape mismatch");
    }
    ad::Var t = logits.tape()->constant(targets);
    return ad::neg(ad::sum_rows(ad::mul(t, ad::log_softmax_rows(logits))));
}

inline ad::Var supervised_loss(const ad::Var& logits, const Matrix& targets) { return cross_entropy_rows(logits, targets); }
inline ad::Var unsupervised_loss(const ad::Var& logits, const Matrix& pseudo) { return cross_entropy_rows(logits, pseudo); }

struct MarginLosses {
    ad::Var id_margin;   // max(0, E - m_id)^2
    ad::Var ood_margin;  // max(0, m_ood - E)^2
};

inline MarginLosses energy_margin_losses(const ad::Var& energy, double margin_id, double margin_ood) {
    return {ad::square(ad::max0(ad::add_scalar(energy, -margin_id))),
            ad::square(ad::max0(ad::add_scalar(ad::neg(energy), margin_ood)))};
}

/// S_ij = <weak_i, strong_j> / T_c for unit-norm embeddings (rows).
inline ad::Var similarity_matrix(const ad::Var& weak_embed, const ad::Var& strong_embed, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("similarity: temperature must be positive");
    return ad::scale(ad::matmul(weak_embed, ad::transpose(strong_embed)), 1.0 / temperature);
}

struct ContrastiveLosses {
    ad::Var supervised;    // N x 1
    ad::Var instance;      // N x 1
};

/// sup_i = -log(sum_{j: y_j = y_i} e^{S_ij} / sum_k e^{S_ik})
/// uns_i = -log(e^{S_ii} / sum_k e^{S_ik})
inline ContrastiveLosses contrastive_losses(const ad::Var& sim, std::span<const int> labels) {
    const Index n = sim.rows();
    if (sim.cols() != n || static_cast<std::size_t>(n) != labels.size()) {
        throw StructuralError("contrastive: similarity must be N x N with N labels");
    }
    Matrix positives(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) positives(i, j) = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    ad::Var all = ad::logsumexp_rows(sim);
    ad::Var pos = ad::logsumexp_rows(sim, positives);
    return {ad::sub(all, pos), ad::sub(all, ad::diag(sim))};
}

// ------------------------------------------------------------ mixup

struct MixedPair {
    Eigen::VectorXd x;
    Eigen::VectorXd y;
};

inline MixedPair mixup_pair(const Eigen::VectorXd& xa, const Eigen::VectorXd& ya, const Eigen::VectorXd& xb,
                            const Eigen::VectorXd& yb, double lambda) {
    return {lambda * xa + (1.0 - lambda) * xb, lambda * ya + (1.0 - lambda) * yb};
}

/// Draws lambda ~ Beta(alpha, alpha) from `seed`, then mixes.
inline MixedPair mixup_pair(const Eigen::VectorXd& xa, const Eigen::VectorXd& ya, const Eigen::VectorXd& xb,
                            const Eigen::VectorXd& yb, double alpha, std::uint64_t seed) {
    if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be positive");
    Rng rng(seed);
    return mixup_pair(xa, ya, xb, yb, sample_beta(alpha, alpha, rng));
}

// ------------------------------------------------------------ batch loss

/// Everything a batch loss consumes that is not a function of the current
/// parameters' gradient: augmented views, mixup partners, pseudo-labels.
struct BatchInputs {
    Matrix x;              // N x d
    std::vector<int> labels;
    Matrix targets;        // one-hot N x C
    Matrix weak;           // weak view used for the contrastive anchor
    Matrix strong;         // strong view
    Matrix x_mix;          // mixup inputs (equal to x when mixup is off)
    Matrix y_mix;          // mixup targets
    Matrix pseudo;         // sharpened pseudo-labels N x C
};

inline BatchInputs prepare_batch(const AeonModel& model, const Matrix& x, std::span<const int> labels,
                                 const AugmentConfig& aug, const LossConfig& loss, std::uint64_t seed) {
    if (x.rows() == 0) throw StructuralError("batch: empty batch");
    if (static_cast<std::size_t>(x.rows()) != labels.size()) throw StructuralError("batch: label count mismatch");
    BatchInputs in;
    in.x = x;
    in.labels.assign(labels.begin(), labels.end());
    in.targets = one_hot(labels, model.config.num_classes);

    std::vector<Matrix> views;
    for (int v = 0; v < aug.num_weak_views; ++v) {
        views.push_back(weak_views(x, aug, derive_seed(seed, {1, static_cast<std::uint64_t>(v)})));
    }
    in.weak = views.front();
    in.strong = strong_views(x, aug, derive_seed(seed, {2}));
    in.pseudo = pseudo_label(model, views, loss.sharpen);

    if (loss.mixup) {
        Rng rng(derive_seed(seed, {3}));
        std::vector<Index> perm(static_cast<std::size_t>(x.rows()));
        for (Index i = 0; i < x.rows(); ++i) perm[static_cast<std::size_t>(i)] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        in.x_mix.resize(x.rows(), x.cols());
        in.y_mix.resize(x.rows(), in.targets.cols());
        for (Index i = 0; i < x.rows(); ++i) {
            const Index j = perm[static_cast<std::size_t>(i)];
            const double lam = sample_beta(loss.mixup_alpha, loss.mixup_alpha, rng);
            in.x_mix.row(i) = lam * x.row(i) + (1.0 - lam) * x.row(j);
            in.y_mix.row(i) = lam * in.targets.row(i) + (1.0 - lam) * in.targets.row(j);
        }
    } else {
        in.x_mix = x;
        in.y_mix = in.targets;
    }
    return in;
}

/// Batch-level scalars and per-sample masks. Component fields hold each
/// term's mask-weighted contribution to the mean, so
/// total = supervised + unsupervised + id_margin + ood_margin
///         + lambda * (contrastive_sup + contrastive_uns).
struct BatchLossBreakdown {
    double total = 0.0;
    double supervised = 0.0;
    double unsupervised = 0.0;
    double ood_margin = 0.0;
    double id_margin = 0.0;
    double contrastive_sup = 0.0;
    double contrastive_uns = 0.0;
    double mean_w_id = 0.0;
    double mean_w_ood = 0.0;
    double eta_id = 0.0;
    double eta_ood = 0.0;
    double tau_id = 0.0;
    double tau_ood = 0.0;
    double contrastive_weight = 0.0;
    Eigen::VectorXd w_id;
    Eigen::VectorXd w_ood;

    double recombined() const {
        return supervised + unsupervised + id_margin + ood_margin + contrastive_weight * (contrastive_sup + contrastive_uns);
    }
};

/// Statistics to use instead of the batch's own (e.g. frozen for a
/// finite-difference check, or whole-set statistics at evaluation).
struct FrozenStats {
    BatchStats energy;
    BatchStats loss;
};

struct BatchLoss {
    ad::Var total;
    BatchLossBreakdown breakdown;
};

inline BatchLoss batch_loss(const BoundModel& bm, const ad::Var& gamma_id, const ad::Var& gamma_ood,
                            double temperature_id, double temperature_ood, const BatchInputs& in,
                            const LossConfig& cfg, const std::optional<FrozenStats>& frozen = std::nullopt) {
    ad::Tape& tape = *gamma_id.tape();
    const MaskConfig& mc = cfg.mask;
    const double n = static_cast<double>(in.x.rows());

    ad::Var logits = forward_logits(bm, tape.constant(in.x));
    ad::Var energy = energy_score(logits, mc.energy_temperature);
    ad::Var sup_raw = supervised_loss(logits, in.targets);

    const BatchStats e_stats = frozen ? frozen->energy : batch_stats(energy.value());
    const BatchStats l_stats = frozen ? frozen->loss : batch_stats(sup_raw.value());

    ad::Var eta_ood = estimate_rate(gamma_ood, temperature_ood);
    ad::Var eta_id = estimate_rate(gamma_id, temperature_id);
    ad::Var tau_ood = adaptive_threshold(eta_ood, e_stats, mc.eta_clamp);
    ad::Var tau_id = adaptive_threshold(eta_id, l_stats, mc.eta_clamp);

    auto forced = [&](double v) { return tape.constant(Matrix::Constant(in.x.rows(), 1, v)); };
    const ad::Var energy_in_mask = cfg.ood_mask_score_gradient ? energy : ad::detach(energy);
    const ad::Var sup_in_mask = cfg.id_mask_score_gradient ? sup_raw : ad::detach(sup_raw);
    ad::Var w_ood = cfg.force_w_ood ? forced(*cfg.force_w_ood) : soft_mask(tau_ood, energy_in_mask, mc.beta_ood);
    ad::Var w_id = cfg.force_w_id ? forced(*cfg.force_w_id) : soft_mask(tau_id, sup_in_mask, mc.beta_id);

    ad::Var sup = cfg.mixup ? supervised_loss(forward_logits(bm, tape.constant(in.x_mix)), in.y_mix) : sup_raw;
    ad::Var uns = unsupervised_loss(logits, in.pseudo);

    MarginLosses margins = cfg.margins ? energy_margin_losses(energy, mc.margin_id, mc.margin_ood)
                                       : MarginLosses{forced(0.0), forced(0.0)};

    ad::Var sim = similarity_matrix(forward_projection(bm, tape.constant(in.weak)),
                                    forward_projection(bm, tape.constant(in.strong)), cfg.contrastive_temperature);
    ContrastiveLosses cont = contrastive_losses(sim, in.labels);

    ad::Var sup_term = ad::mul(ad::mul(w_ood, w_id), sup);
    ad::Var uns_term = ad::mul(ad::mul(w_ood, 1.0 - w_id), uns);
    ad::Var idm_term = ad::mul(w_ood, margins.id_margin);
    ad::Var oodm_term = ad::mul(1.0 - w_ood, margins.ood_margin);
    ad::Var cont_term = ad::scale(ad::add(cont.supervised, cont.instance), cfg.contrastive_weight);

    ad::Var per_sample = ad::add(ad::add(ad::add(sup_term, uns_term), ad::add(idm_term, oodm_term)), cont_term);
    ad::Var total = ad::mean(per_sample);

    BatchLossBreakdown b;
    b.total = total.scalar();
    b.supervised = sup_term.value().sum() / n;
    b.unsupervised = uns_term.value().sum() / n;
    b.id_margin = idm_term.value().sum() / n;
    b.ood_margin = oodm_term.value().sum() / n;
    b.contrastive_sup = cont.supervised.value().sum() / n;
    b.contrastive_uns = cont.instance.value().sum() / n;
    b.contrastive_weight = cfg.contrastive_weight;
    b.w_id = w_id.value().col(0);
    b.w_ood = w_ood.value().col(0);
    b.mean_w_id = b.w_id.mean();
    b.mean_w_ood = b.w_ood.mean();
    b.eta_id = eta_id.scalar();
    b.eta_ood = eta_ood.scalar();
    b.tau_id = tau_id.scalar();
    b.tau_ood = tau_ood.scalar();
    return {total, std::move(b)};
}

/// Plain mean cross-entropy on noisy labels (warm-up and CE baseline).
inline ad::Var cross_entropy_loss(const BoundModel& bm, const Matrix& x, const Matrix& targets) {
    ad::Tape& tape = *bm.weights.front().tape();
    return ad::mean(supervised_loss(forward_logits(bm, tape.constant(x)), targets));
}

} // namespace aeon
