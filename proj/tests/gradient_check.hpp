#pragma once

// Finite-difference check of the full batch loss with respect to every model
// parameter and both noise-rate parameters. Shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "aeon/objective.hpp"
#include "aeon/trainer.hpp"
#include "loss_oracle.hpp"

namespace gradcheck {

struct Instance {
    aeon::AeonModel model;
    aeon::BatchInputs inputs;
    aeon::LossConfig loss;
    aeon::FrozenStats stats;
    double gamma_id = 0.0;
    double gamma_ood = 0.0;
    double temperature_id = 10.0;
    double temperature_ood = 10.0;
};

/// Random instance with C = 4, d = 8, N = 16. Pseudo-labels, views and mixup
/// partners live in BatchInputs and the batch statistics are frozen, so the
/// loss is a pure function of (theta, gamma_id, gamma_ood).
inline Instance make_instance(std::uint64_t seed) {
    Instance inst;
    aeon::ModelConfig mc;
    mc.input_dim = 8;
    mc.num_classes = 4;
    mc.hidden = {12, 12};
    mc.feature_dim = 10;
    mc.projection_hidden = 16;
    mc.projection_dim = 128;
    inst.model = aeon::init_params(mc, seed);

    aeon::Rng rng(aeon::derive_seed(seed, {1}));
    std::normal_distribution<double> normal(0.0, 2.0);
    std::uniform_int_distribution<int> cls(0, 3);
    aeon::Matrix x(16, 8);
    for (aeon::Index i = 0; i < x.rows(); ++i)
        for (aeon::Index k = 0; k < x.cols(); ++k) x(i, k) = normal(rng);
    std::vector<int> y(16);
    for (int& v : y) v = cls(rng);

    // The finite-difference check differentiates the loss as written, so the
    // mask scores carry gradient here.
    inst.loss.ood_mask_score_gradient = true;
    inst.loss.id_mask_score_gradient = true;
    inst.inputs = aeon::prepare_batch(inst.model, x, y, aeon::AugmentConfig{}, inst.loss, aeon::derive_seed(seed, {2}));

    const aeon::Matrix logits = aeon::forward_logits(inst.model, x);
    aeon::ad::Tape t;
    const aeon::ad::Var lv = t.constant(logits);
    inst.stats.energy = aeon::batch_stats(aeon::energy_score(lv, inst.loss.mask.energy_temperature).value());
    inst.stats.loss = aeon::batch_stats(aeon::supervised_loss(lv, inst.inputs.targets).value());

    std::uniform_real_distribution<double> g(-3.0, 3.0);
    inst.gamma_id = g(rng);
    inst.gamma_ood = g(rng);
    return inst;
}

struct Gradient {
    double value = 0.0;
    Eigen::VectorXd theta;
    double gamma_id = 0.0;
    double gamma_ood = 0.0;
};

inline Gradient evaluate(const Instance& inst, const aeon::AeonModel& model, double gamma_id, double gamma_ood,
                         bool with_gradient) {
    aeon::ad::Tape t;
    aeon::BoundModel bm = aeon::bind(t, model, with_gradient);
    aeon::ad::Var gi = with_gradient ? t.leaf(aeon::Matrix::Constant(1, 1, gamma_id)) : t.scalar(gamma_id);
    aeon::ad::Var go = with_gradient ? t.leaf(aeon::Matrix::Constant(1, 1, gamma_ood)) : t.scalar(gamma_ood);
    aeon::BatchLoss bl = aeon::batch_loss(bm, gi, go, inst.temperature_id, inst.temperature_ood, inst.inputs, inst.loss,
                                          inst.stats);
    Gradient out;
    out.value = bl.total.scalar();
    if (with_gradient) {
        t.backward(bl.total);
        out.theta = aeon::collect_grads(bm);
        out.gamma_id = gi.grad()(0, 0);
        out.gamma_ood = go.grad()(0, 0);
    }
    return out;
}

/// |a - b| / max(|a|, |b|), with 0 when both vanish.
inline double relative_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

struct Report {
    std::size_t checked = 0;
    double max_relative_error = 0.0;
    double gamma_id_relative_error = 0.0;
    double gamma_ood_relative_error = 0.0;
    double value_abs_error = 0.0;  // tape loss vs straight-line loss
    Eigen::VectorXd analytic_theta;
    Eigen::VectorXd numeric_theta;
};

inline oracle::Setup oracle_setup(const Instance& inst) {
    return {&inst.model, &inst.inputs, &inst.loss, inst.stats, inst.temperature_id, inst.temperature_ood};
}

/// Tape gradients against central differences with step h of the
/// straight-line loss evaluated in extended precision. In double precision
/// the loss (about 5) carries roundoff near 1e-10 after differencing, which
/// would swamp components below about 1e-6.
inline Report check(const Instance& inst, double h = 1e-5) {
    using LD = long double;
    const Gradient g = evaluate(inst, inst.model, inst.gamma_id, inst.gamma_ood, true);
    const oracle::Setup setup = oracle_setup(inst);
    oracle::Params<LD> params = oracle::params_from<LD>(inst.model);
    const LD gid = inst.gamma_id, god = inst.gamma_ood, step = h;

    Report r;
    r.value_abs_error = std::abs(g.value - static_cast<double>(oracle::batch_loss(setup, params, gid, god)));
    r.analytic_theta = g.theta;
    r.numeric_theta.resize(g.theta.size());
    for (Eigen::Index k = 0; k < g.theta.size(); ++k) {
        LD& slot = oracle::flat_param(params, static_cast<std::size_t>(k));
        const LD orig = slot;
        slot = orig + step;
        const LD up = oracle::batch_loss(setup, params, gid, god);
        slot = orig - step;
        const LD down = oracle::batch_loss(setup, params, gid, god);
        slot = orig;
        r.numeric_theta(k) = static_cast<double>((up - down) / (2 * step));
        r.max_relative_error = std::max(r.max_relative_error, relative_error(g.theta(k), r.numeric_theta(k)));
    }
    const double fd_id = static_cast<double>(
        (oracle::batch_loss(setup, params, gid + step, god) - oracle::batch_loss(setup, params, gid - step, god)) / (2 * step));
    const double fd_ood = static_cast<double>(
        (oracle::batch_loss(setup, params, gid, god + step) - oracle::batch_loss(setup, params, gid, god - step)) / (2 * step));
    r.gamma_id_relative_error = relative_error(g.gamma_id, fd_id);
    r.gamma_ood_relative_error = relative_error(g.gamma_ood, fd_ood);
    r.max_relative_error = std::max({r.max_relative_error, r.gamma_id_relative_error, r.gamma_ood_relative_error});
    r.checked = static_cast<std::size_t>(g.theta.size()) + 2;
    return r;
}

} // namespace gradcheck
