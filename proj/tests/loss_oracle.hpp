#pragma once

// Straight-line re-implementation of the batch loss with explicit loops, no
// tape and no library loss helpers. Templated on the scalar type so it can run
// in extended precision, where central differences at h = 1e-5 resolve even
// very small gradient components.

#include <algorithm>
#include <cmath>
#include <vector>

#include "aeon/objective.hpp"

namespace oracle {

template <class T>
using Mat = std::vector<std::vector<T>>;

template <class T>
struct Params {
    // weights[l][r][c], biases[l][c], same layer order as AeonModel::layers.
    std::vector<Mat<T>> weights;
    std::vector<std::vector<T>> biases;
};

template <class T>
Params<T> params_from(const aeon::AeonModel& m) {
    Params<T> p;
    for (const aeon::Dense& l : m.layers) {
        Mat<T> w(static_cast<std::size_t>(l.weight.rows()), std::vector<T>(static_cast<std::size_t>(l.weight.cols())));
        for (aeon::Index r = 0; r < l.weight.rows(); ++r)
            for (aeon::Index c = 0; c < l.weight.cols(); ++c) w[r][c] = static_cast<T>(l.weight(r, c));
        std::vector<T> b(static_cast<std::size_t>(l.bias.cols()));
        for (aeon::Index c = 0; c < l.bias.cols(); ++c) b[c] = static_cast<T>(l.bias(0, c));
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    return p;
}

/// Mutable reference to flat parameter k in AeonModel::flatten order
/// (per layer: weight column-major, then bias).
template <class T>
T& flat_param(Params<T>& p, std::size_t k) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        const std::size_t rows = p.weights[l].size(), cols = p.weights[l][0].size();
        if (k < rows * cols) return p.weights[l][k % rows][k / rows];
        k -= rows * cols;
        if (k < cols) return p.biases[l][k];
        k -= cols;
    }
    throw std::out_of_range("flat_param");
}

template <class T>
std::vector<T> row_of(const aeon::Matrix& m, aeon::Index i) {
    std::vector<T> v(static_cast<std::size_t>(m.cols()));
    for (aeon::Index k = 0; k < m.cols(); ++k) v[k] = static_cast<T>(m(i, k));
    return v;
}

template <class T>
std::vector<T> affine(const Params<T>& p, std::size_t layer, const std::vector<T>& x) {
    const Mat<T>& w = p.weights[layer];
    std::vector<T> y = p.biases[layer];
    for (std::size_t c = 0; c < y.size(); ++c)
        for (std::size_t r = 0; r < x.size(); ++r) y[c] += x[r] * w[r][c];
    return y;
}

template <class T>
std::vector<T> leaky(std::vector<T> v, T slope) {
    for (T& a : v) a = a > 0 ? a : slope * a;
    return v;
}

template <class T>
std::vector<T> features(const Params<T>& p, std::size_t encoder_layers, T slope, std::vector<T> x) {
    for (std::size_t l = 0; l < encoder_layers; ++l) x = leaky(affine(p, l, x), slope);
    return x;
}

template <class T>
T log_sum_exp(const std::vector<T>& v) {
    const T m = *std::max_element(v.begin(), v.end());
    T s = 0;
    for (T a : v) s += std::exp(a - m);
    return m + std::log(s);
}

template <class T>
T cross_entropy(const std::vector<T>& logits, const std::vector<T>& target) {
    const T lse = log_sum_exp(logits);
    T loss = 0;
    for (std::size_t k = 0; k < logits.size(); ++k) loss -= target[k] * (logits[k] - lse);
    return loss;
}

template <class T>
T sigmoid(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

/// Standard normal quantile by bisection on 0.5 * erfc(-z / sqrt 2), run
/// until the bracket stops shrinking.
template <class T>
T normal_quantile(T p) {
    T lo = -40, hi = 40;
    for (;;) {
        const T mid = (lo + hi) / 2;
        if (mid == lo || mid == hi) return mid;
        (T(0.5) * std::erfc(-mid / std::sqrt(T(2))) < p ? lo : hi) = mid;
    }
}

template <class T>
T threshold(T gamma, T temperature, const aeon::BatchStats& stats, T clamp) {
    T eta = sigmoid(gamma / temperature);
    eta = std::min(std::max(eta, clamp), T(1) - clamp);
    const T sigma = std::sqrt(std::max(static_cast<T>(stats.variance), static_cast<T>(aeon::kVarianceFloor)));
    return static_cast<T>(stats.mean) + sigma * normal_quantile(T(1) - eta);
}

struct Setup {
    const aeon::AeonModel* model;
    const aeon::BatchInputs* inputs;
    const aeon::LossConfig* loss;
    aeon::FrozenStats stats;
    double temperature_id;
    double temperature_ood;
};

/// Mean per-sample loss for the given parameters and noise-rate parameters.
template <class T>
T batch_loss(const Setup& s, const Params<T>& p, T gamma_id, T gamma_ood) {
    const aeon::AeonModel& m = *s.model;
    const aeon::BatchInputs& in = *s.inputs;
    const aeon::LossConfig& cfg = *s.loss;
    const aeon::MaskConfig& mc = cfg.mask;
    const std::size_t enc = m.encoder_layers(), cls = m.classifier_index(), proj = m.projection_index();
    const T slope = static_cast<T>(m.config.leaky_slope);
    const std::size_t n = static_cast<std::size_t>(in.x.rows());

    auto logits_of = [&](const std::vector<T>& x) { return affine(p, cls, features(p, enc, slope, x)); };
    auto embed_of = [&](const std::vector<T>& x) {
        std::vector<T> o = affine(p, proj + 1, leaky(affine(p, proj, features(p, enc, slope, x)), slope));
        T norm = 0;
        for (T a : o) norm += a * a;
        norm = std::max(std::sqrt(norm), T(1e-12));
        for (T& a : o) a /= norm;
        return o;
    };

    const T tau_ood = threshold(gamma_ood, static_cast<T>(s.temperature_ood), s.stats.energy, static_cast<T>(mc.eta_clamp));
    const T tau_id = threshold(gamma_id, static_cast<T>(s.temperature_id), s.stats.loss, static_cast<T>(mc.eta_clamp));
    const T te = static_cast<T>(mc.energy_temperature);

    std::vector<std::vector<T>> weak(n), strong(n);
    for (std::size_t i = 0; i < n; ++i) {
        weak[i] = embed_of(row_of<T>(in.weak, static_cast<aeon::Index>(i)));
        strong[i] = embed_of(row_of<T>(in.strong, static_cast<aeon::Index>(i)));
    }

    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const aeon::Index r = static_cast<aeon::Index>(i);
        const std::vector<T> z = logits_of(row_of<T>(in.x, r));
        std::vector<T> zt = z;
        for (T& a : zt) a /= te;
        const T energy = -te * log_sum_exp(zt);
        const T sup_raw = cross_entropy(z, row_of<T>(in.targets, r));
        const T sup = cfg.mixup ? cross_entropy(logits_of(row_of<T>(in.x_mix, r)), row_of<T>(in.y_mix, r)) : sup_raw;
        const T uns = cross_entropy(z, row_of<T>(in.pseudo, r));

        const T w_ood = cfg.force_w_ood ? static_cast<T>(*cfg.force_w_ood)
                                        : sigmoid((tau_ood - energy) / static_cast<T>(mc.beta_ood));
        const T w_id = cfg.force_w_id ? static_cast<T>(*cfg.force_w_id)
                                      : sigmoid((tau_id - sup_raw) / static_cast<T>(mc.beta_id));
        T id_margin = 0, ood_margin = 0;
        if (cfg.margins) {
            id_margin = std::max(T(0), energy - static_cast<T>(mc.margin_id));
            id_margin *= id_margin;
            ood_margin = std::max(T(0), static_cast<T>(mc.margin_ood) - energy);
            ood_margin *= ood_margin;
        }

        std::vector<T> sim(n), pos;
        for (std::size_t j = 0; j < n; ++j) {
            T d = 0;
            for (std::size_t k = 0; k < weak[i].size(); ++k) d += weak[i][k] * strong[j][k];
            sim[j] = d / static_cast<T>(cfg.contrastive_temperature);
            if (in.labels[j] == in.labels[i]) pos.push_back(sim[j]);
        }
        const T all = log_sum_exp(sim);
        const T cont_sup = all - log_sum_exp(pos);
        const T cont_uns = all - sim[i];

        total += w_ood * (w_id * sup + (T(1) - w_id) * uns + id_margin) + (T(1) - w_ood) * ood_margin +
                 static_cast<T>(cfg.contrastive_weight) * (cont_sup + cont_uns);
    }
    return total / static_cast<T>(n);
}

} // namespace oracle
