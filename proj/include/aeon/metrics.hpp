#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "aeon/errors.hpp"

namespace aeon {

/// Index of the largest entry; ties go to the lowest index.
inline int argmax_row(const Eigen::MatrixXd& m, Eigen::Index row) {
    int best = 0;
    for (Eigen::Index k = 1; k < m.cols(); ++k)
        if (m(row, k) > m(row, best)) best = static_cast<int>(k);
    return best;
}

inline std::vector<int> argmax_rows(const Eigen::MatrixXd& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(m, i);
    return out;
}

inline double accuracy(std::span<const int> predictions, std::span<const int> truth) {
    if (predictions.size() != truth.size()) throw StructuralError("accuracy: length mismatch");
    if (predictions.empty()) throw StructuralError("accuracy: empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += predictions[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

/// Expected calibration error over equal-width, right-closed bins on [0, 1]:
/// bin b covers (b/B, (b+1)/B], with confidence 0 falling in the first bin.
inline double ece(std::span<const double> confidence, std::span<const int> correct, int bins = 15) {
    if (confidence.size() != correct.size()) throw StructuralError("ece: length mismatch");
    if (bins < 1) throw ConfigError("ece: bins must be >= 1");
    if (confidence.empty()) return 0.0;
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0), acc_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < confidence.size(); ++i) {
        const double c = confidence[i];
        int b = static_cast<int>(std::ceil(c * bins)) - 1;
        b = std::clamp(b, 0, bins - 1);
        conf_sum[static_cast<std::size_t>(b)] += c;
        acc_sum[static_cast<std::size_t>(b)] += correct[i] ? 1.0 : 0.0;
        ++count[static_cast<std::size_t>(b)];
    }
    const double n = static_cast<double>(confidence.size());
    double total = 0.0;
    for (std::size_t b = 0; b < count.size(); ++b) {
        if (count[b] == 0) continue;
        const double nb = static_cast<double>(count[b]);
        total += (nb / n) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
    }
    return total;
}

/// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(equal), exact via
/// sorting with tie groups. nullopt when either class is absent.
inline std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw StructuralError("auroc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos = 0.0, neg = 0.0;
    for (int l : labels) (l ? pos : neg) += 1.0;
    if (pos == 0.0 || neg == 0.0) return std::nullopt;

    // Count, for each positive, negatives strictly below plus half of ties.
    double wins = 0.0;
    double neg_below = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        double group_pos = 0.0, group_neg = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? group_pos : group_neg) += 1.0;
            ++j;
        }
        wins += group_pos * (neg_below + 0.5 * group_neg);
        neg_below += group_neg;
        i = j;
    }
    return wins / (pos * neg);
}

} // namespace aeon
