#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "afc/ops.hpp"
#include "afc/tape.hpp"
#include "afc/tensor.hpp"

namespace afc {

struct LossConfig {
    double lambda_disc = 4.0;
    double map_norm_eps = 1e-8;
    // Eq-literal denominator excludes the true class; the flag restores the
    // conventional softmax denominator for comparison runs.
    bool include_true_in_denominator = false;
};

struct LossReport {
    double cls = 0.0;
    double disc = 0.0;
    double total = 0.0;
    double lambda_t = 1.0;
};

/// Stage-adaptive distillation weight sqrt(n_t / (n_t - n_prev)).
inline double lambda_t(int n_t, int n_prev) {
    if (n_prev < 0 || n_t <= n_prev)
        throw std::invalid_argument("lambda_t requires n_t > n_prev >= 0, got n_t=" +
                                    std::to_string(n_t) + " n_prev=" + std::to_string(n_prev));
    return std::sqrt(static_cast<double>(n_t) / static_cast<double>(n_t - n_prev));
}

enum class Reduction { mean, sum };

/// Margin loss over cosine scores: per example
///   [ -log( exp(eta*(y_g - delta)) / sum_{i != g} exp(eta*y_i) ) ]_+
/// reduced over the batch. `sum` reduction keeps per-example additivity for
/// the importance pass.
inline Var classification_loss(Tape& tape, Var scores, const std::vector<int>& labels, Var eta,
                               double delta, Reduction reduction = Reduction::mean,
                               bool include_true_in_denominator = false) {
    const Tensor& sv = tape.value(scores);
    if (sv.rank() != 2) throw dimension_error("classification_loss expects [B, K] scores");
    const std::size_t B = sv.shape[0], K = sv.shape[1];
    if (B == 0 || labels.size() != B)
        throw std::invalid_argument("classification_loss: empty batch or label count mismatch");
    Tensor onehot({B, K});
    Tensor mask = Tensor::full({B, K}, 1.0);
    for (std::size_t b = 0; b < B; ++b) {
        const int g = labels[b];
        if (g < 0 || static_cast<std::size_t>(g) >= K)
            throw std::invalid_argument("label " + std::to_string(g) + " out of range for width " +
                                        std::to_string(K));
        onehot.at2(b, static_cast<std::size_t>(g)) = 1.0;
        if (!include_true_in_denominator) mask.at2(b, static_cast<std::size_t>(g)) = 0.0;
    }
    Var oh = tape.constant(std::move(onehot));
    Var mk = tape.constant(std::move(mask));
    Var y_true = ops::reduce_sum(ops::mul(scores, oh), {1}, false);        // [B]
    Var margin = ops::mul(eta, ops::add_scalar(y_true, -delta));           // eta*(y_g - delta)
    Var denom = ops::reduce_sum(ops::mul(ops::exp(ops::mul(eta, scores)), mk), {1}, false);
    Var per_example = ops::relu(ops::sub(ops::log(denom), margin));        // [B]
    Var total = ops::sum(per_example);
    if (reduction == Reduction::mean) total = ops::scale(total, 1.0 / static_cast<double>(B));
    return total;
}

/// z / (||z||_F + eps); a zero map stays zero.
inline Tensor normalize_map(const Tensor& z, double eps = 1e-8) {
    const double n = frobenius_norm(z) + eps;
    Tensor out = z;
    for (double& v : out.data) v /= n;
    return out;
}

namespace detail {

/// Per-(example, channel) Frobenius normalization of an NCHW tensor on tape.
inline Var normalize_maps(Tape& tape, Var z, double eps) {
    Var n = ops::sqrt(ops::reduce_sum(ops::mul(z, z), {2, 3}, true));
    return ops::div(z, ops::add_scalar(n, eps));
}

inline Tensor normalize_maps_plain(const Tensor& z, double eps) {
    const std::size_t B = z.shape[0], C = z.shape[1], HW = z.shape[2] * z.shape[3];
    Tensor out = z;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        double s = 0.0;
        const double* p = z.data.data() + bc * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i] * p[i];
        const double n = std::sqrt(s) + eps;
        double* q = out.data.data() + bc * HW;
        for (std::size_t i = 0; i < HW; ++i) q[i] /= n;
    }
    return out;
}

}  // namespace detail

/// Importance-weighted squared Frobenius distance between per-map normalized
/// student and teacher feature maps, averaged over the batch. Teacher taps
/// are constants; no gradient reaches the old model.
inline Var discrepancy_loss(Tape& tape, const std::vector<Var>& student_taps,
                            const std::vector<Tensor>& teacher_taps,
                            const std::vector<std::vector<double>>& importance, double eps = 1e-8) {
    if (student_taps.size() != teacher_taps.size() || student_taps.size() != importance.size())
        throw dimension_error("discrepancy_loss: tap/importance layer counts differ");
    if (student_taps.empty()) throw dimension_error("discrepancy_loss: no tapped layers");
    Var acc{};
    std::size_t B = 0;
    for (std::size_t l = 0; l < student_taps.size(); ++l) {
        const Tensor& sv = tape.value(student_taps[l]);
        const Tensor& tv = teacher_taps[l];
        if (sv.shape != tv.shape)
            throw dimension_error("discrepancy_loss: tap shape mismatch at layer " + std::to_string(l) +
                                  ": " + shape_str(sv.shape) + " vs " + shape_str(tv.shape));
        const std::size_t C = sv.shape[1];
        if (importance[l].size() != C)
            throw dimension_error("discrepancy_loss: importance covers " +
                                  std::to_string(importance[l].size()) + " channels, tap has " +
                                  std::to_string(C));
        for (double w : importance[l])
            if (w < 0.0) throw std::invalid_argument("discrepancy_loss: negative importance weight");
        B = sv.shape[0];
        Var sn = detail::normalize_maps(tape, student_taps[l], eps);
        Var tn = tape.constant(detail::normalize_maps_plain(tv, eps));
        Var diff = ops::sub(sn, tn);
        Var per_map = ops::reduce_sum(ops::mul(diff, diff), {2, 3}, false);  // [B, C]
        Var weights = tape.constant(Tensor({C}, std::vector<double>(importance[l])));
        Var layer = ops::reduce_sum(ops::mul(per_map, weights), {1}, false);  // [B]
        acc = acc.valid() ? ops::add(acc, layer) : layer;
    }
    return ops::scale(ops::sum(acc), 1.0 / static_cast<double>(B));
}

/// Combine components; total = cls + (lambda_disc * lambda_t) * disc, the
/// same expression the tape evaluates.
inline LossReport total_loss(double cls, double disc, double lambda_disc, double lambda_t_value) {
    LossReport r;
    r.cls = cls;
    r.disc = disc;
    r.lambda_t = lambda_t_value;
    r.total = cls + (lambda_disc * lambda_t_value) * disc;
    return r;
}

}  // namespace afc
