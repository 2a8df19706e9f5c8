#pragma once

// Binary cross-entropy over one positive and k sampled negatives per step,
// with the negatives reweighted by self-normalized importance weights
//
//   w_l = softmax_l( y_l / T - ln Q~(l) )
//   loss_step = -( log s(y_pos) + sum_l w_l log(1 - s(y_l)) )
//
// where s is the logistic function. The unweighted variant uses w_l = 1.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "pasr/autodiff.hpp"

namespace pasr {

struct LossOptions {
    double temperature = 1.0;
    bool weighted = true;
    // Weights are constants under differentiation unless set.
    bool propagate_through_weights = false;
};

/// Softmax over (y_l / T - ln Q~_l), max-subtracted.
inline std::vector<double> importance_weights(std::span<const double> negative_scores,
                                              std::span<const double> log_proposal, double temperature) {
    if (negative_scores.empty()) throw std::domain_error("importance_weights: need at least one negative");
    if (negative_scores.size() != log_proposal.size()) throw std::domain_error("importance_weights: size mismatch");
    if (!(temperature > 0.0)) throw std::domain_error("temperature must be positive");
    std::vector<double> w(negative_scores.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < w.size(); ++i) {
        w[i] = negative_scores[i] / temperature - log_proposal[i];
        mx = std::max(mx, w[i]);
    }
    double z = 0.0;
    for (auto& v : w) z += (v = std::exp(v - mx));
    for (auto& v : w) v /= z;
    return w;
}

struct StepLossInput {
    double positive_score = 0.0;
    std::vector<double> negative_scores;
    std::vector<double> log_proposal;
};

/// Loss of one supervised step.
inline double step_loss(const StepLossInput& in, const LossOptions& opt = {}) {
    if (in.negative_scores.empty()) throw std::domain_error("step_loss: need at least one negative");
    double loss = -ad::log_sigmoid_value(in.positive_score);
    if (opt.weighted) {
        const auto w = importance_weights(in.negative_scores, in.log_proposal, opt.temperature);
        for (size_t l = 0; l < w.size(); ++l) loss -= w[l] * ad::log_sigmoid_value(-in.negative_scores[l]);
    } else {
        for (double y : in.negative_scores) loss -= ad::log_sigmoid_value(-y);
    }
    return loss;
}

/// Sum of step_loss over a batch.
inline double weighted_bce_loss(std::span<const StepLossInput> steps, const LossOptions& opt = {}) {
    double total = 0.0;
    for (const auto& s : steps) total += step_loss(s, opt);
    return total;
}

/// Differentiable batch loss. `scores` is steps x (1 + k) with the positive in
/// column 0; `log_proposal` holds steps x k values of ln Q~ for the negatives.
/// Returns the sum over steps.
inline ad::Tensor weighted_bce_loss(const ad::Tensor& scores, std::span<const double> log_proposal,
                                    const LossOptions& opt = {}) {
    const size_t steps = scores.rows(), width = scores.cols();
    if (width < 2) throw std::domain_error("weighted_bce_loss: need a positive and at least one negative");
    const size_t k = width - 1;
    if (log_proposal.size() != steps * k) throw std::domain_error("weighted_bce_loss: proposal size mismatch");

    std::vector<double> weights(steps * k, 1.0);
    std::vector<double> neg_terms(steps * k);  // log(1 - s(y_l))
    double total = 0.0;
    const auto y = scores.values();
    for (size_t s = 0; s < steps; ++s) {
        const auto neg = y.subspan(s * width + 1, k);
        if (opt.weighted) {
            const auto w = importance_weights(neg, log_proposal.subspan(s * k, k), opt.temperature);
            std::copy(w.begin(), w.end(), weights.begin() + static_cast<long>(s * k));
        }
        total -= ad::log_sigmoid_value(y[s * width]);
        for (size_t l = 0; l < k; ++l) {
            neg_terms[s * k + l] = ad::log_sigmoid_value(-neg[l]);
            total -= weights[s * k + l] * neg_terms[s * k + l];
        }
    }
    const bool propagate = opt.weighted && opt.propagate_through_weights;
    const double inv_t = 1.0 / opt.temperature;
    return ad::make_op(
        "weighted_bce_loss", 1, 1, {total}, {scores},
        [scores, weights = std::move(weights), neg_terms = std::move(neg_terms), steps, width, k, propagate,
         inv_t](ad::Node& self) {
            auto& g = scores.node()->ensure_grad();
            const auto y = scores.values();
            const double up = self.grad[0];
            auto sig = [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
            for (size_t s = 0; s < steps; ++s) {
                // d/dy [-log s(y)] = -(1 - s(y)) = -s(-y)
                g[s * width] += up * -sig(-y[s * width]);
                double mean_term = 0.0;
                if (propagate) {
                    for (size_t l = 0; l < k; ++l) mean_term += weights[s * k + l] * neg_terms[s * k + l];
                }
                for (size_t l = 0; l < k; ++l) {
                    const double w = weights[s * k + l];
                    // d/dy [-log(1 - s(y))] = s(y)
                    double d = w * sig(y[s * width + 1 + l]);
                    if (propagate) d -= inv_t * w * (neg_terms[s * k + l] - mean_term);
                    g[s * width + 1 + l] += up * d;
                }
            }
        });
}

/// max_l |w_l - 1/k| at the given (large) temperature.
inline double temperature_limit_check(std::span<const double> negative_scores, std::span<const double> log_proposal,
                                      double large_temperature) {
    if (large_temperature < 1e6) throw std::domain_error("temperature_limit_check expects T >= 1e6");
    const auto w = importance_weights(negative_scores, log_proposal, large_temperature);
    const double uniform = 1.0 / static_cast<double>(w.size());
    double dev = 0.0;
    for (double v : w) dev = std::max(dev, std::abs(v - uniform));
    return dev;
}

}  // namespace pasr
