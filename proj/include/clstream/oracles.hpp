#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "clstream/learner.hpp"
#include "clstream/network.hpp"
#include "clstream/stream.hpp"

// Independent brute-force verifiers used by tests and the acceptance suite.
// These deliberately duplicate arithmetic instead of calling the code paths
// they check.

namespace clstream::oracles {

struct MonteCarloEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    int trials = 0;
};

/// Empirical per-class occurrence frequency over `trials` sampled tasks.
inline std::vector<MonteCarloEstimate> mc_class_frequency(const ClassDistribution& dist,
                                                          int classes_per_task, int trials,
                                                          Rng& rng) {
    if (trials < 1000)
        throw std::invalid_argument("mc_class_frequency: need at least 1000 trials");
    std::vector<long> hits(dist.probs.size(), 0);
    for (int t = 0; t < trials; ++t) {
        const ClassSet task = draw_classes_weighted(dist.probs, classes_per_task, rng);
        for (int c : task) ++hits[static_cast<std::size_t>(c)];
    }
    std::vector<MonteCarloEstimate> out(dist.probs.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        const double p = static_cast<double>(hits[c]) / trials;
        out[c].mean = p;
        // indicator variable: SE = sqrt(p(1-p)/trials)
        out[c].std_error = std::sqrt(p * (1.0 - p) / trials);
        out[c].trials = trials;
    }
    return out;
}

/// Empirical estimate of E[log(p(y|S_t)/p(y))] for a uniform scenario: draw a
/// task, draw an in-task label, accumulate log((1/C)/(1/N)).
inline double mc_kl_estimate(int total_classes, int classes_per_task, int trials, Rng& rng) {
    if (trials < 1000) throw std::invalid_argument("mc_kl_estimate: need at least 1000 trials");
    const ClassDistribution dist = ClassDistribution::uniform(total_classes);
    double sum = 0.0;
    for (int t = 0; t < trials; ++t) {
        const ClassSet task = draw_classes_weighted(dist.probs, classes_per_task, rng);
        const int label = task[uniform_index(rng, task.size())];
        const double p_task = 1.0 / static_cast<double>(task.size());
        const double p_iid = dist.probs[static_cast<std::size_t>(label)];
        sum += std::log(p_task / p_iid);
    }
    return sum / trials;
}

/// Central finite differences of the training loss for every parameter.
inline std::vector<Tensor> finite_difference_grads(Network& net, const TrainBatch& batch,
                                                   bool masking, double step) {
    if (!(step > 0.0))
        throw std::invalid_argument("finite_difference_grads: step must be > 0");
    if (net.param_count() > 10000)
        throw std::invalid_argument("finite_difference_grads: network too large to perturb");
    auto loss_at = [&]() {
        const auto lg = loss_and_grads(net, batch, masking);
        return lg.loss;
    };
    auto grads = net.zero_grads();
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        Tensor& p = net.params()[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double saved = p.data[j];
            p.data[j] = saved + step;
            const double up = loss_at();
            p.data[j] = saved - step;
            const double down = loss_at();
            p.data[j] = saved;
            grads[i].data[j] = (up - down) / (2.0 * step);
        }
    }
    return grads;
}

struct ForgettingRecomputation {
    std::vector<double> local;  // one value per consecutive record pair with
                                // at least one out-of-task class
    double total = 0.0;
};

/// Straightforward re-evaluation of the forgetting equations from a raw
/// per-class accuracy matrix (rows = evaluated tasks).
inline ForgettingRecomputation recompute_metrics(
    const std::vector<std::vector<double>>& acc_matrix,
    const std::vector<ClassSet>& task_classes, int total_classes, int classes_per_task) {
    (void)classes_per_task;
    if (acc_matrix.size() != task_classes.size())
        throw std::invalid_argument("recompute_metrics: matrix/class-set row mismatch");
    if (acc_matrix.size() < 2)
        throw std::invalid_argument("recompute_metrics: need at least two rows");
    for (const auto& row : acc_matrix)
        if (static_cast<int>(row.size()) != total_classes)
            throw std::invalid_argument("recompute_metrics: row width != N");

    ForgettingRecomputation out;
    double sum = 0.0;
    for (std::size_t t = 1; t < acc_matrix.size(); ++t) {
        double local = 0.0;
        int n = 0;
        for (int c = 0; c < total_classes; ++c) {
            bool in_task = false;
            for (int tc : task_classes[t])
                if (tc == c) in_task = true;
            if (in_task) continue;
            local += acc_matrix[t][static_cast<std::size_t>(c)] -
                     acc_matrix[t - 1][static_cast<std::size_t>(c)];
            ++n;
        }
        if (n == 0) continue;
        out.local.push_back(local / n);
        sum += local / n;
    }
    if (out.local.empty())
        throw std::runtime_error("recompute_metrics: no defined local values");
    out.total = sum / static_cast<double>(out.local.size());
    return out;
}

}  // namespace clstream::oracles
