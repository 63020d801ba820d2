#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "clstream/dataset.hpp"
#include "clstream/network.hpp"
#include "clstream/stream.hpp"

namespace clstream {

constexpr double kMaskValue = -1e9;

/// Replace logits of classes absent from `present` by -1e9 so that their
/// softmax mass underflows to exactly zero.
inline Matrix mask_logits(const Matrix& logits, const ClassSet& present) {
    if (present.empty()) throw std::invalid_argument("mask_logits: empty present set");
    Matrix out = logits;
    std::vector<char> keep(logits.cols, 0);
    for (int c : present) {
        if (c < 0 || static_cast<std::size_t>(c) >= logits.cols)
            throw std::invalid_argument("mask_logits: class id out of range");
        keep[static_cast<std::size_t>(c)] = 1;
    }
    for (std::size_t r = 0; r < out.rows; ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < out.cols; ++c)
            if (!keep[c]) row[c] = kMaskValue;
    }
    return out;
}

struct TrainBatch {
    Matrix inputs;
    std::vector<int> targets;
    ClassSet present_classes;  // classes occurring in this batch

    void validate(int num_classes) const {
        if (inputs.rows != targets.size())
            throw std::invalid_argument("TrainBatch: inputs/targets size mismatch");
        for (int t : targets) {
            if (t < 0 || t >= num_classes)
                throw std::invalid_argument("TrainBatch: target out of range");
            if (!class_set_contains(present_classes, t))
                throw std::invalid_argument("TrainBatch: target not in present_classes");
        }
    }
};

inline ClassSet classes_of_targets(const std::vector<int>& targets) {
    ClassSet s(targets.begin(), targets.end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

struct LossAndGrads {
    double loss = 0.0;
    std::vector<Tensor> grads;
};

/// Mean cross-entropy over the batch on (optionally masked) logits, with
/// gradients by backpropagation. Under masking, the head rows of absent
/// classes receive exactly zero gradient.
inline LossAndGrads loss_and_grads(const Network& net, const TrainBatch& batch,
                                   bool masking) {
    batch.validate(net.num_classes());
    ForwardTrace tr = net.forward_trace(batch.inputs);
    const Matrix logits =
        masking ? mask_logits(tr.logits, batch.present_classes) : tr.logits;

    const std::size_t B = logits.rows;
    const std::size_t N = logits.cols;
    Matrix dlogits(B, N);
    double loss = 0.0;
    for (std::size_t r = 0; r < B; ++r) {
        const auto row = logits.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < N; ++c) sum += std::exp(row[c] - mx);
        const double lse = mx + std::log(sum);
        const auto y = static_cast<std::size_t>(batch.targets[r]);
        loss += lse - row[y];
        auto drow = dlogits.row(r);
        for (std::size_t c = 0; c < N; ++c) drow[c] = std::exp(row[c] - mx) / sum;
        drow[y] -= 1.0;
    }
    loss /= static_cast<double>(B);
    if (!std::isfinite(loss))
        throw std::runtime_error("loss_and_grads: non-finite loss");
    for (auto& v : dlogits.data) v /= static_cast<double>(B);

    // the mask assignment is a constant overwrite, so no gradient flows
    // through masked entries (their softmax term is already exactly 0)
    if (masking) {
        std::vector<char> keep(N, 0);
        for (int c : batch.present_classes) keep[static_cast<std::size_t>(c)] = 1;
        for (std::size_t r = 0; r < B; ++r) {
            auto drow = dlogits.row(r);
            for (std::size_t c = 0; c < N; ++c)
                if (!keep[c]) drow[c] = 0.0;
        }
    }
    return {loss, net.backward(tr, dlogits)};
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct OptimizerRecipe {
    enum class Kind { sgd, sgd_momentum, adam };
    Kind kind = Kind::sgd;
    double lr = 0.01;
    double momentum = 0.9;  // sgd_momentum only
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // adam defaults
};

class OptimizerState {
public:
    OptimizerState(const OptimizerRecipe& recipe, const Network& net) : recipe_(recipe) {
        if (!(recipe.lr > 0.0)) throw std::invalid_argument("OptimizerState: lr must be > 0");
        if (recipe.kind == OptimizerRecipe::Kind::sgd_momentum &&
            (recipe.momentum < 0.0 || recipe.momentum >= 1.0))
            throw std::invalid_argument("OptimizerState: momentum must be in [0,1)");
        if (recipe.kind != OptimizerRecipe::Kind::sgd) {
            velocity_ = net.zero_grads();
            if (recipe.kind == OptimizerRecipe::Kind::adam) second_moment_ = net.zero_grads();
        }
    }

    const OptimizerRecipe& recipe() const { return recipe_; }

    void step(Network& net, const std::vector<Tensor>& grads) {
        auto& params = net.params();
        if (grads.size() != params.size())
            throw std::invalid_argument("OptimizerState::step: gradient list mismatch");
        switch (recipe_.kind) {
            case OptimizerRecipe::Kind::sgd:
                for (std::size_t i = 0; i < params.size(); ++i)
                    axpy(params[i], grads[i], -recipe_.lr);
                break;
            case OptimizerRecipe::Kind::sgd_momentum:
                for (std::size_t i = 0; i < params.size(); ++i) {
                    Tensor& v = velocity_[i];
                    const Tensor& g = grads[i];
                    check_shape(params[i], g);
                    for (std::size_t j = 0; j < v.data.size(); ++j) {
                        v.data[j] = recipe_.momentum * v.data[j] + g.data[j];
                        params[i].data[j] -= recipe_.lr * v.data[j];
                    }
                }
                break;
            case OptimizerRecipe::Kind::adam: {
                ++adam_t_;
                const double bc1 = 1.0 - std::pow(recipe_.beta1, adam_t_);
                const double bc2 = 1.0 - std::pow(recipe_.beta2, adam_t_);
                for (std::size_t i = 0; i < params.size(); ++i) {
                    Tensor& m = velocity_[i];
                    Tensor& v = second_moment_[i];
                    const Tensor& g = grads[i];
                    check_shape(params[i], g);
                    for (std::size_t j = 0; j < m.data.size(); ++j) {
                        m.data[j] = recipe_.beta1 * m.data[j] + (1.0 - recipe_.beta1) * g.data[j];
                        v.data[j] =
                            recipe_.beta2 * v.data[j] + (1.0 - recipe_.beta2) * g.data[j] * g.data[j];
                        params[i].data[j] -= recipe_.lr * (m.data[j] / bc1) /
                                             (std::sqrt(v.data[j] / bc2) + recipe_.eps);
                    }
                }
                break;
            }
        }
        for (const auto& p : net.params())
            for (double x : p.data)
                if (!std::isfinite(x))
                    throw std::runtime_error("OptimizerState::step: non-finite parameter update");
    }

private:
    static void check_shape(const Tensor& p, const Tensor& g) {
        if (p.shape != g.shape)
            throw std::invalid_argument("OptimizerState::step: shape mismatch for " + p.name);
    }
    static void axpy(Tensor& p, const Tensor& g, double scale) {
        check_shape(p, g);
        for (std::size_t j = 0; j < p.data.size(); ++j) p.data[j] += scale * g.data[j];
    }

    OptimizerRecipe recipe_;
    std::vector<Tensor> velocity_;       // momentum buffer / adam first moment
    std::vector<Tensor> second_moment_;  // adam only
    long adam_t_ = 0;
};

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

/// A materialized training set: inputs with any task transform already
/// applied, plus integer targets.
struct TrainSet {
    Matrix inputs;
    std::vector<int> targets;

    std::size_t size() const { return targets.size(); }
};

inline TrainSet build_train_set(const LabeledDataset& train, const TaskSpec& task) {
    TrainSet set;
    set.inputs = apply_transform(train.features.gather_rows(task.sample_ids), task.transform);
    set.targets.reserve(task.sample_ids.size());
    for (int id : task.sample_ids)
        set.targets.push_back(train.labels[static_cast<std::size_t>(id)]);
    return set;
}

struct TrainStats {
    double mean_loss = 0.0;
    std::uint64_t gradient_steps = 0;
    std::uint64_t samples_processed = 0;
};

/// Epochs of shuffled mini-batch training on a materialized set. Masking is
/// applied per mini-batch with the classes actually present in that batch.
inline TrainStats train_on_set(Network& net, OptimizerState& opt, const TrainSet& set,
                               int epochs, int batch_size, bool masking, Rng& rng) {
    if (epochs < 0) throw std::invalid_argument("train_on_set: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train_on_set: batch_size must be >= 1");
    TrainStats stats;
    if (epochs == 0 || set.size() == 0) return stats;

    std::vector<int> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    double loss_sum = 0.0;
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(batch_size));
            TrainBatch batch;
            batch.inputs = Matrix(stop - start, set.inputs.cols);
            batch.targets.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const auto src = set.inputs.row(static_cast<std::size_t>(order[i]));
                std::copy(src.begin(), src.end(), batch.inputs.row(i - start).begin());
                batch.targets.push_back(set.targets[static_cast<std::size_t>(order[i])]);
            }
            batch.present_classes = classes_of_targets(batch.targets);
            auto lg = loss_and_grads(net, batch, masking);
            opt.step(net, lg.grads);
            loss_sum += lg.loss;
            ++stats.gradient_steps;
            stats.samples_processed += stop - start;
        }
    }
    stats.mean_loss = loss_sum / static_cast<double>(stats.gradient_steps);
    return stats;
}

/// Train on one task's samples for the given number of epochs.
inline TrainStats train_task(Network& net, OptimizerState& opt, const TaskSpec& task,
                             const LabeledDataset& train, int epochs, int batch_size,
                             bool masking, Rng& rng) {
    if (task.sample_ids.empty()) throw std::invalid_argument("train_task: empty task");
    return train_on_set(net, opt, build_train_set(train, task), epochs, batch_size,
                        masking, rng);
}

struct EvalResult {
    double overall = 0.0;
    std::vector<double> per_class;     // correct/total within class
    std::vector<int> per_class_total;
};

/// Accuracy by argmax over the full unmasked logits (single head).
inline EvalResult evaluate(const Network& net, const LabeledDataset& test) {
    EvalResult res;
    res.per_class.assign(static_cast<std::size_t>(test.num_classes), 0.0);
    res.per_class_total.assign(static_cast<std::size_t>(test.num_classes), 0);
    std::vector<double> correct(static_cast<std::size_t>(test.num_classes), 0.0);
    const std::size_t chunk = 256;
    std::size_t total_correct = 0;
    for (std::size_t start = 0; start < test.num_samples(); start += chunk) {
        const std::size_t stop = std::min(test.num_samples(), start + chunk);
        Matrix x(stop - start, test.input_dim());
        std::copy(test.features.data.begin() +
                      static_cast<std::ptrdiff_t>(start * test.input_dim()),
                  test.features.data.begin() +
                      static_cast<std::ptrdiff_t>(stop * test.input_dim()),
                  x.data.begin());
        const Matrix logits = net.forward(x);
        for (std::size_t r = 0; r < logits.rows; ++r) {
            const auto row = logits.row(r);
            const std::size_t pred = static_cast<std::size_t>(
                std::max_element(row.begin(), row.end()) - row.begin());
            const auto y = static_cast<std::size_t>(test.labels[start + r]);
            ++res.per_class_total[y];
            if (pred == y) {
                correct[y] += 1.0;
                ++total_correct;
            }
        }
    }
    for (std::size_t c = 0; c < res.per_class.size(); ++c)
        res.per_class[c] =
            res.per_class_total[c] ? correct[c] / res.per_class_total[c] : 0.0;
    res.overall = static_cast<double>(total_correct) /
                  static_cast<double>(std::max<std::size_t>(test.num_samples(), 1));
    return res;
}

/// Accuracy on the samples of `classes` with argmax restricted to those
/// classes' logits. Used by the meta-test probe.
inline double evaluate_on_classes(const Network& net, const LabeledDataset& test,
                                  const ClassSet& classes) {
    if (classes.empty()) throw std::invalid_argument("evaluate_on_classes: empty class set");
    std::vector<int> ids;
    for (int c : classes) {
        const auto& bucket = test.class_index.at(static_cast<std::size_t>(c));
        ids.insert(ids.end(), bucket.begin(), bucket.end());
    }
    if (ids.empty()) throw std::runtime_error("evaluate_on_classes: no test samples");
    Matrix x = test.features.gather_rows(ids);
    const Matrix logits = net.forward(x);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const auto row = logits.row(r);
        int best = classes.front();
        for (int c : classes)
            if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(best)]) best = c;
        if (best == test.labels[static_cast<std::size_t>(ids[r])]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows);
}

}  // namespace clstream
