#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "clstream/learner.hpp"
#include "clstream/stream.hpp"

namespace clstream {

/// One evaluation record, appended after training on task `task`.
struct TaskRecord {
    int task = 0;
    double overall_acc = 0.0;
    std::vector<double> per_class_acc;
    ClassSet classes;  // classes of the task just trained
    std::uint64_t gradient_steps = 0;   // cumulative
    std::uint64_t cumulative_samples = 0;
    std::uint64_t replayed_count = 0;   // cumulative replayed class slots
};

/// Append-only per-task measurement log for one run.
class MetricsLog {
public:
    void append(TaskRecord rec) {
        if (!records_.empty() && rec.task <= records_.back().task)
            throw std::invalid_argument("MetricsLog: records must be strictly ordered by task");
        for (double a : rec.per_class_acc)
            if (a < 0.0 || a > 1.0)
                throw std::invalid_argument("MetricsLog: per-class accuracy outside [0,1]");
        records_.push_back(std::move(rec));
    }

    const std::vector<TaskRecord>& records() const { return records_; }
    bool empty() const { return records_.empty(); }
    std::size_t size() const { return records_.size(); }

    void set_iid_accuracy(double acc) {
        if (!(acc > 0.0)) throw std::invalid_argument("MetricsLog: IID accuracy must be > 0");
        iid_accuracy_ = acc;
    }
    std::optional<double> iid_accuracy() const { return iid_accuracy_; }

    /// Index of the record for task t, if evaluated.
    std::optional<std::size_t> find(int task) const {
        auto it = std::lower_bound(records_.begin(), records_.end(), task,
                                   [](const TaskRecord& r, int t) { return r.task < t; });
        if (it == records_.end() || it->task != task) return std::nullopt;
        return static_cast<std::size_t>(it - records_.begin());
    }

    /// Trailing mean of overall accuracy over records with task in
    /// [last_task - window + 1, last_task].
    double moving_average(int window) const {
        if (records_.empty()) throw std::runtime_error("MetricsLog: empty log");
        const int last = records_.back().task;
        double sum = 0.0;
        int n = 0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (it->task <= last - window) break;
            sum += it->overall_acc;
            ++n;
        }
        return sum / n;
    }

private:
    std::vector<TaskRecord> records_;
    std::optional<double> iid_accuracy_;
};

// ---------------------------------------------------------------------------
// Forgetting
// ---------------------------------------------------------------------------

/// Mean accuracy change between two consecutive evaluations over the classes
/// not involved in the later task. Classes of the later task (including any
/// overlap with the earlier one) are excluded and the denominator adjusts.
/// Negative values indicate forgetting. Empty when no class qualifies.
inline std::optional<double> local_forgetting_between(const TaskRecord& prev,
                                                      const TaskRecord& cur) {
    if (prev.per_class_acc.size() != cur.per_class_acc.size())
        throw std::invalid_argument("local_forgetting: per-class vectors differ in size");
    double sum = 0.0;
    int n = 0;
    for (std::size_t c = 0; c < cur.per_class_acc.size(); ++c) {
        if (class_set_contains(cur.classes, static_cast<int>(c))) continue;
        sum += cur.per_class_acc[c] - prev.per_class_acc[c];
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / n;
}

/// Local forgetting at task t, computed from the records of t and t-1.
inline double local_forgetting(const MetricsLog& log, int t) {
    if (t <= 0) throw std::invalid_argument("local_forgetting: need t >= 1");
    const auto cur = log.find(t);
    const auto prev = log.find(t - 1);
    if (!cur || !prev)
        throw std::invalid_argument("local_forgetting: missing record for task " +
                                    std::to_string(t) + " or its predecessor");
    const auto f =
        local_forgetting_between(log.records()[*prev], log.records()[*cur]);
    if (!f) throw std::runtime_error("local_forgetting: no out-of-task classes at task " +
                                     std::to_string(t));
    return *f;
}

/// Mean of the defined local-forgetting values over consecutive records.
inline double total_forgetting(const MetricsLog& log) {
    if (log.size() < 2)
        throw std::invalid_argument("total_forgetting: need at least two records");
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 1; i < log.size(); ++i) {
        const auto f = local_forgetting_between(log.records()[i - 1], log.records()[i]);
        if (f) {
            sum += *f;
            ++n;
        }
    }
    if (n == 0) throw std::runtime_error("total_forgetting: no defined local values");
    return sum / n;
}

// ---------------------------------------------------------------------------
// Accuracy by frequency band
// ---------------------------------------------------------------------------

struct Band {
    double lo = 0.0;
    double hi = 0.0;  // [lo, hi); the last band is closed on the right
    std::optional<double> mean_accuracy;  // absent when the band is empty
    int class_count = 0;
};

struct BandReport {
    std::vector<Band> bands;
    int window_start = 0;
    int window_end = 0;
};

inline const std::vector<double>& default_band_edges() {
    static const std::vector<double> edges = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    return edges;
}

/**
 * Group classes by their expected occurrence frequency and average each
 * class's window-mean accuracy within its band. Classes with zero
 * probability are left out; every positive-probability class must fall
 * inside the edge range.
 */
inline BandReport band_report(const MetricsLog& log, const std::vector<double>& class_probs,
                              int total_classes, int classes_per_task,
                              const std::vector<double>& band_edges, int window_start,
                              int window_end) {
    if (band_edges.size() < 2)
        throw std::invalid_argument("band_report: need at least two band edges");
    if (!std::is_sorted(band_edges.begin(), band_edges.end()))
        throw std::invalid_argument("band_report: band edges must be sorted");
    if (static_cast<int>(class_probs.size()) != total_classes)
        throw std::invalid_argument("band_report: probability vector length != N");
    if (window_start > window_end)
        throw std::invalid_argument("band_report: empty task window");

    BandReport report;
    report.window_start = window_start;
    report.window_end = window_end;
    report.bands.resize(band_edges.size() - 1);
    for (std::size_t b = 0; b + 1 < band_edges.size(); ++b) {
        report.bands[b].lo = band_edges[b];
        report.bands[b].hi = band_edges[b + 1];
    }

    std::vector<double> band_sum(report.bands.size(), 0.0);
    bool any_record = false;
    for (int c = 0; c < total_classes; ++c) {
        const double p = class_probs[static_cast<std::size_t>(c)];
        if (p <= 0.0) continue;
        const double nu = expected_class_frequency_nonuniform(p, total_classes, classes_per_task);

        double acc_sum = 0.0;
        int acc_n = 0;
        for (const auto& rec : log.records()) {
            if (rec.task < window_start || rec.task > window_end) continue;
            acc_sum += rec.per_class_acc.at(static_cast<std::size_t>(c));
            ++acc_n;
        }
        if (acc_n == 0) continue;
        any_record = true;

        // half-open [lo, hi) bands; the final band also includes its upper edge
        std::size_t bi = report.bands.size();
        for (std::size_t b = 0; b < report.bands.size(); ++b) {
            const bool last = b + 1 == report.bands.size();
            if (nu >= report.bands[b].lo && (nu < report.bands[b].hi ||
                                             (last && nu <= report.bands[b].hi))) {
                bi = b;
                break;
            }
        }
        if (bi == report.bands.size())
            throw std::domain_error("band_report: class frequency " + std::to_string(nu) +
                                    " outside the band edge range");
        band_sum[bi] += acc_sum / acc_n;
        report.bands[bi].class_count += 1;
    }
    if (!any_record)
        throw std::invalid_argument("band_report: no evaluated tasks inside the window");
    for (std::size_t b = 0; b < report.bands.size(); ++b)
        if (report.bands[b].class_count > 0)
            report.bands[b].mean_accuracy = band_sum[b] / report.bands[b].class_count;
    return report;
}

// ---------------------------------------------------------------------------
// Reference bound curves
// ---------------------------------------------------------------------------

struct BoundCurves {
    double lower = 0.0;  // learns the current classes at `plateau`, forgets the rest
    double upper = 0.0;  // reaches `plateau` for every class seen at least once
};

inline BoundCurves bound_curves(double nu, int t, double plateau) {
    if (nu < 0.0 || nu > 1.0) throw std::invalid_argument("bound_curves: nu must be in [0,1]");
    if (plateau < 0.0 || plateau > 1.0)
        throw std::invalid_argument("bound_curves: plateau must be in [0,1]");
    if (t < 1) throw std::invalid_argument("bound_curves: need t >= 1");
    return {plateau * nu, plateau * (1.0 - std::pow(1.0 - nu, t))};
}

// ---------------------------------------------------------------------------
// Meta-test probing
// ---------------------------------------------------------------------------

struct ProbeRecipe {
    OptimizerRecipe optimizer;
    int batch_size = 64;
    bool masking = false;
    int epochs = 1;
};

/**
 * Fine-tune a throwaway copy of the model on the task of interest and report
 * its accuracy on that task's classes (argmax restricted to them), divided by
 * the task's first-occurrence accuracy. The live model is never touched.
 */
inline double meta_test_probe(const Network& net, const ProbeRecipe& recipe,
                              const TaskSpec& interest, const LabeledDataset& train,
                              const LabeledDataset& test, double first_occurrence_acc,
                              Rng& rng) {
    if (!(first_occurrence_acc > 0.0))
        throw std::invalid_argument("meta_test_probe: first-occurrence accuracy must be > 0");
    if (interest.sample_ids.empty())
        throw std::invalid_argument("meta_test_probe: interest task has no samples");
    Network copy = net;  // value semantics; the original stays untouched
    OptimizerState opt(recipe.optimizer, copy);
    train_task(copy, opt, interest, train, recipe.epochs, recipe.batch_size,
               recipe.masking, rng);
    const double acc = evaluate_on_classes(copy, test, interest.classes);
    return acc / first_occurrence_acc;
}

/// Overall accuracies divided by the stored IID baseline.
inline std::vector<double> normalized_accuracy(const MetricsLog& log) {
    if (!log.iid_accuracy())
        throw std::runtime_error("normalized_accuracy: IID baseline missing");
    std::vector<double> out;
    out.reserve(log.size());
    for (const auto& rec : log.records()) out.push_back(rec.overall_acc / *log.iid_accuracy());
    return out;
}

}  // namespace clstream
