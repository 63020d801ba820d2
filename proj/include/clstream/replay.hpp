#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "clstream/learner.hpp"
#include "clstream/matrix.hpp"
#include "clstream/rng.hpp"
#include "clstream/stream.hpp"
#include "clstream/tensor.hpp"

namespace clstream {

struct ReplayConfig {
    double nu_low = 0.01;   // passband lower cutoff (per-task frequency)
    double nu_high = 0.1;   // passband upper cutoff
    int tau = 3;            // occurrence threshold; selection requires count > tau
    int capacity = 200;     // stored samples per class (n)
    bool count_selection = true;  // selection increments the occurrence count
};

/**
 * Frequency-replay buffer: per-class sample stores with renewal, plus the
 * occurrence counters that drive passband selection. Frequencies are
 * empirical (count / update calls) and never consult the scenario's true
 * probabilities.
 */
class ReplayBuffer {
public:
    ReplayBuffer(const ReplayConfig& config, std::size_t input_dim)
        : config_(config), input_dim_(input_dim) {
        if (config.nu_low < 0.0 || config.nu_high < config.nu_low || config.nu_high > 1.0)
            throw std::invalid_argument("ReplayBuffer: need 0 <= nu_low <= nu_high <= 1");
        if (config.tau < 0) throw std::invalid_argument("ReplayBuffer: tau must be >= 0");
        if (config.capacity < 1) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
    }

    const ReplayConfig& config() const { return config_; }
    int nb_batch() const { return nb_batch_; }
    const std::map<int, int>& occurrence_counts() const { return counts_; }
    const std::map<int, int>& renewal_occurrences() const { return renew_o_; }

    const std::vector<std::vector<double>>& store(int cls) const {
        auto it = stores_.find(cls);
        if (it == stores_.end())
            throw std::out_of_range("ReplayBuffer: no store for class " + std::to_string(cls));
        return it->second;
    }
    bool has_store(int cls) const {
        auto it = stores_.find(cls);
        return it != stores_.end() && !it->second.empty();
    }

    std::size_t total_stored() const {
        std::size_t n = 0;
        for (const auto& [c, s] : stores_) n += s.size();
        return n;
    }

    /// One update call per task: count the current classes, then pick every
    /// known absent class whose count exceeds tau and whose empirical
    /// frequency sits inside [nu_low, nu_high]. Picking a class counts as an
    /// occurrence of it.
    std::vector<int> select_replay_classes(const ClassSet& current) {
        ++nb_batch_;
        for (int c : current) counts_[c] += 1;
        std::vector<int> to_replay;
        for (auto& [cls, count] : counts_) {
            if (class_set_contains(current, cls)) continue;
            const double freq = static_cast<double>(count) / nb_batch_;
            if (count > config_.tau && freq >= config_.nu_low && freq <= config_.nu_high) {
                to_replay.push_back(cls);
                if (config_.count_selection) count += 1;
            }
        }
        return to_replay;
    }

    /// Number of stored samples renewed on the o-th visit of a class:
    /// max(n/o, n/20), rounded up, capped at capacity.
    int renewal_count(int o) const {
        if (o < 1) throw std::invalid_argument("renewal_count: o must be >= 1");
        const double n = static_cast<double>(config_.capacity);
        const auto r = static_cast<int>(
            std::max(std::ceil(n / o), std::ceil(n / 20.0)));
        return std::min(r, config_.capacity);
    }

    /// Renew a class store from the fresh samples of the current task: fill
    /// up to capacity first, then replace uniformly chosen stored rows with
    /// distinct fresh rows. The renewal count is capped at the number of
    /// fresh samples available.
    void renew_class_store(int cls, const Matrix& fresh, int o, Rng& rng) {
        if (fresh.rows == 0) return;
        if (fresh.cols != input_dim_)
            throw std::invalid_argument("renew_class_store: sample width mismatch");
        auto& store = stores_[cls];
        const auto cap = static_cast<std::size_t>(config_.capacity);
        const std::size_t old_size = store.size();
        std::size_t budget =
            std::min(static_cast<std::size_t>(renewal_count(o)), fresh.rows);
        std::vector<int> fresh_ids(fresh.rows);
        std::iota(fresh_ids.begin(), fresh_ids.end(), 0);
        std::shuffle(fresh_ids.begin(), fresh_ids.end(), rng);
        std::size_t next_fresh = 0;
        while (store.size() < cap && budget > 0) {
            store.push_back(take_row(fresh, static_cast<std::size_t>(fresh_ids[next_fresh++])));
            --budget;
        }
        if (budget == 0) return;
        // remaining budget replaces previously stored rows, never the ones
        // just added
        std::vector<int> victims(old_size);
        std::iota(victims.begin(), victims.end(), 0);
        std::shuffle(victims.begin(), victims.end(), rng);
        for (std::size_t i = 0; i < budget && i < victims.size(); ++i)
            store[static_cast<std::size_t>(victims[i])] =
                take_row(fresh, static_cast<std::size_t>(fresh_ids[next_fresh++]));
    }

    /// Record that every class of the current task occurred, renewing each
    /// class's store from the task's training rows.
    void update_stores(const ClassSet& current, const TrainSet& task_set, Rng& rng) {
        for (int cls : current) {
            std::vector<int> rows;
            for (std::size_t i = 0; i < task_set.targets.size(); ++i)
                if (task_set.targets[i] == cls) rows.push_back(static_cast<int>(i));
            if (rows.empty()) continue;
            Matrix fresh = task_set.inputs.gather_rows(rows);
            renew_class_store(cls, fresh, ++renew_o_[cls], rng);
        }
    }

    /// Buffer state as a named-tensor container plus integer counter maps.
    nlohmann::json to_checkpoint() const {
        std::vector<Tensor> tensors;
        for (const auto& [cls, rows] : stores_) {
            Tensor t("class_" + std::to_string(cls), {rows.size(), input_dim_});
            for (std::size_t r = 0; r < rows.size(); ++r)
                std::copy(rows[r].begin(), rows[r].end(),
                          t.data.begin() + static_cast<std::ptrdiff_t>(r * input_dim_));
            tensors.push_back(std::move(t));
        }
        return {{"tensors", tensors_to_json(tensors)},
                {"counts", counts_},
                {"renewal_occurrences", renew_o_},
                {"nb_batch", nb_batch_}};
    }

    void restore_checkpoint(const nlohmann::json& j) {
        stores_.clear();
        for (const auto& t : tensors_from_json(j.at("tensors"))) {
            const int cls = std::stoi(t.name.substr(t.name.find('_') + 1));
            auto& rows = stores_[cls];
            rows.assign(t.shape[0], std::vector<double>(input_dim_));
            for (std::size_t r = 0; r < t.shape[0]; ++r)
                std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(r * input_dim_),
                          t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * input_dim_),
                          rows[r].begin());
        }
        counts_ = j.at("counts").get<std::map<int, int>>();
        renew_o_ = j.at("renewal_occurrences").get<std::map<int, int>>();
        nb_batch_ = j.at("nb_batch").get<int>();
    }

    /// Test hook: preset the occurrence bookkeeping without touching stores.
    void preset_counts(std::map<int, int> counts, int nb_batch) {
        counts_ = std::move(counts);
        nb_batch_ = nb_batch;
    }

private:
    static std::vector<double> take_row(const Matrix& m, std::size_t r) {
        const auto row = m.row(r);
        return {row.begin(), row.end()};
    }

    ReplayConfig config_;
    std::size_t input_dim_;
    std::map<int, std::vector<std::vector<double>>> stores_;
    std::map<int, int> counts_;   // C_dict: per-class occurrence counts
    std::map<int, int> renew_o_;  // per-class visits of the renewal path
    int nb_batch_ = 0;
};

/// Budget-matched random baseline: pick stored non-current classes uniformly
/// so that the long-run mean picks per task equals budget_ratio * |current|.
inline std::vector<int> random_replay_budgeted(const ReplayBuffer& buf,
                                               const ClassSet& current,
                                               double budget_ratio, Rng& rng) {
    if (budget_ratio < 0.0)
        throw std::invalid_argument("random_replay_budgeted: budget_ratio must be >= 0");
    std::vector<int> eligible;
    for (const auto& [cls, o] : buf.renewal_occurrences())
        if (buf.has_store(cls) && !class_set_contains(current, cls)) eligible.push_back(cls);
    const double target = budget_ratio * static_cast<double>(current.size());
    auto want = static_cast<std::size_t>(target);
    if (uniform01(rng) < target - static_cast<double>(want)) ++want;
    want = std::min(want, eligible.size());
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(want);
    std::sort(eligible.begin(), eligible.end());
    return eligible;
}

/// Merge the task's samples with the stored samples of the replayed classes,
/// repeating stored rows (with wraparound) until every replayed class
/// contributes the task's mean per-class sample count.
inline TrainSet merge_with_oversampling(const TrainSet& task_set, const ClassSet& task_classes,
                                        const std::vector<int>& replay_classes,
                                        const ReplayBuffer& buf) {
    if (replay_classes.empty()) return task_set;
    if (task_classes.empty())
        throw std::invalid_argument("merge_with_oversampling: empty task class set");
    const std::size_t per_class =
        (task_set.size() + task_classes.size() / 2) / task_classes.size();
    TrainSet merged;
    const std::size_t extra = per_class * replay_classes.size();
    merged.inputs = Matrix(task_set.size() + extra, task_set.inputs.cols);
    std::copy(task_set.inputs.data.begin(), task_set.inputs.data.end(),
              merged.inputs.data.begin());
    merged.targets = task_set.targets;
    merged.targets.reserve(task_set.size() + extra);
    std::size_t write = task_set.size();
    for (int cls : replay_classes) {
        if (!buf.has_store(cls))
            throw std::runtime_error("merge_with_oversampling: empty store for class " +
                                     std::to_string(cls));
        const auto& store = buf.store(cls);
        for (std::size_t i = 0; i < per_class; ++i, ++write) {
            const auto& row = store[i % store.size()];
            std::copy(row.begin(), row.end(), merged.inputs.row(write).begin());
            merged.targets.push_back(cls);
        }
    }
    return merged;
}

// ---------------------------------------------------------------------------
// Replay compute accounting
// ---------------------------------------------------------------------------

struct ComputeLedger {
    std::uint64_t base_class_slots = 0;      // classes processed by plain training
    std::uint64_t replayed_class_slots = 0;  // classes processed because of replay

    void add_task(std::size_t task_classes, std::size_t replayed_classes) {
        base_class_slots += task_classes;
        replayed_class_slots += replayed_classes;
    }
};

/// Total compute relative to plain fine-tuning: (base + replayed) / base.
inline double compute_overhead(const ComputeLedger& ledger) {
    if (ledger.base_class_slots == 0)
        throw std::domain_error("compute_overhead: no base compute recorded");
    return static_cast<double>(ledger.base_class_slots + ledger.replayed_class_slots) /
           static_cast<double>(ledger.base_class_slots);
}

}  // namespace clstream
