#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clstream/config.hpp"
#include "clstream/dataset.hpp"
#include "clstream/learner.hpp"
#include "clstream/metrics.hpp"
#include "clstream/replay.hpp"
#include "clstream/stream.hpp"

namespace clstream {

// ---------------------------------------------------------------------------
// Dataset resolution
// ---------------------------------------------------------------------------

struct RunData {
    LabeledDataset train;
    LabeledDataset test;
    std::string signature;  // part of the IID cache key
};

/// Materialize the configured dataset for one seed. Blob data is generated
/// per seed; IDX data is fixed. Both are restricted to the scenario's N.
inline RunData resolve_dataset(const RunConfig& cfg, std::uint64_t seed) {
    RunData data;
    if (cfg.dataset.kind == DatasetConfig::Kind::blob) {
        const std::uint64_t dseed = mix_seed(seed, static_cast<std::uint64_t>(RngStream::dataset));
        BlobDataset blobs =
            make_blob_dataset(cfg.dataset.classes, cfg.dataset.samples_per_class,
                              cfg.dataset.input_dim, cfg.dataset.separation, dseed);
        data.train = std::move(blobs.train);
        data.test = std::move(blobs.test);
        std::ostringstream sig;
        sig << "blob:c" << cfg.dataset.classes << ":s" << cfg.dataset.samples_per_class
            << ":d" << cfg.dataset.input_dim << ":sep" << cfg.dataset.separation
            << ":seed" << dseed;
        data.signature = sig.str();
    } else {
        data.train = load_idx_dataset(cfg.dataset.train_images, cfg.dataset.train_labels);
        data.test = load_idx_dataset(cfg.dataset.test_images, cfg.dataset.test_labels);
        data.test.split = Split::test;
        data.signature = "idx:" + cfg.dataset.train_images + ":" + cfg.dataset.test_images;
    }
    const int n = cfg.resolved_total_classes();
    if (n < data.train.num_classes) {
        data.train = subset_classes(data.train, n);
        data.test = subset_classes(data.test, n);
        data.signature += ":n" + std::to_string(n);
    } else if (n > data.train.num_classes) {
        throw std::invalid_argument("config: total_classes exceeds the dataset's class count");
    }
    return data;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline std::string format_acc(double v) {
    if (!std::isfinite(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string join_classes(const ClassSet& classes) {
    std::string out;
    for (int c : classes) {
        if (!out.empty()) out += ';';
        out += std::to_string(c);
    }
    return out;
}

/// Append-only CSV sink, flushed per row so a killed run leaves a valid prefix.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& header) : out_(path) {
        if (!out_) throw std::runtime_error("cannot open output file: " + path);
        out_ << header << '\n';
        out_.flush();
    }
    void row(const std::string& line) {
        out_ << line << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

inline std::string run_csv_header() {
    return "seed,task,overall_acc,iid_norm_acc,local_forgetting,gradient_steps_cum,"
           "samples_cum,replayed_count_cum,classes_in_task";
}

inline std::string perclass_csv_header(int num_classes) {
    std::string h = "seed,task";
    for (int c = 0; c < num_classes; ++c) h += ",c" + std::to_string(c);
    return h;
}

// ---------------------------------------------------------------------------
// IID baseline
// ---------------------------------------------------------------------------

inline std::string iid_cache_key(const RunConfig& cfg, const std::string& dataset_signature,
                                 std::uint64_t seed) {
    std::ostringstream key;
    key << dataset_signature << "|arch=" << cfg.arch << ":k" << cfg.width_multiplier;
    if (cfg.arch == "mlp") {
        key << ":h";
        for (int h : cfg.hidden) key << h << "_";
    }
    key << "|epochs=" << cfg.iid_epochs << "|batch=" << cfg.batch_size << "|seed=" << seed;
    return key.str();
}

/// Train the configured architecture on the uniformly shuffled full training
/// split with Adam defaults and return the best test accuracy over the epoch
/// budget. Results are cached on disk keyed by (dataset, architecture, seed).
inline double run_iid_baseline(const RunConfig& cfg, const RunData& data, std::uint64_t seed) {
    const std::string key = iid_cache_key(cfg, data.signature, seed);
    const std::string cache_path = cfg.iid_baseline == "reuse"
                                       ? cfg.iid_path
                                       : cfg.out_prefix + ".iidcache.json";
    nlohmann::json cache = nlohmann::json::object();
    {
        std::ifstream in(cache_path);
        if (in) in >> cache;
    }
    if (cache.contains(key)) return cache.at(key).get<double>();
    if (cfg.iid_baseline == "reuse")
        throw std::runtime_error("IID baseline reuse: key not found in " + cfg.iid_path +
                                 ": " + key);

    Network net(cfg.architecture(data.train.input_dim()), cfg.resolved_total_classes(),
                mix_seed(seed, static_cast<std::uint64_t>(RngStream::iid)));
    OptimizerRecipe adam;
    adam.kind = OptimizerRecipe::Kind::adam;
    adam.lr = 0.001;
    OptimizerState opt(adam, net);
    Rng rng = make_rng(seed, RngStream::iid);

    TrainSet all;
    all.inputs = data.train.features;
    all.targets = data.train.labels;
    double best = 0.0;
    for (int e = 0; e < cfg.iid_epochs; ++e) {
        train_on_set(net, opt, all, 1, cfg.batch_size, false, rng);
        best = std::max(best, evaluate(net, data.test).overall);
    }

    if (std::filesystem::path(cache_path).has_parent_path())
        std::filesystem::create_directories(std::filesystem::path(cache_path).parent_path());
    cache[key] = best;
    std::ofstream out(cache_path);
    if (!out) throw std::runtime_error("cannot write IID cache: " + cache_path);
    out << cache.dump(1);
    return best;
}

// ---------------------------------------------------------------------------
// Scenario execution
// ---------------------------------------------------------------------------

struct SeedResult {
    std::uint64_t seed = 0;
    MetricsLog log;
    ComputeLedger ledger;
    double iid_accuracy = 0.0;
    std::optional<std::string> failure;
};

namespace detail {

inline bool should_evaluate(int t, int num_tasks, int stride) {
    // the final 20 tasks are always evaluated so trailing averages are exact
    return t % stride == 0 || t >= num_tasks - 20 || t == num_tasks - 1;
}

}  // namespace detail

/// Execute one seed of the configured scenario: sample task, select replay,
/// merge, train, evaluate, log.
inline SeedResult run_single_seed(const RunConfig& cfg, std::uint64_t seed,
                                  CsvWriter* csv = nullptr, CsvWriter* perclass = nullptr) {
    SeedResult result;
    result.seed = seed;

    RunData data = resolve_dataset(cfg, seed);
    result.iid_accuracy = run_iid_baseline(cfg, data, seed);
    result.log.set_iid_accuracy(result.iid_accuracy);

    const ScenarioSpec spec = cfg.scenario(seed);
    StreamGenerator stream(spec, data.train);
    Network net(cfg.architecture(data.train.input_dim()), spec.total_classes,
                mix_seed(seed, static_cast<std::uint64_t>(RngStream::init)));
    OptimizerState opt(cfg.optimizer(), net);
    Rng train_rng = make_rng(seed, RngStream::train);
    Rng replay_rng = make_rng(seed, RngStream::replay);

    ReplayConfig rc;
    rc.nu_low = cfg.replay.nu_low;
    rc.nu_high = cfg.replay.nu_high;
    rc.tau = cfg.replay.tau;
    rc.capacity = cfg.replay.capacity;
    rc.count_selection = cfg.replay.count_selection;
    std::optional<ReplayBuffer> buffer;
    if (cfg.replay.kind != ReplaySettings::Kind::none)
        buffer.emplace(rc, data.train.input_dim());

    std::uint64_t steps_cum = 0, samples_cum = 0, replayed_cum = 0;

    for (int t = 0; t < spec.num_tasks; ++t) {
        const TaskSpec task = stream.next();
        TrainSet task_set = build_train_set(data.train, task);

        std::vector<int> replayed;
        if (buffer) {
            if (cfg.replay.kind == ReplaySettings::Kind::frequency)
                replayed = buffer->select_replay_classes(task.classes);
            else
                replayed = random_replay_budgeted(*buffer, task.classes,
                                                  cfg.replay.budget_ratio, replay_rng);
        }
        result.ledger.add_task(task.classes.size(), replayed.size());
        replayed_cum += replayed.size();

        TrainSet train_set = buffer && !replayed.empty()
                                 ? merge_with_oversampling(task_set, task.classes, replayed,
                                                           *buffer)
                                 : std::move(task_set);
        if (buffer) {
            // store the fresh task rows only (the leading block of the merge)
            TrainSet fresh;
            fresh.inputs = Matrix(task.sample_ids.size(), train_set.inputs.cols);
            std::copy(train_set.inputs.data.begin(),
                      train_set.inputs.data.begin() +
                          static_cast<std::ptrdiff_t>(task.sample_ids.size() *
                                                      train_set.inputs.cols),
                      fresh.inputs.data.begin());
            fresh.targets.assign(train_set.targets.begin(),
                                 train_set.targets.begin() +
                                     static_cast<std::ptrdiff_t>(task.sample_ids.size()));
            buffer->update_stores(task.classes, fresh, replay_rng);
        }

        const TrainStats stats = train_on_set(net, opt, train_set, cfg.epochs_per_task,
                                              cfg.batch_size, cfg.masking, train_rng);
        steps_cum += stats.gradient_steps;
        samples_cum += stats.samples_processed;

        if (!detail::should_evaluate(t, spec.num_tasks, cfg.eval_stride)) continue;

        const EvalResult eval = evaluate(net, data.test);
        TaskRecord rec;
        rec.task = t;
        rec.overall_acc = eval.overall;
        rec.per_class_acc = eval.per_class;
        rec.classes = task.classes;
        rec.gradient_steps = steps_cum;
        rec.cumulative_samples = samples_cum;
        rec.replayed_count = replayed_cum;

        std::optional<double> forg;
        if (!result.log.empty())
            forg = local_forgetting_between(result.log.records().back(), rec);
        result.log.append(rec);

        if (csv) {
            std::ostringstream row;
            row << seed << ',' << t << ',' << format_acc(eval.overall) << ','
                << format_acc(eval.overall / result.iid_accuracy) << ','
                << (forg ? format_acc(*forg) : "nan") << ',' << steps_cum << ','
                << samples_cum << ',' << replayed_cum << ',' << join_classes(task.classes);
            csv->row(row.str());
        }
        if (perclass) {
            std::ostringstream row;
            row << seed << ',' << t;
            for (double a : eval.per_class) row << ',' << format_acc(a);
            perclass->row(row.str());
        }
    }
    return result;
}

/// Run every seed of the sweep, isolating per-seed failures, and emit the
/// combined CSV pair under the configured output prefix.
inline std::vector<SeedResult> run_scenario(const RunConfig& cfg) {
    cfg.validate();
    const auto prefix_path = std::filesystem::path(cfg.out_prefix);
    if (prefix_path.has_parent_path())
        std::filesystem::create_directories(prefix_path.parent_path());
    CsvWriter csv(cfg.out_prefix + ".csv", run_csv_header());
    CsvWriter perclass(cfg.out_prefix + ".perclass.csv",
                       perclass_csv_header(cfg.resolved_total_classes()));
    std::vector<SeedResult> results;
    for (const std::uint64_t seed : cfg.seeds) {
        try {
            results.push_back(run_single_seed(cfg, seed, &csv, &perclass));
        } catch (const std::exception& e) {
            std::string msg = e.what();
            for (auto& ch : msg)
                if (ch == ',' || ch == '\n' || ch == '\r') ch = ' ';
            csv.row(std::to_string(seed) + ",-1,nan,nan,nan,0,0,0,ERROR:" + msg);
            SeedResult failed;
            failed.seed = seed;
            failed.failure = e.what();
            results.push_back(std::move(failed));
        }
    }
    return results;
}

// ---------------------------------------------------------------------------
// Fixed-sequence repetition mode
// ---------------------------------------------------------------------------

/// Accuracy on a materialized set with argmax restricted to the given classes.
inline double restricted_train_accuracy(const Network& net, const TrainSet& set,
                                        const ClassSet& classes) {
    const Matrix logits = net.forward(set.inputs);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const auto row = logits.row(r);
        int best = classes.front();
        for (int c : classes)
            if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(best)]) best = c;
        if (best == set.targets[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows);
}

struct RepeatRunResult {
    MetricsLog log;
    int tasks_not_converged = 0;
    std::vector<double> cycle_mean_accuracy;  // mean overall accuracy per cycle
};

/**
 * Repeat the fixed lexicographic task sequence `cycles` times, training each
 * task until its train accuracy plateaus (change < 0.5 pp over 3 consecutive
 * epochs, capped at 50 epochs).
 */
inline RepeatRunResult run_fixed_sequence_repeats(const RunConfig& cfg, int cycles,
                                                  std::uint64_t seed) {
    if (cycles < 1)
        throw std::invalid_argument("run_fixed_sequence_repeats: cycles must be >= 1");
    if (cfg.sampler != "structured" || cfg.flip_p != 0.0)
        throw std::invalid_argument(
            "run_fixed_sequence_repeats: requires the structured sampler with flip_p = 0");

    RunData data = resolve_dataset(cfg, seed);
    RunConfig local = cfg;
    const auto seq_len = static_cast<int>(
        expected_task_gap(cfg.resolved_total_classes(), cfg.classes_per_task));
    local.tasks = seq_len * cycles;
    const ScenarioSpec spec = local.scenario(seed);
    StreamGenerator stream(spec, data.train);

    Network net(cfg.architecture(data.train.input_dim()), spec.total_classes,
                mix_seed(seed, static_cast<std::uint64_t>(RngStream::init)));
    OptimizerState opt(cfg.optimizer(), net);
    Rng train_rng = make_rng(seed, RngStream::train);

    RepeatRunResult result;
    std::uint64_t steps_cum = 0, samples_cum = 0;
    std::vector<double> cycle_sum(static_cast<std::size_t>(cycles), 0.0);

    constexpr int kMaxEpochs = 50;
    constexpr double kPlateau = 0.005;
    constexpr int kPlateauEpochs = 3;

    for (int t = 0; t < spec.num_tasks; ++t) {
        const TaskSpec task = stream.next();
        const TrainSet set = build_train_set(data.train, task);

        double prev_acc = restricted_train_accuracy(net, set, task.classes);
        int stable = 0;
        bool converged = false;
        for (int e = 0; e < kMaxEpochs; ++e) {
            const TrainStats stats =
                train_on_set(net, opt, set, 1, cfg.batch_size, cfg.masking, train_rng);
            steps_cum += stats.gradient_steps;
            samples_cum += stats.samples_processed;
            const double acc = restricted_train_accuracy(net, set, task.classes);
            stable = std::abs(acc - prev_acc) < kPlateau ? stable + 1 : 0;
            prev_acc = acc;
            if (stable >= kPlateauEpochs) {
                converged = true;
                break;
            }
        }
        if (!converged) ++result.tasks_not_converged;

        const EvalResult eval = evaluate(net, data.test);
        TaskRecord rec;
        rec.task = t;
        rec.overall_acc = eval.overall;
        rec.per_class_acc = eval.per_class;
        rec.classes = task.classes;
        rec.gradient_steps = steps_cum;
        rec.cumulative_samples = samples_cum;
        result.log.append(rec);
        cycle_sum[static_cast<std::size_t>(t / seq_len)] += eval.overall;
    }
    for (double s : cycle_sum)
        result.cycle_mean_accuracy.push_back(s / seq_len);
    return result;
}

}  // namespace clstream
