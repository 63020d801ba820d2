#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clstream/dataset.hpp"
#include "clstream/learner.hpp"
#include "clstream/network.hpp"
#include "clstream/replay.hpp"
#include "clstream/stream.hpp"

namespace clstream {

struct DatasetConfig {
    enum class Kind { blob, idx };
    Kind kind = Kind::blob;
    // idx
    std::string train_images, train_labels, test_images, test_labels;
    // blob
    int classes = 10;
    int samples_per_class = 200;
    int input_dim = 32;
    double separation = 4.0;
};

struct ReplaySettings {
    enum class Kind { none, frequency, random };
    Kind kind = Kind::none;
    double nu_low = 0.01;
    double nu_high = 0.1;
    int tau = 3;
    int capacity = 200;
    bool count_selection = true;
    double budget_ratio = 0.2128;  // random replay only
};

/// Declarative description of a full experiment, parsed from a flat
/// key-value file or its JSON mirror.
struct RunConfig {
    DatasetConfig dataset;

    // scenario
    std::optional<int> total_classes;  // defaults to the dataset's class count
    int classes_per_task = 2;
    int tasks = 100;
    std::string sampler = "uniform";
    int entropy_decrease = 0;
    double flip_p = 0.0;
    double pairs_fraction = 1.0;
    std::vector<int> interest_classes;  // empty = drawn per seed
    int revisit_period = 0;
    std::string evolution = "none";
    double gamma = 1.0;
    int cyclic_window = 0;
    int cyclic_cycle = 0;
    int shift_task = 0;
    std::vector<int> kept_classes, first_classes, second_classes;
    std::string transform = "identity";
    double noise_sigma = 0.0;

    // model
    std::string arch = "mlp";
    std::vector<int> hidden = {100};
    int width_multiplier = 1;

    // training
    int epochs_per_task = 1;
    int batch_size = 64;
    bool masking = true;

    // optimizer
    std::string optim_kind = "sgd";
    double lr = 0.01;
    double momentum = 0.9;

    ReplaySettings replay;

    // run
    std::vector<std::uint64_t> seeds = {0};
    int eval_stride = 1;
    std::string out_prefix = "run";
    std::string iid_baseline = "run";  // "run" or "reuse"
    std::string iid_path;              // reuse only
    int iid_epochs = 20;

    void validate() const;

    int resolved_total_classes() const {
        if (total_classes) return *total_classes;
        return dataset.kind == DatasetConfig::Kind::blob ? dataset.classes : 10;
    }

    Architecture architecture(std::size_t input_dim) const {
        if (arch == "mlp")
            return MlpArch{static_cast<int>(input_dim), hidden, width_multiplier};
        if (arch == "cnn") {
            if (input_dim != 784)
                throw std::invalid_argument("config: the cnn expects 28x28 inputs");
            return CnnArch{width_multiplier};
        }
        throw std::invalid_argument("config: unknown arch '" + arch + "'");
    }

    OptimizerRecipe optimizer() const {
        OptimizerRecipe r;
        if (optim_kind == "sgd") r.kind = OptimizerRecipe::Kind::sgd;
        else if (optim_kind == "sgd_momentum") r.kind = OptimizerRecipe::Kind::sgd_momentum;
        else if (optim_kind == "adam") r.kind = OptimizerRecipe::Kind::adam;
        else throw std::invalid_argument("config: unknown optimizer '" + optim_kind + "'");
        r.lr = lr;
        r.momentum = momentum;
        return r;
    }

    /// Scenario for one seed of the sweep; interest classes are drawn from
    /// the seed when not pinned in the config.
    ScenarioSpec scenario(std::uint64_t seed) const {
        ScenarioSpec spec;
        spec.total_classes = resolved_total_classes();
        spec.classes_per_task = classes_per_task;
        spec.num_tasks = tasks;
        spec.seed = seed;

        if (sampler == "uniform") spec.sampler = UniformSampler{};
        else if (sampler == "mixture") spec.sampler = MixtureSampler{entropy_decrease};
        else if (sampler == "structured") spec.sampler = StructuredSampler{flip_p};
        else if (sampler == "restricted_pairs")
            spec.sampler = RestrictedPairsSampler{pairs_fraction};
        else if (sampler == "distractor") {
            ClassSet interest = interest_classes;
            if (interest.empty()) {
                ClassDistribution u = ClassDistribution::uniform(spec.total_classes);
                Rng rng = make_rng(seed, RngStream::probe);
                interest = draw_classes_weighted(u.probs, classes_per_task, rng);
            }
            std::sort(interest.begin(), interest.end());
            spec.sampler = DistractorSampler{interest, revisit_period};
        } else {
            throw std::invalid_argument("config: unknown sampler '" + sampler + "'");
        }

        if (evolution == "none") spec.evolution = NoEvolution{};
        else if (evolution == "gamma_penalty") spec.evolution = GammaPenalty{gamma};
        else if (evolution == "cyclic") spec.evolution = CyclicShift{cyclic_window, cyclic_cycle};
        else if (evolution == "removal") {
            ClassSet kept = kept_classes;
            std::sort(kept.begin(), kept.end());
            spec.evolution = ClassRemoval{shift_task, kept};
        } else if (evolution == "substitution") {
            ClassSet f = first_classes, s = second_classes;
            std::sort(f.begin(), f.end());
            std::sort(s.begin(), s.end());
            spec.evolution = ClassSubstitution{shift_task, f, s};
        } else {
            throw std::invalid_argument("config: unknown evolution '" + evolution + "'");
        }

        if (transform == "identity")
            spec.transforms.kind = TransformPolicy::Kind::identity;
        else if (transform == "gaussian_noise") {
            spec.transforms.kind = TransformPolicy::Kind::gaussian_noise;
            spec.transforms.noise_sigma = noise_sigma;
        } else if (transform == "pixel_permutation")
            spec.transforms.kind = TransformPolicy::Kind::pixel_permutation;
        else
            throw std::invalid_argument("config: unknown transform '" + transform + "'");

        spec.validate();
        return spec;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    return out;
}

inline std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    for (const auto& tok : split(s, ';'))
        if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": '" + s + "'");
}

/// Seed lists accept "a;b;c" and the range form "k..m" (inclusive).
inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    const auto dots = s.find("..");
    std::vector<std::uint64_t> out;
    if (dots != std::string::npos) {
        const auto lo = std::stoull(trim(s.substr(0, dots)));
        const auto hi = std::stoull(trim(s.substr(dots + 2)));
        if (hi < lo) throw std::invalid_argument("config: bad seed range '" + s + "'");
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
        return out;
    }
    for (const auto& tok : split(s, ';'))
        if (!tok.empty()) out.push_back(std::stoull(tok));
    return out;
}

}  // namespace detail

/// Apply one dotted-key assignment. Unknown keys are rejected.
inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_int_list;
    auto ivalue = [&] { return std::stoi(value); };
    auto dvalue = [&] { return std::stod(value); };

    if (key == "dataset.kind") {
        if (value == "blob") cfg.dataset.kind = DatasetConfig::Kind::blob;
        else if (value == "idx") cfg.dataset.kind = DatasetConfig::Kind::idx;
        else throw std::invalid_argument("config: unknown dataset.kind '" + value + "'");
    } else if (key == "dataset.train_images") cfg.dataset.train_images = value;
    else if (key == "dataset.train_labels") cfg.dataset.train_labels = value;
    else if (key == "dataset.test_images") cfg.dataset.test_images = value;
    else if (key == "dataset.test_labels") cfg.dataset.test_labels = value;
    else if (key == "dataset.classes") cfg.dataset.classes = ivalue();
    else if (key == "dataset.samples_per_class") cfg.dataset.samples_per_class = ivalue();
    else if (key == "dataset.input_dim") cfg.dataset.input_dim = ivalue();
    else if (key == "dataset.separation") cfg.dataset.separation = dvalue();
    else if (key == "scenario.total_classes") cfg.total_classes = ivalue();
    else if (key == "scenario.classes_per_task") cfg.classes_per_task = ivalue();
    else if (key == "scenario.tasks") cfg.tasks = ivalue();
    else if (key == "scenario.sampler") cfg.sampler = value;
    else if (key == "scenario.entropy_decrease") cfg.entropy_decrease = ivalue();
    else if (key == "scenario.flip_p") cfg.flip_p = dvalue();
    else if (key == "scenario.pairs_fraction") cfg.pairs_fraction = dvalue();
    else if (key == "scenario.interest_classes") {
        if (value != "random") cfg.interest_classes = parse_int_list(value);
    } else if (key == "scenario.revisit_period") cfg.revisit_period = ivalue();
    else if (key == "scenario.evolution") cfg.evolution = value;
    else if (key == "scenario.gamma") cfg.gamma = dvalue();
    else if (key == "scenario.cyclic_window") cfg.cyclic_window = ivalue();
    else if (key == "scenario.cyclic_cycle") cfg.cyclic_cycle = ivalue();
    else if (key == "scenario.shift_task") cfg.shift_task = ivalue();
    else if (key == "scenario.kept_classes") cfg.kept_classes = parse_int_list(value);
    else if (key == "scenario.first_classes") cfg.first_classes = parse_int_list(value);
    else if (key == "scenario.second_classes") cfg.second_classes = parse_int_list(value);
    else if (key == "scenario.transform") cfg.transform = value;
    else if (key == "scenario.noise_sigma") cfg.noise_sigma = dvalue();
    else if (key == "model.arch") cfg.arch = value;
    else if (key == "model.hidden") cfg.hidden = parse_int_list(value);
    else if (key == "model.width_multiplier") cfg.width_multiplier = ivalue();
    else if (key == "train.epochs_per_task") cfg.epochs_per_task = ivalue();
    else if (key == "train.batch_size") cfg.batch_size = ivalue();
    else if (key == "train.masking") cfg.masking = parse_bool(value, key);
    else if (key == "optim.kind") cfg.optim_kind = value;
    else if (key == "optim.lr") cfg.lr = dvalue();
    else if (key == "optim.momentum") cfg.momentum = dvalue();
    else if (key == "replay.kind") {
        if (value == "none") cfg.replay.kind = ReplaySettings::Kind::none;
        else if (value == "frequency") cfg.replay.kind = ReplaySettings::Kind::frequency;
        else if (value == "random") cfg.replay.kind = ReplaySettings::Kind::random;
        else throw std::invalid_argument("config: unknown replay.kind '" + value + "'");
    } else if (key == "replay.nu_low") cfg.replay.nu_low = dvalue();
    else if (key == "replay.nu_high") cfg.replay.nu_high = dvalue();
    else if (key == "replay.tau") cfg.replay.tau = ivalue();
    else if (key == "replay.capacity") cfg.replay.capacity = ivalue();
    else if (key == "replay.count_selection") cfg.replay.count_selection = parse_bool(value, key);
    else if (key == "replay.budget_ratio") cfg.replay.budget_ratio = dvalue();
    else if (key == "run.seeds") cfg.seeds = detail::parse_seed_list(value);
    else if (key == "run.eval_stride") cfg.eval_stride = ivalue();
    else if (key == "run.out") cfg.out_prefix = value;
    else if (key == "run.iid_baseline") cfg.iid_baseline = value;
    else if (key == "run.iid_path") cfg.iid_path = value;
    else if (key == "run.iid_epochs") cfg.iid_epochs = ivalue();
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

/// Flat "section.key = value" format with '#' comments.
inline RunConfig parse_config_text(std::istream& in) {
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                        " is not a key = value pair");
        apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                           detail::trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

/// JSON mirror: nested objects, e.g. {"replay": {"nu_low": 0.01}}.
inline RunConfig parse_config_json(const nlohmann::json& doc) {
    RunConfig cfg;
    for (const auto& [section, body] : doc.items()) {
        if (!body.is_object())
            throw std::invalid_argument("config: section '" + section + "' must be an object");
        for (const auto& [k, v] : body.items()) {
            std::string text;
            if (v.is_string()) text = v.get<std::string>();
            else if (v.is_boolean()) text = v.get<bool>() ? "true" : "false";
            else if (v.is_array()) {
                std::string joined;
                for (const auto& e : v) {
                    if (!joined.empty()) joined += ';';
                    joined += e.dump();
                }
                text = joined;
            } else text = v.dump();
            apply_config_entry(cfg, section + "." + k, text);
        }
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
        nlohmann::json doc;
        in >> doc;
        return parse_config_json(doc);
    }
    return parse_config_text(in);
}

inline void RunConfig::validate() const {
    if (dataset.kind == DatasetConfig::Kind::blob) {
        if (dataset.classes < 2 || dataset.samples_per_class < 1 || dataset.input_dim < 1 ||
            !(dataset.separation > 0.0))
            throw std::invalid_argument("config: bad blob dataset parameters");
    } else {
        if (dataset.train_images.empty() || dataset.train_labels.empty() ||
            dataset.test_images.empty() || dataset.test_labels.empty())
            throw std::invalid_argument("config: idx dataset needs all four file paths");
    }
    if (tasks < 1) throw std::invalid_argument("config: scenario.tasks must be >= 1");
    if (classes_per_task < 1)
        throw std::invalid_argument("config: scenario.classes_per_task must be >= 1");
    if (total_classes && classes_per_task > *total_classes)
        throw std::invalid_argument("config: classes_per_task exceeds total_classes");
    if (flip_p < 0.0 || flip_p > 1.0)
        throw std::invalid_argument("config: scenario.flip_p must be in [0,1]");
    if (!(pairs_fraction > 0.0) || pairs_fraction > 1.0)
        throw std::invalid_argument("config: scenario.pairs_fraction must be in (0,1]");
    if (gamma < 1.0) throw std::invalid_argument("config: scenario.gamma must be >= 1");
    if (noise_sigma < 0.0)
        throw std::invalid_argument("config: scenario.noise_sigma must be >= 0");
    check_width_multiplier(width_multiplier);
    if (epochs_per_task < 0)
        throw std::invalid_argument("config: train.epochs_per_task must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("config: optim.lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0)
        throw std::invalid_argument("config: optim.momentum must be in [0,1)");
    if (replay.kind != ReplaySettings::Kind::none) {
        if (replay.nu_low < 0.0 || replay.nu_high < replay.nu_low || replay.nu_high > 1.0)
            throw std::invalid_argument("config: need 0 <= nu_low <= nu_high <= 1");
        if (replay.tau < 0) throw std::invalid_argument("config: replay.tau must be >= 0");
        if (replay.capacity < 1)
            throw std::invalid_argument("config: replay.capacity must be >= 1");
        if (replay.kind == ReplaySettings::Kind::random && replay.budget_ratio < 0.0)
            throw std::invalid_argument("config: replay.budget_ratio must be >= 0");
    }
    if (seeds.empty()) throw std::invalid_argument("config: run.seeds must not be empty");
    if (eval_stride < 1) throw std::invalid_argument("config: run.eval_stride must be >= 1");
    if (iid_baseline != "run" && iid_baseline != "reuse")
        throw std::invalid_argument("config: run.iid_baseline must be 'run' or 'reuse'");
    if (iid_baseline == "reuse" && iid_path.empty())
        throw std::invalid_argument("config: run.iid_path required when reusing a baseline");
    if (iid_epochs < 1) throw std::invalid_argument("config: run.iid_epochs must be >= 1");
}

}  // namespace clstream
