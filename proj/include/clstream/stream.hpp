#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "clstream/dataset.hpp"
#include "clstream/rng.hpp"

namespace clstream {

/// Sorted vector of distinct class ids.
using ClassSet = std::vector<int>;

inline bool class_set_contains(const ClassSet& s, int c) {
    return std::binary_search(s.begin(), s.end(), c);
}

// ---------------------------------------------------------------------------
// Closed-form frequency and divergence quantities
// ---------------------------------------------------------------------------

/// Expected per-task occurrence frequency of a class under uniform sampling
/// of C distinct classes out of N: 1 - prod_{i=0}^{C-1} (1 - 1/(N-i)).
inline double expected_class_frequency(int total_classes, int classes_per_task) {
    if (classes_per_task < 1 || classes_per_task > total_classes)
        throw std::invalid_argument("expected_class_frequency: need 1 <= C <= N");
    double prod = 1.0;
    for (int i = 0; i < classes_per_task; ++i)
        prod *= 1.0 - 1.0 / static_cast<double>(total_classes - i);
    return 1.0 - prod;
}

/// Expected tasks between two occurrences of a class (reciprocal frequency).
inline double expected_class_tau(int total_classes, int classes_per_task) {
    return 1.0 / expected_class_frequency(total_classes, classes_per_task);
}

/// Frequency estimate for a class of probability p under a non-uniform
/// class distribution: 1 - prod_{i=0}^{C-1} (1 - p*N/(N-i)).
inline double expected_class_frequency_nonuniform(double p, int total_classes,
                                                  int classes_per_task) {
    if (classes_per_task < 1 || classes_per_task > total_classes)
        throw std::invalid_argument("expected_class_frequency_nonuniform: need 1 <= C <= N");
    double prod = 1.0;
    for (int i = 0; i < classes_per_task; ++i) {
        const double factor =
            1.0 - p * static_cast<double>(total_classes) /
                      static_cast<double>(total_classes - i);
        if (factor < 0.0 || factor > 1.0)
            throw std::domain_error(
                "expected_class_frequency_nonuniform: factor outside [0,1] for p=" +
                std::to_string(p));
        prod *= factor;
    }
    return 1.0 - prod;
}

/// Number of distinct tasks binomial(N, C), i.e. the expected gap between
/// exact repeats of the same class subset. Throws on 64-bit overflow.
inline std::uint64_t expected_task_gap(int total_classes, int classes_per_task) {
    if (classes_per_task < 1 || classes_per_task > total_classes)
        throw std::invalid_argument("expected_task_gap: need 1 <= C <= N");
    const std::uint64_t n = static_cast<std::uint64_t>(total_classes);
    std::uint64_t k = static_cast<std::uint64_t>(classes_per_task);
    if (k > n - k) k = n - k;
    std::uint64_t result = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        // multiply by (n-k+i), divide by i; the division is exact because the
        // running value is always a binomial coefficient
        const std::uint64_t num = n - k + i;
        const std::uint64_t g = std::gcd(result, i);
        const std::uint64_t r = result / g;
        const std::uint64_t d = i / g;
        const std::uint64_t num_d = num / d;  // d divides num by construction of C(n,k)
        if (num_d != 0 && r > UINT64_MAX / num_d)
            throw std::overflow_error("expected_task_gap: binomial overflows 64 bits");
        result = r * num_d;
    }
    return result;
}

/// KL divergence between a task-conditional distribution over C of N classes
/// and the IID distribution: log(N/C).
inline double kl_to_iid(int total_classes, int classes_per_task) {
    if (classes_per_task < 1 || classes_per_task > total_classes)
        throw std::invalid_argument("kl_to_iid: need 1 <= C <= N");
    return std::log(static_cast<double>(total_classes) /
                    static_cast<double>(classes_per_task));
}

// ---------------------------------------------------------------------------
// Class distributions and their evolution
// ---------------------------------------------------------------------------

struct NoEvolution {};
struct GammaPenalty {
    double gamma = 1.0;  // >= 1; probability of just-sampled classes is divided by it
};
struct CyclicShift {
    int window = 0;     // W classes visible at a time
    int cycle_len = 0;  // lambda; the window returns to its start every lambda tasks
};
struct ClassRemoval {
    int shift_task = 0;
    ClassSet kept;
};
struct ClassSubstitution {
    int shift_task = 0;
    ClassSet first;
    ClassSet second;
};
using Evolution =
    std::variant<NoEvolution, GammaPenalty, CyclicShift, ClassRemoval, ClassSubstitution>;

/// Shifted window of W contiguous class ids (mod N) at task t. The shift
/// schedule moves N/lambda classes per task when N >= lambda and one class
/// every lambda/N tasks otherwise, making the period exactly lambda.
inline ClassSet cyclic_window_classes(int t, int total_classes, int window, int cycle_len) {
    if (window < 1 || window > total_classes)
        throw std::invalid_argument("cyclic_window_classes: need 1 <= W <= N");
    if (cycle_len < 1) throw std::invalid_argument("cyclic_window_classes: lambda must be >= 1");
    if (total_classes % cycle_len != 0 && cycle_len % total_classes != 0)
        throw std::invalid_argument(
            "cyclic_window_classes: lambda must divide N or be a multiple of N");
    const long long start =
        (static_cast<long long>(t) * total_classes / cycle_len) % total_classes;
    ClassSet out;
    out.reserve(static_cast<std::size_t>(window));
    for (int i = 0; i < window; ++i)
        out.push_back(static_cast<int>((start + i) % total_classes));
    std::sort(out.begin(), out.end());
    return out;
}

/// Probability vector over N classes plus the rule by which it changes
/// between tasks.
struct ClassDistribution {
    std::vector<double> probs;
    int num_classes = 0;
    Evolution evolution = NoEvolution{};
    ClassSet last_sampled;  // classes of the previous task, drives gamma penalty
    int task_counter = 0;

    static ClassDistribution uniform(int n) {
        if (n < 1) throw std::invalid_argument("ClassDistribution: need n >= 1");
        ClassDistribution d;
        d.num_classes = n;
        d.probs.assign(static_cast<std::size_t>(n), 1.0 / n);
        return d;
    }

    void normalize() {
        double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
        if (!(sum > 0.0))
            throw std::runtime_error("ClassDistribution: probability mass vanished");
        for (auto& p : probs) p /= sum;
    }

    int positive_support() const {
        return static_cast<int>(std::count_if(probs.begin(), probs.end(),
                                              [](double p) { return p > 0.0; }));
    }

    /// Bring the distribution up to date for sampling task t.
    void advance(int t) {
        task_counter = t;
        if (auto* gp = std::get_if<GammaPenalty>(&evolution)) {
            if (t > 0 && !last_sampled.empty())
                apply_gamma_penalty_inplace(last_sampled, gp->gamma);
        } else if (auto* cy = std::get_if<CyclicShift>(&evolution)) {
            const ClassSet win = cyclic_window_classes(t, num_classes, cy->window, cy->cycle_len);
            std::fill(probs.begin(), probs.end(), 0.0);
            for (int c : win) probs[static_cast<std::size_t>(c)] = 1.0;
            normalize();
        } else if (auto* rm = std::get_if<ClassRemoval>(&evolution)) {
            if (t >= rm->shift_task) {
                for (int c = 0; c < num_classes; ++c)
                    if (!class_set_contains(rm->kept, c))
                        probs[static_cast<std::size_t>(c)] = 0.0;
                normalize();
            }
        } else if (auto* sub = std::get_if<ClassSubstitution>(&evolution)) {
            const ClassSet& active = (t < sub->shift_task) ? sub->first : sub->second;
            std::fill(probs.begin(), probs.end(), 0.0);
            for (int c : active) probs[static_cast<std::size_t>(c)] = 1.0;
            normalize();
        }
    }

    void apply_gamma_penalty_inplace(const ClassSet& sampled, double gamma) {
        if (gamma < 1.0)
            throw std::invalid_argument("apply_gamma_penalty: gamma must be >= 1");
        for (int c : sampled) {
            if (c < 0 || c >= num_classes)
                throw std::invalid_argument("apply_gamma_penalty: class id out of range");
            probs[static_cast<std::size_t>(c)] /= gamma;
        }
        normalize();
    }
};

/// Divide the probability of just-sampled classes by gamma and renormalize.
inline ClassDistribution apply_gamma_penalty(const ClassDistribution& dist,
                                             const ClassSet& sampled, double gamma) {
    ClassDistribution out = dist;
    out.apply_gamma_penalty_inplace(sampled, gamma);
    return out;
}

/// Imbalanced probability vector: tilt a uniform vector linearly, normalize,
/// raise it elementwise to the entropy-decrease power d, normalize again and
/// shuffle with the given seed. d=0 gives the uniform vector back.
inline std::vector<double> build_mixture_probs(int num_classes, int entropy_decrease,
                                               std::uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("build_mixture_probs: need N >= 2");
    if (entropy_decrease < 0)
        throw std::invalid_argument("build_mixture_probs: need d >= 0");
    const double n = static_cast<double>(num_classes);
    std::vector<double> v(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < num_classes; ++i) {
        v[static_cast<std::size_t>(i)] = 1.0 / n - (1.0 / n) * i * (1.0 / n);
        if (v[static_cast<std::size_t>(i)] < 0.0)
            throw std::runtime_error("build_mixture_probs: negative entry before normalization");
    }
    double sum = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& p : v) p /= sum;
    for (auto& p : v) p = std::pow(p, static_cast<double>(entropy_decrease));
    sum = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& p : v) p /= sum;
    Rng rng(seed);
    std::shuffle(v.begin(), v.end(), rng);
    return v;
}

// ---------------------------------------------------------------------------
// Scenario description and task sampling
// ---------------------------------------------------------------------------

struct UniformSampler {};
struct MixtureSampler {
    int entropy_decrease = 0;
};
struct StructuredSampler {
    double flip_p = 0.0;  // per-class probability of flipping to a random other class
};
struct RestrictedPairsSampler {
    double fraction = 1.0;  // fraction of all possible tasks kept, in (0,1]
};
struct DistractorSampler {
    ClassSet interest;       // classes of the task of interest
    int revisit_period = 0;  // 0 = the interest task never reoccurs after t=0
};
using SamplerKind = std::variant<UniformSampler, MixtureSampler, StructuredSampler,
                                 RestrictedPairsSampler, DistractorSampler>;

struct TransformPolicy {
    enum class Kind { identity, gaussian_noise, pixel_permutation };
    Kind kind = Kind::identity;
    double noise_sigma = 0.0;  // gaussian_noise only; a fresh seed is drawn per task
};

struct ScenarioSpec {
    int total_classes = 0;    // N
    int classes_per_task = 0; // C
    int num_tasks = 0;        // T
    SamplerKind sampler = UniformSampler{};
    Evolution evolution = NoEvolution{};
    TransformPolicy transforms;
    std::uint64_t seed = 0;

    void validate() const {
        if (classes_per_task < 1 || classes_per_task > total_classes)
            throw std::invalid_argument("ScenarioSpec: need 1 <= C <= N");
        if (num_tasks < 1) throw std::invalid_argument("ScenarioSpec: need T >= 1");
        if (const auto* s = std::get_if<StructuredSampler>(&sampler)) {
            if (s->flip_p < 0.0 || s->flip_p > 1.0)
                throw std::invalid_argument("ScenarioSpec: flip_p must be in [0,1]");
            if (classes_per_task != 2)
                throw std::invalid_argument(
                    "ScenarioSpec: the structured sampler is defined for C=2 only");
        }
        if (const auto* s = std::get_if<RestrictedPairsSampler>(&sampler)) {
            if (!(s->fraction > 0.0) || s->fraction > 1.0)
                throw std::invalid_argument("ScenarioSpec: pairs fraction must be in (0,1]");
        }
        if (const auto* s = std::get_if<DistractorSampler>(&sampler)) {
            if (static_cast<int>(s->interest.size()) != classes_per_task)
                throw std::invalid_argument(
                    "ScenarioSpec: distractor interest set must have C classes");
            for (int c : s->interest)
                if (c < 0 || c >= total_classes)
                    throw std::invalid_argument("ScenarioSpec: interest class out of range");
            if (s->revisit_period < 0)
                throw std::invalid_argument("ScenarioSpec: revisit_period must be >= 0");
        }
        if (const auto* g = std::get_if<GammaPenalty>(&evolution)) {
            if (g->gamma < 1.0)
                throw std::invalid_argument("ScenarioSpec: gamma must be >= 1");
        }
        if (const auto* cy = std::get_if<CyclicShift>(&evolution)) {
            // constructor-level feasibility check
            cyclic_window_classes(0, total_classes, cy->window, cy->cycle_len);
        }
        const bool prob_driven = std::holds_alternative<UniformSampler>(sampler) ||
                                 std::holds_alternative<MixtureSampler>(sampler);
        if (!std::holds_alternative<NoEvolution>(evolution) && !prob_driven)
            throw std::invalid_argument(
                "ScenarioSpec: distribution evolution requires a probability-driven sampler");
    }

    ClassDistribution initial_distribution() const {
        ClassDistribution d = ClassDistribution::uniform(total_classes);
        if (const auto* m = std::get_if<MixtureSampler>(&sampler))
            d.probs = build_mixture_probs(total_classes, m->entropy_decrease,
                                          mix_seed(seed, 0x6d786d69u));
        d.evolution = evolution;
        return d;
    }
};

/// One task: its index, class subset, training-sample ids and input transform.
struct TaskSpec {
    int index = 0;
    ClassSet classes;
    std::vector<int> sample_ids;
    InputTransform transform;
};

/// Draw C distinct classes without replacement, proportionally to probs,
/// by the sequential draw-and-remove scheme.
inline ClassSet draw_classes_weighted(const std::vector<double>& probs, int count, Rng& rng) {
    std::vector<int> ids;
    std::vector<double> w;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        if (probs[c] > 0.0) {
            ids.push_back(static_cast<int>(c));
            w.push_back(probs[c]);
        }
    }
    if (static_cast<int>(ids.size()) < count)
        throw std::runtime_error("draw_classes_weighted: fewer than C classes with positive probability");
    ClassSet out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        const double total = std::accumulate(w.begin(), w.end(), 0.0);
        double u = uniform01(rng) * total;
        std::size_t pick = w.size() - 1;
        for (std::size_t j = 0; j < w.size(); ++j) {
            u -= w[j];
            if (u <= 0.0) {
                pick = j;
                break;
            }
        }
        out.push_back(ids[pick]);
        ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(pick));
        w.erase(w.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// All C(N, k) class combinations in lexicographic order. Guarded against
/// blowups; only samplers that genuinely need the enumeration call this.
inline std::vector<ClassSet> enumerate_class_combinations(int total_classes, int count) {
    const std::uint64_t n_tasks = expected_task_gap(total_classes, count);
    if (n_tasks > 2'000'000ull)
        throw std::invalid_argument("enumerate_class_combinations: enumeration too large");
    std::vector<ClassSet> all;
    all.reserve(static_cast<std::size_t>(n_tasks));
    ClassSet cur(static_cast<std::size_t>(count));
    std::iota(cur.begin(), cur.end(), 0);
    while (true) {
        all.push_back(cur);
        int i = count - 1;
        while (i >= 0 && cur[static_cast<std::size_t>(i)] == total_classes - count + i) --i;
        if (i < 0) break;
        ++cur[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < count; ++j)
            cur[static_cast<std::size_t>(j)] = cur[static_cast<std::size_t>(j - 1)] + 1;
    }
    return all;
}

namespace detail {

inline std::vector<int> gather_sample_ids(const LabeledDataset& train, const ClassSet& classes) {
    std::vector<int> ids;
    for (int c : classes) {
        if (c < 0 || c >= train.num_classes)
            throw std::runtime_error("sample_task: class id outside dataset");
        const auto& bucket = train.class_index[static_cast<std::size_t>(c)];
        ids.insert(ids.end(), bucket.begin(), bucket.end());
    }
    return ids;
}

}  // namespace detail

/**
 * Sequential task-stream generator: a pure function of (spec, dataset).
 *
 * Owns the evolving class distribution and all sampler state; one consumer,
 * call next() exactly T times. Independent generators (distinct seeds) share
 * nothing.
 */
class StreamGenerator {
public:
    StreamGenerator(const ScenarioSpec& spec, const LabeledDataset& train)
        : spec_(spec),
          train_(&train),
          dist_(spec.initial_distribution()),
          rng_(make_rng(spec.seed, RngStream::stream)),
          transform_rng_(make_rng(spec.seed, RngStream::transform)) {
        spec_.validate();
        if (spec_.total_classes > train.num_classes)
            throw std::invalid_argument("StreamGenerator: scenario needs more classes than dataset has");
        if (const auto* s = std::get_if<StructuredSampler>(&spec_.sampler)) {
            (void)s;
            enumeration_ = enumerate_class_combinations(spec_.total_classes, spec_.classes_per_task);
        } else if (const auto* r = std::get_if<RestrictedPairsSampler>(&spec_.sampler)) {
            enumeration_ = enumerate_class_combinations(spec_.total_classes, spec_.classes_per_task);
            Rng sub_rng(mix_seed(spec_.seed, 0x70616972u));
            std::shuffle(enumeration_.begin(), enumeration_.end(), sub_rng);
            const auto keep = static_cast<std::size_t>(
                std::ceil(r->fraction * static_cast<double>(enumeration_.size())));
            enumeration_.resize(std::max<std::size_t>(keep, 1));
        }
    }

    const ClassDistribution& distribution() const { return dist_; }
    int current_task() const { return next_t_; }

    TaskSpec next() {
        const int t = next_t_++;
        if (t >= spec_.num_tasks)
            throw std::runtime_error("StreamGenerator: stream exhausted");
        dist_.advance(t);

        TaskSpec task;
        task.index = t;
        bool is_distractor = false;

        if (const auto* s = std::get_if<StructuredSampler>(&spec_.sampler)) {
            task.classes = structured_classes(t, *s);
        } else if (std::get_if<RestrictedPairsSampler>(&spec_.sampler)) {
            task.classes = enumeration_[uniform_index(rng_, enumeration_.size())];
        } else if (const auto* s = std::get_if<DistractorSampler>(&spec_.sampler)) {
            const bool interest_turn =
                (t == 0) || (s->revisit_period > 0 && t % s->revisit_period == 0);
            if (interest_turn) {
                task.classes = s->interest;
            } else {
                is_distractor = true;
                task.classes = distractor_classes(*s);
            }
        } else {
            task.classes = draw_classes_weighted(dist_.probs, spec_.classes_per_task, rng_);
        }

        dist_.last_sampled = task.classes;
        task.sample_ids = detail::gather_sample_ids(*train_, task.classes);
        task.transform = task_transform(is_distractor);
        return task;
    }

private:
    ClassSet structured_classes(int t, const StructuredSampler& s) {
        ClassSet pair = enumeration_[static_cast<std::size_t>(t) % enumeration_.size()];
        if (s.flip_p > 0.0) {
            // decide the flips first, then resolve values against elements
            // that stay fixed; with flip_p=1 this reduces to a plain uniform
            // draw of distinct classes
            std::vector<char> flips(pair.size());
            for (auto& f : flips) f = uniform01(rng_) < s.flip_p;
            for (std::size_t i = 0; i < pair.size(); ++i) {
                if (!flips[i]) continue;
                while (true) {
                    const int cand = static_cast<int>(uniform_index(
                        rng_, static_cast<std::size_t>(spec_.total_classes)));
                    bool clash = false;
                    for (std::size_t j = 0; j < pair.size(); ++j) {
                        if (j == i) continue;
                        const bool fixed = (j < i) || !flips[j];
                        if (fixed && pair[j] == cand) {
                            clash = true;
                            break;
                        }
                    }
                    if (!clash) {
                        pair[i] = cand;
                        break;
                    }
                }
            }
            std::sort(pair.begin(), pair.end());
        }
        return pair;
    }

    ClassSet distractor_classes(const DistractorSampler& s) {
        std::vector<double> probs(static_cast<std::size_t>(spec_.total_classes), 1.0);
        for (int c : s.interest) probs[static_cast<std::size_t>(c)] = 0.0;
        return draw_classes_weighted(probs, spec_.classes_per_task, rng_);
    }

    InputTransform task_transform(bool is_distractor) {
        if (is_distractor)  // distractor tasks always get a fresh permutation
            return InputTransform::pixel_permutation(train_->input_dim(), transform_rng_());
        switch (spec_.transforms.kind) {
            case TransformPolicy::Kind::identity:
                return InputTransform::identity();
            case TransformPolicy::Kind::gaussian_noise:
                return InputTransform::gaussian_noise(spec_.transforms.noise_sigma,
                                                      transform_rng_());
            case TransformPolicy::Kind::pixel_permutation:
                return InputTransform::pixel_permutation(train_->input_dim(), transform_rng_());
        }
        throw std::logic_error("task_transform: unknown policy");
    }

    ScenarioSpec spec_;
    const LabeledDataset* train_;
    ClassDistribution dist_;
    Rng rng_;
    Rng transform_rng_;
    std::vector<ClassSet> enumeration_;
    int next_t_ = 0;
};

/// Single-shot form of the sampler: build a throwaway generator positioned
/// at task t. Convenient for tests; the runner uses StreamGenerator directly.
inline TaskSpec sample_task(const ScenarioSpec& spec, const LabeledDataset& train,
                            int t) {
    StreamGenerator gen(spec, train);
    TaskSpec task;
    for (int i = 0; i <= t; ++i) task = gen.next();
    return task;
}

}  // namespace clstream
