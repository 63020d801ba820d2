#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "clstream/dataset.hpp"
#include "clstream/learner.hpp"
#include "clstream/network.hpp"

using namespace clstream;

namespace {

TrainBatch random_batch(Rng& rng, std::size_t b, std::size_t dim, int num_classes) {
    TrainBatch batch;
    batch.inputs = Matrix(b, dim);
    for (auto& v : batch.inputs.data) v = uniform01(rng);
    for (std::size_t i = 0; i < b; ++i)
        batch.targets.push_back(static_cast<int>(uniform_index(rng, num_classes)));
    batch.present_classes = classes_of_targets(batch.targets);
    return batch;
}

// Plain re-implementation of the MLP arithmetic, structured differently from
// the library path on purpose.
std::vector<double> naive_mlp_forward(const Network& net, const std::vector<double>& x) {
    std::vector<double> cur = x;
    const auto& ps = net.params();
    for (std::size_t l = 0; l + 2 < ps.size(); l += 2) {
        const auto& w = ps[l];
        const auto& b = ps[l + 1];
        std::vector<double> next(w.shape[0], 0.0);
        for (std::size_t o = 0; o < w.shape[0]; ++o) {
            double acc = b.data[o];
            for (std::size_t i = 0; i < w.shape[1]; ++i)
                acc += w.data[o * w.shape[1] + i] * cur[i];
            next[o] = std::max(acc, 0.0);
        }
        cur = std::move(next);
    }
    const auto& w = ps[ps.size() - 2];
    const auto& b = ps[ps.size() - 1];
    std::vector<double> out(w.shape[0], 0.0);
    for (std::size_t o = 0; o < w.shape[0]; ++o) {
        double acc = b.data[o];
        for (std::size_t i = 0; i < w.shape[1]; ++i)
            acc += w.data[o * w.shape[1] + i] * cur[i];
        out[o] = acc;
    }
    return out;
}

}  // namespace

TEST_CASE("forward output shape and zero-head behaviour", "[learner][forward]") {
    Network net(MlpArch{7, {5}, 1}, 4, 11);
    Rng rng(0);
    Matrix x(3, 7);
    for (auto& v : x.data) v = uniform01(rng);

    Matrix logits = net.forward(x);
    CHECK(logits.rows == 3);
    CHECK(logits.cols == 4);

    // zero the head: every row becomes constant regardless of input
    auto& ps = net.params();
    std::fill(ps[ps.size() - 2].data.begin(), ps[ps.size() - 2].data.end(), 0.0);
    std::fill(ps[ps.size() - 1].data.begin(), ps[ps.size() - 1].data.end(), 0.0);
    logits = net.forward(x);
    for (std::size_t r = 0; r < logits.rows; ++r)
        for (std::size_t c = 0; c < logits.cols; ++c) CHECK(logits.at(r, c) == 0.0);

    CHECK_THROWS_AS(net.forward(Matrix(2, 6)), std::invalid_argument);
}

TEST_CASE("forward matches an independent re-implementation", "[learner][forward][oracle]") {
    Network net(MlpArch{6, {9, 4}, 1}, 3, 5);
    Rng rng(1);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix x(1, 6);
        for (auto& v : x.data) v = uniform01(rng) * 2.0 - 0.5;
        const Matrix logits = net.forward(x);
        const auto naive = naive_mlp_forward(net, {x.data.begin(), x.data.end()});
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(logits.at(0, c) == Catch::Approx(naive[c]).margin(1e-6));
    }
}

TEST_CASE("cnn forward shape on 28x28 inputs", "[learner][forward][cnn]") {
    Network net(CnnArch{1}, 10, 3);
    CHECK(net.input_dim() == 784);
    Rng rng(2);
    Matrix x(2, 784);
    for (auto& v : x.data) v = uniform01(rng);
    const Matrix logits = net.forward(x);
    CHECK(logits.rows == 2);
    CHECK(logits.cols == 10);
}

TEST_CASE("mask_logits", "[learner][masking]") {
    Matrix logits(1, 3);
    logits.data = {2.0, -1.0, 0.5};
    const Matrix masked = mask_logits(logits, {0, 2});
    CHECK(masked.data == std::vector<double>{2.0, -1e9, 0.5});

    SECTION("present = all classes leaves logits unchanged") {
        CHECK(mask_logits(logits, {0, 1, 2}).data == logits.data);
    }
    SECTION("empty present set is rejected") {
        CHECK_THROWS_AS(mask_logits(logits, {}), std::invalid_argument);
    }
    SECTION("softmax probability of masked entries underflows to exactly zero") {
        const Matrix m = mask_logits(logits, {0, 2});
        const auto row = m.row(0);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        CHECK(std::exp(m.at(0, 1) - mx) / sum == 0.0);
    }
}

TEST_CASE("cross-entropy loss on uniform logits is ln(num classes)", "[learner][loss]") {
    Network net(MlpArch{3, {}, 1}, 2, 7);
    auto& ps = net.params();
    std::fill(ps[0].data.begin(), ps[0].data.end(), 0.0);
    std::fill(ps[1].data.begin(), ps[1].data.end(), 0.0);
    TrainBatch batch;
    batch.inputs = Matrix(1, 3, 0.25);
    batch.targets = {0};
    batch.present_classes = {0};
    const auto lg = loss_and_grads(net, batch, false);
    CHECK(lg.loss == Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("masking zeroes head gradients of absent classes exactly",
          "[learner][masking][grads]") {
    Rng rng(3);
    Network net(MlpArch{5, {6}, 1}, 10, 13);
    TrainBatch batch;
    batch.inputs = Matrix(4, 5);
    for (auto& v : batch.inputs.data) v = uniform01(rng);
    batch.targets = {3, 7, 3, 7};
    batch.present_classes = {3, 7};

    const auto lg = loss_and_grads(net, batch, true);
    const auto& ps = net.params();
    const Tensor& dh_w = lg.grads[ps.size() - 2];
    const Tensor& dh_b = lg.grads[ps.size() - 1];
    for (int c = 0; c < 10; ++c) {
        if (c == 3 || c == 7) continue;
        for (std::size_t i = 0; i < dh_w.shape[1]; ++i)
            CHECK(dh_w.data[static_cast<std::size_t>(c) * dh_w.shape[1] + i] == 0.0);
        CHECK(dh_b.data[static_cast<std::size_t>(c)] == 0.0);
    }
    // present rows do receive gradient
    double norm = 0.0;
    for (std::size_t i = 0; i < dh_w.shape[1]; ++i)
        norm += std::abs(dh_w.data[3 * dh_w.shape[1] + i]);
    CHECK(norm > 0.0);
}

TEST_CASE("masked head parameters are bit-identical after an sgd step",
          "[learner][masking][property]") {
    Rng rng(4);
    for (int rep = 0; rep < 25; ++rep) {
        const int n = 4 + static_cast<int>(uniform_index(rng, 6));
        Network net(MlpArch{6, {5}, 1}, n, rng());
        TrainBatch batch = random_batch(rng, 1 + uniform_index(rng, 6), 6, 2);
        OptimizerState opt({OptimizerRecipe::Kind::sgd, 0.1}, net);

        const auto before = net.params();
        const auto lg = loss_and_grads(net, batch, true);
        opt.step(net, lg.grads);
        const auto& after = net.params();
        const std::size_t hw = before.size() - 2;
        const std::size_t in_dim = before[hw].shape[1];
        for (int c = 0; c < n; ++c) {
            if (class_set_contains(batch.present_classes, c)) continue;
            for (std::size_t i = 0; i < in_dim; ++i) {
                const auto idx = static_cast<std::size_t>(c) * in_dim + i;
                CHECK(after[hw].data[idx] == before[hw].data[idx]);
            }
            CHECK(after[hw + 1].data[static_cast<std::size_t>(c)] ==
                  before[hw + 1].data[static_cast<std::size_t>(c)]);
        }
    }
}

TEST_CASE("optimizer updates follow their defining recurrences", "[learner][optimizer]") {
    Network net(MlpArch{1, {}, 1}, 2, 1);
    auto& ps = net.params();

    SECTION("sgd: theta <- theta - lr * g") {
        ps[0].data = {1.0, 1.0};
        ps[1].data = {0.0, 0.0};
        auto grads = net.zero_grads();
        grads[0].data = {0.5, 0.5};
        OptimizerState opt({OptimizerRecipe::Kind::sgd, 0.1}, net);
        opt.step(net, grads);
        CHECK(ps[0].data[0] == Catch::Approx(0.95).epsilon(1e-12));
    }
    SECTION("momentum: two identical unit gradients give -(1 + 1.9)") {
        ps[0].data = {0.0, 0.0};
        ps[1].data = {0.0, 0.0};
        auto grads = net.zero_grads();
        grads[0].data = {1.0, 1.0};
        OptimizerRecipe r;
        r.kind = OptimizerRecipe::Kind::sgd_momentum;
        r.lr = 1.0;
        r.momentum = 0.9;
        OptimizerState opt(r, net);
        opt.step(net, grads);
        CHECK(ps[0].data[0] == Catch::Approx(-1.0).epsilon(1e-12));
        opt.step(net, grads);
        CHECK(ps[0].data[0] == Catch::Approx(-2.9).epsilon(1e-12));
    }
    SECTION("adam with zero gradient and zero buffers is a no-op") {
        ps[0].data = {0.7, -0.3};
        const auto before = ps[0].data;
        auto grads = net.zero_grads();
        OptimizerRecipe r;
        r.kind = OptimizerRecipe::Kind::adam;
        r.lr = 0.01;
        OptimizerState opt(r, net);
        opt.step(net, grads);
        CHECK(ps[0].data == before);
    }
    SECTION("shape mismatch is rejected") {
        auto grads = net.zero_grads();
        grads.pop_back();
        OptimizerState opt({OptimizerRecipe::Kind::sgd, 0.1}, net);
        CHECK_THROWS_AS(opt.step(net, grads), std::invalid_argument);
    }
}

TEST_CASE("train_task bookkeeping", "[learner][train]") {
    const BlobDataset blobs = make_blob_dataset(4, 25, 6, 5.0, 9);
    ScenarioSpec spec;
    spec.total_classes = 4;
    spec.classes_per_task = 2;
    spec.num_tasks = 1;
    spec.seed = 5;
    StreamGenerator gen(spec, blobs.train);
    const TaskSpec task = gen.next();
    REQUIRE(task.sample_ids.size() == 50);

    Network net(MlpArch{6, {8}, 1}, 4, 2);
    OptimizerState opt({OptimizerRecipe::Kind::sgd, 0.05}, net);
    Rng rng(6);

    SECTION("epochs = 0 leaves the network untouched") {
        const auto before = net.params();
        const TrainStats stats = train_task(net, opt, task, blobs.train, 0, 16, true, rng);
        CHECK(stats.gradient_steps == 0);
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(net.params()[i].data == before[i].data);
    }
    SECTION("step count is ceil(samples / batch) per epoch") {
        const TrainStats stats = train_task(net, opt, task, blobs.train, 1, 32, true, rng);
        CHECK(stats.gradient_steps == 2);  // ceil(50/32)
        CHECK(stats.samples_processed == 50);
        const TrainStats stats3 = train_task(net, opt, task, blobs.train, 3, 16, true, rng);
        CHECK(stats3.gradient_steps == 3 * 4);  // ceil(50/16) = 4
    }
    SECTION("training to convergence separates the task's classes") {
        train_task(net, opt, task, blobs.train, 60, 16, true, rng);
        const TrainSet set = build_train_set(blobs.train, task);
        const Matrix logits = net.forward(set.inputs);
        std::size_t correct = 0;
        for (std::size_t r = 0; r < logits.rows; ++r) {
            int best = task.classes[0];
            for (int c : task.classes)
                if (logits.at(r, static_cast<std::size_t>(c)) >
                    logits.at(r, static_cast<std::size_t>(best)))
                    best = c;
            if (best == set.targets[r]) ++correct;
        }
        CHECK(static_cast<double>(correct) / logits.rows > 0.99);
    }
}

TEST_CASE("training is bit-deterministic given equal seeds", "[learner][determinism]") {
    const BlobDataset blobs = make_blob_dataset(4, 20, 5, 3.0, 12);
    ScenarioSpec spec;
    spec.total_classes = 4;
    spec.classes_per_task = 2;
    spec.num_tasks = 3;
    spec.seed = 8;

    auto run_once = [&] {
        StreamGenerator gen(spec, blobs.train);
        Network net(MlpArch{5, {7}, 1}, 4, 77);
        OptimizerState opt({OptimizerRecipe::Kind::sgd, 0.03}, net);
        Rng rng(31);
        for (int t = 0; t < spec.num_tasks; ++t)
            train_task(net, opt, gen.next(), blobs.train, 2, 8, true, rng);
        return net.params();
    };
    const auto a = run_once();
    const auto b = run_once();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].data == b[i].data);
}

TEST_CASE("parameter count is strictly increasing in the width multiplier",
          "[learner][width][property]") {
    std::size_t prev_mlp = 0, prev_cnn = 0;
    for (int k : {1, 2, 4, 8, 16}) {
        const Network mlp(MlpArch{12, {16}, k}, 5, 0);
        const Network cnn(CnnArch{k}, 5, 0);
        CHECK(mlp.param_count() > prev_mlp);
        CHECK(cnn.param_count() > prev_cnn);
        prev_mlp = mlp.param_count();
        prev_cnn = cnn.param_count();
    }
    CHECK_THROWS_AS(Network(MlpArch{4, {4}, 3}, 3, 0), std::invalid_argument);
}

TEST_CASE("evaluate", "[learner][evaluate]") {
    const BlobDataset blobs = make_blob_dataset(10, 200, 32, 4.0, 21);

    SECTION("random weights sit near chance on a balanced test set") {
        double sum = 0.0;
        for (std::uint64_t s = 0; s < 5; ++s) {
            Network net(MlpArch{32, {12}, 1}, 10, 100 + s);
            sum += evaluate(net, blobs.test).overall;
        }
        CHECK(sum / 5 == Catch::Approx(0.1).margin(0.05));
    }
    SECTION("iid training on separable blobs reaches 0.95") {
        Network net(MlpArch{32, {64}, 1}, 10, 1);
        OptimizerRecipe adam;
        adam.kind = OptimizerRecipe::Kind::adam;
        adam.lr = 0.001;
        OptimizerState opt(adam, net);
        Rng rng(2);
        TrainSet all{blobs.train.features, blobs.train.labels};
        for (int e = 0; e < 30; ++e) train_on_set(net, opt, all, 1, 64, false, rng);
        CHECK(evaluate(net, blobs.test).overall >= 0.95);
    }
    SECTION("overall equals the class-frequency-weighted mean of per-class accuracy") {
        Network net(MlpArch{32, {12}, 1}, 10, 3);
        const EvalResult res = evaluate(net, blobs.test);
        double weighted = 0.0;
        for (std::size_t c = 0; c < res.per_class.size(); ++c)
            weighted += res.per_class[c] * res.per_class_total[c];
        weighted /= static_cast<double>(blobs.test.num_samples());
        CHECK(res.overall == Catch::Approx(weighted).margin(1e-12));
    }
}

TEST_CASE("linear iid training separates two far blobs to 99%", "[learner][evaluate]") {
    const BlobDataset blobs = make_blob_dataset(2, 50, 8, 10.0, 0);
    Network net(MlpArch{8, {}, 1}, 2, 4);  // no hidden layer: a linear classifier
    OptimizerState opt({OptimizerRecipe::Kind::sgd, 0.1}, net);
    Rng rng(5);
    TrainSet all{blobs.train.features, blobs.train.labels};
    for (int e = 0; e < 60; ++e) train_on_set(net, opt, all, 1, 16, false, rng);
    CHECK(evaluate(net, blobs.test).overall >= 0.99);
}

TEST_CASE("checkpoints round-trip through the named tensor list", "[learner][checkpoint]") {
    Network net(MlpArch{5, {6}, 2}, 3, 9);
    const auto dir = std::filesystem::temp_directory_path() / "clstream_ckpt";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "net.json").string();
    save_tensors(net.params(), path);

    Network other(MlpArch{5, {6}, 2}, 3, 10);
    REQUIRE(other.params()[0].data != net.params()[0].data);
    auto loaded = load_tensors(path);
    REQUIRE(loaded.size() == other.params().size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        REQUIRE(loaded[i].shape == other.params()[i].shape);
        other.params()[i] = loaded[i];
    }
    for (std::size_t i = 0; i < net.params().size(); ++i)
        CHECK(other.params()[i].data == net.params()[i].data);
}
