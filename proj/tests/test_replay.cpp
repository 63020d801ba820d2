#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "clstream/replay.hpp"

using namespace clstream;

namespace {

Matrix const_rows(std::size_t n, std::size_t dim, double value) {
    Matrix m(n, dim);
    std::fill(m.data.begin(), m.data.end(), value);
    return m;
}

TrainSet task_set_for(const ClassSet& classes, std::size_t per_class, std::size_t dim) {
    TrainSet set;
    set.inputs = Matrix(classes.size() * per_class, dim);
    for (std::size_t i = 0; i < classes.size(); ++i)
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t r = i * per_class + s;
            std::fill(set.inputs.row(r).begin(), set.inputs.row(r).end(),
                      static_cast<double>(classes[i]));
            set.targets.push_back(classes[i]);
        }
    return set;
}

}  // namespace

TEST_CASE("Algorithm-1 trace fixture is reproduced exactly", "[replay][alg1]") {
    // 20-step hand-derived trace: nu_low=0.2, nu_high=0.5, tau=2, classes 0..4.
    // Covers the strict > tau edge (steps 4-5 vs 6), selection counting as an
    // occurrence, the inclusive nu_high boundary (step 7) and high-frequency
    // exclusions.
    struct Step {
        ClassSet task;
        std::vector<int> expect_selected;
        std::map<int, int> expect_counts;
    };
    const std::vector<Step> steps = {
        {{0, 1}, {}, {{0, 1}, {1, 1}}},
        {{0, 2}, {}, {{0, 2}, {1, 1}, {2, 1}}},
        {{1, 2}, {}, {{0, 2}, {1, 2}, {2, 2}}},
        {{0, 3}, {}, {{0, 3}, {1, 2}, {2, 2}, {3, 1}}},
        {{3, 4}, {}, {{0, 3}, {1, 2}, {2, 2}, {3, 2}, {4, 1}}},
        {{0, 1}, {}, {{0, 4}, {1, 3}, {2, 2}, {3, 2}, {4, 1}}},
        {{2, 3}, {1}, {{0, 4}, {1, 4}, {2, 3}, {3, 3}, {4, 1}}},
        {{0, 4}, {1, 2, 3}, {{0, 5}, {1, 5}, {2, 4}, {3, 4}, {4, 2}}},
        {{1, 3}, {2}, {{0, 5}, {1, 6}, {2, 5}, {3, 5}, {4, 2}}},
        {{0, 2}, {3}, {{0, 6}, {1, 6}, {2, 6}, {3, 6}, {4, 2}}},
        {{1, 4}, {}, {{0, 6}, {1, 7}, {2, 6}, {3, 6}, {4, 3}}},
        {{0, 3}, {2, 4}, {{0, 7}, {1, 7}, {2, 7}, {3, 7}, {4, 4}}},
        {{2, 4}, {}, {{0, 7}, {1, 7}, {2, 8}, {3, 7}, {4, 5}}},
        {{0, 1}, {3, 4}, {{0, 8}, {1, 8}, {2, 8}, {3, 8}, {4, 6}}},
        {{2, 3}, {4}, {{0, 8}, {1, 8}, {2, 9}, {3, 9}, {4, 7}}},
        {{0, 4}, {1}, {{0, 9}, {1, 9}, {2, 9}, {3, 9}, {4, 8}}},
        {{1, 2}, {4}, {{0, 9}, {1, 10}, {2, 10}, {3, 9}, {4, 9}}},
        {{3, 4}, {0}, {{0, 10}, {1, 10}, {2, 10}, {3, 10}, {4, 10}}},
        {{0, 1}, {}, {{0, 11}, {1, 11}, {2, 10}, {3, 10}, {4, 10}}},
        {{2, 3}, {4}, {{0, 11}, {1, 11}, {2, 11}, {3, 11}, {4, 11}}},
    };

    ReplayConfig cfg;
    cfg.nu_low = 0.2;
    cfg.nu_high = 0.5;
    cfg.tau = 2;
    cfg.capacity = 4;
    ReplayBuffer buf(cfg, 2);

    for (std::size_t i = 0; i < steps.size(); ++i) {
        INFO("step " << i);
        const auto selected = buf.select_replay_classes(steps[i].task);
        CHECK(selected == steps[i].expect_selected);
        CHECK(buf.nb_batch() == static_cast<int>(i) + 1);
        CHECK(buf.occurrence_counts() == steps[i].expect_counts);
    }
}

TEST_CASE("selection edges from preset counter state", "[replay][alg1]") {
    SECTION("frequency above the passband is rejected despite count > tau") {
        ReplayConfig cfg;
        cfg.nu_low = 0.01;
        cfg.nu_high = 0.1;
        cfg.tau = 0;
        ReplayBuffer buf(cfg, 2);
        // class 7 seen in 3 of the first 10 updates, absent now: freq 0.3 > 0.1
        buf.preset_counts({{7, 3}}, 9);
        CHECK(buf.select_replay_classes({1, 2}).empty());
    }
    SECTION("strict > tau: count == tau misses, count == tau+1 selects and increments") {
        ReplayConfig cfg;
        cfg.nu_low = 0.01;
        cfg.nu_high = 0.1;
        cfg.tau = 3;
        ReplayBuffer buf(cfg, 2);
        buf.preset_counts({{5, 3}}, 59);  // freq 3/60 = 0.05 in band, 3 > 3 fails
        CHECK(buf.select_replay_classes({1, 2}).empty());

        ReplayBuffer buf2(cfg, 2);
        buf2.preset_counts({{5, 4}}, 59);  // freq 4/60 ~ 0.067 in band, 4 > 3
        CHECK(buf2.select_replay_classes({1, 2}) == std::vector<int>{5});
        CHECK(buf2.occurrence_counts().at(5) == 5);  // selection counted
    }
    SECTION("frequency below the passband is rejected despite count > tau") {
        ReplayConfig cfg;
        cfg.nu_low = 0.1;
        cfg.nu_high = 0.3;
        cfg.tau = 3;
        ReplayBuffer buf(cfg, 2);
        buf.preset_counts({{5, 5}}, 59);  // freq 5/60 ~ 0.083 < 0.1
        CHECK(buf.select_replay_classes({1, 2}).empty());
    }
    SECTION("exact nu_low boundary is included") {
        ReplayConfig cfg;
        cfg.nu_low = 0.1;
        cfg.nu_high = 0.3;
        cfg.tau = 3;
        ReplayBuffer buf(cfg, 2);
        buf.preset_counts({{5, 6}}, 59);  // freq 6/60 = 0.1 exactly
        CHECK(buf.select_replay_classes({1, 2}) == std::vector<int>{5});
    }
    SECTION("a class in the current task is never selected") {
        ReplayConfig cfg;
        cfg.nu_low = 0.0;
        cfg.nu_high = 1.0;
        cfg.tau = 0;
        ReplayBuffer buf(cfg, 2);
        buf.preset_counts({{1, 10}, {2, 10}}, 19);
        const auto sel = buf.select_replay_classes({1, 3});
        CHECK(sel == std::vector<int>{2});
    }
    SECTION("the count_selection ablation flag freezes counts on selection") {
        ReplayConfig cfg;
        cfg.nu_low = 0.01;
        cfg.nu_high = 0.5;
        cfg.tau = 1;
        cfg.count_selection = false;
        ReplayBuffer buf(cfg, 2);
        buf.preset_counts({{5, 4}}, 19);
        CHECK(buf.select_replay_classes({1, 2}) == std::vector<int>{5});
        CHECK(buf.occurrence_counts().at(5) == 4);
    }
}

TEST_CASE("renewal counts follow max(n/o, n/20)", "[replay][renewal]") {
    ReplayConfig cfg;
    cfg.capacity = 200;
    ReplayBuffer buf(cfg, 3);
    CHECK(buf.renewal_count(5) == 40);
    CHECK(buf.renewal_count(50) == 10);
    CHECK(buf.renewal_count(1) == 200);  // full refill on first visit
    CHECK(buf.renewal_count(3) == 67);   // ceil(200/3)
    CHECK_THROWS_AS(buf.renewal_count(0), std::invalid_argument);
}

TEST_CASE("renew_class_store fills, replaces and caps", "[replay][renewal]") {
    ReplayConfig cfg;
    cfg.capacity = 10;
    ReplayBuffer buf(cfg, 2);
    Rng rng(1);

    // first visit with fewer fresh samples than capacity: store all of them
    buf.renew_class_store(4, const_rows(6, 2, 1.0), 1, rng);
    CHECK(buf.store(4).size() == 6);

    // second visit tops up to capacity and swaps: renewal budget is
    // max(10/2, 10/20) = 5
    buf.renew_class_store(4, const_rows(8, 2, 2.0), 2, rng);
    CHECK(buf.store(4).size() == 10);
    int fresh_rows = 0;
    for (const auto& row : buf.store(4))
        if (row[0] == 2.0) ++fresh_rows;
    CHECK(fresh_rows == 5);

    // a later visit replaces ceil(10/7) = 2 rows, capacity is unchanged
    buf.renew_class_store(4, const_rows(8, 2, 3.0), 7, rng);
    CHECK(buf.store(4).size() == 10);
    fresh_rows = 0;
    for (const auto& row : buf.store(4))
        if (row[0] == 3.0) ++fresh_rows;
    CHECK(fresh_rows == 2);
}

TEST_CASE("total stored samples never exceed capacity times classes seen",
          "[replay][property]") {
    ReplayConfig cfg;
    cfg.capacity = 7;
    ReplayBuffer buf(cfg, 2);
    Rng rng(3);
    std::set<int> seen;
    for (int step = 0; step < 100; ++step) {
        const ClassSet task = {static_cast<int>(uniform_index(rng, 6)),
                               6 + static_cast<int>(uniform_index(rng, 6))};
        TrainSet set = task_set_for(task, 1 + uniform_index(rng, 12), 2);
        buf.select_replay_classes(task);
        buf.update_stores(task, set, rng);
        for (int c : task) seen.insert(c);
        CHECK(buf.total_stored() <= 7 * seen.size());
    }
}

TEST_CASE("merge_with_oversampling balances replayed classes", "[replay][merge]") {
    ReplayConfig cfg;
    cfg.capacity = 200;
    ReplayBuffer buf(cfg, 4);
    Rng rng(2);

    SECTION("no replay classes returns the task set unchanged") {
        const TrainSet task = task_set_for({1, 2}, 50, 4);
        const TrainSet merged = merge_with_oversampling(task, {1, 2}, {}, buf);
        CHECK(merged.inputs.data == task.inputs.data);
        CHECK(merged.targets == task.targets);
    }
    SECTION("a 200-sample store contributes 500 rows for a 500-per-class task") {
        buf.renew_class_store(9, const_rows(200, 4, 9.0), 1, rng);
        const TrainSet task = task_set_for({1, 2}, 500, 4);
        const TrainSet merged = merge_with_oversampling(task, {1, 2}, {9}, buf);
        CHECK(merged.size() == 1000 + 500);
        std::map<int, int> counts;
        for (int t : merged.targets) ++counts[t];
        CHECK(counts[9] == 500);
        CHECK(counts[1] == 500);
        CHECK(counts[2] == 500);
    }
    SECTION("merged set is class-balanced within one sample") {
        buf.renew_class_store(7, const_rows(30, 4, 7.0), 1, rng);
        buf.renew_class_store(8, const_rows(30, 4, 8.0), 1, rng);
        const TrainSet task = task_set_for({0, 1, 2}, 33, 4);
        const TrainSet merged = merge_with_oversampling(task, {0, 1, 2}, {7, 8}, buf);
        std::map<int, int> counts;
        for (int t : merged.targets) ++counts[t];
        int lo = 1 << 30, hi = 0;
        for (const auto& [c, n] : counts) {
            lo = std::min(lo, n);
            hi = std::max(hi, n);
        }
        CHECK(hi - lo <= 1);
    }
    SECTION("an empty store for a selected class is an error") {
        const TrainSet task = task_set_for({1, 2}, 10, 4);
        CHECK_THROWS_AS(merge_with_oversampling(task, {1, 2}, {3}, buf),
                        std::runtime_error);
    }
}

TEST_CASE("random replay keeps the long-run budget", "[replay][random]") {
    ReplayConfig cfg;
    cfg.capacity = 5;
    ReplayBuffer buf(cfg, 2);
    Rng rng(11);
    // populate stores for classes 0..9
    for (int c = 0; c < 10; ++c)
        buf.renew_class_store(c, const_rows(5, 2, c), 1, rng);
    // renewal occurrences drive eligibility
    for (int c = 0; c < 10; ++c)
        buf.update_stores({c}, task_set_for({c}, 2, 2), rng);

    SECTION("budget_ratio = 0 selects nothing") {
        for (int rep = 0; rep < 20; ++rep)
            CHECK(random_replay_budgeted(buf, {0, 1}, 0.0, rng).empty());
    }
    SECTION("mean selections approach budget_ratio * C") {
        std::size_t total = 0;
        const int tasks = 1000;
        for (int rep = 0; rep < tasks; ++rep) {
            const auto sel = random_replay_budgeted(buf, {0, 1, 2}, 0.7093, rng);
            total += sel.size();
            for (int c : sel) CHECK(c > 2);  // never a current class
        }
        // expectation 0.7093 * 3 * 1000 = 2128, tolerance 5%
        CHECK(std::abs(static_cast<double>(total) - 2128.0) < 0.05 * 2128.0);
    }
}

TEST_CASE("compute overhead accounting", "[replay][ledger]") {
    ComputeLedger ledger;
    ledger.base_class_slots = 25000;
    ledger.replayed_class_slots = 5320;
    CHECK(compute_overhead(ledger) == Catch::Approx(1.2128).margin(1e-12));

    ledger.replayed_class_slots = 193445;
    CHECK(compute_overhead(ledger) == Catch::Approx(8.7378).margin(1e-12));

    ledger.replayed_class_slots = 0;
    CHECK(compute_overhead(ledger) == 1.0);

    ComputeLedger empty;
    CHECK_THROWS_AS(compute_overhead(empty), std::domain_error);

    SECTION("add_task accumulates monotonically") {
        ComputeLedger l;
        l.add_task(10, 3);
        l.add_task(10, 0);
        CHECK(l.base_class_slots == 20);
        CHECK(l.replayed_class_slots == 3);
    }
}

TEST_CASE("buffer state round-trips through checkpoints", "[replay][checkpoint]") {
    ReplayConfig cfg;
    cfg.capacity = 6;
    ReplayBuffer buf(cfg, 3);
    Rng rng(5);
    for (int step = 0; step < 12; ++step) {
        const ClassSet task = {static_cast<int>(uniform_index(rng, 4)),
                               4 + static_cast<int>(uniform_index(rng, 4))};
        buf.select_replay_classes(task);
        buf.update_stores(task, task_set_for(task, 5, 3), rng);
    }
    const auto snapshot = buf.to_checkpoint();

    ReplayBuffer restored(cfg, 3);
    restored.restore_checkpoint(snapshot);
    CHECK(restored.nb_batch() == buf.nb_batch());
    CHECK(restored.occurrence_counts() == buf.occurrence_counts());
    CHECK(restored.renewal_occurrences() == buf.renewal_occurrences());
    CHECK(restored.total_stored() == buf.total_stored());
    for (const auto& [cls, o] : buf.renewal_occurrences())
        CHECK(restored.store(cls) == buf.store(cls));
}
