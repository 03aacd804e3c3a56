#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "epf/error.hpp"
#include "epf/hyperopt.hpp"
#include "epf/keyvalue.hpp"
#include "support.hpp"

using namespace epf;
using namespace epf::hyperopt;

namespace {

data::MarketDataset market(std::size_t days) {
    data::SyntheticMarket spec;
    spec.n_days = days;
    spec.seed = 9;
    return data::make_synthetic_dataset(spec);
}

StudyOptions tiny_study(std::size_t test_start) {
    StudyOptions o;
    o.test_start = test_start;
    o.window = {16, 3};
    o.train.max_epochs = 2;
    o.train.patience = 1;
    o.train.batch_size = 64;
    o.tpe.n_startup = 2;
    o.budget = 4;
    o.seed = 3;
    return o;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("DNN search space") {
    const auto space = dnn_search_space();
    CHECK(space.dims.size() == 20);
    std::mt19937_64 rng(1);
    int n1_low = 0;
    int n1_high = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto x = sample_prior(space, rng);
        REQUIRE(space.contains(x));
        const auto hp = decode(x);
        CHECK(hp.n1 >= 50);
        CHECK(hp.n1 <= 500);
        CHECK(hp.n2 >= 25);
        CHECK(hp.n2 <= 400);
        CHECK(hp.learning_rate >= 5e-4);
        CHECK(hp.learning_rate <= 0.1);
        CHECK(hp.dropout >= 0.0);
        CHECK(hp.dropout <= 0.5);
        CHECK(hp.l1 >= 1e-5);
        CHECK(hp.l1 <= 1.0);
        if (hp.n1 < 100) ++n1_low;
        if (hp.n1 > 450) ++n1_high;
        CHECK(encode(hp) == x);
    }
    // Integer sizes are spread over the whole range.
    CHECK(n1_low > 500);
    CHECK(n1_high > 500);

    auto bad = sample_prior(space, rng);
    bad[11] = 600;
    CHECK_FALSE(space.contains(bad));
    CHECK_THROWS_AS(decode(bad), ConfigError);
    bad.pop_back();
    CHECK_FALSE(space.contains(bad));

    dnn::DnnHyperparams linear;
    linear.activation = dnn::Activation::linear;
    CHECK_THROWS_AS(encode(linear), ConfigError);
}

TEST_CASE("log-uniform dimensions are uniform in the exponent") {
    SearchSpace space;
    space.dims.push_back({"lr", Dimension::Kind::log_uniform, 1e-4, 1.0, 0});
    std::mt19937_64 rng(5);
    int below = 0;
    for (int i = 0; i < 20000; ++i) {
        if (sample_prior(space, rng)[0] < 1e-2) ++below;
    }
    CHECK(below == doctest::Approx(10000).epsilon(0.05));
}

TEST_CASE("TPE on a one-dimensional toy objective") {
    SearchSpace space;
    space.dims.push_back({"x", Dimension::Kind::uniform, 0.0, 1.0, 0});
    auto run = [&](std::uint64_t seed, int trials) {
        std::mt19937_64 rng(seed);
        std::vector<Observation> history;
        for (int t = 0; t < trials; ++t) {
            const auto x = tpe_suggest(history, space, rng);
            REQUIRE(space.contains(x));
            history.push_back({x, (x[0] - 0.3) * (x[0] - 0.3)});
        }
        return history;
    };
    const auto h = run(4, 80);
    double best = 1.0;
    for (const auto& o : h) best = std::min(best, o.objective);
    CHECK(best < 1e-4);

    // After the start-up phase suggestions concentrate near the optimum.
    int near = 0;
    for (std::size_t i = 40; i < h.size(); ++i) {
        if (std::abs(h[i].x[0] - 0.3) < 0.1) ++near;
    }
    CHECK(near >= 25);

    const auto again = run(4, 80);
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(again[i].x == h[i].x);

    SUBCASE("non-finite objectives are ignored") {
        std::mt19937_64 rng(8);
        std::vector<Observation> hist;
        for (int i = 0; i < 30; ++i) {
            hist.push_back({{i / 30.0}, std::numeric_limits<double>::infinity()});
        }
        // Without finite observations TPE keeps drawing from the prior.
        CHECK(space.contains(tpe_suggest(hist, space, rng)));
    }
}

TEST_CASE("TPE handles integer and categorical dimensions") {
    SearchSpace space;
    space.dims.push_back({"n", Dimension::Kind::integer, 1, 20, 0});
    space.dims.push_back({"c", Dimension::Kind::categorical, 0, 0, 4});
    std::mt19937_64 rng(12);
    std::vector<Observation> history;
    for (int t = 0; t < 60; ++t) {
        const auto x = tpe_suggest(history, space, rng);
        REQUIRE(space.contains(x));
        history.push_back({x, std::abs(x[0] - 7.0) + (x[1] == 2.0 ? 0.0 : 5.0)});
    }
    int hits = 0;
    for (std::size_t i = 30; i < history.size(); ++i) {
        if (history[i].x[1] == 2.0) ++hits;
    }
    CHECK(hits >= 15);
}

TEST_CASE("trial evaluation") {
    const auto ds = market(160);
    const auto opt = tiny_study(150);

    dnn::DnnHyperparams hp;
    hp.n1 = 8;
    hp.n2 = 4;
    const double v = evaluate_trial(hp, ds, opt, 7);
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
    CHECK(evaluate_trial(hp, ds, opt, 7) == v);

    // Days from the test start onwards play no part.
    CHECK(evaluate_trial(hp, ds.head(150), opt, 7) == v);
    auto late = opt;
    late.test_start = 161;
    CHECK_THROWS_AS(evaluate_trial(hp, ds, late, 7), SplitError);

    hp.mask = features::FeatureMask::from_string("00000000000");
    CHECK_THROWS_AS(evaluate_trial(hp, ds, opt, 7), FeatureError);

    // The naive benchmark averages |p(d) - p(d-7)| over the last validation weeks.
    double sum = 0.0;
    for (std::size_t d = 150 - 21; d < 150; ++d) {
        for (std::size_t h = 0; h < 24; ++h) {
            sum += std::abs(ds.prices()(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)) -
                            ds.prices()(static_cast<Eigen::Index>(d - 7), static_cast<Eigen::Index>(h)));
        }
    }
    CHECK(naive_validation_mae(ds, opt) == doctest::Approx(sum / (21.0 * 24.0)).epsilon(1e-12));
}

TEST_CASE("studies") {
    const auto ds = market(160);
    test::TempDir dir;

    SUBCASE("a single trial") {
        auto opt = tiny_study(150);
        opt.budget = 1;
        const auto study = run_study(ds, opt);
        REQUIRE(study.trials.size() == 1);
        CHECK(study.best() == 0);
        opt.budget = 0;
        CHECK_THROWS_AS(run_study(ds, opt), ConfigError);
    }
    SUBCASE("resuming from the log reaches the same study") {
        auto opt = tiny_study(150);
        opt.log_path = dir / "full.jsonl";
        const auto full = run_study(ds, opt);
        REQUIRE(full.trials.size() == 4);
        CHECK(read_lines(opt.log_path).size() == 4);

        auto part = opt;
        part.log_path = dir / "part.jsonl";
        part.budget = 2;
        int calls = 0;
        run_study(ds, part, [&](const Trial&) { ++calls; });
        CHECK(calls == 2);
        // Simulate an interruption that cut the last record short.
        {
            std::ofstream out(part.log_path, std::ios::app);
            out << "{\"trial\": 2, \"sta";
        }
        part.budget = 4;
        calls = 0;
        const auto resumed = run_study(ds, part, [&](const Trial&) { ++calls; });
        CHECK(calls == 2);
        REQUIRE(resumed.trials.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(resumed.trials[i].x == full.trials[i].x);
            CHECK(resumed.trials[i].seed == full.trials[i].seed);
            CHECK(resumed.trials[i].objective == full.trials[i].objective);
        }
        CHECK(read_lines(part.log_path).size() == 4);

        // A completed study is not rerun.
        calls = 0;
        run_study(ds, part, [&](const Trial&) { ++calls; });
        CHECK(calls == 0);

        const auto logged = read_trial_log(part.log_path);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(logged[i].hp == full.trials[i].hp);
            CHECK(logged[i].number == static_cast<int>(i));
        }

        // The running best never increases.
        double best = std::numeric_limits<double>::infinity();
        for (const auto& t : full.trials) {
            const double next = std::isfinite(t.objective) ? std::min(best, t.objective) : best;
            CHECK(next <= best);
            best = next;
        }
        CHECK(full.trials[full.best()].objective == best);

        export_best_config(full, dir / "best.txt");
        const auto kv = read_key_values(dir / "best.txt");
        CHECK(dnn::hyperparams_from_key_values(kv) == full.trials[full.best()].hp);
    }
    SUBCASE("a corrupt log line before the end is an error") {
        std::ofstream(dir / "bad.jsonl") << "not json\n{}\n";
        CHECK_THROWS_AS(read_trial_log(dir / "bad.jsonl"), ParseError);
        CHECK(read_trial_log(dir / "absent.jsonl").empty());
    }
    SUBCASE("a study with only rejected trials has no best") {
        Study s;
        Trial t;
        t.status = TrialStatus::rejected;
        s.trials.push_back(t);
        CHECK_THROWS_AS(s.best(), DataError);
    }
}
