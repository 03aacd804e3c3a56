#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "epf/dnn.hpp"
#include "epf/error.hpp"
#include "support.hpp"

using namespace epf;
using namespace epf::dnn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

DnnHyperparams small_hp(const std::string& mask = "10000000000") {
    DnnHyperparams hp;
    hp.n1 = 6;
    hp.n2 = 5;
    hp.mask = features::FeatureMask::from_string(mask);
    return hp;
}

MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

// Central-difference gradient of the training loss.
VectorXd numeric_gradient(DnnModel m, const MatrixXd& X, const MatrixXd& Y, const DropoutMasks* masks) {
    VectorXd g(m.params.size());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < m.params.size(); ++i) {
        const double keep = m.params(i);
        m.params(i) = keep + h;
        const double up = loss_and_gradient(m, X, Y, masks).loss;
        m.params(i) = keep - h;
        const double down = loss_and_gradient(m, X, Y, masks).loss;
        m.params(i) = keep;
        g(i) = (up - down) / (2.0 * h);
    }
    return g;
}

data::MarketDataset market(std::size_t days, unsigned seed = 3) {
    data::SyntheticMarket spec;
    spec.n_days = days;
    spec.seed = seed;
    return data::make_synthetic_dataset(spec);
}

TrainOptions quick_options() {
    TrainOptions o;
    o.max_epochs = 4;
    o.patience = 2;
    o.batch_size = 32;
    return o;
}

}  // namespace

TEST_CASE("network shapes and parameter count") {
    DnnHyperparams hp;
    const auto m = build_network(hp, 241, 7);
    const auto L = m.layout();
    CHECK(L.size == 241 * 256 + 256 + 256 * 128 + 128 + 128 * 24 + 24);
    CHECK(m.params.size() == L.size);
    MatrixXd rows = MatrixXd::Zero(3, 241);
    CHECK(forward_batch(m, rows).rows() == 3);
    CHECK(forward_batch(m, rows).cols() == 24);
    CHECK(forward(m, VectorXd::Zero(241)).size() == 24);
    CHECK_THROWS_AS(forward(m, VectorXd::Zero(240)), ShapeError);
    CHECK_THROWS_AS(build_network(hp, 240, 7), ConfigError);

    hp.batch_norm = true;
    const auto bn = build_network(hp, 241, 7);
    CHECK(bn.layout().size == L.size + 2 * (256 + 128));
    CHECK((bn.params.segment(bn.layout().g1, 256).array() == 1.0).all());
    CHECK((bn.params.segment(bn.layout().beta2, 128).array() == 0.0).all());
}

TEST_CASE("initialization") {
    const auto hp = small_hp();
    const auto a = build_network(hp, 24, 11);
    const auto b = build_network(hp, 24, 11);
    const auto c = build_network(hp, 24, 12);
    CHECK(a.params == b.params);
    CHECK(a.params != c.params);

    for (Init init : kSearchInits) {
        auto h = small_hp();
        h.n1 = 40;
        h.init = init;
        const auto m = build_network(h, 24, 5);
        const auto L = m.layout();
        const double fan_in = 24.0;
        const double fan_out = 40.0;
        const double limit = init == Init::glorot_uniform ? std::sqrt(6.0 / (fan_in + fan_out))
                             : init == Init::he_uniform   ? std::sqrt(6.0 / fan_in)
                                                          : std::sqrt(3.0 / fan_in);
        const auto w1 = m.params.segment(L.w1, L.b1 - L.w1);
        CHECK(w1.cwiseAbs().maxCoeff() <= limit);
        // 960 draws come close to the limit.
        CHECK(w1.cwiseAbs().maxCoeff() > 0.95 * limit);
        CHECK((m.params.segment(L.b1, 40).array() == 0.0).all());
    }

    auto zeros = small_hp();
    zeros.init = Init::zeros;
    auto m = build_network(zeros, 24, 1);
    CHECK(m.params.isZero());
    const auto L = m.layout();
    for (int h = 0; h < 24; ++h) m.params(L.b3 + h) = 0.5 * h;
    std::mt19937_64 rng(2);
    const VectorXd out = forward(m, uniform_matrix(24, 1, rng).col(0));
    for (int h = 0; h < 24; ++h) CHECK(out(h) == 0.5 * h);
}

TEST_CASE("activations and key-value round trip") {
    for (auto a : {Activation::relu, Activation::tanh, Activation::sigmoid, Activation::softplus,
                   Activation::leaky_relu, Activation::linear}) {
        CHECK(parse_activation(to_string(a)) == a);
    }
    for (auto i : {Init::glorot_uniform, Init::he_uniform, Init::lecun_uniform, Init::zeros}) {
        CHECK(parse_init(to_string(i)) == i);
    }
    CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
    CHECK_THROWS_AS(parse_init("orthogonal"), ConfigError);

    DnnHyperparams hp;
    hp.n1 = 317;
    hp.n2 = 45;
    hp.activation = Activation::softplus;
    hp.dropout = 0.125;
    hp.learning_rate = 0.00123456789;
    hp.batch_norm = true;
    hp.scaler = transform::ScalerKind::minmax;
    hp.init = Init::he_uniform;
    hp.l1 = 3.5e-4;
    hp.mask = features::FeatureMask::from_string("01101000011");
    CHECK(hyperparams_from_key_values(to_key_values(hp)) == hp);
    CHECK(hyperparams_from_key_values({}) == DnnHyperparams{});
    CHECK_THROWS_AS(hyperparams_from_key_values({{"n1", "many"}}), ConfigError);
    CHECK_THROWS_AS(hyperparams_from_key_values({{"batch_norm", "maybe"}}), ConfigError);
}

TEST_CASE("hyperparameter validation") {
    auto check_bad = [](auto edit) {
        DnnHyperparams hp;
        edit(hp);
        CHECK_THROWS_AS(hp.validate(), ConfigError);
    };
    check_bad([](DnnHyperparams& h) { h.n1 = 0; });
    check_bad([](DnnHyperparams& h) { h.dropout = 0.6; });
    check_bad([](DnnHyperparams& h) { h.dropout = -0.1; });
    check_bad([](DnnHyperparams& h) { h.learning_rate = 0.5; });
    check_bad([](DnnHyperparams& h) { h.learning_rate = 1e-6; });
    check_bad([](DnnHyperparams& h) { h.l1 = -1.0; });
    DnnHyperparams none;
    none.mask = features::FeatureMask::from_string("00000000000");
    CHECK_THROWS_AS(none.validate(), FeatureError);
    CHECK_NOTHROW(DnnHyperparams{}.validate());
}

TEST_CASE("analytic gradient matches finite differences") {
    std::mt19937_64 rng(21);
    const MatrixXd X = uniform_matrix(9, 24, rng);
    const MatrixXd Y = uniform_matrix(9, 24, rng, -3.0, 3.0);
    for (bool bn : {false, true}) {
        for (Activation act : {Activation::tanh, Activation::sigmoid, Activation::softplus, Activation::linear}) {
            auto hp = small_hp();
            hp.batch_norm = bn;
            hp.activation = act;
            hp.l1 = 1e-3;
            auto m = build_network(hp, 24, 8);
            if (bn) {
                const auto L = m.layout();
                m.params.segment(L.beta1, hp.n1) = uniform_matrix(hp.n1, 1, rng, -0.3, 0.3);
                m.params.segment(L.g2, hp.n2) = uniform_matrix(hp.n2, 1, rng, 0.5, 1.5);
            }
            const auto lg = loss_and_gradient(m, X, Y);
            const VectorXd num = numeric_gradient(m, X, Y, nullptr);
            const double err = (lg.gradient - num).cwiseAbs().maxCoeff();
            CHECK_MESSAGE(err < 1e-6 * std::max(1.0, num.cwiseAbs().maxCoeff()),
                          to_string(act) << (bn ? " bn" : "") << " err " << err);
        }
    }

    SUBCASE("with dropout masks") {
        auto hp = small_hp();
        hp.activation = Activation::tanh;
        hp.dropout = 0.3;
        const auto m = build_network(hp, 24, 4);
        DropoutMasks masks;
        std::bernoulli_distribution keep(0.7);
        masks.m1 = MatrixXd(9, hp.n1);
        masks.m2 = MatrixXd(9, hp.n2);
        for (Eigen::Index i = 0; i < masks.m1.size(); ++i) masks.m1.data()[i] = keep(rng) ? 1.0 / 0.7 : 0.0;
        for (Eigen::Index i = 0; i < masks.m2.size(); ++i) masks.m2.data()[i] = keep(rng) ? 1.0 / 0.7 : 0.0;
        const auto lg = loss_and_gradient(m, X, Y, &masks);
        CHECK((lg.gradient - numeric_gradient(m, X, Y, &masks)).cwiseAbs().maxCoeff() < 1e-6);
    }
    SUBCASE("loss value") {
        auto hp = small_hp();
        hp.init = Init::zeros;
        hp.l1 = 0.5;
        auto m = build_network(hp, 24, 1);
        m.params(m.layout().w3) = 2.0;
        const auto lg = loss_and_gradient(m, X, Y);
        CHECK(lg.loss == doctest::Approx(Y.cwiseAbs().mean() + 1.0).epsilon(1e-14));
    }
    CHECK_THROWS_AS(loss_and_gradient(build_network(small_hp(), 24, 1), X, MatrixXd::Zero(9, 23)), ShapeError);
}

TEST_CASE("training") {
    std::mt19937_64 rng(5);
    const MatrixXd X = uniform_matrix(600, 24, rng);
    const MatrixXd Xv = uniform_matrix(120, 24, rng);
    // Hour h of the target is a fixed linear mix of the inputs.
    const MatrixXd A = uniform_matrix(24, 24, rng, -0.2, 0.2);
    const MatrixXd Y = X * A;
    const MatrixXd Yv = Xv * A;

    auto hp = small_hp();
    hp.n1 = 32;
    hp.n2 = 32;
    hp.activation = Activation::linear;
    hp.learning_rate = 3e-3;
    auto base = build_network(hp, 24, 9);
    base.x_scaler = transform::DnnScaler::fit(transform::ScalerKind::none, X);
    base.y_scaler = transform::DnnScaler::fit(transform::ScalerKind::none, Y);

    SUBCASE("converges on a linear toy problem") {
        auto m = base;
        TrainOptions opt;
        opt.max_epochs = 400;
        opt.patience = 400;
        opt.batch_size = 64;
        const auto r = train(m, X, Y, Xv, Yv, opt);
        CHECK(r.best_validation_mae < 1e-2);
        CHECK(r.history.front().validation_mae > 5.0 * r.best_validation_mae);
    }
    SUBCASE("keeps the best-validation weights") {
        auto m = base;
        TrainOptions opt;
        opt.max_epochs = 30;
        opt.patience = 30;
        const auto r = train(m, X, Y, Xv, Yv, opt);
        REQUIRE(r.history.size() == 30);
        double best = r.history.front().validation_mae;
        int best_epoch = 1;
        for (const auto& e : r.history) {
            if (e.validation_mae < best) {
                best = e.validation_mae;
                best_epoch = e.epoch;
            }
        }
        CHECK(r.best_epoch == best_epoch);
        CHECK(r.best_validation_mae == best);
        CHECK((forward_batch(m, Xv) - Yv).cwiseAbs().mean() == doctest::Approx(best).epsilon(1e-12));
    }
    SUBCASE("patience zero stops at the first non-improving epoch") {
        auto m = base;
        m.hp.learning_rate = 0.1;
        TrainOptions opt;
        opt.max_epochs = 200;
        opt.patience = 0;
        const auto r = train(m, X, Y, Xv, Yv, opt);
        if (static_cast<int>(r.history.size()) < opt.max_epochs) {
            CHECK(static_cast<int>(r.history.size()) == r.best_epoch + 1);
            CHECK(r.history.back().validation_mae >= r.best_validation_mae);
        }
        for (std::size_t i = 1; i + 1 < r.history.size(); ++i) {
            CHECK(r.history[i].validation_mae < r.history[i - 1].validation_mae);
        }
    }
    SUBCASE("identical seeds train identically") {
        auto m1 = base;
        auto m2 = base;
        TrainOptions opt;
        opt.max_epochs = 5;
        m1.hp.dropout = m2.hp.dropout = 0.2;
        train(m1, X, Y, Xv, Yv, opt);
        train(m2, X, Y, Xv, Yv, opt);
        CHECK(m1.params == m2.params);
        CHECK(forward_batch(m1, Xv) == forward_batch(m1, Xv));
    }
    SUBCASE("argument checks") {
        auto m = base;
        CHECK_THROWS_AS(train(m, X, Y, MatrixXd(0, 24), MatrixXd(0, 24)), SplitError);
        CHECK_THROWS_AS(train(m, X, Y.leftCols(23), Xv, Yv), ShapeError);
        TrainOptions bad;
        bad.batch_size = 0;
        CHECK_THROWS_AS(train(m, X, Y, Xv, Yv, bad), ConfigError);
    }
    SUBCASE("divergence is reported") {
        auto m = base;
        MatrixXd Ybad = Y;
        Ybad(3, 3) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(train(m, X, Ybad, Xv, Yv), DivergenceError);
    }
}

TEST_CASE("train and validation splits") {
    const std::size_t target = 1600;
    const WindowSpec window;
    const auto split = make_split(target, window, SplitMode::random_weeks, 7, 42);
    CHECK(split.validation_days.size() == 42 * 7);
    CHECK(split.train_days.size() == 1456 - 42 * 7);
    std::set<std::size_t> all(split.train_days.begin(), split.train_days.end());
    for (auto d : split.validation_days) CHECK(all.insert(d).second);
    CHECK(all.size() == 1456);
    CHECK(*all.begin() == target - 1456);
    CHECK(*all.rbegin() == target - 1);
    // Validation days come in whole weeks counted back from the target.
    for (std::size_t i = 0; i < split.validation_days.size(); i += 7) {
        const auto first = split.validation_days[i];
        CHECK((first - (target - 1456)) % 7 == 0);
        for (std::size_t k = 1; k < 7; ++k) CHECK(split.validation_days[i + k] == first + k);
    }

    CHECK(make_split(target, window, SplitMode::random_weeks, 7, 42).validation_days == split.validation_days);
    CHECK(make_split(target, window, SplitMode::random_weeks, 7, 43).validation_days != split.validation_days);

    const auto tail = make_split(target, window, SplitMode::chronological_tail, 7, 0);
    CHECK(tail.validation_days.front() == target - 294);
    CHECK(tail.validation_days.back() == target - 1);

    // A window reaching the start of the data drops days without lag history.
    const auto early = make_split(1456, window, SplitMode::random_weeks, 7, 1);
    CHECK(early.train_days.front() >= 7);
    for (auto d : early.validation_days) CHECK(d >= 7);
    CHECK(early.train_days.size() + early.validation_days.size() == 1449);

    CHECK_THROWS_AS(make_split(1000, window, SplitMode::random_weeks, 7, 1), SliceError);
    CHECK_THROWS_AS(make_split(target, {10, 10}, SplitMode::random_weeks, 7, 1), ConfigError);
    CHECK_THROWS_AS(make_split(70, {10, 9}, SplitMode::random_weeks, 14, 1), SplitError);
}

TEST_CASE("fit, forecast and checkpoints") {
    const auto ds = market(200);
    auto hp = small_hp("11111111111");
    hp.n1 = 16;
    hp.n2 = 8;
    const WindowSpec window{20, 4};
    const std::size_t target = 180;
    const auto view = data::forecasting_view(ds, target);
    const auto split = make_split(target, window, SplitMode::random_weeks, 7, 3);
    const auto fitted = fit(view, split, hp, 99, quick_options());
    CHECK(fitted.training.history.size() >= 1);
    CHECK(fitted.model.x_scaler.shift().size() == 241);
    // The weekday input passes through the scaler unchanged.
    CHECK(fitted.model.x_scaler.scale()(240) == 1.0);
    CHECK(fitted.model.x_scaler.shift()(240) == 0.0);

    const VectorXd row = features::build_dnn_row(view, target, hp.mask).values;
    const VectorXd p = predict_prices(fitted.model, row);
    CHECK(p.size() == 24);
    CHECK(p.allFinite());
    CHECK(predict_prices(fitted.model, row) == p);

    test::TempDir dir;
    save_model(fitted.model, dir / "net.json");
    const auto loaded = load_model(dir / "net.json");
    CHECK(loaded.params == fitted.model.params);
    CHECK(loaded.hp == fitted.model.hp);
    CHECK(predict_prices(loaded, row) == p);
    CHECK_THROWS_AS(load_model(dir / "missing.json"), DataError);
}

TEST_CASE("DNN backtest") {
    const auto ds = market(180);
    auto hp = small_hp("11111111111");
    hp.n1 = 12;
    hp.n2 = 6;
    hp.dropout = 0.1;
    const WindowSpec window{20, 4};
    const auto period = data::test_split(ds, ds.date(170), 140).second;
    REQUIRE(period.n_days == 10);
    const auto opt = quick_options();

    const auto a = backtest_dnn(ds, period, hp, 5, window, opt);
    CHECK(a.days() == 10);
    CHECK(a.values.allFinite());

    SUBCASE("reruns and thread counts give identical forecasts") {
        CHECK(backtest_dnn(ds, period, hp, 5, window, opt).values == a.values);
        CHECK(backtest_dnn(ds, period, hp, 5, window, opt, {}, 3).values == a.values);
        CHECK(backtest_dnn(ds, period, hp, 6, window, opt).values != a.values);
    }
    SUBCASE("later data does not change earlier forecasts") {
        auto shorter = period;
        shorter.n_days = 4;
        CHECK(backtest_dnn(ds.head(174), shorter, hp, 5, window, opt).values == a.values.topRows(4));
    }
    SUBCASE("no day reads prices at or after its target") {
        struct Tracker : data::AccessObserver {
            std::size_t current = 0;
            int violations = 0;
            int reads = 0;
            void on_read(data::Series s, std::size_t day) override {
                ++reads;
                if (s == data::Series::price && day >= current) ++violations;
                if (s != data::Series::price && day > current) ++violations;
            }
        } tracker;
        BacktestHooks hooks;
        hooks.observer = &tracker;
        hooks.on_target = [&](std::size_t t) { tracker.current = t; };
        auto few = period;
        few.n_days = 3;
        backtest_dnn(ds, few, hp, 5, window, opt, hooks);
        CHECK(tracker.reads > 0);
        CHECK(tracker.violations == 0);
    }
    SUBCASE("skipped days keep the others unchanged") {
        BacktestHooks hooks;
        hooks.already_done = [&](Date d) { return d == ds.date(172); };
        const auto rest = backtest_dnn(ds, period, hp, 5, window, opt, hooks);
        CHECK(rest.days() == 9);
        CHECK(rest.values.row(2) == a.values.row(3));
    }
}

TEST_CASE("seed derivation") {
    CHECK(derive_seed(1, 0) == derive_seed(1, 0));
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 20; ++s) {
        for (std::uint64_t k = 0; k < 20; ++k) seen.insert(derive_seed(s, k));
    }
    CHECK(seen.size() == 400);
}
