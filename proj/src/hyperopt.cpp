#include "epf/hyperopt.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "epf/error.hpp"
#include "epf/keyvalue.hpp"

namespace epf::hyperopt {

namespace {

using Kind = Dimension::Kind;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

// Bounds of a numeric dimension in the coordinate the estimator works in.
std::pair<double, double> internal_bounds(const Dimension& d) {
    switch (d.kind) {
        case Kind::log_uniform:
            return {std::log(d.low), std::log(d.high)};
        case Kind::integer:
            return {d.low - 0.5, d.high + 0.5};
        default:
            return {d.low, d.high};
    }
}

double to_internal(const Dimension& d, double v) {
    return d.kind == Kind::log_uniform ? std::log(v) : v;
}

double from_internal(const Dimension& d, double u) {
    switch (d.kind) {
        case Kind::log_uniform:
            return std::clamp(std::exp(u), d.low, d.high);
        case Kind::integer:
            return std::clamp(std::round(u), d.low, d.high);
        default:
            return std::clamp(u, d.low, d.high);
    }
}

/// Truncated Gaussian mixture with the adaptive bandwidth rule: each
/// observation's width is the larger gap to its sorted neighbours, clipped
/// to [range / min(100, 1 + count), range]; the prior adds one wide
/// component at the centre.
struct Parzen {
    std::vector<double> mu;
    std::vector<double> sigma;
    std::vector<double> log_weight;  // includes the truncation mass
    double lo = 0.0;
    double hi = 1.0;

    Parzen(std::vector<double> obs, double lo_, double hi_) : lo(lo_), hi(hi_) {
        const double prior_mu = 0.5 * (lo + hi);
        const double prior_sigma = hi - lo;
        obs.push_back(prior_mu);
        std::vector<std::size_t> order(obs.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return obs[a] < obs[b]; });
        const std::size_t prior_index = obs.size() - 1;
        const std::size_t n = obs.size();
        const double min_sigma = prior_sigma / std::min(100.0, 1.0 + static_cast<double>(n));
        for (std::size_t k = 0; k < n; ++k) {
            const double m = obs[order[k]];
            double s = prior_sigma;
            if (order[k] != prior_index) {
                const double left = k > 0 ? m - obs[order[k - 1]] : 0.0;
                const double right = k + 1 < n ? obs[order[k + 1]] - m : 0.0;
                s = std::clamp(std::max(left, right), min_sigma, prior_sigma);
            }
            mu.push_back(m);
            sigma.push_back(s);
            const double mass = normal_cdf((hi - m) / s) - normal_cdf((lo - m) / s);
            log_weight.push_back(-std::log(static_cast<double>(n)) - std::log(std::max(mass, 1e-300)));
        }
    }

    double log_pdf(double x) const {
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> terms(mu.size());
        for (std::size_t k = 0; k < mu.size(); ++k) {
            const double z = (x - mu[k]) / sigma[k];
            terms[k] = log_weight[k] - 0.5 * z * z - kLogSqrt2Pi - std::log(sigma[k]);
            best = std::max(best, terms[k]);
        }
        double sum = 0.0;
        for (double t : terms) sum += std::exp(t - best);
        return best + std::log(sum);
    }

    double sample(std::mt19937_64& rng) const {
        std::uniform_int_distribution<std::size_t> pick(0, mu.size() - 1);
        const std::size_t k = pick(rng);
        std::normal_distribution<double> normal(mu[k], sigma[k]);
        for (int attempt = 0; attempt < 100; ++attempt) {
            const double v = normal(rng);
            if (v >= lo && v <= hi) return v;
        }
        return std::clamp(mu[k], lo, hi);
    }
};

struct Categorical {
    std::vector<double> p;

    Categorical(const std::vector<int>& picks, int choices)
        : p(static_cast<std::size_t>(choices), 1.0) {
        for (int c : picks) p[static_cast<std::size_t>(c)] += 1.0;
        const double total = std::accumulate(p.begin(), p.end(), 0.0);
        for (double& v : p) v /= total;
    }

    double log_pdf(int c) const { return std::log(p[static_cast<std::size_t>(c)]); }

    int sample(std::mt19937_64& rng) const {
        std::discrete_distribution<int> d(p.begin(), p.end());
        return d(rng);
    }
};

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

TrialStatus parse_status(const std::string& s) {
    if (s == "ok") return TrialStatus::ok;
    if (s == "failed") return TrialStatus::failed;
    if (s == "rejected") return TrialStatus::rejected;
    throw DataError("unknown trial status '" + s + "'");
}

Trial trial_from_json(const nlohmann::json& j) {
    Trial t;
    t.number = j.at("trial").get<int>();
    t.status = parse_status(j.at("status").get<std::string>());
    t.objective = j.at("objective").is_number() ? j.at("objective").get<double>()
                                                : std::numeric_limits<double>::infinity();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.seconds = j.value("seconds", 0.0);
    t.x = j.at("point").get<Point>();
    t.hp = dnn::hyperparams_from_key_values(j.at("params").get<std::map<std::string, std::string>>());
    t.message = j.value("message", "");
    return t;
}

data::HistoryView tuning_view(const data::MarketDataset& dataset, const StudyOptions& options) {
    if (options.test_start > dataset.size()) {
        throw SplitError("tuning window ends after the dataset");
    }
    // Everything strictly before the test period, nothing from it.
    return data::HistoryView(dataset, options.test_start, options.test_start);
}

}  // namespace

bool SearchSpace::contains(const Point& x) const {
    if (x.size() != dims.size()) return false;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        const auto& d = dims[i];
        const double v = x[i];
        if (!std::isfinite(v)) return false;
        if (d.kind == Kind::categorical) {
            if (v != std::floor(v) || v < 0 || v >= d.choices) return false;
        } else {
            if (v < d.low || v > d.high) return false;
            if (d.kind == Kind::integer && v != std::floor(v)) return false;
        }
    }
    return true;
}

Point sample_prior(const SearchSpace& space, std::mt19937_64& rng) {
    Point x(space.dims.size());
    for (std::size_t i = 0; i < space.dims.size(); ++i) {
        const auto& d = space.dims[i];
        if (d.kind == Kind::categorical) {
            x[i] = std::uniform_int_distribution<int>(0, d.choices - 1)(rng);
        } else {
            const auto [lo, hi] = internal_bounds(d);
            x[i] = from_internal(d, std::uniform_real_distribution<double>(lo, hi)(rng));
        }
    }
    return x;
}

Point tpe_suggest(const std::vector<Observation>& history, const SearchSpace& space,
                  std::mt19937_64& rng, const TpeOptions& options) {
    std::vector<const Observation*> done;
    for (const auto& o : history) {
        if (std::isfinite(o.objective) && o.x.size() == space.dims.size()) done.push_back(&o);
    }
    if (static_cast<int>(done.size()) < std::max(options.n_startup, 1)) {
        return sample_prior(space, rng);
    }
    std::stable_sort(done.begin(), done.end(),
                     [](const Observation* a, const Observation* b) { return a->objective < b->objective; });
    const std::size_t n_good = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(options.gamma * static_cast<double>(done.size()))));

    const std::size_t n_dims = space.dims.size();
    const int n_cand = std::max(options.n_ei_candidates, 1);
    std::vector<Point> candidates(static_cast<std::size_t>(n_cand), Point(n_dims));
    std::vector<double> score(static_cast<std::size_t>(n_cand), 0.0);
    for (std::size_t i = 0; i < n_dims; ++i) {
        const auto& d = space.dims[i];
        if (d.kind == Kind::categorical) {
            std::vector<int> good;
            std::vector<int> bad;
            for (std::size_t k = 0; k < done.size(); ++k) {
                (k < n_good ? good : bad).push_back(static_cast<int>(done[k]->x[i]));
            }
            const Categorical l(good, d.choices);
            const Categorical g(bad, d.choices);
            for (int c = 0; c < n_cand; ++c) {
                const int v = l.sample(rng);
                candidates[static_cast<std::size_t>(c)][i] = v;
                score[static_cast<std::size_t>(c)] += l.log_pdf(v) - g.log_pdf(v);
            }
        } else {
            std::vector<double> good;
            std::vector<double> bad;
            for (std::size_t k = 0; k < done.size(); ++k) {
                (k < n_good ? good : bad).push_back(to_internal(d, done[k]->x[i]));
            }
            const auto [lo, hi] = internal_bounds(d);
            const Parzen l(std::move(good), lo, hi);
            const Parzen g(std::move(bad), lo, hi);
            for (int c = 0; c < n_cand; ++c) {
                const double v = from_internal(d, l.sample(rng));
                const double u = to_internal(d, v);
                candidates[static_cast<std::size_t>(c)][i] = v;
                score[static_cast<std::size_t>(c)] += l.log_pdf(u) - g.log_pdf(u);
            }
        }
    }
    const auto best = std::max_element(score.begin(), score.end()) - score.begin();
    return candidates[static_cast<std::size_t>(best)];
}

SearchSpace dnn_search_space() {
    SearchSpace s;
    for (const auto& block : features::kBlocks) {
        s.dims.push_back({std::string("use_") + block.name, Kind::categorical, 0, 1, 2});
    }
    s.dims.push_back({"use_weekday", Kind::categorical, 0, 1, 2});
    s.dims.push_back({"n1", Kind::integer, 50, 500, 0});
    s.dims.push_back({"n2", Kind::integer, 25, 400, 0});
    s.dims.push_back({"activation", Kind::categorical, 0, 0, static_cast<int>(std::size(dnn::kSearchActivations))});
    s.dims.push_back({"scaler", Kind::categorical, 0, 0, static_cast<int>(std::size(transform::kAllScalerKinds))});
    s.dims.push_back({"init", Kind::categorical, 0, 0, static_cast<int>(std::size(dnn::kSearchInits))});
    s.dims.push_back({"batch_norm", Kind::categorical, 0, 0, 2});
    s.dims.push_back({"learning_rate", Kind::log_uniform, 5e-4, 0.1, 0});
    s.dims.push_back({"l1", Kind::log_uniform, 1e-5, 1.0, 0});
    s.dims.push_back({"dropout", Kind::uniform, 0.0, 0.5, 0});
    return s;
}

dnn::DnnHyperparams decode(const Point& x) {
    const auto space = dnn_search_space();
    if (!space.contains(x)) {
        throw ConfigError("point lies outside the DNN search space");
    }
    constexpr std::size_t f = features::kBlockCount + 1;
    dnn::DnnHyperparams hp;
    for (std::size_t i = 0; i < f; ++i) hp.mask.flags[i] = x[i] != 0.0;
    auto idx = [&](std::size_t i) { return static_cast<std::size_t>(x[i]); };
    hp.n1 = static_cast<int>(x[f]);
    hp.n2 = static_cast<int>(x[f + 1]);
    hp.activation = dnn::kSearchActivations[idx(f + 2)];
    hp.scaler = transform::kAllScalerKinds[idx(f + 3)];
    hp.init = dnn::kSearchInits[idx(f + 4)];
    hp.batch_norm = x[f + 5] != 0.0;
    hp.learning_rate = x[f + 6];
    hp.l1 = x[f + 7];
    hp.dropout = x[f + 8];
    return hp;
}

Point encode(const dnn::DnnHyperparams& hp) {
    constexpr std::size_t f = features::kBlockCount + 1;
    Point x(f + 9);
    for (std::size_t i = 0; i < f; ++i) x[i] = hp.mask.flags[i] ? 1.0 : 0.0;
    auto position = [](const auto& list, auto value) {
        const auto it = std::find(std::begin(list), std::end(list), value);
        if (it == std::end(list)) throw ConfigError("value outside the DNN search space");
        return static_cast<double>(it - std::begin(list));
    };
    x[f] = hp.n1;
    x[f + 1] = hp.n2;
    x[f + 2] = position(dnn::kSearchActivations, hp.activation);
    x[f + 3] = position(transform::kAllScalerKinds, hp.scaler);
    x[f + 4] = position(dnn::kSearchInits, hp.init);
    x[f + 5] = hp.batch_norm ? 1.0 : 0.0;
    x[f + 6] = hp.learning_rate;
    x[f + 7] = hp.l1;
    x[f + 8] = hp.dropout;
    return x;
}

std::string to_string(TrialStatus status) {
    switch (status) {
        case TrialStatus::ok: return "ok";
        case TrialStatus::failed: return "failed";
        case TrialStatus::rejected: return "rejected";
    }
    return "ok";
}

std::size_t Study::best() const {
    std::size_t best = trials.size();
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (trials[i].status != TrialStatus::ok || !std::isfinite(trials[i].objective)) continue;
        if (best == trials.size() || trials[i].objective < trials[best].objective) best = i;
    }
    if (best == trials.size()) {
        throw DataError("study has no completed trial");
    }
    return best;
}

double evaluate_trial(const dnn::DnnHyperparams& hp, const data::MarketDataset& dataset,
                      const StudyOptions& options, std::uint64_t seed) {
    hp.validate();
    const auto view = tuning_view(dataset, options);
    const auto split = dnn::make_split(options.test_start, options.window,
                                       dnn::SplitMode::chronological_tail, hp.mask.max_lag(), seed);
    return dnn::fit(view, split, hp, seed, options.train).training.best_validation_mae;
}

double naive_validation_mae(const data::MarketDataset& dataset, const StudyOptions& options) {
    const auto view = tuning_view(dataset, options);
    const auto split = dnn::make_split(options.test_start, options.window,
                                       dnn::SplitMode::chronological_tail, 7, 0);
    double sum = 0.0;
    for (std::size_t d : split.validation_days) {
        const auto today = view.day(data::Series::price, d);
        const auto week_ago = view.day(data::Series::price, d - 7);
        for (std::size_t h = 0; h < data::kHoursPerDay; ++h) sum += std::abs(today[h] - week_ago[h]);
    }
    return sum / static_cast<double>(split.validation_days.size() * data::kHoursPerDay);
}

std::string trial_to_json(const Trial& t) {
    nlohmann::json j;
    j["trial"] = t.number;
    j["status"] = to_string(t.status);
    j["objective"] = std::isfinite(t.objective) ? nlohmann::json(t.objective) : nlohmann::json();
    j["seed"] = t.seed;
    j["seconds"] = t.seconds;
    j["point"] = t.x;
    j["params"] = dnn::to_key_values(t.hp);
    if (!t.message.empty()) j["message"] = t.message;
    return j.dump();
}

std::vector<Trial> read_trial_log(const std::filesystem::path& path) {
    std::vector<Trial> trials;
    std::ifstream in(path);
    if (!in) return trials;
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) lines.push_back(line);
    }
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            trials.push_back(trial_from_json(nlohmann::json::parse(lines[i])));
        } catch (const nlohmann::json::exception& e) {
            if (i + 1 == lines.size()) break;  // record cut short by an interruption
            throw ParseError(i + 1, std::string("bad trial record: ") + e.what());
        }
        if (trials.back().number != static_cast<int>(i)) {
            throw ParseError(i + 1, "trial numbers must be consecutive from 0");
        }
    }
    return trials;
}

Study run_study(const data::MarketDataset& dataset, const StudyOptions& options,
                const TrialCallback& on_trial) {
    if (options.budget < 1) {
        throw ConfigError("trial budget must be at least 1");
    }
    Study study;
    study.budget = options.budget;
    const auto space = dnn_search_space();
    if (!options.log_path.empty()) {
        study.trials = read_trial_log(options.log_path);
        if (static_cast<int>(study.trials.size()) > options.budget) {
            study.trials.resize(static_cast<std::size_t>(options.budget));
        }
        // Rewrite the log so a truncated tail record is dropped before appending.
        const auto tmp = options.log_path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            if (!out) throw DataError("cannot write " + tmp);
            for (const auto& t : study.trials) out << trial_to_json(t) << '\n';
        }
        std::filesystem::rename(tmp, options.log_path);
    }
    for (int k = static_cast<int>(study.trials.size()); k < options.budget; ++k) {
        std::vector<Observation> history;
        for (const auto& t : study.trials) {
            if (t.status == TrialStatus::ok) history.push_back({t.x, t.objective});
        }
        std::mt19937_64 rng(dnn::derive_seed(options.seed, 1000003ULL + static_cast<std::uint64_t>(k)));
        Trial t;
        t.number = k;
        t.x = tpe_suggest(history, space, rng, options.tpe);
        t.hp = decode(t.x);
        t.seed = dnn::derive_seed(options.seed, static_cast<std::uint64_t>(k));
        const auto start = std::chrono::steady_clock::now();
        try {
            t.objective = evaluate_trial(t.hp, dataset, options, t.seed);
        } catch (const FeatureError& e) {
            t.status = TrialStatus::rejected;
            t.message = e.what();
        } catch (const NumericError& e) {
            t.status = TrialStatus::failed;
            t.message = e.what();
        }
        t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!options.log_path.empty()) {
            std::ofstream out(options.log_path, std::ios::app);
            out << trial_to_json(t) << '\n';
            out.flush();
            if (!out) throw DataError("cannot append to " + options.log_path.string());
        }
        study.trials.push_back(std::move(t));
        if (on_trial) on_trial(study.trials.back());
    }
    return study;
}

void export_best_config(const Study& study, const std::filesystem::path& path) {
    const Trial& best = study.trials.at(study.best());
    auto values = dnn::to_key_values(best.hp);
    values["objective"] = format_double(best.objective);
    values["trial"] = std::to_string(best.number);
    values["trial_seed"] = std::to_string(best.seed);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "# best DNN configuration (validation MAE " << format_double(best.objective) << ")\n";
    write_key_values(out, values);
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace epf::hyperopt
