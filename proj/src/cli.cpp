#include "epf/cli.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "epf/ensemble.hpp"
#include "epf/error.hpp"
#include "epf/fetch.hpp"
#include "epf/hash.hpp"
#include "epf/hyperopt.hpp"
#include "epf/keyvalue.hpp"
#include "epf/lear.hpp"
#include "epf/metrics.hpp"
#include "epf/stattests.hpp"

namespace epf::cli {

namespace fs = std::filesystem;

namespace {

using Config = std::map<std::string, std::string>;
using Row = std::array<double, data::kHoursPerDay>;

constexpr std::size_t kTestDays = 728;

const std::string& get(const Config& cfg, const std::string& key) {
    const auto it = cfg.find(key);
    if (it == cfg.end()) throw ConfigError("missing configuration key '" + key + "'");
    return it->second;
}

long get_long(const Config& cfg, const std::string& key) {
    const auto& text = get(cfg, key);
    long v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ConfigError("'" + key + "' expects an integer, got '" + text + "'");
    }
    return v;
}

std::size_t get_count(const Config& cfg, const std::string& key) {
    const long v = get_long(cfg, key);
    if (v < 0) throw ConfigError("'" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

bool get_bool(const Config& cfg, const std::string& key) {
    const auto& v = get(cfg, key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        const auto a = item.find_first_not_of(' ');
        const auto b = item.find_last_not_of(' ');
        if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
    }
    return out;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
    return out;
}

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::size_t> parse_windows(const Config& cfg) {
    std::vector<std::size_t> windows;
    const bool any = get_bool(cfg, "allow_any_window");
    for (const auto& item : split_list(get(cfg, "windows"))) {
        std::size_t w = 0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), w);
        if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
            throw ConfigError("bad calibration window '" + item + "'");
        }
        const auto& allowed = ensemble::kLearWindows;
        if (!any && std::find(std::begin(allowed), std::end(allowed), w) == std::end(allowed)) {
            throw ConfigError("calibration window " + item +
                              " is not one of 56, 84, 1092, 1456 (set allow_any_window=true)");
        }
        windows.push_back(w);
    }
    if (windows.empty()) throw ConfigError("no calibration window given");
    return windows;
}

data::TestPeriod resolve_period(const data::MarketDataset& ds, const Config& cfg,
                                std::size_t min_history) {
    Date start;
    if (get(cfg, "test_start").empty()) {
        if (ds.size() <= kTestDays) {
            throw SplitError("dataset has " + std::to_string(ds.size()) +
                             " days; set test_start explicitly");
        }
        start = ds.date(ds.size() - kTestDays);
    } else {
        start = parse_date(get(cfg, "test_start"));
    }
    auto period = data::test_split(ds, start, min_history).second;
    if (!get(cfg, "test_end").empty()) {
        const Date end = parse_date(get(cfg, "test_end"));
        const auto idx = ds.index_of(end);
        if (!idx || *idx < period.first_index) {
            throw SplitError("test end " + format_date(end) + " is outside the dataset or before the start");
        }
        period.end = end;
        period.n_days = *idx - period.first_index + 1;
    }
    return period;
}

/// Forecast CSV and timing log for one model. Existing rows are kept so an
/// interrupted run resumes after its last completed day; a row cut short by
/// the interruption is discarded.
class ForecastStore {
public:
    ForecastStore(fs::path csv, fs::path timing) : csv_path_(std::move(csv)), timing_path_(std::move(timing)) {
        load();
        rewrite();
        csv_.open(csv_path_, std::ios::app);
        timing_.open(timing_path_, std::ios::app);
        if (!csv_ || !timing_) throw DataError("cannot append to " + csv_path_.string());
    }

    bool done(Date d) const {
        std::lock_guard lock(mutex_);
        return rows_.count(d) > 0;
    }
    std::size_t size() const { return rows_.size(); }

    void add(Date d, std::span<const double, data::kHoursPerDay> values, double seconds) {
        std::lock_guard lock(mutex_);
        Row row;
        std::copy(values.begin(), values.end(), row.begin());
        rows_[d] = row;
        seconds_[d] = seconds;
        csv_ << format_forecast_row(d, values) << '\n';
        csv_.flush();
        timing_ << format_date(d) << ',' << format_double(seconds) << '\n';
        timing_.flush();
        if (!csv_ || !timing_) throw DataError("write failed: " + csv_path_.string());
    }

    BacktestHooks hooks() {
        BacktestHooks h;
        h.already_done = [this](Date d) { return done(d); };
        h.on_day = [this](Date d, std::span<const double, data::kHoursPerDay> v, double s) { add(d, v, s); };
        return h;
    }

    /// Rewrites both files in date order and returns the forecasts.
    ForecastMatrix finish() {
        csv_.close();
        timing_.close();
        rewrite();
        return matrix();
    }

    ForecastMatrix matrix() const {
        std::vector<Date> dates;
        for (const auto& [d, row] : rows_) dates.push_back(d);
        auto m = ForecastMatrix::with_dates(std::move(dates));
        std::size_t i = 0;
        for (const auto& [d, row] : rows_) m.set_row(i++, row);
        return m;
    }

    double mean_seconds() const {
        if (seconds_.empty()) return std::nan("");
        double s = 0.0;
        for (const auto& [d, v] : seconds_) s += v;
        return s / static_cast<double>(seconds_.size());
    }

private:
    void load() {
        std::ifstream in(csv_path_);
        if (!in) return;
        std::vector<std::string> lines;
        for (std::string line; std::getline(in, line);) lines.push_back(line);
        if (lines.empty()) return;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            std::istringstream one(forecast_csv_header() + "\n" + lines[i] + "\n");
            try {
                const auto m = read_forecast_csv(one);
                Row row;
                for (std::size_t h = 0; h < row.size(); ++h) row[h] = m.values(0, static_cast<Eigen::Index>(h));
                rows_[m.dates[0]] = row;
            } catch (const DataError&) {
                if (i + 1 != lines.size()) {
                    throw ParseError(i + 1, "malformed forecast row in " + csv_path_.string());
                }
            }
        }
        std::ifstream tin(timing_path_);
        for (std::string line; std::getline(tin, line);) {
            const auto comma = line.find(',');
            if (comma == std::string::npos || line.rfind("date", 0) == 0) continue;
            try {
                const Date d = parse_date(line.substr(0, comma));
                double s = 0.0;
                const auto res = std::from_chars(line.data() + comma + 1, line.data() + line.size(), s);
                if (res.ec == std::errc() && rows_.count(d)) seconds_[d] = s;
            } catch (const ConfigError&) {
            }
        }
    }

    void rewrite() {
        const auto tmp = csv_path_.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << forecast_csv_header() << '\n';
            for (const auto& [d, row] : rows_) out << format_forecast_row(d, row) << '\n';
            if (!out) throw DataError("cannot write " + tmp);
        }
        fs::rename(tmp, csv_path_);
        std::ofstream t(timing_path_, std::ios::trunc);
        t << "date,seconds\n";
        for (const auto& [d, s] : seconds_) t << format_date(d) << ',' << format_double(s) << '\n';
        if (!t) throw DataError("cannot write " + timing_path_.string());
    }

    fs::path csv_path_;
    fs::path timing_path_;
    std::map<Date, Row> rows_;
    std::map<Date, double> seconds_;
    std::ofstream csv_;
    std::ofstream timing_;
    mutable std::mutex mutex_;
};

struct Store {
    std::string name;
    std::unique_ptr<ForecastStore> store;
};

Store open_store(const fs::path& dir, const std::string& name) {
    return {name, std::make_unique<ForecastStore>(dir / (name + ".csv"), dir / (name + "_timing.csv"))};
}

void write_run_metadata(const fs::path& dir, const Config& cfg, const LoadedDataset& loaded) {
    std::ofstream out(dir / "config.txt");
    out << "# resolved configuration\n";
    write_key_values(out, cfg);
    std::ofstream hash(dir / "dataset.sha1");
    hash << git_blob_hash_file(loaded.path) << "  " << loaded.path.string() << '\n';
    if (!out || !hash) throw DataError("cannot write run metadata in " + dir.string());
}

lear::LearConfig lear_config(const Config& cfg) {
    lear::LearConfig c;
    const auto& crit = get(cfg, "lambda_criterion");
    if (crit == "aic") {
        c.criterion = lear::InformationCriterion::aic;
    } else if (crit == "aicc") {
        c.criterion = lear::InformationCriterion::aicc;
    } else {
        throw ConfigError("lambda_criterion must be aic or aicc");
    }
    c.asinh_exogenous = get_bool(cfg, "asinh_exogenous");
    c.jobs = static_cast<unsigned>(std::max<long>(1, get_long(cfg, "jobs")));
    return c;
}

dnn::WindowSpec dnn_window(const Config& cfg) {
    return {static_cast<int>(get_long(cfg, "dnn_weeks")),
            static_cast<int>(get_long(cfg, "dnn_validation_weeks"))};
}

dnn::TrainOptions train_options(const Config& cfg) {
    dnn::TrainOptions o;
    o.max_epochs = static_cast<int>(get_long(cfg, "max_epochs"));
    o.patience = static_cast<int>(get_long(cfg, "patience"));
    o.batch_size = static_cast<int>(get_long(cfg, "batch_size"));
    return o;
}

dnn::DnnHyperparams read_hyperparams(const std::string& path) {
    if (path.empty()) return {};
    return dnn::hyperparams_from_key_values(read_key_values(path));
}

void report_timing(std::ostream& out, const std::string& name, const ForecastStore& store) {
    const double mean = store.mean_seconds();
    out << name << ": " << store.size() << " days";
    if (std::isfinite(mean)) out << ", mean recalibration " << std::setprecision(3) << mean << " s/day";
    out << '\n';
}

void check_ensemble(std::ostream& out, const data::MarketDataset& ds,
                    const ensemble::EnsembleResult& r) {
    const auto c = ensemble::check_convexity(actuals(ds), r);
    out << "ensemble MAE " << format_double(c.ensemble_mae) << " vs mean member MAE "
        << format_double(c.mean_member_mae) << '\n';
    if (!c.holds) {
        throw NumericError("ensemble MAE exceeds the mean member MAE");
    }
}

// Rejects bad settings before any data is loaded or written.
void validate_backtest(const Config& cfg) {
    const auto& model = get(cfg, "model");
    if (model == "lear" || model == "lear_ensemble") {
        parse_windows(cfg);
        lear_config(cfg);
    } else if (model == "dnn" || model == "dnn_ensemble") {
        dnn_window(cfg);
        train_options(cfg);
        get_count(cfg, "members");
    } else if (model != "naive") {
        throw ConfigError("unknown model '" + model + "' (lear, dnn, lear_ensemble, dnn_ensemble, naive)");
    }
    metrics::parse_naive_kind(get(cfg, "naive_kind"));
    get_long(cfg, "seed");
    get_long(cfg, "jobs");
}

int cmd_backtest(Config cfg, std::ostream& out) {
    validate_backtest(cfg);
    const fs::path dir = get(cfg, "out_dir");
    fs::create_directories(dir);
    const auto loaded = load_dataset(cfg, dir);
    const auto& ds = loaded.dataset;
    const std::string market = get(cfg, "market");
    const std::string model = get(cfg, "model");
    const unsigned jobs = static_cast<unsigned>(std::max<long>(1, get_long(cfg, "jobs")));
    const auto seed = static_cast<std::uint64_t>(get_long(cfg, "seed"));

    if (model == "lear" || model == "lear_ensemble") {
        const auto windows = parse_windows(cfg);
        const auto period = resolve_period(ds, cfg, *std::max_element(windows.begin(), windows.end()));
        write_run_metadata(dir, cfg, loaded);
        auto config = lear_config(cfg);
        std::vector<Store> stores;
        for (std::size_t w : windows) stores.push_back(open_store(dir, market + "_lear_" + std::to_string(w)));
        ensemble::EnsembleResult r;
        if (model == "lear") {
            for (std::size_t k = 0; k < windows.size(); ++k) {
                lear::backtest_lear(ds, period, windows[k], config, stores[k].store->hooks());
            }
        } else {
            config.jobs = 1;
            ensemble::run_lear_ensemble(ds, period, windows, config, jobs,
                                        [&](std::size_t k) { return stores[k].store->hooks(); });
        }
        for (auto& s : stores) {
            r.members.push_back(s.store->finish());
            r.member_names.push_back(s.name);
            report_timing(out, s.name, *s.store);
            out << "wrote " << (dir / (s.name + ".csv")).string() << '\n';
        }
        if (model == "lear_ensemble") {
            r.combined = ensemble::combine_mean(r.members);
            const auto path = dir / (market + "_lear_ensemble.csv");
            write_forecast_csv(path, r.combined);
            out << "wrote " << path.string() << '\n';
            check_ensemble(out, ds, r);
        }
        return kOk;
    }

    if (model == "dnn" || model == "dnn_ensemble") {
        const auto window = dnn_window(cfg);
        const auto options = train_options(cfg);
        const auto period = resolve_period(ds, cfg, static_cast<std::size_t>(window.weeks) * 7);
        std::vector<ensemble::DnnMember> members;
        if (model == "dnn") {
            members.push_back({market + "_dnn", read_hyperparams(get(cfg, "dnn_config")), seed});
        } else {
            auto configs = split_list(get(cfg, "dnn_configs"));
            auto seeds = split_list(get(cfg, "seeds"));
            const std::size_t count = std::max({configs.size(), seeds.size(), get_count(cfg, "members")});
            if (seeds.empty()) {
                for (std::size_t k = 0; k < count; ++k) seeds.push_back(std::to_string(seed + k));
            }
            if (seeds.size() != count || (!configs.empty() && configs.size() != count)) {
                throw ConfigError("dnn_configs and seeds must list one entry per member");
            }
            cfg["seeds"] = join(seeds);
            cfg["members"] = std::to_string(count);
            for (std::size_t k = 0; k < count; ++k) {
                Config one{{"seed", seeds[k]}};
                members.push_back({market + "_dnn_" + std::to_string(k + 1),
                                   read_hyperparams(configs.empty() ? "" : configs[k]),
                                   static_cast<std::uint64_t>(get_long(one, "seed"))});
            }
        }
        write_run_metadata(dir, cfg, loaded);
        std::vector<Store> stores;
        for (const auto& m : members) stores.push_back(open_store(dir, m.name));
        for (std::size_t k = 0; k < members.size(); ++k) {
            dnn::backtest_dnn(ds, period, members[k].hp, members[k].seed, window, options,
                              stores[k].store->hooks(), jobs);
        }
        ensemble::EnsembleResult r;
        for (auto& s : stores) {
            r.members.push_back(s.store->finish());
            r.member_names.push_back(s.name);
            report_timing(out, s.name, *s.store);
            out << "wrote " << (dir / (s.name + ".csv")).string() << '\n';
        }
        if (model == "dnn_ensemble") {
            r.combined = ensemble::combine_mean(r.members);
            const auto path = dir / (market + "_dnn_ensemble.csv");
            write_forecast_csv(path, r.combined);
            out << "wrote " << path.string() << '\n';
            check_ensemble(out, ds, r);
        }
        return kOk;
    }

    if (model == "naive") {
        const auto period = resolve_period(ds, cfg, data::kMaxLag);
        write_run_metadata(dir, cfg, loaded);
        const auto kind = metrics::parse_naive_kind(get(cfg, "naive_kind"));
        std::vector<Date> dates(ds.dates().begin() + static_cast<std::ptrdiff_t>(period.first_index),
                                ds.dates().begin() + static_cast<std::ptrdiff_t>(period.first_index + period.n_days));
        const auto f = metrics::naive_forecast(actuals(ds), kind, dates);
        const auto path = dir / (market + "_naive_" + metrics::to_string(kind) + ".csv");
        write_forecast_csv(path, f);
        out << "wrote " << path.string() << '\n';
        return kOk;
    }
    throw ConfigError("unknown model '" + model + "' (lear, dnn, lear_ensemble, dnn_ensemble, naive)");
}

int cmd_hyperopt(const Config& cfg, std::ostream& out) {
    const fs::path dir = get(cfg, "out_dir");
    fs::create_directories(dir);
    const auto loaded = load_dataset(cfg, dir);
    hyperopt::StudyOptions o;
    o.window = dnn_window(cfg);
    o.train = train_options(cfg);
    o.budget = static_cast<int>(get_long(cfg, "budget"));
    o.seed = static_cast<std::uint64_t>(get_long(cfg, "seed"));
    o.log_path = dir / "trials.jsonl";
    // Tuning uses only the data before the test period.
    if (get(cfg, "test_start").empty() && loaded.dataset.size() <= kTestDays) {
        o.test_start = loaded.dataset.size();
    } else {
        o.test_start = resolve_period(loaded.dataset, cfg, static_cast<std::size_t>(o.window.weeks) * 7).first_index;
    }
    write_run_metadata(dir, cfg, loaded);
    const auto study = hyperopt::run_study(loaded.dataset, o, [&](const hyperopt::Trial& t) {
        out << "trial " << t.number << ' ' << hyperopt::to_string(t.status) << " objective "
            << format_double(t.objective) << '\n';
    });
    const auto& best = study.trials.at(study.best());
    hyperopt::export_best_config(study, dir / "best_config.txt");
    out << "best trial " << best.number << " validation MAE " << format_double(best.objective)
        << " (weekly naive " << format_double(hyperopt::naive_validation_mae(loaded.dataset, o))
        << ")\nwrote " << (dir / "best_config.txt").string() << '\n';
    return kOk;
}

struct Truth {
    ForecastMatrix prices;
    bool from_dataset = false;
};

Truth load_truth(const Config& src) {
    if (!get(src, "actuals").empty()) {
        return {read_forecast_csv(fs::path(get(src, "actuals"))), false};
    }
    return {actuals(load_dataset(src).dataset), true};
}

// Forecast dates that have the 7 days of history the naive benchmarks need.
std::vector<Date> scoring_dates(const ForecastMatrix& truth, const ForecastMatrix& f) {
    std::vector<Date> out;
    for (Date d : f.dates) {
        if (truth.index_of(add_days(d, -7)) && truth.index_of(d)) out.push_back(d);
    }
    return out;
}

metrics::MetricContext context_for(const ForecastMatrix& truth, const std::vector<Date>& dates,
                                   metrics::NaiveKind kind, std::size_t mase_days) {
    metrics::MetricContext ctx;
    ctx.naive = kind;
    ctx.history = &truth;
    const auto first = truth.index_of(dates.front());
    if (first && *first > 1 && mase_days > 0) {
        const std::size_t n = std::min(mase_days, *first);
        const auto block = truth.values.middleRows(static_cast<Eigen::Index>(*first - n),
                                                   static_cast<Eigen::Index>(n));
        ctx.in_sample.assign(block.data(), block.data() + block.size());
    }
    return ctx;
}

std::vector<metrics::ReportRow> score_file(const std::string& name, const ForecastMatrix& truth,
                                           const ForecastMatrix& f, metrics::NaiveKind kind,
                                           std::size_t mase_days, std::ostream& err) {
    const auto dates = scoring_dates(truth, f);
    if (dates.empty()) throw MetricError(name + ": no forecast date has 7 days of prior prices");
    if (dates.size() < f.days()) {
        err << "warning: " << name << ": scoring " << dates.size() << " of " << f.days()
            << " days (the rest lack 7 days of prior prices)\n";
    }
    const auto ctx = context_for(truth, dates, kind, mase_days);
    return metrics::evaluate(name, metrics::select_dates(truth, dates), metrics::select_dates(f, dates), ctx);
}

int cmd_evaluate(const Config& src, const std::vector<std::string>& files, std::ostream& out,
                 std::ostream& err) {
    const auto truth = load_truth(src);
    const auto kind = metrics::parse_naive_kind(get(src, "naive_kind"));
    std::vector<metrics::ReportRow> rows;
    for (const auto& file : files) {
        const auto f = read_forecast_csv(fs::path(file));
        auto part = score_file(fs::path(file).stem().string(), truth.prices, f, kind,
                               get_count(src, "mase_days"), err);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    const fs::path prefix = get(src, "out");
    if (!prefix.parent_path().empty()) fs::create_directories(prefix.parent_path());
    std::ofstream csv(prefix.string() + ".csv");
    std::ofstream json(prefix.string() + ".json");
    metrics::write_report_csv(csv, rows);
    metrics::write_report_json(json, rows);
    if (!csv || !json) throw DataError("cannot write report " + prefix.string());
    metrics::write_report_csv(out, rows);
    return kOk;
}

int cmd_test(const Config& src, const std::vector<std::string>& files, std::ostream& out,
             std::ostream& err) {
    if (files.size() < 2) throw ConfigError("need at least two forecast files");
    const auto truth = load_truth(src);
    std::vector<std::string> names;
    std::vector<ForecastMatrix> forecasts;
    for (const auto& file : files) {
        names.push_back(fs::path(file).stem().string());
        forecasts.push_back(read_forecast_csv(fs::path(file)));
    }
    stattests::PairwiseOptions o;
    o.test = stattests::parse_test_kind(get(src, "test"));
    o.norm = static_cast<int>(get_long(src, "norm"));
    o.lag_order = static_cast<int>(get_long(src, "lag"));
    o.jobs = static_cast<unsigned>(std::max<long>(1, get_long(src, "jobs")));
    const auto truth_rows = metrics::select_dates(truth.prices, forecasts.front().dates);
    const auto m = stattests::pairwise_matrix(names, forecasts, truth_rows, o);
    std::size_t blank = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m.size(); ++j) {
            if (i != j && !m.cells[i][j]) ++blank;
        }
    }
    if (blank > 0) {
        err << "warning: " << blank << " of " << m.size() * (m.size() - 1)
            << " cells left blank (identical forecasts, no test performed)\n";
    }
    const fs::path svg = get(src, "out") + ".svg";
    if (!svg.parent_path().empty()) fs::create_directories(svg.parent_path());
    stattests::render_chessboard(m, svg);
    stattests::write_pvalue_csv(out, m);
    return kOk;
}

bool is_forecast_file(const fs::path& p) {
    if (p.extension() != ".csv") return false;
    std::ifstream in(p);
    std::string header;
    std::getline(in, header);
    if (!header.empty() && header.back() == '\r') header.pop_back();
    return header == forecast_csv_header();
}

int cmd_report(const fs::path& dir, std::ostream& out, std::ostream& err) {
    if (!fs::exists(dir / "config.txt")) {
        throw ConfigError(dir.string() + " has no config.txt; not a run directory");
    }
    const auto cfg = resolve_config(dir / "config.txt", {});
    const auto loaded = load_dataset(cfg, dir);
    const auto truth = actuals(loaded.dataset);
    const auto kind = metrics::parse_naive_kind(get(cfg, "naive_kind"));
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_forecast_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no forecast files in " + dir.string());

    std::vector<metrics::ReportRow> rows;
    for (const auto& file : files) {
        const std::string name = file.stem().string();
        auto part = score_file(name, truth, read_forecast_csv(file), kind, data::kBenchmarkHistoryDays, err);
        const auto timing = dir / (name + "_timing.csv");
        if (fs::exists(timing)) {
            std::ifstream in(timing);
            double sum = 0.0;
            std::size_t n = 0;
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                const auto comma = line.find(',');
                if (comma == std::string::npos) continue;
                double s = 0.0;
                if (std::from_chars(line.data() + comma + 1, line.data() + line.size(), s).ec == std::errc()) {
                    sum += s;
                    ++n;
                }
            }
            if (n > 0) part.push_back({name, "seconds_per_day", sum / static_cast<double>(n)});
        }
        rows.insert(rows.end(), part.begin(), part.end());
    }
    std::ofstream csv(dir / "summary.csv");
    metrics::write_report_csv(csv, rows);
    if (!csv) throw DataError("cannot write summary in " + dir.string());

    const std::vector<std::string> columns = {"MAE", "rMAE", "RMSE", "rRMSE", "sMAPE", "MASE", "seconds_per_day"};
    out << std::left << std::setw(28) << "model";
    for (const auto& c : columns) out << std::right << std::setw(16) << c;
    out << '\n';
    for (const auto& file : files) {
        const std::string name = file.stem().string();
        out << std::left << std::setw(28) << name;
        for (const auto& c : columns) {
            const auto it = std::find_if(rows.begin(), rows.end(),
                                         [&](const auto& r) { return r.model == name && r.metric == c; });
            std::ostringstream cell;
            if (it != rows.end()) cell << std::fixed << std::setprecision(4) << it->value;
            out << std::right << std::setw(16) << (it != rows.end() ? cell.str() : "-");
        }
        out << '\n';
    }
    out << "wrote " << (dir / "summary.csv").string() << '\n';
    return kOk;
}

int cmd_fetch(const Config& src, std::ostream& out) {
    const auto manifest = data::load_manifest(get(src, "manifest").empty()
                                                  ? data::default_manifest_path()
                                                  : fs::path(get(src, "manifest")));
    const fs::path cache = get(src, "cache_dir").empty() ? data::default_cache_dir()
                                                         : fs::path(get(src, "cache_dir"));
    const auto path = data::fetch_dataset(get(src, "market"), cache, manifest);
    out << path.string() << "\nsha256 " << sha256_file(path) << '\n';
    return kOk;
}

}  // namespace

int exit_code_for(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        switch (err->category()) {
            case ErrorCategory::usage: return kUsage;
            case ErrorCategory::data: return kData;
            case ErrorCategory::numeric: return kNumeric;
        }
    }
    if (dynamic_cast<const fs::filesystem_error*>(&e) != nullptr) return kData;
    return kNumeric;
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"market", "SYN", "market identifier (NP, PJM, BE, FR, DE, or a label for local data)"},
        {"dataset", "", "dataset CSV, synthetic[:days[:seed]], or empty for the cached download"},
        {"model", "lear", "lear, dnn, lear_ensemble, dnn_ensemble or naive"},
        {"windows", "56", "comma-separated LEAR calibration windows in days"},
        {"allow_any_window", "false", "accept windows outside 56, 84, 1092, 1456"},
        {"test_start", "", "first test day (default: 728 days before the dataset end)"},
        {"test_end", "", "last test day (default: dataset end)"},
        {"seed", "1", "base random seed"},
        {"seeds", "", "comma-separated DNN ensemble member seeds (default: seed, seed+1, ...)"},
        {"members", "4", "DNN ensemble size when seeds and dnn_configs are empty"},
        {"dnn_config", "", "best-config file for model=dnn"},
        {"dnn_configs", "", "comma-separated best-config files for model=dnn_ensemble"},
        {"out_dir", "run", "run directory"},
        {"jobs", "1", "worker threads"},
        {"lambda_criterion", "aicc", "LEAR lambda selection on the LARS path: aicc or aic"},
        {"asinh_exogenous", "false", "apply asinh to exogenous LEAR inputs as well"},
        {"naive_kind", "lag7", "naive benchmark for relative metrics: lag1, lag7, calendar"},
        {"dnn_weeks", "208", "DNN calibration window in weeks"},
        {"dnn_validation_weeks", "42", "DNN validation weeks within the window"},
        {"max_epochs", "1000", "DNN epoch budget"},
        {"patience", "20", "DNN early-stopping patience"},
        {"batch_size", "192", "DNN mini-batch size"},
        {"budget", "1500", "hyperparameter trials"},
        {"cache_dir", "", "download cache (default: EPF_CACHE_DIR or ~/.cache/epf)"},
        {"manifest", "", "dataset manifest (default: the bundled one)"},
    };
    return keys;
}

Config resolve_config(const std::optional<fs::path>& config_file, const Config& overrides) {
    Config cfg;
    for (const auto& k : config_keys()) cfg[k.name] = k.default_value;
    auto merge = [&](const Config& values, const std::string& origin) {
        for (const auto& [key, value] : values) {
            if (!cfg.count(key)) throw ConfigError("unknown configuration key '" + key + "' in " + origin);
            cfg[key] = value;
        }
    };
    if (config_file) {
        if (!fs::exists(*config_file)) throw ConfigError("config file " + config_file->string() + " not found");
        merge(read_key_values(*config_file), config_file->string());
    }
    merge(overrides, "command line");
    return cfg;
}

LoadedDataset load_dataset(const Config& cfg, const std::optional<fs::path>& run_dir) {
    const std::string spec = get(cfg, "dataset");
    const std::string market = cfg.count("market") ? get(cfg, "market") : "SYN";
    if (spec.rfind("synthetic", 0) == 0) {
        const auto parts = split_list([&] {
            std::string s = spec;
            std::replace(s.begin(), s.end(), ':', ',');
            return s;
        }());
        data::SyntheticMarket m;
        m.market_id = market;
        if (parts.size() > 1) m.n_days = get_count({{"days", parts[1]}}, "days");
        if (parts.size() > 2) m.seed = static_cast<unsigned>(get_count({{"seed", parts[2]}}, "seed"));
        if (parts.size() > 3 || parts[0] != "synthetic") throw ConfigError("bad dataset spec '" + spec + "'");
        auto ds = data::make_synthetic_dataset(m);
        const fs::path path = run_dir ? *run_dir / "dataset.csv" : fs::temp_directory_path() / ("epf_" + market + "_synthetic.csv");
        if (!fs::exists(path)) {
            std::ofstream out(path);
            data::write_dataset_csv(out, ds);
            if (!out) throw DataError("cannot write " + path.string());
        }
        return {data::parse_dataset_csv(path, market), path};
    }
    if (!spec.empty()) {
        return {data::parse_dataset_csv(spec, market), spec};
    }
    const auto manifest_key = cfg.count("manifest") ? get(cfg, "manifest") : "";
    const auto cache_key = cfg.count("cache_dir") ? get(cfg, "cache_dir") : "";
    const auto manifest = data::load_manifest(manifest_key.empty() ? data::default_manifest_path() : fs::path(manifest_key));
    const fs::path cache = cache_key.empty() ? data::default_cache_dir() : fs::path(cache_key);
    const auto path = data::fetch_dataset(market, cache, manifest);
    return {data::parse_dataset_csv(path, market), path};
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Day-ahead electricity price forecasting benchmark"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // backtest and hyperopt: every configuration key doubles as a flag.
    std::map<std::string, std::map<std::string, std::string>> flag_values;
    std::map<std::string, std::string> config_paths;
    auto add_config_flags = [&](CLI::App* sub) {
        const std::string name = sub->get_name();
        sub->add_option("--config", config_paths[name], "key=value configuration file");
        for (const auto& k : config_keys()) {
            sub->add_option(std::string("--") + k.name, flag_values[name][k.name], k.help);
        }
    };
    auto* backtest = app.add_subcommand("backtest", "daily-recalibration backtest over the test period");
    add_config_flags(backtest);
    auto* hyper = app.add_subcommand("hyperopt", "TPE search over DNN features and hyperparameters");
    add_config_flags(hyper);

    Config src{{"dataset", ""}, {"market", "SYN"}, {"actuals", ""}, {"cache_dir", ""}, {"manifest", ""},
               {"naive_kind", "lag7"}, {"mase_days", "1456"}, {"out", "report"}, {"test", "GW"},
               {"norm", "1"}, {"lag", "1"}, {"jobs", "1"}};
    std::vector<std::string> files;
    auto add_truth = [&](CLI::App* sub) {
        sub->add_option("--dataset", src["dataset"], "dataset CSV or synthetic[:days[:seed]]");
        sub->add_option("--market", src["market"], "market whose cached download holds the actuals");
        sub->add_option("--actuals", src["actuals"], "actual prices in forecast CSV layout");
        sub->add_option("--cache_dir", src["cache_dir"], "download cache");
        sub->add_option("--manifest", src["manifest"], "dataset manifest");
        sub->add_option("forecasts", files, "forecast CSV files")->required();
    };
    auto* evaluate = app.add_subcommand("evaluate", "accuracy metrics of forecast files");
    add_truth(evaluate);
    evaluate->add_option("--naive_kind", src["naive_kind"], "naive benchmark for rMAE and rRMSE");
    evaluate->add_option("--mase_days", src["mase_days"], "in-sample days for the MASE scale");
    evaluate->add_option("--out", src["out"], "report path prefix (.csv and .json)");
    auto* test = app.add_subcommand("test", "pairwise DM or GW tests and chessboard");
    add_truth(test);
    test->add_option("--test", src["test"], "DM or GW");
    test->add_option("--norm", src["norm"], "loss norm, 1 or 2");
    test->add_option("--lag", src["lag"], "GW lag order");
    test->add_option("--jobs", src["jobs"], "worker threads");
    test->add_option("--out", src["out"], "output prefix (.csv and .svg)");
    auto* report = app.add_subcommand("report", "summary table of a run directory");
    std::string run_dir;
    report->add_option("run_dir", run_dir, "run directory")->required();
    auto* fetch = app.add_subcommand("fetch", "download a benchmark dataset into the cache");
    fetch->add_option("market", src["market"], "NP, PJM, BE, FR or DE")->required();
    fetch->add_option("--cache_dir", src["cache_dir"], "download cache");
    fetch->add_option("--manifest", src["manifest"], "dataset manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    auto resolved = [&](CLI::App* sub) {
        Config overrides;
        for (const auto& k : config_keys()) {
            if (sub->count(std::string("--") + k.name) > 0) {
                overrides[k.name] = flag_values[sub->get_name()][k.name];
            }
        }
        const auto& path = config_paths[sub->get_name()];
        return resolve_config(path.empty() ? std::nullopt : std::optional<fs::path>(path), overrides);
    };

    try {
        if (backtest->parsed()) return cmd_backtest(resolved(backtest), out);
        if (hyper->parsed()) return cmd_hyperopt(resolved(hyper), out);
        if (evaluate->parsed()) return cmd_evaluate(src, files, out, err);
        if (test->parsed()) return cmd_test(src, files, out, err);
        if (report->parsed()) return cmd_report(run_dir, out, err);
        if (fetch->parsed()) return cmd_fetch(src, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kUsage;
}

}  // namespace epf::cli
