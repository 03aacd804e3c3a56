#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "epf/dataset.hpp"
#include "epf/dnn.hpp"

namespace epf::hyperopt {

struct Dimension {
    enum class Kind { uniform, log_uniform, integer, categorical };

    std::string name;
    Kind kind = Kind::uniform;
    double low = 0.0;   // numeric kinds
    double high = 1.0;
    int choices = 2;    // categorical
};

/// A point holds one value per dimension: the number itself for numeric
/// kinds (integers are whole numbers) and the choice index for categorical.
using Point = std::vector<double>;

struct SearchSpace {
    std::vector<Dimension> dims;

    bool contains(const Point& x) const;
};

struct Observation {
    Point x;
    double objective = 0.0;
};

struct TpeOptions {
    double gamma = 0.25;
    int n_startup = 20;
    int n_ei_candidates = 24;
};

Point sample_prior(const SearchSpace& space, std::mt19937_64& rng);

/// Prior draws until `n_startup` finite observations exist; afterwards the
/// best gamma fraction forms the good density l and the rest g, and the
/// best l/g ratio among candidates drawn from l is returned. Observations
/// with non-finite objectives are ignored.
Point tpe_suggest(const std::vector<Observation>& history, const SearchSpace& space,
                  std::mt19937_64& rng, const TpeOptions& options = {});

/// 11 feature flags, then n1, n2, activation, scaler, init, batch_norm,
/// learning_rate, l1 and dropout.
SearchSpace dnn_search_space();
dnn::DnnHyperparams decode(const Point& x);
Point encode(const dnn::DnnHyperparams& hp);

enum class TrialStatus { ok, failed, rejected };
std::string to_string(TrialStatus status);

struct Trial {
    int number = 0;
    Point x;
    dnn::DnnHyperparams hp;
    double objective = std::numeric_limits<double>::infinity();
    TrialStatus status = TrialStatus::ok;
    std::uint64_t seed = 0;
    double seconds = 0.0;
    std::string message;
};

struct Study {
    std::vector<Trial> trials;
    int budget = 0;

    /// Index of the lowest finite objective; throws when there is none.
    std::size_t best() const;
};

/// Tuning setup: the window of `window.weeks` weeks ending the day before
/// `test_start`, split chronologically into training and its last
/// `window.validation_weeks` weeks.
struct StudyOptions {
    std::size_t test_start = data::kBenchmarkHistoryDays;
    dnn::WindowSpec window;
    dnn::TrainOptions train;
    TpeOptions tpe;
    int budget = 1500;
    std::uint64_t seed = 1;
    /// JSON-lines trial log; completed trials found there are not rerun.
    std::filesystem::path log_path;
};

/// Validation MAE (price units) of one network trained on the chronological
/// split. Throws FeatureError for an all-off mask before any training.
double evaluate_trial(const dnn::DnnHyperparams& hp, const data::MarketDataset& dataset,
                      const StudyOptions& options, std::uint64_t seed);

/// Validation MAE of the weekly naive forecast on the same split.
double naive_validation_mae(const data::MarketDataset& dataset, const StudyOptions& options);

using TrialCallback = std::function<void(const Trial&)>;

Study run_study(const data::MarketDataset& dataset, const StudyOptions& options,
                const TrialCallback& on_trial = {});

std::vector<Trial> read_trial_log(const std::filesystem::path& path);
std::string trial_to_json(const Trial& trial);

/// key=value file readable by dnn::hyperparams_from_key_values.
void export_best_config(const Study& study, const std::filesystem::path& path);

}  // namespace epf::hyperopt
