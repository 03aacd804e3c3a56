#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "epf/backtest.hpp"
#include "epf/dataset.hpp"
#include "epf/features.hpp"
#include "epf/forecast.hpp"
#include "epf/transform.hpp"

namespace epf::dnn {

enum class Activation { relu, tanh, sigmoid, softplus, leaky_relu, linear };
enum class Init { glorot_uniform, he_uniform, lecun_uniform, zeros };

inline constexpr Activation kSearchActivations[] = {Activation::relu, Activation::tanh,
                                                    Activation::sigmoid, Activation::softplus,
                                                    Activation::leaky_relu};
inline constexpr Init kSearchInits[] = {Init::glorot_uniform, Init::he_uniform,
                                        Init::lecun_uniform};
inline constexpr double kLeakySlope = 0.01;

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);
Init parse_init(const std::string& name);
std::string to_string(Init init);

struct DnnHyperparams {
    int n1 = 256;
    int n2 = 128;
    Activation activation = Activation::relu;
    double dropout = 0.0;
    double learning_rate = 1e-3;
    bool batch_norm = false;
    transform::ScalerKind scaler = transform::ScalerKind::median_mad;
    Init init = Init::glorot_uniform;
    double l1 = 0.0;
    features::FeatureMask mask = features::FeatureMask::all();

    /// Throws ConfigError when a field is outside its allowed range.
    void validate() const;
    friend bool operator==(const DnnHyperparams&, const DnnHyperparams&) = default;
};

std::map<std::string, std::string> to_key_values(const DnnHyperparams& hp);
/// Missing keys keep their defaults.
DnnHyperparams hyperparams_from_key_values(const std::map<std::string, std::string>& values);

struct TrainOptions {
    int batch_size = 192;
    int max_epochs = 1000;
    int patience = 20;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double bn_momentum = 0.99;
    double bn_epsilon = 1e-3;
};

/// Offsets of each tensor inside the flat parameter vector. Weight
/// matrices are stored column-major with shape fan_in x fan_out.
struct ParamLayout {
    Eigen::Index w1, b1, g1, beta1, w2, b2, g2, beta2, w3, b3, size;
};

/// Two hidden layers and a linear 24-unit output layer, with frozen input
/// and output scalers.
struct DnnModel {
    DnnHyperparams hp;
    int input_dim = 0;
    std::uint64_t seed = 0;
    Eigen::VectorXd params;
    // Batch-norm running statistics, used at inference.
    Eigen::VectorXd mean1, var1, mean2, var2;
    double bn_epsilon = 1e-3;
    transform::DnnScaler x_scaler;
    transform::DnnScaler y_scaler;

    ParamLayout layout() const;
};

inline constexpr int kOutputs = static_cast<int>(data::kHoursPerDay);

/// Network with weights drawn for `hp.init` from `seed`. The input
/// dimension must match the feature mask.
DnnModel build_network(const DnnHyperparams& hp, int input_dim, std::uint64_t seed);

/// Inference pass on scaled inputs (dropout off, batch-norm running stats).
Eigen::VectorXd forward(const DnnModel& model, const Eigen::VectorXd& row);
Eigen::MatrixXd forward_batch(const DnnModel& model, const Eigen::MatrixXd& rows);

/// Raw feature row -> 24 prices: scale, forward, invert.
Eigen::VectorXd predict_prices(const DnnModel& model, const Eigen::VectorXd& raw_row);
Eigen::MatrixXd predict_prices(const DnnModel& model, const Eigen::MatrixXd& raw_rows);

/// Dropout keep masks (already divided by the keep probability), one per
/// hidden layer, shaped like the layer activations.
struct DropoutMasks {
    Eigen::MatrixXd m1;
    Eigen::MatrixXd m2;
};

struct LossGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;  // same layout as DnnModel::params
};

/// Training-mode loss mean|out - Y| + l1 * sum|kernels| on scaled data and
/// its gradient. Batch norm uses batch statistics.
LossGradient loss_and_gradient(const DnnModel& model, const Eigen::MatrixXd& X,
                               const Eigen::MatrixXd& Y, const DropoutMasks* masks = nullptr);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double validation_mae = 0.0;  // price units
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_validation_mae = 0.0;
};

/// Adam on shuffled mini-batches with early stopping on validation MAE.
/// Inputs and y_train are scaled; y_val is in price units and compared with
/// the inverted network output. The model is left at its best-validation
/// weights.
TrainResult train(DnnModel& model, const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_train,
                  const Eigen::MatrixXd& x_val, const Eigen::MatrixXd& y_val,
                  const TrainOptions& options = {});

enum class SplitMode { chronological_tail, random_weeks };

struct WindowSpec {
    int weeks = 208;
    int validation_weeks = 42;
};

/// Day indices of the calibration window ending the day before `target`.
struct TrainSplit {
    std::vector<std::size_t> train_days;
    std::vector<std::size_t> validation_days;
    SplitMode mode = SplitMode::random_weeks;
};

/// Weeks are 7-day blocks counted back from `target`. Days lacking the
/// mask's lag history are dropped from training; weeks holding such days
/// are never picked for validation.
TrainSplit make_split(std::size_t target, const WindowSpec& window, SplitMode mode, int max_lag,
                      std::uint64_t seed);

struct FitResult {
    DnnModel model;
    TrainResult training;
};

/// Fits both scalers on the training rows, builds and trains a network.
FitResult fit(const data::HistoryView& view, const TrainSplit& split, const DnnHyperparams& hp,
              std::uint64_t seed, const TrainOptions& options = {});

/// Retrains from scratch on a random-week split of the window before
/// `target` and forecasts that day.
std::array<double, data::kHoursPerDay> recalibrate_forecast_day(
    const data::MarketDataset& dataset, std::size_t target, const DnnHyperparams& hp,
    std::uint64_t seed, const WindowSpec& window = {}, const TrainOptions& options = {},
    data::AccessObserver* observer = nullptr);

/// Per-day seeds derive from `seed` and the date, so results do not depend
/// on `jobs`.
ForecastMatrix backtest_dnn(const data::MarketDataset& dataset, const data::TestPeriod& period,
                            const DnnHyperparams& hp, std::uint64_t seed,
                            const WindowSpec& window = {}, const TrainOptions& options = {},
                            const BacktestHooks& hooks = {}, unsigned jobs = 1);

void save_model(const DnnModel& model, const std::filesystem::path& path);
DnnModel load_model(const std::filesystem::path& path);

/// SplitMix64 mix of a base seed and a stream number.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace epf::dnn
