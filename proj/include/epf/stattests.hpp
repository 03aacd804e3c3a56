#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "epf/forecast.hpp"

namespace epf::stattests {

enum class DiffVariant { multivariate, univariate };

/// Loss differential of models A and B; positive values mean A lost more.
struct LossDifferential {
    std::vector<double> values;
    int norm = 1;
    DiffVariant variant = DiffVariant::multivariate;
    int hour = -1;  // univariate only, 0-based
};

/// Per-day norm difference ||e_A||_p - ||e_B||_p over the 24 hours.
LossDifferential loss_differential(const data::DayMatrix& err_a, const data::DayMatrix& err_b,
                                   int norm);
/// Per-day |e_A|^p - |e_B|^p at one hour.
LossDifferential loss_differential_hour(const data::DayMatrix& err_a,
                                        const data::DayMatrix& err_b, int norm, int hour);

struct TestResult {
    double statistic = 0.0;
    /// DM: one-sided 1 - Phi(DM). GW: chi-square tail probability.
    double p_value = 1.0;
    /// Small values mean B beats A; used by the pairwise matrix.
    double directional_p = 1.0;
    std::string variant;
    std::string note;
};

TestResult dm_test(const LossDifferential& delta);

struct DmSuite {
    /// Empty where the hourly differential has zero variance.
    std::array<std::optional<TestResult>, data::kHoursPerDay> hours;
    int rejections = 0;  // hours with p < 0.05
    int degenerate = 0;
};

DmSuite dm_univariate_suite(const data::DayMatrix& err_a, const data::DayMatrix& err_b, int norm,
                            double level = 0.05);

/// Wald test of E[Delta_d | Delta_{d-1..d-q}] = 0 with instruments
/// [1, Delta_{d-1}, ..., Delta_{d-q}]; chi-square with q + 1 degrees of freedom.
TestResult gw_test(const LossDifferential& delta, int lag_order = 1);

enum class TestKind { dm, gw };
TestKind parse_test_kind(const std::string& text);

/// cell(i, j): directional p-value that model j beats model i; empty on the
/// diagonal and for degenerate pairs.
struct PValueMatrix {
    std::vector<std::string> models;
    std::vector<std::vector<std::optional<double>>> cells;

    std::size_t size() const noexcept { return models.size(); }
};

struct PairwiseOptions {
    TestKind test = TestKind::gw;
    int norm = 1;
    int lag_order = 1;
    unsigned jobs = 1;
};

PValueMatrix pairwise_matrix(const std::vector<std::string>& models,
                             const std::vector<ForecastMatrix>& forecasts,
                             const ForecastMatrix& actuals, const PairwiseOptions& options = {});

void write_pvalue_csv(std::ostream& out, const PValueMatrix& matrix);
void write_pvalue_csv(const std::filesystem::path& path, const PValueMatrix& matrix);
PValueMatrix read_pvalue_csv(std::istream& in);
PValueMatrix read_pvalue_csv(const std::filesystem::path& path);

struct Rgb {
    int r = 0;
    int g = 0;
    int b = 0;
    bool operator==(const Rgb&) const = default;
};

/// Green at p = 0 through yellow to red approaching 0.10; black from 0.10 up.
Rgb chessboard_color(double p);

/// SVG heatmap at `svg_path` plus the raw p-values next to it as CSV.
void render_chessboard(const PValueMatrix& matrix, const std::filesystem::path& svg_path);
std::string chessboard_svg(const PValueMatrix& matrix);

}  // namespace epf::stattests
