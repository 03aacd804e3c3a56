#include "epf/stattests.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <Eigen/Dense>

#include "epf/error.hpp"
#include "epf/metrics.hpp"
#include "epf/parallel.hpp"

namespace epf::stattests {

namespace {

using data::kHoursPerDay;

void check_norm(int norm) {
    if (norm != 1 && norm != 2) {
        throw ConfigError("loss norm must be 1 or 2, got " + std::to_string(norm));
    }
}

void check_shapes(const data::DayMatrix& a, const data::DayMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("error matrices differ in shape (" + std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()) + " days)");
    }
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Throws when the series carries no variation to test.
double checked_std(const std::vector<double>& v, double mu) {
    double ss = 0.0;
    double scale = 0.0;
    for (double x : v) {
        ss += (x - mu) * (x - mu);
        scale = std::max(scale, std::abs(x));
    }
    const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    if (sd <= 1e-12 * scale || scale == 0.0) {
        throw DegenerateError("loss differential has zero variance (identical forecasts?)");
    }
    return sd;
}

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string hex(Rgb c) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
    return buf;
}

}  // namespace

LossDifferential loss_differential(const data::DayMatrix& err_a, const data::DayMatrix& err_b,
                                   int norm) {
    check_norm(norm);
    check_shapes(err_a, err_b);
    LossDifferential d;
    d.norm = norm;
    d.variant = DiffVariant::multivariate;
    d.values.resize(static_cast<std::size_t>(err_a.rows()));
    for (Eigen::Index i = 0; i < err_a.rows(); ++i) {
        const double na = norm == 1 ? err_a.row(i).lpNorm<1>() : err_a.row(i).norm();
        const double nb = norm == 1 ? err_b.row(i).lpNorm<1>() : err_b.row(i).norm();
        d.values[static_cast<std::size_t>(i)] = na - nb;
    }
    return d;
}

LossDifferential loss_differential_hour(const data::DayMatrix& err_a,
                                        const data::DayMatrix& err_b, int norm, int hour) {
    check_norm(norm);
    check_shapes(err_a, err_b);
    if (hour < 0 || hour >= err_a.cols()) {
        throw ConfigError("hour index " + std::to_string(hour) + " out of range");
    }
    LossDifferential d;
    d.norm = norm;
    d.variant = DiffVariant::univariate;
    d.hour = hour;
    d.values.resize(static_cast<std::size_t>(err_a.rows()));
    for (Eigen::Index i = 0; i < err_a.rows(); ++i) {
        const double a = std::abs(err_a(i, hour));
        const double b = std::abs(err_b(i, hour));
        d.values[static_cast<std::size_t>(i)] = norm == 1 ? a - b : a * a - b * b;
    }
    return d;
}

TestResult dm_test(const LossDifferential& delta) {
    const auto& v = delta.values;
    if (v.size() < 2) {
        throw ShapeError("DM test needs at least two loss differentials");
    }
    const double mu = mean(v);
    const double sd = checked_std(v, mu);
    TestResult r;
    r.statistic = std::sqrt(static_cast<double>(v.size())) * mu / sd;
    const boost::math::normal_distribution<double> normal;
    r.p_value = boost::math::cdf(boost::math::complement(normal, r.statistic));
    r.directional_p = r.p_value;
    r.variant = delta.variant == DiffVariant::multivariate
                    ? "DM multivariate L" + std::to_string(delta.norm)
                    : "DM hour " + std::to_string(delta.hour + 1) + " L" + std::to_string(delta.norm);
    r.note = "B better than A at p = " + format_double(r.p_value);
    return r;
}

DmSuite dm_univariate_suite(const data::DayMatrix& err_a, const data::DayMatrix& err_b, int norm,
                            double level) {
    DmSuite suite;
    for (int h = 0; h < static_cast<int>(kHoursPerDay); ++h) {
        try {
            auto r = dm_test(loss_differential_hour(err_a, err_b, norm, h));
            if (r.p_value < level) ++suite.rejections;
            suite.hours[static_cast<std::size_t>(h)] = std::move(r);
        } catch (const DegenerateError&) {
            ++suite.degenerate;
        }
    }
    return suite;
}

TestResult gw_test(const LossDifferential& delta, int lag_order) {
    if (lag_order < 0) {
        throw ConfigError("GW lag order must be non-negative");
    }
    const auto& v = delta.values;
    const std::size_t q = static_cast<std::size_t>(lag_order);
    if (v.size() <= q + 10) {
        throw ShapeError("GW test with lag order " + std::to_string(q) + " needs more than " +
                         std::to_string(q + 10) + " loss differentials");
    }
    const double mu = mean(v);
    checked_std(v, mu);

    const auto k = static_cast<Eigen::Index>(q + 1);
    const std::size_t n = v.size() - q;
    Eigen::VectorXd zbar = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd z(k);
    for (std::size_t d = q; d < v.size(); ++d) {
        z(0) = v[d];
        for (std::size_t l = 1; l <= q; ++l) {
            z(static_cast<Eigen::Index>(l)) = v[d - l] * v[d];
        }
        zbar += z;
        omega.noalias() += z * z.transpose();
    }
    zbar /= static_cast<double>(n);
    omega /= static_cast<double>(n);

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(omega, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * hi)) {
        throw ConditioningError("GW moment matrix is singular");
    }
    TestResult r;
    r.statistic = static_cast<double>(n) * zbar.dot(omega.ldlt().solve(zbar));
    const boost::math::chi_squared_distribution<double> chi2(static_cast<double>(q + 1));
    r.p_value = boost::math::cdf(boost::math::complement(chi2, std::max(r.statistic, 0.0)));
    r.directional_p = mu > 0.0 ? r.p_value : 1.0;
    r.variant = "GW q=" + std::to_string(q) + " L" + std::to_string(delta.norm);
    r.note = mu > 0.0 ? "B better than A at p = " + format_double(r.p_value)
                      : "A not worse than B on average";
    return r;
}

TestKind parse_test_kind(const std::string& text) {
    if (text == "DM" || text == "dm") return TestKind::dm;
    if (text == "GW" || text == "gw") return TestKind::gw;
    throw ConfigError("unknown test '" + text + "' (DM or GW)");
}

PValueMatrix pairwise_matrix(const std::vector<std::string>& models,
                             const std::vector<ForecastMatrix>& forecasts,
                             const ForecastMatrix& actuals, const PairwiseOptions& options) {
    if (models.size() != forecasts.size()) {
        throw ConfigError("model names and forecasts differ in count");
    }
    const std::size_t k = models.size();
    std::vector<data::DayMatrix> errors;
    errors.reserve(k);
    for (const auto& f : forecasts) {
        errors.push_back(metrics::forecast_errors(actuals, f));
    }
    PValueMatrix m;
    m.models = models;
    m.cells.assign(k, std::vector<std::optional<double>>(k));
    parallel_for(k * k, options.jobs, [&](std::size_t cell) {
        const std::size_t i = cell / k;
        const std::size_t j = cell % k;
        if (i == j) return;
        const auto delta = loss_differential(errors[i], errors[j], options.norm);
        try {
            const auto r = options.test == TestKind::dm ? dm_test(delta)
                                                        : gw_test(delta, options.lag_order);
            m.cells[i][j] = r.directional_p;
        } catch (const DegenerateError&) {
            // identical forecasts: no test was performed
        }
    });
    return m;
}

void write_pvalue_csv(std::ostream& out, const PValueMatrix& matrix) {
    out << "model";
    for (const auto& name : matrix.models) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        out << matrix.models[i];
        for (std::size_t j = 0; j < matrix.size(); ++j) {
            out << ',';
            if (matrix.cells[i][j]) out << format_double(*matrix.cells[i][j]);
        }
        out << '\n';
    }
}

void write_pvalue_csv(const std::filesystem::path& path, const PValueMatrix& matrix) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    write_pvalue_csv(out, matrix);
    if (!out) throw DataError("write failed: " + path.string());
}

PValueMatrix read_pvalue_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(1, "empty p-value file");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv(line);
    if (header.empty() || header.front() != "model") {
        throw ParseError(1, "header must start with 'model'");
    }
    PValueMatrix m;
    m.models.assign(header.begin() + 1, header.end());
    const std::size_t k = m.models.size();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        if (fields.size() != k + 1) {
            throw ParseError(line_no, "expected " + std::to_string(k + 1) + " fields");
        }
        const std::size_t row = m.cells.size();
        if (row >= k || fields[0] != m.models[row]) {
            throw ParseError(line_no, "row label does not match the header order");
        }
        std::vector<std::optional<double>> cells(k);
        for (std::size_t j = 0; j < k; ++j) {
            const auto& f = fields[j + 1];
            if (f.empty()) continue;
            double v = 0.0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (res.ec != std::errc() || res.ptr != f.data() + f.size() || v < 0.0 || v > 1.0) {
                throw ParseError(line_no, "bad p-value '" + f + "'");
            }
            cells[j] = v;
        }
        m.cells.push_back(std::move(cells));
    }
    if (m.cells.size() != k) {
        throw ParseError(line_no, "expected " + std::to_string(k) + " rows");
    }
    return m;
}

PValueMatrix read_pvalue_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return read_pvalue_csv(in);
}

Rgb chessboard_color(double p) {
    if (std::isnan(p)) {
        throw ConfigError("p-value is NaN");
    }
    if (p >= 0.10) {
        return {0, 0, 0};
    }
    const double t = std::clamp(p / 0.10, 0.0, 1.0);
    if (t < 0.5) {
        const double u = 2.0 * t;
        return {static_cast<int>(std::lround(255.0 * u)),
                static_cast<int>(std::lround(128.0 + 127.0 * u)), 0};
    }
    const double u = 2.0 * t - 1.0;
    return {255, static_cast<int>(std::lround(255.0 * (1.0 - u))), 0};
}

std::string chessboard_svg(const PValueMatrix& matrix) {
    const std::size_t k = matrix.size();
    const int cell = 32;
    std::size_t longest = 1;
    for (const auto& name : matrix.models) longest = std::max(longest, name.size());
    const int label = 8 + static_cast<int>(longest) * 7;
    const int grid = cell * static_cast<int>(k);
    const int bar_x = label + grid + 24;
    const int width = bar_x + 70;
    const int height = std::max(grid, 200) + label + 16;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const int x = label + static_cast<int>(j) * cell;
            const int y = 8 + static_cast<int>(i) * cell;
            const auto& p = matrix.cells[i][j];
            svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\""
                << cell << "\" fill=\"" << (p ? hex(chessboard_color(*p)) : "#ffffff")
                << "\" stroke=\"#d0d0d0\" stroke-width=\"0.5\">";
            if (p) {
                svg << "<title>" << escape_xml(matrix.models[j]) << " vs "
                    << escape_xml(matrix.models[i]) << ": p = " << format_double(*p) << "</title>";
            }
            svg << "</rect>\n";
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        const int c = static_cast<int>(i) * cell + cell / 2;
        svg << "<text x=\"" << label - 4 << "\" y=\"" << 8 + c + 4
            << "\" text-anchor=\"end\">" << escape_xml(matrix.models[i]) << "</text>\n";
        svg << "<text transform=\"translate(" << label + c + 4 << ',' << 8 + grid + 4
            << ") rotate(90)\">" << escape_xml(matrix.models[i]) << "</text>\n";
    }

    // Colour bar over [0, 0.10) with the black band on top.
    const int bar_h = 180;
    svg << "<defs><linearGradient id=\"pscale\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">";
    for (int s = 0; s <= 10; ++s) {
        const double p = 0.0999999 * s / 10.0;
        svg << "<stop offset=\"" << s * 10 << "%\" stop-color=\"" << hex(chessboard_color(p))
            << "\"/>";
    }
    svg << "</linearGradient></defs>\n";
    svg << "<rect x=\"" << bar_x << "\" y=\"8\" width=\"14\" height=\"12\" fill=\"#000000\"/>\n";
    svg << "<rect x=\"" << bar_x << "\" y=\"20\" width=\"14\" height=\"" << bar_h - 12
        << "\" fill=\"url(#pscale)\"/>\n";
    svg << "<text x=\"" << bar_x + 18 << "\" y=\"18\">&#8805; 0.10</text>\n";
    svg << "<text x=\"" << bar_x + 18 << "\" y=\"" << 8 + bar_h / 2 + 6 << "\">0.05</text>\n";
    svg << "<text x=\"" << bar_x + 18 << "\" y=\"" << 8 + bar_h << "\">0.00</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

void render_chessboard(const PValueMatrix& matrix, const std::filesystem::path& svg_path) {
    std::ofstream out(svg_path);
    if (!out) throw DataError("cannot write " + svg_path.string());
    out << chessboard_svg(matrix);
    if (!out) throw DataError("write failed: " + svg_path.string());
    auto csv_path = svg_path;
    csv_path.replace_extension(".csv");
    write_pvalue_csv(csv_path, matrix);
}

}  // namespace epf::stattests
