#include "epf/transform.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "epf/error.hpp"

namespace epf::transform {

double median(std::span<const double> values) {
    if (values.empty()) {
        throw TransformError("median of an empty series");
    }
    std::vector<double> v(values.begin(), values.end());
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

AsinhParams fit_asinh(std::span<const double> series) {
    if (series.empty()) {
        throw TransformError("cannot fit a transform on an empty series");
    }
    AsinhParams p;
    p.center = median(series);
    std::vector<double> dev(series.size());
    std::transform(series.begin(), series.end(), dev.begin(),
                   [&](double x) { return std::abs(x - p.center); });
    const double mad = kMadToSigma * median(dev);
    p.scale = mad > 0.0 ? mad : 1.0;
    return p;
}

ScalerKind parse_scaler_kind(const std::string& name) {
    if (name == "none") return ScalerKind::none;
    if (name == "standardize") return ScalerKind::standardize;
    if (name == "minmax") return ScalerKind::minmax;
    if (name == "median_mad") return ScalerKind::median_mad;
    if (name == "asinh_median_mad") return ScalerKind::asinh_median_mad;
    throw ConfigError("unknown scaler kind '" + name + "'");
}

std::string to_string(ScalerKind kind) {
    switch (kind) {
        case ScalerKind::none: return "none";
        case ScalerKind::standardize: return "standardize";
        case ScalerKind::minmax: return "minmax";
        case ScalerKind::median_mad: return "median_mad";
        case ScalerKind::asinh_median_mad: return "asinh_median_mad";
    }
    return "none";
}

DnnScaler DnnScaler::fit(ScalerKind kind, const Eigen::MatrixXd& training,
                         const std::vector<bool>& passthrough) {
    if (training.rows() == 0 || training.cols() == 0) {
        throw TransformError("cannot fit a scaler on an empty matrix");
    }
    const Eigen::Index cols = training.cols();
    DnnScaler s;
    s.kind_ = kind;
    s.shift_ = Eigen::VectorXd::Zero(cols);
    s.scale_ = Eigen::VectorXd::Ones(cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        if (static_cast<std::size_t>(j) < passthrough.size() &&
            passthrough[static_cast<std::size_t>(j)]) {
            continue;
        }
        const Eigen::VectorXd col = training.col(j);
        double shift = 0.0;
        double scale = 1.0;
        switch (kind) {
            case ScalerKind::none:
                break;
            case ScalerKind::standardize: {
                shift = col.mean();
                scale = std::sqrt((col.array() - shift).square().mean());
                break;
            }
            case ScalerKind::minmax: {
                const double lo = col.minCoeff();
                const double hi = col.maxCoeff();
                shift = 0.5 * (lo + hi);
                scale = 0.5 * (hi - lo);
                break;
            }
            case ScalerKind::median_mad:
            case ScalerKind::asinh_median_mad: {
                const auto p = fit_asinh(std::span<const double>(col.data(), col.size()));
                shift = p.center;
                scale = p.scale;
                break;
            }
        }
        s.shift_(j) = shift;
        s.scale_(j) = scale > 0.0 && std::isfinite(scale) ? scale : 1.0;
    }
    return s;
}

DnnScaler DnnScaler::from_params(ScalerKind kind, Eigen::VectorXd shift, Eigen::VectorXd scale) {
    if (shift.size() != scale.size()) {
        throw TransformError("scaler parameter lengths differ");
    }
    DnnScaler s;
    s.kind_ = kind;
    s.shift_ = std::move(shift);
    s.scale_ = std::move(scale);
    return s;
}

Eigen::MatrixXd DnnScaler::apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != columns()) {
        throw ShapeError("scaler fitted on " + std::to_string(columns()) + " columns, got " +
                         std::to_string(x.cols()));
    }
    Eigen::MatrixXd y = (x.rowwise() - shift_.transpose()).array().rowwise() /
                        scale_.transpose().array();
    if (kind_ == ScalerKind::asinh_median_mad) {
        y = y.array().asinh();
    }
    return y;
}

Eigen::MatrixXd DnnScaler::invert(const Eigen::MatrixXd& y) const {
    if (y.cols() != columns()) {
        throw ShapeError("scaler fitted on " + std::to_string(columns()) + " columns, got " +
                         std::to_string(y.cols()));
    }
    Eigen::MatrixXd z = y;
    if (kind_ == ScalerKind::asinh_median_mad) {
        z = z.array().sinh();
    }
    return (z.array().rowwise() * scale_.transpose().array()).rowwise() +
           shift_.transpose().array();
}

std::uint64_t DnnScaler::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    const int kind = static_cast<int>(kind_);
    mix(&kind, sizeof kind);
    mix(shift_.data(), sizeof(double) * static_cast<std::size_t>(shift_.size()));
    mix(scale_.data(), sizeof(double) * static_cast<std::size_t>(scale_.size()));
    return h;
}

}  // namespace epf::transform
