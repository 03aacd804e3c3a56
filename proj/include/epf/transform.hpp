#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace epf::transform {

// Makes the median absolute deviation a consistent estimator of the
// standard deviation under normality.
inline constexpr double kMadToSigma = 1.4826;

struct AsinhParams {
    double center = 0.0;
    double scale = 1.0;  // > 0
};

double median(std::span<const double> values);

/// Median center and normalized MAD scale; scale falls back to 1 when the
/// MAD is zero.
AsinhParams fit_asinh(std::span<const double> series);

inline double apply_asinh(double x, const AsinhParams& p) {
    return std::asinh((x - p.center) / p.scale);
}

inline double invert_asinh(double y, const AsinhParams& p) {
    return p.center + p.scale * std::sinh(y);
}

/// Median/MAD affine scaling (no asinh); shares the parameter record.
inline double apply_median_mad(double x, const AsinhParams& p) { return (x - p.center) / p.scale; }
inline double invert_median_mad(double y, const AsinhParams& p) { return p.center + p.scale * y; }

enum class ScalerKind { none, standardize, minmax, median_mad, asinh_median_mad };

ScalerKind parse_scaler_kind(const std::string& name);
std::string to_string(ScalerKind kind);
inline constexpr ScalerKind kAllScalerKinds[] = {ScalerKind::none, ScalerKind::standardize,
                                                 ScalerKind::minmax, ScalerKind::median_mad,
                                                 ScalerKind::asinh_median_mad};

/// Per-column transform y = g((x - shift) / scale) where g is the identity
/// or asinh. Parameters are fitted once and then frozen.
class DnnScaler {
public:
    DnnScaler() = default;

    /// Columns flagged in `passthrough` keep shift 0 and scale 1.
    static DnnScaler fit(ScalerKind kind, const Eigen::MatrixXd& training,
                         const std::vector<bool>& passthrough = {});
    static DnnScaler from_params(ScalerKind kind, Eigen::VectorXd shift, Eigen::VectorXd scale);

    ScalerKind kind() const noexcept { return kind_; }
    Eigen::Index columns() const noexcept { return shift_.size(); }
    const Eigen::VectorXd& shift() const noexcept { return shift_; }
    const Eigen::VectorXd& scale() const noexcept { return scale_; }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd invert(const Eigen::MatrixXd& y) const;

    /// FNV-1a over the raw parameter bytes; equal fingerprints mean the
    /// parameters have not been refitted.
    std::uint64_t fingerprint() const;

private:
    ScalerKind kind_ = ScalerKind::none;
    Eigen::VectorXd shift_;
    Eigen::VectorXd scale_;
};

}  // namespace epf::transform
