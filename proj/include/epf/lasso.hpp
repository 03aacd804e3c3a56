#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace epf::lear {

// All solvers minimize  RSS(theta) + lambda * ||theta||_1  (no 1/n factor),
// so lambdas from the LARS path can be passed straight to coordinate descent.

struct LassoOptions {
    bool fit_intercept = true;  // center X and y; intercept is unpenalized
    bool standardize = true;    // unit-variance columns for the solve
    double tol = 1e-4;          // max |coefficient change| per sweep (solve units)
    int max_sweeps = 1000;
    bool record_objective = false;
};

struct LassoFit {
    Eigen::VectorXd theta;  // original column units
    double intercept = 0.0;
    int sweeps = 0;
    bool converged = true;  // false: max_sweeps hit, theta is the last iterate
    std::vector<double> objective;  // per sweep, when requested
};

struct PathPoint {
    double lambda = 0.0;
    Eigen::VectorXd theta;
    int n_active = 0;  // nonzero coefficients
    double rss = 0.0;
    std::vector<int> active;  // LARS active set at this breakpoint
};

struct LarsPath {
    std::vector<PathPoint> points;  // lambda strictly decreasing
};

/// Column centering/scaling shared by the X-space entry points. Constant
/// columns are dropped from the solve and report a zero coefficient.
struct Standardization {
    Eigen::VectorXd x_center;
    Eigen::VectorXd x_scale;
    double y_center = 0.0;
    std::vector<int> kept;

    static Standardization fit(const Eigen::MatrixXd& X, const LassoOptions& options);
    Eigen::MatrixXd transform(const Eigen::MatrixXd& X) const;  // kept columns only
    Eigen::VectorXd unscale(const Eigen::VectorXd& solve_theta, Eigen::Index p) const;
    Eigen::VectorXd to_solve_units(const Eigen::VectorXd& theta) const;
    double intercept(const Eigen::VectorXd& theta) const;
};

struct GramCdResult {
    Eigen::VectorXd theta;
    int sweeps = 0;
    bool converged = true;
    std::vector<double> objective;
};

/// Cyclic coordinate descent with soft-threshold updates on the Gram form
/// G = X'X, c = X'y, yty = y'y.
GramCdResult lasso_cd_gram(const Eigen::MatrixXd& G, const Eigen::VectorXd& c, double yty,
                           double lambda, double tol, int max_sweeps,
                           const Eigen::VectorXd* warm_start = nullptr,
                           bool record_objective = false);

/// LARS with lasso drop steps on the Gram form. Stops once `max_active`
/// variables are active (when that is below p) or lambda reaches zero.
LarsPath lars_path_gram(const Eigen::MatrixXd& G, const Eigen::VectorXd& c, double yty,
                        std::size_t max_active);

LassoFit lasso_cd(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                  const LassoOptions& options = {},
                  const Eigen::VectorXd* warm_start = nullptr);

/// Path lambdas are in the parameterization used by lasso_cd with the same
/// options; thetas are reported in original units.
LarsPath lars_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   const LassoOptions& options = {});

enum class InformationCriterion {
    aic,   // n ln(RSS/n) + 2 df
    aicc,  // aic + 2 df (df + 1) / (n - df - 1); infinite once df >= n - 1
};

double aic(double rss, std::size_t n, int df);
double aicc(double rss, std::size_t n, int df);

/// Path index minimizing the criterion; df is the nonzero count. Ties go
/// to the larger lambda. When every breakpoint has RSS = 0 the smallest
/// lambda is returned.
std::size_t select_aic_index(const LarsPath& path, std::size_t n,
                             InformationCriterion criterion = InformationCriterion::aic);
double select_lambda_aic(const LarsPath& path, std::size_t n,
                         InformationCriterion criterion = InformationCriterion::aic);

inline double soft_threshold(double x, double t) {
    return x > t ? x - t : (x < -t ? x + t : 0.0);
}

}  // namespace epf::lear
