#include "epf/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>


#include "epf/error.hpp"

namespace epf::lear {
namespace {

void require_finite(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    if (!X.allFinite() || !y.allFinite()) {
        throw NumericError("lasso input contains non-finite values");
    }
    if (X.rows() != y.size()) {
        throw ShapeError("design has " + std::to_string(X.rows()) + " rows but response has " +
                         std::to_string(y.size()));
    }
}

double gram_rss(const Eigen::VectorXd& theta, const Eigen::VectorXd& g_theta,
                const Eigen::VectorXd& c, double yty) {
    return std::max(0.0, yty - 2.0 * theta.dot(c) + theta.dot(g_theta));
}

int count_nonzero(const Eigen::VectorXd& theta) {
    return static_cast<int>((theta.array() != 0.0).count());
}

}  // namespace

// --- standardization ----------------------------------------------------------

Standardization Standardization::fit(const Eigen::MatrixXd& X, const LassoOptions& options) {
    const Eigen::Index p = X.cols();
    const double n = static_cast<double>(X.rows());
    Standardization s;
    s.x_center = Eigen::VectorXd::Zero(p);
    s.x_scale = Eigen::VectorXd::Ones(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto col = X.col(j);
        const double center = options.fit_intercept ? col.mean() : 0.0;
        const double spread = std::sqrt((col.array() - center).square().sum() / n);
        if (!(spread > 0.0) || (options.fit_intercept && spread <= 1e-12 * (1.0 + std::abs(center)))) {
            continue;
        }
        s.x_center(j) = center;
        s.x_scale(j) = options.standardize ? spread : 1.0;
        s.kept.push_back(static_cast<int>(j));
    }
    return s;
}

Eigen::MatrixXd Standardization::transform(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd Z(X.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const int j = kept[k];
        Z.col(static_cast<Eigen::Index>(k)) =
            (X.col(j).array() - x_center(j)) / x_scale(j);
    }
    return Z;
}

Eigen::VectorXd Standardization::unscale(const Eigen::VectorXd& solve_theta,
                                         Eigen::Index p) const {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const int j = kept[k];
        theta(j) = solve_theta(static_cast<Eigen::Index>(k)) / x_scale(j);
    }
    return theta;
}

Eigen::VectorXd Standardization::to_solve_units(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const int j = kept[k];
        out(static_cast<Eigen::Index>(k)) = theta(j) * x_scale(j);
    }
    return out;
}

double Standardization::intercept(const Eigen::VectorXd& theta) const {
    return y_center - x_center.dot(theta);
}

// --- coordinate descent -------------------------------------------------------

GramCdResult lasso_cd_gram(const Eigen::MatrixXd& G, const Eigen::VectorXd& c, double yty,
                           double lambda, double tol, int max_sweeps,
                           const Eigen::VectorXd* warm_start, bool record_objective) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw NumericError("lambda must be finite and non-negative");
    }
    const Eigen::Index p = c.size();
    GramCdResult result;
    result.theta = Eigen::VectorXd::Zero(p);
    if (warm_start != nullptr && warm_start->size() == p) {
        result.theta = *warm_start;
    }
    Eigen::VectorXd g_theta = G * result.theta;
    const double half_lambda = 0.5 * lambda;
    auto objective = [&] {
        return gram_rss(result.theta, g_theta, c, yty) + lambda * result.theta.lpNorm<1>();
    };
    if (record_objective) {
        result.objective.push_back(objective());
    }
    result.converged = false;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            const double gjj = G(j, j);
            if (gjj <= 0.0) {
                continue;
            }
            const double old = result.theta(j);
            const double rho = c(j) - g_theta(j) + gjj * old;
            const double updated = soft_threshold(rho, half_lambda) / gjj;
            const double delta = updated - old;
            if (delta != 0.0) {
                result.theta(j) = updated;
                g_theta.noalias() += delta * G.col(j);
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        result.sweeps = sweep + 1;
        if (record_objective) {
            result.objective.push_back(objective());
        }
        if (max_change < tol) {
            result.converged = true;
            break;
        }
    }
    return result;
}

LassoFit lasso_cd(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                  const LassoOptions& options, const Eigen::VectorXd* warm_start) {
    require_finite(X, y);
    Standardization s = Standardization::fit(X, options);
    s.y_center = options.fit_intercept ? y.mean() : 0.0;
    const Eigen::MatrixXd Z = s.transform(X);
    const Eigen::VectorXd yc = y.array() - s.y_center;
    const Eigen::MatrixXd G = Z.transpose() * Z;
    const Eigen::VectorXd c = Z.transpose() * yc;

    Eigen::VectorXd warm;
    if (warm_start != nullptr && warm_start->size() == X.cols()) {
        warm = s.to_solve_units(*warm_start);
    }
    const auto cd = lasso_cd_gram(G, c, yc.squaredNorm(), lambda, options.tol,
                                  options.max_sweeps, warm.size() ? &warm : nullptr,
                                  options.record_objective);
    LassoFit fit;
    fit.theta = s.unscale(cd.theta, X.cols());
    fit.intercept = options.fit_intercept ? s.intercept(fit.theta) : 0.0;
    fit.sweeps = cd.sweeps;
    fit.converged = cd.converged;
    fit.objective = cd.objective;
    return fit;
}

// --- LARS ---------------------------------------------------------------------

namespace {

// Lower Cholesky factor of G restricted to the active set, grown one
// column at a time.
class ActiveCholesky {
public:
    explicit ActiveCholesky(const Eigen::MatrixXd& G) : G_(G) {}

    std::size_t size() const noexcept { return k_; }

    // Returns false (leaving the factor unchanged) when column j is
    // numerically dependent on the active set.
    bool append(const std::vector<int>& active, int j) {
        const auto k = static_cast<Eigen::Index>(k_);
        ensure_capacity(k + 1);
        Eigen::VectorXd l(k);
        for (Eigen::Index a = 0; a < k; ++a) l(a) = G_(active[static_cast<std::size_t>(a)], j);
        if (k > 0) {
            L_.topLeftCorner(k, k).triangularView<Eigen::Lower>().solveInPlace(l);
        }
        const double d2 = G_(j, j) - l.squaredNorm();
        if (!(d2 > 1e-10 * G_(j, j))) {
            return false;
        }
        L_.row(k).head(k) = l.transpose();
        L_(k, k) = std::sqrt(d2);
        ++k_;
        return true;
    }

    void rebuild(const std::vector<int>& active) {
        k_ = 0;
        std::vector<int> prefix;
        for (int j : active) {
            append(prefix, j);
            prefix.push_back(j);
        }
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        const auto k = static_cast<Eigen::Index>(k_);
        Eigen::VectorXd x = rhs;
        const auto L = L_.topLeftCorner(k, k);
        L.triangularView<Eigen::Lower>().solveInPlace(x);
        L.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
        return x;
    }

private:
    void ensure_capacity(Eigen::Index k) {
        if (L_.rows() < k) {
            const Eigen::Index cap = std::max<Eigen::Index>(k, 2 * L_.rows() + 8);
            Eigen::MatrixXd grown = Eigen::MatrixXd::Zero(cap, cap);
            const auto old = static_cast<Eigen::Index>(k_);
            grown.topLeftCorner(old, old) = L_.topLeftCorner(old, old);
            L_ = std::move(grown);
        }
    }

    const Eigen::MatrixXd& G_;
    Eigen::MatrixXd L_;
    std::size_t k_ = 0;
};

}  // namespace

LarsPath lars_path_gram(const Eigen::MatrixXd& G, const Eigen::VectorXd& c, double yty,
                        std::size_t max_active) {
    const Eigen::Index p = c.size();
    const std::size_t limit = std::min<std::size_t>(max_active, static_cast<std::size_t>(p));
    const bool run_to_zero = limit == static_cast<std::size_t>(p);
    LarsPath path;

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd corr = c;
    std::vector<int> active;
    // 0 = inactive, 1 = active, 2 = excluded (collinear with the active set)
    std::vector<char> state(static_cast<std::size_t>(p), 0);
    ActiveCholesky chol(G);

    auto record = [&](double C) {
        PathPoint point;
        point.lambda = 2.0 * std::max(C, 0.0);
        point.theta = beta;
        point.n_active = count_nonzero(beta);
        // G beta = c - corr
        point.rss = std::max(0.0, yty - beta.dot(c) - beta.dot(corr));
        point.active = active;
        if (!path.points.empty() &&
            point.lambda >= path.points.back().lambda * (1.0 - 1e-13)) {
            path.points.back() = std::move(point);  // zero-length step: merge ties
        } else {
            path.points.push_back(std::move(point));
        }
    };

    if (p == 0) {
        record(0.0);
        return path;
    }

    Eigen::Index first = 0;
    double C = corr.cwiseAbs().maxCoeff(&first);
    const double scale = std::max(C, std::sqrt(std::max(yty, 0.0)));
    const double eps = 1e-13 * std::max(scale, 1e-300);
    record(C);
    if (C <= eps || limit == 0) {
        return path;
    }
    auto try_join = [&](int j) {
        if (chol.append(active, j)) {
            active.push_back(j);
            state[static_cast<std::size_t>(j)] = 1;
        } else {
            state[static_cast<std::size_t>(j)] = 2;
        }
    };
    try_join(static_cast<int>(first));
    path.points.back().active = active;

    const int max_steps = 8 * static_cast<int>(p) + 16;
    for (int step = 0; step < max_steps && !active.empty(); ++step) {
        const auto k = static_cast<Eigen::Index>(active.size());
        Eigen::VectorXd signs(k);
        for (Eigen::Index a = 0; a < k; ++a) {
            signs(a) = corr(active[static_cast<std::size_t>(a)]) >= 0.0 ? 1.0 : -1.0;
        }
        const Eigen::VectorXd w = chol.solve(signs);
        Eigen::VectorXd a_dir = Eigen::VectorXd::Zero(p);
        for (Eigen::Index a = 0; a < k; ++a) {
            a_dir.noalias() += w(a) * G.col(active[static_cast<std::size_t>(a)]);
        }

        double gamma = C;
        Eigen::Index join = -1;
        Eigen::Index drop = -1;
        const double min_step = eps * 1e-3;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (state[static_cast<std::size_t>(j)] != 0 || G(j, j) <= 0.0) continue;
            const double aj = a_dir(j);
            if (aj < 1.0) {
                const double g = (C - corr(j)) / (1.0 - aj);
                if (g > min_step && g < gamma) {
                    gamma = g;
                    join = j;
                }
            }
            if (aj > -1.0) {
                const double g = (C + corr(j)) / (1.0 + aj);
                if (g > min_step && g < gamma) {
                    gamma = g;
                    join = j;
                }
            }
        }
        for (Eigen::Index a = 0; a < k; ++a) {
            const int j = active[static_cast<std::size_t>(a)];
            if (w(a) == 0.0 || beta(j) == 0.0) continue;
            const double g = -beta(j) / w(a);
            if (g > 0.0 && g < gamma) {
                gamma = g;
                drop = a;
                join = -1;
            }
        }

        for (Eigen::Index a = 0; a < k; ++a) {
            beta(active[static_cast<std::size_t>(a)]) += gamma * w(a);
        }
        if (drop >= 0) {
            const int j = active[static_cast<std::size_t>(drop)];
            beta(j) = 0.0;
            state[static_cast<std::size_t>(j)] = 0;
            active.erase(active.begin() + drop);
            chol.rebuild(active);
        }
        corr = c - G * beta;
        if (join < 0 && drop < 0) {
            C = 0.0;  // reached lambda = 0
        } else {
            double c_active = 0.0;
            for (int j : active) c_active = std::max(c_active, std::abs(corr(j)));
            C = active.empty() ? C - gamma : c_active;
        }
        record(C);
        if (C <= eps) {
            break;
        }
        if (join >= 0) {
            try_join(static_cast<int>(join));
            path.points.back().active = active;
            if (!run_to_zero && active.size() >= limit) {
                // The joining variable enters at this breakpoint with zero
                // weight; the path ends here.
                break;
            }
        }
    }
    return path;
}

LarsPath lars_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   const LassoOptions& options) {
    require_finite(X, y);
    Standardization s = Standardization::fit(X, options);
    s.y_center = options.fit_intercept ? y.mean() : 0.0;
    const Eigen::MatrixXd Z = s.transform(X);
    const Eigen::VectorXd yc = y.array() - s.y_center;
    const Eigen::MatrixXd G = Z.transpose() * Z;
    const Eigen::VectorXd c = Z.transpose() * yc;
    const std::size_t n = static_cast<std::size_t>(X.rows());
    const std::size_t max_active = options.fit_intercept ? (n > 0 ? n - 1 : 0) : n;

    LarsPath path = lars_path_gram(G, c, yc.squaredNorm(), max_active);
    for (auto& point : path.points) {
        point.theta = s.unscale(point.theta, X.cols());
        for (int& j : point.active) {
            j = s.kept[static_cast<std::size_t>(j)];
        }
    }
    return path;
}

double aic(double rss, std::size_t n, int df) {
    const double nd = static_cast<double>(n);
    if (rss <= 0.0) {
        return -std::numeric_limits<double>::infinity();
    }
    return nd * std::log(rss / nd) + 2.0 * df;
}

double aicc(double rss, std::size_t n, int df) {
    const double slack = static_cast<double>(n) - df - 1.0;
    if (slack <= 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return aic(rss, n, df) + 2.0 * df * (df + 1.0) / slack;
}

std::size_t select_aic_index(const LarsPath& path, std::size_t n,
                             InformationCriterion criterion) {
    if (path.points.empty()) {
        throw NumericError("cannot select lambda on an empty path");
    }
    const bool all_zero = std::all_of(path.points.begin(), path.points.end(),
                                      [](const PathPoint& pt) { return pt.rss <= 0.0; });
    if (all_zero) {
        return path.points.size() - 1;  // smallest lambda
    }
    std::size_t best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < path.points.size(); ++k) {
        const auto& pt = path.points[k];
        const double value = criterion == InformationCriterion::aic
                                 ? aic(pt.rss, n, pt.n_active)
                                 : aicc(pt.rss, n, pt.n_active);
        // Points are ordered by decreasing lambda; strict improvement keeps
        // ties on the larger lambda.
        const double slack = 1e-12 * std::max(1.0, std::abs(best_value));
        if (k == 0 || value < best_value - slack) {
            best = k;
            best_value = value;
        }
    }
    return best;
}

double select_lambda_aic(const LarsPath& path, std::size_t n,
                         InformationCriterion criterion) {
    return path.points[select_aic_index(path, n, criterion)].lambda;
}

}  // namespace epf::lear
