#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "fit.hpp"
#include "lattice.hpp"
#include "parallel.hpp"
#include "stats.hpp"
#include "weights.hpp"

namespace mbfmri {

// Per-subject input to the population step: the effect estimate at one
// point, its variance, and the subject's covariates.
struct StudyPoint {
    double beta_hat = 0.0;
    double variance = 0.0;  // > 0
    std::vector<double> covariates;  // without the leading 1
};

// Design matrix [1 | covariates] from study points.
inline Eigen::MatrixXd meta_design(const std::vector<StudyPoint>& points) {
    if (points.empty()) throw DegenerateMeta("meta_design: no study points");
    const std::size_t m = points.front().covariates.size();
    Eigen::MatrixXd X(points.size(), m + 1);
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].covariates.size() != m)
            throw InvalidArgument("meta_design: ragged covariates");
        X(i, 0) = 1.0;
        for (std::size_t j = 0; j < m; ++j) X(i, j + 1) = points[i].covariates[j];
    }
    return X;
}

namespace detail {
inline void check_meta_inputs(const std::vector<StudyPoint>& points, const Eigen::MatrixXd& X,
                              bool strict) {
    const Eigen::Index k = X.rows(), p = X.cols();
    if (static_cast<std::size_t>(k) != points.size())
        throw InvalidArgument("meta: design rows != study point count");
    if (k < 2) throw DegenerateMeta("meta: need at least 2 studies");
    if (strict && k <= p)
        throw DegenerateMeta("meta: k = " + std::to_string(k) +
                             " studies <= p = " + std::to_string(p) + " coefficients");
    for (const auto& s : points) {
        if (!(s.variance > 0.0)) throw InvalidArgument("meta: study variance must be > 0");
        if (!std::isfinite(s.beta_hat)) throw InvalidArgument("meta: non-finite estimate");
    }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Heterogeneity estimators.
// ---------------------------------------------------------------------------

// Moment estimator from the unweighted regression of the estimates on X:
//   tau2 = max(0, (e'e - tr((I-H) V)) / (k - p)),
// H the OLS hat matrix, V = diag(study variances). Distribution-free.
inline double hedges_tau2(const std::vector<StudyPoint>& points, const Eigen::MatrixXd& X) {
    detail::check_meta_inputs(points, X, true);
    const Eigen::Index k = X.rows(), p = X.cols();

    Eigen::VectorXd beta(k), v(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        beta[i] = points[i].beta_hat;
        v[i] = points[i].variance;
    }
    const Eigen::MatrixXd XtX = X.transpose() * X;
    const auto solver = XtX.ldlt();
    const Eigen::VectorXd theta = solver.solve(X.transpose() * beta);
    const Eigen::VectorXd e = beta - X * theta;

    // tr((I-H)V) = sum v_i - sum h_ii v_i with h_ii = x_i' (X'X)^{-1} x_i.
    double trace_term = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::VectorXd xi = X.row(i).transpose();
        trace_term += v[i] * (1.0 - xi.dot(solver.solve(xi)));
    }
    const double tau2 = (e.squaredNorm() - trace_term) / static_cast<double>(k - p);
    return std::max(0.0, tau2);
}

// DerSimonian–Laird: moment equation under inverse-variance weights.
inline double dersimonian_laird_tau2(const std::vector<StudyPoint>& points,
                                     const Eigen::MatrixXd& X) {
    detail::check_meta_inputs(points, X, true);
    const Eigen::Index k = X.rows(), p = X.cols();

    Eigen::VectorXd beta(k), w(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        beta[i] = points[i].beta_hat;
        w[i] = 1.0 / points[i].variance;
    }
    const Eigen::MatrixXd XtWX = X.transpose() * w.asDiagonal() * X;
    const auto solver = XtWX.ldlt();
    const Eigen::VectorXd theta = solver.solve(X.transpose() * (w.asDiagonal() * beta));
    const Eigen::VectorXd e = beta - X * theta;
    double big_q = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) big_q += w[i] * e[i] * e[i];

    // tr(P) with P = W - WX (X'WX)^{-1} X'W.
    double trace_p = w.sum();
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::VectorXd xi = X.row(i).transpose();
        trace_p -= w[i] * w[i] * xi.dot(solver.solve(xi));
    }
    if (!(trace_p > 0.0)) return 0.0;
    return std::max(0.0, (big_q - static_cast<double>(k - p)) / trace_p);
}

namespace detail {
// Generalized Q at a trial tau2: sum w_i e_i^2 from the GLS fit with
// weights 1/(v_i + tau2). Decreasing in tau2.
inline double generalized_q(const std::vector<StudyPoint>& points, const Eigen::MatrixXd& X,
                            double tau2) {
    const Eigen::Index k = X.rows();
    Eigen::VectorXd beta(k), w(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        beta[i] = points[i].beta_hat;
        w[i] = 1.0 / (points[i].variance + tau2);
    }
    const Eigen::MatrixXd XtWX = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd theta = XtWX.ldlt().solve(X.transpose() * (w.asDiagonal() * beta));
    const Eigen::VectorXd e = beta - X * theta;
    double q = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) q += w[i] * e[i] * e[i];
    return q;
}
}  // namespace detail

// Paule–Mandel: tau2 solving generalized_q(tau2) = k - p, by bisection.
inline double paule_mandel_tau2(const std::vector<StudyPoint>& points,
                                const Eigen::MatrixXd& X) {
    detail::check_meta_inputs(points, X, true);
    const Eigen::Index k = X.rows(), p = X.cols();
    const double target = static_cast<double>(k - p);
    if (detail::generalized_q(points, X, 0.0) <= target) return 0.0;

    double lo = 0.0, hi = 1.0;
    for (const auto& s : points) hi = std::max(hi, s.variance);
    while (detail::generalized_q(points, X, hi) > target) {
        hi *= 2.0;
        if (hi > 1e12) break;
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (detail::generalized_q(points, X, mid) > target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// GLS step and the adjusted test.
// ---------------------------------------------------------------------------

struct GlsFit {
    Eigen::VectorXd theta;        // [gamma, delta...]
    Eigen::MatrixXd cov;          // nominal (X'WX)^{-1}
    Eigen::VectorXd weights;      // 1/(v_i + tau2)
    double tau2 = 0.0;
};

inline GlsFit meta_gls(const std::vector<StudyPoint>& points, const Eigen::MatrixXd& X,
                       double tau2) {
    detail::check_meta_inputs(points, X, false);
    const Eigen::Index k = X.rows(), p = X.cols();
    if (k < p) throw DegenerateMeta("meta_gls: fewer studies than coefficients");
    if (!(tau2 >= 0.0)) throw InvalidArgument("meta_gls: tau2 must be >= 0");

    Eigen::VectorXd beta(k), w(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        beta[i] = points[i].beta_hat;
        w[i] = 1.0 / (points[i].variance + tau2);
        if (!std::isfinite(w[i])) throw InvalidArgument("meta_gls: non-finite weight");
    }
    const Eigen::MatrixXd XtWX = X.transpose() * w.asDiagonal() * X;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(XtWX);
    lu.setThreshold(1e-12);
    if (lu.rank() < p) throw RankDeficient("meta_gls: covariate design rank deficient");

    GlsFit fit;
    fit.theta = lu.solve(X.transpose() * (w.asDiagonal() * beta));
    fit.cov = lu.solve(Eigen::MatrixXd::Identity(p, p));
    fit.weights = w;
    fit.tau2 = tau2;
    return fit;
}

// Population result at one point. se/t/ci/p refer to the coefficient the
// test targeted (the intercept unless stated otherwise).
struct MetaFit {
    double gamma_hat = 0.0;             // intercept effect
    std::vector<double> delta_hat;      // covariate effects
    double tau2 = 0.0;
    double q = 0.0;                     // variance profile factor
    double se_adjusted = 0.0;
    double t_adjusted = std::numeric_limits<double>::quiet_NaN();
    std::pair<double, double> ci95{0.0, 0.0};
    double p_value = std::numeric_limits<double>::quiet_NaN();
    double df = 0.0;                    // k - p
    int effect_index = 0;
    Eigen::MatrixXd cov_adjusted;       // q * (X'WX)^{-1}
    Eigen::MatrixXd cov_unadjusted;     // (X'WX)^{-1}
};

// The small-sample adjustment: scale the nominal covariance by the
// weighted residual profile q = sum w_i e_i^2 / (k - p) and reference the
// test to Student t with k - p degrees of freedom. q is used untruncated
// unless `truncate_q` raises it to at least 1.
inline MetaFit knapp_hartung(const std::vector<StudyPoint>& points, const Eigen::MatrixXd& X,
                             const GlsFit& gls, int effect_index = 0,
                             bool truncate_q = false) {
    detail::check_meta_inputs(points, X, true);
    const Eigen::Index k = X.rows(), p = X.cols();
    if (effect_index < 0 || effect_index >= p)
        throw InvalidArgument("knapp_hartung: effect index out of range");

    Eigen::VectorXd beta(k);
    for (Eigen::Index i = 0; i < k; ++i) beta[i] = points[i].beta_hat;
    const Eigen::VectorXd e = beta - X * gls.theta;
    double q = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) q += gls.weights[i] * e[i] * e[i];
    q /= static_cast<double>(k - p);
    if (truncate_q) q = std::max(q, 1.0);

    MetaFit fit;
    fit.gamma_hat = gls.theta[0];
    fit.delta_hat.assign(gls.theta.data() + 1, gls.theta.data() + p);
    fit.tau2 = gls.tau2;
    fit.q = q;
    fit.df = static_cast<double>(k - p);
    fit.effect_index = effect_index;
    fit.cov_unadjusted = gls.cov;
    fit.cov_adjusted = q * gls.cov;

    const double estimate = gls.theta[effect_index];
    const double var_adj = fit.cov_adjusted(effect_index, effect_index);
    fit.se_adjusted = var_adj > 0.0 ? std::sqrt(var_adj) : 0.0;
    if (fit.se_adjusted > 0.0) {
        fit.t_adjusted = estimate / fit.se_adjusted;
        fit.p_value = student_t_p_two_sided(fit.t_adjusted, fit.df);
        const double half = student_t_quantile(0.975, fit.df) * fit.se_adjusted;
        fit.ci95 = {estimate - half, estimate + half};
    } else {
        // Zero residual spread: the adjusted test is undefined; flag with
        // NaNs and a collapsed interval rather than emitting +-inf.
        fit.t_adjusted = std::numeric_limits<double>::quiet_NaN();
        fit.p_value = std::numeric_limits<double>::quiet_NaN();
        fit.ci95 = {estimate, estimate};
    }
    return fit;
}

struct MetaConfig {
    enum class Heterogeneity { kHedges, kDerSimonianLaird, kPauleMandel };
    Heterogeneity heterogeneity = Heterogeneity::kHedges;
    bool truncate_q = false;
    int effect_index = 0;
    unsigned threads = 1;
};

inline double estimate_tau2(const std::vector<StudyPoint>& points, const Eigen::MatrixXd& X,
                            MetaConfig::Heterogeneity estimator) {
    switch (estimator) {
        case MetaConfig::Heterogeneity::kHedges: return hedges_tau2(points, X);
        case MetaConfig::Heterogeneity::kDerSimonianLaird:
            return dersimonian_laird_tau2(points, X);
        case MetaConfig::Heterogeneity::kPauleMandel: return paule_mandel_tau2(points, X);
    }
    return 0.0;
}

// Full population step at one point: heterogeneity, GLS, adjusted test.
inline MetaFit meta_fit_point(const std::vector<StudyPoint>& points, const Eigen::MatrixXd& X,
                              const MetaConfig& config = {}) {
    const double tau2 = estimate_tau2(points, X, config.heterogeneity);
    const GlsFit gls = meta_gls(points, X, tau2);
    return knapp_hartung(points, X, gls, config.effect_index, config.truncate_q);
}

// ---------------------------------------------------------------------------
// ati normalization.
// ---------------------------------------------------------------------------

struct AtiField {
    ScalarField mu;                                // reference field
    std::vector<ScalarField> normalized_beta;      // per subject
    std::vector<ScalarField> normalized_variance;  // per subject
    std::vector<std::vector<std::size_t>> flagged; // nonpositive-intercept points
};

// Kernel-smoothed template: mu(x) = sum_r w(x,r) T(r) / sum_r w(x,r) over
// the template's lattice.
inline ScalarField reference_field(const ScalarField& tmpl, const WeightScheme& scheme) {
    const Lattice& lattice = tmpl.lattice();
    std::vector<double> mu(lattice.size());
    const double radius = detail::effective_radius(scheme);

    for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
        const Point3 x = lattice.point(idx);
        int i_lo = 0, i_hi = lattice.shape[0] - 1;
        int j_lo = 0, j_hi = lattice.shape[1] - 1;
        int k_lo = 0, k_hi = lattice.shape[2] - 1;
        if (std::isfinite(radius)) {
            const auto c = lattice.coords(idx);
            const int ri = static_cast<int>(std::ceil(radius / lattice.spacing.x));
            const int rj = static_cast<int>(std::ceil(radius / lattice.spacing.y));
            const int rk = static_cast<int>(std::ceil(radius / lattice.spacing.z));
            i_lo = std::max(0, c[0] - ri), i_hi = std::min(lattice.shape[0] - 1, c[0] + ri);
            j_lo = std::max(0, c[1] - rj), j_hi = std::min(lattice.shape[1] - 1, c[1] + rj);
            k_lo = std::max(0, c[2] - rk), k_hi = std::min(lattice.shape[2] - 1, c[2] + rk);
        }
        double num = 0.0, den = 0.0;
        for (int k = k_lo; k <= k_hi; ++k)
            for (int j = j_lo; j <= j_hi; ++j)
                for (int i = i_lo; i <= i_hi; ++i) {
                    const double w = scheme.weight(x, lattice.point(i, j, k));
                    if (w <= 0.0) continue;
                    num += w * tmpl.at(i, j, k);
                    den += w;
                }
        if (!(den > 0.0))
            throw InvalidArgument("reference_field: empty neighbourhood at lattice index " +
                                  std::to_string(idx));
        mu[idx] = num / den;
    }
    return ScalarField(lattice, std::move(mu));
}

// Per-point ati factor mu / alpha.
inline double ati_scale(double mu, double alpha) {
    if (!(alpha > 0.0))
        throw NonpositiveIntercept("ati_scale: intercept " + std::to_string(alpha) +
                                   " is not positive");
    return mu / alpha;
}

struct NormalizedField {
    ScalarField beta;
    ScalarField variance;
    std::vector<std::size_t> flagged;  // points with nonpositive intercept (NaN output)
};

// beta and variance rescaled to "above template intensity" units:
// beta * mu/alpha, variance * (mu/alpha)^2. Points with alpha <= 0 are
// flagged and set to NaN, never silently dropped.
inline NormalizedField normalize_to_ati(const ScalarField& beta, const ScalarField& variance,
                                        const ScalarField& alpha, const ScalarField& mu) {
    const Lattice& lattice = beta.lattice();
    if (!(variance.lattice() == lattice) || !(alpha.lattice() == lattice) ||
        !(mu.lattice() == lattice))
        throw InvalidArgument("normalize_to_ati: fields live on different lattices");
    NormalizedField out{ScalarField::constant(lattice, 0.0),
                        ScalarField::constant(lattice, 0.0),
                        {}};
    for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
        const double a = alpha.at(idx);
        if (!(a > 0.0)) {
            out.flagged.push_back(idx);
            out.beta.values()[idx] = std::numeric_limits<double>::quiet_NaN();
            out.variance.values()[idx] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const double c = mu.at(idx) / a;
        out.beta.values()[idx] = c * beta.at(idx);
        out.variance.values()[idx] = c * c * variance.at(idx);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forest / funnel table.
// ---------------------------------------------------------------------------

struct ForestRow {
    std::string label;
    double covariate = 0.0;
    double estimate = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double inv_se = 0.0;  // funnel y-axis
    bool population = false;
};

// Subject rows (normal-approximation CIs, ordered by the covariate) plus
// the population row carrying the adjusted CI. Pass std::nullopt for the
// population fit when the meta step is disabled (k too small); the row is
// then emitted with NaN entries as the flag.
inline std::vector<ForestRow> forest_funnel_data(const std::vector<StudyPoint>& points,
                                                 const std::optional<MetaFit>& population,
                                                 const std::vector<double>& ordering_covariate,
                                                 const std::vector<std::string>& labels = {}) {
    if (points.empty()) throw InvalidArgument("forest_funnel_data: no study points");
    if (ordering_covariate.size() != points.size())
        throw InvalidArgument("forest_funnel_data: covariate count != study count");
    if (!labels.empty() && labels.size() != points.size())
        throw InvalidArgument("forest_funnel_data: label count != study count");

    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ordering_covariate[a] < ordering_covariate[b];
    });

    const double z975 = normal_quantile(0.975);
    std::vector<ForestRow> rows;
    for (std::size_t i : order) {
        ForestRow r;
        r.label = labels.empty() ? "subject_" + std::to_string(i + 1) : labels[i];
        r.covariate = ordering_covariate[i];
        r.estimate = points[i].beta_hat;
        r.se = std::sqrt(points[i].variance);
        r.ci_lo = r.estimate - z975 * r.se;
        r.ci_hi = r.estimate + z975 * r.se;
        r.inv_se = r.se > 0.0 ? 1.0 / r.se : std::numeric_limits<double>::quiet_NaN();
        rows.push_back(std::move(r));
    }

    ForestRow pop;
    pop.label = "population";
    pop.population = true;
    pop.covariate = std::numeric_limits<double>::quiet_NaN();
    if (population) {
        const double est = population->effect_index == 0
                               ? population->gamma_hat
                               : population->delta_hat[population->effect_index - 1];
        pop.estimate = est;
        pop.se = population->se_adjusted;
        pop.ci_lo = population->ci95.first;
        pop.ci_hi = population->ci95.second;
        pop.inv_se =
            pop.se > 0.0 ? 1.0 / pop.se : std::numeric_limits<double>::quiet_NaN();
    } else {
        pop.estimate = pop.se = std::numeric_limits<double>::quiet_NaN();
        pop.ci_lo = pop.ci_hi = std::numeric_limits<double>::quiet_NaN();
        pop.inv_se = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(std::move(pop));
    return rows;
}

// ---------------------------------------------------------------------------
// Population field.
// ---------------------------------------------------------------------------

struct MetaFieldPoint {
    bool ok = false;
    std::string message;
    MetaFit fit;
};

struct MetaField {
    Lattice lattice;
    Region mask;
    std::vector<MetaFieldPoint> points;
};

// Population model at every masked point of the shared lattice. Subjects
// with NaN inputs at a point are dropped there; failures are recorded
// per point.
inline MetaField meta_field(const std::vector<ScalarField>& betas,
                            const std::vector<ScalarField>& variances,
                            const Eigen::MatrixXd& X, const Region& mask,
                            const MetaConfig& config = {}) {
    if (betas.empty() || betas.size() != variances.size())
        throw InvalidArgument("meta_field: need matching beta and variance fields");
    if (static_cast<std::size_t>(X.rows()) != betas.size())
        throw InvalidArgument("meta_field: design rows != subject count");
    const Lattice& lattice = betas.front().lattice();
    for (const auto& f : betas)
        if (!(f.lattice() == lattice))
            throw InvalidArgument("meta_field: subject fields on different lattices");
    for (const auto& f : variances)
        if (!(f.lattice() == lattice))
            throw InvalidArgument("meta_field: variance fields on different lattices");
    if (!(mask.lattice() == lattice))
        throw InvalidArgument("meta_field: mask on a different lattice");

    MetaField out;
    out.lattice = lattice;
    out.mask = mask;
    out.points.resize(lattice.size());

    parallel_for(lattice.size(), config.threads, [&](std::size_t idx) {
        if (!mask.contains(idx)) return;
        std::vector<StudyPoint> pts;
        std::vector<Eigen::Index> keep;
        for (std::size_t s = 0; s < betas.size(); ++s) {
            const double b = betas[s].at(idx);
            const double v = variances[s].at(idx);
            if (!std::isfinite(b) || !(v > 0.0) || !std::isfinite(v)) continue;
            StudyPoint sp;
            sp.beta_hat = b;
            sp.variance = v;
            keep.push_back(static_cast<Eigen::Index>(s));
            pts.push_back(std::move(sp));
        }
        Eigen::MatrixXd Xs(keep.size(), X.cols());
        for (std::size_t r = 0; r < keep.size(); ++r) Xs.row(r) = X.row(keep[r]);
        try {
            out.points[idx].fit = meta_fit_point(pts, Xs, config);
            out.points[idx].ok = true;
        } catch (const Error& e) {
            out.points[idx].message = e.what();
        }
    });
    return out;
}

}  // namespace mbfmri
