#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "design.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "lattice.hpp"
#include "parallel.hpp"
#include "session.hpp"
#include "stats.hpp"
#include "weights.hpp"

namespace mbfmri {

// One measured sample, placed in subject space.
struct Observation {
    double time = 0.0;    // s, acquisition time
    Point3 location;      // subject space, rho^{-1}(voxel centre)
    double value = 0.0;   // raw scanner scale
    int cycle = 0;
    int slice = 0;
};

enum class FitStatus {
    kOk,
    kOutsideMask,      // lattice point not evaluated
    kUnderdetermined,  // too few (effective) observations
    kRankDeficient,    // collinear weighted design
    kFailed            // anything else; see message
};

inline const char* to_string(FitStatus s) {
    switch (s) {
        case FitStatus::kOk: return "ok";
        case FitStatus::kOutsideMask: return "outside_mask";
        case FitStatus::kUnderdetermined: return "underdetermined";
        case FitStatus::kRankDeficient: return "rank_deficient";
        case FitStatus::kFailed: return "failed";
    }
    return "?";
}

// Result of one weighted fit. t_value and dw are NaN when undefined (zero
// variance / degenerate residuals); that is the explicit marker, never a
// silent +-inf.
struct PointFit {
    FitStatus status = FitStatus::kFailed;
    std::string message;
    std::vector<double> coefficients;
    double beta_hat = 0.0;
    double sigma2_hat = 0.0;
    double var_beta_hat = 0.0;
    double t_value = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_obs = 0;
    double n_effective = 0.0;
    double dw = std::numeric_limits<double>::quiet_NaN();
    double df = 0.0;

    bool ok() const { return status == FitStatus::kOk; }
};

struct FitConfig {
    enum class Variance { kSandwich, kClassical };
    Variance variance = Variance::kSandwich;
    unsigned threads = 1;
};

// Fits over an evaluation lattice; one PointFit per lattice point, with
// status kOutsideMask where the mask excluded evaluation.
struct ParamField {
    Lattice lattice;
    Region mask;
    std::vector<PointFit> fits;

    const PointFit& at(std::size_t idx) const { return fits[idx]; }
};

// The scanner grid itself as an evaluation lattice (scanner frame, origin
// at the first voxel centre).
inline Lattice voxel_lattice(const AcquisitionGrid& grid) {
    return Lattice({0.0, 0.0, 0.0}, {grid.dx, grid.dy, grid.dz},
                   {grid.nx, grid.ny, grid.slice_count});
}

// ---------------------------------------------------------------------------
// Observation gathering.
// ---------------------------------------------------------------------------

namespace detail {

// Radius around the centre beyond which the scheme is identically zero:
// the hard cutoff, tightened by the kernel support when the divergence is
// bounded below by a scaled euclidean term (max-composites only grow the
// divergence, so the bound survives them).
inline double effective_radius(const WeightScheme& scheme) {
    double r = scheme.hard_cutoff_radius;
    const double support = scheme.kernel.support_radius();
    if (std::isfinite(support)) {
        if (const auto h = scheme.divergence.euclidean_bandwidth();
            h && scheme.divergence.kind() != DivergenceMap::Kind::kNative)
            r = std::min(r, *h * support);
    }
    return r;
}

}  // namespace detail

// All observations with nonzero weight at `center` (subject space).
// Exploits the motion being rigid: ||rho^{-1}(v) - center|| equals
// ||v - rho(center)||, so the candidate voxels of each cycle form a box
// around the forward-mapped centre in scanner space. Observations at times
// with undefined task indicator, and cycles flagged by the outlier screen,
// are skipped. Order: cycle, then slice, then y, then x — fixed regardless
// of how the caller parallelizes.
inline std::vector<std::pair<Observation, double>> collect_observations(
    const ScanSession& session, const Point3& center, const WeightScheme& scheme) {
    std::vector<std::pair<Observation, double>> out;
    const AcquisitionGrid& g = session.grid;
    const double radius = detail::effective_radius(scheme);
    // Tiny inflation so scanner-space prefiltering can never drop a voxel
    // that the subject-space weight (equal up to roundoff) would keep.
    const double pad = 1e-9 + 1e-12 * std::abs(radius);

    for (int cycle = 0; cycle < session.n_cycles(); ++cycle) {
        if (session.excluded(cycle)) continue;
        const RigidMotion& rho = session.motions[cycle];
        const RigidMotion inv = invert_motion(rho);
        const Point3 sc = apply_motion(rho, center);  // centre in scanner space

        int i_lo = 0, i_hi = g.nx - 1, j_lo = 0, j_hi = g.ny - 1, k_lo = 0,
            k_hi = g.slice_count - 1;
        if (std::isfinite(radius)) {
            const double r = radius + pad;
            i_lo = std::max(0, static_cast<int>(std::ceil((sc.x - r) / g.dx)));
            i_hi = std::min(g.nx - 1, static_cast<int>(std::floor((sc.x + r) / g.dx)));
            j_lo = std::max(0, static_cast<int>(std::ceil((sc.y - r) / g.dy)));
            j_hi = std::min(g.ny - 1, static_cast<int>(std::floor((sc.y + r) / g.dy)));
            k_lo = std::max(0, static_cast<int>(std::ceil((sc.z - r) / g.dz)));
            k_hi = std::min(g.slice_count - 1, static_cast<int>(std::floor((sc.z + r) / g.dz)));
        }

        for (int k = k_lo; k <= k_hi; ++k) {
            const double t = session.acquisition_time(cycle, k);
            if (!indicator(session.design, t)) continue;
            for (int j = j_lo; j <= j_hi; ++j) {
                for (int i = i_lo; i <= i_hi; ++i) {
                    const Point3 loc = apply_motion(inv, g.voxel_centre(i, j, k));
                    const double w = scheme.weight(center, loc);
                    if (w <= 0.0) continue;
                    out.push_back({{t, loc, session.value(i, j, k, cycle), cycle, k}, w});
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Variance of the contrast estimate.
// ---------------------------------------------------------------------------

// Heteroskedasticity-robust sandwich
//   c' (X'WX)^{-1} X' W diag(e^2) W X (X'WX)^{-1} c,
// invariant under rescaling all weights — they act as locality weights, not
// known precisions.
inline double beta_variance_sandwich(const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
                                     const Eigen::VectorXd& residuals,
                                     const Eigen::VectorXd& c) {
    const Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd z = A.ldlt().solve(c);
    const Eigen::VectorXd m = X * z;
    double var = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double s = w[i] * residuals[i] * m[i];
        var += s * s;
    }
    return var;
}

// Classical form sigma2 * c'(X'WX)^{-1}c, with the weights normalized to
// sum to the effective sample size first. The normalization keeps the
// result invariant under weight rescaling (raw kernel weights carry no
// absolute scale) and reduces to the textbook formula when all weights are
// equal.
inline double beta_variance_classical(const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
                                      double sigma2, const Eigen::VectorXd& c) {
    const double sw = w.sum();
    const double sw2 = w.squaredNorm();
    if (!(sw > 0.0 && sw2 > 0.0))
        throw InvalidArgument("beta_variance_classical: nonpositive weight sums");
    const double n_eff = sw * sw / sw2;
    const Eigen::VectorXd wn = w * (n_eff / sw);
    const Eigen::MatrixXd A = X.transpose() * wn.asDiagonal() * X;
    return sigma2 * c.dot(A.ldlt().solve(c));
}

// ---------------------------------------------------------------------------
// Residual autocorrelation.
// ---------------------------------------------------------------------------

// Classic lag-1 statistic sum (e_i - e_{i-1})^2 / sum e_i^2 on residuals
// already ordered by acquisition time. Near 2 for uncorrelated residuals,
// near 2(1 - rho) under lag-1 correlation rho.
inline double durbin_watson(const std::vector<double>& residuals) {
    if (residuals.size() < 3)
        throw InvalidArgument("durbin_watson: need at least 3 residuals");
    double ss = 0.0, sd = 0.0;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        ss += residuals[i] * residuals[i];
        if (i > 0) {
            const double d = residuals[i] - residuals[i - 1];
            sd += d * d;
        }
    }
    if (ss == 0.0) throw InvalidArgument("durbin_watson: all residuals zero");
    return std::clamp(sd / ss, 0.0, 4.0);
}

// ---------------------------------------------------------------------------
// The weighted fit.
// ---------------------------------------------------------------------------

namespace detail {

struct RowCache {
    // nullopt where the task indicator is undefined.
    std::vector<std::optional<DesignRow>> rows;  // cycle * slices + slice
    int slices = 0;
    std::vector<double> contrast;

    const std::optional<DesignRow>& row(int cycle, int slice) const {
        return rows[static_cast<std::size_t>(cycle) * slices + slice];
    }
};

inline RowCache build_row_cache(const ScanSession& session, const ModelSpec& model) {
    RowCache cache;
    cache.slices = session.grid.slice_count;
    cache.contrast = task_contrast(model, session.design);
    cache.rows.resize(static_cast<std::size_t>(session.n_cycles()) * cache.slices);
    for (int cycle = 0; cycle < session.n_cycles(); ++cycle) {
        for (int slice = 0; slice < cache.slices; ++slice) {
            const double t = session.acquisition_time(cycle, slice);
            if (indicator(session.design, t))
                cache.rows[static_cast<std::size_t>(cycle) * cache.slices + slice] =
                    design_row(model, session.design, t);
        }
    }
    return cache;
}

// Core solver on assembled dense inputs. `times` drive the DW ordering.
inline PointFit wls_core(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& w, const std::vector<double>& times,
                         const std::vector<double>& contrast, const FitConfig& config) {
    const Eigen::Index n = X.rows(), p = X.cols();
    if (n < p)
        throw Underdetermined("wls_fit: " + std::to_string(n) + " observations for " +
                              std::to_string(p) + " coefficients");
    const double sw = w.sum();
    const double sw2 = w.squaredNorm();
    if (!(sw > 0.0)) throw Underdetermined("wls_fit: all weights zero");
    const double n_eff = sw * sw / sw2;
    if (!(n_eff > static_cast<double>(p)))
        throw Underdetermined("wls_fit: effective sample size " + std::to_string(n_eff) +
                              " <= coefficient count " + std::to_string(p));

    const Eigen::VectorXd sqw = w.cwiseSqrt();
    Eigen::MatrixXd Xw = sqw.asDiagonal() * X;
    Eigen::VectorXd yw = sqw.cwiseProduct(y);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    qr.setThreshold(1e-10);
    if (qr.rank() < p)
        throw RankDeficient("wls_fit: weighted design rank " + std::to_string(qr.rank()) +
                            " < " + std::to_string(p));
    const Eigen::VectorXd theta = qr.solve(yw);
    const Eigen::VectorXd residuals = y - X * theta;

    PointFit fit;
    fit.status = FitStatus::kOk;
    fit.coefficients.assign(theta.data(), theta.data() + p);
    fit.n_obs = static_cast<std::size_t>(n);
    fit.n_effective = n_eff;
    fit.df = n_eff - static_cast<double>(p);

    double swe2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) swe2 += w[i] * residuals[i] * residuals[i];
    fit.sigma2_hat = swe2 / (sw * (1.0 - static_cast<double>(p) / n_eff));

    Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < p; ++i) c[i] = contrast[i];
    fit.beta_hat = c.dot(theta);
    fit.var_beta_hat = config.variance == FitConfig::Variance::kSandwich
                           ? beta_variance_sandwich(X, w, residuals, c)
                           : beta_variance_classical(X, w, fit.sigma2_hat, c);
    if (fit.var_beta_hat < 0.0) fit.var_beta_hat = 0.0;
    fit.t_value = fit.var_beta_hat > 0.0 ? fit.beta_hat / std::sqrt(fit.var_beta_hat)
                                         : std::numeric_limits<double>::quiet_NaN();

    // Time-ordered residuals; the stable sort keeps the fixed slice /
    // in-plane generation order on ties.
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
    std::vector<double> e(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) e[i] = residuals[order[i]];
    double ss = 0.0;
    for (double v : e) ss += v * v;
    fit.dw = (e.size() >= 3 && ss > 0.0) ? durbin_watson(e)
                                         : std::numeric_limits<double>::quiet_NaN();
    return fit;
}

}  // namespace detail

// Weighted least squares of the model at one point, on the observations
// gathered there. Coefficients minimize sum w_i e_i^2; the task effect is
// contrast . coefficients.
inline PointFit wls_fit(const std::vector<std::pair<Observation, double>>& obs,
                        const ModelSpec& model, const BlockDesign& design,
                        const FitConfig& config = {}) {
    const std::vector<double> contrast = task_contrast(model, design);
    std::unordered_map<double, DesignRow> row_by_time;
    std::vector<const DesignRow*> rows;
    rows.reserve(obs.size());
    std::size_t kept = 0;
    for (const auto& [o, w] : obs) {
        if (!indicator(design, o.time)) continue;  // gap observations never enter
        auto it = row_by_time.find(o.time);
        if (it == row_by_time.end())
            it = row_by_time.emplace(o.time, design_row(model, design, o.time)).first;
        rows.push_back(&it->second);
        ++kept;
    }
    const std::size_t p = contrast.size();
    if (kept < p)
        throw Underdetermined("wls_fit: " + std::to_string(kept) + " observations for " +
                              std::to_string(p) + " coefficients");

    Eigen::MatrixXd X(kept, p);
    Eigen::VectorXd y(kept), w(kept);
    std::vector<double> times(kept);
    std::size_t r = 0;
    for (const auto& [o, wi] : obs) {
        if (!indicator(design, o.time)) continue;
        for (std::size_t j = 0; j < p; ++j) X(r, j) = rows[r]->values[j];
        y[r] = o.value;
        w[r] = wi;
        times[r] = o.time;
        ++r;
    }
    return detail::wls_core(X, y, w, times, contrast, config);
}

// t field value at one point.
inline double t_statistic(const PointFit& fit) {
    if (!(fit.var_beta_hat > 0.0))
        throw ZeroVariance("t_statistic: var(beta_hat) = " + std::to_string(fit.var_beta_hat));
    return fit.beta_hat / std::sqrt(fit.var_beta_hat);
}

namespace detail {

// One lattice point of fit_field: gather + assemble + solve, sharing the
// precomputed design rows.
inline PointFit fit_point(const ScanSession& session, const Point3& center,
                          const WeightScheme& scheme, const RowCache& cache,
                          const FitConfig& config) {
    const auto obs = collect_observations(session, center, scheme);
    const std::size_t p = cache.contrast.size();
    PointFit out;
    try {
        if (obs.size() < p)
            throw Underdetermined("fit_point: " + std::to_string(obs.size()) +
                                  " observations for " + std::to_string(p) + " coefficients");
        Eigen::MatrixXd X(obs.size(), p);
        Eigen::VectorXd y(obs.size()), w(obs.size());
        std::vector<double> times(obs.size());
        for (std::size_t r = 0; r < obs.size(); ++r) {
            const auto& row = cache.row(obs[r].first.cycle, obs[r].first.slice);
            for (std::size_t j = 0; j < p; ++j) X(r, j) = row->values[j];
            y[r] = obs[r].first.value;
            w[r] = obs[r].second;
            times[r] = obs[r].first.time;
        }
        return wls_core(X, y, w, times, cache.contrast, config);
    } catch (const Underdetermined& e) {
        out.status = FitStatus::kUnderdetermined;
        out.message = e.what();
    } catch (const RankDeficient& e) {
        out.status = FitStatus::kRankDeficient;
        out.message = e.what();
    } catch (const Error& e) {
        out.status = FitStatus::kFailed;
        out.message = e.what();
    }
    out.n_obs = obs.size();
    return out;
}

}  // namespace detail

// Fits the model at every masked lattice point x, with the weighting
// scheme centred at psi(x) in subject space. Per-point failures are
// recorded in the PointFit status and never abort the field. The map over
// points is parallel; results land in lattice order whatever the thread
// count.
inline ParamField fit_field(const ScanSession& session, const Lattice& lattice,
                            const WeightScheme& scheme, const ModelSpec& model,
                            const AffineMap& psi, const Region& mask,
                            const FitConfig& config = {}) {
    if (!(mask.lattice() == lattice))
        throw InvalidArgument("fit_field: mask lattice differs from evaluation lattice");
    const detail::RowCache cache = detail::build_row_cache(session, model);

    ParamField field;
    field.lattice = lattice;
    field.mask = mask;
    field.fits.resize(lattice.size());

    parallel_for(lattice.size(), config.threads, [&](std::size_t idx) {
        if (!mask.contains(idx)) {
            field.fits[idx].status = FitStatus::kOutsideMask;
            return;
        }
        const Point3 center = psi.apply(lattice.point(idx));
        field.fits[idx] = detail::fit_point(session, center, scheme, cache, config);
    });
    return field;
}

inline ParamField fit_field(const ScanSession& session, const Lattice& lattice,
                            const WeightScheme& scheme, const ModelSpec& model,
                            const FitConfig& config = {}) {
    return fit_field(session, lattice, scheme, model, session.psi, Region::all(lattice),
                     config);
}

// ---------------------------------------------------------------------------
// Field-level diagnostics.
// ---------------------------------------------------------------------------

// DW samples stratified by t-field elevation: for each theta, the DW
// values at points whose t exceeds the empirical theta-quantile of the
// t-field. theta = 0 selects every successfully fitted point.
inline std::vector<std::vector<double>> dw_peak_densities(
    const std::vector<std::pair<double, double>>& t_dw,  // (t, dw) at usable points
    const std::vector<double>& thetas) {
    if (t_dw.empty())
        throw InvalidArgument("dw_peak_densities: field has no successful fits");

    std::vector<double> t_sorted;
    t_sorted.reserve(t_dw.size());
    for (const auto& p : t_dw) t_sorted.push_back(p.first);
    std::sort(t_sorted.begin(), t_sorted.end());

    std::vector<std::vector<double>> out;
    for (const double theta : thetas) {
        if (!(theta >= 0.0 && theta < 1.0))
            throw InvalidArgument("dw_peak_densities: theta must be in [0,1)");
        std::vector<double> stratum;
        if (theta == 0.0) {
            for (const auto& p : t_dw) stratum.push_back(p.second);
        } else {
            const std::size_t k =
                static_cast<std::size_t>(std::ceil(theta * t_sorted.size())) - 1;
            const double threshold = t_sorted[std::min(k, t_sorted.size() - 1)];
            for (const auto& p : t_dw)
                if (p.first > threshold) stratum.push_back(p.second);
        }
        out.push_back(std::move(stratum));
    }
    return out;
}

inline std::vector<std::vector<double>> dw_peak_densities(const ParamField& field,
                                                          const std::vector<double>& thetas) {
    std::vector<std::pair<double, double>> t_dw;
    for (const auto& fit : field.fits)
        if (fit.ok() && std::isfinite(fit.t_value) && std::isfinite(fit.dw))
            t_dw.push_back({fit.t_value, fit.dw});
    return dw_peak_densities(t_dw, thetas);
}

// Iterative two-sided Grubbs screen on per-cycle motion sizes. Flags the
// most extreme value, removes it, repeats until nothing exceeds the
// critical value. Zero-spread input flags nothing.
inline std::vector<std::size_t> grubbs_outlier_cycles(const std::vector<double>& magnitudes,
                                                      double alpha) {
    if (magnitudes.size() < 3)
        throw InvalidArgument("grubbs_outlier_cycles: need at least 3 cycles");
    std::vector<std::size_t> index(magnitudes.size());
    std::iota(index.begin(), index.end(), 0);
    std::vector<std::size_t> flagged;

    while (index.size() >= 3) {
        const double n = static_cast<double>(index.size());
        double mean = 0.0;
        for (std::size_t i : index) mean += magnitudes[i];
        mean /= n;
        double ss = 0.0;
        for (std::size_t i : index) {
            const double d = magnitudes[i] - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / (n - 1.0));
        if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) break;

        std::size_t worst_pos = 0;
        double worst_dev = -1.0;
        for (std::size_t pos = 0; pos < index.size(); ++pos) {
            const double dev = std::abs(magnitudes[index[pos]] - mean);
            if (dev > worst_dev) {
                worst_dev = dev;
                worst_pos = pos;
            }
        }
        if (worst_dev / sd > grubbs_critical(index.size(), alpha)) {
            flagged.push_back(index[worst_pos]);
            index.erase(index.begin() + worst_pos);
        } else {
            break;
        }
    }
    std::sort(flagged.begin(), flagged.end());
    return flagged;
}

// Applies the Grubbs screen to a session in place; returns the flagged
// cycle indices.
inline std::vector<std::size_t> apply_grubbs_screen(ScanSession& session, double alpha) {
    const auto flagged = grubbs_outlier_cycles(motion_magnitudes(session), alpha);
    session.cycle_excluded.assign(session.motions.size(), 0);
    for (std::size_t c : flagged) session.cycle_excluded[c] = 1;
    return flagged;
}

}  // namespace mbfmri
