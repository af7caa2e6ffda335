#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "geometry.hpp"
#include "lattice.hpp"

namespace mbfmri {

// ---------------------------------------------------------------------------
// Kernels phi: dimensionless divergence -> weight. phi is expected to be
// nonnegative and non-increasing; validate_scheme() checks rather than
// enforces this, so deliberately broken kernels (for counterexamples) can
// be constructed.
// ---------------------------------------------------------------------------
class Kernel {
public:
    enum class Shape { kGaussian, kEpanechnikov, kTricube, kTable };

    static Kernel gaussian() { return Kernel(Shape::kGaussian); }
    static Kernel epanechnikov() { return Kernel(Shape::kEpanechnikov); }
    static Kernel tricube() { return Kernel(Shape::kTricube); }

    // Piecewise-linear kernel through (divergence, value) samples; zero
    // beyond the last sample. Samples must start at divergence 0 and be
    // strictly increasing in divergence.
    static Kernel table(std::vector<std::pair<double, double>> samples) {
        if (samples.empty()) throw InvalidArgument("Kernel::table: empty sample list");
        if (samples.front().first != 0.0)
            throw InvalidArgument("Kernel::table: first sample must be at divergence 0");
        for (std::size_t i = 1; i < samples.size(); ++i)
            if (samples[i].first <= samples[i - 1].first)
                throw InvalidArgument("Kernel::table: divergences not strictly increasing");
        Kernel k(Shape::kTable);
        k.samples_ = std::move(samples);
        return k;
    }

    Shape shape() const { return shape_; }

    double phi(double u) const {
        switch (shape_) {
            case Shape::kGaussian:
                return std::exp(-0.5 * u * u);
            case Shape::kEpanechnikov:
                return u < 1.0 ? 1.0 - u * u : 0.0;
            case Shape::kTricube: {
                if (u >= 1.0) return 0.0;
                const double c = 1.0 - u * u * u;
                return c * c * c;
            }
            case Shape::kTable: {
                if (u <= samples_.front().first) return samples_.front().second;
                if (u >= samples_.back().first) return u == samples_.back().first
                                                           ? samples_.back().second
                                                           : 0.0;
                auto hi = std::upper_bound(
                    samples_.begin(), samples_.end(), u,
                    [](double v, const std::pair<double, double>& s) { return v < s.first; });
                auto lo = hi - 1;
                const double f = (u - lo->first) / (hi->first - lo->first);
                return lo->second + f * (hi->second - lo->second);
            }
        }
        return 0.0;
    }

    double phi0() const { return phi(0.0); }

    // Divergence beyond which phi is identically 0; +inf for the gaussian.
    double support_radius() const {
        switch (shape_) {
            case Shape::kGaussian:
                return std::numeric_limits<double>::infinity();
            case Shape::kEpanechnikov:
            case Shape::kTricube:
                return 1.0;
            case Shape::kTable:
                return samples_.back().first;
        }
        return 0.0;
    }

    const std::vector<std::pair<double, double>>& samples() const { return samples_; }

    std::string name() const {
        switch (shape_) {
            case Shape::kGaussian: return "gaussian";
            case Shape::kEpanechnikov: return "epanechnikov";
            case Shape::kTricube: return "tricube";
            case Shape::kTable: return "table";
        }
        return "?";
    }

private:
    explicit Kernel(Shape s) : shape_(s) {}
    Shape shape_;
    std::vector<std::pair<double, double>> samples_;
};

// ---------------------------------------------------------------------------
// Divergence maps d(r||x): how "far" a measurement at r is from the point
// of interest x. Always 0 at r = x, always >= 0.
// ---------------------------------------------------------------------------
class DivergenceMap {
public:
    enum class Kind { kScaledEuclidean, kNative, kComposite };

    // ||r - x|| / h, dimensionless.
    static DivergenceMap scaled_euclidean(double h) {
        if (!(h > 0.0)) throw InvalidArgument("DivergenceMap: bandwidth h must be > 0");
        DivergenceMap d(Kind::kScaledEuclidean);
        d.h_ = h;
        return d;
    }

    // |beta(r) - beta(x)| / scale, where beta is interpolated on its
    // lattice. `to_field` maps evaluation-space points into the field's
    // coordinate frame (identity when the field already lives there).
    static DivergenceMap native(ScalarField beta, double scale,
                                std::optional<AffineMap> to_field = std::nullopt) {
        if (!(scale > 0.0)) throw InvalidArgument("DivergenceMap: native scale must be > 0");
        DivergenceMap d(Kind::kNative);
        d.beta_ = std::move(beta);
        d.scale_ = scale;
        d.to_field_ = std::move(to_field);
        return d;
    }

    // Pointwise max over members.
    static DivergenceMap composite(std::vector<DivergenceMap> members) {
        if (members.empty()) throw InvalidArgument("DivergenceMap: empty composite");
        DivergenceMap d(Kind::kComposite);
        d.members_ = std::move(members);
        return d;
    }

    Kind kind() const { return kind_; }
    double bandwidth() const { return h_; }
    const std::vector<DivergenceMap>& members() const { return members_; }

    double operator()(const Point3& r, const Point3& x) const {
        switch (kind_) {
            case Kind::kScaledEuclidean:
                return distance(r, x) / h_;
            case Kind::kNative: {
                const Point3 rf = to_field_ ? to_field_->apply(r) : r;
                const Point3 xf = to_field_ ? to_field_->apply(x) : x;
                return std::abs(beta_.interpolate(rf) - beta_.interpolate(xf)) / scale_;
            }
            case Kind::kComposite: {
                double m = 0.0;
                for (const auto& d : members_) m = std::max(m, d(r, x));
                return m;
            }
        }
        return 0.0;
    }

    // Bandwidth of the first scaled-euclidean term found (recursively), if
    // any. Used by refine_scheme to carry the locality term forward.
    std::optional<double> euclidean_bandwidth() const {
        if (kind_ == Kind::kScaledEuclidean) return h_;
        if (kind_ == Kind::kComposite)
            for (const auto& d : members_)
                if (auto h = d.euclidean_bandwidth()) return h;
        return std::nullopt;
    }

private:
    explicit DivergenceMap(Kind k) : kind_(k) {}

    Kind kind_;
    double h_ = 1.0;
    ScalarField beta_;
    double scale_ = 1.0;
    std::optional<AffineMap> to_field_;
    std::vector<DivergenceMap> members_;
};

// ---------------------------------------------------------------------------
// A weighting scheme: kernel o divergence, restricted to a mask and a hard
// Euclidean cutoff around the point of interest.
// ---------------------------------------------------------------------------
struct WeightScheme {
    Kernel kernel = Kernel::gaussian();
    DivergenceMap divergence = DivergenceMap::scaled_euclidean(1.0);
    double hard_cutoff_radius = std::numeric_limits<double>::infinity();  // mm
    Mask mask = Mask::everything();

    double weight(const Point3& x, const Point3& r) const {
        if (distance(r, x) > hard_cutoff_radius) return 0.0;
        if (!mask.contains(r) || !mask.contains(x)) return 0.0;
        return kernel.phi(divergence(r, x));
    }
};

// The gaussian scheme written out directly (isotropic bandwidth h, masked).
// scheme_weight with a gaussian kernel and scaled_euclidean divergence
// reproduces this bit for bit: both compute phi(||r-x||/h) in the same
// arithmetic order.
inline double gaussian_weight(const Point3& x, const Point3& r, double h, const Mask& mask) {
    if (!(h > 0.0)) throw InvalidArgument("gaussian_weight: h must be > 0");
    if (!mask.contains(r) || !mask.contains(x)) return 0.0;
    const double u = distance(r, x) / h;
    return std::exp(-0.5 * u * u);
}

inline double scheme_weight(const WeightScheme& scheme, const Point3& x, const Point3& r) {
    return scheme.weight(x, r);
}

// ---------------------------------------------------------------------------
// Scheme validity: (i) nonnegative, (ii) strictly decreasing in divergence,
// (iii) vanishing far out, (iv) smooth (finite-difference proxy).
// ---------------------------------------------------------------------------
struct ValidityCheck {
    bool pass = true;
    std::string counterexample;  // empty when pass
};

struct ValidityReport {
    ValidityCheck nonnegativity;       // (i)
    ValidityCheck monotone_decrease;   // (ii)
    ValidityCheck decay;               // (iii)
    ValidityCheck smoothness;          // (iv)
    bool all_pass() const {
        return nonnegativity.pass && monotone_decrease.pass && decay.pass && smoothness.pass;
    }
};

struct ProbeTriple {
    Point3 x, r, s;
};

// Numerical validity check on user-supplied probe triples (x, r, s), all
// sampled inside the scheme's mask. The smoothness bound defaults to
// 1e3 * phi(0) per unit divergence, generous enough for any reasonable
// kernel but violated by jump discontinuities.
inline ValidityReport validate_scheme(const WeightScheme& scheme,
                                      const std::vector<ProbeTriple>& probes,
                                      double smoothness_bound = 0.0) {
    if (probes.empty()) throw InvalidArgument("validate_scheme: empty probe set");

    ValidityReport report;
    const double phi0 = scheme.kernel.phi0();
    const double support = scheme.kernel.support_radius();
    const double scale = std::isfinite(support) ? support : 1.0;
    if (smoothness_bound <= 0.0) smoothness_bound = 1e3 * std::max(std::abs(phi0), 1.0) / scale;

    auto describe = [](const Point3& p) {
        return "(" + std::to_string(p.x) + "," + std::to_string(p.y) + "," +
               std::to_string(p.z) + ")";
    };

    // (i) nonnegativity — probe weights, plus raw table entries when the
    // kernel is a table (a negative entry may sit between probes).
    if (scheme.kernel.shape() == Kernel::Shape::kTable) {
        for (const auto& s : scheme.kernel.samples()) {
            if (s.second < 0.0) {
                report.nonnegativity.pass = false;
                report.nonnegativity.counterexample =
                    "table entry phi(" + std::to_string(s.first) + ") = " +
                    std::to_string(s.second);
                break;
            }
        }
    }
    for (const auto& p : probes) {
        if (!report.nonnegativity.pass) break;
        const double w = scheme.weight(p.x, p.r);
        if (w < 0.0) {
            report.nonnegativity.pass = false;
            report.nonnegativity.counterexample =
                "w(x=" + describe(p.x) + ", r=" + describe(p.r) + ") = " + std::to_string(w);
        }
    }

    // (ii) strict decrease in divergence. A pair where both weights are
    // exactly 0 (both points past the support / cutoff) is the flat tail,
    // which condition (iii) governs; strictness applies where any weight
    // survives.
    for (const auto& p : probes) {
        const double dr = scheme.divergence(p.r, p.x);
        const double ds = scheme.divergence(p.s, p.x);
        if (dr == ds) continue;
        const Point3& far = dr > ds ? p.r : p.s;
        const Point3& near = dr > ds ? p.s : p.r;
        const double w_far = scheme.weight(p.x, far);
        const double w_near = scheme.weight(p.x, near);
        if (w_far == 0.0 && w_near == 0.0) continue;
        if (!(w_far < w_near)) {
            report.monotone_decrease.pass = false;
            report.monotone_decrease.counterexample =
                "d=" + std::to_string(std::max(dr, ds)) + " w=" + std::to_string(w_far) +
                " vs d=" + std::to_string(std::min(dr, ds)) + " w=" + std::to_string(w_near) +
                " at x=" + describe(p.x);
            break;
        }
    }

    // (iii) decay far beyond the support scale.
    {
        const double far = 10.0 * scale;
        const double tail = scheme.kernel.phi(far);
        if (!(tail < 1e-6 * std::abs(phi0))) {
            report.decay.pass = false;
            report.decay.counterexample =
                "phi(" + std::to_string(far) + ") = " + std::to_string(tail);
        }
    }

    // (iv) finite-difference gradient of phi at the probe divergences.
    {
        const double step = 1e-4 * scale;
        for (const auto& p : probes) {
            const double d = scheme.divergence(p.r, p.x);
            const double g =
                std::abs(scheme.kernel.phi(d + step) - scheme.kernel.phi(d)) / step;
            if (g > smoothness_bound) {
                report.smoothness.pass = false;
                report.smoothness.counterexample =
                    "fd gradient " + std::to_string(g) + " at divergence " + std::to_string(d);
                break;
            }
        }
    }

    return report;
}

// ---------------------------------------------------------------------------
// Neighbourhood machinery for the bias analysis.
// ---------------------------------------------------------------------------

inline double native_divergence(const ScalarField& beta, const Point3& r, const Point3& x) {
    return std::abs(beta.interpolate(r) - beta.interpolate(x));
}

namespace detail {
inline std::size_t lattice_index_of(const Lattice& lattice, const Point3& x,
                                    const char* caller) {
    std::size_t idx;
    if (!lattice.nearest(x, idx))
        throw InvalidArgument(std::string(caller) + ": x outside lattice");
    const Point3 snapped = lattice.point(idx);
    const double tol = 1e-6 * std::min({lattice.spacing.x, lattice.spacing.y, lattice.spacing.z});
    if (distance(snapped, x) > tol)
        throw InvalidArgument(std::string(caller) + ": x is not a lattice point");
    return idx;
}
}  // namespace detail

// Largest connected set of lattice points around x on which beta stays
// within epsilon of beta(x). 6-connected flood fill.
inline Region u_epsilon(const ScalarField& beta, const Point3& x, double epsilon) {
    const Lattice& lattice = beta.lattice();
    const std::size_t start = detail::lattice_index_of(lattice, x, "u_epsilon");
    const double b0 = beta.at(start);
    return flood_fill(lattice, start,
                      [&](std::size_t idx) { return std::abs(beta.at(idx) - b0) <= epsilon; });
}

// Max deviation of beta from beta(x) over the region.
inline double epsilon_error(const ScalarField& beta, const Region& region, const Point3& x) {
    if (!(region.lattice() == beta.lattice()))
        throw InvalidArgument("epsilon_error: region lattice differs from field lattice");
    if (!region.contains_point(x)) throw InvalidArgument("epsilon_error: x not in region");
    const double b0 = beta.interpolate(x);
    double worst = 0.0;
    region.for_each([&](std::size_t idx) {
        worst = std::max(worst, std::abs(beta.at(idx) - b0));
    });
    return worst;
}

// Weighted mass of beta outside the region, under the scheme normalized
// over its support: | sum_{r not in V} w(x,r) beta(r) | / sum_r w(x,r),
// both sums over the field's lattice (Riemann quadrature; the cell volume
// cancels).
inline double delta_error(const WeightScheme& scheme, const ScalarField& beta,
                          const Region& region, const Point3& x) {
    const Lattice& lattice = beta.lattice();
    if (!(region.lattice() == lattice))
        throw InvalidArgument("delta_error: region lattice differs from field lattice");
    double total = 0.0;
    double outside = 0.0;
    for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
        const double w = scheme.weight(x, lattice.point(idx));
        if (w == 0.0) continue;
        total += w;
        if (!region.contains(idx)) outside += w * beta.at(idx);
    }
    if (total <= 0.0)
        throw InvalidArgument("delta_error: scheme has no support on the field lattice");
    return std::abs(outside) / total;
}

struct EpsilonReport {
    bool nice = false;
    double epsilon = 0.0;
    std::string witness_region;  // human-readable description of V
    Region witness;              // the region itself (best candidate when !nice)
    double delta = std::numeric_limits<double>::infinity();
    bool contained = false;      // V subset of U_epsilon(x)?
};

struct CandidateRegion {
    std::string description;
    Region region;
};

// Searches the candidate list for a witness V with x in V, V inside
// U_epsilon(x), and delta_error(V) <= epsilon. Returns the first witness,
// or a failure report carrying the best candidate (smallest delta among
// contained candidates, falling back to smallest delta overall).
inline EpsilonReport epsilon_nice_check(const WeightScheme& scheme, const ScalarField& beta,
                                        const Point3& x, double epsilon,
                                        const std::vector<CandidateRegion>& candidates) {
    if (candidates.empty()) throw InvalidArgument("epsilon_nice_check: empty candidate list");
    const Region u = u_epsilon(beta, x, epsilon);

    EpsilonReport best;
    best.epsilon = epsilon;
    bool have_contained = false;
    for (const auto& cand : candidates) {
        if (!cand.region.contains_point(x))
            throw InvalidArgument("epsilon_nice_check: candidate region does not contain x");
        const bool contained = cand.region.subset_of(u);
        const double delta = delta_error(scheme, beta, cand.region, x);
        if (contained && delta <= epsilon) {
            EpsilonReport r;
            r.nice = true;
            r.epsilon = epsilon;
            r.witness_region = cand.description;
            r.witness = cand.region;
            r.delta = delta;
            r.contained = true;
            return r;
        }
        const bool better = contained
                                ? (!have_contained || delta < best.delta)
                                : (!have_contained && delta < best.delta);
        if (better) {
            best.witness_region = cand.description;
            best.witness = cand.region;
            best.delta = delta;
            best.contained = contained;
            if (contained) have_contained = true;
        }
    }
    return best;
}

// Standard candidate ladder for one epsilon: nested balls around x (the
// largest covering the whole lattice, hence the whole support) plus
// sub-level neighbourhoods of beta itself.
inline std::vector<CandidateRegion> default_candidate_regions(const ScalarField& beta,
                                                              const Point3& x, double epsilon,
                                                              double cutoff_radius) {
    const Lattice& lattice = beta.lattice();
    std::vector<CandidateRegion> out;
    const double diag = distance(lattice.point(0), lattice.point(lattice.size() - 1));
    const double r_max = std::isfinite(cutoff_radius) ? std::min(cutoff_radius, diag) : diag;
    for (double f : {0.25, 0.5, 0.75, 1.0}) {
        const double r = f * r_max;
        out.push_back({"ball r=" + std::to_string(r), Region::ball(lattice, x, r)});
    }
    // Covers every lattice point, hence all of supp w^x restricted to it.
    out.push_back({"whole lattice", Region::all(lattice)});
    for (double f : {0.25, 0.5, 1.0}) {
        const double e = f * epsilon;
        out.push_back({"u_epsilon eps=" + std::to_string(e), u_epsilon(beta, x, e)});
    }
    return out;
}

struct EpsilonCertificate {
    bool certified = false;
    double epsilon_omega = std::numeric_limits<double>::infinity();
    EpsilonReport report;  // witness at the certified level
};

// Smallest epsilon in the ladder at which the scheme is epsilon-nice in x.
// This is a numerical upper bound for the critical niceness level of the
// scheme at x; the bias of the estimator at x is then bounded by twice it.
inline EpsilonCertificate certify_epsilon_omega(const WeightScheme& scheme,
                                                const ScalarField& beta, const Point3& x,
                                                std::vector<double> epsilon_ladder) {
    if (epsilon_ladder.empty())
        throw InvalidArgument("certify_epsilon_omega: empty epsilon ladder");
    std::sort(epsilon_ladder.begin(), epsilon_ladder.end());
    EpsilonCertificate cert;
    for (double eps : epsilon_ladder) {
        const auto candidates =
            default_candidate_regions(beta, x, eps, scheme.hard_cutoff_radius);
        const EpsilonReport r = epsilon_nice_check(scheme, beta, x, eps, candidates);
        if (r.nice) {
            cert.certified = true;
            cert.epsilon_omega = eps;
            cert.report = r;
            return cert;
        }
        cert.report = r;  // keep the last diagnostics
    }
    return cert;
}

// ---------------------------------------------------------------------------
// Iterative scheme refinement: start from a base divergence, fit the task
// field, and feed the fitted field back as a native divergence term (kept
// local through a max with the scaled euclidean term).
// ---------------------------------------------------------------------------

// Robust sigma (median absolute deviation * 1.4826) of the field values;
// the default native scale.
inline double robust_sigma(const ScalarField& field) {
    std::vector<double> v = field.values();
    if (v.empty()) return 1.0;
    auto mid = v.begin() + v.size() / 2;
    std::nth_element(v.begin(), mid, v.end());
    const double med = *mid;
    for (auto& a : v) a = std::abs(a - med);
    std::nth_element(v.begin(), mid, v.end());
    const double mad = *mid;
    const double s = 1.4826 * mad;
    return s > 1e-12 ? s : 1.0;
}

using RefitFn = std::function<ScalarField(const WeightScheme&)>;

// Runs `iterations` rounds; round n uses kernel_sequence[min(n, last)].
// Round 0 is the base scheme itself (kernel_0 o base.divergence); each
// subsequent round refits the field with the previous scheme and replaces
// the divergence by max(scaled_euclidean(h), native(fitted field, scale)).
// native_scale <= 0 selects the robust sigma of each fitted field.
inline WeightScheme refine_scheme(const WeightScheme& base,
                                  const std::vector<Kernel>& kernel_sequence, int iterations,
                                  const RefitFn& refit, double native_scale = 0.0) {
    if (iterations < 1) throw InvalidArgument("refine_scheme: iterations must be >= 1");
    if (kernel_sequence.empty()) throw InvalidArgument("refine_scheme: empty kernel sequence");
    const auto h = base.divergence.euclidean_bandwidth();
    if (!h)
        throw InvalidArgument(
            "refine_scheme: base divergence has no scaled-euclidean term to carry forward");

    auto kernel_at = [&](int n) {
        const std::size_t i = std::min<std::size_t>(n, kernel_sequence.size() - 1);
        return kernel_sequence[i];
    };

    WeightScheme scheme = base;
    scheme.kernel = kernel_at(0);
    for (int n = 1; n < iterations; ++n) {
        const ScalarField fitted = refit(scheme);
        const double scale = native_scale > 0.0 ? native_scale : robust_sigma(fitted);
        scheme.divergence = DivergenceMap::composite(
            {DivergenceMap::scaled_euclidean(*h), DivergenceMap::native(fitted, scale)});
        scheme.kernel = kernel_at(n);
    }
    return scheme;
}

}  // namespace mbfmri
