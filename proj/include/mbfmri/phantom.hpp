#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "design.hpp"
#include "error.hpp"
#include "fit.hpp"
#include "geometry.hpp"
#include "lattice.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "session.hpp"
#include "stats.hpp"
#include "weights.hpp"

namespace mbfmri {

// ---------------------------------------------------------------------------
// Analytic scalar fields over space: the ground-truth alpha and beta.
// ---------------------------------------------------------------------------
class AnalyticField {
public:
    enum class Kind { kConstant, kSphere, kStepX, kLinearX, kBump };

    static AnalyticField constant(double value) {
        AnalyticField f(Kind::kConstant);
        f.value_ = value;
        return f;
    }

    // Plateau of `amplitude` inside `radius`, smoothstep roll-off over
    // [radius, radius + edge_width], zero beyond. Continuous everywhere.
    static AnalyticField sphere(const Point3& centre, double radius, double amplitude,
                                double edge_width) {
        if (!(radius > 0.0)) throw InvalidArgument("AnalyticField::sphere: radius must be > 0");
        if (!(edge_width >= 0.0))
            throw InvalidArgument("AnalyticField::sphere: negative edge width");
        AnalyticField f(Kind::kSphere);
        f.centre_ = centre;
        f.radius_ = radius;
        f.value_ = amplitude;
        f.edge_ = edge_width;
        return f;
    }

    // low for x < x0, high for x >= x0 (a hard spatial step).
    static AnalyticField step_x(double x0, double low, double high) {
        AnalyticField f(Kind::kStepX);
        f.x0_ = x0;
        f.low_ = low;
        f.value_ = high;
        return f;
    }

    static AnalyticField linear_x(double intercept, double slope) {
        AnalyticField f(Kind::kLinearX);
        f.low_ = intercept;
        f.value_ = slope;
        return f;
    }

    // base + amplitude * cos^2(pi/2 * d/radius) inside radius — a smooth bump.
    static AnalyticField bump(double base, const Point3& centre, double radius,
                              double amplitude) {
        if (!(radius > 0.0)) throw InvalidArgument("AnalyticField::bump: radius must be > 0");
        AnalyticField f(Kind::kBump);
        f.low_ = base;
        f.centre_ = centre;
        f.radius_ = radius;
        f.value_ = amplitude;
        return f;
    }

    double operator()(const Point3& p) const {
        switch (kind_) {
            case Kind::kConstant:
                return value_;
            case Kind::kSphere: {
                const double d = distance(p, centre_);
                if (d <= radius_) return value_;
                if (edge_ == 0.0 || d >= radius_ + edge_) return 0.0;
                const double u = (radius_ + edge_ - d) / edge_;  // 1 at plateau, 0 outside
                return value_ * u * u * (3.0 - 2.0 * u);
            }
            case Kind::kStepX:
                return p.x < x0_ ? low_ : value_;
            case Kind::kLinearX:
                return low_ + value_ * p.x;
            case Kind::kBump: {
                const double d = distance(p, centre_);
                if (d >= radius_) return low_;
                const double c = std::cos(0.5 * M_PI * d / radius_);
                return low_ + value_ * c * c;
            }
        }
        return 0.0;
    }

    Kind kind() const { return kind_; }
    bool is_zero() const { return kind_ == Kind::kConstant && value_ == 0.0; }
    const Point3& centre() const { return centre_; }
    double radius() const { return radius_; }
    double amplitude() const { return value_; }
    double edge_width() const { return edge_; }
    double x0() const { return x0_; }
    double low() const { return low_; }

    ScalarField sample(const Lattice& lattice) const {
        return ScalarField::from_function(lattice, [this](const Point3& p) { return (*this)(p); });
    }

private:
    explicit AnalyticField(Kind k) : kind_(k) {}
    Kind kind_;
    double value_ = 0.0;   // constant / amplitude / high / slope
    double low_ = 0.0;     // low / base / intercept
    double x0_ = 0.0;
    Point3 centre_;
    double radius_ = 0.0;
    double edge_ = 0.0;
};

// ---------------------------------------------------------------------------
// Drift f(t) and motion trajectories.
// ---------------------------------------------------------------------------
struct DriftSpec {
    enum class Kind { kNone, kPerBlock, kLinear, kSinusoid };
    Kind kind = Kind::kNone;
    std::vector<double> block_offsets;  // kPerBlock, one per block
    double slope = 0.0;                 // kLinear, signal units per second
    double amplitude = 0.0;             // kSinusoid
    double period = 60.0;               // s

    static DriftSpec none() { return {}; }
    static DriftSpec per_block(std::vector<double> offsets) {
        DriftSpec d;
        d.kind = Kind::kPerBlock;
        d.block_offsets = std::move(offsets);
        return d;
    }
    static DriftSpec linear(double slope) {
        DriftSpec d;
        d.kind = Kind::kLinear;
        d.slope = slope;
        return d;
    }
    static DriftSpec sinusoid(double amplitude, double period) {
        DriftSpec d;
        d.kind = Kind::kSinusoid;
        d.amplitude = amplitude;
        d.period = period;
        return d;
    }

    double value(double t, const BlockDesign& design) const {
        switch (kind) {
            case Kind::kNone:
                return 0.0;
            case Kind::kPerBlock: {
                const auto b = block_index(design, t);
                if (!b || *b >= block_offsets.size()) return 0.0;
                return block_offsets[*b];
            }
            case Kind::kLinear:
                return slope * t;
            case Kind::kSinusoid:
                return amplitude * std::sin(2.0 * M_PI * t / period);
        }
        return 0.0;
    }
};

struct MotionSpec {
    enum class Kind { kStill, kSinusoidalTranslation, kScripted };
    Kind kind = Kind::kStill;
    double amplitude = 0.0;  // mm
    double period = 60.0;    // s
    Point3 axis{1.0, 0.0, 0.0};
    std::vector<RigidMotion> scripted;

    static MotionSpec still() { return {}; }
    static MotionSpec sinusoidal_translation(double amplitude, double period,
                                             const Point3& axis = {1.0, 0.0, 0.0}) {
        MotionSpec m;
        m.kind = Kind::kSinusoidalTranslation;
        m.amplitude = amplitude;
        m.period = period;
        m.axis = axis;
        return m;
    }
    static MotionSpec from_list(std::vector<RigidMotion> motions) {
        MotionSpec m;
        m.kind = Kind::kScripted;
        m.scripted = std::move(motions);
        return m;
    }

    RigidMotion at(int cycle, double cycle_start) const {
        switch (kind) {
            case Kind::kStill:
                return RigidMotion::identity();
            case Kind::kSinusoidalTranslation: {
                const double s = amplitude * std::sin(2.0 * M_PI * cycle_start / period);
                const double n = axis.norm();
                if (!(n > 0.0)) throw InvalidArgument("MotionSpec: zero axis");
                return RigidMotion(Eigen::Matrix3d::Identity(),
                                   {s * axis.x / n, s * axis.y / n, s * axis.z / n});
            }
            case Kind::kScripted: {
                if (cycle < 0 || static_cast<std::size_t>(cycle) >= scripted.size())
                    throw InvalidArgument("MotionSpec: scripted motion list too short");
                return scripted[cycle];
            }
        }
        return RigidMotion::identity();
    }
};

// ---------------------------------------------------------------------------
// The phantom itself.
// ---------------------------------------------------------------------------
struct PhantomSpec {
    AnalyticField alpha = AnalyticField::constant(100.0);
    AnalyticField beta = AnalyticField::constant(0.0);
    DriftSpec drift;
    double noise_sigma = 1.0;
    enum class NoiseModel { kIidNormal, kAr1 };
    NoiseModel noise_model = NoiseModel::kIidNormal;
    double ar1_rho = 0.0;
    MotionSpec motion;
    AcquisitionGrid grid;
    BlockDesign design;
    AffineMap psi;            // standard -> subject space
    double grey_scale = 1.0;  // arbitrary scanner export scale
    int n_cycles = 0;         // 0: as many whole cycles as the design allows
    std::uint64_t seed = 0;

    void validate() const {
        grid.validate();
        design.validate();
        if (!(noise_sigma >= 0.0)) throw InvalidArgument("PhantomSpec: negative noise sigma");
        if (noise_model == NoiseModel::kAr1 && !(ar1_rho > -1.0 && ar1_rho < 1.0))
            throw InvalidArgument("PhantomSpec: ar1 rho must be in (-1, 1)");
        if (!(grey_scale > 0.0)) throw InvalidArgument("PhantomSpec: grey_scale must be > 0");
    }

    int cycles() const {
        if (n_cycles > 0) return n_cycles;
        return static_cast<int>(design.total_duration / grid.cycle_duration);
    }

    // Desk-scale defaults: 16x16 in-plane, 8 slices, 3 mm voxels, TR 1.45 s,
    // 8 + 8 blocks of 15 s.
    static PhantomSpec desk_default(std::uint64_t seed_value) {
        PhantomSpec spec;
        spec.grid = AcquisitionGrid::sequential(16, 16, 8, 3.0, 3.0, 3.0, 1.45);
        spec.design = BlockDesign::pseudo_randomized(8, 15.0, seed_value ^ 0xb10c5);
        spec.seed = seed_value;
        return spec;
    }
};

// Ground truth carried alongside a simulated session: the generating
// fields (subject-space coordinates) and the noiseless value block.
struct GroundTruth {
    AnalyticField alpha = AnalyticField::constant(0.0);
    AnalyticField beta = AnalyticField::constant(0.0);
    double grey_scale = 1.0;
    std::vector<double> noiseless;  // same layout as ScanSession::values

    double alpha_at(const Point3& subject_point) const { return alpha(subject_point); }
    double beta_at(const Point3& subject_point) const { return beta(subject_point); }
};

// Forward simulation of the signal model. For each cycle, slice and voxel:
//   value = grey_scale * (alpha(loc) + ind_t * beta(loc) + f(t) + noise),
// with loc the subject-space pullback of the voxel centre under that
// cycle's motion. The indicator contributes 0 where it is undefined (the
// scanner measures there regardless; fits exclude those times). Noise
// scales with the grey factor — the export scale multiplies everything the
// scanner sees, which is what makes the normalization step able to undo it
// exactly. AR(1) noise runs along each voxel's time track with stationary
// marginal sd noise_sigma. Deterministic: a fixed (spec, seed) yields a
// bit-identical session.
inline std::pair<ScanSession, GroundTruth> simulate_session(const PhantomSpec& spec,
                                                            std::uint64_t seed) {
    spec.validate();
    const int cycles = spec.cycles();
    if (cycles < 1) throw InvalidArgument("simulate_session: design shorter than one cycle");
    const AcquisitionGrid& g = spec.grid;
    const std::size_t per_cycle = static_cast<std::size_t>(g.nx) * g.ny * g.slice_count;
    const std::size_t total = per_cycle * cycles;

    ScanSession session;
    session.grid = g;
    session.design = spec.design;
    session.psi = spec.psi;
    session.grey_scale_note = spec.grey_scale;
    session.motions.reserve(cycles);
    for (int c = 0; c < cycles; ++c)
        session.motions.push_back(spec.motion.at(c, c * g.cycle_duration));
    session.values.resize(total);

    GroundTruth truth;
    truth.alpha = spec.alpha;
    truth.beta = spec.beta;
    truth.grey_scale = spec.grey_scale;
    truth.noiseless.resize(total);

    // Noise block, drawn in a fixed order independent of everything else.
    std::vector<double> noise(total, 0.0);
    if (spec.noise_sigma > 0.0) {
        NormalSampler rng(seed);
        if (spec.noise_model == PhantomSpec::NoiseModel::kIidNormal) {
            for (auto& n : noise) n = spec.noise_sigma * rng.normal();
        } else {
            // One AR(1) track per voxel: eps_0 = sigma z, then
            // eps_c = rho eps_{c-1} + sigma sqrt(1-rho^2) z.
            const double rho = spec.ar1_rho;
            const double innov = spec.noise_sigma * std::sqrt(1.0 - rho * rho);
            for (std::size_t v = 0; v < per_cycle; ++v) {
                double e = spec.noise_sigma * rng.normal();
                noise[v] = e;
                for (int c = 1; c < cycles; ++c) {
                    e = rho * e + innov * rng.normal();
                    noise[v + per_cycle * c] = e;
                }
            }
        }
    }

    std::size_t idx = 0;
    for (int c = 0; c < cycles; ++c) {
        const RigidMotion inv = invert_motion(session.motions[c]);
        for (int k = 0; k < g.slice_count; ++k) {
            const double t = session.acquisition_time(c, k);
            const auto ind = indicator(spec.design, t);
            const double task = ind ? static_cast<double>(*ind) : 0.0;
            const double f = spec.drift.value(t, spec.design);
            for (int j = 0; j < g.ny; ++j) {
                for (int i = 0; i < g.nx; ++i, ++idx) {
                    const Point3 loc = apply_motion(inv, g.voxel_centre(i, j, k));
                    const double clean = spec.alpha(loc) + task * spec.beta(loc) + f;
                    truth.noiseless[idx] = spec.grey_scale * clean;
                    session.values[idx] = spec.grey_scale * (clean + noise[idx]);
                }
            }
        }
    }
    session.validate();
    return {std::move(session), std::move(truth)};
}

inline std::pair<ScanSession, GroundTruth> simulate_session(const PhantomSpec& spec) {
    return simulate_session(spec, spec.seed);
}

// ---------------------------------------------------------------------------
// Monte Carlo harnesses.
// ---------------------------------------------------------------------------

struct Type1Report {
    std::vector<Point3> probes;          // standard-space evaluation points
    std::vector<double> rejection_rate;  // per probe
    std::vector<double> mc_se;           // binomial standard error per probe
    int replicates = 0;
    double alpha = 0.05;
};

// Null rejection rate of the two-sided t test at each probe point:
// |t| > t_{1-alpha/2}(df) under beta == 0, over `reps` fresh phantoms.
// Replicates run in parallel with independent streams; counting is
// order-free.
inline Type1Report mc_type1(const PhantomSpec& spec_null, const WeightScheme& scheme,
                            const ModelSpec& model, const std::vector<Point3>& probes,
                            int reps, double alpha, const FitConfig& config = {}) {
    if (reps < 100) throw InvalidArgument("mc_type1: need at least 100 replicates");
    if (probes.empty()) throw InvalidArgument("mc_type1: no probe points");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("mc_type1: alpha in (0,1]");
    for (const auto& p : probes)
        if (spec_null.beta(spec_null.psi.apply(p)) != 0.0)
            throw InvalidArgument("mc_type1: spec is not null at a probe point");

    std::vector<std::vector<std::uint8_t>> reject(
        static_cast<std::size_t>(reps), std::vector<std::uint8_t>(probes.size(), 0));

    parallel_for(static_cast<std::size_t>(reps), config.threads, [&](std::size_t r) {
        const auto [session, truth] =
            simulate_session(spec_null, replicate_seed(spec_null.seed, r));
        const auto cache = detail::build_row_cache(session, model);
        FitConfig point_config = config;
        point_config.threads = 1;
        for (std::size_t pi = 0; pi < probes.size(); ++pi) {
            const Point3 center = session.psi.apply(probes[pi]);
            const PointFit fit =
                detail::fit_point(session, center, scheme, cache, point_config);
            if (!fit.ok() || !std::isfinite(fit.t_value)) continue;
            if (alpha >= 1.0) {
                reject[r][pi] = 1;
                continue;
            }
            const double crit = student_t_quantile(1.0 - alpha / 2.0, fit.df);
            if (std::abs(fit.t_value) > crit) reject[r][pi] = 1;
        }
    });

    Type1Report report;
    report.probes = probes;
    report.replicates = reps;
    report.alpha = alpha;
    for (std::size_t pi = 0; pi < probes.size(); ++pi) {
        std::size_t hits = 0;
        for (int r = 0; r < reps; ++r) hits += reject[r][pi];
        const double rate = static_cast<double>(hits) / reps;
        report.rejection_rate.push_back(rate);
        report.mc_se.push_back(std::sqrt(std::max(rate * (1.0 - rate), 1e-12) / reps));
    }
    return report;
}

struct BiasReport {
    Point3 at;                  // standard-space evaluation point
    double true_beta = 0.0;     // ground truth at psi(at)
    double mean_beta_hat = 0.0;
    double empirical_bias = 0.0;
    double mc_se = 0.0;
    bool certified = false;
    double epsilon_omega = std::numeric_limits<double>::infinity();
    double bound = std::numeric_limits<double>::infinity();  // 2 eps + 3 mc_se
    bool within_bound = false;
    int replicates = 0;
    std::string certificate_note;
};

// Empirical bias of beta_hat at one point against the certified bound
// 2*eps_omega + 3*(MC standard error). The certificate is computed first
// on the true beta field sampled to `certify_lattice`; if certification
// fails the report says so and the bound is not claimed.
inline BiasReport mc_bias(const PhantomSpec& spec, const WeightScheme& scheme,
                          const ModelSpec& model, const Point3& at, int reps,
                          const Lattice& certify_lattice,
                          const std::vector<double>& epsilon_ladder,
                          const FitConfig& config = {}) {
    if (reps < 2) throw InvalidArgument("mc_bias: need at least 2 replicates");
    BiasReport report;
    report.at = at;
    report.replicates = reps;
    const Point3 center = spec.psi.apply(at);
    report.true_beta = spec.beta(center);

    // Certification happens in the frame the weights act in (subject
    // space), on the analytic truth sampled to the given lattice.
    const ScalarField beta_field = spec.beta.sample(certify_lattice);
    const EpsilonCertificate cert =
        certify_epsilon_omega(scheme, beta_field, center, epsilon_ladder);
    report.certified = cert.certified;
    if (cert.certified) {
        report.epsilon_omega = cert.epsilon_omega;
        report.certificate_note = "witness: " + cert.report.witness_region;
    } else {
        report.certificate_note =
            "certification failed; best delta " + std::to_string(cert.report.delta);
    }

    std::vector<double> beta_hats(static_cast<std::size_t>(reps), 0.0);
    std::vector<std::uint8_t> ok(static_cast<std::size_t>(reps), 0);
    parallel_for(static_cast<std::size_t>(reps), config.threads, [&](std::size_t r) {
        const auto [session, truth] = simulate_session(spec, replicate_seed(spec.seed, r));
        const auto cache = detail::build_row_cache(session, model);
        FitConfig point_config = config;
        point_config.threads = 1;
        const PointFit fit = detail::fit_point(session, center, scheme, cache, point_config);
        if (fit.ok()) {
            beta_hats[r] = fit.beta_hat;
            ok[r] = 1;
        }
    });

    double sum = 0.0;
    std::size_t n = 0;
    for (int r = 0; r < reps; ++r)
        if (ok[r]) {
            sum += beta_hats[r];
            ++n;
        }
    if (n < 2) throw Underdetermined("mc_bias: fewer than 2 successful replicates");
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (int r = 0; r < reps; ++r)
        if (ok[r]) {
            const double d = beta_hats[r] - mean;
            ss += d * d;
        }
    report.mean_beta_hat = mean;
    report.empirical_bias = mean - report.true_beta;
    report.mc_se = std::sqrt(ss / (static_cast<double>(n) - 1.0) / static_cast<double>(n));
    if (report.certified) {
        report.bound = 2.0 * report.epsilon_omega + 3.0 * report.mc_se;
        report.within_bound = std::abs(report.empirical_bias) <= report.bound;
    }
    return report;
}

}  // namespace mbfmri
