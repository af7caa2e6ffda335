#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include <mbfmri/meta.hpp>
#include <mbfmri/phantom.hpp>

#include "oracles.hpp"

using namespace mbfmri;

namespace {

std::vector<StudyPoint> make_points(const std::vector<double>& beta,
                                    const std::vector<double>& v) {
    std::vector<StudyPoint> pts(beta.size());
    for (std::size_t i = 0; i < beta.size(); ++i) {
        pts[i].beta_hat = beta[i];
        pts[i].variance = v[i];
    }
    return pts;
}

struct RandomMeta {
    std::vector<StudyPoint> points;
    Eigen::MatrixXd X;
    std::vector<double> beta, v;
    std::vector<std::vector<double>> Xrows;
};

RandomMeta random_meta(std::mt19937_64& eng, int max_k = 30, int max_p = 3) {
    std::uniform_int_distribution<int> pd(1, max_p);
    const int p = pd(eng);
    std::uniform_int_distribution<int> kd(p + 2, max_k);
    const int k = kd(eng);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> uv(0.1, 2.0);

    RandomMeta m;
    m.points.resize(k);
    m.X.resize(k, p);
    m.Xrows.assign(k, std::vector<double>(p));
    for (int i = 0; i < k; ++i) {
        m.points[i].beta_hat = 2.0 * g(eng);
        m.points[i].variance = uv(eng);
        m.beta.push_back(m.points[i].beta_hat);
        m.v.push_back(m.points[i].variance);
        m.X(i, 0) = 1.0;
        m.Xrows[i][0] = 1.0;
        for (int j = 1; j < p; ++j) {
            m.X(i, j) = g(eng);
            m.Xrows[i][j] = m.X(i, j);
            m.points[i].covariates.push_back(m.X(i, j));
        }
    }
    return m;
}

}  // namespace

TEST_CASE("between-subject variance estimators") {
    SECTION("identical effects leave no heterogeneity") {
        const auto pts = make_points({3.0, 3.0, 3.0, 3.0}, {1.0, 1.0, 1.0, 1.0});
        const Eigen::MatrixXd X = meta_design(pts);
        CHECK(hedges_tau2(pts, X) == 0.0);
        CHECK(dersimonian_laird_tau2(pts, X) == 0.0);
        CHECK(paule_mandel_tau2(pts, X) == Catch::Approx(0.0).margin(1e-9));
    }

    SECTION("hand case: spread exactly matching the within variance") {
        // Residual sum 2, trace of (I - H) weighted by v is 2, k - p = 2.
        const auto pts = make_points({0.0, 1.0, 2.0}, {1.0, 1.0, 1.0});
        const Eigen::MatrixXd X = meta_design(pts);
        CHECK(hedges_tau2(pts, X) == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("hand case: wide spread, all three estimators agree at 15") {
        const auto pts = make_points({0.0, 4.0, 8.0}, {1.0, 1.0, 1.0});
        const Eigen::MatrixXd X = meta_design(pts);
        CHECK(hedges_tau2(pts, X) == Catch::Approx(15.0).epsilon(1e-12));
        CHECK(dersimonian_laird_tau2(pts, X) == Catch::Approx(15.0).epsilon(1e-12));
        CHECK(paule_mandel_tau2(pts, X) == Catch::Approx(15.0).epsilon(1e-8));
    }

    SECTION("negative moment estimates truncate to zero") {
        const auto pts = make_points({1.0, 1.01, 0.99, 1.0}, {5.0, 5.0, 5.0, 5.0});
        const Eigen::MatrixXd X = meta_design(pts);
        CHECK(hedges_tau2(pts, X) == 0.0);
        CHECK(dersimonian_laird_tau2(pts, X) == 0.0);
    }

    SECTION("random instances match the long-double oracle") {
        std::mt19937_64 eng(40);
        for (int rep = 0; rep < 200; ++rep) {
            const RandomMeta m = random_meta(eng);
            const double mine = hedges_tau2(m.points, m.X);
            const double ref = oracle::hedges_tau2(m.beta, m.Xrows, m.v);
            CHECK(mine == Catch::Approx(ref).epsilon(1e-9).margin(1e-9));
        }
    }

    SECTION("the moment-matching fixed point reproduces its defining equation") {
        std::mt19937_64 eng(41);
        for (int rep = 0; rep < 50; ++rep) {
            const RandomMeta m = random_meta(eng);
            const double tau2 = paule_mandel_tau2(m.points, m.X);
            if (tau2 <= 0.0) continue;  // boundary solutions need not balance
            const GlsFit gls = meta_gls(m.points, m.X, tau2);
            double q = 0.0;
            for (std::size_t i = 0; i < m.points.size(); ++i) {
                double fitted = 0.0;
                for (Eigen::Index j = 0; j < m.X.cols(); ++j)
                    fitted += m.X(i, j) * gls.theta[j];
                const double e = m.points[i].beta_hat - fitted;
                q += e * e / (m.points[i].variance + tau2);
            }
            const double dof = static_cast<double>(m.points.size()) - m.X.cols();
            CHECK(q == Catch::Approx(dof).epsilon(1e-6));
        }
    }
}

TEST_CASE("generalized least squares pooling") {
    SECTION("two equal-variance studies pool to their mean") {
        const auto pts = make_points({2.0, 6.0}, {1.5, 1.5});
        const Eigen::MatrixXd X = meta_design(pts);
        const GlsFit gls = meta_gls(pts, X, 0.0);
        CHECK(gls.theta[0] == Catch::Approx(4.0).epsilon(1e-12));
    }

    SECTION("an enormous between-subject variance washes out the weights") {
        const auto pts = make_points({1.0, 2.0, 3.0, 10.0}, {0.01, 1.0, 0.5, 2.0});
        const Eigen::MatrixXd X = meta_design(pts);
        const double tau2 = 1e8 * 2.0;
        const GlsFit gls = meta_gls(pts, X, tau2);
        // All weights collapse toward 1/tau2: GLS becomes plain OLS (the mean).
        CHECK(gls.theta[0] == Catch::Approx(4.0).epsilon(1e-6));
    }

    SECTION("random instances match the dense oracle") {
        std::mt19937_64 eng(42);
        std::uniform_real_distribution<double> ut(0.0, 3.0);
        for (int rep = 0; rep < 200; ++rep) {
            const RandomMeta m = random_meta(eng);
            const double tau2 = ut(eng);
            const GlsFit gls = meta_gls(m.points, m.X, tau2);
            const auto ref = oracle::gls(m.beta, m.Xrows, m.v, tau2);
            for (std::size_t j = 0; j < ref.theta.size(); ++j) {
                CHECK(gls.theta[j] ==
                      Catch::Approx(ref.theta[j]).epsilon(1e-10).margin(1e-12));
                for (std::size_t l = 0; l < ref.theta.size(); ++l)
                    CHECK(gls.cov(j, l) ==
                          Catch::Approx(ref.cov[j][l]).epsilon(1e-10).margin(1e-12));
            }
        }
    }
}

TEST_CASE("small-sample adjusted inference") {
    SECTION("a unit heterogeneity statistic leaves the covariance untouched") {
        // Two studies, equal weights 1/2, residuals +-1: q = sum w e^2 / (k-p) = 1.
        const auto pts = make_points({0.0, 2.0}, {2.0, 2.0});
        const Eigen::MatrixXd X = meta_design(pts);
        const GlsFit gls = meta_gls(pts, X, 0.0);
        const MetaFit fit = knapp_hartung(pts, X, gls);
        CHECK(fit.q == Catch::Approx(1.0).epsilon(1e-12));
        CHECK(fit.cov_adjusted(0, 0) == Catch::Approx(fit.cov_unadjusted(0, 0)).epsilon(1e-12));
    }

    SECTION("hand case: two unit-variance studies, no shrinkage") {
        // w = 1 each, pooled mean 1, residuals +-1 => q = (1+1)/(2-1) = 2;
        // unadjusted var = 1/sum w = 1/2, adjusted var = q/2 = 1 => se = 1,
        // t = 1/1 = 1, df = 1.
        const auto pts = make_points({0.0, 2.0}, {1.0, 1.0});
        const Eigen::MatrixXd X = meta_design(pts);
        const GlsFit gls = meta_gls(pts, X, 0.0);
        const MetaFit fit = knapp_hartung(pts, X, gls);
        CHECK(fit.gamma_hat == Catch::Approx(1.0).epsilon(1e-12));
        CHECK(fit.q == Catch::Approx(2.0).epsilon(1e-12));
        CHECK(fit.se_adjusted == Catch::Approx(1.0).epsilon(1e-12));
        CHECK(fit.t_adjusted == Catch::Approx(1.0).epsilon(1e-12));
        CHECK(fit.df == 1);
    }

    SECTION("random instances match the oracle end to end") {
        std::mt19937_64 eng(43);
        for (int rep = 0; rep < 200; ++rep) {
            const RandomMeta m = random_meta(eng);
            const double tau2 = hedges_tau2(m.points, m.X);
            const GlsFit gls = meta_gls(m.points, m.X, tau2);
            const MetaFit fit = knapp_hartung(m.points, m.X, gls, 0);
            const auto ref = oracle::kh(m.beta, m.Xrows, m.v, tau2, 0);
            CHECK(fit.q == Catch::Approx(ref.q).epsilon(1e-9).margin(1e-12));
            CHECK(fit.se_adjusted == Catch::Approx(ref.se).epsilon(1e-9).margin(1e-12));
            if (std::isfinite(ref.t))
                CHECK(fit.t_adjusted == Catch::Approx(ref.t).epsilon(1e-9).margin(1e-9));
            CHECK(fit.df == static_cast<int>(ref.df));
            CHECK(fit.ci95.first <= fit.gamma_hat);
            CHECK(fit.ci95.second >= fit.gamma_hat);
            CHECK(fit.p_value >= 0.0);
            CHECK(fit.p_value <= 1.0);
        }
    }

    SECTION("joint rescaling of variances and tau2 leaves adjusted inference alone") {
        const auto pts = make_points({1.0, 2.0, 4.0, 3.0}, {0.5, 1.0, 0.25, 0.75});
        const Eigen::MatrixXd X = meta_design(pts);
        const double tau2 = 0.4;
        const MetaFit a = knapp_hartung(pts, X, meta_gls(pts, X, tau2));
        auto scaled = pts;
        for (auto& p : scaled) p.variance *= 4.0;
        const MetaFit b = knapp_hartung(scaled, X, meta_gls(scaled, X, 4.0 * tau2));
        // The point estimate ignores the overall scale of the weights, and the
        // profile factor recalibrates the variance from the residual spread, so
        // the adjusted se and t do not move. Only the model-based pieces scale:
        // q by the inverse factor, the unadjusted covariance by the factor.
        CHECK(b.gamma_hat == Catch::Approx(a.gamma_hat).epsilon(1e-12));
        CHECK(b.q == Catch::Approx(a.q / 4.0).epsilon(1e-12));
        CHECK(b.cov_unadjusted(0, 0) ==
              Catch::Approx(4.0 * a.cov_unadjusted(0, 0)).epsilon(1e-12));
        CHECK(b.se_adjusted == Catch::Approx(a.se_adjusted).epsilon(1e-12));
        CHECK(b.t_adjusted == Catch::Approx(a.t_adjusted).epsilon(1e-12));
    }

    SECTION("a zero standard error collapses the interval and flags t") {
        const auto pts = make_points({5.0, 5.0}, {1.0, 1.0});
        const Eigen::MatrixXd X = meta_design(pts);
        const GlsFit gls = meta_gls(pts, X, 0.0);
        const MetaFit fit = knapp_hartung(pts, X, gls);  // residuals 0 -> q = 0 -> se 0
        CHECK(fit.se_adjusted == 0.0);
        CHECK(std::isnan(fit.t_adjusted));
        CHECK(std::isnan(fit.p_value));
        CHECK(fit.ci95.first == 5.0);
        CHECK(fit.ci95.second == 5.0);
    }

    SECTION("too few studies are refused") {
        const auto one = make_points({1.0}, {1.0});
        CHECK_THROWS_AS(meta_fit_point(one, meta_design(one)), DegenerateMeta);
        // k == p: no residual degrees of freedom.
        auto two = make_points({1.0, 2.0}, {1.0, 1.0});
        two[0].covariates = {0.0};
        two[1].covariates = {1.0};
        CHECK_THROWS_AS(meta_fit_point(two, meta_design(two)), DegenerateMeta);
    }

    SECTION("the one-call driver matches the assembled pipeline") {
        std::mt19937_64 eng(44);
        const RandomMeta m = random_meta(eng, 12, 2);
        MetaConfig config;
        config.heterogeneity = MetaConfig::Heterogeneity::kHedges;
        const MetaFit a = meta_fit_point(m.points, m.X, config);
        const double tau2 = hedges_tau2(m.points, m.X);
        const MetaFit b = knapp_hartung(m.points, m.X, meta_gls(m.points, m.X, tau2));
        CHECK(a.gamma_hat == b.gamma_hat);
        CHECK(a.se_adjusted == b.se_adjusted);
        CHECK(a.tau2 == tau2);
    }
}

TEST_CASE("smoothed reference field") {
    SECTION("a constant template smooths to itself") {
        const Lattice lattice({0, 0, 0}, {2, 2, 2}, {9, 9, 9});
        const ScalarField tmpl = ScalarField::constant(lattice, 7.25);
        WeightScheme scheme;
        scheme.divergence = DivergenceMap::scaled_euclidean(3.0);
        scheme.hard_cutoff_radius = 9.0;
        const ScalarField mu = reference_field(tmpl, scheme);
        for (std::size_t idx = 0; idx < lattice.size(); ++idx)
            CHECK(mu.at(idx) == Catch::Approx(7.25).epsilon(1e-12));
    }

    SECTION("a point spike spreads into the normalized kernel footprint") {
        const Lattice lattice({0, 0, 0}, {1, 1, 1}, {15, 15, 15});
        std::vector<double> values(lattice.size(), 0.0);
        const std::size_t spike = lattice.index(7, 7, 7);
        values[spike] = 1.0;
        const ScalarField tmpl(lattice, values);
        WeightScheme scheme;
        scheme.divergence = DivergenceMap::scaled_euclidean(1.5);
        scheme.hard_cutoff_radius = 4.5;
        const ScalarField mu = reference_field(tmpl, scheme);

        // Direct convolution oracle at a handful of probe indices.
        for (auto [pi, pj, pk] : {std::array<int, 3>{7, 7, 7},
                                  std::array<int, 3>{8, 7, 7},
                                  std::array<int, 3>{9, 9, 7},
                                  std::array<int, 3>{4, 7, 10}}) {
            const Point3 x = lattice.point(pi, pj, pk);
            double num = 0.0, den = 0.0;
            for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
                const double w = scheme.weight(x, lattice.point(idx));
                num += w * tmpl.at(idx);
                den += w;
            }
            CHECK(mu.at(lattice.index(pi, pj, pk)) ==
                  Catch::Approx(num / den).epsilon(1e-12).margin(1e-15));
        }
        // The peak of the smoothed spike stays at the spike.
        const auto& vals = mu.values();
        CHECK(static_cast<std::size_t>(
                  std::max_element(vals.begin(), vals.end()) - vals.begin()) == spike);
    }

    SECTION("smoothing is a contraction: output range inside input range") {
        const Lattice lattice({0, 0, 0}, {1.5, 1.5, 1.5}, {10, 10, 6});
        const ScalarField tmpl = ScalarField::from_function(lattice, [](const Point3& p) {
            return 40.0 + 10.0 * std::sin(p.x) * std::cos(0.7 * p.y) + 0.5 * p.z;
        });
        WeightScheme scheme;
        scheme.divergence = DivergenceMap::scaled_euclidean(2.0);
        scheme.hard_cutoff_radius = 6.0;
        const ScalarField mu = reference_field(tmpl, scheme);
        const auto [lo, hi] =
            std::minmax_element(tmpl.values().begin(), tmpl.values().end());
        for (double v : mu.values()) {
            CHECK(v >= *lo - 1e-12);
            CHECK(v <= *hi + 1e-12);
        }
    }

    SECTION("an empty neighbourhood is refused") {
        const Lattice lattice({0, 0, 0}, {1, 1, 1}, {4, 4, 4});
        const ScalarField tmpl = ScalarField::constant(lattice, 1.0);
        WeightScheme scheme;
        scheme.divergence = DivergenceMap::scaled_euclidean(1.0);
        scheme.hard_cutoff_radius = 2.0;
        scheme.mask = Mask::ball({-50, -50, -50}, 1.0);  // excludes every lattice point
        CHECK_THROWS_AS(reference_field(tmpl, scheme), InvalidArgument);
    }
}

TEST_CASE("activity-normalized scaling") {
    SECTION("baseline equal to the reference leaves effects unchanged") {
        const Lattice lattice({0, 0, 0}, {2, 2, 2}, {6, 6, 6});
        const ScalarField mu = ScalarField::constant(lattice, 100.0);
        const ScalarField alpha = ScalarField::constant(lattice, 100.0);
        const ScalarField beta = ScalarField::from_function(
            lattice, [](const Point3& p) { return 3.0 + 0.1 * p.x; });
        const ScalarField var = ScalarField::constant(lattice, 0.25);
        const NormalizedField out = normalize_to_ati(beta, var, alpha, mu);
        for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
            CHECK(out.beta.at(idx) == Catch::Approx(beta.at(idx)).epsilon(1e-12));
            CHECK(out.variance.at(idx) == Catch::Approx(0.25).epsilon(1e-12));
            CHECK(out.flagged.empty());
        }
    }

    SECTION("doubling the baseline halves the scaled effect") {
        const Lattice lattice({0, 0, 0}, {2, 2, 2}, {4, 4, 4});
        const ScalarField mu = ScalarField::constant(lattice, 100.0);
        const ScalarField alpha = ScalarField::constant(lattice, 200.0);
        const ScalarField beta = ScalarField::constant(lattice, 10.0);
        const ScalarField var = ScalarField::constant(lattice, 1.0);
        const NormalizedField out = normalize_to_ati(beta, var, alpha, mu);
        for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
            CHECK(out.beta.at(idx) == Catch::Approx(5.0).epsilon(1e-12));
            CHECK(out.variance.at(idx) == Catch::Approx(0.25).epsilon(1e-12));
        }
    }

    SECTION("nonpositive baselines are flagged and set to NaN, never dropped") {
        const Lattice lattice({0, 0, 0}, {1, 1, 1}, {3, 1, 1});
        const ScalarField mu = ScalarField::constant(lattice, 50.0);
        const ScalarField alpha(lattice, {100.0, -5.0, 0.0});
        const ScalarField beta = ScalarField::constant(lattice, 8.0);
        const ScalarField var = ScalarField::constant(lattice, 1.0);
        const NormalizedField out = normalize_to_ati(beta, var, alpha, mu);
        REQUIRE(out.flagged.size() == 2);
        CHECK(out.flagged[0] == 1);
        CHECK(out.flagged[1] == 2);
        CHECK(std::isfinite(out.beta.at(0)));
        CHECK(std::isnan(out.beta.at(1)));
        CHECK(std::isnan(out.beta.at(2)));
        CHECK(out.beta.values().size() == 3);
    }

    SECTION("pointwise scale refuses a nonpositive intercept") {
        CHECK(ati_scale(100.0, 50.0) == Catch::Approx(2.0));
        CHECK_THROWS_AS(ati_scale(100.0, 0.0), NonpositiveIntercept);
        CHECK_THROWS_AS(ati_scale(100.0, -3.0), NonpositiveIntercept);
    }
}

TEST_CASE("forest and funnel table") {
    SECTION("subject rows are ordered by covariate and carry 1/se") {
        std::vector<StudyPoint> pts = make_points({1.0, 2.0, 3.0}, {4.0, 1.0, 0.25});
        const MetaFit fit = meta_fit_point(pts, meta_design(pts));
        const auto rows =
            forest_funnel_data(pts, fit, {30.0, 10.0, 20.0}, {"s30", "s10", "s20"});
        REQUIRE(rows.size() == 4);
        CHECK(rows[0].label == "s10");
        CHECK(rows[1].label == "s20");
        CHECK(rows[2].label == "s30");
        for (int i = 0; i < 3; ++i) {
            CHECK(!rows[i].population);
            CHECK(rows[i].inv_se == Catch::Approx(1.0 / rows[i].se).epsilon(1e-12));
            const double z = (rows[i].ci_hi - rows[i].estimate) / rows[i].se;
            CHECK(z > 1.9599);
            CHECK(z < 1.9601);
            CHECK(rows[i].estimate - rows[i].ci_lo ==
                  Catch::Approx(rows[i].ci_hi - rows[i].estimate).epsilon(1e-12));
        }
        CHECK(rows[3].population);
        CHECK(rows[3].estimate == fit.gamma_hat);
        CHECK(rows[3].ci_lo == fit.ci95.first);
        CHECK(rows[3].ci_hi == fit.ci95.second);
    }

    SECTION("a single subject yields its row plus a flagged population row") {
        std::vector<StudyPoint> pts = make_points({2.5}, {0.16});
        const auto rows = forest_funnel_data(pts, std::nullopt, {0.0}, {"only"});
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].label == "only");
        CHECK(rows[0].estimate == 2.5);
        CHECK(rows[1].population);
        CHECK(std::isnan(rows[1].estimate));
        CHECK(std::isnan(rows[1].ci_lo));
    }

    SECTION("labels default to a stable numbering") {
        std::vector<StudyPoint> pts = make_points({1.0, 2.0}, {1.0, 1.0});
        const auto rows = forest_funnel_data(pts, std::nullopt, {0.0, 0.0});
        CHECK(rows[0].label == "subject_1");
        CHECK(rows[1].label == "subject_2");
    }
}

TEST_CASE("pointwise meta field") {
    SECTION("identical subjects leave zero heterogeneity everywhere") {
        const Lattice lattice({0, 0, 0}, {3, 3, 3}, {4, 4, 2});
        const ScalarField beta = ScalarField::from_function(
            lattice, [](const Point3& p) { return 1.0 + 0.2 * p.y; });
        const ScalarField var = ScalarField::constant(lattice, 0.5);
        const std::vector<ScalarField> betas(4, beta);
        const std::vector<ScalarField> vars(4, var);
        const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 1);
        const MetaField field =
            meta_field(betas, vars, X, Region::all(lattice), MetaConfig{});
        for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
            REQUIRE(field.points[idx].ok);
            CHECK(field.points[idx].fit.tau2 == 0.0);
            CHECK(field.points[idx].fit.gamma_hat ==
                  Catch::Approx(beta.at(idx)).epsilon(1e-12));
        }
    }

    SECTION("the population t-field peaks where the shared signal was planted") {
        const Lattice lattice({0, 0, 0}, {3, 3, 3}, {7, 7, 3});
        const Point3 planted{9.0, 9.0, 3.0};
        const AnalyticField truth = AnalyticField::bump(0.0, planted, 8.0, 12.0);
        std::mt19937_64 eng(45);
        std::normal_distribution<double> offset(0.0, 0.4);
        std::normal_distribution<double> jitter(0.0, 0.02);
        std::vector<ScalarField> betas, vars;
        for (int s = 0; s < 6; ++s) {
            // Subject deviations are smooth in space (an offset per subject),
            // as fitted fields are; the tiny jitter keeps points distinct.
            const double c = offset(eng);
            std::vector<double> b(lattice.size()), v(lattice.size(), 0.16);
            for (std::size_t idx = 0; idx < lattice.size(); ++idx)
                b[idx] = truth(lattice.point(idx)) + c + jitter(eng);
            betas.emplace_back(lattice, b);
            vars.emplace_back(lattice, v);
        }
        const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(6, 1);
        const MetaField field =
            meta_field(betas, vars, X, Region::all(lattice), MetaConfig{});
        std::size_t best = 0;
        double best_t = -1e300;
        for (std::size_t idx = 0; idx < lattice.size(); ++idx)
            if (field.points[idx].ok &&
                std::isfinite(field.points[idx].fit.t_adjusted) &&
                field.points[idx].fit.t_adjusted > best_t) {
                best_t = field.points[idx].fit.t_adjusted;
                best = idx;
            }
        std::size_t expect = 0;
        REQUIRE(lattice.nearest(planted, expect));
        CHECK(best == expect);
    }

    SECTION("points with invalid inputs are marked, not fatal") {
        const Lattice lattice({0, 0, 0}, {1, 1, 1}, {2, 1, 1});
        std::vector<double> b0{1.0, 2.0}, v0{1.0, 1.0};
        std::vector<double> b1{1.5, std::numeric_limits<double>::quiet_NaN()};
        std::vector<double> v1{1.0, 1.0};
        const std::vector<ScalarField> betas{ScalarField(lattice, b0),
                                             ScalarField(lattice, b1)};
        const std::vector<ScalarField> vars{ScalarField(lattice, v0),
                                            ScalarField(lattice, v1)};
        const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(2, 1);
        const MetaField field =
            meta_field(betas, vars, X, Region::all(lattice), MetaConfig{});
        CHECK(field.points[0].ok);   // both subjects valid here
        CHECK(!field.points[1].ok);  // one subject dropped -> k = 1 -> degenerate
        CHECK(!field.points[1].message.empty());
    }
}
