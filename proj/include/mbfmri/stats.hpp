#pragma once

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "error.hpp"

namespace mbfmri {

// Thin wrappers around the distribution functions we need, so the rest of
// the library never touches boost directly.

inline double student_t_quantile(double p, double df) {
    if (!(df > 0.0)) throw InvalidArgument("student_t_quantile: df must be > 0");
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("student_t_quantile: p must be in (0,1)");
    boost::math::students_t dist(df);
    return boost::math::quantile(dist, p);
}

inline double student_t_cdf(double x, double df) {
    if (!(df > 0.0)) throw InvalidArgument("student_t_cdf: df must be > 0");
    boost::math::students_t dist(df);
    return boost::math::cdf(dist, x);
}

// Two-sided p-value for an observed t with the given df.
inline double student_t_p_two_sided(double t, double df) {
    if (!(df > 0.0)) throw InvalidArgument("student_t_p_two_sided: df must be > 0");
    boost::math::students_t dist(df);
    double p = 2.0 * boost::math::cdf(dist, -std::abs(t));
    return p > 1.0 ? 1.0 : p;
}

inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("normal_quantile: p must be in (0,1)");
    boost::math::normal dist;
    return boost::math::quantile(dist, p);
}

inline double normal_cdf(double x) {
    boost::math::normal dist;
    return boost::math::cdf(dist, x);
}

// Critical value of the two-sided Grubbs test for n observations at level
// alpha: ((n-1)/sqrt(n)) * sqrt(t^2 / (n-2+t^2)) with
// t = quantile(1 - alpha/(2n), n-2).
inline double grubbs_critical(std::size_t n, double alpha) {
    if (n < 3) throw InvalidArgument("grubbs_critical: need n >= 3");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("grubbs_critical: alpha in (0,1)");
    const double nn = static_cast<double>(n);
    const double t = student_t_quantile(1.0 - alpha / (2.0 * nn), nn - 2.0);
    return (nn - 1.0) / std::sqrt(nn) * std::sqrt(t * t / (nn - 2.0 + t * t));
}

}  // namespace mbfmri
