#pragma once

#include <stdexcept>
#include <string>

namespace mbfmri {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments / violated preconditions detected at the API boundary.
class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

// The weighted design matrix is numerically rank deficient.
class RankDeficient : public Error {
public:
    explicit RankDeficient(const std::string& msg) : Error(msg) {}
};

// Fewer usable observations than coefficients.
class Underdetermined : public Error {
public:
    explicit Underdetermined(const std::string& msg) : Error(msg) {}
};

// A t statistic was requested where var(beta_hat) = 0.
class ZeroVariance : public Error {
public:
    explicit ZeroVariance(const std::string& msg) : Error(msg) {}
};

// Intercept estimate is not positive where a positive reference is required.
class NonpositiveIntercept : public Error {
public:
    explicit NonpositiveIntercept(const std::string& msg) : Error(msg) {}
};

// Meta-regression called with too few studies (k <= p, or k = 1).
class DegenerateMeta : public Error {
public:
    explicit DegenerateMeta(const std::string& msg) : Error(msg) {}
};

// File-level problems. `field` names the offending header field or entry.
class MalformedHeader : public Error {
public:
    MalformedHeader(const std::string& field, const std::string& msg)
        : Error("malformed header [" + field + "]: " + msg), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// Sidecar JSON disagrees with the volume it describes.
class SidecarMismatch : public Error {
public:
    SidecarMismatch(const std::string& field, const std::string& msg)
        : Error("sidecar mismatch [" + field + "]: " + msg), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

}  // namespace mbfmri
