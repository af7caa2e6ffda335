#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "error.hpp"

namespace mbfmri {

// A point in millimetres. Used for standard space, subject space and
// scanner space alike; which frame a point lives in is a matter of context.
struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Point3() = default;
    Point3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}
    explicit Point3(const Eigen::Vector3d& v) : x(v[0]), y(v[1]), z(v[2]) {}

    Eigen::Vector3d vec() const { return {x, y, z}; }

    Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Point3 operator*(double c) const { return {c * x, c * y, c * z}; }

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    double squared_norm() const { return x * x + y * y + z * z; }

    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance(const Point3& a, const Point3& b) { return (a - b).norm(); }

// Rigid body transform p -> R p + t with R a proper rotation.
class RigidMotion {
public:
    RigidMotion() : rotation_(Eigen::Matrix3d::Identity()) {}

    RigidMotion(const Eigen::Matrix3d& rotation, const Point3& translation)
        : rotation_(rotation), translation_(translation) {
        const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity())
                                 .cwiseAbs()
                                 .maxCoeff();
        if (ortho > 1e-9)
            throw InvalidArgument("RigidMotion: rotation not orthogonal (deviation " +
                                  std::to_string(ortho) + ")");
        if (std::abs(rotation.determinant() - 1.0) > 1e-9)
            throw InvalidArgument("RigidMotion: rotation determinant != +1");
    }

    static RigidMotion identity() { return RigidMotion(); }

    // Unit quaternion (w, x, y, z) + translation. This is the on-disk
    // representation used by session sidecars.
    static RigidMotion from_quaternion(double w, double x, double y, double z,
                                       const Point3& translation) {
        Eigen::Quaterniond q(w, x, y, z);
        const double n = q.norm();
        if (std::abs(n - 1.0) > 1e-6)
            throw InvalidArgument("RigidMotion: quaternion norm " + std::to_string(n) +
                                  " not within 1e-6 of 1");
        q.normalize();
        RigidMotion m;
        m.rotation_ = q.toRotationMatrix();
        m.translation_ = translation;
        return m;
    }

    // Returns (w, x, y, z), normalized with w >= 0 so round trips are stable.
    std::array<double, 4> quaternion() const {
        Eigen::Quaterniond q(rotation_);
        q.normalize();
        if (q.w() < 0.0) q.coeffs() = -q.coeffs();
        return {q.w(), q.x(), q.y(), q.z()};
    }

    const Eigen::Matrix3d& rotation() const { return rotation_; }
    const Point3& translation() const { return translation_; }

    bool is_identity() const {
        return (rotation_ - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() == 0.0 &&
               translation_.x == 0.0 && translation_.y == 0.0 && translation_.z == 0.0;
    }

private:
    Eigen::Matrix3d rotation_;
    Point3 translation_;
};

inline Point3 apply_motion(const RigidMotion& rho, const Point3& p) {
    return Point3(rho.rotation() * p.vec() + rho.translation().vec());
}

inline RigidMotion invert_motion(const RigidMotion& rho) {
    const Eigen::Matrix3d rt = rho.rotation().transpose();
    return RigidMotion(rt, Point3(-(rt * rho.translation().vec())));
}

// Affine change of coordinates p -> A p + b (standard space -> subject
// space). Nonlinear warps can be pre-composed externally; every formula in
// this library only needs the map and its inverse at isolated points.
class AffineMap {
public:
    AffineMap() : linear_(Eigen::Matrix3d::Identity()) {}

    AffineMap(const Eigen::Matrix3d& linear, const Point3& offset)
        : linear_(linear), offset_(offset) {
        if (std::abs(linear.determinant()) <= 1e-12)
            throw InvalidArgument("AffineMap: linear part numerically singular");
    }

    static AffineMap identity() { return AffineMap(); }

    Point3 apply(const Point3& p) const { return Point3(linear_ * p.vec() + offset_.vec()); }

    AffineMap inverse() const {
        const Eigen::Matrix3d inv = linear_.inverse();
        return AffineMap(inv, Point3(-(inv * offset_.vec())));
    }

    const Eigen::Matrix3d& linear() const { return linear_; }
    const Point3& offset() const { return offset_; }

private:
    Eigen::Matrix3d linear_;
    Point3 offset_;
};

// Scanner acquisition geometry: slice stack, in-plane raster, and the
// within-cycle timing of each slice. Voxel (i, j, k) sits at scanner
// coordinate (i*dx, j*dy, k*dz); one scan cycle lasts cycle_duration
// seconds (the TR) and acquires every slice once, in slice_order.
struct AcquisitionGrid {
    int slice_count = 0;
    int nx = 0;
    int ny = 0;
    double dx = 0.0, dy = 0.0, dz = 0.0;            // voxel size, mm
    std::vector<int> slice_order;                   // acquisition order, permutation of 0..slice_count-1
    std::vector<double> slice_times;                // seconds after cycle start, indexed by slice
    double cycle_duration = 0.0;                    // TR, seconds

    void validate() const {
        if (slice_count <= 0 || nx <= 0 || ny <= 0)
            throw InvalidArgument("AcquisitionGrid: nonpositive shape");
        if (!(dx > 0.0 && dy > 0.0 && dz > 0.0))
            throw InvalidArgument("AcquisitionGrid: voxel size must be > 0");
        if (!(cycle_duration > 0.0))
            throw InvalidArgument("AcquisitionGrid: cycle_duration must be > 0");
        if (slice_order.size() != static_cast<std::size_t>(slice_count) ||
            slice_times.size() != static_cast<std::size_t>(slice_count))
            throw InvalidArgument("AcquisitionGrid: slice_order/slice_times length != slice_count");
        std::vector<bool> seen(slice_count, false);
        for (int s : slice_order) {
            if (s < 0 || s >= slice_count || seen[s])
                throw InvalidArgument("AcquisitionGrid: slice_order is not a permutation");
            seen[s] = true;
        }
        double prev = -1.0;
        for (int s : slice_order) {
            const double t = slice_times[s];
            if (!(t >= 0.0 && t < cycle_duration))
                throw InvalidArgument("AcquisitionGrid: slice time outside [0, cycle_duration)");
            if (t <= prev)
                throw InvalidArgument("AcquisitionGrid: slice times not increasing along slice_order");
            prev = t;
        }
    }

    // Ascending slice order with evenly spaced slice times — the default
    // phantom geometry.
    static AcquisitionGrid sequential(int nx, int ny, int slices, double dx, double dy, double dz,
                                      double tr) {
        AcquisitionGrid g;
        g.nx = nx;
        g.ny = ny;
        g.slice_count = slices;
        g.dx = dx;
        g.dy = dy;
        g.dz = dz;
        g.cycle_duration = tr;
        g.slice_order.resize(slices);
        g.slice_times.resize(slices);
        for (int s = 0; s < slices; ++s) {
            g.slice_order[s] = s;
            g.slice_times[s] = tr * static_cast<double>(s) / static_cast<double>(slices);
        }
        g.validate();
        return g;
    }

    Point3 voxel_centre(int i, int j, int k) const {
        return {i * dx, j * dy, k * dz};
    }
};

// Subject-space sample locations of one slice under motion rho, with the
// acquisition time of that slice. The scanner measures at fixed voxel
// centres v; the moving head means the sample in subject space sits at
// rho^{-1}(v).
inline std::vector<std::pair<Point3, double>> grid_sample_locations(const AcquisitionGrid& grid,
                                                                    const RigidMotion& rho,
                                                                    int slice,
                                                                    double cycle_start = 0.0) {
    if (slice < 0 || slice >= grid.slice_count)
        throw InvalidArgument("grid_sample_locations: slice index out of range");
    const RigidMotion inv = invert_motion(rho);
    const double t = cycle_start + grid.slice_times[slice];
    std::vector<std::pair<Point3, double>> out;
    out.reserve(static_cast<std::size_t>(grid.nx) * grid.ny);
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i)
            out.emplace_back(apply_motion(inv, grid.voxel_centre(i, j, slice)), t);
    return out;
}

inline constexpr double kFwhmPerSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)

inline double fwhm_to_sigma(double fwhm) {
    if (fwhm < 0.0) throw InvalidArgument("fwhm_to_sigma: negative fwhm");
    return fwhm / kFwhmPerSigma;
}

inline double sigma_to_fwhm(double sigma) {
    if (sigma < 0.0) throw InvalidArgument("sigma_to_fwhm: negative sigma");
    return sigma * kFwhmPerSigma;
}

}  // namespace mbfmri
