#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "error.hpp"
#include "geometry.hpp"

namespace mbfmri {

// A regular evaluation grid: point (i, j, k) sits at
// origin + (i*spacing.x, j*spacing.y, k*spacing.z).
struct Lattice {
    Point3 origin;
    Point3 spacing{1.0, 1.0, 1.0};
    std::array<int, 3> shape{0, 0, 0};

    Lattice() = default;
    Lattice(const Point3& origin_, const Point3& spacing_, std::array<int, 3> shape_)
        : origin(origin_), spacing(spacing_), shape(shape_) {
        if (!(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0))
            throw InvalidArgument("Lattice: spacing must be > 0");
        if (shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0)
            throw InvalidArgument("Lattice: shape must be positive");
    }

    static Lattice cubic(const Point3& origin, double spacing, int n) {
        return Lattice(origin, {spacing, spacing, spacing}, {n, n, n});
    }

    std::size_t size() const {
        return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
    }

    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(shape[0]) * (static_cast<std::size_t>(j) +
                                                     static_cast<std::size_t>(shape[1]) * k);
    }

    std::array<int, 3> coords(std::size_t idx) const {
        const int i = static_cast<int>(idx % shape[0]);
        const int j = static_cast<int>((idx / shape[0]) % shape[1]);
        const int k = static_cast<int>(idx / (static_cast<std::size_t>(shape[0]) * shape[1]));
        return {i, j, k};
    }

    Point3 point(int i, int j, int k) const {
        return {origin.x + i * spacing.x, origin.y + j * spacing.y, origin.z + k * spacing.z};
    }

    Point3 point(std::size_t idx) const {
        const auto c = coords(idx);
        return point(c[0], c[1], c[2]);
    }

    bool in_bounds(int i, int j, int k) const {
        return i >= 0 && i < shape[0] && j >= 0 && j < shape[1] && k >= 0 && k < shape[2];
    }

    double cell_volume() const { return spacing.x * spacing.y * spacing.z; }

    // Index of the lattice point nearest to p; false if p lies outside the
    // lattice bounding box (inflated by half a cell).
    bool nearest(const Point3& p, std::size_t& out) const {
        const int i = static_cast<int>(std::lround((p.x - origin.x) / spacing.x));
        const int j = static_cast<int>(std::lround((p.y - origin.y) / spacing.y));
        const int k = static_cast<int>(std::lround((p.z - origin.z) / spacing.z));
        if (!in_bounds(i, j, k)) return false;
        out = index(i, j, k);
        return true;
    }

    bool operator==(const Lattice& o) const {
        return origin.x == o.origin.x && origin.y == o.origin.y && origin.z == o.origin.z &&
               spacing.x == o.spacing.x && spacing.y == o.spacing.y &&
               spacing.z == o.spacing.z && shape == o.shape;
    }
};

// Scalar values on a lattice, with trilinear interpolation between nodes.
class ScalarField {
public:
    ScalarField() = default;
    ScalarField(const Lattice& lattice, std::vector<double> values)
        : lattice_(lattice), values_(std::move(values)) {
        if (values_.size() != lattice_.size())
            throw InvalidArgument("ScalarField: value count does not match lattice size");
    }

    static ScalarField constant(const Lattice& lattice, double c) {
        return ScalarField(lattice, std::vector<double>(lattice.size(), c));
    }

    template <typename Fn>  // Fn: Point3 -> double
    static ScalarField from_function(const Lattice& lattice, Fn&& fn) {
        std::vector<double> v(lattice.size());
        for (std::size_t idx = 0; idx < v.size(); ++idx) v[idx] = fn(lattice.point(idx));
        return ScalarField(lattice, std::move(v));
    }

    const Lattice& lattice() const { return lattice_; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    double at(std::size_t idx) const { return values_[idx]; }
    double at(int i, int j, int k) const { return values_[lattice_.index(i, j, k)]; }

    bool contains(const Point3& p) const {
        const double u = (p.x - lattice_.origin.x) / lattice_.spacing.x;
        const double v = (p.y - lattice_.origin.y) / lattice_.spacing.y;
        const double w = (p.z - lattice_.origin.z) / lattice_.spacing.z;
        const double eps = 1e-9;
        return u >= -eps && u <= lattice_.shape[0] - 1 + eps && v >= -eps &&
               v <= lattice_.shape[1] - 1 + eps && w >= -eps && w <= lattice_.shape[2] - 1 + eps;
    }

    double interpolate(const Point3& p) const {
        if (!contains(p))
            throw InvalidArgument("ScalarField::interpolate: point outside field domain");
        return interpolate_unchecked(p);
    }

    double interpolate_unchecked(const Point3& p) const {
        auto axis = [](double coord, int n, int& base, double& frac) {
            if (coord <= 0.0) {
                base = 0;
                frac = 0.0;
            } else if (coord >= n - 1) {
                base = n > 1 ? n - 2 : 0;
                frac = n > 1 ? 1.0 : 0.0;
            } else {
                base = static_cast<int>(coord);
                frac = coord - base;
            }
        };
        int i, j, k;
        double fu, fv, fw;
        axis((p.x - lattice_.origin.x) / lattice_.spacing.x, lattice_.shape[0], i, fu);
        axis((p.y - lattice_.origin.y) / lattice_.spacing.y, lattice_.shape[1], j, fv);
        axis((p.z - lattice_.origin.z) / lattice_.spacing.z, lattice_.shape[2], k, fw);
        const int i1 = lattice_.shape[0] > 1 ? i + 1 : i;
        const int j1 = lattice_.shape[1] > 1 ? j + 1 : j;
        const int k1 = lattice_.shape[2] > 1 ? k + 1 : k;
        const double c000 = at(i, j, k), c100 = at(i1, j, k);
        const double c010 = at(i, j1, k), c110 = at(i1, j1, k);
        const double c001 = at(i, j, k1), c101 = at(i1, j, k1);
        const double c011 = at(i, j1, k1), c111 = at(i1, j1, k1);
        const double c00 = c000 + fu * (c100 - c000);
        const double c10 = c010 + fu * (c110 - c010);
        const double c01 = c001 + fu * (c101 - c001);
        const double c11 = c011 + fu * (c111 - c011);
        const double c0 = c00 + fv * (c10 - c00);
        const double c1 = c01 + fv * (c11 - c01);
        return c0 + fw * (c1 - c0);
    }

private:
    Lattice lattice_;
    std::vector<double> values_;
};

// A subset of a lattice's points.
class Region {
public:
    Region() = default;
    explicit Region(const Lattice& lattice)
        : lattice_(lattice), member_(lattice.size(), 0), count_(0) {}

    static Region all(const Lattice& lattice) {
        Region r(lattice);
        std::fill(r.member_.begin(), r.member_.end(), 1);
        r.count_ = lattice.size();
        return r;
    }

    static Region ball(const Lattice& lattice, const Point3& centre, double radius) {
        Region r(lattice);
        const double r2 = radius * radius;
        for (std::size_t idx = 0; idx < lattice.size(); ++idx)
            if ((lattice.point(idx) - centre).squared_norm() <= r2) r.add(idx);
        return r;
    }

    const Lattice& lattice() const { return lattice_; }

    void add(std::size_t idx) {
        if (!member_[idx]) {
            member_[idx] = 1;
            ++count_;
        }
    }

    bool contains(std::size_t idx) const { return member_[idx] != 0; }

    bool contains_point(const Point3& p) const {
        std::size_t idx;
        return lattice_.nearest(p, idx) && contains(idx);
    }

    std::size_t count() const { return count_; }
    bool empty() const { return count_ == 0; }

    bool subset_of(const Region& other) const {
        if (!(lattice_ == other.lattice_)) return false;
        for (std::size_t idx = 0; idx < member_.size(); ++idx)
            if (member_[idx] && !other.member_[idx]) return false;
        return true;
    }

    bool operator==(const Region& o) const {
        return lattice_ == o.lattice_ && member_ == o.member_;
    }

    template <typename Fn>  // Fn: std::size_t -> void
    void for_each(Fn&& fn) const {
        for (std::size_t idx = 0; idx < member_.size(); ++idx)
            if (member_[idx]) fn(idx);
    }

private:
    Lattice lattice_;
    std::vector<std::uint8_t> member_;
    std::size_t count_ = 0;
};

// Connected component containing `start` within {idx : predicate(idx)},
// 6-connectivity (face neighbours). Requires predicate(start).
template <typename Pred>
Region flood_fill(const Lattice& lattice, std::size_t start, Pred&& predicate) {
    Region region(lattice);
    if (!predicate(start)) return region;
    std::vector<std::size_t> stack{start};
    region.add(start);
    static constexpr int kSteps[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                         {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
    while (!stack.empty()) {
        const std::size_t idx = stack.back();
        stack.pop_back();
        const auto c = lattice.coords(idx);
        for (const auto& s : kSteps) {
            const int i = c[0] + s[0], j = c[1] + s[1], k = c[2] + s[2];
            if (!lattice.in_bounds(i, j, k)) continue;
            const std::size_t n = lattice.index(i, j, k);
            if (region.contains(n) || !predicate(n)) continue;
            region.add(n);
            stack.push_back(n);
        }
    }
    return region;
}

// A geometric mask over continuous space (scattered observation locations
// are tested against this, so membership must be defined off-lattice too).
class Mask {
public:
    static Mask everything() { return Mask(Kind::kEverything); }

    static Mask box(const Point3& lo, const Point3& hi) {
        Mask m(Kind::kBox);
        m.lo_ = lo;
        m.hi_ = hi;
        return m;
    }

    static Mask ball(const Point3& centre, double radius) {
        Mask m(Kind::kBall);
        m.lo_ = centre;
        m.radius_ = radius;
        return m;
    }

    // Membership by nearest lattice point of `region`.
    static Mask from_region(Region region) {
        Mask m(Kind::kRegion);
        m.region_ = std::move(region);
        return m;
    }

    bool contains(const Point3& p) const {
        switch (kind_) {
            case Kind::kEverything:
                return true;
            case Kind::kBox:
                return p.x >= lo_.x && p.x <= hi_.x && p.y >= lo_.y && p.y <= hi_.y &&
                       p.z >= lo_.z && p.z <= hi_.z;
            case Kind::kBall:
                return (p - lo_).squared_norm() <= radius_ * radius_;
            case Kind::kRegion:
                return region_.contains_point(p);
        }
        return false;
    }

private:
    enum class Kind { kEverything, kBox, kBall, kRegion };
    explicit Mask(Kind kind) : kind_(kind) {}

    Kind kind_;
    Point3 lo_, hi_;
    double radius_ = 0.0;
    Region region_;
};

}  // namespace mbfmri
