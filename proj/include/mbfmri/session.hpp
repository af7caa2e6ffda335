#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "design.hpp"
#include "error.hpp"
#include "geometry.hpp"

namespace mbfmri {

// One FMRI session: the 4D value block in scanner layout (x fastest, then
// y, slice, cycle), one rigid motion per scan cycle, the block design, and
// the affine ψ mapping standard space into this subject's space. Values are
// held as doubles regardless of on-disk storage type.
struct ScanSession {
    AcquisitionGrid grid;
    BlockDesign design;
    AffineMap psi;                           // standard -> subject space
    std::vector<RigidMotion> motions;        // per cycle
    std::vector<double> values;              // nx*ny*slices*cycles
    std::vector<std::uint8_t> cycle_excluded;  // outlier screen; empty = none
    std::string subject_id = "sim";
    double grey_scale_note = 1.0;            // informational only

    int n_cycles() const { return static_cast<int>(motions.size()); }

    std::size_t value_index(int i, int j, int k, int cycle) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(grid.nx) *
                   (static_cast<std::size_t>(j) +
                    static_cast<std::size_t>(grid.ny) *
                        (static_cast<std::size_t>(k) +
                         static_cast<std::size_t>(grid.slice_count) * cycle));
    }

    double value(int i, int j, int k, int cycle) const {
        return values[value_index(i, j, k, cycle)];
    }

    double cycle_start(int cycle) const { return cycle * grid.cycle_duration; }

    double acquisition_time(int cycle, int slice) const {
        return cycle_start(cycle) + grid.slice_times[slice];
    }

    double duration() const { return n_cycles() * grid.cycle_duration; }

    bool excluded(int cycle) const {
        return !cycle_excluded.empty() && cycle_excluded[cycle] != 0;
    }

    void validate() const {
        grid.validate();
        design.validate();
        const std::size_t expect = static_cast<std::size_t>(grid.nx) * grid.ny *
                                   grid.slice_count * motions.size();
        if (values.size() != expect)
            throw InvalidArgument("ScanSession: value count " + std::to_string(values.size()) +
                                  " does not match grid x cycles " + std::to_string(expect));
        if (!cycle_excluded.empty() && cycle_excluded.size() != motions.size())
            throw InvalidArgument("ScanSession: cycle_excluded length != cycle count");
        for (const double v : values)
            if (!std::isfinite(v)) throw InvalidArgument("ScanSession: non-finite value");
    }
};

// Scalar size of a motion for outlier screening: translation plus the arc
// a point at ref_radius travels under the rotation.
inline double motion_magnitude(const RigidMotion& rho, double ref_radius = 50.0) {
    const double tr = rho.rotation().trace();
    const double c = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
    const double angle = std::acos(c);
    return rho.translation().norm() + ref_radius * angle;
}

inline std::vector<double> motion_magnitudes(const ScanSession& session,
                                             double ref_radius = 50.0) {
    std::vector<double> out;
    out.reserve(session.motions.size());
    for (const auto& m : session.motions) out.push_back(motion_magnitude(m, ref_radius));
    return out;
}

}  // namespace mbfmri
