#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "nifti.hpp"
#include "session.hpp"

namespace mbfmri {

inline constexpr int kSessionSchemaVersion = 1;

namespace detail {

inline nlohmann::json motion_to_json(const RigidMotion& rho) {
    const auto q = rho.quaternion();
    const Point3& t = rho.translation();
    return {{"quaternion", {q[0], q[1], q[2], q[3]}}, {"translation", {t.x, t.y, t.z}}};
}

inline RigidMotion motion_from_json(const nlohmann::json& j, std::size_t index) {
    const std::string where = "motions[" + std::to_string(index) + "]";
    if (!j.contains("quaternion") || !j.contains("translation"))
        throw SidecarMismatch(where, "needs 'quaternion' and 'translation'");
    const auto& q = j.at("quaternion");
    const auto& t = j.at("translation");
    if (q.size() != 4) throw SidecarMismatch(where, "quaternion must have 4 entries");
    if (t.size() != 3) throw SidecarMismatch(where, "translation must have 3 entries");
    try {
        return RigidMotion::from_quaternion(
            q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>(),
            Point3{t[0].get<double>(), t[1].get<double>(), t[2].get<double>()});
    } catch (const InvalidArgument& e) {
        throw SidecarMismatch(where, e.what());
    }
}

inline nlohmann::json affine_to_json(const AffineMap& map) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 3; ++r)
        rows.push_back({map.linear()(r, 0), map.linear()(r, 1), map.linear()(r, 2)});
    const Point3& b = map.offset();
    return {{"matrix", rows}, {"translation", {b.x, b.y, b.z}}};
}

inline AffineMap affine_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.contains("matrix") || !j.contains("translation"))
        throw SidecarMismatch(where, "needs 'matrix' and 'translation'");
    const auto& rows = j.at("matrix");
    if (rows.size() != 3) throw SidecarMismatch(where, "matrix must have 3 rows");
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r) {
        if (rows[r].size() != 3) throw SidecarMismatch(where, "matrix rows must have 3 entries");
        for (int c = 0; c < 3; ++c) m(r, c) = rows[r][c].get<double>();
    }
    const auto& t = j.at("translation");
    if (t.size() != 3) throw SidecarMismatch(where, "translation must have 3 entries");
    try {
        return AffineMap(m, Point3{t[0].get<double>(), t[1].get<double>(), t[2].get<double>()});
    } catch (const InvalidArgument& e) {
        throw SidecarMismatch(where, e.what());
    }
}

inline nlohmann::json design_to_json(const BlockDesign& design) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : design.blocks)
        blocks.push_back({{"type", std::string(1, static_cast<char>(b.type))},
                          {"start", b.start},
                          {"end", b.end}});
    return {{"blocks", blocks}, {"total_duration", design.total_duration}};
}

inline BlockDesign design_from_json(const nlohmann::json& j) {
    if (!j.contains("blocks")) throw SidecarMismatch("design", "needs 'blocks'");
    BlockDesign design;
    for (const auto& b : j.at("blocks")) {
        const std::string type = b.at("type").get<std::string>();
        if (type != "A" && type != "B")
            throw SidecarMismatch("design.blocks", "block type must be 'A' or 'B'");
        design.blocks.push_back(Block{type == "A" ? BlockType::kA : BlockType::kB,
                                      b.at("start").get<double>(),
                                      b.at("end").get<double>()});
    }
    if (j.contains("total_duration"))
        design.total_duration = j.at("total_duration").get<double>();
    else if (!design.blocks.empty())
        design.total_duration = design.blocks.back().end;
    try {
        design.validate();
    } catch (const InvalidArgument& e) {
        throw SidecarMismatch("design", e.what());
    }
    return design;
}

}  // namespace detail

inline nlohmann::json sidecar_json(const ScanSession& session) {
    nlohmann::json j;
    j["schema_version"] = kSessionSchemaVersion;
    j["subject_id"] = session.subject_id;
    j["grey_scale_note"] = session.grey_scale_note;
    nlohmann::json motions = nlohmann::json::array();
    for (const auto& rho : session.motions) motions.push_back(detail::motion_to_json(rho));
    j["motions"] = std::move(motions);
    j["slice_times"] = session.grid.slice_times;
    j["slice_order"] = session.grid.slice_order;
    j["design"] = detail::design_to_json(session.design);
    j["psi"] = detail::affine_to_json(session.psi);
    nlohmann::json excluded = nlohmann::json::array();
    for (std::size_t c = 0; c < session.cycle_excluded.size(); ++c)
        if (session.cycle_excluded[c]) excluded.push_back(c);
    j["excluded_cycles"] = std::move(excluded);
    return j;
}

// Writes `dir/vol.nii` (float32) and `dir/sidecar.json`. Values are stored
// as-is with slope/inter left at identity, so payloads representable in
// single precision round-trip exactly.
inline void write_session_bundle(const ScanSession& session, const std::string& dir) {
    session.validate();
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    NiftiVolume vol;
    vol.dim = {session.grid.nx, session.grid.ny, session.grid.slice_count,
               static_cast<int>(session.motions.size())};
    vol.pixdim = {session.grid.dx, session.grid.dy, session.grid.dz,
                  session.grid.cycle_duration};
    vol.datatype = kNiftiFloat32;
    vol.data = session.values;  // value_index layout == NIfTI x-fastest layout
    write_nifti((fs::path(dir) / "vol.nii").string(), vol);

    std::ofstream out(fs::path(dir) / "sidecar.json");
    if (!out) throw InvalidArgument("cannot write sidecar in '" + dir + "'");
    out << sidecar_json(session).dump(2) << '\n';
}

inline ScanSession read_session(const std::string& volume_path,
                                const std::string& sidecar_path) {
    NiftiVolume vol = read_nifti(volume_path);

    std::ifstream in(sidecar_path);
    if (!in) throw SidecarMismatch("file", "cannot open '" + sidecar_path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SidecarMismatch("json", e.what());
    }

    ScanSession session;
    session.grid.nx = vol.dim[0];
    session.grid.ny = vol.dim[1];
    session.grid.slice_count = vol.dim[2];
    session.grid.dx = vol.pixdim[0];
    session.grid.dy = vol.pixdim[1];
    session.grid.dz = vol.pixdim[2];
    session.grid.cycle_duration = vol.pixdim[3];
    const int n_cycles = vol.dim[3];

    if (!j.contains("motions")) throw SidecarMismatch("motions", "missing");
    const auto& motions = j.at("motions");
    if (static_cast<int>(motions.size()) != n_cycles)
        throw SidecarMismatch("motions", "sidecar has " + std::to_string(motions.size()) +
                                             " motions for " + std::to_string(n_cycles) +
                                             " cycles");
    for (std::size_t c = 0; c < motions.size(); ++c)
        session.motions.push_back(detail::motion_from_json(motions[c], c));

    if (!j.contains("slice_times")) throw SidecarMismatch("slice_times", "missing");
    session.grid.slice_times = j.at("slice_times").get<std::vector<double>>();
    if (static_cast<int>(session.grid.slice_times.size()) != session.grid.slice_count)
        throw SidecarMismatch("slice_times",
                              "sidecar has " + std::to_string(session.grid.slice_times.size()) +
                                  " slice times for " + std::to_string(session.grid.slice_count) +
                                  " slices");
    if (j.contains("slice_order")) {
        session.grid.slice_order = j.at("slice_order").get<std::vector<int>>();
        if (session.grid.slice_order.size() != session.grid.slice_times.size())
            throw SidecarMismatch("slice_order", "length differs from slice_times");
    } else {
        session.grid.slice_order.resize(session.grid.slice_times.size());
        for (std::size_t s = 0; s < session.grid.slice_order.size(); ++s)
            session.grid.slice_order[s] = static_cast<int>(s);
    }
    try {
        session.grid.validate();
    } catch (const InvalidArgument& e) {
        throw SidecarMismatch("slice_times", e.what());
    }

    if (!j.contains("design")) throw SidecarMismatch("design", "missing");
    session.design = detail::design_from_json(j.at("design"));
    if (!j.contains("psi")) throw SidecarMismatch("psi", "missing");
    session.psi = detail::affine_from_json(j.at("psi"), "psi");

    session.subject_id = j.value("subject_id", std::string("unknown"));
    session.grey_scale_note = j.value("grey_scale_note", 1.0);

    session.values = std::move(vol.data);
    session.cycle_excluded.assign(n_cycles, false);
    if (j.contains("excluded_cycles"))
        for (const auto& c : j.at("excluded_cycles")) {
            const int idx = c.get<int>();
            if (idx < 0 || idx >= n_cycles)
                throw SidecarMismatch("excluded_cycles", "cycle index out of range");
            session.cycle_excluded[idx] = true;
        }

    session.validate();
    return session;
}

inline ScanSession read_session_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    return read_session((fs::path(dir) / "vol.nii").string(),
                        (fs::path(dir) / "sidecar.json").string());
}

}  // namespace mbfmri
