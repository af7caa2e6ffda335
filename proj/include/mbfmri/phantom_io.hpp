#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "error.hpp"
#include "phantom.hpp"
#include "session_io.hpp"

namespace mbfmri {

inline constexpr int kPhantomSchemaVersion = 1;

namespace detail {

inline nlohmann::json point_to_json(const Point3& p) { return {p.x, p.y, p.z}; }

inline Point3 point_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3)
        throw InvalidArgument("phantom spec: '" + where + "' must be a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json analytic_to_json(const AnalyticField& f) {
    switch (f.kind()) {
        case AnalyticField::Kind::kConstant:
            return {{"kind", "constant"}, {"value", f.amplitude()}};
        case AnalyticField::Kind::kSphere:
            return {{"kind", "sphere"},
                    {"centre", point_to_json(f.centre())},
                    {"radius", f.radius()},
                    {"amplitude", f.amplitude()},
                    {"edge_width", f.edge_width()}};
        case AnalyticField::Kind::kStepX:
            return {{"kind", "step_x"},
                    {"x0", f.x0()},
                    {"low", f.low()},
                    {"high", f.amplitude()}};
        case AnalyticField::Kind::kLinearX:
            return {{"kind", "linear_x"}, {"intercept", f.low()}, {"slope", f.amplitude()}};
        case AnalyticField::Kind::kBump:
            return {{"kind", "bump"},
                    {"base", f.low()},
                    {"centre", point_to_json(f.centre())},
                    {"radius", f.radius()},
                    {"amplitude", f.amplitude()}};
    }
    throw InvalidArgument("phantom spec: unknown analytic field kind");
}

inline AnalyticField analytic_from_json(const nlohmann::json& j, const std::string& where) {
    if (j.is_number()) return AnalyticField::constant(j.get<double>());
    const std::string kind = j.value("kind", std::string("constant"));
    if (kind == "constant") return AnalyticField::constant(j.value("value", 0.0));
    if (kind == "sphere")
        return AnalyticField::sphere(point_from_json(j.at("centre"), where + ".centre"),
                                     j.at("radius").get<double>(),
                                     j.at("amplitude").get<double>(),
                                     j.value("edge_width", 0.0));
    if (kind == "step_x")
        return AnalyticField::step_x(j.at("x0").get<double>(), j.at("low").get<double>(),
                                     j.at("high").get<double>());
    if (kind == "linear_x")
        return AnalyticField::linear_x(j.value("intercept", 0.0), j.at("slope").get<double>());
    if (kind == "bump")
        return AnalyticField::bump(j.value("base", 0.0),
                                   point_from_json(j.at("centre"), where + ".centre"),
                                   j.at("radius").get<double>(),
                                   j.at("amplitude").get<double>());
    throw InvalidArgument("phantom spec: unknown field kind '" + kind + "' in " + where);
}

inline nlohmann::json drift_to_json(const DriftSpec& d) {
    switch (d.kind) {
        case DriftSpec::Kind::kNone:
            return {{"kind", "none"}};
        case DriftSpec::Kind::kPerBlock:
            return {{"kind", "per_block"}, {"offsets", d.block_offsets}};
        case DriftSpec::Kind::kLinear:
            return {{"kind", "linear"}, {"slope", d.slope}};
        case DriftSpec::Kind::kSinusoid:
            return {{"kind", "sinusoid"}, {"amplitude", d.amplitude}, {"period", d.period}};
    }
    throw InvalidArgument("phantom spec: unknown drift kind");
}

inline DriftSpec drift_from_json(const nlohmann::json& j) {
    const std::string kind = j.value("kind", std::string("none"));
    if (kind == "none") return DriftSpec::none();
    if (kind == "per_block")
        return DriftSpec::per_block(j.at("offsets").get<std::vector<double>>());
    if (kind == "linear") return DriftSpec::linear(j.at("slope").get<double>());
    if (kind == "sinusoid")
        return DriftSpec::sinusoid(j.at("amplitude").get<double>(),
                                   j.value("period", 60.0));
    throw InvalidArgument("phantom spec: unknown drift kind '" + kind + "'");
}

inline nlohmann::json motion_spec_to_json(const MotionSpec& m) {
    switch (m.kind) {
        case MotionSpec::Kind::kStill:
            return {{"kind", "still"}};
        case MotionSpec::Kind::kSinusoidalTranslation:
            return {{"kind", "sinusoidal_translation"},
                    {"amplitude", m.amplitude},
                    {"period", m.period},
                    {"axis", point_to_json(m.axis)}};
        case MotionSpec::Kind::kScripted: {
            nlohmann::json list = nlohmann::json::array();
            for (const auto& rho : m.scripted) list.push_back(motion_to_json(rho));
            return {{"kind", "scripted"}, {"motions", list}};
        }
    }
    throw InvalidArgument("phantom spec: unknown motion kind");
}

inline MotionSpec motion_spec_from_json(const nlohmann::json& j) {
    const std::string kind = j.value("kind", std::string("still"));
    if (kind == "still") return MotionSpec::still();
    if (kind == "sinusoidal_translation") {
        Point3 axis{1.0, 0.0, 0.0};
        if (j.contains("axis")) axis = point_from_json(j.at("axis"), "motion.axis");
        return MotionSpec::sinusoidal_translation(j.at("amplitude").get<double>(),
                                                  j.value("period", 60.0), axis);
    }
    if (kind == "scripted") {
        std::vector<RigidMotion> motions;
        const auto& list = j.at("motions");
        for (std::size_t c = 0; c < list.size(); ++c)
            motions.push_back(motion_from_json(list[c], c));
        return MotionSpec::from_list(std::move(motions));
    }
    throw InvalidArgument("phantom spec: unknown motion kind '" + kind + "'");
}

}  // namespace detail

inline nlohmann::json phantom_spec_to_json(const PhantomSpec& spec) {
    nlohmann::json j;
    j["schema_version"] = kPhantomSchemaVersion;
    j["alpha"] = detail::analytic_to_json(spec.alpha);
    j["beta"] = detail::analytic_to_json(spec.beta);
    j["drift"] = detail::drift_to_json(spec.drift);
    j["noise"] = {{"sigma", spec.noise_sigma},
                  {"model", spec.noise_model == PhantomSpec::NoiseModel::kIidNormal ? "iid"
                                                                                    : "ar1"},
                  {"rho", spec.ar1_rho}};
    j["motion"] = detail::motion_spec_to_json(spec.motion);
    j["grid"] = {{"nx", spec.grid.nx},
                 {"ny", spec.grid.ny},
                 {"slices", spec.grid.slice_count},
                 {"voxel", {spec.grid.dx, spec.grid.dy, spec.grid.dz}},
                 {"tr", spec.grid.cycle_duration},
                 {"slice_order", spec.grid.slice_order},
                 {"slice_times", spec.grid.slice_times}};
    j["design"] = detail::design_to_json(spec.design);
    j["psi"] = detail::affine_to_json(spec.psi);
    j["grey_scale"] = spec.grey_scale;
    j["n_cycles"] = spec.n_cycles;
    j["seed"] = spec.seed;
    return j;
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    const int version = j.value("schema_version", -1);
    if (version != kPhantomSchemaVersion)
        throw InvalidArgument("phantom spec: schema_version " + std::to_string(version) +
                              " unsupported (expected " +
                              std::to_string(kPhantomSchemaVersion) + ")");
    PhantomSpec spec;
    if (j.contains("alpha")) spec.alpha = detail::analytic_from_json(j.at("alpha"), "alpha");
    if (j.contains("beta")) spec.beta = detail::analytic_from_json(j.at("beta"), "beta");
    if (j.contains("drift")) spec.drift = detail::drift_from_json(j.at("drift"));
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        spec.noise_sigma = n.value("sigma", spec.noise_sigma);
        const std::string model = n.value("model", std::string("iid"));
        if (model == "iid")
            spec.noise_model = PhantomSpec::NoiseModel::kIidNormal;
        else if (model == "ar1")
            spec.noise_model = PhantomSpec::NoiseModel::kAr1;
        else
            throw InvalidArgument("phantom spec: unknown noise model '" + model + "'");
        spec.ar1_rho = n.value("rho", spec.ar1_rho);
    }
    if (j.contains("motion")) spec.motion = detail::motion_spec_from_json(j.at("motion"));

    if (!j.contains("grid")) throw InvalidArgument("phantom spec: missing 'grid'");
    {
        const auto& g = j.at("grid");
        const auto voxel = detail::point_from_json(g.at("voxel"), "grid.voxel");
        spec.grid = AcquisitionGrid::sequential(g.at("nx").get<int>(), g.at("ny").get<int>(),
                                                g.at("slices").get<int>(), voxel.x, voxel.y,
                                                voxel.z, g.at("tr").get<double>());
        if (g.contains("slice_order"))
            spec.grid.slice_order = g.at("slice_order").get<std::vector<int>>();
        if (g.contains("slice_times"))
            spec.grid.slice_times = g.at("slice_times").get<std::vector<double>>();
        spec.grid.validate();
    }

    if (!j.contains("design")) throw InvalidArgument("phantom spec: missing 'design'");
    {
        const auto& d = j.at("design");
        if (d.contains("blocks")) {
            try {
                spec.design = detail::design_from_json(d);
            } catch (const SidecarMismatch& e) {
                throw InvalidArgument(std::string("phantom spec: ") + e.what());
            }
        } else {
            const int per_type = d.at("per_type").get<int>();
            const double block_duration = d.at("block_duration").get<double>();
            const std::string order = d.value("order", std::string("pseudo_randomized"));
            if (order == "alternating")
                spec.design = BlockDesign::alternating(per_type, block_duration);
            else if (order == "pseudo_randomized")
                spec.design = BlockDesign::pseudo_randomized(
                    per_type, block_duration,
                    d.value("seed", static_cast<std::uint64_t>(0xb10c5)));
            else
                throw InvalidArgument("phantom spec: unknown design order '" + order + "'");
        }
    }

    if (j.contains("psi")) {
        try {
            spec.psi = detail::affine_from_json(j.at("psi"), "psi");
        } catch (const SidecarMismatch& e) {
            throw InvalidArgument(std::string("phantom spec: ") + e.what());
        }
    }
    spec.grey_scale = j.value("grey_scale", spec.grey_scale);
    spec.n_cycles = j.value("n_cycles", spec.n_cycles);
    spec.seed = j.value("seed", spec.seed);
    spec.validate();
    return spec;
}

inline PhantomSpec load_phantom_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open phantom spec '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("phantom spec parse error: ") + e.what());
    }
    return phantom_spec_from_json(j);
}

// What `phantom --out` records next to the session bundle: the generating
// fields in standard-space terms plus the export scale, everything a
// downstream check needs to score a fit against the truth.
inline nlohmann::json ground_truth_json(const PhantomSpec& spec, const GroundTruth& truth) {
    nlohmann::json j;
    j["schema_version"] = kPhantomSchemaVersion;
    j["alpha"] = detail::analytic_to_json(truth.alpha);
    j["beta"] = detail::analytic_to_json(truth.beta);
    j["grey_scale"] = truth.grey_scale;
    j["psi"] = detail::affine_to_json(spec.psi);
    j["seed"] = spec.seed;
    j["n_cycles"] = spec.cycles();
    return j;
}

}  // namespace mbfmri
