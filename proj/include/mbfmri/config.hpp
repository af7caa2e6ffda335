#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "design.hpp"
#include "error.hpp"
#include "field_io.hpp"
#include "fit.hpp"
#include "geometry.hpp"
#include "meta.hpp"
#include "weights.hpp"

namespace mbfmri {

inline constexpr int kRunConfigSchemaVersion = 1;

// One config drives the whole pipeline: kernel/bandwidth for the spatial
// weights, the temporal model, the evaluation lattice (absent = derive from
// the session grid), variance and heterogeneity estimators, screening and
// execution knobs.
struct RunConfig {
    std::string kernel = "gaussian";  // gaussian | epanechnikov | tricube
    double fwhm_mm = 8.0;
    double cutoff_sigmas = 3.0;  // hard cutoff at this multiple of the bandwidth
    ModelSpec model = ModelSpec::task_linear_time();
    std::optional<Lattice> lattice;  // nullopt: lattice of the session's voxel grid
    FitConfig::Variance variance = FitConfig::Variance::kSandwich;
    MetaConfig::Heterogeneity heterogeneity = MetaConfig::Heterogeneity::kHedges;
    bool kh_truncate = false;
    double grubbs_alpha = 0.0;  // 0 disables the motion outlier screen
    unsigned threads = 1;
    std::uint64_t seed = 20260819;

    void validate() const {
        if (!(fwhm_mm > 0.0)) throw InvalidArgument("config: fwhm_mm must be > 0");
        if (!(cutoff_sigmas > 0.0)) throw InvalidArgument("config: cutoff_sigmas must be > 0");
        if (grubbs_alpha < 0.0 || grubbs_alpha >= 1.0)
            throw InvalidArgument("config: grubbs_alpha must be in [0, 1)");
        if (kernel != "gaussian" && kernel != "epanechnikov" && kernel != "tricube")
            throw InvalidArgument("config: unknown kernel '" + kernel + "'");
    }

    // Bandwidth h such that the kernel's weight falls to half its centre
    // value at distance fwhm_mm / 2. For the gaussian this is the usual
    // FWHM = 2.3548 sigma; compact kernels solve phi(u_half) = phi(0)/2.
    double bandwidth() const {
        if (kernel == "gaussian") return fwhm_to_sigma(fwhm_mm);
        if (kernel == "epanechnikov") return fwhm_mm / (2.0 * std::sqrt(0.5));
        // tricube: (1 - u^3)^3 = 1/2
        return fwhm_mm / (2.0 * std::cbrt(1.0 - std::exp2(-1.0 / 3.0)));
    }

    Kernel make_kernel() const {
        if (kernel == "gaussian") return Kernel::gaussian();
        if (kernel == "epanechnikov") return Kernel::epanechnikov();
        return Kernel::tricube();
    }

    WeightScheme make_scheme(const Mask& mask = Mask::everything()) const {
        validate();
        WeightScheme scheme{make_kernel(), DivergenceMap::scaled_euclidean(bandwidth()),
                            cutoff_sigmas * bandwidth(), mask};
        return scheme;
    }
};

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["schema_version"] = kRunConfigSchemaVersion;
    j["kernel"] = cfg.kernel;
    j["fwhm_mm"] = cfg.fwhm_mm;
    j["cutoff_sigmas"] = cfg.cutoff_sigmas;
    switch (cfg.model.variant) {
        case ModelSpec::Variant::kNested:
            j["model"] = "nested";
            break;
        case ModelSpec::Variant::kTaskLinearTime:
            j["model"] = "task_linear_time";
            break;
        case ModelSpec::Variant::kTaskBspline:
            j["model"] = "task_bspline";
            j["bspline_df"] = cfg.model.bspline_df;
            break;
    }
    if (cfg.lattice) j["lattice"] = lattice_to_json(*cfg.lattice);
    j["variance"] =
        cfg.variance == FitConfig::Variance::kSandwich ? "sandwich" : "classical";
    switch (cfg.heterogeneity) {
        case MetaConfig::Heterogeneity::kHedges:
            j["heterogeneity"] = "hedges";
            break;
        case MetaConfig::Heterogeneity::kDerSimonianLaird:
            j["heterogeneity"] = "dl";
            break;
        case MetaConfig::Heterogeneity::kPauleMandel:
            j["heterogeneity"] = "pm";
            break;
    }
    j["kh_truncate"] = cfg.kh_truncate;
    j["grubbs_alpha"] = cfg.grubbs_alpha;
    j["threads"] = cfg.threads;
    j["seed"] = cfg.seed;
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    const int version = j.value("schema_version", -1);
    if (version != kRunConfigSchemaVersion)
        throw InvalidArgument("config: schema_version " + std::to_string(version) +
                              " unsupported (expected " +
                              std::to_string(kRunConfigSchemaVersion) + ")");
    cfg.kernel = j.value("kernel", cfg.kernel);
    cfg.fwhm_mm = j.value("fwhm_mm", cfg.fwhm_mm);
    cfg.cutoff_sigmas = j.value("cutoff_sigmas", cfg.cutoff_sigmas);
    if (j.contains("model")) {
        const std::string m = j.at("model").get<std::string>();
        if (m == "nested")
            cfg.model = ModelSpec::nested();
        else if (m == "task_linear_time")
            cfg.model = ModelSpec::task_linear_time();
        else if (m == "task_bspline")
            cfg.model = ModelSpec::task_bspline(j.value("bspline_df", 8));
        else
            throw InvalidArgument("config: unknown model '" + m + "'");
    }
    if (j.contains("lattice")) cfg.lattice = lattice_from_json(j.at("lattice"));
    if (j.contains("variance")) {
        const std::string v = j.at("variance").get<std::string>();
        if (v == "sandwich")
            cfg.variance = FitConfig::Variance::kSandwich;
        else if (v == "classical")
            cfg.variance = FitConfig::Variance::kClassical;
        else
            throw InvalidArgument("config: unknown variance mode '" + v + "'");
    }
    if (j.contains("heterogeneity")) {
        const std::string h = j.at("heterogeneity").get<std::string>();
        if (h == "hedges")
            cfg.heterogeneity = MetaConfig::Heterogeneity::kHedges;
        else if (h == "dl")
            cfg.heterogeneity = MetaConfig::Heterogeneity::kDerSimonianLaird;
        else if (h == "pm")
            cfg.heterogeneity = MetaConfig::Heterogeneity::kPauleMandel;
        else
            throw InvalidArgument("config: unknown heterogeneity estimator '" + h + "'");
    }
    cfg.kh_truncate = j.value("kh_truncate", cfg.kh_truncate);
    cfg.grubbs_alpha = j.value("grubbs_alpha", cfg.grubbs_alpha);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("config parse error: ") + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace mbfmri
