#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "fit.hpp"
#include "lattice.hpp"
#include "meta.hpp"
#include "nifti.hpp"

namespace mbfmri {

inline constexpr int kFieldSchemaVersion = 1;

inline nlohmann::json lattice_to_json(const Lattice& lattice) {
    return {{"origin", {lattice.origin.x, lattice.origin.y, lattice.origin.z}},
            {"spacing", {lattice.spacing.x, lattice.spacing.y, lattice.spacing.z}},
            {"shape", {lattice.shape[0], lattice.shape[1], lattice.shape[2]}}};
}

inline Lattice lattice_from_json(const nlohmann::json& j) {
    for (const char* key : {"origin", "spacing", "shape"})
        if (!j.contains(key) || j.at(key).size() != 3)
            throw InvalidArgument(std::string("lattice spec needs 3-vector '") + key + "'");
    const auto& o = j.at("origin");
    const auto& s = j.at("spacing");
    const auto& n = j.at("shape");
    return Lattice{Point3{o[0].get<double>(), o[1].get<double>(), o[2].get<double>()},
                   Point3{s[0].get<double>(), s[1].get<double>(), s[2].get<double>()},
                   {n[0].get<int>(), n[1].get<int>(), n[2].get<int>()}};
}

namespace detail {

// %.17g: shortest text that round-trips an IEEE double.
inline std::string full_precision(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_parameter_volume(const std::filesystem::path& path, const Lattice& lattice,
                                   const std::vector<double>& values) {
    NiftiVolume vol;
    vol.dim = {lattice.shape[0], lattice.shape[1], lattice.shape[2], 1};
    vol.pixdim = {lattice.spacing.x, lattice.spacing.y, lattice.spacing.z, 0.0};
    vol.offset = {lattice.origin.x, lattice.origin.y, lattice.origin.z};
    vol.datatype = kNiftiFloat32;
    vol.data = values;
    write_nifti(path.string(), vol);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

}  // namespace detail

inline FitStatus fit_status_from_string(const std::string& s) {
    if (s == "ok") return FitStatus::kOk;
    if (s == "outside_mask") return FitStatus::kOutsideMask;
    if (s == "underdetermined") return FitStatus::kUnderdetermined;
    if (s == "rank_deficient") return FitStatus::kRankDeficient;
    if (s == "failed") return FitStatus::kFailed;
    throw InvalidArgument("unknown fit status '" + s + "'");
}

// Writes `dir/field.json`, `dir/field.csv` (full-precision long format) and
// one float32 NIfTI volume per parameter. The CSV carries one row per
// in-mask lattice point in index order and is the lossless carrier; the
// volumes are for external viewers.
inline void write_param_field(const ParamField& field, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const Lattice& lat = field.lattice;
    const std::size_t n = lat.size();
    if (field.fits.size() != n)
        throw InvalidArgument("field has " + std::to_string(field.fits.size()) +
                              " fits for a lattice of " + std::to_string(n) + " points");

    const double nan = std::numeric_limits<double>::quiet_NaN();
    const std::vector<std::string> params = {"alpha", "beta",  "sigma2", "var_beta",
                                             "t",     "dw",    "n_obs"};
    std::vector<std::vector<double>> volumes(params.size(),
                                             std::vector<double>(n, nan));

    std::ofstream csv(fs::path(dir) / "field.csv");
    if (!csv) throw InvalidArgument("cannot write field.csv in '" + dir + "'");
    csv << "x,y,z,alpha,beta,sigma2,var_beta,t,dw,n_obs,status\n";
    std::size_t in_mask = 0;
    for (std::size_t idx = 0; idx < n; ++idx) {
        const PointFit& fit = field.fits[idx];
        if (fit.status == FitStatus::kOutsideMask) continue;
        ++in_mask;
        const Point3 p = lat.point(idx);
        const double alpha = fit.coefficients.size() > 0 ? fit.coefficients[0] : nan;
        const double row[7] = {alpha,
                               fit.ok() ? fit.beta_hat : nan,
                               fit.ok() ? fit.sigma2_hat : nan,
                               fit.ok() ? fit.var_beta_hat : nan,
                               fit.t_value,
                               fit.dw,
                               static_cast<double>(fit.n_obs)};
        for (std::size_t c = 0; c < params.size(); ++c) volumes[c][idx] = row[c];
        csv << detail::full_precision(p.x) << ',' << detail::full_precision(p.y) << ','
            << detail::full_precision(p.z);
        for (double v : row) csv << ',' << detail::full_precision(v);
        csv << ',' << to_string(fit.status) << '\n';
    }
    if (!csv) throw InvalidArgument("write to field.csv failed");
    csv.close();

    nlohmann::json manifest;
    manifest["schema_version"] = kFieldSchemaVersion;
    manifest["kind"] = "point_fit";
    manifest["lattice"] = lattice_to_json(lat);
    manifest["csv"] = "field.csv";
    manifest["in_mask"] = in_mask;
    nlohmann::json vols = nlohmann::json::object();
    for (std::size_t c = 0; c < params.size(); ++c) {
        const std::string file = params[c] + ".nii";
        detail::write_parameter_volume(fs::path(dir) / file, lat, volumes[c]);
        vols[params[c]] = file;
    }
    manifest["volumes"] = std::move(vols);
    std::ofstream mf(fs::path(dir) / "field.json");
    if (!mf) throw InvalidArgument("cannot write field.json in '" + dir + "'");
    mf << manifest.dump(2) << '\n';
}

// A field read back from disk: per-parameter scalar fields over the saved
// lattice, NaN outside the saved mask.
struct LoadedField {
    Lattice lattice;
    Region mask;
    std::vector<FitStatus> status;  // per lattice point
    ScalarField alpha, beta, sigma2, var_beta, t, dw, n_obs;

    bool ok_at(std::size_t idx) const { return status[idx] == FitStatus::kOk; }
};

inline LoadedField read_param_field(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "field.json");
    if (!mf) throw InvalidArgument("cannot open field.json in '" + dir + "'");
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("field.json parse error: ") + e.what());
    }
    if (manifest.value("schema_version", 0) != kFieldSchemaVersion)
        throw InvalidArgument("field.json: unsupported schema_version");

    LoadedField out;
    out.lattice = lattice_from_json(manifest.at("lattice"));
    const Lattice& lat = out.lattice;
    out.mask = Region(lat);
    out.status.assign(lat.size(), FitStatus::kOutsideMask);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (ScalarField* f : {&out.alpha, &out.beta, &out.sigma2, &out.var_beta, &out.t,
                           &out.dw, &out.n_obs})
        *f = ScalarField::constant(lat, nan);

    const std::string csv_name = manifest.value("csv", std::string("field.csv"));
    std::ifstream csv(fs::path(dir) / csv_name);
    if (!csv) throw InvalidArgument("cannot open " + csv_name + " in '" + dir + "'");
    std::string line;
    if (!std::getline(csv, line)) throw InvalidArgument(csv_name + ": empty file");
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() < 11)
            throw InvalidArgument(csv_name + ": row with " + std::to_string(cells.size()) +
                                  " columns (need 11)");
        const Point3 p{std::stod(cells[0]), std::stod(cells[1]), std::stod(cells[2])};
        std::size_t idx;
        if (!lat.nearest(p, idx))
            throw InvalidArgument(csv_name + ": row coordinate outside the saved lattice");
        if ((lat.point(idx) - p).norm() > 1e-6)
            throw InvalidArgument(csv_name + ": row coordinate is not a lattice point");
        out.mask.add(idx);
        out.status[idx] = fit_status_from_string(cells[10]);
        out.alpha.values()[idx] = std::stod(cells[3]);
        out.beta.values()[idx] = std::stod(cells[4]);
        out.sigma2.values()[idx] = std::stod(cells[5]);
        out.var_beta.values()[idx] = std::stod(cells[6]);
        out.t.values()[idx] = std::stod(cells[7]);
        out.dw.values()[idx] = std::stod(cells[8]);
        out.n_obs.values()[idx] = std::stod(cells[9]);
        ++rows;
    }
    if (rows == 0) throw InvalidArgument(csv_name + ": no data rows");
    return out;
}

// Writes a loaded (or derived — e.g. normalized) field back out in the same
// layout write_param_field produces, so downstream steps can ingest it.
inline void write_loaded_field(const LoadedField& field, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const Lattice& lat = field.lattice;
    const std::vector<std::string> params = {"alpha", "beta",  "sigma2", "var_beta",
                                             "t",     "dw",    "n_obs"};
    const ScalarField* sources[7] = {&field.alpha, &field.beta,     &field.sigma2,
                                     &field.var_beta, &field.t,     &field.dw,
                                     &field.n_obs};

    std::ofstream csv(fs::path(dir) / "field.csv");
    if (!csv) throw InvalidArgument("cannot write field.csv in '" + dir + "'");
    csv << "x,y,z,alpha,beta,sigma2,var_beta,t,dw,n_obs,status\n";
    std::size_t in_mask = 0;
    for (std::size_t idx = 0; idx < lat.size(); ++idx) {
        if (!field.mask.contains(idx)) continue;
        ++in_mask;
        const Point3 p = lat.point(idx);
        csv << detail::full_precision(p.x) << ',' << detail::full_precision(p.y) << ','
            << detail::full_precision(p.z);
        for (const ScalarField* f : sources) csv << ',' << detail::full_precision(f->at(idx));
        csv << ',' << to_string(field.status[idx]) << '\n';
    }
    if (!csv) throw InvalidArgument("write to field.csv failed");
    csv.close();

    nlohmann::json manifest;
    manifest["schema_version"] = kFieldSchemaVersion;
    manifest["kind"] = "point_fit";
    manifest["lattice"] = lattice_to_json(lat);
    manifest["csv"] = "field.csv";
    manifest["in_mask"] = in_mask;
    nlohmann::json vols = nlohmann::json::object();
    for (std::size_t c = 0; c < params.size(); ++c) {
        const std::string file = params[c] + ".nii";
        detail::write_parameter_volume(fs::path(dir) / file, lat, sources[c]->values());
        vols[params[c]] = file;
    }
    manifest["volumes"] = std::move(vols);
    std::ofstream mf(fs::path(dir) / "field.json");
    if (!mf) throw InvalidArgument("cannot write field.json in '" + dir + "'");
    mf << manifest.dump(2) << '\n';
}

// Meta field export: same layout as a ParamField plus heterogeneity and
// KH columns (tau2, q, t_adjusted, p).
inline void write_meta_field(const MetaField& field, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const Lattice& lat = field.lattice;
    const std::size_t n = lat.size();
    if (field.points.size() != n)
        throw InvalidArgument("meta field size does not match its lattice");

    const double nan = std::numeric_limits<double>::quiet_NaN();
    const std::vector<std::string> params = {"delta", "se_adjusted", "tau2", "q",
                                             "t_adjusted", "p"};
    std::vector<std::vector<double>> volumes(params.size(),
                                             std::vector<double>(n, nan));

    std::ofstream csv(fs::path(dir) / "field.csv");
    if (!csv) throw InvalidArgument("cannot write field.csv in '" + dir + "'");
    csv << "x,y,z,alpha,beta,sigma2,var_beta,t,dw,n_obs,status,tau2,q,t_adjusted,p\n";
    std::size_t in_mask = 0;
    for (std::size_t idx = 0; idx < n; ++idx) {
        const MetaFieldPoint& pt = field.points[idx];
        if (!field.mask.contains(idx)) continue;
        ++in_mask;
        const Point3 p = lat.point(idx);
        double alpha = nan, delta = nan, tau2 = nan, q = nan, se = nan, t_adj = nan,
               pval = nan, k = nan;
        if (pt.ok) {
            const MetaFit& m = pt.fit;
            alpha = m.gamma_hat;
            delta = m.effect_index == 0 ? m.gamma_hat
                                        : m.delta_hat[static_cast<std::size_t>(m.effect_index) - 1];
            tau2 = m.tau2;
            q = m.q;
            se = m.se_adjusted;
            t_adj = m.t_adjusted;
            pval = m.p_value;
            k = m.df + 1.0 + static_cast<double>(m.delta_hat.size());
        }
        const double extra[6] = {delta, se, tau2, q, t_adj, pval};
        for (std::size_t c = 0; c < params.size(); ++c) volumes[c][idx] = extra[c];
        csv << detail::full_precision(p.x) << ',' << detail::full_precision(p.y) << ','
            << detail::full_precision(p.z) << ',' << detail::full_precision(alpha) << ','
            << detail::full_precision(delta) << ',' << detail::full_precision(tau2) << ','
            << detail::full_precision(se * se) << ',' << detail::full_precision(t_adj)
            << ',' << detail::full_precision(nan) << ',' << detail::full_precision(k)
            << ',' << (pt.ok ? "ok" : "failed") << ',' << detail::full_precision(tau2)
            << ',' << detail::full_precision(q) << ',' << detail::full_precision(t_adj)
            << ',' << detail::full_precision(pval) << '\n';
    }
    if (!csv) throw InvalidArgument("write to field.csv failed");
    csv.close();

    nlohmann::json manifest;
    manifest["schema_version"] = kFieldSchemaVersion;
    manifest["kind"] = "meta";
    manifest["lattice"] = lattice_to_json(lat);
    manifest["csv"] = "field.csv";
    manifest["in_mask"] = in_mask;
    nlohmann::json vols = nlohmann::json::object();
    for (std::size_t c = 0; c < params.size(); ++c) {
        const std::string file = params[c] + ".nii";
        detail::write_parameter_volume(fs::path(dir) / file, lat, volumes[c]);
        vols[params[c]] = file;
    }
    manifest["volumes"] = std::move(vols);
    std::ofstream mf(fs::path(dir) / "field.json");
    if (!mf) throw InvalidArgument("cannot write field.json in '" + dir + "'");
    mf << manifest.dump(2) << '\n';
}

inline void write_forest_csv(const std::vector<ForestRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write '" + path + "'");
    out << "subject_id,covariate,estimate,se,ci_lo,ci_hi\n";
    for (const auto& r : rows)
        out << r.label << ',' << detail::full_precision(r.covariate) << ','
            << detail::full_precision(r.estimate) << ',' << detail::full_precision(r.se)
            << ',' << detail::full_precision(r.ci_lo) << ','
            << detail::full_precision(r.ci_hi) << '\n';
    if (!out) throw InvalidArgument("write to '" + path + "' failed");
}

// Summary facts about a fitted field: the t-field argmax and a DW digest.
inline nlohmann::json field_summary_json(const ParamField& field) {
    const Lattice& lat = field.lattice;
    double best_t = -std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    bool any = false;
    double dw_sum = 0, dw_min = std::numeric_limits<double>::infinity(),
           dw_max = -std::numeric_limits<double>::infinity();
    std::size_t dw_count = 0, n_ok = 0, n_in_mask = 0;
    for (std::size_t idx = 0; idx < field.fits.size(); ++idx) {
        const PointFit& fit = field.fits[idx];
        if (fit.status == FitStatus::kOutsideMask) continue;
        ++n_in_mask;
        if (!fit.ok()) continue;
        ++n_ok;
        if (std::isfinite(fit.t_value) && fit.t_value > best_t) {
            best_t = fit.t_value;
            best_idx = idx;
            any = true;
        }
        if (std::isfinite(fit.dw)) {
            dw_sum += fit.dw;
            dw_min = std::min(dw_min, fit.dw);
            dw_max = std::max(dw_max, fit.dw);
            ++dw_count;
        }
    }
    nlohmann::json j;
    j["n_in_mask"] = n_in_mask;
    j["n_ok"] = n_ok;
    if (any) {
        const Point3 p = lat.point(best_idx);
        j["argmax_t"] = {{"t", best_t},
                         {"x", p.x},
                         {"y", p.y},
                         {"z", p.z},
                         {"beta", field.fits[best_idx].beta_hat}};
    } else {
        j["argmax_t"] = nullptr;
    }
    if (dw_count > 0)
        j["dw"] = {{"mean", dw_sum / static_cast<double>(dw_count)},
                   {"min", dw_min},
                   {"max", dw_max},
                   {"count", dw_count}};
    else
        j["dw"] = nullptr;
    return j;
}

}  // namespace mbfmri
