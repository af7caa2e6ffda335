// mbfit: phantom simulation, kernel-weighted fitting, diagnostics,
// normalization, population meta-regression and Monte Carlo harnesses,
// glued into one pipeline over NIfTI volumes + JSON sidecars.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
// Failures print one machine-readable JSON object to stderr.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <mbfmri/mbfmri.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string error_json(const std::string& type, const std::string& message) {
    return json{{"error", {{"type", type}, {"message", message}}}}.dump();
}

mbfmri::Point3 parse_point(const std::string& text, const std::string& flag) {
    std::stringstream ss(text);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
        try {
            v.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw mbfmri::InvalidArgument(flag + ": '" + cell + "' is not a number");
        }
    }
    if (v.size() != 3)
        throw mbfmri::InvalidArgument(flag + ": expected 'x,y,z', got '" + text + "'");
    return {v[0], v[1], v[2]};
}

std::vector<double> parse_double_list(const std::string& text, const std::string& flag) {
    std::stringstream ss(text);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
        if (cell.empty()) continue;
        try {
            v.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw mbfmri::InvalidArgument(flag + ": '" + cell + "' is not a number");
        }
    }
    if (v.empty()) throw mbfmri::InvalidArgument(flag + ": empty list");
    return v;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw mbfmri::InvalidArgument("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

json load_json_file(const std::string& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw mbfmri::InvalidArgument("cannot open " + what + " '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw mbfmri::InvalidArgument(what + " parse error in '" + path + "': " + e.what());
    }
    return j;
}

// Covariate table: one line per subject, "label,v1[,v2...]" or bare numbers.
// A non-numeric trailing cell in the first line marks it as a header.
struct CovariateTable {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> covariates;  // per subject
};

CovariateTable load_covariates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw mbfmri::InvalidArgument("cannot open covariate file '" + path + "'");
    CovariateTable table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.empty()) continue;
        if (first) {
            first = false;
            try {
                (void)std::stod(cells.back());
            } catch (const std::exception&) {
                continue;  // header line
            }
        }
        std::string label;
        std::size_t start = 0;
        try {
            (void)std::stod(cells[0]);
        } catch (const std::exception&) {
            label = cells[0];
            start = 1;
        }
        std::vector<double> values;
        for (std::size_t c = start; c < cells.size(); ++c) {
            try {
                values.push_back(std::stod(cells[c]));
            } catch (const std::exception&) {
                throw mbfmri::InvalidArgument("covariate file: '" + cells[c] +
                                              "' is not a number");
            }
        }
        if (label.empty())
            label = "subject_" + std::to_string(table.labels.size() + 1);
        table.labels.push_back(label);
        table.covariates.push_back(std::move(values));
    }
    if (table.labels.empty())
        throw mbfmri::InvalidArgument("covariate file '" + path + "' has no rows");
    return table;
}

json meta_fit_to_json(const mbfmri::MetaFit& m) {
    json j;
    j["gamma_hat"] = m.gamma_hat;
    j["delta_hat"] = m.delta_hat;
    j["tau2"] = m.tau2;
    j["q"] = m.q;
    j["se_adjusted"] = m.se_adjusted;
    j["t_adjusted"] = m.t_adjusted;
    j["ci95"] = {m.ci95.first, m.ci95.second};
    j["p_value"] = m.p_value;
    j["df"] = m.df;
    j["effect_index"] = m.effect_index;
    return j;
}

// ---------------------------------------------------------------------------
// Subcommand option bags.
// ---------------------------------------------------------------------------

struct PhantomOpts {
    std::string spec_path, out_dir, subject = "sim";
    std::uint64_t seed = 0;
    bool seed_given = false;
};

struct FitOpts {
    std::string session_dir, config_path, out_dir;
    int threads = -1;  // -1: take from config
};

struct DwOpts {
    std::string field_dir, out_path;
    std::string thetas = "0,0.99,0.999,0.9999";
};

struct AtiOpts {
    std::vector<std::string> field_dirs;
    std::string template_path, config_path, out_dir;
};

struct MetaOpts {
    std::vector<std::string> field_dirs;
    std::string covariates_path, config_path, out_dir, at_text;
    bool lattice_mode = false;
    int effect_index = 0;
};

struct McOpts {
    std::string spec_path, config_path, out_path, at_text;
    std::vector<std::string> probes;
    std::string ladder = "0,0.1,0.25,0.5,1,2,5,10";
    int reps = 500;
    double alpha = 0.05;
    int threads = -1;
};

// ---------------------------------------------------------------------------
// Subcommand implementations.
// ---------------------------------------------------------------------------

void run_phantom(const PhantomOpts& opt) {
    mbfmri::PhantomSpec spec = mbfmri::load_phantom_spec(opt.spec_path);
    if (opt.seed_given) spec.seed = opt.seed;
    auto [session, truth] = mbfmri::simulate_session(spec);
    session.subject_id = opt.subject;
    mbfmri::write_session_bundle(session, opt.out_dir);
    write_json_file(mbfmri::ground_truth_json(spec, truth),
                    (fs::path(opt.out_dir) / "truth.json").string());
    json summary;
    summary["out"] = opt.out_dir;
    summary["subject"] = session.subject_id;
    summary["cycles"] = session.motions.size();
    summary["values"] = session.values.size();
    summary["seed"] = spec.seed;
    std::cout << summary.dump(2) << '\n';
}

void run_fit(const FitOpts& opt) {
    mbfmri::RunConfig cfg = mbfmri::load_run_config(opt.config_path);
    if (opt.threads >= 0) cfg.threads = static_cast<unsigned>(opt.threads);
    mbfmri::ScanSession session = mbfmri::read_session_dir(opt.session_dir);

    std::vector<std::size_t> excluded;
    if (cfg.grubbs_alpha > 0.0)
        excluded = mbfmri::apply_grubbs_screen(session, cfg.grubbs_alpha);

    const mbfmri::Lattice lattice =
        cfg.lattice ? *cfg.lattice : mbfmri::voxel_lattice(session.grid);
    const mbfmri::WeightScheme scheme = cfg.make_scheme();
    mbfmri::FitConfig fit_config;
    fit_config.variance = cfg.variance;
    fit_config.threads = cfg.threads;

    const mbfmri::ParamField field =
        mbfmri::fit_field(session, lattice, scheme, cfg.model, fit_config);
    mbfmri::write_param_field(field, opt.out_dir);

    json summary = mbfmri::field_summary_json(field);
    summary["subject"] = session.subject_id;
    summary["excluded_cycles"] = excluded;
    summary["model"] = cfg.model.name();
    write_json_file(summary, (fs::path(opt.out_dir) / "summary.json").string());
    std::cout << summary.dump(2) << '\n';
}

void run_diagnose_dw(const DwOpts& opt) {
    const std::vector<double> thetas = parse_double_list(opt.thetas, "--thetas");
    const mbfmri::LoadedField field = mbfmri::read_param_field(opt.field_dir);
    std::vector<std::pair<double, double>> t_dw;
    field.mask.for_each([&](std::size_t idx) {
        if (!field.ok_at(idx)) return;
        const double t = field.t.at(idx), dw = field.dw.at(idx);
        if (std::isfinite(t) && std::isfinite(dw)) t_dw.push_back({t, dw});
    });
    const auto strata = mbfmri::dw_peak_densities(t_dw, thetas);

    std::ofstream out(opt.out_path);
    if (!out) throw mbfmri::InvalidArgument("cannot write '" + opt.out_path + "'");
    out << "theta,dw\n";
    char buf[40];
    for (std::size_t s = 0; s < strata.size(); ++s)
        for (const double dw : strata[s]) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g", thetas[s], dw);
            out << buf << '\n';
        }
    json summary;
    summary["out"] = opt.out_path;
    for (std::size_t s = 0; s < strata.size(); ++s)
        summary["strata"].push_back({{"theta", thetas[s]}, {"count", strata[s].size()}});
    std::cout << summary.dump(2) << '\n';
}

void run_ati(const AtiOpts& opt) {
    mbfmri::RunConfig cfg = mbfmri::load_run_config(opt.config_path);
    const mbfmri::NiftiVolume tpl_vol = mbfmri::read_nifti(opt.template_path);
    if (tpl_vol.dim[3] != 1)
        throw mbfmri::InvalidArgument("template must be a 3D volume");
    const mbfmri::Lattice lattice(
        {tpl_vol.offset[0], tpl_vol.offset[1], tpl_vol.offset[2]},
        {tpl_vol.pixdim[0], tpl_vol.pixdim[1], tpl_vol.pixdim[2]},
        {tpl_vol.dim[0], tpl_vol.dim[1], tpl_vol.dim[2]});
    const mbfmri::ScalarField tpl(lattice, tpl_vol.data);

    std::vector<mbfmri::LoadedField> subjects;
    for (const auto& dir : opt.field_dirs) {
        subjects.push_back(mbfmri::read_param_field(dir));
        if (!(subjects.back().lattice == lattice))
            throw mbfmri::InvalidArgument("field '" + dir +
                                          "' is not on the template lattice");
    }

    const mbfmri::WeightScheme scheme = cfg.make_scheme();
    const mbfmri::ScalarField mu = mbfmri::reference_field(tpl, scheme);
    fs::create_directories(opt.out_dir);
    mbfmri::detail::write_parameter_volume(fs::path(opt.out_dir) / "mu.nii", lattice,
                                           mu.values());

    json manifest;
    manifest["schema_version"] = 1;
    manifest["mu"] = "mu.nii";
    manifest["subjects"] = json::array();
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        mbfmri::LoadedField out_field = subjects[s];
        const mbfmri::NormalizedField norm = mbfmri::normalize_to_ati(
            subjects[s].beta, subjects[s].var_beta, subjects[s].alpha, mu);
        out_field.beta = norm.beta;
        out_field.var_beta = norm.variance;
        for (const std::size_t idx : norm.flagged)
            if (out_field.status[idx] == mbfmri::FitStatus::kOk)
                out_field.status[idx] = mbfmri::FitStatus::kFailed;
        char name[32];
        std::snprintf(name, sizeof(name), "subject_%02zu", s + 1);
        const std::string sub_dir = (fs::path(opt.out_dir) / name).string();
        mbfmri::write_loaded_field(out_field, sub_dir);
        manifest["subjects"].push_back({{"dir", name},
                                        {"source", opt.field_dirs[s]},
                                        {"flagged", norm.flagged.size()}});
    }
    write_json_file(manifest, (fs::path(opt.out_dir) / "ati.json").string());
    std::cout << manifest.dump(2) << '\n';
}

void run_meta(const MetaOpts& opt) {
    mbfmri::RunConfig cfg = mbfmri::load_run_config(opt.config_path);
    if (opt.at_text.empty() == !opt.lattice_mode)
        throw mbfmri::InvalidArgument("meta: pass exactly one of --at x,y,z or --lattice");

    std::vector<mbfmri::LoadedField> subjects;
    for (const auto& dir : opt.field_dirs) subjects.push_back(mbfmri::read_param_field(dir));
    const mbfmri::Lattice lattice = subjects.front().lattice;
    for (std::size_t s = 1; s < subjects.size(); ++s)
        if (!(subjects[s].lattice == lattice))
            throw mbfmri::InvalidArgument("meta: field '" + opt.field_dirs[s] +
                                          "' is on a different lattice");

    CovariateTable table;
    if (!opt.covariates_path.empty()) {
        table = load_covariates(opt.covariates_path);
        if (table.labels.size() != subjects.size())
            throw mbfmri::InvalidArgument(
                "meta: covariate file has " + std::to_string(table.labels.size()) +
                " rows for " + std::to_string(subjects.size()) + " fields");
    } else {
        for (std::size_t s = 0; s < subjects.size(); ++s) {
            table.labels.push_back(fs::path(opt.field_dirs[s]).filename().string());
            table.covariates.push_back({});
        }
    }
    const std::size_t n_cov = table.covariates.front().size();
    for (const auto& c : table.covariates)
        if (c.size() != n_cov)
            throw mbfmri::InvalidArgument("meta: ragged covariate rows");

    mbfmri::MetaConfig meta_config;
    meta_config.heterogeneity = cfg.heterogeneity;
    meta_config.truncate_q = cfg.kh_truncate;
    meta_config.effect_index = opt.effect_index;
    meta_config.threads = cfg.threads;
    fs::create_directories(opt.out_dir);

    if (!opt.at_text.empty()) {
        const mbfmri::Point3 at = parse_point(opt.at_text, "--at");
        std::size_t idx;
        if (!lattice.nearest(at, idx))
            throw mbfmri::InvalidArgument("meta: --at point lies outside the field lattice");

        std::vector<mbfmri::StudyPoint> points;
        std::vector<double> ordering;
        std::vector<std::string> labels;
        json dropped = json::array();
        for (std::size_t s = 0; s < subjects.size(); ++s) {
            const double b = subjects[s].beta.at(idx);
            const double v = subjects[s].var_beta.at(idx);
            if (!std::isfinite(b) || !(v > 0.0) || !std::isfinite(v)) {
                dropped.push_back(table.labels[s]);
                continue;
            }
            mbfmri::StudyPoint p;
            p.beta_hat = b;
            p.variance = v;
            p.covariates = table.covariates[s];
            ordering.push_back(n_cov > 0 ? table.covariates[s][0]
                                         : static_cast<double>(s));
            labels.push_back(table.labels[s]);
            points.push_back(std::move(p));
        }
        const Eigen::MatrixXd X = mbfmri::meta_design(points);
        const mbfmri::MetaFit fit = mbfmri::meta_fit_point(points, X, meta_config);
        const auto rows = mbfmri::forest_funnel_data(points, fit, ordering, labels);
        mbfmri::write_forest_csv(rows, (fs::path(opt.out_dir) / "forest.csv").string());

        json out = meta_fit_to_json(fit);
        out["at"] = {at.x, at.y, at.z};
        out["k"] = points.size();
        out["dropped"] = dropped;
        out["forest"] = "forest.csv";
        write_json_file(out, (fs::path(opt.out_dir) / "meta.json").string());
        std::cout << out.dump(2) << '\n';
        return;
    }

    // Field mode: every point carried by all subjects' masks.
    mbfmri::Region mask(lattice);
    subjects.front().mask.for_each([&](std::size_t idx) {
        for (const auto& s : subjects)
            if (!s.mask.contains(idx)) return;
        mask.add(idx);
    });
    std::vector<mbfmri::ScalarField> betas, variances;
    for (const auto& s : subjects) {
        betas.push_back(s.beta);
        variances.push_back(s.var_beta);
    }
    Eigen::MatrixXd X(subjects.size(), 1 + n_cov);
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        X(s, 0) = 1.0;
        for (std::size_t c = 0; c < n_cov; ++c) X(s, 1 + c) = table.covariates[s][c];
    }
    const mbfmri::MetaField field =
        mbfmri::meta_field(betas, variances, X, mask, meta_config);
    mbfmri::write_meta_field(field, opt.out_dir);
    json out;
    out["out"] = opt.out_dir;
    out["k"] = subjects.size();
    out["in_mask"] = mask.count();
    std::cout << out.dump(2) << '\n';
}

void run_mc_type1(const McOpts& opt) {
    mbfmri::RunConfig cfg = mbfmri::load_run_config(opt.config_path);
    if (opt.threads >= 0) cfg.threads = static_cast<unsigned>(opt.threads);
    const mbfmri::PhantomSpec spec = mbfmri::load_phantom_spec(opt.spec_path);

    std::vector<mbfmri::Point3> probes;
    for (const auto& p : opt.probes) probes.push_back(parse_point(p, "--probe"));
    if (probes.empty()) {
        const mbfmri::Point3 centre = spec.grid.voxel_centre(
            spec.grid.nx / 2, spec.grid.ny / 2, spec.grid.slice_count / 2);
        probes.push_back(spec.psi.inverse().apply(centre));
    }

    mbfmri::FitConfig fit_config;
    fit_config.variance = cfg.variance;
    fit_config.threads = cfg.threads;
    const mbfmri::Type1Report report = mbfmri::mc_type1(
        spec, cfg.make_scheme(), cfg.model, probes, opt.reps, opt.alpha, fit_config);

    json j;
    j["replicates"] = report.replicates;
    j["alpha"] = report.alpha;
    j["probes"] = json::array();
    for (std::size_t i = 0; i < report.probes.size(); ++i)
        j["probes"].push_back({{"at",
                                {report.probes[i].x, report.probes[i].y, report.probes[i].z}},
                               {"rejection_rate", report.rejection_rate[i]},
                               {"mc_se", report.mc_se[i]}});
    if (!opt.out_path.empty()) write_json_file(j, opt.out_path);
    std::cout << j.dump(2) << '\n';
}

void run_mc_bias(const McOpts& opt) {
    mbfmri::RunConfig cfg = mbfmri::load_run_config(opt.config_path);
    if (opt.threads >= 0) cfg.threads = static_cast<unsigned>(opt.threads);
    const mbfmri::PhantomSpec spec = mbfmri::load_phantom_spec(opt.spec_path);
    if (opt.at_text.empty()) throw mbfmri::InvalidArgument("mc bias: --at x,y,z is required");
    const mbfmri::Point3 at = parse_point(opt.at_text, "--at");
    const std::vector<double> ladder = parse_double_list(opt.ladder, "--ladder");

    mbfmri::FitConfig fit_config;
    fit_config.variance = cfg.variance;
    fit_config.threads = cfg.threads;
    const mbfmri::BiasReport report =
        mbfmri::mc_bias(spec, cfg.make_scheme(), cfg.model, at, opt.reps,
                        mbfmri::voxel_lattice(spec.grid), ladder, fit_config);

    json j;
    j["at"] = {report.at.x, report.at.y, report.at.z};
    j["true_beta"] = report.true_beta;
    j["mean_beta_hat"] = report.mean_beta_hat;
    j["empirical_bias"] = report.empirical_bias;
    j["mc_se"] = report.mc_se;
    j["certified"] = report.certified;
    j["epsilon_omega"] = report.epsilon_omega;
    j["bound"] = report.bound;
    j["within_bound"] = report.within_bound;
    j["replicates"] = report.replicates;
    j["note"] = report.certificate_note;
    if (!opt.out_path.empty()) write_json_file(j, opt.out_path);
    std::cout << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernel-weighted task-fMRI estimation at arbitrary points, with "
                 "validity diagnostics, normalization and population meta-regression"};
    app.require_subcommand(1);

    PhantomOpts phantom_opts;
    auto* phantom = app.add_subcommand("phantom", "Simulate a session from a phantom spec");
    phantom->add_option("--spec", phantom_opts.spec_path, "Phantom spec JSON")
        ->required();
    phantom->add_option("--out", phantom_opts.out_dir,
                        "Output directory (vol.nii, sidecar.json, truth.json)")
        ->required();
    auto* seed_opt = phantom->add_option("--seed", phantom_opts.seed,
                                         "Override the base RNG seed from --spec");
    phantom->add_option("--subject", phantom_opts.subject, "Subject id for the sidecar");

    FitOpts fit_opts;
    auto* fit = app.add_subcommand("fit", "Fit the model field over a session");
    fit->add_option("--session", fit_opts.session_dir,
                    "Session directory (vol.nii + sidecar.json)")
        ->required();
    fit->add_option("--config", fit_opts.config_path, "Run config JSON")->required();
    fit->add_option("--out", fit_opts.out_dir, "Output field directory")->required();
    fit->add_option("--threads", fit_opts.threads,
                    "Worker threads (0 = hardware; default from config)");

    auto* diagnose = app.add_subcommand("diagnose", "Model diagnostics");
    diagnose->require_subcommand(1);
    DwOpts dw_opts;
    auto* dw = diagnose->add_subcommand(
        "dw", "Durbin-Watson samples stratified by t-field elevation");
    dw->add_option("--field", dw_opts.field_dir, "Fitted field directory")->required();
    dw->add_option("--thetas", dw_opts.thetas,
                   "Comma-separated t-quantile thresholds in [0,1)");
    dw->add_option("--out", dw_opts.out_path, "Output CSV (theta,dw)")->required();

    AtiOpts ati_opts;
    auto* ati = app.add_subcommand(
        "ati", "Normalize fitted fields to above-template-intensity units");
    ati->add_option("--fields", ati_opts.field_dirs, "Fitted field directories")
        ->required()
        ->expected(-1);
    ati->add_option("--template", ati_opts.template_path, "Template NIfTI volume")
        ->required();
    ati->add_option("--config", ati_opts.config_path, "Run config JSON")->required();
    ati->add_option("--out", ati_opts.out_dir, "Output directory")->required();

    MetaOpts meta_opts;
    auto* meta = app.add_subcommand("meta", "Random-effects meta-regression over subjects");
    meta->add_option("--fields", meta_opts.field_dirs, "Subject field directories")
        ->required()
        ->expected(-1);
    meta->add_option("--covariates", meta_opts.covariates_path,
                     "CSV: one row per subject, 'label,value...'");
    meta->add_option("--at", meta_opts.at_text, "Evaluate at one point 'x,y,z'");
    meta->add_flag("--lattice", meta_opts.lattice_mode,
                   "Evaluate at every shared masked lattice point");
    meta->add_option("--effect-index", meta_opts.effect_index,
                     "Coefficient under test (0 = intercept)");
    meta->add_option("--config", meta_opts.config_path, "Run config JSON")->required();
    meta->add_option("--out", meta_opts.out_dir, "Output directory")->required();

    auto* mc = app.add_subcommand("mc", "Monte Carlo harnesses");
    mc->require_subcommand(1);
    McOpts type1_opts;
    auto* type1 = mc->add_subcommand("type1", "Null rejection rate of the t test");
    type1->add_option("--spec", type1_opts.spec_path, "Null phantom spec JSON (beta = 0)")
        ->required();
    type1->add_option("--config", type1_opts.config_path, "Run config JSON")->required();
    type1->add_option("--reps", type1_opts.reps, "Replicates (>= 100)");
    type1->add_option("--alpha", type1_opts.alpha, "Nominal test level");
    type1->add_option("--probe", type1_opts.probes,
                      "Probe point 'x,y,z' (repeatable; default: grid centre)");
    type1->add_option("--out", type1_opts.out_path, "Report JSON path");
    type1->add_option("--threads", type1_opts.threads, "Worker threads (0 = hardware)");

    McOpts bias_opts;
    auto* bias = mc->add_subcommand("bias", "Empirical bias against the certified bound");
    bias->add_option("--spec", bias_opts.spec_path, "Phantom spec JSON")->required();
    bias->add_option("--config", bias_opts.config_path, "Run config JSON")->required();
    bias->add_option("--reps", bias_opts.reps, "Replicates (>= 2)");
    bias->add_option("--at", bias_opts.at_text, "Evaluation point 'x,y,z'")->required();
    bias->add_option("--ladder", bias_opts.ladder,
                     "Comma-separated epsilon candidates for certification");
    bias->add_option("--out", bias_opts.out_path, "Report JSON path");
    bias->add_option("--threads", bias_opts.threads, "Worker threads (0 = hardware)");

    try {
        app.parse(argc, argv);
        phantom_opts.seed_given = seed_opt->count() > 0;
        if (*phantom) run_phantom(phantom_opts);
        if (*fit) run_fit(fit_opts);
        if (*dw) run_diagnose_dw(dw_opts);
        if (*ati) run_ati(ati_opts);
        if (*meta) run_meta(meta_opts);
        if (*type1) run_mc_type1(type1_opts);
        if (*bias) run_mc_bias(bias_opts);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << error_json("usage", e.what()) << '\n';
        return 1;
    } catch (const mbfmri::MalformedHeader& e) {
        std::cerr << error_json("malformed_header", e.what()) << '\n';
        return 2;
    } catch (const mbfmri::SidecarMismatch& e) {
        std::cerr << error_json("sidecar_mismatch", e.what()) << '\n';
        return 2;
    } catch (const mbfmri::InvalidArgument& e) {
        std::cerr << error_json("invalid_argument", e.what()) << '\n';
        return 2;
    } catch (const mbfmri::Underdetermined& e) {
        std::cerr << error_json("underdetermined", e.what()) << '\n';
        return 3;
    } catch (const mbfmri::RankDeficient& e) {
        std::cerr << error_json("rank_deficient", e.what()) << '\n';
        return 3;
    } catch (const mbfmri::ZeroVariance& e) {
        std::cerr << error_json("zero_variance", e.what()) << '\n';
        return 3;
    } catch (const mbfmri::NonpositiveIntercept& e) {
        std::cerr << error_json("nonpositive_intercept", e.what()) << '\n';
        return 3;
    } catch (const mbfmri::DegenerateMeta& e) {
        std::cerr << error_json("degenerate_meta", e.what()) << '\n';
        return 3;
    } catch (const mbfmri::Error& e) {
        std::cerr << error_json("error", e.what()) << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << error_json("internal", e.what()) << '\n';
        return 3;
    }
}
