#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <mbfmri/mbfmri.hpp>

using namespace mbfmri;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("mbfmri_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Overwrite `count` bytes at `offset` in the file at `path`.
void corrupt(const fs::path& path, std::streamoff offset, const void* bytes,
             std::size_t count) {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    REQUIRE(f.good());
    f.seekp(offset);
    f.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(count));
    REQUIRE(f.good());
}

NiftiVolume small_volume(std::int16_t datatype) {
    NiftiVolume vol;
    vol.dim = {5, 4, 3, 2};
    vol.pixdim = {3.0, 3.0, 3.5, 1.45};
    vol.offset = {1.0, 2.0, -3.0};
    vol.datatype = datatype;
    vol.data.resize(vol.size());
    for (std::size_t i = 0; i < vol.data.size(); ++i)
        vol.data[i] = static_cast<double>(i) - 7.0;
    return vol;
}

PhantomSpec bundle_spec() {
    PhantomSpec spec;
    spec.grid = AcquisitionGrid::sequential(6, 5, 3, 3.0, 3.0, 3.0, 1.45);
    spec.design = BlockDesign::alternating(4, 15.0);
    spec.beta = AnalyticField::constant(15.0);
    spec.noise_sigma = 0.0;  // values in {g*100, g*115}: exact in float32
    spec.grey_scale = 2.5;
    spec.motion = MotionSpec::sinusoidal_translation(2.0, 50.0, {1.0, -1.0, 0.5});
    spec.psi = AffineMap(Eigen::Matrix3d::Identity() * 1.1, {1.0, 2.0, 3.0});
    spec.seed = 55;
    return spec;
}

}  // namespace

TEST_CASE("volume files") {
    SECTION("round trips preserve geometry and payload per datatype") {
        for (std::int16_t dt : {kNiftiFloat32, kNiftiInt16, kNiftiUint16}) {
            const fs::path dir = fresh_dir("nifti_rt_" + std::to_string(dt));
            NiftiVolume vol = small_volume(dt);
            if (dt == kNiftiUint16)
                for (auto& v : vol.data) v += 7.0;  // keep payload non-negative
            const std::string path = (dir / "vol.nii").string();
            write_nifti(path, vol);
            const NiftiVolume back = read_nifti(path);
            CHECK(back.datatype == dt);
            CHECK(back.dim == vol.dim);
            for (int i = 0; i < 3; ++i)
                CHECK(back.pixdim[i] == Catch::Approx(vol.pixdim[i]).margin(1e-6));
            CHECK(back.pixdim[3] == Catch::Approx(1.45).margin(1e-6));
            for (int i = 0; i < 3; ++i)
                CHECK(back.offset[i] == Catch::Approx(vol.offset[i]).margin(1e-6));
            REQUIRE(back.data.size() == vol.data.size());
            for (std::size_t i = 0; i < vol.data.size(); ++i)
                CHECK(back.data[i] == vol.data[i]);  // integers: exact in all types
        }
    }

    SECTION("integer payloads are rounded to nearest on write") {
        const fs::path dir = fresh_dir("nifti_round");
        NiftiVolume vol = small_volume(kNiftiInt16);
        vol.data.assign(vol.size(), 2.7);
        const std::string path = (dir / "vol.nii").string();
        write_nifti(path, vol);
        CHECK(read_nifti(path).data[0] == 3.0);
    }

    SECTION("slope and intercept scale the raw payload on read") {
        const fs::path dir = fresh_dir("nifti_scl");
        NiftiVolume vol = small_volume(kNiftiInt16);
        for (std::size_t i = 0; i < vol.data.size(); ++i)
            vol.data[i] = static_cast<double>(i);  // raw integers
        const std::string path = (dir / "vol.nii").string();
        write_nifti(path, vol, 2.0f, 10.0f);
        const NiftiVolume back = read_nifti(path);
        for (std::size_t i = 0; i < vol.data.size(); ++i)
            CHECK(back.data[i] == 2.0 * static_cast<double>(i) + 10.0);
    }

    SECTION("malformed files are refused with the offending field named") {
        const fs::path dir = fresh_dir("nifti_bad");
        const fs::path good = dir / "good.nii";
        write_nifti(good.string(), small_volume(kNiftiInt16));

        CHECK_THROWS_AS(read_nifti((dir / "missing.nii").string()), MalformedHeader);

        {  // header cut short
            const fs::path p = dir / "short.nii";
            fs::copy_file(good, p);
            fs::resize_file(p, 100);
            CHECK_THROWS_AS(read_nifti(p.string()), MalformedHeader);
        }
        {  // wrong sizeof_hdr (offset 0, int32)
            const fs::path p = dir / "sizeof.nii";
            fs::copy_file(good, p);
            const std::int32_t bad = 300;
            corrupt(p, 0, &bad, 4);
            CHECK_THROWS_WITH(read_nifti(p.string()),
                              Catch::Matchers::ContainsSubstring("sizeof_hdr"));
        }
        {  // wrong magic (offset 344)
            const fs::path p = dir / "magic.nii";
            fs::copy_file(good, p);
            corrupt(p, 344, "ni1\0", 4);
            CHECK_THROWS_WITH(read_nifti(p.string()),
                              Catch::Matchers::ContainsSubstring("magic"));
        }
        {  // unsupported datatype (offset 70, int16): float64 = 64
            const fs::path p = dir / "datatype.nii";
            fs::copy_file(good, p);
            const std::int16_t dt = 64;
            corrupt(p, 70, &dt, 2);
            CHECK_THROWS_WITH(read_nifti(p.string()),
                              Catch::Matchers::ContainsSubstring("datatype"));
        }
        {  // vox_offset pointing into the header (offset 108, float)
            const fs::path p = dir / "voxoff.nii";
            fs::copy_file(good, p);
            const float off = 100.0f;
            corrupt(p, 108, &off, 4);
            CHECK_THROWS_WITH(read_nifti(p.string()),
                              Catch::Matchers::ContainsSubstring("vox_offset"));
        }
        {  // image data cut short
            const fs::path p = dir / "data.nii";
            fs::copy_file(good, p);
            fs::resize_file(p, 352 + 10);
            CHECK_THROWS_AS(read_nifti(p.string()), MalformedHeader);
        }
    }
}

TEST_CASE("session bundles") {
    SECTION("a session round-trips through volume plus sidecar") {
        const fs::path dir = fresh_dir("bundle_rt");
        PhantomSpec spec = bundle_spec();
        auto [session, truth] = simulate_session(spec);
        session.subject_id = "s01";
        session.cycle_excluded.assign(session.motions.size(), 0);
        session.cycle_excluded[2] = true;
        session.cycle_excluded[5] = true;
        write_session_bundle(session, dir.string());
        REQUIRE(fs::exists(dir / "vol.nii"));
        REQUIRE(fs::exists(dir / "sidecar.json"));

        const ScanSession back = read_session_dir(dir.string());
        CHECK(back.subject_id == "s01");
        CHECK(back.grey_scale_note == 2.5);
        CHECK(back.values == session.values);
        REQUIRE(back.motions.size() == session.motions.size());
        for (std::size_t c = 0; c < back.motions.size(); ++c) {
            CHECK((back.motions[c].rotation() - session.motions[c].rotation()).norm() <
                  1e-12);
            CHECK(distance(back.motions[c].translation(),
                           session.motions[c].translation()) < 1e-12);
        }
        CHECK(back.design.blocks.size() == session.design.blocks.size());
        CHECK(back.design.total_duration == session.design.total_duration);
        CHECK(back.grid.slice_times == session.grid.slice_times);
        CHECK((back.psi.linear() - session.psi.linear()).norm() < 1e-12);
        CHECK(distance(back.psi.offset(), session.psi.offset()) < 1e-12);
        CHECK(back.excluded(2));
        CHECK(back.excluded(5));
        CHECK(!back.excluded(3));

        // The estimator sees identical observations through either copy.
        WeightScheme scheme;
        scheme.divergence = DivergenceMap::scaled_euclidean(2.3);
        scheme.hard_cutoff_radius = 6.9;
        const Point3 centre = session.grid.voxel_centre(3, 2, 1);
        const auto a = collect_observations(session, centre, scheme);
        const auto b = collect_observations(back, centre, scheme);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].second == b[i].second);
            CHECK(a[i].first.value == b[i].first.value);
            // The repetition time travels through the volume header's single
            // precision pixdim, so absolute times agree only to float rounding.
            CHECK(a[i].first.time ==
                  Catch::Approx(b[i].first.time).margin(1e-5));
            CHECK(distance(a[i].first.location, b[i].first.location) == 0.0);
        }
    }

    SECTION("a sidecar with one motion too few is rejected") {
        const fs::path dir = fresh_dir("bundle_mismatch");
        const auto [session, truth] = simulate_session(bundle_spec());
        write_session_bundle(session, dir.string());

        nlohmann::json sidecar;
        {
            std::ifstream in(dir / "sidecar.json");
            in >> sidecar;
        }
        REQUIRE(sidecar.at("motions").size() == session.motions.size());
        sidecar.at("motions").erase(sidecar.at("motions").size() - 1);
        {
            std::ofstream out(dir / "sidecar.json");
            out << sidecar.dump(2);
        }
        CHECK_THROWS_AS(read_session_dir(dir.string()), SidecarMismatch);
    }

    SECTION("missing sections and bad exclusions are sidecar errors") {
        const fs::path dir = fresh_dir("bundle_missing");
        const auto [session, truth] = simulate_session(bundle_spec());
        write_session_bundle(session, dir.string());
        nlohmann::json sidecar;
        {
            std::ifstream in(dir / "sidecar.json");
            in >> sidecar;
        }

        nlohmann::json no_design = sidecar;
        no_design.erase("design");
        {
            std::ofstream out(dir / "sidecar.json");
            out << no_design.dump(2);
        }
        CHECK_THROWS_AS(read_session_dir(dir.string()), SidecarMismatch);

        nlohmann::json bad_excl = sidecar;
        bad_excl["excluded_cycles"] = {99999};
        {
            std::ofstream out(dir / "sidecar.json");
            out << bad_excl.dump(2);
        }
        CHECK_THROWS_AS(read_session_dir(dir.string()), SidecarMismatch);
    }
}

TEST_CASE("fitted field files") {
    SECTION("a parameter field survives the disk round trip bit for bit") {
        PhantomSpec spec;
        spec.grid = AcquisitionGrid::sequential(6, 6, 3, 3.0, 3.0, 3.0, 1.45);
        spec.design = BlockDesign::alternating(4, 15.0);
        spec.beta = AnalyticField::constant(5.0);
        spec.seed = 60;
        const auto [session, truth] = simulate_session(spec);
        const Lattice lattice = voxel_lattice(spec.grid);
        WeightScheme scheme;
        scheme.divergence = DivergenceMap::scaled_euclidean(2.3);
        scheme.hard_cutoff_radius = 6.9;
        const Region mask = Region::ball(lattice, {7.5, 7.5, 4.5}, 6.0);
        const ParamField field = fit_field(session, lattice, scheme,
                                           ModelSpec::task_linear_time(), session.psi, mask);

        const fs::path dir = fresh_dir("field_rt");
        write_param_field(field, dir.string());
        REQUIRE(fs::exists(dir / "field.csv"));
        REQUIRE(fs::exists(dir / "field.json"));
        REQUIRE(fs::exists(dir / "beta.nii"));

        const LoadedField loaded = read_param_field(dir.string());
        CHECK(loaded.lattice.size() == lattice.size());
        for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
            if (!mask.contains(idx)) {
                CHECK(!loaded.mask.contains(idx));
                CHECK(loaded.status[idx] == FitStatus::kOutsideMask);
                CHECK(std::isnan(loaded.beta.at(idx)));
                continue;
            }
            REQUIRE(loaded.mask.contains(idx));
            CHECK(loaded.status[idx] == field.at(idx).status);
            if (field.at(idx).ok()) {
                CHECK(loaded.beta.at(idx) == field.at(idx).beta_hat);
                CHECK(loaded.var_beta.at(idx) == field.at(idx).var_beta_hat);
                CHECK(loaded.t.at(idx) == field.at(idx).t_value);
                CHECK(loaded.dw.at(idx) == field.at(idx).dw);
                CHECK(loaded.sigma2.at(idx) == field.at(idx).sigma2_hat);
                CHECK(loaded.n_obs.at(idx) ==
                      static_cast<double>(field.at(idx).n_obs));
            }
        }

        // Writing the loaded field back out reproduces it exactly again.
        const fs::path dir2 = fresh_dir("field_rt2");
        write_loaded_field(loaded, dir2.string());
        const LoadedField again = read_param_field(dir2.string());
        for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
            CHECK(again.status[idx] == loaded.status[idx]);
            if (loaded.ok_at(idx)) CHECK(again.beta.at(idx) == loaded.beta.at(idx));
        }
    }

    SECTION("population field files carry the adjusted statistics") {
        const Lattice lattice({0, 0, 0}, {3, 3, 3}, {3, 3, 2});
        std::vector<ScalarField> betas, vars;
        for (int s = 0; s < 4; ++s) {
            betas.push_back(ScalarField::constant(lattice, 2.0 + 0.1 * s));
            vars.push_back(ScalarField::constant(lattice, 0.5));
        }
        const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 1);
        const MetaField field = meta_field(betas, vars, X, Region::all(lattice), {});

        const fs::path dir = fresh_dir("meta_field");
        write_meta_field(field, dir.string());
        for (const char* name :
             {"delta.nii", "se_adjusted.nii", "tau2.nii", "q.nii", "t_adjusted.nii",
              "p.nii", "field.csv", "field.json"})
            CHECK(fs::exists(dir / name));

        std::ifstream csv(dir / "field.csv");
        std::string header;
        REQUIRE(std::getline(csv, header));
        CHECK(header == "x,y,z,alpha,beta,sigma2,var_beta,t,dw,n_obs,status,tau2,q,t_adjusted,p");
        std::size_t rows = 0;
        std::string line;
        while (std::getline(csv, line))
            if (!line.empty()) ++rows;
        CHECK(rows == lattice.size());

        nlohmann::json manifest;
        std::ifstream mf(dir / "field.json");
        mf >> manifest;
        CHECK(manifest.at("kind") == "meta");
        CHECK(manifest.at("in_mask") == lattice.size());
    }

    SECTION("forest tables use the documented header and round-trip rows") {
        std::vector<StudyPoint> pts(3);
        pts[0].beta_hat = 1.5;
        pts[0].variance = 0.25;
        pts[1].beta_hat = 2.0;
        pts[1].variance = 1.0;
        pts[2].beta_hat = 2.5;
        pts[2].variance = 0.64;
        const fs::path dir = fresh_dir("forest");
        const auto rows = forest_funnel_data(pts, std::nullopt, {3.0, 1.0, 2.0});
        write_forest_csv(rows, (dir / "forest.csv").string());

        std::ifstream in(dir / "forest.csv");
        std::string header;
        REQUIRE(std::getline(in, header));
        CHECK(header == "subject_id,covariate,estimate,se,ci_lo,ci_hi");
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) lines.push_back(line);
        REQUIRE(lines.size() == 4);
        CHECK(lines[0].rfind("subject_2,", 0) == 0);  // covariate 1.0 first
        CHECK(lines[3].rfind("population,", 0) == 0);
    }
}

TEST_CASE("run configuration files") {
    SECTION("configs round trip through json") {
        RunConfig cfg;
        cfg.kernel = "epanechnikov";
        cfg.fwhm_mm = 6.5;
        cfg.cutoff_sigmas = 2.5;
        cfg.model = ModelSpec::task_bspline(6);
        cfg.lattice = Lattice({1, 2, 3}, {2, 2, 4}, {5, 4, 3});
        cfg.variance = FitConfig::Variance::kClassical;
        cfg.heterogeneity = MetaConfig::Heterogeneity::kPauleMandel;
        cfg.kh_truncate = true;
        cfg.grubbs_alpha = 0.05;
        cfg.threads = 3;
        cfg.seed = 777;

        const RunConfig back = run_config_from_json(run_config_to_json(cfg));
        CHECK(back.kernel == "epanechnikov");
        CHECK(back.fwhm_mm == 6.5);
        CHECK(back.cutoff_sigmas == 2.5);
        CHECK(back.model.variant == cfg.model.variant);
        CHECK(back.model.bspline_df == 6);
        REQUIRE(back.lattice.has_value());
        CHECK(back.lattice->size() == 60);
        CHECK(distance(back.lattice->origin, {1, 2, 3}) == 0.0);
        CHECK(back.variance == FitConfig::Variance::kClassical);
        CHECK(back.heterogeneity == MetaConfig::Heterogeneity::kPauleMandel);
        CHECK(back.kh_truncate);
        CHECK(back.grubbs_alpha == 0.05);
        CHECK(back.threads == 3);
        CHECK(back.seed == 777);

        const fs::path dir = fresh_dir("config");
        {
            std::ofstream out(dir / "run.json");
            out << run_config_to_json(cfg).dump(2);
        }
        const RunConfig from_file = load_run_config((dir / "run.json").string());
        CHECK(from_file.kernel == cfg.kernel);
        CHECK(from_file.fwhm_mm == cfg.fwhm_mm);
    }

    SECTION("unknown kernels are refused") {
        nlohmann::json j = run_config_to_json(RunConfig{});
        j["kernel"] = "boxcar";
        CHECK_THROWS_AS(run_config_from_json(j), InvalidArgument);
    }

    SECTION("the bandwidth puts half weight at half the nominal width") {
        for (const char* name : {"gaussian", "epanechnikov", "tricube"}) {
            RunConfig cfg;
            cfg.kernel = name;
            cfg.fwhm_mm = 7.3;
            const Kernel k = cfg.make_kernel();
            const double u_half = (cfg.fwhm_mm / 2.0) / cfg.bandwidth();
            CHECK(k.phi(u_half) == Catch::Approx(0.5 * k.phi(0.0)).epsilon(1e-12));
        }
    }

    SECTION("the derived scheme carries kernel, cutoff and mask") {
        RunConfig cfg;
        cfg.fwhm_mm = 8.0;
        const WeightScheme scheme = cfg.make_scheme();
        const double h = cfg.bandwidth();
        CHECK(scheme.hard_cutoff_radius == Catch::Approx(3.0 * h).epsilon(1e-12));
        CHECK(scheme.weight({0, 0, 0}, {0, 0, 0}) == 1.0);
        CHECK(scheme.weight({0, 0, 0}, {h, 0, 0}) ==
              Catch::Approx(std::exp(-0.5)).epsilon(1e-12));
    }
}

TEST_CASE("phantom description files") {
    SECTION("a full spec round trips and regenerates identical data") {
        PhantomSpec spec;
        spec.grid = AcquisitionGrid::sequential(5, 5, 3, 3.0, 3.0, 3.0, 1.45);
        spec.design = BlockDesign::pseudo_randomized(4, 15.0, 99);
        spec.alpha = AnalyticField::linear_x(100.0, 0.5);
        spec.beta = AnalyticField::sphere({7.5, 7.5, 4.5}, 5.0, 12.0, 2.0);
        spec.drift = DriftSpec::sinusoid(1.5, 45.0);
        spec.noise_model = PhantomSpec::NoiseModel::kAr1;
        spec.ar1_rho = 0.4;
        spec.noise_sigma = 0.9;
        spec.motion = MotionSpec::sinusoidal_translation(1.0, 70.0, {0.0, 1.0, 0.0});
        spec.grey_scale = 1.7;
        spec.n_cycles = 30;
        spec.seed = 61;

        const PhantomSpec back = phantom_spec_from_json(phantom_spec_to_json(spec));
        const auto [sa, ta] = simulate_session(spec);
        const auto [sb, tb] = simulate_session(back);
        CHECK(sa.values == sb.values);
        CHECK(sa.motions.size() == sb.motions.size());
        CHECK(sa.design.blocks.size() == sb.design.blocks.size());

        const fs::path dir = fresh_dir("phantom_spec");
        {
            std::ofstream out(dir / "spec.json");
            out << phantom_spec_to_json(spec).dump(2);
        }
        const PhantomSpec from_file = load_phantom_spec((dir / "spec.json").string());
        const auto [sc, tc] = simulate_session(from_file);
        CHECK(sa.values == sc.values);
    }

    SECTION("ground truth summaries carry the generating fields") {
        const PhantomSpec spec = bundle_spec();
        const auto [session, truth] = simulate_session(spec);
        const nlohmann::json j = ground_truth_json(spec, truth);
        CHECK(j.at("grey_scale") == 2.5);
        CHECK(j.contains("alpha"));
        CHECK(j.contains("beta"));
        CHECK(j.contains("psi"));
        CHECK(j.at("n_cycles") == spec.cycles());
    }
}
