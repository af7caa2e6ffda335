#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include <mbfmri/geometry.hpp>
#include <mbfmri/lattice.hpp>

using namespace mbfmri;

namespace {

RigidMotion random_motion(std::mt19937_64& eng) {
    std::normal_distribution<double> n(0.0, 1.0);
    double w = n(eng), x = n(eng), y = n(eng), z = n(eng);
    const double norm = std::sqrt(w * w + x * x + y * y + z * z);
    return RigidMotion::from_quaternion(w / norm, x / norm, y / norm, z / norm,
                                        {n(eng) * 5.0, n(eng) * 5.0, n(eng) * 5.0});
}

}  // namespace

TEST_CASE("rigid motion application") {
    SECTION("identity fixes points") {
        const Point3 p{1.0, 2.0, 3.0};
        const Point3 q = apply_motion(RigidMotion::identity(), p);
        CHECK(q.x == 1.0);
        CHECK(q.y == 2.0);
        CHECK(q.z == 3.0);
    }

    SECTION("quarter turn about z maps x-axis to y-axis") {
        Eigen::Matrix3d r;
        r << 0, -1, 0, 1, 0, 0, 0, 0, 1;
        const RigidMotion rho(r, {0.0, 0.0, 0.0});
        const Point3 q = apply_motion(rho, {1.0, 0.0, 0.0});
        CHECK(q.x == Catch::Approx(0.0).margin(1e-15));
        CHECK(q.y == Catch::Approx(1.0).margin(1e-15));
        CHECK(q.z == Catch::Approx(0.0).margin(1e-15));
    }

    SECTION("inverse round-trips 1000 random motions") {
        std::mt19937_64 eng(42);
        std::normal_distribution<double> n(0.0, 10.0);
        for (int i = 0; i < 1000; ++i) {
            const RigidMotion rho = random_motion(eng);
            const Point3 p{n(eng), n(eng), n(eng)};
            const Point3 back = apply_motion(invert_motion(rho), apply_motion(rho, p));
            CHECK(distance(back, p) < 1e-9);
        }
    }

    SECTION("quaternion round trip preserves the rotation") {
        std::mt19937_64 eng(7);
        for (int i = 0; i < 200; ++i) {
            const RigidMotion rho = random_motion(eng);
            const auto q = rho.quaternion();
            CHECK(q[0] >= 0.0);  // canonical sign
            const RigidMotion back = RigidMotion::from_quaternion(q[0], q[1], q[2], q[3],
                                                                  rho.translation());
            CHECK((rho.rotation() - back.rotation()).norm() < 1e-9);
        }
    }

    SECTION("non-unit quaternion beyond tolerance is rejected") {
        CHECK_THROWS_AS(RigidMotion::from_quaternion(2.0, 0.0, 0.0, 0.0, {0, 0, 0}),
                        InvalidArgument);
    }
}

TEST_CASE("affine maps") {
    Eigen::Matrix3d a;
    a << 2, 0, 0, 0, 1, 0.5, 0, 0, 1;
    const AffineMap map(a, {1.0, -2.0, 3.0});

    SECTION("inverse round trip") {
        std::mt19937_64 eng(3);
        std::normal_distribution<double> n(0.0, 20.0);
        for (int i = 0; i < 300; ++i) {
            const Point3 p{n(eng), n(eng), n(eng)};
            const Point3 back = map.inverse().apply(map.apply(p));
            CHECK(distance(back, p) < 1e-9);
        }
    }

    SECTION("singular linear part is rejected") {
        Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
        CHECK_THROWS_AS(AffineMap(s, {0, 0, 0}), InvalidArgument);
    }
}

TEST_CASE("acquisition grid sampling") {
    const AcquisitionGrid grid = AcquisitionGrid::sequential(4, 4, 2, 3.0, 3.0, 3.0, 1.45);

    SECTION("identity motion samples at the voxel centres") {
        const auto locs = grid_sample_locations(grid, RigidMotion::identity(), 1, 0.0);
        REQUIRE(locs.size() == 16);
        std::size_t n = 0;
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i, ++n) {
                CHECK(distance(locs[n].first, grid.voxel_centre(i, j, 1)) < 1e-12);
                CHECK(locs[n].second == Catch::Approx(grid.slice_times[1]));
            }
    }

    SECTION("pure translation shifts sample locations the other way") {
        const RigidMotion tau(Eigen::Matrix3d::Identity(), {1.0, 2.0, -0.5});
        const auto locs = grid_sample_locations(grid, tau, 0, 0.0);
        std::size_t n = 0;
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i, ++n) {
                const Point3 expect{grid.voxel_centre(i, j, 0).x - 1.0,
                                    grid.voxel_centre(i, j, 0).y - 2.0,
                                    grid.voxel_centre(i, j, 0).z + 0.5};
                CHECK(distance(locs[n].first, expect) < 1e-12);
            }
    }

    SECTION("distinct motions sample disjoint location sets") {
        const RigidMotion a(Eigen::Matrix3d::Identity(), {0.0, 0.0, 0.0});
        const RigidMotion b(Eigen::Matrix3d::Identity(), {0.7, 0.0, 0.0});
        const auto la = grid_sample_locations(grid, a, 0);
        const auto lb = grid_sample_locations(grid, b, 0);
        for (const auto& [pa, ta] : la)
            for (const auto& [pb, tb] : lb) CHECK(distance(pa, pb) > 1e-9);
    }

    SECTION("validation rejects broken grids") {
        AcquisitionGrid bad = grid;
        bad.nx = 0;
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);
        bad = grid;
        bad.slice_times = {0.0};  // wrong length
        CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    }
}

TEST_CASE("kernel width conversions") {
    SECTION("published width pair") {
        CHECK(std::abs(fwhm_to_sigma(5.42) - 2.30) < 0.005);
        CHECK(std::abs(sigma_to_fwhm(2.30) - 5.42) < 0.005);
    }
    SECTION("zero maps to zero") { CHECK(fwhm_to_sigma(0.0) == 0.0); }
    SECTION("the conversion constant itself") {
        CHECK(std::abs(fwhm_to_sigma(2.3548200) - 1.0) < 1e-6);
        CHECK(kFwhmPerSigma == Catch::Approx(2.0 * std::sqrt(2.0 * std::log(2.0))).epsilon(1e-15));
    }
    SECTION("negative input is rejected") {
        CHECK_THROWS_AS(fwhm_to_sigma(-1.0), InvalidArgument);
    }
}

TEST_CASE("lattice indexing and interpolation") {
    const Lattice lat({1.0, 2.0, 3.0}, {2.0, 2.0, 4.0}, {5, 4, 3});

    SECTION("index/coords round trip") {
        for (std::size_t idx = 0; idx < lat.size(); ++idx) {
            const auto c = lat.coords(idx);
            CHECK(lat.index(c[0], c[1], c[2]) == idx);
            std::size_t near = 0;
            REQUIRE(lat.nearest(lat.point(idx), near));
            CHECK(near == idx);
        }
    }

    SECTION("trilinear interpolation is exact on affine fields") {
        const auto f = ScalarField::from_function(
            lat, [](const Point3& p) { return 2.0 + 0.5 * p.x - 1.5 * p.y + 3.0 * p.z; });
        std::mt19937_64 eng(11);
        std::uniform_real_distribution<double> ux(1.0, 9.0), uy(2.0, 8.0), uz(3.0, 11.0);
        for (int i = 0; i < 500; ++i) {
            const Point3 p{ux(eng), uy(eng), uz(eng)};
            const double expect = 2.0 + 0.5 * p.x - 1.5 * p.y + 3.0 * p.z;
            CHECK(f.interpolate(p) == Catch::Approx(expect).epsilon(1e-12));
        }
    }

    SECTION("interpolation at lattice points returns stored values") {
        auto f = ScalarField::constant(lat, 0.0);
        for (std::size_t i = 0; i < lat.size(); ++i) f.values()[i] = std::sin(0.1 * i);
        for (std::size_t i = 0; i < lat.size(); ++i)
            CHECK(f.interpolate(lat.point(i)) == Catch::Approx(f.at(i)).epsilon(1e-12));
    }

    SECTION("regions: ball membership and subset relation") {
        const Region small = Region::ball(lat, lat.point(lat.size() / 2), 2.5);
        const Region big = Region::ball(lat, lat.point(lat.size() / 2), 6.0);
        CHECK(small.count() > 0);
        CHECK(small.subset_of(big));
        CHECK(!big.subset_of(small));
        CHECK(Region::all(lat).count() == lat.size());
    }

    SECTION("flood fill stops at a value wall") {
        const Lattice line({0, 0, 0}, {1, 1, 1}, {10, 1, 1});
        const auto f = ScalarField::from_function(
            line, [](const Point3& p) { return p.x < 5.0 ? 0.0 : 100.0; });
        const Region left = flood_fill(line, 0, [&](std::size_t i) { return f.at(i) < 50.0; });
        CHECK(left.count() == 5);
        for (std::size_t i = 0; i < 5; ++i) CHECK(left.contains(i));
    }

    SECTION("masks") {
        CHECK(Mask::everything().contains({1e9, -1e9, 0.0}));
        const Mask box = Mask::box({0, 0, 0}, {1, 1, 1});
        CHECK(box.contains({0.5, 0.5, 0.5}));
        CHECK(!box.contains({1.5, 0.5, 0.5}));
        const Mask ball = Mask::ball({0, 0, 0}, 1.0);
        CHECK(ball.contains({0.9, 0, 0}));
        CHECK(!ball.contains({1.1, 0, 0}));
    }
}
