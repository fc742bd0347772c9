#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "lmmreg/bench.hpp"
#include "lmmreg/errors.hpp"
#include "lmmreg/kdtree.hpp"
#include "lmmreg/rng.hpp"

using namespace lmmreg;

namespace {

PointCloud grid_cloud(int n) {
    PointCloud c;
    for (int i = 0; i < n; ++i)
        c.points.emplace_back(0.1 * i, std::sin(0.37 * i), 0.05 * i * i);
    return c;
}

Vec3 bbox_min(const PointCloud& c) {
    Vec3 lo = c.points.front();
    for (const auto& p : c.points) lo = lo.cwiseMin(p);
    return lo;
}

Vec3 bbox_max(const PointCloud& c) {
    Vec3 hi = c.points.front();
    for (const auto& p : c.points) hi = hi.cwiseMax(p);
    return hi;
}

}  // namespace

TEST_CASE("downsample") {
    const PointCloud base = grid_cloud(500);

    SUBCASE("keeps everything when n >= N") {
        const PointCloud d = downsample(base, 500, 1);
        REQUIRE(d.size() == 500);
        for (std::size_t i = 0; i < 500; ++i)
            CHECK(d.points[i] == base.points[i]);
        CHECK(downsample(base, 900, 2).size() == 500);
    }

    SUBCASE("subset, order preserved, no repeats") {
        const PointCloud d = downsample(base, 120, 3);
        REQUIRE(d.size() == 120);
        std::set<int> indices;
        int prev = -1;
        for (const auto& p : d.points) {
            const int idx = static_cast<int>(std::lround(p.x() / 0.1));
            CHECK(p == base.points[idx]);
            CHECK(idx > prev);  // original order
            CHECK(indices.insert(idx).second);
            prev = idx;
        }
    }

    SUBCASE("deterministic in the seed") {
        const PointCloud a = downsample(base, 77, 4);
        const PointCloud b = downsample(base, 77, 4);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a.points[i] == b.points[i]);
        const PointCloud c = downsample(base, 77, 5);
        bool same = c.size() == a.size();
        if (same)
            for (std::size_t i = 0; i < a.size(); ++i)
                same = same && a.points[i] == c.points[i];
        CHECK(!same);
    }
}

TEST_CASE("crop_view") {
    PointCloud base;
    for (int i = 0; i < 10; ++i) base.points.emplace_back(i, -i, i);  // z = i

    SUBCASE("even views drop the top slab") {
        const PointCloud c = crop_view(base, 0, 0.25);  // floor(2.5) = 2 gone
        REQUIRE(c.size() == 8);
        for (const auto& p : c.points) CHECK(p.z() <= 7.0);
    }

    SUBCASE("odd views drop the bottom slab") {
        const PointCloud c = crop_view(base, 1, 0.33);  // floor(3.3) = 3 gone
        REQUIRE(c.size() == 7);
        for (const auto& p : c.points) CHECK(p.z() >= 3.0);
    }

    SUBCASE("fraction 0 is a no-op, full removal throws") {
        CHECK(crop_view(base, 0, 0.0).size() == 10);
        CHECK_THROWS_AS(crop_view(base, 2, 1.0), InvalidInput);
        CHECK_THROWS_AS(crop_view(PointCloud{}, 0, 0.5), WouldBeEmpty);
    }

    SUBCASE("survivors keep their input order") {
        Rng rng(6);
        PointCloud shuffled;
        for (int i = 0; i < 200; ++i)
            shuffled.points.emplace_back(rng.uniform(), rng.uniform(),
                                         rng.uniform());
        const PointCloud c = crop_view(shuffled, 0, 0.4);
        REQUIRE(c.size() == 120);
        std::size_t cursor = 0;
        for (const auto& p : shuffled.points) {
            if (cursor < c.size() && p == c.points[cursor]) ++cursor;
        }
        CHECK(cursor == c.size());
    }
}

TEST_CASE("make_ground_truth") {
    SUBCASE("view 0 is the identity, matrices are rotations") {
        const GroundTruth gt = make_ground_truth(5, 30.0, 0.5, 7);
        REQUIRE(gt.transforms.size() == 5);
        CHECK((gt.transforms[0].rotation - Mat3::Identity()).norm() == 0.0);
        CHECK(gt.transforms[0].translation.norm() == 0.0);
        for (const auto& T : gt.transforms) {
            CHECK(is_rotation(T.rotation));
            CHECK(T.translation.lpNorm<Eigen::Infinity>() <= 0.5);
        }
    }

    SUBCASE("angles stay inside the composed bound") {
        // Rz*Ry*Rx with each |angle| <= a has total angle <= 3a; Monte Carlo
        // over many seeds against a slightly padded bound.
        const double a = 20.0 * std::numbers::pi / 180.0;
        for (std::uint64_t seed = 0; seed < 300; ++seed) {
            const GroundTruth gt = make_ground_truth(3, 20.0, 0.0, seed);
            for (const auto& T : gt.transforms)
                CHECK(rotation_error(T.rotation, Mat3::Identity()) <=
                      3.0 * a + 1e-12);
        }
    }

    SUBCASE("deterministic") {
        const GroundTruth a = make_ground_truth(4, 15.0, 0.2, 8);
        const GroundTruth b = make_ground_truth(4, 15.0, 0.2, 8);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK((a.transforms[i].rotation - b.transforms[i].rotation).norm() ==
                  0.0);
            CHECK((a.transforms[i].translation - b.transforms[i].translation)
                      .norm() == 0.0);
        }
    }
}

TEST_CASE("add_noise_snr") {
    const PointCloud base = make_test_shape(20000, 9);

    SUBCASE("nullopt passes through untouched") {
        const PointCloud out = add_noise_snr(base, std::nullopt, 10);
        REQUIRE(out.size() == base.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out.points[i] == base.points[i]);
    }

    SUBCASE("empirical SNR lands near the target") {
        for (double snr_db : {30.0, 50.0, 70.0}) {
            const PointCloud noisy = add_noise_snr(base, snr_db, 11);
            Vec3 mean = Vec3::Zero();
            for (const auto& p : base.points) mean += p;
            mean /= static_cast<double>(base.size());
            double sig = 0.0, noi = 0.0;
            for (std::size_t i = 0; i < base.size(); ++i) {
                sig += (base.points[i] - mean).squaredNorm();
                noi += (noisy.points[i] - base.points[i]).squaredNorm();
            }
            const double snr_emp = 10.0 * std::log10(sig / noi);
            CHECK(snr_emp == doctest::Approx(snr_db).epsilon(0.05));
        }
    }
}

TEST_CASE("add_outliers") {
    const PointCloud base = make_test_shape(2000, 12);

    SUBCASE("count, placement, and original preservation") {
        const PointCloud out = add_outliers(base, 0.3, 13);
        REQUIRE(out.size() == 2600);
        for (std::size_t i = 0; i < base.size(); ++i)
            CHECK(out.points[i] == base.points[i]);
        const Vec3 lo = bbox_min(base), hi = bbox_max(base);
        for (std::size_t i = base.size(); i < out.size(); ++i) {
            CHECK((out.points[i].array() >= lo.array()).all());
            CHECK((out.points[i].array() <= hi.array()).all());
        }
        CHECK(add_outliers(base, 0.0, 14).size() == base.size());
    }

    SUBCASE("fraction outside [0, 1) is rejected") {
        CHECK_THROWS_AS(add_outliers(base, 1.5, 15), InvalidInput);
        CHECK_THROWS_AS(add_outliers(base, -0.1, 15), InvalidInput);
    }

    SUBCASE("outliers look uniform in the box (chi-square, alpha = 0.01)") {
        const PointCloud big = make_test_shape(9000, 120);
        const PointCloud out = add_outliers(big, 0.9, 15);  // 8100 outliers
        const Vec3 lo = bbox_min(big), hi = bbox_max(big);
        const int bins = 4;  // 4^3 = 64 cells, ~125 expected per cell
        std::vector<int> counts(bins * bins * bins, 0);
        const std::size_t n_out = out.size() - big.size();
        for (std::size_t i = big.size(); i < out.size(); ++i) {
            Vec3 u = (out.points[i] - lo).cwiseQuotient(hi - lo);
            int ix = std::min(bins - 1, static_cast<int>(u.x() * bins));
            int iy = std::min(bins - 1, static_cast<int>(u.y() * bins));
            int iz = std::min(bins - 1, static_cast<int>(u.z() * bins));
            ++counts[(ix * bins + iy) * bins + iz];
        }
        const double expected =
            static_cast<double>(n_out) / (bins * bins * bins);
        double chi2 = 0.0;
        for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
        // chi-square(63) 0.995 quantile ~ 95.65; two-sided at alpha = 0.01.
        CHECK(chi2 < 95.65);
        CHECK(chi2 > 37.07);
    }
}

TEST_CASE("make_views") {
    const PointCloud base = make_test_shape(3000, 16);
    PerturbSpec spec;
    spec.views = 3;
    spec.n_points = 1000;
    spec.crop_fraction = 0.2;
    spec.rot_range_deg = 15.0;
    spec.seed = 17;

    SUBCASE("view count, sizes, and gauge") {
        const auto [views, gt] = make_views(base, spec);
        REQUIRE(views.size() == 3);
        REQUIRE(gt.transforms.size() == 3);
        for (const auto& v : views) CHECK(v.size() == 800);  // 1000 - 200
        CHECK((gt.transforms[0].rotation - Mat3::Identity()).norm() == 0.0);
    }

    SUBCASE("ground truth maps each noiseless view back to the base") {
        const auto [views, gt] = make_views(base, spec);
        KdTree tree(base.points);
        for (std::size_t i = 0; i < views.size(); ++i) {
            for (const auto& p : views[i].points)
                CHECK(tree.nearest_l1(apply(gt.transforms[i], p)).second <
                      1e-12);
        }
    }

    SUBCASE("outliers change size, noise does not") {
        PerturbSpec s2 = spec;
        s2.outlier_fraction = 0.5;
        const auto [views, gt] = make_views(base, s2);
        for (const auto& v : views) CHECK(v.size() == 1200);
        PerturbSpec s3 = spec;
        s3.snr_db = 50.0;
        const auto [nviews, ngt] = make_views(base, s3);
        for (const auto& v : nviews) CHECK(v.size() == 800);
    }

    SUBCASE("deterministic in the seed") {
        const auto [v1, g1] = make_views(base, spec);
        const auto [v2, g2] = make_views(base, spec);
        for (std::size_t i = 0; i < v1.size(); ++i) {
            REQUIRE(v1[i].size() == v2[i].size());
            for (std::size_t l = 0; l < v1[i].size(); ++l)
                CHECK(v1[i].points[l] == v2[i].points[l]);
        }
    }
}

TEST_CASE("evaluate") {
    SUBCASE("hand computation: single rotated view") {
        LmmState state;
        state.transforms.assign(2, RigidTransform::identity());
        GroundTruth gt;
        gt.transforms.assign(2, RigidTransform::identity());
        gt.transforms[1].rotation = exp_map(Vec3(0.1, 0, 0));
        const TrialResult res = evaluate(state, gt);
        CHECK(res.e_R == doctest::Approx(0.05).epsilon(1e-10));
        CHECK(res.e_t == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(res.per_set_rot[0] == doctest::Approx(0.0));
        CHECK(res.per_set_rot[1] == doctest::Approx(0.1).epsilon(1e-10));
    }

    SUBCASE("translation hand computation") {
        LmmState state;
        state.transforms.assign(3, RigidTransform::identity());
        GroundTruth gt;
        gt.transforms.assign(3, RigidTransform::identity());
        gt.transforms[1].translation = Vec3(0.3, 0, 0);
        gt.transforms[2].translation = Vec3(0, -0.6, 0);
        const TrialResult res = evaluate(state, gt);
        CHECK(res.e_t == doctest::Approx(0.3).epsilon(1e-12));
    }

    SUBCASE("gauge invariance: pre-composed ground truth") {
        Rng rng(18);
        LmmState state;
        GroundTruth gt;
        for (int i = 0; i < 3; ++i) {
            RigidTransform T;
            T.rotation = exp_map(
                Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
            T.translation =
                Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            gt.transforms.push_back(T);
            state.transforms.push_back(T);
        }
        // Both in the same arbitrary gauge: normalizing gt by its anchor
        // must reproduce exact agreement only when the state is normalized
        // too, so compare a normalized state against the raw gt.
        const RigidTransform fix = inverse(gt.transforms[0]);
        for (auto& T : state.transforms) T = compose(fix, T);
        const TrialResult res = evaluate(state, gt);
        CHECK(res.e_R < 1e-7);
        CHECK(res.e_t < 1e-7);
    }

    SUBCASE("mismatched sizes throw") {
        LmmState state;
        state.transforms.assign(2, RigidTransform::identity());
        GroundTruth gt;
        gt.transforms.assign(3, RigidTransform::identity());
        CHECK_THROWS_AS(evaluate(state, gt), MismatchedM);
    }
}

TEST_CASE("run_sweep") {
    const PointCloud base = make_test_shape(1500, 19);
    PerturbSpec spec;
    spec.views = 3;
    spec.n_points = 300;
    spec.crop_fraction = 0.15;
    spec.rot_range_deg = 10.0;
    EmConfig cfg;
    cfg.max_em_iters = 20;

    SUBCASE("shape of the output and determinism") {
        const SweepTable t1 =
            run_sweep(base, {spec}, {SolverKind::LPA, SolverKind::ADMM}, 2, 20,
                      cfg);
        REQUIRE(t1.rows.size() == 4);
        REQUIRE(t1.cells.size() == 2);
        for (const auto& cell : t1.cells) CHECK(cell.completed == 2);
        CHECK(t1.rows[0].solver == "lpa");
        CHECK(t1.cells[1].solver == "admm");

        const SweepTable t2 =
            run_sweep(base, {spec}, {SolverKind::LPA, SolverKind::ADMM}, 2, 20,
                      cfg);
        for (std::size_t i = 0; i < t1.rows.size(); ++i) {
            CHECK(t1.rows[i].e_R == t2.rows[i].e_R);
            CHECK(t1.rows[i].e_t == t2.rows[i].e_t);
        }
    }

    SUBCASE("median matches the rows") {
        const SweepTable t =
            run_sweep(base, {spec}, {SolverKind::LPA}, 3, 21, cfg);
        std::vector<double> ers;
        for (const auto& r : t.rows) ers.push_back(r.e_R);
        std::sort(ers.begin(), ers.end());
        CHECK(t.cells[0].median_e_R == ers[1]);
    }

    SUBCASE("empty sweep throws") {
        CHECK_THROWS_AS(run_sweep(base, {}, {SolverKind::LPA}, 1, 0, cfg),
                        InvalidInput);
    }
}

TEST_CASE("make_test_shape") {
    const PointCloud a = make_test_shape(1000, 30);
    const PointCloud b = make_test_shape(1000, 30);
    REQUIRE(a.size() == 1000);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.points[i] == b.points[i]);
    const Vec3 diag = bbox_max(a) - bbox_min(a);
    CHECK(diag.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(make_test_shape(1000, 31).points[0] != a.points[0]);
}

TEST_CASE("solver_name") {
    CHECK(std::string(solver_name(SolverKind::LPA)) == "lpa");
    CHECK(std::string(solver_name(SolverKind::ADMM)) == "admm");
}
