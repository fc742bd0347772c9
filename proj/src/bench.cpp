#include "lmmreg/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "lmmreg/errors.hpp"
#include "lmmreg/rng.hpp"

namespace lmmreg {

namespace {

// Stream tags keep per-stage RNG draws independent of each other.
enum : std::uint64_t {
    kTagDownsample = 0x10,
    kTagGroundTruth = 0x20,
    kTagNoise = 0x30,
    kTagOutliers = 0x40,
    kTagTrial = 0x50,
};

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

const char* solver_name(SolverKind kind) {
    return kind == SolverKind::LPA ? "lpa" : "admm";
}

PointCloud downsample(const PointCloud& cloud, int n, std::uint64_t seed) {
    const std::size_t N = cloud.points.size();
    if (n <= 0) throw InvalidInput("downsample: n must be >= 1");
    if (static_cast<std::size_t>(n) >= N) return cloud;

    // Partial Fisher-Yates over the index set, then sort the chosen
    // indices so the survivors keep their input order.
    Rng rng(seed);
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {
        const std::size_t j = i + rng.uniform_index(N - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());

    PointCloud out;
    out.name = cloud.name;
    out.points.reserve(n);
    for (std::size_t i : idx) out.points.push_back(cloud.points[i]);
    return out;
}

PointCloud crop_view(const PointCloud& cloud, int view_index, double fraction) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw InvalidInput("crop_view: fraction must be in [0, 1)");
    const std::size_t N = cloud.points.size();
    const std::size_t removed =
        static_cast<std::size_t>(std::floor(fraction * static_cast<double>(N)));
    if (removed >= N) throw WouldBeEmpty("crop_view: would remove every point");
    if (removed == 0) return cloud;

    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    const bool drop_top = (view_index % 2 == 0);
    // Stable z-order (ties by index) so the removed slab is deterministic.
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double za = cloud.points[a].z(), zb = cloud.points[b].z();
        return za != zb ? za < zb : a < b;
    });
    std::vector<bool> keep(N, true);
    for (std::size_t k = 0; k < removed; ++k)
        keep[drop_top ? idx[N - 1 - k] : idx[k]] = false;

    PointCloud out;
    out.name = cloud.name;
    out.points.reserve(N - removed);
    for (std::size_t i = 0; i < N; ++i)
        if (keep[i]) out.points.push_back(cloud.points[i]);
    return out;
}

GroundTruth make_ground_truth(int M, double rot_range_deg, double trans_range,
                              std::uint64_t seed) {
    if (M < 2) throw InvalidInput("make_ground_truth: M must be >= 2");
    Rng rng(mix_seed(seed, kTagGroundTruth));
    const double rad = rot_range_deg * M_PI / 180.0;
    GroundTruth gt;
    gt.transforms.resize(M);
    for (int i = 0; i < M; ++i) {
        const double ax = rng.uniform(-rad, rad);
        const double ay = rng.uniform(-rad, rad);
        const double az = rng.uniform(-rad, rad);
        RigidTransform T;
        T.rotation = exp_map(Vec3(0, 0, az)) * exp_map(Vec3(0, ay, 0)) *
                     exp_map(Vec3(ax, 0, 0));
        for (int c = 0; c < 3; ++c)
            T.translation[c] = rng.uniform(-trans_range, trans_range);
        gt.transforms[i] = T;
    }
    gt.transforms[0] = RigidTransform::identity();  // engine gauge
    return gt;
}

PointCloud add_noise_snr(const PointCloud& cloud, std::optional<double> snr_db,
                         std::uint64_t seed) {
    if (!snr_db) return cloud;
    const std::size_t N = cloud.points.size();
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : cloud.points) centroid += p;
    centroid /= static_cast<double>(N);
    double signal_power = 0.0;
    for (const auto& p : cloud.points) signal_power += (p - centroid).squaredNorm();
    signal_power /= static_cast<double>(N);

    const double noise_power = signal_power * std::pow(10.0, -*snr_db / 10.0);
    const double sigma = std::sqrt(noise_power / 3.0);  // per coordinate

    Rng rng(mix_seed(seed, kTagNoise));
    PointCloud out = cloud;
    for (auto& p : out.points)
        for (int c = 0; c < 3; ++c) p[c] += sigma * rng.normal();
    return out;
}

PointCloud add_outliers(const PointCloud& cloud, double fraction,
                        std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw InvalidInput("add_outliers: fraction must be in [0, 1)");
    const std::size_t N = cloud.points.size();
    const std::size_t extra = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(N)));
    if (extra == 0) return cloud;

    Vec3 lo = cloud.points[0], hi = lo;
    for (const auto& p : cloud.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    Rng rng(mix_seed(seed, kTagOutliers));
    PointCloud out = cloud;
    out.points.reserve(N + extra);
    for (std::size_t k = 0; k < extra; ++k) {
        Vec3 p;
        for (int c = 0; c < 3; ++c) p[c] = rng.uniform(lo[c], hi[c]);
        out.points.push_back(p);
    }
    return out;
}

std::pair<std::vector<PointCloud>, GroundTruth> make_views(
    const PointCloud& base, const PerturbSpec& spec) {
    const PointCloud down =
        downsample(base, spec.n_points, mix_seed(spec.seed, kTagDownsample));
    const GroundTruth gt = make_ground_truth(spec.views, spec.rot_range_deg,
                                             spec.trans_range, spec.seed);
    std::vector<PointCloud> views;
    views.reserve(spec.views);
    for (int i = 0; i < spec.views; ++i) {
        PointCloud v = crop_view(down, i, spec.crop_fraction);
        const RigidTransform to_view = inverse(gt.transforms[i]);
        for (auto& p : v.points) p = apply(to_view, p);
        v = add_noise_snr(v, spec.snr_db, mix_seed(spec.seed, kTagNoise + i));
        v = add_outliers(v, spec.outlier_fraction,
                         mix_seed(spec.seed, kTagOutliers + i));
        v.name = "view_" + std::to_string(i);
        views.push_back(std::move(v));
    }
    return {std::move(views), gt};
}

TrialResult evaluate(const LmmState& state, const GroundTruth& gt, int anchor) {
    const std::size_t M = state.transforms.size();
    if (M != gt.transforms.size())
        throw MismatchedM("evaluate: state has " + std::to_string(M) +
                          " views, ground truth has " +
                          std::to_string(gt.transforms.size()));

    std::vector<RigidTransform> g = gt.transforms;
    const RigidTransform& ga = g[anchor];
    if ((ga.rotation - Mat3::Identity()).norm() > 0.0 ||
        ga.translation.norm() > 0.0) {
        const RigidTransform fix = inverse(ga);
        for (auto& t : g) t = compose(fix, t);
    }

    TrialResult res;
    for (std::size_t i = 0; i < M; ++i) {
        const double er =
            rotation_error(state.transforms[i].rotation, g[i].rotation);
        const double et =
            translation_error(state.transforms[i].translation, g[i].translation);
        res.per_set_rot.push_back(er);
        res.per_set_trans.push_back(et);
        res.e_R += er;
        res.e_t += et;
    }
    res.e_R /= static_cast<double>(M);
    res.e_t /= static_cast<double>(M);
    return res;
}

SweepTable run_sweep(const PointCloud& base,
                     const std::vector<PerturbSpec>& specs,
                     const std::vector<SolverKind>& solvers,
                     int trials_per_cell, std::uint64_t seed,
                     const EmConfig& base_config) {
    if (specs.empty() || solvers.empty() || trials_per_cell < 1)
        throw InvalidInput("run_sweep: empty sweep");

    SweepTable table;
    int cell_index = 0;
    for (std::size_t si = 0; si < specs.size(); ++si) {
        for (const SolverKind solver : solvers) {
            std::vector<double> ers, ets;
            for (int trial = 0; trial < trials_per_cell; ++trial) {
                PerturbSpec spec = specs[si];
                spec.seed = mix_seed(mix_seed(seed, kTagTrial + cell_index),
                                     trial);
                TrialResult row;
                row.solver = solver_name(solver);
                row.spec = spec;
                row.spec_index = static_cast<int>(si);
                row.trial = trial;
                try {
                    const auto [views, gt] = make_views(base, spec);
                    EmConfig cfg = base_config;
                    cfg.solver = solver;
                    cfg.seed = spec.seed;
                    const auto t0 = std::chrono::steady_clock::now();
                    const auto [state, tbl] = register_clouds(views, cfg);
                    const auto t1 = std::chrono::steady_clock::now();
                    TrialResult scored = evaluate(state, gt, cfg.anchor_index);
                    row.e_R = scored.e_R;
                    row.e_t = scored.e_t;
                    row.per_set_rot = std::move(scored.per_set_rot);
                    row.per_set_trans = std::move(scored.per_set_trans);
                    row.wall_time_s =
                        std::chrono::duration<double>(t1 - t0).count();
                    ers.push_back(row.e_R);
                    ets.push_back(row.e_t);
                } catch (const std::exception&) {
                    row.ok = false;
                    row.e_R = row.e_t = std::numeric_limits<double>::quiet_NaN();
                }
                table.rows.push_back(std::move(row));
            }
            SweepCell cell;
            cell.spec_index = static_cast<int>(si);
            cell.solver = solver_name(solver);
            cell.median_e_R = median(ers);
            cell.median_e_t = median(ets);
            cell.completed = static_cast<int>(ers.size());
            table.cells.push_back(std::move(cell));
            ++cell_index;
        }
    }
    return table;
}

PointCloud make_test_shape(int n, std::uint64_t seed) {
    Rng rng(seed);
    constexpr int kBumps = 12;
    std::vector<Vec3> centers(kBumps);
    std::vector<double> amp(kBumps), width(kBumps);
    for (int k = 0; k < kBumps; ++k) {
        Vec3 u;
        do {
            for (int c = 0; c < 3; ++c) u[c] = rng.uniform(-1.0, 1.0);
        } while (u.squaredNorm() > 1.0 || u.squaredNorm() < 1e-6);
        centers[k] = u.normalized();
        amp[k] = rng.uniform(0.1, 0.35);
        width[k] = rng.uniform(0.2, 0.5);
    }

    PointCloud out;
    out.name = "test_shape";
    out.points.reserve(n);
    for (int i = 0; i < n; ++i) {
        Vec3 u;
        do {
            for (int c = 0; c < 3; ++c) u[c] = rng.uniform(-1.0, 1.0);
        } while (u.squaredNorm() > 1.0 || u.squaredNorm() < 1e-6);
        u.normalize();
        double r = 1.0;
        for (int k = 0; k < kBumps; ++k) {
            const double ang = std::acos(std::clamp(u.dot(centers[k]), -1.0, 1.0));
            r += amp[k] * std::exp(-0.5 * ang * ang / (width[k] * width[k]));
        }
        // Anisotropic axes so the surface has no cheap rotational slide.
        out.points.push_back((r * u).cwiseProduct(Vec3(1.0, 0.72, 0.55)));
    }

    Vec3 lo = out.points[0], hi = lo;
    for (const auto& p : out.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double diag = (hi - lo).norm();
    for (auto& p : out.points) p /= diag;
    return out;
}

}  // namespace lmmreg
