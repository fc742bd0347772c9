#include "lmmreg/em.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <memory>

#include "lmmreg/errors.hpp"
#include "lmmreg/kdtree.hpp"
#include "lmmreg/parallel.hpp"

namespace lmmreg {

namespace {

constexpr int kDim = 3;

std::vector<std::unique_ptr<KdTree>> build_trees(
    const std::vector<PointCloud>& clouds, const LmmState& state) {
    const std::size_t M = clouds.size();
    std::vector<std::unique_ptr<KdTree>> trees(M);
    parallel_for(M, [&](std::size_t i) {
        std::vector<Vec3> moved(clouds[i].points.size());
        for (std::size_t l = 0; l < moved.size(); ++l)
            moved[l] = apply(state.transforms[i], clouds[i].points[l]);
        trees[i] = std::make_unique<KdTree>(std::move(moved));
    });
    return trees;
}

double global_bbox_diagonal(const std::vector<PointCloud>& clouds) {
    Vec3 lo = clouds[0].points[0], hi = lo;
    for (const auto& c : clouds)
        for (const auto& p : c.points) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
    return (hi - lo).norm();
}

void validate(const std::vector<PointCloud>& clouds, const EmConfig& config) {
    if (clouds.size() < 2)
        throw InvalidInput("register: at least 2 point sets required");
    for (const auto& c : clouds) {
        if (c.points.empty())
            throw InvalidInput("register: empty point set '" + c.name + "'");
        for (const auto& p : c.points)
            if (!p.allFinite())
                throw InvalidInput("register: non-finite point in '" + c.name + "'");
    }
    if (config.anchor_index < 0 ||
        static_cast<std::size_t>(config.anchor_index) >= clouds.size())
        throw InvalidInput("register: anchor_index out of range");
}

// Deterministic stride subsample used by the coarse initializer.
std::vector<Vec3> stride_subsample(const PointCloud& cloud, std::size_t cap) {
    const std::size_t stride = std::max<std::size_t>(1, cloud.points.size() / cap);
    std::vector<Vec3> out;
    out.reserve(cloud.points.size() / stride + 1);
    for (std::size_t i = 0; i < cloud.points.size(); i += stride)
        out.push_back(cloud.points[i]);
    return out;
}

Vec3 component_median(const std::vector<Vec3>& pts) {
    Vec3 med;
    std::vector<double> vals(pts.size());
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = pts[i][c];
        const std::size_t mid = vals.size() / 2;
        std::nth_element(vals.begin(), vals.begin() + mid, vals.end());
        med[c] = vals[mid];
    }
    return med;
}

Mat3 euler_zyx(double ax, double ay, double az) {
    return (Eigen::AngleAxisd(az, Vec3::UnitZ()) *
            Eigen::AngleAxisd(ay, Vec3::UnitY()) *
            Eigen::AngleAxisd(ax, Vec3::UnitX()))
        .toRotationMatrix();
}

/// Coarse rigid initializer for a source/target pair. Exhaustive search
/// over a fixed Euler-angle grid, scored by a low quantile of nearest-
/// neighbor L1 distances of a source stride subsample against the full
/// target (robust to outliers and partial overlap). Each candidate gets
/// a median-offset translation plus a vertical scan: when the two sets
/// cover different slabs of the object, median centering is biased along
/// the crop axis, and point-to-point offsets on a smooth surface cannot
/// recover that component. The best few rotationally distinct candidates
/// are then refined locally. EM's own basin covers the residual error.
RigidTransform coarse_pair_init(const PointCloud& target,
                                const PointCloud& source) {
    constexpr std::size_t kCap = 300;
    constexpr double kRangeDeg = 24.0, kStepDeg = 4.0;
    constexpr double kQuantile = 0.3;
    constexpr std::size_t kKeep = 8;

    std::vector<Vec3> src = stride_subsample(source, kCap);
    const Vec3 cs = component_median(src);
    for (auto& p : src) p -= cs;
    std::vector<Vec3> tgt = target.points;
    const Vec3 ct = component_median(tgt);
    for (auto& p : tgt) p -= ct;
    const KdTree tree(std::move(tgt));

    const std::size_t n = src.size();
    const std::size_t q_idx =
        static_cast<std::size_t>(kQuantile * static_cast<double>(n));
    std::vector<double> dists(n);
    std::vector<Vec3> offs(n);
    auto score = [&](const Mat3& R, const Vec3& t) {
        for (std::size_t i = 0; i < n; ++i)
            dists[i] = tree.nearest_l1(R * src[i] + t).second;
        std::nth_element(dists.begin(), dists.begin() + q_idx, dists.end());
        return dists[q_idx];
    };
    auto median_offset = [&](const Mat3& R, const Vec3& t) {
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 moved = R * src[i] + t;
            offs[i] = tree.points()[tree.nearest_l1(moved).first] - moved;
        }
        return component_median(offs);
    };

    struct Candidate {
        double score;
        Mat3 R;
        Vec3 t;
    };

    // Stage 1: Euler grid; keep the best few mutually distinct rotations.
    const double step = kStepDeg * M_PI / 180.0;
    const int half = static_cast<int>(kRangeDeg / kStepDeg);
    std::vector<Candidate> top;
    for (int ix = -half; ix <= half; ++ix)
        for (int iy = -half; iy <= half; ++iy)
            for (int iz = -half; iz <= half; ++iz) {
                const Mat3 R = euler_zyx(ix * step, iy * step, iz * step);
                const Vec3 t0 = median_offset(R, Vec3::Zero());
                Candidate c{std::numeric_limits<double>::infinity(), R,
                            Vec3::Zero()};
                for (double dz = -0.15; dz <= 0.1501; dz += 0.03) {
                    const Vec3 t = t0 + Vec3(0, 0, dz);
                    const double s = score(R, t);
                    if (s < c.score) {
                        c.score = s;
                        c.t = t;
                    }
                }
                bool merged = false;
                for (auto& e : top)
                    if (rotation_error(e.R, R) < 0.12) {
                        if (c.score < e.score) e = c;
                        merged = true;
                        break;
                    }
                if (!merged) {
                    top.push_back(c);
                    std::sort(top.begin(), top.end(),
                              [](const Candidate& a, const Candidate& b) {
                                  return a.score < b.score;
                              });
                    if (top.size() > kKeep) top.pop_back();
                }
            }

    // Stage 2: refine each candidate; coordinate descent over rotation
    // perturbations, a fine vertical scan, and median-offset translation.
    Candidate best{std::numeric_limits<double>::infinity(), Mat3::Identity(),
                   Vec3::Zero()};
    const double deg = M_PI / 180.0;
    for (Candidate c : top) {
        for (const double sd : {2.0, 1.0, 0.5}) {
            const Mat3 base_R = c.R;
            const Vec3 base_t = c.t;
            for (int ix = -1; ix <= 1; ++ix)
                for (int iy = -1; iy <= 1; ++iy)
                    for (int iz = -1; iz <= 1; ++iz) {
                        const Mat3 R =
                            euler_zyx(ix * sd * deg, iy * sd * deg,
                                      iz * sd * deg) *
                            base_R;
                        for (double dz = -0.02; dz <= 0.0201; dz += 0.005) {
                            const Vec3 t = base_t + Vec3(0, 0, dz);
                            const double s = score(R, t);
                            if (s < c.score) {
                                c.score = s;
                                c.R = R;
                                c.t = t;
                            }
                        }
                    }
            for (int it = 0; it < 3; ++it) {
                const Vec3 t = c.t + median_offset(c.R, c.t);
                const double s = score(c.R, t);
                if (s < c.score) {
                    c.score = s;
                    c.t = t;
                } else {
                    break;
                }
            }
        }
        if (c.score < best.score) best = c;
    }

    RigidTransform T;
    T.rotation = best.R;
    T.translation = ct + best.t - best.R * cs;
    return T;
}

}  // namespace

double laplace_log_density(const Vec3& x, const Vec3& mu, double b) {
    return -kDim * std::log(2.0 * b) - l1_distance(x, mu) / b;
}

CorrespondenceTable e_step(const std::vector<PointCloud>& clouds,
                           const LmmState& state) {
    const std::size_t M = clouds.size();
    const auto trees = build_trees(clouds, state);

    CorrespondenceTable table;
    table.others.resize(M);
    table.targets.resize(M);
    table.posteriors.resize(M);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j)
            if (j != i) table.others[i].push_back(static_cast<int>(j));

    const double b = state.scale_b;
    for (std::size_t i = 0; i < M; ++i) {
        const std::size_t n = clouds[i].points.size();
        const std::size_t k = M - 1;
        table.targets[i].resize(n * k);
        table.posteriors[i].resize(n * k);
        const auto& query_points = trees[i]->points();  // already transformed
        parallel_for(n, [&, i](std::size_t l) {
            const Vec3& x = query_points[l];
            std::vector<double> dists(k);
            double dmin = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const int j = table.others[i][c];
                const auto [idx, dist] = trees[j]->nearest_l1(x);
                table.targets[i][l * k + c] = trees[j]->points()[idx];
                dists[c] = dist;
                dmin = std::min(dmin, dist);
            }
            double norm = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                const double beta = std::exp(-(dists[c] - dmin) / b);
                table.posteriors[i][l * k + c] = beta;
                norm += beta;
            }
            for (std::size_t c = 0; c < k; ++c)
                table.posteriors[i][l * k + c] /= norm;
        });
    }
    return table;
}

LmmState m_step(const std::vector<PointCloud>& clouds,
                const CorrespondenceTable& table, const LmmState& state,
                const EmConfig& config) {
    const std::size_t M = clouds.size();
    const std::size_t anchor = static_cast<std::size_t>(config.anchor_index);
    LmmState next = state;

    parallel_for(M, [&](std::size_t i) {
        if (i == anchor) {
            next.transforms[i] = RigidTransform::identity();
            return;
        }
        const std::size_t k = M - 1;
        WlavProblem prob;
        prob.pairs.reserve(clouds[i].points.size() * k);
        for (std::size_t l = 0; l < clouds[i].points.size(); ++l)
            for (std::size_t c = 0; c < k; ++c)
                prob.pairs.push_back({clouds[i].points[l],
                                      table.targets[i][l * k + c],
                                      table.posteriors[i][l * k + c]});
        try {
            const double incumbent_obj =
                wlav_objective(prob, state.transforms[i]);
            SolverReport report;
            if (config.solver == SolverKind::LPA)
                report = solve_wlav_lpa(prob, state.transforms[i],
                                        config.lpa_opts);
            else {
                // Inexact M-step: the solve warm-starts from the incumbent
                // and only needs to descend, so a short inner budget per
                // outer iteration is enough; the remaining refinement is
                // spread across the outer loop.
                AdmmOptions inner = config.admm_opts;
                inner.max_iter = std::min(inner.max_iter, 60);
                report = solve_wlav_admm(prob, state.transforms[i], inner);
            }
            if (report.objective < incumbent_obj)
                next.transforms[i] = report.transform;
        } catch (const DegenerateProblem& e) {
            std::cerr << "warning: set " << i << ": " << e.what()
                      << " (keeping incumbent)\n";
        }
    });

    // Scale update: posterior-weighted mean of L1 deviations at the new
    // transforms, against the E-step's frozen targets. Fixed summation
    // order so serial and parallel runs agree bit for bit.
    double dev_sum = 0.0;
    std::size_t total_points = 0;
    for (std::size_t i = 0; i < M; ++i) {
        const std::size_t k = M - 1;
        total_points += clouds[i].points.size();
        for (std::size_t l = 0; l < clouds[i].points.size(); ++l) {
            const Vec3 moved = apply(next.transforms[i], clouds[i].points[l]);
            for (std::size_t c = 0; c < k; ++c)
                dev_sum += table.posteriors[i][l * k + c] *
                           l1_distance(moved, table.targets[i][l * k + c]);
        }
    }
    next.scale_b =
        std::max(dev_sum / (kDim * static_cast<double>(total_points)),
                 config.b_floor.value_or(0.0));
    next.iteration = state.iteration + 1;
    return next;
}

double neg_objective(const std::vector<PointCloud>& clouds,
                     const CorrespondenceTable& table, const LmmState& state) {
    const std::size_t M = clouds.size();
    const double b = state.scale_b;
    double acc = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        const std::size_t k = M - 1;
        for (std::size_t l = 0; l < clouds[i].points.size(); ++l) {
            const Vec3 moved = apply(state.transforms[i], clouds[i].points[l]);
            for (std::size_t c = 0; c < k; ++c)
                acc += table.posteriors[i][l * k + c] *
                       (l1_distance(moved, table.targets[i][l * k + c]) / b +
                        kDim * std::log(2.0 * b));
        }
    }
    return acc;
}

namespace {

// b initialization plus the joint EM loop, starting from the given poses.
std::pair<LmmState, CorrespondenceTable> run_em(
    const std::vector<PointCloud>& clouds, const EmConfig& cfg,
    std::vector<RigidTransform> initial, const ProgressCallback& progress) {
    const std::size_t M = clouds.size();
    LmmState state;
    state.transforms = std::move(initial);

    if (cfg.b_init) {
        state.scale_b = std::max(*cfg.b_init, *cfg.b_floor);
    } else {
        // Mean L1 distance to the nearest cross-set neighbor at the
        // initial poses, divided by the dimension.
        const auto trees = build_trees(clouds, state);
        double acc = 0.0;
        std::size_t total = 0;
        for (std::size_t i = 0; i < M; ++i) {
            for (const Vec3& p : clouds[i].points) {
                double dmin = std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < M; ++j) {
                    if (j == i) continue;
                    dmin = std::min(dmin, trees[j]->nearest_l1(p).second);
                }
                acc += dmin;
                ++total;
            }
        }
        state.scale_b =
            std::max(acc / (kDim * static_cast<double>(total)), *cfg.b_floor);
    }

    CorrespondenceTable table;
    for (int it = 0; it < cfg.max_em_iters; ++it) {
        table = e_step(clouds, state);
        LmmState next = m_step(clouds, table, state, cfg);

        double max_change = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            const double dr = rotation_error(next.transforms[i].rotation,
                                             state.transforms[i].rotation);
            const double dt = (next.transforms[i].translation -
                               state.transforms[i].translation)
                                  .norm();
            max_change = std::max(max_change, std::max(dr, dt));
        }

        next.neg_obj_history = state.neg_obj_history;
        next.neg_obj_history.push_back(neg_objective(clouds, table, next));
        state = std::move(next);

        if (progress)
            progress({state.iteration, state.neg_obj_history.back(),
                      state.scale_b, max_change});
        if (max_change < cfg.tol_transform) break;
    }
    return {std::move(state), std::move(table)};
}

}  // namespace

std::pair<LmmState, CorrespondenceTable> register_clouds(
    const std::vector<PointCloud>& clouds, const EmConfig& config,
    const ProgressCallback& progress) {
    validate(clouds, config);
    const std::size_t M = clouds.size();

    EmConfig cfg = config;
    if (!cfg.b_floor)
        cfg.b_floor = 1e-9 * global_bbox_diagonal(clouds);

    // EM alone has a short reach here: nearest-neighbor correspondences
    // only pull reliably once the poses are within a few degrees, and
    // with three or more sets the joint iteration can settle into a
    // majority-vote optimum where two mutually aligned sets outvote the
    // pinned anchor under the L1 objective. Each non-anchor set is
    // therefore seeded by a coarse grid search against the anchor before
    // the joint refinement starts.
    const std::size_t anchor = static_cast<std::size_t>(cfg.anchor_index);
    std::vector<RigidTransform> init(M, RigidTransform::identity());
    for (std::size_t i = 0; i < M; ++i) {
        if (i == anchor) continue;
        init[i] = coarse_pair_init(clouds[anchor], clouds[i]);
    }

    // With more than two sets, each seed is first refined by a pairwise
    // EM against the anchor alone. The joint model can freeze a seed in
    // place when another set is a near-duplicate of it (their mutual
    // distances are ~0, so the posteriors collapse onto the duplicate and
    // the anchor's pull vanishes as b shrinks); the pairwise stage has no
    // such distraction and lands each set on the anchor exactly.
    if (M > 2) {
        EmConfig pair_cfg = cfg;
        pair_cfg.anchor_index = 0;
        pair_cfg.b_init.reset();
        for (std::size_t i = 0; i < M; ++i) {
            if (i == anchor) continue;
            const std::vector<PointCloud> pair = {clouds[anchor], clouds[i]};
            auto [pair_state, pair_table] =
                run_em(pair, pair_cfg,
                       {RigidTransform::identity(), init[i]}, nullptr);
            init[i] = pair_state.transforms[1];
        }
    }

    return run_em(clouds, cfg, std::move(init), progress);
}

}  // namespace lmmreg
