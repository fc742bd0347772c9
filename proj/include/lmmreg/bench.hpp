#ifndef LMMREG_BENCH_HPP
#define LMMREG_BENCH_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lmmreg/em.hpp"
#include "lmmreg/geometry.hpp"

namespace lmmreg {

/// Synthetic perturbation protocol: downsample, per-view crop, ground-truth
/// motion, SNR-calibrated Gaussian noise, uniform box outliers.
struct PerturbSpec {
    int views = 4;
    int n_points = 4000;
    double crop_fraction = 0.25;
    double rot_range_deg = 20.0;
    double trans_range = 0.0;
    std::optional<double> snr_db;  // nullopt = no noise
    double outlier_fraction = 0.0;
    std::uint64_t seed = 0;
};

struct GroundTruth {
    std::vector<RigidTransform> transforms;
};

struct TrialResult {
    double e_R = 0.0;  // radians
    double e_t = 0.0;
    std::vector<double> per_set_rot;
    std::vector<double> per_set_trans;
    double wall_time_s = 0.0;
    std::string solver;
    PerturbSpec spec;
    bool ok = true;
    int spec_index = 0;
    int trial = 0;
};

struct SweepCell {
    int spec_index = 0;
    std::string solver;
    double median_e_R = 0.0;
    double median_e_t = 0.0;
    int completed = 0;
};

struct SweepTable {
    std::vector<TrialResult> rows;
    std::vector<SweepCell> cells;
};

/// Uniform random subset of size min(n, N) without replacement; input
/// order of the survivors is preserved.
PointCloud downsample(const PointCloud& cloud, int n, std::uint64_t seed);

/// Removes the fraction of points with largest (even view) or smallest
/// (odd view) z coordinate. Throws WouldBeEmpty if nothing survives.
PointCloud crop_view(const PointCloud& cloud, int view_index, double fraction);

/// Per view: three uniform axis angles composed Rz*Ry*Rx plus a uniform
/// translation; view 0 is forced to identity to match the engine's gauge.
GroundTruth make_ground_truth(int M, double rot_range_deg, double trans_range,
                              std::uint64_t seed);

/// Adds i.i.d. per-coordinate Gaussian noise calibrated so the centered
/// signal power over the noise power hits snr_db. nullopt passes through.
PointCloud add_noise_snr(const PointCloud& cloud, std::optional<double> snr_db,
                         std::uint64_t seed);

/// Appends round(fraction * N) points uniform in the cloud's axis-aligned
/// bounding box; originals stay first and unchanged.
PointCloud add_outliers(const PointCloud& cloud, double fraction,
                        std::uint64_t seed);

/// Full protocol: one downsample, then per view crop -> inverse-GT motion
/// -> noise -> outliers. The returned ground truth aligns each view back
/// into the base frame.
std::pair<std::vector<PointCloud>, GroundTruth> make_views(
    const PointCloud& base, const PerturbSpec& spec);

/// Eq.-25 style mean errors over all views. If gt's anchor transform is
/// not the identity, every gt transform is first left-composed by its
/// inverse so both sides share the gauge.
TrialResult evaluate(const LmmState& state, const GroundTruth& gt,
                     int anchor = 0);

/// Full factorial specs x solvers x trials; per-trial seeds are derived
/// from (seed, cell, trial) so schedules cannot change results. Failed
/// trials become rows with ok = false; medians skip them.
SweepTable run_sweep(const PointCloud& base,
                     const std::vector<PerturbSpec>& specs,
                     const std::vector<SolverKind>& solvers,
                     int trials_per_cell, std::uint64_t seed,
                     const EmConfig& base_config = {});

/// Deterministic sphere-with-bumps test shape, scaled to a unit bounding
/// box diagonal.
PointCloud make_test_shape(int n, std::uint64_t seed);

const char* solver_name(SolverKind kind);

}  // namespace lmmreg

#endif
