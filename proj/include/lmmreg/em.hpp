#ifndef LMMREG_EM_HPP
#define LMMREG_EM_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lmmreg/geometry.hpp"
#include "lmmreg/wlav.hpp"

namespace lmmreg {

struct PointCloud {
    std::vector<Vec3> points;
    std::string name;

    std::size_t size() const { return points.size(); }
};

/// All model parameters: one rigid transform per set plus the shared
/// Laplacian scale. The anchor set's transform is held at identity.
struct LmmState {
    std::vector<RigidTransform> transforms;
    double scale_b = 1.0;
    int iteration = 0;
    std::vector<double> neg_obj_history;  // -f per EM iteration
};

/// E-step output. For set i, row l, the k-th entry runs over the other
/// sets in increasing index order (others[i][k]); flat index l*(M-1)+k.
struct CorrespondenceTable {
    std::vector<std::vector<int>> others;
    std::vector<std::vector<Vec3>> targets;
    std::vector<std::vector<double>> posteriors;
};

enum class SolverKind { LPA, ADMM };

struct EmConfig {
    int max_em_iters = 50;
    double tol_transform = 1e-7;
    std::optional<double> b_init;   // nullopt = auto from identity-pose NN
    std::optional<double> b_floor;  // nullopt = 1e-9 * global bbox diagonal
    SolverKind solver = SolverKind::LPA;
    LpaOptions lpa_opts;
    AdmmOptions admm_opts;
    int anchor_index = 0;
    std::uint64_t seed = 0;
};

struct ProgressRecord {
    int iteration;
    double neg_obj;
    double b;
    double max_change;
};

using ProgressCallback = std::function<void(const ProgressRecord&)>;

/// Log of the d=3 Laplacian density: -3 ln(2b) - ||x - mu||_1 / b.
double laplace_log_density(const Vec3& x, const Vec3& mu, double b);

/// Transforms every cloud, builds one L1 kd-tree per transformed cloud,
/// and fills correspondence targets and posteriors. Posteriors are
/// computed in shifted-log space (the smallest deviation is subtracted
/// before exponentiation).
CorrespondenceTable e_step(const std::vector<PointCloud>& clouds,
                           const LmmState& state);

/// Per-set WLAV solve with targets and posteriors frozen from the E-step,
/// followed by the scale update. Results are accepted per set only if
/// they lower that set's weighted-L1 objective; the anchor keeps identity.
LmmState m_step(const std::vector<PointCloud>& clouds,
                const CorrespondenceTable& table, const LmmState& state,
                const EmConfig& config);

/// -f evaluated with the table's targets/posteriors at the state's
/// transforms and scale: sum of alpha * (||.||_1 / b + 3 ln 2b).
double neg_objective(const std::vector<PointCloud>& clouds,
                     const CorrespondenceTable& table, const LmmState& state);

/// Full EM loop. Throws InvalidInput for M < 2 or an empty cloud.
std::pair<LmmState, CorrespondenceTable> register_clouds(
    const std::vector<PointCloud>& clouds, const EmConfig& config,
    const ProgressCallback& progress = nullptr);

}  // namespace lmmreg

#endif
