#ifndef LMMREG_WLAV_HPP
#define LMMREG_WLAV_HPP

#include <Eigen/Core>
#include <vector>

#include "lmmreg/geometry.hpp"

namespace lmmreg {

/// Weighted L1 rigid-alignment problem:
///   min_{R in SO(3), t}  sum_i w_i * || R p_i + t - q_i ||_1
struct WlavPair {
    Vec3 p;    // source
    Vec3 q;    // target
    double w;  // nonnegative weight
};

struct WlavProblem {
    std::vector<WlavPair> pairs;
};

/// Linearized L1 problem min ||A x - b||_1 over x = [r, t], with the
/// row-block layout [-w_i * skew(p_i) | w_i * I3] and b = w_i (q_i - p_i),
/// so that ||A*0 - b||_1 equals the objective at the linearization point.
struct LpProblem {
    Eigen::MatrixXd A;  // 3n x 6
    Eigen::VectorXd b;  // 3n
    int n = 0;          // pair count
};

enum class SolveStatus { Converged, MaxIterations, Degraded };

struct SolverReport {
    RigidTransform transform;
    double objective = 0.0;  // final weighted-L1 value
    int iterations = 0;
    bool converged = false;
    double primal_residual = 0.0;  // ADMM: max_i ||z_i - s_i||_inf at exit
    double dual_residual = 0.0;    // ADMM: rho * max_i ||dz_i||_inf at exit
};

struct LpaOptions {
    double tol_increment = 1e-10;  // stop when ||[r, t]||_inf drops below
    int max_outer = 10;
    double lp_tol = 1e-8;  // interior-point relative gap / KKT residual
    int lp_max_iter = 100;
};

struct AdmmOptions {
    double rho = 1.0;
    double tol_primal = 1e-8;
    double tol_dual = 1e-8;
    int max_iter = 500;
};

double wlav_objective(const WlavProblem& prob, const RigidTransform& T);

/// Linearization about R = I, t = 0 (incremental convention: callers
/// pre-transform sources by the incumbent).
LpProblem linearize(const WlavProblem& prob);

/// min ||A x - b||_1 by a Mehrotra predictor-corrector primal-dual
/// interior-point method on the standard LP reformulation. Optimality is
/// certified by relative duality gap <= tol; if the iteration cap is hit
/// first, the best iterate is returned with status Degraded.
std::pair<Eigen::VectorXd, SolveStatus> solve_lp_l1(const LpProblem& lp,
                                                    double tol = 1e-8,
                                                    int max_iter = 100);

/// Soft-thresholding, the proximal operator of lambda * |.|.
double shrinkage(double x, double lambda);
Vec3 shrinkage(const Vec3& x, double lambda);

/// Weighted least-squares rigid fit (Kabsch/SVD with reflection guard).
/// Throws DegenerateProblem on fewer than 3 positive-weight pairs or a
/// collinear source set.
RigidTransform weighted_procrustes(const std::vector<WlavPair>& pairs);

/// Outer linearize-and-solve loop ("LPA"): at each step the sources are
/// moved by the incumbent, the increment LP is solved, and the update is
/// accepted only if it lowers the objective (step halving up to 10 times
/// otherwise).
SolverReport solve_wlav_lpa(const WlavProblem& prob, const RigidTransform& init,
                            const LpaOptions& opts = {});

/// ADMM splitting z_i = w_i (R p_i + t - q_i): shrinkage on z, weighted
/// Procrustes on (R, t), gradient ascent on the duals.
SolverReport solve_wlav_admm(const WlavProblem& prob,
                             const RigidTransform& init,
                             const AdmmOptions& opts = {});

}  // namespace lmmreg

#endif
