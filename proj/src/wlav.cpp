#include "lmmreg/wlav.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "lmmreg/errors.hpp"
#include "lmmreg/kdtree.hpp"

namespace lmmreg {

namespace {

std::size_t positive_weight_count(const WlavProblem& prob) {
    std::size_t n = 0;
    for (const auto& pr : prob.pairs)
        if (pr.w > 0.0) ++n;
    return n;
}

}  // namespace

double wlav_objective(const WlavProblem& prob, const RigidTransform& T) {
    double obj = 0.0;
    for (const auto& pr : prob.pairs)
        obj += pr.w * l1_distance(apply(T, pr.p), pr.q);
    return obj;
}

LpProblem linearize(const WlavProblem& prob) {
    const int n = static_cast<int>(prob.pairs.size());
    LpProblem lp;
    lp.n = n;
    lp.A.setZero(3 * n, 6);
    lp.b.setZero(3 * n);
    for (int i = 0; i < n; ++i) {
        const auto& pr = prob.pairs[i];
        lp.A.block<3, 3>(3 * i, 0) = -pr.w * skew(pr.p);
        lp.A.block<3, 3>(3 * i, 3) = pr.w * Mat3::Identity();
        lp.b.segment<3>(3 * i) = pr.w * (pr.q - pr.p);
    }
    return lp;
}

// Primal-dual interior point on
//   min 1'u  s.t.  Ax - u <= b,  -Ax - u <= -b
// with slacks s1 = b - Ax + u, s2 = Ax - b + u and duals z1, z2. The
// normal equations reduce to a 6x6 system: with D = z/s the per-row
// scaling is E = 4 D1 D2 / (D1 + D2), and dx solves (A' E A) dx = rhs.
std::pair<Eigen::VectorXd, SolveStatus> solve_lp_l1(const LpProblem& lp,
                                                    double tol, int max_iter) {
    using Vec = Eigen::VectorXd;
    const int m = static_cast<int>(lp.b.size());
    const Eigen::MatrixXd& A = lp.A;
    const Vec& b = lp.b;

    Eigen::Matrix<double, 6, 1> x = Eigen::Matrix<double, 6, 1>::Zero();
    Vec u = b.cwiseAbs().array() + 1.0;
    Vec s1 = b - A * x + u;
    Vec s2 = A * x - b + u;
    Vec z1 = Vec::Constant(m, 0.5);
    Vec z2 = Vec::Constant(m, 0.5);

    const double bnorm = 1.0 + b.lpNorm<Eigen::Infinity>();

    auto step_length = [](const Vec& v, const Vec& dv) {
        double a = 1.0;
        for (int i = 0; i < v.size(); ++i)
            if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
        return a;
    };

    for (int iter = 0; iter < max_iter; ++iter) {
        const Vec Ax = A * x;
        const Vec rp1 = Ax - u - b + s1;
        const Vec rp2 = -Ax - u + b + s2;
        const Eigen::Matrix<double, 6, 1> rd_x = A.transpose() * (z1 - z2);
        const Vec rd_u = z1 + z2 - Vec::Ones(m);

        const double gap = s1.dot(z1) + s2.dot(z2);
        const double pobj = u.sum();
        const double relgap = gap / (1.0 + std::abs(pobj));
        const double pinf =
            std::max(rp1.lpNorm<Eigen::Infinity>(), rp2.lpNorm<Eigen::Infinity>());
        const double dinf = std::max(rd_x.lpNorm<Eigen::Infinity>(),
                                     rd_u.lpNorm<Eigen::Infinity>());
        if (relgap <= tol && pinf <= tol * bnorm && dinf <= tol)
            return {Vec(x), SolveStatus::Converged};

        const double mu = gap / (2.0 * m);

        const Vec d1 = z1.cwiseQuotient(s1);
        const Vec d2 = z2.cwiseQuotient(s2);
        const Vec dsum = d1 + d2;
        const Vec ddiff = d1 - d2;
        const Vec escale = dsum - ddiff.cwiseAbs2().cwiseQuotient(dsum);

        Eigen::Matrix<double, 6, 6> M =
            A.transpose() * escale.asDiagonal() * A;
        // Static regularization keeps the factorization usable when A is
        // column-deficient (e.g. translation-only problems).
        M.diagonal().array() += 1e-12 * std::max(1.0, M.trace());
        const Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(M);

        auto solve_direction = [&](const Vec& rc1, const Vec& rc2, Vec& du,
                                   Vec& ds1, Vec& ds2, Vec& dz1, Vec& dz2,
                                   Eigen::Matrix<double, 6, 1>& dx) {
            const Vec g1 = (rc1 + z1.cwiseProduct(rp1)).cwiseQuotient(s1);
            const Vec g2 = (rc2 + z2.cwiseProduct(rp2)).cwiseQuotient(s2);
            const Vec t = (ddiff.cwiseQuotient(dsum))
                              .cwiseProduct(rd_u + g1 + g2);
            const Eigen::Matrix<double, 6, 1> rhs =
                -rd_x - A.transpose() * (g1 - g2) + A.transpose() * t;
            dx = ldlt.solve(rhs);
            const Vec Adx = A * dx;
            du = (ddiff.cwiseProduct(Adx) + rd_u + g1 + g2)
                     .cwiseQuotient(dsum);
            ds1 = -rp1 - Adx + du;
            ds2 = -rp2 + Adx + du;
            dz1 = (rc1 - z1.cwiseProduct(ds1)).cwiseQuotient(s1);
            dz2 = (rc2 - z2.cwiseProduct(ds2)).cwiseQuotient(s2);
        };

        // Affine (predictor) direction.
        Vec du, ds1, ds2, dz1, dz2;
        Eigen::Matrix<double, 6, 1> dx;
        Vec rc1 = -s1.cwiseProduct(z1);
        Vec rc2 = -s2.cwiseProduct(z2);
        solve_direction(rc1, rc2, du, ds1, ds2, dz1, dz2, dx);

        const double ap_aff = std::min(step_length(s1, ds1), step_length(s2, ds2));
        const double ad_aff = std::min(step_length(z1, dz1), step_length(z2, dz2));
        const double mu_aff = ((s1 + ap_aff * ds1).dot(z1 + ad_aff * dz1) +
                               (s2 + ap_aff * ds2).dot(z2 + ad_aff * dz2)) /
                              (2.0 * m);
        const double sigma = std::pow(std::max(0.0, mu_aff / mu), 3);

        // Corrector.
        rc1 = -s1.cwiseProduct(z1) - ds1.cwiseProduct(dz1);
        rc1.array() += sigma * mu;
        rc2 = -s2.cwiseProduct(z2) - ds2.cwiseProduct(dz2);
        rc2.array() += sigma * mu;
        solve_direction(rc1, rc2, du, ds1, ds2, dz1, dz2, dx);

        const double ap =
            std::min(1.0, 0.9995 * std::min(step_length(s1, ds1),
                                            step_length(s2, ds2)));
        const double ad =
            std::min(1.0, 0.9995 * std::min(step_length(z1, dz1),
                                            step_length(z2, dz2)));
        x += ap * dx;
        u += ap * du;
        s1 += ap * ds1;
        s2 += ap * ds2;
        z1 += ad * dz1;
        z2 += ad * dz2;
    }
    return {Vec(x), SolveStatus::Degraded};
}

double shrinkage(double x, double lambda) {
    if (x > lambda) return x - lambda;
    if (x < -lambda) return x + lambda;
    return 0.0;
}

Vec3 shrinkage(const Vec3& x, double lambda) {
    return Vec3(shrinkage(x.x(), lambda), shrinkage(x.y(), lambda),
                shrinkage(x.z(), lambda));
}

RigidTransform weighted_procrustes(const std::vector<WlavPair>& pairs) {
    double wsum = 0.0;
    std::size_t support = 0;
    for (const auto& pr : pairs) {
        if (pr.w > 0.0) {
            wsum += pr.w;
            ++support;
        }
    }
    if (support < 3)
        throw DegenerateProblem("weighted_procrustes: fewer than 3 positive-weight pairs");

    Vec3 pbar = Vec3::Zero(), qbar = Vec3::Zero();
    for (const auto& pr : pairs) {
        pbar += pr.w * pr.p;
        qbar += pr.w * pr.q;
    }
    pbar /= wsum;
    qbar /= wsum;

    Mat3 H = Mat3::Zero();
    Mat3 S = Mat3::Zero();  // weighted source scatter, collinearity check
    for (const auto& pr : pairs) {
        const Vec3 pc = pr.p - pbar;
        const Vec3 qc = pr.q - qbar;
        H += pr.w * pc * qc.transpose();
        S += pr.w * pc * pc.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(S);
    const Vec3 ev = eig.eigenvalues();  // ascending
    if (ev[1] <= 1e-12 * std::max(ev[2], 1e-300))
        throw DegenerateProblem("weighted_procrustes: collinear source points");

    Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Mat3 U = svd.matrixU();
    const Mat3 V = svd.matrixV();
    Vec3 d(1.0, 1.0, (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    RigidTransform T;
    T.rotation = V * d.asDiagonal() * U.transpose();
    T.translation = qbar - T.rotation * pbar;
    return T;
}

SolverReport solve_wlav_lpa(const WlavProblem& prob, const RigidTransform& init,
                            const LpaOptions& opts) {
    const std::size_t support = positive_weight_count(prob);
    SolverReport report;
    report.transform = init;
    report.objective = wlav_objective(prob, init);
    if (support == 0) return report;  // vanishing posteriors: keep init
    if (support < 3)
        throw DegenerateProblem("solve_wlav_lpa: fewer than 3 positive-weight pairs");

    for (int outer = 0; outer < opts.max_outer; ++outer) {
        WlavProblem moved;
        moved.pairs.reserve(prob.pairs.size());
        for (const auto& pr : prob.pairs)
            moved.pairs.push_back({apply(report.transform, pr.p), pr.q, pr.w});

        const LpProblem lp = linearize(moved);
        const auto [x, status] = solve_lp_l1(lp, opts.lp_tol, opts.lp_max_iter);
        report.iterations = outer + 1;

        Vec3 r = x.head<3>();
        Vec3 t_inc = x.tail<3>();
        bool accepted = false;
        for (int bt = 0; bt <= 10; ++bt) {
            const RigidTransform cand =
                compose({exp_map(r), t_inc}, report.transform);
            const double obj = wlav_objective(prob, cand);
            if (obj < report.objective) {
                report.transform = cand;
                report.objective = obj;
                accepted = true;
                break;
            }
            r *= 0.5;
            t_inc *= 0.5;
        }
        if (x.lpNorm<Eigen::Infinity>() < opts.tol_increment) {
            report.converged = true;
            break;
        }
        if (!accepted) break;  // linear model no longer predicts descent
    }
    return report;
}

SolverReport solve_wlav_admm(const WlavProblem& prob,
                             const RigidTransform& init,
                             const AdmmOptions& opts) {
    const std::size_t support = positive_weight_count(prob);
    SolverReport report;
    report.transform = init;
    report.objective = wlav_objective(prob, init);
    if (support == 0) return report;
    if (support < 3)
        throw DegenerateProblem("solve_wlav_admm: fewer than 3 positive-weight pairs");

    const std::size_t n = prob.pairs.size();
    // The penalty stays constant through the solve, but its value is set
    // from the mean residual magnitude at the initial transform so the
    // shrinkage threshold 1/rho matches the problem's scale. This also
    // makes the iterates equivariant under uniform weight scaling.
    double s_mean = 0.0;
    for (const auto& pr : prob.pairs)
        s_mean += (pr.w * (apply(init, pr.p) - pr.q)).lpNorm<1>();
    s_mean /= static_cast<double>(3 * n);
    const double rho = s_mean > 0.0 ? opts.rho / s_mean : opts.rho;
    // Warm start the split variable at the initial residuals so a good
    // incumbent (e.g. from the previous outer iteration) converges fast.
    std::vector<Vec3> z(n), lambda(n, Vec3::Zero());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& pr = prob.pairs[i];
        z[i] = pr.w * (apply(init, pr.p) - pr.q);
    }
    RigidTransform T = init;

    std::vector<WlavPair> fit;
    fit.reserve(n);
    for (int iter = 0; iter < opts.max_iter; ++iter) {
        // z-update: shrinkage at the incumbent transform.
        double dual_res = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& pr = prob.pairs[i];
            const Vec3 s = pr.w * (apply(T, pr.p) - pr.q);
            const Vec3 z_new = shrinkage(s - lambda[i] / rho, 1.0 / rho);
            // Dual residual in nominal-penalty units so the tolerance is
            // insensitive to the internal scale normalization of rho.
            dual_res = std::max(
                dual_res, opts.rho * (z_new - z[i]).lpNorm<Eigen::Infinity>());
            z[i] = z_new;
        }

        // (R, t)-update: the quadratic term is equivalent to Procrustes on
        // pairs (p, q + (z + lambda/rho)/w) with weight w^2.
        fit.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& pr = prob.pairs[i];
            if (pr.w <= 0.0) continue;
            fit.push_back(
                {pr.p, pr.q + (z[i] + lambda[i] / rho) / pr.w, pr.w * pr.w});
        }
        T = weighted_procrustes(fit);

        // Dual ascent and residuals at the fresh transform.
        double primal_res = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& pr = prob.pairs[i];
            const Vec3 s = pr.w * (apply(T, pr.p) - pr.q);
            lambda[i] += rho * (z[i] - s);
            primal_res =
                std::max(primal_res, (z[i] - s).lpNorm<Eigen::Infinity>());
        }

        report.iterations = iter + 1;
        report.primal_residual = primal_res;
        report.dual_residual = dual_res;
        if (primal_res < opts.tol_primal && dual_res < opts.tol_dual) {
            report.converged = true;
            break;
        }
    }
    report.transform = T;
    report.objective = wlav_objective(prob, T);
    return report;
}

}  // namespace lmmreg
