#pragma once

#include <Eigen/Dense>
#include <optional>

namespace ivrl {

// Dense linear programming, sized for the tiny problems that arise from
// L1-of-affine objectives over polynomial coefficient spaces (tens of
// variables). Deterministic: Bland's rule, fixed tie-breaking.
struct LpResult {
    enum class Status { Optimal, Unbounded, Infeasible, IterLimit };
    Status status = Status::IterLimit;
    Eigen::VectorXd x;       // primal solution when Optimal
    double objective = 0.0;  // c^T x
    int iterations = 0;
};

// minimize c^T x  subject to  A x <= b,  x >= 0
LpResult solve_lp(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                  int max_iter = 10000);

// minimize  q^T w + lambda * || r0 + R w ||_1   over w in R^n,
// optionally restricted to ||w||_inf <= box.
//
// This single form covers the min-max fits (q = 0, lambda = 1), the
// Lagrangian inner minimizations (lambda = dual variable), and the
// box-constrained ratio fits.
struct L1AffineResult {
    enum class Status { Optimal, Unbounded, IterLimit };
    Status status = Status::IterLimit;
    Eigen::VectorXd w;
    Eigen::VectorXd residual;  // r0 + R w at the solution
    double objective = 0.0;    // q^T w + lambda * ||residual||_1
    double l1_norm = 0.0;      // ||residual||_1
    int iterations = 0;
};

L1AffineResult minimize_l1_affine(const Eigen::VectorXd& q, double lambda,
                                  const Eigen::VectorXd& r0, const Eigen::MatrixXd& R,
                                  std::optional<double> box = std::nullopt);

// Projected subgradient fallback for the same objective. Polyak-style steps
// against a known lower bound (zero when q vanishes), decaying steps
// otherwise. Used as an alternative backend; the LP route is the default.
struct SubgradientConfig {
    int max_iter = 100000;
    double tol = 1e-7;        // stop when best objective stalls within tol
    double target = 0.0;      // known lower bound for Polyak steps
    bool use_target = false;  // enables Polyak steps toward `target`
};

L1AffineResult minimize_l1_subgradient(const Eigen::VectorXd& q, double lambda,
                                       const Eigen::VectorXd& r0, const Eigen::MatrixXd& R,
                                       std::optional<double> box = std::nullopt,
                                       const SubgradientConfig& cfg = {});

}  // namespace ivrl
