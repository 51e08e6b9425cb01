#pragma once

// Small dense convex QP/LP solver with KKT-residual certification plus
// differentiation of the optimal point with respect to the linear cost.
//
// Canonical form:
//     minimize    0.5 x'Hx + f'x
//     subject to  A_eq x  = b_eq
//                 A_in x <= b_in
//
// The solver is a primal-dual interior-point method with Mehrotra
// predictor-corrector steps, aimed at dense problems of a few hundred
// variables. Robustness is preferred over speed: the Newton system is
// reduced to the SPD matrix H + A_in' D A_in and solved by Cholesky with
// a Schur complement for the equality block.

#include <Eigen/Dense>

namespace arb {

struct QpSpec {
    Eigen::MatrixXd H;     ///< n x n symmetric PSD quadratic cost
    Eigen::VectorXd f;     ///< n linear cost
    Eigen::MatrixXd A_eq;  ///< m x n
    Eigen::VectorXd b_eq;  ///< m
    Eigen::MatrixXd A_in;  ///< p x n, rows a_i' x <= b_i
    Eigen::VectorXd b_in;  ///< p

    int num_vars() const { return static_cast<int>(f.size()); }
};

/// Throws std::invalid_argument on inconsistent dimensions or an
/// asymmetric H (tolerance 1e-10).
void validate(const QpSpec& spec);

enum class QpStatus { Optimal, Infeasible, Unbounded, MaxIter };

struct QpSolution {
    Eigen::VectorXd x;
    Eigen::VectorXd lambda_eq;  ///< equality multipliers
    Eigen::VectorXd mu_in;      ///< inequality multipliers, >= 0
    QpStatus status = QpStatus::MaxIter;
    double kkt_residual = 0.0;
    int iterations = 0;
};

/// Max-norm KKT residual of a candidate primal-dual triple: the largest of
/// stationarity, equality residual, inequality violation, complementarity
/// |mu_i * slack_i| and multiplier negativity.
double kkt_residual(const QpSpec& spec, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& lambda_eq, const Eigen::VectorXd& mu_in);

double qp_objective(const QpSpec& spec, const Eigen::VectorXd& x);

/// Optimal status guarantees kkt_residual(spec, x, lambda, mu) <= tol.
QpSolution solve_qp(const QpSpec& spec, double tol = 1e-9, int max_iter = 100);

/// Gradient of a scalar loss L with respect to the linear cost f, given
/// grad_x = dL/dx at the solution. Solves the adjoint KKT system restricted
/// to the active set (rows with mu_i > mu_threshold and slack < slack_threshold).
/// Throws DegenerateActiveSet if the reduced KKT matrix is singular.
Eigen::VectorXd diff_solution_wrt_f(const QpSpec& spec, const QpSolution& sol,
                                    const Eigen::VectorXd& grad_x,
                                    double mu_threshold = 1e-6,
                                    double slack_threshold = 1e-6);

}  // namespace arb
