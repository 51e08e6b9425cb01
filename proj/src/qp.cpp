#include "arb/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "arb/errors.hpp"

namespace arb {

void validate(const QpSpec& spec) {
    const auto n = spec.f.size();
    if (spec.H.rows() != n || spec.H.cols() != n)
        throw std::invalid_argument("qp: H must be n x n");
    if ((spec.H - spec.H.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("qp: H must be symmetric");
    if (spec.A_eq.rows() != spec.b_eq.size())
        throw std::invalid_argument("qp: A_eq/b_eq row mismatch");
    if (spec.A_eq.rows() > 0 && spec.A_eq.cols() != n)
        throw std::invalid_argument("qp: A_eq column mismatch");
    if (spec.A_in.rows() != spec.b_in.size())
        throw std::invalid_argument("qp: A_in/b_in row mismatch");
    if (spec.A_in.rows() > 0 && spec.A_in.cols() != n)
        throw std::invalid_argument("qp: A_in column mismatch");
}

double qp_objective(const QpSpec& spec, const Eigen::VectorXd& x) {
    return 0.5 * x.dot(spec.H * x) + spec.f.dot(x);
}

double kkt_residual(const QpSpec& spec, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& lambda_eq, const Eigen::VectorXd& mu_in) {
    Eigen::VectorXd stat = spec.H * x + spec.f;
    if (spec.A_eq.rows() > 0) stat += spec.A_eq.transpose() * lambda_eq;
    if (spec.A_in.rows() > 0) stat += spec.A_in.transpose() * mu_in;
    double r = stat.cwiseAbs().maxCoeff();
    if (spec.A_eq.rows() > 0)
        r = std::max(r, (spec.A_eq * x - spec.b_eq).cwiseAbs().maxCoeff());
    if (spec.A_in.rows() > 0) {
        const Eigen::VectorXd slack = spec.b_in - spec.A_in * x;
        r = std::max(r, (-slack).cwiseMax(0.0).maxCoeff());
        r = std::max(r, mu_in.cwiseProduct(slack).cwiseAbs().maxCoeff());
        r = std::max(r, (-mu_in).cwiseMax(0.0).maxCoeff());
    }
    return r;
}

namespace {

// Per-row sparsity of A_in, gathered once per solve so the normal matrix
// H + A_in' D A_in can be accumulated row-wise. Dispatch problems are
// dominated by box rows with a single nonzero.
struct RowPattern {
    std::vector<int> cols;
    std::vector<double> vals;
};

std::vector<RowPattern> gather_patterns(const Eigen::MatrixXd& A) {
    std::vector<RowPattern> rows(static_cast<std::size_t>(A.rows()));
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = 0; j < A.cols(); ++j) {
            const double v = A(i, j);
            if (v != 0.0) {
                rows[static_cast<std::size_t>(i)].cols.push_back(static_cast<int>(j));
                rows[static_cast<std::size_t>(i)].vals.push_back(v);
            }
        }
    }
    return rows;
}

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
    double alpha = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
    return alpha;
}

// Factorization of [M A_eq'; A_eq 0] via Cholesky of M and a Schur
// complement over the equality block.
class KktSolver {
public:
    KktSolver(const Eigen::MatrixXd& M, const Eigen::MatrixXd& A_eq) : A_eq_(A_eq) {
        Eigen::MatrixXd Mreg = M;
        double delta = 0.0;
        for (int attempt = 0; attempt < 6; ++attempt) {
            llt_.compute(Mreg);
            if (llt_.info() == Eigen::Success) break;
            delta = (delta == 0.0) ? 1e-12 * (1.0 + M.diagonal().cwiseAbs().maxCoeff())
                                   : delta * 100.0;
            Mreg = M + delta * Eigen::MatrixXd::Identity(M.rows(), M.cols());
        }
        if (llt_.info() != Eigen::Success)
            throw SolverError("qp: normal matrix not positive definite");
        if (A_eq_.rows() > 0) {
            const Eigen::MatrixXd Z = llt_.solve(A_eq_.transpose());
            Eigen::MatrixXd S = A_eq_ * Z;
            S.diagonal().array() += 1e-13 * (1.0 + S.diagonal().cwiseAbs().maxCoeff());
            schur_.compute(S);
            if (schur_.info() != Eigen::Success)
                throw SolverError("qp: equality rows are rank deficient");
        }
    }

    // Solves M dx + A_eq' dl = rx, A_eq dx = re.
    void solve(const Eigen::VectorXd& rx, const Eigen::VectorXd& re,
               Eigen::VectorXd& dx, Eigen::VectorXd& dl) const {
        if (A_eq_.rows() == 0) {
            dx = llt_.solve(rx);
            dl.resize(0);
            return;
        }
        const Eigen::VectorXd w = llt_.solve(rx);
        dl = schur_.solve(A_eq_ * w - re);
        dx = llt_.solve(rx - A_eq_.transpose() * dl);
    }

private:
    const Eigen::MatrixXd& A_eq_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::LDLT<Eigen::MatrixXd> schur_;
};

}  // namespace

QpSolution solve_qp(const QpSpec& spec, double tol, int max_iter) {
    validate(spec);
    const int n = spec.num_vars();
    const int m = static_cast<int>(spec.A_eq.rows());
    const int p = static_cast<int>(spec.A_in.rows());

    QpSolution sol;
    sol.x = Eigen::VectorXd::Zero(n);
    sol.lambda_eq = Eigen::VectorXd::Zero(m);
    sol.mu_in = Eigen::VectorXd::Zero(p);

    // No inequalities: a single saddle solve settles it.
    if (p == 0) {
        Eigen::MatrixXd K(n + m, n + m);
        K.setZero();
        K.topLeftCorner(n, n) = spec.H;
        if (m > 0) {
            K.topRightCorner(n, m) = spec.A_eq.transpose();
            K.bottomLeftCorner(m, n) = spec.A_eq;
        }
        Eigen::VectorXd rhs(n + m);
        rhs.head(n) = -spec.f;
        rhs.tail(m) = spec.b_eq;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
        if (!lu.isInvertible()) {
            sol.status = QpStatus::Unbounded;
            return sol;
        }
        const Eigen::VectorXd y = lu.solve(rhs);
        sol.x = y.head(n);
        sol.lambda_eq = y.tail(m);
        sol.kkt_residual = kkt_residual(spec, sol.x, sol.lambda_eq, sol.mu_in);
        sol.status = sol.kkt_residual <= tol ? QpStatus::Optimal : QpStatus::MaxIter;
        return sol;
    }

    const auto patterns = gather_patterns(spec.A_in);
    const double bscale = 1.0 + std::max(spec.b_in.cwiseAbs().maxCoeff(),
                                         m > 0 ? spec.b_eq.cwiseAbs().maxCoeff() : 0.0);
    const double fscale = 1.0 + spec.f.cwiseAbs().maxCoeff() +
                          (n > 0 ? spec.H.cwiseAbs().maxCoeff() : 0.0);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd mu = Eigen::VectorXd::Ones(p);
    Eigen::VectorXd s = spec.b_in.cwiseMax(1.0);

    Eigen::VectorXd dx(n), dl(m), dmu(p), ds(p);
    Eigen::VectorXd dx_a(n), dl_a(m), dmu_a(p), ds_a(p);

    for (int it = 0; it < max_iter; ++it) {
        sol.x = x;
        sol.lambda_eq = lam;
        sol.mu_in = mu;
        sol.kkt_residual = kkt_residual(spec, x, lam, mu);
        sol.iterations = it;
        if (sol.kkt_residual <= tol) {
            sol.status = QpStatus::Optimal;
            return sol;
        }
        if (x.cwiseAbs().maxCoeff() > 1e9 * bscale) {
            sol.status = QpStatus::Unbounded;
            return sol;
        }
        if (mu.maxCoeff() > 1e9 * fscale) {
            // Dual blow-up with a stubborn primal residual is the usual
            // infeasibility signature for this class of problem.
            sol.status = QpStatus::Infeasible;
            return sol;
        }

        Eigen::VectorXd r_d = spec.H * x + spec.f + spec.A_in.transpose() * mu;
        if (m > 0) r_d += spec.A_eq.transpose() * lam;
        const Eigen::VectorXd r_pe = m > 0 ? (spec.A_eq * x - spec.b_eq).eval()
                                           : Eigen::VectorXd();
        const Eigen::VectorXd r_pi = spec.A_in * x + s - spec.b_in;

        const Eigen::VectorXd d = mu.cwiseQuotient(s);
        Eigen::MatrixXd M = spec.H;
        for (int i = 0; i < p; ++i) {
            const auto& row = patterns[static_cast<std::size_t>(i)];
            const double w = d(i);
            for (std::size_t a = 0; a < row.cols.size(); ++a)
                for (std::size_t b = 0; b < row.cols.size(); ++b)
                    M(row.cols[a], row.cols[b]) += w * row.vals[a] * row.vals[b];
        }
        const KktSolver kkt(M, spec.A_eq);

        // Predictor (affine scaling direction).
        Eigen::VectorXd rc = mu.cwiseProduct(s);
        Eigen::VectorXd rhs_x =
            -r_d - spec.A_in.transpose() * ((-rc + mu.cwiseProduct(r_pi)).cwiseQuotient(s));
        kkt.solve(rhs_x, m > 0 ? (-r_pe).eval() : Eigen::VectorXd(), dx_a, dl_a);
        dmu_a = (-rc + mu.cwiseProduct(r_pi)).cwiseQuotient(s) +
                d.cwiseProduct(spec.A_in * dx_a);
        ds_a = -r_pi - spec.A_in * dx_a;

        const double mu_bar = mu.dot(s) / p;
        const double ap = std::min(1.0, max_step(s, ds_a));
        const double ad = std::min(1.0, max_step(mu, dmu_a));
        const double mu_aff = (s + ap * ds_a).dot(mu + ad * dmu_a) / p;
        double sigma = std::pow(std::max(mu_aff, 0.0) / mu_bar, 3.0);
        sigma = std::clamp(sigma, 1e-8, 1.0);

        // Corrector with centering.
        rc = mu.cwiseProduct(s) + dmu_a.cwiseProduct(ds_a) -
             sigma * mu_bar * Eigen::VectorXd::Ones(p);
        rhs_x = -r_d - spec.A_in.transpose() *
                           ((-rc + mu.cwiseProduct(r_pi)).cwiseQuotient(s));
        kkt.solve(rhs_x, m > 0 ? (-r_pe).eval() : Eigen::VectorXd(), dx, dl);
        dmu = (-rc + mu.cwiseProduct(r_pi)).cwiseQuotient(s) +
              d.cwiseProduct(spec.A_in * dx);
        ds = -r_pi - spec.A_in * dx;

        const double alpha =
            std::min(1.0, 0.995 * std::min(max_step(s, ds), max_step(mu, dmu)));
        x += alpha * dx;
        if (m > 0) lam += alpha * dl;
        mu += alpha * dmu;
        s += alpha * ds;
    }

    sol.x = x;
    sol.lambda_eq = lam;
    sol.mu_in = mu;
    sol.kkt_residual = kkt_residual(spec, x, lam, mu);
    sol.iterations = max_iter;
    if (sol.kkt_residual <= tol) {
        sol.status = QpStatus::Optimal;
    } else if (mu.dot(s) / p < tol * fscale) {
        // Complementarity converged but feasibility did not.
        sol.status = QpStatus::Infeasible;
    } else {
        sol.status = QpStatus::MaxIter;
    }
    return sol;
}

Eigen::VectorXd diff_solution_wrt_f(const QpSpec& spec, const QpSolution& sol,
                                    const Eigen::VectorXd& grad_x,
                                    double mu_threshold, double slack_threshold) {
    if (sol.status != QpStatus::Optimal)
        throw std::invalid_argument("diff_solution_wrt_f: solution is not optimal");
    if (grad_x.size() != spec.f.size())
        throw std::invalid_argument("diff_solution_wrt_f: grad_x dimension mismatch");

    const int n = spec.num_vars();
    const int m = static_cast<int>(spec.A_eq.rows());
    std::vector<int> active;
    if (spec.A_in.rows() > 0) {
        const Eigen::VectorXd slack = spec.b_in - spec.A_in * sol.x;
        for (int i = 0; i < spec.A_in.rows(); ++i)
            if (sol.mu_in(i) > mu_threshold && slack(i) < slack_threshold)
                active.push_back(i);
    }
    const int a = static_cast<int>(active.size());

    Eigen::MatrixXd K(n + m + a, n + m + a);
    K.setZero();
    K.topLeftCorner(n, n) = spec.H;
    if (m > 0) {
        K.block(n, 0, m, n) = spec.A_eq;
        K.block(0, n, n, m) = spec.A_eq.transpose();
    }
    for (int i = 0; i < a; ++i) {
        K.row(n + m + i).head(n) = spec.A_in.row(active[static_cast<std::size_t>(i)]);
        K.col(n + m + i).head(n) =
            spec.A_in.row(active[static_cast<std::size_t>(i)]).transpose();
    }

    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    lu.setThreshold(1e-10);
    if (!lu.isInvertible())
        throw DegenerateActiveSet("diff_solution_wrt_f: reduced KKT system is singular");

    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m + a);
    rhs.head(n) = grad_x;
    const Eigen::VectorXd y = lu.solve(rhs);
    return -y.head(n);
}

}  // namespace arb
