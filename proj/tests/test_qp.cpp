#include "arb/qp.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

#include "arb/errors.hpp"
#include "oracles.hpp"

using namespace arb;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

QpSpec empty_spec(int n) {
    QpSpec s;
    s.H = MatrixXd::Zero(n, n);
    s.f = VectorXd::Zero(n);
    s.A_eq = MatrixXd(0, n);
    s.b_eq = VectorXd(0);
    s.A_in = MatrixXd(0, n);
    s.b_in = VectorXd(0);
    return s;
}

// Builds a QP with a known solution: pick x*, an active set with strictly
// positive multipliers and strictly slack inactive rows, then back out f
// from stationarity.
struct Constructed {
    QpSpec spec;
    VectorXd x_star;
};

Constructed construct_qp(std::mt19937_64& rng, int n, int n_eq, int n_act,
                         int n_slack) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> positive(0.5, 2.0);

    auto randn = [&](int rows, int cols) {
        MatrixXd m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = gauss(rng);
        return m;
    };

    Constructed out;
    const MatrixXd L = randn(n, n);
    out.spec = empty_spec(n);
    out.spec.H = L * L.transpose() + MatrixXd::Identity(n, n);
    out.x_star = randn(n, 1);

    out.spec.A_eq = randn(n_eq, n);
    out.spec.b_eq = out.spec.A_eq * out.x_star;
    VectorXd lambda = randn(n_eq, 1);

    const int p = n_act + n_slack;
    out.spec.A_in = randn(p, n);
    out.spec.b_in.resize(p);
    VectorXd mu = VectorXd::Zero(p);
    for (int i = 0; i < n_act; ++i) {
        out.spec.b_in(i) = out.spec.A_in.row(i).dot(out.x_star);  // tight
        mu(i) = positive(rng);
    }
    for (int i = n_act; i < p; ++i)
        out.spec.b_in(i) = out.spec.A_in.row(i).dot(out.x_star) + positive(rng);

    out.spec.f = -(out.spec.H * out.x_star + out.spec.A_eq.transpose() * lambda +
                   out.spec.A_in.transpose() * mu);
    return out;
}

}  // namespace

TEST_CASE("bound-constrained scalar: min x^2 s.t. x >= 1") {
    QpSpec s = empty_spec(1);
    s.H << 2.0;
    s.A_in = MatrixXd::Constant(1, 1, -1.0);
    s.b_in = VectorXd::Constant(1, -1.0);
    const auto sol = solve_qp(s);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK(sol.x(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(sol.mu_in(0) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(sol.kkt_residual <= 1e-9);
}

TEST_CASE("unconstrained scalar: min 0.5 x^2 - 3x") {
    QpSpec s = empty_spec(1);
    s.H << 1.0;
    s.f << -3.0;
    const auto sol = solve_qp(s);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK(sol.x(0) == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("constructed random QPs are recovered") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> size(2, 10);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = size(rng);
        const int n_eq = n >= 4 ? 1 : 0;
        const int n_act = std::min(2, n - n_eq - 1);
        const auto prob = construct_qp(rng, n, n_eq, std::max(n_act, 0), 3);
        const auto sol = solve_qp(prob.spec, 1e-9, 100);
        REQUIRE(sol.status == QpStatus::Optimal);
        CHECK((sol.x - prob.x_star).cwiseAbs().maxCoeff() <= 1e-6);
        CHECK(sol.kkt_residual <= 1e-8);
    }
}

TEST_CASE("reported residual equals recomputation from the returned triple") {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        const auto prob = construct_qp(rng, 6, 1, 2, 3);
        const auto sol = solve_qp(prob.spec);
        REQUIRE(sol.status == QpStatus::Optimal);
        const double recomputed =
            kkt_residual(prob.spec, sol.x, sol.lambda_eq, sol.mu_in);
        CHECK(std::abs(recomputed - sol.kkt_residual) <= 1e-12);
        CHECK(sol.mu_in.minCoeff() >= -1e-8);
    }
}

TEST_CASE("infeasible and unbounded problems are flagged") {
    SUBCASE("x <= 0 and x >= 1 cannot hold") {
        QpSpec s = empty_spec(1);
        s.H << 1e-4;
        s.A_in = MatrixXd(2, 1);
        s.A_in << 1.0, -1.0;
        s.b_in = VectorXd(2);
        s.b_in << 0.0, -1.0;
        const auto sol = solve_qp(s, 1e-9, 100);
        CHECK(sol.status == QpStatus::Infeasible);
    }
    SUBCASE("min -x with x >= 0 runs away") {
        QpSpec s = empty_spec(1);
        s.f << -1.0;
        s.A_in = MatrixXd::Constant(1, 1, -1.0);
        s.b_in = VectorXd::Zero(1);
        const auto sol = solve_qp(s, 1e-9, 200);
        CHECK(sol.status == QpStatus::Unbounded);
    }
}

TEST_CASE("lifted LPs track the exact vertex optimum") {
    // min f'x over a box with a budget row, lifted with H = mu*I.
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double mu = 1e-4;
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 2 + rep % 5;  // up to 6
        QpSpec s = empty_spec(n);
        s.H = mu * MatrixXd::Identity(n, n);
        for (int i = 0; i < n; ++i) s.f(i) = gauss(rng);
        s.A_in = MatrixXd(2 * n + 1, n);
        s.b_in = VectorXd(2 * n + 1);
        s.A_in.topRows(n) = MatrixXd::Identity(n, n);
        s.b_in.head(n).setOnes();
        s.A_in.middleRows(n, n) = -MatrixXd::Identity(n, n);
        s.b_in.segment(n, n).setZero();
        s.A_in.row(2 * n).setOnes();
        s.b_in(2 * n) = 1.0 + 0.5 * n;

        const auto sol = solve_qp(s, 1e-10, 200);
        REQUIRE(sol.status == QpStatus::Optimal);
        QpSpec lp = s;  // same constraints, H ignored by the oracle
        Eigen::VectorXd vertex;
        const double exact =
            oracle::lp_vertex_minimum(s.f, lp.A_eq, lp.b_eq, lp.A_in, lp.b_in, &vertex);
        const double bound =
            mu / 2.0 * std::max(vertex.squaredNorm(), sol.x.squaredNorm()) + 1e-6;
        CHECK(std::abs(s.f.dot(sol.x) - exact) <= bound);
    }
}

TEST_CASE("gradient w.r.t. linear cost: pinned and free scalars") {
    SUBCASE("free minimizer moves one-for-one") {
        // min 0.5 x^2 - a x has x* = a; with f = -a, dx*/da = -dL/df = 1.
        QpSpec s = empty_spec(1);
        s.H << 1.0;
        s.f << -2.0;
        const auto sol = solve_qp(s);
        REQUIRE(sol.status == QpStatus::Optimal);
        const VectorXd g = diff_solution_wrt_f(s, sol, VectorXd::Ones(1));
        CHECK(g(0) == doctest::Approx(-1.0).epsilon(1e-10));
    }
    SUBCASE("active bound pins the derivative to zero") {
        QpSpec s = empty_spec(1);
        s.H << 1.0;
        s.f << -2.0;  // pull toward x = 2
        s.A_in = MatrixXd::Constant(1, 1, 1.0);
        s.b_in = VectorXd::Zero(1);  // x <= 0
        const auto sol = solve_qp(s);
        REQUIRE(sol.status == QpStatus::Optimal);
        const VectorXd g = diff_solution_wrt_f(s, sol, VectorXd::Ones(1));
        CHECK(std::abs(g(0)) <= 1e-10);
    }
}

TEST_CASE("adjoint gradient matches finite differences on random QPs") {
    std::mt19937_64 rng(1234);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const int n = 3 + rep % 4;
        const auto prob = construct_qp(rng, n, 0, 1, 2);
        VectorXd c(n);
        for (int i = 0; i < n; ++i) c(i) = gauss(rng);

        const auto sol = solve_qp(prob.spec, 1e-11, 200);
        REQUIRE(sol.status == QpStatus::Optimal);
        const VectorXd adj = diff_solution_wrt_f(prob.spec, sol, c);

        QpSpec pert = prob.spec;
        const VectorXd fd = oracle::fd_gradient(
            [&](const VectorXd& f) {
                pert.f = f;
                const auto s2 = solve_qp(pert, 1e-11, 200);
                REQUIRE(s2.status == QpStatus::Optimal);
                return c.dot(s2.x);
            },
            prob.spec.f, 1e-5);
        worst = std::max(worst, oracle::rel_error(adj, fd));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("gradient swap equivariance on a symmetric QP") {
    // min 0.5||x||^2 - f'x with symmetric boxes; permuting f permutes dL/df.
    QpSpec s = empty_spec(2);
    s.H = MatrixXd::Identity(2, 2);
    s.f << -0.3, -0.7;
    s.A_in = MatrixXd(4, 2);
    s.A_in << 1, 0, 0, 1, -1, 0, 0, -1;
    s.b_in = VectorXd(4);
    s.b_in << 2, 2, 2, 2;
    const VectorXd w = (VectorXd(2) << 1.0, 1.0).finished();

    const auto sol = solve_qp(s);
    REQUIRE(sol.status == QpStatus::Optimal);
    const VectorXd g = diff_solution_wrt_f(s, sol, w);

    QpSpec swapped = s;
    std::swap(swapped.f(0), swapped.f(1));
    const auto sol2 = solve_qp(swapped);
    REQUIRE(sol2.status == QpStatus::Optimal);
    const VectorXd g2 = diff_solution_wrt_f(swapped, sol2, w);
    CHECK(g(0) == doctest::Approx(g2(1)).epsilon(1e-8));
    CHECK(g(1) == doctest::Approx(g2(0)).epsilon(1e-8));
}

TEST_CASE("degenerate active set raises") {
    // Two identical active rows make the reduced KKT matrix singular.
    QpSpec s = empty_spec(1);
    s.H << 1.0;
    s.f << 2.0;  // pull toward -2, both rows x >= 0 active
    s.A_in = MatrixXd(2, 1);
    s.A_in << -1.0, -1.0;
    s.b_in = VectorXd::Zero(2);
    const auto sol = solve_qp(s);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK(std::abs(sol.x(0)) <= 1e-7);
    CHECK_THROWS_AS(diff_solution_wrt_f(s, sol, VectorXd::Ones(1)),
                    DegenerateActiveSet);
}

TEST_CASE("spec validation") {
    QpSpec s = empty_spec(2);
    s.H(0, 1) = 1.0;  // asymmetric
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
    s = empty_spec(2);
    s.A_in = MatrixXd::Zero(1, 3);
    s.b_in = VectorXd::Zero(1);
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
}
