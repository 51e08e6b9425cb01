#include "arb/saa.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "arb/errors.hpp"

namespace arb {

void validate(const SaaConfig& cfg) {
    if (cfg.scenarios.empty()) throw ConfigError("saa: need at least one scenario");
    const auto T = cfg.scenarios.front().prices.size();
    if (T == 0) throw ConfigError("saa: empty horizon");
    for (const auto& sc : cfg.scenarios)
        if (sc.prices.size() != T)
            throw ConfigError("saa: scenarios must share one horizon");
    if (cfg.reward.values.size() != T)
        throw ConfigError("saa: reward series length must equal the horizon");
    if (!(cfg.epsilon >= 0.0 && cfg.epsilon <= 1.0))
        throw ConfigError("saa: epsilon must be in [0,1]");
    validate(cfg.params);
    validate(cfg.target, cfg.params, static_cast<int>(T));
}

namespace {

std::vector<double> mean_prices(const SaaConfig& cfg) {
    const std::size_t T = cfg.scenarios.front().prices.size();
    std::vector<double> mean(T, 0.0);
    for (const auto& sc : cfg.scenarios)
        for (std::size_t t = 0; t < T; ++t) mean[t] += sc.prices[t];
    for (auto& v : mean) v /= static_cast<double>(cfg.scenarios.size());
    return mean;
}

double reward_for_tau(const RewardSeries& reward, int tau) {
    const int T = static_cast<int>(reward.values.size());
    if (reward.mode == RewardMode::CumulativeAfterStop) {
        double sum = 0.0;
        for (int t = tau; t <= T; ++t) sum += reward.values[t - 1];
        return sum;
    }
    return tau <= T ? reward.values[tau - 1] : 0.0;
}

}  // namespace

QpSpec assemble_lp_for_tau(const SaaConfig& cfg, int tau) {
    validate(cfg);
    const int T = static_cast<int>(cfg.scenarios.front().prices.size());
    if (tau < 1 || tau > T + 1)
        throw std::invalid_argument("assemble_lp_for_tau: tau must be in 1..T+1");

    const SaaLpLayout lay{T};
    const auto& p = cfg.params;
    const auto mean = mean_prices(cfg);
    const int n = lay.num_vars();

    QpSpec spec;
    spec.H = Eigen::MatrixXd::Zero(n, n);
    spec.f = Eigen::VectorXd::Zero(n);
    for (int t = 0; t < T; ++t) {
        spec.f(lay.d(t)) = -mean[static_cast<std::size_t>(t)] * p.power;
        spec.f(lay.c(t)) = mean[static_cast<std::size_t>(t)] * p.power;
    }

    // Equalities: dynamics, the pre-stop full-allocation rows, and the
    // post-stop action pins.
    const int stopped = T - (tau - 1);
    const int m = T + (tau - 1) + 3 * stopped;
    spec.A_eq = Eigen::MatrixXd::Zero(m, n);
    spec.b_eq = Eigen::VectorXd::Zero(m);
    int row = 0;
    for (int t = 0; t < T; ++t, ++row) {
        spec.A_eq(row, lay.e(t)) = 1.0;
        if (t > 0) spec.A_eq(row, lay.e(t - 1)) = -p.eta_self;
        spec.A_eq(row, lay.d(t)) = p.power / p.eta_d;
        spec.A_eq(row, lay.c(t)) = -p.power * p.eta_c;
        spec.b_eq(row) = t == 0 ? p.eta_self * p.e0 : 0.0;
    }
    for (int t = 0; t < T; ++t) {
        if (t + 1 < tau) {
            spec.A_eq(row, lay.c(t)) = 1.0;
            spec.A_eq(row, lay.d(t)) = 1.0;
            spec.A_eq(row, lay.g(t)) = 1.0;
            spec.b_eq(row++) = 1.0;
        } else {
            spec.A_eq(row++, lay.c(t)) = 1.0;
            spec.A_eq(row++, lay.d(t)) = 1.0;
            spec.A_eq(row++, lay.g(t)) = 1.0;
        }
    }

    // Boxes on the actions and SoC bounds; the terminal band tightens e_T
    // when the chance constraint is in force.
    double e_T_lo = p.e_min, e_T_hi = p.e_max;
    if (cfg.epsilon < 1.0) {
        e_T_lo = std::max(e_T_lo, cfg.target.band_lo);
        e_T_hi = std::min(e_T_hi, cfg.target.band_hi);
    }
    const int pn = 6 * T + 2 * T;
    spec.A_in = Eigen::MatrixXd::Zero(pn, n);
    spec.b_in = Eigen::VectorXd::Zero(pn);
    row = 0;
    auto box = [&](int col, double lo, double hi) {
        spec.A_in(row, col) = 1.0;
        spec.b_in(row++) = hi;
        spec.A_in(row, col) = -1.0;
        spec.b_in(row++) = -lo;
    };
    for (int t = 0; t < T; ++t) {
        box(lay.c(t), 0.0, 1.0);
        box(lay.d(t), 0.0, 1.0);
        box(lay.g(t), 0.0, 1.0);
        box(lay.e(t), t == T - 1 ? e_T_lo : p.e_min,
            t == T - 1 ? e_T_hi : p.e_max);
    }
    return spec;
}

ChanceCheck chance_indicator_check(double e_T, const TargetSpec& target, int K,
                                   double epsilon, double tol) {
    if (K < 1) throw std::invalid_argument("chance_indicator_check: K must be >= 1");
    const bool in_band =
        e_T >= target.band_lo - tol && e_T <= target.band_hi + tol;
    ChanceCheck out;
    out.w.assign(static_cast<std::size_t>(K), in_band ? 1 : 0);
    const double frac = in_band ? 1.0 : 0.0;
    out.feasible = frac >= 1.0 - epsilon - 1e-12;
    return out;
}

SaaSolution solve_saa(const SaaConfig& cfg) {
    validate(cfg);
    const int T = static_cast<int>(cfg.scenarios.front().prices.size());
    const SaaLpLayout lay{T};

    struct Candidate {
        int tau;
        double objective;
        double arbitrage;
        double reward;
        Eigen::VectorXd x;
    };
    std::vector<Candidate> feasible;
    for (int tau = 1; tau <= T + 1; ++tau) {
        const QpSpec spec = assemble_lp_for_tau(cfg, tau);
        const QpSolution sol = solve_qp(spec, cfg.lp_tol, cfg.lp_max_iter);
        if (sol.status != QpStatus::Optimal) continue;
        const double arbitrage = -qp_objective(spec, sol.x);
        const double reward = reward_for_tau(cfg.reward, tau);
        feasible.push_back({tau, arbitrage + reward, arbitrage, reward, sol.x});
    }
    if (feasible.empty())
        throw InfeasibleChanceConstraint(
            "solve_saa: no stopping time admits a band-feasible terminal SoC");

    double best = feasible.front().objective;
    for (const auto& c : feasible) best = std::max(best, c.objective);
    const Candidate* chosen = nullptr;
    for (const auto& c : feasible)  // stop as late as possible among ties
        if (c.objective >= best - 1e-9) chosen = &c;

    SaaSolution out;
    out.tau = chosen->tau;
    out.objective = chosen->objective;
    out.arbitrage_part = chosen->arbitrage;
    out.reward_part = chosen->reward;
    out.band_enforced = cfg.epsilon < 1.0;

    DispatchPlan& plan = out.plan;
    plan.c.resize(static_cast<std::size_t>(T));
    plan.d.resize(static_cast<std::size_t>(T));
    plan.g.resize(static_cast<std::size_t>(T));
    plan.z.resize(static_cast<std::size_t>(T));
    plan.e.resize(static_cast<std::size_t>(T) + 1);
    plan.e[0] = cfg.params.e0;
    for (int t = 0; t < T; ++t) {
        // Clip solver-tolerance noise off the box edges.
        plan.c[static_cast<std::size_t>(t)] = std::clamp(chosen->x(lay.c(t)), 0.0, 1.0);
        plan.d[static_cast<std::size_t>(t)] = std::clamp(chosen->x(lay.d(t)), 0.0, 1.0);
        plan.g[static_cast<std::size_t>(t)] = std::clamp(chosen->x(lay.g(t)), 0.0, 1.0);
        plan.z[static_cast<std::size_t>(t)] = t + 1 >= chosen->tau ? 1.0 : 0.0;
        plan.e[static_cast<std::size_t>(t) + 1] = chosen->x(lay.e(t));
    }

    const auto chance = chance_indicator_check(
        plan.e.back(), cfg.target, static_cast<int>(cfg.scenarios.size()),
        cfg.epsilon, 1e-6);
    out.w = chance.w;
    out.chance_feasible = chance.feasible;
    return out;
}

}  // namespace arb
