#pragma once

// Sample-average-approximation solver for the stochastic arbitrage problem
// with stopping-time reward and chance-constrained terminal SoC.
//
// Because the stopping variable z is binary and monotone, there are exactly
// T+1 stopping patterns; the solver enumerates them and solves one LP per
// pattern instead of a mixed-integer program. Decisions are shared across
// scenarios, so the scenario-averaged price objective collapses to a single
// mean-price LP and the chance constraint collapses to a deterministic
// terminal band whenever epsilon < 1.

#include <vector>

#include "arb/qp.hpp"
#include "arb/storage.hpp"

namespace arb {

struct SaaConfig {
    std::vector<PriceScenario> scenarios;  ///< K scenarios, common horizon
    double epsilon = 0.1;
    RewardSeries reward;
    BatteryParams params;
    TargetSpec target;
    double lp_tol = 1e-9;
    int lp_max_iter = 200;
};

void validate(const SaaConfig& cfg);

/// Column layout of the per-tau LP: x = [c(T), d(T), g(T), e(T)].
struct SaaLpLayout {
    int T;
    int c(int t) const { return t; }          ///< 0-based step
    int d(int t) const { return T + t; }
    int g(int t) const { return 2 * T + t; }
    int e(int t) const { return 3 * T + t; }  ///< SoC after step t+1
    int num_vars() const { return 4 * T; }
};

/// LP over (c,d,g,e) with the stop pattern z_t = 1{t >= tau} fixed,
/// tau in 1..T+1. The terminal band is imposed whenever epsilon < 1.
QpSpec assemble_lp_for_tau(const SaaConfig& cfg, int tau);

struct ChanceCheck {
    std::vector<int> w;  ///< scenario indicators, all equal by construction
    bool feasible;       ///< mean(w) >= 1 - epsilon
};

/// Scenario indicators for a deterministic terminal SoC: w_k = 1 iff e_T
/// lies in the band (within tol), and the chance constraint is feasible iff
/// mean(w) >= 1 - epsilon.
ChanceCheck chance_indicator_check(double e_T, const TargetSpec& target, int K,
                                   double epsilon, double tol = 0.0);

struct SaaSolution {
    DispatchPlan plan;      ///< z binary
    int tau = 0;            ///< stopping time, T+1 when the plan never stops
    double objective = 0.0;
    double arbitrage_part = 0.0;  ///< mean-price LP value
    double reward_part = 0.0;
    std::vector<int> w;
    bool chance_feasible = true;
    bool band_enforced = true;  ///< epsilon < 1 collapsed the chance constraint
};

/// Enumerates tau = 1..T+1, solves each LP, and returns the best objective.
/// Ties within 1e-9 resolve to the largest tau. Throws
/// InfeasibleChanceConstraint when no stopping time admits a band-feasible
/// terminal SoC and epsilon < 1.
SaaSolution solve_saa(const SaaConfig& cfg);

}  // namespace arb
