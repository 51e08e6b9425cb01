#pragma once

// Physical battery model, stopping-reward accounting, plan feasibility
// checks and reachability analysis shared by every solver.
//
// Conventions used throughout:
//  - one step = one hour, so a rate P in MW equals P MWh per step;
//  - vectors of per-step quantities have length T and index 0 stores t = 1;
//  - SoC trajectories have length T+1 with index 0 storing e_0;
//  - charge/discharge entries of a DispatchPlan are fractions of P, while
//    soc_step takes energies in MWh.

#include <cstdint>
#include <string>
#include <vector>

namespace arb {

struct BatteryParams {
    double e_min = 0.0;      ///< lower SoC bound (MWh)
    double e_max = 10.0;     ///< upper SoC bound (MWh)
    double power = 5.0;      ///< max charge/discharge rate P (MW)
    double eta_c = 0.9;      ///< charging efficiency
    double eta_d = 0.9;      ///< discharging efficiency
    double eta_self = 0.995; ///< self-discharge factor per step
    double e0 = 5.0;         ///< initial SoC (MWh)
};

/// Throws ConfigError if the parameter invariants do not hold.
void validate(const BatteryParams& params);

struct TargetSpec {
    double band_lo = 5.0;   ///< lower edge of the terminal SoC band (MWh)
    double band_hi = 7.0;   ///< upper edge of the terminal SoC band (MWh)
    double e_target = 6.0;  ///< penalty reference SoC (MWh)
    double rho = 10.0;      ///< terminal deviation penalty weight ($/MWh^2)
    double epsilon = 0.1;   ///< risk tolerance of the chance constraint
    std::vector<int> critical_hours = {24};  ///< 1-based step indices
};

void validate(const TargetSpec& target, const BatteryParams& params, int horizon);

enum class RewardMode {
    CumulativeAfterStop,  ///< pays r_t every step with z_t = 1
    OnceAtStop,           ///< pays r_t only at the 0->1 transition of z
};

struct RewardSeries {
    std::vector<double> values;  ///< r_t in $ per step, length T
    RewardMode mode = RewardMode::CumulativeAfterStop;

    static RewardSeries constant(int horizon, double c, RewardMode mode);
};

struct PriceScenario {
    std::vector<double> prices;    ///< lambda_t in $/MWh, length T
    std::vector<double> features;  ///< optional exogenous covariates
    std::string id;
};

/// Charge/discharge/idle/stop trajectory. z is binary for SAA solutions and
/// relaxed to [0,1] for the E2E dispatch layer.
struct DispatchPlan {
    std::vector<double> c;  ///< charge fraction of P per step
    std::vector<double> d;  ///< discharge fraction of P per step
    std::vector<double> g;  ///< idle fraction per step
    std::vector<double> z;  ///< stop level per step
    std::vector<double> e;  ///< SoC trajectory, length T+1 including e_0

    int horizon() const { return static_cast<int>(c.size()); }

    static DispatchPlan idle(int horizon, const BatteryParams& params);
};

/// One-step SoC transition e' = eta_self*e - d/eta_d + c*eta_c.
/// c and d are energies in MWh at the meter; no clamping is applied.
/// Throws std::invalid_argument for negative c or d.
double soc_step(double e_prev, double charge_mwh, double discharge_mwh,
                const BatteryParams& params);

/// Arbitrage revenue sum_t lambda_t * P * (d_t - c_t) for one price path.
double plan_profit(const DispatchPlan& plan, const PriceScenario& scenario,
                   const BatteryParams& params);

/// Reward collected by the stop trajectory z under the series' payout mode.
double stopping_reward_value(const DispatchPlan& plan, const RewardSeries& reward);

/// First 1-based step with z_t >= threshold, or T+1 if the plan never stops.
int stopping_time(const DispatchPlan& plan, double threshold = 0.5);

struct PlanViolation {
    enum class Kind {
        SocLower,
        SocUpper,
        Dynamics,
        BoxCharge,
        BoxDischarge,
        BoxIdle,
        BoxStop,
        ZMonotone,
        ChargeWhileStopped,
        DischargeWhileStopped,
    };
    Kind kind;
    int t;          ///< 1-based step
    double amount;  ///< magnitude of the violation
    std::string message() const;
};

/// Empty result iff SoC bounds, dynamics consistency, the [0,1] boxes on
/// c/d/g/z, z monotonicity and c_t <= 1-z_t, d_t <= 1-z_t all hold within tol.
std::vector<PlanViolation> check_plan(const DispatchPlan& plan,
                                      const BatteryParams& params,
                                      double tol = 1e-6);

struct Interval {
    double lo;
    double hi;
    bool contains(double v) const { return lo <= v && v <= hi; }
    bool intersects(double a, double b) const { return lo <= b && a <= hi; }
};

/// Reachable SoC interval after `steps` steps of extreme control, clamping
/// to [e_min, e_max] at every step.
Interval reach_interval(double e_now, int steps, const BatteryParams& params);

/// Largest 1-based t <= tau (tau = max critical hour) from which the target
/// band is still reachable along the scheduled trajectory; 0 if none.
/// e_schedule[t] is the scheduled SoC at step t, with e_schedule[0] = e_0.
int point_of_no_return(const TargetSpec& target,
                       const std::vector<double>& e_schedule,
                       const BatteryParams& params);

}  // namespace arb
