#include "arb/storage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "arb/errors.hpp"

namespace arb {

void validate(const BatteryParams& p) {
    if (!(0.0 <= p.e_min && p.e_min < p.e_max))
        throw ConfigError("battery: need 0 <= e_min < e_max");
    if (!(p.eta_c > 0.0 && p.eta_c <= 1.0))
        throw ConfigError("battery: eta_c must be in (0,1]");
    if (!(p.eta_d > 0.0 && p.eta_d <= 1.0))
        throw ConfigError("battery: eta_d must be in (0,1]");
    if (!(p.eta_self > 0.0 && p.eta_self <= 1.0))
        throw ConfigError("battery: eta_self must be in (0,1]");
    if (!(p.power > 0.0))
        throw ConfigError("battery: power must be positive");
    if (!(p.e_min <= p.e0 && p.e0 <= p.e_max))
        throw ConfigError("battery: e0 outside [e_min, e_max]");
}

void validate(const TargetSpec& t, const BatteryParams& p, int horizon) {
    if (!(p.e_min <= t.band_lo && t.band_lo <= t.e_target &&
          t.e_target <= t.band_hi && t.band_hi <= p.e_max))
        throw ConfigError("target: need e_min <= band_lo <= e_target <= band_hi <= e_max");
    if (t.rho < 0.0) throw ConfigError("target: rho must be >= 0");
    if (!(0.0 <= t.epsilon && t.epsilon < 1.0))
        throw ConfigError("target: epsilon must be in [0,1)");
    for (int h : t.critical_hours)
        if (h < 1 || h > horizon)
            throw ConfigError("target: critical hour outside 1..T");
}

RewardSeries RewardSeries::constant(int horizon, double c, RewardMode mode) {
    RewardSeries r;
    r.values.assign(static_cast<std::size_t>(horizon), c);
    r.mode = mode;
    return r;
}

DispatchPlan DispatchPlan::idle(int horizon, const BatteryParams& params) {
    DispatchPlan p;
    const auto n = static_cast<std::size_t>(horizon);
    p.c.assign(n, 0.0);
    p.d.assign(n, 0.0);
    p.g.assign(n, 1.0);
    p.z.assign(n, 0.0);
    p.e.resize(n + 1);
    p.e[0] = params.e0;
    for (std::size_t t = 0; t < n; ++t) p.e[t + 1] = params.eta_self * p.e[t];
    return p;
}

double soc_step(double e_prev, double charge_mwh, double discharge_mwh,
                const BatteryParams& params) {
    if (charge_mwh < 0.0 || discharge_mwh < 0.0)
        throw std::invalid_argument("soc_step: charge and discharge must be >= 0");
    return params.eta_self * e_prev - discharge_mwh / params.eta_d +
           charge_mwh * params.eta_c;
}

double plan_profit(const DispatchPlan& plan, const PriceScenario& scenario,
                   const BatteryParams& params) {
    if (plan.c.size() != scenario.prices.size())
        throw std::invalid_argument("plan_profit: horizon mismatch");
    double profit = 0.0;
    for (std::size_t t = 0; t < plan.c.size(); ++t)
        profit += scenario.prices[t] * params.power * (plan.d[t] - plan.c[t]);
    return profit;
}

double stopping_reward_value(const DispatchPlan& plan, const RewardSeries& reward) {
    if (plan.z.size() != reward.values.size())
        throw std::invalid_argument("stopping_reward_value: horizon mismatch");
    double total = 0.0;
    double z_prev = 0.0;
    for (std::size_t t = 0; t < plan.z.size(); ++t) {
        if (reward.mode == RewardMode::CumulativeAfterStop)
            total += reward.values[t] * plan.z[t];
        else
            total += reward.values[t] * (plan.z[t] - z_prev);
        z_prev = plan.z[t];
    }
    return total;
}

int stopping_time(const DispatchPlan& plan, double threshold) {
    for (std::size_t t = 0; t < plan.z.size(); ++t)
        if (plan.z[t] >= threshold) return static_cast<int>(t) + 1;
    return plan.horizon() + 1;
}

std::string PlanViolation::message() const {
    const char* what = "violation";
    switch (kind) {
        case Kind::SocLower: what = "SoC lower bound"; break;
        case Kind::SocUpper: what = "SoC upper bound"; break;
        case Kind::Dynamics: what = "dynamics mismatch"; break;
        case Kind::BoxCharge: what = "c out of [0,1]"; break;
        case Kind::BoxDischarge: what = "d out of [0,1]"; break;
        case Kind::BoxIdle: what = "g out of [0,1]"; break;
        case Kind::BoxStop: what = "z out of [0,1]"; break;
        case Kind::ZMonotone: what = "z not monotone"; break;
        case Kind::ChargeWhileStopped: what = "c exceeds 1-z"; break;
        case Kind::DischargeWhileStopped: what = "d exceeds 1-z"; break;
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s at t=%d", what, t);
    return buf;
}

namespace {

void check_box(std::vector<PlanViolation>& out, const std::vector<double>& v,
               PlanViolation::Kind kind, double tol) {
    for (std::size_t t = 0; t < v.size(); ++t) {
        const double excess = std::max(-v[t], v[t] - 1.0);
        if (excess > tol)
            out.push_back({kind, static_cast<int>(t) + 1, excess});
    }
}

}  // namespace

std::vector<PlanViolation> check_plan(const DispatchPlan& plan,
                                      const BatteryParams& params,
                                      double tol) {
    std::vector<PlanViolation> out;
    const int T = plan.horizon();
    if (plan.e.size() != static_cast<std::size_t>(T) + 1)
        throw std::invalid_argument("check_plan: SoC trajectory must have length T+1");

    for (int t = 0; t <= T; ++t) {
        if (params.e_min - plan.e[t] > tol)
            out.push_back({PlanViolation::Kind::SocLower, t, params.e_min - plan.e[t]});
        if (plan.e[t] - params.e_max > tol)
            out.push_back({PlanViolation::Kind::SocUpper, t, plan.e[t] - params.e_max});
    }
    for (int t = 1; t <= T; ++t) {
        const double predicted =
            soc_step(plan.e[t - 1], params.power * std::max(plan.c[t - 1], 0.0),
                     params.power * std::max(plan.d[t - 1], 0.0), params);
        const double err = std::abs(plan.e[t] - predicted);
        if (err > tol) out.push_back({PlanViolation::Kind::Dynamics, t, err});
    }
    check_box(out, plan.c, PlanViolation::Kind::BoxCharge, tol);
    check_box(out, plan.d, PlanViolation::Kind::BoxDischarge, tol);
    check_box(out, plan.g, PlanViolation::Kind::BoxIdle, tol);
    check_box(out, plan.z, PlanViolation::Kind::BoxStop, tol);
    double z_prev = 0.0;
    for (int t = 1; t <= T; ++t) {
        if (z_prev - plan.z[t - 1] > tol)
            out.push_back({PlanViolation::Kind::ZMonotone, t, z_prev - plan.z[t - 1]});
        z_prev = plan.z[t - 1];
        if (plan.c[t - 1] - (1.0 - plan.z[t - 1]) > tol)
            out.push_back({PlanViolation::Kind::ChargeWhileStopped, t,
                           plan.c[t - 1] - (1.0 - plan.z[t - 1])});
        if (plan.d[t - 1] - (1.0 - plan.z[t - 1]) > tol)
            out.push_back({PlanViolation::Kind::DischargeWhileStopped, t,
                           plan.d[t - 1] - (1.0 - plan.z[t - 1])});
    }
    return out;
}

Interval reach_interval(double e_now, int steps, const BatteryParams& params) {
    if (steps < 0) throw std::invalid_argument("reach_interval: steps must be >= 0");
    Interval r{e_now, e_now};
    for (int k = 0; k < steps; ++k) {
        r.hi = std::min(params.e_max,
                        params.eta_self * r.hi + params.power * params.eta_c);
        r.lo = std::max(params.e_min,
                        params.eta_self * r.lo - params.power / params.eta_d);
    }
    return r;
}

int point_of_no_return(const TargetSpec& target,
                       const std::vector<double>& e_schedule,
                       const BatteryParams& params) {
    if (e_schedule.empty())
        throw std::invalid_argument("point_of_no_return: empty schedule");
    if (target.critical_hours.empty())
        throw std::invalid_argument("point_of_no_return: no critical hours");
    const int tau = *std::max_element(target.critical_hours.begin(),
                                      target.critical_hours.end());
    if (static_cast<std::size_t>(tau) >= e_schedule.size())
        throw std::invalid_argument("point_of_no_return: schedule shorter than tau");
    for (int t = tau; t >= 0; --t) {
        const Interval r = reach_interval(e_schedule[t], tau - t, params);
        if (r.intersects(target.band_lo, target.band_hi)) return t;
    }
    return 0;
}

}  // namespace arb
