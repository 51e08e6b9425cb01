#include "arb/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "arb/errors.hpp"

namespace arb {

const char* action_name(Action a) {
    switch (a) {
        case Action::Discharge: return "discharge";
        case Action::Idle: return "idle";
        case Action::Charge: return "charge";
        case Action::Stop: return "stop";
    }
    return "?";
}

BinningSpec BinningSpec::fit(const std::vector<PriceScenario>& scenarios, int bins) {
    BinningSpec spec;
    spec.bins = bins;
    spec.lambda_min = std::numeric_limits<double>::infinity();
    spec.lambda_max = -spec.lambda_min;
    for (const auto& sc : scenarios)
        for (double v : sc.prices) {
            spec.lambda_min = std::min(spec.lambda_min, v);
            spec.lambda_max = std::max(spec.lambda_max, v);
        }
    if (!(spec.lambda_max > spec.lambda_min))
        spec.lambda_max = spec.lambda_min + 1.0;
    return spec;
}

void validate(const BinningSpec& spec) {
    if (!(spec.lambda_max > spec.lambda_min))
        throw ConfigError("binning: lambda_max must exceed lambda_min");
    if (spec.bins < 2) throw ConfigError("binning: need at least 2 bins");
}

int bin_price(double lambda, const BinningSpec& spec) {
    const int raw =
        static_cast<int>(std::floor((lambda - spec.lambda_min) / spec.delta()));
    return std::max(0, std::min(raw, spec.bins - 1));
}

double EpsSchedule::at(int episode, int total_episodes) const {
    const double horizon = anneal_fraction * total_episodes;
    if (horizon <= 0.0) return end;
    const double frac = std::min(1.0, episode / horizon);
    return start + frac * (end - start);
}

void validate(const DqnConfig& cfg) {
    validate(cfg.battery);
    validate(cfg.binning);
    if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0))
        throw ConfigError("dqn: gamma must be in (0,1)");
    if (cfg.batch_size <= 0 || cfg.buffer_capacity <= 0 || cfg.episodes <= 0 ||
        cfg.target_sync_period <= 0)
        throw ConfigError("dqn: counts must be positive");
    if (cfg.buffer_capacity <= cfg.batch_size)
        throw ConfigError("dqn: buffer capacity must exceed batch size");
    if (cfg.reward.values.empty())
        throw ConfigError("dqn: reward series is empty");
}

Eigen::VectorXd QNetwork::normalized_input(const MdpState& s) const {
    Eigen::VectorXd x(3);
    x << s.e / e_max, static_cast<double>(s.p) / (bins - 1),
        static_cast<double>(s.t) / horizon;
    return x;
}

QNetwork make_q_network(const DqnConfig& cfg) {
    std::vector<int> sizes{3};
    for (int h : cfg.hidden) sizes.push_back(h);
    sizes.push_back(kNumActions);
    Mlp online(sizes, cfg.seed);
    Mlp target = online;
    return QNetwork{std::move(online), std::move(target), cfg.battery.e_max,
                    cfg.binning.bins,
                    static_cast<int>(cfg.reward.values.size())};
}

Eigen::VectorXd q_forward(const QNetwork& net, const MdpState& state) {
    return net.online.forward(net.normalized_input(state));
}

std::array<bool, kNumActions> feasible_actions(const MdpState& state,
                                               const DqnConfig& cfg) {
    std::array<bool, kNumActions> mask{};
    if (state.u) {
        mask[action_index(Action::Idle)] = true;
        return mask;
    }
    const double S = std::floor(cfg.battery.e_max);
    const double P = cfg.battery.power;
    mask[action_index(Action::Idle)] = true;
    mask[action_index(Action::Stop)] = true;
    mask[action_index(Action::Discharge)] =
        state.e > 1e-9 && state.e - P >= cfg.battery.e_min - 1e-9;
    mask[action_index(Action::Charge)] = state.e < S - P - 1e-9;
    return mask;
}

double terminal_penalty(double e_final, const DqnConfig& cfg) {
    if (e_final >= cfg.target.band_lo - 1e-12 &&
        e_final <= cfg.target.band_hi + 1e-12)
        return 0.0;
    const double hi = cfg.penalty_uses_band_edges ? cfg.target.band_hi
                                                  : cfg.battery.e_max;
    const double lo = cfg.penalty_uses_band_edges ? cfg.target.band_lo
                                                  : cfg.battery.e_min;
    const double up = e_final - hi;
    const double down = lo - e_final;
    return cfg.rho * (up * up + down * down);
}

StepResult env_step(const MdpState& state, Action action, double lambda_t,
                    double lambda_next, const DqnConfig& cfg) {
    const auto mask = feasible_actions(state, cfg);
    if (!mask[static_cast<std::size_t>(action_index(action))])
        throw std::logic_error("env_step: infeasible action was forced");

    const double P = cfg.battery.power;
    const int T = static_cast<int>(cfg.reward.values.size());
    const double r_t = cfg.reward.values[static_cast<std::size_t>(state.t - 1)];

    double e_next = state.e;
    double reward = 0.0;
    if (state.u) {
        // Reserve-preserving mode: the SoC holds; cumulative payout keeps
        // paying the series, the once-only variant already paid at the switch.
        reward = cfg.reward.mode == RewardMode::CumulativeAfterStop ? r_t : 0.0;
    } else {
        switch (action) {
            case Action::Discharge:
                e_next = state.e - P;
                reward = lambda_t * P;
                break;
            case Action::Charge:
                e_next = state.e + P;
                reward = -lambda_t * P;
                break;
            case Action::Idle:
                reward = 0.0;
                break;
            case Action::Stop:
                reward = r_t;
                break;
        }
    }

    const bool done = state.t == T;
    if (done) reward -= terminal_penalty(e_next, cfg);

    StepResult out;
    out.next.e = e_next;
    out.next.p = done ? 0 : bin_price(lambda_next, cfg.binning);
    out.next.t = state.t + 1;
    out.next.u = state.u || action == Action::Stop;
    out.reward = reward;
    out.done = done;
    return out;
}

Action select_action(const QNetwork& net, const MdpState& state, double eps,
                     const std::array<bool, kNumActions>& feasible,
                     std::mt19937_64& rng) {
    std::vector<int> allowed;
    for (int i = 0; i < kNumActions; ++i)
        if (feasible[static_cast<std::size_t>(i)]) allowed.push_back(i);
    if (allowed.empty()) throw std::logic_error("select_action: empty mask");

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < eps) {
        std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
        return action_from_index(allowed[pick(rng)]);
    }
    const Eigen::VectorXd q = q_forward(net, state);
    int best = allowed.front();
    for (int i : allowed)
        if (q(i) > q(best)) best = i;
    return action_from_index(best);
}

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity <= 0) throw std::invalid_argument("replay buffer: capacity > 0");
    data_.reserve(static_cast<std::size_t>(capacity));
}

void ReplayBuffer::push(const Transition& t) {
    if (size() < capacity_) {
        data_.push_back(t);
    } else {
        data_[static_cast<std::size_t>(write_)] = t;
        write_ = (write_ + 1) % capacity_;
    }
}

std::vector<Transition> ReplayBuffer::sample(int batch, std::mt19937_64& rng) const {
    if (batch > size())
        throw std::invalid_argument("replay buffer: batch larger than contents");
    // Uniform without replacement via a partial Fisher-Yates over indices.
    std::vector<int> idx(data_.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                        idx.size() - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[pick(rng)]);
        out.push_back(data_[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    }
    return out;
}

namespace {

double masked_target_max(const QNetwork& net, const MdpState& next,
                         const DqnConfig& cfg) {
    const auto mask = feasible_actions(next, cfg);
    const Eigen::VectorXd q = net.target.forward(net.normalized_input(next));
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kNumActions; ++i)
        if (mask[static_cast<std::size_t>(i)]) best = std::max(best, q(i));
    return best;
}

struct HourlyRange {
    std::vector<double> lo;
    std::vector<double> hi;
};

HourlyRange fit_hourly_ranges(const std::vector<PriceScenario>& scenarios, int T) {
    HourlyRange r;
    r.lo.assign(static_cast<std::size_t>(T), std::numeric_limits<double>::infinity());
    r.hi.assign(static_cast<std::size_t>(T), -std::numeric_limits<double>::infinity());
    for (const auto& sc : scenarios)
        for (int t = 0; t < T; ++t) {
            r.lo[static_cast<std::size_t>(t)] =
                std::min(r.lo[static_cast<std::size_t>(t)], sc.prices[static_cast<std::size_t>(t)]);
            r.hi[static_cast<std::size_t>(t)] =
                std::max(r.hi[static_cast<std::size_t>(t)], sc.prices[static_cast<std::size_t>(t)]);
        }
    return r;
}

}  // namespace

DqnTrainResult train_dqn(const DqnConfig& cfg,
                         const std::vector<PriceScenario>& scenarios) {
    validate(cfg);
    if (scenarios.empty()) throw ConfigError("train_dqn: need at least one scenario");
    const int T = static_cast<int>(cfg.reward.values.size());
    for (const auto& sc : scenarios)
        if (static_cast<int>(sc.prices.size()) != T)
            throw ConfigError("train_dqn: scenario horizon mismatch");

    std::mt19937_64 rng(cfg.seed);
    DqnTrainResult result{make_q_network(cfg), {}};
    QNetwork& net = result.net;
    ReplayBuffer buffer(cfg.buffer_capacity);
    const HourlyRange ranges = fit_hourly_ranges(scenarios, T);

    std::vector<double> prices(static_cast<std::size_t>(T));
    int grad_steps = 0;
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const double eps = cfg.eps_schedule.at(ep, cfg.episodes);
        if (cfg.sampling == PriceSampling::HistoricalReplay) {
            std::uniform_int_distribution<std::size_t> pick(0, scenarios.size() - 1);
            prices = scenarios[pick(rng)].prices;
        } else {
            for (int t = 0; t < T; ++t) {
                std::uniform_real_distribution<double> day(
                    ranges.lo[static_cast<std::size_t>(t)],
                    ranges.hi[static_cast<std::size_t>(t)]);
                prices[static_cast<std::size_t>(t)] = day(rng);
            }
        }

        MdpState state{cfg.battery.e0, bin_price(prices[0], cfg.binning), 1, false};
        double episode_return = 0.0;
        double loss_sum = 0.0;
        int loss_count = 0;

        for (int t = 1; t <= T; ++t) {
            const auto mask = feasible_actions(state, cfg);
            const Action a = select_action(net, state, eps, mask, rng);
            const double lambda_next =
                t < T ? prices[static_cast<std::size_t>(t)] : 0.0;
            const StepResult step =
                env_step(state, a, prices[static_cast<std::size_t>(t - 1)],
                         lambda_next, cfg);
            buffer.push({state, a, step.reward, step.next, step.done});
            episode_return += step.reward;
            state = step.next;

            if (buffer.size() >= cfg.batch_size) {
                const auto batch = buffer.sample(cfg.batch_size, rng);
                auto grads = net.online.zero_gradients();
                double batch_loss = 0.0;
                for (const auto& tr : batch) {
                    const double y =
                        tr.r + (tr.done ? 0.0
                                        : cfg.gamma * masked_target_max(net, tr.next, cfg));
                    Mlp::Cache cache;
                    const Eigen::VectorXd q =
                        net.online.forward(net.normalized_input(tr.s), cache);
                    const int ai = action_index(tr.a);
                    const double err = q(ai) - y;
                    batch_loss += err * err;
                    Eigen::VectorXd dout = Eigen::VectorXd::Zero(kNumActions);
                    dout(ai) = 2.0 * err / cfg.batch_size;
                    net.online.backward(cache, dout, grads);
                }
                batch_loss /= cfg.batch_size;
                if (batch_loss > 1e9)
                    throw TrainingDiverged("train_dqn: batch loss exceeded 1e9");
                net.online.sgd_step(grads, cfg.learning_rate);
                loss_sum += batch_loss;
                ++loss_count;
                if (++grad_steps % cfg.target_sync_period == 0)
                    net.target = net.online;
            }
        }
        result.log.push_back({ep, episode_return,
                              loss_count > 0 ? loss_sum / loss_count : 0.0, eps});
    }
    return result;
}

void write_training_log_csv(const std::vector<EpisodeLog>& log, std::ostream& os) {
    os << "episode,return,loss,epsilon\n";
    char buf[160];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", row.episode,
                      row.episode_return, row.loss, row.epsilon);
        os << buf;
    }
}

Action PolicyTable::lookup(double e, int p, int t) const {
    int ei = -1;
    for (std::size_t i = 0; i < soc_levels.size(); ++i)
        if (std::abs(soc_levels[i] - e) < 1e-6) {
            ei = static_cast<int>(i);
            break;
        }
    if (ei < 0 || p < 0 || p >= bins || t < 1 || t > horizon)
        throw std::out_of_range("policy table: state off the tabulated grid");
    const std::size_t at =
        (static_cast<std::size_t>(t - 1) * static_cast<std::size_t>(bins) +
         static_cast<std::size_t>(p)) *
            soc_levels.size() +
        static_cast<std::size_t>(ei);
    return actions[at];
}

PolicyTable extract_policy(const QNetwork& net, const BinningSpec& spec,
                           const BatteryParams& battery, int horizon) {
    PolicyTable table;
    table.bins = spec.bins;
    table.horizon = horizon;

    const double S = std::floor(battery.e_max);
    const double P = battery.power;
    std::vector<double>& levels = table.soc_levels;
    for (double e = 0.0; e <= S - P + 1e-9; e += P) levels.push_back(e);
    for (double e = battery.e0; e >= battery.e_min - 1e-9; e -= P)
        levels.push_back(std::max(e, 0.0));
    for (double e = battery.e0; e <= S + 1e-9; e += P) levels.push_back(e);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end(),
                             [](double a, double b) { return std::abs(a - b) < 1e-9; }),
                 levels.end());

    DqnConfig mask_cfg;  // only battery limits matter for feasibility
    mask_cfg.battery = battery;
    table.actions.reserve(static_cast<std::size_t>(horizon) *
                          static_cast<std::size_t>(spec.bins) * levels.size());
    for (int t = 1; t <= horizon; ++t)
        for (int p = 0; p < spec.bins; ++p)
            for (double e : levels) {
                const MdpState s{e, p, t, false};
                const auto mask = feasible_actions(s, mask_cfg);
                const Eigen::VectorXd q = q_forward(net, s);
                int best = -1;
                for (int i = 0; i < kNumActions; ++i) {
                    if (!mask[static_cast<std::size_t>(i)]) continue;
                    if (best < 0 || q(i) > q(best)) best = i;
                }
                table.actions.push_back(action_from_index(best));
            }
    return table;
}

void write_policy_csv(const PolicyTable& table, std::ostream& os) {
    os << "e,p,t,action\n";
    char buf[96];
    std::size_t at = 0;
    for (int t = 1; t <= table.horizon; ++t)
        for (int p = 0; p < table.bins; ++p)
            for (double e : table.soc_levels) {
                std::snprintf(buf, sizeof(buf), "%.17g,%d,%d,%d\n", e, p, t,
                              static_cast<int>(table.actions[at++]));
                os << buf;
            }
}

std::vector<RolloutResult> evaluate_policy(const PolicyTable& policy,
                                           const std::vector<PriceScenario>& scenarios,
                                           const DqnConfig& cfg) {
    const int T = static_cast<int>(cfg.reward.values.size());
    std::vector<RolloutResult> out;
    out.reserve(scenarios.size());
    for (const auto& sc : scenarios) {
        MdpState state{cfg.battery.e0, bin_price(sc.prices[0], cfg.binning), 1,
                       false};
        RolloutResult r{0.0, T + 1, 0.0, 0.0};
        for (int t = 1; t <= T; ++t) {
            const Action a =
                state.u ? Action::Idle : policy.lookup(state.e, state.p, state.t);
            if (a == Action::Stop && r.tau == T + 1) r.tau = t;
            const double lambda_next =
                t < T ? sc.prices[static_cast<std::size_t>(t)] : 0.0;
            const StepResult step = env_step(
                state, a, sc.prices[static_cast<std::size_t>(t - 1)], lambda_next, cfg);
            r.profit += step.reward;
            state = step.next;
        }
        r.e_final = state.e;
        r.penalty = terminal_penalty(state.e, cfg);
        out.push_back(r);
    }
    return out;
}

}  // namespace arb
