#pragma once

// Finite-horizon MDP for battery arbitrage on binned prices, and a DQN
// agent over it: replay buffer, target network, epsilon-greedy exploration,
// feasibility masking and policy tabulation.
//
// The MDP deliberately uses the coarse dynamics e' = e +/- P with no
// efficiencies; the physical model in storage.hpp keeps the efficiency-
// aware convention and the two are not reconciled.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "arb/mlp.hpp"
#include "arb/storage.hpp"

namespace arb {

enum class Action : int { Discharge = -1, Idle = 0, Charge = 1, Stop = 2 };

constexpr int kNumActions = 4;

/// Position of an action in Q-vectors: Discharge, Idle, Charge, Stop.
inline int action_index(Action a) { return static_cast<int>(a) + 1; }
inline Action action_from_index(int i) { return static_cast<Action>(i - 1); }
const char* action_name(Action a);

struct MdpState {
    double e = 0.0;  ///< discretized SoC (MWh)
    int p = 0;       ///< price bin
    int t = 1;       ///< 1-based step
    bool u = false;  ///< stopping flag
};

struct BinningSpec {
    double lambda_min = 0.0;
    double lambda_max = 100.0;
    int bins = 10;
    double delta() const { return (lambda_max - lambda_min) / bins; }

    /// Price range fitted over a scenario set.
    static BinningSpec fit(const std::vector<PriceScenario>& scenarios, int bins);
};

void validate(const BinningSpec& spec);

/// Clipped bin index max(0, min(floor((lambda - min)/delta), B-1)).
int bin_price(double lambda, const BinningSpec& spec);

struct EpsSchedule {
    double start = 1.0;
    double end = 0.05;
    double anneal_fraction = 0.5;  ///< fraction of episodes spent annealing
    double at(int episode, int total_episodes) const;
};

enum class PriceSampling {
    IidUniform,        ///< per-hour uniform draws from fitted ranges
    HistoricalReplay,  ///< replay whole historical days
};

struct DqnConfig {
    BatteryParams battery;
    TargetSpec target;
    BinningSpec binning;
    RewardSeries reward;
    double gamma = 0.99;
    EpsSchedule eps_schedule;
    double learning_rate = 1e-3;
    int batch_size = 64;
    int buffer_capacity = 100000;
    int target_sync_period = 500;  ///< gradient steps between target syncs
    int episodes = 500;
    double rho = 10.0;  ///< terminal penalty weight
    std::uint64_t seed = 1;
    PriceSampling sampling = PriceSampling::IidUniform;
    bool penalty_uses_band_edges = false;  ///< substitute band edges for e_min/e_max
    std::vector<int> hidden = {64, 64};
};

void validate(const DqnConfig& cfg);

/// Online and target networks plus the input normalization context.
struct QNetwork {
    Mlp online;
    Mlp target;
    double e_max;
    int bins;
    int horizon;

    Eigen::VectorXd normalized_input(const MdpState& s) const;
};

QNetwork make_q_network(const DqnConfig& cfg);

/// Deterministic forward pass of the online network; one value per action.
Eigen::VectorXd q_forward(const QNetwork& net, const MdpState& state);

/// Feasible actions for a state, indexed by action_index.
std::array<bool, kNumActions> feasible_actions(const MdpState& state,
                                               const DqnConfig& cfg);

struct StepResult {
    MdpState next;
    double reward;
    bool done;
};

/// One environment transition. lambda_t prices the current step; lambda_next
/// only feeds the next state's bin (ignored at the terminal step). Passing
/// an infeasible action is a logic error.
StepResult env_step(const MdpState& state, Action action, double lambda_t,
                    double lambda_next, const DqnConfig& cfg);

/// Penalty subtracted at the terminal step when e_final misses the band.
double terminal_penalty(double e_final, const DqnConfig& cfg);

/// Epsilon-greedy over the feasible mask; greedy ties break to the lowest
/// action index.
Action select_action(const QNetwork& net, const MdpState& state, double eps,
                     const std::array<bool, kNumActions>& feasible,
                     std::mt19937_64& rng);

struct Transition {
    MdpState s;
    Action a;
    double r;
    MdpState next;
    bool done;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(int capacity);
    void push(const Transition& t);
    std::vector<Transition> sample(int batch, std::mt19937_64& rng) const;
    int size() const { return static_cast<int>(data_.size()); }

private:
    int capacity_;
    int write_ = 0;
    std::vector<Transition> data_;
};

struct EpisodeLog {
    int episode;
    double episode_return;
    double loss;  ///< mean Bellman loss over the episode's updates
    double epsilon;
};

struct DqnTrainResult {
    QNetwork net;
    std::vector<EpisodeLog> log;
};

/// Trains the agent; deterministic for a fixed config and seed. Throws
/// TrainingDiverged if a batch loss exceeds 1e9.
DqnTrainResult train_dqn(const DqnConfig& cfg,
                         const std::vector<PriceScenario>& scenarios);

void write_training_log_csv(const std::vector<EpisodeLog>& log, std::ostream& os);

/// Greedy action for every (SoC level, price bin, step) grid point.
struct PolicyTable {
    std::vector<double> soc_levels;
    int bins;
    int horizon;
    std::vector<Action> actions;  ///< [((t-1)*bins + p)*levels + e_index]

    Action lookup(double e, int p, int t) const;
};

PolicyTable extract_policy(const QNetwork& net, const BinningSpec& spec,
                           const BatteryParams& battery, int horizon);

void write_policy_csv(const PolicyTable& table, std::ostream& os);

struct RolloutResult {
    double profit;   ///< total return incl. stop rewards and terminal penalty
    int tau;         ///< first Stop step, T+1 if never
    double e_final;  ///< SoC after the last step
    double penalty;  ///< terminal penalty incurred (>= 0)
};

/// Deterministic greedy rollouts of a tabulated policy on realized prices.
std::vector<RolloutResult> evaluate_policy(const PolicyTable& policy,
                                           const std::vector<PriceScenario>& scenarios,
                                           const DqnConfig& cfg);

}  // namespace arb
