#include "arb/dqn.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "arb/errors.hpp"
#include "oracles.hpp"

using namespace arb;

namespace {

DqnConfig toy_config() {
    DqnConfig cfg;
    cfg.battery = BatteryParams{};  // S = 10, P = 5, e0 = 5
    cfg.target.band_lo = 0.0;
    cfg.target.band_hi = 10.0;
    cfg.target.e_target = 5.0;
    cfg.target.critical_hours = {3};
    cfg.binning = BinningSpec{0.0, 60.0, 10};
    cfg.reward = RewardSeries::constant(3, 0.0, RewardMode::OnceAtStop);
    cfg.gamma = 0.99;
    return cfg;
}

PriceScenario toy_prices() {
    PriceScenario sc;
    sc.prices = {10.0, 50.0, 20.0};
    sc.id = "toy";
    return sc;
}

// Best discounted return over all masked action sequences from a state.
double enumerate_best(const MdpState& s, const std::vector<double>& prices,
                      const DqnConfig& cfg) {
    const int T = static_cast<int>(prices.size());
    const auto mask = feasible_actions(s, cfg);
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kNumActions; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const double lambda_next =
            s.t < T ? prices[static_cast<std::size_t>(s.t)] : 0.0;
        const auto step = env_step(s, action_from_index(i),
                                   prices[static_cast<std::size_t>(s.t - 1)],
                                   lambda_next, cfg);
        const double value =
            step.reward +
            (step.done ? 0.0 : cfg.gamma * enumerate_best(step.next, prices, cfg));
        best = std::max(best, value);
    }
    return best;
}

double greedy_rollout(const QNetwork& net, MdpState s,
                      const std::vector<double>& prices, const DqnConfig& cfg) {
    const int T = static_cast<int>(prices.size());
    double total = 0.0;
    double discount = 1.0;
    std::mt19937_64 rng(0);  // eps = 0, never consulted
    while (s.t <= T) {
        const auto mask = feasible_actions(s, cfg);
        const Action a = select_action(net, s, 0.0, mask, rng);
        const double lambda_next = s.t < T ? prices[static_cast<std::size_t>(s.t)] : 0.0;
        const auto step =
            env_step(s, a, prices[static_cast<std::size_t>(s.t - 1)], lambda_next, cfg);
        total += discount * step.reward;
        discount *= cfg.gamma;
        s = step.next;
        if (step.done) break;
    }
    return total;
}

}  // namespace

TEST_CASE("bin_price clips into range") {
    BinningSpec spec{0.0, 100.0, 10};
    CHECK(bin_price(0.0, spec) == 0);
    CHECK(bin_price(37.0, spec) == 3);
    CHECK(bin_price(150.0, spec) == 9);
    CHECK(bin_price(-20.0, spec) == 0);
    CHECK(bin_price(100.0, spec) == 9);
}

TEST_CASE("env_step rewards and dynamics") {
    DqnConfig cfg = toy_config();
    SUBCASE("discharge sells at the current price") {
        const MdpState s{5.0, 0, 1, false};
        const auto r = env_step(s, Action::Discharge, 30.0, 50.0, cfg);
        CHECK(r.reward == doctest::Approx(150.0));
        CHECK(r.next.e == doctest::Approx(0.0));
        CHECK_FALSE(r.done);
    }
    SUBCASE("charge buys at the current price") {
        const MdpState s{0.0, 0, 1, false};
        const auto r = env_step(s, Action::Charge, 20.0, 50.0, cfg);
        CHECK(r.reward == doctest::Approx(-100.0));
        CHECK(r.next.e == doctest::Approx(5.0));
    }
    SUBCASE("stopped states pay nothing regardless of price") {
        const MdpState s{5.0, 0, 2, true};
        const auto r = env_step(s, Action::Idle, 500.0, 1.0, cfg);
        CHECK(r.reward == 0.0);
        CHECK(r.next.u);
        CHECK(r.next.e == 5.0);
    }
    SUBCASE("forcing an infeasible action is a logic error") {
        const MdpState s{0.0, 0, 1, false};
        CHECK_THROWS_AS(env_step(s, Action::Discharge, 10.0, 10.0, cfg),
                        std::logic_error);
    }
    SUBCASE("terminal penalty applies when the band is missed") {
        DqnConfig banded = cfg;
        banded.target.band_lo = 5.0;
        banded.target.band_hi = 7.0;
        banded.rho = 10.0;
        const MdpState s{5.0, 0, 3, false};
        const auto r = env_step(s, Action::Discharge, 10.0, 0.0, banded);
        REQUIRE(r.done);
        // e' = 0 misses [5,7]; as-printed penalty uses the battery limits.
        const double pen = 10.0 * ((0.0 - 10.0) * (0.0 - 10.0) + 0.0);
        CHECK(r.reward == doctest::Approx(10.0 * 5.0 - pen));
    }
}

TEST_CASE("q_forward basics") {
    DqnConfig cfg = toy_config();
    QNetwork net = make_q_network(cfg);
    SUBCASE("zero weights give zero values") {
        net.online.set_parameters(
            Eigen::VectorXd::Zero(net.online.parameter_count()));
        const Eigen::VectorXd q = q_forward(net, {5.0, 3, 2, false});
        CHECK(q.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("identical states give identical outputs") {
        const Eigen::VectorXd a = q_forward(net, {5.0, 2, 1, false});
        const Eigen::VectorXd b = q_forward(net, {5.0, 2, 1, false});
        CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("one-hidden-unit network matches a hand computation") {
    Mlp net({3, 1, 4}, 0);
    Eigen::VectorXd theta(3 + 1 + 4 + 4);
    theta << 0.5, -1.0, 2.0,   // W0
        0.25,                  // b0
        1.0, -2.0, 0.5, 3.0,   // W1 (4x1)
        0.1, 0.2, 0.3, 0.4;    // b1
    net.set_parameters(theta);
    const Eigen::VectorXd x = (Eigen::VectorXd(3) << 0.4, 0.2, 0.6).finished();
    const double h = std::max(0.0, 0.5 * 0.4 - 1.0 * 0.2 + 2.0 * 0.6 + 0.25);
    const Eigen::VectorXd out = net.forward(x);
    CHECK(std::abs(out(0) - (1.0 * h + 0.1)) <= 1e-12);
    CHECK(std::abs(out(1) - (-2.0 * h + 0.2)) <= 1e-12);
    CHECK(std::abs(out(2) - (0.5 * h + 0.3)) <= 1e-12);
    CHECK(std::abs(out(3) - (3.0 * h + 0.4)) <= 1e-12);
}

TEST_CASE("mlp backprop matches finite differences") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
        Mlp net({4, 8, 3}, 100 + static_cast<std::uint64_t>(rep));
        Eigen::VectorXd x(4), c(3);
        for (int i = 0; i < 4; ++i) x(i) = gauss(rng);
        for (int i = 0; i < 3; ++i) c(i) = gauss(rng);

        Mlp::Cache cache;
        net.forward(x, cache);
        auto grads = net.zero_gradients();
        net.backward(cache, c, grads);
        const Eigen::VectorXd analytic = Mlp::flatten(grads);

        const Eigen::VectorXd theta0 = net.parameters();
        const Eigen::VectorXd fd = oracle::fd_gradient(
            [&](const Eigen::VectorXd& theta) {
                Mlp probe = net;
                probe.set_parameters(theta);
                return c.dot(probe.forward(x));
            },
            theta0, 1e-5);
        worst = std::max(worst, oracle::rel_error(analytic, fd));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("select_action") {
    DqnConfig cfg = toy_config();
    cfg.battery.e_max = 20.0;  // S = 20 so that e = 5 allows all four actions
    QNetwork net = make_q_network(cfg);
    const MdpState s{5.0, 2, 1, false};
    const auto mask = feasible_actions(s, cfg);
    for (bool b : mask) CHECK(b);

    SUBCASE("eps = 1 is uniform over the mask") {
        std::mt19937_64 rng(12345);
        std::array<int, 4> counts{};
        const int draws = 10000;
        for (int i = 0; i < draws; ++i)
            ++counts[static_cast<std::size_t>(
                action_index(select_action(net, s, 1.0, mask, rng)))];
        double chi2 = 0.0;
        const double expect = draws / 4.0;
        for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
        CHECK(chi2 <= 11.345);  // chi-square df=3 at p = 0.01
    }
    SUBCASE("eps = 0 takes the masked argmax") {
        Mlp fixed = net.online;
        // Output layer bias alone sets Q = (1, 2, 3, 0).
        Eigen::VectorXd theta =
            Eigen::VectorXd::Zero(fixed.parameter_count());
        theta.tail(4) << 1.0, 2.0, 3.0, 0.0;
        fixed.set_parameters(theta);
        net.online = fixed;
        std::mt19937_64 rng(1);
        CHECK(select_action(net, s, 0.0, mask, rng) == Action::Charge);

        theta.tail(4) << 1.0, 3.0, 3.0, 0.0;  // tie between Idle and Charge
        fixed.set_parameters(theta);
        net.online = fixed;
        CHECK(select_action(net, s, 0.0, mask, rng) == Action::Idle);
    }
}

TEST_CASE("masked rollouts never breach the SoC limits") {
    DqnConfig cfg = toy_config();
    cfg.reward = RewardSeries::constant(24, 1.0, RewardMode::OnceAtStop);
    QNetwork net = make_q_network(cfg);
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> price(0.0, 60.0);
    const double S = std::floor(cfg.battery.e_max);
    int steps = 0;
    while (steps < 100000) {
        MdpState s{cfg.battery.e0, 0, 1, false};
        for (int t = 1; t <= 24; ++t, ++steps) {
            const auto mask = feasible_actions(s, cfg);
            const Action a = select_action(net, s, 1.0, mask, rng);
            if (a == Action::Charge) CHECK(s.e < S - cfg.battery.power);
            if (a == Action::Discharge) CHECK(s.e > 0.0);
            const auto step = env_step(s, a, price(rng), price(rng), cfg);
            CHECK(step.next.e >= cfg.battery.e_min - 1e-12);
            CHECK(step.next.e <= S + 1e-12);
            s = step.next;
        }
    }
}

TEST_CASE("stopping is absorbing") {
    DqnConfig cfg = toy_config();
    cfg.reward = RewardSeries::constant(6, 3.5, RewardMode::OnceAtStop);
    MdpState s{cfg.battery.e0, 0, 1, false};
    auto step = env_step(s, Action::Stop, 25.0, 30.0, cfg);
    CHECK(step.reward == doctest::Approx(3.5));
    s = step.next;
    for (int t = 2; t <= 6; ++t) {
        const auto mask = feasible_actions(s, cfg);
        for (int i = 0; i < kNumActions; ++i)
            CHECK(mask[static_cast<std::size_t>(i)] ==
                  (action_from_index(i) == Action::Idle));
        step = env_step(s, Action::Idle, 999.0, 1.0, cfg);
        CHECK(step.reward == 0.0);
        CHECK(step.next.e == s.e);
        s = step.next;
    }
}

TEST_CASE("toy training reaches the enumeration optimum") {
    DqnConfig cfg = toy_config();
    cfg.episodes = 15000;
    cfg.batch_size = 32;
    cfg.buffer_capacity = 4096;
    cfg.target_sync_period = 200;
    cfg.learning_rate = 2e-4;
    cfg.seed = 2;
    cfg.sampling = PriceSampling::HistoricalReplay;
    const auto prices = toy_prices();

    const auto result = train_dqn(cfg, {prices});

    // Compare the greedy policy against exhaustive search at every state the
    // exploration can visit (SoC levels 0 and 5 at t >= 2, e0 at t = 1).
    std::vector<MdpState> starts;
    starts.push_back({5.0, bin_price(prices.prices[0], cfg.binning), 1, false});
    for (int t = 2; t <= 3; ++t)
        for (double e : {0.0, 5.0})
            starts.push_back(
                {e, bin_price(prices.prices[static_cast<std::size_t>(t - 1)],
                              cfg.binning),
                 t, false});
    for (const auto& s0 : starts) {
        const double best = enumerate_best(s0, prices.prices, cfg);
        const double got = greedy_rollout(result.net, s0, prices.prices, cfg);
        CHECK(got == doctest::Approx(best).epsilon(1e-9));
    }

    // Bellman residuals along the greedy path from the initial state.
    MdpState s{5.0, bin_price(prices.prices[0], cfg.binning), 1, false};
    std::mt19937_64 rng(0);
    for (int t = 1; t <= 3; ++t) {
        const auto mask = feasible_actions(s, cfg);
        const Action a = select_action(result.net, s, 0.0, mask, rng);
        const double lambda_next = t < 3 ? prices.prices[static_cast<std::size_t>(t)] : 0.0;
        const auto step = env_step(s, a, prices.prices[static_cast<std::size_t>(t - 1)],
                                   lambda_next, cfg);
        const double q_sa = q_forward(result.net, s)(action_index(a));
        double target = step.reward;
        if (!step.done) {
            const auto next_mask = feasible_actions(step.next, cfg);
            const Eigen::VectorXd qn = q_forward(result.net, step.next);
            double best = -std::numeric_limits<double>::infinity();
            for (int i = 0; i < kNumActions; ++i)
                if (next_mask[static_cast<std::size_t>(i)]) best = std::max(best, qn(i));
            target += cfg.gamma * best;
        }
        CHECK(std::abs(q_sa - target) <= 0.05 * (1.0 + std::abs(q_sa)));
        s = step.next;
    }
}

TEST_CASE("dominant stopping reward stops immediately") {
    DqnConfig cfg = toy_config();
    // Cumulative payout makes every step of delay cost a full reward tick,
    // which dwarfs anything arbitrage can earn on these prices.
    cfg.reward = RewardSeries::constant(3, 400.0, RewardMode::CumulativeAfterStop);
    cfg.episodes = 4000;
    cfg.batch_size = 32;
    cfg.buffer_capacity = 4096;
    cfg.target_sync_period = 100;
    cfg.learning_rate = 5e-4;
    cfg.seed = 3;
    cfg.sampling = PriceSampling::HistoricalReplay;
    const auto result = train_dqn(cfg, {toy_prices()});
    const auto table = extract_policy(result.net, cfg.binning, cfg.battery, 3);
    const auto rollouts = evaluate_policy(table, {toy_prices()}, cfg);
    CHECK(rollouts[0].tau == 1);
}

TEST_CASE("same seed reproduces the training log exactly") {
    DqnConfig cfg = toy_config();
    cfg.episodes = 50;
    cfg.batch_size = 16;
    cfg.buffer_capacity = 512;
    cfg.seed = 9;
    const auto a = train_dqn(cfg, {toy_prices()});
    const auto b = train_dqn(cfg, {toy_prices()});
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].episode_return == b.log[i].episode_return);
        CHECK(a.log[i].loss == b.log[i].loss);
        CHECK(a.log[i].epsilon == b.log[i].epsilon);
    }
    std::ostringstream csv_a, csv_b;
    write_training_log_csv(a.log, csv_a);
    write_training_log_csv(b.log, csv_b);
    CHECK(csv_a.str() == csv_b.str());
}

TEST_CASE("extract_policy") {
    DqnConfig cfg = toy_config();
    QNetwork net = make_q_network(cfg);
    SUBCASE("zero weights tabulate the lowest feasible index") {
        net.online.set_parameters(
            Eigen::VectorXd::Zero(net.online.parameter_count()));
        const auto table = extract_policy(net, cfg.binning, cfg.battery, 3);
        for (int t = 1; t <= 3; ++t)
            for (int p = 0; p < cfg.binning.bins; ++p) {
                CHECK(table.lookup(0.0, p, t) == Action::Idle);
                CHECK(table.lookup(5.0, p, t) == Action::Discharge);
            }
    }
    SUBCASE("table reproduces greedy select_action at every grid point") {
        const auto table = extract_policy(net, cfg.binning, cfg.battery, 3);
        std::mt19937_64 rng(0);
        for (int t = 1; t <= 3; ++t)
            for (int p = 0; p < cfg.binning.bins; ++p)
                for (double e : table.soc_levels) {
                    const MdpState s{e, p, t, false};
                    const Action greedy = select_action(
                        net, s, 0.0, feasible_actions(s, cfg), rng);
                    CHECK(table.lookup(e, p, t) == greedy);
                }
    }
}

TEST_CASE("evaluate_policy accounting") {
    DqnConfig cfg = toy_config();
    const int T = 24;
    PriceScenario sc;
    sc.prices.assign(T, 30.0);
    sc.id = "flat";

    PolicyTable idle_policy;
    idle_policy.soc_levels = {0.0, 5.0};
    idle_policy.bins = cfg.binning.bins;
    idle_policy.horizon = T;
    idle_policy.actions.assign(
        static_cast<std::size_t>(T) * cfg.binning.bins * 2, Action::Idle);

    SUBCASE("never stopping with a full band incurs no penalty") {
        cfg.reward = RewardSeries::constant(T, 15.0, RewardMode::OnceAtStop);
        const auto res = evaluate_policy(idle_policy, {sc}, cfg);
        CHECK(res[0].penalty == 0.0);
        CHECK(res[0].profit == 0.0);
        CHECK(res[0].tau == T + 1);
        CHECK(res[0].e_final == 5.0);
    }
    SUBCASE("stop-at-1 pays 15 once or 360 cumulatively") {
        PolicyTable stop1 = idle_policy;
        // Stop at t = 1 for every SoC/price bin, idle afterwards.
        for (int p = 0; p < cfg.binning.bins; ++p)
            for (int ei = 0; ei < 2; ++ei)
                stop1.actions[static_cast<std::size_t>(p) * 2 +
                              static_cast<std::size_t>(ei)] = Action::Stop;
        cfg.reward = RewardSeries::constant(T, 15.0, RewardMode::OnceAtStop);
        auto res = evaluate_policy(stop1, {sc}, cfg);
        CHECK(res[0].tau == 1);
        CHECK(res[0].profit == doctest::Approx(15.0));

        cfg.reward = RewardSeries::constant(T, 15.0, RewardMode::CumulativeAfterStop);
        res = evaluate_policy(stop1, {sc}, cfg);
        CHECK(res[0].profit == doctest::Approx(360.0));
    }
}

TEST_CASE("config validation") {
    DqnConfig cfg = toy_config();
    cfg.gamma = 1.0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = toy_config();
    cfg.buffer_capacity = cfg.batch_size;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
}
