#include "arb/e2e.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "arb/errors.hpp"

namespace arb {

// ---------------------------------------------------------------- predictors

LinearPredictor::LinearPredictor(int horizon, int feature_dim)
    : W_(Eigen::MatrixXd::Zero(horizon, feature_dim)),
      b_(Eigen::VectorXd::Zero(horizon)) {}

Eigen::VectorXd LinearPredictor::parameters() const {
    Eigen::VectorXd theta(W_.size() + b_.size());
    Eigen::Index at = 0;
    for (Eigen::Index i = 0; i < W_.rows(); ++i)
        for (Eigen::Index j = 0; j < W_.cols(); ++j) theta(at++) = W_(i, j);
    theta.tail(b_.size()) = b_;
    return theta;
}

void LinearPredictor::set_parameters(const Eigen::VectorXd& theta) {
    if (theta.size() != W_.size() + b_.size())
        throw std::invalid_argument("linear predictor: parameter size mismatch");
    Eigen::Index at = 0;
    for (Eigen::Index i = 0; i < W_.rows(); ++i)
        for (Eigen::Index j = 0; j < W_.cols(); ++j) W_(i, j) = theta(at++);
    b_ = theta.tail(b_.size());
}

Eigen::VectorXd LinearPredictor::predict(const Eigen::VectorXd& x) const {
    if (x.size() != W_.cols())
        throw std::invalid_argument("linear predictor: feature size mismatch");
    return W_ * x + b_;
}

Eigen::VectorXd LinearPredictor::vjp(const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& d_center) const {
    Eigen::VectorXd g(W_.size() + b_.size());
    Eigen::Index at = 0;
    for (Eigen::Index i = 0; i < W_.rows(); ++i)
        for (Eigen::Index j = 0; j < W_.cols(); ++j) g(at++) = d_center(i) * x(j);
    g.tail(b_.size()) = d_center;
    return g;
}

std::unique_ptr<Predictor> LinearPredictor::clone() const {
    return std::make_unique<LinearPredictor>(*this);
}

SharedLinearPredictor::SharedLinearPredictor(int horizon, int per_hour_features)
    : horizon_(horizon),
      per_hour_(per_hour_features),
      theta_(Eigen::VectorXd::Zero(per_hour_features)) {}

void SharedLinearPredictor::set_parameters(const Eigen::VectorXd& theta) {
    if (theta.size() != per_hour_)
        throw std::invalid_argument("shared predictor: parameter size mismatch");
    theta_ = theta;
}

Eigen::VectorXd SharedLinearPredictor::predict(const Eigen::VectorXd& x) const {
    if (x.size() != feature_dim())
        throw std::invalid_argument("shared predictor: feature size mismatch");
    Eigen::VectorXd out(horizon_);
    for (int t = 0; t < horizon_; ++t)
        out(t) = theta_.dot(x.segment(t * per_hour_, per_hour_));
    return out;
}

Eigen::VectorXd SharedLinearPredictor::vjp(const Eigen::VectorXd& x,
                                           const Eigen::VectorXd& d_center) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(per_hour_);
    for (int t = 0; t < horizon_; ++t)
        g += d_center(t) * x.segment(t * per_hour_, per_hour_);
    return g;
}

std::unique_ptr<Predictor> SharedLinearPredictor::clone() const {
    return std::make_unique<SharedLinearPredictor>(*this);
}

MlpPredictor::MlpPredictor(int horizon, int feature_dim, std::vector<int> hidden,
                           std::uint64_t seed)
    : net_([&] {
          std::vector<int> sizes{feature_dim};
          for (int h : hidden) sizes.push_back(h);
          sizes.push_back(horizon);
          return Mlp(sizes, seed);
      }()) {}

Eigen::VectorXd MlpPredictor::vjp(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& d_center) const {
    Mlp::Cache cache;
    net_.forward(x, cache);
    auto grads = net_.zero_gradients();
    net_.backward(cache, d_center, grads);
    return Mlp::flatten(grads);
}

std::unique_ptr<Predictor> MlpPredictor::clone() const {
    return std::unique_ptr<Predictor>(new MlpPredictor(*this));
}

// ------------------------------------------------------------- serialization

namespace {

constexpr char kMagic[8] = {'A', 'R', 'B', 'P', '0', '0', '0', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b, 8);
}

std::uint32_t get_u32(std::istream& is) {
    char b[4];
    is.read(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    char b[8];
    is.read(b, 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

enum ArchId : std::uint32_t { kLinear = 1, kSharedLinear = 2, kMlp = 3 };

}  // namespace

void save_predictor(const Predictor& pred, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_predictor: cannot open " + path);
    os.write(kMagic, sizeof(kMagic));
    const std::string arch = pred.architecture();
    if (arch == "linear") {
        put_u32(os, kLinear);
        put_u32(os, static_cast<std::uint32_t>(pred.horizon()));
        put_u32(os, static_cast<std::uint32_t>(pred.feature_dim()));
    } else if (arch == "shared-linear") {
        put_u32(os, kSharedLinear);
        put_u32(os, static_cast<std::uint32_t>(pred.horizon()));
        put_u32(os, static_cast<std::uint32_t>(pred.feature_dim() / pred.horizon()));
    } else {
        put_u32(os, kMlp);
        const auto& mlp = dynamic_cast<const MlpPredictor&>(pred);
        const auto& sizes = mlp.layer_sizes();
        put_u32(os, static_cast<std::uint32_t>(sizes.size()));
        for (int s : sizes) put_u32(os, static_cast<std::uint32_t>(s));
    }
    const Eigen::VectorXd theta = pred.parameters();
    put_u32(os, static_cast<std::uint32_t>(theta.size()));
    for (Eigen::Index i = 0; i < theta.size(); ++i) put_f64(os, theta(i));
    if (!os) throw DataError("save_predictor: write failed for " + path);
}

std::unique_ptr<Predictor> load_predictor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_predictor: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("load_predictor: bad magic in " + path);
    const std::uint32_t arch = get_u32(is);
    std::unique_ptr<Predictor> pred;
    if (arch == kLinear) {
        const auto T = get_u32(is);
        const auto F = get_u32(is);
        pred = std::make_unique<LinearPredictor>(static_cast<int>(T),
                                                 static_cast<int>(F));
    } else if (arch == kSharedLinear) {
        const auto T = get_u32(is);
        const auto F = get_u32(is);
        pred = std::make_unique<SharedLinearPredictor>(static_cast<int>(T),
                                                       static_cast<int>(F));
    } else if (arch == kMlp) {
        const auto n = get_u32(is);
        std::vector<int> sizes;
        for (std::uint32_t i = 0; i < n; ++i)
            sizes.push_back(static_cast<int>(get_u32(is)));
        if (sizes.size() < 2) throw DataError("load_predictor: bad layer list");
        std::vector<int> hidden(sizes.begin() + 1, sizes.end() - 1);
        pred = std::make_unique<MlpPredictor>(sizes.back(), sizes.front(), hidden, 0);
    } else {
        throw DataError("load_predictor: unknown architecture id");
    }
    const std::uint32_t count = get_u32(is);
    Eigen::VectorXd theta(count);
    for (std::uint32_t i = 0; i < count; ++i) theta(i) = get_f64(is);
    if (!is) throw DataError("load_predictor: truncated file " + path);
    pred->set_parameters(theta);
    return pred;
}

// ---------------------------------------------------------------- operations

Eigen::VectorXd predict_center(const Predictor& pred, const Eigen::VectorXd& x) {
    return pred.predict(x);
}

void validate(const UncertaintyBox& box) {
    if (box.center.size() != box.halfwidth.size())
        throw ConfigError("uncertainty box: center/halfwidth size mismatch");
    if (box.halfwidth.size() > 0 && box.halfwidth.minCoeff() < 0.0)
        throw ConfigError("uncertainty box: halfwidth must be >= 0");
    if (!(box.delta > 0.0 && box.delta < 1.0))
        throw ConfigError("uncertainty box: delta must be in (0,1)");
}

Eigen::VectorXd conformal_calibrate(const Eigen::MatrixXd& abs_residuals,
                                    double delta) {
    const int n = static_cast<int>(abs_residuals.rows());
    const int T = static_cast<int>(abs_residuals.cols());
    if (!(delta > 0.0 && delta < 1.0))
        throw ConfigError("conformal_calibrate: delta must be in (0,1)");
    const int rank = static_cast<int>(std::ceil((1.0 - delta) * (n + 1)));
    if (n < 1 || rank > n)
        throw ConfigError("conformal_calibrate: need more calibration samples");
    Eigen::VectorXd q(T);
    std::vector<double> col(static_cast<std::size_t>(n));
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = abs_residuals(i, t);
        std::nth_element(col.begin(), col.begin() + (rank - 1), col.end());
        q(t) = col[static_cast<std::size_t>(rank - 1)];
    }
    return q;
}

double marginal_coverage(const std::vector<UncertaintyBox>& boxes,
                         const std::vector<PriceScenario>& realized) {
    if (boxes.size() != realized.size())
        throw std::invalid_argument("marginal_coverage: length mismatch");
    std::int64_t covered = 0, total = 0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& box = boxes[i];
        const auto& prices = realized[i].prices;
        for (Eigen::Index t = 0; t < box.center.size(); ++t) {
            const double lo = box.center(t) - box.halfwidth(t);
            const double hi = box.center(t) + box.halfwidth(t);
            covered += prices[static_cast<std::size_t>(t)] >= lo &&
                       prices[static_cast<std::size_t>(t)] <= hi;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(covered) / total;
}

void validate(const E2eConfig& cfg) {
    validate(cfg.battery);
    if (!(cfg.delta > 0.0 && cfg.delta < 1.0))
        throw ConfigError("e2e: delta must be in (0,1)");
    if (!(cfg.mu > 0.0)) throw ConfigError("e2e: mu must be positive");
    if (!(cfg.calibration_fraction > 0.0 && cfg.calibration_fraction < 1.0))
        throw ConfigError("e2e: calibration fraction must be in (0,1)");
    if (cfg.epochs <= 0 || cfg.batch_size <= 0)
        throw ConfigError("e2e: epochs and batch size must be positive");
    if (cfg.reward.values.empty()) throw ConfigError("e2e: reward series is empty");
}

namespace {

double reward_linear_value(const RewardSeries& reward,
                           const Eigen::VectorXd& z) {
    double total = 0.0;
    double z_prev = 0.0;
    for (Eigen::Index t = 0; t < z.size(); ++t) {
        if (reward.mode == RewardMode::CumulativeAfterStop)
            total += reward.values[static_cast<std::size_t>(t)] * z(t);
        else
            total += reward.values[static_cast<std::size_t>(t)] * (z(t) - z_prev);
        z_prev = z(t);
    }
    return total;
}

/// Coefficient of z_t in the (maximized) reward term.
double reward_z_coeff(const RewardSeries& reward, int t) {
    const int T = static_cast<int>(reward.values.size());
    if (reward.mode == RewardMode::CumulativeAfterStop)
        return reward.values[static_cast<std::size_t>(t)];
    const double next = t + 1 < T ? reward.values[static_cast<std::size_t>(t) + 1] : 0.0;
    return reward.values[static_cast<std::size_t>(t)] - next;
}

}  // namespace

QpSpec assemble_robust_qp(const UncertaintyBox& box, const RewardSeries& reward,
                          const BatteryParams& params, const TargetSpec& target,
                          double mu) {
    validate(box);
    validate(params);
    const int T = static_cast<int>(box.center.size());
    if (static_cast<int>(reward.values.size()) != T)
        throw ConfigError("assemble_robust_qp: reward horizon mismatch");
    const RobustQpLayout lay{T};
    const int n = lay.num_vars();
    const double P = params.power;

    QpSpec spec;
    spec.H = mu * Eigen::MatrixXd::Identity(n, n);
    spec.H(lay.e(T - 1), lay.e(T - 1)) += 2.0 * target.rho;
    spec.f = Eigen::VectorXd::Zero(n);
    for (int t = 0; t < T; ++t) {
        spec.f(lay.c(t)) = box.center(t) * P + box.halfwidth(t) * P;
        spec.f(lay.d(t)) = -box.center(t) * P + box.halfwidth(t) * P;
        spec.f(lay.z(t)) = -reward_z_coeff(reward, t);
    }
    spec.f(lay.e(T - 1)) += -2.0 * target.rho * target.e_target;

    // Dynamics plus the full-allocation identity z = 1 - (c + d + g).
    spec.A_eq = Eigen::MatrixXd::Zero(2 * T, n);
    spec.b_eq = Eigen::VectorXd::Zero(2 * T);
    for (int t = 0; t < T; ++t) {
        spec.A_eq(t, lay.e(t)) = 1.0;
        if (t > 0) spec.A_eq(t, lay.e(t - 1)) = -params.eta_self;
        spec.A_eq(t, lay.d(t)) = P / params.eta_d;
        spec.A_eq(t, lay.c(t)) = -P * params.eta_c;
        spec.b_eq(t) = t == 0 ? params.eta_self * params.e0 : 0.0;

        spec.A_eq(T + t, lay.z(t)) = 1.0;
        spec.A_eq(T + t, lay.c(t)) = 1.0;
        spec.A_eq(T + t, lay.d(t)) = 1.0;
        spec.A_eq(T + t, lay.g(t)) = 1.0;
        spec.b_eq(T + t) = 1.0;
    }

    // Monotone stop, the stop/action exclusions, boxes and SoC bounds.
    const int p = (T - 1) + 2 * T + 8 * T + 2 * T;
    spec.A_in = Eigen::MatrixXd::Zero(p, n);
    spec.b_in = Eigen::VectorXd::Zero(p);
    int row = 0;
    for (int t = 1; t < T; ++t) {  // z_{t-1} <= z_t; z_0 >= 0 is the box
        spec.A_in(row, lay.z(t - 1)) = 1.0;
        spec.A_in(row, lay.z(t)) = -1.0;
        spec.b_in(row++) = 0.0;
    }
    for (int t = 0; t < T; ++t) {
        spec.A_in(row, lay.c(t)) = 1.0;
        spec.A_in(row, lay.z(t)) = 1.0;
        spec.b_in(row++) = 1.0;
        spec.A_in(row, lay.d(t)) = 1.0;
        spec.A_in(row, lay.z(t)) = 1.0;
        spec.b_in(row++) = 1.0;
    }
    auto box_row = [&](int col, double lo, double hi) {
        spec.A_in(row, col) = 1.0;
        spec.b_in(row++) = hi;
        spec.A_in(row, col) = -1.0;
        spec.b_in(row++) = -lo;
    };
    for (int t = 0; t < T; ++t) {
        box_row(lay.c(t), 0.0, 1.0);
        box_row(lay.d(t), 0.0, 1.0);
        box_row(lay.g(t), 0.0, 1.0);
        box_row(lay.z(t), 0.0, 1.0);
        box_row(lay.e(t), params.e_min, params.e_max);
    }
    return spec;
}

RobustDispatch robust_dispatch(const UncertaintyBox& box, const RewardSeries& reward,
                               const BatteryParams& params, const TargetSpec& target,
                               double mu, double tol, int max_iter) {
    RobustDispatch out;
    out.spec = assemble_robust_qp(box, reward, params, target, mu);
    out.qp = solve_qp(out.spec, tol, max_iter);
    if (out.qp.status != QpStatus::Optimal)
        throw SolverError("robust_dispatch: QP did not reach optimality");

    const int T = static_cast<int>(box.center.size());
    const RobustQpLayout lay{T};
    DispatchPlan& plan = out.plan;
    plan.c.resize(static_cast<std::size_t>(T));
    plan.d.resize(static_cast<std::size_t>(T));
    plan.g.resize(static_cast<std::size_t>(T));
    plan.z.resize(static_cast<std::size_t>(T));
    plan.e.resize(static_cast<std::size_t>(T) + 1);
    plan.e[0] = params.e0;
    Eigen::VectorXd z(T);
    for (int t = 0; t < T; ++t) {
        plan.c[static_cast<std::size_t>(t)] = out.qp.x(lay.c(t));
        plan.d[static_cast<std::size_t>(t)] = out.qp.x(lay.d(t));
        plan.g[static_cast<std::size_t>(t)] = out.qp.x(lay.g(t));
        plan.z[static_cast<std::size_t>(t)] = out.qp.x(lay.z(t));
        plan.e[static_cast<std::size_t>(t) + 1] = out.qp.x(lay.e(t));
        z(t) = out.qp.x(lay.z(t));
    }

    const double P = params.power;
    double value = 0.0;
    for (int t = 0; t < T; ++t)
        value += box.center(t) * P *
                     (plan.d[static_cast<std::size_t>(t)] - plan.c[static_cast<std::size_t>(t)]) -
                 box.halfwidth(t) * P *
                     (plan.d[static_cast<std::size_t>(t)] + plan.c[static_cast<std::size_t>(t)]);
    value += reward_linear_value(reward, z);
    const double dev = plan.e.back() - target.e_target;
    value -= target.rho * dev * dev;
    out.objective = value;
    return out;
}

double task_loss(const DispatchPlan& plan, const PriceScenario& realized,
                 const RewardSeries& reward, const TargetSpec& target, double rho,
                 const BatteryParams& params) {
    const double dev = plan.e.back() - target.e_target;
    return -(plan_profit(plan, realized, params) +
             stopping_reward_value(plan, reward) - rho * dev * dev);
}

Eigen::VectorXd task_loss_grad_plan(const DispatchPlan& plan,
                                    const PriceScenario& realized,
                                    const RewardSeries& reward,
                                    const TargetSpec& target, double rho,
                                    const BatteryParams& params) {
    const int T = plan.horizon();
    const RobustQpLayout lay{T};
    Eigen::VectorXd g = Eigen::VectorXd::Zero(lay.num_vars());
    for (int t = 0; t < T; ++t) {
        g(lay.c(t)) = realized.prices[static_cast<std::size_t>(t)] * params.power;
        g(lay.d(t)) = -realized.prices[static_cast<std::size_t>(t)] * params.power;
        g(lay.z(t)) = -reward_z_coeff(reward, t);
    }
    g(lay.e(T - 1)) = 2.0 * rho * (plan.e.back() - target.e_target);
    return g;
}

DispatchGradient backward_through_dispatch(const RobustDispatch& dispatch,
                                           const BatteryParams& params,
                                           const Eigen::VectorXd& dloss_dx) {
    const Eigen::VectorXd df = diff_solution_wrt_f(dispatch.spec, dispatch.qp,
                                                   dloss_dx);
    const int T = dispatch.plan.horizon();
    const RobustQpLayout lay{T};
    DispatchGradient out;
    out.d_center.resize(T);
    out.d_halfwidth.resize(T);
    const double P = params.power;
    for (int t = 0; t < T; ++t) {
        out.d_center(t) = P * (df(lay.c(t)) - df(lay.d(t)));
        out.d_halfwidth(t) = P * (df(lay.c(t)) + df(lay.d(t)));
    }
    return out;
}

// -------------------------------------------------------------- training loop

namespace {

Eigen::MatrixXd residual_matrix(const Predictor& pred,
                                const std::vector<PriceScenario>& cal,
                                const std::vector<int>& rows) {
    const int T = pred.horizon();
    Eigen::MatrixXd R(rows.size(), T);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& sc = cal[static_cast<std::size_t>(rows[i])];
        const Eigen::VectorXd center =
            pred.predict(Eigen::Map<const Eigen::VectorXd>(
                sc.features.data(), static_cast<Eigen::Index>(sc.features.size())));
        for (int t = 0; t < T; ++t)
            R(static_cast<Eigen::Index>(i), t) =
                std::abs(sc.prices[static_cast<std::size_t>(t)] - center(t));
    }
    return R;
}

}  // namespace

E2eTrainResult train_e2e(Predictor& pred, const E2eConfig& cfg,
                         const std::vector<PriceScenario>& train,
                         const std::vector<PriceScenario>& cal) {
    validate(cfg);
    if (train.empty() || cal.empty())
        throw ConfigError("train_e2e: need non-empty train and calibration splits");
    for (const auto& a : train)
        for (const auto& b : cal)
            if (!a.id.empty() && a.id == b.id)
                throw ConfigError("train_e2e: train and calibration overlap on " + a.id);

    const int T = pred.horizon();
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> all_cal(cal.size());
    std::iota(all_cal.begin(), all_cal.end(), 0);

    auto calibrate = [&](bool minibatch) {
        std::vector<int> rows = all_cal;
        const int want = cfg.cal_batch_size;
        if (minibatch && want > 0 && want < static_cast<int>(cal.size())) {
            std::shuffle(rows.begin(), rows.end(), rng);
            rows.resize(static_cast<std::size_t>(want));
        }
        return conformal_calibrate(residual_matrix(pred, cal, rows), cfg.delta);
    };

    E2eTrainResult result;
    Eigen::VectorXd frozen_q;
    if (cfg.freeze_halfwidth) frozen_q = calibrate(false);

    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int loss_count = 0;
        int skipped = 0;
        double tau_sum = 0.0;
        std::int64_t covered = 0, pairs = 0;

        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            const Eigen::VectorXd q =
                cfg.freeze_halfwidth ? frozen_q : calibrate(true);

            Eigen::VectorXd grad = Eigen::VectorXd::Zero(pred.parameters().size());
            int used = 0;
            for (std::size_t k = at; k < stop; ++k) {
                const auto& sc = train[static_cast<std::size_t>(order[k])];
                const Eigen::Map<const Eigen::VectorXd> x(
                    sc.features.data(), static_cast<Eigen::Index>(sc.features.size()));
                UncertaintyBox box{pred.predict(x), q, cfg.delta};

                for (int t = 0; t < T; ++t) {
                    const double lo = box.center(t) - box.halfwidth(t);
                    const double hi = box.center(t) + box.halfwidth(t);
                    covered += sc.prices[static_cast<std::size_t>(t)] >= lo &&
                               sc.prices[static_cast<std::size_t>(t)] <= hi;
                    ++pairs;
                }

                const RobustDispatch rd = robust_dispatch(
                    box, cfg.reward, cfg.battery, cfg.target, cfg.mu, cfg.qp_tol,
                    cfg.qp_max_iter);
                const double loss = task_loss(rd.plan, sc, cfg.reward, cfg.target,
                                              cfg.target.rho, cfg.battery);
                if (std::abs(loss) > 1e9)
                    throw TrainingDiverged("train_e2e: task loss exceeded 1e9");
                loss_sum += loss;
                ++loss_count;
                tau_sum += stopping_time(rd.plan);

                try {
                    const Eigen::VectorXd dplan = task_loss_grad_plan(
                        rd.plan, sc, cfg.reward, cfg.target, cfg.target.rho,
                        cfg.battery);
                    const DispatchGradient dg =
                        backward_through_dispatch(rd, cfg.battery, dplan);
                    grad += pred.vjp(x, dg.d_center);
                    ++used;
                } catch (const DegenerateActiveSet&) {
                    ++skipped;
                }
            }
            if (used > 0) {
                grad /= used;
                pred.set_parameters(pred.parameters() - cfg.learning_rate * grad);
            }
        }
        result.log.push_back({epoch, loss_count > 0 ? loss_sum / loss_count : 0.0,
                              pairs > 0 ? static_cast<double>(covered) / pairs : 0.0,
                              loss_count > 0 ? tau_sum / loss_count : 0.0, skipped});
    }

    result.final_halfwidth = calibrate(false);
    return result;
}

void write_e2e_log_csv(const std::vector<E2eEpochLog>& log, std::ostream& os) {
    os << "epoch,loss,coverage,mean_tau,skipped\n";
    char buf[160];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%d\n", row.epoch,
                      row.mean_loss, row.coverage, row.mean_tau, row.skipped);
        os << buf;
    }
}

}  // namespace arb
