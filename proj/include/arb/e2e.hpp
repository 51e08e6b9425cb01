#pragma once

// End-to-end training pipeline: a feature-conditioned price predictor, split
// conformal calibration of per-hour price boxes, a robust dispatch QP, the
// realized task loss, and implicit differentiation through the dispatch
// layer's KKT conditions back into the predictor parameters.

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "arb/mlp.hpp"
#include "arb/qp.hpp"
#include "arb/storage.hpp"

namespace arb {

/// Parameterized map from an exogenous feature vector to the T price centers.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual int horizon() const = 0;
    virtual int feature_dim() const = 0;
    virtual Eigen::VectorXd parameters() const = 0;
    virtual void set_parameters(const Eigen::VectorXd& theta) = 0;
    virtual Eigen::VectorXd predict(const Eigen::VectorXd& x) const = 0;
    /// dLoss/dtheta given dLoss/dcenter at the same input.
    virtual Eigen::VectorXd vjp(const Eigen::VectorXd& x,
                                const Eigen::VectorXd& d_center) const = 0;
    virtual std::unique_ptr<Predictor> clone() const = 0;
    virtual std::string architecture() const = 0;
};

/// Dense affine map: center = W x + b, with W of shape T x F.
class LinearPredictor : public Predictor {
public:
    LinearPredictor(int horizon, int feature_dim);
    int horizon() const override { return static_cast<int>(W_.rows()); }
    int feature_dim() const override { return static_cast<int>(W_.cols()); }
    Eigen::VectorXd parameters() const override;
    void set_parameters(const Eigen::VectorXd& theta) override;
    Eigen::VectorXd predict(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd vjp(const Eigen::VectorXd& x,
                        const Eigen::VectorXd& d_center) const override;
    std::unique_ptr<Predictor> clone() const override;
    std::string architecture() const override { return "linear"; }

private:
    Eigen::MatrixXd W_;
    Eigen::VectorXd b_;
};

/// One coefficient vector shared across hours: center_t = theta . x_t, where
/// the input stacks per-hour feature blocks hour-major (size T*F).
class SharedLinearPredictor : public Predictor {
public:
    SharedLinearPredictor(int horizon, int per_hour_features);
    int horizon() const override { return horizon_; }
    int feature_dim() const override { return horizon_ * per_hour_; }
    Eigen::VectorXd parameters() const override { return theta_; }
    void set_parameters(const Eigen::VectorXd& theta) override;
    Eigen::VectorXd predict(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd vjp(const Eigen::VectorXd& x,
                        const Eigen::VectorXd& d_center) const override;
    std::unique_ptr<Predictor> clone() const override;
    std::string architecture() const override { return "shared-linear"; }

private:
    int horizon_;
    int per_hour_;
    Eigen::VectorXd theta_;
};

/// ReLU MLP from features to the T centers.
class MlpPredictor : public Predictor {
public:
    MlpPredictor(int horizon, int feature_dim, std::vector<int> hidden,
                 std::uint64_t seed);
    int horizon() const override { return net_.output_size(); }
    int feature_dim() const override { return net_.input_size(); }
    Eigen::VectorXd parameters() const override { return net_.parameters(); }
    void set_parameters(const Eigen::VectorXd& theta) override {
        net_.set_parameters(theta);
    }
    Eigen::VectorXd predict(const Eigen::VectorXd& x) const override {
        return net_.forward(x);
    }
    Eigen::VectorXd vjp(const Eigen::VectorXd& x,
                        const Eigen::VectorXd& d_center) const override;
    std::unique_ptr<Predictor> clone() const override;
    std::string architecture() const override { return "mlp"; }
    const std::vector<int>& layer_sizes() const { return net_.sizes(); }

private:
    explicit MlpPredictor(Mlp net) : net_(std::move(net)) {}
    Mlp net_;
};

/// Little-endian binary with an explicit architecture/dimension header.
void save_predictor(const Predictor& pred, const std::string& path);
std::unique_ptr<Predictor> load_predictor(const std::string& path);

Eigen::VectorXd predict_center(const Predictor& pred, const Eigen::VectorXd& x);

struct UncertaintyBox {
    Eigen::VectorXd center;     ///< predicted prices ($/MWh)
    Eigen::VectorXd halfwidth;  ///< per-hour interval half-widths (>= 0)
    double delta = 0.05;        ///< miscoverage level
};

void validate(const UncertaintyBox& box);

/// Split-conformal per-hour quantile: the ceil((1-delta)(n+1))-th order
/// statistic of each column of the n x T absolute-residual matrix. Throws
/// when n is too small for the quantile to exist.
Eigen::VectorXd conformal_calibrate(const Eigen::MatrixXd& abs_residuals,
                                    double delta);

/// Fraction of (scenario, hour) pairs whose realized price falls inside the
/// corresponding box interval.
double marginal_coverage(const std::vector<UncertaintyBox>& boxes,
                         const std::vector<PriceScenario>& realized);

struct E2eConfig {
    BatteryParams battery;
    TargetSpec target;
    RewardSeries reward;
    double delta = 0.05;
    double mu = 1e-4;  ///< QP regularization weight
    double learning_rate = 1e-6;
    int epochs = 10;
    int batch_size = 16;
    double calibration_fraction = 0.2;
    std::uint64_t seed = 1;
    int cal_batch_size = 0;  ///< residual mini-batch size; 0 = whole split
    bool freeze_halfwidth = false;  ///< calibrate once instead of per batch
    double qp_tol = 1e-9;
    int qp_max_iter = 200;
};

void validate(const E2eConfig& cfg);

/// Column layout of the dispatch QP: x = [c(T), d(T), g(T), e(T), z(T)].
struct RobustQpLayout {
    int T;
    int c(int t) const { return t; }
    int d(int t) const { return T + t; }
    int g(int t) const { return 2 * T + t; }
    int e(int t) const { return 3 * T + t; }
    int z(int t) const { return 4 * T + t; }
    int num_vars() const { return 5 * T; }
};

/// Robust counterpart of the dispatch layer as a single strictly convex QP
/// (minimization form). The worst case of the price box enters as the
/// -q_t P (d_t + c_t) revenue haircut, exact whenever charge and discharge
/// are not simultaneous; the terminal term is a penalty and the whole
/// objective carries a mu/2 ||x||^2 regularizer.
QpSpec assemble_robust_qp(const UncertaintyBox& box, const RewardSeries& reward,
                          const BatteryParams& params, const TargetSpec& target,
                          double mu);

struct RobustDispatch {
    DispatchPlan plan;
    double objective;  ///< worst-case value of the plan, mu term excluded
    QpSpec spec;       ///< the solved QP, kept for differentiation
    QpSolution qp;
};

RobustDispatch robust_dispatch(const UncertaintyBox& box, const RewardSeries& reward,
                               const BatteryParams& params, const TargetSpec& target,
                               double mu, double tol = 1e-9, int max_iter = 200);

/// Negative realized objective of a dispatch plan.
double task_loss(const DispatchPlan& plan, const PriceScenario& realized,
                 const RewardSeries& reward, const TargetSpec& target, double rho,
                 const BatteryParams& params);

/// dLoss/dx of task_loss in the dispatch QP's variable layout.
Eigen::VectorXd task_loss_grad_plan(const DispatchPlan& plan,
                                    const PriceScenario& realized,
                                    const RewardSeries& reward,
                                    const TargetSpec& target, double rho,
                                    const BatteryParams& params);

struct DispatchGradient {
    Eigen::VectorXd d_center;     ///< dLoss/d center prices
    Eigen::VectorXd d_halfwidth;  ///< dLoss/d halfwidths
};

/// Chain rule through the dispatch QP's linear cost via the adjoint KKT
/// solve. Throws DegenerateActiveSet when the solution map is not
/// differentiable; callers in the training loop skip such samples.
DispatchGradient backward_through_dispatch(const RobustDispatch& dispatch,
                                           const BatteryParams& params,
                                           const Eigen::VectorXd& dloss_dx);

struct E2eEpochLog {
    int epoch;
    double mean_loss;
    double coverage;  ///< marginal coverage of the boxes used this epoch
    double mean_tau;  ///< stopping time from the relaxed z at threshold 0.5
    int skipped;      ///< samples dropped due to degenerate active sets
};

struct E2eTrainResult {
    std::vector<E2eEpochLog> log;
    Eigen::VectorXd final_halfwidth;  ///< calibrated on the full split at exit
};

/// Trains the predictor in place; deterministic for a fixed config and seed.
E2eTrainResult train_e2e(Predictor& pred, const E2eConfig& cfg,
                         const std::vector<PriceScenario>& train,
                         const std::vector<PriceScenario>& cal);

void write_e2e_log_csv(const std::vector<E2eEpochLog>& log, std::ostream& os);

}  // namespace arb
