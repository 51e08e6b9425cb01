#pragma once

// Minimal dense multi-layer perceptron with ReLU hidden activations and a
// linear output layer, trained by plain SGD. Hand-rolled so that gradients
// are exact and runs are bit-reproducible from a seed.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace arb {

class Mlp {
public:
    /// sizes = {input, hidden..., output}; weights get He-normal init.
    Mlp(std::vector<int> sizes, std::uint64_t seed);

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;

    struct Cache {
        std::vector<Eigen::VectorXd> pre;   ///< pre-activation per layer
        std::vector<Eigen::VectorXd> post;  ///< post-activation, post[0] = x
    };
    Eigen::VectorXd forward(const Eigen::VectorXd& x, Cache& cache) const;

    struct Gradients {
        std::vector<Eigen::MatrixXd> dW;
        std::vector<Eigen::VectorXd> db;
        void scale(double s);
    };
    Gradients zero_gradients() const;

    /// Accumulates dLoss/dparams into g given dLoss/doutput.
    void backward(const Cache& cache, const Eigen::VectorXd& dout,
                  Gradients& g) const;

    void sgd_step(const Gradients& g, double lr);

    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }
    const std::vector<int>& sizes() const { return sizes_; }

    /// Flat parameter vector (layer-major, weights row-major then bias).
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& theta);
    int parameter_count() const;

    /// dLoss/dtheta as a flat vector, same ordering as parameters().
    static Eigen::VectorXd flatten(const Gradients& g);

private:
    std::vector<int> sizes_;
    std::vector<Eigen::MatrixXd> W_;
    std::vector<Eigen::VectorXd> b_;
};

}  // namespace arb
