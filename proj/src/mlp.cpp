#include "arb/mlp.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace arb {

Mlp::Mlp(std::vector<int> sizes, std::uint64_t seed) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("mlp: need >= 2 layer sizes");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        const int fan_in = sizes_[l];
        const int fan_out = sizes_[l + 1];
        const double sd = std::sqrt(2.0 / fan_in);
        Eigen::MatrixXd W(fan_out, fan_in);
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j) W(i, j) = sd * gauss(rng);
        W_.push_back(std::move(W));
        b_.push_back(Eigen::VectorXd::Zero(fan_out));
    }
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
    Cache scratch;
    return forward(x, scratch);
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x, Cache& cache) const {
    if (x.size() != sizes_.front())
        throw std::invalid_argument("mlp: input dimension mismatch");
    cache.pre.clear();
    cache.post.clear();
    cache.post.push_back(x);
    Eigen::VectorXd h = x;
    for (std::size_t l = 0; l < W_.size(); ++l) {
        Eigen::VectorXd z = W_[l] * h + b_[l];
        cache.pre.push_back(z);
        h = (l + 1 < W_.size()) ? z.cwiseMax(0.0).eval() : z;
        cache.post.push_back(h);
    }
    return h;
}

Mlp::Gradients Mlp::zero_gradients() const {
    Gradients g;
    for (std::size_t l = 0; l < W_.size(); ++l) {
        g.dW.push_back(Eigen::MatrixXd::Zero(W_[l].rows(), W_[l].cols()));
        g.db.push_back(Eigen::VectorXd::Zero(b_[l].size()));
    }
    return g;
}

void Mlp::Gradients::scale(double s) {
    for (auto& m : dW) m *= s;
    for (auto& v : db) v *= s;
}

void Mlp::backward(const Cache& cache, const Eigen::VectorXd& dout,
                   Gradients& g) const {
    Eigen::VectorXd delta = dout;
    for (std::size_t l = W_.size(); l-- > 0;) {
        if (l + 1 < W_.size())  // undo the ReLU of this layer's output
            delta = delta.cwiseProduct(
                (cache.pre[l].array() > 0.0).cast<double>().matrix());
        g.dW[l] += delta * cache.post[l].transpose();
        g.db[l] += delta;
        if (l > 0) delta = (W_[l].transpose() * delta).eval();
    }
}

void Mlp::sgd_step(const Gradients& g, double lr) {
    for (std::size_t l = 0; l < W_.size(); ++l) {
        W_[l] -= lr * g.dW[l];
        b_[l] -= lr * g.db[l];
    }
}

int Mlp::parameter_count() const {
    int n = 0;
    for (std::size_t l = 0; l < W_.size(); ++l)
        n += static_cast<int>(W_[l].size() + b_[l].size());
    return n;
}

Eigen::VectorXd Mlp::parameters() const {
    Eigen::VectorXd theta(parameter_count());
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
        for (Eigen::Index i = 0; i < W_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < W_[l].cols(); ++j)
                theta(at++) = W_[l](i, j);
        for (Eigen::Index i = 0; i < b_[l].size(); ++i) theta(at++) = b_[l](i);
    }
    return theta;
}

void Mlp::set_parameters(const Eigen::VectorXd& theta) {
    if (theta.size() != parameter_count())
        throw std::invalid_argument("mlp: parameter vector size mismatch");
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
        for (Eigen::Index i = 0; i < W_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < W_[l].cols(); ++j)
                W_[l](i, j) = theta(at++);
        for (Eigen::Index i = 0; i < b_[l].size(); ++i) b_[l](i) = theta(at++);
    }
}

Eigen::VectorXd Mlp::flatten(const Gradients& g) {
    int n = 0;
    for (std::size_t l = 0; l < g.dW.size(); ++l)
        n += static_cast<int>(g.dW[l].size() + g.db[l].size());
    Eigen::VectorXd out(n);
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < g.dW.size(); ++l) {
        for (Eigen::Index i = 0; i < g.dW[l].rows(); ++i)
            for (Eigen::Index j = 0; j < g.dW[l].cols(); ++j)
                out(at++) = g.dW[l](i, j);
        for (Eigen::Index i = 0; i < g.db[l].size(); ++i) out(at++) = g.db[l](i);
    }
    return out;
}

}  // namespace arb
