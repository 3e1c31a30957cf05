#ifndef MODESWITCH_POLICY_HPP
#define MODESWITCH_POLICY_HPP

#include "error.hpp"
#include "lander.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <random>
#include <string>
#include <vector>

/**
 * @file policy.hpp
 *
 * @brief Two-hidden-layer dense policies, their latent map and analytic Jacobians.
 *
 * The latent point of an observation is the post-activation output of the second
 * hidden layer, i.e. everything except the final (tanh-squashed) output layer.
 */

namespace modeswitch {

/** Softplus in a form that neither overflows nor loses precision for large |x|. */
inline double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double mish(double x) {
    return x * std::tanh(softplus(x));
}

inline double mish_prime(double x) {
    const double t = std::tanh(softplus(x));
    const double sigmoid = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return t + x * (1.0 - t * t) * sigmoid;
}

inline double leaky_relu(double x, double alpha) {
    return x > 0 ? x : alpha * x;
}

/** Derivative of `leaky_relu()`. At x = 0 this returns alpha. */
inline double leaky_relu_prime(double x, double alpha) {
    return x > 0 ? 1.0 : alpha;
}

struct Activation {
    enum class Kind { Mish, LeakyReLU };
    Kind kind = Kind::Mish;
    double alpha = 0.01;

    double operator()(double x) const { return kind == Kind::Mish ? mish(x) : leaky_relu(x, alpha); }
    double derivative(double x) const { return kind == Kind::Mish ? mish_prime(x) : leaky_relu_prime(x, alpha); }

    std::string name() const { return kind == Kind::Mish ? "Mish" : "LeakyReLU"; }

    bool operator==(const Activation&) const = default;
};

using LatentVector = Eigen::VectorXd;

/** A latent vector with the (episode, step) it came from, when known. */
struct LatentPoint {
    LatentVector values;
    int episode = -1;
    int step = -1;
};

/**
 * Dense 8 -> H -> H -> 2 network with tanh-squashed outputs.
 * Immutable once built; every evaluation is a pure function.
 */
class PolicyNet {
public:
    static constexpr int input_dim = kObservationDim;
    static constexpr int output_dim = kActionDim;

    PolicyNet() : PolicyNet(64, Activation{}) {}

    /** Zero-initialised network. */
    PolicyNet(int hidden, Activation activation)
        : w1_(Eigen::MatrixXd::Zero(hidden, input_dim)), b1_(Eigen::VectorXd::Zero(hidden)),
          w2_(Eigen::MatrixXd::Zero(hidden, hidden)), b2_(Eigen::VectorXd::Zero(hidden)),
          w3_(Eigen::MatrixXd::Zero(output_dim, hidden)), b3_(Eigen::VectorXd::Zero(output_dim)),
          activation_(activation) {
        if (hidden < 1) {
            fail(ErrorKind::ShapeMismatch, "hidden width must be positive");
        }
        if (activation.kind == Activation::Kind::LeakyReLU && !(activation.alpha > 0)) {
            fail(ErrorKind::InvalidArgument, "LeakyReLU alpha must be positive");
        }
    }

    PolicyNet(Eigen::MatrixXd w1, Eigen::VectorXd b1, Eigen::MatrixXd w2, Eigen::VectorXd b2, Eigen::MatrixXd w3,
              Eigen::VectorXd b3, Activation activation)
        : w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)), b2_(std::move(b2)), w3_(std::move(w3)),
          b3_(std::move(b3)), activation_(activation) {
        validate();
    }

    /** Xavier-uniform weights, zero biases. */
    static PolicyNet random(int hidden, Activation activation, std::uint64_t seed, double gain = 1.0) {
        PolicyNet net(hidden, activation);
        std::mt19937_64 rng(seed);
        auto fill = [&](Eigen::MatrixXd& w) {
            const double limit = gain * std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
            std::uniform_real_distribution<double> dist(-limit, limit);
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                for (Eigen::Index j = 0; j < w.cols(); ++j) {
                    w(i, j) = dist(rng);
                }
            }
        };
        fill(net.w1_);
        fill(net.w2_);
        fill(net.w3_);
        return net;
    }

    int hidden() const { return static_cast<int>(b1_.size()); }
    const Activation& activation() const { return activation_; }

    const Eigen::MatrixXd& w1() const { return w1_; }
    const Eigen::MatrixXd& w2() const { return w2_; }
    const Eigen::MatrixXd& w3() const { return w3_; }
    const Eigen::VectorXd& b1() const { return b1_; }
    const Eigen::VectorXd& b2() const { return b2_; }
    const Eigen::VectorXd& b3() const { return b3_; }

    nlohmann::json& meta() { return meta_; }
    const nlohmann::json& meta() const { return meta_; }

    std::size_t parameter_count() const {
        return static_cast<std::size_t>(w1_.size() + b1_.size() + w2_.size() + b2_.size() + w3_.size() + b3_.size());
    }

    /** Flatten parameters in the order w1, b1, w2, b2, w3, b3 (row-major matrices). */
    Eigen::VectorXd flatten() const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
        Eigen::Index k = 0;
        auto put_m = [&](const Eigen::MatrixXd& m) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                for (Eigen::Index j = 0; j < m.cols(); ++j) {
                    out[k++] = m(i, j);
                }
            }
        };
        auto put_v = [&](const Eigen::VectorXd& v) {
            out.segment(k, v.size()) = v;
            k += v.size();
        };
        put_m(w1_);
        put_v(b1_);
        put_m(w2_);
        put_v(b2_);
        put_m(w3_);
        put_v(b3_);
        return out;
    }

    /** Inverse of `flatten()` for a network of the same shape. */
    PolicyNet with_parameters(const Eigen::VectorXd& flat) const {
        if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
            fail(ErrorKind::ShapeMismatch, "flat parameter vector has the wrong length");
        }
        PolicyNet out = *this;
        Eigen::Index k = 0;
        auto get_m = [&](Eigen::MatrixXd& m) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                for (Eigen::Index j = 0; j < m.cols(); ++j) {
                    m(i, j) = flat[k++];
                }
            }
        };
        auto get_v = [&](Eigen::VectorXd& v) {
            v = flat.segment(k, v.size());
            k += v.size();
        };
        get_m(out.w1_);
        get_v(out.b1_);
        get_m(out.w2_);
        get_v(out.b2_);
        get_m(out.w3_);
        get_v(out.b3_);
        return out;
    }

    /** Pre-activations of both hidden layers. */
    struct Trace {
        Eigen::VectorXd pre1, post1, pre2, post2;
    };

    Trace trace(const Vec8& obs) const {
        Trace t;
        t.pre1 = w1_ * obs + b1_;
        t.post1 = t.pre1.unaryExpr(activation_);
        t.pre2 = w2_ * t.post1 + b2_;
        t.post2 = t.pre2.unaryExpr(activation_);
        return t;
    }

    LatentVector latent(const Vec8& obs) const { return trace(obs).post2; }

    Eigen::Vector2d pre_squash(const Vec8& obs) const { return w3_ * latent(obs) + b3_; }

    Action forward(const Vec8& obs) const {
        const Eigen::Vector2d out = pre_squash(obs);
        return Action(std::tanh(out[0]), std::tanh(out[1]));
    }

    /** d latent / d obs, shape hidden x 8. */
    Eigen::MatrixXd latent_jacobian(const Vec8& obs) const {
        const Trace t = trace(obs);
        const Eigen::VectorXd d1 = t.pre1.unaryExpr([this](double v) { return activation_.derivative(v); });
        const Eigen::VectorXd d2 = t.pre2.unaryExpr([this](double v) { return activation_.derivative(v); });
        return d2.asDiagonal() * (w2_ * (d1.asDiagonal() * w1_));
    }

    /** Vector-Jacobian product: (d latent / d obs)^T v, without forming the Jacobian. */
    Vec8 latent_vjp(const Vec8& obs, const Eigen::VectorXd& v) const {
        const Trace t = trace(obs);
        Eigen::VectorXd g2 = v.cwiseProduct(t.pre2.unaryExpr([this](double x) { return activation_.derivative(x); }));
        Eigen::VectorXd g1 = (w2_.transpose() * g2)
                                 .cwiseProduct(t.pre1.unaryExpr([this](double x) { return activation_.derivative(x); }));
        return w1_.transpose() * g1;
    }

    /** Smallest |pre-activation| over both hidden layers; distance to the nearest LeakyReLU kink. */
    double kink_margin(const Vec8& obs) const {
        const Trace t = trace(obs);
        return std::min(t.pre1.cwiseAbs().minCoeff(), t.pre2.cwiseAbs().minCoeff());
    }

    void validate() const {
        const auto h = b1_.size();
        if (h < 1 || w1_.rows() != h || w1_.cols() != input_dim || w2_.rows() != h || w2_.cols() != h ||
            b2_.size() != h || w3_.rows() != output_dim || w3_.cols() != h || b3_.size() != output_dim) {
            fail(ErrorKind::ShapeMismatch, "layer shapes do not chain 8 -> H -> H -> 2");
        }
        if (!flatten().allFinite()) {
            fail(ErrorKind::NonFiniteParameter, "policy parameters contain non-finite values");
        }
        if (activation_.kind == Activation::Kind::LeakyReLU && !(activation_.alpha > 0)) {
            fail(ErrorKind::InvalidArgument, "LeakyReLU alpha must be positive");
        }
    }

    bool same_parameters(const PolicyNet& other) const {
        return activation_ == other.activation_ && hidden() == other.hidden() && flatten() == other.flatten();
    }

private:
    Eigen::MatrixXd w1_;
    Eigen::VectorXd b1_;
    Eigen::MatrixXd w2_;
    Eigen::VectorXd b2_;
    Eigen::MatrixXd w3_;
    Eigen::VectorXd b3_;
    Activation activation_;
    nlohmann::json meta_ = nlohmann::json::object();
};

inline Action forward(const PolicyNet& policy, const Vec8& obs) { return policy.forward(obs); }
inline LatentVector latent(const PolicyNet& policy, const Vec8& obs) { return policy.latent(obs); }
inline Eigen::MatrixXd latent_jacobian(const PolicyNet& policy, const Vec8& obs) { return policy.latent_jacobian(obs); }

} // namespace modeswitch

#endif
