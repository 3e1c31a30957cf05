#include <modeswitch/io.hpp>
#include <modeswitch/policy.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace modeswitch;

namespace {

long double mish_ld(long double x) { return x * std::tanh(std::log1p(std::exp(x))); }

long double mish_prime_ld(long double x) {
    const long double sp = std::log1p(std::exp(x));
    const long double t = std::tanh(sp);
    const long double sig = 1.0L / (1.0L + std::exp(-x));
    return t + x * (1.0L - t * t) * sig;
}

// Fixed weights with no structure beyond being reproducible.
PolicyNet fixture_policy(Activation act, int h = 4) {
    Eigen::MatrixXd w1(h, 8), w2(h, h), w3(2, h);
    Eigen::VectorXd b1(h), b2(h), b3(2);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < 8; ++j) {
            w1(i, j) = 0.5 * std::sin(1.3 * i + 0.7 * j + 0.1);
        }
        for (int j = 0; j < h; ++j) {
            w2(i, j) = 0.6 * std::cos(0.9 * i - 1.1 * j + 0.3);
        }
        b1[i] = 0.1 * (i - 1.5);
        b2[i] = -0.05 * i;
    }
    for (int j = 0; j < h; ++j) {
        w3(0, j) = 0.8 * std::sin(2.0 * j + 0.5);
        w3(1, j) = 0.8 * std::cos(1.5 * j - 0.2);
    }
    b3 << 0.05, -0.1;
    return PolicyNet(w1, b1, w2, b2, w3, b3, act);
}

// Plain loops in long double.
std::vector<long double> ref_latent(const PolicyNet& p, const Vec8& o) {
    const int h = p.hidden();
    auto act = [&](long double v) -> long double {
        if (p.activation().kind == Activation::Kind::Mish) {
            return mish_ld(v);
        }
        return v > 0 ? v : static_cast<long double>(p.activation().alpha) * v;
    };
    std::vector<long double> a1(static_cast<std::size_t>(h)), a2(static_cast<std::size_t>(h));
    for (int i = 0; i < h; ++i) {
        long double s = p.b1()[i];
        for (int j = 0; j < 8; ++j) {
            s += static_cast<long double>(p.w1()(i, j)) * o[j];
        }
        a1[static_cast<std::size_t>(i)] = act(s);
    }
    for (int i = 0; i < h; ++i) {
        long double s = p.b2()[i];
        for (int j = 0; j < h; ++j) {
            s += static_cast<long double>(p.w2()(i, j)) * a1[static_cast<std::size_t>(j)];
        }
        a2[static_cast<std::size_t>(i)] = act(s);
    }
    return a2;
}

Vec8 fixture_obs() {
    Vec8 o;
    o << 0.12, 0.9, -0.3, -0.45, 0.08, -0.2, 0, 0;
    return o;
}

Vec8 random_obs(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.5, 1.5);
    Vec8 o;
    for (int i = 0; i < 6; ++i) {
        o[i] = d(rng);
    }
    o[6] = o[7] = 0;
    return o;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-12});
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

Eigen::MatrixXd fd_latent_jacobian(const PolicyNet& p, const Vec8& o, double h = 1e-6) {
    Eigen::MatrixXd J(p.hidden(), 8);
    for (int j = 0; j < 8; ++j) {
        Vec8 a = o, b = o;
        a[j] += h;
        b[j] -= h;
        J.col(j) = (p.latent(a) - p.latent(b)) / (2 * h);
    }
    return J;
}

} // namespace

TEST(Activation, MishMatchesExtendedPrecision) {
    for (double x : {-20.0, -3.0, -1.0, 0.0, 0.5, 1.0, 2.5, 30.0}) {
        EXPECT_NEAR(mish(x), static_cast<double>(mish_ld(x)), 1e-15 * std::max(1.0, std::abs(x))) << x;
        EXPECT_NEAR(mish_prime(x), static_cast<double>(mish_prime_ld(x)), 1e-14) << x;
    }
    EXPECT_NEAR(mish(1.0), 0.8650983882673103, 1e-15);
}

TEST(Activation, LeakyRelu) {
    EXPECT_EQ(leaky_relu(2.0, 0.01), 2.0);
    EXPECT_DOUBLE_EQ(leaky_relu(-2.0, 0.01), -0.02);
    EXPECT_EQ(leaky_relu_prime(0.0, 0.2), 0.2);
    EXPECT_EQ(leaky_relu_prime(1e-9, 0.2), 1.0);
}

TEST(Policy, ForwardMatchesIndependentEvaluation) {
    for (auto act : {Activation{Activation::Kind::Mish, 0.01}, Activation{Activation::Kind::LeakyReLU, 0.1}}) {
        const PolicyNet p = fixture_policy(act);
        const Vec8 o = fixture_obs();
        const auto z = ref_latent(p, o);
        const auto lat = p.latent(o);
        ASSERT_EQ(lat.size(), 4);
        for (int i = 0; i < 4; ++i) {
            EXPECT_NEAR(lat[i], static_cast<double>(z[static_cast<std::size_t>(i)]), 1e-14);
        }
        for (int k = 0; k < 2; ++k) {
            long double s = p.b3()[k];
            for (int j = 0; j < 4; ++j) {
                s += static_cast<long double>(p.w3()(k, j)) * z[static_cast<std::size_t>(j)];
            }
            const double expected = static_cast<double>(std::tanh(s));
            EXPECT_NEAR(k == 0 ? p.forward(o).main : p.forward(o).side, expected, 1e-14);
        }
    }
}

TEST(Policy, OutputsStayInActionBox) {
    const PolicyNet p = PolicyNet::random(16, Activation{}, 3, 8.0);
    std::mt19937_64 rng(2);
    for (int n = 0; n < 200; ++n) {
        const Action a = p.forward(random_obs(rng) * 50.0);
        EXPECT_LE(std::abs(a.main), 1.0);
        EXPECT_LE(std::abs(a.side), 1.0);
    }
}

TEST(Policy, MishLatentJacobianMatchesFiniteDifferences) {
    std::mt19937_64 rng(17);
    double worst = 0;
    for (int n = 0; n < 100; ++n) {
        const PolicyNet p = PolicyNet::random(16, Activation{}, 100 + static_cast<std::uint64_t>(n));
        const Vec8 o = random_obs(rng);
        worst = std::max(worst, rel_err(p.latent_jacobian(o), fd_latent_jacobian(p, o)));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(Policy, LeakyLatentJacobianAwayFromKinks) {
    std::mt19937_64 rng(19);
    double worst = 0;
    int used = 0;
    for (int n = 0; n < 300 && used < 100; ++n) {
        const PolicyNet p = PolicyNet::random(8, Activation{Activation::Kind::LeakyReLU, 0.01}, 500 + n);
        const Vec8 o = random_obs(rng);
        if (p.kink_margin(o) < 1e-4) {
            continue;
        }
        ++used;
        worst = std::max(worst, rel_err(p.latent_jacobian(o), fd_latent_jacobian(p, o)));
    }
    EXPECT_EQ(used, 100);
    EXPECT_LT(worst, 1e-6);
}

TEST(Policy, VjpAgreesWithJacobian) {
    const PolicyNet p = PolicyNet::random(12, Activation{}, 9);
    std::mt19937_64 rng(4);
    const Vec8 o = random_obs(rng);
    Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(12, -1, 1);
    EXPECT_LT((p.latent_vjp(o, v) - p.latent_jacobian(o).transpose() * v).norm(), 1e-12);
}

TEST(Policy, ShapeAndParameterValidation) {
    Eigen::MatrixXd w1 = Eigen::MatrixXd::Zero(3, 7);
    EXPECT_THROW(PolicyNet(w1, Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Zero(3, 3), Eigen::VectorXd::Zero(3),
                           Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Zero(2), Activation{}),
                 Error);
    Eigen::MatrixXd w2 = Eigen::MatrixXd::Zero(3, 3);
    w2(0, 0) = std::nan("");
    try {
        PolicyNet(Eigen::MatrixXd::Zero(3, 8), Eigen::VectorXd::Zero(3), w2, Eigen::VectorXd::Zero(3),
                  Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Zero(2), Activation{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonFiniteParameter);
    }
}

TEST(Policy, FlattenRoundTrip) {
    const PolicyNet p = PolicyNet::random(6, Activation{}, 1);
    const PolicyNet q = p.with_parameters(p.flatten());
    EXPECT_TRUE(p.same_parameters(q));
    EXPECT_EQ(p.parameter_count(), static_cast<std::size_t>(8 * 6 + 6 + 6 * 6 + 6 + 2 * 6 + 2));
}

TEST(Policy, JsonRoundTripIsExact) {
    PolicyNet p = fixture_policy(Activation{Activation::Kind::LeakyReLU, 0.05}, 5);
    p.meta()["note"] = "fixture";
    const PolicyNet q = io::policy_from_json(io::json::parse(io::policy_to_json(p).dump()));
    EXPECT_TRUE(p.same_parameters(q));
    EXPECT_EQ(q.meta()["note"], "fixture");
    EXPECT_EQ(q.activation().alpha, 0.05);
}

TEST(Policy, JsonSchemaErrors) {
    io::json doc = io::policy_to_json(PolicyNet::random(4, Activation{}, 1));
    doc["arch"] = {8, 4, 5, 2};
    EXPECT_THROW(io::policy_from_json(doc), Error);
    doc = io::policy_to_json(PolicyNet::random(4, Activation{}, 1));
    doc["version"] = 99;
    try {
        io::policy_from_json(doc);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SchemaMismatch);
    }
}
