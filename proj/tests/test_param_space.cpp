#include <doctest.h>

#include "fixtures.hpp"
#include "svae/param_space.hpp"
#include "svae/special.hpp"

using namespace svae;
using namespace svae::param;
using namespace testutil;

namespace {

Vec random_in(std::mt19937_64& rng, const Bijector& b) { return randn(rng, b.in_size(), 1); }

// central difference of inverse along v
Vec fd_inverse(const Bijector& b, const Vec& y, const Vec& v, double h = 1e-6) {
    return (inverse(b, y + h * v) - inverse(b, y - h * v)) / (2 * h);
}

Vec sym_tangent(std::mt19937_64& rng, int n) {
    Mat a = randn(rng, n, n);
    return flatten_rm(sym(a));
}

}  // namespace

TEST_SUITE("param_space") {

TEST_CASE("elementary forward and inverse values") {
    auto sp = Bijector::softplus(1);
    CHECK(forward(sp, Vec::Zero(1))(0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(std::abs(inverse(sp, Vec::Constant(1, std::log(2.0)))(0)) < 1e-15);

    auto sm = Bijector::simplex(3);
    Vec p = forward(sm, Vec::Zero(2));
    for (int i = 0; i < 3; ++i) CHECK(p(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    CHECK(max_abs(inverse(sm, Vec::Constant(3, 1.0 / 3))) < 1e-15);

    auto spd = Bijector::spd(2);
    Mat S = unflatten_rm(forward(spd, Vec::Zero(3)), 2, 2);
    Mat expect = std::log(2.0) * std::log(2.0) * Mat::Identity(2, 2);
    CHECK(max_abs(S - expect) < 1e-15);

    auto sh = Bijector::shifted_softplus(1, 2.0);
    CHECK(forward(sh, Vec::Zero(1))(0) == doctest::Approx(2.0 + std::log(2.0)));
}

TEST_CASE("inverse rejects points on or outside the boundary") {
    CHECK_THROWS_AS(inverse(Bijector::softplus(1), Vec::Zero(1)), BoundaryError);
    CHECK_THROWS_AS(inverse(Bijector::softplus(1), Vec::Constant(1, -1.0)), BoundaryError);
    CHECK_THROWS_AS(inverse(Bijector::shifted_softplus(1, 1.0), Vec::Constant(1, 0.5)), BoundaryError);
    Vec p(3);
    p << 0.5, 0.5, 0.0;
    CHECK_THROWS_AS(inverse(Bijector::simplex(3), p), BoundaryError);
    Mat S(2, 2);
    S << 1, 1, 1, 1;  // singular
    CHECK_THROWS_AS(inverse(Bijector::spd(2), flatten_rm(S)), BoundaryError);
    S << 1, 0, 0, -1;
    CHECK_THROWS_AS(inverse(Bijector::spd(2), flatten_rm(S)), BoundaryError);
    CHECK_THROWS_AS(forward(Bijector::spd(3), Vec::Zero(3)), ShapeMismatch);
}

TEST_CASE("round trips over random draws") {
    std::mt19937_64 rng(11);
    const std::vector<Bijector> bs = {Bijector::identity(4), Bijector::softplus(4), Bijector::shifted_softplus(3, 2.0),
                                      Bijector::simplex(5), Bijector::spd(1), Bijector::spd(2), Bijector::spd(4)};
    for (const auto& b : bs) {
        double worst_x = 0, worst_y = 0;
        for (int it = 0; it < 1000; ++it) {
            Vec x = random_in(rng, b);
            Vec y = forward(b, x);
            worst_x = std::max(worst_x, max_abs(inverse(b, y) - x));
            worst_y = std::max(worst_y, max_abs(forward(b, inverse(b, y)) - y));
        }
        CHECK(worst_x < 1e-9);
        CHECK(worst_y < 1e-10);
    }
}

TEST_CASE("SPD forward output is symmetric positive definite") {
    std::mt19937_64 rng(12);
    for (int n = 1; n <= 5; ++n) {
        auto b = Bijector::spd(n);
        for (int it = 0; it < 200; ++it) {
            Mat S = unflatten_rm(forward(b, randn(rng, b.in_size(), 1, 2.0)), n, n);
            CHECK(max_abs(S - S.transpose()) == 0.0);
            Eigen::LLT<Mat> llt(S);
            CHECK(llt.info() == Eigen::Success);
        }
    }
}

TEST_CASE("jvp_inverse matches central differences of inverse") {
    std::mt19937_64 rng(13);
    {
        auto b = Bijector::softplus(3);
        Vec y = forward(b, randn(rng, 3, 1));
        Vec v = randn(rng, 3, 1);
        Vec expect(3);
        for (int i = 0; i < 3; ++i) expect(i) = v(i) / (1.0 - std::exp(-y(i)));
        CHECK(max_abs(jvp_inverse(b, y, v) - expect) < 1e-12);
        CHECK(max_abs(jvp_inverse(b, y, v) - fd_inverse(b, y, v)) < 1e-6);
    }
    {
        auto b = Bijector::identity(3);
        Vec v = randn(rng, 3, 1);
        CHECK(jvp_inverse(b, randn(rng, 3, 1), v) == v);
    }
    {
        auto b = Bijector::simplex(4);
        for (int it = 0; it < 50; ++it) {
            Vec y = forward(b, randn(rng, 3, 1));
            Vec v = randn(rng, 4, 1);
            v.array() -= v.mean();  // tangent to the simplex
            CHECK(max_abs(jvp_inverse(b, y, v) - fd_inverse(b, y, v)) < 1e-6);
        }
    }
    for (int n = 1; n <= 4; ++n) {
        auto b = Bijector::spd(n);
        for (int it = 0; it < 50; ++it) {
            Vec y = forward(b, randn(rng, b.in_size(), 1));
            Vec v = sym_tangent(rng, n);
            Vec w = randn(rng, b.in_size(), 1);
            const double got = jvp_inverse(b, y, v).dot(w);
            const double fd = fd_inverse(b, y, v).dot(w);
            CHECK(std::abs(got - fd) < 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("jvp_forward matches central differences of forward") {
    std::mt19937_64 rng(14);
    const std::vector<Bijector> bs = {Bijector::softplus(3), Bijector::simplex(4), Bijector::spd(3)};
    for (const auto& b : bs)
        for (int it = 0; it < 30; ++it) {
            Vec x = random_in(rng, b), v = random_in(rng, b);
            const double h = 1e-6;
            Vec fd = (forward(b, x + h * v) - forward(b, x - h * v)) / (2 * h);
            CHECK(max_abs(jvp_forward(b, x, v) - fd) < 1e-7);
        }
}

TEST_CASE("jvp_inverse is linear in the tangent") {
    std::mt19937_64 rng(15);
    const std::vector<Bijector> bs = {Bijector::softplus(3), Bijector::simplex(4), Bijector::spd(3)};
    for (const auto& b : bs)
        for (int it = 0; it < 100; ++it) {
            Vec y = forward(b, random_in(rng, b));
            Vec v = randn(rng, b.out_size(), 1), w = randn(rng, b.out_size(), 1);
            const double a = uniform(rng, -2, 2), c = uniform(rng, -2, 2);
            Vec lhs = jvp_inverse(b, y, a * v + c * w);
            Vec rhs = a * jvp_inverse(b, y, v) + c * jvp_inverse(b, y, w);
            CHECK(max_abs(lhs - rhs) < 1e-10 * std::max(1.0, max_abs(lhs)));
        }
}

TEST_CASE("family bijectors: round trip and inverse jacobian") {
    std::mt19937_64 rng(16);
    const std::vector<FamilyBijector> fbs = {FamilyBijector::niw(2), FamilyBijector::niw(3),
                                             FamilyBijector::mniw(2, 3), FamilyBijector::dirichlet(4),
                                             FamilyBijector::identity(expfam::FamilyDescriptor::mvn(2))};
    for (const auto& fb : fbs) {
        for (int it = 0; it < 100; ++it) {
            Vec x = randn(rng, fb.in_size(), 1);
            Vec eta = forward(fb, x);
            REQUIRE(eta.size() == fb.out_size());
            if (fb.kind != FamilyBijector::Kind::Identity)
                CHECK_NOTHROW(expfam::validate(expfam::NaturalParams{fb.family, eta}));
            CHECK(max_abs(inverse(fb, eta) - x) < 1e-8);
        }
        // jvp_inverse is the inverse of the forward Jacobian on the image tangent space
        for (int it = 0; it < 10; ++it) {
            Vec x = randn(rng, fb.in_size(), 1);
            Vec eta = forward(fb, x);
            Vec v = randn(rng, fb.in_size(), 1);
            Vec tv = jvp_forward(fb, x, v);
            CHECK(max_abs(jvp_inverse(fb, eta, tv) - v) < 1e-8 * std::max(1.0, max_abs(v)));
            const double h = 1e-6;
            Vec fd = (forward(fb, x + h * v) - forward(fb, x - h * v)) / (2 * h);
            CHECK(max_abs(tv - fd) < 1e-6 * std::max(1.0, max_abs(fd)));
        }
    }
}

TEST_CASE("tape nodes: bijector_node differentiates, natgrad_map applies jvp_inverse") {
    std::mt19937_64 rng(17);
    auto fb = FamilyBijector::niw(2);
    Vec x0 = randn(rng, fb.in_size(), 1);
    Vec c = randn(rng, fb.out_size(), 1);

    ad::Tape tape;
    auto x = tape.leaf(x0);
    auto y = bijector_node(fb, x);
    auto loss = dot(y, tape.constant(c));
    auto g = tape.vjp({{loss, Mat::Ones(1, 1)}});
    Mat expect = jacobian(fb, x0).transpose() * c;
    CHECK(max_abs(g[x] - expect) < 1e-10);

    ad::Tape t2;
    auto x2 = t2.leaf(x0);
    auto y2 = natgrad_map(fb, x2);
    CHECK(max_abs(value(y2) - forward(fb, x0)) == 0.0);
    auto loss2 = dot(y2, t2.constant(c));
    auto g2 = t2.vjp({{loss2, Mat::Ones(1, 1)}});
    CHECK(max_abs(g2[x2] - jvp_inverse(fb, forward(fb, x0), c)) < 1e-12);
}

}  // TEST_SUITE
