#include <doctest.h>

#include "fixtures.hpp"
#include "svae/expfam.hpp"
#include "svae/special.hpp"

using namespace svae;
using namespace svae::expfam;
using namespace testutil;

TEST_SUITE("expfam") {

TEST_CASE("special functions against high-precision reference values") {
    struct Row {
        double x, psi, psi1;
    };
    // 30-digit reference evaluations, frozen
    const Row rows[] = {
        {0.001, -1000.5755719318103005, 1000001.642533195869},
        {0.1, -10.423754940411076795, 101.43329915079275882},
        {0.5, -1.9635100260214234794, 4.9348022005446793094},
        {1.0, -0.57721566490153286061, 1.6449340668482264365},
        {1.5, 0.036489973978576520559, 0.93480220054467930942},
        {3.7, 1.1671535393615113859, 0.3100378576700383191},
        {10.0, 2.2517525890667211076, 0.10516633568168574612},
        {123.4, 4.8113737751162773729, 0.0081366516108652636859},
        {1e6, 13.815510057964190771, 1.0000005000001666667e-6},
    };
    for (const auto& r : rows) {
        CHECK(std::abs(digamma(r.x) - r.psi) <= 1e-12 * std::max(1.0, std::abs(r.psi)));
        CHECK(std::abs(trigamma(r.x) - r.psi1) <= 1e-11 * std::abs(r.psi1));
    }
    CHECK(digamma(1.0) == doctest::Approx(-0.5772156649).epsilon(1e-10));
    CHECK_THROWS_AS(digamma(0.0), DomainError);
    CHECK_THROWS_AS(digamma(-1.0), DomainError);

    CHECK(log_multivariate_gamma(1, 3.3) == doctest::Approx(std::lgamma(3.3)).epsilon(1e-15));
    CHECK(log_multivariate_gamma(2, 2.5) == doctest::Approx(0.8570478133976192467).epsilon(1e-14));
    CHECK_THROWS_AS(log_multivariate_gamma(3, 1.0), DomainError);

    Vec z = Vec::Zero(2);
    CHECK(svae::logsumexp(z) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    Vec big(2);
    big << 1000.0, 1000.0;
    CHECK(svae::logsumexp(big) == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("MVN evaluation") {
    auto e = mvn_eval(Vec::Zero(2), Mat::Identity(2, 2));
    Vec eta_expect(6);
    eta_expect << 0, 0, -0.5, 0, 0, -0.5;
    CHECK(max_abs(e.eta.data - eta_expect) == 0.0);
    Vec mu_expect(6);
    mu_expect << 0, 0, 1, 0, 0, 1;
    CHECK(max_abs(e.mu.data - mu_expect) < 1e-15);
    CHECK(e.log_partition == doctest::Approx(std::log(2 * M_PI)).epsilon(1e-14));

    Vec m1(1);
    m1 << 1.0;
    auto e1 = mvn_eval(m1, Mat::Constant(1, 1, 2.0));
    CHECK(e1.eta.data(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(e1.eta.data(1) == doctest::Approx(-0.25).epsilon(1e-15));
    CHECK(e1.log_partition == doctest::Approx(0.25 + 0.5 * std::log(2.0) + 0.5 * kLog2Pi).epsilon(1e-14));

    CHECK_THROWS_AS(mvn_eval(Vec::Zero(2), -Mat::Identity(2, 2)), NotSPD);
}

TEST_CASE("NIW evaluation and printed natural parameters") {
    NiwCanonical c{Mat::Identity(2, 2), Vec::Zero(2), 1.0, 3.0};
    auto e = niw_eval(c);
    Vec expect(8);
    expect << 1, 0, 0, 1, 0, 0, 1, 7;
    CHECK(max_abs(e.eta.data - expect) == 0.0);

    NiwCanonical bad = c;
    bad.lambda = 0.0;
    CHECK_THROWS_AS(niw_eval(bad), DomainError);
    bad = c;
    bad.nu = 1.0;
    CHECK_THROWS_AS(niw_eval(bad), DomainError);
    bad = c;
    bad.S = -Mat::Identity(2, 2);
    CHECK_THROWS_AS(niw_eval(bad), NotSPD);
}

TEST_CASE("NIW third expected statistic against Monte Carlo") {
    // S = 1, m = 0, lambda = 2, nu = 3: closed form -1/2 (1/2 + 0)
    NiwCanonical c{Mat::Identity(1, 1), Vec::Zero(1), 2.0, 3.0};
    auto e = niw_eval(c);
    CHECK(e.mu.data(2) == doctest::Approx(-0.25).epsilon(1e-14));

    std::mt19937_64 rng(2024);
    std::gamma_distribution<double> prec(c.nu / 2, 2.0 / c.S(0, 0));  // Sigma^-1 ~ Wishart(S^-1, nu)
    std::normal_distribution<double> nrm(0.0, 1.0);
    const int N = 1000000;
    double s = 0, s2 = 0;
    for (int i = 0; i < N; ++i) {
        const double p = prec(rng);
        const double mu = c.m(0) + nrm(rng) / std::sqrt(c.lambda * p);
        const double v = -0.5 * mu * mu * p;
        s += v;
        s2 += v * v;
    }
    const double mean = s / N, sd = std::sqrt((s2 / N - mean * mean) / N);
    CHECK(std::abs(mean - e.mu.data(2)) < 3 * sd);
}

TEST_CASE("MNIW evaluation and Monte Carlo expectation") {
    MniwCanonical c{Mat::Identity(1, 1), Mat::Zero(1, 2), Mat::Identity(2, 2), 2.0};
    auto e = mniw_eval(c);
    Vec expect(1 + 2 + 4 + 1);
    expect << 1, 0, 0, 1, 0, 0, 1, 6;
    CHECK(max_abs(e.eta.data - expect) == 0.0);

    MniwCanonical c2{Mat::Constant(1, 1, 2.0), Mat::Zero(1, 1), Mat::Identity(1, 1), 3.0};
    auto e2 = mniw_eval(c2);
    CHECK(e2.mu.data(0) == doctest::Approx(-0.75).epsilon(1e-14));
    std::mt19937_64 rng(99);
    std::gamma_distribution<double> prec(c2.nu / 2, 2.0 / c2.S(0, 0));
    const int N = 1000000;
    double s = 0, s2 = 0;
    for (int i = 0; i < N; ++i) {
        const double v = -0.5 * prec(rng);
        s += v;
        s2 += v * v;
    }
    const double mean = s / N, sd = std::sqrt((s2 / N - mean * mean) / N);
    CHECK(std::abs(mean - (-0.75)) < 3 * sd);
}

TEST_CASE("Dirichlet and categorical") {
    Vec a(2);
    a << 1.0, 1.0;
    auto e = dirichlet_eval(a);
    CHECK(e.mu.data(0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(e.mu.data(1) == doctest::Approx(-1.0).epsilon(1e-12));
    a << 2.7, 2.7;
    e = dirichlet_eval(a);
    CHECK(e.mu.data(0) == e.mu.data(1));
    a << 1.0, -1.0;
    CHECK_THROWS_AS(dirichlet_eval(a), DomainError);

    Vec l(3);
    l << 0.3, -1.0, 2.0;
    auto c = categorical_eval(l);
    CHECK(c.mu.data.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("grad logZ equals expected statistics for every family") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 1 + rep % 3;
        std::vector<Evaluated> es = {
            mvn_eval(randn(rng, n, 1), random_spd(rng, n)),
            niw_eval(random_niw(rng, n)),
            mniw_eval(random_mniw(rng, n, n + 1)),
            dirichlet_eval(random_alpha(rng, n + 1)),
            categorical_eval(randn(rng, n + 2, 1)),
        };
        for (const auto& e : es) {
            INFO(e.eta.family.name());
            CHECK(rel_close(fd_grad_logz(e.eta), e.mu.data, 1e-5, 1e-3));
        }
    }
}

TEST_CASE("KL divergence") {
    std::mt19937_64 rng(8);
    auto n1 = niw_eval(random_niw(rng, 2)).eta;
    CHECK(std::abs(kl_divergence(n1, n1)) <= 1e-10);
    Vec one(1);
    one << 1.0;
    CHECK(kl_divergence(mvn_eval(one, Mat::Identity(1, 1)).eta, mvn_eval(Vec::Zero(1), Mat::Identity(1, 1)).eta) ==
          doctest::Approx(0.5).epsilon(1e-12));
    for (int s = 0; s < 1000; ++s) {
        auto a = niw_natural(random_niw(rng, 2));
        auto b = niw_natural(random_niw(rng, 2));
        REQUIRE(kl_divergence(a, b) >= -1e-10);
    }
    auto d = dirichlet_eval(random_alpha(rng, 3)).eta;
    CHECK_THROWS_AS(kl_divergence(n1, d), FamilyMismatch);
}

TEST_CASE("packing and canonical round trips") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 1 + rep % 3;
        auto nc = random_niw(rng, n);
        auto eta = niw_natural(nc);
        Mat repacked = niw_pack(niw_unpack<Mat>(eta.data, n));
        CHECK((repacked.array() == Mat(eta.data).array()).all());
        auto back = niw_canonical(eta);
        CHECK(max_abs(back.S - nc.S) < 1e-10);
        CHECK(max_abs(back.m - nc.m) < 1e-10);
        CHECK(std::abs(back.lambda - nc.lambda) < 1e-10);
        CHECK(std::abs(back.nu - nc.nu) < 1e-10);

        auto mc = random_mniw(rng, n, n + 1);
        auto em = mniw_natural(mc);
        Mat rep2 = mniw_pack(mniw_unpack<Mat>(em.data, n, n + 1));
        CHECK((rep2.array() == Mat(em.data).array()).all());
        auto mb = mniw_canonical(em);
        CHECK(max_abs(mb.S - mc.S) < 1e-10);
        CHECK(max_abs(mb.M - mc.M) < 1e-10);
        CHECK(max_abs(mb.V - mc.V) < 1e-10);
        CHECK(std::abs(mb.nu - mc.nu) < 1e-10);
    }
}

}  // TEST_SUITE
