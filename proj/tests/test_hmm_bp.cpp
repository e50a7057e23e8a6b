#include <doctest.h>

#include "oracles.hpp"
#include "svae/hmm_bp.hpp"
#include "test_util.hpp"

using namespace svae;
using namespace svae::hmm;
using namespace testutil;

namespace {

HmmPotentials<Mat> random_hmm(std::mt19937_64& rng, int K, int T) {
    HmmPotentials<Mat> p;
    p.K = K;
    p.Tk = T;
    Mat a = randn(rng, K, 1);
    p.log_pi0 = (a.array() - logsumexp(a.col(0))).matrix();
    p.log_pi = randn(rng, K, K);
    for (int i = 0; i < K; ++i) p.log_pi.row(i).array() -= logsumexp(p.log_pi.row(i).transpose());
    p.obs = randn(rng, T, K, 2.0);
    return p;
}

}  // namespace

TEST_SUITE("hmm_bp") {

TEST_CASE("uniform two-state chain") {
    HmmPotentials<Mat> p;
    p.K = 2;
    p.Tk = 2;
    p.log_pi0 = Mat::Constant(2, 1, std::log(0.5));
    p.log_pi = Mat::Constant(2, 2, std::log(0.5));
    p.obs = Mat::Zero(2, 2);
    auto m = forward_backward(p);
    CHECK(max_abs(m.marginal.array() - 0.5) < 1e-15);
    CHECK(std::abs(scalar(m.logZ)) < 1e-15);
}

TEST_CASE("single step reduces to a softmax") {
    std::mt19937_64 rng(41);
    auto p = random_hmm(rng, 4, 1);
    auto m = forward_backward(p);
    Vec expect = softmax(p.log_pi0.col(0) + p.obs.row(0).transpose());
    CHECK(max_abs(m.marginal.row(0).transpose() - expect) < 1e-15);
}

TEST_CASE("marginals and logZ match path enumeration") {
    std::mt19937_64 rng(42);
    {
        auto p = random_hmm(rng, 3, 5);
        auto m = forward_backward(p);
        auto e = oracle::hmm_enumerate(p.log_pi0, p.log_pi, p.obs);
        CHECK(std::abs(scalar(m.logZ) - e.logZ) < 1e-10);
        CHECK(max_abs(m.marginal - e.marginal) < 1e-10);
    }
    double worst = 0;
    for (int K = 1; K <= 4; ++K)
        for (int T = 1; T <= 6; ++T)
            for (int rep = 0; rep < 3; ++rep) {
                auto p = random_hmm(rng, K, T);
                auto m = forward_backward(p);
                auto e = oracle::hmm_enumerate(p.log_pi0, p.log_pi, p.obs);
                worst = std::max({worst, std::abs(scalar(m.logZ) - e.logZ), max_abs(m.marginal - e.marginal)});
                for (int t = 0; t < T; ++t) CHECK(std::abs(m.marginal.row(t).sum() - 1.0) < 1e-12);
            }
    CHECK(worst < 1e-10);
}

TEST_CASE("per-step shift of the potentials") {
    std::mt19937_64 rng(43);
    for (int rep = 0; rep < 20; ++rep) {
        auto p = random_hmm(rng, 3, 6);
        auto a = forward_backward(p);
        const int t = rep % 6;
        const double c = uniform(rng, -5, 5);
        p.obs.row(t).array() += c;
        auto b = forward_backward(p);
        CHECK(std::abs(scalar(b.logZ) - scalar(a.logZ) - c) < 1e-12 * std::max(1.0, std::abs(scalar(a.logZ))));
        CHECK(max_abs(a.marginal - b.marginal) < 1e-12);
    }
}

TEST_CASE("impossible states and degenerate steps") {
    std::mt19937_64 rng(44);
    auto p = random_hmm(rng, 3, 4);
    const double ninf = -std::numeric_limits<double>::infinity();
    p.obs(2, 1) = ninf;
    auto m = forward_backward(p);
    CHECK(m.marginal(2, 1) == 0.0);
    auto e = oracle::hmm_enumerate(p.log_pi0, p.log_pi, p.obs);
    CHECK(max_abs(m.marginal - e.marginal) < 1e-10);

    p.obs.row(2).setConstant(ninf);
    CHECK_THROWS_AS(forward_backward(p), DegenerateDistribution);
    p.obs(2, 0) = std::nan("");
    CHECK_THROWS_AS(forward_backward(p), NonFinite);
}

TEST_CASE("taped logZ gradient with respect to the potentials is the marginals") {
    std::mt19937_64 rng(45);
    auto p = random_hmm(rng, 3, 5);
    ad::Tape tape;
    HmmPotentials<ad::Var> q;
    q.K = 3;
    q.Tk = 5;
    q.log_pi0 = tape.leaf(p.log_pi0);
    q.log_pi = tape.constant(p.log_pi);
    q.obs = tape.leaf(p.obs);
    auto m = forward_backward(q);
    auto ref = forward_backward(p);
    CHECK(max_abs(value(m.marginal) - ref.marginal) < 1e-14);
    auto g = tape.vjp({{m.logZ, Mat::Ones(1, 1)}});
    CHECK(max_abs(g[q.obs] - ref.marginal) < 1e-12);
    CHECK(max_abs(g[q.log_pi0] - ref.marginal.row(0).transpose()) < 1e-12);
}

}  // TEST_SUITE
