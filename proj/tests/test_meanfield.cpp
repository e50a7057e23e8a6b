#include <doctest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "svae/meanfield.hpp"
#include "svae/objective.hpp"
#include "test_util.hpp"

using namespace svae;
using namespace svae::mf;
using namespace testutil;

namespace {

Mat random_marginals(std::mt19937_64& rng, int Tk, int K) {
    Mat q = randn(rng, Tk, K).array().exp().matrix();
    for (int t = 0; t < Tk; ++t) q.row(t) /= q.row(t).sum();
    return q;
}

Mat transition_row(const chain::Transition<Mat>& q) {
    const int D = static_cast<int>(q.h1.rows());
    Vec row(2 * D + 3 * D * D);
    row << q.h1, flatten_rm(q.J11), flatten_rm(q.J12), flatten_rm(q.J22), q.h2;
    return row.transpose();
}

MfOptions tight(int iters) {
    MfOptions o;
    o.max_iters = iters;
    o.tol = 0;
    o.residual_tol = 0;
    return o;
}

}  // namespace

TEST_SUITE("meanfield") {

TEST_CASE("expected transition blocks of a concentrated MNIW approach the point dynamics") {
    std::mt19937_64 rng(51);
    const int D = 2;
    Mat A = randn(rng, D, D, 0.5), Q = random_spd(rng, D);
    Vec b = randn(rng, D, 1);
    expfam::MniwCanonical c;
    c.nu = 1e7;
    c.S = Q * c.nu;  // E[Sigma^-1] = nu S^-1 = Q^-1
    c.M.resize(D, D + 1);
    c.M << A, b;
    c.V = Mat::Identity(D + 1, D + 1) * 1e9;
    auto niw = random_niw(rng, D);
    std::vector<Mat> mu{expfam::niw_eval(niw).mu.data, expfam::mniw_eval(c).mu.data};
    auto g = global_expected_stats(GlobalLayout{D, 1}, mu);
    auto ref = point_mass_lds(A, Q, b, niw.m, niw.S);
    CHECK(rel_close(g.theta, ref.theta, 1e-6, 1e-6));
    CHECK(std::abs(scalar(g.trans_logZ) - scalar(ref.trans_logZ)) < 1e-5);
    // E[Sigma^-1] and E[Sigma^-1 X] are exact for any V
    const int D2 = D * D;
    CHECK(max_abs(g.theta.block(0, D + 2 * D2, 1, D2) - ref.theta.block(0, D + 2 * D2, 1, D2)) < 1e-9);
    CHECK(max_abs(g.theta.block(0, D + D2, 1, D2) - ref.theta.block(0, D + D2, 1, D2)) < 1e-9);
}

TEST_CASE("mf_to_continuous is a convex combination of the state rows") {
    std::mt19937_64 rng(52);
    auto G = random_global(rng, 2, 3);
    const int T = 6;
    auto rec = random_recognition(rng, T, 2);
    Mat onehot = Mat::Zero(T - 1, 3);
    for (int t = 0; t < T - 1; ++t) onehot(t, t % 3) = 1.0;
    auto p = mf_to_continuous(G.g, onehot, rec);
    for (int t = 0; t < T - 1; ++t) CHECK(transition_row(p.trans[t]) == G.g.theta.row(t % 3));
    CHECK(p.h0 == G.g.h0);
    CHECK(p.J0 == G.g.J0);
    for (int t = 0; t < T; ++t) {
        CHECK(p.r[t] == rec.r.row(t).transpose());
        CHECK(p.R[t] == Mat(rec.R_diag.row(t).transpose().asDiagonal()));
    }

    auto G2 = random_global(rng, 2, 2);
    Mat w(T - 1, 2);
    w.col(0).setConstant(0.25);
    w.col(1).setConstant(0.75);
    p = mf_to_continuous(G2.g, w, rec);
    Mat expect = 0.25 * G2.g.theta.row(0) + 0.75 * G2.g.theta.row(1);
    for (int t = 0; t < T - 1; ++t) CHECK(max_abs(transition_row(p.trans[t]) - expect) < 1e-12);

    auto G1 = random_global(rng, 2, 1);
    p = mf_to_continuous(G1.g, Mat(Mat::Ones(T - 1, 1)), rec);
    for (int t = 0; t < T - 1; ++t) CHECK(transition_row(p.trans[t]) == G1.g.theta);
}

TEST_CASE("mf_to_discrete matches a scalar expansion") {
    std::mt19937_64 rng(53);
    auto G = random_global(rng, 1, 2);
    const int T = 3;
    auto rec = random_recognition(rng, T, 1);
    auto p = mf_to_continuous(G.g, random_marginals(rng, T - 1, 2), rec);
    auto fr = chain::kalman_filter(p);
    auto mu = chain::kalman_smooth(p, fr);
    auto hp = mf_to_discrete(G.g, mu);
    REQUIRE(hp.obs.rows() == 2);
    for (int t = 0; t < 2; ++t)
        for (int k = 0; k < 2; ++k) {
            const Mat& th = G.g.theta;
            const double h1 = th(k, 0), J11 = th(k, 1), J12 = th(k, 2), J22 = th(k, 3), h2 = th(k, 4);
            const double e = -h1 * mu.Ez[t](0) - 0.5 * J11 * mu.Ezz[t](0, 0) + J12 * mu.Ezz_next[t](0, 0) -
                             0.5 * J22 * mu.Ezz[t + 1](0, 0) + h2 * mu.Ez[t + 1](0) - G.g.trans_logZ(k);
            CHECK(std::abs(hp.obs(t, k) - e) < 1e-12);
        }
    CHECK(hp.log_pi0 == G.g.log_pi0);
    CHECK(hp.log_pi == G.g.log_pi);
}

TEST_CASE("degenerate discrete blocks") {
    std::mt19937_64 rng(54);
    const int T = 7;
    auto G1 = random_global(rng, 2, 1);
    auto rec = random_recognition(rng, T, 2);
    auto s = sweep(G1.g, rec, uniform_marginals(G1.g, T));
    CHECK(s.omega_k.obs.cols() == 1);
    CHECK(max_abs(s.q.marginal.array() - 1.0) < 1e-15);

    // identical rows: the discrete posterior is the prior chain
    auto G = random_global(rng, 2, 3);
    G.g.theta.row(1) = G.g.theta.row(0);
    G.g.theta.row(2) = G.g.theta.row(0);
    G.g.trans_logZ.setConstant(G.g.trans_logZ(0));
    s = sweep(G.g, rec, uniform_marginals(G.g, T));
    for (int t = 0; t < T - 1; ++t)
        CHECK(max_abs(s.omega_k.obs.row(t).array() - s.omega_k.obs(t, 0)) < 1e-12);
    hmm::HmmPotentials<Mat> prior = s.omega_k;
    prior.obs.setZero();
    CHECK(max_abs(hmm::forward_backward(prior).marginal - s.q.marginal) < 1e-12);
}

TEST_CASE("both maps are linear in their inputs") {
    std::mt19937_64 rng(55);
    auto G = random_global(rng, 2, 3);
    const int T = 5;
    auto rec = random_recognition(rng, T, 2);
    Mat q1 = random_marginals(rng, T - 1, 3), q2 = random_marginals(rng, T - 1, 3);
    const double a = 0.3, b = -1.7;
    auto p1 = mf_to_continuous(G.g, q1, rec), p2 = mf_to_continuous(G.g, q2, rec);
    auto p12 = mf_to_continuous(G.g, Mat(a * q1 + b * q2), rec);
    for (int t = 0; t < T - 1; ++t)
        CHECK(max_abs(transition_row(p12.trans[t]) - a * transition_row(p1.trans[t]) - b * transition_row(p2.trans[t])) <
              1e-10);

    auto m1 = chain::kalman_smooth(p1, chain::kalman_filter(p1));
    auto m2 = chain::kalman_smooth(p2, chain::kalman_filter(p2));
    chain::SmoothResult<Mat> m12 = m1;
    for (int t = 0; t < T; ++t) {
        m12.Ez[t] = a * m1.Ez[t] + b * m2.Ez[t];
        m12.Ezz[t] = a * m1.Ezz[t] + b * m2.Ezz[t];
    }
    for (int t = 0; t < T - 1; ++t) m12.Ezz_next[t] = a * m1.Ezz_next[t] + b * m2.Ezz_next[t];
    // obs is affine: the normalizer enters once
    Mat lz = G.g.trans_logZ.transpose().replicate(T - 1, 1);
    Mat o1 = mf_to_discrete(G.g, m1).obs + lz, o2 = mf_to_discrete(G.g, m2).obs + lz;
    Mat o12 = mf_to_discrete(G.g, m12).obs + lz;
    CHECK(max_abs(o12 - a * o1 - b * o2) < 1e-10);
}

TEST_CASE("LDS converges in one sweep to prior expectations plus recognition") {
    std::mt19937_64 rng(56);
    auto G = random_global(rng, 3, 1);
    const int T = 12;
    auto rec = random_recognition(rng, T, 3);
    MfOptions o;
    o.max_iters = 10;
    auto st = block_update(G.g, rec, o);
    CHECK(st.converged);
    CHECK(st.iters == 1);
    for (int t = 0; t < T - 1; ++t) CHECK(transition_row(st.local.omega_z.trans[t]) == G.g.theta);
    CHECK(max_abs(g_residual(st.omega(), G.g, rec)) == 0.0);

    // for K = 1 the continuous residual is omega - (E t(theta) + lambda) for any omega
    auto other = random_global(rng, 3, 2);
    Mat W = Mat::Constant(T - 1, 2, 0.5) * other.g.theta;
    Mat obs = randn(rng, T - 1, 1);
    Mat g = g_residual(flatten_omega(W, obs), G.g, rec);
    Mat gW, gobs;
    unflatten_omega(g, T, 3, 1, gW, gobs);
    CHECK(max_abs(gW - (W - G.g.theta.replicate(T - 1, 1))) < 1e-14);
}

TEST_CASE("symmetric two-state model stays symmetric") {
    std::mt19937_64 rng(57);
    auto G = random_global(rng, 2, 2);
    G.g.theta.row(1) = G.g.theta.row(0);
    G.g.trans_logZ(1) = G.g.trans_logZ(0);
    G.g.log_pi0.setConstant(-0.9);
    G.g.log_pi << -0.2, -2.0, -2.0, -0.2;
    auto rec = random_recognition(rng, 15, 2);
    auto st = block_update(G.g, rec, tight(20));
    CHECK(max_abs(st.local.q.marginal.array() - 0.5) < 1e-10);
}

TEST_CASE("surrogate is non-decreasing over sweeps") {
    std::mt19937_64 rng(58);
    double worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
        auto G = random_global(rng, 2, 3);
        auto rec = random_recognition(rng, 20, 2, 2.0);
        auto st = block_update(G.g, rec, tight(50));
        REQUIRE(st.trace.size() >= 2);
        for (size_t i = 1; i < st.trace.size(); ++i) worst = std::min(worst, st.trace[i] - st.trace[i - 1]);
    }
    CHECK(worst >= -1e-9);
}

TEST_CASE("fixed points have a vanishing residual") {
    std::mt19937_64 rng(59);
    auto G = random_global(rng, 2, 3);
    const int T = 20;
    auto rec = random_recognition(rng, T, 2, 2.0);
    MfOptions o;
    o.max_iters = 2000;
    o.tol = 0;  // the surrogate change is second order in g, so stop on g itself
    o.residual_tol = 1e-12;
    auto st = block_update(G.g, rec, o);
    CHECK(st.converged);
    const Mat w = st.omega();
    const double r0 = max_abs(g_residual(w, G.g, rec));
    CHECK(r0 <= 1e-10);

    // moving one coordinate off the fixed point changes g at first order
    for (double delta : {1e-3, 1e-4}) {
        Mat wp = w;
        wp(3) += delta;
        const double r = max_abs(g_residual(wp, G.g, rec));
        CHECK(r > 0.1 * delta);
        CHECK(r < 10.0 * delta);
    }
}

TEST_CASE("taped residual matches the plain one") {
    std::mt19937_64 rng(60);
    auto G = random_global(rng, 2, 2);
    const int T = 6;
    auto rec = random_recognition(rng, T, 2);
    auto st = block_update(G.g, rec, tight(3));
    Mat w = st.omega();
    w += randn(rng, w.rows(), 1, 0.1);
    ad::Tape tape;
    auto v = [&](const Mat& m) { return tape.constant(m); };
    GlobalExpectedStats<ad::Var> gv{G.g.D, G.g.K, v(G.g.J0), v(G.g.h0), v(G.g.init_logZ), v(G.g.theta),
                                    v(G.g.trans_logZ), v(G.g.log_pi0), v(G.g.log_pi)};
    Recognition<ad::Var> rv{v(rec.r), v(rec.R_diag)};
    auto gw = g_residual(tape.leaf(w), gv, rv);
    CHECK(max_abs(value(gw) - g_residual(w, G.g, rec)) < 1e-13);
}

TEST_CASE("sequential and parallel message passing reach the same fixed point") {
    std::mt19937_64 rng(61);
    ThreadPool pool(3);
    for (int rep = 0; rep < 3; ++rep) {
        auto G = random_global(rng, 2, 3);
        auto rec = random_recognition(rng, 40, 2, 2.0);
        MfOptions o;
        o.max_iters = 300;
        o.tol = 0;
        o.residual_tol = 1e-11;
        auto a = block_update(G.g, rec, o);
        o.bp.parallel = true;
        o.bp.pool = &pool;
        auto b = block_update(G.g, rec, o);
        CHECK(max_abs(a.omega() - b.omega()) < 1e-7);
    }
}

TEST_CASE("input validation") {
    std::mt19937_64 rng(62);
    auto G = random_global(rng, 2, 3);
    auto rec = random_recognition(rng, 5, 2);
    CHECK_THROWS_AS(mf_to_continuous(G.g, Mat(Mat::Ones(4, 2)), rec), DimMismatch);
    CHECK_THROWS_AS(global_expected_stats(GlobalLayout{2, 2}, G.mu), DimMismatch);
    MfOptions o;
    o.max_iters = 0;
    CHECK_THROWS_AS(block_update(G.g, rec, o), DomainError);
    auto bad = random_recognition(rng, 1, 2);
    CHECK_THROWS_AS(block_update(G.g, bad, MfOptions{}), ShapeMismatch);
    auto masked = apply_mask(rec, {false, true, true, false, false});
    CHECK(masked.r.row(1).isZero(0));
    CHECK(masked.R_diag.row(2).isZero(0));
    CHECK(masked.r.row(0) == rec.r.row(0));
}

}  // TEST_SUITE
