#include <doctest.h>

#include <filesystem>
#include <map>
#include <numeric>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "svae/data_io.hpp"
#include "svae/rng.hpp"
#include "svae/svae_model.hpp"
#include "test_util.hpp"

using namespace svae;
using namespace svae::model;
using namespace testutil;

namespace {

ModelConfig tiny(int Dx = 3, int D = 2, int K = 2) {
    ModelConfig c;
    c.Dx = Dx;
    c.D = D;
    c.K = K;
    c.hidden = 4;
    c.depth = 1;
    c.seed = 11;
    return c;
}

mf::MfOptions tight() {
    mf::MfOptions o;
    o.max_iters = 5000;
    o.tol = 0;
    o.residual_tol = 1e-13;
    return o;
}

// Linear encoder r = c x, R = softplus(b); decoder z -> [z, 0...].
Svae linear_model(int D, int K, double gain) {
    auto c = tiny(D, D, K);
    c.depth = 0;
    c.identity_bijectors = false;
    auto m = Svae::make(c);
    m.enc.params[0] = Mat::Zero(D, 2 * D);
    m.enc.params[0].leftCols(D) = gain * Mat::Identity(D, D);
    m.enc.params[1] = Mat::Zero(1, 2 * D);
    m.enc.params[1].rightCols(D).setConstant(std::log(std::exp(gain) - 1.0));  // R = gain
    m.dec.params[0] = Mat::Identity(D, D);
    m.dec.params[1] = Mat::Zero(1, D);
    return m;
}

std::vector<Mat> smooth_data(int N, int T, int D, std::uint64_t seed) {
    CounterRng rng(seed, 0);
    std::vector<Mat> data;
    for (int n = 0; n < N; ++n) {
        Mat x(T, D);
        const double ph = rng.uniform() * 6.28;
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < D; ++d) x(t, d) = std::sin(0.15 * t + ph + d) + 0.05 * rng.normal();
        data.push_back(x);
    }
    return data;
}

double fd_scalar(const std::function<double()>& f, double& x, double h) {
    const double x0 = x;
    x = x0 + h;
    const double fp = f();
    x = x0 - h;
    const double fm = f();
    x = x0;
    return (fp - fm) / (2 * h);
}

}  // namespace

TEST_SUITE("svae_model") {

TEST_CASE("dense network basics") {
    auto net = DenseNet::make({3, 5, 2}, Activation::Gelu, true, 1, 1);
    CHECK_NOTHROW(net.validate());
    std::mt19937_64 rng(101);
    Mat x = randn(rng, 7, 3);
    CHECK(net.forward(x).rows() == 7);
    CHECK(net.forward(x).cols() == 2);
    CHECK_THROWS_AS(net.forward(randn(rng, 7, 4)), ShapeMismatch);

    // zero weights: output is the bias everywhere
    for (auto& p : net.params) p.setZero();
    net.params[3] = Mat::Constant(1, 2, 0.7);
    Mat y = net.forward(x);
    CHECK(max_abs(y.array() - 0.7) == 0.0);

    net.params[0](0, 0) = 1;
    net.params[0].resize(2, 5);
    CHECK_THROWS_AS(net.validate(), ShapeMismatch);
}

TEST_CASE("encoder is a per-step map") {
    auto m = Svae::make(tiny(4, 2, 1));
    std::mt19937_64 rng(102);
    Mat x = randn(rng, 6, 4);
    auto rec = m.encode(x);
    CHECK(rec.r.rows() == 6);
    CHECK(rec.r.cols() == 2);
    CHECK(rec.R_diag.minCoeff() > 0);
    Eigen::PermutationMatrix<Eigen::Dynamic> P(6);
    P.indices() << 3, 0, 5, 1, 4, 2;
    auto rp = m.encode(P * x);
    CHECK(max_abs(rp.r - P * rec.r) < 1e-14);
    CHECK(max_abs(rp.R_diag - P * rec.R_diag) < 1e-14);
    CHECK_THROWS_AS(m.encode(randn(rng, 6, 3)), ShapeMismatch);
}

TEST_CASE("decoder heads") {
    auto c = tiny(4, 2, 1);
    c.depth = 0;
    auto m = Svae::make(c);
    m.dec.params[0] = Mat::Zero(2, 4);
    m.dec.params[0].leftCols(2) = Mat::Identity(2, 2);
    m.dec.params[1].setZero();
    std::mt19937_64 rng(103);
    Mat z = randn(rng, 5, 2);
    Mat mean = m.decode(z);
    CHECK(mean.leftCols(2) == z);
    CHECK(mean.rightCols(2).isZero());
    // unit variances at the mean
    const double ll = scalar(m.loglik<Mat>(mean, mean, Mat::Zero(1, 4), Mat()));
    CHECK(std::abs(ll + 0.5 * 5 * 4 * kLog2Pi) < 1e-12);

    c.likelihood = Likelihood::Gamma;
    auto g = Svae::make(c);
    Mat rate = g.decode(z);
    CHECK(rate.minCoeff() > 0);
    const Mat x = rate;  // x = rate * 1
    double want = 0;
    for (int i = 0; i < x.size(); ++i) {
        const double b = rate(i), v = x(i);
        want += std::log(b * b * v * std::exp(-b * v));  // Gamma(2, b) = b^2 x e^{-bx}
    }
    CHECK(std::abs(scalar(g.loglik<Mat>(x, rate, Mat(), Mat())) - want) < 1e-12);
}

TEST_CASE("masking") {
    auto m = Svae::make(tiny(3, 2, 2));
    std::mt19937_64 rng(104);
    Mat x = randn(rng, 8, 3);
    std::vector<bool> mask(8, false);
    mask[3] = mask[4] = mask[5] = true;
    auto a = infer(m, x, mask, tight());
    auto rec = m.encode(x);
    for (int t = 3; t < 6; ++t) {
        rec.r.row(t).setZero();
        rec.R_diag.row(t).setZero();
    }
    auto b = mf::block_update(m.global_stats(), rec, tight());
    CHECK(a.omega() == b.omega());
    CHECK(a.iters == b.iters);
    CHECK_THROWS_AS(infer(m, x, std::vector<bool>(7, false), tight()), ShapeMismatch);

    // fully masked: the prior-expected chain
    auto full = infer(m, x, std::vector<bool>(8, true), tight());
    mf::Recognition<Mat> zero{Mat::Zero(8, 2), Mat::Zero(8, 2)};
    auto prior = mf::block_update(m.global_stats(), zero, tight());
    CHECK(full.omega() == prior.omega());
    CHECK(mask_range(10, 0.2, 0.8) ==
          std::vector<bool>{false, false, true, true, true, true, true, true, false, false});
    CHECK(mask_range(7, 0.2, 0.8) == std::vector<bool>{false, true, true, true, true, true, false});
    CHECK_THROWS_AS(mask_range(10, 0.5, 0.2), ConfigError);
}

TEST_CASE("LDS inference is one deterministic pass") {
    auto m = Svae::make(tiny(3, 2, 1));
    std::mt19937_64 rng(105);
    Mat x = randn(rng, 9, 3);
    auto a = infer(m, x, {}, tight()), b = infer(m, x, {}, tight());
    CHECK(a.omega() == b.omega());
    CHECK(a.iters == 1);
    // omega is E[t(theta)] on every transition
    const auto g = m.global_stats();
    for (int t = 0; t < 8; ++t) CHECK(max_abs(a.local.W.row(t) - g.theta.row(0)) == 0.0);
}

TEST_CASE("loss is reproducible and its surrogate is the objective identity") {
    auto m = Svae::make(tiny());
    std::mt19937_64 rng(106);
    Mat x = randn(rng, 6, 3);
    auto a = loss(m, x, {}, 3, 9, tight()), b = loss(m, x, {}, 3, 9, tight());
    CHECK(std::memcmp(&a, &b, sizeof(a)) == 0);
    auto st = infer(m, x, {}, tight());
    const double ri = scalar(obj::recog_inner<Mat>(m.encode(x), st.local.mu_z));
    CHECK(a.surrogate == obj::surrogate_loss(ri, a.prior_kl, a.local_kl_continuous, a.local_kl_discrete));
    CHECK(a.elbo == doctest::Approx(a.reconstruction - a.prior_kl - a.local_kl_continuous - a.local_kl_discrete));
    CHECK(loss(m, x, {}, 3, 10, tight()).reconstruction != a.reconstruction);
}

TEST_CASE("conjugate model: the ELBO reaches the linear-Gaussian evidence") {
    // x_t = z_t + N(0, s2 I), q(theta) concentrated on (A, Q, b, mu0, S0), prior = posterior
    const int T = 3, D = 2;
    const double s2 = 0.3, big = 1e7;
    auto c = tiny(D, D, 1);
    c.depth = 0;
    c.identity_bijectors = true;
    auto m = Svae::make(c);
    Mat A(2, 2), Q(2, 2), S0(2, 2);
    A << 0.8, 0.3, -0.2, 0.9;
    Q << 0.5, 0.1, 0.1, 0.4;
    S0 << 1.0, 0.2, 0.2, 0.7;
    Vec b(2), mu0(2);
    b << 0.1, -0.3;
    mu0 << 0.5, 0.2;
    Mat Mab(2, 3);
    Mab << A, b;
    const auto niw = expfam::niw_natural({big * S0, mu0, big, big});
    const auto mniw = expfam::mniw_natural({big * Q, Mab, big * Mat::Identity(3, 3), big});  // V is a precision
    m.eta_tilde = m.eta0 = {niw.data, mniw.data};

    auto set_encoder = [&](double gain) {
        m.enc.params[0] = Mat::Zero(D, 2 * D);
        m.enc.params[0].leftCols(D) = Mat::Identity(D, D) / s2;
        m.enc.params[1] = Mat::Zero(1, 2 * D);
        m.enc.params[1].rightCols(D).setConstant(std::log(std::expm1(gain / s2)));
    };
    set_encoder(1.0);
    m.dec.params[0] = Mat::Identity(D, D);
    m.dec.params[1] = Mat::Zero(1, D);
    m.log_var = Mat::Constant(1, D, std::log(s2));

    auto g = point_mass_lds(A, Q, b, mu0, S0);
    mf::Recognition<Mat> none{Mat::Zero(T, D), Mat::Zero(T, D)};
    const auto prior = oracle::dense_chain(mf::mf_to_continuous<Mat>(g, Mat::Ones(T - 1, 1), none));
    std::mt19937_64 rng(109);
    const Mat x = randn(rng, T, D);
    Vec xf(T * D);
    for (int t = 0; t < T; ++t) xf.segment(t * D, D) = x.row(t).transpose();
    const double evidence =
        oracle::mvn_logpdf(xf, prior.mean, prior.cov + s2 * Mat::Identity(T * D, T * D));

    auto mc = [&](double& mean, double& se) {
        std::vector<double> v;
        for (int s = 0; s < 200; ++s) v.push_back(loss(m, x, {}, 10, s, tight()).elbo);
        mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double var = 0;
        for (double e : v) var += (e - mean) * (e - mean);
        se = std::sqrt(var / (v.size() - 1) / v.size());
    };
    double mean, se;
    mc(mean, se);
    CHECK(loss(m, x, {}, 1, 0, tight()).prior_kl < 1e-6);
    CHECK(std::abs(mean - evidence) < 4 * se + 1e-5);
    set_encoder(0.3);  // mismatched precision: strictly below
    mc(mean, se);
    CHECK(mean < evidence - 4 * se);
}

TEST_CASE("stage 3 does not lose ELBO over stage 2 on small synthetic runs") {
    data::SynthConfig sc;
    sc.grid_size = 16;
    sc.T = 40;
    sc.n_sequences = 6;
    sc.delta = 0.01;
    sc.gamma = 0.002;
    const auto ds = data::gen_laplace_sequences(sc);
    mf::MfOptions eval_mf;
    eval_mf.max_iters = 100;
    eval_mf.tol = 0;
    eval_mf.residual_tol = 1e-8;
    std::vector<double> gains;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ModelConfig c;
        c.Dx = sc.grid_size;
        c.D = 2;
        c.K = 3;
        c.hidden = 16;
        c.seed = seed;
        auto m = Svae::make(c);
        TrainConfig tc;
        tc.steps = 60;
        tc.batch = 3;
        tc.seed = seed;
        std::map<int, double> at;
        tc.on_stage_end = [&](int stage, const Svae& s) {
            double e = 0;
            for (const auto& x : ds.x) e += loss(s, x, {}, 4, 77, eval_mf).elbo;
            at[stage] = e / ds.N();
        };
        train(m, ds.x, tc);
        gains.push_back(at[3] - at[2]);
    }
    std::sort(gains.begin(), gains.end());
    MESSAGE("stage 3 - stage 2 ELBO, sorted: " << gains[0] << " " << gains[2] << " " << gains[4]);
    CHECK(gains[2] >= 0);
}

TEST_CASE("ELBO gradients match finite differences for every trainable scalar") {
    auto m = Svae::make(tiny(3, 2, 2));
    const int T = 5;
    CounterRng rng(107, 0);
    Mat x = rng.normal(T, 3);
    std::vector<Mat> eps{rng.normal(T, 2)};
    EvalOptions eo;
    eo.mode = grad::GradMode::capped();
    eo.mf = tight();
    eo.global = grad::GlobalGrad::Plain;
    auto r = evaluate(m, x, {}, eps, eo);
    REQUIRE(r.est.residual < 1e-10);
    EvalOptions plain = eo;
    plain.need_grads = false;
    auto f = [&] { return evaluate(m, x, {}, eps, plain).value; };
    CHECK(std::abs(f() - r.value) < 1e-9);

    const double h = 1e-4;
    int checked = 0, bad = 0;
    auto ps = m.net_params();
    for (size_t i = 0; i < ps.size(); ++i)
        for (int j = 0; j < ps[i]->size(); ++j) {
            const double fd = fd_scalar(f, ps[i]->data()[j], h), g = r.net_grads[i].data()[j];
            ++checked;
            if (std::abs(fd - g) > 1e-4 * std::max({std::abs(fd), std::abs(g), 1e-2})) {
                ++bad;
                MESSAGE("net " << i << "," << j << ": " << g << " vs " << fd);
            }
        }
    for (size_t i = 0; i < m.eta_tilde.size(); ++i)
        for (int j = 0; j < m.eta_tilde[i].size(); ++j) {
            const double fd = fd_scalar(f, m.eta_tilde[i](j), h), g = r.eta_grads[i](j);
            ++checked;
            if (std::abs(fd - g) > 1e-4 * std::max({std::abs(fd), std::abs(g), 1e-2})) {
                ++bad;
                MESSAGE("eta " << i << "," << j << ": " << g << " vs " << fd);
            }
        }
    CHECK(checked > 100);
    CHECK(bad == 0);
}

TEST_CASE("stage-1 VAE gradients match finite differences") {
    auto m = Svae::make(tiny(3, 2, 1));
    CounterRng rng(108, 0);
    Mat x = rng.normal(4, 3);
    std::vector<Mat> eps{rng.normal(4, 2), rng.normal(4, 2)};
    auto r = evaluate_vae(m, x, eps);
    CHECK(r.elbo == doctest::Approx(r.reconstruction - r.kl));
    auto f = [&] { return evaluate_vae(m, x, eps).elbo; };
    auto ps = m.net_params();
    for (size_t i = 0; i < ps.size(); ++i)
        for (int j = 0; j < ps[i]->size(); j += 3) {
            const double fd = fd_scalar(f, ps[i]->data()[j], 1e-5);
            CHECK(std::abs(fd - r.net_grads[i].data()[j]) < 1e-6 * std::max(1.0, std::abs(fd)));
        }
}

TEST_CASE("Adam first step moves each coordinate by the learning rate") {
    Mat p = Mat::Constant(2, 2, 1.0), g(2, 2);
    g << 0.5, -2.0, 1e3, -1e-3;
    Adam a;
    a.step({&p}, {g}, 0.1);
    Mat want(2, 2);
    want << 0.9, 1.1, 0.9, 1.1;
    CHECK(max_abs(p - want) < 1e-5);
    CHECK(a.t == 1);
}

TEST_CASE("zero learning rates leave parameters unchanged") {
    auto m = Svae::make(tiny());
    const auto before = encode_checkpoint(m);
    auto data = smooth_data(3, 6, 3, 1);
    TrainConfig tc;
    tc.adam_lr = tc.nat_lr = tc.nat_lr_joint = 0;
    tc.batch = 2;
    Adam adam;
    for (int stage : {1, 2, 3}) train_step(m, adam, data, {0, 2}, stage, tc, 5);
    CHECK(encode_checkpoint(m) == before);
    CHECK_THROWS_AS(train_step(m, adam, data, {}, 1, tc, 5), DomainError);
}

TEST_CASE("stage 2 keeps the networks fixed and lands on the conjugate update") {
    for (int K : {1, 3}) {
        auto c = tiny(2, 2, K);
        c.identity_bijectors = true;
        auto m = Svae::make(c);
        auto data = smooth_data(1, 7, 2, 2);
        TrainConfig tc;
        tc.nat_lr = 1.0;
        tc.mode = grad::GradMode::capped();
        tc.mf = tight();
        auto st = infer(m, data[0], {}, tight());
        auto Et = oracle::expected_local_stats(st.local, 2, K);
        std::vector<Mat> nets;
        for (const auto* p : m.net_params()) nets.push_back(*p);
        Adam adam;
        train_step(m, adam, data, {0}, 2, tc, 3);
        auto ps = m.net_params();
        for (size_t i = 0; i < ps.size(); ++i) CHECK(*ps[i] == nets[i]);
        for (size_t i = 0; i < m.eta_tilde.size(); ++i) {
            const Vec want = m.eta0[i] + Et[i];
            CHECK(max_abs(m.eta_tilde[i] - want) < 1e-8 * std::max(1.0, max_abs(want)));
        }
    }
}

TEST_CASE("natural steps do not depend on the parameterization") {
    auto c = tiny(2, 2, 3);
    auto a = Svae::make(c);
    c.identity_bijectors = true;
    auto b = Svae::make(c);
    auto data = smooth_data(4, 12, 2, 6);
    TrainConfig tc;
    tc.nat_lr = 0.5;
    tc.nat_lr_joint = 0.1;
    tc.batch = 2;
    Adam adam_a, adam_b;
    for (int s = 0; s < 6; ++s) {
        const int stage = s < 2 ? 2 : 3;
        train_step(a, adam_a, data, {s % 4, (s + 1) % 4}, stage, tc, s);
        train_step(b, adam_b, data, {s % 4, (s + 1) % 4}, stage, tc, s);
    }
    const auto ea = a.eta(), eb = b.eta();
    for (size_t i = 0; i < ea.size(); ++i)
        CHECK(max_abs(ea[i].data - eb[i].data) < 1e-6 * std::max(1.0, max_abs(eb[i].data)));
}

TEST_CASE("stage-2 objective is non-decreasing under natural steps") {
    for (int K : {1, 2}) {
        auto c = tiny(2, 2, K);
        c.identity_bijectors = true;
        auto m = Svae::make(c);
        auto data = smooth_data(3, 10, 2, 3);
        TrainConfig tc;
        tc.nat_lr = 0.7;
        tc.mode = grad::GradMode::capped();
        tc.mf = tight();
        auto objective = [&] {
            EvalOptions eo;
            eo.mf = tight();
            eo.need_grads = false;
            eo.objective = Objective::Surrogate;
            double s = 0;
            for (size_t n = 0; n < data.size(); ++n) {
                auto r = evaluate(m, data[n], {}, {Mat::Zero(10, 2)}, eo);
                s += r.loss.surrogate + r.loss.prior_kl;
                if (n == 0) s -= r.loss.prior_kl;
            }
            return s;
        };
        Adam adam;
        double prev = objective();
        for (int it = 0; it < 8; ++it) {
            train_step(m, adam, data, {0, 1, 2}, 2, tc, it);
            const double cur = objective();
            CHECK(cur >= prev - 1e-9 * std::abs(prev));
            prev = cur;
        }
    }
}

TEST_CASE("three-stage training logs its stages") {
    auto m = Svae::make(tiny(2, 2, 2));
    auto data = smooth_data(4, 8, 2, 4);
    TrainConfig tc;
    tc.steps = 10;
    tc.batch = 2;
    std::vector<int> ends;
    std::vector<int> stages;
    tc.on_stage_end = [&](int s, const Svae&) { ends.push_back(s); };
    tc.on_step = [&](const StepMetrics& s) { stages.push_back(s.stage); };
    auto log = train(m, data, tc);
    CHECK(ends == std::vector<int>{1, 2, 3});
    CHECK(stages == std::vector<int>{1, 2, 2, 3, 3, 3, 3, 3, 3, 3});
    CHECK(log.size() == 10);
    for (const auto& s : log) CHECK(std::isfinite(s.elbo));

    auto m2 = Svae::make(tiny(2, 2, 2));
    tc.on_stage_end = nullptr;
    tc.on_step = nullptr;
    auto log2 = train(m2, data, tc);
    CHECK(encode_checkpoint(m2) == encode_checkpoint(m));
    for (size_t i = 0; i < log.size(); ++i) CHECK(log2[i].elbo == log[i].elbo);
}

TEST_CASE("imputation") {
    const int T = 30, D = 2;
    auto m = linear_model(D, 1, 4.0);
    auto x = smooth_data(1, T, D, 5)[0];

    auto none = impute(m, x, {}, 0, 1, tight());
    auto inf = infer(m, x, {}, tight());
    for (int t = 0; t < T; ++t) CHECK(max_abs(none.z_mean.row(t).transpose() - inf.local.mu_z.Ez[t]) == 0.0);
    CHECK(none.masked.empty());

    auto mask = mask_range(T, 1.0 / 3, 2.0 / 3);
    auto imp = impute(m, x, mask, 4, 2, tight());
    CHECK(imp.masked.front() == 10);
    CHECK(imp.masked.back() == 19);
    CHECK(imp.x_samples.size() == 4);
    double step = 0;
    int n = 0;
    for (int t = 1; t < T; ++t)
        if (!mask[t] && !mask[t - 1]) {
            step += (imp.x_mean.row(t) - imp.x_mean.row(t - 1)).norm();
            ++n;
        }
    step /= n;
    CHECK((imp.x_mean.row(10) - imp.x_mean.row(9)).norm() < 3 * step);
    CHECK((imp.x_mean.row(20) - imp.x_mean.row(19)).norm() < 3 * step);

    // all masked: samples from the prior chain, identical for any data
    auto all = impute(m, x, std::vector<bool>(T, true), 1, 3, tight());
    auto all2 = impute(m, 2 * x, std::vector<bool>(T, true), 1, 3, tight());
    CHECK(all.x_mean == all2.x_mean);
    CHECK(all.x_samples[0] == all2.x_samples[0]);

    // switching model: bridged discrete path, valid marginals
    auto ms = linear_model(D, 3, 4.0);
    auto s = impute(ms, x, mask, 2, 4, tight());
    CHECK(s.q.rows() == T - 1);
    CHECK(max_abs(s.q.rowwise().sum().array() - 1.0) < 1e-12);
    CHECK((s.x_mean.row(10) - s.x_mean.row(9)).norm() < 3 * step);
}

TEST_CASE("checkpoint round trip") {
    auto c = tiny(3, 2, 3);
    c.seed = 0x123456789abcULL;
    auto m = Svae::make(c);
    m.log_var(0, 1) = -0.25;
    const auto bytes = encode_checkpoint(m);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SVAE");
    auto back = decode_checkpoint(bytes);
    CHECK(encode_checkpoint(back) == bytes);
    CHECK(back.cfg.seed == c.seed);

    const auto path = (std::filesystem::temp_directory_path() / "svae_ckpt.bin").string();
    save(m, path);
    CHECK(encode_checkpoint(load(path)) == bytes);
    std::remove(path.c_str());

    auto cut = bytes;
    cut.resize(bytes.size() - 5);
    CHECK_THROWS_AS(decode_checkpoint(cut), LengthError);
    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), MagicMismatch);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(bad), LengthError);
}

}  // TEST_SUITE
