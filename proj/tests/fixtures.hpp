#pragma once

#include "svae/expfam.hpp"
#include "svae/meanfield.hpp"
#include "test_util.hpp"

namespace testutil {

inline svae::expfam::NiwCanonical random_niw(std::mt19937_64& rng, int n) {
    svae::expfam::NiwCanonical c;
    c.S = random_spd(rng, n);
    c.m = randn(rng, n, 1);
    c.lambda = uniform(rng, 0.5, 3.0);
    c.nu = n - 1 + uniform(rng, 0.5, 5.0);
    return c;
}

inline svae::expfam::MniwCanonical random_mniw(std::mt19937_64& rng, int n, int m) {
    svae::expfam::MniwCanonical c;
    c.S = random_spd(rng, n);
    c.M = randn(rng, n, m, 0.5);
    c.V = random_spd(rng, m);
    c.nu = n - 1 + uniform(rng, 0.5, 5.0);
    return c;
}

inline Vec random_alpha(std::mt19937_64& rng, int K) {
    Vec a(K);
    for (int k = 0; k < K; ++k) a(k) = uniform(rng, 0.2, 5.0);
    return a;
}

// Central differences of log_partition along every natural coordinate.
inline Vec fd_grad_logz(const svae::expfam::NaturalParams& eta, double h = 1e-5) {
    Vec g(eta.data.size());
    for (int i = 0; i < eta.data.size(); ++i) {
        auto p = eta, q = eta;
        p.data(i) += h;
        q.data(i) -= h;
        g(i) = (svae::expfam::log_partition(p) - svae::expfam::log_partition(q)) / (2 * h);
    }
    return g;
}

struct RandomGlobal {
    svae::mf::GlobalLayout layout;
    std::vector<svae::expfam::NaturalParams> eta;
    std::vector<Mat> mu;
    svae::mf::GlobalExpectedStats<Mat> g;
};

// Random q(theta) for an SLDS (K > 1) or LDS (K = 1). Dynamics means are kept
// contractive so long chains stay well scaled.
inline RandomGlobal random_global(std::mt19937_64& rng, int D, int K, double conc = 1.0) {
    namespace ef = svae::expfam;
    RandomGlobal r;
    r.layout = {D, K};
    auto niw = random_niw(rng, D);
    niw.nu += conc * D;
    r.eta.push_back(ef::niw_natural(niw));
    for (int k = 0; k < K; ++k) {
        ef::MniwCanonical c;
        c.nu = D + 2 + conc * uniform(rng, 2.0, 6.0);
        c.S = random_spd(rng, D, 0.5) * 0.3 * c.nu;
        c.M = randn(rng, D, D + 1, 0.4 / std::sqrt(double(D)));
        c.M.col(D) = randn(rng, D, 1, 0.5);
        c.V = random_spd(rng, D + 1, 1.0) * (1.0 + conc);
        r.eta.push_back(ef::mniw_natural(c));
    }
    if (K > 1)
        for (int k = 0; k <= K; ++k) {
            Vec a = random_alpha(rng, K);
            if (k > 0) a(k - 1) += 3.0;  // sticky rows
            r.eta.push_back({ef::FamilyDescriptor::dirichlet(K), a});
        }
    for (const auto& e : r.eta) r.mu.push_back(ef::expected_stats(e).data);
    r.g = svae::mf::global_expected_stats(r.layout, r.mu);
    return r;
}

inline svae::mf::Recognition<Mat> random_recognition(std::mt19937_64& rng, int T, int D, double scale = 1.0) {
    svae::mf::Recognition<Mat> rec;
    rec.r = randn(rng, T, D, scale);
    rec.R_diag = randn(rng, T, D).cwiseAbs() * scale;
    return rec;
}

// Exact (point mass) linear-Gaussian dynamics as expected statistics, K = 1.
inline svae::mf::GlobalExpectedStats<Mat> point_mass_lds(const Mat& A, const Mat& Q, const Vec& b, const Vec& mu0,
                                                         const Mat& S0) {
    const int D = static_cast<int>(A.rows());
    const double c = 0.5 * D * svae::kLog2Pi;
    svae::mf::GlobalExpectedStats<Mat> g;
    g.D = D;
    g.K = 1;
    const Mat P0 = S0.inverse(), Qi = Q.inverse();
    g.J0 = P0;
    g.h0 = P0 * mu0;
    g.init_logZ = Mat::Constant(1, 1, 0.5 * mu0.dot(P0 * mu0) + 0.5 * std::log(S0.determinant()) + c);
    Mat J11 = A.transpose() * Qi * A, J12 = A.transpose() * Qi, J22 = Qi;
    Vec h1 = A.transpose() * Qi * b, h2 = Qi * b;
    Vec row(2 * D + 3 * D * D);
    row << h1, svae::flatten_rm(J11), svae::flatten_rm(J12), svae::flatten_rm(J22), h2;
    g.theta = row.transpose();
    g.trans_logZ = Mat::Constant(1, 1, 0.5 * b.dot(Qi * b) + 0.5 * std::log(Q.determinant()) + c);
    g.log_pi0 = Mat::Zero(1, 1);
    g.log_pi = Mat::Zero(1, 1);
    return g;
}

}  // namespace testutil
