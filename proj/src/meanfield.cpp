#include "svae/meanfield.hpp"

#include <cmath>

#include "svae/objective.hpp"
#include "svae/parallel_bp.hpp"

namespace svae::mf {

using ad::Var;

std::vector<expfam::FamilyDescriptor> GlobalLayout::families() const {
    using expfam::FamilyDescriptor;
    std::vector<FamilyDescriptor> f{FamilyDescriptor::niw(D)};
    for (int k = 0; k < K; ++k) f.push_back(FamilyDescriptor::mniw(D, D + 1));
    if (K > 1)
        for (int k = 0; k <= K; ++k) f.push_back(FamilyDescriptor::dirichlet(K));
    return f;
}

template <class M>
GlobalExpectedStats<M> global_expected_stats(const GlobalLayout& layout, const std::vector<M>& mu) {
    const int D = layout.D, K = layout.K;
    const auto fams = layout.families();
    if (mu.size() != fams.size()) throw DimMismatch("global_expected_stats: wrong number of factors");
    for (size_t i = 0; i < fams.size(); ++i)
        if (value(mu[i]).rows() != fams[i].size() || value(mu[i]).cols() != 1)
            throw DimMismatch("global_expected_stats: factor " + std::to_string(i) + " has the wrong size");
    const double c = 0.5 * D * kLog2Pi;

    GlobalExpectedStats<M> g;
    g.D = D;
    g.K = K;
    auto init = expfam::niw_unpack(mu[0], D);
    g.J0 = init.A * -2.0;
    g.h0 = init.b;
    g.init_logZ = add_scalar(-init.c - init.d, c);

    std::vector<M> rows, logz;
    for (int k = 0; k < K; ++k) {
        auto b = expfam::mniw_unpack(mu[1 + k], D, D + 1);
        // X = [A|b]: split E[Sigma^-1 X] and E[-1/2 X' Sigma^-1 X] into A and b parts
        M J22 = b.A * -2.0;
        M J12 = tr(slice(b.B, 0, 0, D, D));
        M h2 = slice(b.B, 0, D, D, 1);
        M J11 = slice(b.C, 0, 0, D, D) * -2.0;
        // both off-diagonal blocks, so the gradient in C stays symmetric
        M h1 = -(slice(b.C, 0, D, D, 1) + tr(slice(b.C, D, 0, 1, D)));
        rows.push_back(hcat(std::vector<M>{tr(h1), reshape(J11, 1, D * D), reshape(J12, 1, D * D),
                                           reshape(J22, 1, D * D), tr(h2)}));
        logz.push_back(add_scalar(-slice(b.C, D, D, 1, 1) - b.d, c));
    }
    g.theta = vcat(rows);
    g.trans_logZ = vcat(logz);
    if (K > 1) {
        g.log_pi0 = mu[1 + K];
        std::vector<M> pr;
        for (int k = 0; k < K; ++k) pr.push_back(tr(mu[2 + K + k]));
        g.log_pi = vcat(pr);
    } else {
        g.log_pi0 = lift(mu[0], Mat::Zero(1, 1));
        g.log_pi = lift(mu[0], Mat::Zero(1, 1));
    }
    return g;
}

Recognition<Mat> apply_mask(Recognition<Mat> rec, const std::vector<bool>& mask) {
    if (mask.empty()) return rec;
    if (static_cast<int>(mask.size()) != rec.r.rows()) throw DimMismatch("apply_mask: mask length differs from T");
    for (size_t t = 0; t < mask.size(); ++t)
        if (mask[t]) {
            rec.r.row(t).setZero();
            rec.R_diag.row(t).setZero();
        }
    return rec;
}

template <class M>
chain::Transition<M> unpack_transition(const M& row, int D) {
    const int D2 = D * D;
    chain::Transition<M> q;
    q.h1 = tr(slice(row, 0, 0, 1, D));
    q.J11 = reshape(slice(row, 0, D, 1, D2), D, D);
    q.J12 = reshape(slice(row, 0, D + D2, 1, D2), D, D);
    q.J22 = reshape(slice(row, 0, D + 2 * D2, 1, D2), D, D);
    q.h2 = tr(slice(row, 0, D + 3 * D2, 1, D));
    return q;
}

template <class M>
M stat_rows(const chain::SmoothResult<M>& mu, int D) {
    const int Tk = static_cast<int>(mu.Ezz_next.size());
    const int D2 = D * D;
    std::vector<M> rows;
    rows.reserve(Tk);
    for (int t = 0; t < Tk; ++t)
        rows.push_back(hcat(std::vector<M>{tr(mu.Ez[t]) * -1.0, reshape(mu.Ezz[t], 1, D2) * -0.5,
                                           reshape(mu.Ezz_next[t], 1, D2), reshape(mu.Ezz[t + 1], 1, D2) * -0.5,
                                           tr(mu.Ez[t + 1])}));
    return vcat(rows);
}

template <class M>
chain::ChainPotentials<M> chain_from_rows(const GlobalExpectedStats<M>& g, const M& W, const Recognition<M>& rec) {
    const int T = static_cast<int>(value(rec.r).rows()), D = g.D;
    if (value(rec.r).cols() != D || value(rec.R_diag).rows() != T || value(rec.R_diag).cols() != D)
        throw DimMismatch("recognition potentials must be T x D");
    if (value(W).rows() != T - 1 || value(W).cols() != 2 * D + 3 * D * D)
        throw DimMismatch("transition rows must be (T-1) x P");
    chain::ChainPotentials<M> p;
    p.T = T;
    p.D = D;
    p.h0 = g.h0;
    p.J0 = g.J0;
    for (int t = 0; t + 1 < T; ++t) p.trans.push_back(unpack_transition(M(slice(W, t, 0, 1, value(W).cols())), D));
    for (int t = 0; t < T; ++t) {
        p.r.push_back(tr(slice(rec.r, t, 0, 1, D)));
        p.R.push_back(diag(tr(slice(rec.R_diag, t, 0, 1, D))));
    }
    return p;
}

template <class M>
chain::ChainPotentials<M> mf_to_continuous(const GlobalExpectedStats<M>& g, const M& q, const Recognition<M>& rec) {
    if (value(q).cols() != g.K) throw DimMismatch("mf_to_continuous: q must have K columns");
    return chain_from_rows(g, M(matmul(q, g.theta)), rec);
}

template <class M>
hmm::HmmPotentials<M> mf_to_discrete(const GlobalExpectedStats<M>& g, const chain::SmoothResult<M>& mu) {
    if (mu.Ez.empty() || value(mu.Ez[0]).rows() != g.D) throw DimMismatch("mf_to_discrete: chain statistics have wrong D");
    const int Tk = static_cast<int>(mu.Ezz_next.size());
    hmm::HmmPotentials<M> p;
    p.K = g.K;
    p.Tk = Tk;
    p.log_pi0 = g.log_pi0;
    p.log_pi = g.log_pi;
    M S = stat_rows(mu, g.D);
    p.obs = matmul(S, tr(g.theta)) - bcast_rows(tr(g.trans_logZ), Tk);
    return p;
}

namespace {

template <class M>
void run_chain(LocalState<M>& s, const BpOptions&) {
    s.filt = chain::kalman_filter(s.omega_z);
    s.mu_z = chain::kalman_smooth(s.omega_z, s.filt);
}

template <>
void run_chain<Mat>(LocalState<Mat>& s, const BpOptions& bp) {
    if (bp.parallel) {
        s.filt = parallel::parallel_filter(s.omega_z, bp.pool);
        s.mu_z = parallel::parallel_smooth(s.omega_z, s.filt, bp.pool);
    } else {
        s.filt = chain::kalman_filter(s.omega_z);
        s.mu_z = chain::kalman_smooth(s.omega_z, s.filt);
    }
}

template <class M>
void check_T(const Recognition<M>& rec) {
    if (value(rec.r).rows() < 2) throw ShapeMismatch("mean field needs T >= 2");
}

}  // namespace

template <class M>
LocalState<M> solve_local(const GlobalExpectedStats<M>& g, const Recognition<M>& rec, const M& W, const M& obs,
                          const BpOptions& bp) {
    check_T(rec);
    LocalState<M> s;
    s.W = W;
    s.omega_z = chain_from_rows(g, W, rec);
    run_chain(s, bp);
    s.omega_k.K = g.K;
    s.omega_k.Tk = static_cast<int>(value(W).rows());
    s.omega_k.log_pi0 = g.log_pi0;
    s.omega_k.log_pi = g.log_pi;
    s.omega_k.obs = obs;
    s.q = hmm::forward_backward(s.omega_k);
    return s;
}

template <class M>
LocalState<M> sweep(const GlobalExpectedStats<M>& g, const Recognition<M>& rec, const M& q, const BpOptions& bp) {
    check_T(rec);
    LocalState<M> s;
    s.W = matmul(q, g.theta);
    s.omega_z = chain_from_rows(g, s.W, rec);
    run_chain(s, bp);
    s.omega_k = mf_to_discrete(g, s.mu_z);
    s.q = hmm::forward_backward(s.omega_k);
    return s;
}

template <class M>
M uniform_marginals(const GlobalExpectedStats<M>& g, int T) {
    return lift(g.theta, Mat::Constant(T - 1, g.K, 1.0 / g.K));
}

template <class M>
M flatten_omega(const M& W, const M& obs) {
    const int Tk = static_cast<int>(value(W).rows());
    return vcat(std::vector<M>{reshape(W, Tk * static_cast<int>(value(W).cols()), 1),
                               reshape(obs, Tk * static_cast<int>(value(obs).cols()), 1)});
}

template <class M>
void unflatten_omega(const M& omega, int T, int D, int K, M& W, M& obs) {
    const int Tk = T - 1, P = 2 * D + 3 * D * D;
    if (value(omega).rows() != Tk * (P + K) || value(omega).cols() != 1)
        throw DimMismatch("unflatten_omega: length must be (T-1)(P+K)");
    W = reshape(slice(omega, 0, 0, Tk * P, 1), Tk, P);
    obs = reshape(slice(omega, Tk * P, 0, Tk * K, 1), Tk, K);
}

template <class M>
M g_residual(const M& omega, const GlobalExpectedStats<M>& g, const Recognition<M>& rec) {
    const int T = static_cast<int>(value(rec.r).rows());
    M W, obs;
    unflatten_omega(omega, T, g.D, g.K, W, obs);
    auto s = solve_local(g, rec, W, obs);
    M phi_k = mf_to_discrete(g, s.mu_z).obs;
    M phi_z = matmul(s.q.marginal, g.theta);
    return omega - flatten_omega(phi_z, phi_k);
}

MeanFieldState block_update(const GlobalExpectedStats<Mat>& g, const Recognition<Mat>& rec, const MfOptions& opt,
                            const Mat& q_init) {
    if (opt.max_iters < 1) throw DomainError("block_update: max_iters must be >= 1");
    if (!(opt.tol >= 0) || !(opt.residual_tol >= 0)) throw DomainError("block_update: tolerances must be non-negative");
    const int T = static_cast<int>(rec.r.rows());
    check_T(rec);
    Mat q = q_init.size() ? q_init : uniform_marginals(g, T);
    if (q.rows() != T - 1 || q.cols() != g.K) throw DimMismatch("block_update: initial marginals must be (T-1) x K");

    MeanFieldState st;
    for (int it = 0; it < opt.max_iters; ++it) {
        st.local = sweep(g, rec, q, opt.bp);
        q = st.local.q.marginal;
        st.iters = it + 1;
        st.trace.push_back(scalar(obj::local_surrogate(g, rec, st.local)) - opt.prior_kl);
        // the k block was just fitted to the z block, so only the z rows can be off
        st.residual = (st.local.W - q * g.theta).cwiseAbs().maxCoeff();
        const size_t n = st.trace.size();
        if (st.residual < opt.residual_tol || (n >= 2 && std::abs(st.trace[n - 1] - st.trace[n - 2]) < opt.tol)) {
            st.converged = true;
            break;
        }
    }
    return st;
}

#define SVAE_MF_INSTANTIATE(M)                                                                                       \
    template GlobalExpectedStats<M> global_expected_stats(const GlobalLayout&, const std::vector<M>&);               \
    template chain::Transition<M> unpack_transition(const M&, int);                                                 \
    template M stat_rows(const chain::SmoothResult<M>&, int);                                                       \
    template chain::ChainPotentials<M> chain_from_rows(const GlobalExpectedStats<M>&, const M&,                      \
                                                       const Recognition<M>&);                                      \
    template chain::ChainPotentials<M> mf_to_continuous(const GlobalExpectedStats<M>&, const M&,                     \
                                                        const Recognition<M>&);                                     \
    template hmm::HmmPotentials<M> mf_to_discrete(const GlobalExpectedStats<M>&, const chain::SmoothResult<M>&);     \
    template LocalState<M> solve_local(const GlobalExpectedStats<M>&, const Recognition<M>&, const M&, const M&,     \
                                       const BpOptions&);                                                           \
    template LocalState<M> sweep(const GlobalExpectedStats<M>&, const Recognition<M>&, const M&, const BpOptions&);  \
    template M uniform_marginals(const GlobalExpectedStats<M>&, int);                                               \
    template M flatten_omega(const M&, const M&);                                                                   \
    template void unflatten_omega(const M&, int, int, int, M&, M&);                                                 \
    template M g_residual(const M&, const GlobalExpectedStats<M>&, const Recognition<M>&);

SVAE_MF_INSTANTIATE(Mat)
SVAE_MF_INSTANTIATE(Var)

}  // namespace svae::mf
