#include "svae/parallel_bp.hpp"

namespace svae::parallel {

using chain::ChainPotentials;
using chain::FilterResult;
using chain::SmoothResult;

std::vector<FilterElement> make_filter_elements(const ChainPotentials<Mat>& p, ThreadPool* pool) {
    p.validate();
    const int T = p.T, D = p.D;
    std::vector<FilterElement> el(T);
    const Mat Z = Mat::Zero(D, D);
    const Mat z = Mat::Zero(D, 1);
    el[0] = {Z, z, Z, p.h0 + p.r[0], p.J0 + p.R[0], Z, z};
    detail::run(pool, T - 1, [&](int k) {
        const int t = k + 1;
        const auto& q = p.trans[k];
        const Mat Phi22 = q.J22 + p.R[t];
        const Mat phi2 = q.h2 + p.r[t];
        auto llt = llt_checked(Phi22, "filter element");
        const Mat Gamma = q.J11 - q.J12 * llt.solve(q.J12.transpose());
        const Mat gamma = -q.h1 + q.J12 * llt.solve(phi2);
        el[t] = {q.J11 - Gamma, q.h1 + gamma, q.J12, phi2, Phi22, Gamma, gamma};
    });
    return el;
}

FilterElement combine_filter(const FilterElement& i, const FilterElement& j) {
    auto C = llt_checked(j.Gamma + i.Phi22, "combine_filter C");
    auto P = llt_checked(j.Gamma + i.Phi22 + j.Phi11, "combine_filter P");
    FilterElement o;
    const Mat Gij = i.Phi11 - i.Phi12 * C.solve(i.Phi12.transpose());
    const Mat gij = -i.phi1 + i.Phi12 * C.solve(j.gamma + i.phi2);
    const Mat v = i.phi2 - j.phi1 + j.gamma;
    const Mat Pv = P.solve(v);
    const Mat PB = P.solve(j.Phi12);
    o.Phi11 = sym(i.Phi11 - i.Phi12 * P.solve(i.Phi12.transpose()) - Gij);
    o.phi1 = i.phi1 - i.Phi12 * Pv + gij;
    o.Phi12 = i.Phi12 * PB;
    o.phi2 = j.phi2 + j.Phi12.transpose() * Pv;
    o.Phi22 = sym(j.Phi22 - j.Phi12.transpose() * PB);
    o.Gamma = sym(i.Gamma + Gij);
    o.gamma = i.gamma + gij;
    return o;
}

std::vector<SmootherElement> make_smoother_elements(const ChainPotentials<Mat>& p, const FilterResult<Mat>& fr,
                                                    ThreadPool* pool) {
    const int T = p.T, D = p.D;
    std::vector<SmootherElement> el(T);
    const Mat Z = Mat::Zero(D, D);
    const Mat z = Mat::Zero(D, 1);
    el[T - 1] = {fr.F[T - 1], -fr.f[T - 1], Z, z, Z};
    detail::run(pool, T - 1, [&](int t) {
        const auto& q = p.trans[t];
        el[t] = {q.J11 + fr.F[t], q.h1 - fr.f[t], q.J12, q.h2 + p.r[t + 1] - fr.f[t + 1],
                 q.J22 + p.R[t + 1] - fr.F[t + 1]};
    });
    return el;
}

SmootherElement combine_smoother(const SmootherElement& i, const SmootherElement& j) {
    auto Dm = llt_checked(i.E22 + j.E11, "combine_smoother D");
    const Mat v = i.eps2 - j.eps1;
    const Mat Dv = Dm.solve(v);
    const Mat DA = Dm.solve(i.E12.transpose());
    const Mat DB = Dm.solve(j.E12);
    SmootherElement o;
    o.E11 = sym(i.E11 - i.E12 * DA);
    o.eps1 = i.eps1 - i.E12 * Dv;
    o.E12 = i.E12 * DB;
    o.eps2 = j.eps2 + j.E12.transpose() * Dv;
    o.E22 = sym(j.E22 - j.E12.transpose() * DB);
    return o;
}

FilterResult<Mat> parallel_filter(const ChainPotentials<Mat>& p, ThreadPool* pool, ScanStats* stats) {
    auto el = make_filter_elements(p, pool);
    auto pre = inclusive_scan(el, combine_filter, pool, stats);
    const int T = p.T;
    FilterResult<Mat> out;
    out.f.resize(T);
    out.F.resize(T);
    for (int t = 0; t < T; ++t) {
        out.f[t] = pre[t].phi2;
        out.F[t] = pre[t].Phi22;
    }
    // predict quantities and logZ terms are independent per step
    out.P.resize(T - 1);
    out.fp.resize(T - 1);
    out.Fp.resize(T - 1);
    std::vector<double> terms(T);
    const double c = 0.5 * p.D * kLog2Pi;
    detail::run(pool, T, [&](int t) {
        if (t + 1 < T) {
            const auto& q = p.trans[t];
            out.P[t] = out.F[t] + q.J11;
            auto llt = llt_checked(out.P[t], "parallel_filter P");
            const Mat d = out.f[t] - q.h1;
            const Mat Pd = llt.solve(d);
            out.Fp[t] = q.J22 - q.J12.transpose() * llt.solve(q.J12);
            out.fp[t] = q.h2 + q.J12.transpose() * Pd;
            terms[t] = 0.5 * d.col(0).dot(Pd.col(0)) - 0.5 * logdet_llt(llt) + c;
        } else {
            auto llt = llt_checked(out.F[t], "parallel_filter F");
            terms[t] = 0.5 * out.f[t].col(0).dot(llt.solve(out.f[t]).col(0)) - 0.5 * logdet_llt(llt) + c;
        }
    });
    // pairwise reduction keeps the summation order independent of the worker count
    for (int w = 1; w < T; w *= 2)
        detail::run(pool, (T + 2 * w - 1) / (2 * w), [&](int k) {
            const int a = 2 * w * k, b = a + w;
            if (b < T) terms[a] += terms[b];
        });
    out.logZ = Mat::Constant(1, 1, terms[0]);
    return out;
}

SmoothResult<Mat> parallel_smooth(const ChainPotentials<Mat>& p, const FilterResult<Mat>& fr, ThreadPool* pool,
                                  ScanStats* stats) {
    const int T = p.T;
    auto el = make_smoother_elements(p, fr, pool);
    std::reverse(el.begin(), el.end());
    auto suf = inclusive_scan(
        el, [](const SmootherElement& later, const SmootherElement& earlier) { return combine_smoother(earlier, later); },
        pool, stats);
    std::reverse(suf.begin(), suf.end());
    SmoothResult<Mat> s;
    s.fs.resize(T);
    s.Fs.resize(T);
    s.Ez.resize(T);
    s.Ezz.resize(T);
    s.C.resize(T - 1);
    s.Ezz_next.resize(T - 1);
    std::vector<Mat> Sigma(T);
    detail::run(pool, T, [&](int t) {
        s.Fs[t] = suf[t].E11;
        s.fs[t] = -suf[t].eps1;
        Sigma[t] = sym(inv_spd(s.Fs[t]));
        s.Ez[t] = Sigma[t] * s.fs[t];
        s.Ezz[t] = Sigma[t] + s.Ez[t] * s.Ez[t].transpose();
    });
    detail::run(pool, T - 1, [&](int t) {
        const auto& q = p.trans[t];
        s.C[t] = s.Fs[t + 1] - fr.Fp[t] + q.J22;
        const Mat X = solve_spd(s.C[t], q.J12.transpose());
        s.Ezz_next[t] = Sigma[t] * X.transpose() + s.Ez[t] * s.Ez[t + 1].transpose();
    });
    return s;
}

}  // namespace svae::parallel
