#include "svae/chain_bp.hpp"

#include "svae/rng.hpp"

namespace svae::chain {

namespace {

template <class M>
void expect_shape(const M& x, int r, int c, const char* what) {
    const Mat& v = value(x);
    if (v.rows() != r || v.cols() != c)
        throw ShapeMismatch(std::string("chain potentials: ") + what + " has shape " + std::to_string(v.rows()) + "x" +
                            std::to_string(v.cols()) + ", expected " + std::to_string(r) + "x" + std::to_string(c));
}

}  // namespace

template <class M>
void ChainPotentials<M>::validate() const {
    if (T < 1) throw ShapeMismatch("chain potentials: T must be at least 1");
    if (D < 1) throw ShapeMismatch("chain potentials: D must be at least 1");
    if (static_cast<int>(trans.size()) != T - 1) throw ShapeMismatch("chain potentials: need T-1 transitions");
    if (static_cast<int>(r.size()) != T || static_cast<int>(R.size()) != T)
        throw ShapeMismatch("chain potentials: need T recognition potentials");
    expect_shape(h0, D, 1, "h0");
    expect_shape(J0, D, D, "J0");
    for (const auto& q : trans) {
        expect_shape(q.h1, D, 1, "h1");
        expect_shape(q.h2, D, 1, "h2");
        expect_shape(q.J11, D, D, "J11");
        expect_shape(q.J12, D, D, "J12");
        expect_shape(q.J22, D, D, "J22");
    }
    for (int t = 0; t < T; ++t) {
        expect_shape(r[t], D, 1, "r");
        expect_shape(R[t], D, D, "R");
    }
}

template <class M>
FilterResult<M> kalman_filter(const ChainPotentials<M>& p) {
    p.validate();
    const int T = p.T;
    const double c = 0.5 * p.D * kLog2Pi;
    FilterResult<M> out;
    out.f.reserve(T);
    out.F.reserve(T);
    out.F.push_back(p.J0 + p.R[0]);
    out.f.push_back(p.h0 + p.r[0]);
    M logZ = lift(p.h0, 0.0);
    for (int t = 0; t + 1 < T; ++t) {
        const auto& q = p.trans[t];
        M P = out.F[t] + q.J11;
        M d = out.f[t] - q.h1;
        M Pd = solve(P, d);
        logZ = add_scalar(logZ + 0.5 * dot(d, Pd) - 0.5 * logdet(P), c);
        M Fp = q.J22 - tr(q.J12) * solve(P, q.J12);
        M fp = q.h2 + tr(q.J12) * Pd;
        out.F.push_back(Fp + p.R[t + 1]);
        out.f.push_back(fp + p.r[t + 1]);
        out.P.push_back(P);
        out.Fp.push_back(Fp);
        out.fp.push_back(fp);
    }
    const M& F = out.F.back();
    const M& f = out.f.back();
    out.logZ = add_scalar(logZ + 0.5 * dot(f, solve(F, f)) - 0.5 * logdet(F), c);
    return out;
}

template <class M>
SmoothResult<M> kalman_smooth(const ChainPotentials<M>& p, const FilterResult<M>& fr) {
    const int T = p.T;
    if (static_cast<int>(fr.F.size()) != T) throw ShapeMismatch("kalman_smooth: filter result length mismatch");
    SmoothResult<M> s;
    s.fs = fr.f;
    s.Fs = fr.F;
    s.C.resize(T - 1, fr.F[0]);
    std::vector<M> X(T - 1, fr.F[0]);  // C^-1 J12^T
    for (int t = T - 2; t >= 0; --t) {
        const auto& q = p.trans[t];
        M C = s.Fs[t + 1] - fr.Fp[t] + q.J22;
        M Xt = solve(C, tr(q.J12));
        s.Fs[t] = fr.F[t] + q.J11 - q.J12 * Xt;
        s.fs[t] = fr.f[t] - q.h1 + q.J12 * solve(C, s.fs[t + 1] - fr.fp[t] + q.h2);
        s.C[t] = C;
        X[t] = Xt;
    }
    const M I = lift(p.J0, Mat::Identity(p.D, p.D));
    std::vector<M> Sigma;
    Sigma.reserve(T);
    for (int t = 0; t < T; ++t) {
        M Sg = solve(s.Fs[t], I);
        M mu = Sg * s.fs[t];
        s.Ez.push_back(mu);
        s.Ezz.push_back(Sg + mu * tr(mu));
        Sigma.push_back(Sg);
    }
    for (int t = 0; t + 1 < T; ++t) s.Ezz_next.push_back(Sigma[t] * tr(X[t]) + s.Ez[t] * tr(s.Ez[t + 1]));
    return s;
}

std::vector<Mat> marginal_covariances(const SmoothResult<Mat>& s) {
    std::vector<Mat> out;
    for (size_t t = 0; t < s.Ez.size(); ++t) out.push_back(sym(s.Ezz[t] - s.Ez[t] * s.Ez[t].transpose()));
    return out;
}

std::vector<Mat> cross_covariances(const SmoothResult<Mat>& s) {
    std::vector<Mat> out;
    for (size_t t = 0; t < s.Ezz_next.size(); ++t) out.push_back(s.Ezz_next[t] - s.Ez[t] * s.Ez[t + 1].transpose());
    return out;
}

Mat sample_posterior(const ChainPotentials<Mat>& p, const FilterResult<Mat>& fr, std::uint64_t seed) {
    const int T = p.T, D = p.D;
    CounterRng rng(seed, 0x5a4d);
    Mat z(T, D);
    auto draw = [&](const Mat& prec, const Mat& lin) -> Vec {
        auto llt = llt_checked(prec, "sample_posterior");
        Vec mean = llt.solve(lin);
        Mat L = llt.matrixL();
        Vec eps = rng.normal(D, 1);
        return mean + L.transpose().triangularView<Eigen::Upper>().solve(eps);
    };
    z.row(T - 1) = draw(fr.F[T - 1], fr.f[T - 1]).transpose();
    for (int t = T - 2; t >= 0; --t) {
        const auto& q = p.trans[t];
        Vec next = z.row(t + 1).transpose();
        z.row(t) = draw(fr.P[t], fr.f[t] - q.h1 + q.J12 * next).transpose();
    }
    return z;
}

ChainPotentials<ad::Var> to_tape(ad::Tape& tape, const ChainPotentials<Mat>& p) {
    ChainPotentials<ad::Var> q;
    q.T = p.T;
    q.D = p.D;
    q.h0 = tape.constant(p.h0);
    q.J0 = tape.constant(p.J0);
    for (const auto& e : p.trans)
        q.trans.push_back({tape.constant(e.h1), tape.constant(e.J11), tape.constant(e.J12), tape.constant(e.J22),
                           tape.constant(e.h2)});
    for (int t = 0; t < p.T; ++t) {
        q.r.push_back(tape.constant(p.r[t]));
        q.R.push_back(tape.constant(p.R[t]));
    }
    return q;
}

ChainPotentials<Mat> values(const ChainPotentials<ad::Var>& p) {
    ChainPotentials<Mat> q;
    q.T = p.T;
    q.D = p.D;
    q.h0 = value(p.h0);
    q.J0 = value(p.J0);
    for (const auto& e : p.trans)
        q.trans.push_back({value(e.h1), value(e.J11), value(e.J12), value(e.J22), value(e.h2)});
    for (int t = 0; t < p.T; ++t) {
        q.r.push_back(value(p.r[t]));
        q.R.push_back(value(p.R[t]));
    }
    return q;
}

template struct ChainPotentials<Mat>;
template struct ChainPotentials<ad::Var>;
template FilterResult<Mat> kalman_filter(const ChainPotentials<Mat>&);
template FilterResult<ad::Var> kalman_filter(const ChainPotentials<ad::Var>&);
template SmoothResult<Mat> kalman_smooth(const ChainPotentials<Mat>&, const FilterResult<Mat>&);
template SmoothResult<ad::Var> kalman_smooth(const ChainPotentials<ad::Var>&, const FilterResult<ad::Var>&);

}  // namespace svae::chain
