#include "svae/expfam.hpp"

#include <cmath>

#include "svae/autodiff.hpp"

namespace svae::expfam {

using ad::Var;

int FamilyDescriptor::size() const {
    switch (kind) {
        case Kind::MVN: return n + n * n;
        case Kind::NIW: return n * n + n + 2;
        case Kind::MNIW: return n * n + n * m + m * m + 1;
        case Kind::Dirichlet:
        case Kind::Categorical: return K;
    }
    return 0;
}

void FamilyDescriptor::validate() const {
    switch (kind) {
        case Kind::MVN:
        case Kind::NIW:
            if (n < 1) throw DomainError(name() + ": n must be >= 1");
            break;
        case Kind::MNIW:
            if (n < 1 || m < 1) throw DomainError("MNIW: n and m must be >= 1");
            break;
        case Kind::Dirichlet:
        case Kind::Categorical:
            if (K < 1) throw DomainError(name() + ": K must be >= 1");
            break;
    }
}

std::string FamilyDescriptor::name() const {
    switch (kind) {
        case Kind::MVN: return "MVN(" + std::to_string(n) + ")";
        case Kind::NIW: return "NIW(" + std::to_string(n) + ")";
        case Kind::MNIW: return "MNIW(" + std::to_string(n) + "," + std::to_string(m) + ")";
        case Kind::Dirichlet: return "Dirichlet(" + std::to_string(K) + ")";
        case Kind::Categorical: return "Categorical(" + std::to_string(K) + ")";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// generic block algebra

namespace {

template <class M>
M col_block(const M& flat, int& off, int len) {
    M out = slice(flat, off, 0, len, 1);
    off += len;
    return out;
}

template <class M>
M mat_block(const M& flat, int& off, int r, int c) {
    return reshape(col_block(flat, off, r * c), r, c);
}

template <class M>
M flat_of(const M& a) {
    return reshape(a, static_cast<int>(value(a).size()), 1);
}

template <class M>
M identity_like(const M& like, int n) {
    return lift(like, Mat(Mat::Identity(n, n)));
}

template <class M>
M log_mvgamma(int n, const M& x) {
    if (!(scalar(x) > 0.5 * (n - 1))) throw DomainError("log multivariate gamma: argument out of domain");
    M s = lgamma(x);
    for (int j = 2; j <= n; ++j) s = s + lgamma(add_scalar(x, 0.5 * (1 - j)));
    return add_scalar(s, 0.25 * n * (n - 1) * std::log(M_PI));
}

// sum_{i=0}^{n-1} psi((nu - i) / 2)
template <class M>
M digamma_sum(int n, const M& nu) {
    M half = nu * 0.5;
    M s = digamma(half);
    for (int i = 1; i < n; ++i) s = s + digamma(add_scalar(half, -0.5 * i));
    return s;
}

void check_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError(what);
}

// NIW: lambda = c, m = b / c, S = A - b b^T / c, nu = d - n - 2
template <class M>
M niw_logz(const NiwBlocks<M>& e, int n) {
    check_positive(scalar(e.c), "NIW: lambda must be positive");
    M inv_l = recip(e.c);
    M S = e.A - smul(e.b * tr(e.b), inv_l);
    M nu = add_scalar(e.d, -(n + 2.0));
    if (!(scalar(nu) > n - 1)) throw DomainError("NIW: nu must exceed n - 1");
    M t1 = cmul(nu * 0.5, add_scalar(-logdet(S), n * std::log(2.0)));
    M t2 = log_mvgamma<M>(n, nu * 0.5);
    M t3 = add_scalar(-log(e.c), kLog2Pi) * (0.5 * n);
    return t1 + t2 + t3;
}

template <class M>
NiwBlocks<M> niw_stats(const NiwBlocks<M>& e, int n) {
    check_positive(scalar(e.c), "NIW: lambda must be positive");
    M inv_l = recip(e.c);
    M m = smul(e.b, inv_l);
    M S = e.A - smul(e.b * tr(e.b), inv_l);
    M nu = add_scalar(e.d, -(n + 2.0));
    if (!(scalar(nu) > n - 1)) throw DomainError("NIW: nu must exceed n - 1");
    M Sinv = solve(S, identity_like(S, n));
    M Sinv_m = Sinv * m;
    NiwBlocks<M> out;
    out.A = smul(Sinv, nu) * -0.5;
    out.b = smul(Sinv_m, nu);
    out.c = (inv_l * static_cast<double>(n) + cmul(nu, dot(m, Sinv_m))) * -0.5;
    out.d = (add_scalar(-logdet(S), n * std::log(2.0)) + digamma_sum<M>(n, nu)) * 0.5;
    return out;
}

// MNIW: V = C, M = B V^-1, S = A - B V^-1 B^T, nu = d - n - m - 1
template <class M>
M mniw_logz(const MniwBlocks<M>& e, int n, int m) {
    M VinvBt = solve(e.C, tr(e.B));
    M S = e.A - e.B * VinvBt;
    M nu = add_scalar(e.d, -(n + m + 1.0));
    if (!(scalar(nu) > n - 1)) throw DomainError("MNIW: nu must exceed n - 1");
    M t1 = cmul(nu * 0.5, add_scalar(-logdet(S), n * std::log(2.0)));
    M t2 = log_mvgamma<M>(n, nu * 0.5);
    M t3 = logdet(e.C) * (-0.5 * n);
    return add_scalar(t1 + t2 + t3, 0.5 * n * m * kLog2Pi);
}

template <class M>
MniwBlocks<M> mniw_stats(const MniwBlocks<M>& e, int n, int m) {
    M Mt = solve(e.C, tr(e.B));  // M^T
    M Mm = tr(Mt);
    M S = e.A - e.B * Mt;
    M nu = add_scalar(e.d, -(n + m + 1.0));
    if (!(scalar(nu) > n - 1)) throw DomainError("MNIW: nu must exceed n - 1");
    M Sinv = solve(S, identity_like(S, n));
    M SinvM = Sinv * Mm;
    M Vinv = solve(e.C, identity_like(e.C, m));
    MniwBlocks<M> out;
    out.A = smul(Sinv, nu) * -0.5;
    out.B = smul(SinvM, nu);
    out.C = (Vinv * static_cast<double>(n) + smul(Mt * SinvM, nu)) * -0.5;
    out.d = (add_scalar(-logdet(S), n * std::log(2.0)) + digamma_sum<M>(n, nu)) * 0.5;
    return out;
}

// MVN: J = -2 L, mu = J^-1 h
template <class M>
M mvn_logz(const MvnBlocks<M>& e, int n) {
    M J = e.L * -2.0;
    M mu = solve(J, e.h);
    return add_scalar(dot(e.h, mu) * 0.5 - logdet(J) * 0.5, 0.5 * n * kLog2Pi);
}

template <class M>
MvnBlocks<M> mvn_stats(const MvnBlocks<M>& e, int n) {
    M J = e.L * -2.0;
    M mu = solve(J, e.h);
    MvnBlocks<M> out;
    out.h = mu;
    out.L = solve(J, identity_like(J, n)) + mu * tr(mu);
    return out;
}

template <class M>
void check_dirichlet(const M& alpha) {
    if (!((value(alpha).array() > 0.0).all()) || !value(alpha).allFinite())
        throw DomainError("Dirichlet: concentrations must be positive");
}

}  // namespace

template <class M>
NiwBlocks<M> niw_unpack(const M& flat, int n) {
    if (value(flat).rows() != n * n + n + 2 || value(flat).cols() != 1) throw ShapeMismatch("NIW: flat length mismatch");
    int off = 0;
    NiwBlocks<M> b;
    b.A = mat_block(flat, off, n, n);
    b.b = col_block(flat, off, n);
    b.c = col_block(flat, off, 1);
    b.d = col_block(flat, off, 1);
    return b;
}

template <class M>
M niw_pack(const NiwBlocks<M>& b) {
    return vcat(std::vector<M>{flat_of(b.A), b.b, b.c, b.d});
}

template <class M>
MniwBlocks<M> mniw_unpack(const M& flat, int n, int m) {
    if (value(flat).rows() != n * n + n * m + m * m + 1 || value(flat).cols() != 1)
        throw ShapeMismatch("MNIW: flat length mismatch");
    int off = 0;
    MniwBlocks<M> b;
    b.A = mat_block(flat, off, n, n);
    b.B = mat_block(flat, off, n, m);
    b.C = mat_block(flat, off, m, m);
    b.d = col_block(flat, off, 1);
    return b;
}

template <class M>
M mniw_pack(const MniwBlocks<M>& b) {
    return vcat(std::vector<M>{flat_of(b.A), flat_of(b.B), flat_of(b.C), b.d});
}

template <class M>
MvnBlocks<M> mvn_unpack(const M& flat, int n) {
    if (value(flat).rows() != n + n * n || value(flat).cols() != 1) throw ShapeMismatch("MVN: flat length mismatch");
    int off = 0;
    MvnBlocks<M> b;
    b.h = col_block(flat, off, n);
    b.L = mat_block(flat, off, n, n);
    return b;
}

template <class M>
M mvn_pack(const MvnBlocks<M>& b) {
    return vcat(std::vector<M>{b.h, flat_of(b.L)});
}

template <class M>
M log_partition_of(const FamilyDescriptor& f, const M& eta) {
    switch (f.kind) {
        case Kind::MVN: return mvn_logz(mvn_unpack(eta, f.n), f.n);
        case Kind::NIW: return niw_logz(niw_unpack(eta, f.n), f.n);
        case Kind::MNIW: return mniw_logz(mniw_unpack(eta, f.n, f.m), f.n, f.m);
        case Kind::Dirichlet:
            check_dirichlet(eta);
            return sum(lgamma(eta)) - lgamma(sum(eta));
        case Kind::Categorical: return lse(eta);
    }
    throw DomainError("unknown family");
}

template <class M>
M expected_stats_of(const FamilyDescriptor& f, const M& eta) {
    switch (f.kind) {
        case Kind::MVN: return mvn_pack(mvn_stats(mvn_unpack(eta, f.n), f.n));
        case Kind::NIW: return niw_pack(niw_stats(niw_unpack(eta, f.n), f.n));
        case Kind::MNIW: return mniw_pack(mniw_stats(mniw_unpack(eta, f.n, f.m), f.n, f.m));
        case Kind::Dirichlet:
            check_dirichlet(eta);
            return digamma(eta) - bcast_rows(digamma(sum(eta)), f.K);
        case Kind::Categorical: return exp(eta - bcast_rows(lse(eta), f.K));
    }
    throw DomainError("unknown family");
}

#define SVAE_EXPFAM_INSTANTIATE(M)                                                   \
    template NiwBlocks<M> niw_unpack<M>(const M&, int);                              \
    template M niw_pack<M>(const NiwBlocks<M>&);                                     \
    template MniwBlocks<M> mniw_unpack<M>(const M&, int, int);                       \
    template M mniw_pack<M>(const MniwBlocks<M>&);                                   \
    template MvnBlocks<M> mvn_unpack<M>(const M&, int);                              \
    template M mvn_pack<M>(const MvnBlocks<M>&);                                     \
    template M log_partition_of<M>(const FamilyDescriptor&, const M&);               \
    template M expected_stats_of<M>(const FamilyDescriptor&, const M&);

SVAE_EXPFAM_INSTANTIATE(Mat)
SVAE_EXPFAM_INSTANTIATE(Var)

// ---------------------------------------------------------------------------
// plain-value API

namespace {

void check_sym(const Mat& a, const char* what) {
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw DomainError(std::string(what) + ": block not symmetric");
}

Evaluated evaluate(const NaturalParams& eta) {
    validate(eta);
    Evaluated e;
    e.eta = eta;
    e.mu = expected_stats(eta);
    e.log_partition = log_partition(eta);
    return e;
}

}  // namespace

NaturalParams mvn_natural(const MvnCanonical& c) {
    const int n = static_cast<int>(c.mean.size());
    if (c.cov.rows() != n || c.cov.cols() != n) throw DimMismatch("MVN: covariance shape");
    Mat J = inv_spd(c.cov);
    MvnBlocks<Mat> b{J * c.mean, -0.5 * J};
    return {FamilyDescriptor::mvn(n), mvn_pack(b)};
}

MvnCanonical mvn_canonical(const NaturalParams& eta) {
    const int n = eta.family.n;
    auto b = mvn_unpack<Mat>(eta.data, n);
    Mat cov = inv_spd(-2.0 * b.L);
    return {cov * b.h, cov};
}

NaturalParams niw_natural(const NiwCanonical& c) {
    const int n = static_cast<int>(c.m.size());
    if (c.S.rows() != n || c.S.cols() != n) throw DimMismatch("NIW: S shape");
    check_positive(c.lambda, "NIW: lambda must be positive");
    if (!(c.nu > n - 1)) throw DomainError("NIW: nu must exceed n - 1");
    llt_checked(c.S, "NIW S");
    NiwBlocks<Mat> b{c.S + c.lambda * c.m * c.m.transpose(), c.lambda * c.m, Mat::Constant(1, 1, c.lambda),
                     Mat::Constant(1, 1, c.nu + n + 2)};
    return {FamilyDescriptor::niw(n), niw_pack(b)};
}

NiwCanonical niw_canonical(const NaturalParams& eta) {
    const int n = eta.family.n;
    auto b = niw_unpack<Mat>(eta.data, n);
    NiwCanonical c;
    c.lambda = b.c(0, 0);
    check_positive(c.lambda, "NIW: lambda must be positive");
    c.m = b.b / c.lambda;
    c.S = b.A - c.lambda * c.m * c.m.transpose();
    c.nu = b.d(0, 0) - n - 2;
    return c;
}

NaturalParams mniw_natural(const MniwCanonical& c) {
    const int n = static_cast<int>(c.S.rows()), m = static_cast<int>(c.V.rows());
    if (c.S.cols() != n || c.V.cols() != m || c.M.rows() != n || c.M.cols() != m) throw DimMismatch("MNIW: block shapes");
    if (!(c.nu > n - 1)) throw DomainError("MNIW: nu must exceed n - 1");
    llt_checked(c.S, "MNIW S");
    llt_checked(c.V, "MNIW V");
    MniwBlocks<Mat> b{c.S + c.M * c.V * c.M.transpose(), c.M * c.V, c.V, Mat::Constant(1, 1, c.nu + n + m + 1)};
    return {FamilyDescriptor::mniw(n, m), mniw_pack(b)};
}

MniwCanonical mniw_canonical(const NaturalParams& eta) {
    const int n = eta.family.n, m = eta.family.m;
    auto b = mniw_unpack<Mat>(eta.data, n, m);
    MniwCanonical c;
    c.V = b.C;
    c.M = solve_spd(b.C, b.B.transpose()).transpose();
    c.S = b.A - c.M * c.V * c.M.transpose();
    c.nu = b.d(0, 0) - n - m - 1;
    return c;
}

void validate(const NaturalParams& eta) {
    const auto& f = eta.family;
    f.validate();
    if (eta.data.size() != f.size())
        throw ShapeMismatch(f.name() + ": expected " + std::to_string(f.size()) + " entries, got " +
                            std::to_string(eta.data.size()));
    if (!eta.data.allFinite()) throw DomainError(f.name() + ": non-finite natural parameters");
    switch (f.kind) {
        case Kind::MVN: {
            auto b = mvn_unpack<Mat>(eta.data, f.n);
            check_sym(b.L, "MVN");
            llt_checked(-2.0 * b.L, "MVN precision");
            break;
        }
        case Kind::NIW: {
            auto b = niw_unpack<Mat>(eta.data, f.n);
            check_sym(b.A, "NIW");
            auto c = niw_canonical(eta);
            if (!(c.nu > f.n - 1)) throw DomainError("NIW: nu must exceed n - 1");
            llt_checked(c.S, "NIW S");
            break;
        }
        case Kind::MNIW: {
            auto b = mniw_unpack<Mat>(eta.data, f.n, f.m);
            check_sym(b.A, "MNIW");
            check_sym(b.C, "MNIW");
            llt_checked(b.C, "MNIW V");
            auto c = mniw_canonical(eta);
            if (!(c.nu > f.n - 1)) throw DomainError("MNIW: nu must exceed n - 1");
            llt_checked(c.S, "MNIW S");
            break;
        }
        case Kind::Dirichlet: check_dirichlet<Mat>(eta.data); break;
        case Kind::Categorical: break;
    }
}

double log_partition(const NaturalParams& eta) {
    return log_partition_of<Mat>(eta.family, eta.data)(0, 0);
}

MeanParams expected_stats(const NaturalParams& eta) {
    return {eta.family, expected_stats_of<Mat>(eta.family, eta.data)};
}

double kl_divergence(const NaturalParams& a, const NaturalParams& b) {
    if (!(a.family == b.family)) throw FamilyMismatch(a.family.name() + " vs " + b.family.name());
    const Vec mu = expected_stats(a).data;
    return (a.data - b.data).dot(mu) - log_partition(a) + log_partition(b);
}

Evaluated mvn_eval(const Vec& mean, const Mat& cov) { return evaluate(mvn_natural({mean, cov})); }
Evaluated niw_eval(const NiwCanonical& c) { return evaluate(niw_natural(c)); }
Evaluated mniw_eval(const MniwCanonical& c) { return evaluate(mniw_natural(c)); }

Evaluated dirichlet_eval(const Vec& alpha) {
    return evaluate({FamilyDescriptor::dirichlet(static_cast<int>(alpha.size())), alpha});
}

Evaluated categorical_eval(const Vec& logits) {
    return evaluate({FamilyDescriptor::categorical(static_cast<int>(logits.size())), logits});
}

}  // namespace svae::expfam
