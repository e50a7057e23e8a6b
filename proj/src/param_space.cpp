#include "svae/param_space.hpp"

#include <cmath>

namespace svae::param {

using expfam::FamilyDescriptor;

namespace {

int tri(int n) { return n * (n - 1) / 2; }

void check_len(const Vec& v, int n, const char* what) {
    if (v.size() != n)
        throw ShapeMismatch(std::string(what) + ": expected length " + std::to_string(n) + ", got " +
                            std::to_string(v.size()));
}

Mat phi(const Mat& x) {
    Mat out = x.triangularView<Eigen::Lower>();
    out.diagonal() *= 0.5;
    return out;
}

// --- SPD correlation-Cholesky ------------------------------------------------

struct SpdParts {
    Vec sigma;
    Mat L;      // unit-row correlation factor
    Vec norms;  // row norms before scaling
    Mat R;
};

SpdParts spd_parts(int n, const Vec& x) {
    SpdParts p;
    p.sigma = x.head(n).unaryExpr([](double s) { return svae::softplus(s); });
    p.L = Mat::Zero(n, n);
    p.norms = Vec(n);
    int k = n;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < i; ++j) p.L(i, j) = x(k++);
        p.L(i, i) = 1.0;
        p.norms(i) = p.L.row(i).norm();
        p.L.row(i) /= p.norms(i);
    }
    p.R = p.L * p.L.transpose();
    return p;
}

Vec spd_forward(int n, const Vec& x) {
    auto p = spd_parts(n, x);
    Mat S = p.sigma.asDiagonal() * p.R * p.sigma.asDiagonal();
    return flatten_rm(sym(S));
}

Vec spd_jvp_forward(int n, const Vec& x, const Vec& v) {
    auto p = spd_parts(n, x);
    Vec dsigma(n);
    for (int i = 0; i < n; ++i) dsigma(i) = sigmoid(x(i)) * v(i);
    Mat dL = Mat::Zero(n, n);
    int k = n;
    for (int i = 0; i < n; ++i) {
        Eigen::RowVectorXd dv = Eigen::RowVectorXd::Zero(n);
        for (int j = 0; j < i; ++j) dv(j) = v(k++);
        const double proj = p.L.row(i).dot(dv);
        dL.row(i) = (dv - proj * p.L.row(i)) / p.norms(i);
    }
    Mat dR = dL * p.L.transpose() + p.L * dL.transpose();
    Mat dS = dsigma.asDiagonal() * p.R * p.sigma.asDiagonal() + p.sigma.asDiagonal() * dR * p.sigma.asDiagonal() +
             p.sigma.asDiagonal() * p.R * dsigma.asDiagonal();
    return flatten_rm(dS);
}

void spd_check(const Mat& S) {
    if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, S.cwiseAbs().maxCoeff()))
        throw BoundaryError("SPD inverse: matrix not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(sym(S), Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() >= kSpdMinEig)) throw BoundaryError("SPD inverse: minimum eigenvalue below 1e-12");
}

struct SpdInv {
    Vec sigma;
    Mat R, L;
};

SpdInv spd_inverse_parts(int n, const Mat& S) {
    spd_check(S);
    SpdInv p;
    p.sigma = S.diagonal().array().sqrt();
    p.R = sym(p.sigma.cwiseInverse().asDiagonal() * S * p.sigma.cwiseInverse().asDiagonal());
    p.R.diagonal().setOnes();
    Eigen::LLT<Mat> llt(p.R);
    if (llt.info() != Eigen::Success) throw BoundaryError("SPD inverse: correlation not positive definite");
    p.L = llt.matrixL();
    (void)n;
    return p;
}

Vec spd_inverse(int n, const Vec& y) {
    Mat S = unflatten_rm(y, n, n);
    auto p = spd_inverse_parts(n, S);
    Vec x(n + tri(n));
    for (int i = 0; i < n; ++i) x(i) = softplus_inv(p.sigma(i));
    int k = n;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) x(k++) = p.L(i, j) / p.L(i, i);
    return x;
}

Vec spd_jvp_inverse(int n, const Vec& y, const Vec& v) {
    Mat S = unflatten_rm(y, n, n);
    auto p = spd_inverse_parts(n, S);
    Mat dS = sym(unflatten_rm(v, n, n));
    Vec dsigma(n);
    for (int i = 0; i < n; ++i) dsigma(i) = dS(i, i) / (2.0 * p.sigma(i));
    Mat dR(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            dR(i, j) = dS(i, j) / (p.sigma(i) * p.sigma(j)) -
                       p.R(i, j) * (dsigma(i) / p.sigma(i) + dsigma(j) / p.sigma(j));
    Mat tmp = p.L.triangularView<Eigen::Lower>().solve(dR);
    Mat X = p.L.triangularView<Eigen::Lower>().solve(tmp.transpose()).transpose();
    Mat dL = p.L * phi(X);
    Vec dx(n + tri(n));
    for (int i = 0; i < n; ++i) dx(i) = dsigma(i) / (-std::expm1(-p.sigma(i)));
    int k = n;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j)
            dx(k++) = dL(i, j) / p.L(i, i) - p.L(i, j) * dL(i, i) / (p.L(i, i) * p.L(i, i));
    return dx;
}

}  // namespace

// ---------------------------------------------------------------------------

int Bijector::in_size() const {
    switch (kind) {
        case BijKind::Identity:
        case BijKind::Softplus:
        case BijKind::ShiftedSoftplus: return dim;
        case BijKind::SimplexSoftmax: return dim - 1;
        case BijKind::SPDCorrelationCholesky: return dim + tri(dim);
    }
    return 0;
}

int Bijector::out_size() const {
    switch (kind) {
        case BijKind::SPDCorrelationCholesky: return dim * dim;
        default: return dim;
    }
}

Vec forward(const Bijector& b, const Vec& x) {
    check_len(x, b.in_size(), "bijector forward");
    switch (b.kind) {
        case BijKind::Identity: return x;
        case BijKind::Softplus: return x.unaryExpr([](double v) { return svae::softplus(v); });
        case BijKind::ShiftedSoftplus:
            return x.unaryExpr([s = b.shift](double v) { return svae::softplus(v) + s; });
        case BijKind::SimplexSoftmax: {
            Vec z(b.dim);
            z << x, 0.0;
            return softmax(z);
        }
        case BijKind::SPDCorrelationCholesky: return spd_forward(b.dim, x);
    }
    return x;
}

Vec inverse(const Bijector& b, const Vec& y) {
    check_len(y, b.out_size(), "bijector inverse");
    switch (b.kind) {
        case BijKind::Identity: return y;
        case BijKind::Softplus:
        case BijKind::ShiftedSoftplus: {
            Vec x(y.size());
            for (int i = 0; i < y.size(); ++i) {
                const double u = y(i) - b.shift;
                if (!(u > 0.0) || !std::isfinite(u)) throw BoundaryError("softplus inverse: value on or below the boundary");
                x(i) = softplus_inv(u);
            }
            return x;
        }
        case BijKind::SimplexSoftmax: {
            if (!(y.array() >= kSimplexFloor).all()) throw BoundaryError("simplex inverse: entry below 1e-300");
            if (std::abs(y.sum() - 1.0) > 1e-10) throw BoundaryError("simplex inverse: entries do not sum to 1");
            const double last = std::log(y(b.dim - 1));
            Vec x(b.dim - 1);
            for (int i = 0; i < b.dim - 1; ++i) x(i) = std::log(y(i)) - last;
            return x;
        }
        case BijKind::SPDCorrelationCholesky: return spd_inverse(b.dim, y);
    }
    return y;
}

Vec jvp_forward(const Bijector& b, const Vec& x, const Vec& v) {
    check_len(x, b.in_size(), "bijector jvp");
    check_len(v, b.in_size(), "bijector jvp tangent");
    switch (b.kind) {
        case BijKind::Identity: return v;
        case BijKind::Softplus:
        case BijKind::ShiftedSoftplus: {
            Vec out(v.size());
            for (int i = 0; i < v.size(); ++i) out(i) = sigmoid(x(i)) * v(i);
            return out;
        }
        case BijKind::SimplexSoftmax: {
            Vec y = forward(b, x);
            Vec dz(b.dim);
            dz << v, 0.0;
            return y.cwiseProduct(dz) - y * y.dot(dz);
        }
        case BijKind::SPDCorrelationCholesky: return spd_jvp_forward(b.dim, x, v);
    }
    return v;
}

Vec jvp_inverse(const Bijector& b, const Vec& y, const Vec& v) {
    check_len(y, b.out_size(), "bijector jvp_inverse");
    check_len(v, b.out_size(), "bijector jvp_inverse tangent");
    switch (b.kind) {
        case BijKind::Identity: return v;
        case BijKind::Softplus:
        case BijKind::ShiftedSoftplus: {
            Vec out(v.size());
            for (int i = 0; i < v.size(); ++i) {
                const double u = y(i) - b.shift;
                if (!(u > 0.0)) throw BoundaryError("softplus jvp_inverse: value on or below the boundary");
                out(i) = v(i) / (-std::expm1(-u));
            }
            return out;
        }
        case BijKind::SimplexSoftmax: {
            if (!(y.array() >= kSimplexFloor).all()) throw BoundaryError("simplex jvp_inverse: entry below 1e-300");
            Vec out(b.dim - 1);
            const double last = v(b.dim - 1) / y(b.dim - 1);
            for (int i = 0; i < b.dim - 1; ++i) out(i) = v(i) / y(i) - last;
            return out;
        }
        case BijKind::SPDCorrelationCholesky: return spd_jvp_inverse(b.dim, y, v);
    }
    return v;
}

// ---------------------------------------------------------------------------
// family composites

namespace {

struct Segments {
    std::vector<Bijector> parts;
};

Segments niw_segments(int n) {
    return {{Bijector::spd(n), Bijector::identity(n), Bijector::softplus(1), Bijector::shifted_softplus(1, n - 1.0)}};
}

Segments mniw_segments(int n, int m) {
    return {{Bijector::spd(n), Bijector::identity(n * m), Bijector::spd(m), Bijector::shifted_softplus(1, n - 1.0)}};
}

// unconstrained -> canonical blocks (concatenated outputs of the segments)
Vec seg_apply(const Segments& s, const Vec& x, bool in_to_out, const Vec* tangent, const Vec* at) {
    std::vector<Vec> outs;
    int off_x = 0, off_at = 0;
    for (const auto& b : s.parts) {
        const int lin = in_to_out ? b.in_size() : b.out_size();
        const int lat = in_to_out ? b.in_size() : b.out_size();
        Vec seg = x.segment(off_x, lin);
        Vec r;
        if (tangent) {
            Vec a = at->segment(off_at, lat);
            Vec t = tangent->segment(off_x, lin);
            r = in_to_out ? jvp_forward(b, a, t) : jvp_inverse(b, a, t);
        } else {
            r = in_to_out ? forward(b, seg) : inverse(b, seg);
        }
        outs.push_back(r);
        off_x += lin;
        off_at += lat;
    }
    int total = 0;
    for (auto& o : outs) total += static_cast<int>(o.size());
    Vec out(total);
    int k = 0;
    for (auto& o : outs) {
        out.segment(k, o.size()) = o;
        k += static_cast<int>(o.size());
    }
    return out;
}

// canonical vector layout: NIW [S (n*n), m (n), lambda, nu]; MNIW [S, M, V, nu]
Vec niw_to_natural(int n, const Vec& c, const Vec* dc) {
    Mat S = unflatten_rm(c.segment(0, n * n), n, n);
    Vec m = c.segment(n * n, n);
    const double l = c(n * n + n);
    if (!dc) {
        expfam::NiwCanonical can{S, m, l, c(n * n + n + 1)};
        return expfam::niw_natural(can).data;
    }
    Mat dS = unflatten_rm(dc->segment(0, n * n), n, n);
    Vec dm = dc->segment(n * n, n);
    const double dl = (*dc)(n * n + n);
    const double dnu = (*dc)(n * n + n + 1);
    expfam::NiwBlocks<Mat> b;
    b.A = dS + dl * m * m.transpose() + l * (dm * m.transpose() + m * dm.transpose());
    b.b = dl * m + l * dm;
    b.c = Mat::Constant(1, 1, dl);
    b.d = Mat::Constant(1, 1, dnu);
    return expfam::niw_pack(b);
}

Vec niw_from_natural(int n, const Vec& eta, const Vec* deta) {
    auto b = expfam::niw_unpack<Mat>(eta, n);
    const double l = b.c(0, 0);
    if (!(l > 0.0)) throw BoundaryError("NIW inverse: lambda must be positive");
    Vec out(n * n + n + 2);
    if (!deta) {
        Vec m = b.b / l;
        Mat S = b.A - l * m * m.transpose();
        out << flatten_rm(S), m, l, b.d(0, 0) - n - 2;
        return out;
    }
    auto d = expfam::niw_unpack<Mat>(*deta, n);
    const double dl = d.c(0, 0);
    Vec dm = d.b / l - b.b * dl / (l * l);
    Mat dS = sym(d.A) - (d.b * b.b.transpose() + b.b * d.b.transpose()) / l + b.b * b.b.transpose() * dl / (l * l);
    out << flatten_rm(dS), dm, dl, d.d(0, 0);
    return out;
}

Vec mniw_to_natural(int n, int m, const Vec& c, const Vec* dc) {
    Mat S = unflatten_rm(c.segment(0, n * n), n, n);
    Mat Mm = unflatten_rm(c.segment(n * n, n * m), n, m);
    Mat V = unflatten_rm(c.segment(n * n + n * m, m * m), m, m);
    const double nu = c(n * n + n * m + m * m);
    if (!dc) return expfam::mniw_natural({S, Mm, V, nu}).data;
    Mat dS = unflatten_rm(dc->segment(0, n * n), n, n);
    Mat dM = unflatten_rm(dc->segment(n * n, n * m), n, m);
    Mat dV = unflatten_rm(dc->segment(n * n + n * m, m * m), m, m);
    expfam::MniwBlocks<Mat> b;
    b.A = dS + dM * V * Mm.transpose() + Mm * dV * Mm.transpose() + Mm * V * dM.transpose();
    b.B = dM * V + Mm * dV;
    b.C = dV;
    b.d = Mat::Constant(1, 1, (*dc)(n * n + n * m + m * m));
    return expfam::mniw_pack(b);
}

Vec mniw_from_natural(int n, int m, const Vec& eta, const Vec* deta) {
    auto b = expfam::mniw_unpack<Mat>(eta, n, m);
    Eigen::LLT<Mat> llt(sym(b.C));
    if (llt.info() != Eigen::Success) throw BoundaryError("MNIW inverse: V not positive definite");
    Mat Mm = llt.solve(b.B.transpose()).transpose();
    Vec out(n * n + n * m + m * m + 1);
    if (!deta) {
        Mat S = b.A - Mm * b.C * Mm.transpose();
        out << flatten_rm(S), flatten_rm(Mm), flatten_rm(b.C), b.d(0, 0) - n - m - 1;
        return out;
    }
    auto d = expfam::mniw_unpack<Mat>(*deta, n, m);
    Mat dV = sym(d.C);
    Mat dM = llt.solve((d.B - Mm * dV).transpose()).transpose();
    Mat dS = sym(d.A) - (d.B * Mm.transpose() + Mm * d.B.transpose()) + Mm * dV * Mm.transpose();
    out << flatten_rm(dS), flatten_rm(dM), flatten_rm(dV), d.d(0, 0);
    return out;
}

}  // namespace

int FamilyBijector::in_size() const {
    switch (kind) {
        case Kind::Identity:
        case Kind::Dirichlet: return family.size();
        case Kind::NIW: return family.n + tri(family.n) + family.n + 2;
        case Kind::MNIW: {
            const int n = family.n, m = family.m;
            return n + tri(n) + n * m + m + tri(m) + 1;
        }
    }
    return 0;
}

Vec forward(const FamilyBijector& b, const Vec& x) {
    check_len(x, b.in_size(), "family bijector forward");
    const int n = b.family.n, m = b.family.m;
    switch (b.kind) {
        case FamilyBijector::Kind::Identity: return x;
        case FamilyBijector::Kind::Dirichlet: return forward(Bijector::softplus(b.family.K), x);
        case FamilyBijector::Kind::NIW: return niw_to_natural(n, seg_apply(niw_segments(n), x, true, nullptr, nullptr), nullptr);
        case FamilyBijector::Kind::MNIW:
            return mniw_to_natural(n, m, seg_apply(mniw_segments(n, m), x, true, nullptr, nullptr), nullptr);
    }
    return x;
}

Vec inverse(const FamilyBijector& b, const Vec& eta) {
    check_len(eta, b.out_size(), "family bijector inverse");
    const int n = b.family.n, m = b.family.m;
    switch (b.kind) {
        case FamilyBijector::Kind::Identity: return eta;
        case FamilyBijector::Kind::Dirichlet: return inverse(Bijector::softplus(b.family.K), eta);
        case FamilyBijector::Kind::NIW: return seg_apply(niw_segments(n), niw_from_natural(n, eta, nullptr), false, nullptr, nullptr);
        case FamilyBijector::Kind::MNIW:
            return seg_apply(mniw_segments(n, m), mniw_from_natural(n, m, eta, nullptr), false, nullptr, nullptr);
    }
    return eta;
}

Vec jvp_forward(const FamilyBijector& b, const Vec& x, const Vec& v) {
    check_len(x, b.in_size(), "family bijector jvp");
    check_len(v, b.in_size(), "family bijector jvp tangent");
    const int n = b.family.n, m = b.family.m;
    switch (b.kind) {
        case FamilyBijector::Kind::Identity: return v;
        case FamilyBijector::Kind::Dirichlet: return jvp_forward(Bijector::softplus(b.family.K), x, v);
        case FamilyBijector::Kind::NIW: {
            auto seg = niw_segments(n);
            Vec c = seg_apply(seg, x, true, nullptr, nullptr);
            Vec dc = seg_apply(seg, v, true, &v, &x);
            return niw_to_natural(n, c, &dc);
        }
        case FamilyBijector::Kind::MNIW: {
            auto seg = mniw_segments(n, m);
            Vec c = seg_apply(seg, x, true, nullptr, nullptr);
            Vec dc = seg_apply(seg, v, true, &v, &x);
            return mniw_to_natural(n, m, c, &dc);
        }
    }
    return v;
}

Vec jvp_inverse(const FamilyBijector& b, const Vec& eta, const Vec& v) {
    check_len(eta, b.out_size(), "family bijector jvp_inverse");
    check_len(v, b.out_size(), "family bijector jvp_inverse tangent");
    const int n = b.family.n, m = b.family.m;
    switch (b.kind) {
        case FamilyBijector::Kind::Identity: return v;
        case FamilyBijector::Kind::Dirichlet: return jvp_inverse(Bijector::softplus(b.family.K), eta, v);
        case FamilyBijector::Kind::NIW: {
            Vec c = niw_from_natural(n, eta, nullptr);
            Vec dc = niw_from_natural(n, eta, &v);
            return seg_apply(niw_segments(n), dc, false, &dc, &c);
        }
        case FamilyBijector::Kind::MNIW: {
            Vec c = mniw_from_natural(n, m, eta, nullptr);
            Vec dc = mniw_from_natural(n, m, eta, &v);
            return seg_apply(mniw_segments(n, m), dc, false, &dc, &c);
        }
    }
    return v;
}

Mat jacobian(const FamilyBijector& b, const Vec& x) {
    const int nin = b.in_size();
    Mat J(b.out_size(), nin);
    for (int i = 0; i < nin; ++i) J.col(i) = jvp_forward(b, x, Vec::Unit(nin, i));
    return J;
}

ad::Var bijector_node(const FamilyBijector& b, const ad::Var& x) {
    auto fn = std::make_shared<ad::CustomFn>();
    fn->policy = ad::CustomFn::Policy::Standard;
    fn->name = "bijector(" + b.family.name() + ")";
    fn->forward = [b](const Mat& in) -> Mat { return forward(b, in.col(0)); };
    fn->vjp = [b](const Mat& in, const Mat&, const Mat& g) -> Mat {
        return jacobian(b, in.col(0)).transpose() * g;
    };
    fn->jvp = [b](const Mat& in, const Mat&, const Mat& t) -> Mat { return jvp_forward(b, in.col(0), t.col(0)); };
    return ad::custom(x, fn);
}

ad::Var natgrad_map(const FamilyBijector& b, const ad::Var& x) {
    auto fn = std::make_shared<ad::CustomFn>();
    fn->policy = ad::CustomFn::Policy::InverseForwardJVP;
    fn->name = "natgrad(" + b.family.name() + ")";
    fn->forward = [b](const Mat& in) -> Mat { return forward(b, in.col(0)); };
    fn->vjp = [b](const Mat&, const Mat& y, const Mat& g) -> Mat { return jvp_inverse(b, y.col(0), g.col(0)); };
    fn->jvp = [b](const Mat& in, const Mat&, const Mat& t) -> Mat { return jvp_forward(b, in.col(0), t.col(0)); };
    return ad::custom(x, fn);
}

}  // namespace svae::param
