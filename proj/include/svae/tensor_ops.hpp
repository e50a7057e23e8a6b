#pragma once

// Plain-value versions of the differentiable op set. Numeric code templated on
// the matrix type M works with either Mat (this file) or ad::Var (autodiff.hpp).
// Vectors are n x 1 matrices, scalars are 1 x 1.

#include <cmath>
#include <vector>

#include "svae/linalg.hpp"
#include "svae/special.hpp"

namespace svae {

inline const Mat& value(const Mat& a) { return a; }
inline double scalar(const Mat& a) { return a(0, 0); }
inline Mat lift(const Mat&, const Mat& c) { return c; }
inline Mat lift(const Mat&, double c) { return Mat::Constant(1, 1, c); }

inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
    return a * b;
}
inline Mat tr(const Mat& a) { return a.transpose(); }
inline Mat cmul(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("cmul: shape mismatch");
    return a.cwiseProduct(b);
}
// x * s with s a 1 x 1 matrix
inline Mat smul(const Mat& x, const Mat& s) { return x * s(0, 0); }
inline Mat add_scalar(const Mat& x, double c) { return (x.array() + c).matrix(); }
inline Mat dot(const Mat& a, const Mat& b) { return Mat::Constant(1, 1, cmul(a, b).sum()); }

// sym(A)^-1 B
inline Mat solve(const Mat& a, const Mat& b) { return solve_spd(a, b); }
inline Mat logdet(const Mat& a) { return Mat::Constant(1, 1, logdet_spd(a)); }
inline Mat chol(const Mat& a) { return llt_checked(a).matrixL(); }
// tril(L)^-T B
inline Mat solve_lt(const Mat& l, const Mat& b) {
    return l.triangularView<Eigen::Lower>().transpose().solve(b);
}

inline double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad_scalar(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * std::exp(-0.5 * x * x) * 0.3989422804014327;
}

inline Mat exp(const Mat& a) { return a.unaryExpr([](double x) { return std::exp(x); }); }
inline Mat log(const Mat& a) { return a.array().log().matrix(); }
inline Mat softplus(const Mat& a) { return a.unaryExpr([](double x) { return svae::softplus(x); }); }
inline Mat tanh(const Mat& a) { return a.array().tanh().matrix(); }
inline Mat gelu(const Mat& a) { return a.unaryExpr([](double x) { return gelu_scalar(x); }); }
inline Mat sqrt(const Mat& a) { return a.array().sqrt().matrix(); }
inline Mat recip(const Mat& a) { return a.array().inverse().matrix(); }
inline Mat digamma(const Mat& a) { return a.unaryExpr([](double x) { return svae::digamma(x); }); }
inline Mat lgamma(const Mat& a) { return a.unaryExpr([](double x) { return svae::lgamma_r(x); }); }

Mat lse(const Mat& a, int axis = -1);
Mat sum(const Mat& a, int axis = -1);

inline Mat slice(const Mat& a, int r, int c, int nr, int nc) {
    if (r < 0 || c < 0 || r + nr > a.rows() || c + nc > a.cols()) throw ShapeMismatch("slice out of range");
    return a.block(r, c, nr, nc);
}
Mat vcat(const std::vector<Mat>& parts);
Mat hcat(const std::vector<Mat>& parts);
inline Mat reshape(const Mat& a, int rows, int cols) { return unflatten_rm(flatten_rm(a), rows, cols); }
inline Mat bcast_rows(const Mat& a, int m) {
    if (a.rows() != 1) throw ShapeMismatch("bcast_rows expects a row vector");
    return a.replicate(m, 1);
}
inline Mat bcast_cols(const Mat& a, int n) {
    if (a.cols() != 1) throw ShapeMismatch("bcast_cols expects a column vector");
    return a.replicate(1, n);
}
inline Mat diag(const Mat& v) {
    if (v.cols() != 1) throw ShapeMismatch("diag expects a column vector");
    return v.col(0).asDiagonal();
}
inline Mat diag_part(const Mat& a) { return a.diagonal(); }
inline Mat stop(const Mat& a) { return a; }

}  // namespace svae
