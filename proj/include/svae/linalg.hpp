#pragma once

#include <Eigen/Dense>

#include "svae/errors.hpp"

namespace svae {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

constexpr double kLog2Pi = 1.8378770664093454836;

inline Mat sym(const Mat& a) { return 0.5 * (a + a.transpose()); }

// Cholesky of sym(a); throws NotSPD when the factorization fails.
inline Eigen::LLT<Mat> llt_checked(const Mat& a, const char* where = "cholesky") {
    if (a.rows() != a.cols()) throw ShapeMismatch(std::string(where) + ": matrix not square");
    Eigen::LLT<Mat> llt(sym(a));
    if (llt.info() != Eigen::Success) throw NotSPD(std::string(where) + ": matrix not SPD");
    const auto& l = llt.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i)
        if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i)))
            throw NotSPD(std::string(where) + ": matrix not SPD");
    return llt;
}

inline double logdet_llt(const Eigen::LLT<Mat>& llt) {
    const auto& l = llt.matrixLLT();
    double s = 0.0;
    for (Eigen::Index i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

inline double logdet_spd(const Mat& a) { return logdet_llt(llt_checked(a, "logdet")); }

inline Mat solve_spd(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows()) throw ShapeMismatch("solve_spd: row mismatch");
    return llt_checked(a, "solve_spd").solve(b);
}

inline Mat inv_spd(const Mat& a) {
    return solve_spd(a, Mat::Identity(a.rows(), a.cols()));
}

// Row-major flatten / unflatten (the packing order used for every flat vector).
inline Vec flatten_rm(const Mat& a) {
    Vec v(a.size());
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) v(k++) = a(i, j);
    return v;
}

inline Mat unflatten_rm(const Eigen::Ref<const Vec>& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != rows * cols) throw ShapeMismatch("unflatten: size mismatch");
    Mat a(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) a(i, j) = v(k++);
    return a;
}

inline bool all_finite(const Mat& a) { return a.allFinite(); }

}  // namespace svae
