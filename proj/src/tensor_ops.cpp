#include "svae/tensor_ops.hpp"

namespace svae {

Mat lse(const Mat& a, int axis) {
    if (axis < 0) {
        Vec v = Eigen::Map<const Vec>(a.data(), a.size());
        return Mat::Constant(1, 1, logsumexp(v));
    }
    if (axis == 0) {
        Mat out(1, a.cols());
        for (Eigen::Index j = 0; j < a.cols(); ++j) out(0, j) = logsumexp(a.col(j));
        return out;
    }
    Mat out(a.rows(), 1);
    for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, 0) = logsumexp(a.row(i).transpose());
    return out;
}

Mat sum(const Mat& a, int axis) {
    if (axis < 0) return Mat::Constant(1, 1, a.sum());
    if (axis == 0) return a.colwise().sum();
    return a.rowwise().sum();
}

Mat vcat(const std::vector<Mat>& parts) {
    if (parts.empty()) throw ShapeMismatch("vcat: no parts");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0].cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeMismatch("vcat: column mismatch");
        rows += p.rows();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p;
        r += p.rows();
    }
    return out;
}

Mat hcat(const std::vector<Mat>& parts) {
    if (parts.empty()) throw ShapeMismatch("hcat: no parts");
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts[0].rows();
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeMismatch("hcat: row mismatch");
        cols += p.cols();
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p.cols()) = p;
        c += p.cols();
    }
    return out;
}

}  // namespace svae
