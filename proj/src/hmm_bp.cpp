#include "svae/hmm_bp.hpp"

#include <cmath>

namespace svae::hmm {

template <class M>
void HmmPotentials<M>::validate() const {
    if (K < 1 || Tk < 1) throw ShapeMismatch("hmm: K and Tk must be at least 1");
    const Mat& a = value(log_pi0);
    const Mat& b = value(log_pi);
    const Mat& o = value(obs);
    if (a.rows() != K || a.cols() != 1) throw ShapeMismatch("hmm: log_pi0 must be K x 1");
    if (b.rows() != K || b.cols() != K) throw ShapeMismatch("hmm: log_pi must be K x K");
    if (o.rows() != Tk || o.cols() != K) throw ShapeMismatch("hmm: obs must be Tk x K");
    auto no_nan_or_posinf = [](const Mat& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i)
            if (std::isnan(m.data()[i]) || m.data()[i] == std::numeric_limits<double>::infinity()) return false;
        return true;
    };
    if (!no_nan_or_posinf(a) || !no_nan_or_posinf(b) || !no_nan_or_posinf(o))
        throw NonFinite("hmm: potentials contain NaN or +inf");
}

namespace {

void check_mass(const Mat& v, int t) {
    if (!(v.maxCoeff() > -std::numeric_limits<double>::infinity()))
        throw DegenerateDistribution("hmm: every state has zero mass at step " + std::to_string(t));
}

}  // namespace

template <class M>
HmmMarginals<M> forward_backward(const HmmPotentials<M>& p) {
    p.validate();
    const int K = p.K, T = p.Tk;
    std::vector<M> alpha, beta(T);
    alpha.reserve(T);
    alpha.push_back(p.log_pi0 + tr(slice(p.obs, 0, 0, 1, K)));
    check_mass(value(alpha[0]), 0);
    for (int t = 1; t < T; ++t) {
        M a = tr(slice(p.obs, t, 0, 1, K)) + tr(lse(p.log_pi + bcast_cols(alpha[t - 1], K), 0));
        check_mass(value(a), t);
        alpha.push_back(a);
    }
    beta[T - 1] = lift(p.log_pi0, Mat::Zero(K, 1));
    for (int t = T - 2; t >= 0; --t) {
        M next = slice(p.obs, t + 1, 0, 1, K) + tr(beta[t + 1]);
        beta[t] = lse(p.log_pi + bcast_rows(next, K), 1);
    }
    HmmMarginals<M> out;
    out.logZ = lse(alpha[T - 1], -1);
    std::vector<M> arows, brows, lrows, mrows;
    for (int t = 0; t < T; ++t) {
        M g = tr(alpha[t] + beta[t]);
        M lm = g - bcast_cols(lse(g, -1), K);
        arows.push_back(tr(alpha[t]));
        brows.push_back(tr(beta[t]));
        lrows.push_back(lm);
        mrows.push_back(exp(lm));
    }
    out.log_alpha = vcat(arows);
    out.log_beta = vcat(brows);
    out.log_marginal = vcat(lrows);
    out.marginal = vcat(mrows);
    return out;
}

template struct HmmPotentials<Mat>;
template struct HmmPotentials<ad::Var>;
template HmmMarginals<Mat> forward_backward(const HmmPotentials<Mat>&);
template HmmMarginals<ad::Var> forward_backward(const HmmPotentials<ad::Var>&);

}  // namespace svae::hmm
