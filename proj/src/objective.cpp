#include "svae/objective.hpp"

#include <cmath>

namespace svae::obj {

using ad::Var;

double prior_kl(const std::vector<expfam::NaturalParams>& eta, const std::vector<expfam::NaturalParams>& eta0) {
    if (eta.size() != eta0.size()) throw FamilyMismatch("prior_kl: factor counts differ");
    double s = 0.0;
    for (size_t i = 0; i < eta.size(); ++i) {
        if (!(eta[i].family == eta0[i].family))
            throw FamilyMismatch("prior_kl: factor " + std::to_string(i) + " is " + eta[i].family.name() + " vs " +
                                 eta0[i].family.name());
        s += expfam::kl_divergence(eta[i], eta0[i]);
    }
    return s;
}

template <class M>
M prior_kl_of(const std::vector<expfam::FamilyDescriptor>& fams, const std::vector<M>& eta, const std::vector<M>& mu,
              const std::vector<Vec>& eta0) {
    if (eta.size() != fams.size() || mu.size() != fams.size() || eta0.size() != fams.size())
        throw FamilyMismatch("prior_kl_of: factor counts differ");
    M total = lift(eta[0], 0.0);
    for (size_t i = 0; i < fams.size(); ++i) {
        const double logz0 = expfam::log_partition(expfam::NaturalParams{fams[i], eta0[i]});
        M d = eta[i] - lift(eta[i], Mat(eta0[i]));
        total = add_scalar(total + dot(d, mu[i]) - expfam::log_partition_of(fams[i], eta[i]), logz0);
    }
    return total;
}

template <class M>
M recog_inner(const mf::Recognition<M>& rec, const chain::SmoothResult<M>& mu) {
    std::vector<M> ez, dz;
    for (size_t t = 0; t < mu.Ez.size(); ++t) {
        ez.push_back(tr(mu.Ez[t]));
        dz.push_back(tr(diag_part(mu.Ezz[t])));
    }
    return dot(rec.r, vcat(ez)) - dot(rec.R_diag, vcat(dz)) * 0.5;
}

template <class M>
M local_kl_continuous(const mf::GlobalExpectedStats<M>& g, const mf::Recognition<M>& rec, const mf::LocalState<M>& s) {
    const int Tk = static_cast<int>(value(s.W).rows());
    M S = mf::stat_rows(s.mu_z, g.D);
    M mfk = matmul(S, tr(g.theta)) - bcast_rows(tr(g.trans_logZ), Tk);
    // <omega_z, mu_z> minus the initial-state part, which cancels against the prior
    M inner = recog_inner(rec, s.mu_z) + sum(cmul(s.W, S));
    return inner - s.filt.logZ + g.init_logZ - sum(cmul(s.q.marginal, mfk));
}

template <class M>
M local_kl_discrete(const mf::LocalState<M>& s) {
    return sum(cmul(s.omega_k.obs, s.q.marginal)) - s.q.logZ;
}

template <class M>
M local_surrogate(const mf::GlobalExpectedStats<M>& g, const mf::Recognition<M>& rec, const mf::LocalState<M>& s) {
    return recog_inner(rec, s.mu_z) - local_kl_continuous(g, rec, s) - local_kl_discrete(s);
}

double surrogate_loss(double recog, double prior, double kl_c, double kl_d) { return recog - prior - kl_c - kl_d; }

template <class M>
M marginal_sample(const chain::SmoothResult<M>& mu, const Mat& eps) {
    const int T = static_cast<int>(mu.Ez.size());
    if (T == 0) throw ShapeMismatch("marginal_sample: empty chain");
    const int D = static_cast<int>(value(mu.Ez[0]).rows());
    if (eps.rows() != T || eps.cols() != D) throw ShapeMismatch("marginal_sample: eps must be T x D");
    std::vector<M> rows;
    rows.reserve(T);
    for (int t = 0; t < T; ++t) {
        M L = chol(mu.Fs[t]);
        M z = mu.Ez[t] + solve_lt(L, Mat(eps.row(t).transpose()));
        rows.push_back(tr(z));
    }
    return vcat(rows);
}

namespace {

Mat row_weights(const Mat& weight, int T) {
    if (weight.size() == 0) return Mat::Ones(T, 1);
    if (weight.rows() != T || weight.cols() != 1) throw ShapeMismatch("likelihood weight must be T x 1");
    return weight;
}

}  // namespace

template <class M>
M gaussian_loglik(const Mat& x, const M& mean, const M& log_var, const Mat& weight) {
    const int T = static_cast<int>(x.rows()), Dx = static_cast<int>(x.cols());
    if (value(mean).rows() != T || value(mean).cols() != Dx) throw ShapeMismatch("gaussian_loglik: mean shape");
    if (value(log_var).rows() != 1 || value(log_var).cols() != Dx) throw ShapeMismatch("gaussian_loglik: log_var shape");
    const Mat w = row_weights(weight, T);
    const double n = w.sum();
    M diff = lift(mean, x) - mean;
    M scaled = cmul(cmul(diff, diff), bcast_rows(M(exp(log_var * -1.0)), T));
    M quad = sum(cmul(scaled, lift(mean, Mat(w.replicate(1, Dx)))));
    return add_scalar(quad * -0.5 - sum(log_var) * (0.5 * n), -0.5 * n * Dx * kLog2Pi);
}

template <class M>
M gamma_loglik(const Mat& x, const M& rate, const Mat& weight) {
    const int T = static_cast<int>(x.rows()), Dx = static_cast<int>(x.cols());
    if (value(rate).rows() != T || value(rate).cols() != Dx) throw ShapeMismatch("gamma_loglik: rate shape");
    if ((x.array() <= 0).any()) throw DomainError("gamma_loglik: observations must be positive");
    const Mat w = row_weights(weight, T).replicate(1, Dx);
    // log p = a log(rate) + (a - 1) log x - rate x - lgamma(a), a = 2
    M per = log(rate) * 2.0 - cmul(rate, lift(rate, x));
    return add_scalar(sum(cmul(per, lift(rate, w))), (w.array() * x.array().log()).sum());
}

template <class M>
M reconstruction(const std::function<M(const M&)>& loglik, const chain::SmoothResult<M>& mu,
                 const std::vector<Mat>& eps) {
    if (eps.empty()) throw DomainError("reconstruction: need at least one sample");
    M total = loglik(marginal_sample(mu, eps[0]));
    for (size_t s = 1; s < eps.size(); ++s) total = total + loglik(marginal_sample(mu, eps[s]));
    return total * (1.0 / eps.size());
}

#define SVAE_OBJ_INSTANTIATE(M)                                                                                       \
    template M prior_kl_of(const std::vector<expfam::FamilyDescriptor>&, const std::vector<M>&,                      \
                           const std::vector<M>&, const std::vector<Vec>&);                                          \
    template M recog_inner(const mf::Recognition<M>&, const chain::SmoothResult<M>&);                                \
    template M local_kl_continuous(const mf::GlobalExpectedStats<M>&, const mf::Recognition<M>&,                     \
                                   const mf::LocalState<M>&);                                                        \
    template M local_kl_discrete(const mf::LocalState<M>&);                                                          \
    template M local_surrogate(const mf::GlobalExpectedStats<M>&, const mf::Recognition<M>&, const mf::LocalState<M>&); \
    template M marginal_sample(const chain::SmoothResult<M>&, const Mat&);                                           \
    template M gaussian_loglik(const Mat&, const M&, const M&, const Mat&);                                          \
    template M gamma_loglik(const Mat&, const M&, const Mat&);                                                       \
    template M reconstruction(const std::function<M(const M&)>&, const chain::SmoothResult<M>&,                      \
                              const std::vector<Mat>&);

SVAE_OBJ_INSTANTIATE(Mat)
SVAE_OBJ_INSTANTIATE(Var)

}  // namespace svae::obj
