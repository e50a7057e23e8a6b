#pragma once

// ELBO pieces for q(theta) q(z) q(k).
//
//   elbo      = reconstruction - prior_kl - local_kl_continuous - local_kl_discrete
//   surrogate = <lambda, E t(z)> - prior_kl - local_kl_continuous - local_kl_discrete
//
// The local KL is E_q(theta) KL(q(z) q(k) || p(z, k | theta)) and is split so that
//   continuous = <omega_z, mu_z> - logZ(omega_z) - (<theta_init, mu_0> - E logZ_init)
//                - sum_t <q_t, MF_k(mu_z)_t>
//   discrete   = <obs, q> - logZ(omega_k)
// which holds for any omega, not only at the mean-field fixed point. At
// omega_z = MF_z(q) the continuous part equals
//   <lambda, E t(z)> - logZ(omega_z) + E logZ_init + sum_t <q_t, trans_logZ>.

#include <functional>

#include "svae/meanfield.hpp"

namespace svae::obj {

struct LossBreakdown {
    double prior_kl = 0.0;
    double local_kl_continuous = 0.0;
    double local_kl_discrete = 0.0;
    double reconstruction = 0.0;
    double elbo = 0.0;
    double surrogate = 0.0;
};

// Sum of per-factor KL(eta || eta0).
double prior_kl(const std::vector<expfam::NaturalParams>& eta, const std::vector<expfam::NaturalParams>& eta0);

// Same value on a tape: sum_i <eta_i - eta0_i, mu_i> - logZ(eta_i) + logZ(eta0_i).
// mu_i is passed separately so a straight-through mean map can be used.
template <class M>
M prior_kl_of(const std::vector<expfam::FamilyDescriptor>& fams, const std::vector<M>& eta,
              const std::vector<M>& mu, const std::vector<Vec>& eta0);

// <lambda, E t(z)> with diagonal recognition precisions.
template <class M>
M recog_inner(const mf::Recognition<M>& rec, const chain::SmoothResult<M>& mu);

template <class M>
M local_kl_continuous(const mf::GlobalExpectedStats<M>& g, const mf::Recognition<M>& rec,
                      const mf::LocalState<M>& s);

template <class M>
M local_kl_discrete(const mf::LocalState<M>& s);

// <lambda, E t(z)> - logZ(omega) + E logZ(t(theta)), for omega the surrogate-optimal chain.
inline double local_kl_structured(double recog_inner, double logZ_omega, double expected_prior_logZ) {
    return recog_inner - logZ_omega + expected_prior_logZ;
}

// Surrogate without the prior term.
template <class M>
M local_surrogate(const mf::GlobalExpectedStats<M>& g, const mf::Recognition<M>& rec, const mf::LocalState<M>& s);

double surrogate_loss(double recog_inner, double prior_kl, double local_kl_continuous, double local_kl_discrete);

// z_t = E z_t + L_t^-T eps_t with Fs_t = L_t L_t'. eps is T x D; returns T x D.
template <class M>
M marginal_sample(const chain::SmoothResult<M>& mu, const Mat& eps);

// Diagonal Gaussian log density summed over observed rows.
// mean is T x Dx, log_var 1 x Dx; weight (T x 1, optional) zeroes masked steps.
template <class M>
M gaussian_loglik(const Mat& x, const M& mean, const M& log_var, const Mat& weight = Mat());

// Gamma(concentration 2, rate) log density summed over entries.
template <class M>
M gamma_loglik(const Mat& x, const M& rate, const Mat& weight = Mat());

// Mean over samples of loglik(z_s).
template <class M>
M reconstruction(const std::function<M(const M&)>& loglik, const chain::SmoothResult<M>& mu,
                 const std::vector<Mat>& eps);

}  // namespace svae::obj
