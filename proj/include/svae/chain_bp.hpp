#pragma once

// Information-form belief propagation on a Gaussian chain z_0 .. z_{T-1}.
//
// The unnormalized log density is
//   -1/2 z_0^T J0 z_0 + h0^T z_0
//   + sum_t [ -1/2 z_t^T J11 z_t + z_t^T J12 z_{t+1} - 1/2 z_{t+1}^T J22 z_{t+1} - h1^T z_t + h2^T z_{t+1} ]
//   + sum_t [ -1/2 z_t^T R_t z_t + r_t^T z_t ]
// and logZ is its log integral, including every (D/2) log 2pi.
// trans[t] couples z_t and z_{t+1}, so there are T-1 of them.

#include <cstdint>
#include <vector>

#include "svae/autodiff.hpp"
#include "svae/tensor_ops.hpp"

namespace svae::chain {

template <class M>
struct Transition {
    M h1, J11, J12, J22, h2;
};

template <class M>
struct ChainPotentials {
    int T = 0;
    int D = 0;
    M h0, J0;
    std::vector<Transition<M>> trans;  // T-1
    std::vector<M> r, R;               // T

    void validate() const;
};

template <class M>
struct FilterResult {
    std::vector<M> f, F;    // filtered, T
    std::vector<M> fp, Fp;  // fp[t] predicts z_{t+1}, T-1
    std::vector<M> P;       // F[t] + J11, T-1
    M logZ;
};

template <class M>
struct SmoothResult {
    std::vector<M> fs, Fs;   // T
    std::vector<M> C;        // T-1
    std::vector<M> Ez, Ezz;  // E[z_t], E[z_t z_t^T]
    std::vector<M> Ezz_next; // E[z_t z_{t+1}^T], T-1
};

template <class M> FilterResult<M> kalman_filter(const ChainPotentials<M>& p);
template <class M> SmoothResult<M> kalman_smooth(const ChainPotentials<M>& p, const FilterResult<M>& fr);

// Backward sampling; returns T x D. Deterministic in seed.
Mat sample_posterior(const ChainPotentials<Mat>& p, const FilterResult<Mat>& fr, std::uint64_t seed);

// Covariances Fs^-1 and Cov(z_t, z_{t+1}) from a smoother result.
std::vector<Mat> marginal_covariances(const SmoothResult<Mat>& s);
std::vector<Mat> cross_covariances(const SmoothResult<Mat>& s);

// Lift plain potentials onto a tape as constants.
ChainPotentials<ad::Var> to_tape(ad::Tape& tape, const ChainPotentials<Mat>& p);
ChainPotentials<Mat> values(const ChainPotentials<ad::Var>& p);

}  // namespace svae::chain
