#pragma once

// Log-space forward-backward for a discrete chain k_0 .. k_{Tk-1} with
// expected-log initial / transition probabilities and per-step potentials.

#include "svae/autodiff.hpp"
#include "svae/tensor_ops.hpp"

namespace svae::hmm {

template <class M>
struct HmmPotentials {
    int K = 0;
    int Tk = 0;
    M log_pi0;  // K x 1
    M log_pi;   // K x K, row = from
    M obs;      // Tk x K

    void validate() const;
};

template <class M>
struct HmmMarginals {
    M log_alpha, log_beta;  // Tk x K
    M log_marginal;         // Tk x K, normalized per row
    M marginal;             // Tk x K
    M logZ;                 // 1 x 1
};

// Throws DegenerateDistribution when every state at some step has -inf mass.
template <class M> HmmMarginals<M> forward_backward(const HmmPotentials<M>& p);

}  // namespace svae::hmm
