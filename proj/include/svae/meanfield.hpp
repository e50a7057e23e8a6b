#pragma once

// Structured mean field between the Gaussian chain z_0..z_{T-1} and the
// discrete chain k_0..k_{T-2}; k_t selects the dynamics of (z_t, z_{t+1}).
//
// Per-state transition parameters are the rows of theta (K x P), P = 2D + 3D^2,
// laid out [h1, J11, J12, J22, h2] with matrices row-major. The matching
// pairwise statistic is
//   S_t = [-E z_t, -1/2 E z_t z_t', E z_t z_{t+1}', -1/2 E z_{t+1} z_{t+1}', E z_{t+1}]
// so <theta_k, S_t> - trans_logZ_k is the expected transition log density.
//
// A flat omega is [W (Tk x P) row-major, obs (Tk x K) row-major], where row t of W
// holds the continuous transition block and obs the discrete potentials.

#include <vector>

#include "svae/chain_bp.hpp"
#include "svae/expfam.hpp"
#include "svae/hmm_bp.hpp"
#include "svae/thread_pool.hpp"

namespace svae::mf {

// Global factor list: NIW(D) for the initial state, K MNIW(D, D+1) over X = [A|b],
// and for K > 1 a Dirichlet(K) for pi0 followed by one per row of pi.
struct GlobalLayout {
    int D = 0;
    int K = 1;
    int P() const { return 2 * D + 3 * D * D; }
    std::vector<expfam::FamilyDescriptor> families() const;
};

template <class M>
struct GlobalExpectedStats {
    int D = 0, K = 1;
    M J0, h0;       // initial-state potentials
    M init_logZ;    // E log Z of the initial-state factor, 1 x 1
    M theta;        // K x P
    M trans_logZ;   // K x 1
    M log_pi0;      // K x 1, zero when K = 1
    M log_pi;       // K x K
};

template <class M>
GlobalExpectedStats<M> global_expected_stats(const GlobalLayout& layout, const std::vector<M>& mu);

template <class M>
struct Recognition {
    M r;       // T x D
    M R_diag;  // T x D
};

// Zero potentials at masked steps (mask[t] true = missing).
Recognition<Mat> apply_mask(Recognition<Mat> rec, const std::vector<bool>& mask);

template <class M>
struct LocalState {
    M W;  // Tk x P, continuous transition rows
    chain::ChainPotentials<M> omega_z;
    chain::FilterResult<M> filt;
    chain::SmoothResult<M> mu_z;
    hmm::HmmPotentials<M> omega_k;
    hmm::HmmMarginals<M> q;
};

struct BpOptions {
    bool parallel = false;
    ThreadPool* pool = nullptr;
};

template <class M>
chain::Transition<M> unpack_transition(const M& row, int D);

// Tk x P statistic rows S_t.
template <class M>
M stat_rows(const chain::SmoothResult<M>& mu, int D);

template <class M>
chain::ChainPotentials<M> chain_from_rows(const GlobalExpectedStats<M>& g, const M& W, const Recognition<M>& rec);

template <class M>
chain::ChainPotentials<M> mf_to_continuous(const GlobalExpectedStats<M>& g, const M& q, const Recognition<M>& rec);

template <class M>
hmm::HmmPotentials<M> mf_to_discrete(const GlobalExpectedStats<M>& g, const chain::SmoothResult<M>& mu);

// BP on both blocks for fixed (W, obs).
template <class M>
LocalState<M> solve_local(const GlobalExpectedStats<M>& g, const Recognition<M>& rec, const M& W, const M& obs,
                          const BpOptions& bp = {});

// One Gauss-Seidel sweep (z block, then k block) starting from discrete marginals q.
template <class M>
LocalState<M> sweep(const GlobalExpectedStats<M>& g, const Recognition<M>& rec, const M& q, const BpOptions& bp = {});

template <class M>
M uniform_marginals(const GlobalExpectedStats<M>& g, int T);

template <class M>
M flatten_omega(const M& W, const M& obs);

template <class M>
void unflatten_omega(const M& omega, int T, int D, int K, M& W, M& obs);

// omega - Phi(omega), with both BP passes and both MF maps applied to the same omega.
template <class M>
M g_residual(const M& omega, const GlobalExpectedStats<M>& g, const Recognition<M>& rec);

struct MfOptions {
    int max_iters = 100;
    double tol = 1e-10;           // absolute surrogate change; 0 disables
    double residual_tol = 1e-10;  // infinity norm of g; 0 disables
    BpOptions bp;
    double prior_kl = 0.0;        // subtracted from every recorded surrogate
};

struct MeanFieldState {
    LocalState<Mat> local;
    std::vector<double> trace;  // surrogate after each sweep
    bool converged = false;
    int iters = 0;
    double residual = 0.0;

    Mat omega() const { return flatten_omega(local.W, local.omega_k.obs); }
};

// Starts from q_init, or uniform discrete marginals when empty.
MeanFieldState block_update(const GlobalExpectedStats<Mat>& g, const Recognition<Mat>& rec, const MfOptions& opt,
                            const Mat& q_init = Mat());

}  // namespace svae::mf
