#pragma once

// Gradients through the inner mean-field optimization.
//
// Unrolled: the sweeps are recorded on the caller's tape and differentiated end to end.
// Implicit: omega* enters the tape as a leaf. Its cotangent c is pushed through
// (dg/domega)^-T by Richardson iteration on a separate tape holding g_residual at
// omega*, then contracted with -dg/d(inputs) and seeded back into the caller's tape.

#include <functional>

#include "svae/meanfield.hpp"
#include "svae/objective.hpp"
#include "svae/param_space.hpp"

namespace svae::grad {

using ad::Var;

enum class GradKind { Unrolled, ImplicitFixedJ, ImplicitCapped, ImplicitCappedThreshold, NoSolve };

struct GradMode {
    GradKind kind = GradKind::ImplicitCappedThreshold;
    int J = 0;                  // ImplicitFixedJ
    double residual_tol = 1e-6; // ImplicitCappedThreshold

    static GradMode unrolled() { return {GradKind::Unrolled, 0, 1e-6}; }
    static GradMode fixed_j(int J) { return {GradKind::ImplicitFixedJ, J, 1e-6}; }
    static GradMode capped() { return {GradKind::ImplicitCapped, 0, 1e-6}; }
    static GradMode capped_threshold(double tol = 1e-6) { return {GradKind::ImplicitCappedThreshold, 0, tol}; }
    static GradMode no_solve() { return {GradKind::NoSolve, 0, 1e-6}; }
    void validate() const;
};

GradMode parse_grad_mode(const std::string& s);
std::string to_string(const GradMode& m);

struct RichardsonStats {
    int iters = 0;
    double norm = 0.0;  // infinity norm of the final iterate
};

// sum_{j=0}^{J} (I - dg/domega)^{jT} rhs, as u <- rhs + u - vjp_g(u).
// Throws NonFinite if an iterate is non-finite or exceeds 1e6 times the rhs norm.
Vec richardson_solve(const std::function<Vec(const Vec&)>& vjp_g, const Vec& rhs, int J,
                     RichardsonStats* stats = nullptr);

struct InnerInputs {
    mf::GlobalExpectedStats<Var> g;
    mf::Recognition<Var> rec;
};

// Objective evaluated on a local state that lives on the caller's tape.
using LocalObjective = std::function<Var(const InnerInputs&, const mf::LocalState<Var>&)>;

struct EstimateOptions {
    GradMode mode;
    mf::MfOptions mf;             // max_iters is L
    bool drop_correction = false; // treat omega as a constant (biased estimator)
    Mat q_init;                   // empty = uniform
};

struct Estimate {
    double value = 0.0;
    std::vector<Mat> grads;  // one per requested node
    int sweeps = 0;
    double residual = 0.0;   // infinity norm of g at the endpoint
    int richardson_iters = 0;
    bool fell_back = false;  // thresholded mode returned the No-Solve answer
    int stored_states = 0;   // inner states kept alive for the backward pass
    mf::MeanFieldState state;  // plain copy of the endpoint
};

// Gradient of obj with respect to each node in wrt (any node of the tape).
Estimate estimate(ad::Tape& tape, const InnerInputs& in, const LocalObjective& obj, const std::vector<Var>& wrt,
                  const EstimateOptions& opt);

// Surrogate objective <lambda, E t(z)> - local KL (no prior term).
Var local_surrogate_objective(const InnerInputs& in, const mf::LocalState<Var>& s);

// Global parameters on a tape. Plain: eta = f(eta_tilde), mu = grad logZ(eta).
// Natural: eta = natgrad_map(eta_tilde), mu = straight_through(eta), so the
// cotangent reaching eta_tilde is (d eta_tilde / d eta) grad_mu.
enum class GlobalGrad { Plain, Natural };

struct GlobalNodes {
    std::vector<Var> eta_tilde, eta, mu;
    mf::GlobalExpectedStats<Var> g;
};

GlobalNodes build_globals(ad::Tape& tape, const mf::GlobalLayout& layout,
                          const std::vector<param::FamilyBijector>& bij, const std::vector<Vec>& eta_tilde,
                          GlobalGrad kind);

}  // namespace svae::grad
