#pragma once

// Bijections between unconstrained parameters and constrained (natural) parameters.
//
// SPDCorrelationCholesky(n) takes [s (n), x (n(n-1)/2)] with x the strictly lower
// Cholesky entries in row-major order. Row i of the correlation factor is
// [x_i0 .. x_i,i-1, 1] scaled to unit length, R = L L^T, sigma = softplus(s),
// and S = diag(sigma) R diag(sigma). Output is S flattened row-major.

#include <memory>

#include "svae/autodiff.hpp"
#include "svae/expfam.hpp"

namespace svae::param {

enum class BijKind { Identity, Softplus, ShiftedSoftplus, SimplexSoftmax, SPDCorrelationCholesky };

struct Bijector {
    BijKind kind = BijKind::Identity;
    int dim = 0;         // Identity/Softplus: length; Simplex: K; SPD: n
    double shift = 0.0;  // ShiftedSoftplus

    static Bijector identity(int d) { return {BijKind::Identity, d, 0.0}; }
    static Bijector softplus(int d) { return {BijKind::Softplus, d, 0.0}; }
    static Bijector shifted_softplus(int d, double shift) { return {BijKind::ShiftedSoftplus, d, shift}; }
    static Bijector simplex(int K) { return {BijKind::SimplexSoftmax, K, 0.0}; }
    static Bijector spd(int n) { return {BijKind::SPDCorrelationCholesky, n, 0.0}; }

    int in_size() const;
    int out_size() const;
};

Vec forward(const Bijector& b, const Vec& x);
Vec inverse(const Bijector& b, const Vec& y);
Vec jvp_forward(const Bijector& b, const Vec& x, const Vec& v);
Vec jvp_inverse(const Bijector& b, const Vec& y, const Vec& v);

constexpr double kSimplexFloor = 1e-300;
constexpr double kSpdMinEig = 1e-12;

// Composite map from unconstrained parameters to a family's natural parameters.
//   NIW:       [spd(S), m, softplus(lambda), shifted_softplus(nu, n-1)]
//   MNIW:      [spd(S), M (row-major), spd(V), shifted_softplus(nu, n-1)]
//   Dirichlet: softplus(alpha)
//   Identity:  natural parameters directly
struct FamilyBijector {
    enum class Kind { Identity, NIW, MNIW, Dirichlet };
    Kind kind = Kind::Identity;
    expfam::FamilyDescriptor family;

    static FamilyBijector identity(const expfam::FamilyDescriptor& f) { return {Kind::Identity, f}; }
    static FamilyBijector niw(int n) { return {Kind::NIW, expfam::FamilyDescriptor::niw(n)}; }
    static FamilyBijector mniw(int n, int m) { return {Kind::MNIW, expfam::FamilyDescriptor::mniw(n, m)}; }
    static FamilyBijector dirichlet(int K) { return {Kind::Dirichlet, expfam::FamilyDescriptor::dirichlet(K)}; }

    int in_size() const;
    int out_size() const { return family.size(); }
};

Vec forward(const FamilyBijector& b, const Vec& x);
Vec inverse(const FamilyBijector& b, const Vec& eta);
Vec jvp_forward(const FamilyBijector& b, const Vec& x, const Vec& v);
Vec jvp_inverse(const FamilyBijector& b, const Vec& eta, const Vec& v);
// Dense Jacobian d forward / d x (columns from jvp_forward).
Mat jacobian(const FamilyBijector& b, const Vec& x);

// Tape nodes for the map. bijector_node differentiates the true forward map;
// natgrad_map replaces its reverse rule by jvp_inverse at the output.
ad::Var bijector_node(const FamilyBijector& b, const ad::Var& x);
ad::Var natgrad_map(const FamilyBijector& b, const ad::Var& x);

}  // namespace svae::param
