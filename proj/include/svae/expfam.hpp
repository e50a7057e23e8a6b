#pragma once

// Exponential families used by the model: MVN, NIW, MNIW, Dirichlet, Categorical.
//
// Flat packing (matrices row-major, symmetric matrices stored full):
//   MVN         [h (n), Lambda (n x n)]                 eta = [S^-1 mu, -1/2 S^-1]
//   NIW         [A (n x n), b (n), c (1), d (1)]        eta = [S + l m m^T, l m, l, nu + n + 2]
//   MNIW        [A (n x n), B (n x m), C (m x m), d]    eta = [S + M V M^T, M V, V, nu + n + m + 1]
//   Dirichlet   [alpha (K)]                             t = log(pi), base measure 1 / prod(pi)
//   Categorical [logits (K)]                            t = one-hot
// Mean parameters use the same layout. NIW/MNIW statistics are
// [-1/2 Sigma^-1, Sigma^-1 X, -1/2 X^T Sigma^-1 X, -1/2 log|Sigma|] with X = mu or [A|b].

#include <string>

#include "svae/linalg.hpp"
#include "svae/tensor_ops.hpp"

namespace svae::expfam {

enum class Kind { MVN, NIW, MNIW, Dirichlet, Categorical };

struct FamilyDescriptor {
    Kind kind = Kind::MVN;
    int n = 0;  // MVN/NIW/MNIW dimension
    int m = 0;  // MNIW column count
    int K = 0;  // Dirichlet / Categorical size

    static FamilyDescriptor mvn(int n) { return {Kind::MVN, n, 0, 0}; }
    static FamilyDescriptor niw(int n) { return {Kind::NIW, n, 0, 0}; }
    static FamilyDescriptor mniw(int n, int m) { return {Kind::MNIW, n, m, 0}; }
    static FamilyDescriptor dirichlet(int K) { return {Kind::Dirichlet, 0, 0, K}; }
    static FamilyDescriptor categorical(int K) { return {Kind::Categorical, 0, 0, K}; }

    int size() const;
    void validate() const;
    std::string name() const;
    bool operator==(const FamilyDescriptor& o) const {
        return kind == o.kind && n == o.n && m == o.m && K == o.K;
    }
};

struct NaturalParams {
    FamilyDescriptor family;
    Vec data;
};

struct MeanParams {
    FamilyDescriptor family;
    Vec data;
};

struct Evaluated {
    NaturalParams eta;
    MeanParams mu;
    double log_partition = 0.0;
};

struct MvnCanonical {
    Vec mean;
    Mat cov;
};
struct NiwCanonical {
    Mat S;
    Vec m;
    double lambda = 1.0;
    double nu = 1.0;
};
struct MniwCanonical {
    Mat S;
    Mat M;
    Mat V;
    double nu = 1.0;
};

Evaluated mvn_eval(const Vec& mean, const Mat& cov);
Evaluated niw_eval(const NiwCanonical& c);
Evaluated mniw_eval(const MniwCanonical& c);
Evaluated dirichlet_eval(const Vec& alpha);
Evaluated categorical_eval(const Vec& logits);

NaturalParams mvn_natural(const MvnCanonical& c);
NaturalParams niw_natural(const NiwCanonical& c);
NaturalParams mniw_natural(const MniwCanonical& c);
MvnCanonical mvn_canonical(const NaturalParams& eta);
NiwCanonical niw_canonical(const NaturalParams& eta);
MniwCanonical mniw_canonical(const NaturalParams& eta);

// Checks the family invariants on a natural-parameter vector; throws DomainError / NotSPD.
void validate(const NaturalParams& eta);

double log_partition(const NaturalParams& eta);
MeanParams expected_stats(const NaturalParams& eta);
double kl_divergence(const NaturalParams& a, const NaturalParams& b);

// ---------------------------------------------------------------------------
// Block forms, generic over Mat / ad::Var.

template <class M>
struct NiwBlocks {
    M A, b, c, d;
};
template <class M>
struct MniwBlocks {
    M A, B, C, d;
};
template <class M>
struct MvnBlocks {
    M h, L;
};

template <class M> NiwBlocks<M> niw_unpack(const M& flat, int n);
template <class M> M niw_pack(const NiwBlocks<M>& b);
template <class M> MniwBlocks<M> mniw_unpack(const M& flat, int n, int m);
template <class M> M mniw_pack(const MniwBlocks<M>& b);
template <class M> MvnBlocks<M> mvn_unpack(const M& flat, int n);
template <class M> M mvn_pack(const MvnBlocks<M>& b);

// log partition (1 x 1) and expected statistics (flat column) of a flat eta.
template <class M> M log_partition_of(const FamilyDescriptor& f, const M& eta);
template <class M> M expected_stats_of(const FamilyDescriptor& f, const M& eta);

}  // namespace svae::expfam
