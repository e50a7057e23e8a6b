#pragma once

#include "svae/linalg.hpp"

namespace svae {

// psi(x) for x > 0: recurrence up to x >= 10, then the asymptotic series.
double digamma(double x);
// psi'(x) for x > 0.
double trigamma(double x);
// log|Gamma(x)|, reentrant.
double lgamma_r(double x);
// log Gamma_n(x) = n(n-1)/4 log(pi) + sum_{j=1..n} log Gamma(x + (1-j)/2), x > (n-1)/2.
double log_multivariate_gamma(int n, double x);
double logsumexp(const Eigen::Ref<const Vec>& v);
Vec softmax(const Eigen::Ref<const Vec>& v);

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
// inverse of softplus, y > 0
inline double softplus_inv(double y) { return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y)); }

}  // namespace svae
