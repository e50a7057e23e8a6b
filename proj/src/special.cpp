#include "svae/special.hpp"

#include <cmath>
#include <limits>

namespace svae {

double digamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("digamma: argument must be positive and finite");
    double acc = 0.0;
    while (x < 10.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double r = 1.0 / (x * x);
    // Bernoulli terms B_2k / (2k x^2k), k = 1..7
    const double series =
        r * (1.0 / 12 - r * (1.0 / 120 - r * (1.0 / 252 - r * (1.0 / 240 - r * (1.0 / 132 - r * (691.0 / 32760 - r * (1.0 / 12)))))));
    return acc + std::log(x) - 0.5 / x - series;
}

double trigamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("trigamma: argument must be positive and finite");
    double acc = 0.0;
    while (x < 10.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    const double r = 1.0 / (x * x);
    const double series =
        1.0 / 6 - r * (1.0 / 30 - r * (1.0 / 42 - r * (1.0 / 30 - r * (5.0 / 66 - r * (691.0 / 2730 - r * (7.0 / 6))))));
    return acc + 1.0 / x + 0.5 * r + series * r / x;
}

double lgamma_r(double x) {
    int sign = 0;
    return ::lgamma_r(x, &sign);
}

double log_multivariate_gamma(int n, double x) {
    if (n < 1) throw DomainError("log_multivariate_gamma: n must be >= 1");
    if (!(x > 0.5 * (n - 1))) throw DomainError("log_multivariate_gamma: x must exceed (n-1)/2");
    double s = 0.25 * n * (n - 1) * std::log(M_PI);
    for (int j = 1; j <= n; ++j) s += lgamma_r(x + 0.5 * (1 - j));
    return s;
}

double logsumexp(const Eigen::Ref<const Vec>& v) {
    if (v.size() == 0) return -std::numeric_limits<double>::infinity();
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

Vec softmax(const Eigen::Ref<const Vec>& v) {
    const double m = v.maxCoeff();
    Vec e = (v.array() - m).exp();
    return e / e.sum();
}

}  // namespace svae
