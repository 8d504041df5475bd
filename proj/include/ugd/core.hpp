#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ugd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidRange : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class IndexOutOfRange : public Error {
public:
    using Error::Error;
};

/// Raised when a formula would divide by sqrt(alpha) or sqrt(1 - alpha) at 0.
class DegenerateSchedule : public Error {
public:
    using Error::Error;
};

/// NaN or inf encountered in a loss, a guided prediction or a sampler state.
class NumericalError : public Error {
public:
    using Error::Error;
};

class MissingJacobian : public Error {
public:
    using Error::Error;
};

class GradientUnavailable : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

using Rng = std::mt19937_64;

inline void require_dim(const Vector& v, Eigen::Index d, const char* what) {
    if (v.size() != d) {
        throw DimensionMismatch(std::string(what) + ": expected dimension " + std::to_string(d) +
                                ", got " + std::to_string(v.size()));
    }
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline Vector standard_normal(Eigen::Index d, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector out(d);
    for (Eigen::Index i = 0; i < d; ++i) out[i] = normal(rng);
    return out;
}

/// SplitMix64 finalizer. Used to derive independent per-chain seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Stream for chain `index` of a run seeded with `seed`:
/// mt19937_64 seeded with splitmix64(seed ^ splitmix64(index + 1)).
inline Rng chain_rng(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(seed ^ splitmix64(index + 1)));
}

/// log(sum(exp(x))) without overflow.
inline double log_sum_exp(const Vector& x) {
    const double top = x.maxCoeff();
    if (!std::isfinite(top)) return top;
    return top + std::log((x.array() - top).exp().sum());
}

/// Normalized exp(x - logsumexp(x)).
inline Vector softmax(const Vector& x) {
    const double top = x.maxCoeff();
    Vector e = (x.array() - top).exp().matrix();
    return e / e.sum();
}

}  // namespace ugd
