#include "gcav/numerics.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "gcav/errors.h"

namespace gcav {

namespace {

void check_finite(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw DomainError("DenseVector: non-finite entry at index " + std::to_string(i));
        }
    }
}

}  // namespace

DenseVector::DenseVector(std::vector<double> values) : values_(std::move(values)) {
    check_finite(values_);
}

DenseVector::DenseVector(std::initializer_list<double> values) : values_(values) {
    check_finite(values_);
}

DenseVector DenseVector::zeros(std::size_t dim) {
    return DenseVector(std::vector<double>(dim, 0.0));
}

void DenseVector::check_same_dim(const DenseVector& other) const {
    if (other.size() != size()) {
        throw DimensionMismatchError("DenseVector: dimension " + std::to_string(size()) +
                                     " vs " + std::to_string(other.size()));
    }
}

double DenseVector::dot(const DenseVector& other) const {
    check_same_dim(other);
    double acc = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        acc += values_[i] * other.values_[i];
    }
    return acc;
}

double DenseVector::norm() const {
    // Scaled accumulation so that huge entries do not overflow the square.
    double scale = max_abs();
    if (scale == 0.0) {
        return 0.0;
    }
    double acc = 0.0;
    for (double v : values_) {
        double r = v / scale;
        acc += r * r;
    }
    return scale * std::sqrt(acc);
}

double DenseVector::max_abs() const {
    double m = 0.0;
    for (double v : values_) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

DenseVector DenseVector::operator+(const DenseVector& other) const {
    return axpy(1.0, other);
}

DenseVector DenseVector::operator-(const DenseVector& other) const {
    return axpy(-1.0, other);
}

DenseVector DenseVector::operator*(double scale) const {
    std::vector<double> out(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) {
        out[i] = values_[i] * scale;
    }
    return DenseVector(std::move(out));
}

DenseVector DenseVector::operator-() const {
    return *this * -1.0;
}

DenseVector DenseVector::axpy(double scale, const DenseVector& other) const {
    check_same_dim(other);
    std::vector<double> out(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) {
        out[i] = values_[i] + scale * other.values_[i];
    }
    return DenseVector(std::move(out));
}

double cosine_similarity(const DenseVector& a, const DenseVector& b) {
    double na = a.norm();
    double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw DegenerateError("cosine_similarity: zero vector");
    }
    return a.dot(b) / (na * nb);
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double ex = std::exp(x);
    return ex / (1.0 + ex);
}

double logit(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw DomainError("logit: probability must lie strictly inside (0, 1), got " +
                          std::to_string(p));
    }
    return std::log(p) - std::log1p(-p);
}

double clamp_probability(double p) {
    if (std::isnan(p)) {
        throw DomainError("clamp_probability: NaN");
    }
    return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() {
    return engine_();
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) {
        throw DomainError("Rng::below: empty range");
    }
    // Rejection sampling keeps the result unbiased.
    std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

double Rng::normal(double mean, double stddev) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + stddev * spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return mean + stddev * radius * std::cos(angle);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    // splitmix64 finalizer
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace gcav
