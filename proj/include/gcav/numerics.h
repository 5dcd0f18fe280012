#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace gcav {

// Fixed-dimension vector of finite reals. Every binary operation checks that
// both operands have the same dimension.
class DenseVector {
public:
    DenseVector() = default;
    explicit DenseVector(std::vector<double> values);
    DenseVector(std::initializer_list<double> values);

    static DenseVector zeros(std::size_t dim);

    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const { return values_; }
    const std::vector<double>& data() const { return values_; }

    double dot(const DenseVector& other) const;
    double norm() const;
    double max_abs() const;

    DenseVector operator+(const DenseVector& other) const;
    DenseVector operator-(const DenseVector& other) const;
    DenseVector operator*(double scale) const;
    DenseVector operator-() const;
    // this + scale * other
    DenseVector axpy(double scale, const DenseVector& other) const;

    bool operator==(const DenseVector& other) const = default;

private:
    void check_same_dim(const DenseVector& other) const;

    std::vector<double> values_;
};

inline DenseVector operator*(double scale, const DenseVector& v) { return v * scale; }

double cosine_similarity(const DenseVector& a, const DenseVector& b);

// Logistic function, saturating without overflow for any finite input.
double sigmoid(double x);

// Inverse of sigmoid. Throws DomainError unless 0 < p < 1.
double logit(double p);

// Lower clamp for target probabilities fed to logit.
inline constexpr double kProbabilityEpsilon = 1e-6;

double clamp_probability(double p);

// Seeded pseudo-random source with platform-independent output: the
// mt19937_64 bit stream is fixed by the standard, and the mapping to doubles
// is done here instead of through the implementation-defined distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // Uniform on [0, 1).
    double uniform();
    // Uniform integer on [0, n).
    std::size_t below(std::size_t n);
    double normal(double mean = 0.0, double stddev = 1.0);

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Mixes a base seed with a stream tag so that independent consumers of one
// run seed never share a random stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace gcav
