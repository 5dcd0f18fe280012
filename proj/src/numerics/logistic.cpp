#include "gcav/logistic.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "gcav/errors.h"

namespace gcav {

namespace {

double softplus(double z) {
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

// Row-major copy of the feature matrix; the solver loop works on raw arrays.
struct Design {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> x;

    const double* row(std::size_t i) const { return x.data() + i * cols; }
};

void validate(const std::vector<DenseVector>& features, const std::vector<int>& labels) {
    if (features.size() != labels.size()) {
        throw DimensionMismatchError("train_logistic: " + std::to_string(features.size()) +
                                     " feature rows but " + std::to_string(labels.size()) +
                                     " labels");
    }
    std::size_t positives = 0;
    std::size_t negatives = 0;
    for (int y : labels) {
        if (y == 1) {
            ++positives;
        } else if (y == 0) {
            ++negatives;
        } else {
            throw DomainError("train_logistic: labels must be 0 or 1");
        }
    }
    if (positives < 2 || negatives < 2) {
        throw DegenerateDataError("train_logistic: need at least two samples per class (got " +
                                  std::to_string(positives) + " positive, " +
                                  std::to_string(negatives) + " negative)");
    }
    std::size_t dim = features.front().size();
    if (dim == 0) {
        throw DimensionMismatchError("train_logistic: zero-dimensional features");
    }
    for (const auto& f : features) {
        if (f.size() != dim) {
            throw DimensionMismatchError("train_logistic: ragged feature rows");
        }
    }
}

double objective(const Design& d, const std::vector<int>& labels, const std::vector<double>& w,
                 double b, double l2) {
    double loss = 0.0;
    for (std::size_t i = 0; i < d.rows; ++i) {
        const double* xi = d.row(i);
        double z = b;
        for (std::size_t j = 0; j < d.cols; ++j) {
            z += w[j] * xi[j];
        }
        loss += softplus(z) - labels[i] * z;
    }
    double reg = 0.0;
    for (double wj : w) {
        reg += wj * wj;
    }
    return loss / static_cast<double>(d.rows) + 0.5 * l2 * reg;
}

// Returns the gradient in (gw, gb).
void gradient(const Design& d, const std::vector<int>& labels, const std::vector<double>& w,
              double b, double l2, std::vector<double>& gw, double& gb) {
    std::fill(gw.begin(), gw.end(), 0.0);
    gb = 0.0;
    for (std::size_t i = 0; i < d.rows; ++i) {
        const double* xi = d.row(i);
        double z = b;
        for (std::size_t j = 0; j < d.cols; ++j) {
            z += w[j] * xi[j];
        }
        double r = sigmoid(z) - labels[i];
        for (std::size_t j = 0; j < d.cols; ++j) {
            gw[j] += r * xi[j];
        }
        gb += r;
    }
    double inv_n = 1.0 / static_cast<double>(d.rows);
    for (std::size_t j = 0; j < d.cols; ++j) {
        gw[j] = gw[j] * inv_n + l2 * w[j];
    }
    gb *= inv_n;
}

Design to_design(const std::vector<DenseVector>& features) {
    Design d;
    d.rows = features.size();
    d.cols = features.empty() ? 0 : features.front().size();
    d.x.reserve(d.rows * d.cols);
    for (const auto& f : features) {
        d.x.insert(d.x.end(), f.values().begin(), f.values().end());
    }
    return d;
}

}  // namespace

double logistic_objective(const std::vector<DenseVector>& features, const std::vector<int>& labels,
                          const DenseVector& w, double b, double l2) {
    Design d = to_design(features);
    return objective(d, labels, w.data(), b, l2);
}

LogisticGradient logistic_gradient(const std::vector<DenseVector>& features,
                                   const std::vector<int>& labels, const DenseVector& w, double b,
                                   double l2) {
    Design d = to_design(features);
    std::vector<double> gw(w.size());
    double gb = 0.0;
    gradient(d, labels, w.data(), b, l2, gw, gb);
    return {DenseVector(std::move(gw)), gb};
}

LogisticModel train_logistic(const std::vector<DenseVector>& features,
                             const std::vector<int>& labels, const LogisticSettings& settings) {
    validate(features, labels);
    Design d = to_design(features);
    const std::size_t n = d.rows;
    const std::size_t dim = d.cols;

    std::vector<double> mean(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            mean[j] += d.row(i)[j];
        }
    }
    for (double& m : mean) {
        m /= static_cast<double>(n);
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            double c = d.row(i)[j] - mean[j];
            sq += c * c;
        }
    }
    // Per-coordinate RMS spread; a constant design keeps scale 1.
    double scale = std::sqrt(sq / static_cast<double>(n * dim));
    if (!(scale > 0.0)) {
        scale = 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            d.x[i * dim + j] = (d.x[i * dim + j] - mean[j]) / scale;
        }
    }

    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    std::vector<double> gw(dim);
    double gb = 0.0;
    std::vector<double> trial(dim);
    double step = settings.learning_rate;
    double current = objective(d, labels, w, b, settings.l2);
    int iter = 0;
    for (; iter < settings.max_iterations; ++iter) {
        gradient(d, labels, w, b, settings.l2, gw, gb);
        double gmax = std::abs(gb);
        for (double g : gw) {
            gmax = std::max(gmax, std::abs(g));
        }
        if (gmax < settings.gradient_tolerance) {
            break;
        }
        for (int attempt = 0; attempt < 60; ++attempt) {
            for (std::size_t j = 0; j < dim; ++j) {
                trial[j] = w[j] - step * gw[j];
            }
            double trial_b = b - step * gb;
            double next = objective(d, labels, trial, trial_b, settings.l2);
            if (next <= current) {
                w.swap(trial);
                b = trial_b;
                current = next;
                break;
            }
            step *= 0.5;
        }
    }

    std::vector<double> raw_w(dim);
    double raw_b = b;
    for (std::size_t j = 0; j < dim; ++j) {
        raw_w[j] = w[j] / scale;
        raw_b -= raw_w[j] * mean[j];
    }

    LogisticModel model;
    model.w = DenseVector(std::move(raw_w));
    model.b = raw_b;
    model.iterations = iter;
    if (model.w.norm() == 0.0) {
        throw DegenerateDataError("train_logistic: features carry no signal (zero weight vector)");
    }
    model.train_accuracy = classification_accuracy(model, features, labels);
    return model;
}

double classification_accuracy(const LogisticModel& model, const std::vector<DenseVector>& features,
                               const std::vector<int>& labels) {
    if (features.empty()) {
        throw EmptyInputError("classification_accuracy: no samples");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        int predicted = model.logit_of(features[i]) >= 0.0 ? 1 : 0;
        if (predicted == labels[i]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(features.size());
}

double mean_log_loss(const LogisticModel& model, const std::vector<DenseVector>& features,
                     const std::vector<int>& labels) {
    if (features.empty()) {
        throw EmptyInputError("mean_log_loss: no samples");
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        double z = model.logit_of(features[i]);
        loss += softplus(z) - labels[i] * z;
    }
    return loss / static_cast<double>(features.size());
}

}  // namespace gcav
