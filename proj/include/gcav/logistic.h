#pragma once

#include <vector>

#include "gcav/numerics.h"

namespace gcav {

struct LogisticSettings {
    double learning_rate = 0.1;
    double l2 = 1e-3;
    int max_iterations = 2000;
    // Stop once the infinity norm of the full gradient drops below this.
    double gradient_tolerance = 1e-6;
};

// Linear probe P(y = 1 | x) = sigmoid(w . x + b).
struct LogisticModel {
    DenseVector w;
    double b = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    // Mean cross-entropy on the held-out split; ranks probes whose accuracies tie.
    double test_log_loss = 0.0;
    int iterations = 0;

    double logit_of(const DenseVector& x) const { return w.dot(x) + b; }
    double probability(const DenseVector& x) const { return sigmoid(logit_of(x)); }
};

// Regularized mean cross-entropy:
//   (1/n) sum_i [log(1 + exp(z_i)) - y_i z_i] + (l2 / 2) ||w||^2,  z_i = w . x_i + b
// The bias is not regularized.
double logistic_objective(const std::vector<DenseVector>& features, const std::vector<int>& labels,
                          const DenseVector& w, double b, double l2);

struct LogisticGradient {
    DenseVector w;
    double b = 0.0;
};

LogisticGradient logistic_gradient(const std::vector<DenseVector>& features,
                                   const std::vector<int>& labels, const DenseVector& w, double b,
                                   double l2);

// Full-batch gradient descent on logistic_objective. Features are centred and
// rescaled by one global factor before fitting (this keeps the step size
// stable without changing the geometry), and the fitted parameters are mapped
// back to the raw feature space. The step is halved whenever the objective
// would increase. Deterministic for identical inputs.
//
// Throws DegenerateDataError unless both classes have at least two samples,
// DimensionMismatchError on ragged features.
LogisticModel train_logistic(const std::vector<DenseVector>& features,
                             const std::vector<int>& labels,
                             const LogisticSettings& settings = {});

double classification_accuracy(const LogisticModel& model, const std::vector<DenseVector>& features,
                               const std::vector<int>& labels);

double mean_log_loss(const LogisticModel& model, const std::vector<DenseVector>& features,
                     const std::vector<int>& labels);

}  // namespace gcav
