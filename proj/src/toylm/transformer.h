#pragma once

// Dense forward/backward kernels behind ToyModel. Internal to the toylm module.

#include <Eigen/Dense>
#include <span>
#include <utility>
#include <vector>

#include "gcav/toylm.h"

namespace gcav::detail {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Per-layer (0-based) list of (position, offset) pairs added to the block output.
struct ResidualEdits {
    std::vector<std::vector<std::pair<int, Vector>>> per_layer;

    bool empty() const;
};

// Offsets of `hook` applied to every position in [first, last).
ResidualEdits edits_from_hook(const ToyModel& model, const InterventionHook& hook, int first,
                              int last);

struct LayerNormCache {
    Matrix normalized;  // x-hat
    Vector inv_std;
};

struct BlockCache {
    LayerNormCache attn_norm;
    Matrix attn_in;  // normalized input to attention
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per segment, per head: n x n
    Matrix heads;               // concatenated head outputs
    LayerNormCache mlp_norm;
    Matrix mlp_in;
    Matrix pre_act;
    Matrix act;
};

struct ForwardTrace {
    std::vector<int> tokens;
    std::vector<int> segments;
    std::vector<BlockCache> blocks;
    LayerNormCache final_norm;
    Matrix final_in;  // normalized input to the output projection
};

struct ForwardOptions {
    const ResidualEdits* edits = nullptr;
    // When set, receives the residual stream after each block (T x d).
    std::vector<Matrix>* layer_outputs = nullptr;
    // When set, keeps everything backward() needs.
    ForwardTrace* trace = nullptr;
    // Only compute logits for the last position.
    bool last_logits_only = false;
};

// Returns logits (T x V, or 1 x V with last_logits_only).
Matrix forward(const ToyModel& model, std::span<const int> tokens, const ForwardOptions& options);

// Several sequences stacked row-wise; `segments` holds their lengths. Each
// sequence attends only to itself and restarts positions at 0.
Matrix forward_stacked(const ToyModel& model, std::span<const int> tokens,
                       std::span<const int> segments, const ForwardOptions& options);

// Accumulates parameter gradients for dL/dlogits into `gradient`.
void backward(const ToyModel& model, const ForwardTrace& trace, const Matrix& dlogits,
              std::vector<double>& gradient);

}  // namespace gcav::detail
