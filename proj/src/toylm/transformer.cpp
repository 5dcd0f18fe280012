#include "transformer.h"

#include <cmath>
#include <limits>
#include <string>

#include "gcav/errors.h"

namespace gcav::detail {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

using ConstMatrixMap = Eigen::Map<const Matrix>;
using ConstRowMap = Eigen::Map<const RowVector>;
using MatrixMap = Eigen::Map<Matrix>;
using RowMap = Eigen::Map<RowVector>;

ConstMatrixMap weight(const ToyModel& m, std::size_t offset, int rows, int cols) {
    return ConstMatrixMap(m.parameters().data() + offset, rows, cols);
}

ConstRowMap row_param(const ToyModel& m, std::size_t offset, int size) {
    return ConstRowMap(m.parameters().data() + offset, size);
}

MatrixMap grad_matrix(std::vector<double>& g, std::size_t offset, int rows, int cols) {
    return MatrixMap(g.data() + offset, rows, cols);
}

RowMap grad_row(std::vector<double>& g, std::size_t offset, int size) {
    return RowMap(g.data() + offset, size);
}

Matrix layer_norm(const Matrix& x, const ConstRowMap& gain, const ConstRowMap& bias,
                  LayerNormCache* cache) {
    Vector mean = x.rowwise().mean();
    Matrix centered = x.colwise() - mean;
    Vector var = centered.array().square().rowwise().mean();
    Vector inv_std = (var.array() + kNormEps).rsqrt();
    Matrix normalized = centered.array().colwise() * inv_std.array();
    Matrix y = (normalized.array().rowwise() * gain.array()).rowwise() + bias.array();
    if (cache != nullptr) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const ConstRowMap& gain,
                           RowMap dgain, RowMap dbias) {
    dgain += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
    dbias += dy.colwise().sum();
    Matrix dxhat = dy.array().rowwise() * gain.array();
    Vector mean_dxhat = dxhat.rowwise().mean();
    Vector mean_dxhat_xhat = (dxhat.array() * cache.normalized.array()).rowwise().mean();
    Matrix dx = dxhat.colwise() - mean_dxhat;
    dx -= (cache.normalized.array().colwise() * mean_dxhat_xhat.array()).matrix();
    return dx.array().colwise() * cache.inv_std.array();
}

double gelu(double u) {
    return 0.5 * u * (1.0 + std::tanh(kGeluScale * (u + kGeluCubic * u * u * u)));
}

double gelu_derivative(double u) {
    double t = std::tanh(kGeluScale * (u + kGeluCubic * u * u * u));
    return 0.5 * (1.0 + t) +
           0.5 * u * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * u * u);
}

// Causal softmax over each row of `scores` (entries j > i are ignored).
void causal_softmax(Matrix& scores) {
    const Eigen::Index t = scores.rows();
    for (Eigen::Index i = 0; i < t; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) {
            mx = std::max(mx, scores(i, j));
        }
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
            double e = std::exp(scores(i, j) - mx);
            scores(i, j) = e;
            sum += e;
        }
        for (Eigen::Index j = 0; j <= i; ++j) {
            scores(i, j) /= sum;
        }
        for (Eigen::Index j = i + 1; j < t; ++j) {
            scores(i, j) = 0.0;
        }
    }
}

void check_tokens(const ToyModel& model, std::span<const int> tokens,
                  std::span<const int> segments) {
    const auto& cfg = model.config();
    std::size_t total = 0;
    for (int n : segments) {
        if (n <= 0) {
            throw LengthError("forward: empty token sequence");
        }
        if (n > cfg.context_length) {
            throw LengthError("forward: sequence of " + std::to_string(n) +
                              " tokens exceeds context length " + std::to_string(cfg.context_length));
        }
        total += static_cast<std::size_t>(n);
    }
    if (segments.empty() || total != tokens.size()) {
        throw LengthError("forward: empty token sequence");
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw DomainError("forward: token id " + std::to_string(t) + " outside vocabulary");
        }
    }
}

}  // namespace

bool ResidualEdits::empty() const {
    for (const auto& layer : per_layer) {
        if (!layer.empty()) {
            return false;
        }
    }
    return true;
}

ResidualEdits edits_from_hook(const ToyModel& model, const InterventionHook& hook, int first,
                              int last) {
    const auto& cfg = model.config();
    ResidualEdits edits;
    edits.per_layer.resize(static_cast<std::size_t>(cfg.layer_count));
    for (const auto& [layer, offset] : hook.offsets) {
        if (layer < 1 || layer > cfg.layer_count) {
            throw DomainError("InterventionHook: layer " + std::to_string(layer) +
                              " outside [1, " + std::to_string(cfg.layer_count) + "]");
        }
        if (static_cast<int>(offset.size()) != cfg.model_dim) {
            throw DimensionMismatchError("InterventionHook: offset for layer " +
                                         std::to_string(layer) + " has dimension " +
                                         std::to_string(offset.size()));
        }
        Vector v = Eigen::Map<const Vector>(offset.values().data(),
                                            static_cast<Eigen::Index>(offset.size()));
        for (int p = first; p < last; ++p) {
            edits.per_layer[static_cast<std::size_t>(layer - 1)].emplace_back(p, v);
        }
    }
    return edits;
}

Matrix forward(const ToyModel& model, std::span<const int> tokens, const ForwardOptions& options) {
    const int n = static_cast<int>(tokens.size());
    return forward_stacked(model, tokens, std::span<const int>(&n, 1), options);
}

Matrix forward_stacked(const ToyModel& model, std::span<const int> tokens,
                       std::span<const int> segments, const ForwardOptions& options) {
    check_tokens(model, tokens, segments);
    const auto& cfg = model.config();
    const auto& lay = model.layout();
    const int t = static_cast<int>(tokens.size());
    const int d = cfg.model_dim;
    const int hd = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    ForwardTrace* trace = options.trace;
    if (trace != nullptr) {
        trace->tokens.assign(tokens.begin(), tokens.end());
        trace->segments.assign(segments.begin(), segments.end());
        trace->blocks.assign(static_cast<std::size_t>(cfg.layer_count), BlockCache{});
    }
    if (options.layer_outputs != nullptr) {
        options.layer_outputs->clear();
    }

    auto tok_emb = weight(model, lay.token_embedding, cfg.vocab_size, d);
    auto pos_emb = weight(model, lay.position_embedding, cfg.context_length, d);
    Matrix x(t, d);
    for (int start = 0, s = 0; s < static_cast<int>(segments.size()); start += segments[s], ++s) {
        for (int i = 0; i < segments[s]; ++i) {
            x.row(start + i) = tok_emb.row(tokens[static_cast<std::size_t>(start + i)]) + pos_emb.row(i);
        }
    }

    for (int l = 0; l < cfg.layer_count; ++l) {
        const auto& blk = lay.blocks[static_cast<std::size_t>(l)];
        BlockCache local;
        BlockCache& c = trace != nullptr ? trace->blocks[static_cast<std::size_t>(l)] : local;
        c.attn_in = layer_norm(x, row_param(model, blk.attn_norm_gain, d),
                               row_param(model, blk.attn_norm_bias, d), &c.attn_norm);
        c.q.noalias() = c.attn_in * weight(model, blk.query, d, d);
        c.k.noalias() = c.attn_in * weight(model, blk.key, d, d);
        c.v.noalias() = c.attn_in * weight(model, blk.value, d, d);
        c.heads.resize(t, d);
        c.probs.clear();
        for (int start = 0, s = 0; s < static_cast<int>(segments.size()); start += segments[s], ++s) {
            const int n = segments[s];
            for (int h = 0; h < cfg.head_count; ++h) {
                Matrix scores = (c.q.block(start, h * hd, n, hd) *
                                 c.k.block(start, h * hd, n, hd).transpose()) *
                                scale;
                causal_softmax(scores);
                c.heads.block(start, h * hd, n, hd).noalias() =
                    scores * c.v.block(start, h * hd, n, hd);
                c.probs.push_back(std::move(scores));
            }
        }
        x.noalias() += c.heads * weight(model, blk.output, d, d);

        c.mlp_in = layer_norm(x, row_param(model, blk.mlp_norm_gain, d),
                              row_param(model, blk.mlp_norm_bias, d), &c.mlp_norm);
        c.pre_act = c.mlp_in * weight(model, blk.up, d, 4 * d);
        c.pre_act.rowwise() += row_param(model, blk.up_bias, 4 * d);
        c.act = c.pre_act.unaryExpr([](double u) { return gelu(u); });
        x.noalias() += c.act * weight(model, blk.down, 4 * d, d);
        x.rowwise() += row_param(model, blk.down_bias, d);

        if (options.edits != nullptr &&
            static_cast<std::size_t>(l) < options.edits->per_layer.size()) {
            for (const auto& [pos, offset] : options.edits->per_layer[static_cast<std::size_t>(l)]) {
                if (pos >= 0 && pos < t) {
                    x.row(pos) += offset.transpose();
                }
            }
        }
        if (options.layer_outputs != nullptr) {
            options.layer_outputs->push_back(x);
        }
    }

    LayerNormCache final_cache;
    Matrix final_in = layer_norm(x, row_param(model, lay.final_norm_gain, d),
                                 row_param(model, lay.final_norm_bias, d), &final_cache);
    auto unembed = weight(model, lay.unembedding, d, cfg.vocab_size);
    Matrix logits;
    if (options.last_logits_only) {
        logits = final_in.bottomRows(1) * unembed;
    } else {
        logits = final_in * unembed;
    }
    if (trace != nullptr) {
        trace->final_norm = std::move(final_cache);
        trace->final_in = std::move(final_in);
    }
    return logits;
}

void backward(const ToyModel& model, const ForwardTrace& trace, const Matrix& dlogits,
              std::vector<double>& gradient) {
    const auto& cfg = model.config();
    const auto& lay = model.layout();
    const int t = static_cast<int>(trace.tokens.size());
    const int d = cfg.model_dim;
    const int hd = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    auto unembed = weight(model, lay.unembedding, d, cfg.vocab_size);
    grad_matrix(gradient, lay.unembedding, d, cfg.vocab_size).noalias() +=
        trace.final_in.transpose() * dlogits;
    Matrix dfinal = dlogits * unembed.transpose();
    Matrix dx = layer_norm_backward(dfinal, trace.final_norm,
                                    row_param(model, lay.final_norm_gain, d),
                                    grad_row(gradient, lay.final_norm_gain, d),
                                    grad_row(gradient, lay.final_norm_bias, d));

    for (int l = cfg.layer_count - 1; l >= 0; --l) {
        const auto& blk = lay.blocks[static_cast<std::size_t>(l)];
        const BlockCache& c = trace.blocks[static_cast<std::size_t>(l)];

        // MLP branch: x_out = x_mid + act * down + down_bias
        grad_matrix(gradient, blk.down, 4 * d, d).noalias() += c.act.transpose() * dx;
        grad_row(gradient, blk.down_bias, d) += dx.colwise().sum();
        Matrix dact = dx * weight(model, blk.down, 4 * d, d).transpose();
        Matrix dpre = dact.array() * c.pre_act.unaryExpr([](double u) {
            return gelu_derivative(u);
        }).array();
        grad_matrix(gradient, blk.up, d, 4 * d).noalias() += c.mlp_in.transpose() * dpre;
        grad_row(gradient, blk.up_bias, 4 * d) += dpre.colwise().sum();
        Matrix dmlp_in = dpre * weight(model, blk.up, d, 4 * d).transpose();
        Matrix dmid = dx + layer_norm_backward(dmlp_in, c.mlp_norm,
                                               row_param(model, blk.mlp_norm_gain, d),
                                               grad_row(gradient, blk.mlp_norm_gain, d),
                                               grad_row(gradient, blk.mlp_norm_bias, d));

        // Attention branch: x_mid = x_in + heads * output
        grad_matrix(gradient, blk.output, d, d).noalias() += c.heads.transpose() * dmid;
        Matrix dheads = dmid * weight(model, blk.output, d, d).transpose();
        Matrix dq(t, d), dk(t, d), dv(t, d);
        std::size_t pi = 0;
        for (int start = 0, s = 0; s < static_cast<int>(trace.segments.size());
             start += trace.segments[static_cast<std::size_t>(s)], ++s) {
            const int n = trace.segments[static_cast<std::size_t>(s)];
            for (int h = 0; h < cfg.head_count; ++h, ++pi) {
                const Matrix& p = c.probs[pi];
                auto dout = dheads.block(start, h * hd, n, hd);
                Matrix dp = dout * c.v.block(start, h * hd, n, hd).transpose();
                dv.block(start, h * hd, n, hd).noalias() = p.transpose() * dout;
                Vector row_dot = (dp.array() * p.array()).rowwise().sum();
                Matrix ds = p.array() * (dp.colwise() - row_dot).array();
                dq.block(start, h * hd, n, hd).noalias() = (ds * c.k.block(start, h * hd, n, hd)) * scale;
                dk.block(start, h * hd, n, hd).noalias() =
                    (ds.transpose() * c.q.block(start, h * hd, n, hd)) * scale;
            }
        }
        grad_matrix(gradient, blk.query, d, d).noalias() += c.attn_in.transpose() * dq;
        grad_matrix(gradient, blk.key, d, d).noalias() += c.attn_in.transpose() * dk;
        grad_matrix(gradient, blk.value, d, d).noalias() += c.attn_in.transpose() * dv;
        Matrix dattn_in = dq * weight(model, blk.query, d, d).transpose();
        dattn_in.noalias() += dk * weight(model, blk.key, d, d).transpose();
        dattn_in.noalias() += dv * weight(model, blk.value, d, d).transpose();
        dx = dmid + layer_norm_backward(dattn_in, c.attn_norm,
                                        row_param(model, blk.attn_norm_gain, d),
                                        grad_row(gradient, blk.attn_norm_gain, d),
                                        grad_row(gradient, blk.attn_norm_bias, d));
    }

    auto dtok = grad_matrix(gradient, lay.token_embedding, cfg.vocab_size, d);
    auto dpos = grad_matrix(gradient, lay.position_embedding, cfg.context_length, d);
    for (int start = 0, s = 0; s < static_cast<int>(trace.segments.size());
         start += trace.segments[static_cast<std::size_t>(s)], ++s) {
        for (int i = 0; i < trace.segments[static_cast<std::size_t>(s)]; ++i) {
            dtok.row(trace.tokens[static_cast<std::size_t>(start + i)]) += dx.row(start + i);
            dpos.row(i) += dx.row(start + i);
        }
    }
}

}  // namespace gcav::detail
