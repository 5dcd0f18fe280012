#include <algorithm>
#include <cmath>

#include "gcav/errors.h"
#include "gcav/toylm.h"
#include "transformer.h"

namespace gcav {

namespace {

using detail::Matrix;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kDialectShare = 0.85;

Eigen::VectorXd log_softmax_row(const Matrix& logits, Eigen::Index row) {
    Eigen::VectorXd z = logits.row(row).transpose();
    double mx = z.maxCoeff();
    double lse = mx + std::log((z.array() - mx).exp().sum());
    return z.array() - lse;
}

void check_corpus(const ToyModel& model, const std::vector<TokenSequence>& corpus) {
    if (corpus.empty()) {
        throw CorpusError("training corpus is empty");
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& s = corpus[i];
        if (s.size() < 2) {
            throw CorpusError("corpus sequence " + std::to_string(i) +
                              " has fewer than two tokens");
        }
        if (static_cast<int>(s.size()) > model.config().context_length) {
            throw CorpusError("corpus sequence " + std::to_string(i) +
                              " exceeds the context length");
        }
        for (int tok : s) {
            if (tok < 0 || tok >= model.config().vocab_size) {
                throw CorpusError("corpus sequence " + std::to_string(i) +
                                  " has a token outside the vocabulary");
            }
        }
    }
}

int argmax_last(const Matrix& logits) {
    Eigen::Index best = 0;
    const Eigen::Index row = logits.rows() - 1;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
        if (logits(row, j) > logits(row, best)) {
            best = j;
        }
    }
    return static_cast<int>(best);
}

void check_generation(const ToyModel& model, const TokenSequence& prompt, int max_new_tokens) {
    const int ctx = model.config().context_length;
    if (prompt.empty()) {
        throw LengthError("generate: empty prompt");
    }
    if (max_new_tokens < 0 || static_cast<int>(prompt.size()) + max_new_tokens > ctx) {
        throw LengthError("generate: prompt of " + std::to_string(prompt.size()) + " plus " +
                          std::to_string(max_new_tokens) + " new tokens exceeds context length " +
                          std::to_string(ctx));
    }
}

std::size_t target_count(const std::vector<TokenSequence>& batch) {
    std::size_t n = 0;
    for (const auto& s : batch) {
        n += s.size() - 1;
    }
    return n;
}

std::vector<ActivationVector> last_position(const std::vector<Matrix>& outputs, int last) {
    std::vector<ActivationVector> result;
    result.reserve(outputs.size());
    for (std::size_t l = 0; l < outputs.size(); ++l) {
        const Matrix& x = outputs[l];
        std::vector<double> row(x.row(last).data(), x.row(last).data() + x.cols());
        result.push_back(ActivationVector{static_cast<int>(l) + 1, last, DenseVector(std::move(row))});
    }
    return result;
}

}  // namespace

double loss_and_gradient(const ToyModel& model, const std::vector<TokenSequence>& batch,
                         std::vector<double>& gradient) {
    check_corpus(model, batch);
    gradient.assign(model.parameters().size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(target_count(batch));
    double loss = 0.0;
    std::vector<int> tokens;
    std::vector<int> segments;
    for (const auto& seq : batch) {
        tokens.insert(tokens.end(), seq.begin(), seq.end());
        segments.push_back(static_cast<int>(seq.size()));
    }
    detail::ForwardTrace trace;
    detail::ForwardOptions opts;
    opts.trace = &trace;
    Matrix logits = detail::forward_stacked(model, tokens, segments, opts);
    Matrix dlogits = Matrix::Zero(logits.rows(), logits.cols());
    Eigen::Index start = 0;
    for (int n : segments) {
        for (Eigen::Index i = start; i + 1 < start + n; ++i) {
            Eigen::VectorXd lp = log_softmax_row(logits, i);
            int target = tokens[static_cast<std::size_t>(i + 1)];
            loss -= lp[target] * inv_n;
            dlogits.row(i) = lp.array().exp().transpose() * inv_n;
            dlogits(i, target) -= inv_n;
        }
        start += n;
    }
    detail::backward(model, trace, dlogits, gradient);
    return loss;
}

ToyModel train_on_corpus(const ToyModel& model, const std::vector<TokenSequence>& corpus,
                         const TrainingSettings& settings) {
    check_corpus(model, corpus);
    if (settings.steps < 0 || settings.batch_size < 1 || !(settings.learning_rate > 0.0)) {
        throw ConfigError("TrainingSettings: steps >= 0, batchSize >= 1 and learningRate > 0");
    }
    std::vector<double> params(model.parameters().begin(), model.parameters().end());
    if (settings.steps == 0) {
        return ToyModel(model.config(), model.tokenizer(), std::move(params), model.metadata());
    }
    std::vector<double> m(params.size(), 0.0);
    std::vector<double> v(params.size(), 0.0);
    std::vector<double> grad;
    Rng rng(settings.seed);
    ToyModel current = model;
    double beta1_power = 1.0;
    double beta2_power = 1.0;
    for (int step = 0; step < settings.steps; ++step) {
        std::vector<TokenSequence> batch;
        batch.reserve(static_cast<std::size_t>(settings.batch_size));
        for (int b = 0; b < settings.batch_size; ++b) {
            batch.push_back(corpus[rng.below(corpus.size())]);
        }
        loss_and_gradient(current, batch, grad);
        beta1_power *= kAdamBeta1;
        beta2_power *= kAdamBeta2;
        const double c1 = 1.0 - beta1_power;
        const double c2 = 1.0 - beta2_power;
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * grad[i];
            v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
            params[i] -= settings.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
        }
        current = ToyModel(model.config(), model.tokenizer(), params, model.metadata());
    }
    return current;
}

std::vector<TokenSequence> make_dialect_corpus(const VocabularyLayout& layout, std::uint64_t seed,
                                               int samples, int sequence_length) {
    if (samples < 0 || sequence_length < 2) {
        throw ConfigError("dialect corpus: samples >= 0 and sequenceLength >= 2 required");
    }
    if (layout.a_words.empty() || layout.b_words.empty()) {
        throw ConfigError("dialect corpus: vocabulary has no dialect words");
    }
    Rng rng(seed);
    std::vector<TokenSequence> corpus;
    corpus.reserve(static_cast<std::size_t>(samples));
    for (int s = 0; s < samples; ++s) {
        bool dialect_a = rng.uniform() < 0.5;
        const auto& own = dialect_a ? layout.a_words : layout.b_words;
        TokenSequence seq{dialect_a ? layout.marker_a : layout.marker_b};
        for (int i = 1; i < sequence_length; ++i) {
            bool shared = !layout.shared_words.empty() && rng.uniform() >= kDialectShare;
            const auto& pool = shared ? layout.shared_words : own;
            seq.push_back(pool[rng.below(pool.size())]);
        }
        corpus.push_back(std::move(seq));
    }
    return corpus;
}

std::vector<ActivationVector> forward_capture(const ToyModel& model, const TokenSequence& prompt,
                                              const InterventionHook* hook) {
    const int last = static_cast<int>(prompt.size()) - 1;
    detail::ResidualEdits edits;
    detail::ForwardOptions opts;
    opts.last_logits_only = true;
    if (hook != nullptr && !hook->empty()) {
        edits = detail::edits_from_hook(model, *hook, last, last + 1);
        opts.edits = &edits;
    }
    std::vector<Matrix> outputs;
    opts.layer_outputs = &outputs;
    detail::forward(model, prompt, opts);
    return last_position(outputs, last);
}

TokenSequence generate(const ToyModel& model, const TokenSequence& prompt,
                       const InterventionHook* hook, int max_new_tokens) {
    check_generation(model, prompt, max_new_tokens);
    const int first = static_cast<int>(prompt.size()) - 1;
    bool hooked = hook != nullptr && !hook->empty();
    if (hooked) {
        // Validates the hook even when no tokens are generated.
        detail::edits_from_hook(model, *hook, first, first + 1);
    }
    TokenSequence seq = prompt;
    for (int step = 0; step < max_new_tokens; ++step) {
        detail::ForwardOptions opts;
        opts.last_logits_only = true;
        detail::ResidualEdits edits;
        if (hooked) {
            // Recomputing the prefix with the same edits reproduces what a
            // key/value cache of earlier steps would hold.
            int last = hook->apply_at_every_step ? static_cast<int>(seq.size()) : first + 1;
            edits = detail::edits_from_hook(model, *hook, first, last);
            opts.edits = &edits;
        }
        seq.push_back(argmax_last(detail::forward(model, seq, opts)));
    }
    return seq;
}

TokenSequence generate_adaptive(const ToyModel& model, const TokenSequence& prompt,
                                const OffsetPolicy& policy, int max_new_tokens) {
    check_generation(model, prompt, max_new_tokens);
    const auto& cfg = model.config();
    detail::ResidualEdits edits;
    edits.per_layer.resize(static_cast<std::size_t>(cfg.layer_count));
    TokenSequence seq = prompt;
    for (int step = 0; step < max_new_tokens; ++step) {
        const int last = static_cast<int>(seq.size()) - 1;
        detail::ForwardOptions capture;
        capture.last_logits_only = true;
        capture.edits = &edits;
        std::vector<Matrix> outputs;
        capture.layer_outputs = &outputs;
        detail::forward(model, seq, capture);
        InterventionHook here;
        here.offsets = policy(last_position(outputs, last));
        if (!here.empty()) {
            auto added = detail::edits_from_hook(model, here, last, last + 1);
            for (std::size_t l = 0; l < added.per_layer.size(); ++l) {
                for (auto& e : added.per_layer[l]) {
                    edits.per_layer[l].push_back(std::move(e));
                }
            }
        }
        detail::ForwardOptions opts;
        opts.last_logits_only = true;
        opts.edits = &edits;
        seq.push_back(argmax_last(detail::forward(model, seq, opts)));
    }
    return seq;
}

std::vector<double> next_token_logits(const ToyModel& model, const TokenSequence& tokens) {
    detail::ForwardOptions opts;
    opts.last_logits_only = true;
    Matrix logits = detail::forward(model, tokens, opts);
    return std::vector<double>(logits.data(), logits.data() + logits.cols());
}

std::vector<double> token_log_probs(const ToyModel& model, const TokenSequence& tokens) {
    Matrix logits = detail::forward(model, tokens, {});
    std::vector<double> out;
    for (Eigen::Index i = 0; i + 1 < logits.rows(); ++i) {
        out.push_back(log_softmax_row(logits, i)[tokens[static_cast<std::size_t>(i + 1)]]);
    }
    return out;
}

double mean_next_token_loss(const ToyModel& model, const std::vector<TokenSequence>& corpus) {
    check_corpus(model, corpus);
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& seq : corpus) {
        for (double lp : token_log_probs(model, seq)) {
            total -= lp;
            ++n;
        }
    }
    return total / static_cast<double>(n);
}

}  // namespace gcav
