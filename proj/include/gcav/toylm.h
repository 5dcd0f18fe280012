#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gcav/canonical_json.h"
#include "gcav/numerics.h"

namespace gcav {

using TokenSequence = std::vector<int>;

struct ModelConfig {
    int layer_count = 8;
    int model_dim = 64;
    int head_count = 4;
    int vocab_size = 64;
    int context_length = 64;
    std::uint64_t seed = 0;

    // Throws ConfigError on invariant violations.
    void validate() const;
    int head_dim() const { return model_dim / head_count; }

    Json to_json() const;
    static ModelConfig from_json(const Json& j);
};

// Partition of the vocabulary used by the two-dialect corpus: two marker
// tokens, one word set per dialect and the shared remainder. With the default
// 64-token vocabulary this is 2 + 24 + 24 + 14.
struct VocabularyLayout {
    int marker_a = 0;
    int marker_b = 1;
    std::vector<int> a_words;
    std::vector<int> b_words;
    std::vector<int> shared_words;

    static VocabularyLayout for_vocab_size(int vocab_size);
};

// Bijection between token strings and ids. Text is whitespace-separated tokens.
class Tokenizer {
public:
    explicit Tokenizer(std::vector<std::string> vocabulary);

    // "<A>", "<B>", a00..a23, b00..b23, s00.. following VocabularyLayout.
    static Tokenizer dialect(int vocab_size);

    int size() const { return static_cast<int>(vocabulary_.size()); }
    int id(std::string_view token) const;
    const std::string& token(int id) const;
    const std::vector<std::string>& vocabulary() const { return vocabulary_; }

    // Throws FormatError on unknown tokens.
    TokenSequence encode(std::string_view text) const;
    std::string decode(std::span<const int> tokens) const;

private:
    std::vector<std::string> vocabulary_;
    std::unordered_map<std::string, int> index_;
};

// Residual-stream state after one block (layers are numbered 1..L).
struct ActivationVector {
    int layer = 0;
    int position = 0;
    DenseVector values;
};

// Additive residual offsets keyed by layer. Offsets land on the block output
// at the current last position, before the next block reads it.
struct InterventionHook {
    std::map<int, DenseVector> offsets;
    // When false, only the final prompt position is offset; generated
    // positions run unmodified.
    bool apply_at_every_step = true;

    bool empty() const { return offsets.empty(); }
};

struct TensorSpec {
    std::string name;
    int rows = 0;
    int cols = 0;  // 0 for one-dimensional tensors
    std::size_t offset = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows) * (cols == 0 ? 1 : cols); }
};

// Offsets of every named tensor inside the flat parameter vector.
struct ParameterLayout {
    struct Block {
        std::size_t attn_norm_gain, attn_norm_bias;
        std::size_t query, key, value, output;
        std::size_t mlp_norm_gain, mlp_norm_bias;
        std::size_t up, up_bias, down, down_bias;
    };

    std::vector<TensorSpec> tensors;
    std::size_t token_embedding = 0;
    std::size_t position_embedding = 0;
    std::vector<Block> blocks;
    std::size_t final_norm_gain = 0;
    std::size_t final_norm_bias = 0;
    std::size_t unembedding = 0;
    std::size_t total = 0;

    explicit ParameterLayout(const ModelConfig& config);
};

// Pre-norm decoder-only transformer: learned token and position embeddings,
// L blocks of (LayerNorm -> causal multi-head attention -> residual,
// LayerNorm -> GELU MLP of width 4d -> residual), final LayerNorm and an
// untied output projection. Immutable once built; share freely across threads.
class ToyModel {
public:
    ToyModel(ModelConfig config, Tokenizer tokenizer, std::vector<double> parameters,
             Json metadata = Json::object());

    const ModelConfig& config() const { return config_; }
    const Tokenizer& tokenizer() const { return tokenizer_; }
    const ParameterLayout& layout() const { return layout_; }
    std::span<const double> parameters() const { return parameters_; }
    const Json& metadata() const { return metadata_; }

    std::span<const double> tensor(const std::string& name) const;

    // FNV-1a over the raw parameter bytes.
    std::string checksum() const;

    Json to_json() const;
    static ToyModel from_json(const Json& j);
    void save(const std::filesystem::path& path) const;
    static ToyModel load(const std::filesystem::path& path);

private:
    ModelConfig config_;
    Tokenizer tokenizer_;
    ParameterLayout layout_;
    std::vector<double> parameters_;
    Json metadata_;
};

// Gaussian(0, 0.02) weights and embeddings from config.seed; LayerNorm gains
// start at 1 and every bias at 0. Throws ConfigError on a bad config.
ToyModel init_model(const ModelConfig& config);

struct TrainingSettings {
    int steps = 2000;
    double learning_rate = 3e-4;
    int batch_size = 8;
    std::uint64_t seed = 0;
};

// Adam on the mean next-token cross-entropy of random minibatches drawn from
// the corpus. steps == 0 returns the model unchanged. Throws CorpusError on an
// empty corpus or sequences that are too short or too long.
ToyModel train_on_corpus(const ToyModel& model, const std::vector<TokenSequence>& corpus,
                         const TrainingSettings& settings);

// Two-dialect corpus: each sequence opens with <A> or <B> (fair coin) and
// continues with `sequence_length - 1` words, 85% from the marker's word set
// and 15% from the shared words.
std::vector<TokenSequence> make_dialect_corpus(const VocabularyLayout& layout, std::uint64_t seed,
                                               int samples, int sequence_length = 24);

// One activation per layer at the final prompt position. A hook, if given,
// offsets that position and the captured vectors include the offsets.
std::vector<ActivationVector> forward_capture(const ToyModel& model, const TokenSequence& prompt,
                                              const InterventionHook* hook = nullptr);

// Greedy decoding (lowest id wins ties). Returns prompt + continuation.
// Throws LengthError unless prompt.size() + max_new_tokens <= context length.
TokenSequence generate(const ToyModel& model, const TokenSequence& prompt,
                       const InterventionHook* hook, int max_new_tokens);

// Offsets keyed by layer for the position about to be decoded, chosen from
// that position's activations (earlier positions already carry theirs).
using OffsetPolicy =
    std::function<std::map<int, DenseVector>(const std::vector<ActivationVector>&)>;

// Greedy decoding in which every step's last position gets its own offsets
// from `policy`; the final prompt position is the first one asked.
TokenSequence generate_adaptive(const ToyModel& model, const TokenSequence& prompt,
                                const OffsetPolicy& policy, int max_new_tokens);

// Next-token logits at the last position of `tokens` (unmodified model).
std::vector<double> next_token_logits(const ToyModel& model, const TokenSequence& tokens);

// log p(tokens[i] | tokens[<i]) for i = 1..n-1 under the unmodified model.
std::vector<double> token_log_probs(const ToyModel& model, const TokenSequence& tokens);

// Mean next-token cross-entropy over every predicted position of the corpus.
double mean_next_token_loss(const ToyModel& model, const std::vector<TokenSequence>& corpus);

// Loss and gradient of the mean next-token cross-entropy over `batch`, laid
// out like ToyModel::parameters(). Exposed for gradient checking.
double loss_and_gradient(const ToyModel& model, const std::vector<TokenSequence>& batch,
                         std::vector<double>& gradient);

}  // namespace gcav
