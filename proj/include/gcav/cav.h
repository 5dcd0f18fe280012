#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gcav/canonical_json.h"
#include "gcav/logistic.h"
#include "gcav/numerics.h"
#include "gcav/toylm.h"

namespace gcav {

enum class Label { Positive, Negative };
enum class Variant { Input, Output };

// "pos"/"neg" and "input"/"output"; the parsers throw FormatError.
std::string to_string(Label label);
std::string to_string(Variant variant);
Label parse_label(const std::string& text);
Variant parse_variant(const std::string& text);

struct PromptRecord {
    std::string id;
    std::string text;
    Label given_label = Label::Positive;
    std::optional<std::string> output;  // model continuation, without the prompt
    std::optional<Label> output_label;

    bool operator==(const PromptRecord&) const = default;
};

// Word sets behind one synthetic concept. A token sequence counts as
// positive when it holds strictly more positive than negative words.
struct ConceptWords {
    std::string name;
    std::vector<int> positive;
    std::vector<int> negative;

    bool is_positive(std::span<const int> tokens) const;
    // Share of `tokens` drawn from the positive set (0 for an empty span).
    double positive_fraction(std::span<const int> tokens) const;
};

// Bundled concepts over a dialect vocabulary:
//   dialect  A-words vs B-words
//   parity   even-id vs odd-id words (markers excluded)
//   shared   shared words vs dialect words
// Throws ConfigError for any other name.
ConceptWords concept_words(const std::string& name, const VocabularyLayout& layout);
std::vector<std::string> bundled_concepts();

// `pairs` positive and `pairs` negative prompts of 5 to 9 tokens: a marker
// followed by words that lean 85/15 towards the concept's side. Records
// alternate positive/negative and are numbered "<name>-<stream>-<i>".
std::vector<PromptRecord> build_concept_prompts(const Tokenizer& tokenizer,
                                                const VocabularyLayout& layout,
                                                const std::string& concept_name, int pairs,
                                                std::uint64_t seed);

// Decides the concept label of a record whose output is set.
using ConceptLabeler = std::function<Label(const PromptRecord&)>;

ConceptLabeler keyword_labeler(const Tokenizer& tokenizer, ConceptWords words);
ConceptLabeler agree_always_labeler();
ConceptLabeler disagree_always_labeler();

struct ActivationDataset {
    std::vector<DenseVector> features;
    std::vector<int> labels;
};

// One row per record, captured at the final prompt position of `layer`.
// LengthError and FormatError are rethrown with the record id attached.
ActivationDataset collect_activations(const ToyModel& model,
                                      const std::vector<PromptRecord>& records, int layer);

// Same as collect_activations for every layer from a single pass per record;
// element l - 1 holds layer l.
std::vector<ActivationDataset> collect_all_layers(const ToyModel& model,
                                                  const std::vector<PromptRecord>& records);

inline constexpr int kFilterTokens = 32;

struct FilterResult {
    std::vector<PromptRecord> kept;
    std::size_t dropped = 0;

    double retention() const;
};

// Greedy continuation of every record (no hook, kFilterTokens new tokens),
// labelled by `labeler`; records whose label disagrees are dropped.
FilterResult filter_by_output(const ToyModel& model, const std::vector<PromptRecord>& records,
                              const ConceptLabeler& labeler, int max_new_tokens = kFilterTokens);

struct ConceptClassifier {
    std::string concept_name;
    int layer = 0;
    Variant variant = Variant::Input;
    LogisticModel model;
    DenseVector cav;  // model.w / ||model.w||

    double probability(const DenseVector& e) const { return model.probability(e); }
};

// Stratified 80/20 split shuffled by `split_seed`; trains on the 80% and
// scores the 20%. Throws DegenerateDataError unless each class keeps at
// least two training rows.
ConceptClassifier train_cav(const ActivationDataset& data, int layer,
                            const std::string& concept_name, Variant variant,
                            std::uint64_t split_seed, const LogisticSettings& settings = {});

struct LayerAccuracy {
    int layer = 0;
    double test_accuracy = 0.0;
    double test_log_loss = 0.0;
};

// Classifiers for each requested layer, in ascending layer order. Errors from
// a layer are rethrown with the layer attached.
std::vector<ConceptClassifier> train_layers(const ToyModel& model,
                                            const std::vector<PromptRecord>& records,
                                            const std::vector<int>& layers,
                                            const std::string& concept_name, Variant variant,
                                            std::uint64_t split_seed);

std::vector<LayerAccuracy> layer_scan(const ToyModel& model,
                                      const std::vector<PromptRecord>& records,
                                      const std::vector<int>& layers,
                                      const std::string& concept_name, Variant variant,
                                      std::uint64_t split_seed);

std::vector<LayerAccuracy> scan_of(const std::vector<ConceptClassifier>& classifiers);

// Layers from best to worst: higher test accuracy first, then lower test
// log-loss, then the lower layer.
std::vector<int> rank_layers(const std::vector<LayerAccuracy>& scan);

// The k best layers by test accuracy; ties go to the lower test log-loss and
// then to the lower layer. Returned in ascending layer order.
std::vector<int> top_k_layers(const std::vector<LayerAccuracy>& scan, int k);

class CavStore {
public:
    static std::string key(const std::string& concept_name, int layer, Variant variant);

    // Throws ConfigError if the key is already present.
    void insert(ConceptClassifier classifier);
    const ConceptClassifier* find(const std::string& concept_name, int layer,
                                  Variant variant) const;
    // Throws MissingCavError naming the key.
    const ConceptClassifier& at(const std::string& concept_name, int layer, Variant variant) const;

    std::size_t size() const { return classifiers_.size(); }
    const std::map<std::string, ConceptClassifier>& classifiers() const { return classifiers_; }

    Json& provenance() { return provenance_; }
    const Json& provenance() const { return provenance_; }

    // Loading recomputes each cav from the stored w so the unit norm holds to
    // double precision; a stored cav further than 1e-6 from it is a FormatError.
    Json to_json() const;
    static CavStore from_json(const Json& j);
    void save(const std::filesystem::path& path) const;
    static CavStore load(const std::filesystem::path& path);

private:
    std::map<std::string, ConceptClassifier> classifiers_;
    Json provenance_ = Json::object();
};

// Line-delimited prompt records: {"id", "text", "label": "pos"|"neg", "output"?}.
// Blank lines are skipped; malformed lines raise FormatError naming the line.
std::vector<PromptRecord> parse_prompt_lines(const std::string& text, const std::string& origin);
std::vector<PromptRecord> read_prompt_file(const std::filesystem::path& path);
std::string format_prompt_lines(const std::vector<PromptRecord>& records);
void write_prompt_file(const std::filesystem::path& path, const std::vector<PromptRecord>& records);

// FNV-1a of format_prompt_lines(records).
std::string dataset_hash(const std::vector<PromptRecord>& records);

// Binary activation matrix: "GCAV", then version, rows and dim as u32
// little-endian, then rows * dim float32 little-endian values, row-major.
void write_activation_matrix(const std::filesystem::path& path,
                             const std::vector<DenseVector>& rows);
std::vector<DenseVector> read_activation_matrix(const std::filesystem::path& path);

}  // namespace gcav
