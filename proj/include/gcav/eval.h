#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gcav/cav.h"
#include "gcav/steering.h"
#include "gcav/toylm.h"

namespace gcav {

enum class ScorerKind { KeywordMajority, ClassifierProbe };

// Labels a continuation as concept-positive. KeywordMajority counts word-set
// hits; ClassifierProbe captures the continuation at the probe's layer and
// compares the probe probability with a threshold.
class ConceptScorer {
public:
    // Throws ConfigError if the word sets overlap.
    static ConceptScorer keyword(ConceptWords words);
    static ConceptScorer probe(const ToyModel& model, ConceptClassifier classifier,
                               double threshold = 0.5);

    ScorerKind kind() const { return kind_; }
    const ConceptWords& words() const { return words_; }
    bool is_positive(const TokenSequence& continuation) const;

private:
    ScorerKind kind_ = ScorerKind::KeywordMajority;
    ConceptWords words_;
    const ToyModel* model_ = nullptr;
    std::optional<ConceptClassifier> classifier_;
    double threshold_ = 0.5;
};

// Share of continuations the scorer calls positive. Throws EmptyInputError.
double score_generations(const std::vector<TokenSequence>& continuations,
                         const ConceptScorer& scorer);

// Mean negative log-likelihood of the generation on its own under the
// unmodified model: tokens 2..n each predicted from the ones before.
// Throws DomainError below two tokens.
double fluency_nll(const ToyModel& model, const TokenSequence& generation);

// Mean NLL of the generation tokens given the prompt. Throws DomainError on
// an empty generation and LengthError when prompt + generation overflows
// the context.
double conditioned_nll(const ToyModel& model, const TokenSequence& prompt,
                       const TokenSequence& generation);

// Mean NLL over every predicted token of prompt + generation.
double prompt_conditioned_nll(const ToyModel& model, const TokenSequence& prompt,
                              const TokenSequence& generation);

// Throws InsufficientDataError for fewer than two points or zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct ControlResult {
    std::vector<TokenSequence> baseline;  // continuations only
    std::vector<TokenSequence> steered;
    std::vector<SteeringSolution> solutions;
    double baseline_success = 0.0;
    double steered_success = 0.0;
    // Prompts whose positive-word fraction rose under steering.
    double raised_fraction = 0.0;
    double baseline_nll = 0.0;
    double steered_nll = 0.0;
    double baseline_conditioned_nll = 0.0;
    double steered_conditioned_nll = 0.0;
    double baseline_prompt_nll = 0.0;
    double steered_prompt_nll = 0.0;
    std::size_t infeasible = 0;
};

// Unsteered and steered greedy continuations of every prompt, scored with
// `scorer`; positive-word fractions come from `words`. Infeasible plans keep
// the unsteered continuation and are counted.
ControlResult evaluate_control(const ToyModel& model, const CavStore& store,
                               const std::vector<TokenSequence>& prompts,
                               const std::vector<SteeringTarget>& targets,
                               const ConceptScorer& scorer, const ConceptWords& words,
                               const GenerationSettings& settings);

struct GroupSuccess {
    std::vector<int> layers;
    double success_rate = 0.0;
    double mean_accuracy = 0.0;
};

struct AlignmentResult {
    std::vector<LayerAccuracy> per_layer_accuracy;
    std::vector<GroupSuccess> groups;
    int best_layer = 0;   // highest test accuracy
    int worst_layer = 0;  // lowest test accuracy
    // Success of the groups holding best_layer and worst_layer.
    double best_group_success = 0.0;
    double worst_group_success = 0.0;
};

// Consecutive groups of `width` layers covering 1..L (the last may be short).
std::vector<std::vector<int>> layer_groups(int layer_count, int width);

// Steers every prompt at each group's layers in turn and scores the results.
// Throws ConfigError when groups overlap or name a layer without a classifier
// in `scan`.
AlignmentResult layer_success_alignment(const ToyModel& model, const CavStore& store,
                                        const std::vector<LayerAccuracy>& scan,
                                        const std::vector<TokenSequence>& prompts,
                                        const std::string& concept_name, Variant variant,
                                        Direction direction, double p,
                                        const std::vector<std::vector<int>>& groups,
                                        const ConceptScorer& scorer,
                                        const GenerationSettings& settings);

struct StrengthPoint {
    double probability = 0.0;
    double strength = 0.0;  // |strength| of the Remove solve
};

struct StrengthCorrelation {
    std::vector<StrengthPoint> points;  // above-threshold prompts only
    double r = 0.0;
};

inline constexpr std::size_t kMinCorrelationPoints = 10;

// Pearson r between P(e) and |strength| for Remove at `p` over the prompts
// whose probe probability exceeds p. Throws InsufficientDataError below ten.
StrengthCorrelation strength_correlation(const std::vector<ActivationVector>& activations,
                                         const ConceptClassifier& classifier, double p);
StrengthCorrelation strength_correlation(const ToyModel& model,
                                         const std::vector<TokenSequence>& prompts,
                                         const ConceptClassifier& classifier, double p);

struct SweepRow {
    double swept_p = 0.0;
    std::size_t feasible = 0;
    std::size_t infeasible = 0;
    double mean_swept_strength = 0.0;  // mean |strength| over feasible prompts
    std::vector<double> success;       // one per concept, in sweep order
    bool fixed_satisfied = true;       // every feasible prompt meets the fixed bounds
};

struct SweepResult {
    std::vector<std::string> concepts;  // swept first, then the fixed ones
    std::vector<SweepRow> rows;
    // Per prompt, |swept strength| never decreases across feasible grid points.
    bool monotone = true;
    // Per prompt and grid point; NaN where infeasible.
    std::vector<std::vector<double>> swept_strengths;
};

// Three concepts share `layer`: `fixed` holds two targets held constant while
// the swept concept's target probability walks `p_grid` (increasing). Each
// grid point solves the joint program per prompt, generates and scores all
// three concepts with their keyword scorers.
SweepResult multi_concept_sweep(const ToyModel& model, const CavStore& store,
                                const std::vector<TokenSequence>& prompts, int layer,
                                const SteeringTarget& swept, const std::vector<double>& p_grid,
                                const std::vector<SteeringTarget>& fixed,
                                const std::vector<ConceptScorer>& scorers,
                                const GenerationSettings& settings);

// Everything one evaluation run produced; absent parts are omitted from JSON.
struct EvalReport {
    Json config;
    std::optional<ControlResult> control;
    std::optional<AlignmentResult> alignment;
    std::optional<StrengthCorrelation> correlation;
    std::optional<SweepResult> sweep;

    Json to_json() const;
};

Json control_to_json(const ControlResult& r);
Json alignment_to_json(const AlignmentResult& r);
Json correlation_to_json(const StrengthCorrelation& r);
Json sweep_to_json(const SweepResult& r);

std::string alignment_csv(const AlignmentResult& r);
std::string correlation_csv(const StrengthCorrelation& r);
std::string sweep_csv(const SweepResult& r);

}  // namespace gcav
