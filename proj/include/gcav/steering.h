#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gcav/cav.h"
#include "gcav/linear_program.h"
#include "gcav/toylm.h"

namespace gcav {

enum class Direction { Add, Remove };

std::string to_string(Direction direction);
Direction parse_direction(const std::string& text);  // "add" | "remove"

// 0.9 for Add, 0.1 for Remove.
double default_target_probability(Direction direction);

struct SteeringTarget {
    std::string concept_name;
    Direction direction = Direction::Add;
    double p = 0.9;
    std::vector<int> layers;
    Variant variant = Variant::Input;
};

enum class SteeringStatus { Steered, AlreadySatisfied, Infeasible };

std::string to_string(SteeringStatus status);

// Strength for one (concept, layer). Add strengths are >= 0, Remove <= 0.
struct StrengthEntry {
    std::string concept_name;
    int layer = 0;
    Direction direction = Direction::Add;
    double target_p = 0.0;  // after clamping
    double strength = 0.0;
    double probability_before = 0.0;
    double achieved_probability = 0.0;
    SteeringStatus status = SteeringStatus::AlreadySatisfied;
};

struct SteeringSolution {
    std::vector<StrengthEntry> entries;
    bool feasible = true;
    int lp_pivots = 0;
};

// Closed form: no steering when the probability condition already holds,
// otherwise strength = (logit(p) - b - w.e) / ||w||. The target probability
// is clamped to [1e-6, 1 - 1e-6].
// Throws LayerMismatchError when clf.layer != e.layer and DegenerateError
// when ||w|| < 1e-12.
StrengthEntry solve_single(const ActivationVector& e, const ConceptClassifier& clf,
                           Direction direction, double p);
StrengthEntry solve_single(const ActivationVector& e, const ConceptClassifier& clf,
                           const SteeringTarget& target);

ActivationVector apply_offset(const ActivationVector& e, const DenseVector& v, double strength);

struct ConceptBound {
    const ConceptClassifier* classifier = nullptr;
    double p = 0.0;
};

// Minimum total |strength| with every add probe at or above its p and every
// remove probe at or below its p, all moving along their own cavs. Solved as
// an exact LP over split nonnegative variables. An infeasible program yields
// feasible = false and Infeasible entries with zero strength.
// Throws LayerMismatchError, and DomainError when there are no targets.
SteeringSolution solve_multi(const ActivationVector& e, const std::vector<ConceptBound>& adds,
                             const std::vector<ConceptBound>& removes);

// The program solve_multi hands to the LP solver (variables: e+_k then e-_k).
LinearProgram multi_concept_program(const ActivationVector& e,
                                    const std::vector<ConceptBound>& adds,
                                    const std::vector<ConceptBound>& removes);

struct SteeringPlan {
    InterventionHook hook;
    SteeringSolution solution;
};

// Captures the prompt's activations once and solves every layer on its own:
// a lone target at a layer takes the closed form, several share one LP.
// Offsets are sum(strength * cav) per layer. Any infeasible layer empties the
// hook and marks the solution infeasible.
// Throws MissingCavError for an absent (concept, layer, variant).
SteeringPlan build_hook(const ToyModel& model, const TokenSequence& prompt, const CavStore& store,
                        const std::vector<SteeringTarget>& targets);

// Same, solved against activations captured elsewhere (element l - 1 is layer l).
SteeringPlan build_hook_from(const std::vector<ActivationVector>& activations,
                             const CavStore& store, const std::vector<SteeringTarget>& targets);

struct GenerationSettings {
    int max_new_tokens = 32;
    bool apply_at_every_step = true;
    // Re-solve the strengths at every decoding step from the current last
    // position instead of reusing the prompt's.
    bool resolve_per_token = false;
};

struct SteeredGeneration {
    TokenSequence tokens;  // prompt + continuation
    SteeringSolution solution;  // solved at the prompt
};

// Infeasible plans generate nothing: tokens holds just the prompt.
SteeredGeneration steer_generate(const ToyModel& model, const TokenSequence& prompt,
                                 const CavStore& store, const std::vector<SteeringTarget>& targets,
                                 const GenerationSettings& settings);

// {"targets": [{"concept", "direction", "p"?, "layers", "variant"?}]}
std::vector<SteeringTarget> parse_steering_request(const Json& j);
std::vector<SteeringTarget> read_steering_request(const std::filesystem::path& path);
Json steering_target_to_json(const SteeringTarget& target);
Json solution_to_json(const SteeringSolution& solution);

}  // namespace gcav
