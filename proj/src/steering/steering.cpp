#include "gcav/steering.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "gcav/errors.h"

namespace gcav {

namespace {

constexpr double kMinWeightNorm = 1e-12;

void check_layer(const ActivationVector& e, const ConceptClassifier& clf) {
    if (clf.layer != e.layer) {
        throw LayerMismatchError("classifier " + clf.concept_name + " is for layer " +
                                 std::to_string(clf.layer) + ", activation is from layer " +
                                 std::to_string(e.layer));
    }
}

bool condition_holds(Direction direction, double probability, double p) {
    return direction == Direction::Add ? probability >= p : probability <= p;
}

}  // namespace

std::string to_string(Direction direction) {
    return direction == Direction::Add ? "add" : "remove";
}

Direction parse_direction(const std::string& text) {
    if (text == "add") {
        return Direction::Add;
    }
    if (text == "remove") {
        return Direction::Remove;
    }
    throw FormatError("direction must be \"add\" or \"remove\", got \"" + text + "\"");
}

double default_target_probability(Direction direction) {
    return direction == Direction::Add ? 0.9 : 0.1;
}

std::string to_string(SteeringStatus status) {
    switch (status) {
        case SteeringStatus::Steered:
            return "steered";
        case SteeringStatus::AlreadySatisfied:
            return "already-satisfied";
        case SteeringStatus::Infeasible:
            return "infeasible";
    }
    return "unknown";
}

StrengthEntry solve_single(const ActivationVector& e, const ConceptClassifier& clf,
                           Direction direction, double p) {
    check_layer(e, clf);
    const double norm = clf.model.w.norm();
    if (norm < kMinWeightNorm) {
        throw DegenerateError("classifier " + clf.concept_name + " has ||w|| below 1e-12");
    }
    StrengthEntry out;
    out.concept_name = clf.concept_name;
    out.layer = clf.layer;
    out.direction = direction;
    out.target_p = clamp_probability(p);
    const double z = clf.model.logit_of(e.values);
    out.probability_before = sigmoid(z);
    if (condition_holds(direction, out.probability_before, out.target_p)) {
        out.achieved_probability = out.probability_before;
        return out;
    }
    double eps = (logit(out.target_p) - z) / norm;
    // P(e) on the wrong side of p can still leave z a rounding error past s0.
    eps = direction == Direction::Add ? std::max(eps, 0.0) : std::min(eps, 0.0);
    out.strength = eps;
    out.status = SteeringStatus::Steered;
    out.achieved_probability = clf.probability(e.values.axpy(eps, clf.cav));
    return out;
}

StrengthEntry solve_single(const ActivationVector& e, const ConceptClassifier& clf,
                           const SteeringTarget& target) {
    if (target.concept_name != clf.concept_name) {
        throw DomainError("target concept " + target.concept_name + " does not match classifier " +
                          clf.concept_name);
    }
    return solve_single(e, clf, target.direction, target.p);
}

ActivationVector apply_offset(const ActivationVector& e, const DenseVector& v, double strength) {
    return ActivationVector{e.layer, e.position, e.values.axpy(strength, v)};
}

LinearProgram multi_concept_program(const ActivationVector& e,
                                    const std::vector<ConceptBound>& adds,
                                    const std::vector<ConceptBound>& removes) {
    std::vector<ConceptBound> all = adds;
    all.insert(all.end(), removes.begin(), removes.end());
    if (all.empty()) {
        throw DomainError("solve_multi needs at least one target");
    }
    for (const auto& t : all) {
        if (t.classifier == nullptr) {
            throw DomainError("solve_multi: null classifier");
        }
        check_layer(e, *t.classifier);
    }
    const std::size_t k = all.size();
    LinearProgram lp;
    lp.variable_count = 2 * k;
    lp.nonnegative = true;
    lp.objective.assign(2 * k, 1.0);
    for (std::size_t i = 0; i < k; ++i) {
        const ConceptClassifier& ci = *all[i].classifier;
        LinearConstraint c;
        c.coefficients.resize(2 * k);
        for (std::size_t j = 0; j < k; ++j) {
            double a = ci.model.w.dot(all[j].classifier->cav);
            c.coefficients[j] = a;
            c.coefficients[k + j] = -a;
        }
        c.relation = i < adds.size() ? Relation::GreaterEqual : Relation::LessEqual;
        c.bound = logit(clamp_probability(all[i].p)) - ci.model.logit_of(e.values);
        lp.constraints.push_back(std::move(c));
    }
    return lp;
}

SteeringSolution solve_multi(const ActivationVector& e, const std::vector<ConceptBound>& adds,
                             const std::vector<ConceptBound>& removes) {
    LinearProgram lp = multi_concept_program(e, adds, removes);
    LpResult r = solve_lp(lp);
    const std::size_t k = adds.size() + removes.size();
    SteeringSolution out;
    out.lp_pivots = r.pivots;
    out.feasible = r.status == LpStatus::Optimal;
    std::vector<double> strengths(k, 0.0);
    if (out.feasible) {
        for (std::size_t j = 0; j < k; ++j) {
            strengths[j] = r.solution[j] - r.solution[k + j];
        }
    }
    DenseVector moved = e.values;
    for (std::size_t j = 0; j < k; ++j) {
        const auto& t = j < adds.size() ? adds[j] : removes[j - adds.size()];
        moved = moved.axpy(strengths[j], t.classifier->cav);
    }
    for (std::size_t j = 0; j < k; ++j) {
        const auto& t = j < adds.size() ? adds[j] : removes[j - adds.size()];
        StrengthEntry s;
        s.concept_name = t.classifier->concept_name;
        s.layer = t.classifier->layer;
        s.direction = j < adds.size() ? Direction::Add : Direction::Remove;
        s.target_p = clamp_probability(t.p);
        s.probability_before = t.classifier->probability(e.values);
        if (!out.feasible) {
            s.status = SteeringStatus::Infeasible;
            s.achieved_probability = s.probability_before;
        } else {
            s.strength = strengths[j];
            s.achieved_probability = t.classifier->probability(moved);
            s.status = strengths[j] == 0.0 ? SteeringStatus::AlreadySatisfied : SteeringStatus::Steered;
        }
        out.entries.push_back(std::move(s));
    }
    return out;
}

SteeringPlan build_hook_from(const std::vector<ActivationVector>& activations,
                             const CavStore& store, const std::vector<SteeringTarget>& targets) {
    if (targets.empty()) {
        throw ConfigError("steering request has no targets");
    }
    std::map<int, std::vector<const SteeringTarget*>> by_layer;
    for (const auto& t : targets) {
        if (t.layers.empty()) {
            throw ConfigError("target " + t.concept_name + " lists no layers");
        }
        for (int l : t.layers) {
            if (l < 1 || l > static_cast<int>(activations.size())) {
                throw ConfigError("target " + t.concept_name + ": layer " + std::to_string(l) +
                                  " outside [1, " + std::to_string(activations.size()) + "]");
            }
            by_layer[l].push_back(&t);
        }
    }
    SteeringPlan plan;
    for (const auto& [layer, list] : by_layer) {
        const ActivationVector& e = activations[static_cast<std::size_t>(layer - 1)];
        SteeringSolution part;
        // Classifiers in the order their entries come back.
        std::vector<const ConceptClassifier*> used;
        if (list.size() == 1) {
            const SteeringTarget& t = *list.front();
            used.push_back(&store.at(t.concept_name, layer, t.variant));
            part.entries.push_back(solve_single(e, *used.front(), t.direction, t.p));
        } else {
            std::vector<ConceptBound> adds, removes;
            for (const SteeringTarget* t : list) {
                ConceptBound b{&store.at(t->concept_name, layer, t->variant), t->p};
                (t->direction == Direction::Add ? adds : removes).push_back(b);
            }
            for (const auto& b : adds) {
                used.push_back(b.classifier);
            }
            for (const auto& b : removes) {
                used.push_back(b.classifier);
            }
            part = solve_multi(e, adds, removes);
        }
        plan.solution.feasible = plan.solution.feasible && part.feasible;
        plan.solution.lp_pivots += part.lp_pivots;
        DenseVector offset = DenseVector::zeros(e.values.size());
        for (std::size_t i = 0; i < part.entries.size(); ++i) {
            offset = offset.axpy(part.entries[i].strength, used[i]->cav);
            plan.solution.entries.push_back(part.entries[i]);
        }
        plan.hook.offsets[layer] = std::move(offset);
    }
    if (!plan.solution.feasible) {
        plan.hook.offsets.clear();
    }
    return plan;
}

SteeringPlan build_hook(const ToyModel& model, const TokenSequence& prompt, const CavStore& store,
                        const std::vector<SteeringTarget>& targets) {
    return build_hook_from(forward_capture(model, prompt), store, targets);
}

SteeredGeneration steer_generate(const ToyModel& model, const TokenSequence& prompt,
                                 const CavStore& store, const std::vector<SteeringTarget>& targets,
                                 const GenerationSettings& settings) {
    SteeringPlan plan = build_hook(model, prompt, store, targets);
    SteeredGeneration out;
    out.solution = plan.solution;
    if (!plan.solution.feasible) {
        out.tokens = prompt;
        return out;
    }
    if (!settings.resolve_per_token) {
        plan.hook.apply_at_every_step = settings.apply_at_every_step;
        out.tokens = generate(model, prompt, &plan.hook, settings.max_new_tokens);
        return out;
    }
    bool first = true;
    auto policy = [&](const std::vector<ActivationVector>& acts) -> std::map<int, DenseVector> {
        if (!first && !settings.apply_at_every_step) {
            return {};
        }
        first = false;
        SteeringPlan step = build_hook_from(acts, store, targets);
        return step.hook.offsets;
    };
    out.tokens = generate_adaptive(model, prompt, policy, settings.max_new_tokens);
    return out;
}

std::vector<SteeringTarget> parse_steering_request(const Json& j) {
    if (!j.is_object() || !j.contains("targets") || !j.at("targets").is_array()) {
        throw FormatError("steering request: expected {\"targets\": [...]}");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "targets") {
            throw FormatError("steering request: unknown key '" + it.key() + "'");
        }
    }
    static const std::set<std::string> known{"concept", "direction", "p", "layers", "variant"};
    std::vector<SteeringTarget> out;
    std::size_t index = 0;
    for (const auto& t : j.at("targets")) {
        std::string where = "steering target " + std::to_string(index++);
        try {
            for (auto it = t.begin(); it != t.end(); ++it) {
                if (!known.count(it.key())) {
                    throw FormatError("unknown key '" + it.key() + "'");
                }
            }
            SteeringTarget s;
            s.concept_name = t.at("concept").get<std::string>();
            s.direction = parse_direction(t.at("direction").get<std::string>());
            s.p = t.contains("p") ? t.at("p").get<double>() : default_target_probability(s.direction);
            if (!(s.p > 0.0 && s.p < 1.0)) {
                throw FormatError("p must lie in (0, 1)");
            }
            s.layers = t.at("layers").get<std::vector<int>>();
            if (s.layers.empty()) {
                throw FormatError("layers must be nonempty");
            }
            if (t.contains("variant")) {
                s.variant = parse_variant(t.at("variant").get<std::string>());
            }
            out.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    return out;
}

std::vector<SteeringTarget> read_steering_request(const std::filesystem::path& path) {
    return parse_steering_request(read_json_file(path));
}

Json steering_target_to_json(const SteeringTarget& target) {
    return Json{{"concept", target.concept_name},
                {"direction", to_string(target.direction)},
                {"p", target.p},
                {"layers", target.layers},
                {"variant", to_string(target.variant)}};
}

Json solution_to_json(const SteeringSolution& solution) {
    Json entries = Json::array();
    for (const auto& e : solution.entries) {
        entries.push_back(Json{{"concept", e.concept_name},
                               {"layer", e.layer},
                               {"direction", to_string(e.direction)},
                               {"targetP", e.target_p},
                               {"strength", e.strength},
                               {"probabilityBefore", e.probability_before},
                               {"achievedProbability", e.achieved_probability},
                               {"status", to_string(e.status)}});
    }
    return Json{{"feasible", solution.feasible}, {"entries", std::move(entries)}};
}

}  // namespace gcav
