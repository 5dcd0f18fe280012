#include "gcav/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "gcav/errors.h"

namespace gcav {

namespace {

constexpr double kBoundSlack = 1e-6;

TokenSequence continuation_of(const TokenSequence& full, std::size_t prompt_size) {
    return TokenSequence(full.begin() + static_cast<std::ptrdiff_t>(prompt_size), full.end());
}

double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) {
        s += x;
    }
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

bool meets_bound(const StrengthEntry& e) {
    return e.direction == Direction::Add ? e.achieved_probability >= e.target_p - kBoundSlack
                                         : e.achieved_probability <= e.target_p + kBoundSlack;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

std::string join_layers(const std::vector<int>& layers) {
    std::string s;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        s += (i ? "-" : "") + std::to_string(layers[i]);
    }
    return s;
}

}  // namespace

ConceptScorer ConceptScorer::keyword(ConceptWords words) {
    std::sort(words.positive.begin(), words.positive.end());
    std::sort(words.negative.begin(), words.negative.end());
    std::vector<int> both;
    std::set_intersection(words.positive.begin(), words.positive.end(), words.negative.begin(),
                          words.negative.end(), std::back_inserter(both));
    if (!both.empty()) {
        throw ConfigError("keyword scorer '" + words.name + "': word sets overlap");
    }
    ConceptScorer s;
    s.kind_ = ScorerKind::KeywordMajority;
    s.words_ = std::move(words);
    return s;
}

ConceptScorer ConceptScorer::probe(const ToyModel& model, ConceptClassifier classifier,
                                   double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("probe scorer threshold must lie in (0, 1)");
    }
    if (classifier.layer < 1 || classifier.layer > model.config().layer_count) {
        throw ConfigError("probe scorer layer outside the model");
    }
    ConceptScorer s;
    s.kind_ = ScorerKind::ClassifierProbe;
    s.words_.name = classifier.concept_name;
    s.model_ = &model;
    s.classifier_ = std::move(classifier);
    s.threshold_ = threshold;
    return s;
}

bool ConceptScorer::is_positive(const TokenSequence& continuation) const {
    if (kind_ == ScorerKind::KeywordMajority) {
        return words_.is_positive(continuation);
    }
    if (continuation.empty()) {
        return false;
    }
    auto acts = forward_capture(*model_, continuation);
    const auto& e = acts[static_cast<std::size_t>(classifier_->layer - 1)];
    return classifier_->probability(e.values) >= threshold_;
}

double score_generations(const std::vector<TokenSequence>& continuations,
                         const ConceptScorer& scorer) {
    if (continuations.empty()) {
        throw EmptyInputError("score_generations: no generations");
    }
    std::size_t hits = 0;
    for (const auto& c : continuations) {
        hits += scorer.is_positive(c) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(continuations.size());
}

double fluency_nll(const ToyModel& model, const TokenSequence& generation) {
    if (generation.size() < 2) {
        throw DomainError("fluency_nll: generation needs at least two tokens");
    }
    if (static_cast<int>(generation.size()) > model.config().context_length) {
        throw LengthError("fluency_nll: generation exceeds the context length");
    }
    return -mean(token_log_probs(model, generation));
}

double conditioned_nll(const ToyModel& model, const TokenSequence& prompt,
                       const TokenSequence& generation) {
    if (generation.empty()) {
        throw DomainError("conditioned_nll: empty generation");
    }
    if (prompt.empty()) {
        throw DomainError("conditioned_nll: empty prompt");
    }
    TokenSequence full = prompt;
    full.insert(full.end(), generation.begin(), generation.end());
    if (static_cast<int>(full.size()) > model.config().context_length) {
        throw LengthError("conditioned_nll: prompt + generation exceeds the context length");
    }
    std::vector<double> lp = token_log_probs(model, full);
    double total = 0.0;
    for (std::size_t i = prompt.size() - 1; i < lp.size(); ++i) {
        total -= lp[i];
    }
    return total / static_cast<double>(generation.size());
}

double prompt_conditioned_nll(const ToyModel& model, const TokenSequence& prompt,
                              const TokenSequence& generation) {
    TokenSequence full = prompt;
    full.insert(full.end(), generation.begin(), generation.end());
    if (full.size() < 2) {
        throw DomainError("prompt_conditioned_nll: need at least two tokens");
    }
    if (static_cast<int>(full.size()) > model.config().context_length) {
        throw LengthError("prompt_conditioned_nll: sequence exceeds the context length");
    }
    std::vector<double> lp = token_log_probs(model, full);
    return -mean(lp);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) {
        throw DimensionMismatchError("pearson: samples differ in length");
    }
    if (x.size() < 2) {
        throw InsufficientDataError("pearson: need at least two points");
    }
    double mx = mean(x);
    double my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw InsufficientDataError("pearson: zero variance");
    }
    return sxy / std::sqrt(sxx * syy);
}

ControlResult evaluate_control(const ToyModel& model, const CavStore& store,
                               const std::vector<TokenSequence>& prompts,
                               const std::vector<SteeringTarget>& targets,
                               const ConceptScorer& scorer, const ConceptWords& words,
                               const GenerationSettings& settings) {
    if (prompts.empty()) {
        throw EmptyInputError("evaluate_control: no prompts");
    }
    ControlResult r;
    std::vector<double> base_nll, steer_nll, base_cnll, steer_cnll, base_pnll, steer_pnll;
    std::size_t raised = 0;
    for (const auto& prompt : prompts) {
        TokenSequence base = continuation_of(
            generate(model, prompt, nullptr, settings.max_new_tokens), prompt.size());
        SteeredGeneration sg = steer_generate(model, prompt, store, targets, settings);
        TokenSequence steered = base;
        if (sg.solution.feasible) {
            steered = continuation_of(sg.tokens, prompt.size());
        } else {
            ++r.infeasible;
        }
        if (words.positive_fraction(steered) > words.positive_fraction(base)) {
            ++raised;
        }
        if (base.size() >= 2 && steered.size() >= 2) {
            base_nll.push_back(fluency_nll(model, base));
            steer_nll.push_back(fluency_nll(model, steered));
        }
        if (!base.empty() && !steered.empty()) {
            base_cnll.push_back(conditioned_nll(model, prompt, base));
            steer_cnll.push_back(conditioned_nll(model, prompt, steered));
        }
        base_pnll.push_back(prompt_conditioned_nll(model, prompt, base));
        steer_pnll.push_back(prompt_conditioned_nll(model, prompt, steered));
        r.baseline.push_back(std::move(base));
        r.steered.push_back(std::move(steered));
        r.solutions.push_back(std::move(sg.solution));
    }
    r.baseline_success = score_generations(r.baseline, scorer);
    r.steered_success = score_generations(r.steered, scorer);
    r.raised_fraction = static_cast<double>(raised) / static_cast<double>(prompts.size());
    r.baseline_nll = mean(base_nll);
    r.steered_nll = mean(steer_nll);
    r.baseline_conditioned_nll = mean(base_cnll);
    r.steered_conditioned_nll = mean(steer_cnll);
    r.baseline_prompt_nll = mean(base_pnll);
    r.steered_prompt_nll = mean(steer_pnll);
    return r;
}

std::vector<std::vector<int>> layer_groups(int layer_count, int width) {
    if (layer_count < 1 || width < 1) {
        throw ConfigError("layer groups need layerCount >= 1 and width >= 1");
    }
    std::vector<std::vector<int>> out;
    for (int start = 1; start <= layer_count; start += width) {
        std::vector<int> g;
        for (int l = start; l < start + width && l <= layer_count; ++l) {
            g.push_back(l);
        }
        out.push_back(std::move(g));
    }
    return out;
}

AlignmentResult layer_success_alignment(const ToyModel& model, const CavStore& store,
                                        const std::vector<LayerAccuracy>& scan,
                                        const std::vector<TokenSequence>& prompts,
                                        const std::string& concept_name, Variant variant,
                                        Direction direction, double p,
                                        const std::vector<std::vector<int>>& groups,
                                        const ConceptScorer& scorer,
                                        const GenerationSettings& settings) {
    if (scan.empty() || groups.empty()) {
        throw ConfigError("layer alignment needs a layer scan and at least one group");
    }
    std::set<int> seen;
    for (const auto& g : groups) {
        if (g.empty()) {
            throw ConfigError("layer alignment: empty group");
        }
        for (int l : g) {
            if (!seen.insert(l).second) {
                throw ConfigError("layer alignment: layer " + std::to_string(l) +
                                  " appears in two groups");
            }
            auto it = std::find_if(scan.begin(), scan.end(),
                                   [l](const LayerAccuracy& a) { return a.layer == l; });
            if (it == scan.end()) {
                throw ConfigError("layer alignment: layer " + std::to_string(l) +
                                  " missing from the layer scan");
            }
        }
    }
    AlignmentResult out;
    out.per_layer_accuracy = scan;
    std::sort(out.per_layer_accuracy.begin(), out.per_layer_accuracy.end(),
              [](const LayerAccuracy& a, const LayerAccuracy& b) { return a.layer < b.layer; });
    std::vector<int> ranked = rank_layers(out.per_layer_accuracy);
    std::vector<int> grouped;
    for (int l : ranked) {
        if (seen.count(l)) {
            grouped.push_back(l);
        }
    }
    out.best_layer = grouped.front();
    out.worst_layer = grouped.back();

    for (const auto& g : groups) {
        SteeringTarget t{concept_name, direction, p, g, variant};
        std::vector<TokenSequence> conts;
        for (const auto& prompt : prompts) {
            SteeredGeneration sg = steer_generate(model, prompt, store, {t}, settings);
            TokenSequence full = sg.solution.feasible
                                     ? sg.tokens
                                     : generate(model, prompt, nullptr, settings.max_new_tokens);
            conts.push_back(continuation_of(full, prompt.size()));
        }
        GroupSuccess gs;
        gs.layers = g;
        gs.success_rate = score_generations(conts, scorer);
        for (int l : g) {
            for (const auto& a : scan) {
                if (a.layer == l) {
                    gs.mean_accuracy += a.test_accuracy / static_cast<double>(g.size());
                }
            }
        }
        if (std::find(g.begin(), g.end(), out.best_layer) != g.end()) {
            out.best_group_success = gs.success_rate;
        }
        if (std::find(g.begin(), g.end(), out.worst_layer) != g.end()) {
            out.worst_group_success = gs.success_rate;
        }
        out.groups.push_back(std::move(gs));
    }
    return out;
}

StrengthCorrelation strength_correlation(const std::vector<ActivationVector>& activations,
                                         const ConceptClassifier& classifier, double p) {
    StrengthCorrelation out;
    const double bound = clamp_probability(p);
    for (const auto& e : activations) {
        double prob = classifier.probability(e.values);
        if (prob > bound) {
            StrengthEntry s = solve_single(e, classifier, Direction::Remove, bound);
            out.points.push_back({prob, std::abs(s.strength)});
        }
    }
    if (out.points.size() < kMinCorrelationPoints) {
        throw InsufficientDataError("strength correlation: " + std::to_string(out.points.size()) +
                                    " prompts above p = " + fmt(bound) + ", need " +
                                    std::to_string(kMinCorrelationPoints));
    }
    std::vector<double> x, y;
    for (const auto& pt : out.points) {
        x.push_back(pt.probability);
        y.push_back(pt.strength);
    }
    out.r = pearson(x, y);
    return out;
}

StrengthCorrelation strength_correlation(const ToyModel& model,
                                         const std::vector<TokenSequence>& prompts,
                                         const ConceptClassifier& classifier, double p) {
    std::vector<ActivationVector> acts;
    for (const auto& prompt : prompts) {
        acts.push_back(forward_capture(model, prompt)[static_cast<std::size_t>(classifier.layer - 1)]);
    }
    return strength_correlation(acts, classifier, p);
}

SweepResult multi_concept_sweep(const ToyModel& model, const CavStore& store,
                                const std::vector<TokenSequence>& prompts, int layer,
                                const SteeringTarget& swept, const std::vector<double>& p_grid,
                                const std::vector<SteeringTarget>& fixed,
                                const std::vector<ConceptScorer>& scorers,
                                const GenerationSettings& settings) {
    if (fixed.size() != 2) {
        throw ConfigError("sweep needs exactly two fixed targets");
    }
    if (scorers.size() != 3) {
        throw ConfigError("sweep needs one scorer per concept (three)");
    }
    if (p_grid.empty() || prompts.empty()) {
        throw EmptyInputError("sweep needs a nonempty grid and prompt set");
    }
    for (std::size_t i = 1; i < p_grid.size(); ++i) {
        if (!(p_grid[i] > p_grid[i - 1])) {
            throw ConfigError("sweep grid must be strictly increasing");
        }
    }
    SweepResult out;
    out.concepts = {swept.concept_name, fixed[0].concept_name, fixed[1].concept_name};
    std::vector<std::vector<ActivationVector>> acts;
    for (const auto& prompt : prompts) {
        acts.push_back(forward_capture(model, prompt));
    }
    out.swept_strengths.assign(prompts.size(), {});
    for (double p : p_grid) {
        std::vector<SteeringTarget> targets;
        SteeringTarget s = swept;
        s.p = p;
        s.layers = {layer};
        targets.push_back(s);
        for (SteeringTarget f : fixed) {
            f.layers = {layer};
            targets.push_back(f);
        }
        SweepRow row;
        row.swept_p = p;
        std::vector<std::vector<TokenSequence>> conts(3);
        std::vector<double> strengths;
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            SteeringPlan plan = build_hook_from(acts[i], store, targets);
            if (!plan.solution.feasible) {
                ++row.infeasible;
                out.swept_strengths[i].push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            ++row.feasible;
            double swept_strength = 0.0;
            for (const auto& e : plan.solution.entries) {
                if (e.concept_name == swept.concept_name && e.direction == swept.direction) {
                    swept_strength = std::abs(e.strength);
                } else if (!meets_bound(e)) {
                    row.fixed_satisfied = false;
                }
            }
            strengths.push_back(swept_strength);
            out.swept_strengths[i].push_back(swept_strength);
            plan.hook.apply_at_every_step = settings.apply_at_every_step;
            TokenSequence cont = continuation_of(
                generate(model, prompts[i], &plan.hook, settings.max_new_tokens), prompts[i].size());
            for (auto& c : conts) {
                c.push_back(cont);
            }
        }
        row.mean_swept_strength = mean(strengths);
        for (std::size_t c = 0; c < 3; ++c) {
            row.success.push_back(conts[c].empty() ? 0.0 : score_generations(conts[c], scorers[c]));
        }
        out.rows.push_back(std::move(row));
    }
    for (const auto& series : out.swept_strengths) {
        double prev = -1.0;
        for (double v : series) {
            if (std::isnan(v)) {
                continue;
            }
            if (v < prev - 1e-9) {
                out.monotone = false;
            }
            prev = v;
        }
    }
    return out;
}

Json control_to_json(const ControlResult& r) {
    Json sol = Json::array();
    for (const auto& s : r.solutions) {
        sol.push_back(solution_to_json(s));
    }
    return Json{{"baselineSuccessRate", r.baseline_success},
                {"conceptSuccessRate", r.steered_success},
                {"raisedFraction", r.raised_fraction},
                {"baselineFluencyNLL", r.baseline_nll},
                {"fluencyNLL", r.steered_nll},
                {"baselineConditionedNLL", r.baseline_conditioned_nll},
                {"conditionedNLL", r.steered_conditioned_nll},
                {"baselinePromptNLL", r.baseline_prompt_nll},
                {"promptNLL", r.steered_prompt_nll},
                {"infeasible", r.infeasible},
                {"baseline", r.baseline},
                {"steered", r.steered},
                {"solutions", std::move(sol)}};
}

Json alignment_to_json(const AlignmentResult& r) {
    Json acc = Json::array();
    for (const auto& a : r.per_layer_accuracy) {
        acc.push_back(Json{{"layer", a.layer}, {"testAccuracy", a.test_accuracy},
                           {"testLogLoss", a.test_log_loss}});
    }
    Json groups = Json::array();
    for (const auto& g : r.groups) {
        groups.push_back(Json{{"layers", g.layers}, {"successRate", g.success_rate},
                              {"meanAccuracy", g.mean_accuracy}});
    }
    return Json{{"perLayerAccuracy", std::move(acc)},
                {"groups", std::move(groups)},
                {"bestLayer", r.best_layer},
                {"worstLayer", r.worst_layer},
                {"bestGroupSuccess", r.best_group_success},
                {"worstGroupSuccess", r.worst_group_success}};
}

Json correlation_to_json(const StrengthCorrelation& r) {
    Json pts = Json::array();
    for (const auto& p : r.points) {
        pts.push_back(Json{{"probability", p.probability}, {"strength", p.strength}});
    }
    return Json{{"r", r.r}, {"n", r.points.size()}, {"points", std::move(pts)}};
}

Json sweep_to_json(const SweepResult& r) {
    Json rows = Json::array();
    for (const auto& row : r.rows) {
        rows.push_back(Json{{"sweptP", row.swept_p},
                            {"feasible", row.feasible},
                            {"infeasible", row.infeasible},
                            {"meanSweptStrength", row.mean_swept_strength},
                            {"success", row.success},
                            {"fixedSatisfied", row.fixed_satisfied}});
    }
    return Json{{"concepts", r.concepts}, {"rows", std::move(rows)}, {"monotone", r.monotone}};
}

Json EvalReport::to_json() const {
    Json j{{"config", config}};
    if (control) {
        j["control"] = control_to_json(*control);
        j["conceptSuccessRate"] = control->steered_success;
        j["baselineSuccessRate"] = control->baseline_success;
        j["fluencyNLL"] = control->steered_nll;
    }
    if (alignment) {
        j["alignment"] = alignment_to_json(*alignment);
        j["perLayerAccuracy"] = j["alignment"]["perLayerAccuracy"];
    }
    if (correlation) {
        j["strengthCorrelation"] = correlation->r;
        j["correlation"] = correlation_to_json(*correlation);
    }
    if (sweep) {
        j["sweepTable"] = sweep_to_json(*sweep);
    }
    return j;
}

std::string alignment_csv(const AlignmentResult& r) {
    std::string out = "group,layers,success_rate,mean_accuracy\n";
    for (std::size_t i = 0; i < r.groups.size(); ++i) {
        const auto& g = r.groups[i];
        out += std::to_string(i + 1) + "," + join_layers(g.layers) + "," + fmt(g.success_rate) +
               "," + fmt(g.mean_accuracy) + "\n";
    }
    return out;
}

std::string correlation_csv(const StrengthCorrelation& r) {
    std::string out = "probability,strength\n";
    for (const auto& p : r.points) {
        out += fmt(p.probability) + "," + fmt(p.strength) + "\n";
    }
    return out;
}

std::string sweep_csv(const SweepResult& r) {
    std::string out = "swept_p,feasible,infeasible,mean_swept_strength";
    for (const auto& c : r.concepts) {
        out += ",success_" + c;
    }
    out += ",fixed_satisfied\n";
    for (const auto& row : r.rows) {
        out += fmt(row.swept_p) + "," + std::to_string(row.feasible) + "," +
               std::to_string(row.infeasible) + "," + fmt(row.mean_swept_strength);
        for (double s : row.success) {
            out += "," + fmt(s);
        }
        out += std::string(",") + (row.fixed_satisfied ? "true" : "false") + "\n";
    }
    return out;
}

}  // namespace gcav
