// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.
// usage: gcav_acceptance <source dir> <work dir>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "gcav/canonical_json.h"
#include "gcav/cav.h"
#include "gcav/cli.h"
#include "gcav/logistic.h"
#include "gcav/steering.h"

using namespace gcav;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
    std::printf("%s %2d  %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

void info(const std::string& line) {
    std::printf("     info  %s\n", line.c_str());
    std::fflush(stdout);
}

std::string num(double v, const char* f = "%.4g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

DenseVector random_vector(Rng& rng, std::size_t dim, double scale) {
    std::vector<double> v(dim);
    for (auto& x : v) {
        x = rng.normal(0.0, scale);
    }
    return DenseVector(std::move(v));
}

ConceptClassifier probe(const std::string& name, DenseVector w, double b) {
    ConceptClassifier c;
    c.concept_name = name;
    c.layer = 1;
    c.model.w = std::move(w);
    c.model.b = b;
    c.cav = c.model.w * (1.0 / c.model.w.norm());
    return c;
}

// The probe's logit after moving e by sum_j s_j * cav_j, from the explicit vector.
double moved_logit(const ConceptClassifier& c, const DenseVector& e,
                   const std::vector<const ConceptClassifier*>& along, const std::vector<double>& s) {
    DenseVector x = e;
    for (std::size_t j = 0; j < along.size(); ++j) {
        x = x.axpy(s[j], along[j]->cav);
    }
    return c.model.w.dot(x) + c.model.b;
}

bool holds(Direction d, double prob, double p) { return d == Direction::Add ? prob >= p : prob <= p; }

// ---- 1, 2: closed form ------------------------------------------------------

// Smallest-magnitude strength of the right sign on the grid -50:1e-3:50.
std::optional<double> grid_single(const ConceptClassifier& c, const DenseVector& e, Direction d,
                                  double p) {
    const double z0 = c.model.w.dot(e) + c.model.b;
    const double slope = c.model.w.dot(c.cav);
    const double sign = d == Direction::Add ? 1.0 : -1.0;
    for (int i = 0; i <= 50000; ++i) {
        double s = sign * i * 1e-3;
        if (holds(d, sigmoid(z0 + s * slope), p)) {
            return s;
        }
    }
    return std::nullopt;
}

void criterion_closed_form() {
    Rng rng(101);
    int steered = 0;
    int bad_equality = 0;
    int bad_grid = 0;
    int off_grid = 0;
    double worst_eq = 0.0;
    double worst_grid = 0.0;
    double solve_seconds = 0.0;
    for (int n = 0; n < 1000; ++n) {
        std::size_t dim = 2 + rng.below(31);
        ConceptClassifier c = probe("x", random_vector(rng, dim, 1.0), rng.normal(0.0, 1.0));
        DenseVector e = random_vector(rng, dim, 1.0);
        Direction d = rng.uniform() < 0.5 ? Direction::Add : Direction::Remove;
        double p = 0.001 + 0.998 * rng.uniform();
        auto t0 = std::chrono::steady_clock::now();
        StrengthEntry s = solve_single(ActivationVector{1, 0, e}, c, d, p);
        solve_seconds += seconds_since(t0);
        if (s.strength != 0.0) {
            ++steered;
            double got = sigmoid(moved_logit(c, e, {&c}, {s.strength}));
            worst_eq = std::max(worst_eq, std::abs(got - p));
            bad_equality += std::abs(got - p) <= 1e-6 ? 0 : 1;
        }
        auto g = grid_single(c, e, d, p);
        if (!g) {
            ++off_grid;
            continue;
        }
        worst_grid = std::max(worst_grid, std::abs(*g - s.strength));
        bad_grid += std::abs(*g - s.strength) <= 1e-3 ? 0 : 1;
    }
    bool ok = bad_equality == 0 && bad_grid == 0 && off_grid == 0 && solve_seconds < 5.0;
    verdict(1, ok,
            "closed form: 1000 instances (" + std::to_string(steered) + " steered), max |P - p| " +
                num(worst_eq) + ", max |eps - grid| " + num(worst_grid) + ", " +
                std::to_string(off_grid) + " off grid, solve time " + num(solve_seconds, "%.3f") + " s");
}

void criterion_zero_case() {
    Rng rng(202);
    int total = 0;
    int zero = 0;
    for (int n = 0; n < 1000; ++n) {
        std::size_t dim = 2 + rng.below(15);
        ConceptClassifier c = probe("x", random_vector(rng, dim, 1.0), rng.normal(0.0, 1.0));
        DenseVector e = random_vector(rng, dim, 1.0);
        Direction d = rng.uniform() < 0.5 ? Direction::Add : Direction::Remove;
        double before = c.probability(e);
        // Every tenth instance sits exactly on the boundary.
        double p = before;
        if (n % 10 != 0) {
            p = d == Direction::Add ? before * rng.uniform() : before + (1.0 - before) * rng.uniform();
        }
        if (!(p > 0.0 && p < 1.0) || clamp_probability(p) != p) {
            continue;
        }
        ++total;
        StrengthEntry s = solve_single(ActivationVector{1, 0, e}, c, d, p);
        zero += (s.strength == 0.0 && s.status == SteeringStatus::AlreadySatisfied) ? 1 : 0;
    }
    verdict(2, zero == total && total >= 900,
            "zero case: " + std::to_string(zero) + "/" + std::to_string(total) +
                " satisfied instances returned strength exactly 0");
}

// ---- 3: multi-concept -------------------------------------------------------

struct Bound {
    const ConceptClassifier* c;
    Direction d;
    double p;
};

bool grid_feasible(const std::vector<Bound>& bounds, const DenseVector& e,
                   const std::vector<const ConceptClassifier*>& along, const std::vector<double>& s) {
    for (const auto& b : bounds) {
        double z = moved_logit(*b.c, e, along, s);
        double target = logit(b.p);
        if (b.d == Direction::Add ? z < target : z > target) {
            return false;
        }
    }
    return true;
}

// Coarse grid over [-8, 8]^k, then five rounds of refinement around the best point.
std::optional<double> grid_multi(const std::vector<Bound>& bounds, const DenseVector& e) {
    std::vector<const ConceptClassifier*> along;
    for (const auto& b : bounds) {
        along.push_back(b.c);
    }
    const std::size_t k = bounds.size();
    std::vector<double> centre(k, 0.0);
    double half = 8.0;
    double step = 0.25;
    std::optional<double> best;
    for (int round = 0; round < 6; ++round) {
        int per_axis = static_cast<int>(std::lround(2 * half / step)) + 1;
        std::vector<double> best_point = centre;
        std::vector<int> idx(k, 0);
        std::vector<double> s(k);
        while (true) {
            double l1 = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                s[j] = centre[j] - half + idx[j] * step;
                l1 += std::abs(s[j]);
            }
            if ((!best || l1 < *best) && grid_feasible(bounds, e, along, s)) {
                best = l1;
                best_point = s;
            }
            std::size_t j = 0;
            while (j < k && ++idx[j] == per_axis) {
                idx[j++] = 0;
            }
            if (j == k) {
                break;
            }
        }
        if (!best) {
            return std::nullopt;
        }
        centre = best_point;
        half = 2 * step;
        step /= 5.0;
    }
    return best;
}

SteeringSolution solve_bounds(const DenseVector& e, const std::vector<Bound>& bounds) {
    std::vector<ConceptBound> adds;
    std::vector<ConceptBound> removes;
    for (const auto& b : bounds) {
        (b.d == Direction::Add ? adds : removes).push_back(ConceptBound{b.c, b.p});
    }
    return solve_multi(ActivationVector{1, 0, e}, adds, removes);
}

// Strength solve_multi gave the classifier `c`.
double strength_of(const SteeringSolution& sol, const ConceptClassifier& c) {
    for (const auto& s : sol.entries) {
        if (s.concept_name == c.concept_name) {
            return s.strength;
        }
    }
    return std::nan("");
}

void criterion_multi() {
    Rng rng(303);
    std::ostringstream detail;
    bool ok = true;

    double worst_single = 0.0;
    for (int n = 0; n < 200; ++n) {
        std::size_t dim = 2 + rng.below(15);
        ConceptClassifier c = probe("x", random_vector(rng, dim, 1.0), rng.normal(0.0, 1.0));
        DenseVector e = random_vector(rng, dim, 1.0);
        Direction d = rng.uniform() < 0.5 ? Direction::Add : Direction::Remove;
        double p = 0.01 + 0.98 * rng.uniform();
        StrengthEntry single = solve_single(ActivationVector{1, 0, e}, c, d, p);
        SteeringSolution multi = solve_bounds(e, {{&c, d, p}});
        double diff = multi.feasible ? std::abs(strength_of(multi, c) - single.strength) : 1e9;
        worst_single = std::max(worst_single, diff);
    }
    ok = ok && worst_single <= 1e-8;
    detail << "single vs multi max diff " << num(worst_single);

    double worst_orth = 0.0;
    for (int n = 0; n < 200; ++n) {
        std::size_t dim = 2 + rng.below(15);
        DenseVector w1 = random_vector(rng, dim, 1.0);
        DenseVector w2 = random_vector(rng, dim, 1.0);
        w2 = w2.axpy(-w2.dot(w1) / w1.dot(w1), w1);
        ConceptClassifier c1 = probe("a", w1, rng.normal(0.0, 1.0));
        ConceptClassifier c2 = probe("b", w2, rng.normal(0.0, 1.0));
        DenseVector e = random_vector(rng, dim, 1.0);
        Direction d1 = rng.uniform() < 0.5 ? Direction::Add : Direction::Remove;
        Direction d2 = rng.uniform() < 0.5 ? Direction::Add : Direction::Remove;
        double p1 = 0.05 + 0.9 * rng.uniform();
        double p2 = 0.05 + 0.9 * rng.uniform();
        SteeringSolution multi = solve_bounds(e, {{&c1, d1, p1}, {&c2, d2, p2}});
        double s1 = solve_single(ActivationVector{1, 0, e}, c1, d1, p1).strength;
        double s2 = solve_single(ActivationVector{1, 0, e}, c2, d2, p2).strength;
        double diff = multi.feasible ? std::max(std::abs(strength_of(multi, c1) - s1),
                                                std::abs(strength_of(multi, c2) - s2))
                                     : 1e9;
        worst_orth = std::max(worst_orth, diff);
    }
    ok = ok && worst_orth <= 1e-6;
    detail << "; orthogonal max diff " << num(worst_orth);

    // Add one probe above 0.5 and remove a positively scaled copy below 0.5.
    int infeasible = 0;
    for (int n = 0; n < 200; ++n) {
        std::size_t dim = 2 + rng.below(15);
        DenseVector w = random_vector(rng, dim, 1.0);
        double b = rng.normal(0.0, 1.0);
        double k = 0.2 + 3.0 * rng.uniform();
        ConceptClassifier up = probe("up", w, b);
        ConceptClassifier down = probe("down", w * k, b * k);
        DenseVector e = random_vector(rng, dim, 1.0);
        double hi = 0.55 + 0.44 * rng.uniform();
        double lo = 0.01 + 0.44 * rng.uniform();
        SteeringSolution multi = solve_bounds(e, {{&up, Direction::Add, hi}, {&down, Direction::Remove, lo}});
        infeasible += multi.feasible ? 0 : 1;
    }
    ok = ok && infeasible == 200;
    detail << "; contradictions infeasible " << infeasible << "/200";

    int compared = 0;
    int rejected = 0;
    int bad = 0;
    double worst_gap = 0.0;
    double worst_violation = 0.0;
    while (compared < 50) {
        std::size_t dim = 4 + rng.below(5);
        std::size_t k = 2 + rng.below(2);
        std::vector<ConceptClassifier> cs;
        for (std::size_t j = 0; j < k; ++j) {
            cs.push_back(probe("c" + std::to_string(j), random_vector(rng, dim, 1.0), rng.normal(0.0, 0.5)));
        }
        DenseVector e = random_vector(rng, dim, 0.5);
        std::vector<Bound> bounds;
        std::vector<const ConceptClassifier*> along;
        for (std::size_t j = 0; j < k; ++j) {
            Direction d = rng.uniform() < 0.5 ? Direction::Add : Direction::Remove;
            bounds.push_back({&cs[j], d, 0.1 + 0.8 * rng.uniform()});
            along.push_back(&cs[j]);
        }
        SteeringSolution lp = solve_bounds(e, bounds);
        std::optional<double> grid = grid_multi(bounds, e);
        if (!lp.feasible || !grid) {
            ++rejected;
            continue;
        }
        ++compared;
        std::vector<double> s;
        double l1 = 0.0;
        for (const auto& c : cs) {
            s.push_back(strength_of(lp, c));
            l1 += std::abs(s.back());
        }
        for (const auto& b : bounds) {
            double z = moved_logit(*b.c, e, along, s);
            double miss = b.d == Direction::Add ? logit(b.p) - z : z - logit(b.p);
            worst_violation = std::max(worst_violation, miss);
        }
        worst_gap = std::max(worst_gap, l1 - *grid);
        bad += l1 <= *grid + 1e-3 ? 0 : 1;
    }
    ok = ok && bad == 0 && worst_violation <= 1e-9;
    detail << "; LP vs grid on 50 instances: max (LP - grid) " << num(worst_gap)
           << ", max logit violation " << num(worst_violation) << " (" << rejected
           << " draws outside the grid skipped)";
    verdict(3, ok, "multi-concept: " + detail.str());
}

// ---- 4, 5: probes -----------------------------------------------------------

void criterion_probe_quality() {
    Rng rng(404);
    double worst_acc = 1.0;
    double worst_norm = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t dim = 16;
        DenseVector axis = random_vector(rng, dim, 1.0);
        axis = axis * (1.5 / axis.norm());
        DenseVector centre = random_vector(rng, dim, 1.0);
        ActivationDataset data;
        for (int i = 0; i < 200; ++i) {
            int y = i % 2;
            DenseVector x = (y == 1 ? centre + axis : centre - axis) + random_vector(rng, dim, 0.5);
            data.features.push_back(std::move(x));
            data.labels.push_back(y);
        }
        ConceptClassifier c = train_cav(data, 1, "clusters", Variant::Input, 1000 + trial);
        worst_acc = std::min(worst_acc, c.model.test_accuracy);
        worst_norm = std::max(worst_norm, std::abs(c.cav.norm() - 1.0));
    }
    verdict(4, worst_acc >= 0.95 && worst_norm <= 1e-9,
            "probe quality: 10 separable cluster sets, min test accuracy " + num(worst_acc) +
                ", max | ||cav|| - 1 | " + num(worst_norm));
}

void criterion_gradient() {
    Rng rng(505);
    double worst = 0.0;
    for (int point = 0; point < 10; ++point) {
        const std::size_t dim = 6;
        std::vector<DenseVector> xs;
        std::vector<int> ys;
        for (int i = 0; i < 40; ++i) {
            xs.push_back(random_vector(rng, dim, 1.5));
            ys.push_back(rng.uniform() < 0.5 ? 1 : 0);
        }
        DenseVector w = random_vector(rng, dim, 1.0);
        double b = rng.normal(0.0, 1.0);
        const double l2 = 0.01;
        LogisticGradient g = logistic_gradient(xs, ys, w, b, l2);
        const double h = 1e-5;
        std::vector<double> analytic(g.w.data());
        analytic.push_back(g.b);
        std::vector<double> numeric;
        for (std::size_t i = 0; i < dim; ++i) {
            std::vector<double> up(w.data());
            std::vector<double> dn(w.data());
            up[i] += h;
            dn[i] -= h;
            numeric.push_back((logistic_objective(xs, ys, DenseVector(up), b, l2) -
                               logistic_objective(xs, ys, DenseVector(dn), b, l2)) /
                              (2 * h));
        }
        numeric.push_back((logistic_objective(xs, ys, w, b + h, l2) -
                           logistic_objective(xs, ys, w, b - h, l2)) /
                          (2 * h));
        double diff = 0.0;
        double scale = 0.0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            scale = std::max({scale, analytic[i] * analytic[i], numeric[i] * numeric[i]});
        }
        worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(scale), 1e-12));
    }
    verdict(5, worst < 1e-4, "gradient check: 10 points, max relative error " + num(worst));
}

// ---- 6-9: the default pipeline ------------------------------------------------

int cli(const std::vector<std::string>& args) {
    std::ostringstream out;
    std::ostringstream err;
    int code = run_cli(args, out, err);
    if (code != 0) {
        std::cerr << "gcav";
        for (const auto& a : args) {
            std::cerr << " " << a;
        }
        std::cerr << " -> exit " << code << "\n" << err.str();
    }
    return code;
}

void pipeline_criteria(const fs::path& source, const fs::path& work) {
    const std::string config = (source / "configs" / "default.json").string();
    const std::string out = (work / "default-run").string();
    auto t0 = std::chrono::steady_clock::now();
    bool ran = true;
    for (const char* cmd : {"make-corpus", "make-model", "train-cavs", "evaluate"}) {
        if (ran && cli({cmd, "--config", config, "--out-dir", out, "--force"}) != 0) {
            ran = false;
        }
    }
    double seconds = seconds_since(t0);
    if (!ran) {
        for (int id = 6; id <= 9; ++id) {
            verdict(id, false, "default pipeline did not complete");
        }
        return;
    }
    info("default pipeline (make-corpus, make-model, train-cavs, evaluate) took " + num(seconds, "%.1f") + " s");

    Json model = read_json_file(fs::path(out) / "model.json").at("metadata");
    info("held-out next-token loss " + num(model.at("heldOutLossBefore").get<double>()) + " -> " +
         num(model.at("heldOutLossAfter").get<double>()) + ", dialect continuation accuracy " +
         num(model.at("continuationAccuracy").get<double>()));

    CavStore store = CavStore::load(fs::path(out) / "cavs.json");
    double worst_norm = 0.0;
    for (const auto& [key, c] : store.classifiers()) {
        worst_norm = std::max(worst_norm, std::abs(c.cav.norm() - 1.0));
    }
    info("stored probes: " + std::to_string(store.size()) + ", max | ||cav|| - 1 | " + num(worst_norm));

    {
        ToyModel m = ToyModel::load(fs::path(out) / "model.json");
        auto records = read_prompt_file(fs::path(out) / "prompts-dialect.jsonl");
        VocabularyLayout layout = VocabularyLayout::for_vocab_size(m.config().vocab_size);
        FilterResult f = filter_by_output(m, records, keyword_labeler(m.tokenizer(), concept_words("dialect", layout)));
        info("keyword output filter keeps " + num(f.retention(), "%.3f") + " of the dialect prompts");
    }

    Json report = read_json_file(fs::path(out) / "report.json");
    const Json& control = report.at("control");
    std::size_t prompts = control.at("baseline").size();
    double raised = control.at("raisedFraction").get<double>();
    double base_success = control.at("baselineSuccessRate").get<double>();
    double steered_success = control.at("conceptSuccessRate").get<double>();
    double fluency = control.at("fluencyNLL").get<double>() / control.at("baselineFluencyNLL").get<double>();
    double conditioned =
        control.at("conditionedNLL").get<double>() / control.at("baselineConditionedNLL").get<double>();
    verdict(6, prompts >= 50 && raised >= 0.8 && steered_success - base_success >= 0.2 && fluency < 2.0 &&
                   seconds < 300.0,
            "control on " + std::to_string(prompts) + " held-out B-prompts: raised " + num(raised) +
                ", success " + num(base_success) + " -> " + num(steered_success) +
                ", fluency NLL ratio " + num(fluency) + ", pipeline " + num(seconds, "%.0f") + " s");
    info("prompt-conditioned NLL ratio " + num(conditioned) +
         " (steered tokens scored after the prompt; not gated)");

    const Json& corr = report.at("correlation");
    int n = corr.at("n").get<int>();
    double r = corr.at("r").get<double>();
    verdict(7, n >= 10 && r > 0.9,
            "probability vs |strength| at layer " + std::to_string(report.at("correlationLayer").get<int>()) +
                ": r = " + num(r) + " over n = " + std::to_string(n));

    // Recomputed from the per-layer rows: rank by test accuracy, ties broken by
    // lower held-out log loss, then compare the groups holding the two ends.
    const Json& align = report.at("alignment");
    std::vector<std::tuple<double, double, int>> ranked;
    for (const auto& row : align.at("perLayerAccuracy")) {
        ranked.emplace_back(-row.at("testAccuracy").get<double>(), row.at("testLogLoss").get<double>(),
                            row.at("layer").get<int>());
    }
    std::sort(ranked.begin(), ranked.end());
    int best_layer = std::get<2>(ranked.front());
    int worst_layer = std::get<2>(ranked.back());
    double best_success = -1.0;
    double worst_success = -1.0;
    std::string groups;
    for (const auto& g : align.at("groups")) {
        auto layers = g.at("layers").get<std::vector<int>>();
        double success = g.at("successRate").get<double>();
        if (std::find(layers.begin(), layers.end(), best_layer) != layers.end()) {
            best_success = success;
        }
        if (std::find(layers.begin(), layers.end(), worst_layer) != layers.end()) {
            worst_success = success;
        }
        groups += " {" + std::to_string(layers.front()) + "-" + std::to_string(layers.back()) + "}: acc " +
                  num(g.at("meanAccuracy").get<double>(), "%.3f") + " success " + num(success, "%.2f");
    }
    verdict(8, best_success >= 0.0 && best_success >= worst_success,
            "layer groups" + groups + "; best layer " + std::to_string(best_layer) + ", worst layer " +
                std::to_string(worst_layer));

    const Json& sweep = report.at("sweepTable");
    bool fixed_ok = true;
    bool monotone = true;
    int feasible = 0;
    double previous = -1.0;
    std::string strengths;
    for (const auto& row : sweep.at("rows")) {
        // feasible / infeasible count prompts at this grid point.
        if (row.at("feasible").get<int>() == 0) {
            strengths += " p=" + num(row.at("sweptP").get<double>()) + ":infeasible";
            continue;
        }
        ++feasible;
        fixed_ok = fixed_ok && row.at("fixedSatisfied").get<bool>();
        double s = row.at("meanSweptStrength").get<double>();
        monotone = monotone && s >= previous;
        previous = s;
        strengths += " p=" + num(row.at("sweptP").get<double>()) + ":" + num(s, "%.3f");
        if (row.at("infeasible").get<int>() > 0) {
            strengths += " (" + std::to_string(row.at("infeasible").get<int>()) + " prompts infeasible)";
        }
    }
    // The report's flag is the per-prompt check; the means are re-checked here.
    bool per_prompt = sweep.at("monotone").get<bool>();
    verdict(9, feasible > 0 && fixed_ok && monotone && per_prompt,
            "sweep at layer " + std::to_string(report.at("sweepLayer").get<int>()) + ", mean |eps|" +
                strengths + (fixed_ok ? "; fixed constraints hold" : "; fixed constraint violated") +
                (per_prompt ? "; non-decreasing per prompt" : "; decreasing for some prompt"));
}

// ---- 10: determinism ----------------------------------------------------------

bool run_all(const fs::path& dir, const std::string& config) {
    fs::create_directories(dir);
    fs::path previous = fs::current_path();
    fs::current_path(dir);
    bool ok = true;
    for (const char* cmd : {"make-corpus", "make-model", "train-cavs", "layer-scan", "evaluate", "sweep"}) {
        ok = ok && cli({cmd, "--config", config, "--out-dir", "run", "--force"}) == 0;
    }
    ok = ok && cli({"steer-generate", "--config", config, "--out-dir", "run", "--force", "--prompts",
                    "run/eval-prompts.jsonl"}) == 0;
    fs::current_path(previous);
    return ok;
}

void criterion_determinism(const fs::path& source, const fs::path& work) {
    const std::string config = (source / "tests" / "data" / "small.json").string();
    fs::path a = work / "determinism-1";
    fs::path b = work / "determinism-2";
    fs::remove_all(a);
    fs::remove_all(b);
    if (!run_all(a, config) || !run_all(b, config)) {
        verdict(10, false, "determinism: a command failed");
        return;
    }
    std::vector<std::string> differing;
    int files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a / "run")) {
        if (!entry.is_regular_file()) {
            continue;
        }
        ++files;
        fs::path rel = fs::relative(entry.path(), a);
        if (!fs::exists(b / rel) || read_text_file(entry.path()) != read_text_file(b / rel)) {
            differing.push_back(rel.string());
        }
    }
    std::string detail = "determinism: all 7 commands twice, " + std::to_string(files) + " artifacts, " +
                         std::to_string(differing.size()) + " differ";
    for (const auto& d : differing) {
        detail += " " + d;
    }
    verdict(10, files > 0 && differing.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 3) {
        std::fprintf(stderr, "usage: %s <source dir> <work dir>\n", argv[0]);
        return 2;
    }
    fs::path source = fs::absolute(argv[1]);
    fs::path work = fs::absolute(argv[2]);
    fs::create_directories(work);

    std::vector<std::function<void()>> steps{
        criterion_closed_form,
        criterion_zero_case,
        criterion_multi,
        criterion_probe_quality,
        criterion_gradient,
        [&] { pipeline_criteria(source, work); },
        [&] { criterion_determinism(source, work); },
    };
    for (auto& step : steps) {
        try {
            step();
        } catch (const std::exception& e) {
            std::printf("FAIL     unexpected error: %s\n", e.what());
            ++failures;
        }
    }
    std::printf("%d criterion check(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
