#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "gcav/cli.h"
#include "gcav/errors.h"
#include "gcav/eval.h"

namespace gcav {

namespace {

namespace fs = std::filesystem;

class OutputExists : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool force = false;
    std::string out_dir;
    std::string prompts;
    std::string request;
};

struct Run {
    RunConfig cfg;
    Options opt;
    std::ostream& out;

    fs::path file(const std::string& name) const { return cfg.out_dir / name; }
};

RunConfig load_config(const Options& opt) {
    if (opt.config.empty()) {
        throw ConfigError("--config is required");
    }
    if (!fs::exists(opt.config)) {
        throw ConfigError("config file not found: " + opt.config);
    }
    Json j = read_json_file(opt.config);
    if (const char* env = std::getenv("GCAV_SEED"); env != nullptr && *env != '\0') {
        try {
            std::size_t used = 0;
            auto s = std::stoull(env, &used);
            if (used != std::string(env).size()) {
                throw std::invalid_argument("trailing characters");
            }
            j["seed"] = s;
        } catch (const std::exception&) {
            throw ConfigError(std::string("GCAV_SEED is not an unsigned integer: ") + env);
        }
    }
    if (opt.seed) {
        j["seed"] = *opt.seed;
    }
    if (!opt.out_dir.empty()) {
        if (!j.contains("paths")) {
            j["paths"] = Json::object();
        }
        j["paths"]["outDir"] = opt.out_dir;
    }
    return RunConfig::from_json(j);
}

void claim_outputs(const Run& run, const std::vector<fs::path>& paths) {
    if (!run.opt.force) {
        for (const auto& p : paths) {
            if (fs::exists(p)) {
                throw OutputExists(p.string() + " exists; pass --force to overwrite");
            }
        }
    }
    for (const auto& p : paths) {
        fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
    }
}

std::string fmt(double x, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, x);
    return buf;
}

const VocabularyLayout layout_of(const ToyModel& m) {
    return VocabularyLayout::for_vocab_size(m.config().vocab_size);
}

ToyModel load_model(const Run& run) {
    fs::path p = run.file("model.json");
    if (!fs::exists(p)) {
        throw ConfigError("no model at " + p.string() + "; run make-model first");
    }
    return ToyModel::load(p);
}

CavStore load_store(const Run& run) {
    fs::path p = run.file("cavs.json");
    if (!fs::exists(p)) {
        throw ConfigError("no CAV store at " + p.string() + "; run train-cavs first");
    }
    return CavStore::load(p);
}

std::string corpus_text(const Tokenizer& tok, const std::vector<TokenSequence>& corpus) {
    std::string s;
    for (const auto& seq : corpus) {
        s += tok.decode(seq);
        s += '\n';
    }
    return s;
}

std::vector<PromptRecord> concept_prompts(const RunConfig& cfg, const Tokenizer& tok,
                                          const std::string& concept_name) {
    return build_concept_prompts(tok, VocabularyLayout::for_vocab_size(tok.size()), concept_name,
                                 cfg.cav.pairs, cfg.prompt_seed(concept_name));
}

std::vector<PromptRecord> held_out_prompts(const RunConfig& cfg, const Tokenizer& tok,
                                           const std::string& concept_name) {
    return build_concept_prompts(tok, VocabularyLayout::for_vocab_size(tok.size()), concept_name,
                                 cfg.eval.held_out_pairs,
                                 derive_seed(cfg.eval_prompt_seed(), cfg.prompt_seed(concept_name)));
}

ConceptLabeler labeler_for(const RunConfig& cfg, const ToyModel& model,
                           const std::string& concept_name) {
    if (cfg.cav.labeler == "agree-always") {
        return agree_always_labeler();
    }
    if (cfg.cav.labeler == "disagree-always") {
        return disagree_always_labeler();
    }
    return keyword_labeler(model.tokenizer(), concept_words(concept_name, layout_of(model)));
}

struct TrainingSet {
    std::vector<PromptRecord> records;
    std::size_t generated = 0;
    double retention = 1.0;
};

// The Output variant keeps only records whose continuation shows the concept.
TrainingSet training_set(const RunConfig& cfg, const ToyModel& model,
                         const std::string& concept_name) {
    TrainingSet t;
    auto recs = concept_prompts(cfg, model.tokenizer(), concept_name);
    t.generated = recs.size();
    if (cfg.cav.variant == Variant::Input) {
        t.records = std::move(recs);
        return t;
    }
    FilterResult f = filter_by_output(model, recs, labeler_for(cfg, model, concept_name),
                                      cfg.cav.filter_tokens);
    t.retention = f.retention();
    t.records = std::move(f.kept);
    return t;
}

std::vector<int> cav_layers(const RunConfig& cfg) {
    if (!cfg.cav.layers.empty()) {
        return cfg.cav.layers;
    }
    std::vector<int> all;
    for (int l = 1; l <= cfg.model.layer_count; ++l) {
        all.push_back(l);
    }
    return all;
}

std::vector<LayerAccuracy> store_scan(const CavStore& store, const std::string& concept_name,
                                      Variant variant) {
    std::vector<ConceptClassifier> mine;
    for (const auto& [key, c] : store.classifiers()) {
        if (c.concept_name == concept_name && c.variant == variant) {
            mine.push_back(c);
        }
    }
    if (mine.empty()) {
        throw MissingCavError("CAV store has no " + to_string(variant) + " classifiers for " +
                              concept_name);
    }
    return scan_of(mine);
}

std::vector<SteeringTarget> resolve_layers(std::vector<SteeringTarget> targets,
                                           const CavStore& store, int top_k) {
    for (auto& t : targets) {
        if (t.layers.empty()) {
            auto scan = store_scan(store, t.concept_name, t.variant);
            t.layers = top_k_layers(scan, std::min<int>(top_k, static_cast<int>(scan.size())));
        }
    }
    return targets;
}

int best_layer(const CavStore& store, const std::string& concept_name, Variant variant) {
    return rank_layers(store_scan(store, concept_name, variant)).front();
}

Json provenance(const Run& run) {
    return Json{{"config", run.cfg.to_json()},
                {"seed", run.cfg.seed},
                {"timestamp", run.cfg.timestamp}};
}

// ---------------------------------------------------------------------------

int make_corpus(Run& run) {
    const RunConfig& cfg = run.cfg;
    Tokenizer tok = Tokenizer::dialect(cfg.model.vocab_size);
    auto lay = VocabularyLayout::for_vocab_size(cfg.model.vocab_size);
    std::vector<fs::path> files{run.file("corpus.txt"), run.file("heldout.txt"),
                                run.file("eval-prompts.jsonl"), run.file("corpus-manifest.json")};
    for (const auto& c : cfg.cav.concepts) {
        files.push_back(run.file("prompts-" + c + ".jsonl"));
    }
    claim_outputs(run, files);

    auto train = make_dialect_corpus(lay, cfg.corpus_seed(), cfg.corpus.samples,
                                     cfg.corpus.sequence_length);
    auto held = make_dialect_corpus(lay, cfg.held_out_corpus_seed(), cfg.corpus.held_out_samples,
                                    cfg.corpus.sequence_length);
    Json hashes = Json::object();
    auto emit = [&](const std::string& name, const std::string& text) {
        write_text_file(run.file(name), text);
        hashes[name] = fnv1a_hex(text);
    };
    emit("corpus.txt", corpus_text(tok, train));
    emit("heldout.txt", corpus_text(tok, held));
    for (const auto& c : cfg.cav.concepts) {
        emit("prompts-" + c + ".jsonl", format_prompt_lines(concept_prompts(cfg, tok, c)));
    }
    emit("eval-prompts.jsonl",
         format_prompt_lines(held_out_prompts(cfg, tok, cfg.steering.targets.front().concept_name)));
    write_json_file(run.file("corpus-manifest.json"),
                    Json{{"provenance", provenance(run)}, {"files", hashes}}, 1);
    run.out << "wrote " << train.size() << " training and " << held.size()
            << " held-out sequences to " << cfg.out_dir.string() << "\n";
    return 0;
}

struct ContinuationCheck {
    double accuracy = 0.0;       // prompts continued with >= 80% own-dialect words
    double mean_fraction = 0.0;  // mean own-dialect share of the continuation
};

ContinuationCheck continuation_check(const ToyModel& model, const std::vector<TokenSequence>& held,
                                     int prompt_tokens, int new_tokens) {
    auto lay = layout_of(model);
    ConceptWords a{"a", lay.a_words, lay.b_words};
    ConceptWords b{"b", lay.b_words, lay.a_words};
    ContinuationCheck c;
    std::size_t n = 0;
    for (const auto& seq : held) {
        TokenSequence prompt(seq.begin(), seq.begin() + std::min<std::ptrdiff_t>(prompt_tokens, static_cast<std::ptrdiff_t>(seq.size())));
        TokenSequence full = generate(model, prompt, nullptr, new_tokens);
        TokenSequence cont(full.begin() + static_cast<std::ptrdiff_t>(prompt.size()), full.end());
        const ConceptWords& own = seq[0] == lay.marker_a ? a : b;
        double f = own.positive_fraction(cont);
        c.mean_fraction += f;
        c.accuracy += f >= 0.8 ? 1.0 : 0.0;
        ++n;
    }
    if (n > 0) {
        c.accuracy /= static_cast<double>(n);
        c.mean_fraction /= static_cast<double>(n);
    }
    return c;
}

int make_model(Run& run) {
    const RunConfig& cfg = run.cfg;
    claim_outputs(run, {run.file("model.json")});
    auto lay = VocabularyLayout::for_vocab_size(cfg.model.vocab_size);
    auto train = make_dialect_corpus(lay, cfg.corpus_seed(), cfg.corpus.samples,
                                     cfg.corpus.sequence_length);
    auto held = make_dialect_corpus(lay, cfg.held_out_corpus_seed(), cfg.corpus.held_out_samples,
                                    cfg.corpus.sequence_length);
    ToyModel initial = init_model(cfg.model_config());
    auto t0 = std::chrono::steady_clock::now();
    ToyModel trained = train_on_corpus(initial, train, cfg.training_settings());
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // Measure what will be on disk: weights at file precision.
    ToyModel stored = ToyModel::from_json(parse_json(canonical_dump(trained.to_json()), "model"));
    const int prompt_tokens = std::min(8, cfg.corpus.sequence_length - 1);
    const int new_tokens = std::min(16, cfg.model.context_length - prompt_tokens);
    std::vector<TokenSequence> probe_set(held.begin(),
                                         held.begin() + std::min<std::ptrdiff_t>(100, static_cast<std::ptrdiff_t>(held.size())));
    ContinuationCheck check = continuation_check(stored, probe_set, prompt_tokens, new_tokens);
    double before = mean_next_token_loss(initial, held);
    double after = mean_next_token_loss(stored, held);
    Json meta{{"provenance", provenance(run)},
              {"corpusHash", fnv1a_hex(corpus_text(stored.tokenizer(), train))},
              {"heldOutLossBefore", before},
              {"heldOutLossAfter", after},
              {"continuationAccuracy", check.accuracy},
              {"continuationOwnFraction", check.mean_fraction}};
    ToyModel out(stored.config(), stored.tokenizer(),
                 std::vector<double>(stored.parameters().begin(), stored.parameters().end()), meta);
    out.save(run.file("model.json"));
    run.out << "trained " << cfg.training.steps << " steps in " << fmt(seconds, "%.1f")
            << " s; held-out loss " << fmt(before) << " -> " << fmt(after)
            << "; continuation accuracy " << fmt(check.accuracy, "%.3f") << "\n";
    return 0;
}

int train_cavs(Run& run) {
    const RunConfig& cfg = run.cfg;
    std::vector<fs::path> files{run.file("cavs.json")};
    std::vector<int> layers = cav_layers(cfg);
    if (cfg.cav.write_activations) {
        for (const auto& c : cfg.cav.concepts) {
            for (int l : layers) {
                files.push_back(run.file("activations/" + c + "-L" + std::to_string(l) + ".bin"));
            }
        }
    }
    ToyModel model = load_model(run);
    if (model.config().layer_count != cfg.model.layer_count) {
        throw ConfigError("model file has " + std::to_string(model.config().layer_count) +
                          " layers, config says " + std::to_string(cfg.model.layer_count));
    }
    claim_outputs(run, files);
    CavStore store;
    Json datasets = Json::object();
    for (const auto& c : cfg.cav.concepts) {
        TrainingSet ts = training_set(cfg, model, c);
        if (ts.records.empty()) {
            throw DegenerateDataError("concept " + c + ": output filtering kept no records");
        }
        auto classifiers = train_layers(model, ts.records, layers, c, cfg.cav.variant,
                                        cfg.split_seed());
        run.out << c << ":";
        for (auto& k : classifiers) {
            run.out << " L" << k.layer << " " << fmt(k.model.test_accuracy, "%.3f");
            store.insert(std::move(k));
        }
        run.out << "  (retention " << fmt(ts.retention, "%.3f") << ")\n";
        datasets[c] = Json{{"hash", dataset_hash(ts.records)},
                           {"generated", ts.generated},
                           {"kept", ts.records.size()},
                           {"retention", ts.retention}};
        if (cfg.cav.write_activations) {
            auto all = collect_all_layers(model, ts.records);
            for (int l : layers) {
                write_activation_matrix(
                    run.file("activations/" + c + "-L" + std::to_string(l) + ".bin"),
                    all[static_cast<std::size_t>(l - 1)].features);
            }
        }
    }
    store.provenance() = provenance(run);
    store.provenance()["datasets"] = datasets;
    store.provenance()["model"] = model.checksum();
    store.save(run.file("cavs.json"));
    run.out << "stored " << store.size() << " classifiers in " << run.file("cavs.json").string()
            << "\n";
    return 0;
}

int layer_scan_cmd(Run& run) {
    const RunConfig& cfg = run.cfg;
    claim_outputs(run, {run.file("layer-scan.json"), run.file("layer-scan.csv")});
    ToyModel model = load_model(run);
    std::vector<int> layers = cav_layers(cfg);
    Json concepts = Json::object();
    std::string csv = "concept,layer,test_accuracy,test_log_loss\n";
    for (const auto& c : cfg.cav.concepts) {
        TrainingSet ts = training_set(cfg, model, c);
        auto scan = layer_scan(model, ts.records, layers, c, cfg.cav.variant, cfg.split_seed());
        Json rows = Json::array();
        run.out << c << "\n";
        for (const auto& a : scan) {
            rows.push_back(Json{{"layer", a.layer},
                                {"testAccuracy", a.test_accuracy},
                                {"testLogLoss", a.test_log_loss}});
            csv += c + "," + std::to_string(a.layer) + "," + fmt(a.test_accuracy, "%.9g") + "," +
                   fmt(a.test_log_loss, "%.9g") + "\n";
            run.out << "  layer " << a.layer << "  accuracy " << fmt(a.test_accuracy, "%.3f")
                    << "  log-loss " << fmt(a.test_log_loss) << "\n";
        }
        auto top = top_k_layers(scan, std::min<int>(cfg.steering.top_k, static_cast<int>(scan.size())));
        concepts[c] = Json{{"scan", rows}, {"topLayers", top}};
    }
    write_json_file(run.file("layer-scan.json"),
                    Json{{"provenance", provenance(run)}, {"concepts", concepts}}, 1);
    write_text_file(run.file("layer-scan.csv"), csv);
    return 0;
}

int steer_generate_cmd(Run& run) {
    const RunConfig& cfg = run.cfg;
    if (run.opt.prompts.empty()) {
        throw ConfigError("steer-generate needs --prompts");
    }
    claim_outputs(run, {run.file("steer.json")});
    ToyModel model = load_model(run);
    CavStore store = load_store(run);
    auto records = read_prompt_file(run.opt.prompts);
    std::vector<SteeringTarget> targets =
        run.opt.request.empty() ? cfg.steering.targets : read_steering_request(run.opt.request);
    targets = resolve_layers(targets, store, cfg.steering.top_k);

    const Tokenizer& tok = model.tokenizer();
    Json rows = Json::array();
    std::size_t infeasible = 0;
    for (const auto& r : records) {
        TokenSequence prompt;
        try {
            prompt = tok.encode(r.text);
            SteeredGeneration sg = steer_generate(model, prompt, store, targets, cfg.steering.generation);
            TokenSequence base = generate(model, prompt, nullptr, cfg.steering.generation.max_new_tokens);
            auto cont = [&](const TokenSequence& full) {
                return tok.decode(std::span<const int>(full).subspan(prompt.size()));
            };
            infeasible += sg.solution.feasible ? 0 : 1;
            rows.push_back(Json{{"id", r.id},
                                {"text", r.text},
                                {"baseline", cont(base)},
                                {"steered", sg.solution.feasible ? Json(cont(sg.tokens)) : Json(nullptr)},
                                {"solution", solution_to_json(sg.solution)}});
            run.out << r.id << "  " << (sg.solution.feasible ? cont(sg.tokens) : "(infeasible)") << "\n";
        } catch (const Error& e) {
            throw FormatError("prompt " + r.id + ": " + e.what());
        }
    }
    Json targets_json = Json::array();
    for (const auto& t : targets) {
        targets_json.push_back(steering_target_to_json(t));
    }
    write_json_file(run.file("steer.json"),
                    Json{{"provenance", provenance(run)}, {"targets", targets_json}, {"records", rows}},
                    1);
    if (infeasible > 0) {
        run.out << infeasible << " prompt(s) had an infeasible steering program\n";
        return 4;
    }
    return 0;
}

std::vector<TokenSequence> encode_all(const Tokenizer& tok, const std::vector<PromptRecord>& recs,
                                      std::optional<Label> only) {
    std::vector<TokenSequence> out;
    for (const auto& r : recs) {
        if (!only || r.given_label == *only) {
            out.push_back(tok.encode(r.text));
        }
    }
    return out;
}

SweepResult run_sweep(const Run& run, const ToyModel& model, const CavStore& store, int& layer) {
    const RunConfig& cfg = run.cfg;
    const auto& sw = cfg.eval.sweep;
    auto lay = layout_of(model);
    // Prompts opposite to the swept direction, so raising p matters.
    Label side = sw.swept.direction == Direction::Add ? Label::Negative : Label::Positive;
    auto prompts = encode_all(model.tokenizer(),
                              held_out_prompts(cfg, model.tokenizer(), sw.swept.concept_name), side);
    if (static_cast<int>(prompts.size()) > sw.prompts) {
        prompts.resize(static_cast<std::size_t>(sw.prompts));
    }
    layer = best_layer(store, sw.swept.concept_name, sw.swept.variant);
    std::vector<ConceptScorer> scorers;
    scorers.push_back(ConceptScorer::keyword(concept_words(sw.swept.concept_name, lay)));
    for (const auto& f : sw.fixed) {
        scorers.push_back(ConceptScorer::keyword(concept_words(f.concept_name, lay)));
    }
    return multi_concept_sweep(model, store, prompts, layer, sw.swept, sw.grid, sw.fixed, scorers,
                               cfg.steering.generation);
}

int sweep_cmd(Run& run) {
    claim_outputs(run, {run.file("sweep.json"), run.file("sweep.csv")});
    ToyModel model = load_model(run);
    CavStore store = load_store(run);
    int layer = 0;
    SweepResult r = run_sweep(run, model, store, layer);
    Json j = sweep_to_json(r);
    j["layer"] = layer;
    write_json_file(run.file("sweep.json"), Json{{"provenance", provenance(run)}, {"sweep", j}}, 1);
    write_text_file(run.file("sweep.csv"), sweep_csv(r));
    run.out << "sweep at layer " << layer << "\n" << sweep_csv(r);
    return 0;
}

int evaluate_cmd(Run& run) {
    const RunConfig& cfg = run.cfg;
    claim_outputs(run, {run.file("report.json"), run.file("alignment.csv"),
                        run.file("correlation.csv"), run.file("report-sweep.csv")});
    ToyModel model = load_model(run);
    CavStore store = load_store(run);
    const Tokenizer& tok = model.tokenizer();
    auto lay = layout_of(model);

    auto targets = resolve_layers(cfg.steering.targets, store, cfg.steering.top_k);
    const SteeringTarget& lead = targets.front();
    ConceptWords words = concept_words(lead.concept_name, lay);
    ConceptScorer scorer =
        cfg.eval.scorer == "probe"
            ? ConceptScorer::probe(model,
                                   store.at(lead.concept_name,
                                            best_layer(store, lead.concept_name, lead.variant),
                                            lead.variant),
                                   cfg.eval.probe_threshold)
            : ConceptScorer::keyword(words);
    if (lead.direction == Direction::Remove) {
        // Success for a removal is the concept being absent.
        words = ConceptWords{words.name, words.negative, words.positive};
        if (cfg.eval.scorer == "keyword") {
            scorer = ConceptScorer::keyword(words);
        }
    }
    Label side = lead.direction == Direction::Add ? Label::Negative : Label::Positive;
    auto held = held_out_prompts(cfg, tok, lead.concept_name);
    auto control_prompts = encode_all(tok, held, side);

    EvalReport report;
    report.config = cfg.to_json();
    report.control = evaluate_control(model, store, control_prompts, targets, scorer, words,
                                      cfg.steering.generation);

    auto scan = store_scan(store, lead.concept_name, lead.variant);
    int width = cfg.eval.group_width > 0 ? cfg.eval.group_width
                                         : std::max(1, cfg.model.layer_count / 4);
    std::vector<std::vector<int>> groups;
    for (auto& g : layer_groups(cfg.model.layer_count, width)) {
        std::vector<int> kept;
        for (int l : g) {
            if (store.find(lead.concept_name, l, lead.variant) != nullptr) {
                kept.push_back(l);
            }
        }
        if (!kept.empty()) {
            groups.push_back(kept);
        }
    }
    report.alignment = layer_success_alignment(model, store, scan, control_prompts,
                                               lead.concept_name, lead.variant, lead.direction,
                                               lead.p, groups, scorer, cfg.steering.generation);

    const std::string& cc = cfg.eval.correlation_concept;
    int corr_layer = best_layer(store, cc, cfg.cav.variant);
    report.correlation = strength_correlation(
        model, encode_all(tok, held_out_prompts(cfg, tok, cc), std::nullopt),
        store.at(cc, corr_layer, cfg.cav.variant), cfg.eval.correlation_p);

    int sweep_layer = 0;
    report.sweep = run_sweep(run, model, store, sweep_layer);

    Json j = report.to_json();
    j["provenance"] = provenance(run);
    Json used = Json::array();
    for (const auto& t : targets) {
        used.push_back(steering_target_to_json(t));
    }
    j["steeringTargets"] = used;
    j["correlationLayer"] = corr_layer;
    j["sweepLayer"] = sweep_layer;
    write_json_file(run.file("report.json"), j, 1);
    write_text_file(run.file("alignment.csv"), alignment_csv(*report.alignment));
    write_text_file(run.file("correlation.csv"), correlation_csv(*report.correlation));
    write_text_file(run.file("report-sweep.csv"), sweep_csv(*report.sweep));

    const ControlResult& c = *report.control;
    auto& o = run.out;
    o << "control  " << lead.concept_name << " " << to_string(lead.direction) << " p=" << fmt(lead.p, "%.2f")
      << " layers";
    for (int l : lead.layers) {
        o << " " << l;
    }
    o << "  (" << control_prompts.size() << " prompts)\n";
    o << "  success            " << fmt(c.baseline_success, "%.3f") << " -> " << fmt(c.steered_success, "%.3f") << "\n";
    o << "  raised fraction    " << fmt(c.raised_fraction, "%.3f") << "\n";
    o << "  fluency NLL        " << fmt(c.baseline_nll) << " -> " << fmt(c.steered_nll) << "\n";
    o << "  conditioned NLL    " << fmt(c.baseline_conditioned_nll) << " -> " << fmt(c.steered_conditioned_nll) << "\n";
    o << "  prompt+gen NLL     " << fmt(c.baseline_prompt_nll) << " -> " << fmt(c.steered_prompt_nll) << "\n";
    o << "  infeasible         " << c.infeasible << "\n";
    o << "layer groups\n";
    for (const auto& g : report.alignment->groups) {
        o << "  ";
        for (int l : g.layers) {
            o << l << " ";
        }
        o << " accuracy " << fmt(g.mean_accuracy, "%.3f") << "  success " << fmt(g.success_rate, "%.3f") << "\n";
    }
    o << "strength correlation  layer " << corr_layer << "  r = " << fmt(report.correlation->r)
      << "  (n = " << report.correlation->points.size() << ")\n";
    o << "sweep at layer " << sweep_layer << "\n" << sweep_csv(*report.sweep);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Concept-vector steering for a toy decoder"};
    app.name("gcav");
    app.require_subcommand(1);
    Options opt;
    std::string seed_text;

    struct Command {
        const char* name;
        const char* help;
        int (*fn)(Run&);
    };
    const Command commands[] = {
        {"make-corpus", "write the two-dialect corpus and prompt files", make_corpus},
        {"make-model", "build and train the toy model", make_model},
        {"train-cavs", "train per-layer concept probes into a CAV store", train_cavs},
        {"layer-scan", "probe test accuracy per layer", layer_scan_cmd},
        {"steer-generate", "steer generations for a prompt file", steer_generate_cmd},
        {"evaluate", "full evaluation report", evaluate_cmd},
        {"sweep", "multi-concept sweep only", sweep_cmd},
    };
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", opt.config, "run config (JSON)")->required();
        sub->add_option("--seed", seed_text, "override the config seed");
        sub->add_flag("--force", opt.force, "overwrite existing outputs");
        sub->add_option("--out-dir", opt.out_dir, "override paths.outDir");
        if (std::string(c.name) == "steer-generate") {
            sub->add_option("--prompts", opt.prompts, "prompt file (JSON lines)");
            sub->add_option("--request", opt.request, "steering request (JSON)");
        }
        subs.emplace_back(sub, &c);
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (!seed_text.empty()) {
            std::size_t used = 0;
            try {
                opt.seed = std::stoull(seed_text, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != seed_text.size() || seed_text[0] == '-') {
                throw ConfigError("--seed must be an unsigned integer");
            }
        }
        Run run{load_config(opt), opt, out};
        out << "config " << canonical_dump(run.cfg.to_json()) << "\n";
        for (const auto& [sub, cmd] : subs) {
            if (sub->parsed()) {
                return cmd->fn(run);
            }
        }
        return 2;
    } catch (const OutputExists& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace gcav
