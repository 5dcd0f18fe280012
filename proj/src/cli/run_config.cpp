#include <set>

#include "gcav/cli.h"
#include "gcav/errors.h"

namespace gcav {

namespace {

// Reads one JSON object field by field and complains about anything left over.
class Section {
public:
    Section(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) {
            throw ConfigError(where_ + ": expected an object");
        }
    }

    template <class T>
    void read(const char* key, T& into) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            return;
        }
        try {
            into = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type");
        }
    }

    const Json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const char* key) const { return where_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
            }
        }
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

SteeringTarget target_from(const Json& j, const std::string& where) {
    try {
        auto ts = parse_steering_request(Json{{"targets", Json::array({j})}});
        return ts.front();
    } catch (const FormatError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

// Fixed sweep targets and the swept one may omit layers.
SteeringTarget loose_target_from(Json j, const std::string& where) {
    bool no_layers = j.is_object() && !j.contains("layers");
    if (no_layers) {
        j["layers"] = Json::array({1});
    }
    SteeringTarget t = target_from(j, where);
    if (no_layers) {
        t.layers.clear();
    }
    return t;
}

Json loose_target_json(const SteeringTarget& t) {
    Json j = steering_target_to_json(t);
    if (t.layers.empty()) {
        j.erase("layers");
    }
    return j;
}

}  // namespace

std::uint64_t RunConfig::corpus_seed() const { return derive_seed(seed, 1); }
std::uint64_t RunConfig::held_out_corpus_seed() const { return derive_seed(seed, 2); }
std::uint64_t RunConfig::model_seed() const { return derive_seed(seed, 3); }
std::uint64_t RunConfig::training_seed() const { return derive_seed(seed, 4); }
std::uint64_t RunConfig::split_seed() const { return derive_seed(seed, 5); }
std::uint64_t RunConfig::eval_prompt_seed() const { return derive_seed(seed, 6); }

std::uint64_t RunConfig::prompt_seed(const std::string& concept_name) const {
    return derive_seed(seed, std::stoull(fnv1a_hex(concept_name), nullptr, 16));
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m = model;
    m.seed = model_seed();
    return m;
}

TrainingSettings RunConfig::training_settings() const {
    TrainingSettings t = training;
    t.seed = training_seed();
    return t;
}

void RunConfig::validate() const {
    model_config().validate();
    if (corpus.samples < 1 || corpus.held_out_samples < 1) {
        throw ConfigError("corpus.samples and corpus.heldOutSamples must be >= 1");
    }
    if (corpus.sequence_length < 2 || corpus.sequence_length > model.context_length) {
        throw ConfigError("corpus.sequenceLength must lie in [2, model.contextLength]");
    }
    if (training.steps < 0 || training.batch_size < 1 || !(training.learning_rate > 0.0)) {
        throw ConfigError("training needs steps >= 0, batchSize >= 1, learningRate > 0");
    }
    if (cav.concepts.empty()) {
        throw ConfigError("cav.concepts is empty");
    }
    auto bundled = bundled_concepts();
    std::set<std::string> concept_set;
    for (const auto& c : cav.concepts) {
        if (std::find(bundled.begin(), bundled.end(), c) == bundled.end()) {
            throw ConfigError("cav.concepts: unknown concept '" + c + "'");
        }
        if (!concept_set.insert(c).second) {
            throw ConfigError("cav.concepts: '" + c + "' listed twice");
        }
    }
    if (cav.pairs < 2) {
        throw ConfigError("cav.pairs must be >= 2");
    }
    for (int l : cav.layers) {
        if (l < 1 || l > model.layer_count) {
            throw ConfigError("cav.layers: layer " + std::to_string(l) + " outside [1, " +
                              std::to_string(model.layer_count) + "]");
        }
    }
    if (cav.labeler != "keyword" && cav.labeler != "agree-always" &&
        cav.labeler != "disagree-always") {
        throw ConfigError("cav.labeler must be keyword, agree-always or disagree-always");
    }
    if (cav.filter_tokens < 1) {
        throw ConfigError("cav.filterTokens must be >= 1");
    }
    auto check_target = [&](const SteeringTarget& t, const std::string& where) {
        if (!concept_set.count(t.concept_name)) {
            throw ConfigError(where + ": concept '" + t.concept_name + "' is not in cav.concepts");
        }
        for (int l : t.layers) {
            if (l < 1 || l > model.layer_count) {
                throw ConfigError(where + ": layer " + std::to_string(l) + " outside [1, " +
                                  std::to_string(model.layer_count) + "]");
            }
        }
    };
    if (steering.targets.empty()) {
        throw ConfigError("steering.targets is empty");
    }
    for (const auto& t : steering.targets) {
        check_target(t, "steering.targets");
    }
    const int scanned = cav.layers.empty() ? model.layer_count : static_cast<int>(cav.layers.size());
    if (steering.top_k < 1 || steering.top_k > scanned) {
        throw ConfigError("steering.topK must lie in [1, number of scanned layers]");
    }
    if (steering.generation.max_new_tokens < 1) {
        throw ConfigError("steering.maxNewTokens must be >= 1");
    }
    if (eval.held_out_pairs < 1) {
        throw ConfigError("eval.heldOutPairs must be >= 1");
    }
    if (eval.scorer != "keyword" && eval.scorer != "probe") {
        throw ConfigError("eval.scorer must be keyword or probe");
    }
    if (!(eval.probe_threshold > 0.0 && eval.probe_threshold < 1.0)) {
        throw ConfigError("eval.probeThreshold must lie in (0, 1)");
    }
    if (eval.group_width < 0) {
        throw ConfigError("eval.groupWidth must be >= 0");
    }
    if (!concept_set.count(eval.correlation_concept)) {
        throw ConfigError("eval.correlationConcept is not in cav.concepts");
    }
    if (!(eval.correlation_p > 0.0 && eval.correlation_p < 1.0)) {
        throw ConfigError("eval.correlationP must lie in (0, 1)");
    }
    check_target(eval.sweep.swept, "eval.sweep.swept");
    if (eval.sweep.fixed.size() != 2) {
        throw ConfigError("eval.sweep.fixed needs exactly two targets");
    }
    for (const auto& t : eval.sweep.fixed) {
        check_target(t, "eval.sweep.fixed");
    }
    if (eval.sweep.grid.empty()) {
        throw ConfigError("eval.sweep.grid is empty");
    }
    for (std::size_t i = 0; i < eval.sweep.grid.size(); ++i) {
        double p = eval.sweep.grid[i];
        if (!(p > 0.0 && p < 1.0) || (i > 0 && !(p > eval.sweep.grid[i - 1]))) {
            throw ConfigError("eval.sweep.grid must be strictly increasing inside (0, 1)");
        }
    }
    if (eval.sweep.prompts < 1) {
        throw ConfigError("eval.sweep.prompts must be >= 1");
    }
}

Json RunConfig::to_json() const {
    Json targets = Json::array();
    for (const auto& t : steering.targets) {
        targets.push_back(loose_target_json(t));
    }
    Json fixed = Json::array();
    for (const auto& t : eval.sweep.fixed) {
        fixed.push_back(loose_target_json(t));
    }
    Json m = model.to_json();
    m.erase("seed");
    return Json{
        {"seed", seed},
        {"timestamp", timestamp},
        {"model", m},
        {"corpus",
         {{"samples", corpus.samples},
          {"sequenceLength", corpus.sequence_length},
          {"heldOutSamples", corpus.held_out_samples}}},
        {"training",
         {{"steps", training.steps},
          {"learningRate", training.learning_rate},
          {"batchSize", training.batch_size}}},
        {"cav",
         {{"concepts", cav.concepts},
          {"pairs", cav.pairs},
          {"layers", cav.layers},
          {"variant", to_string(cav.variant)},
          {"labeler", cav.labeler},
          {"filterTokens", cav.filter_tokens},
          {"writeActivations", cav.write_activations}}},
        {"steering",
         {{"targets", targets},
          {"topK", steering.top_k},
          {"maxNewTokens", steering.generation.max_new_tokens},
          {"applyAtEveryStep", steering.generation.apply_at_every_step},
          {"resolvePerToken", steering.generation.resolve_per_token}}},
        {"eval",
         {{"heldOutPairs", eval.held_out_pairs},
          {"scorer", eval.scorer},
          {"probeThreshold", eval.probe_threshold},
          {"groupWidth", eval.group_width},
          {"correlationConcept", eval.correlation_concept},
          {"correlationP", eval.correlation_p},
          {"sweep",
           {{"swept", loose_target_json(eval.sweep.swept)},
            {"grid", eval.sweep.grid},
            {"fixed", fixed},
            {"prompts", eval.sweep.prompts}}}}},
        {"paths", {{"outDir", out_dir.generic_string()}}}};
}

RunConfig RunConfig::from_json(const Json& j) {
    RunConfig c;
    Section top(j, "config");
    top.read("seed", c.seed);
    top.read("timestamp", c.timestamp);
    if (const Json* m = top.child("model")) {
        Section s(*m, top.path("model"));
        s.read("layerCount", c.model.layer_count);
        s.read("modelDim", c.model.model_dim);
        s.read("headCount", c.model.head_count);
        s.read("vocabSize", c.model.vocab_size);
        s.read("contextLength", c.model.context_length);
        s.finish();
    }
    if (const Json* m = top.child("corpus")) {
        Section s(*m, top.path("corpus"));
        s.read("samples", c.corpus.samples);
        s.read("sequenceLength", c.corpus.sequence_length);
        s.read("heldOutSamples", c.corpus.held_out_samples);
        s.finish();
    }
    if (const Json* m = top.child("training")) {
        Section s(*m, top.path("training"));
        s.read("steps", c.training.steps);
        s.read("learningRate", c.training.learning_rate);
        s.read("batchSize", c.training.batch_size);
        s.finish();
    }
    if (const Json* m = top.child("cav")) {
        Section s(*m, top.path("cav"));
        s.read("concepts", c.cav.concepts);
        s.read("pairs", c.cav.pairs);
        s.read("layers", c.cav.layers);
        std::string variant = to_string(c.cav.variant);
        s.read("variant", variant);
        try {
            c.cav.variant = parse_variant(variant);
        } catch (const FormatError& e) {
            throw ConfigError(std::string("config.cav.variant: ") + e.what());
        }
        s.read("labeler", c.cav.labeler);
        s.read("filterTokens", c.cav.filter_tokens);
        s.read("writeActivations", c.cav.write_activations);
        s.finish();
    }
    if (const Json* m = top.child("steering")) {
        Section s(*m, top.path("steering"));
        if (const Json* ts = s.child("targets")) {
            if (!ts->is_array()) {
                throw ConfigError("config.steering.targets: expected an array");
            }
            c.steering.targets.clear();
            for (const auto& t : *ts) {
                c.steering.targets.push_back(loose_target_from(t, "config.steering.targets"));
            }
        }
        s.read("topK", c.steering.top_k);
        s.read("maxNewTokens", c.steering.generation.max_new_tokens);
        s.read("applyAtEveryStep", c.steering.generation.apply_at_every_step);
        s.read("resolvePerToken", c.steering.generation.resolve_per_token);
        s.finish();
    }
    if (const Json* m = top.child("eval")) {
        Section s(*m, top.path("eval"));
        s.read("heldOutPairs", c.eval.held_out_pairs);
        s.read("scorer", c.eval.scorer);
        s.read("probeThreshold", c.eval.probe_threshold);
        s.read("groupWidth", c.eval.group_width);
        s.read("correlationConcept", c.eval.correlation_concept);
        s.read("correlationP", c.eval.correlation_p);
        if (const Json* sw = s.child("sweep")) {
            Section q(*sw, s.path("sweep"));
            if (const Json* t = q.child("swept")) {
                c.eval.sweep.swept = loose_target_from(*t, q.path("swept"));
            }
            q.read("grid", c.eval.sweep.grid);
            if (const Json* f = q.child("fixed")) {
                if (!f->is_array()) {
                    throw ConfigError(q.path("fixed") + ": expected an array");
                }
                c.eval.sweep.fixed.clear();
                for (const auto& t : *f) {
                    c.eval.sweep.fixed.push_back(loose_target_from(t, q.path("fixed")));
                }
            }
            q.read("prompts", c.eval.sweep.prompts);
            q.finish();
        }
        s.finish();
    }
    if (const Json* m = top.child("paths")) {
        Section s(*m, top.path("paths"));
        std::string out = c.out_dir.generic_string();
        s.read("outDir", out);
        c.out_dir = out;
        s.finish();
    }
    top.finish();
    c.validate();
    return c;
}

}  // namespace gcav
