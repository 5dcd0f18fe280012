#include "gcav/cav.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "gcav/errors.h"

namespace gcav {

namespace {

constexpr double kLean = 0.85;
constexpr double kTestShare = 0.2;

std::vector<int> concat(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> out = a;
    out.insert(out.end(), b.begin(), b.end());
    std::sort(out.begin(), out.end());
    return out;
}

int pick(Rng& rng, const std::vector<int>& pool) {
    return pool[rng.below(pool.size())];
}

std::string with_record(const PromptRecord& r, const std::exception& e) {
    return "record '" + r.id + "': " + e.what();
}

}  // namespace

std::string to_string(Label label) { return label == Label::Positive ? "pos" : "neg"; }

std::string to_string(Variant variant) { return variant == Variant::Input ? "input" : "output"; }

Label parse_label(const std::string& text) {
    if (text == "pos") {
        return Label::Positive;
    }
    if (text == "neg") {
        return Label::Negative;
    }
    throw FormatError("label must be \"pos\" or \"neg\", got \"" + text + "\"");
}

Variant parse_variant(const std::string& text) {
    if (text == "input") {
        return Variant::Input;
    }
    if (text == "output") {
        return Variant::Output;
    }
    throw FormatError("variant must be \"input\" or \"output\", got \"" + text + "\"");
}

bool ConceptWords::is_positive(std::span<const int> tokens) const {
    long balance = 0;
    for (int t : tokens) {
        if (std::binary_search(positive.begin(), positive.end(), t)) {
            ++balance;
        } else if (std::binary_search(negative.begin(), negative.end(), t)) {
            --balance;
        }
    }
    return balance > 0;
}

double ConceptWords::positive_fraction(std::span<const int> tokens) const {
    if (tokens.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (int t : tokens) {
        hits += std::binary_search(positive.begin(), positive.end(), t) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(tokens.size());
}

std::vector<std::string> bundled_concepts() { return {"dialect", "parity", "shared"}; }

ConceptWords concept_words(const std::string& name, const VocabularyLayout& layout) {
    ConceptWords w;
    w.name = name;
    if (name == "dialect") {
        w.positive = layout.a_words;
        w.negative = layout.b_words;
    } else if (name == "parity") {
        for (int t : concat(concat(layout.a_words, layout.b_words), layout.shared_words)) {
            (t % 2 == 0 ? w.positive : w.negative).push_back(t);
        }
    } else if (name == "shared") {
        w.positive = layout.shared_words;
        w.negative = concat(layout.a_words, layout.b_words);
    } else {
        throw ConfigError("unknown concept '" + name + "' (expected dialect, parity or shared)");
    }
    std::sort(w.positive.begin(), w.positive.end());
    std::sort(w.negative.begin(), w.negative.end());
    if (w.positive.empty() || w.negative.empty()) {
        throw ConfigError("concept '" + name + "' has an empty word set for this vocabulary");
    }
    return w;
}

std::vector<PromptRecord> build_concept_prompts(const Tokenizer& tokenizer,
                                                const VocabularyLayout& layout,
                                                const std::string& concept_name, int pairs,
                                                std::uint64_t seed) {
    if (pairs < 0) {
        throw ConfigError("prompt pairs must be >= 0");
    }
    ConceptWords words = concept_words(concept_name, layout);
    Rng rng(seed);
    std::vector<PromptRecord> out;
    for (int i = 0; i < 2 * pairs; ++i) {
        bool positive = i % 2 == 0;
        int marker;
        const std::vector<int>* lean;
        const std::vector<int>* other;
        if (concept_name == "dialect") {
            marker = positive ? layout.marker_a : layout.marker_b;
            lean = positive ? &layout.a_words : &layout.b_words;
            other = layout.shared_words.empty() ? lean : &layout.shared_words;
        } else {
            bool a = rng.uniform() < 0.5;
            marker = a ? layout.marker_a : layout.marker_b;
            if (concept_name == "parity") {
                lean = positive ? &words.positive : &words.negative;
                other = positive ? &words.negative : &words.positive;
            } else {
                const auto& dialect = a ? layout.a_words : layout.b_words;
                lean = positive ? &layout.shared_words : &dialect;
                other = positive ? &dialect : &layout.shared_words;
            }
        }
        int length = 4 + static_cast<int>(rng.below(5));
        TokenSequence tokens{marker};
        for (int k = 0; k < length; ++k) {
            tokens.push_back(pick(rng, rng.uniform() < kLean ? *lean : *other));
        }
        PromptRecord r;
        r.id = concept_name + "-" + std::to_string(seed) + "-" + std::to_string(i);
        r.text = tokenizer.decode(tokens);
        r.given_label = positive ? Label::Positive : Label::Negative;
        out.push_back(std::move(r));
    }
    return out;
}

ConceptLabeler keyword_labeler(const Tokenizer& tokenizer, ConceptWords words) {
    return [tokenizer, words = std::move(words)](const PromptRecord& r) {
        if (!r.output) {
            throw DomainError("record '" + r.id + "' has no output to label");
        }
        return words.is_positive(tokenizer.encode(*r.output)) ? Label::Positive : Label::Negative;
    };
}

ConceptLabeler agree_always_labeler() {
    return [](const PromptRecord& r) { return r.given_label; };
}

ConceptLabeler disagree_always_labeler() {
    return [](const PromptRecord& r) {
        return r.given_label == Label::Positive ? Label::Negative : Label::Positive;
    };
}

std::vector<ActivationDataset> collect_all_layers(const ToyModel& model,
                                                  const std::vector<PromptRecord>& records) {
    const int layers = model.config().layer_count;
    std::vector<ActivationDataset> out(static_cast<std::size_t>(layers));
    for (const auto& r : records) {
        std::vector<ActivationVector> acts;
        try {
            acts = forward_capture(model, model.tokenizer().encode(r.text));
        } catch (const LengthError& e) {
            throw LengthError(with_record(r, e));
        } catch (const FormatError& e) {
            throw FormatError(with_record(r, e));
        } catch (const DomainError& e) {
            throw DomainError(with_record(r, e));
        }
        for (int l = 0; l < layers; ++l) {
            out[static_cast<std::size_t>(l)].features.push_back(acts[static_cast<std::size_t>(l)].values);
            out[static_cast<std::size_t>(l)].labels.push_back(r.given_label == Label::Positive ? 1 : 0);
        }
    }
    return out;
}

ActivationDataset collect_activations(const ToyModel& model,
                                      const std::vector<PromptRecord>& records, int layer) {
    if (layer < 1 || layer > model.config().layer_count) {
        throw DomainError("layer " + std::to_string(layer) + " outside [1, " +
                          std::to_string(model.config().layer_count) + "]");
    }
    auto all = collect_all_layers(model, records);
    return std::move(all[static_cast<std::size_t>(layer - 1)]);
}

double FilterResult::retention() const {
    std::size_t total = kept.size() + dropped;
    return total == 0 ? 0.0 : static_cast<double>(kept.size()) / static_cast<double>(total);
}

FilterResult filter_by_output(const ToyModel& model, const std::vector<PromptRecord>& records,
                              const ConceptLabeler& labeler, int max_new_tokens) {
    FilterResult result;
    const Tokenizer& tok = model.tokenizer();
    for (const auto& r : records) {
        TokenSequence prompt = tok.encode(r.text);
        TokenSequence full;
        try {
            full = generate(model, prompt, nullptr, max_new_tokens);
        } catch (const LengthError& e) {
            throw LengthError(with_record(r, e));
        }
        PromptRecord labelled = r;
        labelled.output = tok.decode(std::span<const int>(full).subspan(prompt.size()));
        labelled.output_label = labeler(labelled);
        if (*labelled.output_label == r.given_label) {
            result.kept.push_back(std::move(labelled));
        } else {
            ++result.dropped;
        }
    }
    return result;
}

ConceptClassifier train_cav(const ActivationDataset& data, int layer,
                            const std::string& concept_name, Variant variant,
                            std::uint64_t split_seed, const LogisticSettings& settings) {
    if (data.features.size() != data.labels.size()) {
        throw DimensionMismatchError("train_cav: " + std::to_string(data.features.size()) +
                                     " rows but " + std::to_string(data.labels.size()) + " labels");
    }
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
        int y = data.labels[i];
        if (y != 0 && y != 1) {
            throw DomainError("train_cav: labels must be 0 or 1");
        }
        by_class[y].push_back(i);
    }
    Rng rng(split_seed);
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (auto& cls : by_class) {
        rng.shuffle(cls);
        auto n_test = static_cast<std::size_t>(std::floor(kTestShare * static_cast<double>(cls.size())));
        test_idx.insert(test_idx.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(n_test));
        train_idx.insert(train_idx.end(), cls.begin() + static_cast<std::ptrdiff_t>(n_test), cls.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    auto gather = [&](const std::vector<std::size_t>& idx, std::vector<DenseVector>& x,
                      std::vector<int>& y) {
        for (std::size_t i : idx) {
            x.push_back(data.features[i]);
            y.push_back(data.labels[i]);
        }
    };
    std::vector<DenseVector> train_x, test_x;
    std::vector<int> train_y, test_y;
    gather(train_idx, train_x, train_y);
    gather(test_idx, test_x, test_y);

    ConceptClassifier clf;
    clf.concept_name = concept_name;
    clf.layer = layer;
    clf.variant = variant;
    clf.model = train_logistic(train_x, train_y, settings);
    if (test_x.empty()) {
        clf.model.test_accuracy = clf.model.train_accuracy;
        clf.model.test_log_loss = mean_log_loss(clf.model, train_x, train_y);
    } else {
        clf.model.test_accuracy = classification_accuracy(clf.model, test_x, test_y);
        clf.model.test_log_loss = mean_log_loss(clf.model, test_x, test_y);
    }
    clf.cav = clf.model.w * (1.0 / clf.model.w.norm());
    return clf;
}

std::vector<ConceptClassifier> train_layers(const ToyModel& model,
                                            const std::vector<PromptRecord>& records,
                                            const std::vector<int>& layers,
                                            const std::string& concept_name, Variant variant,
                                            std::uint64_t split_seed) {
    std::vector<int> sorted = layers;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("layer list has duplicates");
    }
    for (int l : sorted) {
        if (l < 1 || l > model.config().layer_count) {
            throw ConfigError("layer " + std::to_string(l) + " outside [1, " +
                              std::to_string(model.config().layer_count) + "]");
        }
    }
    auto all = collect_all_layers(model, records);
    std::vector<ConceptClassifier> out;
    for (int l : sorted) {
        try {
            out.push_back(train_cav(all[static_cast<std::size_t>(l - 1)], l, concept_name, variant,
                                    split_seed));
        } catch (const DegenerateDataError& e) {
            throw DegenerateDataError("layer " + std::to_string(l) + ": " + e.what());
        }
    }
    return out;
}

std::vector<LayerAccuracy> scan_of(const std::vector<ConceptClassifier>& classifiers) {
    std::vector<LayerAccuracy> out;
    for (const auto& c : classifiers) {
        out.push_back({c.layer, c.model.test_accuracy, c.model.test_log_loss});
    }
    std::sort(out.begin(), out.end(),
              [](const LayerAccuracy& a, const LayerAccuracy& b) { return a.layer < b.layer; });
    return out;
}

std::vector<LayerAccuracy> layer_scan(const ToyModel& model,
                                      const std::vector<PromptRecord>& records,
                                      const std::vector<int>& layers,
                                      const std::string& concept_name, Variant variant,
                                      std::uint64_t split_seed) {
    if (layers.size() < 2) {
        throw ConfigError("layer scan needs at least two layers");
    }
    return scan_of(train_layers(model, records, layers, concept_name, variant, split_seed));
}

std::vector<int> rank_layers(const std::vector<LayerAccuracy>& scan) {
    std::vector<LayerAccuracy> ranked = scan;
    std::sort(ranked.begin(), ranked.end(), [](const LayerAccuracy& a, const LayerAccuracy& b) {
        if (a.test_accuracy != b.test_accuracy) {
            return a.test_accuracy > b.test_accuracy;
        }
        if (a.test_log_loss != b.test_log_loss) {
            return a.test_log_loss < b.test_log_loss;
        }
        return a.layer < b.layer;
    });
    std::vector<int> out;
    for (const auto& a : ranked) {
        out.push_back(a.layer);
    }
    return out;
}

std::vector<int> top_k_layers(const std::vector<LayerAccuracy>& scan, int k) {
    if (k < 1 || static_cast<std::size_t>(k) > scan.size()) {
        throw ConfigError("topK must be in [1, " + std::to_string(scan.size()) + "]");
    }
    std::vector<int> out = rank_layers(scan);
    out.resize(static_cast<std::size_t>(k));
    std::sort(out.begin(), out.end());
    return out;
}

std::string CavStore::key(const std::string& concept_name, int layer, Variant variant) {
    return concept_name + "/" + std::to_string(layer) + "/" + to_string(variant);
}

void CavStore::insert(ConceptClassifier classifier) {
    std::string k = key(classifier.concept_name, classifier.layer, classifier.variant);
    if (!classifiers_.emplace(k, std::move(classifier)).second) {
        throw ConfigError("CavStore: duplicate key " + k);
    }
}

const ConceptClassifier* CavStore::find(const std::string& concept_name, int layer,
                                        Variant variant) const {
    auto it = classifiers_.find(key(concept_name, layer, variant));
    return it == classifiers_.end() ? nullptr : &it->second;
}

const ConceptClassifier& CavStore::at(const std::string& concept_name, int layer,
                                      Variant variant) const {
    const ConceptClassifier* c = find(concept_name, layer, variant);
    if (c == nullptr) {
        throw MissingCavError("no classifier for " + key(concept_name, layer, variant));
    }
    return *c;
}

Json CavStore::to_json() const {
    Json entries = Json::object();
    for (const auto& [k, c] : classifiers_) {
        entries[k] = Json{{"concept", c.concept_name},
                          {"layer", c.layer},
                          {"variant", to_string(c.variant)},
                          {"w", c.model.w.data()},
                          {"b", c.model.b},
                          {"cav", c.cav.data()},
                          {"trainAccuracy", c.model.train_accuracy},
                          {"testAccuracy", c.model.test_accuracy},
                          {"testLogLoss", c.model.test_log_loss},
                          {"iterations", c.model.iterations}};
    }
    return Json{{"classifiers", std::move(entries)}, {"provenance", provenance_}};
}

CavStore CavStore::from_json(const Json& j) {
    if (!j.is_object() || !j.contains("classifiers") || !j.at("classifiers").is_object()) {
        throw FormatError("CAV store: missing 'classifiers' object");
    }
    static const std::set<std::string> known{"concept", "layer", "variant", "w", "b", "cav",
                                             "trainAccuracy", "testAccuracy", "testLogLoss",
                                             "iterations"};
    CavStore store;
    for (auto it = j.at("classifiers").begin(); it != j.at("classifiers").end(); ++it) {
        const Json& e = it.value();
        try {
            for (auto f = e.begin(); f != e.end(); ++f) {
                if (!known.count(f.key())) {
                    throw FormatError("unknown field '" + f.key() + "'");
                }
            }
            ConceptClassifier c;
            c.concept_name = e.at("concept").get<std::string>();
            c.layer = e.at("layer").get<int>();
            c.variant = parse_variant(e.at("variant").get<std::string>());
            c.model.w = DenseVector(e.at("w").get<std::vector<double>>());
            c.model.b = e.at("b").get<double>();
            c.model.train_accuracy = e.at("trainAccuracy").get<double>();
            c.model.test_accuracy = e.at("testAccuracy").get<double>();
            c.model.test_log_loss = e.at("testLogLoss").get<double>();
            c.model.iterations = e.value("iterations", 0);
            double norm = c.model.w.norm();
            if (!(norm > 0.0)) {
                throw FormatError("zero weight vector");
            }
            c.cav = c.model.w * (1.0 / norm);
            DenseVector stored(e.at("cav").get<std::vector<double>>());
            if ((stored - c.cav).max_abs() > 1e-6) {
                throw FormatError("cav does not match w / ||w||");
            }
            if (key(c.concept_name, c.layer, c.variant) != it.key()) {
                throw FormatError("key does not match concept/layer/variant");
            }
            store.insert(std::move(c));
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError("CAV store entry " + it.key() + ": " + ex.what());
        } catch (const Error& ex) {
            throw FormatError("CAV store entry " + it.key() + ": " + ex.what());
        }
    }
    if (j.contains("provenance")) {
        store.provenance_ = j.at("provenance");
    }
    return store;
}

void CavStore::save(const std::filesystem::path& path) const { write_json_file(path, to_json(), 1); }

CavStore CavStore::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

std::vector<PromptRecord> parse_prompt_lines(const std::string& text, const std::string& origin) {
    static const std::set<std::string> known{"id", "text", "label", "output"};
    std::vector<PromptRecord> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) {
            end = text.size();
        }
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::string where = origin + " line " + std::to_string(line_no);
        Json j = parse_json(line, where);
        try {
            if (!j.is_object()) {
                throw FormatError("expected a JSON object");
            }
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!known.count(it.key())) {
                    throw FormatError("unknown key '" + it.key() + "'");
                }
            }
            PromptRecord r;
            r.id = j.at("id").get<std::string>();
            r.text = j.at("text").get<std::string>();
            r.given_label = parse_label(j.at("label").get<std::string>());
            if (j.contains("output")) {
                r.output = j.at("output").get<std::string>();
            }
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    return out;
}

std::vector<PromptRecord> read_prompt_file(const std::filesystem::path& path) {
    return parse_prompt_lines(read_text_file(path), path.string());
}

std::string format_prompt_lines(const std::vector<PromptRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        Json j{{"id", r.id}, {"text", r.text}, {"label", to_string(r.given_label)}};
        if (r.output) {
            j["output"] = *r.output;
        }
        out += canonical_dump(j);
        out += '\n';
    }
    return out;
}

void write_prompt_file(const std::filesystem::path& path, const std::vector<PromptRecord>& records) {
    write_text_file(path, format_prompt_lines(records));
}

std::string dataset_hash(const std::vector<PromptRecord>& records) {
    return fnv1a_hex(format_prompt_lines(records));
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)]))
             << (8 * i);
    }
    return v;
}

}  // namespace

void write_activation_matrix(const std::filesystem::path& path,
                             const std::vector<DenseVector>& rows) {
    std::size_t dim = rows.empty() ? 0 : rows.front().size();
    std::string out = "GCAV";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(rows.size()));
    put_u32(out, static_cast<std::uint32_t>(dim));
    for (const auto& r : rows) {
        if (r.size() != dim) {
            throw DimensionMismatchError("activation matrix rows differ in dimension");
        }
        for (double x : r.values()) {
            float f = static_cast<float>(x);
            std::uint32_t bits;
            std::memcpy(&bits, &f, sizeof(bits));
            put_u32(out, bits);
        }
    }
    write_text_file(path, out);
}

std::vector<DenseVector> read_activation_matrix(const std::filesystem::path& path) {
    std::string in = read_text_file(path);
    if (in.size() < 16 || in.compare(0, 4, "GCAV") != 0) {
        throw FormatError(path.string() + ": not an activation matrix (bad magic)");
    }
    if (get_u32(in, 4) != 1) {
        throw FormatError(path.string() + ": unsupported activation matrix version");
    }
    std::size_t rows = get_u32(in, 8);
    std::size_t dim = get_u32(in, 12);
    if (in.size() != 16 + 4 * rows * dim) {
        throw FormatError(path.string() + ": truncated activation matrix");
    }
    std::vector<DenseVector> out;
    std::size_t at = 16;
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<double> v(dim);
        for (auto& x : v) {
            std::uint32_t bits = get_u32(in, at);
            float f;
            std::memcpy(&f, &bits, sizeof(f));
            x = f;
            at += 4;
        }
        out.emplace_back(std::move(v));
    }
    return out;
}

}  // namespace gcav
