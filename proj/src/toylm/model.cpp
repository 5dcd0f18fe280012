#include <cstdio>
#include <cstring>
#include <set>
#include <sstream>

#include "gcav/errors.h"
#include "gcav/toylm.h"

namespace gcav {

namespace {

constexpr const char* kFormatName = "gcav-toylm";
constexpr int kFormatVersion = 1;
constexpr double kInitStd = 0.02;

std::string two_digit(int i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%02d", i);
    return buf;
}

bool is_norm_gain(const std::string& name) {
    return name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
}

bool is_bias(const std::string& name) {
    return name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
}

int json_int(const Json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number_integer()) {
        throw FormatError(std::string("model config: missing integer '") + key + "'");
    }
    return j.at(key).get<int>();
}

}  // namespace

void ModelConfig::validate() const {
    if (layer_count < 1) {
        throw ConfigError("ModelConfig: layerCount must be >= 1");
    }
    if (model_dim < 1 || head_count < 1) {
        throw ConfigError("ModelConfig: modelDim and headCount must be positive");
    }
    if (model_dim % head_count != 0) {
        throw ConfigError("ModelConfig: modelDim " + std::to_string(model_dim) +
                          " is not divisible by headCount " + std::to_string(head_count));
    }
    if (vocab_size < 4) {
        throw ConfigError("ModelConfig: vocabSize must be >= 4");
    }
    if (context_length < 2) {
        throw ConfigError("ModelConfig: contextLength must be >= 2");
    }
}

Json ModelConfig::to_json() const {
    return Json{{"layerCount", layer_count}, {"modelDim", model_dim},
                {"headCount", head_count},   {"vocabSize", vocab_size},
                {"contextLength", context_length}, {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
    static const std::set<std::string> known{"layerCount", "modelDim", "headCount",
                                             "vocabSize",  "contextLength", "seed"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) {
            throw FormatError("model config: unknown key '" + it.key() + "'");
        }
    }
    ModelConfig c;
    c.layer_count = json_int(j, "layerCount");
    c.model_dim = json_int(j, "modelDim");
    c.head_count = json_int(j, "headCount");
    c.vocab_size = json_int(j, "vocabSize");
    c.context_length = json_int(j, "contextLength");
    if (!j.contains("seed") || !j.at("seed").is_number_unsigned()) {
        throw FormatError("model config: missing unsigned 'seed'");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

VocabularyLayout VocabularyLayout::for_vocab_size(int vocab_size) {
    if (vocab_size < 4) {
        throw ConfigError("VocabularyLayout: vocabSize must be >= 4");
    }
    VocabularyLayout layout;
    int per_dialect = std::max(1, std::min(24, (vocab_size - 3) / 2));
    int next = 2;
    for (int i = 0; i < per_dialect; ++i) {
        layout.a_words.push_back(next++);
    }
    for (int i = 0; i < per_dialect; ++i) {
        layout.b_words.push_back(next++);
    }
    while (next < vocab_size) {
        layout.shared_words.push_back(next++);
    }
    return layout;
}

Tokenizer::Tokenizer(std::vector<std::string> vocabulary) : vocabulary_(std::move(vocabulary)) {
    for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
        const auto& tok = vocabulary_[i];
        if (tok.empty() || tok.find_first_of(" \t\r\n") != std::string::npos) {
            throw FormatError("Tokenizer: token " + std::to_string(i) +
                              " is empty or contains whitespace");
        }
        if (!index_.emplace(tok, static_cast<int>(i)).second) {
            throw FormatError("Tokenizer: duplicate token '" + tok + "'");
        }
    }
}

Tokenizer Tokenizer::dialect(int vocab_size) {
    VocabularyLayout layout = VocabularyLayout::for_vocab_size(vocab_size);
    std::vector<std::string> vocab(static_cast<std::size_t>(vocab_size));
    vocab[static_cast<std::size_t>(layout.marker_a)] = "<A>";
    vocab[static_cast<std::size_t>(layout.marker_b)] = "<B>";
    for (std::size_t i = 0; i < layout.a_words.size(); ++i) {
        vocab[static_cast<std::size_t>(layout.a_words[i])] = "a" + two_digit(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < layout.b_words.size(); ++i) {
        vocab[static_cast<std::size_t>(layout.b_words[i])] = "b" + two_digit(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < layout.shared_words.size(); ++i) {
        vocab[static_cast<std::size_t>(layout.shared_words[i])] =
            "s" + two_digit(static_cast<int>(i));
    }
    return Tokenizer(std::move(vocab));
}

int Tokenizer::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) {
        throw FormatError("Tokenizer: unknown token '" + std::string(token) + "'");
    }
    return it->second;
}

const std::string& Tokenizer::token(int id) const {
    if (id < 0 || id >= size()) {
        throw DomainError("Tokenizer: id " + std::to_string(id) + " outside vocabulary");
    }
    return vocabulary_[static_cast<std::size_t>(id)];
}

TokenSequence Tokenizer::encode(std::string_view text) const {
    TokenSequence out;
    std::istringstream in{std::string(text)};
    std::string tok;
    while (in >> tok) {
        out.push_back(id(tok));
    }
    return out;
}

std::string Tokenizer::decode(std::span<const int> tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += token(tokens[i]);
    }
    return out;
}

ParameterLayout::ParameterLayout(const ModelConfig& config) {
    config.validate();
    const int d = config.model_dim;
    auto add = [this](std::string name, int rows, int cols) {
        TensorSpec spec{std::move(name), rows, cols, total};
        total += spec.size();
        tensors.push_back(spec);
        return spec.offset;
    };
    token_embedding = add("token_embedding", config.vocab_size, d);
    position_embedding = add("position_embedding", config.context_length, d);
    for (int l = 1; l <= config.layer_count; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        Block b{};
        b.attn_norm_gain = add(p + "attn_norm.gain", d, 0);
        b.attn_norm_bias = add(p + "attn_norm.bias", d, 0);
        b.query = add(p + "attn.query", d, d);
        b.key = add(p + "attn.key", d, d);
        b.value = add(p + "attn.value", d, d);
        b.output = add(p + "attn.output", d, d);
        b.mlp_norm_gain = add(p + "mlp_norm.gain", d, 0);
        b.mlp_norm_bias = add(p + "mlp_norm.bias", d, 0);
        b.up = add(p + "mlp.up", d, 4 * d);
        b.up_bias = add(p + "mlp.up_bias", 4 * d, 0);
        b.down = add(p + "mlp.down", 4 * d, d);
        b.down_bias = add(p + "mlp.down_bias", d, 0);
        blocks.push_back(b);
    }
    final_norm_gain = add("final_norm.gain", d, 0);
    final_norm_bias = add("final_norm.bias", d, 0);
    unembedding = add("unembedding", d, config.vocab_size);
}

ToyModel::ToyModel(ModelConfig config, Tokenizer tokenizer, std::vector<double> parameters,
                   Json metadata)
    : config_(config),
      tokenizer_(std::move(tokenizer)),
      layout_(config_),
      parameters_(std::move(parameters)),
      metadata_(std::move(metadata)) {
    if (tokenizer_.size() != config_.vocab_size) {
        throw ConfigError("ToyModel: tokenizer has " + std::to_string(tokenizer_.size()) +
                          " tokens, config expects " + std::to_string(config_.vocab_size));
    }
    if (parameters_.size() != layout_.total) {
        throw DimensionMismatchError("ToyModel: expected " + std::to_string(layout_.total) +
                                     " parameters, got " + std::to_string(parameters_.size()));
    }
    for (double p : parameters_) {
        if (!std::isfinite(p)) {
            throw DomainError("ToyModel: non-finite weight");
        }
    }
}

std::span<const double> ToyModel::tensor(const std::string& name) const {
    for (const auto& t : layout_.tensors) {
        if (t.name == name) {
            return std::span<const double>(parameters_).subspan(t.offset, t.size());
        }
    }
    throw DomainError("ToyModel: no tensor named '" + name + "'");
}

std::string ToyModel::checksum() const {
    std::string bytes(parameters_.size() * sizeof(double), '\0');
    std::memcpy(bytes.data(), parameters_.data(), bytes.size());
    return fnv1a_hex(bytes);
}

Json ToyModel::to_json() const {
    Json weights = Json::object();
    for (const auto& t : layout_.tensors) {
        const double* base = parameters_.data() + t.offset;
        if (t.cols == 0) {
            weights[t.name] = std::vector<double>(base, base + t.rows);
        } else {
            Json rows = Json::array();
            for (int r = 0; r < t.rows; ++r) {
                rows.push_back(std::vector<double>(base + static_cast<std::size_t>(r) * t.cols,
                                                   base + static_cast<std::size_t>(r + 1) * t.cols));
            }
            weights[t.name] = std::move(rows);
        }
    }
    return Json{{"format", kFormatName},
                {"version", kFormatVersion},
                {"config", config_.to_json()},
                {"vocabulary", tokenizer_.vocabulary()},
                {"weights", std::move(weights)},
                {"metadata", metadata_}};
}

ToyModel ToyModel::from_json(const Json& j) {
    static const std::set<std::string> known{"format", "version", "config",
                                             "vocabulary", "weights", "metadata"};
    if (!j.is_object()) {
        throw FormatError("model file: top level must be an object");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) {
            throw FormatError("model file: unknown key '" + it.key() + "'");
        }
    }
    if (j.value("format", "") != kFormatName || j.value("version", 0) != kFormatVersion) {
        throw FormatError("model file: expected format gcav-toylm version 1");
    }
    ModelConfig config = ModelConfig::from_json(j.at("config"));
    Tokenizer tokenizer(j.at("vocabulary").get<std::vector<std::string>>());
    ParameterLayout layout(config);
    const Json& weights = j.at("weights");
    if (!weights.is_object() || weights.size() != layout.tensors.size()) {
        throw FormatError("model file: expected " + std::to_string(layout.tensors.size()) +
                          " weight tensors");
    }
    std::vector<double> params(layout.total);
    for (const auto& t : layout.tensors) {
        if (!weights.contains(t.name)) {
            throw FormatError("model file: missing tensor '" + t.name + "'");
        }
        const Json& w = weights.at(t.name);
        double* base = params.data() + t.offset;
        auto read_row = [&](const Json& row, int expected, double* out) {
            if (!row.is_array() || static_cast<int>(row.size()) != expected) {
                throw FormatError("model file: tensor '" + t.name + "' has the wrong shape");
            }
            for (int i = 0; i < expected; ++i) {
                if (!row[static_cast<std::size_t>(i)].is_number()) {
                    throw FormatError("model file: tensor '" + t.name + "' has non-numeric data");
                }
                out[i] = row[static_cast<std::size_t>(i)].get<double>();
            }
        };
        if (t.cols == 0) {
            read_row(w, t.rows, base);
        } else {
            if (!w.is_array() || static_cast<int>(w.size()) != t.rows) {
                throw FormatError("model file: tensor '" + t.name + "' has the wrong shape");
            }
            for (int r = 0; r < t.rows; ++r) {
                read_row(w[static_cast<std::size_t>(r)], t.cols,
                         base + static_cast<std::size_t>(r) * t.cols);
            }
        }
    }
    Json metadata = j.contains("metadata") ? j.at("metadata") : Json::object();
    return ToyModel(config, std::move(tokenizer), std::move(params), std::move(metadata));
}

void ToyModel::save(const std::filesystem::path& path) const {
    write_json_file(path, to_json());
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
    return from_json(read_json_file(path));
}

ToyModel init_model(const ModelConfig& config) {
    config.validate();
    ParameterLayout layout(config);
    std::vector<double> params(layout.total, 0.0);
    Rng rng(config.seed);
    for (const auto& t : layout.tensors) {
        double* base = params.data() + t.offset;
        if (is_norm_gain(t.name)) {
            std::fill(base, base + t.size(), 1.0);
        } else if (is_bias(t.name)) {
            // zero
        } else {
            for (std::size_t i = 0; i < t.size(); ++i) {
                base[i] = rng.normal(0.0, kInitStd);
            }
        }
    }
    return ToyModel(config, Tokenizer::dialect(config.vocab_size), std::move(params));
}

}  // namespace gcav
