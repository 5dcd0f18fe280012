#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gcav/errors.h"
#include "gcav/toylm.h"

using namespace gcav;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.layer_count = 2;
    c.model_dim = 8;
    c.head_count = 2;
    c.vocab_size = 10;
    c.context_length = 8;
    c.seed = 5;
    return c;
}

// Perturbs the weights away from init so LayerNorm gains and biases matter.
ToyModel jittered(const ModelConfig& config) {
    ToyModel base = init_model(config);
    std::vector<double> p(base.parameters().begin(), base.parameters().end());
    Rng rng(99);
    for (auto& x : p) {
        x += rng.normal(0.0, 0.3);
    }
    return ToyModel(config, base.tokenizer(), p);
}

}  // namespace

TEST_CASE("toylm: backprop matches central finite differences") {
    ModelConfig config = tiny_config();
    ToyModel model = jittered(config);
    std::vector<TokenSequence> batch{{0, 3, 4, 9, 2, 7}, {1, 5, 5, 8}, {2, 6}};
    std::vector<double> grad;
    double loss = loss_and_gradient(model, batch, grad);
    CHECK(loss == doctest::Approx(mean_next_token_loss(model, batch)).epsilon(1e-12));

    const double h = 1e-5;
    std::vector<double> params(model.parameters().begin(), model.parameters().end());
    double max_rel = 0.0;
    std::vector<double> scratch;
    for (const auto& t : model.layout().tensors) {
        // A handful of entries from every tensor.
        for (std::size_t k = 0; k < std::min<std::size_t>(t.size(), 6); ++k) {
            std::size_t i = t.offset + (k * 7919) % t.size();
            auto plus = params;
            auto minus = params;
            plus[i] += h;
            minus[i] -= h;
            double fp = loss_and_gradient(ToyModel(config, model.tokenizer(), plus), batch, scratch);
            double fm = loss_and_gradient(ToyModel(config, model.tokenizer(), minus), batch, scratch);
            double numeric = (fp - fm) / (2 * h);
            double rel = std::abs(numeric - grad[i]) / std::max(1e-6, std::abs(numeric) + std::abs(grad[i]));
            INFO(t.name << "[" << i - t.offset << "] analytic " << grad[i] << " numeric " << numeric);
            CHECK(rel < 1e-5);
            max_rel = std::max(max_rel, rel);
        }
    }
    MESSAGE("max relative gradient error " << max_rel);
}

TEST_CASE("toylm: init is deterministic and validated") {
    ModelConfig c = tiny_config();
    CHECK(init_model(c).checksum() == init_model(c).checksum());
    c.seed = 6;
    CHECK(init_model(c).checksum() != init_model(tiny_config()).checksum());

    ModelConfig bad;
    bad.model_dim = 63;
    bad.head_count = 4;
    CHECK_THROWS_AS(init_model(bad), ConfigError);
    bad = ModelConfig{};
    bad.layer_count = 0;
    CHECK_THROWS_AS(init_model(bad), ConfigError);

    ToyModel m = init_model(ModelConfig{});
    for (const auto& t : m.layout().tensors) {
        if (t.name == "token_embedding") {
            CHECK(t.rows == 64);
            CHECK(t.cols == 64);
        }
    }
    CHECK(m.tensor("token_embedding").size() == 64u * 64u);
    CHECK(m.tensor("layers.1.attn_norm.gain")[0] == 1.0);
    CHECK(m.tensor("layers.8.mlp.down_bias")[3] == 0.0);
    CHECK_THROWS_AS(m.tensor("layers.9.attn.query"), DomainError);
}

TEST_CASE("toylm: init weights look like N(0, 0.02)") {
    ToyModel m = init_model(ModelConfig{});
    auto w = m.tensor("layers.3.mlp.up");
    double s = 0.0, ss = 0.0;
    for (double x : w) {
        s += x;
        ss += x * x;
    }
    double n = static_cast<double>(w.size());
    CHECK(std::abs(s / n) < 0.002);
    CHECK(std::sqrt(ss / n) == doctest::Approx(0.02).epsilon(0.03));
}

TEST_CASE("toylm: vocabulary partition") {
    auto lay = VocabularyLayout::for_vocab_size(64);
    CHECK(lay.a_words.size() == 24);
    CHECK(lay.b_words.size() == 24);
    CHECK(lay.shared_words.size() == 14);
    Tokenizer tok = Tokenizer::dialect(64);
    CHECK(tok.token(0) == "<A>");
    CHECK(tok.token(1) == "<B>");
    CHECK(tok.token(lay.a_words.front()) == "a00");
    CHECK(tok.token(lay.b_words.back()) == "b23");
    CHECK(tok.token(lay.shared_words.back()) == "s13");
    CHECK(tok.decode(tok.encode("  <B> b03\ts00 ")) == "<B> b03 s00");
    CHECK_THROWS_AS(tok.encode("<A> zz"), FormatError);
    CHECK_THROWS_AS(Tokenizer({"x", "x"}), FormatError);
}

TEST_CASE("toylm: dialect corpus") {
    auto lay = VocabularyLayout::for_vocab_size(64);
    CHECK(make_dialect_corpus(lay, 3, 0).empty());

    auto corpus = make_dialect_corpus(lay, 3, 500);
    REQUIRE(corpus.size() == 500);
    CHECK(corpus == make_dialect_corpus(lay, 3, 500));

    // Tally by token text rather than by id ranges.
    Tokenizer tok = Tokenizer::dialect(64);
    long a_seq_words = 0, a_seq_a_words = 0, stray = 0;
    for (const auto& seq : corpus) {
        REQUIRE(seq.size() == 24);
        const std::string& marker = tok.token(seq[0]);
        REQUIRE((marker == "<A>" || marker == "<B>"));
        char own = marker == "<A>" ? 'a' : 'b';
        for (std::size_t i = 1; i < seq.size(); ++i) {
            char kind = tok.token(seq[i])[0];
            if (kind != own && kind != 's') {
                ++stray;
            }
            if (own == 'a') {
                ++a_seq_words;
                a_seq_a_words += kind == 'a' ? 1 : 0;
            }
        }
    }
    CHECK(stray == 0);
    double frac = static_cast<double>(a_seq_a_words) / static_cast<double>(a_seq_words);
    CHECK(frac == doctest::Approx(0.85).epsilon(0.03 / 0.85));
}

TEST_CASE("toylm: steps=0 leaves the weights alone and bad corpora are rejected") {
    ModelConfig c = tiny_config();
    ToyModel m = init_model(c);
    std::vector<TokenSequence> corpus{{0, 2, 3, 4}, {1, 5, 6}};
    TrainingSettings s;
    s.steps = 0;
    CHECK(train_on_corpus(m, corpus, s).checksum() == m.checksum());

    s.steps = 3;
    CHECK_THROWS_AS(train_on_corpus(m, {}, s), CorpusError);
    CHECK_THROWS_AS(train_on_corpus(m, {{0}}, s), CorpusError);
    CHECK_THROWS_AS(train_on_corpus(m, {TokenSequence(9, 2)}, s), CorpusError);
    ToyModel a = train_on_corpus(m, corpus, s);
    CHECK(a.checksum() == train_on_corpus(m, corpus, s).checksum());
    CHECK(a.checksum() != m.checksum());
}

TEST_CASE("toylm: a short training run lowers held-out loss") {
    ModelConfig c;
    c.layer_count = 2;
    c.model_dim = 16;
    c.head_count = 2;
    c.context_length = 16;
    c.seed = 3;
    auto lay = VocabularyLayout::for_vocab_size(64);
    auto train = make_dialect_corpus(lay, 1, 200, 16);
    auto held = make_dialect_corpus(lay, 2, 40, 16);
    ToyModel m = init_model(c);
    TrainingSettings s;
    s.steps = 150;
    s.learning_rate = 3e-3;
    ToyModel t = train_on_corpus(m, train, s);
    CHECK(mean_next_token_loss(t, held) < mean_next_token_loss(m, held) - 0.1);
}

TEST_CASE("toylm: capture") {
    ToyModel m = jittered(tiny_config());
    TokenSequence prompt{0, 3, 4};
    auto a = forward_capture(m, prompt);
    auto b = forward_capture(m, prompt);
    REQUIRE(a.size() == 2);
    for (std::size_t l = 0; l < a.size(); ++l) {
        CHECK(a[l].layer == static_cast<int>(l) + 1);
        CHECK(a[l].position == 2);
        CHECK(a[l].values.size() == 8);
        CHECK(a[l].values == b[l].values);
    }

    auto c = forward_capture(m, {0, 3, 5});
    CHECK(c[1].values != a[1].values);

    CHECK_THROWS_AS(forward_capture(m, TokenSequence(9, 2)), LengthError);
    CHECK_THROWS_AS(forward_capture(m, {}), LengthError);
    CHECK_THROWS_AS(forward_capture(m, {0, 10}), DomainError);
}

TEST_CASE("toylm: a single-layer hook shows up exactly in the capture") {
    ToyModel m = jittered(tiny_config());
    TokenSequence prompt{1, 6, 2, 2};
    auto plain = forward_capture(m, prompt);
    for (int layer = 1; layer <= 2; ++layer) {
        std::vector<double> o(8);
        for (int i = 0; i < 8; ++i) {
            o[static_cast<std::size_t>(i)] = 0.25 * (i - 3.5);
        }
        InterventionHook hook;
        hook.offsets[layer] = DenseVector(o);
        auto hooked = forward_capture(m, prompt, &hook);
        for (int i = 0; i < 8; ++i) {
            CHECK(hooked[static_cast<std::size_t>(layer - 1)].values[static_cast<std::size_t>(i)] ==
                  plain[static_cast<std::size_t>(layer - 1)].values[static_cast<std::size_t>(i)] +
                      o[static_cast<std::size_t>(i)]);
        }
        if (layer == 1) {
            CHECK(hooked[1].values != plain[1].values);
        }
    }

    InterventionHook bad;
    bad.offsets[3] = DenseVector(std::vector<double>(8, 0.0));
    CHECK_THROWS_AS(forward_capture(m, prompt, &bad), DomainError);
    bad.offsets.clear();
    bad.offsets[1] = DenseVector(std::vector<double>(7, 0.0));
    CHECK_THROWS_AS(forward_capture(m, prompt, &bad), DimensionMismatchError);
}

TEST_CASE("toylm: generation") {
    ToyModel m = jittered(tiny_config());
    TokenSequence prompt{0, 3, 4};
    TokenSequence plain = generate(m, prompt, nullptr, 5);
    CHECK(plain.size() == 8);
    CHECK(TokenSequence(plain.begin(), plain.begin() + 3) == prompt);
    CHECK(generate(m, prompt, nullptr, 0) == prompt);
    CHECK_THROWS_AS(generate(m, prompt, nullptr, 6), LengthError);

    InterventionHook zero;
    zero.offsets[1] = DenseVector(std::vector<double>(8, 0.0));
    zero.offsets[2] = DenseVector(std::vector<double>(8, 0.0));
    CHECK(generate(m, prompt, &zero, 5) == plain);

    // Greedy picks the argmax of the unmodified logits at each step.
    for (std::size_t i = prompt.size(); i < plain.size(); ++i) {
        auto logits = next_token_logits(m, TokenSequence(plain.begin(), plain.begin() + i));
        auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
        CHECK(plain[i] == best);
    }
}

TEST_CASE("toylm: adaptive generation with constant offsets matches the hook") {
    ToyModel m = jittered(tiny_config());
    TokenSequence prompt{2, 7};
    DenseVector o(std::vector<double>{1, -1, 0.5, 0, 0, 2, -0.5, 0.25});
    InterventionHook hook;
    hook.offsets[1] = o;
    auto policy = [&](const std::vector<ActivationVector>&) {
        return std::map<int, DenseVector>{{1, o}};
    };
    CHECK(generate_adaptive(m, prompt, policy, 6) == generate(m, prompt, &hook, 6));
}

TEST_CASE("toylm: log-probs agree with the logits") {
    ToyModel m = jittered(tiny_config());
    TokenSequence seq{1, 4, 4, 9, 0};
    auto lp = token_log_probs(m, seq);
    REQUIRE(lp.size() == 4);
    auto logits = next_token_logits(m, {1, 4, 4});
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double x : logits) {
        z += std::exp(x - mx);
    }
    CHECK(lp[2] == doctest::Approx(logits[9] - mx - std::log(z)).epsilon(1e-12));
    CHECK(mean_next_token_loss(m, {seq}) == doctest::Approx(-(lp[0] + lp[1] + lp[2] + lp[3]) / 4));
}

TEST_CASE("toylm: save/load round trip") {
    ToyModel m = jittered(tiny_config());
    auto dir = std::filesystem::temp_directory_path() / "gcav_toylm_test";
    std::filesystem::create_directories(dir);
    m.save(dir / "a.json");
    ToyModel back = ToyModel::load(dir / "a.json");
    back.save(dir / "b.json");
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
    CHECK(ToyModel::load(dir / "b.json").checksum() == back.checksum());
    CHECK(back.config().to_json() == m.config().to_json());
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
        REQUIRE(std::abs(back.parameters()[i] - m.parameters()[i]) <=
                1e-8 * std::max(1.0, std::abs(m.parameters()[i])));
    }

    Json j = m.to_json();
    j["surprise"] = 1;
    CHECK_THROWS_AS(ToyModel::from_json(j), FormatError);
    j = m.to_json();
    j["weights"].erase("unembedding");
    CHECK_THROWS_AS(ToyModel::from_json(j), FormatError);
    CHECK_THROWS_AS(ToyModel::load(dir / "missing.json"), FormatError);
    std::filesystem::remove_all(dir);
}

// Golden values come from tests/reference/toylm_reference.py run on
// tests/reference/golden_model.json.
TEST_CASE("toylm: greedy tokens match the numpy reference") {
    ToyModel m = ToyModel::load(std::filesystem::path(GCAV_REFERENCE_DIR) / "golden_model.json");
    auto logits = next_token_logits(m, {0, 3, 4});
    CHECK(logits[0] == doctest::Approx(-0.3688048312928792).epsilon(1e-9));
    CHECK(logits[1] == doctest::Approx(-0.1937887144777216).epsilon(1e-9));
    CHECK(logits[2] == doctest::Approx(-1.5954345371876908).epsilon(1e-9));
    CHECK(logits[3] == doctest::Approx(1.225605397518749).epsilon(1e-9));

    std::vector<double> o(16);
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = i % 2 == 0 ? 0.5 : -0.5;
    }
    InterventionHook hook;
    hook.offsets[1] = DenseVector(o);

    CHECK(generate(m, {0, 3, 4}, nullptr, 8) == TokenSequence{0, 3, 4, 5, 0, 5, 5, 5, 5, 5, 5});
    CHECK(generate(m, {0, 3, 4}, &hook, 8) == TokenSequence{0, 3, 4, 5, 0, 5, 5, 5, 7, 5, 5});
    CHECK(generate(m, {1, 9, 2, 7}, nullptr, 8) ==
          TokenSequence{1, 9, 2, 7, 0, 4, 0, 12, 7, 5, 5, 0});
    CHECK(generate(m, {1, 9, 2, 7}, &hook, 8) ==
          TokenSequence{1, 9, 2, 7, 13, 13, 0, 5, 13, 5, 7, 5});
}
