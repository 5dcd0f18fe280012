#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gcav/canonical_json.h"
#include "gcav/steering.h"
#include "gcav/toylm.h"

namespace gcav {

struct CorpusSettings {
    int samples = 2000;
    int sequence_length = 24;
    int held_out_samples = 200;
};

struct CavSettings {
    std::vector<std::string> concepts{"dialect", "parity", "shared"};
    int pairs = 100;
    std::vector<int> layers;  // empty: every layer
    Variant variant = Variant::Input;
    std::string labeler = "keyword";  // keyword | agree-always | disagree-always
    int filter_tokens = kFilterTokens;
    bool write_activations = false;
};

struct SteeringSettings {
    // Targets without layers go to the top_k layers of their concept's scan.
    std::vector<SteeringTarget> targets{{"dialect", Direction::Add, 0.9, {}, Variant::Input}};
    int top_k = 2;
    GenerationSettings generation;
};

struct SweepSettings {
    SteeringTarget swept{"dialect", Direction::Add, 0.5, {}, Variant::Input};
    std::vector<double> grid{0.5, 0.7, 0.9, 0.97, 0.99};
    std::vector<SteeringTarget> fixed{{"parity", Direction::Add, 0.6, {}, Variant::Input},
                                      {"shared", Direction::Remove, 0.3, {}, Variant::Input}};
    int prompts = 20;
};

struct EvalSettings {
    int held_out_pairs = 50;
    std::string scorer = "keyword";  // keyword | probe
    double probe_threshold = 0.5;
    int group_width = 0;  // 0: a quarter of the layers
    std::string correlation_concept = "dialect";
    double correlation_p = 0.1;
    SweepSettings sweep;
};

// One JSON file per run. Unknown keys anywhere are a ConfigError.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string timestamp = "1970-01-01T00:00:00Z";  // recorded in provenance, never the clock
    ModelConfig model;
    CorpusSettings corpus;
    TrainingSettings training;
    CavSettings cav;
    SteeringSettings steering;
    EvalSettings eval;
    std::filesystem::path out_dir = "out";

    // Seeds of the independent random streams, all derived from `seed`.
    std::uint64_t corpus_seed() const;
    std::uint64_t held_out_corpus_seed() const;
    std::uint64_t model_seed() const;
    std::uint64_t training_seed() const;
    std::uint64_t prompt_seed(const std::string& concept_name) const;
    std::uint64_t split_seed() const;
    std::uint64_t eval_prompt_seed() const;

    // Model and training settings with the derived seeds filled in.
    ModelConfig model_config() const;
    TrainingSettings training_settings() const;

    void validate() const;
    Json to_json() const;
    static RunConfig from_json(const Json& j);
};

// Entry point behind the gcav executable; args exclude the program name.
// Exit codes: 0 ok, 2 bad input or config, 3 output exists without --force,
// 4 a steering program was infeasible.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gcav
