#pragma once

#include <string>
#include <vector>

#include "meta/distill.hpp"
#include "meta/env.hpp"
#include "meta/es.hpp"
#include "meta/llm.hpp"
#include "meta/rltrain.hpp"

namespace meta {

enum class AlgorithmKind { Lpo, OpenFf, NoFeatures };
enum class MetaMethod {
    Baseline,
    BlackboxEs,
    DistillSame,
    DistillSmaller,
    DistillSymbolic,
    LlmProposal,
};

struct LlmSettings {
    std::string mock_script;   // path to a JSON array of scripted replies; empty -> HTTP
    LlmEndpoint endpoint;
    int budget = 8;
    int rl_eval_seeds = 4;
    std::string warm_start_code; // DSL text; default picked per algorithm kind
};

struct RunConfig {
    std::string name;
    AlgorithmKind algorithm = AlgorithmKind::Lpo;
    MetaMethod meta_method = MetaMethod::Baseline;
    std::string train_dist = "grid_id";            // grid_id | grid_ood | cartpole
    std::vector<std::string> test_dists = {"grid_id"};
    PpoConfig ppo;
    double base_opt_lr = 1e-2;                     // sgd used under learned drifts
    std::vector<int> drift_hidden = {128};
    std::vector<int> opt_hidden = {32, 32};
    EsConfig es;
    DistillConfig distill;
    SymDistillConfig sym_distill;
    LlmSettings llm;
    std::vector<int> seeds = {0, 1, 2, 3};         // evaluation seeds
    std::uint64_t meta_seed = 0;
    std::string teacher_artifact;                  // distill_* input
    std::string output_dir = "out";
    int n_workers = 1;

    void validate() const;
};

// Throws std::runtime_error naming the offending field path.
RunConfig load_run_config(const std::string& path);

EnvDistribution dist_by_name(const std::string& name);

// FNV-1a over the canonical JSON form; recorded in the manifest.
std::string config_hash(const RunConfig& config);

// Exit status 0 on success; errors printed to stderr.
int cmd_run(const std::string& config_path);
int cmd_report(const std::string& records_glob, const std::string& baseline_method,
               const std::string& out_path);
int cmd_surface(const std::string& drift_artifact, const std::string& out_csv);

} // namespace meta
