#pragma once

#include <variant>
#include <vector>

#include "meta/drift.hpp"
#include "meta/env.hpp"
#include "meta/optimizer.hpp"

namespace meta {

struct PpoConfig {
    int n_envs = 4;
    int n_steps = 128;
    long total_timesteps = 500000;
    int n_minibatches = 4;
    int n_epochs = 4;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_eps = 0.2;
    double vf_coef = 0.5;
    double ent_coef = 0.01;
    double max_grad_norm = 0.5;
    std::vector<int> hidden_widths = {64, 64};
    Activation hidden_activation = Activation::Tanh;

    void validate() const;
};

struct RolloutBatch {
    // [step][env]
    std::vector<std::vector<std::vector<double>>> observations;
    std::vector<std::vector<int>> actions;
    std::vector<std::vector<double>> behaviour_log_probs;
    std::vector<std::vector<double>> rewards;
    std::vector<std::vector<bool>> dones;
    std::vector<std::vector<double>> values;
    std::vector<double> bootstrap_value; // per env, V(s_T)
};

struct AdvantageSet {
    std::vector<std::vector<double>> advantages;
    std::vector<std::vector<double>> targets; // advantages + values
};

AdvantageSet compute_gae(const RolloutBatch& batch, double gamma, double lambda);

// One flattened minibatch sample.
struct MiniSample {
    const std::vector<double>* observation = nullptr;
    int action = 0;
    double behaviour_log_prob = 0.0;
    double advantage = 0.0;  // already normalized
    double value_target = 0.0;
};

struct MirrorLossResult {
    double loss = 0.0;
    // d(loss)/d(log pi_new(a|s)) per sample; masked samples get 0
    std::vector<double> dloss_dlogp;
    int masked = 0;
};

// Per-sample surrogate -(r*A - D(r, A)), averaged over unmasked samples.
// ratios and advantages are parallel arrays; non-finite ratios are masked.
MirrorLossResult mirror_policy_loss(const std::vector<double>& ratios,
                                    const std::vector<double>& advantages,
                                    const DriftFunction& drift);

struct TotalLossResult {
    double loss = 0.0;
    std::vector<double> param_grads; // clipped by max_grad_norm
    int masked = 0;
    // mean |activation| per neuron per layer, for dormancy features
    std::vector<std::vector<double>> layer_abs_activation;
};

// Policy term + vf_coef * value MSE - ent_coef * entropy, over one minibatch.
TotalLossResult ppo_total_loss(const std::vector<MiniSample>& minibatch,
                               const DriftFunction& drift, const MlpParams& agent,
                               const PpoConfig& config);

struct TrainResult {
    MlpParams final_params;
    std::vector<std::pair<long, double>> return_curve; // (env_steps, mean return)
    double final_return = 0.0;
    bool diverged = false;
    long env_steps_consumed = 0;
};

using TrainEnv = std::variant<EnvInstance, EnvDistribution>;

TrainResult train_agent(const PpoConfig& config, const TrainEnv& env,
                        const DriftFunction& drift, UpdateRule rule, std::uint64_t seed);

// Normalize to mean 0 / std 1 with eps floor; used per minibatch.
void standardize(std::vector<double>& values, double eps = 1e-8);

} // namespace meta
