#include "meta/rltrain.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace meta {

void PpoConfig::validate() const {
    if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("PpoConfig: need 0 <= gamma < 1");
    if (gae_lambda < 0.0 || gae_lambda > 1.0) throw std::invalid_argument("PpoConfig: need 0 <= lambda <= 1");
    if (clip_eps <= 0.0) throw std::invalid_argument("PpoConfig: clip_eps must be > 0");
    if (n_envs < 1 || n_steps < 1 || n_minibatches < 1 || n_epochs < 1)
        throw std::invalid_argument("PpoConfig: counts must be >= 1");
    if ((n_envs * n_steps) % n_minibatches != 0)
        throw std::invalid_argument("PpoConfig: n_envs*n_steps must divide by n_minibatches");
    if (total_timesteps < static_cast<long>(n_envs) * n_steps)
        throw std::invalid_argument("PpoConfig: total_timesteps < one rollout block");
}

AdvantageSet compute_gae(const RolloutBatch& batch, double gamma, double lambda) {
    const int T = static_cast<int>(batch.rewards.size());
    const int N = T > 0 ? static_cast<int>(batch.rewards[0].size()) : 0;
    AdvantageSet out;
    out.advantages.assign(T, std::vector<double>(N, 0.0));
    out.targets.assign(T, std::vector<double>(N, 0.0));
    for (int e = 0; e < N; ++e) {
        double gae = 0.0;
        for (int t = T - 1; t >= 0; --t) {
            const double not_done = batch.dones[t][e] ? 0.0 : 1.0;
            const double next_value = t == T - 1 ? batch.bootstrap_value[e] : batch.values[t + 1][e];
            const double delta =
                batch.rewards[t][e] + gamma * next_value * not_done - batch.values[t][e];
            gae = delta + gamma * lambda * not_done * gae;
            out.advantages[t][e] = gae;
            out.targets[t][e] = gae + batch.values[t][e];
        }
    }
    return out;
}

MirrorLossResult mirror_policy_loss(const std::vector<double>& ratios,
                                    const std::vector<double>& advantages,
                                    const DriftFunction& drift) {
    if (ratios.size() != advantages.size())
        throw std::invalid_argument("mirror_policy_loss: size mismatch");
    MirrorLossResult res;
    res.dloss_dlogp.assign(ratios.size(), 0.0);
    double loss = 0.0;
    int used = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double r = ratios[i];
        if (!std::isfinite(r) || r <= 0.0) {
            ++res.masked;
            continue;
        }
        const double a = advantages[i];
        const double d = drift_eval(drift, r, a);
        loss += -(r * a - d);
        const double dd_dr = drift_grad_r(drift, r, a);
        // dL/dr = -(A - dD/dr); dr/dlogp = r
        res.dloss_dlogp[i] = -(a - dd_dr) * r;
        ++used;
    }
    if (res.masked > 0 &&
        static_cast<double>(res.masked) > 0.1 * static_cast<double>(ratios.size()))
        throw std::runtime_error("mirror_policy_loss: more than 10% of samples masked");
    if (used > 0) {
        loss /= used;
        for (double& g : res.dloss_dlogp) g /= used;
    }
    res.loss = loss;
    return res;
}

void standardize(std::vector<double>& values, double eps) {
    if (values.empty()) return;
    double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= values.size();
    const double sd = std::sqrt(var) + eps;
    for (double& v : values) v = (v - mean) / sd;
}

namespace {

// softmax over logits; returns probabilities and log-probabilities
void softmax(const std::vector<double>& logits, std::vector<double>& probs,
             std::vector<double>& logp) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    probs.resize(logits.size());
    logp.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - mx);
        z += probs[i];
    }
    const double logz = std::log(z) + mx;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] /= z;
        logp[i] = logits[i] - logz;
    }
}

int sample_categorical(const std::vector<double>& probs, RngStream& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u <= acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

} // namespace

TotalLossResult ppo_total_loss(const std::vector<MiniSample>& minibatch,
                               const DriftFunction& drift, const MlpParams& agent,
                               const PpoConfig& config) {
    const int n_outputs = agent.spec.layer_widths.back();
    const int n_actions = n_outputs - 1;
    const int M = static_cast<int>(minibatch.size());
    const int L = agent.spec.n_layers();

    TotalLossResult res;
    res.param_grads.assign(agent.values.size(), 0.0);
    res.layer_abs_activation.assign(L, {});
    for (int l = 0; l < L; ++l)
        res.layer_abs_activation[l].assign(agent.spec.layer_widths[l + 1], 0.0);

    // forward all samples, collect ratios for the mirror loss
    std::vector<MlpCache> caches(M);
    std::vector<std::vector<double>> probs(M), logps(M);
    std::vector<double> ratios(M), advs(M), values(M);
    for (int i = 0; i < M; ++i) {
        const MiniSample& s = minibatch[i];
        std::vector<double> out = mlp_forward(agent, *s.observation, &caches[i]);
        std::vector<double> logits(out.begin(), out.begin() + n_actions);
        values[i] = out[n_actions];
        softmax(logits, probs[i], logps[i]);
        ratios[i] = std::exp(logps[i][s.action] - s.behaviour_log_prob);
        advs[i] = s.advantage;
        for (int l = 0; l < L - 1; ++l)
            for (std::size_t k = 0; k < caches[i].post[l + 1].size(); ++k)
                res.layer_abs_activation[l][k] += std::fabs(caches[i].post[l + 1][k]);
        for (int k = 0; k < n_outputs; ++k)
            res.layer_abs_activation[L - 1][k] += std::fabs(caches[i].pre[L - 1][k]);
    }
    for (auto& layer : res.layer_abs_activation)
        for (double& v : layer) v /= M;

    MirrorLossResult mirror = mirror_policy_loss(ratios, advs, drift);
    res.masked = mirror.masked;

    double entropy_sum = 0.0, value_mse = 0.0;
    for (int i = 0; i < M; ++i) {
        const MiniSample& s = minibatch[i];
        // entropy of the categorical policy
        double H = 0.0;
        for (int k = 0; k < n_actions; ++k) H -= probs[i][k] * logps[i][k];
        entropy_sum += H;
        const double verr = values[i] - s.value_target;
        value_mse += verr * verr;

        // gradient w.r.t. agent outputs (logits then value)
        std::vector<double> upstream(n_outputs, 0.0);
        const double gp = mirror.dloss_dlogp[i]; // already averaged over minibatch
        for (int k = 0; k < n_actions; ++k) {
            const double ind = k == s.action ? 1.0 : 0.0;
            // policy term through log pi(a|s)
            upstream[k] += gp * (ind - probs[i][k]);
            // entropy bonus: d(-c2*H/M)/dlogit_k = c2/M * p_k * (log p_k + H)
            upstream[k] += config.ent_coef / M * probs[i][k] * (logps[i][k] + H);
        }
        upstream[n_actions] = 2.0 * config.vf_coef * verr / M;

        std::vector<double> pg, ig;
        mlp_backward(agent, caches[i], upstream, pg, ig);
        for (std::size_t k = 0; k < pg.size(); ++k) res.param_grads[k] += pg[k];
    }

    res.loss = mirror.loss + config.vf_coef * value_mse / M - config.ent_coef * entropy_sum / M;
    res.param_grads = clip_global_norm(res.param_grads, config.max_grad_norm);
    return res;
}

TrainResult train_agent(const PpoConfig& config, const TrainEnv& env,
                        const DriftFunction& drift, UpdateRule rule, std::uint64_t seed) {
    config.validate();
    RngStream root(seed, 0);

    EnvInstance inst;
    if (const auto* e = std::get_if<EnvInstance>(&env)) {
        inst = *e;
    } else {
        RngStream env_rng = root.substream(1);
        inst = sample_env(std::get<EnvDistribution>(env), env_rng);
    }

    const int n_actions = inst.action_count();
    MlpSpec agent_spec;
    agent_spec.layer_widths.push_back(inst.observation_size());
    for (int w : config.hidden_widths) agent_spec.layer_widths.push_back(w);
    agent_spec.layer_widths.push_back(n_actions + 1);
    agent_spec.hidden_activation = config.hidden_activation;
    agent_spec.output_activation = Activation::Identity;

    RngStream init_rng = root.substream(2);
    MlpParams agent = init_mlp(agent_spec, true, init_rng, 0.5);
    // small policy head so the initial policy is near uniform
    {
        const int L = agent_spec.n_layers();
        const std::size_t off = agent.weight_offset(L - 1);
        const std::size_t cnt =
            static_cast<std::size_t>(agent_spec.layer_widths[L - 1]) * agent_spec.layer_widths[L];
        for (std::size_t i = off; i < off + cnt; ++i) agent.values[i] *= 0.1;
    }

    TrainResult result;
    const long block = static_cast<long>(config.n_envs) * config.n_steps;
    const long n_cycles = config.total_timesteps / block;
    const int batch_size = config.n_envs * config.n_steps;
    const int mb_size = batch_size / config.n_minibatches;

    // per-parameter layer proportion, fixed for the run
    UpdateContext ctx;
    ctx.l_p.assign(agent.values.size(), 0.0);
    {
        const int L = agent_spec.n_layers();
        for (int l = 0; l < L; ++l) {
            const double lp = L > 1 ? static_cast<double>(l) / (L - 1) : 0.0;
            const std::size_t start = agent.weight_offset(l);
            const std::size_t end = l + 1 < L ? agent.weight_offset(l + 1) : agent.values.size();
            for (std::size_t i = start; i < end; ++i) ctx.l_p[i] = lp;
        }
    }
    ctx.dorm.assign(agent.values.size(), 0.0);
    ctx.rand.assign(agent.values.size(), 0.0);

    std::vector<RngStream> env_rngs;
    for (int e = 0; e < config.n_envs; ++e) env_rngs.push_back(root.substream(100 + e));
    RngStream policy_rng = root.substream(3);
    RngStream shuffle_rng = root.substream(4);
    RngStream noise_rng = root.substream(5);

    std::vector<EnvState> states(config.n_envs);
    std::vector<std::vector<double>> observations(config.n_envs);
    std::vector<double> episode_return(config.n_envs, 0.0);
    for (int e = 0; e < config.n_envs; ++e) {
        auto [st, obs] = env_reset(inst, env_rngs[e]);
        states[e] = std::move(st);
        observations[e] = std::move(obs);
    }
    std::deque<double> recent_episodes;

    auto record_point = [&](long steps) {
        double mean = 0.0;
        if (!recent_episodes.empty()) {
            for (double r : recent_episodes) mean += r;
            mean /= recent_episodes.size();
        }
        result.return_curve.emplace_back(steps, mean);
    };

    const int L = agent_spec.n_layers();
    for (long cycle = 0; cycle < n_cycles; ++cycle) {
        // ---- rollout ----
        RolloutBatch batch;
        batch.observations.assign(config.n_steps, {});
        batch.actions.assign(config.n_steps, std::vector<int>(config.n_envs, 0));
        batch.behaviour_log_probs.assign(config.n_steps, std::vector<double>(config.n_envs, 0.0));
        batch.rewards.assign(config.n_steps, std::vector<double>(config.n_envs, 0.0));
        batch.dones.assign(config.n_steps, std::vector<bool>(config.n_envs, false));
        batch.values.assign(config.n_steps, std::vector<double>(config.n_envs, 0.0));
        batch.bootstrap_value.assign(config.n_envs, 0.0);

        for (int t = 0; t < config.n_steps; ++t) {
            batch.observations[t].resize(config.n_envs);
            for (int e = 0; e < config.n_envs; ++e) {
                std::vector<double> out = mlp_forward(agent, observations[e]);
                std::vector<double> logits(out.begin(), out.begin() + n_actions);
                std::vector<double> probs, logp;
                softmax(logits, probs, logp);
                const int action = sample_categorical(probs, policy_rng);
                batch.observations[t][e] = observations[e];
                batch.actions[t][e] = action;
                batch.behaviour_log_probs[t][e] = logp[action];
                batch.values[t][e] = out[n_actions];

                StepResult sr = env_step(inst, states[e], action, env_rngs[e]);
                batch.rewards[t][e] = sr.reward;
                batch.dones[t][e] = sr.done;
                episode_return[e] += sr.reward;
                if (sr.done) {
                    recent_episodes.push_back(episode_return[e]);
                    while (recent_episodes.size() > 64) recent_episodes.pop_front();
                    episode_return[e] = 0.0;
                    auto [st, obs] = env_reset(inst, env_rngs[e]);
                    states[e] = std::move(st);
                    observations[e] = std::move(obs);
                } else {
                    states[e] = std::move(sr.state);
                    observations[e] = std::move(sr.observation);
                }
            }
        }
        for (int e = 0; e < config.n_envs; ++e) {
            std::vector<double> out = mlp_forward(agent, observations[e]);
            batch.bootstrap_value[e] = out[n_actions];
        }
        result.env_steps_consumed += block;

        AdvantageSet adv = compute_gae(batch, config.gamma, config.gae_lambda);
        ctx.t_p = static_cast<double>(cycle * block) / config.total_timesteps;

        // flatten (step, env) -> sample index
        std::vector<int> order(batch_size);
        std::iota(order.begin(), order.end(), 0);

        bool aborted = false;
        for (int epoch = 0; epoch < config.n_epochs && !aborted; ++epoch) {
            // deterministic Fisher-Yates shuffle
            for (int i = batch_size - 1; i > 0; --i) {
                int j = static_cast<int>(shuffle_rng.uniform_int(i + 1));
                std::swap(order[i], order[j]);
            }
            for (int mb = 0; mb < config.n_minibatches && !aborted; ++mb) {
                std::vector<MiniSample> samples(mb_size);
                std::vector<double> mb_adv(mb_size);
                for (int i = 0; i < mb_size; ++i) {
                    const int flat = order[mb * mb_size + i];
                    const int t = flat / config.n_envs;
                    const int e = flat % config.n_envs;
                    samples[i].observation = &batch.observations[t][e];
                    samples[i].action = batch.actions[t][e];
                    samples[i].behaviour_log_prob = batch.behaviour_log_probs[t][e];
                    samples[i].value_target = adv.targets[t][e];
                    mb_adv[i] = adv.advantages[t][e];
                }
                standardize(mb_adv);
                for (int i = 0; i < mb_size; ++i) samples[i].advantage = mb_adv[i];

                TotalLossResult tl;
                try {
                    tl = ppo_total_loss(samples, drift, agent, config);
                } catch (const std::runtime_error&) {
                    aborted = true;
                    break;
                }

                // dormancy per parameter from this minibatch's activations
                {
                    std::vector<std::vector<double>> act_rows(1);
                    for (int l = 0; l < L; ++l) {
                        act_rows[0] = tl.layer_abs_activation[l];
                        std::vector<double> scores = dormancy_scores(act_rows);
                        const int in = agent_spec.layer_widths[l];
                        const int out = agent_spec.layer_widths[l + 1];
                        const std::size_t woff = agent.weight_offset(l);
                        for (int i = 0; i < out; ++i)
                            for (int j = 0; j < in; ++j)
                                ctx.dorm[woff + static_cast<std::size_t>(i) * in + j] = scores[i];
                        if (agent.bias_enabled) {
                            const std::size_t boff = agent.bias_offset(l);
                            for (int i = 0; i < out; ++i) ctx.dorm[boff + i] = scores[i];
                        }
                    }
                }
                ctx.b_p = static_cast<double>(epoch * config.n_minibatches + mb) /
                          (config.n_epochs * config.n_minibatches);
                for (auto& r : ctx.rand) r = noise_rng.normal();

                try {
                    apply_update_rule(rule, agent.values, tl.param_grads, ctx);
                } catch (const std::runtime_error&) {
                    aborted = true;
                    break;
                }
                if (!all_finite(agent.values)) {
                    aborted = true;
                    break;
                }
            }
        }
        record_point(result.env_steps_consumed);
        if (aborted) {
            result.diverged = true;
            result.final_return = -std::numeric_limits<double>::infinity();
            result.final_params = agent;
            return result;
        }
    }

    result.final_params = agent;
    result.final_return = result.return_curve.empty() ? 0.0 : result.return_curve.back().second;
    return result;
}

} // namespace meta
