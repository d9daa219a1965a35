#include "meta/runconfig.hpp"

#include <glob.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <thread>

#include "json.hpp"

#include "meta/evalreport.hpp"

namespace meta {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::map<std::string, AlgorithmKind> kAlgorithmNames = {
    {"lpo", AlgorithmKind::Lpo},
    {"open_ff", AlgorithmKind::OpenFf},
    {"no_features", AlgorithmKind::NoFeatures},
};

const std::map<std::string, MetaMethod> kMethodNames = {
    {"baseline", MetaMethod::Baseline},
    {"blackbox_es", MetaMethod::BlackboxEs},
    {"distill_same", MetaMethod::DistillSame},
    {"distill_smaller", MetaMethod::DistillSmaller},
    {"distill_symbolic", MetaMethod::DistillSymbolic},
    {"llm_proposal", MetaMethod::LlmProposal},
};

std::string method_name(MetaMethod m) {
    for (const auto& [k, v] : kMethodNames)
        if (v == m) return k;
    return "?";
}

template <typename T>
T field(const json& j, const std::string& path, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw std::runtime_error("config field " + (path.empty() ? key : path + "." + key) +
                                 ": " + e.what());
    }
}

} // namespace

EnvDistribution dist_by_name(const std::string& name) {
    if (name == "grid_id") return EnvDistribution::grid_id();
    if (name == "grid_ood") return EnvDistribution::grid_ood();
    if (name == "cartpole") return EnvDistribution::cartpole();
    throw std::runtime_error("unknown environment distribution: " + name);
}

void RunConfig::validate() const {
    ppo.validate();
    es.validate();
    distill.validate();
    sym_distill.validate();
    if (seeds.empty()) throw std::runtime_error("config field seeds: must be nonempty");
    if (test_dists.empty()) throw std::runtime_error("config field test_dists: must be nonempty");
    dist_by_name(train_dist);
    for (const auto& d : test_dists) dist_by_name(d);
    if (meta_method == MetaMethod::DistillSame || meta_method == MetaMethod::DistillSmaller ||
        meta_method == MetaMethod::DistillSymbolic) {
        if (teacher_artifact.empty())
            throw std::runtime_error("config field teacher_artifact: required for distillation");
        if (!fs::exists(teacher_artifact))
            throw std::runtime_error("config field teacher_artifact: no such file: " +
                                     teacher_artifact);
    }
    if (n_workers < 1) throw std::runtime_error("config field n_workers: must be >= 1");
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }

    RunConfig c;
    c.name = field<std::string>(j, "", "name", "experiment");
    const std::string alg = field<std::string>(j, "", "algorithm", "lpo");
    if (!kAlgorithmNames.count(alg))
        throw std::runtime_error("config field algorithm: unknown value " + alg);
    c.algorithm = kAlgorithmNames.at(alg);
    const std::string mm = field<std::string>(j, "", "meta_method", "baseline");
    if (!kMethodNames.count(mm))
        throw std::runtime_error("config field meta_method: unknown value " + mm);
    c.meta_method = kMethodNames.at(mm);
    c.train_dist = field<std::string>(j, "", "train_dist", c.train_dist);
    c.test_dists = field<std::vector<std::string>>(j, "", "test_dists", c.test_dists);
    c.base_opt_lr = field<double>(j, "", "base_opt_lr", c.base_opt_lr);
    c.drift_hidden = field<std::vector<int>>(j, "", "drift_hidden", c.drift_hidden);
    c.opt_hidden = field<std::vector<int>>(j, "", "opt_hidden", c.opt_hidden);
    c.seeds = field<std::vector<int>>(j, "", "seeds", c.seeds);
    c.meta_seed = field<std::uint64_t>(j, "", "meta_seed", c.meta_seed);
    c.teacher_artifact = field<std::string>(j, "", "teacher_artifact", c.teacher_artifact);
    c.output_dir = field<std::string>(j, "", "output_dir", c.output_dir);
    c.n_workers = field<int>(j, "", "n_workers", c.n_workers);

    if (j.contains("ppo")) {
        const json& p = j["ppo"];
        auto& o = c.ppo;
        o.n_envs = field<int>(p, "ppo", "n_envs", o.n_envs);
        o.n_steps = field<int>(p, "ppo", "n_steps", o.n_steps);
        o.total_timesteps = field<long>(p, "ppo", "total_timesteps", o.total_timesteps);
        o.n_minibatches = field<int>(p, "ppo", "n_minibatches", o.n_minibatches);
        o.n_epochs = field<int>(p, "ppo", "n_epochs", o.n_epochs);
        o.gamma = field<double>(p, "ppo", "gamma", o.gamma);
        o.gae_lambda = field<double>(p, "ppo", "gae_lambda", o.gae_lambda);
        o.clip_eps = field<double>(p, "ppo", "clip_eps", o.clip_eps);
        o.vf_coef = field<double>(p, "ppo", "vf_coef", o.vf_coef);
        o.ent_coef = field<double>(p, "ppo", "ent_coef", o.ent_coef);
        o.max_grad_norm = field<double>(p, "ppo", "max_grad_norm", o.max_grad_norm);
        o.hidden_widths = field<std::vector<int>>(p, "ppo", "hidden_widths", o.hidden_widths);
    }
    if (j.contains("es")) {
        const json& p = j["es"];
        auto& o = c.es;
        o.learning_rate = field<double>(p, "es", "learning_rate", o.learning_rate);
        o.lr_decay = field<double>(p, "es", "lr_decay", o.lr_decay);
        o.sigma_init = field<double>(p, "es", "sigma_init", o.sigma_init);
        o.sigma_decay = field<double>(p, "es", "sigma_decay", o.sigma_decay);
        o.population_size = field<int>(p, "es", "population_size", o.population_size);
        o.n_generations = field<int>(p, "es", "n_generations", o.n_generations);
        o.fitness_seeds_per_member =
            field<int>(p, "es", "fitness_seeds_per_member", o.fitness_seeds_per_member);
    }
    if (j.contains("distill")) {
        const json& p = j["distill"];
        auto& o = c.distill;
        o.lr_sweep = field<std::vector<double>>(p, "distill", "lr_sweep", o.lr_sweep);
        o.n_regression_steps =
            field<int>(p, "distill", "n_regression_steps", o.n_regression_steps);
        o.eval_every = field<int>(p, "distill", "eval_every", o.eval_every);
        o.regression_batch = field<int>(p, "distill", "regression_batch", o.regression_batch);
        o.rl_eval_seeds = field<int>(p, "distill", "rl_eval_seeds", o.rl_eval_seeds);
    }
    if (j.contains("sym_distill")) {
        const json& p = j["sym_distill"];
        auto& o = c.sym_distill;
        o.max_size = field<int>(p, "sym_distill", "max_size", o.max_size);
        o.n_populations = field<int>(p, "sym_distill", "n_populations", o.n_populations);
        o.population_size = field<int>(p, "sym_distill", "population_size", o.population_size);
        o.iterations_per_round =
            field<int>(p, "sym_distill", "iterations_per_round", o.iterations_per_round);
        o.rounds = field<int>(p, "sym_distill", "rounds", o.rounds);
        o.batch_size = field<int>(p, "sym_distill", "batch_size", o.batch_size);
        o.constant_opt_rate =
            field<double>(p, "sym_distill", "constant_opt_rate", o.constant_opt_rate);
        o.mutation_rate = field<double>(p, "sym_distill", "mutation_rate", o.mutation_rate);
        o.tournament_size = field<int>(p, "sym_distill", "tournament_size", o.tournament_size);
    }
    if (j.contains("llm")) {
        const json& p = j["llm"];
        auto& o = c.llm;
        o.mock_script = field<std::string>(p, "llm", "mock_script", o.mock_script);
        o.budget = field<int>(p, "llm", "budget", o.budget);
        o.rl_eval_seeds = field<int>(p, "llm", "rl_eval_seeds", o.rl_eval_seeds);
        o.warm_start_code = field<std::string>(p, "llm", "warm_start_code", o.warm_start_code);
        o.endpoint.base_url = field<std::string>(p, "llm", "base_url", o.endpoint.base_url);
        o.endpoint.model = field<std::string>(p, "llm", "model", o.endpoint.model);
        o.endpoint.api_key_env = field<std::string>(p, "llm", "api_key_env", o.endpoint.api_key_env);
        o.endpoint.temperature = field<double>(p, "llm", "temperature", o.endpoint.temperature);
        o.endpoint.timeout_s = field<int>(p, "llm", "timeout_s", o.endpoint.timeout_s);
        o.endpoint.retries = field<int>(p, "llm", "retries", o.endpoint.retries);
    }
    c.validate();
    return c;
}

std::string config_hash(const RunConfig& c) {
    json j;
    j["name"] = c.name;
    j["algorithm"] = static_cast<int>(c.algorithm);
    j["meta_method"] = static_cast<int>(c.meta_method);
    j["train_dist"] = c.train_dist;
    j["test_dists"] = c.test_dists;
    j["ppo"] = {c.ppo.n_envs,       c.ppo.n_steps,  c.ppo.total_timesteps, c.ppo.n_minibatches,
                c.ppo.n_epochs,     c.ppo.gamma,    c.ppo.gae_lambda,      c.ppo.clip_eps,
                c.ppo.vf_coef,      c.ppo.ent_coef, c.ppo.max_grad_norm,   c.ppo.hidden_widths};
    j["base_opt_lr"] = c.base_opt_lr;
    j["drift_hidden"] = c.drift_hidden;
    j["opt_hidden"] = c.opt_hidden;
    j["es"] = {c.es.learning_rate,   c.es.lr_decay,      c.es.sigma_init,
               c.es.sigma_decay,     c.es.population_size, c.es.n_generations,
               c.es.fitness_seeds_per_member};
    j["seeds"] = c.seeds;
    j["meta_seed"] = c.meta_seed;
    j["teacher_artifact"] = c.teacher_artifact;
    const std::string text = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

struct StageContext {
    RunConfig config;
    fs::path out;
    long env_steps_total = 0;
    double wall_total_s = 0.0;
    std::vector<std::string> artifacts;
};

struct TimedTrain {
    TrainResult result;
    double wall_s = 0.0;
};

TimedTrain timed_train(const PpoConfig& ppo, const TrainEnv& env, const DriftFunction& drift,
                       const UpdateRule& rule, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    TimedTrain out;
    out.result = train_agent(ppo, env, drift, rule, seed);
    out.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

std::uint64_t eval_seed(const std::string& dist_name, int seed) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : dist_name) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h ^ (0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(seed) + 1));
}

// Mean final return over k seeds; -inf if any run diverges.
double mean_return(const PpoConfig& ppo, const EnvDistribution& dist, const DriftFunction& drift,
                   const UpdateRule& rule, int k, std::uint64_t base_seed, long* steps = nullptr) {
    double total = 0.0;
    for (int s = 0; s < k; ++s) {
        TrainResult r = train_agent(ppo, dist, drift, rule,
                                    base_seed ^ (0x9e3779b97f4a7c15ull * (s + 1)));
        if (steps) *steps += r.env_steps_consumed;
        if (r.diverged) return -std::numeric_limits<double>::infinity();
        total += r.final_return;
    }
    return total / k;
}

MlpSpec drift_net_spec(const RunConfig& c) {
    MlpSpec spec;
    spec.layer_widths = {7};
    for (int w : c.drift_hidden) spec.layer_widths.push_back(w);
    spec.layer_widths.push_back(1);
    spec.hidden_activation = Activation::Relu;
    spec.output_activation = Activation::Relu;
    return spec;
}

MlpSpec opt_net_spec(const RunConfig& c) {
    MlpSpec spec;
    spec.layer_widths = {c.algorithm == AlgorithmKind::OpenFf ? kOpenFeatureCount
                                                              : kNoFeaturesCount};
    for (int w : c.opt_hidden) spec.layer_widths.push_back(w);
    spec.layer_widths.push_back(1);
    spec.hidden_activation = Activation::Relu;
    spec.output_activation = Activation::Identity;
    return spec;
}

FeatureSet feature_set(const RunConfig& c) {
    return c.algorithm == AlgorithmKind::OpenFf ? FeatureSet::OpenFf : FeatureSet::NoFeatures;
}

struct LearnedAlgorithm {
    DriftFunction drift = DriftFunction::ppo_clip(0.2);
    UpdateRule rule = UpdateRule::sgd(1e-2);
};

LearnedAlgorithm baseline_algorithm(const RunConfig& c) {
    LearnedAlgorithm alg;
    alg.drift = DriftFunction::ppo_clip(c.ppo.clip_eps);
    alg.rule = UpdateRule::sgd(c.base_opt_lr);
    return alg;
}

LearnedAlgorithm algorithm_from_drift(const RunConfig& c, DriftFunction drift) {
    LearnedAlgorithm alg;
    alg.drift = std::move(drift);
    alg.rule = UpdateRule::sgd(c.base_opt_lr);
    return alg;
}

LearnedAlgorithm algorithm_from_rule(const RunConfig& c, UpdateRule rule) {
    LearnedAlgorithm alg;
    alg.drift = DriftFunction::ppo_clip(c.ppo.clip_eps);
    alg.rule = std::move(rule);
    return alg;
}

void write_curve_csv(const std::vector<std::pair<long, double>>& curve, const fs::path& path) {
    std::ofstream os(path);
    os << "env_steps,mean_return\n";
    os.precision(17);
    for (const auto& [steps, ret] : curve) os << steps << "," << ret << "\n";
}

// Evaluation sweep over test distributions and seeds; records are written in a
// deterministic order, wall times go to a separate timing file.
void evaluate_and_record(StageContext& ctx, const LearnedAlgorithm& alg) {
    const RunConfig& c = ctx.config;
    struct Job {
        std::string dist_name;
        DistTag tag;
        int seed;
    };
    std::vector<Job> jobs;
    for (const auto& dn : c.test_dists) {
        const DistTag tag = dn == c.train_dist ? DistTag::InDist : DistTag::OutDist;
        for (int s : c.seeds) jobs.push_back({dn, tag, s});
    }
    std::vector<TimedTrain> results(jobs.size());
    const int workers = std::min<int>(c.n_workers, static_cast<int>(jobs.size()));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < jobs.size(); i += workers) {
                const Job& job = jobs[i];
                results[i] = timed_train(c.ppo, dist_by_name(job.dist_name), alg.drift, alg.rule,
                                         eval_seed(job.dist_name, job.seed));
            }
        });
    }
    for (auto& t : pool) t.join();

    std::vector<RunRecord> records, timing;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        RunRecord r;
        r.method = method_name(c.meta_method);
        r.env_id = jobs[i].dist_name;
        r.tag = jobs[i].tag;
        r.seed = jobs[i].seed;
        r.final_return = results[i].result.final_return;
        r.env_steps_consumed = results[i].result.env_steps_consumed;
        r.wall_time_s = 0.0; // kept out of the record file so reruns are bit-identical
        records.push_back(r);
        r.wall_time_s = results[i].wall_s;
        timing.push_back(r);
        ctx.env_steps_total += results[i].result.env_steps_consumed;
        ctx.wall_total_s += results[i].wall_s;
    }
    save_records_csv(records, (ctx.out / "records.csv").string());
    save_records_csv(timing, (ctx.out / "timing.csv").string());
    write_curve_csv(results[0].result.return_curve, ctx.out / "curve.csv");
    ctx.artifacts.push_back("records.csv");
    ctx.artifacts.push_back("curve.csv");
}

void write_manifest(const StageContext& ctx) {
    json j;
    j["name"] = ctx.config.name;
    j["config_hash"] = config_hash(ctx.config);
    j["meta_method"] = method_name(ctx.config.meta_method);
    j["meta_seed"] = ctx.config.meta_seed;
    j["seeds"] = ctx.config.seeds;
    j["env_steps_total"] = ctx.env_steps_total;
    j["wall_time_total_s"] = ctx.wall_total_s;
    j["artifacts"] = ctx.artifacts;
    std::ofstream os(ctx.out / "manifest.json");
    os << j.dump(2) << "\n";
}

DriftFunction drift_from_flat(const RunConfig& c, const std::vector<double>& theta) {
    MlpParams p;
    p.spec = drift_net_spec(c);
    p.bias_enabled = false;
    p.values = theta;
    return DriftFunction::blackbox(std::move(p));
}

UpdateRule rule_from_flat(const RunConfig& c, const std::vector<double>& theta) {
    MlpParams p;
    p.spec = opt_net_spec(c);
    p.bias_enabled = true;
    p.values = theta;
    return UpdateRule::learned_blackbox(std::move(p), feature_set(c));
}

void run_blackbox_es(StageContext& ctx) {
    const RunConfig& c = ctx.config;
    RngStream meta_rng(c.meta_seed, 1);
    const EnvDistribution train = dist_by_name(c.train_dist);
    EsConfig es = c.es;
    es.n_workers = c.n_workers;

    std::vector<double> initial;
    FitnessFn fitness;
    std::atomic<long> fitness_steps{0};
    if (c.algorithm == AlgorithmKind::Lpo) {
        RngStream init_rng = meta_rng.substream(1);
        initial = init_lpo_near_ppo(drift_net_spec(c), c.ppo.clip_eps, init_rng).values;
        fitness = [&](const std::vector<double>& theta) {
            LearnedAlgorithm alg = algorithm_from_drift(c, drift_from_flat(c, theta));
            long steps = 0;
            const double f = mean_return(c.ppo, train, alg.drift, alg.rule,
                                         es.fitness_seeds_per_member, 0xE5u, &steps);
            fitness_steps.fetch_add(steps, std::memory_order_relaxed);
            return f;
        };
    } else {
        RngStream init_rng = meta_rng.substream(1);
        initial = init_mlp(opt_net_spec(c), true, init_rng, 0.5).values;
        fitness = [&](const std::vector<double>& theta) {
            LearnedAlgorithm alg = algorithm_from_rule(c, rule_from_flat(c, theta));
            long steps = 0;
            const double f = mean_return(c.ppo, train, alg.drift, alg.rule,
                                         es.fitness_seeds_per_member, 0xE5u, &steps);
            fitness_steps.fetch_add(steps, std::memory_order_relaxed);
            return f;
        };
    }
    RngStream es_rng = meta_rng.substream(2);
    EsResult res = meta_train_es(es, std::move(initial), fitness, es_rng);
    ctx.env_steps_total += fitness_steps.load();

    std::ofstream hist(ctx.out / "es_history.csv");
    hist << "generation,mean_fitness,best_fitness\n";
    hist.precision(17);
    for (const auto& h : res.history)
        hist << h.generation << "," << h.mean_fitness << "," << h.best_fitness << "\n";
    ctx.artifacts.push_back("es_history.csv");

    LearnedAlgorithm best;
    if (c.algorithm == AlgorithmKind::Lpo) {
        best = algorithm_from_drift(c, drift_from_flat(c, res.best_params));
        save_drift(best.drift, (ctx.out / "drift.json").string());
        ctx.artifacts.push_back("drift.json");
    } else {
        best = algorithm_from_rule(c, rule_from_flat(c, res.best_params));
        save_update_rule(best.rule, (ctx.out / "rule.json").string());
        ctx.artifacts.push_back("rule.json");
    }
    evaluate_and_record(ctx, best);
}

void run_distill_blackbox(StageContext& ctx) {
    const RunConfig& c = ctx.config;
    RngStream meta_rng(c.meta_seed, 3);
    const EnvDistribution train = dist_by_name(c.train_dist);
    DistillConfig dc = c.distill;

    SyntheticInputSpec inputs;
    TeacherFn teacher;
    RlEvalFn rl_eval;
    long rl_eval_steps = 0;

    if (c.algorithm == AlgorithmKind::Lpo) {
        DriftFunction teacher_drift = load_drift(c.teacher_artifact);
        const auto* bb = std::get_if<BlackboxDrift>(&teacher_drift.variant);
        if (!bb) throw std::runtime_error("teacher_artifact is not a black-box drift");
        // regress on the pre-relu head so gradients exist everywhere
        MlpParams linear_head = bb->params;
        linear_head.spec.output_activation = Activation::Identity;
        teacher = [linear_head](const std::vector<double>& x) {
            return mlp_forward(linear_head, x)[0];
        };
        inputs.kind = SyntheticInputSpec::Kind::Drift;
        dc.student_spec = bb->params.spec;
        dc.student_spec.output_activation = Activation::Identity;
        dc.student_bias = false;
        if (c.meta_method == MetaMethod::DistillSmaller)
            dc.student_spec = halve_hidden_widths(dc.student_spec);
        rl_eval = [&, bb](const MlpParams& student) {
            MlpParams p = student;
            p.spec.output_activation = Activation::Relu;
            LearnedAlgorithm alg = algorithm_from_drift(c, DriftFunction::blackbox(std::move(p)));
            return mean_return(c.ppo, train, alg.drift, alg.rule, dc.rl_eval_seeds, 0xD1u,
                               &rl_eval_steps);
        };
    } else {
        UpdateRule teacher_rule = load_update_rule(c.teacher_artifact);
        const auto* bb = std::get_if<LearnedBlackboxRule>(&teacher_rule.variant);
        if (!bb) throw std::runtime_error("teacher_artifact is not a black-box update rule");
        MlpParams net = bb->params;
        const std::size_t in_w = static_cast<std::size_t>(net.spec.layer_widths.front());
        teacher = [net, in_w](const std::vector<double>& x) {
            return mlp_forward(net, std::vector<double>(x.begin(), x.begin() + in_w))[0];
        };
        inputs.kind = SyntheticInputSpec::Kind::Optimizer;
        inputs.layer_width = *std::max_element(c.ppo.hidden_widths.begin(),
                                               c.ppo.hidden_widths.end());
        dc.student_spec = net.spec;
        dc.student_bias = net.bias_enabled;
        if (c.meta_method == MetaMethod::DistillSmaller)
            dc.student_spec = halve_hidden_widths(dc.student_spec);
        const FeatureSet fs_kind = bb->feature_set;
        const double out_scale = bb->output_scale, noise_scale = bb->noise_scale;
        rl_eval = [&, fs_kind, out_scale, noise_scale](const MlpParams& student) {
            LearnedAlgorithm alg = algorithm_from_rule(
                c, UpdateRule::learned_blackbox(student, fs_kind, out_scale, noise_scale));
            return mean_return(c.ppo, train, alg.drift, alg.rule, dc.rl_eval_seeds, 0xD1u,
                               &rl_eval_steps);
        };
    }

    RngStream distill_rng = meta_rng.substream(1);
    DistillResult res = distill_blackbox(teacher, inputs, dc, rl_eval, distill_rng);
    ctx.env_steps_total += rl_eval_steps;

    std::ofstream log(ctx.out / "distill_log.csv");
    log << "arm,step,reg_loss,rl_score,abandoned\n";
    log.precision(17);
    for (const auto& e : res.selection_log)
        log << e.arm << "," << e.step << "," << e.reg_loss << "," << e.rl_score << ","
            << (e.abandoned ? 1 : 0) << "\n";
    ctx.artifacts.push_back("distill_log.csv");

    LearnedAlgorithm best;
    if (c.algorithm == AlgorithmKind::Lpo) {
        MlpParams p = res.student;
        p.spec.output_activation = Activation::Relu;
        best = algorithm_from_drift(c, DriftFunction::blackbox(std::move(p)));
        save_drift(best.drift, (ctx.out / "drift.json").string());
        ctx.artifacts.push_back("drift.json");
    } else {
        UpdateRule teacher_rule = load_update_rule(c.teacher_artifact);
        const auto& bb = std::get<LearnedBlackboxRule>(teacher_rule.variant);
        best = algorithm_from_rule(c, UpdateRule::learned_blackbox(res.student, bb.feature_set,
                                                                   bb.output_scale,
                                                                   bb.noise_scale));
        save_update_rule(best.rule, (ctx.out / "rule.json").string());
        ctx.artifacts.push_back("rule.json");
    }
    evaluate_and_record(ctx, best);
}

void run_distill_symbolic(StageContext& ctx) {
    const RunConfig& c = ctx.config;
    RngStream meta_rng(c.meta_seed, 4);
    const EnvDistribution train = dist_by_name(c.train_dist);
    SymDistillConfig sc = c.sym_distill;

    SyntheticInputSpec inputs;
    TeacherFn teacher;
    dsl::Signature sig;
    ExprEvalFn rl_eval;
    long rl_eval_steps = 0;

    if (c.algorithm == AlgorithmKind::Lpo) {
        DriftFunction teacher_drift = load_drift(c.teacher_artifact);
        teacher = [teacher_drift](const std::vector<double>& x) {
            // features are a function of (r, A); invert the first two entries
            const double r = 1.0 - x[0];
            const double a = x[0] == 0.0 ? x[2] : x[2] / x[0];
            return drift_eval(teacher_drift, r, a);
        };
        inputs.kind = SyntheticInputSpec::Kind::Drift;
        sig = dsl::Signature::drift();
        rl_eval = [&](const dsl::ExprPtr& e) {
            LearnedAlgorithm alg =
                algorithm_from_drift(c, DriftFunction::symbolic(e, c.ppo.clip_eps));
            return mean_return(c.ppo, train, alg.drift, alg.rule, c.distill.rl_eval_seeds, 0xD2u,
                               &rl_eval_steps);
        };
    } else {
        UpdateRule teacher_rule = load_update_rule(c.teacher_artifact);
        const auto* bb = std::get_if<LearnedBlackboxRule>(&teacher_rule.variant);
        if (!bb) throw std::runtime_error("teacher_artifact is not a black-box update rule");
        MlpParams net = bb->params;
        const std::size_t in_w = static_cast<std::size_t>(net.spec.layer_widths.front());
        const double out_scale = bb->output_scale;
        teacher = [net, in_w, out_scale](const std::vector<double>& x) {
            return out_scale * mlp_forward(net, std::vector<double>(x.begin(), x.begin() + in_w))[0];
        };
        inputs.kind = SyntheticInputSpec::Kind::Optimizer;
        inputs.layer_width = *std::max_element(c.ppo.hidden_widths.begin(),
                                               c.ppo.hidden_widths.end());
        sig = dsl::Signature::optimizer();
        rl_eval = [&](const dsl::ExprPtr& e) {
            LearnedAlgorithm alg =
                algorithm_from_rule(c, UpdateRule::symbolic(e, c.base_opt_lr));
            return mean_return(c.ppo, train, alg.drift, alg.rule, c.distill.rl_eval_seeds, 0xD2u,
                               &rl_eval_steps);
        };
    }

    RngStream gp_rng = meta_rng.substream(1);
    SymDistillResult res = distill_symbolic(teacher, inputs, sc, sig, rl_eval, gp_rng);
    ctx.env_steps_total += rl_eval_steps;

    std::ofstream log(ctx.out / "symbolic_log.csv");
    log << "round,champion_mse,rl_score,champion\n";
    log.precision(17);
    for (const auto& e : res.history)
        log << e.round << "," << e.champion_mse << "," << e.rl_score << ",\"" << e.champion_text
            << "\"\n";
    ctx.artifacts.push_back("symbolic_log.csv");

    LearnedAlgorithm best;
    if (c.algorithm == AlgorithmKind::Lpo) {
        best = algorithm_from_drift(c, DriftFunction::symbolic(res.best, c.ppo.clip_eps));
        save_drift(best.drift, (ctx.out / "drift.json").string());
        ctx.artifacts.push_back("drift.json");
    } else {
        best = algorithm_from_rule(c, UpdateRule::symbolic(res.best, c.base_opt_lr));
        save_update_rule(best.rule, (ctx.out / "rule.json").string());
        ctx.artifacts.push_back("rule.json");
    }
    evaluate_and_record(ctx, best);
}

void run_llm_proposal(StageContext& ctx) {
    const RunConfig& c = ctx.config;
    RngStream meta_rng(c.meta_seed, 5);
    const EnvDistribution train = dist_by_name(c.train_dist);
    const bool is_drift = c.algorithm == AlgorithmKind::Lpo;
    const dsl::Signature sig = is_drift ? dsl::Signature::drift() : dsl::Signature::optimizer();

    long fitness_steps = 0;
    ProposalFitnessFn fitness = [&](const dsl::ExprPtr& e) {
        LearnedAlgorithm alg =
            is_drift ? algorithm_from_drift(c, DriftFunction::symbolic(e, c.ppo.clip_eps))
                     : algorithm_from_rule(c, UpdateRule::symbolic(e, c.base_opt_lr));
        return mean_return(c.ppo, train, alg.drift, alg.rule, c.llm.rl_eval_seeds, 0xF1u,
                           &fitness_steps);
    };

    ProposalRecord warm;
    warm.name = is_drift ? "ppo_clip" : "sgd";
    warm.thought = "Handcrafted warm start.";
    warm.code = !c.llm.warm_start_code.empty()
                    ? c.llm.warm_start_code
                    : (is_drift ? "relu((r - clip(r, 1 - eps, 1 + eps)) * A)" : "lr * g");
    warm.parsed = dsl::parse(warm.code, sig);
    warm.fitness = fitness(warm.parsed);
    warm.has_fitness = true;

    std::unique_ptr<LlmClient> client;
    if (!c.llm.mock_script.empty())
        client = std::make_unique<MockLlmClient>(MockLlmClient::from_file(c.llm.mock_script));
    else
        client = std::make_unique<HttpLlmClient>(c.llm.endpoint);

    RngStream loop_rng = meta_rng.substream(1);
    ProposeResult res = propose_loop(*client, is_drift ? ProposalKind::Drift
                                                       : ProposalKind::OptimizerFf,
                                     sig, warm, fitness, c.llm.budget, loop_rng);
    ctx.env_steps_total += fitness_steps;
    save_transcript(res.conversation, (ctx.out / "transcript.json").string());
    ctx.artifacts.push_back("transcript.json");

    LearnedAlgorithm best;
    if (is_drift) {
        best = algorithm_from_drift(c, DriftFunction::symbolic(res.best.parsed, c.ppo.clip_eps));
        save_drift(best.drift, (ctx.out / "drift.json").string());
        ctx.artifacts.push_back("drift.json");
    } else {
        best = algorithm_from_rule(c, UpdateRule::symbolic(res.best.parsed, c.base_opt_lr));
        save_update_rule(best.rule, (ctx.out / "rule.json").string());
        ctx.artifacts.push_back("rule.json");
    }
    evaluate_and_record(ctx, best);
}

} // namespace

int cmd_run(const std::string& config_path) {
    StageContext ctx;
    try {
        ctx.config = load_run_config(config_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    try {
        ctx.out = ctx.config.output_dir;
        fs::create_directories(ctx.out);
        switch (ctx.config.meta_method) {
            case MetaMethod::Baseline:
                evaluate_and_record(ctx, baseline_algorithm(ctx.config));
                break;
            case MetaMethod::BlackboxEs: run_blackbox_es(ctx); break;
            case MetaMethod::DistillSame:
            case MetaMethod::DistillSmaller: run_distill_blackbox(ctx); break;
            case MetaMethod::DistillSymbolic: run_distill_symbolic(ctx); break;
            case MetaMethod::LlmProposal: run_llm_proposal(ctx); break;
        }
        write_manifest(ctx);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

int cmd_report(const std::string& records_glob, const std::string& baseline_method,
               const std::string& out_path) {
    glob_t g{};
    const int rc = ::glob(records_glob.c_str(), 0, nullptr, &g);
    if (rc != 0 || g.gl_pathc == 0) {
        ::globfree(&g);
        std::cerr << "error: no record files match " << records_glob << "\n";
        return 1;
    }
    std::vector<RunRecord> records;
    try {
        for (std::size_t i = 0; i < g.gl_pathc; ++i) {
            auto part = load_records_csv(g.gl_pathv[i]);
            records.insert(records.end(), part.begin(), part.end());
        }
        ::globfree(&g);
        RngStream rng(0, 0xB007);
        auto report = aggregate_report(records, baseline_method, 2000, rng);
        std::ofstream os(out_path);
        if (!os) throw std::runtime_error("cannot open " + out_path);
        os << "method,dist_tag,iqm,ci_lo,ci_hi,n_records,samples,train_wall_s\n";
        os.precision(17);
        for (const auto& a : report) {
            os << a.method << "," << (a.tag == DistTag::InDist ? "in_dist" : "out_dist") << ","
               << a.iqm << "," << a.ci_lo << "," << a.ci_hi << "," << a.n_records << ","
               << a.total_samples << "," << a.train_wall_s << "\n";
            std::cout << a.method << " " << (a.tag == DistTag::InDist ? "in_dist" : "out_dist")
                      << " iqm=" << a.iqm << " ci=[" << a.ci_lo << ", " << a.ci_hi << "]\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

int cmd_surface(const std::string& drift_artifact, const std::string& out_csv) {
    try {
        DriftFunction d = load_drift(drift_artifact);
        std::vector<double> r_grid, a_grid = {-2.0, -1.0, -0.5, 0.5, 1.0, 2.0};
        for (int i = 0; i <= 300; ++i) r_grid.push_back(0.5 + 1.5 * i / 300.0);
        save_surface_csv(drift_surface(d, r_grid, a_grid), out_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace meta
