#include "meta/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "meta/drift.hpp"
#include "meta/optimizer.hpp"

namespace meta {

void DistillConfig::validate() const {
    if (lr_sweep.empty()) throw std::invalid_argument("DistillConfig: empty lr sweep");
    if (n_regression_steps < 1 || eval_every < 1 || regression_batch < 1)
        throw std::invalid_argument("DistillConfig: counts must be >= 1");
    if (n_regression_steps % eval_every != 0)
        throw std::invalid_argument("DistillConfig: eval_every must divide n_regression_steps");
}

void SymDistillConfig::validate() const {
    if (max_size < 1 || n_populations < 1 || population_size < 2 || iterations_per_round < 1 ||
        rounds < 1 || batch_size < 1 || tournament_size < 1)
        throw std::invalid_argument("SymDistillConfig: counts must be positive");
    if (mutation_rate < 0.0 || mutation_rate > 1.0)
        throw std::invalid_argument("SymDistillConfig: mutation_rate in [0,1]");
}

std::vector<SynthSample> generate_synthetic_inputs(const SyntheticInputSpec& spec, int n,
                                                   RngStream& rng) {
    std::vector<SynthSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        SynthSample s;
        if (spec.kind == SyntheticInputSpec::Kind::Drift) {
            const double r = std::exp(rng.normal(0.0, 0.3));
            const double a = rng.normal(0.0, 1.0);
            s.bindings = {{"r", r}, {"A", a}, {"eps", 0.2}};
            auto feats = lpo_featurize(r, a);
            s.net_input.assign(feats.begin(), feats.end());
        } else {
            // raw magnitudes log-uniform in [1e-6, 1], random sign
            auto log_uniform_signed = [&]() {
                const double mag = std::exp(rng.uniform(std::log(1e-6), 0.0));
                return rng.uniform() < 0.5 ? -mag : mag;
            };
            const double p = rng.normal(0.0, 0.5);
            const double g = log_uniform_signed();
            std::array<double, 6> mom;
            for (auto& m : mom) m = log_uniform_signed();
            const double t_p = rng.uniform();
            const double b_p = rng.uniform();
            const double l_p = rng.uniform();
            double dorm = std::fabs(rng.normal(0.0, 1.0)) * spec.layer_width / 2.0;
            dorm = std::min(dorm, spec.layer_width);
            const double rand_v = rng.normal();
            s.bindings = {{"p", p},       {"g", g},       {"m_0_1", mom[0]},
                          {"m_0_5", mom[1]}, {"m_0_9", mom[2]}, {"m_0_99", mom[3]},
                          {"m_0_999", mom[4]}, {"m_0_9999", mom[5]}, {"t_p", t_p},
                          {"b_p", b_p},   {"l_p", l_p},   {"dorm", dorm},
                          {"rand", rand_v}, {"lr", 1e-3}, {"iteration", 1.0}};
            auto feats = open_featurize(p, g, mom, t_p, b_p, dorm, l_p);
            s.net_input.assign(feats.begin(), feats.end());
        }
        out.push_back(std::move(s));
    }
    return out;
}

MlpSpec halve_hidden_widths(const MlpSpec& spec) {
    MlpSpec out = spec;
    for (std::size_t i = 1; i + 1 < out.layer_widths.size(); ++i)
        out.layer_widths[i] = (out.layer_widths[i] + 1) / 2;
    return out;
}

namespace {

// Student forward truncating the sample input to the student's width, so a
// no-features student can learn from open-style samples.
std::vector<double> student_input(const MlpParams& student, const SynthSample& s) {
    const std::size_t w = static_cast<std::size_t>(student.spec.layer_widths.front());
    if (s.net_input.size() == w) return s.net_input;
    if (s.net_input.size() > w)
        return std::vector<double>(s.net_input.begin(), s.net_input.begin() + w);
    throw std::invalid_argument("distill: sample narrower than student input");
}

} // namespace

DistillResult distill_blackbox(const TeacherFn& teacher, const SyntheticInputSpec& inputs,
                               const DistillConfig& config, const RlEvalFn& rl_eval,
                               RngStream& rng) {
    config.validate();
    DistillResult result;
    double best_score = -std::numeric_limits<double>::infinity();

    RngStream init_rng = rng.substream(11);
    for (int arm = 0; arm < static_cast<int>(config.lr_sweep.size()); ++arm) {
        const double lr = config.lr_sweep[arm];
        RngStream arm_init = init_rng.substream(arm);
        MlpParams student = init_mlp(config.student_spec, config.student_bias, arm_init, 1.0);
        RngStream data_rng = rng.substream(100 + arm);

        // Adam state for the regression inner loop
        std::vector<double> m(student.values.size(), 0.0), v(student.values.size(), 0.0);
        const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

        double initial_loss = -1.0;
        bool abandoned = false;

        auto evaluate_checkpoint = [&](int step, double reg_loss) {
            SelectionEntry entry;
            entry.arm = arm;
            entry.step = step;
            entry.reg_loss = reg_loss;
            entry.rl_score = rl_eval(student);
            result.selection_log.push_back(entry);
            if (entry.rl_score > best_score) {
                best_score = entry.rl_score;
                result.student = student;
                result.selected_arm = arm;
                result.selected_step = step;
            }
        };

        // step-0 checkpoint is selectable
        {
            auto batch = generate_synthetic_inputs(inputs, config.regression_batch, data_rng);
            double loss = 0.0;
            for (const auto& s : batch) {
                const double y = mlp_forward(student, student_input(student, s))[0];
                const double t = teacher(s.net_input);
                loss += (y - t) * (y - t);
            }
            loss /= batch.size();
            initial_loss = loss;
            evaluate_checkpoint(0, loss);
        }

        std::vector<double> grads(student.values.size());
        for (int step = 1; step <= config.n_regression_steps && !abandoned; ++step) {
            auto batch = generate_synthetic_inputs(inputs, config.regression_batch, data_rng);
            std::fill(grads.begin(), grads.end(), 0.0);
            double loss = 0.0;
            for (const auto& s : batch) {
                MlpCache cache;
                const std::vector<double> in = student_input(student, s);
                const double y = mlp_forward(student, in, &cache)[0];
                const double t = teacher(s.net_input);
                loss += (y - t) * (y - t);
                std::vector<double> pg, ig;
                mlp_backward(student, cache,
                             {2.0 * (y - t) / static_cast<double>(batch.size())}, pg, ig);
                for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += pg[i];
            }
            loss /= batch.size();
            if (initial_loss > 0.0 && loss > 10.0 * initial_loss) {
                SelectionEntry entry;
                entry.arm = arm;
                entry.step = step;
                entry.reg_loss = loss;
                entry.abandoned = true;
                result.selection_log.push_back(entry);
                abandoned = true;
                break;
            }
            for (std::size_t i = 0; i < student.values.size(); ++i) {
                m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grads[i] * grads[i];
                const double mh = m[i] / (1.0 - std::pow(b1, step));
                const double vh = v[i] / (1.0 - std::pow(b2, step));
                student.values[i] -= lr * mh / (std::sqrt(vh) + adam_eps);
            }
            if (step % config.eval_every == 0) evaluate_checkpoint(step, loss);
        }
    }
    if (result.selected_arm < 0)
        throw std::runtime_error("distill_blackbox: no checkpoint was selectable");
    return result;
}

double expr_mse(const dsl::ExprPtr& e, const std::vector<SynthSample>& data,
                const std::vector<double>& targets) {
    double mse = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double y = dsl::eval_expr(e, data[i].bindings);
        const double d = y - targets[i];
        mse += d * d;
    }
    return mse / data.size();
}

namespace {

dsl::ExprPtr optimize_constants(const dsl::ExprPtr& e, const std::vector<SynthSample>& data,
                                const std::vector<double>& targets, double rate) {
    std::vector<double> consts = dsl::collect_constants(e);
    if (consts.empty()) return e;
    dsl::ExprPtr best = e;
    double best_mse = expr_mse(e, data, targets);
    for (int pass = 0; pass < 25; ++pass) {
        bool improved = false;
        for (std::size_t i = 0; i < consts.size(); ++i) {
            for (double scale : {100.0, 10.0, 1.0, 0.1, 0.01, 0.001}) {
                const double delta = rate * scale * (1.0 + std::fabs(consts[i]));
                for (double dir : {1.0, -1.0}) {
                    std::vector<double> trial = consts;
                    trial[i] += dir * delta;
                    dsl::ExprPtr cand = dsl::replace_constants(e, trial);
                    const double mse = expr_mse(cand, data, targets);
                    if (mse < best_mse) {
                        best_mse = mse;
                        best = cand;
                        consts = trial;
                        improved = true;
                    }
                }
            }
        }
        if (!improved) break;
    }
    return best;
}

} // namespace

SymDistillResult distill_symbolic(const TeacherFn& teacher, const SyntheticInputSpec& inputs,
                                  const SymDistillConfig& config, const dsl::Signature& sig,
                                  const ExprEvalFn& rl_eval, RngStream& rng) {
    config.validate();
    // one stationary dataset for the whole search
    RngStream data_rng = rng.substream(1);
    std::vector<SynthSample> data = generate_synthetic_inputs(inputs, config.batch_size, data_rng);
    std::vector<double> targets(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) targets[i] = teacher(data[i].net_input);

    struct Member {
        dsl::ExprPtr expr;
        double mse = 0.0;
    };
    auto score = [&](const dsl::ExprPtr& e) { return expr_mse(e, data, targets); };

    RngStream gp_rng = rng.substream(2);
    std::vector<std::vector<Member>> populations(config.n_populations);
    for (auto& pop : populations) {
        pop.resize(config.population_size);
        for (auto& m : pop) {
            m.expr = dsl::random_tree(sig, gp_rng, 3);
            m.mse = score(m.expr);
        }
    }

    SymDistillResult result;
    result.best_mse = std::numeric_limits<double>::infinity();
    auto consider = [&](const Member& m) {
        if (m.mse < result.best_mse) {
            result.best_mse = m.mse;
            result.best = m.expr;
        }
    };
    for (const auto& pop : populations)
        for (const auto& m : pop) consider(m);

    auto tournament = [&](const std::vector<Member>& pop) -> const Member& {
        const Member* best = &pop[gp_rng.uniform_int(pop.size())];
        for (int i = 1; i < config.tournament_size; ++i) {
            const Member& cand = pop[gp_rng.uniform_int(pop.size())];
            if (cand.mse < best->mse) best = &cand;
        }
        return *best;
    };

    for (int round = 0; round < config.rounds; ++round) {
        for (auto& pop : populations) {
            for (int gen = 0; gen < config.iterations_per_round; ++gen) {
                // elitism: keep the population's best member
                std::size_t elite = 0;
                for (std::size_t i = 1; i < pop.size(); ++i)
                    if (pop[i].mse < pop[elite].mse) elite = i;
                std::vector<Member> next;
                next.reserve(pop.size());
                next.push_back(pop[elite]);
                while (next.size() < pop.size()) {
                    Member child;
                    if (gp_rng.uniform() < config.mutation_rate) {
                        child.expr = dsl::mutate(tournament(pop).expr, sig, gp_rng, config.max_size);
                    } else {
                        child.expr = dsl::crossover(tournament(pop).expr, tournament(pop).expr,
                                                    gp_rng, config.max_size);
                    }
                    child.mse = score(child.expr);
                    consider(child);
                    next.push_back(std::move(child));
                }
                pop = std::move(next);
            }
        }

        // constant optimization on the round champion, then warm restart
        Member champion{result.best, result.best_mse};
        Member tuned;
        tuned.expr = optimize_constants(champion.expr, data, targets, config.constant_opt_rate);
        tuned.mse = score(tuned.expr);
        consider(tuned);

        // reinsert the tuned champion over the worst member of population 0
        auto& pop0 = populations[0];
        std::size_t worst = 0;
        for (std::size_t i = 1; i < pop0.size(); ++i)
            if (pop0[i].mse > pop0[worst].mse) worst = i;
        pop0[worst] = Member{result.best, result.best_mse};

        SymRoundEntry entry;
        entry.round = round;
        entry.champion_mse = result.best_mse;
        entry.rl_score = rl_eval(result.best);
        entry.champion_text = dsl::print_expr(result.best);
        result.history.push_back(std::move(entry));
    }
    return result;
}

} // namespace meta
