#pragma once

#include <functional>
#include <string>
#include <vector>

#include "meta/mlp.hpp"
#include "meta/symdsl.hpp"

namespace meta {

// A synthetic sample carries both the raw DSL bindings (for symbolic
// candidates) and the featurized network input (for black-box teachers and
// students).
struct SynthSample {
    dsl::Bindings bindings;
    std::vector<double> net_input;
};

struct SyntheticInputSpec {
    enum class Kind { Drift, Optimizer };
    Kind kind = Kind::Drift;
    double layer_width = 64.0; // dormancy upper bound for optimizer inputs
};

std::vector<SynthSample> generate_synthetic_inputs(const SyntheticInputSpec& spec, int n,
                                                   RngStream& rng);

// Teacher evaluated on the featurized input.
using TeacherFn = std::function<double(const std::vector<double>&)>;

struct DistillConfig {
    MlpSpec student_spec;
    bool student_bias = false;
    std::vector<double> lr_sweep = {0.1, 0.02, 0.001};
    int n_regression_steps = 2000;
    int eval_every = 500;
    int regression_batch = 128;
    int rl_eval_seeds = 4;

    void validate() const;
};

struct SelectionEntry {
    int arm = 0;          // index into lr_sweep
    int step = 0;         // regression step of the checkpoint
    double reg_loss = 0.0;
    double rl_score = 0.0;
    bool abandoned = false;
};

struct DistillResult {
    MlpParams student;
    std::vector<SelectionEntry> selection_log;
    int selected_arm = -1;
    int selected_step = -1;
};

// L2 regression of the student onto the teacher over fresh synthetic batches,
// evaluating RL performance every eval_every steps; returns the checkpoint
// with the highest RL score across the whole sweep (ties -> earliest).
using RlEvalFn = std::function<double(const MlpParams&)>;

DistillResult distill_blackbox(const TeacherFn& teacher, const SyntheticInputSpec& inputs,
                               const DistillConfig& config, const RlEvalFn& rl_eval,
                               RngStream& rng);

// Same widths with every hidden width halved (rounded up).
MlpSpec halve_hidden_widths(const MlpSpec& spec);

struct SymDistillConfig {
    int max_size = 40;
    int n_populations = 2;
    int population_size = 64;
    int iterations_per_round = 10;
    int rounds = 40;
    int batch_size = 5000;
    double constant_opt_rate = 0.001;
    double mutation_rate = 0.7; // crossover rate = 1 - mutation_rate
    int tournament_size = 5;

    void validate() const;
};

struct SymRoundEntry {
    int round = 0;
    double champion_mse = 0.0;
    double rl_score = 0.0;
    std::string champion_text;
};

struct SymDistillResult {
    dsl::ExprPtr best;
    double best_mse = 0.0;
    std::vector<SymRoundEntry> history;
};

using ExprEvalFn = std::function<double(const dsl::ExprPtr&)>;

// GP over one stationary dataset; per round: iterations_per_round generations,
// constant optimization of the round champion, one RL evaluation for the log.
// Final answer is the lowest-MSE expression seen anywhere.
SymDistillResult distill_symbolic(const TeacherFn& teacher, const SyntheticInputSpec& inputs,
                                  const SymDistillConfig& config, const dsl::Signature& sig,
                                  const ExprEvalFn& rl_eval, RngStream& rng);

// Mean squared error of an expression against targets over a dataset.
double expr_mse(const dsl::ExprPtr& e, const std::vector<SynthSample>& data,
                const std::vector<double>& targets);

} // namespace meta
