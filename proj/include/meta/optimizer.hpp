#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "meta/mlp.hpp"
#include "meta/symdsl.hpp"

namespace meta {

inline constexpr std::array<double, 6> kMomentumCoeffs = {0.1, 0.5, 0.9, 0.99, 0.999, 0.9999};

// Per-parameter inputs that are not gradients or momenta.
struct UpdateContext {
    double t_p = 0.0;                 // training proportion, [0,1]
    double b_p = 0.0;                 // batch proportion, [0,1]
    std::vector<double> l_p;          // per-parameter layer proportion
    std::vector<double> dorm;         // per-parameter downstream-neuron dormancy
    std::vector<double> rand;         // per-parameter standard normal draw
};

struct OptimState {
    // momenta[k][i]: coefficient kMomentumCoeffs[k], parameter i
    std::array<std::vector<double>, 6> momenta;
    std::vector<double> adam_m;       // standard-convention first moment (Adam only)
    std::vector<double> adam_v;       // second moment
    long iteration = 0;

    void reset(std::size_t n_params);
};

enum class FeatureSet { NoFeatures, OpenFf };

struct SgdRule { double lr = 1e-2; };
struct AdamRule { double lr = 1e-3; double beta1 = 0.9; double beta2 = 0.999; double eps = 1e-8; };
struct LearnedBlackboxRule {
    MlpParams params;
    FeatureSet feature_set = FeatureSet::OpenFf;
    double output_scale = 1e-3;
    double noise_scale = 1e-3;
};
struct SymbolicRule {
    dsl::ExprPtr expr;  // over the optimizer signature; evaluates to the update
    double lr = 1e-2;
};

struct UpdateRule {
    std::variant<SgdRule, AdamRule, LearnedBlackboxRule, SymbolicRule> variant;
    OptimState state;

    static UpdateRule sgd(double lr);
    static UpdateRule adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8);
    static UpdateRule learned_blackbox(MlpParams params, FeatureSet fs,
                                       double output_scale = 1e-3, double noise_scale = 1e-3);
    static UpdateRule symbolic(dsl::ExprPtr expr, double lr);
};

// m_beta <- beta*g + (1-beta)*m_beta for every coefficient.
void update_momenta(OptimState& state, const std::vector<double>& grads);

// score_i = mean|h_i| / ((1/H) * sum_j mean|h_j|), 0/0 -> 0.
std::vector<double> dormancy_scores(const std::vector<std::vector<double>>& hidden_activations);

inline constexpr int kOpenFeatureCount = 19;
inline constexpr int kNoFeaturesCount = 15;

// [p, log|g|, sgn g, (log|m|, sgn m) x 6, t_p, b_p, dorm, l_p]
std::array<double, kOpenFeatureCount> open_featurize(double p, double g,
                                                     const std::array<double, 6>& momenta,
                                                     double t_p, double b_p, double dorm,
                                                     double l_p);

// Expected net input width for a feature set.
int feature_count(FeatureSet fs);

// Applies one update in place; rule state (momenta, adam moments, iteration)
// is advanced. Grads are assumed already norm-clipped by the caller.
void apply_update_rule(UpdateRule& rule, std::vector<double>& params,
                       const std::vector<double>& grads, const UpdateContext& ctx);

void save_update_rule(const UpdateRule& rule, const std::string& path);
UpdateRule load_update_rule(const std::string& path);

} // namespace meta
