#pragma once

#include <array>
#include <string>
#include <variant>

#include "meta/mlp.hpp"
#include "meta/symdsl.hpp"

namespace meta {

// LPO input features: [(1-r), (1-r)^2, (1-r)A, (1-r)^2 A, log r, (log r)A, (log r)^2 A]
std::array<double, 7> lpo_featurize(double r, double advantage);
// d(feature_i)/dr, for the analytic drift gradient.
std::array<double, 7> lpo_featurize_dr(double r, double advantage);

struct PpoClipDrift {
    double eps = 0.2;
};

struct BlackboxDrift {
    MlpParams params; // bias-free, relu output
};

struct SymbolicDrift {
    dsl::ExprPtr expr; // over {r, A, eps}
    double eps = 0.2;
    mutable bool violation_seen = false; // raw value < -1e-9 observed
};

struct DriftFunction {
    std::variant<PpoClipDrift, BlackboxDrift, SymbolicDrift> variant;

    static DriftFunction ppo_clip(double eps);
    static DriftFunction blackbox(MlpParams params);
    static DriftFunction symbolic(dsl::ExprPtr expr, double eps);
};

double drift_eval(const DriftFunction& d, double r, double advantage);

// dD/dr: analytic for ppo_clip and blackbox, central finite differences for symbolic.
double drift_grad_r(const DriftFunction& d, double r, double advantage);

// Regress a bias-free relu net onto the PPO drift over sampled (r, A) until
// held-out MSE < mse_target (initialization near PPO).
MlpParams init_lpo_near_ppo(const MlpSpec& spec, double eps, RngStream& rng,
                            double mse_target = 1e-4, int max_iters = 200000);

// Tagged-container serialization; blackbox params go to a sibling checkpoint file.
void save_drift(const DriftFunction& d, const std::string& path);
DriftFunction load_drift(const std::string& path);

} // namespace meta
