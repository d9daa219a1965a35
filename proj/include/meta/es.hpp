#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "meta/rng.hpp"

namespace meta {

struct EsConfig {
    double learning_rate = 3e-2;
    double lr_decay = 0.999;
    double sigma_init = 3e-2;
    double sigma_decay = 0.999;
    int population_size = 64;     // must be even (antithetic pairs)
    int n_generations = 100;
    int fitness_seeds_per_member = 2;
    int n_workers = 1;            // must not affect results

    void validate() const;
};

struct EsState {
    std::vector<double> mean;
    double sigma = 3e-2;
    double lr = 3e-2;
    long generation = 0;
    std::vector<double> best_params;
    double best_fitness = -1e300;
};

using FitnessFn = std::function<double(const std::vector<double>&)>;

EsState es_init(const EsConfig& config, std::vector<double> initial_mean);

// One natural-gradient ascent step with antithetic sampling and centered-rank
// fitness shaping. -inf fitnesses are replaced by the generation's minimum
// finite fitness before shaping.
EsState es_step(const EsConfig& config, EsState state, const FitnessFn& fitness_fn,
                RngStream& rng, std::vector<double>* raw_fitnesses = nullptr);

struct EsHistoryPoint {
    long generation = 0;
    double mean_fitness = 0.0;
    double best_fitness = 0.0;
};

struct EsResult {
    std::vector<double> best_params;
    double best_fitness = 0.0;
    std::vector<EsHistoryPoint> history;
    EsState final_state;
};

EsResult meta_train_es(const EsConfig& config, std::vector<double> initial_mean,
                       const FitnessFn& fitness_fn, RngStream& rng);

// Centered ranks in [-0.5, 0.5]; ties get the average rank.
std::vector<double> centered_ranks(const std::vector<double>& fitnesses);

// Index-ordered parallel map used by ES and evaluation sweeps; the result is
// identical for any worker count.
std::vector<double> parallel_map(int n, int n_workers,
                                 const std::function<double(int)>& fn);

} // namespace meta
