#include "meta/es.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "meta/mlp.hpp"

namespace meta {

void EsConfig::validate() const {
    if (population_size < 2 || population_size % 2 != 0)
        throw std::invalid_argument("EsConfig: population_size must be even and >= 2");
    if (sigma_init <= 0.0 || learning_rate <= 0.0)
        throw std::invalid_argument("EsConfig: sigma and lr must be > 0");
    if (n_generations < 0 || fitness_seeds_per_member < 1 || n_workers < 1)
        throw std::invalid_argument("EsConfig: bad counts");
}

std::vector<double> centered_ranks(const std::vector<double>& fitnesses) {
    const int n = static_cast<int>(fitnesses.size());
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return fitnesses[a] < fitnesses[b]; });
    std::vector<double> ranks(n, 0.0);
    int i = 0;
    while (i < n) {
        int j = i;
        while (j + 1 < n && fitnesses[idx[j + 1]] == fitnesses[idx[i]]) ++j;
        const double avg = 0.5 * (i + j); // average rank of the tie group
        for (int k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    std::vector<double> shaped(n);
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (int k = 0; k < n; ++k) shaped[k] = ranks[k] / denom - 0.5;
    return shaped;
}

std::vector<double> parallel_map(int n, int n_workers,
                                 const std::function<double(int)>& fn) {
    std::vector<double> out(n);
    if (n_workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::vector<std::thread> workers;
    const int w = std::min(n_workers, n);
    for (int t = 0; t < w; ++t)
        workers.emplace_back([&, t]() {
            for (int i = t; i < n; i += w) out[i] = fn(i);
        });
    for (auto& th : workers) th.join();
    return out;
}

EsState es_init(const EsConfig& config, std::vector<double> initial_mean) {
    config.validate();
    EsState s;
    s.mean = std::move(initial_mean);
    s.sigma = config.sigma_init;
    s.lr = config.learning_rate;
    s.best_params = s.mean;
    return s;
}

EsState es_step(const EsConfig& config, EsState state, const FitnessFn& fitness_fn,
                RngStream& rng, std::vector<double>* raw_fitnesses) {
    const int N = config.population_size;
    const int half = N / 2;
    const std::size_t dim = state.mean.size();

    // antithetic perturbations: member 2k uses +eps_k, member 2k+1 uses -eps_k
    std::vector<std::vector<double>> eps(half, std::vector<double>(dim));
    RngStream pert_rng = rng.substream(static_cast<std::uint64_t>(state.generation) * 2 + 1);
    for (int k = 0; k < half; ++k)
        for (std::size_t d = 0; d < dim; ++d) eps[k][d] = pert_rng.normal();

    std::vector<double> fitnesses = parallel_map(N, config.n_workers, [&](int i) {
        const int k = i / 2;
        const double sign = i % 2 == 0 ? 1.0 : -1.0;
        std::vector<double> theta(dim);
        for (std::size_t d = 0; d < dim; ++d)
            theta[d] = state.mean[d] + sign * state.sigma * eps[k][d];
        return fitness_fn(theta);
    });

    if (raw_fitnesses) *raw_fitnesses = fitnesses;

    // replace -inf sentinels with the generation's minimum finite fitness
    double min_finite = std::numeric_limits<double>::infinity();
    for (double f : fitnesses)
        if (std::isfinite(f)) min_finite = std::min(min_finite, f);
    if (!std::isfinite(min_finite)) min_finite = 0.0; // every member diverged
    for (double& f : fitnesses)
        if (!std::isfinite(f)) f = min_finite;

    for (int i = 0; i < N; ++i) {
        if (fitnesses[i] > state.best_fitness) {
            const int k = i / 2;
            const double sign = i % 2 == 0 ? 1.0 : -1.0;
            state.best_fitness = fitnesses[i];
            state.best_params.resize(dim);
            for (std::size_t d = 0; d < dim; ++d)
                state.best_params[d] = state.mean[d] + sign * state.sigma * eps[k][d];
        }
    }

    std::vector<double> shaped = centered_ranks(fitnesses);

    // g = (1/(N*sigma)) * sum_i eps_i * f~_i ; index-ordered reduction
    std::vector<double> grad(dim, 0.0);
    for (int i = 0; i < N; ++i) {
        const int k = i / 2;
        const double sign = i % 2 == 0 ? 1.0 : -1.0;
        const double w = shaped[i] * sign;
        for (std::size_t d = 0; d < dim; ++d) grad[d] += w * eps[k][d];
    }
    const double scale = state.lr / (N * state.sigma);
    for (std::size_t d = 0; d < dim; ++d) state.mean[d] += scale * grad[d];
    if (!all_finite(state.mean))
        throw std::runtime_error("es_step: non-finite mean after update");

    state.lr *= config.lr_decay;
    state.sigma *= config.sigma_decay;
    state.generation += 1;
    return state;
}

EsResult meta_train_es(const EsConfig& config, std::vector<double> initial_mean,
                       const FitnessFn& fitness_fn, RngStream& rng) {
    EsState state = es_init(config, std::move(initial_mean));
    EsResult result;
    for (int g = 0; g < config.n_generations; ++g) {
        std::vector<double> raw;
        EsState next = es_step(config, state, fitness_fn, rng, &raw);
        double mean_fit = 0.0;
        int finite = 0;
        for (double f : raw)
            if (std::isfinite(f)) { mean_fit += f; ++finite; }
        if (finite > 0) mean_fit /= finite;
        result.history.push_back({state.generation, mean_fit, next.best_fitness});
        state = std::move(next);
    }
    result.best_params = state.best_params;
    result.best_fitness = state.best_fitness;
    result.final_state = state;
    return result;
}

} // namespace meta
