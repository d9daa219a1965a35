#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>

#include "meta/es.hpp"

using namespace meta;

TEST_CASE("centered_ranks: values span [-0.5, 0.5], ties averaged") {
    auto r = centered_ranks({3.0, 1.0, 2.0});
    CHECK(r[0] == doctest::Approx(0.5));
    CHECK(r[1] == doctest::Approx(-0.5));
    CHECK(r[2] == doctest::Approx(0.0));
    // two-way tie takes the average of ranks 1 and 2 -> 1.5/3 - 0.5 = 0
    auto t = centered_ranks({5.0, 7.0, 7.0, 9.0});
    CHECK(t[0] == doctest::Approx(-0.5));
    CHECK(t[1] == doctest::Approx(0.0));
    CHECK(t[2] == doctest::Approx(0.0));
    CHECK(t[3] == doctest::Approx(0.5));
    // all equal: every shaped weight is 0
    auto e = centered_ranks({4.0, 4.0, 4.0, 4.0});
    for (double v : e) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("parallel_map: index-ordered and worker-count independent") {
    auto fn = [](int i) { return std::sin(static_cast<double>(i)) * i; };
    auto base = parallel_map(97, 1, fn);
    for (int w : {2, 3, 8}) CHECK(parallel_map(97, w, fn) == base);
    CHECK(parallel_map(0, 4, fn).empty());
}

TEST_CASE("es config validation") {
    EsConfig bad;
    bad.population_size = 7; // odd
    CHECK_THROWS(bad.validate());
    bad.population_size = 0;
    CHECK_THROWS(bad.validate());
    EsConfig ok;
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("es_step: constant fitness leaves the mean exactly unchanged") {
    EsConfig cfg;
    cfg.population_size = 16;
    EsState s = es_init(cfg, {0.3, -1.2, 5.0});
    RngStream rng(10, 0);
    auto next = es_step(cfg, s, [](const std::vector<double>&) { return 1.0; }, rng);
    CHECK(next.mean == std::vector<double>{0.3, -1.2, 5.0});
    CHECK(next.generation == 1);
}

TEST_CASE("es_step: perturbations are antithetic pairs") {
    EsConfig cfg;
    cfg.population_size = 8;
    EsState s = es_init(cfg, std::vector<double>(4, 0.0));
    RngStream rng(11, 0);
    std::vector<std::vector<double>> thetas;
    auto capture = [&](const std::vector<double>& th) {
        thetas.push_back(th);
        return 0.0;
    };
    es_step(cfg, s, capture, rng);
    REQUIRE(thetas.size() == 8);
    for (int k = 0; k < 4; ++k)
        for (int d = 0; d < 4; ++d)
            CHECK(thetas[2 * k][d] == doctest::Approx(-thetas[2 * k + 1][d]).epsilon(1e-12));
}

TEST_CASE("es_step: even fitness function gives a zero update") {
    // f(theta) = -theta^2 is identical for +eps and -eps around mean 0, so every
    // antithetic pair ties and the shaped weights cancel exactly
    EsConfig cfg;
    cfg.population_size = 32;
    EsState s = es_init(cfg, {0.0, 0.0});
    RngStream rng(12, 0);
    auto next = es_step(
        cfg, s, [](const std::vector<double>& t) { return -(t[0] * t[0] + t[1] * t[1]); }, rng);
    CHECK(next.mean[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(next.mean[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("es_step: update direction tracks a linear fitness") {
    EsConfig cfg;
    cfg.population_size = 512;
    cfg.learning_rate = 1e-2;
    EsState s = es_init(cfg, {0.0, 0.0, 0.0});
    RngStream rng(13, 0);
    // f = <c, theta> with c = (1, 2, -2): the step should align with c
    auto next = es_step(
        cfg, s,
        [](const std::vector<double>& t) { return t[0] + 2 * t[1] - 2 * t[2]; }, rng);
    const double c[3] = {1, 2, -2};
    double dot = 0, nm = 0, nc = 0;
    for (int d = 0; d < 3; ++d) {
        dot += next.mean[d] * c[d];
        nm += next.mean[d] * next.mean[d];
        nc += c[d] * c[d];
    }
    CHECK(dot / std::sqrt(nm * nc) > 0.9);
}

TEST_CASE("es_step: -inf sentinel maps to the generation's minimum finite fitness") {
    EsConfig cfg;
    cfg.population_size = 4;
    EsState s = es_init(cfg, {0.0});
    RngStream r1(14, 0), r2(14, 0);
    // run A: fitnesses [5, -inf, 1, 3]; run B: the -inf replaced by 1 directly.
    // identical shaped weights -> identical means
    int call = 0;
    auto fa = [&](const std::vector<double>&) {
        static const double fs[4] = {5.0, -std::numeric_limits<double>::infinity(), 1.0, 3.0};
        return fs[call++ % 4];
    };
    int call2 = 0;
    auto fb = [&](const std::vector<double>&) {
        static const double fs[4] = {5.0, 1.0, 1.0, 3.0};
        return fs[call2++ % 4];
    };
    auto na = es_step(cfg, s, fa, r1);
    auto nb = es_step(cfg, s, fb, r2);
    CHECK(na.mean == nb.mean);
    CHECK(std::isfinite(na.best_fitness));
}

TEST_CASE("es schedules: lr and sigma decay geometrically") {
    EsConfig cfg;
    cfg.population_size = 4;
    cfg.n_generations = 5;
    RngStream rng(15, 0);
    auto res = meta_train_es(cfg, {0.0}, [](const std::vector<double>&) { return 0.0; }, rng);
    CHECK(res.final_state.lr == doctest::Approx(cfg.learning_rate * std::pow(cfg.lr_decay, 5))
                                    .epsilon(1e-12));
    CHECK(res.final_state.sigma ==
          doctest::Approx(cfg.sigma_init * std::pow(cfg.sigma_decay, 5)).epsilon(1e-12));
    CHECK(res.history.size() == 5);
    for (int g = 0; g < 5; ++g) CHECK(res.history[g].generation == g);
}

TEST_CASE("meta_train_es: zero generations returns the initial mean") {
    EsConfig cfg;
    cfg.population_size = 4;
    cfg.n_generations = 0;
    RngStream rng(16, 0);
    auto res = meta_train_es(cfg, {1.0, 2.0}, [](const std::vector<double>&) { return 9.0; },
                             rng);
    CHECK(res.best_params == std::vector<double>{1.0, 2.0});
    CHECK(res.history.empty());
}

TEST_CASE("meta_train_es: sphere in dimension 20 reaches < 0.1 within 200 generations") {
    EsConfig cfg;
    cfg.population_size = 64;
    cfg.n_generations = 200;
    cfg.learning_rate = 0.1;
    cfg.lr_decay = 0.995;
    cfg.sigma_init = 0.1;
    cfg.sigma_decay = 0.999;
    std::vector<double> init(20, 1.0);
    auto sphere = [](const std::vector<double>& t) {
        double s = 0;
        for (double x : t) s += x * x;
        return -s;
    };
    RngStream rng(17, 0);
    auto res = meta_train_es(cfg, init, sphere, rng);
    CHECK(-sphere(res.final_state.mean) < 0.1);
    CHECK(res.best_fitness > -0.1);
}

TEST_CASE("meta_train_es: results identical for any worker count") {
    auto run = [](int workers) {
        EsConfig cfg;
        cfg.population_size = 16;
        cfg.n_generations = 20;
        cfg.n_workers = workers;
        auto f = [](const std::vector<double>& t) {
            double s = 0;
            for (double x : t) s += std::sin(3 * x) - x * x;
            return s;
        };
        RngStream rng(18, 0);
        return meta_train_es(cfg, std::vector<double>(6, 0.5), f, rng);
    };
    auto a = run(1), b = run(3), c = run(7);
    CHECK(a.final_state.mean == b.final_state.mean);
    CHECK(a.final_state.mean == c.final_state.mean);
    CHECK(a.best_fitness == b.best_fitness);
    CHECK(a.best_params == c.best_params);
}

TEST_CASE("parallel_map: all indices run under contention") {
    std::atomic<int> count{0};
    auto out = parallel_map(1000, 8, [&](int i) {
        count.fetch_add(1);
        return static_cast<double>(i);
    });
    CHECK(count.load() == 1000);
    for (int i = 0; i < 1000; ++i) REQUIRE(out[i] == i);
}
