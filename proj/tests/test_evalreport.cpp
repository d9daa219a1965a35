#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "meta/evalreport.hpp"

using namespace meta;

static RunRecord rec(const std::string& method, const std::string& env, DistTag tag, int seed,
                     double ret, long steps = 100, double wall = 1.0) {
    RunRecord r;
    r.method = method;
    r.env_id = env;
    r.tag = tag;
    r.seed = seed;
    r.final_return = ret;
    r.env_steps_consumed = steps;
    r.wall_time_s = wall;
    return r;
}

TEST_CASE("iqm: exact small cases") {
    CHECK(iqm({1, 2, 3, 4}) == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(iqm({4, 1, 3, 2}) == doctest::Approx(2.5).epsilon(1e-15)); // order-free
    CHECK(iqm({7.0}) == doctest::Approx(7.0));
    // n = 5: fractional trim of 1.25 per side ->
    // (0.75*2 + 3 + 0.75*4) / 2.5 with the outliers fully dropped
    CHECK(iqm({1, 2, 3, 4, 10}) == doctest::Approx(3.0).epsilon(1e-12));
    // n = 8: middle four exactly
    CHECK(iqm({0, 0, 1, 2, 3, 4, 100, 100}) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK_THROWS(iqm({}));
}

TEST_CASE("iqm: n = 16 fixtures against an independent middle-eight oracle") {
    RngStream rng(1, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> v(16);
        for (auto& x : v) x = rng.normal(0, 10);
        auto sorted = v;
        std::sort(sorted.begin(), sorted.end());
        double oracle = 0;
        for (int i = 4; i < 12; ++i) oracle += sorted[i];
        oracle /= 8.0;
        CHECK(std::fabs(iqm(v) - oracle) <= 1e-12 * std::max(1.0, std::fabs(oracle)));
    }
}

TEST_CASE("normalize_returns: per-env baseline mean, zero-mean envs dropped") {
    std::vector<RunRecord> rs = {
        rec("base", "e1", DistTag::InDist, 0, 2.0), rec("base", "e1", DistTag::InDist, 1, 4.0),
        rec("other", "e1", DistTag::InDist, 0, 6.0),
        // e2 baseline mean is zero: every e2 record must be excluded
        rec("base", "e2", DistTag::InDist, 0, 1.0), rec("base", "e2", DistTag::InDist, 1, -1.0),
        rec("other", "e2", DistTag::InDist, 0, 5.0),
    };
    auto norm = normalize_returns(rs, "base");
    REQUIRE(norm.excluded_envs == std::vector<std::string>{"e2"});
    REQUIRE(norm.records.size() == 3);
    for (const auto& r : norm.records) {
        CHECK(r.env_id == "e1");
        if (r.method == "other") CHECK(r.final_return == doctest::Approx(2.0)); // 6 / 3
        if (r.method == "base" && r.seed == 0) CHECK(r.final_return == doctest::Approx(2.0 / 3));
    }
    // a method-only env with no baseline runs is an error
    std::vector<RunRecord> missing = {rec("other", "e9", DistTag::InDist, 0, 1.0)};
    CHECK_THROWS(normalize_returns(missing, "base"));
}

TEST_CASE("stratified_bootstrap_ci: brackets the point estimate, degenerate data collapses") {
    std::map<std::string, std::vector<double>> by_env = {
        {"e1", {0.8, 1.0, 1.2, 0.9}},
        {"e2", {1.1, 1.3, 0.7, 1.0}},
    };
    RngStream rng(2, 0);
    auto [lo, hi] = stratified_bootstrap_ci(by_env, 4000, 0.95, rng);
    std::vector<double> pooled;
    for (const auto& [e, v] : by_env) pooled.insert(pooled.end(), v.begin(), v.end());
    const double point = iqm(pooled);
    CHECK(lo < point);
    CHECK(hi > point);
    CHECK(lo < hi);

    std::map<std::string, std::vector<double>> flat = {{"e1", {2.0, 2.0, 2.0}}};
    RngStream rng2(3, 0);
    auto [flo, fhi] = stratified_bootstrap_ci(flat, 500, 0.95, rng2);
    CHECK(flo == doctest::Approx(2.0));
    CHECK(fhi == doctest::Approx(2.0));

    std::map<std::string, std::vector<double>> tiny = {{"e1", {1.0}}};
    RngStream rng3(4, 0);
    CHECK_THROWS(stratified_bootstrap_ci(tiny, 100, 0.95, rng3));
}

TEST_CASE("stratified_bootstrap_ci: deterministic under a fixed stream") {
    std::map<std::string, std::vector<double>> by_env = {{"e1", {0.5, 1.5, 1.0, 2.0}}};
    RngStream a(5, 0), b(5, 0);
    CHECK(stratified_bootstrap_ci(by_env, 1000, 0.95, a) ==
          stratified_bootstrap_ci(by_env, 1000, 0.95, b));
}

TEST_CASE("aggregate_report: baseline normalizes itself to IQM 1 on symmetric data") {
    // symmetric seed returns around the mean keep the IQM at exactly the mean
    std::vector<RunRecord> rs;
    for (int s = 0; s < 4; ++s) {
        const double offs[4] = {-0.2, -0.1, 0.1, 0.2};
        rs.push_back(rec("base", "e1", DistTag::InDist, s, 1.0 + offs[s], 50, 0.5));
        rs.push_back(rec("base", "e2", DistTag::OutDist, s, 2.0 + 2 * offs[s], 50, 0.5));
        rs.push_back(rec("m", "e1", DistTag::InDist, s, 2.0 + offs[s], 70, 0.25));
    }
    RngStream rng(6, 0);
    auto aggs = aggregate_report(rs, "base", 500, rng);
    REQUIRE(aggs.size() == 3); // base/in, base/out, m/in
    for (const auto& a : aggs) {
        if (a.method == "base") {
            CHECK(a.iqm == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(a.n_records == 4);
        } else {
            CHECK(a.method == "m");
            CHECK(a.tag == DistTag::InDist);
            CHECK(a.iqm == doctest::Approx(2.0).epsilon(0.05));
            CHECK(a.total_samples == 4 * 70);
            CHECK(a.train_wall_s == doctest::Approx(1.0));
        }
        CHECK(a.ci_lo <= a.iqm);
        CHECK(a.ci_hi >= a.iqm);
    }
}

TEST_CASE("cost_accounting: sums per method across logs") {
    std::vector<RunRecord> train = {rec("a", "e", DistTag::InDist, 0, 0, 100, 2.0),
                                    rec("a", "e", DistTag::InDist, 1, 0, 150, 3.0),
                                    rec("b", "e", DistTag::InDist, 0, 0, 10, 0.5)};
    std::vector<RunRecord> test = {rec("a", "e", DistTag::InDist, 0, 0, 5, 0.25)};
    auto rows = cost_accounting(train, test);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        if (row.method == "a") {
            CHECK(row.samples == 250);
            CHECK(row.train_wall_s == doctest::Approx(5.0));
            CHECK(row.test_wall_s == doctest::Approx(0.25));
        } else {
            CHECK(row.samples == 10);
            CHECK(row.test_wall_s == 0.0);
        }
    }
}

TEST_CASE("drift_surface: PPO drift values and derivative") {
    auto ppo = DriftFunction::ppo_clip(0.2);
    auto surface = drift_surface(ppo, {0.5, 1.5}, {1.0, -2.0});
    REQUIRE(surface.size() == 4);
    // row order: advantage outer, r inner
    CHECK(surface[0].r == 0.5);
    CHECK(surface[0].advantage == 1.0);
    CHECK(surface[0].drift == doctest::Approx(0.0)); // (0.5 - 0.8) * 1 clips to zero
    CHECK(surface[1].drift == doctest::Approx(0.3)); // (1.5 - 1.2) * 1
    CHECK(surface[1].ddrift_dr == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(surface[2].drift == doctest::Approx(0.6)); // (0.5 - 0.8) * -2
    CHECK(surface[3].drift == doctest::Approx(0.0)); // (1.5 - 1.2) * -2 clips to zero
    CHECK_THROWS(drift_surface(ppo, {-1.0}, {1.0}));
}

TEST_CASE("records csv: round trip preserves every field") {
    std::vector<RunRecord> rs = {
        rec("blackbox_es", "grid_id/3", DistTag::InDist, 3, 0.123456789012345, 4096, 0.0),
        rec("distill_same", "grid_ood/1", DistTag::OutDist, 1, -2.5, 100000, 12.25),
    };
    const std::string path = "/tmp/metarl_test_records.csv";
    save_records_csv(rs, path);
    auto back = load_records_csv(path);
    REQUIRE(back.size() == rs.size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
        CHECK(back[i].method == rs[i].method);
        CHECK(back[i].env_id == rs[i].env_id);
        CHECK(back[i].tag == rs[i].tag);
        CHECK(back[i].seed == rs[i].seed);
        CHECK(back[i].final_return == rs[i].final_return);
        CHECK(back[i].env_steps_consumed == rs[i].env_steps_consumed);
        CHECK(back[i].wall_time_s == rs[i].wall_time_s);
    }
    // saving the loaded records again is byte-identical
    const std::string path2 = "/tmp/metarl_test_records2.csv";
    save_records_csv(back, path2);
    auto slurp = [](const std::string& p) {
        std::FILE* f = std::fopen(p.c_str(), "rb");
        REQUIRE(f);
        std::string s;
        char buf[4096];
        std::size_t n;
        while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) s.append(buf, n);
        std::fclose(f);
        return s;
    };
    CHECK(slurp(path) == slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("surface csv: header and rows") {
    auto ppo = DriftFunction::ppo_clip(0.2);
    auto surface = drift_surface(ppo, {1.0, 1.1}, {1.0});
    const std::string path = "/tmp/metarl_test_surface.csv";
    save_surface_csv(surface, path);
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    CHECK(header == "r,advantage,drift,ddrift_dr");
    int rows = 0;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    std::remove(path.c_str());
}

TEST_CASE("bootstrap coverage: sanity on one configuration") {
    // 95% CI for the IQM of n = 16 standard normals per env, true IQM = 0.
    // Lightweight version of the full coverage sweep: 200 trials, wide bounds.
    RngStream rng(9, 0);
    int covered = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        std::map<std::string, std::vector<double>> by_env;
        RngStream draw = rng.substream(t * 2);
        for (int e = 0; e < 2; ++e) {
            auto& v = by_env["env" + std::to_string(e)];
            for (int i = 0; i < 8; ++i) v.push_back(draw.normal());
        }
        RngStream boot = rng.substream(t * 2 + 1);
        auto [lo, hi] = stratified_bootstrap_ci(by_env, 400, 0.95, boot);
        if (lo <= 0.0 && 0.0 <= hi) ++covered;
    }
    const double rate = static_cast<double>(covered) / trials;
    CHECK(rate > 0.85);
    CHECK(rate <= 1.0);
}
