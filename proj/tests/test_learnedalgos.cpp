#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "meta/drift.hpp"
#include "meta/optimizer.hpp"

using namespace meta;

TEST_CASE("lpo_featurize: identity, r=e, and hand-computed r=0.5") {
    auto z = lpo_featurize(1.0, 3.7);
    for (double v : z) CHECK(v == 0.0);

    const double e = std::exp(1.0);
    auto f = lpo_featurize(e, 2.0);
    CHECK(f[0] == doctest::Approx(1 - e));
    CHECK(f[1] == doctest::Approx((1 - e) * (1 - e)));
    CHECK(f[2] == doctest::Approx(2 * (1 - e)));
    CHECK(f[3] == doctest::Approx(2 * (1 - e) * (1 - e)));
    CHECK(f[4] == doctest::Approx(1.0));
    CHECK(f[5] == doctest::Approx(2.0));
    CHECK(f[6] == doctest::Approx(2.0));

    // r = 0.5, A = -1: log r = -ln 2
    const double l = std::log(0.5);
    auto g = lpo_featurize(0.5, -1.0);
    CHECK(g[0] == doctest::Approx(0.5));
    CHECK(g[1] == doctest::Approx(0.25));
    CHECK(g[2] == doctest::Approx(-0.5));
    CHECK(g[3] == doctest::Approx(-0.25));
    CHECK(g[4] == doctest::Approx(l));
    CHECK(g[5] == doctest::Approx(-l));
    CHECK(g[6] == doctest::Approx(-l * l));

    CHECK_THROWS(lpo_featurize(0.0, 1.0));
    CHECK_THROWS(lpo_featurize(-1.0, 1.0));
}

TEST_CASE("drift_eval: ppo_clip formula cases") {
    auto d = DriftFunction::ppo_clip(0.2);
    CHECK(drift_eval(d, 1.3, 1.0) == doctest::Approx(0.1));
    CHECK(drift_eval(d, 0.9, -2.0) == 0.0);
    CHECK(drift_eval(d, 1.0, 5.0) == 0.0);
    // below the clip window with negative advantage: (0.5 - 0.8)*(-1) = 0.3
    CHECK(drift_eval(d, 0.5, -1.0) == doctest::Approx(0.3));
}

static MlpParams random_drift_net(std::uint64_t seed) {
    MlpSpec spec;
    spec.layer_widths = {7, 16, 1};
    spec.hidden_activation = Activation::Relu;
    spec.output_activation = Activation::Relu;
    RngStream rng(seed, 0);
    return init_mlp(spec, false, rng);
}

TEST_CASE("drift_eval: blackbox mirror conditions for arbitrary parameters") {
    for (int net = 0; net < 5; ++net) {
        auto d = DriftFunction::blackbox(random_drift_net(100 + net));
        RngStream rng(net, 1);
        for (int i = 0; i < 100; ++i) CHECK(drift_eval(d, 1.0, rng.normal(0, 3)) == 0.0);
        for (int i = 0; i < 10000; ++i) {
            const double r = std::exp(rng.normal(0, 0.5));
            CHECK(drift_eval(d, r, rng.normal(0, 3)) >= 0.0);
        }
    }
}

TEST_CASE("drift_eval: symbolic clamps below zero and records violations") {
    auto sig = dsl::Signature::drift();
    auto d = DriftFunction::symbolic(dsl::parse("(1 - r) * A", sig), 0.2);
    CHECK(drift_eval(d, 2.0, 1.0) == 0.0); // raw value -1, clamped
    const auto& sym = std::get<SymbolicDrift>(d.variant);
    CHECK(sym.violation_seen);
}

TEST_CASE("drift_grad_r matches finite differences for all variants") {
    auto sig = dsl::Signature::drift();
    std::vector<DriftFunction> drifts;
    drifts.push_back(DriftFunction::ppo_clip(0.2));
    drifts.push_back(DriftFunction::blackbox(random_drift_net(7)));
    drifts.push_back(DriftFunction::symbolic(
        dsl::parse("square(1 - r) * abs(A)", sig), 0.2));
    RngStream rng(17, 2);
    for (const auto& d : drifts) {
        for (int i = 0; i < 200; ++i) {
            const double r = 0.5 + 1.5 * rng.uniform();
            const double a = rng.normal(0, 2);
            if (std::fabs(r - 1.0) < 0.05 || std::fabs(r - 1.2) < 0.02 ||
                std::fabs(r - 0.8) < 0.02)
                continue; // keep away from relu/clip kinks
            const double h = 1e-6 * std::max(1.0, std::fabs(r));
            const double fd = (drift_eval(d, r + h, a) - drift_eval(d, r - h, a)) / (2 * h);
            CHECK(drift_grad_r(d, r, a) == doctest::Approx(fd).epsilon(1e-3));
        }
    }
}

TEST_CASE("init_lpo_near_ppo: grid oracle, identity, determinism") {
    MlpSpec spec;
    spec.layer_widths = {7, 128, 1};
    spec.hidden_activation = Activation::Relu;
    spec.output_activation = Activation::Relu;
    RngStream rng(5, 3);
    auto params = init_lpo_near_ppo(spec, 0.2, rng);
    auto d = DriftFunction::blackbox(params);
    auto ppo = DriftFunction::ppo_clip(0.2);
    double max_err = 0.0;
    // keep the check to the region the sampler covers well
    for (double r = 0.7; r <= 1.3; r += 0.02)
        for (double a = -2.0; a <= 2.0; a += 0.25)
            max_err = std::max(max_err, std::fabs(drift_eval(d, r, a) - drift_eval(ppo, r, a)));
    CHECK(max_err <= 0.08);
    for (double a = -3.0; a <= 3.0; a += 0.1) CHECK(drift_eval(d, 1.0, a) == 0.0);
    // empirical zero-gradient mirror condition at r = 1
    for (double a : {-2.0, -0.5, 0.5, 2.0}) {
        const double h = 1e-4;
        CHECK(std::fabs((drift_eval(d, 1 + h, a) - drift_eval(d, 1 - h, a)) / (2 * h)) <= 0.05);
    }
    RngStream rng2(5, 3);
    auto params2 = init_lpo_near_ppo(spec, 0.2, rng2);
    CHECK(params.values == params2.values);
}

TEST_CASE("update_momenta: fixed points and hand unroll") {
    OptimState state;
    state.reset(2);
    std::vector<double> g = {1.0, -2.0};
    update_momenta(state, g);
    for (int k = 0; k < 6; ++k) {
        CHECK(state.momenta[k][0] == doctest::Approx(kMomentumCoeffs[k] * 1.0));
        CHECK(state.momenta[k][1] == doctest::Approx(kMomentumCoeffs[k] * -2.0));
    }
    // g = 0 decays by (1 - beta)
    auto before = state.momenta;
    update_momenta(state, {0.0, 0.0});
    for (int k = 0; k < 6; ++k)
        CHECK(state.momenta[k][0] ==
              doctest::Approx((1.0 - kMomentumCoeffs[k]) * before[k][0]));
    // m = g is a fixed point
    OptimState fp;
    fp.reset(1);
    for (int k = 0; k < 6; ++k) fp.momenta[k][0] = 0.7;
    update_momenta(fp, {0.7});
    for (int k = 0; k < 6; ++k) CHECK(fp.momenta[k][0] == doctest::Approx(0.7));
    // 5-step scripted sequence vs hand-unrolled recursion
    const double gs[5] = {1.0, -0.5, 0.25, 2.0, 0.0};
    OptimState s5;
    s5.reset(1);
    double hand[6] = {0, 0, 0, 0, 0, 0};
    for (double gv : gs) {
        update_momenta(s5, {gv});
        for (int k = 0; k < 6; ++k) hand[k] = kMomentumCoeffs[k] * gv + (1 - kMomentumCoeffs[k]) * hand[k];
    }
    for (int k = 0; k < 6; ++k) CHECK(std::fabs(s5.momenta[k][0] - hand[k]) <= 1e-12);
}

TEST_CASE("dormancy_scores") {
    // equal means -> all ones
    auto s = dormancy_scores({{1, -1, 1}, {-1, 1, -1}});
    for (double v : s) CHECK(v == doctest::Approx(1.0));
    // width 2, means (0, c) -> (0, 2)
    auto t = dormancy_scores({{0, 3}, {0, 1}});
    CHECK(t[0] == 0.0);
    CHECK(t[1] == doctest::Approx(2.0));
    // width 3, means (1, 2, 3) -> (0.5, 1.0, 1.5); sums to width
    auto u = dormancy_scores({{1, 2, 3}});
    CHECK(u[0] == doctest::Approx(0.5));
    CHECK(u[1] == doctest::Approx(1.0));
    CHECK(u[2] == doctest::Approx(1.5));
    // degenerate all-zero layer
    auto z = dormancy_scores({{0, 0}});
    CHECK(z[0] == 0.0);
    CHECK(z[1] == 0.0);
}

TEST_CASE("open_featurize: layout and sgn conventions") {
    std::array<double, 6> mom = {0.1, -0.2, 0.3, -0.4, 0.5, 0.0};
    auto f = open_featurize(0.7, 0.0, mom, 0.25, 0.5, 1.5, 0.75);
    CHECK(f[0] == 0.7);
    CHECK(f[1] == doctest::Approx(std::log(1e-8)));
    CHECK(f[2] == 0.0); // sgn(0) = 0
    for (int k = 0; k < 6; ++k) {
        CHECK(f[3 + 2 * k] == doctest::Approx(std::log(std::fabs(mom[k]) + 1e-8)));
        const double expect = mom[k] > 0 ? 1.0 : (mom[k] < 0 ? -1.0 : 0.0);
        CHECK(f[4 + 2 * k] == expect);
    }
    CHECK(f[15] == 0.25);
    CHECK(f[16] == 0.5);
    CHECK(f[17] == 1.5);
    CHECK(f[18] == 0.75);

    auto g = open_featurize(0.0, -1.0, mom, 0, 0, 0, 0);
    CHECK(g[1] == doctest::Approx(std::log(1.0 + 1e-8)));
    CHECK(g[2] == -1.0);
    CHECK(feature_count(FeatureSet::OpenFf) == 19);
    CHECK(feature_count(FeatureSet::NoFeatures) == 15);
}

static UpdateContext make_ctx(std::size_t n, double t_p = 0.0) {
    UpdateContext ctx;
    ctx.t_p = t_p;
    ctx.b_p = 0.0;
    ctx.l_p.assign(n, 0.5);
    ctx.dorm.assign(n, 1.0);
    ctx.rand.assign(n, 0.0);
    return ctx;
}

TEST_CASE("apply_update_rule: sgd annealing") {
    auto rule = UpdateRule::sgd(0.1);
    std::vector<double> p = {1.0, 2.0};
    apply_update_rule(rule, p, {1.0, -1.0}, make_ctx(2, 0.0));
    CHECK(p[0] == doctest::Approx(0.9));
    CHECK(p[1] == doctest::Approx(2.1));
    // fully annealed -> zero step
    auto rule2 = UpdateRule::sgd(0.1);
    std::vector<double> q = {1.0};
    apply_update_rule(rule2, q, {5.0}, make_ctx(1, 1.0));
    CHECK(q[0] == 1.0);
}

TEST_CASE("apply_update_rule: adam vs hand unroll on a scalar quadratic") {
    // minimize f(x) = x^2 / 2, gradient x
    auto rule = UpdateRule::adam(0.1);
    double x = 1.0;
    double hm = 0, hv = 0, hx = 1.0;
    for (int t = 1; t <= 3; ++t) {
        std::vector<double> p = {x};
        apply_update_rule(rule, p, {x}, make_ctx(1, 0.0));
        x = p[0];
        const double g = hx;
        hm = 0.9 * hm + 0.1 * g;
        hv = 0.999 * hv + 0.001 * g * g;
        hx -= 0.1 * (hm / (1 - std::pow(0.9, t))) /
              (std::sqrt(hv / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(std::fabs(x - hx) <= 1e-10);
}

TEST_CASE("apply_update_rule: zero learned net leaves parameters unchanged") {
    MlpSpec spec;
    spec.layer_widths = {19, 8, 1};
    MlpParams net;
    net.spec = spec;
    net.bias_enabled = true;
    net.values.assign(MlpParams::value_count(spec, true), 0.0);
    auto rule = UpdateRule::learned_blackbox(net, FeatureSet::OpenFf, 1e-3, 0.0);
    std::vector<double> p = {0.4, -0.7};
    auto copy = p;
    apply_update_rule(rule, p, {1.0, 2.0}, make_ctx(2));
    CHECK(p == copy);
}

TEST_CASE("apply_update_rule: per-parameter independence under permutation") {
    MlpSpec spec;
    spec.layer_widths = {19, 8, 1};
    RngStream rng(31, 4);
    auto net = init_mlp(spec, true, rng);
    auto rule_a = UpdateRule::learned_blackbox(net, FeatureSet::OpenFf);
    auto rule_b = UpdateRule::learned_blackbox(net, FeatureSet::OpenFf);

    std::vector<double> p = {0.1, -0.2, 0.3};
    std::vector<double> g = {1.0, -0.5, 0.25};
    auto ctx = make_ctx(3);
    ctx.l_p = {0.0, 0.5, 1.0};
    ctx.dorm = {0.5, 1.0, 2.0};
    ctx.rand = {0.3, -0.4, 0.1};

    std::vector<double> pa = p;
    apply_update_rule(rule_a, pa, g, ctx);

    // permuted order (reverse), then un-permute
    std::vector<double> pb = {p[2], p[1], p[0]};
    std::vector<double> gb = {g[2], g[1], g[0]};
    auto ctxb = ctx;
    ctxb.l_p = {ctx.l_p[2], ctx.l_p[1], ctx.l_p[0]};
    ctxb.dorm = {ctx.dorm[2], ctx.dorm[1], ctx.dorm[0]};
    ctxb.rand = {ctx.rand[2], ctx.rand[1], ctx.rand[0]};
    apply_update_rule(rule_b, pb, gb, ctxb);
    CHECK(pa[0] == doctest::Approx(pb[2]).epsilon(1e-15));
    CHECK(pa[1] == doctest::Approx(pb[1]).epsilon(1e-15));
    CHECK(pa[2] == doctest::Approx(pb[0]).epsilon(1e-15));
}

TEST_CASE("apply_update_rule: no-features input is the first 15 open features") {
    // a learned net over 15 inputs must see exactly the truncated feature vector:
    // weights pick out each input in turn
    for (int pick = 0; pick < 15; ++pick) {
        MlpSpec spec;
        spec.layer_widths = {15, 1};
        MlpParams net;
        net.spec = spec;
        net.bias_enabled = false;
        net.values.assign(15, 0.0);
        net.values[pick] = 1.0;
        auto rule = UpdateRule::learned_blackbox(net, FeatureSet::NoFeatures, 1.0, 0.0);
        std::vector<double> p = {0.5};
        auto ctx = make_ctx(1, 0.25);
        ctx.b_p = 0.75;
        apply_update_rule(rule, p, {2.0}, ctx);
        OptimState ref;
        ref.reset(1);
        update_momenta(ref, {2.0});
        std::array<double, 6> mom;
        for (int k = 0; k < 6; ++k) mom[k] = ref.momenta[k][0];
        auto feats = open_featurize(0.5, 2.0, mom, 0.25, 0.75, ctx.dorm[0], ctx.l_p[0]);
        CHECK(p[0] == doctest::Approx(0.5 - feats[pick]).epsilon(1e-12));
    }
}

TEST_CASE("drift and rule serialization round trips") {
    const std::string dpath = "/tmp/metarl_test_drift.json";
    const std::string rpath = "/tmp/metarl_test_rule.json";

    auto ppo = DriftFunction::ppo_clip(0.15);
    save_drift(ppo, dpath);
    auto ppo2 = load_drift(dpath);
    CHECK(std::get<PpoClipDrift>(ppo2.variant).eps == 0.15);

    auto bb = DriftFunction::blackbox(random_drift_net(55));
    save_drift(bb, dpath);
    auto bb2 = load_drift(dpath);
    CHECK(std::get<BlackboxDrift>(bb2.variant).params.values ==
          std::get<BlackboxDrift>(bb.variant).params.values);

    auto sig = dsl::Signature::drift();
    auto sym = DriftFunction::symbolic(dsl::parse("square(1 - r) * abs(A)", sig), 0.2);
    save_drift(sym, dpath);
    auto sym2 = load_drift(dpath);
    RngStream rng(1, 5);
    for (int i = 0; i < 20; ++i) {
        const double r = std::exp(rng.normal(0, 0.3)), a = rng.normal();
        CHECK(drift_eval(sym2, r, a) == doctest::Approx(drift_eval(sym, r, a)));
    }

    auto rule = UpdateRule::adam(3e-4, 0.9, 0.99, 1e-7);
    save_update_rule(rule, rpath);
    auto rule2 = load_update_rule(rpath);
    const auto& a2 = std::get<AdamRule>(rule2.variant);
    CHECK(a2.lr == 3e-4);
    CHECK(a2.beta2 == 0.99);

    MlpSpec spec;
    spec.layer_widths = {15, 4, 1};
    RngStream nrng(9, 6);
    auto lb = UpdateRule::learned_blackbox(init_mlp(spec, true, nrng), FeatureSet::NoFeatures,
                                           2e-3, 5e-4);
    save_update_rule(lb, rpath);
    auto lb2 = load_update_rule(rpath);
    const auto& l2 = std::get<LearnedBlackboxRule>(lb2.variant);
    CHECK(l2.params.values == std::get<LearnedBlackboxRule>(lb.variant).params.values);
    CHECK(l2.feature_set == FeatureSet::NoFeatures);
    CHECK(l2.output_scale == 2e-3);

    std::remove(dpath.c_str());
    std::remove((dpath + ".mlp").c_str());
    std::remove(rpath.c_str());
    std::remove((rpath + ".mlp").c_str());
}
