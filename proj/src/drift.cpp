#include "meta/drift.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace meta {

std::array<double, 7> lpo_featurize(double r, double advantage) {
    if (r <= 0.0) throw std::domain_error("lpo_featurize: r must be > 0");
    const double d = 1.0 - r;
    const double lr = std::log(r);
    return {d, d * d, d * advantage, d * d * advantage, lr, lr * advantage, lr * lr * advantage};
}

std::array<double, 7> lpo_featurize_dr(double r, double advantage) {
    const double d = 1.0 - r;
    const double lr = std::log(r);
    return {-1.0, -2.0 * d, -advantage, -2.0 * d * advantage,
            1.0 / r, advantage / r, 2.0 * lr * advantage / r};
}

DriftFunction DriftFunction::ppo_clip(double eps) {
    return DriftFunction{PpoClipDrift{eps}};
}

DriftFunction DriftFunction::blackbox(MlpParams params) {
    if (params.bias_enabled)
        throw std::invalid_argument("blackbox drift: net must be bias-free");
    if (params.spec.output_activation != Activation::Relu)
        throw std::invalid_argument("blackbox drift: output activation must be relu");
    if (params.spec.layer_widths.front() != 7 || params.spec.layer_widths.back() != 1)
        throw std::invalid_argument("blackbox drift: net must map 7 features to 1 output");
    return DriftFunction{BlackboxDrift{std::move(params)}};
}

DriftFunction DriftFunction::symbolic(dsl::ExprPtr expr, double eps) {
    return DriftFunction{SymbolicDrift{std::move(expr), eps}};
}

namespace {

double ppo_clip_drift(double r, double advantage, double eps) {
    const double clipped = std::min(std::max(r, 1.0 - eps), 1.0 + eps);
    const double z = (r - clipped) * advantage;
    return z > 0.0 ? z : 0.0;
}

double symbolic_raw(const SymbolicDrift& s, double r, double advantage) {
    dsl::Bindings b{{"r", r}, {"A", advantage}, {"eps", s.eps}};
    return dsl::eval_expr(s.expr, b);
}

} // namespace

double drift_eval(const DriftFunction& d, double r, double advantage) {
    if (r <= 0.0) throw std::domain_error("drift_eval: r must be > 0");
    if (const auto* p = std::get_if<PpoClipDrift>(&d.variant))
        return ppo_clip_drift(r, advantage, p->eps);
    if (const auto* bb = std::get_if<BlackboxDrift>(&d.variant)) {
        auto feats = lpo_featurize(r, advantage);
        std::vector<double> in(feats.begin(), feats.end());
        return mlp_forward(bb->params, in)[0];
    }
    const auto& s = std::get<SymbolicDrift>(d.variant);
    double raw = symbolic_raw(s, r, advantage);
    if (raw < -1e-9) s.violation_seen = true;
    return raw < 0.0 ? 0.0 : raw;
}

double drift_grad_r(const DriftFunction& d, double r, double advantage) {
    if (const auto* p = std::get_if<PpoClipDrift>(&d.variant)) {
        const double clipped = std::min(std::max(r, 1.0 - p->eps), 1.0 + p->eps);
        const double z = (r - clipped) * advantage;
        if (z <= 0.0) return 0.0;
        const bool inside = r > 1.0 - p->eps && r < 1.0 + p->eps;
        return inside ? 0.0 : advantage;
    }
    if (const auto* bb = std::get_if<BlackboxDrift>(&d.variant)) {
        auto feats = lpo_featurize(r, advantage);
        std::vector<double> in(feats.begin(), feats.end());
        MlpCache cache;
        mlp_forward(bb->params, in, &cache);
        std::vector<double> pg, ig;
        mlp_backward(bb->params, cache, {1.0}, pg, ig);
        auto dfeat = lpo_featurize_dr(r, advantage);
        double acc = 0.0;
        for (int i = 0; i < 7; ++i) acc += ig[i] * dfeat[i];
        return acc;
    }
    // symbolic: central finite differences in r, on the clamped evaluation
    const double h = 1e-5 * std::max(1.0, std::fabs(r));
    const double lo = std::max(r - h, 1e-12);
    return (drift_eval(d, r + h, advantage) - drift_eval(d, lo, advantage)) / (r + h - lo);
}

MlpParams init_lpo_near_ppo(const MlpSpec& spec, double eps, RngStream& rng,
                            double mse_target, int max_iters) {
    if (spec.layer_widths.front() != 7 || spec.layer_widths.back() != 1)
        throw std::invalid_argument("init_lpo_near_ppo: spec must map 7 -> 1");
    MlpParams params = init_mlp(spec, /*bias_enabled=*/false, rng, 1.0);
    // Regress the pre-activation head; the final ReLU only ever shrinks the
    // error against the nonnegative PPO target and would otherwise gate
    // gradients wherever the head starts negative.
    const Activation out_act = params.spec.output_activation;
    params.spec.output_activation = Activation::Identity;

    auto sample_point = [&](RngStream& r2, double& r, double& a) {
        r = std::exp(r2.normal(0.0, 0.3));
        a = r2.normal(0.0, 1.0);
    };

    // Adam on mean squared error against the PPO drift.
    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
    std::vector<double> m(params.values.size(), 0.0), v(params.values.size(), 0.0);
    const int batch = 64;
    double held_out_mse = 1e18;
    RngStream held_rng = rng.substream(7771);
    std::vector<std::pair<double, double>> held(512);
    for (auto& pt : held) sample_point(held_rng, pt.first, pt.second);

    auto eval_held = [&]() {
        double mse = 0.0;
        for (const auto& [r, a] : held) {
            auto feats = lpo_featurize(r, a);
            std::vector<double> in(feats.begin(), feats.end());
            double y = mlp_forward(params, in)[0];
            if (out_act == Activation::Relu) y = std::max(y, 0.0);
            double t = ppo_clip_drift(r, a, eps);
            mse += (y - t) * (y - t);
        }
        return mse / held.size();
    };

    std::vector<double> grads(params.values.size());
    for (int it = 1; it <= max_iters; ++it) {
        std::fill(grads.begin(), grads.end(), 0.0);
        for (int s = 0; s < batch; ++s) {
            double r, a;
            sample_point(rng, r, a);
            auto feats = lpo_featurize(r, a);
            std::vector<double> in(feats.begin(), feats.end());
            MlpCache cache;
            double y = mlp_forward(params, in, &cache)[0];
            double t = ppo_clip_drift(r, a, eps);
            std::vector<double> pg, ig;
            mlp_backward(params, cache, {2.0 * (y - t) / batch}, pg, ig);
            for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += pg[i];
        }
        for (std::size_t i = 0; i < params.values.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grads[i] * grads[i];
            const double mh = m[i] / (1.0 - std::pow(b1, it));
            const double vh = v[i] / (1.0 - std::pow(b2, it));
            params.values[i] -= lr * mh / (std::sqrt(vh) + adam_eps);
        }
        if (it % 500 == 0) {
            held_out_mse = eval_held();
            if (held_out_mse < mse_target) {
                params.spec.output_activation = out_act;
                return params;
            }
        }
    }
    held_out_mse = eval_held();
    if (held_out_mse >= 1e-3)
        throw std::runtime_error("init_lpo_near_ppo: failed to fit PPO drift, held-out MSE " +
                                 std::to_string(held_out_mse));
    params.spec.output_activation = out_act;
    return params;
}

void save_drift(const DriftFunction& d, const std::string& path) {
    nlohmann::json j;
    if (const auto* p = std::get_if<PpoClipDrift>(&d.variant)) {
        j["kind"] = "ppo_clip";
        j["eps"] = p->eps;
    } else if (const auto* bb = std::get_if<BlackboxDrift>(&d.variant)) {
        j["kind"] = "blackbox";
        const std::string ckpt = path + ".mlp";
        save_checkpoint(bb->params, ckpt);
        j["checkpoint"] = ckpt;
    } else {
        const auto& s = std::get<SymbolicDrift>(d.variant);
        j["kind"] = "symbolic";
        j["expr"] = dsl::print_expr(s.expr);
        j["eps"] = s.eps;
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_drift: cannot open " + path);
    os << j.dump(2) << "\n";
}

DriftFunction load_drift(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_drift: cannot open " + path);
    nlohmann::json j;
    is >> j;
    const std::string kind = j.at("kind");
    if (kind == "ppo_clip") return DriftFunction::ppo_clip(j.at("eps"));
    if (kind == "blackbox") return DriftFunction::blackbox(load_checkpoint(j.at("checkpoint")));
    if (kind == "symbolic")
        return DriftFunction::symbolic(dsl::parse(j.at("expr"), dsl::Signature::drift()),
                                       j.value("eps", 0.2));
    throw std::runtime_error("load_drift: unknown kind '" + kind + "'");
}

} // namespace meta
