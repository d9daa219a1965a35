#include "meta/optimizer.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace meta {

void OptimState::reset(std::size_t n_params) {
    for (auto& m : momenta) m.assign(n_params, 0.0);
    adam_m.assign(n_params, 0.0);
    adam_v.assign(n_params, 0.0);
    iteration = 0;
}

UpdateRule UpdateRule::sgd(double lr) {
    if (lr <= 0.0) throw std::invalid_argument("sgd: lr must be > 0");
    return UpdateRule{SgdRule{lr}, {}};
}

UpdateRule UpdateRule::adam(double lr, double b1, double b2, double eps) {
    if (lr <= 0.0) throw std::invalid_argument("adam: lr must be > 0");
    return UpdateRule{AdamRule{lr, b1, b2, eps}, {}};
}

UpdateRule UpdateRule::learned_blackbox(MlpParams params, FeatureSet fs,
                                        double output_scale, double noise_scale) {
    if (params.spec.layer_widths.front() != feature_count(fs) ||
        params.spec.layer_widths.back() != 1)
        throw std::invalid_argument("learned_blackbox: net must map " +
                                    std::to_string(feature_count(fs)) + " features to 1 output");
    return UpdateRule{LearnedBlackboxRule{std::move(params), fs, output_scale, noise_scale}, {}};
}

UpdateRule UpdateRule::symbolic(dsl::ExprPtr expr, double lr) {
    return UpdateRule{SymbolicRule{std::move(expr), lr}, {}};
}

void update_momenta(OptimState& state, const std::vector<double>& grads) {
    for (std::size_t k = 0; k < kMomentumCoeffs.size(); ++k) {
        const double beta = kMomentumCoeffs[k];
        auto& m = state.momenta[k];
        if (m.size() != grads.size())
            throw std::invalid_argument("update_momenta: state not aligned with grads");
        for (std::size_t i = 0; i < grads.size(); ++i)
            m[i] = beta * grads[i] + (1.0 - beta) * m[i];
    }
}

std::vector<double> dormancy_scores(const std::vector<std::vector<double>>& hidden_activations) {
    if (hidden_activations.empty()) return {};
    const std::size_t width = hidden_activations.front().size();
    std::vector<double> means(width, 0.0);
    for (const auto& row : hidden_activations) {
        if (row.size() != width)
            throw std::invalid_argument("dormancy_scores: ragged activation matrix");
        for (std::size_t i = 0; i < width; ++i) means[i] += std::fabs(row[i]);
    }
    double total = 0.0;
    for (double& m : means) {
        m /= hidden_activations.size();
        total += m;
    }
    const double layer_mean = total / width;
    std::vector<double> scores(width, 0.0);
    if (layer_mean > 0.0)
        for (std::size_t i = 0; i < width; ++i) scores[i] = means[i] / layer_mean;
    return scores;
}

std::array<double, kOpenFeatureCount> open_featurize(double p, double g,
                                                     const std::array<double, 6>& momenta,
                                                     double t_p, double b_p, double dorm,
                                                     double l_p) {
    constexpr double eps = 1e-8;
    auto sgn = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };
    std::array<double, kOpenFeatureCount> out{};
    out[0] = p;
    out[1] = std::log(std::fabs(g) + eps);
    out[2] = sgn(g);
    for (int k = 0; k < 6; ++k) {
        out[3 + 2 * k] = std::log(std::fabs(momenta[k]) + eps);
        out[4 + 2 * k] = sgn(momenta[k]);
    }
    out[15] = t_p;
    out[16] = b_p;
    out[17] = dorm;
    out[18] = l_p;
    return out;
}

int feature_count(FeatureSet fs) {
    return fs == FeatureSet::OpenFf ? kOpenFeatureCount : kNoFeaturesCount;
}

void apply_update_rule(UpdateRule& rule, std::vector<double>& params,
                       const std::vector<double>& grads, const UpdateContext& ctx) {
    const std::size_t n = params.size();
    if (grads.size() != n) throw std::invalid_argument("apply_update_rule: size mismatch");
    if (rule.state.momenta[0].size() != n) rule.state.reset(n);

    update_momenta(rule.state, grads);
    rule.state.iteration += 1;
    const double anneal = std::max(0.0, 1.0 - ctx.t_p);

    if (const auto* sgd = std::get_if<SgdRule>(&rule.variant)) {
        const double lr_t = sgd->lr * anneal;
        for (std::size_t i = 0; i < n; ++i) params[i] -= lr_t * grads[i];
        return;
    }
    if (const auto* adam = std::get_if<AdamRule>(&rule.variant)) {
        const double lr_t = adam->lr * anneal;
        const long t = rule.state.iteration;
        auto& m = rule.state.adam_m;
        auto& v = rule.state.adam_v;
        const double bc1 = 1.0 - std::pow(adam->beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(adam->beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = adam->beta1 * m[i] + (1.0 - adam->beta1) * grads[i];
            v[i] = adam->beta2 * v[i] + (1.0 - adam->beta2) * grads[i] * grads[i];
            params[i] -= lr_t * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + adam->eps);
        }
        return;
    }
    if (const auto* lb = std::get_if<LearnedBlackboxRule>(&rule.variant)) {
        for (std::size_t i = 0; i < n; ++i) {
            std::array<double, 6> mom;
            for (int k = 0; k < 6; ++k) mom[k] = rule.state.momenta[k][i];
            auto feats = open_featurize(params[i], grads[i], mom, ctx.t_p, ctx.b_p,
                                        ctx.dorm[i], ctx.l_p[i]);
            std::vector<double> in;
            if (lb->feature_set == FeatureSet::OpenFf)
                in.assign(feats.begin(), feats.end());
            else
                in.assign(feats.begin(), feats.begin() + kNoFeaturesCount);
            const double out = mlp_forward(lb->params, in)[0];
            const double step = lb->output_scale * (out + lb->noise_scale * ctx.rand[i]);
            params[i] -= step;
            if (!std::isfinite(params[i]))
                throw std::runtime_error("apply_update_rule: non-finite parameter after update");
        }
        return;
    }
    const auto& sym = std::get<SymbolicRule>(rule.variant);
    dsl::Bindings b;
    b["lr"] = sym.lr * anneal;
    b["t_p"] = ctx.t_p;
    b["b_p"] = ctx.b_p;
    b["iteration"] = static_cast<double>(rule.state.iteration);
    for (std::size_t i = 0; i < n; ++i) {
        b["p"] = params[i];
        b["g"] = grads[i];
        b["m_0_1"] = rule.state.momenta[0][i];
        b["m_0_5"] = rule.state.momenta[1][i];
        b["m_0_9"] = rule.state.momenta[2][i];
        b["m_0_99"] = rule.state.momenta[3][i];
        b["m_0_999"] = rule.state.momenta[4][i];
        b["m_0_9999"] = rule.state.momenta[5][i];
        b["l_p"] = ctx.l_p[i];
        b["dorm"] = ctx.dorm[i];
        b["rand"] = ctx.rand[i];
        params[i] -= dsl::eval_expr(sym.expr, b);
        if (!std::isfinite(params[i]))
            throw std::runtime_error("apply_update_rule: non-finite parameter after update");
    }
}

void save_update_rule(const UpdateRule& rule, const std::string& path) {
    nlohmann::json j;
    if (const auto* sgd = std::get_if<SgdRule>(&rule.variant)) {
        j["kind"] = "sgd";
        j["lr"] = sgd->lr;
    } else if (const auto* adam = std::get_if<AdamRule>(&rule.variant)) {
        j["kind"] = "adam";
        j["lr"] = adam->lr;
        j["beta1"] = adam->beta1;
        j["beta2"] = adam->beta2;
        j["eps"] = adam->eps;
    } else if (const auto* lb = std::get_if<LearnedBlackboxRule>(&rule.variant)) {
        j["kind"] = "learned_blackbox";
        j["feature_set"] = lb->feature_set == FeatureSet::OpenFf ? "open_ff" : "no_features";
        j["output_scale"] = lb->output_scale;
        j["noise_scale"] = lb->noise_scale;
        const std::string ckpt = path + ".mlp";
        save_checkpoint(lb->params, ckpt);
        j["checkpoint"] = ckpt;
    } else {
        const auto& sym = std::get<SymbolicRule>(rule.variant);
        j["kind"] = "symbolic";
        j["expr"] = dsl::print_expr(sym.expr);
        j["lr"] = sym.lr;
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_update_rule: cannot open " + path);
    os << j.dump(2) << "\n";
}

UpdateRule load_update_rule(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_update_rule: cannot open " + path);
    nlohmann::json j;
    is >> j;
    const std::string kind = j.at("kind");
    if (kind == "sgd") return UpdateRule::sgd(j.at("lr"));
    if (kind == "adam")
        return UpdateRule::adam(j.at("lr"), j.at("beta1"), j.at("beta2"), j.at("eps"));
    if (kind == "learned_blackbox") {
        FeatureSet fs = j.at("feature_set") == "open_ff" ? FeatureSet::OpenFf
                                                         : FeatureSet::NoFeatures;
        return UpdateRule::learned_blackbox(load_checkpoint(j.at("checkpoint")), fs,
                                            j.at("output_scale"), j.at("noise_scale"));
    }
    if (kind == "symbolic")
        return UpdateRule::symbolic(dsl::parse(j.at("expr"), dsl::Signature::optimizer()),
                                    j.at("lr"));
    throw std::runtime_error("load_update_rule: unknown kind '" + kind + "'");
}

} // namespace meta
