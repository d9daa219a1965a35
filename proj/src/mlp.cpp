#include "meta/mlp.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace meta {

namespace {

double activate(Activation act, double x) {
    switch (act) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Tanh: return std::tanh(x);
    }
    return x;
}

double activate_grad(Activation act, double pre, double post) {
    switch (act) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - post * post;
    }
    return 1.0;
}

} // namespace

void MlpSpec::validate() const {
    if (layer_widths.size() < 2)
        throw std::invalid_argument("MlpSpec: need at least input and output widths");
    for (int w : layer_widths)
        if (w < 1) throw std::invalid_argument("MlpSpec: all widths must be >= 1");
}

std::size_t MlpParams::value_count(const MlpSpec& spec, bool bias_enabled) {
    std::size_t n = 0;
    for (int l = 0; l < spec.n_layers(); ++l) {
        n += static_cast<std::size_t>(spec.layer_widths[l]) * spec.layer_widths[l + 1];
        if (bias_enabled) n += spec.layer_widths[l + 1];
    }
    return n;
}

void MlpParams::validate() const {
    spec.validate();
    if (values.size() != value_count(spec, bias_enabled))
        throw std::invalid_argument("MlpParams: values length does not match spec");
    if (!all_finite(values))
        throw std::invalid_argument("MlpParams: non-finite parameter value");
}

std::size_t MlpParams::weight_offset(int layer) const {
    std::size_t off = 0;
    for (int l = 0; l < layer; ++l) {
        off += static_cast<std::size_t>(spec.layer_widths[l]) * spec.layer_widths[l + 1];
        if (bias_enabled) off += spec.layer_widths[l + 1];
    }
    return off;
}

std::size_t MlpParams::bias_offset(int layer) const {
    return weight_offset(layer) +
           static_cast<std::size_t>(spec.layer_widths[layer]) * spec.layer_widths[layer + 1];
}

MlpParams init_mlp(const MlpSpec& spec, bool bias_enabled, RngStream& rng, double scale) {
    spec.validate();
    MlpParams p;
    p.spec = spec;
    p.bias_enabled = bias_enabled;
    p.values.resize(MlpParams::value_count(spec, bias_enabled));
    std::size_t idx = 0;
    for (int l = 0; l < spec.n_layers(); ++l) {
        const int in = spec.layer_widths[l];
        const int out = spec.layer_widths[l + 1];
        const double sd = scale / std::sqrt(static_cast<double>(in));
        for (int i = 0; i < out * in; ++i) p.values[idx++] = rng.normal(0.0, sd);
        if (bias_enabled)
            for (int i = 0; i < out; ++i) p.values[idx++] = 0.0;
    }
    return p;
}

std::vector<double> mlp_forward(const MlpParams& params, const std::vector<double>& input,
                                MlpCache* cache) {
    const MlpSpec& spec = params.spec;
    if (static_cast<int>(input.size()) != spec.layer_widths[0])
        throw std::invalid_argument("mlp_forward: input length " + std::to_string(input.size()) +
                                    " does not match layer 0 width " +
                                    std::to_string(spec.layer_widths[0]));
    const int L = spec.n_layers();
    if (cache) {
        cache->pre.assign(L, {});
        cache->post.assign(L + 1, {});
        cache->post[0] = input;
    }
    std::vector<double> cur = input;
    for (int l = 0; l < L; ++l) {
        const int in = spec.layer_widths[l];
        const int out = spec.layer_widths[l + 1];
        const double* w = params.values.data() + params.weight_offset(l);
        const double* b = params.bias_enabled ? params.values.data() + params.bias_offset(l) : nullptr;
        std::vector<double> pre(out);
        for (int i = 0; i < out; ++i) {
            double acc = b ? b[i] : 0.0;
            const double* row = w + static_cast<std::size_t>(i) * in;
            for (int j = 0; j < in; ++j) acc += row[j] * cur[j];
            pre[i] = acc;
        }
        const Activation act = (l == L - 1) ? spec.output_activation : spec.hidden_activation;
        std::vector<double> post(out);
        for (int i = 0; i < out; ++i) post[i] = activate(act, pre[i]);
        if (cache) {
            cache->pre[l] = pre;
            cache->post[l + 1] = post;
        }
        cur = std::move(post);
    }
    return cur;
}

void mlp_backward(const MlpParams& params, const MlpCache& cache,
                  const std::vector<double>& upstream_grad,
                  std::vector<double>& param_grads, std::vector<double>& input_grad) {
    const MlpSpec& spec = params.spec;
    const int L = spec.n_layers();
    if (static_cast<int>(cache.pre.size()) != L ||
        static_cast<int>(cache.post.size()) != L + 1 ||
        static_cast<int>(cache.post[0].size()) != spec.layer_widths[0])
        throw std::invalid_argument("mlp_backward: cache does not match params");
    if (static_cast<int>(upstream_grad.size()) != spec.layer_widths[L])
        throw std::invalid_argument("mlp_backward: upstream_grad length mismatch");

    param_grads.assign(params.values.size(), 0.0);
    std::vector<double> delta = upstream_grad;
    for (int l = L - 1; l >= 0; --l) {
        const int in = spec.layer_widths[l];
        const int out = spec.layer_widths[l + 1];
        const Activation act = (l == L - 1) ? spec.output_activation : spec.hidden_activation;
        for (int i = 0; i < out; ++i)
            delta[i] *= activate_grad(act, cache.pre[l][i], cache.post[l + 1][i]);

        const double* w = params.values.data() + params.weight_offset(l);
        double* wg = param_grads.data() + params.weight_offset(l);
        const std::vector<double>& x = cache.post[l];
        for (int i = 0; i < out; ++i) {
            double* row = wg + static_cast<std::size_t>(i) * in;
            for (int j = 0; j < in; ++j) row[j] += delta[i] * x[j];
        }
        if (params.bias_enabled) {
            double* bg = param_grads.data() + params.bias_offset(l);
            for (int i = 0; i < out; ++i) bg[i] += delta[i];
        }
        std::vector<double> prev(in, 0.0);
        for (int i = 0; i < out; ++i) {
            const double* row = w + static_cast<std::size_t>(i) * in;
            for (int j = 0; j < in; ++j) prev[j] += row[j] * delta[i];
        }
        delta = std::move(prev);
    }
    input_grad = std::move(delta);
}

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

std::vector<double> clip_global_norm(const std::vector<double>& grads, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
    if (!all_finite(grads)) throw std::invalid_argument("clip_global_norm: non-finite input");
    double n = l2_norm(grads);
    if (n <= max_norm) return grads;
    std::vector<double> out(grads.size());
    const double s = max_norm / n;
    for (std::size_t i = 0; i < grads.size(); ++i) out[i] = grads[i] * s;
    return out;
}

namespace {
constexpr char kMagic[8] = {'M', 'L', 'P', 'C', 'K', 'P', 'T', '1'};

template <typename T> void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T> T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}
} // namespace

void save_checkpoint(const MlpParams& params, const std::string& path) {
    params.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kMagic, sizeof(kMagic));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.spec.layer_widths.size()));
    for (int w : params.spec.layer_widths) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(params.spec.hidden_activation));
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(params.spec.output_activation));
    write_le<std::uint8_t>(os, params.bias_enabled ? 1 : 0);
    write_le<std::uint64_t>(os, static_cast<std::uint64_t>(params.values.size()));
    for (double v : params.values) write_le<double>(os, v);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

MlpParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    MlpParams p;
    auto n_widths = read_le<std::uint32_t>(is);
    p.spec.layer_widths.resize(n_widths);
    for (auto& w : p.spec.layer_widths) w = static_cast<int>(read_le<std::uint32_t>(is));
    p.spec.hidden_activation = static_cast<Activation>(read_le<std::uint8_t>(is));
    p.spec.output_activation = static_cast<Activation>(read_le<std::uint8_t>(is));
    p.bias_enabled = read_le<std::uint8_t>(is) != 0;
    auto count = read_le<std::uint64_t>(is);
    p.values.resize(count);
    for (auto& v : p.values) v = read_le<double>(is);
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
    p.validate();
    return p;
}

} // namespace meta
