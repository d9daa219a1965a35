#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "meta/rng.hpp"

namespace meta {

enum class Activation { Identity, Relu, Tanh };

struct MlpSpec {
    std::vector<int> layer_widths;       // input, hidden..., output
    Activation hidden_activation = Activation::Relu;
    Activation output_activation = Activation::Identity;

    int n_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
    void validate() const;
};

struct MlpParams {
    MlpSpec spec;
    std::vector<double> values;          // per layer: row-major weights, then bias
    bool bias_enabled = true;

    static std::size_t value_count(const MlpSpec& spec, bool bias_enabled);
    void validate() const;

    // Offset of layer l's weight block; bias follows the weights.
    std::size_t weight_offset(int layer) const;
    std::size_t bias_offset(int layer) const;
};

// Gaussian init scaled by 1/sqrt(fan_in); biases zero.
MlpParams init_mlp(const MlpSpec& spec, bool bias_enabled, RngStream& rng, double scale = 1.0);

// Orthogonal-free small init used for agent nets.
struct MlpCache {
    std::vector<std::vector<double>> pre;   // pre-activation per layer
    std::vector<std::vector<double>> post;  // post-activation per layer (post[0] is the input)
};

std::vector<double> mlp_forward(const MlpParams& params, const std::vector<double>& input,
                                MlpCache* cache = nullptr);

// Gradients w.r.t. every parameter and the input, given upstream d(loss)/d(output).
// `cache` must come from a forward call with the same params.
void mlp_backward(const MlpParams& params, const MlpCache& cache,
                  const std::vector<double>& upstream_grad,
                  std::vector<double>& param_grads, std::vector<double>& input_grad);

// Scales the vector so its L2 norm is at most max_norm; direction preserved.
std::vector<double> clip_global_norm(const std::vector<double>& grads, double max_norm);

double l2_norm(const std::vector<double>& v);
bool all_finite(const std::vector<double>& v);

// Self-describing binary checkpoint (little-endian doubles). See README for layout.
void save_checkpoint(const MlpParams& params, const std::string& path);
MlpParams load_checkpoint(const std::string& path);

} // namespace meta
