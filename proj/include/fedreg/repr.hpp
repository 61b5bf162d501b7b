#pragma once

// Representation terms of the local objective: projection heads, cosine similarity,
// the per-layer model-contrastive loss, similarity-softmax layer weights and the
// composed local losses for each regularizer variant.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedreg/model.hpp"
#include "fedreg/tensor.hpp"

namespace fedreg {

enum class Variant {
  kNone,         // plain supervised loss (FedAvg)
  kFedIntR,      // similarity-weighted sum over all extraction points
  kAvgAblation,  // unweighted mean over all extraction points
  kMoon,         // contrastive term at the last extraction point only
  kFedProx,      // proximal term to the global model
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct RegConfig {
  double mu = 1.0;
  double tau = 0.5;
  Variant variant = Variant::kNone;
  /// Backpropagate through the layer weights instead of treating them as constants.
  bool differentiable_alpha = false;

  void validate() const;
  friend bool operator==(const RegConfig&, const RegConfig&) = default;
};

/// Hidden activations are kept for the backward pass.
struct Projection {
  Tensor hidden;  // B x hidden, post-ReLU
  Tensor z;       // B x output_dim
};

/// z = W2 ReLU(W1 x + b1) + b2 using head `head` of `state`. `x` is B x input_dim.
Projection project(const ModelState& state, std::size_t head, const Tensor& x);

/// Adds head parameter gradients into `grads`; writes dL/dx into `dx` when non-null.
void project_backward(const ModelState& state, std::size_t head, const Tensor& x, const Projection& p,
                      const Tensor& dz, ModelState& grads, Tensor* dx);

/// Norms below this are treated as zero vectors; similarity with a zero vector is 0.
inline constexpr double kMinNorm = 1e-12;

/// Inner product with a fixed summation order.
double dot(std::span<const double> a, std::span<const double> b);

double cosine_sim(std::span<const double> a, std::span<const double> b);

/// da += scale * d cosine_sim(a, b) / da. No-op for degenerate inputs.
void cosine_sim_grad(std::span<const double> a, std::span<const double> b, double scale, std::span<double> da);

/// -log( e^{s_g/tau} / (e^{s_g/tau} + e^{s_p/tau}) ) for a single sample.
double layer_loss(double sim_global, double sim_prev, double tau);

/// Batch mean of the per-sample loss for rows of z, z_global, z_prev.
double layer_loss(const Tensor& z, const Tensor& z_global, const Tensor& z_prev, double tau);

/// softmax(sims / tau).
std::vector<double> layer_weights(std::span<const double> sims, double tau);

/// Local loss for the configured variant. `layer_losses` holds the K contrastive
/// losses (for kMoon only the last one is used); `alphas` is consulted by kFedIntR only.
/// kFedProx and kNone return `supervised` (the proximal term depends on parameters,
/// see prox_term).
double compose_local_loss(double supervised, std::span<const double> layer_losses, std::span<const double> alphas,
                          const RegConfig& config);

/// (mu/2) * ||w - w_global||^2 over all parameters.
double prox_term(const ModelState& w, const ModelState& w_global, double mu);

/// grads += mu * (w - w_global).
void prox_grad_accumulate(const ModelState& w, const ModelState& w_global, double mu, ModelState& grads);

}  // namespace fedreg
