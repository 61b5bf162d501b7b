#include "fedreg/repr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedreg/errors.hpp"
#include "fedreg/kernels.hpp"

namespace fedreg {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kNone: return "none";
    case Variant::kFedIntR: return "fedintr";
    case Variant::kAvgAblation: return "avg_ablation";
    case Variant::kMoon: return "moon";
    case Variant::kFedProx: return "fedprox";
  }
  return "none";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::kNone, Variant::kFedIntR, Variant::kAvgAblation, Variant::kMoon, Variant::kFedProx})
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown regularizer variant '" + std::string(name) + "'");
}

void RegConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be > 0");
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be >= 0");
}

Projection project(const ModelState& state, std::size_t head, const Tensor& x) {
  const Architecture& arch = *state.arch;
  if (head >= arch.num_heads()) throw ConfigError("project: head index out of range");
  const auto& h = arch.head(head);
  if (x.rank() != 2 || x.shape[1] != h.input_dim)
    throw ConfigError("project: input dim does not match head " + std::to_string(head));
  const std::size_t b = x.shape[0];
  Projection p{Tensor({b, h.hidden_dim}), Tensor({b, h.output_dim})};
  kernels::dense_forward({b, h.input_dim, h.hidden_dim}, x.data, state.slot(arch.head_param(head, 0)),
                         state.slot(arch.head_param(head, 1)), p.hidden.data, true);
  kernels::dense_forward({b, h.hidden_dim, h.output_dim}, p.hidden.data, state.slot(arch.head_param(head, 2)),
                         state.slot(arch.head_param(head, 3)), p.z.data, false);
  if (!p.z.all_finite()) throw NumericError("project: non-finite representation in head " + std::to_string(head));
  return p;
}

void project_backward(const ModelState& state, std::size_t head, const Tensor& x, const Projection& p,
                      const Tensor& dz, ModelState& grads, Tensor* dx) {
  const Architecture& arch = *state.arch;
  state.require_compatible(grads, "project_backward");
  const auto& h = arch.head(head);
  const std::size_t b = x.shape[0];
  if (dz.size() != b * h.output_dim) throw ConfigError("project_backward: dz shape mismatch");
  Tensor dhidden({b, h.hidden_dim});
  kernels::dense_backward({b, h.hidden_dim, h.output_dim}, p.hidden.data, state.slot(arch.head_param(head, 2)), dz.data,
                          grads.slot(arch.head_param(head, 2)), grads.slot(arch.head_param(head, 3)), dhidden.data);
  for (std::size_t j = 0; j < dhidden.size(); ++j)
    if (p.hidden.data[j] <= 0.0) dhidden.data[j] = 0.0;
  std::span<double> dx_span;
  if (dx) {
    *dx = Tensor({b, h.input_dim});
    dx_span = dx->data;
  }
  kernels::dense_backward({b, h.input_dim, h.hidden_dim}, x.data, state.slot(arch.head_param(head, 0)), dhidden.data,
                          grads.slot(arch.head_param(head, 0)), grads.slot(arch.head_param(head, 1)), dx_span);
}

double dot(std::span<const double> a, std::span<const double> b) {
  // Independent partial sums let the loop vectorize without reassociation flags.
  constexpr std::size_t kLanes = 16;
  double acc[kLanes] = {};
  const std::size_t n = a.size(), body = n - n % kLanes;
  for (std::size_t i = 0; i < body; i += kLanes)
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += a[i + j] * b[i + j];
  for (std::size_t i = body; i < n; ++i) acc[i - body] += a[i] * b[i];
  for (std::size_t w = kLanes / 2; w > 0; w /= 2)
    for (std::size_t j = 0; j < w; ++j) acc[j] += acc[j + w];
  return acc[0];
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("cosine_sim: length mismatch");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na < kMinNorm || nb < kMinNorm) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

void cosine_sim_grad(std::span<const double> a, std::span<const double> b, double scale, std::span<double> da) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na < kMinNorm || nb < kMinNorm) return;
  const double ab = dot(a, b);
  const double inv = 1.0 / (na * nb);
  const double self = ab * inv / (na * na);
  for (std::size_t i = 0; i < a.size(); ++i) da[i] += scale * (b[i] * inv - self * a[i]);
}

double layer_loss(double sim_global, double sim_prev, double tau) {
  if (!(tau > 0.0)) throw InputError("layer_loss: tau must be > 0");
  // -log(e^g / (e^g + e^p)) = softplus(p - g)
  const double u = (sim_prev - sim_global) / tau;
  const double l = u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
  if (!std::isfinite(l)) throw NumericError("layer_loss: non-finite value");
  return l;
}

double layer_loss(const Tensor& z, const Tensor& z_global, const Tensor& z_prev, double tau) {
  if (z.shape != z_global.shape || z.shape != z_prev.shape || z.rank() != 2)
    throw ConfigError("layer_loss: representation shapes differ");
  const std::size_t b = z.shape[0];
  if (b == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    total += layer_loss(cosine_sim(z.row(i), z_global.row(i)), cosine_sim(z.row(i), z_prev.row(i)), tau);
  return total / static_cast<double>(b);
}

std::vector<double> layer_weights(std::span<const double> sims, double tau) {
  if (!(tau > 0.0)) throw InputError("layer_weights: tau must be > 0");
  if (sims.empty()) throw InputError("layer_weights: need at least one layer");
  const double m = *std::max_element(sims.begin(), sims.end());
  std::vector<double> a(sims.size());
  double total = 0.0;
  for (std::size_t k = 0; k < sims.size(); ++k) total += a[k] = std::exp((sims[k] - m) / tau);
  for (double& v : a) v /= total;
  return a;
}

double compose_local_loss(double supervised, std::span<const double> layer_losses, std::span<const double> alphas,
                          const RegConfig& config) {
  switch (config.variant) {
    case Variant::kNone:
    case Variant::kFedProx:
      return supervised;
    case Variant::kFedIntR: {
      if (layer_losses.size() != alphas.size() || layer_losses.empty())
        throw ConfigError("compose_local_loss: fedintr needs one alpha per layer loss");
      double reg = 0.0;
      for (std::size_t k = 0; k < layer_losses.size(); ++k) reg += alphas[k] * layer_losses[k];
      return supervised + config.mu * reg;
    }
    case Variant::kAvgAblation: {
      if (layer_losses.empty()) throw ConfigError("compose_local_loss: avg_ablation needs layer losses");
      const double sum = std::accumulate(layer_losses.begin(), layer_losses.end(), 0.0);
      return supervised + config.mu / static_cast<double>(layer_losses.size()) * sum;
    }
    case Variant::kMoon:
      if (layer_losses.empty()) throw ConfigError("compose_local_loss: moon needs the final layer loss");
      return supervised + config.mu * layer_losses.back();
  }
  throw ConfigError("compose_local_loss: unknown variant");
}

double prox_term(const ModelState& w, const ModelState& w_global, double mu) {
  w.require_compatible(w_global, "prox_term");
  double sq = 0.0;
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    const double d = w.params[i] - w_global.params[i];
    sq += d * d;
  }
  return 0.5 * mu * sq;
}

void prox_grad_accumulate(const ModelState& w, const ModelState& w_global, double mu, ModelState& grads) {
  w.require_compatible(w_global, "prox_term");
  w.require_compatible(grads, "prox_term");
  for (std::size_t i = 0; i < w.params.size(); ++i) grads.params[i] += mu * (w.params[i] - w_global.params[i]);
}

}  // namespace fedreg
