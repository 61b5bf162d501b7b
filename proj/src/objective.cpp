#include "fedreg/objective.hpp"

#include <algorithm>
#include <cmath>

#include "fedreg/errors.hpp"
#include "fedreg/network.hpp"

namespace fedreg {

namespace {

// Cosine similarities of one row against its global and previous counterparts, with the
// pieces the gradient reuses. Matches cosine_sim and cosine_sim_grad exactly.
struct RowTerms {
  double na = 0, ng = 0, np = 0, ag = 0, ap = 0;
  double sim_g = 0, sim_p = 0;
};

RowTerms row_terms(std::span<const double> a, std::span<const double> g, std::span<const double> p) {
  RowTerms t;
  t.na = std::sqrt(dot(a, a));
  t.ng = std::sqrt(dot(g, g));
  t.np = std::sqrt(dot(p, p));
  t.ag = dot(a, g);
  t.ap = dot(a, p);
  if (t.na >= kMinNorm && t.ng >= kMinNorm) t.sim_g = std::clamp(t.ag / (t.na * t.ng), -1.0, 1.0);
  if (t.na >= kMinNorm && t.np >= kMinNorm) t.sim_p = std::clamp(t.ap / (t.na * t.np), -1.0, 1.0);
  return t;
}

// da = sg * d sim_g / da + sp * d sim_p / da
void row_grad(const RowTerms& t, std::span<const double> a, std::span<const double> g, std::span<const double> p,
              double sg, double sp, std::span<double> da) {
  double inv_g = 0, self_g = 0, inv_p = 0, self_p = 0;
  if (t.na < kMinNorm || t.ng < kMinNorm) sg = 0;
  else inv_g = 1.0 / (t.na * t.ng), self_g = t.ag * inv_g / (t.na * t.na);
  if (t.na < kMinNorm || t.np < kMinNorm) sp = 0;
  else inv_p = 1.0 / (t.na * t.np), self_p = t.ap * inv_p / (t.na * t.na);
  for (std::size_t i = 0; i < a.size(); ++i)
    da[i] = sg * (g[i] * inv_g - self_g * a[i]) + sp * (p[i] * inv_p - self_p * a[i]);
}

}  // namespace

LocalObjective::LocalObjective(RegConfig config) : config_(config) { config_.validate(); }

bool LocalObjective::needs_global() const noexcept { return config_.variant != Variant::kNone; }

bool LocalObjective::needs_previous() const noexcept {
  return config_.variant == Variant::kFedIntR || config_.variant == Variant::kAvgAblation ||
         config_.variant == Variant::kMoon;
}

std::vector<std::size_t> LocalObjective::active_heads(const Architecture& arch) const {
  std::vector<std::size_t> heads;
  switch (config_.variant) {
    case Variant::kFedIntR:
    case Variant::kAvgAblation:
      for (std::size_t k = 0; k < arch.num_heads(); ++k) heads.push_back(k);
      break;
    case Variant::kMoon:
      heads.push_back(arch.num_heads() - 1);
      break;
    default:
      break;
  }
  return heads;
}

BatchObjective LocalObjective::evaluate(const ModelState& current, const ModelState* global,
                                        const ModelState* previous, const Tensor& x,
                                        std::span<const std::uint32_t> labels, bool with_gradient) const {
  return run(current, global, previous, nullptr, x, labels, with_gradient, {});
}

BatchObjective LocalObjective::evaluate(const ModelState& current, const ModelState* global,
                                        const FrozenRepresentations& frozen, const Tensor& x,
                                        std::span<const std::uint32_t> labels, bool with_gradient) const {
  return run(current, global, nullptr, &frozen, x, labels, with_gradient, {});
}

FrozenRepresentations LocalObjective::frozen_representations(const ModelState& global, const ModelState& previous,
                                                             const Tensor& x) const {
  global.require_compatible(previous, "frozen representations");
  FrozenRepresentations out;
  const auto heads = active_heads(*global.arch);
  if (heads.empty()) return out;
  ForwardResult fg = forward(global, x);
  ForwardResult fp = forward(previous, x);
  for (auto k : heads) {
    out.global.push_back(project(global, k, fg.extraction[k]).z);
    out.previous.push_back(project(previous, k, fp.extraction[k]).z);
  }
  return out;
}

double LocalObjective::evaluate_with_fixed_alphas(const ModelState& current, const ModelState& global,
                                                  const ModelState& previous, const Tensor& x,
                                                  std::span<const std::uint32_t> labels,
                                                  std::span<const double> alphas) const {
  return run(current, &global, &previous, nullptr, x, labels, false, alphas).total;
}

BatchObjective LocalObjective::run(const ModelState& current, const ModelState* global, const ModelState* previous,
                                   const FrozenRepresentations* frozen, const Tensor& x,
                                   std::span<const std::uint32_t> labels, bool with_gradient,
                                   std::span<const double> fixed_alphas) const {
  if (config_.variant == Variant::kFedProx && !global)
    throw ConfigError("local objective: fedprox requires the global model");
  if (needs_previous() && !previous && !frozen)
    throw ConfigError("local objective: variant requires the global and previous models");
  if (global) current.require_compatible(*global, "local objective");
  if (previous) current.require_compatible(*previous, "local objective");

  const Architecture& arch = *current.arch;
  BatchObjective out;
  ForwardResult fwd = forward(current, x);
  CrossEntropy ce = cross_entropy(fwd.logits, labels);
  out.supervised = ce.loss;

  const auto heads = active_heads(arch);
  const std::size_t b = x.shape[0];
  const double tau = config_.tau;

  std::vector<Projection> z(heads.size());
  FrozenRepresentations computed;
  const FrozenRepresentations* reps = frozen;
  // Per head and row: |z|, |z_g|, |z_p|, z.z_g, z.z_p
  std::vector<std::vector<RowTerms>> terms(heads.size());
  if (!heads.empty()) {
    if (frozen) {
      if (frozen->global.size() != heads.size() || frozen->previous.size() != heads.size())
        throw ConfigError("local objective: frozen representations do not match the active heads");
    } else {
      if (!global) throw ConfigError("local objective: variant requires the global model");
      computed = frozen_representations(*global, *previous, x);
      reps = &computed;
    }
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const std::size_t k = heads[h];
      z[h] = project(current, k, fwd.extraction[k]);
      const Tensor& zg = reps->global[h];
      const Tensor& zp = reps->previous[h];
      if (zg.shape != z[h].z.shape || zp.shape != z[h].z.shape)
        throw ConfigError("local objective: frozen representation shape mismatch");
      terms[h].resize(b);
      double loss = 0.0, mean = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        RowTerms& t = terms[h][i];
        t = row_terms(z[h].z.row(i), zg.row(i), zp.row(i));
        loss += layer_loss(t.sim_g, t.sim_p, tau);
        mean += t.sim_g;
      }
      out.layer_losses.push_back(b ? loss / static_cast<double>(b) : 0.0);
      out.mean_sims.push_back(b ? mean / static_cast<double>(b) : 0.0);
    }
    if (config_.variant == Variant::kFedIntR) {
      if (!fixed_alphas.empty()) {
        if (fixed_alphas.size() != heads.size()) throw ConfigError("fixed alphas: length mismatch");
        out.alphas.assign(fixed_alphas.begin(), fixed_alphas.end());
      } else {
        out.alphas = layer_weights(out.mean_sims, tau);
      }
    }
  }

  out.total = compose_local_loss(out.supervised, out.layer_losses, out.alphas, config_);
  if (config_.variant == Variant::kFedProx) out.total += prox_term(current, *global, config_.mu);
  if (!std::isfinite(out.total)) throw NumericError("local objective: non-finite loss");
  if (!with_gradient) return out;

  out.grads = ModelState::zeros(current.arch);
  std::vector<Tensor> d_extraction(arch.num_heads());
  if (!heads.empty()) {
    const double inv_b = 1.0 / static_cast<double>(b);
    double weighted = 0.0;  // sum_k alpha_k l_k, for the differentiable-alpha path
    for (std::size_t h = 0; h < out.alphas.size(); ++h) weighted += out.alphas[h] * out.layer_losses[h];
    for (std::size_t h = 0; h < heads.size(); ++h) {
      double coeff = 0.0;  // dL / d l_k
      switch (config_.variant) {
        case Variant::kFedIntR: coeff = config_.mu * out.alphas[h]; break;
        case Variant::kAvgAblation: coeff = config_.mu / static_cast<double>(heads.size()); break;
        case Variant::kMoon: coeff = config_.mu; break;
        default: break;
      }
      // dL / d mean_sim_k through the softmax weights.
      double alpha_path = 0.0;
      if (config_.variant == Variant::kFedIntR && config_.differentiable_alpha && fixed_alphas.empty())
        alpha_path = config_.mu / tau * out.alphas[h] * (out.layer_losses[h] - weighted);

      Tensor dz(z[h].z.shape);
      for (std::size_t i = 0; i < b; ++i) {
        const RowTerms& t = terms[h][i];
        const double u = (t.sim_p - t.sim_g) / tau;
        const double sig = 1.0 / (1.0 + std::exp(-u));
        const double d_sim_g = coeff * (-sig / tau) * inv_b + alpha_path * inv_b;
        const double d_sim_p = coeff * (sig / tau) * inv_b;
        row_grad(t, z[h].z.row(i), reps->global[h].row(i), reps->previous[h].row(i), d_sim_g, d_sim_p, dz.row(i));
      }
      const std::size_t k = heads[h];
      project_backward(current, k, fwd.extraction[k], z[h], dz, out.grads, &d_extraction[k]);
    }
  }
  backward_accumulate(current, fwd.trace, ce.grad, d_extraction, out.grads);
  if (config_.variant == Variant::kFedProx) prox_grad_accumulate(current, *global, config_.mu, out.grads);
  return out;
}

}  // namespace fedreg
