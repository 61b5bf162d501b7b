#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedreg/model.hpp"
#include "fedreg/repr.hpp"
#include "fedreg/tensor.hpp"

namespace fedreg {

struct BatchObjective {
  double total = 0.0;
  double supervised = 0.0;
  /// Contrastive loss per active extraction point (all K for fedintr/avg_ablation,
  /// the last one only for moon, empty otherwise).
  std::vector<double> layer_losses;
  /// Layer weights used by fedintr; empty for other variants.
  std::vector<double> alphas;
  /// Batch-mean sim(z^k, z_g^k) per active extraction point.
  std::vector<double> mean_sims;
  /// Gradient w.r.t. the current model only. Empty params when not requested.
  ModelState grads;
};

/// Projected representations of the frozen global and previous models for one batch,
/// one B x output_dim tensor per active head.
struct FrozenRepresentations {
  std::vector<Tensor> global;
  std::vector<Tensor> previous;
};

/// The local training loss for one batch: cross entropy plus the configured regularizer.
/// The global and previous models are read-only; no gradient is formed for them.
class LocalObjective {
 public:
  explicit LocalObjective(RegConfig config);

  const RegConfig& config() const noexcept { return config_; }
  bool needs_global() const noexcept;
  bool needs_previous() const noexcept;

  BatchObjective evaluate(const ModelState& current, const ModelState* global, const ModelState* previous,
                          const Tensor& x, std::span<const std::uint32_t> labels, bool with_gradient = true) const;

  /// As above with the frozen models' representations supplied by the caller.
  BatchObjective evaluate(const ModelState& current, const ModelState* global, const FrozenRepresentations& frozen,
                          const Tensor& x, std::span<const std::uint32_t> labels, bool with_gradient = true) const;

  /// Representations of `global` and `previous` on `x` for the active heads (empty when the
  /// variant has no contrastive term).
  FrozenRepresentations frozen_representations(const ModelState& global, const ModelState& previous,
                                               const Tensor& x) const;

  /// Loss only, with the layer weights pinned to `alphas` instead of recomputed from the batch.
  /// Finite-difference checks of the frozen-weight gradient use this.
  double evaluate_with_fixed_alphas(const ModelState& current, const ModelState& global, const ModelState& previous,
                                    const Tensor& x, std::span<const std::uint32_t> labels,
                                    std::span<const double> alphas) const;

  /// Extraction points (head indices) contributing to the regularizer for `arch`.
  std::vector<std::size_t> active_heads(const Architecture& arch) const;

 private:
  BatchObjective run(const ModelState& current, const ModelState* global, const ModelState* previous,
                     const FrozenRepresentations* frozen, const Tensor& x, std::span<const std::uint32_t> labels,
                     bool with_gradient, std::span<const double> fixed_alphas) const;

  RegConfig config_;
};

}  // namespace fedreg
