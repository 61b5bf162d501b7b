#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedreg/data.hpp"
#include "fedreg/model.hpp"

namespace fedreg {

/// Top-1 accuracy of `state` on `data` (no augmentation; ties go to the lowest class index).
double evaluate(const ModelState& state, const Dataset& data, std::size_t batch_size = 512);

struct RoundRecord {
  std::size_t round = 0;
  double accuracy = 0.0;
  double mean_local_loss = 0.0;
  std::vector<std::size_t> participants;
  double wall_seconds = 0.0;
  /// Mean layer weights over this round's batches; empty unless the variant uses them.
  std::vector<double> alpha_mean;
};

using RoundHistory = std::vector<RoundRecord>;

/// Median of the trailing min(k, n) values; even counts average the two middle values.
double median_last_k(std::span<const double> values, std::size_t k = 10);
double median_last_k(const RoundHistory& history, std::size_t k = 10);

}  // namespace fedreg
