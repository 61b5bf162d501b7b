#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedreg/data.hpp"
#include "fedreg/metrics.hpp"
#include "fedreg/model.hpp"
#include "fedreg/optimizer.hpp"
#include "fedreg/repr.hpp"

namespace fedreg {

struct FLConfig {
  std::size_t rounds = 100;
  std::size_t local_epochs = 10;
  std::size_t n_clients = 10;
  double participation = 1.0;
  std::size_t batch_size = 512;
  SgdConfig sgd;
  RegConfig reg;
  double beta = 0.5;
  std::size_t min_client_size = 2;
  bool augment = true;
  std::uint64_t seed = 0;
  std::size_t parallel_clients = 1;

  void validate() const;
  friend bool operator==(const FLConfig&, const FLConfig&) = default;
};

struct ClientState {
  std::size_t id = 0;
  std::vector<std::size_t> indices;
  /// Model this client returned the last time it participated.
  std::optional<ModelState> previous;
};

struct LocalResult {
  ModelState model;
  double mean_loss = 0.0;
  std::vector<double> alpha_mean;
  std::size_t steps = 0;
};

/// E epochs of regularized SGD starting from `global`. The previous-model slot falls back to
/// `global` before the client's first participation. Momentum starts from zero. On return the
/// client's previous model is the trained model.
LocalResult local_update(ClientState& client, const ModelState& global, const Dataset& train, const FLConfig& config,
                         std::size_t round);

/// Size-weighted element-wise mean. Coordinates on which all models agree are returned unchanged;
/// equal sizes reduce to sum-then-divide.
ModelState aggregate(std::span<const ModelState> models, std::span<const std::size_t> sizes);

/// ceil(fraction * n) distinct ids in ascending order, drawn uniformly; pure in (seed, round).
std::vector<std::size_t> sample_clients(std::size_t n_clients, double fraction, std::size_t round,
                                        std::uint64_t seed);

struct TrainingResult {
  RoundHistory history;
  ModelState global;
};

using RoundObserver = std::function<void(const RoundRecord&, const ModelState&)>;

/// Server loop: sample, local updates (up to config.parallel_clients at a time), aggregate
/// over participants, evaluate on `test`.
TrainingResult run_training(const FLConfig& config, ArchitecturePtr arch, const Dataset& train, const Dataset& test,
                            const Partition& partition, const RoundObserver& observer = {});

}  // namespace fedreg
