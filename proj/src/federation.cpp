#include "fedreg/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fedreg/errors.hpp"
#include "fedreg/objective.hpp"

namespace fedreg {

void FLConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (n_clients < 1) throw ConfigError("clients must be >= 1");
  if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("participation must be in (0, 1]");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(sgd.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (sgd.momentum < 0.0 || sgd.weight_decay < 0.0) throw ConfigError("momentum and weight_decay must be >= 0");
  if (parallel_clients < 1) throw ConfigError("parallel_clients must be >= 1");
  reg.validate();
}

namespace {

// Upper bound on cached frozen representations per local update, in doubles (128 MiB).
constexpr std::size_t kFrozenCacheBudget = std::size_t{1} << 24;

// Representations of the global and previous models are fixed for the whole local update,
// so they are computed once per (sample, mirrored) pair instead of once per epoch.
class FrozenCache {
 public:
  static bool fits(std::size_t samples, bool augment, const Architecture& arch, std::size_t heads) {
    const std::size_t per = (augment ? 2 : 1) * 2 * heads * arch.spec().head_output_dim;
    return samples * per <= kFrozenCacheBudget;
  }

  FrozenCache(const LocalObjective& objective, const ModelState& global, const ModelState& previous,
              const Dataset& train, std::span<const std::size_t> indices, std::size_t batch_size, bool augment)
      : indices_(indices.begin(), indices.end()) {
    std::sort(indices_.begin(), indices_.end());
    const auto heads = objective.active_heads(*global.arch);
    dim_ = global.arch->spec().head_output_dim;
    const std::size_t views = augment ? 2 : 1;
    for (std::size_t v = 0; v < views; ++v) {
      tables_.emplace_back(heads.size(), Table{Buffer(indices_.size() * dim_),
                                               Buffer(indices_.size() * dim_)});
    }
    for (std::size_t start = 0; start < indices_.size(); start += batch_size) {
      const std::size_t n = std::min(batch_size, indices_.size() - start);
      for (std::size_t v = 0; v < views; ++v) {
        Batch b = make_batch(train, std::span(indices_).subspan(start, n));
        if (v == 1)
          for (std::size_t i = 0; i < n; ++i) flip_sample(b.x, i);
        FrozenRepresentations fr = objective.frozen_representations(global, previous, b.x);
        for (std::size_t h = 0; h < heads.size(); ++h) {
          std::copy(fr.global[h].data.begin(), fr.global[h].data.end(),
                    tables_[v][h].global.begin() + static_cast<std::ptrdiff_t>(start * dim_));
          std::copy(fr.previous[h].data.begin(), fr.previous[h].data.end(),
                    tables_[v][h].previous.begin() + static_cast<std::ptrdiff_t>(start * dim_));
        }
      }
    }
  }

  // Fills `out` in place; tensors keep their storage across batches of equal size.
  void gather(std::span<const std::size_t> batch_indices, std::span<const std::uint8_t> flipped,
              FrozenRepresentations& out) const {
    const std::size_t b = batch_indices.size();
    const std::size_t heads = tables_.front().size();
    out.global.resize(heads);
    out.previous.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor& g = out.global[h];
      Tensor& p = out.previous[h];
      if (g.shape.size() != 2 || g.shape[0] != b || g.shape[1] != dim_) g = Tensor({b, dim_});
      if (p.shape.size() != 2 || p.shape[0] != b || p.shape[1] != dim_) p = Tensor({b, dim_});
      for (std::size_t i = 0; i < b; ++i) {
        const auto pos = static_cast<std::size_t>(
            std::lower_bound(indices_.begin(), indices_.end(), batch_indices[i]) - indices_.begin());
        const auto& t = tables_[flipped.empty() ? 0 : flipped[i]][h];
        std::copy_n(t.global.begin() + static_cast<std::ptrdiff_t>(pos * dim_), dim_, g.row(i).begin());
        std::copy_n(t.previous.begin() + static_cast<std::ptrdiff_t>(pos * dim_), dim_, p.row(i).begin());
      }
    }
  }

 private:
  struct Table {
    Buffer global, previous;
  };
  std::vector<std::size_t> indices_;
  std::size_t dim_ = 0;
  std::vector<std::vector<Table>> tables_;  // [view][head]
};

}  // namespace

LocalResult local_update(ClientState& client, const ModelState& global, const Dataset& train, const FLConfig& config,
                         std::size_t round) {
  if (client.indices.empty()) throw InputError("client " + std::to_string(client.id) + " has no data");
  const ModelState& previous = client.previous ? *client.previous : global;
  previous.require_compatible(global, "local_update");

  LocalObjective objective(config.reg);
  LocalResult out;
  out.model = global;
  SgdOptimizer opt(config.sgd);
  Rng rng = make_rng(config.seed, Stream::kLocal, round, client.id);
  double loss_sum = 0.0;
  std::vector<double> alpha_sum;
  const std::size_t heads = objective.active_heads(*global.arch).size();
  std::optional<FrozenCache> cache;
  if (heads > 0 && config.local_epochs > 1 &&
      FrozenCache::fits(client.indices.size(), config.augment, *global.arch, heads))
    cache.emplace(objective, global, previous, train, client.indices, config.batch_size, config.augment);
  FrozenRepresentations frozen;
  for (std::size_t e = 0; e < config.local_epochs; ++e) {
    BatchIterator it(train, client.indices, config.batch_size, rng);
    Batch b;
    while (it.next(b)) {
      std::vector<std::uint8_t> flipped;
      if (config.augment) flipped = augment_flip(b.x, rng);
      if (cache) cache->gather(b.indices, flipped, frozen);
      BatchObjective obj = cache ? objective.evaluate(out.model, &global, frozen, b.x, b.y)
                                 : objective.evaluate(out.model, &global, &previous, b.x, b.y);
      opt.step(out.model, obj.grads);
      loss_sum += obj.total;
      if (!obj.alphas.empty()) {
        alpha_sum.resize(obj.alphas.size(), 0.0);
        for (std::size_t k = 0; k < obj.alphas.size(); ++k) alpha_sum[k] += obj.alphas[k];
      }
      ++out.steps;
    }
  }
  if (out.steps > 0) {
    out.mean_loss = loss_sum / static_cast<double>(out.steps);
    for (double& a : alpha_sum) a /= static_cast<double>(out.steps);
  }
  out.alpha_mean = std::move(alpha_sum);
  client.previous = out.model;
  return out;
}

ModelState aggregate(std::span<const ModelState> models, std::span<const std::size_t> sizes) {
  if (models.empty()) throw InputError("aggregate: no models");
  if (models.size() != sizes.size()) throw InputError("aggregate: one size per model required");
  for (const auto& m : models) models[0].require_compatible(m, "aggregate");
  for (auto s : sizes)
    if (s == 0) throw InputError("aggregate: client sizes must be > 0");

  const std::size_t n = models.size();
  const bool equal = std::all_of(sizes.begin(), sizes.end(), [&](std::size_t s) { return s == sizes[0]; });
  const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) weight[i] = static_cast<double>(sizes[i]) / total;

  ModelState out = ModelState::zeros(models[0].arch);
  for (std::size_t j = 0; j < out.params.size(); ++j) {
    const double first = models[0].params[j];
    bool agree = true;
    for (std::size_t i = 1; i < n && agree; ++i) agree = models[i].params[j] == first;
    if (agree) {
      out.params[j] = first;
      continue;
    }
    double acc = 0.0;
    if (equal) {
      for (std::size_t i = 0; i < n; ++i) acc += models[i].params[j];
      acc /= static_cast<double>(n);
    } else {
      for (std::size_t i = 0; i < n; ++i) acc += weight[i] * models[i].params[j];
    }
    out.params[j] = acc;
  }
  return out;
}

std::vector<std::size_t> sample_clients(std::size_t n_clients, double fraction, std::size_t round,
                                        std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("sample_clients: fraction must be in (0, 1]");
  std::vector<std::size_t> ids(n_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  // Guard against 0.2 * 50 = 10.000000000000002.
  const double want = fraction * static_cast<double>(n_clients);
  const auto m = std::min(n_clients, static_cast<std::size_t>(std::ceil(want - 1e-9)));
  if (m >= n_clients) return ids;
  Rng rng = make_rng(seed, Stream::kSampling, round);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

[[noreturn]] void rethrow_with_context(std::exception_ptr e, std::size_t round, std::size_t client) {
  const std::string ctx = "round " + std::to_string(round) + ", client " + std::to_string(client) + ": ";
  try {
    std::rethrow_exception(e);
  } catch (const NumericError& err) {
    throw NumericError(ctx, err);
  } catch (const FormatError& err) {
    throw FormatError(ctx, err);
  } catch (const ConfigError& err) {
    throw ConfigError(ctx + err.what());
  } catch (const InputError& err) {
    throw InputError(ctx + err.what());
  } catch (const std::exception& err) {
    throw std::runtime_error(ctx + err.what());
  }
}

}  // namespace

TrainingResult run_training(const FLConfig& config, ArchitecturePtr arch, const Dataset& train, const Dataset& test,
                            const Partition& partition, const RoundObserver& observer) {
  if (partition.clients.size() != config.n_clients)
    throw ConfigError("run_training: partition has " + std::to_string(partition.clients.size()) +
                      " clients, config expects " + std::to_string(config.n_clients));
  for (const auto& c : partition.clients)
    for (auto i : c)
      if (i >= train.size()) throw ConfigError("run_training: partition index outside the training set");

  TrainingResult result;
  result.global = ModelState::initialize(std::move(arch), config.seed);
  std::vector<ClientState> clients(config.n_clients);
  for (std::size_t i = 0; i < config.n_clients; ++i) {
    clients[i].id = i;
    clients[i].indices = partition.clients[i];
  }

  for (std::size_t round = 0; round < config.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto ids = sample_clients(config.n_clients, config.participation, round, config.seed);
    std::vector<LocalResult> local(ids.size());
    std::vector<std::exception_ptr> errors(ids.size());

    auto work = [&](std::size_t slot) {
      try {
        local[slot] = local_update(clients[ids[slot]], result.global, train, config, round);
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    };
    const std::size_t workers = std::min(config.parallel_clients, ids.size());
    if (workers <= 1) {
      for (std::size_t s = 0; s < ids.size(); ++s) work(s);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (std::size_t s; (s = next.fetch_add(1)) < ids.size();) work(s);
        });
      for (auto& t : pool) t.join();
    }
    for (std::size_t s = 0; s < ids.size(); ++s)
      if (errors[s]) rethrow_with_context(errors[s], round, ids[s]);

    std::vector<ModelState> models;
    std::vector<std::size_t> sizes;
    RoundRecord rec;
    rec.round = round;
    rec.participants = ids;
    for (std::size_t s = 0; s < ids.size(); ++s) {
      sizes.push_back(clients[ids[s]].indices.size());
      rec.mean_local_loss += local[s].mean_loss / static_cast<double>(ids.size());
      if (!local[s].alpha_mean.empty()) {
        rec.alpha_mean.resize(local[s].alpha_mean.size(), 0.0);
        for (std::size_t k = 0; k < rec.alpha_mean.size(); ++k)
          rec.alpha_mean[k] += local[s].alpha_mean[k] / static_cast<double>(ids.size());
      }
      models.push_back(std::move(local[s].model));
    }
    result.global = aggregate(models, sizes);
    rec.accuracy = evaluate(result.global, test);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (observer) observer(result.history.back(), result.global);
  }
  return result;
}

}  // namespace fedreg
