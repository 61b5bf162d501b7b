#include "fedreg/metrics.hpp"

#include <algorithm>

#include "fedreg/errors.hpp"
#include "fedreg/network.hpp"

namespace fedreg {

double evaluate(const ModelState& state, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  if (batch_size == 0) throw InputError("evaluate: batch size must be >= 1");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
    Batch b = make_batch(data, idx);
    auto pred = argmax_rows(forward(state, b.x).logits);
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == b.y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double median_last_k(std::span<const double> values, std::size_t k) {
  if (values.empty()) throw InputError("median_last_k: empty history");
  if (k == 0) throw InputError("median_last_k: k must be >= 1");
  const std::size_t n = std::min(k, values.size());
  std::vector<double> tail(values.end() - static_cast<std::ptrdiff_t>(n), values.end());
  std::sort(tail.begin(), tail.end());
  return n % 2 ? tail[n / 2] : 0.5 * (tail[n / 2 - 1] + tail[n / 2]);
}

double median_last_k(const RoundHistory& history, std::size_t k) {
  std::vector<double> acc;
  acc.reserve(history.size());
  for (const auto& r : history) acc.push_back(r.accuracy);
  return median_last_k(acc, k);
}

}  // namespace fedreg
