#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedreg/rng.hpp"
#include "fedreg/tensor.hpp"

namespace fedreg {

/// 8-bit images in N x C x H x W order with integer labels.
struct Dataset {
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<std::uint8_t> images;
  std::vector<std::uint32_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t sample_size() const noexcept { return channels * height * width; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span(images).subspan(i * sample_size(), sample_size());
  }
  void validate() const;
  /// Samples at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// IDX container (big-endian): images magic 0x00000803 with dims N,H,W; labels 0x00000801 with N.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);
std::vector<std::uint8_t> encode_idx_images(const Dataset& d);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& d);
/// Single-channel datasets only.
void save_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary: 3073-byte records, label byte then 3x32x32 channel-major pixels.
Dataset load_cifar_binary(std::span<const std::string> paths);
Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_cifar_binary(const Dataset& d);

/// Gaussian clusters in 1 x 8 x 8 pixel space, one smooth left-right symmetric prototype per
/// class. Labels are i % class_count so classes are balanced within one sample.
inline constexpr double kSynthNoise = 0.35;
/// Per-pixel Gaussian noise has standard deviation `noise` in [0, 1] intensity units.
Dataset synth_dataset(std::size_t n, std::size_t class_count, std::uint64_t seed, double noise = kSynthNoise);

struct Partition {
  std::vector<std::vector<std::size_t>> clients;  // ascending indices per client
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::size_t attempts = 0;

  std::size_t total() const;
};

inline constexpr std::size_t kPartitionRetries = 100;

/// Per-class Dirichlet(beta) label skew. Whole partitions are redrawn until every client holds
/// at least `min_client_size` samples, up to kPartitionRetries attempts.
Partition dirichlet_partition(std::span<const std::uint32_t> labels, std::size_t n_clients, double beta,
                              std::size_t min_client_size, std::uint64_t seed);

/// counts[client][class].
std::vector<std::vector<std::size_t>> partition_counts(const Partition& p, std::span<const std::uint32_t> labels,
                                                       std::size_t class_count);

/// Mirrors each sample left-right independently with probability `p`. Batch is B x C x H x W.
/// Returns 1 for every mirrored sample.
std::vector<std::uint8_t> augment_flip(Tensor& batch, Rng& rng, double p = 0.5);

/// Mirrors sample `i` of a B x C x H x W batch left-right.
void flip_sample(Tensor& batch, std::size_t i);

struct Batch {
  Tensor x;  // B x C x H x W in [0, 1]
  std::vector<std::uint32_t> y;
  std::vector<std::size_t> indices;
};

/// Pixel values divided by 255.
Batch make_batch(const Dataset& d, std::span<const std::size_t> indices);

/// One shuffled epoch over `indices`; the final partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, std::span<const std::size_t> indices, std::size_t batch_size, Rng& rng);
  bool next(Batch& out);
  std::size_t batch_count() const noexcept;

 private:
  const Dataset& dataset_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t pos_ = 0;
};

}  // namespace fedreg
