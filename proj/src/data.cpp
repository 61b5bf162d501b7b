#include "fedreg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "fedreg/errors.hpp"

namespace fedreg {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off, const char* what) {
  if (off + 4 > b.size()) throw FormatError(std::string(what) + ": truncated header", b.size());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::size_t infer_classes(std::span<const std::uint32_t> labels) {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

}  // namespace

void Dataset::validate() const {
  if (images.size() != labels.size() * sample_size()) throw ConfigError("dataset: image buffer size mismatch");
  for (auto l : labels)
    if (l >= class_count) throw ConfigError("dataset: label " + std::to_string(l) + " >= class_count");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.channels = channels;
  d.height = height;
  d.width = width;
  d.class_count = class_count;
  d.images.reserve(indices.size() * sample_size());
  for (auto i : indices) {
    auto img = image(i);
    d.images.insert(d.images.end(), img.begin(), img.end());
    d.labels.push_back(labels.at(i));
  }
  return d;
}

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  const auto img_magic = read_be32(images, 0, "idx images");
  if (img_magic != kIdxImagesMagic) throw FormatError("idx images: bad magic", 0);
  const auto lbl_magic = read_be32(labels, 0, "idx labels");
  if (lbl_magic != kIdxLabelsMagic) throw FormatError("idx labels: bad magic", 0);

  const std::size_t n = read_be32(images, 4, "idx images");
  const std::size_t h = read_be32(images, 8, "idx images");
  const std::size_t w = read_be32(images, 12, "idx images");
  const std::size_t n_labels = read_be32(labels, 4, "idx labels");
  if (n != n_labels)
    throw FormatError("idx: " + std::to_string(n) + " images but " + std::to_string(n_labels) + " labels", 4);

  const std::size_t img_expected = 16 + n * h * w;
  if (images.size() != img_expected)
    throw FormatError("idx images: expected " + std::to_string(img_expected) + " bytes, got " +
                          std::to_string(images.size()),
                      std::min(images.size(), img_expected));
  const std::size_t lbl_expected = 8 + n;
  if (labels.size() != lbl_expected)
    throw FormatError("idx labels: expected " + std::to_string(lbl_expected) + " bytes, got " +
                          std::to_string(labels.size()),
                      std::min(labels.size(), lbl_expected));

  Dataset d;
  d.channels = 1;
  d.height = h;
  d.width = w;
  d.images.assign(images.begin() + 16, images.end());
  d.labels.assign(labels.begin() + 8, labels.end());
  d.class_count = infer_classes(d.labels);
  return d;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  return parse_idx(read_file(images_path), read_file(labels_path));
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& d) {
  if (d.channels != 1) throw ConfigError("idx: only single-channel images can be encoded");
  std::vector<std::uint8_t> out;
  out.reserve(16 + d.images.size());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(d.size()));
  put_be32(out, static_cast<std::uint32_t>(d.height));
  put_be32(out, static_cast<std::uint32_t>(d.width));
  out.insert(out.end(), d.images.begin(), d.images.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& d) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + d.size());
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(d.size()));
  for (auto l : d.labels) {
    if (l > 255) throw ConfigError("idx: label does not fit in a byte");
    out.push_back(static_cast<std::uint8_t>(l));
  }
  return out;
}

void save_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
  write_file(images_path, encode_idx_images(d));
  write_file(labels_path, encode_idx_labels(d));
}

Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecord != 0)
    throw FormatError("cifar: file size " + std::to_string(bytes.size()) + " is not a multiple of 3073",
                      bytes.size() - bytes.size() % kCifarRecord);
  Dataset d;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  const std::size_t n = bytes.size() / kCifarRecord;
  d.images.reserve(n * 3072);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = bytes.data() + i * kCifarRecord;
    d.labels.push_back(rec[0]);
    d.images.insert(d.images.end(), rec + 1, rec + kCifarRecord);
  }
  d.class_count = std::max<std::size_t>(10, infer_classes(d.labels));
  return d;
}

Dataset load_cifar_binary(std::span<const std::string> paths) {
  Dataset all;
  all.channels = 3;
  all.height = 32;
  all.width = 32;
  all.class_count = 10;
  for (const auto& p : paths) {
    Dataset part = parse_cifar_binary(read_file(p));
    all.images.insert(all.images.end(), part.images.begin(), part.images.end());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    all.class_count = std::max(all.class_count, part.class_count);
  }
  return all;
}

std::vector<std::uint8_t> encode_cifar_binary(const Dataset& d) {
  if (d.channels != 3 || d.height != 32 || d.width != 32) throw ConfigError("cifar: images must be 3x32x32");
  std::vector<std::uint8_t> out;
  out.reserve(d.size() * kCifarRecord);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] > 255) throw ConfigError("cifar: label does not fit in a byte");
    out.push_back(static_cast<std::uint8_t>(d.labels[i]));
    auto img = d.image(i);
    out.insert(out.end(), img.begin(), img.end());
  }
  return out;
}

Dataset synth_dataset(std::size_t n, std::size_t class_count, std::uint64_t seed, double noise) {
  if (class_count == 0 || n < class_count) throw InputError("synth_dataset: need n >= class_count >= 1");
  constexpr std::size_t kSide = 8;
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw InputError("synth_dataset: noise must be >= 0");
  Dataset d;
  d.channels = 1;
  d.height = kSide;
  d.width = kSide;
  d.class_count = class_count;

  // Prototypes: sums of a few Gaussian bumps placed symmetrically about the vertical axis.
  Rng proto_rng = make_rng(seed, Stream::kData, 0);
  std::uniform_real_distribution<double> pos(0.0, kSide / 2.0);
  std::uniform_real_distribution<double> row(0.0, kSide - 1.0);
  std::vector<std::vector<double>> protos(class_count, std::vector<double>(kSide * kSide, 0.15));
  for (auto& p : protos) {
    for (int bump = 0; bump < 3; ++bump) {
      const double cx = pos(proto_rng), cy = row(proto_rng);
      for (std::size_t y = 0; y < kSide; ++y) {
        for (std::size_t x = 0; x < kSide; ++x) {
          const double mx = static_cast<double>(kSide - 1) - cx;  // mirror image of cx
          const double dy = static_cast<double>(y) - cy;
          const double a = static_cast<double>(x) - cx, b = static_cast<double>(x) - mx;
          p[y * kSide + x] += 0.6 * (std::exp(-(a * a + dy * dy) / 2.0) + std::exp(-(b * b + dy * dy) / 2.0));
        }
      }
    }
  }

  Rng sample_rng = make_rng(seed, Stream::kData, 1);
  std::normal_distribution<double> jitter(0.0, noise);
  d.images.resize(n * kSide * kSide);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::uint32_t>(i % class_count);
    d.labels[i] = c;
    for (std::size_t j = 0; j < kSide * kSide; ++j) {
      const double v = std::clamp(protos[c][j] + (noise > 0.0 ? jitter(sample_rng) : 0.0), 0.0, 1.0);
      d.images[i * kSide * kSide + j] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return d;
}

std::size_t Partition::total() const {
  std::size_t t = 0;
  for (const auto& c : clients) t += c.size();
  return t;
}

Partition dirichlet_partition(std::span<const std::uint32_t> labels, std::size_t n_clients, double beta,
                              std::size_t min_client_size, std::uint64_t seed) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InputError("dirichlet_partition: beta must be > 0");
  if (n_clients == 0) throw InputError("dirichlet_partition: need at least one client");
  const std::size_t classes = infer_classes(labels);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  Rng rng = make_rng(seed, Stream::kPartition);
  std::gamma_distribution<double> gamma(beta, 1.0);
  Partition p;
  p.beta = beta;
  p.seed = seed;
  for (std::size_t attempt = 1; attempt <= kPartitionRetries; ++attempt) {
    p.attempts = attempt;
    p.clients.assign(n_clients, {});
    for (auto idx : by_class) {
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<double> share(n_clients);
      double total = 0.0;
      for (auto& s : share) total += s = gamma(rng);
      if (!(total > 0.0)) {  // all draws underflowed at tiny beta: put the class on one client
        std::fill(share.begin(), share.end(), 0.0);
        share[std::uniform_int_distribution<std::size_t>(0, n_clients - 1)(rng)] = 1.0;
        total = 1.0;
      }
      // Contiguous split of the shuffled class at cumulative-proportion cut points.
      double cum = 0.0;
      std::size_t begin = 0;
      for (std::size_t c = 0; c < n_clients; ++c) {
        cum += share[c] / total;
        const std::size_t end =
            c + 1 == n_clients ? idx.size()
                               : std::min(idx.size(), static_cast<std::size_t>(cum * static_cast<double>(idx.size())));
        for (std::size_t j = begin; j < std::max(begin, end); ++j) p.clients[c].push_back(idx[j]);
        begin = std::max(begin, end);
      }
    }
    const bool ok = std::all_of(p.clients.begin(), p.clients.end(),
                                [&](const auto& c) { return c.size() >= min_client_size; });
    if (ok) {
      for (auto& c : p.clients) std::sort(c.begin(), c.end());
      return p;
    }
  }
  throw InputError("dirichlet_partition: could not give every client " + std::to_string(min_client_size) +
                   " samples after " + std::to_string(kPartitionRetries) + " attempts");
}

std::vector<std::vector<std::size_t>> partition_counts(const Partition& p, std::span<const std::uint32_t> labels,
                                                       std::size_t class_count) {
  std::vector<std::vector<std::size_t>> counts(p.clients.size(), std::vector<std::size_t>(class_count, 0));
  for (std::size_t c = 0; c < p.clients.size(); ++c)
    for (auto i : p.clients[c]) ++counts[c].at(labels[i]);
  return counts;
}

void flip_sample(Tensor& batch, std::size_t i) {
  if (batch.rank() != 4) throw ConfigError("flip: expected B x C x H x W");
  const std::size_t c = batch.shape[1], h = batch.shape[2], w = batch.shape[3];
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      double* r = batch.data.data() + ((i * c + ch) * h + y) * w;
      std::reverse(r, r + w);
    }
}

std::vector<std::uint8_t> augment_flip(Tensor& batch, Rng& rng, double p) {
  if (batch.rank() != 4) throw ConfigError("augment_flip: expected B x C x H x W");
  std::bernoulli_distribution coin(p);
  std::vector<std::uint8_t> flipped(batch.shape[0], 0);
  for (std::size_t i = 0; i < flipped.size(); ++i) {
    if (!coin(rng)) continue;
    flip_sample(batch, i);
    flipped[i] = 1;
  }
  return flipped;
}

Batch make_batch(const Dataset& d, std::span<const std::size_t> indices) {
  Batch b;
  b.x = Tensor({indices.size(), d.channels, d.height, d.width});
  b.indices.assign(indices.begin(), indices.end());
  const std::size_t s = d.sample_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto img = d.image(indices[i]);
    for (std::size_t j = 0; j < s; ++j) b.x.data[i * s + j] = img[j] / 255.0;
    b.y.push_back(d.labels[indices[i]]);
  }
  return b;
}

BatchIterator::BatchIterator(const Dataset& dataset, std::span<const std::size_t> indices, std::size_t batch_size,
                             Rng& rng)
    : dataset_(dataset), order_(indices.begin(), indices.end()), batch_size_(batch_size) {
  if (batch_size_ == 0) throw InputError("batch size must be >= 1");
  for (auto i : order_)
    if (i >= dataset.size()) throw InputError("batch index out of range");
  std::shuffle(order_.begin(), order_.end(), rng);
}

bool BatchIterator::next(Batch& out) {
  if (pos_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_size_, order_.size() - pos_);
  out = make_batch(dataset_, std::span(order_).subspan(pos_, n));
  pos_ += n;
  return true;
}

std::size_t BatchIterator::batch_count() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }

}  // namespace fedreg
