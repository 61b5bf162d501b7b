#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedreg/errors.hpp"
#include "fedreg/network.hpp"
#include "fedreg/optimizer.hpp"
#include "oracles.hpp"

using namespace fedreg;
using fedreg::testing::random_batch;
using fedreg::testing::tiny_spec;

TEST_CASE("zero parameters propagate zeros") {
  auto arch = make_architecture(ModelSpec::default_cnn({3, 32, 32}, 10));
  ModelState s = ModelState::zeros(arch);
  auto r = forward(s, random_batch(3, {3, 32, 32}, 1));
  for (double v : r.logits.data) CHECK(v == 0.0);
  for (const auto& e : r.extraction)
    for (double v : e.data) CHECK(v == 0.0);
}

TEST_CASE("single identity dense layer returns its input") {
  ModelSpec spec;
  spec.input_shape = {1, 1, 5};
  spec.layers = {{LayerKind::kOutput, 5}};
  spec.extraction_points = {0};
  auto arch = make_architecture(spec);
  ModelState s = ModelState::zeros(arch);
  auto w = s.slot(arch->layer_weight(0));
  for (std::size_t i = 0; i < 5; ++i) w[i * 5 + i] = 1.0;
  Tensor x({2, 1, 1, 5});
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<double>(i) - 3.5;
  auto r = forward(s, x);
  CHECK(r.logits.data == x.data);
}

TEST_CASE("default backbone extraction shapes") {
  auto arch = make_architecture(ModelSpec::default_cnn({3, 32, 32}, 10));
  REQUIRE(arch->num_heads() == 5);
  auto s = ModelState::initialize(arch, 7);
  auto r = forward(s, random_batch(4, {3, 32, 32}, 2));
  const std::size_t expected[] = {8 * 16 * 16, 16 * 8 * 8, 32 * 4 * 4, 128, 96};
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(r.extraction[k].shape == std::vector<std::size_t>{4, expected[k]});
    CHECK(arch->extraction_dim(k) == expected[k]);
  }
  CHECK(r.logits.shape == std::vector<std::size_t>{4, 10});
}

TEST_CASE("extraction dims are a function of the spec") {
  struct Row {
    std::array<std::size_t, 3> input;
    std::vector<std::size_t> conv, dense;
    std::vector<std::size_t> dims;
  };
  const std::vector<Row> table = {
      {{1, 8, 8}, {8, 16, 32}, {128, 96}, {8 * 16, 16 * 4, 32, 128, 96}},
      {{1, 28, 28}, {8, 16, 32}, {128, 96}, {8 * 14 * 14, 16 * 7 * 7, 32 * 3 * 3, 128, 96}},
      {{3, 32, 32}, {4}, {10}, {4 * 16 * 16, 10}},
      {{2, 6, 4}, {}, {7, 5}, {7, 5}},
  };
  for (const auto& row : table) {
    auto arch = make_architecture(ModelSpec::cnn(row.input, row.conv, row.dense, 3));
    auto s = ModelState::initialize(arch, 3);
    for (std::size_t b : {1u, 3u}) {
      auto r = forward(s, random_batch(b, row.input, b));
      REQUIRE(r.extraction.size() == row.dims.size());
      for (std::size_t k = 0; k < row.dims.size(); ++k) CHECK(r.extraction[k].shape[1] == row.dims[k]);
    }
  }
}

TEST_CASE("forward is bit-for-bit deterministic") {
  auto arch = make_architecture(ModelSpec::default_cnn({1, 8, 8}, 4));
  auto s = ModelState::initialize(arch, 11);
  auto x = random_batch(5, {1, 8, 8}, 5);
  auto a = forward(s, x);
  auto b = forward(s, x);
  CHECK(a.logits == b.logits);
  for (std::size_t k = 0; k < a.extraction.size(); ++k) CHECK(a.extraction[k] == b.extraction[k]);
}

TEST_CASE("forward rejects mismatched batches and reports non-finite layers") {
  auto arch = make_architecture(tiny_spec());
  auto s = ModelState::initialize(arch, 1);
  CHECK_THROWS_AS(forward(s, random_batch(2, {1, 4, 5}, 0)), ConfigError);
  CHECK_THROWS_AS(forward(s, random_batch(2, {2, 4, 4}, 0)), ConfigError);

  s.slot(arch->layer_weight(0))[4] = std::numeric_limits<double>::quiet_NaN();
  try {
    forward(s, random_batch(2, {1, 4, 4}, 0));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.layer() == 0);
  }
}

TEST_CASE("spec validation") {
  ModelSpec s = tiny_spec();
  s.extraction_points = {1, 0};
  CHECK_THROWS_AS(make_architecture(s), ConfigError);
  s.extraction_points = {};
  CHECK_THROWS_AS(make_architecture(s), ConfigError);
  s = tiny_spec();
  s.layers.insert(s.layers.begin() + 2, {LayerKind::kConv, 2});  // conv after dense
  CHECK_THROWS_AS(make_architecture(s), ConfigError);
}

TEST_CASE("cross entropy values") {
  Tensor uniform({3, 10}, 0.25);
  const std::uint32_t labels[] = {0, 4, 9};
  CHECK(cross_entropy(uniform, labels).loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  Tensor two({1, 2});
  two.data = {0.0, std::log(3.0)};
  const std::uint32_t one[] = {1};
  auto ce = cross_entropy(two, one);
  CHECK(ce.loss == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
  CHECK(ce.grad.data[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(ce.grad.data[1] == doctest::Approx(-0.25).epsilon(1e-12));

  const std::uint32_t bad[] = {2};
  CHECK_THROWS_AS(cross_entropy(two, bad), InputError);
}

TEST_CASE("cross entropy gradient matches central differences") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  Tensor logits({4, 5});
  for (double& v : logits.data) v = n(rng);
  const std::uint32_t labels[] = {0, 3, 4, 1};
  auto ce = cross_entropy(logits, labels);
  const double eps = 1e-5;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Tensor up = logits, down = logits;
    up.data[i] += eps;
    down.data[i] -= eps;
    const double fd = (cross_entropy(up, labels).loss - cross_entropy(down, labels).loss) / (2 * eps);
    CHECK(fedreg::testing::rel_error(ce.grad.data[i], fd) < 1e-6);
  }
}

TEST_CASE("backward with zero upstream gradients is zero") {
  auto arch = make_architecture(tiny_spec());
  auto s = ModelState::initialize(arch, 2);
  auto x = random_batch(2, {1, 4, 4}, 9);
  auto r = forward(s, x);
  Tensor zeros(r.logits.shape);
  auto g = backward(s, r.trace, zeros);
  for (double v : g.params) CHECK(v == 0.0);
}

TEST_CASE("backbone gradient of a linear readout matches finite differences") {
  auto arch = make_architecture(ModelSpec::cnn({2, 6, 6}, std::vector<std::size_t>{3, 2},
                                               std::vector<std::size_t>{5}, 4));
  auto s = ModelState::initialize(arch, 4);
  auto x = random_batch(3, {2, 6, 6}, 4);
  // Scalar: sum(logits * c) + sum_k sum(extraction_k * d_k)
  auto base = forward(s, x);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  Tensor c(base.logits.shape);
  for (double& v : c.data) v = n(rng);
  std::vector<Tensor> d;
  for (const auto& e : base.extraction) {
    Tensor t(e.shape);
    for (double& v : t.data) v = n(rng);
    d.push_back(t);
  }
  auto scalar = [&](const ModelState& m) {
    auto r = forward(m, x);
    double acc = 0;
    for (std::size_t i = 0; i < c.size(); ++i) acc += c.data[i] * r.logits.data[i];
    for (std::size_t k = 0; k < d.size(); ++k)
      for (std::size_t i = 0; i < d[k].size(); ++i) acc += d[k].data[i] * r.extraction[k].data[i];
    return acc;
  };
  auto g = backward(s, base.trace, c, d);
  auto check = fedreg::testing::finite_difference_check(s, g.params, scalar, x);
  CHECK(check.checked > arch->parameter_count() * 9 / 10);
  CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("model blob round trip and length check") {
  auto arch = make_architecture(tiny_spec());
  auto s = ModelState::initialize(arch, 5);
  auto blob = serialize(s);
  CHECK(blob.size() == arch->parameter_count() * 8);
  CHECK(deserialize(arch, blob).params == s.params);
  blob.pop_back();
  CHECK_THROWS_AS(deserialize(arch, blob), FormatError);
  // little-endian float64: 1.0 = 00 .. f0 3f
  auto one = ModelState::zeros(arch);
  one.params[0] = 1.0;
  auto b = serialize(one);
  CHECK(b[6] == 0xf0);
  CHECK(b[7] == 0x3f);
}

TEST_CASE("head init does not depend on which other heads exist") {
  ModelSpec all = ModelSpec::default_cnn({1, 8, 8}, 4);
  ModelSpec last = all;
  last.extraction_points = {4};
  auto a = ModelState::initialize(make_architecture(all), 9);
  auto b = ModelState::initialize(make_architecture(last), 9);
  const auto& aa = *a.arch;
  const auto& ba = *b.arch;
  for (std::size_t i = 0; i < aa.num_layers(); ++i) {
    auto wa = a.slot(aa.layer_weight(i));
    auto wb = b.slot(ba.layer_weight(i));
    CHECK(std::equal(wa.begin(), wa.end(), wb.begin(), wb.end()));
  }
  for (std::size_t j = 0; j < 4; ++j) {
    auto ha = a.slot(aa.head_param(4, j));
    auto hb = b.slot(ba.head_param(0, j));
    CHECK(std::equal(ha.begin(), ha.end(), hb.begin(), hb.end()));
  }
}

TEST_CASE("sgd step arithmetic") {
  ModelSpec spec;
  spec.input_shape = {1, 1, 1};
  spec.layers = {{LayerKind::kOutput, 1}};
  spec.extraction_points = {0};
  spec.head_output_dim = 1;
  auto arch = make_architecture(spec);
  const auto w = arch->layer_weight(0).offset;

  SUBCASE("zero gradient, zero decay leaves state and buffers unchanged") {
    auto s = ModelState::initialize(arch, 1);
    const auto before = s.params;
    SgdOptimizer opt({0.01, 0.9, 0.0});
    opt.step(s, ModelState::zeros(arch));
    CHECK(s.params == before);
    for (double b : opt.buffer()) CHECK(b == 0.0);
  }
  SUBCASE("weight decay only") {
    auto s = ModelState::zeros(arch);
    s.params[w] = 1.0;
    SgdOptimizer opt({0.01, 0.0, 0.1});
    opt.step(s, ModelState::zeros(arch));
    CHECK(s.params[w] == doctest::Approx(0.999).epsilon(1e-15));
  }
  SUBCASE("momentum recurrence") {
    auto s = ModelState::zeros(arch);
    auto g = ModelState::zeros(arch);
    g.params[w] = 1.0;
    SgdOptimizer opt({0.01, 0.9, 0.0});
    opt.step(s, g);
    CHECK(opt.buffer()[w] == doctest::Approx(1.0));
    CHECK(s.params[w] == doctest::Approx(-0.01));
    opt.step(s, g);
    CHECK(opt.buffer()[w] == doctest::Approx(1.9));
    CHECK(s.params[w] == doctest::Approx(-0.029));
  }
}
