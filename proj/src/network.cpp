#include "fedreg/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedreg/errors.hpp"
#include "fedreg/kernels.hpp"

namespace fedreg {

namespace {

void check_finite(std::span<const double> v, std::size_t layer) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError("non-finite activation", static_cast<int>(layer));
}

}  // namespace

ForwardResult forward(const ModelState& state, const Tensor& batch) {
  if (!state.arch) throw ConfigError("forward: state has no architecture");
  const Architecture& arch = *state.arch;
  if (state.params.size() != arch.parameter_count()) throw ConfigError("forward: state does not match spec");
  const auto& in = arch.spec().input_shape;
  if (batch.rank() != 4 || batch.shape[1] != in[0] || batch.shape[2] != in[1] || batch.shape[3] != in[2])
    throw ConfigError("forward: batch shape does not match model input");

  ForwardResult r;
  ForwardTrace& t = r.trace;
  t.arch = state.arch;
  t.batch = batch.shape[0];
  t.input = batch;
  const std::size_t n_layers = arch.num_layers();
  t.outputs.resize(n_layers);
  t.pre_pool.resize(n_layers);
  t.argmax.resize(n_layers);

  const Tensor* cur = &t.input;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& g = arch.layer(i);
    const auto& l = arch.spec().layers[i];
    auto w = state.slot(arch.layer_weight(i));
    auto b = state.slot(arch.layer_bias(i));
    if (l.kind == LayerKind::kConv) {
      kernels::ConvShape cs{t.batch, g.in[0], g.in[1], g.in[2], l.units};
      auto& pre = t.pre_pool[i];
      pre.resize(t.batch * l.units * g.in[1] * g.in[2]);
      kernels::conv3x3_relu_forward(cs, cur->data, w, b, pre);
      Tensor out({t.batch, g.out[0], g.out[1], g.out[2]});
      t.argmax[i].resize(out.size());
      kernels::maxpool2x2_forward(t.batch * l.units, g.in[1], g.in[2], pre, out.data, t.argmax[i]);
      t.outputs[i] = std::move(out);
    } else {
      Tensor out({t.batch, l.units});
      kernels::dense_forward({t.batch, g.in_features(), l.units}, cur->data, w, b, out.data,
                             l.kind == LayerKind::kDense);
      t.outputs[i] = std::move(out);
    }
    check_finite(t.outputs[i].data, i);
    cur = &t.outputs[i];
  }

  r.logits = t.outputs.back();
  for (std::size_t k = 0; k < arch.num_heads(); ++k) {
    const Tensor& o = t.outputs[arch.head(k).layer];
    Tensor e({t.batch, arch.extraction_dim(k)});
    e.data = o.data;
    r.extraction.push_back(std::move(e));
  }
  return r;
}

CrossEntropy cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels) {
  if (logits.rank() != 2) throw ConfigError("cross_entropy: logits must be B x C");
  const std::size_t b = logits.shape[0], c = logits.shape[1];
  if (labels.size() != b) throw InputError("cross_entropy: label count does not match batch");
  CrossEntropy ce;
  ce.grad = Tensor({b, c});
  if (b == 0) return ce;
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c)
      throw InputError("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0, " +
                       std::to_string(c) + ")");
    auto row = logits.row(i);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    const double log_z = m + std::log(z);
    total += log_z - row[labels[i]];
    auto g = ce.grad.row(i);
    for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(row[j] - log_z) / static_cast<double>(b);
    g[labels[i]] -= 1.0 / static_cast<double>(b);
  }
  ce.loss = total / static_cast<double>(b);
  if (!std::isfinite(ce.loss)) throw NumericError("cross_entropy: non-finite loss");
  return ce;
}

void backward_accumulate(const ModelState& state, const ForwardTrace& trace, const Tensor& d_logits,
                         std::span<const Tensor> d_extraction, ModelState& grads) {
  if (!trace.arch || !state.arch || !(trace.arch == state.arch || trace.arch->spec() == state.arch->spec()))
    throw ConfigError("backward: trace was produced by a different spec");
  state.require_compatible(grads, "backward");
  const Architecture& arch = *state.arch;
  const std::size_t n_layers = arch.num_layers();
  if (trace.outputs.size() != n_layers) throw ConfigError("backward: incomplete trace");
  if (d_logits.size() != trace.outputs.back().size()) throw ConfigError("backward: d_logits shape mismatch");
  if (!d_extraction.empty() && d_extraction.size() != arch.num_heads())
    throw ConfigError("backward: expected one extraction gradient per extraction point");

  // Upstream gradient w.r.t. the output of the current layer.
  Buffer upstream = d_logits.data;
  auto add_extraction = [&](std::size_t layer) {
    for (std::size_t k = 0; k < d_extraction.size(); ++k) {
      if (arch.head(k).layer != layer || d_extraction[k].size() == 0) continue;
      if (d_extraction[k].size() != upstream.size()) throw ConfigError("backward: extraction gradient shape mismatch");
      for (std::size_t j = 0; j < upstream.size(); ++j) upstream[j] += d_extraction[k].data[j];
    }
  };

  for (std::size_t ii = n_layers; ii-- > 0;) {
    add_extraction(ii);
    const auto& g = arch.layer(ii);
    const auto& l = arch.spec().layers[ii];
    const Tensor& input = ii == 0 ? trace.input : trace.outputs[ii - 1];
    auto w = state.slot(arch.layer_weight(ii));
    auto dw = grads.slot(arch.layer_weight(ii));
    auto db = grads.slot(arch.layer_bias(ii));
    Buffer d_input(ii == 0 ? 0 : input.size());
    if (l.kind == LayerKind::kConv) {
      const auto& pre = trace.pre_pool[ii];
      Buffer d_pre(pre.size());
      kernels::maxpool2x2_backward(trace.batch * l.units, g.in[1], g.in[2], upstream, trace.argmax[ii], d_pre);
      for (std::size_t j = 0; j < d_pre.size(); ++j)
        if (pre[j] <= 0.0) d_pre[j] = 0.0;
      kernels::conv3x3_backward({trace.batch, g.in[0], g.in[1], g.in[2], l.units}, input.data, w, d_pre, dw, db,
                                d_input);
    } else {
      if (l.kind == LayerKind::kDense) {
        const auto& out = trace.outputs[ii].data;
        for (std::size_t j = 0; j < upstream.size(); ++j)
          if (out[j] <= 0.0) upstream[j] = 0.0;
      }
      kernels::dense_backward({trace.batch, g.in_features(), l.units}, input.data, w, upstream, dw, db, d_input);
    }
    upstream = std::move(d_input);
  }
}

ModelState backward(const ModelState& state, const ForwardTrace& trace, const Tensor& d_logits,
                    std::span<const Tensor> d_extraction) {
  ModelState grads = ModelState::zeros(state.arch);
  backward_accumulate(state, trace, d_logits, d_extraction, grads);
  return grads;
}

std::vector<std::uint32_t> argmax_rows(const Tensor& logits) {
  std::vector<std::uint32_t> out(logits.shape.at(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto row = logits.row(i);
    out[i] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace fedreg
