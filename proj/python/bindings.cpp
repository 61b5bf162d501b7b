#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "fedreg/config.hpp"
#include "fedreg/errors.hpp"
#include "fedreg/experiment.hpp"
#include "fedreg/federation.hpp"
#include "fedreg/metrics.hpp"
#include "fedreg/network.hpp"
#include "fedreg/repr.hpp"

namespace py = pybind11;
using namespace fedreg;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const DoubleArray& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

DoubleArray to_array(std::span<const double> v) {
  DoubleArray out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

RegConfig reg_config(const std::string& variant, double mu, double tau) {
  RegConfig c;
  c.variant = parse_variant(variant);
  c.mu = mu;
  c.tau = tau;
  c.validate();
  return c;
}

// A backbone plus projection heads with a flat parameter vector.
struct Model {
  ModelState state;

  Model(std::vector<std::size_t> conv, std::vector<std::size_t> dense, std::size_t classes,
        std::array<std::size_t, 3> input_shape, std::size_t head_output_dim, std::uint64_t seed) {
    ModelSpec spec = ModelSpec::cnn(input_shape, conv, dense, classes);
    spec.head_output_dim = head_output_dim;
    state = ModelState::initialize(make_architecture(spec), seed);
  }
  explicit Model(ModelState s) : state(std::move(s)) {}

  DoubleArray params() const { return to_array(state.params); }

  void set_params(const DoubleArray& p) {
    if (static_cast<std::size_t>(p.size()) != state.params.size())
      throw ConfigError("expected " + std::to_string(state.params.size()) + " parameters, got " +
                        std::to_string(p.size()));
    std::copy(p.data(), p.data() + p.size(), state.params.begin());
  }

  DoubleArray logits(const DoubleArray& x) const {
    if (x.ndim() != 4) throw ConfigError("expected a B x C x H x W array");
    Tensor t({static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1)),
              static_cast<std::size_t>(x.shape(2)), static_cast<std::size_t>(x.shape(3))});
    std::copy(x.data(), x.data() + x.size(), t.data.begin());
    const ForwardResult r = forward(state, t);
    DoubleArray out({static_cast<py::ssize_t>(r.logits.shape[0]), static_cast<py::ssize_t>(r.logits.shape[1])});
    std::copy(r.logits.data.begin(), r.logits.data.end(), out.mutable_data());
    return out;
  }
};

py::dict point_to_dict(const PointResult& r) {
  py::list acc, loss;
  for (const auto& rec : r.report.rounds) {
    acc.append(rec.accuracy);
    loss.append(rec.mean_local_loss);
  }
  py::dict d;
  d["name"] = r.point.name;
  d["headline_accuracy"] = r.report.headline_accuracy;
  d["accuracy"] = acc;
  d["mean_local_loss"] = loss;
  d["report_json"] = report_to_json(r.report).dump();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated learning simulator core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "cosine_sim", [](const DoubleArray& a, const DoubleArray& b) { return cosine_sim(view(a), view(b)); },
      py::arg("a"), py::arg("b"), "Cosine similarity; 0 when either vector is (near) zero.");
  m.def("layer_loss", py::overload_cast<double, double, double>(&layer_loss), py::arg("sim_global"),
        py::arg("sim_prev"), py::arg("tau") = 0.5, "Contrastive loss of one sample at one layer.");
  m.def(
      "layer_weights", [](const std::vector<double>& sims, double tau) { return layer_weights(sims, tau); },
      py::arg("sims"), py::arg("tau") = 0.5, "softmax(sims / tau).");
  m.def(
      "compose_local_loss",
      [](double supervised, const std::vector<double>& losses, const std::vector<double>& alphas,
         const std::string& variant, double mu, double tau) {
        return compose_local_loss(supervised, losses, alphas, reg_config(variant, mu, tau));
      },
      py::arg("supervised"), py::arg("layer_losses"), py::arg("alphas"), py::arg("variant") = "fedintr",
      py::arg("mu") = 1.0, py::arg("tau") = 0.5);

  m.def(
      "dirichlet_partition",
      [](const std::vector<std::uint32_t>& labels, std::size_t n_clients, double beta, std::size_t min_client_size,
         std::uint64_t seed) { return dirichlet_partition(labels, n_clients, beta, min_client_size, seed).clients; },
      py::arg("labels"), py::arg("n_clients"), py::arg("beta"), py::arg("min_client_size") = 2, py::arg("seed") = 0,
      "Per-class Dirichlet label skew; returns one ascending index list per client.");
  m.def("sample_clients", &sample_clients, py::arg("n_clients"), py::arg("fraction"), py::arg("round"),
        py::arg("seed"));
  m.def(
      "median_last_k", [](const std::vector<double>& v, std::size_t k) { return median_last_k(v, k); },
      py::arg("values"), py::arg("k") = 10);

  m.def(
      "synth_dataset",
      [](std::size_t n, std::size_t classes, std::uint64_t seed, double noise) {
        const Dataset d = synth_dataset(n, classes, seed, noise);
        py::array_t<std::uint8_t> images({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(d.channels),
                                          static_cast<py::ssize_t>(d.height), static_cast<py::ssize_t>(d.width)});
        std::copy(d.images.begin(), d.images.end(), images.mutable_data());
        py::array_t<std::uint32_t> labels(static_cast<py::ssize_t>(d.size()));
        std::copy(d.labels.begin(), d.labels.end(), labels.mutable_data());
        return py::make_tuple(images, labels);
      },
      py::arg("n"), py::arg("classes"), py::arg("seed") = 0, py::arg("noise") = kSynthNoise);

  py::class_<Model>(m, "Model")
      .def(py::init<std::vector<std::size_t>, std::vector<std::size_t>, std::size_t, std::array<std::size_t, 3>,
                    std::size_t, std::uint64_t>(),
           py::arg("conv_channels"), py::arg("dense_widths"), py::arg("classes"),
           py::arg("input_shape") = std::array<std::size_t, 3>{1, 8, 8}, py::arg("head_output_dim") = 256,
           py::arg("seed") = 0)
      .def_property_readonly("parameter_count", [](const Model& md) { return md.state.params.size(); })
      .def_property("params", &Model::params, &Model::set_params)
      .def("logits", &Model::logits, py::arg("x"), "Forward pass on a float B x C x H x W batch.");

  m.def(
      "aggregate",
      [](const std::vector<Model>& models, const std::vector<std::size_t>& sizes) {
        std::vector<ModelState> states;
        for (const auto& md : models) states.push_back(md.state);
        return Model(aggregate(states, sizes));
      },
      py::arg("models"), py::arg("sizes"), "Size-weighted parameter mean.");

  m.def(
      "run",
      [](const std::string& config_json, const std::string& base_dir) {
        const ExperimentConfig cfg = parse_config(nlohmann::json::parse(config_json), base_dir);
        std::vector<PointResult> results;
        {
          py::gil_scoped_release release;
          const DataSplit data = load_datasets(cfg);
          for (const auto& p : expand_sweep(cfg)) results.push_back(run_point(p, data));
        }
        py::list out;
        for (const auto& r : results) out.append(point_to_dict(r));
        return out;
      },
      py::arg("config_json"), py::arg("base_dir") = "",
      "Train every sweep point of a JSON config in memory; nothing is written to disk.");
  m.def(
      "resolve_config",
      [](const std::string& config_json) { return config_to_json(parse_config(nlohmann::json::parse(config_json))).dump(); },
      py::arg("config_json"), "Strictly parse a JSON config and return the fully defaulted echo.");
  m.def(
      "partition_stats",
      [](const std::string& config_json) { return partition_stats_csv(parse_config(nlohmann::json::parse(config_json))); },
      py::arg("config_json"), "client,class,count CSV of the training partition.");
}
