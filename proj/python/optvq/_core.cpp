#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "optvq/checkpoint.hpp"
#include "optvq/config.hpp"
#include "optvq/data.hpp"
#include "optvq/experiments.hpp"
#include "optvq/quantizer.hpp"
#include "optvq/transport.hpp"

namespace py = pybind11;
using namespace optvq;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  if (m.size()) std::memcpy(m.data().data(), a.data(), m.size() * sizeof(double));
  return m;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  if (m.size()) std::memcpy(a.mutable_data(), m.data().data(), m.size() * sizeof(double));
  return a;
}

SinkhornConfig sinkhorn_cfg(double epsilon, int iterations, bool normalize, bool balanced) {
  SinkhornConfig cfg{epsilon, iterations, normalize, balanced};
  cfg.validate();
  return cfg;
}

py::dict eval_dict(const EvalReport& r) {
  py::dict d;
  d["psnr"] = r.psnr;
  d["l1"] = r.l1;
  d["l2"] = r.l2;
  d["l_rec"] = r.l_rec;
  d["commit"] = r.commit;
  d["usage_frac"] = r.usage_frac;
  d["perplexity"] = r.perplexity;
  return d;
}

RunConfig run_config(const std::map<std::string, std::string>& overrides) {
  RunConfig rc;
  for (const auto& [k, v] : overrides) rc.set(k, v);
  return rc;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Optimal-transport vector quantization core";

  auto base = py::register_exception<Error>(m, "OptVQError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  auto data = py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", data.ptr());
  auto numerical = py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<ConvergenceError>(m, "ConvergenceError", numerical.ptr());

  m.def("pairwise_sq_distances",
        [](const Array& z, const Array& c) { return to_array(pairwise_sq_distances(to_matrix(z), to_matrix(c))); },
        py::arg("z"), py::arg("codes"));

  m.def("normalize_cost", [](const Array& d) { return to_array(normalize_cost(to_matrix(d))); },
        py::arg("cost"));

  m.def(
      "sinkhorn",
      [](const Array& d, double epsilon, int iterations, bool normalize, bool balanced) {
        return to_array(sinkhorn(to_matrix(d), sinkhorn_cfg(epsilon, iterations, normalize, balanced)).plan);
      },
      py::arg("cost"), py::arg("epsilon") = 10.0, py::arg("iterations") = 5, py::arg("normalize") = true,
      py::arg("balanced") = false);

  m.def(
      "sinkhorn_converged",
      [](const Array& d, double epsilon, double tol, int max_iters, bool normalize, bool balanced) {
        return to_array(sinkhorn_converged(to_matrix(d), epsilon, tol, max_iters, normalize, balanced).plan);
      },
      py::arg("cost"), py::arg("epsilon") = 10.0, py::arg("tol") = 1e-12, py::arg("max_iters") = 100000,
      py::arg("normalize") = true, py::arg("balanced") = false);

  m.def(
      "nn_assign",
      [](const Array& z, const Array& codes) {
        Codebook book(to_matrix(codes));
        return nn_assign(to_matrix(z), book).indices;
      },
      py::arg("z"), py::arg("codes"));

  m.def(
      "optvq_assign",
      [](const Array& z, const Array& codes, double epsilon, int iterations, bool normalize, bool balanced) {
        Codebook book(to_matrix(codes));
        return optvq_assign(to_matrix(z), book, sinkhorn_cfg(epsilon, iterations, normalize, balanced)).indices;
      },
      py::arg("z"), py::arg("codes"), py::arg("epsilon") = 10.0, py::arg("iterations") = 5,
      py::arg("normalize") = true, py::arg("balanced") = false);

  m.def(
      "quantize",
      [](const Array& z, const std::vector<Array>& codebooks, const std::string& kind, double epsilon,
         int iterations, double beta) {
        std::vector<Codebook> books;
        for (const auto& c : codebooks) books.emplace_back(to_matrix(c));
        QuantizerConfig cfg;
        cfg.kind = parse_quantizer_kind(kind);
        cfg.sinkhorn = sinkhorn_cfg(epsilon, iterations, true, false);
        cfg.heads = books.size();
        cfg.beta = beta;
        const Matrix zm = to_matrix(z);
        cfg.validate(zm.cols());
        const MultiheadResult r = multihead_quantize(zm, books, cfg);
        std::vector<std::vector<std::size_t>> idx;
        for (const auto& a : r.assignments) idx.push_back(a.indices);
        return py::make_tuple(to_array(r.quantized), idx);
      },
      py::arg("z"), py::arg("codebooks"), py::arg("kind") = "optvq", py::arg("epsilon") = 10.0,
      py::arg("iterations") = 5, py::arg("beta") = 0.25,
      "Multi-head quantization; returns (z_q, per-head index lists).");

  m.def(
      "commitment_loss",
      [](const Array& ze, const Array& zq, double beta) {
        const CommitmentLoss l = commitment_loss(to_matrix(ze), to_matrix(zq), beta);
        return py::make_tuple(l.loss, to_array(l.grad_ze), to_array(l.grad_zq));
      },
      py::arg("z_e"), py::arg("z_q"), py::arg("beta") = 0.25);

  m.def(
      "usage_stats",
      [](const std::vector<std::size_t>& indices, std::size_t n) {
        const UsageStats s = usage_stats(indices, n);
        py::dict d;
        d["fraction_used"] = s.fraction_used;
        d["perplexity"] = s.perplexity;
        d["histogram"] = s.histogram;
        return d;
      },
      py::arg("indices"), py::arg("n"));

  m.def(
      "psnr", [](const Array& x, const Array& y, double peak) { return psnr(to_matrix(x), to_matrix(y), peak); },
      py::arg("x"), py::arg("xhat"), py::arg("peak") = 1.0);

  m.def(
      "load_mnist_idx",
      [](const std::string& images, const std::string& labels) {
        const ImageDataset ds = load_mnist_idx(images, labels);
        return py::make_tuple(to_array(ds.images), ds.labels);
      },
      py::arg("images_path"), py::arg("labels_path"));

  m.def(
      "train",
      [](const std::map<std::string, std::string>& overrides) {
        const RunConfig rc = run_config(overrides);
        TrainRunResult res;
        {
          py::gil_scoped_release release;
          res = run_training(rc.train_config(), load_datasets(rc));
        }
        py::list steps;
        for (const auto& s : res.steps) {
          py::dict d;
          d["step"] = s.step;
          d["l1"] = s.l1;
          d["l2"] = s.l2;
          d["commit"] = s.commit;
          d["total"] = s.total;
          d["usage_frac"] = s.usage_frac;
          d["perplexity"] = s.perplexity;
          steps.append(d);
        }
        py::dict out;
        out["steps"] = steps;
        out["validation"] = eval_dict(res.validation);
        out["checkpoint"] = py::bytes([&] {
          const auto b = serialize_checkpoint({res.state, rc.to_text()});
          return std::string(b.begin(), b.end());
        }());
        return out;
      },
      py::arg("config") = std::map<std::string, std::string>{},
      "Trains from config key/value overrides; returns steps, validation metrics and checkpoint bytes.");

  m.def(
      "dynamics2d",
      [](std::uint64_t seed, std::size_t steps) {
        Dynamics2dOptions opt;
        opt.seed = seed;
        opt.steps = steps;
        const Dynamics2dResult r = run_dynamics2d(opt);
        py::dict d;
        d["points"] = to_array(r.points);
        d["initial_codes"] = to_array(r.initial_codes);
        d["nearest_usage"] = r.nearest.usage;
        d["optvq_usage"] = r.optvq.usage;
        d["nearest_codes"] = to_array(r.nearest.trajectory.back());
        d["optvq_codes"] = to_array(r.optvq.trajectory.back());
        return d;
      },
      py::arg("seed") = 0, py::arg("steps") = 300);
}
