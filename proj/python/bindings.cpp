#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "sncp/cli.hpp"
#include "sncp/error.hpp"
#include "sncp/metrics.hpp"
#include "sncp/nnls.hpp"
#include "sncp/solvers.hpp"
#include "sncp/synthetic.hpp"
#include "sncp/tensor_io.hpp"

namespace py = pybind11;
using namespace sncp;

namespace {

using FArray = py::array_t<double, py::array::f_style | py::array::forcecast>;

/// numpy array of any order -> tensor with the first index varying fastest.
DenseTensor to_tensor(const FArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  const double* p = a.data();
  return DenseTensor(std::move(shape), std::vector<double>(p, p + a.size()));
}

py::array_t<double> to_array(const DenseTensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  std::vector<py::ssize_t> strides(shape.size());
  py::ssize_t stride = sizeof(double);
  for (std::size_t n = 0; n < shape.size(); ++n) {
    strides[n] = stride;
    stride *= shape[n];
  }
  return py::array_t<double>(shape, strides, t.data().data());
}

FactorSet to_factors(const std::vector<Matrix>& fs) { return FactorSet(fs); }

py::dict trace_dict(const std::vector<IterationTrace>& trace) {
  const auto n = static_cast<py::ssize_t>(trace.size());
  py::array_t<std::uint64_t> iter(n);
  py::array_t<double> objective(n), ncp(n), rel_err(n), fit(n), elapsed(n);
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& r = trace[static_cast<std::size_t>(i)];
    iter.mutable_at(i) = r.iter;
    objective.mutable_at(i) = r.objective;
    ncp.mutable_at(i) = r.ncp_objective;
    rel_err.mutable_at(i) = r.rel_err;
    fit.mutable_at(i) = r.fit;
    elapsed.mutable_at(i) = r.elapsed_seconds;
  }
  py::dict d;
  d["iter"] = iter;
  d["objective"] = objective;
  d["ncp_objective"] = ncp;
  d["rel_err"] = rel_err;
  d["fit"] = fit;
  d["elapsed_seconds"] = elapsed;
  return d;
}

py::dict certificate_dict(const KktCertificate& c) {
  py::dict d;
  d["max_primal_violation"] = c.max_primal_violation;
  d["max_dual_violation"] = c.max_dual_violation;
  d["max_stationarity"] = c.max_stationarity;
  d["max_complementarity"] = c.max_complementarity;
  d["scale"] = c.scale;
  d["iteration_cap_hit"] = c.iteration_cap_hit;
  return d;
}

py::tuple nnls_result(const NnlsResult& r) { return py::make_tuple(r.solution, certificate_dict(r.certificate)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse nonnegative CP tensor decomposition (C++ core).";

  auto base = py::register_exception<Error>(m, "SncpError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<IllConditionedError>(m, "IllConditionedError", base.ptr());

  m.attr("METHODS") = [] {
    py::list names;
    for (Method x : kAllMethods) names.append(std::string(to_string(x)));
    return names;
  }();
  m.attr("DEFAULT_SPARSITY_THRESHOLD") = kDefaultSparsityThreshold;
  m.attr("PSNR_CAP_DB") = kPsnrCapDb;

  py::class_<SolverConfig>(m, "SolverConfig")
      .def(py::init<>())
      .def_readwrite("rank", &SolverConfig::rank)
      .def_readwrite("alpha", &SolverConfig::alpha)
      .def_readwrite("beta", &SolverConfig::beta)
      .def_property(
          "method", [](const SolverConfig& c) { return std::string(to_string(c.method)); },
          [](SolverConfig& c, const std::string& s) { c.method = parse_method(s); })
      .def_readwrite("stop_epsilon", &SolverConfig::stop_epsilon)
      .def_property(
          "stop_rule", [](const SolverConfig& c) { return std::string(to_string(c.stop_rule)); },
          [](SolverConfig& c, const std::string& s) { c.stop_rule = parse_stop_rule(s); })
      .def_readwrite("max_iters", &SolverConfig::max_iters)
      .def_readwrite("max_seconds", &SolverConfig::max_seconds)
      .def_readwrite("rng_seed", &SolverConfig::rng_seed)
      .def_readwrite("mu_floor", &SolverConfig::mu_floor)
      .def_readwrite("mu_init_offset", &SolverConfig::mu_init_offset)
      .def_readwrite("apg_delta_omega", &SolverConfig::apg_delta_omega)
      .def_readwrite("nnls_tol", &SolverConfig::nnls_tol)
      .def("validate", &SolverConfig::validate, py::arg("order"))
      .def("__repr__", [](const SolverConfig& c) {
        std::ostringstream s;
        s << "SolverConfig(method='" << to_string(c.method) << "', rank=" << c.rank << ", rng_seed=" << c.rng_seed << ")";
        return s.str();
      });

  py::class_<DecompositionResult>(m, "DecompositionResult")
      .def_property_readonly("factors", [](const DecompositionResult& r) { return r.factors.factors; })
      .def_property_readonly("trace", [](const DecompositionResult& r) { return trace_dict(r.trace); })
      .def_property_readonly("termination", [](const DecompositionResult& r) { return std::string(to_string(r.termination)); })
      .def_readonly("iterations", &DecompositionResult::iterations)
      .def_readonly("wall_seconds", &DecompositionResult::wall_seconds)
      .def_readonly("initial_objective", &DecompositionResult::initial_objective)
      .def_readonly("apg_restarts", &DecompositionResult::apg_restarts)
      .def_property_readonly("objective", [](const DecompositionResult& r) { return r.trace.back().objective; })
      .def_property_readonly("rel_err", [](const DecompositionResult& r) { return r.trace.back().rel_err; });

  m.def(
      "decompose",
      [](const FArray& x, const SolverConfig& cfg, std::optional<std::vector<Matrix>> initial,
         std::function<bool(py::dict)> callback) {
        const DenseTensor t = to_tensor(x);
        std::optional<FactorSet> init;
        if (initial) init = to_factors(*initial);
        ProgressCallback progress;
        if (callback) {
          progress = [&callback](const IterationTrace& r) {
            py::gil_scoped_acquire gil;
            py::dict row;
            row["iter"] = r.iter;
            row["objective"] = r.objective;
            row["ncp_objective"] = r.ncp_objective;
            row["rel_err"] = r.rel_err;
            row["fit"] = r.fit;
            row["elapsed_seconds"] = r.elapsed_seconds;
            return callback(row);
          };
        }
        py::gil_scoped_release release;
        return decompose(t, cfg, std::move(init), progress);
      },
      py::arg("x"), py::arg("config"), py::arg("initial") = py::none(), py::arg("callback") = nullptr,
      "Run one configured decomposition of a nonnegative tensor (order >= 3).");

  m.def(
      "init_factors",
      [](const std::vector<std::size_t>& shape, const SolverConfig& cfg) { return init_factors(shape, cfg).factors; },
      py::arg("shape"), py::arg("config"));
  m.def(
      "kruskal_to_dense", [](const std::vector<Matrix>& fs) { return to_array(kruskal_to_dense(to_factors(fs))); },
      py::arg("factors"));
  m.def(
      "mttkrp", [](const FArray& x, const std::vector<Matrix>& fs, std::size_t mode) {
        return mttkrp(to_tensor(x), to_factors(fs), mode);
      },
      py::arg("x"), py::arg("factors"), py::arg("mode"));
  m.def(
      "ncp_objective", [](const FArray& x, const std::vector<Matrix>& fs) {
        return naive_ncp_objective(to_tensor(x), to_factors(fs));
      },
      py::arg("x"), py::arg("factors"), "Half the squared residual norm of the Kruskal model.");
  m.def(
      "objective",
      [](const FArray& x, const std::vector<Matrix>& fs, const SolverConfig& cfg) {
        const FactorSet f = to_factors(fs);
        return full_objective(naive_ncp_objective(to_tensor(x), f), f, cfg);
      },
      py::arg("x"), py::arg("factors"), py::arg("config"), "Residual term plus the configured penalties.");

  m.def(
      "nnls_active_set", [](const Matrix& gram, const Matrix& rhs, double tol) {
        return nnls_result(nnls_active_set(NnlsProblem{gram, rhs}, tol));
      },
      py::arg("gram"), py::arg("rhs"), py::arg("tol") = kDefaultNnlsTolerance);
  m.def(
      "nnls_bpp", [](const Matrix& gram, const Matrix& rhs, double tol) {
        return nnls_result(nnls_block_principal_pivoting(NnlsProblem{gram, rhs}, tol));
      },
      py::arg("gram"), py::arg("rhs"), py::arg("tol") = kDefaultNnlsTolerance);

  m.def("sparsity_level", &sparsity_level, py::arg("a"), py::arg("threshold") = kDefaultSparsityThreshold);
  m.def("count_nonzero_components", &count_nonzero_components, py::arg("a"),
        py::arg("threshold") = kDefaultSparsityThreshold);
  m.def("nonzero_component_indices", &nonzero_component_indices, py::arg("a"),
        py::arg("threshold") = kDefaultSparsityThreshold);
  m.def(
      "psnr",
      [](const Matrix& est, const Matrix& ref) {
        const PsnrReport r = psnr(est, ref);
        py::list pairs;
        for (const auto& p : r.matched_pairs) {
          py::dict d;
          d["estimated"] = p.estimated;
          d["reference"] = p.reference;
          d["correlation"] = p.correlation;
          d["psnr_db"] = p.psnr_db;
          pairs.append(d);
        }
        py::dict d;
        d["psnr_db"] = r.psnr_db;
        d["matched_pairs"] = pairs;
        d["excluded"] = r.excluded;
        return d;
      },
      py::arg("estimated"), py::arg("reference"));

  m.def("generate_sparse_signals", &generate_sparse_signals, py::arg("length"), py::arg("channels"),
        py::arg("seed") = kSignalAssetSeed);
  m.def("preset_names", &preset_names);
  m.def(
      "synthetic",
      [](const std::string& name, std::uint64_t seed, std::optional<double> snr) {
        const Preset p = preset(name);
        const SyntheticData d = generate_synthetic(make_spec(p, seed, snr.value_or(p.snr_db)));
        py::dict out;
        out["tensor"] = to_array(d.tensor);
        out["truth"] = d.truth.factors;
        out["achieved_snr_db"] = d.achieved_snr_db;
        return out;
      },
      py::arg("preset"), py::arg("seed"), py::arg("snr_db") = py::none(),
      "Synthetic benchmark tensor of a named preset with its ground-truth factors.");

  m.def(
      "read_dnt", [](const std::string& path) { return to_array(read_dnt(std::filesystem::path(path))); },
      py::arg("path"));
  m.def(
      "write_dnt", [](const std::string& path, const FArray& a) { write_dnt(std::filesystem::path(path), to_tensor(a)); },
      py::arg("path"), py::arg("array"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a command line in-process; returns (exit_code, stdout, stderr).");
}
