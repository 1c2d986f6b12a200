#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>

#include <string>
#include <vector>

#include "merit/datagen.hpp"
#include "merit/error.hpp"
#include "merit/harness.hpp"
#include "merit/metrics.hpp"
#include "merit/models.hpp"
#include "merit/verify.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace merit;

namespace {

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v) {
  // Explicit strides: the count-only constructor yields zero strides here.
  py::array_t<T> out({static_cast<py::ssize_t>(v.size())}, {static_cast<py::ssize_t>(sizeof(T))});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

json parse(const std::string& text) {
  try {
    return text.empty() ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kParse, e.what());
  }
}

std::vector<double> doubles(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

std::vector<int> ints(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

std::vector<std::uint64_t> ids(const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

py::dict columns(const Dataset& d) {
  std::vector<int> y;
  std::vector<double> z;
  std::vector<std::uint64_t> session, user, hotel;
  std::vector<std::uint32_t> position;
  for (const Impression& imp : d.impressions) {
    y.push_back(imp.y);
    z.push_back(imp.z);
    session.push_back(imp.session_id);
    user.push_back(imp.user_id);
    hotel.push_back(imp.hotel_id);
    position.push_back(imp.position);
  }
  py::dict out;
  out["y"] = to_array(y);
  out["z"] = to_array(z);
  out["session_id"] = to_array(session);
  out["user_id"] = to_array(user);
  out["hotel_id"] = to_array(hotel);
  out["position"] = to_array(position);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "MERIT merchant-incentive ranking toolkit";

  static py::exception<Error> merit_error(m, "MeritError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      merit_error(("[" + std::string(to_string(e.kind())) + "] " + e.what()).c_str());
    }
  });

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def("columns", &columns, "Per-impression arrays: y, z, session_id, user_id, hotel_id, position.")
      .def("save", [](const Dataset& d, const std::string& path) { write_dataset(d, path); })
      .def("save_schema", [](const Dataset& d, const std::string& path) { write_schema(*d.schema, path); });

  m.def(
      "_generate",
      [](const std::string& config) {
        const WorldConfig c = WorldConfig::from_json(parse(config));
        SimulatedLog log;
        {
          py::gil_scoped_release release;
          log = simulate_impressions(generate_world(c), c);
        }
        return py::make_tuple(std::move(log.train), std::move(log.test));
      },
      py::arg("config_json"));

  m.def(
      "load_dataset",
      [](const std::string& path, const std::string& schema_path) { return read_dataset(path, read_schema(schema_path)); },
      py::arg("path"), py::arg("schema_path"));

  py::class_<models::Model>(m, "Model")
      .def_property_readonly("architecture", [](const models::Model& model) { return models::to_string(model.spec().arch); })
      .def(
          "predict",
          [](const models::Model& model, const Dataset& d, std::size_t threads) {
            models::Predictions p;
            {
              py::gil_scoped_release release;
              p = model.predict(d, threads);
            }
            py::dict out;
            out["pctr"] = to_array(p.pctr);
            out["pcvr"] = to_array(p.pcvr);
            out["pctcvr"] = to_array(p.pctcvr);
            return out;
          },
          py::arg("dataset"), py::arg("threads") = 1)
      .def("save", [](const models::Model& model, const std::string& path) { models::save_checkpoint(model, path); });

  m.def("load_checkpoint", [](const std::string& path) { return models::load_checkpoint(path); }, py::arg("path"));

  m.def("preset_names", &harness::preset_names);

  m.def(
      "_train",
      [](const std::string& config, const Dataset& train_set, const Dataset* monitor) {
        const harness::TrainConfig c = harness::TrainConfig::from_json(parse(config));
        harness::TrainResult r = [&] {
          py::gil_scoped_release release;
          return harness::train(c, train_set, monitor);
        }();
        py::list history;
        for (const auto& e : r.history) {
          py::dict row;
          row["epoch"] = e.epoch;
          row["loss"] = e.loss;
          row["esmm"] = e.esmm;
          row["pair_ctrcvr"] = e.pair_ctrcvr;
          row["pair_mci"] = e.pair_mci;
          row["penalty"] = e.penalty;
          row["l2"] = e.l2;
          row["ctcvr_auc"] = e.ctcvr_auc ? py::cast(*e.ctcvr_auc) : py::none();
          row["ndcg@20"] = e.ndcg20 ? py::cast(*e.ndcg20) : py::none();
          history.append(row);
        }
        return py::make_tuple(std::move(r.model), history);
      },
      py::arg("config_json"), py::arg("train"), py::arg("monitor") = nullptr);

  m.def(
      "_evaluate",
      [](const models::Model& model, const Dataset& test, std::size_t threads) {
        metrics::MetricsReport r;
        {
          py::gil_scoped_release release;
          r = harness::evaluate(model, test, threads);
        }
        return r.to_json().dump();
      },
      py::arg("model"), py::arg("test"), py::arg("threads") = 1);

  m.def(
      "auc",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& s,
         const py::array_t<int, py::array::c_style | py::array::forcecast>& l) { return metrics::auc(doubles(s), ints(l)); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "gauc",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& s,
         const py::array_t<int, py::array::c_style | py::array::forcecast>& l,
         const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& u) {
        return metrics::gauc(doubles(s), ints(l), ids(u)).value;
      },
      py::arg("scores"), py::arg("labels"), py::arg("user_ids"));
  m.def(
      "ndcg_at_k",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& s,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& z,
         std::size_t k) { return metrics::ndcg_at_k(doubles(s), doubles(z), k); },
      py::arg("scores"), py::arg("z"), py::arg("k"));
  m.def(
      "wndcg_at_k",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& s,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& z,
         const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& sessions,
         std::size_t k) { return metrics::wndcg_at_k(doubles(s), doubles(z), ids(sessions), k); },
      py::arg("scores"), py::arg("z"), py::arg("session_ids"), py::arg("k"));

  m.def(
      "_verify",
      [](const std::string& which, std::uint64_t seed) {
        std::vector<verify::CheckResult> results;
        {
          py::gil_scoped_release release;
          if (which == "all") {
            results = verify::run_all(seed);
          } else if (which == "metrics") {
            results = {verify::metric_oracles(seed)};
          } else if (which == "contracts") {
            results = {verify::entire_space_identity(seed), verify::conflict_masking(), verify::penalty_consistency(seed)};
          } else if (which == "gradients") {
            results = verify::gradient_checks(seed);
          } else {
            fail(ErrorKind::kInvalidArgument, "unknown check group '" + which + "'");
          }
        }
        json out = json::array();
        for (const auto& r : results) out.push_back(r.to_json());
        return out.dump();
      },
      py::arg("which"), py::arg("seed") = 1);
}
