#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "corrosion/gradcheck.hpp"
#include "corrosion/simulation.hpp"

namespace py = pybind11;
using namespace corrosion;

namespace {

std::span<const std::uint8_t> as_span(const py::bytes& b) {
  const std::string_view v = b;
  return {reinterpret_cast<const std::uint8_t*>(v.data()), v.size()};
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::dict point_dict(const AccuracyPoint& p) {
  py::dict d;
  d["measured_at"] = p.measured_at;
  d["accuracy"] = p.accuracy;
  d["cumulative_votes"] = p.cumulative_votes;
  d["cumulative_uploads"] = p.cumulative_uploads;
  d["session_id"] = p.session_id;
  d["trained_on"] = p.trained_on;
  return d;
}

SceneKind parse_kind(const std::string& s) {
  for (auto k : {SceneKind::kNegative, SceneKind::kPositive, SceneKind::kAmbiguous})
    if (s == scene_kind_name(k)) return k;
  throw Error(ErrorCode::kInvalidArgument, "unknown scene kind '" + s + "'");
}

ServiceConfig service_config(const std::map<std::string, std::string>& settings) {
  ServiceConfig c;
  c.background_training = false;
  for (const auto& [k, v] : settings) apply_service_setting(c, k, v);
  c.model.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Crowd-trained corrosion classifier";

  static py::exception<Error> error(m, "CorrosionError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error;
      PyErr_SetObject(exc.ptr(), py::make_tuple(std::string(error_code_name(e.code())), e.what()).ptr());
    }
  });

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("input_size", &ModelConfig::input_size)
      .def_property(
          "channels", [](const ModelConfig& c) { return std::vector<std::size_t>(c.channels.begin(), c.channels.end()); },
          [](ModelConfig& c, const std::vector<std::size_t>& v) {
            if (v.size() != kNumBlocks) throw Error(ErrorCode::kInvalidConfig, "channels needs 5 values");
            std::copy(v.begin(), v.end(), c.channels.begin());
          })
      .def("validate", &ModelConfig::validate);

  py::class_<ModelWeights>(m, "Weights")
      .def_property_readonly("parameter_count", &ModelWeights::parameter_count)
      .def_property_readonly("names",
                             [](const ModelWeights& w) {
                               std::vector<std::string> out;
                               for (const auto& t : w.tensors) out.push_back(t.name);
                               return out;
                             })
      .def("__getitem__", [](const ModelWeights& w, const std::string& name) { return to_array(w.get(name)); })
      .def("to_bytes", [](const ModelWeights& w) { return to_bytes(serialize_weights(w)); })
      .def_static("from_bytes", [](const py::bytes& b) { return deserialize_weights(as_span(b)); })
      .def("save", [](const ModelWeights& w, const std::filesystem::path& p) { save_weights(w, p); })
      .def_static("load", [](const std::filesystem::path& p) { return load_weights(p); })
      .def("bit_equal", &ModelWeights::bit_equal);

  m.def("build_model", &build_model, py::arg("config"), py::arg("seed"));
  m.def(
      "predict",
      [](const ModelConfig& c, const ModelWeights& w, const py::array_t<float, py::array::c_style | py::array::forcecast>& image) {
        const Prediction p = predict(c, w, from_array(image));
        return py::make_tuple(label_name(p.label), p.confidence);
      },
      py::arg("config"), py::arg("weights"), py::arg("image"));
  m.def(
      "decode_image",
      [](const py::bytes& payload, std::size_t size) { return to_array(to_model_input(decode_image(as_span(payload)), size)); },
      py::arg("payload"), py::arg("size") = 64, "Decode PNG/JPEG/PPM bytes to a [3,S,S] float array in [0,1].");
  m.def(
      "synthetic_image",
      [](std::uint64_t seed, std::size_t size, const std::string& kind) {
        SyntheticSpec s;
        s.seed = seed;
        s.image_size = size;
        s.kind = parse_kind(kind);
        const auto img = generate_image(s);
        return py::make_tuple(to_bytes(encode_png(img.image)), label_name(img.truth));
      },
      py::arg("seed"), py::arg("size") = 64, py::arg("kind") = "positive", "PNG bytes and the true label.");
  m.def("majority_accuracy_oracle", &majority_accuracy_oracle, py::arg("p"), py::arg("k"));
  m.def(
      "aggregate_label",
      [](std::uint32_t corrosion, std::uint32_t no_corrosion) -> std::optional<std::string> {
        const auto l = aggregate_label({corrosion, no_corrosion});
        if (!l) return std::nullopt;
        return std::string(label_name(*l));
      },
      py::arg("corrosion"), py::arg("no_corrosion"));
  m.def("gradcheck", [](std::uint64_t seed) {
    GradcheckOptions opt;
    opt.seed = seed;
    std::vector<GradcheckCase> cases;
    {
      py::gil_scoped_release nogil;
      cases = run_gradcheck_suite(opt);
    }
    py::list out;
    for (const auto& c : cases) {
      py::dict d;
      d["op"] = c.op;
      d["shape"] = c.shape;
      d["max_error"] = c.max_error;
      d["composite"] = c.composite;
      d["passed"] = c.passed;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = GradcheckOptions{}.seed);

  py::class_<CorrosionService>(m, "Service")
      .def(py::init([](const std::map<std::string, std::string>& settings) {
             return std::make_unique<CorrosionService>(service_config(settings));
           }),
           py::arg("settings") = std::map<std::string, std::string>{},
           "Settings use the service config keys, e.g. {'data_dir': ..., 'retrain.k': '20'}.")
      .def(
          "seed_synthetic",
          [](CorrosionService& s, std::size_t pool, std::size_t validation, std::size_t labeled, std::uint64_t seed) {
            CorpusSpec spec;
            spec.seed = seed;
            spec.pool_size = pool;
            spec.validation_size = validation;
            spec.seed_labeled = labeled;
            spec.image_size = s.config().model.input_size;
            py::list out;
            for (const auto& c : seed_synthetic_corpus(s.store(), spec)) {
              py::dict d;
              d["id"] = c.id;
              d["truth"] = label_name(c.truth);
              d["validation"] = c.partition == Partition::kValidation;
              out.append(d);
            }
            return out;
          },
          py::arg("pool"), py::arg("validation"), py::arg("labeled"), py::arg("seed") = 1)
      .def("bootstrap", &CorrosionService::bootstrap, py::call_guard<py::gil_scoped_release>())
      .def("quiz",
           [](CorrosionService& s) {
             std::vector<std::string> ids;
             for (const auto& r : s.quiz()) ids.push_back(r.id);
             return ids;
           })
      .def(
          "vote",
          [](CorrosionService& s, const std::vector<std::pair<std::string, bool>>& entries, const std::string& token) {
            std::vector<BallotEntry> ballot;
            for (const auto& [id, c] : entries) ballot.push_back({id, c});
            py::gil_scoped_release nogil;
            return s.submit_ballot(ballot, token).newly_labeled;
          },
          py::arg("ballot"), py::arg("token"))
      .def("detect",
           [](CorrosionService& s, const py::bytes& payload) {
             const auto r = s.detect(as_span(payload));
             py::dict d;
             d["image_id"] = r.image_id;
             d["prediction"] = label_name(r.prediction.label);
             d["confidence"] = r.prediction.confidence;
             d["model_version"] = r.model_version;
             return d;
           })
      .def("correct", &CorrosionService::correct, py::arg("image_id"), py::arg("corrosion"), py::arg("token"))
      .def("label",
           [](const CorrosionService& s, const std::string& id) -> std::optional<std::string> {
             const auto r = s.store().find(id);
             if (!r) throw Error(ErrorCode::kUnknownImage, "unknown image " + id);
             if (!r->label) return std::nullopt;
             return std::string(label_name(*r->label));
           })
      .def("stats",
           [](const CorrosionService& s) {
             const auto st = s.stats();
             py::list history;
             for (const auto& p : st.accuracy_history) history.append(point_dict(p));
             py::dict d;
             d["accuracy_history"] = history;
             d["cumulative_votes"] = st.cumulative_votes;
             d["cumulative_uploads"] = st.cumulative_uploads;
             d["model_version"] = st.model_version;
             d["labeled_count"] = st.labeled_count;
             return d;
           })
      .def("retrain_now",
           [](CorrosionService& s) {
             RetrainResult r;
             {
               py::gil_scoped_release nogil;
               r = s.retrain_now();
             }
             return py::make_tuple(r.outcome == RetrainOutcome::kPublished, r.version, r.message);
           })
      .def_property_readonly("weights", [](const CorrosionService& s) { return s.current_model()->weights; })
      .def_property_readonly("model_config", [](const CorrosionService& s) { return s.config().model; });
}
