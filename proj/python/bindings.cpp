// Python bindings: ACTV corpora, checkpoints, catalogs and steering vectors,
// with activations exchanged as float32 NumPy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "latent_forge/activation_store.hpp"
#include "latent_forge/cli.hpp"
#include "latent_forge/feature_pipeline.hpp"
#include "latent_forge/sae.hpp"
#include "latent_forge/steering.hpp"

namespace py = pybind11;
using namespace latent_forge;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Matrix& m) {
  py::array_t<float> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

Matrix from_numpy(const FloatArray& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  Matrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

std::vector<float> vec_from_numpy(const FloatArray& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

py::array_t<float> vec_to_numpy(const std::vector<float>& v) {
  py::array_t<float> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_latent_forge, m) {
  m.doc() = "Native core of latent_forge";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<CorpusManifest>(m, "CorpusManifest")
      .def(py::init<>())
      .def_readwrite("model_name", &CorpusManifest::model_name)
      .def_readwrite("layer_index", &CorpusManifest::layer_index)
      .def_readwrite("d", &CorpusManifest::d)
      .def_readwrite("track_count", &CorpusManifest::track_count)
      .def_readwrite("source_notes", &CorpusManifest::source_notes);

  py::class_<ActivationCorpus>(m, "ActivationCorpus")
      .def(py::init<>())
      .def_readwrite("manifest", &ActivationCorpus::manifest)
      .def_property_readonly("track_ids",
                             [](const ActivationCorpus& c) {
                               std::vector<std::string> ids;
                               for (const auto& t : c.tracks) ids.push_back(t.track_id);
                               return ids;
                             })
      .def("__len__", [](const ActivationCorpus& c) { return c.tracks.size(); })
      .def("track", [](const ActivationCorpus& c, std::size_t i) {
        if (i >= c.tracks.size()) throw py::index_error("track index out of range");
        return to_numpy(c.tracks[i].data);
      })
      .def("add_track", [](ActivationCorpus& c, std::string id, const FloatArray& a) {
        c.tracks.push_back({std::move(id), from_numpy(a)});
        c.manifest.track_count = c.tracks.size();
      })
      .def("total_rows", &ActivationCorpus::total_rows)
      .def("digest", [](const ActivationCorpus& c) { return track_set_digest(c); });

  m.def("read_corpus", &read_corpus_file, py::arg("path"));
  m.def("write_corpus",
        [](const ActivationCorpus& c, const std::filesystem::path& p) {
          validate_corpus(c);
          return write_corpus_file(c, p);
        },
        py::arg("corpus"), py::arg("path"));

  py::class_<SaeModel>(m, "Sae")
      .def_static("load", &load_checkpoint_file, py::arg("path"))
      .def_property_readonly("d", &SaeModel::d)
      .def_property_readonly("latent_dim", &SaeModel::latent_dim)
      .def_property_readonly("k", &SaeModel::k)
      .def_property_readonly("digest", [](const SaeModel& s) { return checkpoint_digest(s); })
      .def("decoder_column",
           [](const SaeModel& s, std::uint32_t j) {
             if (j >= s.latent_dim()) throw py::index_error("feature id out of range");
             return vec_to_numpy(s.decoder_column(j));
           })
      .def("encode",
           [](const SaeModel& s, const FloatArray& x) {
             const Matrix in = from_numpy(x);
             require_input_dim(s, static_cast<std::uint32_t>(in.cols));
             Matrix out(in.rows, s.latent_dim());
             for (std::size_t r = 0; r < in.rows; ++r) {
               const auto code = encode(s, in.row(r));
               std::copy(code.sparse.begin(), code.sparse.end(), out.row(r).begin());
             }
             return to_numpy(out);
           },
           py::arg("x"), "Sparse codes for each row of x (rows x d)")
      .def("reconstruction_loss",
           [](const SaeModel& s, const FloatArray& x) {
             const Matrix in = from_numpy(x);
             return reconstruction_loss(s, in.data, in.rows).per_row_sum;
           });

  m.def("top_k_project",
        [](const FloatArray& h, std::uint32_t k) { return vec_to_numpy(top_k_project(vec_from_numpy(h), k)); },
        py::arg("h"), py::arg("k"));

  py::class_<TopExample>(m, "TopExample")
      .def_readonly("track_id", &TopExample::track_id)
      .def_readonly("mu", &TopExample::mu)
      .def_readonly("max", &TopExample::max);

  py::class_<FeatureSummary>(m, "FeatureSummary")
      .def_readonly("feature_id", &FeatureSummary::feature_id)
      .def_readonly("rate", &FeatureSummary::rate)
      .def_readonly("active_tracks", &FeatureSummary::active_tracks)
      .def_property_readonly("verdict",
                             [](const FeatureSummary& s) { return std::string(to_string(s.verdict)); })
      .def_readonly("mean_strength", &FeatureSummary::mean_strength)
      .def_readonly("top_examples", &FeatureSummary::top_examples);

  py::class_<FeatureCatalog>(m, "FeatureCatalog")
      .def_property_readonly("sae_label", [](const FeatureCatalog& c) { return c.sae.label(); })
      .def_property_readonly("layer_index", [](const FeatureCatalog& c) { return c.sae.layer_index; })
      .def_property_readonly("checkpoint_digest",
                             [](const FeatureCatalog& c) { return c.sae.checkpoint_digest; })
      .def_readonly("corpus_digest", &FeatureCatalog::corpus_digest)
      .def_readonly("n_tracks", &FeatureCatalog::n_tracks)
      .def_readonly("features", &FeatureCatalog::summaries)
      .def("counts", [](const FeatureCatalog& c) {
        const auto n = c.counts();
        return py::dict(py::arg("kept") = n.kept, py::arg("inactive") = n.inactive,
                        py::arg("ubiquitous") = n.ubiquitous, py::arg("obscure") = n.obscure);
      });

  m.def("read_catalog", &read_catalog_file, py::arg("path"));

  py::class_<SteeringVector>(m, "SteeringVector")
      .def_property_readonly("model_name", [](const SteeringVector& v) { return v.sae.model_name; })
      .def_property_readonly("layer_index", [](const SteeringVector& v) { return v.sae.layer_index; })
      .def_readonly("feature_id", &SteeringVector::feature_id)
      .def_readonly("alpha", &SteeringVector::alpha)
      .def_readonly("beta", &SteeringVector::beta)
      .def_readonly("control", &SteeringVector::control)
      .def_property_readonly("delta", [](const SteeringVector& v) { return vec_to_numpy(v.delta); })
      .def_property_readonly("direction",
                             [](const SteeringVector& v) { return vec_to_numpy(v.direction); });

  m.def("read_steering_vector", &read_steering_vector, py::arg("path"));
  m.def("apply_steering",
        [](const FloatArray& acts, const SteeringVector& v) {
          return to_numpy(apply_steering(from_numpy(acts), v));
        },
        py::arg("activations"), py::arg("vector"));

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = run_cli(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run the command-line tool in-process; returns (code, stdout, stderr)");
}
