#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "dsguard/dataset.hpp"
#include "dsguard/error.hpp"
#include "dsguard/fsp.hpp"
#include "dsguard/image.hpp"
#include "dsguard/rit.hpp"
#include "dsguard/stego.hpp"

namespace py = pybind11;
using namespace dsguard;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Image to_image(const U8Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("expected an HxW or HxWxC uint8 array");
  const int h = static_cast<int>(a.shape(0));
  const int w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  std::vector<std::uint8_t> px(a.data(), a.data() + a.size());
  return Image(h, w, c, std::move(px));
}

U8Array to_array(const Image& img) {
  U8Array a({img.height(), img.width(), img.channels()});
  std::memcpy(a.mutable_data(), img.pixels().data(), img.size());
  return a;
}

Nonce to_nonce(const py::bytes& b) {
  const std::string s = b;
  if (s.size() != 12) throw py::value_error("nonce must be 12 bytes");
  Nonce n{};
  std::memcpy(n.data(), s.data(), 12);
  return n;
}

Dataset to_dataset(const std::vector<U8Array>& images, const std::vector<int>& labels,
                   const std::optional<std::vector<std::size_t>>& indices) {
  if (labels.size() != images.size()) throw py::value_error("labels and images differ in length");
  if (indices && indices->size() != images.size()) throw py::value_error("indices and images differ in length");
  Dataset ds;
  for (std::size_t i = 0; i < images.size(); ++i) {
    ds.push_back({indices ? (*indices)[i] : i, labels[i], to_image(images[i]), ""});
  }
  return ds;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reversible dataset protection: feature-space perturbation, block transformation, encrypted side information.";

  static py::exception<Error> exc(m, "DsguardError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(exc)(e.what());
      err.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(exc.ptr(), err.ptr());
    }
  });

  py::class_<KeyRecord>(m, "Key")
      .def_static("generate", &KeyRecord::generate)
      .def_static("load", [](const std::filesystem::path& p) { return read_key_file(p); })
      .def("save", [](const KeyRecord& k, const std::filesystem::path& p) { write_key_file(p, k); })
      .def_property_readonly("key_id", [](const KeyRecord& k) { return to_hex(k.key_id); })
      .def("__eq__", [](const KeyRecord& a, const KeyRecord& b) { return a == b; })
      .def("__repr__", [](const KeyRecord& k) { return "<Key " + to_hex(k.key_id) + ">"; });

  m.def("psnr", [](const U8Array& a, const U8Array& b) { return psnr(to_image(a), to_image(b)); }, py::arg("a"),
        py::arg("b"), "PSNR in dB; identical images give inf.");

  m.def("lsb_capacity", [](const U8Array& a) { return lsb_capacity(to_image(a)); });

  m.def(
      "payload_bits",
      [](int height, int width, int channels, int block_size, int quant_step) {
        RitParams{block_size, quant_step}.validate();
        if (height % block_size || width % block_size) throw py::value_error("image not divisible into blocks");
        return 8 * payload_size_for_plan(
                       serialized_plan_size(height / block_size, width / block_size, channels, quant_step));
      },
      py::arg("height"), py::arg("width"), py::arg("channels"), py::arg("block_size") = 4, py::arg("quant_step") = 4);

  m.def(
      "fsp_perturb",
      [](const U8Array& clean, const U8Array& target, double epsilon, double step_size, int iterations, int layer,
         std::uint64_t seed) {
        PerturbConfig cfg{epsilon, step_size, iterations, layer, seed};
        const Image c = to_image(clean);
        const FeatureExtractor fe(seed, c.channels());
        PerturbResult r;
        {
          py::gil_scoped_release release;
          r = fsp_attack(c, to_image(target), fe, cfg);
        }
        return py::make_tuple(to_array(r.carrier), r.initial_loss, r.final_loss);
      },
      py::arg("clean"), py::arg("target"), py::arg("epsilon") = 16.0 / 255, py::arg("step_size") = 2.0 / 255,
      py::arg("iterations") = 40, py::arg("layer") = 2, py::arg("seed") = 0,
      "Returns (carrier, initial_loss, final_loss).");

  m.def(
      "protect_image",
      [](const U8Array& clean, const U8Array& carrier, const KeyRecord& key, const py::bytes& nonce, int block_size,
         int quant_step) {
        return to_array(protect_image(to_image(clean), to_image(carrier), key, to_nonce(nonce),
                                      RitParams{block_size, quant_step}));
      },
      py::arg("clean"), py::arg("carrier"), py::arg("key"), py::arg("nonce"), py::arg("block_size") = 4,
      py::arg("quant_step") = 4);

  m.def(
      "restore_image",
      [](const U8Array& protected_image, const KeyRecord& key, const std::optional<py::bytes>& nonce) {
        std::optional<Nonce> n;
        if (nonce) n = to_nonce(*nonce);
        return to_array(restore_image(to_image(protected_image), key, n));
      },
      py::arg("protected_image"), py::arg("key"), py::arg("nonce") = py::none());

  m.def(
      "protect_dataset",
      [](const std::vector<U8Array>& images, const std::vector<int>& labels, const KeyRecord& key, double epsilon,
         double step_size, int iterations, int layer, std::uint64_t seed, const std::string& generator,
         int block_size, int quant_step, int parallelism) {
        ProtectParams p;
        p.rit = {block_size, quant_step};
        p.perturb = {epsilon, step_size, iterations, layer, seed};
        p.generator = generator;
        p.parallelism = parallelism;
        const Dataset ds = to_dataset(images, labels, std::nullopt);
        ProtectResult r;
        {
          py::gil_scoped_release release;
          r = protect_dataset(ds, key, p);
        }
        py::list out;
        for (const auto& rec : r.records) out.append(to_array(rec.image));
        return py::make_tuple(out, r.manifest.to_text());
      },
      py::arg("images"), py::arg("labels"), py::arg("key"), py::arg("epsilon") = 16.0 / 255,
      py::arg("step_size") = 2.0 / 255, py::arg("iterations") = 40, py::arg("layer") = 2, py::arg("seed") = 0,
      py::arg("generator") = "fsp", py::arg("block_size") = 4, py::arg("quant_step") = 4, py::arg("parallelism") = 1,
      "Returns (protected images, manifest text).");

  m.def(
      "restore_dataset",
      [](const std::vector<U8Array>& images, const std::vector<std::size_t>& indices, const std::string& manifest,
         const KeyRecord& key, int parallelism) {
        const Manifest mf = Manifest::from_text(manifest);
        std::vector<int> labels;
        for (std::size_t idx : indices) {
          const ManifestEntry* e = mf.find(idx);
          labels.push_back(e ? e->label : 0);
        }
        const Dataset ds = to_dataset(images, labels, indices);
        RestoreResult r;
        {
          py::gil_scoped_release release;
          r = restore_dataset(ds, mf, key, parallelism);
        }
        py::dict restored;
        for (const auto& rec : r.records) restored[py::int_(rec.index)] = to_array(rec.image);
        py::list failures;
        for (const auto& f : r.failures) failures.append(py::make_tuple(f.index, std::string(to_string(f.code))));
        return py::make_tuple(restored, failures);
      },
      py::arg("images"), py::arg("indices"), py::arg("manifest"), py::arg("key"), py::arg("parallelism") = 1,
      "Returns ({index: image}, [(index, error code)]).");

  m.def(
      "load_dataset",
      [](const std::filesystem::path& path) {
        const Dataset ds = load_dataset(path);
        py::list out;
        for (const auto& r : ds) out.append(py::make_tuple(r.index, r.label, to_array(r.image)));
        return out;
      },
      py::arg("path"), "Returns [(index, label, image)].");
}
