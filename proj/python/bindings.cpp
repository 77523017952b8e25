#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "dbpn/checkpoint.hpp"
#include "dbpn/dataset.hpp"
#include "dbpn/errors.hpp"
#include "dbpn/grad_check.hpp"
#include "dbpn/image.hpp"
#include "dbpn/metrics.hpp"
#include "dbpn/network.hpp"
#include "dbpn/parallel.hpp"
#include "dbpn/train.hpp"

namespace py = pybind11;
using namespace dbpn;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W) or (H, W, C) with C in {1, 3}.
void image_dims(const py::buffer_info& info, std::size_t& w, std::size_t& h, std::size_t& c) {
  if (info.ndim != 2 && info.ndim != 3) throw ShapeError("image arrays must be (H, W) or (H, W, C)");
  h = static_cast<std::size_t>(info.shape[0]);
  w = static_cast<std::size_t>(info.shape[1]);
  c = info.ndim == 3 ? static_cast<std::size_t>(info.shape[2]) : 1;
  if (c != 1 && c != 3) throw ShapeError("image arrays need 1 or 3 channels");
}

ImageBuffer to_buffer(const U8Array& a) {
  ImageBuffer img;
  image_dims(a.request(), img.width, img.height, img.channels);
  img.space = img.channels == 1 ? ColorSpace::y : ColorSpace::rgb;
  img.samples.assign(a.data(), a.data() + a.size());
  return img;
}

RealImage to_real_image(const F64Array& a) {
  std::size_t w = 0, h = 0, c = 0;
  image_dims(a.request(), w, h, c);
  RealImage img(w, h, c, c == 1 ? ColorSpace::y : ColorSpace::rgb);
  std::memcpy(img.samples.data(), a.data(), img.samples.size() * sizeof(double));
  return img;
}

template <typename Image>
std::vector<py::ssize_t> array_shape(const Image& img) {
  if (img.channels == 1) return {static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width)};
  return {static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width),
          static_cast<py::ssize_t>(img.channels)};
}

py::array_t<std::uint8_t> from_buffer(const ImageBuffer& img) {
  py::array_t<std::uint8_t> out(array_shape(img));
  std::memcpy(out.mutable_data(), img.samples.data(), img.samples.size());
  return out;
}

py::array_t<double> from_real(const RealImage& img) {
  py::array_t<double> out(array_shape(img));
  std::memcpy(out.mutable_data(), img.samples.data(), img.samples.size() * sizeof(double));
  return out;
}

Tensor<float> to_tensor(const F32Array& a) {
  if (a.ndim() != 4) throw ShapeError("network input must be (N, C, H, W)");
  const Shape s{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(3))};
  return Tensor<float>(s, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> from_tensor(const Tensor<float>& t) {
  const Shape& s = t.shape();
  py::array_t<float> out({s.n, s.c, s.h, s.w});
  std::memcpy(out.mutable_data(), t.ptr(), s.numel() * sizeof(float));
  return out;
}

py::array_t<float> from_named(const NamedTensor& t) {
  std::vector<py::ssize_t> dims(t.dims.begin(), t.dims.end());
  py::array_t<float> out(dims);
  std::memcpy(out.mutable_data(), t.values.data(), t.values.size() * sizeof(float));
  return out;
}

Network<float> build(const NetworkConfig& cfg, std::uint64_t seed) {
  Pcg32 rng(seed, 0x1417ULL);
  return build_network<float>(cfg, rng);
}

py::dict report_dict(const MetricReport& r) {
  py::list rows;
  for (const auto& row : r.rows) rows.append(py::make_tuple(row.name, row.psnr_db, row.ssim));
  py::dict d;
  d["rows"] = rows;
  d["mean_psnr"] = r.mean_psnr;
  d["mean_ssim"] = r.mean_ssim;
  d["infinite_rows"] = r.infinite_rows;
  d["scale"] = r.scale;
  d["crop"] = r.crop;
  d["method"] = r.method;
  d["csv"] = r.to_csv();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Back-projection super-resolution networks";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("set_threads", &set_thread_count, py::arg("n"), "Worker count; 0 restores DBPN_THREADS.");
  m.def("thread_count", &thread_count);

  // images ---------------------------------------------------------------------------------
  m.def("load_png", [](const std::filesystem::path& p) { return from_buffer(load_png(p)); }, py::arg("path"));
  m.def("save_png", [](const U8Array& a, const std::filesystem::path& p) { save_png(to_buffer(a), p); },
        py::arg("image"), py::arg("path"));
  m.def("checksum", [](const U8Array& a) { return checksum(to_buffer(a)); }, py::arg("image"));
  m.def("rgb_to_y", [](const F64Array& a) { return from_real(rgb_to_y(to_real_image(a))); }, py::arg("image"));
  m.def("cubic_kernel", &cubic_kernel, py::arg("x"));
  m.def(
      "bicubic_resize",
      [](const F64Array& a, std::size_t w, std::size_t h, bool antialias) {
        return from_real(bicubic_resize(to_real_image(a), w, h, antialias));
      },
      py::arg("image"), py::arg("width"), py::arg("height"), py::arg("antialias") = true);
  m.def("make_lr", [](const U8Array& a, int scale) { return from_buffer(make_lr(to_buffer(a), scale)); },
        py::arg("hr"), py::arg("scale"));
  m.def("modcrop", [](const U8Array& a, int scale) { return from_buffer(modcrop(to_buffer(a), scale)); },
        py::arg("image"), py::arg("scale"));
  m.def(
      "psnr", [](const F64Array& a, const F64Array& b, std::size_t crop) {
        return psnr(to_real_image(a), to_real_image(b), crop);
      },
      py::arg("a"), py::arg("b"), py::arg("crop") = 0);
  m.def(
      "ssim", [](const F64Array& a, const F64Array& b, std::size_t crop) {
        return ssim(to_real_image(a), to_real_image(b), crop);
      },
      py::arg("a"), py::arg("b"), py::arg("crop") = 0);
  m.def(
      "synth_images",
      [](std::uint64_t seed, std::size_t count, std::size_t size) {
        py::list out;
        for (const auto& img : synth_images(seed, count, size)) out.append(py::make_tuple(img.name, from_buffer(img.image)));
        return out;
      },
      py::arg("seed"), py::arg("count"), py::arg("size"));

  // configuration --------------------------------------------------------------------------
  py::class_<NetworkConfig>(m, "NetworkConfig")
      .def(py::init<>())
      .def_static(
          "preset", [](const std::string& name, int scale) { return NetworkConfig::preset(parse_preset(name), scale); },
          py::arg("name"), py::arg("scale"))
      .def_readwrite("scale", &NetworkConfig::scale)
      .def_readwrite("stages", &NetworkConfig::stages)
      .def_readwrite("n0", &NetworkConfig::n0)
      .def_readwrite("nr", &NetworkConfig::nr)
      .def_readwrite("dense", &NetworkConfig::dense)
      .def_readwrite("recon_kernel", &NetworkConfig::recon_kernel)
      .def_property(
          "color", [](const NetworkConfig& c) { return c.color == ColorMode::y ? "Y" : "RGB"; },
          [](NetworkConfig& c, const std::string& v) {
            if (v == "Y") c.color = ColorMode::y;
            else if (v == "RGB") c.color = ColorMode::rgb;
            else throw ConfigError("color must be 'Y' or 'RGB'");
          })
      .def_property_readonly("channels", &NetworkConfig::channels)
      .def("validate", &NetworkConfig::validate)
      .def(py::self == py::self)
      .def("__repr__", [](const NetworkConfig& c) {
        std::ostringstream os;
        os << "NetworkConfig(scale=" << c.scale << ", stages=" << c.stages << ", n0=" << c.n0 << ", nr=" << c.nr
           << ", dense=" << (c.dense ? "True" : "False") << ", color='" << (c.color == ColorMode::y ? "Y" : "RGB")
           << "', recon_kernel=" << c.recon_kernel << ")";
        return os.str();
      });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr0", &TrainConfig::lr0)
      .def_readwrite("decay_factor", &TrainConfig::decay_factor)
      .def_readwrite("decay_interval", &TrainConfig::decay_interval)
      .def_readwrite("iterations", &TrainConfig::iterations)
      .def_readwrite("batch", &TrainConfig::batch)
      .def_readwrite("patch", &TrainConfig::patch)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("epsilon", &TrainConfig::epsilon)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("log_every", &TrainConfig::log_every)
      .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
      .def("validate", &TrainConfig::validate);
  m.def("lr_schedule", &lr_schedule, py::arg("iteration"), py::arg("config"));

  // network --------------------------------------------------------------------------------
  py::class_<Network<float>>(m, "Network")
      .def(py::init(&build), py::arg("config"), py::arg("seed") = 0, "He-initialized network.")
      .def_static(
          "load", [](const std::filesystem::path& p) { return network_from_checkpoint(load_checkpoint(p)); },
          py::arg("path"))
      .def(
          "save", [](Network<float>& net, const std::filesystem::path& p) { save_checkpoint(capture_parameters(net), p); },
          py::arg("path"))
      .def_property_readonly("config", &Network<float>::config)
      .def_property_readonly("param_count", &Network<float>::param_count)
      .def_property_readonly("conv_layer_count", &Network<float>::conv_layer_count)
      .def_property_readonly("unit_count", &Network<float>::unit_count)
      .def_property_readonly("merge_count", &Network<float>::merge_count)
      .def("layers",
           [](const Network<float>& net) {
             py::list out;
             for (const auto& l : net.layers())
               out.append(py::make_tuple(l.name, l.spec.in_channels, l.spec.out_channels, l.spec.geometry.kernel,
                                         l.spec.geometry.stride, l.spec.geometry.padding, l.spec.transposed,
                                         l.spec.param_count()));
             return out;
           })
      .def("parameters",
           [](Network<float>& net) {
             py::dict out;
             for (const auto& t : capture_parameters(net).params) out[py::str(t.name)] = from_named(t);
             return out;
           })
      .def(
          "forward",
          [](const Network<float>& net, const F32Array& x) {
            Tensor<float> in = to_tensor(x);
            Tensor<float> y;
            {
              py::gil_scoped_release release;
              NoGradGuard guard;
              y = net.forward(Var<float>::constant(std::move(in))).value();
            }
            return from_tensor(y);
          },
          py::arg("x"), "(N, C, H, W) float32 in [0, 1] to (N, C, sH, sW).")
      .def(
          "features",
          [](const Network<float>& net, const F32Array& x) {
            Tensor<float> in = to_tensor(x);
            std::vector<Tensor<float>> maps;
            {
              py::gil_scoped_release release;
              NoGradGuard guard;
              const auto out = net.run(Var<float>::constant(std::move(in)));
              for (const auto& f : out.features) maps.push_back(f.value());
            }
            py::list result;
            for (const auto& t : maps) result.append(from_tensor(t));
            return result;
          },
          py::arg("x"), "HR feature maps of every up-projection stage.")
      .def(
          "super_resolve",
          [](const Network<float>& net, const U8Array& lr) {
            const ImageBuffer img = to_buffer(lr);
            RealImage out;
            {
              py::gil_scoped_release release;
              out = super_resolve(net, img);
            }
            return from_real(out);
          },
          py::arg("lr"), "0..255 output, unclamped; luma only for Y networks.");

  // data, training, evaluation -------------------------------------------------------------
  py::class_<Dataset>(m, "Dataset")
      .def_static("synth", &synth_dataset, py::arg("seed"), py::arg("count"), py::arg("size"), py::arg("scale"))
      .def_static("load", &load_dataset, py::arg("root"), py::arg("scale"))
      .def_property_readonly("scale", &Dataset::scale)
      .def("__len__", &Dataset::size)
      .def("name", [](const Dataset& d, std::size_t i) { return d.hr(i).name; })
      .def("hr", [](const Dataset& d, std::size_t i) { return from_buffer(d.hr(i).image); })
      .def("lr", [](const Dataset& d, std::size_t i) { return from_buffer(d.lr(i)); });

  m.def(
      "train",
      [](Network<float>& net, const Dataset& ds, const TrainConfig& cfg, const std::filesystem::path& checkpoint,
         const std::optional<std::filesystem::path>& resume) {
        std::optional<Checkpoint> from;
        if (resume) from = load_checkpoint(*resume);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(net, ds, cfg, checkpoint, nullptr, from ? &*from : nullptr);
        }
        py::list log;
        for (const auto& e : r.log) log.append(py::make_tuple(e.iteration, e.lr, e.loss));
        return log;
      },
      py::arg("network"), py::arg("dataset"), py::arg("config"), py::arg("checkpoint") = std::filesystem::path(),
      py::arg("resume") = py::none(), "Returns the (iteration, lr, loss) log rows.");

  m.def(
      "evaluate",
      [](const Network<float>& net, const Dataset& ds) {
        MetricReport r;
        {
          py::gil_scoped_release release;
          r = evaluate(net, ds);
        }
        return report_dict(r);
      },
      py::arg("network"), py::arg("dataset"));
  m.def("bicubic_baseline", [](const Dataset& ds) { return report_dict(bicubic_baseline(ds)); }, py::arg("dataset"));

  m.def(
      "gradient_suite",
      [](std::uint64_t seed) {
        std::vector<GradCheckReport> reports;
        {
          py::gil_scoped_release release;
          reports = gradient_suite(seed);
        }
        py::list out;
        for (const auto& r : reports) {
          py::dict d;
          d["label"] = r.label;
          d["passed"] = r.passed;
          d["max_rel_error"] = r.max_rel_error;
          d["rtol"] = r.rtol;
          std::size_t coords = 0;
          for (const auto& e : r.entries) coords += e.coords_checked;
          d["coords_checked"] = coords;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0);
}
