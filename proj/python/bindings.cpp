#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "d2dgs/deform.hpp"
#include "d2dgs/losses.hpp"
#include "d2dgs/renderer.hpp"
#include "d2dgs/scene.hpp"

namespace py = pybind11;
using namespace d2dgs;

namespace {

Image numpy_to_image(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() == 2) {
        Image img(int(arr.shape(0)), int(arr.shape(1)), 1);
        std::copy(arr.data(), arr.data() + arr.size(), img.raw().begin());
        return img;
    }
    if (arr.ndim() == 3) {
        Image img(int(arr.shape(0)), int(arr.shape(1)), int(arr.shape(2)));
        std::copy(arr.data(), arr.data() + arr.size(), img.raw().begin());
        return img;
    }
    throw std::invalid_argument("expected an HxW or HxWxC array");
}

py::array_t<double> image_to_numpy(const Image& img) {
    py::array_t<double> arr;
    if (img.channels() == 1) {
        arr = py::array_t<double>({img.height(), img.width()});
    } else {
        arr = py::array_t<double>({img.height(), img.width(), img.channels()});
    }
    std::copy(img.raw().begin(), img.raw().end(), arr.mutable_data());
    return arr;
}

std::vector<Vec3> numpy_to_points(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2 || arr.shape(1) != 3) throw std::invalid_argument("expected an Nx3 array");
    std::vector<Vec3> pts(arr.shape(0));
    for (ssize_t i = 0; i < arr.shape(0); ++i)
        pts[i] = Vec3(arr.at(i, 0), arr.at(i, 1), arr.at(i, 2));
    return pts;
}

}  // namespace

PYBIND11_MODULE(_d2dgs, m) {
    m.doc() = "Dynamic 2D Gaussian surfels: scene, deformation, rendering, losses";

    py::class_<SceneConfig>(m, "SceneConfig")
        .def(py::init<>())
        .def_static("desk_default", &SceneConfig::desk_default)
        .def_readwrite("n_control_points", &SceneConfig::n_control_points)
        .def_readwrite("neighbor_count", &SceneConfig::neighbor_count)
        .def_readwrite("sh_degree", &SceneConfig::sh_degree)
        .def_readwrite("seed", &SceneConfig::seed);

    py::class_<Surfel>(m, "Surfel")
        .def(py::init<>())
        .def_property(
            "center", [](const Surfel& s) { return std::vector<double>{s.center[0], s.center[1], s.center[2]}; },
            [](Surfel& s, const std::vector<double>& v) { s.center = Vec3(v[0], v[1], v[2]); })
        .def_property_readonly("opacity", &Surfel::opacity);

    py::class_<ControlPoint>(m, "ControlPoint")
        .def_property_readonly("radius", &ControlPoint::radius)
        .def_readwrite("log_radius", &ControlPoint::log_radius);

    py::class_<ControlPointSet>(m, "ControlPointSet")
        .def("__len__", [](const ControlPointSet& c) { return c.size(); })
        .def("position", [](const ControlPointSet& c, size_t i) {
            const Vec3& p = c[i].position;
            return std::vector<double>{p[0], p[1], p[2]};
        });

    py::class_<SceneModel>(m, "SceneModel")
        .def_readonly("surfels", &SceneModel::surfels)
        .def_readonly("controls", &SceneModel::controls)
        .def("num_surfels", [](const SceneModel& s) { return s.surfels.size(); });

    m.def("init_scene", [](const py::array_t<double>& points, const py::array_t<double>& colors,
                           const SceneConfig& cfg) {
        return init_scene(numpy_to_points(points), numpy_to_points(colors), cfg);
    });

    py::class_<CameraView>(m, "CameraView")
        .def(py::init<>())
        .def_readwrite("width", &CameraView::width)
        .def_readwrite("height", &CameraView::height)
        .def_readwrite("fx", &CameraView::fx)
        .def_readwrite("fy", &CameraView::fy)
        .def_readwrite("cx", &CameraView::cx)
        .def_readwrite("cy", &CameraView::cy)
        .def_readwrite("time", &CameraView::time)
        .def("validate", &CameraView::validate);

    py::class_<RenderConfig>(m, "RenderConfig")
        .def(py::init<>())
        .def_readwrite("near_plane", &RenderConfig::near_plane)
        .def_readwrite("keep_records", &RenderConfig::keep_records)
        .def_readwrite("brute_force", &RenderConfig::brute_force);

    py::class_<RenderTargets>(m, "RenderTargets")
        .def_property_readonly("rgb", [](const RenderTargets& rt) { return image_to_numpy(rt.rgb); })
        .def_property_readonly("depth_expected",
                               [](const RenderTargets& rt) { return image_to_numpy(rt.depth_expected); })
        .def_property_readonly("depth_median",
                               [](const RenderTargets& rt) { return image_to_numpy(rt.depth_median); })
        .def_property_readonly("normal",
                               [](const RenderTargets& rt) { return image_to_numpy(rt.normal); })
        .def_property_readonly("alpha",
                               [](const RenderTargets& rt) { return image_to_numpy(rt.alpha); });

    m.def("render_view", &render_view, py::arg("surfels"), py::arg("camera"), py::arg("config"));

    py::class_<FieldConfig>(m, "FieldConfig")
        .def(py::init<>())
        .def_readwrite("hidden_width", &FieldConfig::hidden_width)
        .def_readwrite("hidden_layers", &FieldConfig::hidden_layers)
        .def_readwrite("pe_position", &FieldConfig::pe_position)
        .def_readwrite("pe_time", &FieldConfig::pe_time)
        .def_readwrite("seed", &FieldConfig::seed);

    py::class_<DeformationField>(m, "DeformationField").def(py::init<const FieldConfig&>());

    py::class_<ControlSignals>(m, "ControlSignals").def("__len__", &ControlSignals::size);

    py::class_<SkinningBinding>(m, "SkinningBinding")
        .def_property_readonly("k", [](const SkinningBinding& b) { return b.k; });

    py::class_<SkinningWeights>(m, "SkinningWeights")
        .def("at", &SkinningWeights::at);

    m.def("predict_signals", &predict_signals);
    m.def("bind_surfels", &bind_surfels);
    m.def("skinning_weights", &skinning_weights);
    m.def("warp_surfels", &warp_surfels);

    m.def("loss_l1", [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return loss_l1(numpy_to_image(a), numpy_to_image(b));
    });
    m.def("loss_ssim", [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return loss_ssim(numpy_to_image(a), numpy_to_image(b));
    });
    m.def("ssim", [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return ssim(numpy_to_image(a), numpy_to_image(b));
    });
}
