#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "svp/commands.hpp"
#include "svp/distributions.hpp"
#include "svp/gradcheck.hpp"
#include "svp/metrics.hpp"
#include "svp/models_ssm.hpp"
#include "svp/warp.hpp"
#include "svp/worlds.hpp"

namespace py = pybind11;
using namespace svp;

namespace {

using NpArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor from_numpy(const NpArray& a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = a.shape(i);
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

py::array_t<double> stack_to_numpy(const std::vector<Tensor>& v) {
    return to_numpy(stack_time(v));
}

std::vector<Tensor> numpy_to_frames(const NpArray& a) {
    return unstack_time(from_numpy(a));
}

py::dict sequence_to_dict(const LabeledSequence& seq) {
    py::dict d;
    d["frames"] = stack_to_numpy(seq.frames);
    if (!seq.seg.empty()) d["seg"] = stack_to_numpy(seq.seg);
    if (!seq.instance_ids.empty()) d["instance_ids"] = stack_to_numpy(seq.instance_ids);
    if (!seq.centers.empty()) d["centers"] = stack_to_numpy(seq.centers);
    if (!seq.offsets.empty()) d["offsets"] = stack_to_numpy(seq.offsets);
    if (!seq.future_flow.empty()) d["future_flow"] = stack_to_numpy(seq.future_flow);
    if (!seq.depth.empty()) d["depth"] = stack_to_numpy(seq.depth);
    if (!seq.poses.empty()) d["poses"] = stack_to_numpy(seq.poses);
    if (!seq.residual_flow.empty())
        d["residual_flow"] = stack_to_numpy(seq.residual_flow);
    if (!seq.fg_mask.empty()) d["fg_mask"] = stack_to_numpy(seq.fg_mask);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "stochastic future prediction on synthetic worlds";

    py::register_exception<Error>(m, "SvpError");

    // ---- synthetic worlds ----
    m.def(
        "gen_sprites",
        [](int64_t height, int64_t width, int sprite_count, double sprite_size,
           double speed_min, double speed_max, int64_t t, uint64_t seed) {
            SpriteWorldConfig cfg;
            cfg.height = height;
            cfg.width = width;
            cfg.sprite_count = sprite_count;
            cfg.sprite_size = sprite_size;
            cfg.speed_min = speed_min;
            cfg.speed_max = speed_max;
            cfg.t = t;
            return sequence_to_dict(gen_sprites(cfg, seed));
        },
        py::arg("height") = 32, py::arg("width") = 32, py::arg("sprite_count") = 2,
        py::arg("sprite_size") = 8.0, py::arg("speed_min") = 1.0,
        py::arg("speed_max") = 3.0, py::arg("t") = 15, py::arg("seed") = 0);

    m.def(
        "gen_egoworld",
        [](int64_t height, int64_t width, int64_t t, uint64_t seed) {
            EgoWorldConfig cfg;
            cfg.height = height;
            cfg.width = width;
            cfg.t = t;
            return sequence_to_dict(gen_egoworld(cfg, seed));
        },
        py::arg("height") = 48, py::arg("width") = 32, py::arg("t") = 20,
        py::arg("seed") = 0);

    m.def(
        "gen_bevworld",
        [](int64_t grid, int agent_count, int64_t t, double turn_prob,
           double state_noise, uint64_t seed) {
            BEVWorldConfig cfg;
            cfg.grid = grid;
            cfg.agent_count = agent_count;
            cfg.t = t;
            cfg.turn_prob = turn_prob;
            cfg.state_noise = state_noise;
            return sequence_to_dict(gen_bevworld(cfg, seed));
        },
        py::arg("grid") = 48, py::arg("agent_count") = 3, py::arg("t") = 15,
        py::arg("turn_prob") = 0.15, py::arg("state_noise") = 0.25,
        py::arg("seed") = 0);

    // ---- differentiable geometry (applied to plain arrays) ----
    m.def("warp_by_flow", [](const NpArray& src, const NpArray& flow) {
        autodiff::NoGrad ng;
        return to_numpy(warp_by_flow(from_numpy(src), from_numpy(flow)));
    });
    m.def("bilinear_sample", [](const NpArray& img, const NpArray& coords) {
        autodiff::NoGrad ng;
        return to_numpy(bilinear_sample(from_numpy(img), from_numpy(coords)));
    });
    m.def("blend", [](const NpArray& a, const NpArray& b, const NpArray& mask) {
        autodiff::NoGrad ng;
        return to_numpy(blend(from_numpy(a), from_numpy(b), from_numpy(mask)));
    });
    m.def("se3_matrix", [](const NpArray& pose6) {
        autodiff::NoGrad ng;
        return to_numpy(se3_transform(from_numpy(pose6)));
    });
    m.def(
        "warp_by_depth_pose",
        [](const NpArray& prev, const NpArray& depth, const NpArray& pose6,
           double fx, double fy, double cx, double cy) {
            autodiff::NoGrad ng;
            auto r = warp_by_depth_pose(from_numpy(prev), from_numpy(depth),
                                        from_numpy(pose6), {fx, fy, cx, cy});
            py::dict d;
            d["prediction"] = to_numpy(r.prediction);
            d["rigid_flow"] = to_numpy(r.rigid_flow);
            d["valid"] = to_numpy(r.valid);
            return d;
        },
        py::arg("prev"), py::arg("depth"), py::arg("pose6"), py::arg("fx"),
        py::arg("fy"), py::arg("cx"), py::arg("cy"));

    // ---- distributions ----
    m.def("kl_diag", [](const NpArray& mq, const NpArray& lq, const NpArray& mp,
                        const NpArray& lp) {
        autodiff::NoGrad ng;
        return kl_diag(DiagGaussian(from_numpy(mq), from_numpy(lq)),
                       DiagGaussian(from_numpy(mp), from_numpy(lp)))
            .item();
    });
    m.def("gauss_log_prob", [](const NpArray& mu, const NpArray& lv, const NpArray& x) {
        autodiff::NoGrad ng;
        return gauss_log_prob(DiagGaussian(from_numpy(mu), from_numpy(lv)),
                              from_numpy(x))
            .item();
    });

    // ---- metrics ----
    m.def("psnr", [](const NpArray& a, const NpArray& b, double peak) {
        return psnr(from_numpy(a), from_numpy(b), peak);
    }, py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
    m.def("ssim", [](const NpArray& a, const NpArray& b, double peak) {
        return ssim(from_numpy(a), from_numpy(b), peak);
    }, py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
    m.def("iou", [](const NpArray& a, const NpArray& b) {
        return iou(from_numpy(a), from_numpy(b));
    });
    m.def("vpq", [](const NpArray& pred_ids, const NpArray& gt_ids) {
        return vpq(numpy_to_frames(pred_ids), numpy_to_frames(gt_ids));
    });
    m.def("depth_metrics", [](const NpArray& pred, const NpArray& gt,
                              const NpArray& valid) {
        auto r = depth_metrics(from_numpy(pred), from_numpy(gt), from_numpy(valid));
        py::dict d;
        d["abs_rel"] = r.abs_rel;
        d["sq_rel"] = r.sq_rel;
        d["rmse"] = r.rmse;
        d["rmse_log"] = r.rmse_log;
        d["delta1"] = r.delta1;
        d["delta2"] = r.delta2;
        d["delta3"] = r.delta3;
        return d;
    });
    m.def("instance_postprocess",
          [](const NpArray& centers, const NpArray& seg, const NpArray& offsets,
             const NpArray& flow) {
              auto ids = instance_postprocess(numpy_to_frames(centers),
                                              numpy_to_frames(seg),
                                              numpy_to_frames(offsets),
                                              numpy_to_frames(flow));
              return to_numpy(stack_time(ids));
          });

    // ---- pipeline commands (mirror the CLI verbs) ----
    m.def("config_hash",
          [](const std::string& text) { return config_hash(parse_config_text(text)); });
    m.def("canonical_config", [](const std::string& text) {
        return canonical_text(parse_config_text(text));
    });
    m.def("gen_data", [](const std::string& config_text, const std::string& out_dir) {
        return cmd_gen_data(parse_config_text(config_text), out_dir);
    });
    m.def("train", [](const std::string& config_text, const std::string& data_dir,
                      const std::string& out_dir) {
        return cmd_train(parse_config_text(config_text), data_dir, out_dir);
    });
    m.def("evaluate",
          [](const std::string& config_text, const std::string& checkpoint,
             const std::string& data_dir, const std::string& out_dir) {
              return cmd_eval(parse_config_text(config_text), checkpoint, data_dir,
                              out_dir);
          });
    m.def("sample",
          [](const std::string& config_text, const std::string& checkpoint,
             const std::string& data_dir, const std::string& out_dir) {
              return cmd_sample(parse_config_text(config_text), checkpoint, data_dir,
                                out_dir);
          });
    m.def("gradcheck", [] {
        py::list out;
        for (const auto& r : run_gradchecks()) {
            py::dict d;
            d["name"] = r.name;
            d["worst_rel_err"] = r.worst_rel_err;
            d["pass"] = r.pass;
            out.append(d);
        }
        return out;
    });
    m.attr("model_kinds") = kModelKinds;
}
