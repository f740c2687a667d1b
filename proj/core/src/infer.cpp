#include "neuropipe/infer.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace neuropipe {

PatchPlan plan_patches(const Shape& volume_shape, const Shape& patch_shape,
                       const std::vector<double>& overlap_fraction, PadMode pad_mode) {
    int rank = static_cast<int>(volume_shape.size());
    require(static_cast<int>(patch_shape.size()) == rank, ErrorCode::InvalidArgument,
            "patch rank " + std::to_string(patch_shape.size()) + " vs volume rank " +
                std::to_string(rank));
    require(static_cast<int>(overlap_fraction.size()) == rank, ErrorCode::InvalidArgument,
            "overlap needs one fraction per axis");

    PatchPlan plan;
    plan.patch_shape = patch_shape;
    plan.volume_shape = volume_shape;
    plan.overlap_fraction = overlap_fraction;
    plan.pad_mode = pad_mode;
    plan.padded_shape.resize(static_cast<size_t>(rank));
    plan.pad.resize(static_cast<size_t>(rank));

    std::vector<std::vector<int64_t>> axis_offsets(static_cast<size_t>(rank));
    for (int a = 0; a < rank; ++a) {
        double f = overlap_fraction[static_cast<size_t>(a)];
        require(f >= 0 && f < 1, ErrorCode::BadOverlap,
                "overlap fraction must be in [0,1), got " + std::to_string(f));
        int64_t patch = patch_shape[static_cast<size_t>(a)];
        int64_t volume = volume_shape[static_cast<size_t>(a)];
        auto stride = std::max<int64_t>(
            1, static_cast<int64_t>(std::floor(static_cast<double>(patch) * (1.0 - f))));

        int64_t extent;
        if (pad_mode == PadMode::None) {
            require(patch <= volume, ErrorCode::PatchExceedsVolume,
                    "patch " + std::to_string(patch) + " exceeds volume " +
                        std::to_string(volume) + " on axis " + std::to_string(a) +
                        " with pad_mode=none");
            extent = volume;
            plan.pad[static_cast<size_t>(a)] = {0, 0};
        } else {
            // Grow to the next stride-compatible extent so offsets tile it
            // exactly.
            if (volume <= patch) {
                extent = patch;
            } else {
                int64_t spans = (volume - patch + stride - 1) / stride;
                extent = patch + spans * stride;
            }
            int64_t total = extent - volume;
            plan.pad[static_cast<size_t>(a)] = {total / 2, total - total / 2};
        }
        plan.padded_shape[static_cast<size_t>(a)] = extent;

        std::vector<int64_t>& offsets = axis_offsets[static_cast<size_t>(a)];
        for (int64_t off = 0; off + patch < extent; off += stride) {
            offsets.push_back(off);
        }
        int64_t last = extent - patch;
        if (offsets.empty() || offsets.back() != last) {
            offsets.push_back(last);
        }
    }

    // Cartesian product, lexicographic by construction.
    Shape index(static_cast<size_t>(rank), 0);
    while (true) {
        Shape corner(static_cast<size_t>(rank));
        for (int a = 0; a < rank; ++a) {
            corner[static_cast<size_t>(a)] =
                axis_offsets[static_cast<size_t>(a)][static_cast<size_t>(index[static_cast<size_t>(a)])];
        }
        plan.offsets.push_back(std::move(corner));
        int a = rank - 1;
        while (a >= 0 &&
               ++index[static_cast<size_t>(a)] >=
                   static_cast<int64_t>(axis_offsets[static_cast<size_t>(a)].size())) {
            index[static_cast<size_t>(a)] = 0;
            --a;
        }
        if (a < 0) {
            break;
        }
    }
    return plan;
}

namespace {

// Mirror index without repeating the edge sample (reflect-101); degenerate
// single-voxel axes clamp.
int64_t reflect_index(int64_t i, int64_t n) {
    if (n == 1) {
        return 0;
    }
    int64_t period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

Tensor pad_tensor(const Tensor& t, const std::vector<std::pair<int64_t, int64_t>>& pad,
                  const Shape& padded_spatial, PadMode mode) {
    Shape spatial(t.shape().begin(), t.shape().end() - 1);
    int rank = static_cast<int>(spatial.size());
    int64_t channels = t.shape().back();

    Shape out_shape = padded_spatial;
    out_shape.push_back(channels);
    Tensor out(out_shape);

    Shape in_strides = row_major_strides(spatial);
    IndexIter it(padded_spatial);
    int64_t out_voxel = 0;
    for (; !it.done(); it.next(), ++out_voxel) {
        auto idx = it.index();
        int64_t in_voxel = 0;
        bool inside = true;
        for (int a = 0; a < rank; ++a) {
            int64_t pos = idx[static_cast<size_t>(a)] - pad[static_cast<size_t>(a)].first;
            if (pos < 0 || pos >= spatial[static_cast<size_t>(a)]) {
                if (mode == PadMode::Reflect) {
                    pos = reflect_index(pos, spatial[static_cast<size_t>(a)]);
                } else {
                    inside = false;
                    break;
                }
            }
            in_voxel += pos * in_strides[static_cast<size_t>(a)];
        }
        if (inside) {
            for (int64_t c = 0; c < channels; ++c) {
                out[out_voxel * channels + c] = t[in_voxel * channels + c];
            }
        }
    }
    return out;
}

}  // namespace

AffineVolume run_patched_inference(net::Model& m, const AffineVolume& v, const PatchPlan& plan,
                                   int64_t batch_size) {
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    require(m.config.input_channels() == v.channels(), ErrorCode::ShapeMismatch,
            "model expects " + std::to_string(m.config.input_channels()) + " channels, volume has " +
                std::to_string(v.channels()));
    require(m.config.spatial_shape() == plan.patch_shape, ErrorCode::ShapeMismatch,
            "model input " + shape_str(m.config.spatial_shape()) + " vs plan patch " +
                shape_str(plan.patch_shape));
    require(v.spatial_shape() == plan.volume_shape, ErrorCode::ShapeMismatch,
            "plan was built for " + shape_str(plan.volume_shape) + ", volume is " +
                shape_str(v.spatial_shape()));

    int rank = static_cast<int>(plan.volume_shape.size());
    int64_t in_channels = v.channels();
    int64_t out_channels = m.config.num_outputs;

    Tensor padded = pad_tensor(v.data(), plan.pad, plan.padded_shape, plan.pad_mode);
    Shape padded_strides = row_major_strides(plan.padded_shape);
    int64_t padded_voxels = numel(plan.padded_shape);
    int64_t patch_voxels = numel(plan.patch_shape);

    std::vector<double> sum(static_cast<size_t>(padded_voxels * out_channels), 0.0);
    std::vector<int32_t> hits(static_cast<size_t>(padded_voxels), 0);

    // Walk patches in plan order, batching through the model; accumulation
    // order stays the plan order, independent of batch size.
    Shape batch_shape;
    batch_shape.push_back(0);
    batch_shape.insert(batch_shape.end(), plan.patch_shape.begin(), plan.patch_shape.end());
    batch_shape.push_back(in_channels);

    size_t n_patches = plan.offsets.size();
    for (size_t first = 0; first < n_patches; first += static_cast<size_t>(batch_size)) {
        size_t count = std::min(static_cast<size_t>(batch_size), n_patches - first);
        batch_shape[0] = static_cast<int64_t>(count);
        Tensor batch(batch_shape);
        for (size_t b = 0; b < count; ++b) {
            const Shape& corner = plan.offsets[first + b];
            IndexIter it(plan.patch_shape);
            int64_t pv = 0;
            for (; !it.done(); it.next(), ++pv) {
                auto idx = it.index();
                int64_t voxel = 0;
                for (int a = 0; a < rank; ++a) {
                    voxel += (corner[static_cast<size_t>(a)] + idx[static_cast<size_t>(a)]) *
                             padded_strides[static_cast<size_t>(a)];
                }
                for (int64_t c = 0; c < in_channels; ++c) {
                    batch[(static_cast<int64_t>(b) * patch_voxels + pv) * in_channels + c] =
                        padded[voxel * in_channels + c];
                }
            }
        }

        Tensor pred = m.forward(batch, false);
        for (size_t b = 0; b < count; ++b) {
            const Shape& corner = plan.offsets[first + b];
            IndexIter it(plan.patch_shape);
            int64_t pv = 0;
            for (; !it.done(); it.next(), ++pv) {
                auto idx = it.index();
                int64_t voxel = 0;
                for (int a = 0; a < rank; ++a) {
                    voxel += (corner[static_cast<size_t>(a)] + idx[static_cast<size_t>(a)]) *
                             padded_strides[static_cast<size_t>(a)];
                }
                ++hits[static_cast<size_t>(voxel)];
                for (int64_t c = 0; c < out_channels; ++c) {
                    sum[static_cast<size_t>(voxel * out_channels + c)] +=
                        pred[(static_cast<int64_t>(b) * patch_voxels + pv) * out_channels + c];
                }
            }
        }
    }

    // Average, then crop the padding away.
    Shape out_shape = plan.volume_shape;
    out_shape.push_back(out_channels);
    Tensor out(out_shape);
    Shape vol_strides = row_major_strides(plan.volume_shape);
    IndexIter it(plan.volume_shape);
    int64_t out_voxel = 0;
    for (; !it.done(); it.next(), ++out_voxel) {
        auto idx = it.index();
        int64_t voxel = 0;
        for (int a = 0; a < rank; ++a) {
            voxel += (idx[static_cast<size_t>(a)] + plan.pad[static_cast<size_t>(a)].first) *
                     padded_strides[static_cast<size_t>(a)];
        }
        int32_t n = hits[static_cast<size_t>(voxel)];
        require(n >= 1, ErrorCode::InvalidArgument, "plan left a voxel uncovered");
        for (int64_t c = 0; c < out_channels; ++c) {
            out[out_voxel * out_channels + c] = static_cast<float>(
                sum[static_cast<size_t>(voxel * out_channels + c)] / static_cast<double>(n));
        }
    }
    return AffineVolume(std::move(out), v.affine(), v.meta());
}

InferenceParams InferenceParams::from_json_text(const std::string& text) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("inference params JSON: ") + e.what());
    }
    InferenceParams p;
    try {
        if (j.contains("patch_shape")) {
            p.patch_shape = j.at("patch_shape").get<Shape>();
        }
        if (j.contains("overlap")) {
            if (j.at("overlap").is_array()) {
                p.overlap = j.at("overlap").get<std::vector<double>>();
            } else {
                p.overlap = {j.at("overlap").get<double>()};
            }
        }
        std::string pad = j.value("pad", std::string("zero"));
        if (pad == "zero") {
            p.pad_mode = PadMode::Zero;
        } else if (pad == "reflect") {
            p.pad_mode = PadMode::Reflect;
        } else if (pad == "none") {
            p.pad_mode = PadMode::None;
        } else {
            raise(ErrorCode::InvalidConfig, "pad mode '" + pad + "' unknown");
        }
        p.batch_size = j.value("batch_size", int64_t{4});
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("inference params: ") + e.what());
    }
    return p;
}

std::string InferenceParams::to_json_text() const {
    nlohmann::json j;
    if (!patch_shape.empty()) {
        j["patch_shape"] = patch_shape;
    }
    j["overlap"] = overlap;
    j["pad"] = pad_mode == PadMode::Zero ? "zero" : (pad_mode == PadMode::Reflect ? "reflect" : "none");
    j["batch_size"] = batch_size;
    return j.dump();
}

AffineVolume infer_case(net::Model& m, const DataCollection& c, const std::string& case_id,
                        const InferenceParams& params, const TransformChain& postprocess) {
    auto volume = c.case_volume(case_id, "input_data");

    Shape patch = params.patch_shape.empty() ? m.config.spatial_shape() : params.patch_shape;
    std::vector<double> overlap = params.overlap;
    if (overlap.empty()) {
        overlap.assign(patch.size(), 0.0);
    } else if (overlap.size() == 1 && patch.size() > 1) {
        overlap.assign(patch.size(), overlap[0]);
    }

    PatchPlan plan = plan_patches(volume->spatial_shape(), patch, overlap, params.pad_mode);
    AffineVolume pred = run_patched_inference(m, *volume, plan, params.batch_size);

    // Postprocess nodes opt in via applies_to containing "prediction".
    for (size_t k = 0; k < postprocess.nodes.size(); ++k) {
        const TransformNode& node = postprocess.nodes[k];
        bool applies = std::find(node.applies_to.begin(), node.applies_to.end(), "prediction") !=
                       node.applies_to.end();
        if (!applies) {
            continue;
        }
        TransformChain single;
        single.nodes.push_back(node);
        try {
            pred = chain_apply(single, pred);
        } catch (const Error& e) {
            raise(e.code(), "postprocess node " + std::to_string(k) + ": " + e.what());
        }
    }
    return pred;
}

}  // namespace neuropipe
