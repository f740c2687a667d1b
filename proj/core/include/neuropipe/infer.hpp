#pragma once

#include "neuropipe/collection.hpp"
#include "neuropipe/net/unet.hpp"
#include "neuropipe/transforms.hpp"

namespace neuropipe {

enum class PadMode { Zero, Reflect, None };

/// Tiling of a volume into overlapping patches plus the reconstruction
/// recipe. Offsets index into the padded volume and are sorted
/// lexicographically; every padded voxel is covered by at least one patch.
struct PatchPlan {
    Shape patch_shape;
    Shape volume_shape;  // original spatial extent
    Shape padded_shape;
    std::vector<Shape> offsets;
    std::vector<std::pair<int64_t, int64_t>> pad;  // per axis (before, after)
    std::vector<double> overlap_fraction;
    PadMode pad_mode = PadMode::Zero;
};

/// Stride per axis is max(1, floor(patch * (1 - overlap))). With padding, the
/// volume grows to the next stride-compatible extent; without, the final
/// offset clamps to volume - patch so the last patch abuts the boundary.
PatchPlan plan_patches(const Shape& volume_shape, const Shape& patch_shape,
                       const std::vector<double>& overlap_fraction, PadMode pad_mode);

/// Batched evaluation of every patch (training=false) with per-voxel
/// sum/hit-count averaging, then un-padding. Output channels = model outputs;
/// the affine is preserved.
AffineVolume run_patched_inference(net::Model& m, const AffineVolume& v, const PatchPlan& plan,
                                   int64_t batch_size);

struct InferenceParams {
    Shape patch_shape;             // empty: use the model's input spatial shape
    std::vector<double> overlap;   // scalar or per-axis; empty: 0
    PadMode pad_mode = PadMode::Zero;
    int64_t batch_size = 4;

    static InferenceParams from_json_text(const std::string& text);
    std::string to_json_text() const;
};

/// case_tensor -> run_patched_inference -> postprocess chain. Postprocess
/// nodes apply only when their applies_to includes "prediction".
AffineVolume infer_case(net::Model& m, const DataCollection& c, const std::string& case_id,
                        const InferenceParams& params, const TransformChain& postprocess);

}  // namespace neuropipe
