#include "neuropipe/augment.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace neuropipe {

// --- axis transforms ---------------------------------------------------------

bool AxisTransform::is_identity() const {
    for (size_t a = 0; a < src.size(); ++a) {
        if (src[a] != static_cast<int>(a) || reversed[a]) {
            return false;
        }
    }
    return true;
}

AxisTransform identity_transform(int rank) {
    AxisTransform t;
    t.src.resize(static_cast<size_t>(rank));
    t.reversed.assign(static_cast<size_t>(rank), false);
    for (int a = 0; a < rank; ++a) {
        t.src[static_cast<size_t>(a)] = a;
    }
    return t;
}

AxisTransform inverse(const AxisTransform& t) {
    AxisTransform out = identity_transform(static_cast<int>(t.src.size()));
    for (size_t a = 0; a < t.src.size(); ++a) {
        out.src[static_cast<size_t>(t.src[a])] = static_cast<int>(a);
        out.reversed[static_cast<size_t>(t.src[a])] = t.reversed[a];
    }
    return out;
}

AxisTransform compose(const AxisTransform& outer, const AxisTransform& inner) {
    AxisTransform out = identity_transform(static_cast<int>(outer.src.size()));
    for (size_t a = 0; a < outer.src.size(); ++a) {
        auto mid = static_cast<size_t>(outer.src[a]);
        out.src[a] = inner.src[mid];
        out.reversed[a] = outer.reversed[a] != inner.reversed[mid];
    }
    return out;
}

Tensor apply_axis_transform(const Tensor& t, const AxisTransform& at) {
    int rank = t.rank() - 1;
    require(static_cast<int>(at.src.size()) == rank, ErrorCode::ShapeMismatch,
            "axis transform rank mismatch");
    Shape in_spatial(t.shape().begin(), t.shape().end() - 1);
    int64_t channels = t.shape().back();

    Shape out_spatial(static_cast<size_t>(rank));
    for (int a = 0; a < rank; ++a) {
        out_spatial[static_cast<size_t>(a)] = in_spatial[static_cast<size_t>(at.src[a])];
    }
    Shape out_shape = out_spatial;
    out_shape.push_back(channels);
    Tensor out(out_shape);

    Shape in_strides = row_major_strides(in_spatial);
    IndexIter it(out_spatial);
    int64_t out_voxel = 0;
    for (; !it.done(); it.next(), ++out_voxel) {
        auto j = it.index();
        int64_t in_voxel = 0;
        for (int a = 0; a < rank; ++a) {
            auto sa = static_cast<size_t>(at.src[a]);
            int64_t coord = at.reversed[static_cast<size_t>(a)]
                                ? in_spatial[sa] - 1 - j[static_cast<size_t>(a)]
                                : j[static_cast<size_t>(a)];
            in_voxel += coord * in_strides[sa];
        }
        for (int64_t c = 0; c < channels; ++c) {
            out[out_voxel * channels + c] = t[in_voxel * channels + c];
        }
    }
    return out;
}

AffineVolume apply_axis_transform(const AffineVolume& v, const AxisTransform& at) {
    int rank = v.spatial_rank();
    Shape in_spatial = v.spatial_shape();

    // World positions must be preserved: column a of the new affine is the
    // (possibly negated) source column, and the origin moves to the world
    // position of the voxel that becomes output index 0.
    Mat4 affine = v.affine();
    std::vector<double> corner(4, 0.0);
    corner[3] = 1.0;
    for (int a = 0; a < rank; ++a) {
        if (at.reversed[static_cast<size_t>(a)]) {
            corner[static_cast<size_t>(at.src[a])] =
                static_cast<double>(in_spatial[static_cast<size_t>(at.src[a])] - 1);
        }
    }
    Mat4 out_affine = affine;
    for (int a = 0; a < rank; ++a) {
        double sign = at.reversed[static_cast<size_t>(a)] ? -1.0 : 1.0;
        for (int row = 0; row < 3; ++row) {
            out_affine.at(row, a) = sign * affine.at(row, at.src[static_cast<size_t>(a)]);
        }
    }
    for (int row = 0; row < 3; ++row) {
        double t = 0;
        for (int col = 0; col < 4; ++col) {
            t += affine.at(row, col) * corner[static_cast<size_t>(col)];
        }
        out_affine.at(row, 3) = t;
    }
    return AffineVolume(apply_axis_transform(v.data(), at), out_affine, v.meta());
}

std::vector<AxisTransform> enumerate_flip_rotate_group(const Shape& spatial,
                                                       const std::vector<int>& axes_allowed) {
    int rank = static_cast<int>(spatial.size());
    std::vector<int> axes = axes_allowed;
    if (axes.empty()) {
        for (int a = 0; a < rank; ++a) {
            axes.push_back(a);
        }
    }
    for (int a : axes) {
        require(a >= 0 && a < rank, ErrorCode::InvalidArgument,
                "augmentation axis " + std::to_string(a) + " out of range");
    }

    std::vector<int> perm = axes;
    std::sort(perm.begin(), perm.end());
    std::vector<AxisTransform> out;
    do {
        // perm maps sorted(axes)[i] -> perm[i]; untouched axes stay fixed.
        AxisTransform base = identity_transform(rank);
        std::vector<int> sorted_axes = axes;
        std::sort(sorted_axes.begin(), sorted_axes.end());
        bool shape_ok = true;
        for (size_t i = 0; i < sorted_axes.size(); ++i) {
            base.src[static_cast<size_t>(sorted_axes[i])] = perm[i];
            if (spatial[static_cast<size_t>(sorted_axes[i])] !=
                spatial[static_cast<size_t>(perm[i])]) {
                shape_ok = false;
            }
        }
        if (!shape_ok) {
            continue;
        }
        auto n_masks = static_cast<uint64_t>(1) << axes.size();
        for (uint64_t mask = 0; mask < n_masks; ++mask) {
            AxisTransform t = base;
            for (size_t i = 0; i < sorted_axes.size(); ++i) {
                t.reversed[static_cast<size_t>(sorted_axes[i])] = (mask >> i) & 1;
            }
            out.push_back(std::move(t));
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

// --- node plumbing -------------------------------------------------------------

std::string AugmentationNode::kind() const {
    struct Visitor {
        std::string operator()(const FlipAug&) { return "flip"; }
        std::string operator()(const Rotate90Aug&) { return "rotate90"; }
        std::string operator()(const FlipRotateAug&) { return "flip_rotate"; }
        std::string operator()(const IntensityScaleAug&) { return "intensity_scale"; }
        std::string operator()(const IntensityShiftAug&) { return "intensity_shift"; }
        std::string operator()(const PatchExtractAug&) { return "patch_extract"; }
        std::string operator()(const ChannelDropoutAug&) { return "channel_dropout"; }
        std::string operator()(const DownsampleAug&) { return "downsample_nn"; }
    };
    return std::visit(Visitor{}, params);
}

bool AugmentationNode::spatial() const {
    return std::holds_alternative<FlipAug>(params) || std::holds_alternative<Rotate90Aug>(params) ||
           std::holds_alternative<FlipRotateAug>(params) ||
           std::holds_alternative<PatchExtractAug>(params) ||
           std::holds_alternative<DownsampleAug>(params);
}

AugmentationNode make_augmentation_node(AugmentParams params, int64_t multiplicity) {
    require(multiplicity >= 1, ErrorCode::InvalidArgument, "multiplicity must be >= 1");
    if (const auto* p = std::get_if<IntensityScaleAug>(&params)) {
        require(p->lo > 0 && p->lo <= p->hi, ErrorCode::InvalidArgument,
                "intensity scale range needs 0 < lo <= hi");
    } else if (const auto* p = std::get_if<IntensityShiftAug>(&params)) {
        require(p->lo <= p->hi, ErrorCode::InvalidArgument, "intensity shift range needs lo <= hi");
    } else if (const auto* p = std::get_if<PatchExtractAug>(&params)) {
        require(!p->shape.empty(), ErrorCode::InvalidArgument, "patch shape must be nonempty");
        for (int64_t d : p->shape) {
            require(d >= 1, ErrorCode::InvalidArgument, "patch dims must be >= 1");
        }
        require(p->criteria.label_fraction >= 0 && p->criteria.label_fraction <= 1,
                ErrorCode::InvalidArgument, "label_fraction must be in [0,1]");
        require(p->criteria.min_label_voxels >= 1, ErrorCode::InvalidArgument,
                "min_label_voxels must be >= 1");
    } else if (const auto* p = std::get_if<ChannelDropoutAug>(&params)) {
        require(p->probability >= 0 && p->probability < 1, ErrorCode::InvalidArgument,
                "dropout probability must be in [0,1)");
    } else if (const auto* p = std::get_if<DownsampleAug>(&params)) {
        require(p->factor >= 2, ErrorCode::InvalidArgument, "downsample factor must be >= 2");
    }
    AugmentationNode node;
    node.params = std::move(params);
    node.multiplicity = multiplicity;
    return node;
}

// --- per-sample operations -----------------------------------------------------

namespace {

Shape sample_spatial_shape(const Sample& sample) {
    require(!sample.groups.empty(), ErrorCode::InvalidArgument, "sample has no groups");
    Shape shape = sample.groups.begin()->second.spatial_shape();
    for (const auto& [name, vol] : sample.groups) {
        require(vol.spatial_shape() == shape, ErrorCode::ShapeMismatch,
                "group '" + name + "' shape " + shape_str(vol.spatial_shape()) +
                    " differs from " + shape_str(shape));
    }
    return shape;
}

Sample apply_transform_all_groups(const Sample& sample, const AxisTransform& at,
                                  const std::string& kind, const std::string& details) {
    Sample out;
    out.id = sample.id;
    out.provenance = sample.provenance;
    for (const auto& [name, vol] : sample.groups) {
        out.groups.emplace(name, apply_axis_transform(vol, at));
    }
    out.provenance.push_back({kind, details});
    return out;
}

std::string transform_details(const AxisTransform& at) {
    nlohmann::json j;
    j["src"] = at.src;
    std::vector<int> rev;
    for (bool b : at.reversed) {
        rev.push_back(b ? 1 : 0);
    }
    j["reversed"] = rev;
    return j.dump();
}

AffineVolume crop_volume(const AffineVolume& v, const Shape& corner, const Shape& patch) {
    int rank = v.spatial_rank();
    int64_t channels = v.channels();
    Shape out_shape = patch;
    out_shape.push_back(channels);
    Tensor out(out_shape);

    Shape in_strides = row_major_strides(v.spatial_shape());
    IndexIter it(patch);
    int64_t out_voxel = 0;
    for (; !it.done(); it.next(), ++out_voxel) {
        auto j = it.index();
        int64_t in_voxel = 0;
        for (int a = 0; a < rank; ++a) {
            in_voxel += (corner[static_cast<size_t>(a)] + j[static_cast<size_t>(a)]) *
                        in_strides[static_cast<size_t>(a)];
        }
        for (int64_t c = 0; c < channels; ++c) {
            out[out_voxel * channels + c] = v.data()[in_voxel * channels + c];
        }
    }

    Mat4 affine = v.affine();
    for (int row = 0; row < 3; ++row) {
        double shift = 0;
        for (int a = 0; a < rank; ++a) {
            shift += affine.at(row, a) * static_cast<double>(corner[static_cast<size_t>(a)]);
        }
        affine.at(row, 3) += shift;
    }
    return AffineVolume(std::move(out), affine, v.meta());
}

// One patch draw. Label patches center on a random labeled voxel and retry
// (up to 100 times) until min_label_voxels fall inside; the last draw is
// accepted as-is.
Sample draw_patch(const Sample& sample, const Shape& patch_shape, const PatchCriteria& criteria,
                  bool label_patch, Rng& rng) {
    Shape spatial = sample_spatial_shape(sample);
    int rank = static_cast<int>(spatial.size());
    require(static_cast<int>(patch_shape.size()) == rank, ErrorCode::InvalidArgument,
            "patch rank " + std::to_string(patch_shape.size()) + " vs volume rank " +
                std::to_string(rank));
    for (int a = 0; a < rank; ++a) {
        require(patch_shape[static_cast<size_t>(a)] <= spatial[static_cast<size_t>(a)],
                ErrorCode::PatchLargerThanVolume,
                "patch " + shape_str(patch_shape) + " exceeds volume " + shape_str(spatial));
    }

    const AffineVolume* label = nullptr;
    std::vector<int64_t> label_voxels;
    bool fell_back = false;
    if (label_patch) {
        auto it = sample.groups.find(criteria.label_group);
        require(it != sample.groups.end(), ErrorCode::InvalidArgument,
                "label group '" + criteria.label_group + "' not in sample");
        label = &it->second;
        int64_t channels = label->channels();
        for (int64_t v = 0; v < label->voxels(); ++v) {
            for (int64_t c = 0; c < channels; ++c) {
                if (label->data()[v * channels + c] != 0.0f) {
                    label_voxels.push_back(v);
                    break;
                }
            }
        }
        if (label_voxels.empty()) {
            // NoLabelVoxels: fall back to uniform, recorded in provenance.
            label_patch = false;
            fell_back = true;
        }
    }

    Shape strides = row_major_strides(spatial);
    auto label_count_inside = [&](const Shape& corner) {
        int64_t count = 0;
        int64_t channels = label->channels();
        IndexIter it(patch_shape);
        for (; !it.done(); it.next()) {
            auto j = it.index();
            int64_t v = 0;
            for (int a = 0; a < rank; ++a) {
                v += (corner[static_cast<size_t>(a)] + j[static_cast<size_t>(a)]) *
                     strides[static_cast<size_t>(a)];
            }
            for (int64_t c = 0; c < channels; ++c) {
                if (label->data()[v * channels + c] != 0.0f) {
                    ++count;
                    break;
                }
            }
        }
        return count;
    };

    Shape corner(static_cast<size_t>(rank), 0);
    std::string mode;
    if (label_patch) {
        mode = "label_center";
        for (int attempt = 0; attempt < 100; ++attempt) {
            int64_t voxel = label_voxels[static_cast<size_t>(rng.next_below(label_voxels.size()))];
            for (int a = 0; a < rank; ++a) {
                int64_t center = voxel / strides[static_cast<size_t>(a)];
                voxel %= strides[static_cast<size_t>(a)];
                int64_t c = center - patch_shape[static_cast<size_t>(a)] / 2;
                corner[static_cast<size_t>(a)] = std::clamp<int64_t>(
                    c, 0, spatial[static_cast<size_t>(a)] - patch_shape[static_cast<size_t>(a)]);
            }
            if (label_count_inside(corner) >= criteria.min_label_voxels) {
                break;
            }
        }
    } else {
        mode = fell_back ? "uniform_no_label_fallback" : "uniform";
        for (int a = 0; a < rank; ++a) {
            int64_t extent =
                spatial[static_cast<size_t>(a)] - patch_shape[static_cast<size_t>(a)] + 1;
            corner[static_cast<size_t>(a)] = static_cast<int64_t>(
                rng.next_below(static_cast<uint64_t>(extent)));
        }
    }

    Sample out;
    out.id = sample.id;
    out.provenance = sample.provenance;
    for (const auto& [name, vol] : sample.groups) {
        out.groups.emplace(name, crop_volume(vol, corner, patch_shape));
    }
    nlohmann::json details;
    details["corner"] = corner;
    details["shape"] = patch_shape;
    details["mode"] = mode;
    out.provenance.push_back({"patch_extract", details.dump()});
    return out;
}

}  // namespace

Sample flip_rotate(const Sample& sample, const std::vector<int>& axes_allowed, Rng& rng) {
    Shape spatial = sample_spatial_shape(sample);
    auto group = enumerate_flip_rotate_group(spatial, axes_allowed);
    const AxisTransform& at = group[static_cast<size_t>(rng.next_below(group.size()))];
    return apply_transform_all_groups(sample, at, "flip_rotate", transform_details(at));
}

Sample intensity_scale_shift(const Sample& sample, double scale_lo, double scale_hi,
                             double shift_lo, double shift_hi, Rng& rng) {
    require(scale_lo > 0 && scale_lo <= scale_hi, ErrorCode::InvalidArgument,
            "scale range needs 0 < lo <= hi");
    require(shift_lo <= shift_hi, ErrorCode::InvalidArgument, "shift range needs lo <= hi");

    Sample out;
    out.id = sample.id;
    out.provenance = sample.provenance;
    nlohmann::json details;
    for (const auto& [name, vol] : sample.groups) {
        if (name != "input_data") {
            out.groups.emplace(name, vol);
            continue;
        }
        int64_t channels = vol.channels();
        std::vector<double> scales, shifts;
        for (int64_t c = 0; c < channels; ++c) {
            scales.push_back(rng.uniform(scale_lo, scale_hi));
            shifts.push_back(rng.uniform(shift_lo, shift_hi));
        }
        Tensor data(vol.data().shape());
        for (int64_t v = 0; v < vol.voxels(); ++v) {
            for (int64_t c = 0; c < channels; ++c) {
                data[v * channels + c] = static_cast<float>(
                    vol.data()[v * channels + c] * scales[static_cast<size_t>(c)] +
                    shifts[static_cast<size_t>(c)]);
            }
        }
        out.groups.emplace(name, vol.with_data(std::move(data)));
        details["scales"] = scales;
        details["shifts"] = shifts;
    }
    out.provenance.push_back({"intensity_scale_shift", details.dump()});
    return out;
}

std::vector<Sample> extract_patches(const Sample& sample, const Shape& patch_shape, int64_t count,
                                    const PatchCriteria& criteria, Rng& rng) {
    require(count >= 1, ErrorCode::InvalidArgument, "patch count must be >= 1");
    auto label_patches =
        static_cast<int64_t>(std::ceil(criteria.label_fraction * static_cast<double>(count)));
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t v = 0; v < count; ++v) {
        Rng sub = rng.fork(static_cast<uint64_t>(v));
        out.push_back(draw_patch(sample, patch_shape, criteria, v < label_patches, sub));
    }
    return out;
}

Sample channel_dropout(const Sample& sample, double probability, Rng& rng) {
    require(probability >= 0 && probability < 1, ErrorCode::InvalidArgument,
            "dropout probability must be in [0,1)");
    Sample out;
    out.id = sample.id;
    out.provenance = sample.provenance;
    nlohmann::json details;
    for (const auto& [name, vol] : sample.groups) {
        if (name != "input_data") {
            out.groups.emplace(name, vol);
            continue;
        }
        int64_t channels = vol.channels();
        require(channels >= 2, ErrorCode::SingleChannelDropout,
                "channel dropout needs >= 2 channels");
        std::vector<bool> dropped(static_cast<size_t>(channels), false);
        while (true) {
            bool all = true;
            for (int64_t c = 0; c < channels; ++c) {
                dropped[static_cast<size_t>(c)] = rng.bernoulli(probability);
                all = all && dropped[static_cast<size_t>(c)];
            }
            if (!all) {
                break;  // guarantee at least one surviving channel
            }
        }
        Tensor data = vol.data();
        for (int64_t v = 0; v < vol.voxels(); ++v) {
            for (int64_t c = 0; c < channels; ++c) {
                if (dropped[static_cast<size_t>(c)]) {
                    data[v * channels + c] = 0.0f;
                }
            }
        }
        out.groups.emplace(name, vol.with_data(std::move(data)));
        std::vector<int> as_int;
        for (bool b : dropped) {
            as_int.push_back(b ? 1 : 0);
        }
        details["dropped"] = as_int;
    }
    out.provenance.push_back({"channel_dropout", details.dump()});
    return out;
}

Sample downsample_nn(const Sample& sample, int64_t factor) {
    require(factor >= 2, ErrorCode::InvalidArgument, "downsample factor must be >= 2");
    Shape spatial = sample_spatial_shape(sample);
    int rank = static_cast<int>(spatial.size());

    Shape cropped(static_cast<size_t>(rank)), out_spatial(static_cast<size_t>(rank));
    for (int a = 0; a < rank; ++a) {
        int64_t keep = spatial[static_cast<size_t>(a)] / factor;
        require(keep >= 1, ErrorCode::InvalidArgument,
                "downsample factor " + std::to_string(factor) + " exceeds axis " +
                    std::to_string(spatial[static_cast<size_t>(a)]));
        cropped[static_cast<size_t>(a)] = keep * factor;
        out_spatial[static_cast<size_t>(a)] = keep;
    }

    Sample out;
    out.id = sample.id;
    out.provenance = sample.provenance;
    for (const auto& [name, vol] : sample.groups) {
        int64_t channels = vol.channels();
        Shape out_shape = out_spatial;
        out_shape.push_back(channels);
        Tensor data(out_shape);
        Shape in_strides = row_major_strides(spatial);
        IndexIter it(out_spatial);
        int64_t out_voxel = 0;
        for (; !it.done(); it.next(), ++out_voxel) {
            auto j = it.index();
            int64_t in_voxel = 0;
            for (int a = 0; a < rank; ++a) {
                in_voxel += j[static_cast<size_t>(a)] * factor * in_strides[static_cast<size_t>(a)];
            }
            for (int64_t c = 0; c < channels; ++c) {
                data[out_voxel * channels + c] = vol.data()[in_voxel * channels + c];
            }
        }
        Mat4 affine = vol.affine();
        for (int a = 0; a < rank; ++a) {
            for (int row = 0; row < 3; ++row) {
                affine.at(row, a) *= static_cast<double>(factor);
            }
        }
        out.groups.emplace(name, AffineVolume(std::move(data), affine, vol.meta()));
    }
    nlohmann::json details;
    details["factor"] = factor;
    details["cropped_to"] = cropped;
    out.provenance.push_back({"downsample_nn", details.dump()});
    return out;
}

// --- stream ------------------------------------------------------------------

namespace {

// Applies node k's variant v to a sample, drawing parameters from rng.
Sample apply_node(const AugmentationNode& node, const Sample& sample, int64_t variant, Rng rng) {
    struct Visitor {
        const Sample& sample;
        const AugmentationNode& node;
        int64_t variant;
        Rng& rng;

        Sample operator()(const FlipAug& p) {
            Shape spatial = sample_spatial_shape(sample);
            int rank = static_cast<int>(spatial.size());
            std::vector<int> axes = p.axes;
            if (axes.empty()) {
                for (int a = 0; a < rank; ++a) {
                    axes.push_back(a);
                }
            }
            AxisTransform t = identity_transform(rank);
            for (int a : axes) {
                require(a >= 0 && a < rank, ErrorCode::InvalidArgument,
                        "flip axis out of range");
                t.reversed[static_cast<size_t>(a)] = rng.bernoulli(0.5);
            }
            return apply_transform_all_groups(sample, t, "flip", transform_details(t));
        }
        Sample operator()(const Rotate90Aug& p) {
            Shape spatial = sample_spatial_shape(sample);
            int rank = static_cast<int>(spatial.size());
            std::vector<int> axes = p.axes;
            if (axes.empty()) {
                for (int a = 0; a < rank; ++a) {
                    axes.push_back(a);
                }
            }
            require(axes.size() >= 2, ErrorCode::InvalidArgument,
                    "rotate90 needs at least two axes");
            // Pick a plane, then a quarter-turn count; non-square planes only
            // admit 0 or 180 degrees.
            std::vector<std::pair<int, int>> planes;
            for (size_t i = 0; i < axes.size(); ++i) {
                for (size_t j = i + 1; j < axes.size(); ++j) {
                    planes.emplace_back(axes[i], axes[j]);
                }
            }
            auto [a, b] = planes[static_cast<size_t>(rng.next_below(planes.size()))];
            bool square = spatial[static_cast<size_t>(a)] == spatial[static_cast<size_t>(b)];
            int64_t quarter = square ? static_cast<int64_t>(rng.next_below(4))
                                     : static_cast<int64_t>(rng.next_below(2)) * 2;
            AxisTransform rot = identity_transform(rank);
            rot.src[static_cast<size_t>(a)] = b;
            rot.src[static_cast<size_t>(b)] = a;
            rot.reversed[static_cast<size_t>(a)] = true;
            AxisTransform t = identity_transform(rank);
            for (int64_t k = 0; k < quarter; ++k) {
                t = compose(rot, t);
            }
            return apply_transform_all_groups(sample, t, "rotate90", transform_details(t));
        }
        Sample operator()(const FlipRotateAug& p) { return flip_rotate(sample, p.axes, rng); }
        Sample operator()(const IntensityScaleAug& p) {
            return intensity_scale_shift(sample, p.lo, p.hi, 0, 0, rng);
        }
        Sample operator()(const IntensityShiftAug& p) {
            return intensity_scale_shift(sample, 1, 1, p.lo, p.hi, rng);
        }
        Sample operator()(const PatchExtractAug& p) {
            auto label_patches = static_cast<int64_t>(std::ceil(
                p.criteria.label_fraction * static_cast<double>(node.multiplicity)));
            return draw_patch(sample, p.shape, p.criteria, variant < label_patches, rng);
        }
        Sample operator()(const ChannelDropoutAug& p) {
            return channel_dropout(sample, p.probability, rng);
        }
        Sample operator()(const DownsampleAug& p) { return downsample_nn(sample, p.factor); }
    };
    return std::visit(Visitor{sample, node, variant, rng}, node.params);
}

}  // namespace

SampleStream::SampleStream(DataCollection collection, std::vector<AugmentationNode> nodes,
                           uint64_t seed)
    : collection_(std::move(collection)), nodes_(std::move(nodes)), seed_(seed) {
    int64_t mult = 1;
    for (const auto& node : nodes_) {
        mult *= node.multiplicity;
    }
    size_ = static_cast<int64_t>(collection_.case_count()) * mult;
}

Sample SampleStream::materialize(int64_t index) const {
    require(index >= 0 && index < size_, ErrorCode::InvalidArgument,
            "sample index " + std::to_string(index) + " out of range");

    int64_t mult = 1;
    for (const auto& node : nodes_) {
        mult *= node.multiplicity;
    }
    auto case_idx = static_cast<size_t>(index / mult);
    int64_t rest = index % mult;

    // Mixed-radix digits: the first node varies slowest.
    std::vector<int64_t> variants(nodes_.size(), 0);
    for (size_t k = nodes_.size(); k-- > 0;) {
        variants[k] = rest % nodes_[k].multiplicity;
        rest /= nodes_[k].multiplicity;
    }

    const Case& kase = collection_.case_at(case_idx);
    Sample sample;
    sample.id = kase.id;
    for (const auto& [group_name, sources] : kase.sources) {
        sample.groups.emplace(group_name, *collection_.case_volume(kase.id, group_name));
    }

    // Per-node RNG streams derived from the full variant path, so sibling
    // samples and out-of-order materialization stay deterministic.
    uint64_t path = hash_u64s({seed_, static_cast<uint64_t>(case_idx)});
    for (size_t k = 0; k < nodes_.size(); ++k) {
        path = hash_combine(path, static_cast<uint64_t>(variants[k]));
        Rng rng{hash_combine(path, 0xA6Dull + k)};
        sample = apply_node(nodes_[k], sample, variants[k], rng);
    }
    return sample;
}

SampleStream expand(const DataCollection& c, std::vector<AugmentationNode> nodes, uint64_t seed) {
    // Bind-time validation: propagate the first case's spatial shape through
    // the node list (all nodes keep per-axis sizes predictable).
    if (c.case_count() > 0) {
        const Case& first = c.case_at(0);
        require(!first.sources.empty(), ErrorCode::InvalidArgument, "first case has no groups");
        bool needs_shape = false;
        for (const auto& node : nodes) {
            if (std::holds_alternative<PatchExtractAug>(node.params) ||
                std::holds_alternative<DownsampleAug>(node.params)) {
                needs_shape = true;
            }
        }
        Shape shape;
        if (needs_shape) {
            shape = c.case_volume(first.id, first.sources.begin()->first)->spatial_shape();
        }
        for (const auto& node : nodes) {
            if (const auto* p = std::get_if<PatchExtractAug>(&node.params)) {
                require(p->shape.size() == shape.size(), ErrorCode::InvalidArgument,
                        "patch rank " + std::to_string(p->shape.size()) + " vs volume rank " +
                            std::to_string(shape.size()));
                for (size_t a = 0; a < shape.size(); ++a) {
                    require(p->shape[a] <= shape[a], ErrorCode::PatchLargerThanVolume,
                            "patch " + shape_str(p->shape) + " exceeds volume " +
                                shape_str(shape));
                }
                shape = p->shape;
            } else if (const auto* p = std::get_if<DownsampleAug>(&node.params)) {
                for (size_t a = 0; a < shape.size(); ++a) {
                    shape[a] = shape[a] / p->factor;
                    require(shape[a] >= 1, ErrorCode::InvalidArgument,
                            "downsample factor exceeds volume extent");
                }
            } else if (std::holds_alternative<ChannelDropoutAug>(node.params)) {
                const DataGroup* g = c.find_group("input_data");
                require(g != nullptr && g->channel_labels.size() >= 2,
                        ErrorCode::SingleChannelDropout,
                        "channel dropout needs an input_data group with >= 2 channels");
            }
        }
    }
    return SampleStream(c, std::move(nodes), seed);
}

void expand_to_archive(const DataCollection& c, std::vector<AugmentationNode> nodes,
                       uint64_t seed, const std::string& path) {
    SampleStream stream = expand(c, std::move(nodes), seed);

    int64_t per_case = c.case_count() > 0
                           ? stream.size() / static_cast<int64_t>(c.case_count())
                           : 0;
    std::vector<int64_t> order(static_cast<size_t>(stream.size()));
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = static_cast<int64_t>(i);
    }
    Rng shuffle_rng{hash_u64s({seed, 0x5f1eULL})};
    shuffle_rng.shuffle(order);

    DataCollection archive(c.groups());
    for (int64_t index : order) {
        Sample sample = stream.materialize(index);
        int64_t within_case = per_case > 0 ? index % per_case : 0;
        char suffix[32];
        std::snprintf(suffix, sizeof(suffix), "/aug%04lld",
                      static_cast<long long>(within_case));
        Case kase{sample.id + suffix, {}};
        for (const auto& [group_name, vol] : sample.groups) {
            std::vector<ChannelSource> sources;
            for (auto& channel : vol.split_channels()) {
                sources.emplace_back(std::move(channel));
            }
            kase.sources.emplace(group_name, std::move(sources));
        }
        archive.add_case(std::move(kase));
    }
    write_archive(archive, path);
}

std::vector<AugmentationNode> augmentation_from_json_text(const std::string& text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("augmentation JSON: ") + e.what());
    }
    require(doc.is_array(), ErrorCode::InvalidConfig, "augmentation list must be a JSON array");

    std::vector<AugmentationNode> nodes;
    for (const auto& item : doc) {
        try {
            std::string kind = item.at("kind").get<std::string>();
            json params = item.value("params", json::object());
            int64_t multiplicity = item.value("multiplicity", int64_t{1});
            AugmentParams p;
            if (kind == "flip") {
                p = FlipAug{params.value("axes", std::vector<int>{})};
            } else if (kind == "rotate90") {
                p = Rotate90Aug{params.value("axes", std::vector<int>{})};
            } else if (kind == "flip_rotate") {
                p = FlipRotateAug{params.value("axes", std::vector<int>{})};
            } else if (kind == "intensity_scale") {
                auto range = params.at("range").get<std::vector<double>>();
                require(range.size() == 2, ErrorCode::InvalidConfig,
                        "intensity_scale range must be [lo, hi]");
                p = IntensityScaleAug{range[0], range[1]};
            } else if (kind == "intensity_shift") {
                auto range = params.at("range").get<std::vector<double>>();
                require(range.size() == 2, ErrorCode::InvalidConfig,
                        "intensity_shift range must be [lo, hi]");
                p = IntensityShiftAug{range[0], range[1]};
            } else if (kind == "patch_extract") {
                PatchExtractAug patch;
                patch.shape = params.at("shape").get<Shape>();
                patch.criteria.label_fraction = params.value("label_fraction", 0.0);
                patch.criteria.label_group =
                    params.value("label_group", std::string("ground_truth"));
                patch.criteria.min_label_voxels = params.value("min_label_voxels", int64_t{1});
                if (params.contains("count")) {
                    auto count = params.at("count").get<int64_t>();
                    if (item.contains("multiplicity")) {
                        require(count == multiplicity, ErrorCode::InvalidConfig,
                                "patch_extract count and multiplicity disagree");
                    }
                    multiplicity = count;
                }
                p = std::move(patch);
            } else if (kind == "channel_dropout") {
                p = ChannelDropoutAug{params.at("probability").get<double>()};
            } else if (kind == "downsample_nn") {
                p = DownsampleAug{params.value("factor", int64_t{2})};
            } else {
                raise(ErrorCode::InvalidConfig, "unknown augmentation kind '" + kind + "'");
            }
            nodes.push_back(make_augmentation_node(std::move(p), multiplicity));
        } catch (const json::exception& e) {
            raise(ErrorCode::InvalidConfig, std::string("augmentation node: ") + e.what());
        }
    }
    return nodes;
}

std::string augmentation_to_json_text(const std::vector<AugmentationNode>& nodes) {
    using nlohmann::json;
    json doc = json::array();
    for (const auto& node : nodes) {
        json item;
        item["kind"] = node.kind();
        item["multiplicity"] = node.multiplicity;
        json params = json::object();
        if (const auto* p = std::get_if<FlipAug>(&node.params)) {
            params["axes"] = p->axes;
        } else if (const auto* p = std::get_if<Rotate90Aug>(&node.params)) {
            params["axes"] = p->axes;
        } else if (const auto* p = std::get_if<FlipRotateAug>(&node.params)) {
            params["axes"] = p->axes;
        } else if (const auto* p = std::get_if<IntensityScaleAug>(&node.params)) {
            params["range"] = std::vector<double>{p->lo, p->hi};
        } else if (const auto* p = std::get_if<IntensityShiftAug>(&node.params)) {
            params["range"] = std::vector<double>{p->lo, p->hi};
        } else if (const auto* p = std::get_if<PatchExtractAug>(&node.params)) {
            params["shape"] = p->shape;
            params["label_fraction"] = p->criteria.label_fraction;
            params["label_group"] = p->criteria.label_group;
            params["min_label_voxels"] = p->criteria.min_label_voxels;
        } else if (const auto* p = std::get_if<ChannelDropoutAug>(&node.params)) {
            params["probability"] = p->probability;
        } else if (const auto* p = std::get_if<DownsampleAug>(&node.params)) {
            params["factor"] = p->factor;
        }
        item["params"] = std::move(params);
        doc.push_back(std::move(item));
    }
    return doc.dump();
}

}  // namespace neuropipe
