#include "neuropipe/transforms.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "neuropipe/morphology.hpp"

namespace neuropipe {

namespace {

constexpr double kStdEps = 1e-8;

void check_binary(const AffineVolume& v, const char* what) {
    for (int64_t i = 0; i < v.data().size(); ++i) {
        float x = v.data()[i];
        require(x == 0.0f || x == 1.0f, ErrorCode::NonBinaryMask,
                std::string(what) + " contains value " + std::to_string(x));
    }
}

double percentile_sorted(const std::vector<float>& sorted, double p) {
    if (sorted.size() == 1) {
        return sorted[0];
    }
    double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<size_t>(rank);
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = rank - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

}  // namespace

std::string TransformNode::kind() const {
    struct Visitor {
        std::string operator()(const ZeroMeanUnitStdParams&) { return "zero_mean_unit_std"; }
        std::string operator()(const ClipPercentilesParams&) { return "clip_percentiles"; }
        std::string operator()(const ResampleParams&) { return "resample"; }
        std::string operator()(const ApplyMaskParams&) { return "apply_mask"; }
        std::string operator()(const BinarizeParams&) { return "binarize"; }
        std::string operator()(const IslandRemovalParams&) { return "island_removal"; }
        std::string operator()(const HoleFillParams&) { return "hole_fill"; }
        std::string operator()(const ExternalCommandParams&) { return "external_command"; }
    };
    return std::visit(Visitor{}, params);
}

TransformNode make_transform_node(TransformParams params, std::vector<std::string> applies_to,
                                  std::string name) {
    // Parameter validation happens here, not at application time.
    if (const auto* p = std::get_if<ClipPercentilesParams>(&params)) {
        require(p->lo >= 0 && p->lo < p->hi && p->hi <= 100, ErrorCode::BadPercentileRange,
                "need 0 <= lo < hi <= 100, got lo=" + std::to_string(p->lo) +
                    " hi=" + std::to_string(p->hi));
    } else if (const auto* p = std::get_if<ResampleParams>(&params)) {
        require(!p->spacing.empty(), ErrorCode::InvalidArgument, "resample needs target spacing");
        for (double s : p->spacing) {
            require(s > 0 && std::isfinite(s), ErrorCode::InvalidArgument,
                    "target spacing must be positive");
        }
    } else if (const auto* p = std::get_if<BinarizeParams>(&params)) {
        require(std::isfinite(p->threshold), ErrorCode::InvalidArgument,
                "binarize threshold must be finite");
    } else if (const auto* p = std::get_if<IslandRemovalParams>(&params)) {
        require(p->min_voxels >= 1, ErrorCode::InvalidArgument, "min_voxels must be >= 1");
        require(p->connectivity == 0 || p->connectivity == 4 || p->connectivity == 6 ||
                    p->connectivity == 8 || p->connectivity == 26,
                ErrorCode::InvalidArgument, "connectivity must be one of 4, 8 (2D), 6, 26 (3D)");
    } else if (const auto* p = std::get_if<HoleFillParams>(&params)) {
        require(p->connectivity == 0 || p->connectivity == 4 || p->connectivity == 6 ||
                    p->connectivity == 8 || p->connectivity == 26,
                ErrorCode::InvalidArgument, "connectivity must be one of 4, 8 (2D), 6, 26 (3D)");
    } else if (const auto* p = std::get_if<ExternalCommandParams>(&params)) {
        require(p->command.find("{input}") != std::string::npos &&
                    p->command.find("{output}") != std::string::npos,
                ErrorCode::InvalidArgument,
                "external command template needs {input} and {output} placeholders");
    } else if (const auto* p = std::get_if<ApplyMaskParams>(&params)) {
        require(!p->mask_group.empty(), ErrorCode::InvalidArgument,
                "apply_mask needs a mask_group");
    }

    TransformNode node;
    node.params = std::move(params);
    node.applies_to = std::move(applies_to);
    node.name = name.empty() ? node.kind() : std::move(name);
    return node;
}

AffineVolume zero_mean_unit_std(const AffineVolume& v, bool per_channel,
                                const AffineVolume* mask) {
    const Tensor& data = v.data();
    int64_t channels = v.channels();
    int64_t voxels = v.voxels();

    const float* mask_data = nullptr;
    if (mask != nullptr) {
        require(mask->spatial_shape() == v.spatial_shape(), ErrorCode::MaskShapeMismatch,
                "mask " + shape_str(mask->spatial_shape()) + " vs volume " +
                    shape_str(v.spatial_shape()));
        mask_data = mask->data().data();
    }
    auto in_mask = [&](int64_t voxel) {
        return mask_data == nullptr || mask_data[voxel * (mask ? mask->channels() : 1)] != 0.0f;
    };

    int64_t masked_count = 0;
    for (int64_t vx = 0; vx < voxels; ++vx) {
        if (in_mask(vx)) {
            ++masked_count;
        }
    }
    require(masked_count >= 2, ErrorCode::EmptyMask,
            "normalization needs >= 2 voxels in the mask, got " + std::to_string(masked_count));

    Tensor out(data.shape());
    int64_t group_count = per_channel ? channels : 1;
    for (int64_t g = 0; g < group_count; ++g) {
        int64_t c_begin = per_channel ? g : 0;
        int64_t c_end = per_channel ? g + 1 : channels;

        double sum = 0;
        int64_t n = 0;
        for (int64_t vx = 0; vx < voxels; ++vx) {
            if (!in_mask(vx)) {
                continue;
            }
            for (int64_t c = c_begin; c < c_end; ++c) {
                sum += data[vx * channels + c];
                ++n;
            }
        }
        double mean = sum / static_cast<double>(n);
        double sq = 0;
        for (int64_t vx = 0; vx < voxels; ++vx) {
            if (!in_mask(vx)) {
                continue;
            }
            for (int64_t c = c_begin; c < c_end; ++c) {
                double d = data[vx * channels + c] - mean;
                sq += d * d;
            }
        }
        double std_dev = std::sqrt(sq / static_cast<double>(n));

        for (int64_t vx = 0; vx < voxels; ++vx) {
            bool keep = in_mask(vx);
            for (int64_t c = c_begin; c < c_end; ++c) {
                double value = 0;
                if (keep && std_dev > kStdEps) {
                    value = (data[vx * channels + c] - mean) / std_dev;
                }
                out[vx * channels + c] = static_cast<float>(value);
            }
        }
    }
    return v.with_data(std::move(out));
}

AffineVolume clip_percentiles(const AffineVolume& v, double lo, double hi) {
    require(lo >= 0 && lo < hi && hi <= 100, ErrorCode::BadPercentileRange,
            "need 0 <= lo < hi <= 100");
    const Tensor& data = v.data();
    int64_t channels = v.channels();
    int64_t voxels = v.voxels();

    Tensor out(data.shape());
    std::vector<float> sorted(static_cast<size_t>(voxels));
    for (int64_t c = 0; c < channels; ++c) {
        for (int64_t vx = 0; vx < voxels; ++vx) {
            sorted[static_cast<size_t>(vx)] = data[vx * channels + c];
        }
        std::sort(sorted.begin(), sorted.end());
        auto p_lo = static_cast<float>(percentile_sorted(sorted, lo));
        auto p_hi = static_cast<float>(percentile_sorted(sorted, hi));
        for (int64_t vx = 0; vx < voxels; ++vx) {
            out[vx * channels + c] = std::clamp(data[vx * channels + c], p_lo, p_hi);
        }
    }
    return v.with_data(std::move(out));
}

AffineVolume resample(const AffineVolume& v, const std::vector<double>& target_spacing,
                      Interp interp) {
    int rank = v.spatial_rank();
    require(static_cast<int>(target_spacing.size()) == rank, ErrorCode::InvalidArgument,
            "target spacing needs one entry per spatial axis");
    for (double s : target_spacing) {
        require(s > 0, ErrorCode::InvalidArgument, "target spacing must be positive");
    }

    Shape in_shape = v.spatial_shape();
    int64_t channels = v.channels();
    std::vector<double> scale(static_cast<size_t>(rank));  // input voxels per output voxel
    Shape out_shape(static_cast<size_t>(rank));
    for (int axis = 0; axis < rank; ++axis) {
        double sp = v.spacing()[static_cast<size_t>(axis)];
        scale[static_cast<size_t>(axis)] = target_spacing[static_cast<size_t>(axis)] / sp;
        out_shape[static_cast<size_t>(axis)] = std::max<int64_t>(
            1, static_cast<int64_t>(std::ceil(static_cast<double>(in_shape[static_cast<size_t>(axis)]) /
                                              scale[static_cast<size_t>(axis)])));
    }

    Shape full_shape = out_shape;
    full_shape.push_back(channels);
    Tensor out(full_shape);

    Shape in_strides = row_major_strides(in_shape);
    const float* src = v.data().data();

    std::vector<double> coord(static_cast<size_t>(rank));
    std::vector<int64_t> base(static_cast<size_t>(rank));
    std::vector<double> frac(static_cast<size_t>(rank));

    IndexIter it(out_shape);
    int64_t out_voxel = 0;
    for (; !it.done(); it.next(), ++out_voxel) {
        auto idx = it.index();
        for (int axis = 0; axis < rank; ++axis) {
            double x = static_cast<double>(idx[static_cast<size_t>(axis)]) *
                       scale[static_cast<size_t>(axis)];
            x = std::clamp(x, 0.0, static_cast<double>(in_shape[static_cast<size_t>(axis)] - 1));
            coord[static_cast<size_t>(axis)] = x;
        }
        if (interp == Interp::Nearest) {
            int64_t in_voxel = 0;
            for (int axis = 0; axis < rank; ++axis) {
                auto nearest = static_cast<int64_t>(std::lround(coord[static_cast<size_t>(axis)]));
                nearest = std::clamp<int64_t>(nearest, 0, in_shape[static_cast<size_t>(axis)] - 1);
                in_voxel += nearest * in_strides[static_cast<size_t>(axis)];
            }
            for (int64_t c = 0; c < channels; ++c) {
                out[out_voxel * channels + c] = src[in_voxel * channels + c];
            }
        } else {
            for (int axis = 0; axis < rank; ++axis) {
                double floor_c = std::floor(coord[static_cast<size_t>(axis)]);
                base[static_cast<size_t>(axis)] = static_cast<int64_t>(floor_c);
                frac[static_cast<size_t>(axis)] = coord[static_cast<size_t>(axis)] - floor_c;
            }
            int corners = 1 << rank;
            for (int64_t c = 0; c < channels; ++c) {
                double acc = 0;
                for (int corner = 0; corner < corners; ++corner) {
                    double w = 1;
                    int64_t in_voxel = 0;
                    for (int axis = 0; axis < rank; ++axis) {
                        int bit = (corner >> axis) & 1;
                        int64_t pos = base[static_cast<size_t>(axis)] + bit;
                        pos = std::clamp<int64_t>(pos, 0, in_shape[static_cast<size_t>(axis)] - 1);
                        w *= bit ? frac[static_cast<size_t>(axis)]
                                 : 1.0 - frac[static_cast<size_t>(axis)];
                        in_voxel += pos * in_strides[static_cast<size_t>(axis)];
                    }
                    if (w != 0) {
                        acc += w * src[in_voxel * channels + c];
                    }
                }
                out[out_voxel * channels + c] = static_cast<float>(acc);
            }
        }
    }

    // Column i of the affine scales by the voxel-size ratio; the origin (and
    // so the voxel-0 center) stays put.
    Mat4 affine = v.affine();
    for (int axis = 0; axis < rank; ++axis) {
        if (scale[static_cast<size_t>(axis)] != 1.0) {
            for (int row = 0; row < 3; ++row) {
                affine.at(row, axis) *= scale[static_cast<size_t>(axis)];
            }
        }
    }
    return AffineVolume(std::move(out), affine, v.meta());
}

AffineVolume apply_mask(const AffineVolume& v, const AffineVolume& mask) {
    require(mask.spatial_shape() == v.spatial_shape(), ErrorCode::MaskShapeMismatch,
            "mask " + shape_str(mask.spatial_shape()) + " vs volume " +
                shape_str(v.spatial_shape()));
    check_binary(mask, "mask");

    int64_t channels = v.channels();
    int64_t mask_channels = mask.channels();
    Tensor out(v.data().shape());
    for (int64_t vx = 0; vx < v.voxels(); ++vx) {
        float m = mask.data()[vx * mask_channels];
        for (int64_t c = 0; c < channels; ++c) {
            out[vx * channels + c] = m == 0.0f ? 0.0f : v.data()[vx * channels + c];
        }
    }
    return v.with_data(std::move(out));
}

AffineVolume binarize(const AffineVolume& v, double threshold) {
    require(std::isfinite(threshold), ErrorCode::InvalidArgument, "threshold must be finite");
    Tensor out(v.data().shape());
    for (int64_t i = 0; i < v.data().size(); ++i) {
        out[i] = static_cast<double>(v.data()[i]) > threshold ? 1.0f : 0.0f;
    }
    return v.with_data(std::move(out));
}

AffineVolume island_removal(const AffineVolume& v, int64_t min_voxels, int connectivity) {
    require(min_voxels >= 1, ErrorCode::InvalidArgument, "min_voxels must be >= 1");
    check_binary(v, "island_removal input");
    Shape spatial = v.spatial_shape();
    int rank = v.spatial_rank();
    if (connectivity == 0) {
        connectivity = default_connectivity(rank);
    }
    int64_t channels = v.channels();
    int64_t voxels = v.voxels();

    Tensor out = v.data();
    std::vector<float> channel(static_cast<size_t>(voxels));
    for (int64_t c = 0; c < channels; ++c) {
        for (int64_t vx = 0; vx < voxels; ++vx) {
            channel[static_cast<size_t>(vx)] = v.data()[vx * channels + c];
        }
        ComponentMap components = connected_components(channel.data(), spatial, connectivity, true);
        for (int64_t vx = 0; vx < voxels; ++vx) {
            int32_t label = components.labels[static_cast<size_t>(vx)];
            if (label != 0 && components.sizes[static_cast<size_t>(label)] < min_voxels) {
                out[vx * channels + c] = 0.0f;
            }
        }
    }
    return v.with_data(std::move(out));
}

AffineVolume hole_fill(const AffineVolume& v, int connectivity) {
    check_binary(v, "hole_fill input");
    Shape spatial = v.spatial_shape();
    int rank = v.spatial_rank();
    if (connectivity == 0) {
        connectivity = default_connectivity(rank);
    }
    int background_connectivity = complement_connectivity(connectivity, rank);
    int64_t channels = v.channels();
    int64_t voxels = v.voxels();

    Tensor out = v.data();
    std::vector<float> channel(static_cast<size_t>(voxels));
    for (int64_t c = 0; c < channels; ++c) {
        for (int64_t vx = 0; vx < voxels; ++vx) {
            channel[static_cast<size_t>(vx)] = v.data()[vx * channels + c];
        }
        ComponentMap components =
            connected_components(channel.data(), spatial, background_connectivity, false);
        for (int64_t vx = 0; vx < voxels; ++vx) {
            int32_t label = components.labels[static_cast<size_t>(vx)];
            if (label != 0 && !components.touches_border[static_cast<size_t>(label)]) {
                out[vx * channels + c] = 1.0f;
            }
        }
    }
    return v.with_data(std::move(out));
}

namespace {

// Applies one node to a volume; mask comes from the collection context when
// present (null for single-volume chains).
AffineVolume apply_node(const TransformNode& node, const AffineVolume& v,
                        const AffineVolume* mask, const std::string& group_name) {
    struct Visitor {
        const AffineVolume& v;
        const AffineVolume* mask;
        const std::string& group;

        AffineVolume operator()(const ZeroMeanUnitStdParams& p) {
            if (!p.mask_group.empty()) {
                require(mask != nullptr, ErrorCode::InvalidArgument,
                        "mask_group '" + p.mask_group + "' needs a collection context");
            }
            return zero_mean_unit_std(v, p.per_channel, p.mask_group.empty() ? nullptr : mask);
        }
        AffineVolume operator()(const ClipPercentilesParams& p) {
            return clip_percentiles(v, p.lo, p.hi);
        }
        AffineVolume operator()(const ResampleParams& p) {
            // Label volumes must never be interpolated.
            Interp interp = group == "ground_truth" ? Interp::Nearest : p.interp;
            return resample(v, p.spacing, interp);
        }
        AffineVolume operator()(const ApplyMaskParams& p) {
            require(mask != nullptr, ErrorCode::InvalidArgument,
                    "apply_mask '" + p.mask_group + "' needs a collection context");
            return apply_mask(v, *mask);
        }
        AffineVolume operator()(const BinarizeParams& p) { return binarize(v, p.threshold); }
        AffineVolume operator()(const IslandRemovalParams& p) {
            return island_removal(v, p.min_voxels, p.connectivity);
        }
        AffineVolume operator()(const HoleFillParams& p) {
            return hole_fill(v, p.connectivity);
        }
        AffineVolume operator()(const ExternalCommandParams& p) {
            return run_external(p.command, v, p.timeout_seconds);
        }
    };
    return std::visit(Visitor{v, mask, group_name}, node.params);
}

std::string mask_group_of(const TransformNode& node) {
    if (const auto* p = std::get_if<ZeroMeanUnitStdParams>(&node.params)) {
        return p->mask_group;
    }
    if (const auto* p = std::get_if<ApplyMaskParams>(&node.params)) {
        return p->mask_group;
    }
    return {};
}

}  // namespace

AffineVolume chain_apply(const TransformChain& chain, const AffineVolume& v) {
    AffineVolume current = v;
    for (size_t k = 0; k < chain.nodes.size(); ++k) {
        try {
            current = apply_node(chain.nodes[k], current, nullptr, "");
        } catch (const Error& e) {
            raise(e.code(), "chain node " + std::to_string(k) + " ('" + chain.nodes[k].name +
                                "'): " + e.what());
        }
    }
    return current;
}

DataCollection chain_apply(const TransformChain& chain, const DataCollection& c,
                           const std::vector<std::string>& skip_names) {
    auto skipped = [&](const TransformNode& node) {
        return std::find(skip_names.begin(), skip_names.end(), node.name) != skip_names.end();
    };

    DataCollection out(c.groups());
    for (const Case& kase : c.cases()) {
        // Current working volume per group, loaded on first touch.
        std::map<std::string, AffineVolume> current;
        auto fetch = [&](const std::string& group) -> AffineVolume& {
            auto it = current.find(group);
            if (it == current.end()) {
                it = current.emplace(group, *c.case_volume(kase.id, group)).first;
            }
            return it->second;
        };

        for (size_t k = 0; k < chain.nodes.size(); ++k) {
            const TransformNode& node = chain.nodes[k];
            if (skipped(node)) {
                continue;
            }
            for (const std::string& group : node.applies_to) {
                if (!kase.sources.count(group)) {
                    continue;
                }
                try {
                    const AffineVolume* mask = nullptr;
                    std::string mg = mask_group_of(node);
                    if (!mg.empty()) {
                        require(kase.sources.count(mg) > 0, ErrorCode::InvalidArgument,
                                "case '" + kase.id + "' lacks mask group '" + mg + "'");
                        mask = &fetch(mg);
                    }
                    AffineVolume& vol = fetch(group);
                    vol = apply_node(node, vol, mask, group);
                } catch (const Error& e) {
                    raise(e.code(), "chain node " + std::to_string(k) + " ('" + node.name +
                                        "') on case '" + kase.id + "' group '" + group +
                                        "': " + e.what());
                }
            }
        }

        // Touched groups become in-memory per-channel sources; untouched
        // groups keep their original sources (and stay lazy).
        Case rebuilt{kase.id, {}};
        for (const auto& [group_name, sources] : kase.sources) {
            auto it = current.find(group_name);
            if (it == current.end()) {
                rebuilt.sources.emplace(group_name, sources);
                continue;
            }
            const AffineVolume& vol = it->second;
            int64_t channels = vol.channels();
            int64_t voxels = vol.voxels();
            Shape channel_shape = vol.spatial_shape();
            channel_shape.push_back(1);
            std::vector<ChannelSource> rebuilt_sources;
            for (int64_t ch = 0; ch < channels; ++ch) {
                Tensor t(channel_shape);
                for (int64_t vx = 0; vx < voxels; ++vx) {
                    t[vx] = vol.data()[vx * channels + ch];
                }
                rebuilt_sources.emplace_back(AffineVolume(std::move(t), vol.affine()));
            }
            rebuilt.sources.emplace(group_name, std::move(rebuilt_sources));
        }
        out.add_case(std::move(rebuilt));
    }
    return out;
}

TransformChain TransformChain::from_json_text(const std::string& text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("transform chain JSON: ") + e.what());
    }
    require(doc.is_array(), ErrorCode::InvalidConfig, "transform chain must be a JSON array");

    TransformChain chain;
    for (const auto& item : doc) {
        try {
            std::string kind = item.at("kind").get<std::string>();
            json params = item.value("params", json::object());
            TransformParams p;
            if (kind == "zero_mean_unit_std") {
                p = ZeroMeanUnitStdParams{params.value("per_channel", true),
                                          params.value("mask_group", std::string{})};
            } else if (kind == "clip_percentiles") {
                p = ClipPercentilesParams{params.at("lo").get<double>(),
                                          params.at("hi").get<double>()};
            } else if (kind == "resample") {
                Interp interp = params.value("interp", std::string("linear")) == "nearest"
                                    ? Interp::Nearest
                                    : Interp::Trilinear;
                p = ResampleParams{params.at("spacing").get<std::vector<double>>(), interp};
            } else if (kind == "apply_mask") {
                p = ApplyMaskParams{params.at("mask_group").get<std::string>()};
            } else if (kind == "binarize") {
                p = BinarizeParams{params.value("threshold", 0.5)};
            } else if (kind == "island_removal") {
                p = IslandRemovalParams{params.value("min_voxels", int64_t{1}),
                                        params.value("connectivity", 0)};
            } else if (kind == "hole_fill") {
                p = HoleFillParams{params.value("connectivity", 0)};
            } else if (kind == "external_command") {
                p = ExternalCommandParams{params.at("command").get<std::string>(),
                                          params.value("timeout_seconds", 600.0)};
            } else {
                raise(ErrorCode::InvalidConfig, "unknown transform kind '" + kind + "'");
            }
            std::vector<std::string> applies =
                item.value("applies_to", std::vector<std::string>{"input_data"});
            chain.nodes.push_back(make_transform_node(std::move(p), std::move(applies),
                                                      item.value("name", std::string{})));
        } catch (const json::exception& e) {
            raise(ErrorCode::InvalidConfig, std::string("transform node: ") + e.what());
        }
    }
    return chain;
}

std::string TransformChain::to_json_text() const {
    using nlohmann::json;
    json doc = json::array();
    for (const auto& node : nodes) {
        json item;
        item["kind"] = node.kind();
        item["name"] = node.name;
        item["applies_to"] = node.applies_to;
        json params = json::object();
        if (const auto* p = std::get_if<ZeroMeanUnitStdParams>(&node.params)) {
            params["per_channel"] = p->per_channel;
            if (!p->mask_group.empty()) {
                params["mask_group"] = p->mask_group;
            }
        } else if (const auto* p = std::get_if<ClipPercentilesParams>(&node.params)) {
            params["lo"] = p->lo;
            params["hi"] = p->hi;
        } else if (const auto* p = std::get_if<ResampleParams>(&node.params)) {
            params["spacing"] = p->spacing;
            params["interp"] = p->interp == Interp::Nearest ? "nearest" : "linear";
        } else if (const auto* p = std::get_if<ApplyMaskParams>(&node.params)) {
            params["mask_group"] = p->mask_group;
        } else if (const auto* p = std::get_if<BinarizeParams>(&node.params)) {
            params["threshold"] = p->threshold;
        } else if (const auto* p = std::get_if<IslandRemovalParams>(&node.params)) {
            params["min_voxels"] = p->min_voxels;
            params["connectivity"] = p->connectivity;
        } else if (const auto* p = std::get_if<HoleFillParams>(&node.params)) {
            params["connectivity"] = p->connectivity;
        } else if (const auto* p = std::get_if<ExternalCommandParams>(&node.params)) {
            params["command"] = p->command;
            params["timeout_seconds"] = p->timeout_seconds;
        }
        item["params"] = std::move(params);
        doc.push_back(std::move(item));
    }
    return doc.dump();
}

}  // namespace neuropipe
