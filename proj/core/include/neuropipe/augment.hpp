#pragma once

#include <variant>

#include "neuropipe/collection.hpp"
#include "neuropipe/rng.hpp"
#include "neuropipe/volume.hpp"

namespace neuropipe {

// One emitted training sample: every group of the source case, transformed
// in lockstep, plus a record of each transform actually drawn.
struct ProvenanceEntry {
    std::string kind;
    std::string details;  // JSON text of the drawn parameters
};

struct Sample {
    std::string id;
    std::map<std::string, AffineVolume> groups;
    std::vector<ProvenanceEntry> provenance;
};

// Signed axis permutation: output axis a reads input axis src[a], reversed
// when reversed[a]. Flips and 90-degree rotations are all of this form.
struct AxisTransform {
    std::vector<int> src;
    std::vector<bool> reversed;

    bool is_identity() const;
};

AxisTransform identity_transform(int rank);
AxisTransform inverse(const AxisTransform& t);
AxisTransform compose(const AxisTransform& outer, const AxisTransform& inner);

/// Applies the transform to the spatial axes; channels ride along unchanged.
Tensor apply_axis_transform(const Tensor& t, const AxisTransform& at);
AffineVolume apply_axis_transform(const AffineVolume& v, const AxisTransform& at);

/// All shape-preserving elements of the group generated by flips and
/// 90-degree rotations in the allowed axes (dihedral-8 for square 2D,
/// 48 elements for cubic 3D).
std::vector<AxisTransform> enumerate_flip_rotate_group(const Shape& spatial,
                                                       const std::vector<int>& axes_allowed);

// --- augmentation node kinds -------------------------------------------------

struct PatchCriteria {
    double label_fraction = 0;
    std::string label_group = "ground_truth";
    int64_t min_label_voxels = 1;
};

struct FlipAug {
    std::vector<int> axes;  // empty = all spatial axes
};
struct Rotate90Aug {
    std::vector<int> axes;
};
struct FlipRotateAug {
    std::vector<int> axes;
};
struct IntensityScaleAug {
    double lo = 1, hi = 1;
};
struct IntensityShiftAug {
    double lo = 0, hi = 0;
};
struct PatchExtractAug {
    Shape shape;
    PatchCriteria criteria;
};
struct ChannelDropoutAug {
    double probability = 0;
};
struct DownsampleAug {
    int64_t factor = 2;
};

using AugmentParams = std::variant<FlipAug, Rotate90Aug, FlipRotateAug, IntensityScaleAug,
                                   IntensityShiftAug, PatchExtractAug, ChannelDropoutAug,
                                   DownsampleAug>;

struct AugmentationNode {
    AugmentParams params;
    int64_t multiplicity = 1;

    std::string kind() const;
    /// Spatial nodes apply one drawn transform to every group; intensity and
    /// dropout nodes touch input_data only.
    bool spatial() const;
};

AugmentationNode make_augmentation_node(AugmentParams params, int64_t multiplicity = 1);

std::vector<AugmentationNode> augmentation_from_json_text(const std::string& text);
std::string augmentation_to_json_text(const std::vector<AugmentationNode>& nodes);

// --- single-sample operations (used by the stream; public for tests) --------

Sample flip_rotate(const Sample& sample, const std::vector<int>& axes_allowed, Rng& rng);
Sample intensity_scale_shift(const Sample& sample, double scale_lo, double scale_hi,
                             double shift_lo, double shift_hi, Rng& rng);
std::vector<Sample> extract_patches(const Sample& sample, const Shape& patch_shape, int64_t count,
                                    const PatchCriteria& criteria, Rng& rng);
Sample channel_dropout(const Sample& sample, double probability, Rng& rng);
Sample downsample_nn(const Sample& sample, int64_t factor);

// --- the stream ---------------------------------------------------------------

/// Lazy recursive expansion: node k fans each incoming sample out into
/// multiplicity_k variants, so the stream holds cases * prod(multiplicity)
/// samples. Any sample is a pure function of (collection, nodes, seed,
/// index), so samples can materialize concurrently and out of order.
class SampleStream {
public:
    SampleStream(DataCollection collection, std::vector<AugmentationNode> nodes, uint64_t seed);

    int64_t size() const { return size_; }
    const std::vector<AugmentationNode>& nodes() const { return nodes_; }
    const DataCollection& collection() const { return collection_; }
    uint64_t seed() const { return seed_; }

    Sample materialize(int64_t index) const;

private:
    DataCollection collection_;
    std::vector<AugmentationNode> nodes_;
    uint64_t seed_ = 0;
    int64_t size_ = 0;
};

/// Validates node invariants against the collection's first case and builds
/// the stream.
SampleStream expand(const DataCollection& c, std::vector<AugmentationNode> nodes, uint64_t seed);

/// Materializes every sample, shuffles by a seed-derived permutation, and
/// writes a DNAR archive whose case ids encode provenance ("p01/aug0003").
void expand_to_archive(const DataCollection& c, std::vector<AugmentationNode> nodes,
                       uint64_t seed, const std::string& path);

}  // namespace neuropipe
