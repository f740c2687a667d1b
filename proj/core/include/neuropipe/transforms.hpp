#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "neuropipe/collection.hpp"
#include "neuropipe/volume.hpp"

namespace neuropipe {

enum class Interp { Trilinear, Nearest };

// Per-kind transform parameters. Validation happens when a node is built.
struct ZeroMeanUnitStdParams {
    bool per_channel = true;
    std::string mask_group;  // optional; resolved against the collection
};
struct ClipPercentilesParams {
    double lo = 0;
    double hi = 100;
};
struct ResampleParams {
    std::vector<double> spacing;  // target mm per axis
    Interp interp = Interp::Trilinear;
};
struct ApplyMaskParams {
    std::string mask_group;
};
struct BinarizeParams {
    double threshold = 0.5;
};
struct IslandRemovalParams {
    int64_t min_voxels = 1;
    int connectivity = 0;  // 0 = default: 6 in 3D, 4 in 2D
};
struct HoleFillParams {
    int connectivity = 0;  // foreground connectivity; background uses the complement
};
struct ExternalCommandParams {
    std::string command;  // must contain {input} and {output}
    double timeout_seconds = 600;
};

using TransformParams =
    std::variant<ZeroMeanUnitStdParams, ClipPercentilesParams, ResampleParams, ApplyMaskParams,
                 BinarizeParams, IslandRemovalParams, HoleFillParams, ExternalCommandParams>;

struct TransformNode {
    TransformParams params;
    std::string name;  // for selective skipping; defaults to the kind string
    std::vector<std::string> applies_to{"input_data"};

    std::string kind() const;
};

TransformNode make_transform_node(TransformParams params,
                                  std::vector<std::string> applies_to = {"input_data"},
                                  std::string name = {});

/// Nodes applied in list order; node k's output feeds node k+1.
struct TransformChain {
    std::vector<TransformNode> nodes;

    static TransformChain from_json_text(const std::string& text);
    std::string to_json_text() const;
};

// --- individual transforms -------------------------------------------------

/// Over the (masked) region, per channel or globally, shifts to mean 0 and
/// population std 1; voxels outside the mask become 0. Constant regions map
/// to zeros (std guarded by eps=1e-8).
AffineVolume zero_mean_unit_std(const AffineVolume& v, bool per_channel = true,
                                const AffineVolume* mask = nullptr);

/// Clamps to the [lo, hi] percentiles (linear interpolation, per channel).
AffineVolume clip_percentiles(const AffineVolume& v, double lo, double hi);

/// Resamples to the target spacing. Output shape is
/// ceil(shape * spacing/target); voxel centers align at the origin corner.
AffineVolume resample(const AffineVolume& v, const std::vector<double>& target_spacing,
                      Interp interp);

/// Zeroes voxels (all channels) where the binary mask is 0.
AffineVolume apply_mask(const AffineVolume& v, const AffineVolume& mask);

/// 1 where value > threshold, else 0 (strict inequality).
AffineVolume binarize(const AffineVolume& v, double threshold);

/// Removes connected foreground components smaller than min_voxels.
AffineVolume island_removal(const AffineVolume& v, int64_t min_voxels, int connectivity = 0);

/// Fills background cavities not connected to the volume border.
AffineVolume hole_fill(const AffineVolume& v, int connectivity = 0);

/// Writes v to a temp NIfTI, runs the command ({input}/{output} placeholders
/// substituted), reads the output NIfTI back. Temp files are removed on both
/// success and failure.
AffineVolume run_external(const std::string& command_template, const AffineVolume& v,
                          double timeout_seconds = 600);

/// Caps the number of concurrently running external commands (default 2).
void set_external_command_permits(int permits);

// --- chain application ------------------------------------------------------

/// Applies every node to the volume. Nodes needing another group (masks) are
/// rejected here; use the collection overload.
AffineVolume chain_apply(const TransformChain& chain, const AffineVolume& v);

/// Applies each node to its applies_to groups of every case; untouched
/// groups keep their original sources. skip_names drops nodes by name.
DataCollection chain_apply(const TransformChain& chain, const DataCollection& c,
                           const std::vector<std::string>& skip_names = {});

}  // namespace neuropipe
