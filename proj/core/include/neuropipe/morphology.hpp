#pragma once

#include <cstdint>
#include <vector>

#include "neuropipe/tensor.hpp"

namespace neuropipe {

/// Connected-component labeling over one binary channel. Labels start at 1;
/// background voxels get 0. Connectivity: 4/8 for 2D, 6/26 for 3D.
struct ComponentMap {
    std::vector<int32_t> labels;       // one per voxel, row-major over spatial dims
    std::vector<int64_t> sizes;        // sizes[k] = voxel count of label k; sizes[0] unused
    std::vector<bool> touches_border;  // per label
};

ComponentMap connected_components(const float* values, const Shape& spatial, int connectivity,
                                  bool label_foreground);

/// Default foreground connectivity for a spatial rank: 6 (3D) / 4 (2D).
int default_connectivity(int spatial_rank);

/// Complement connectivity used for the background during hole filling.
int complement_connectivity(int connectivity, int spatial_rank);

}  // namespace neuropipe
