#include "neuropipe/morphology.hpp"

#include <array>

namespace neuropipe {

int default_connectivity(int spatial_rank) { return spatial_rank == 3 ? 6 : 4; }

int complement_connectivity(int connectivity, int spatial_rank) {
    if (spatial_rank == 3) {
        return connectivity == 6 ? 26 : 6;
    }
    return connectivity == 4 ? 8 : 4;
}

namespace {

// Neighbor offsets for the requested connectivity. Face-connectivity (4/6)
// uses axis steps only; 8/26 adds diagonals.
std::vector<std::vector<int64_t>> neighbor_offsets(int connectivity, int rank) {
    std::vector<std::vector<int64_t>> offsets;
    bool faces_only = connectivity == 4 || connectivity == 6;
    std::vector<int64_t> step(static_cast<size_t>(rank), -1);
    while (true) {
        bool all_zero = true;
        int64_t nonzero = 0;
        for (int64_t s : step) {
            if (s != 0) {
                all_zero = false;
                ++nonzero;
            }
        }
        if (!all_zero && (!faces_only || nonzero == 1)) {
            offsets.push_back(step);
        }
        int axis = rank - 1;
        while (axis >= 0 && step[static_cast<size_t>(axis)] == 1) {
            step[static_cast<size_t>(axis)] = -1;
            --axis;
        }
        if (axis < 0) {
            break;
        }
        ++step[static_cast<size_t>(axis)];
    }
    return offsets;
}

}  // namespace

ComponentMap connected_components(const float* values, const Shape& spatial, int connectivity,
                                  bool label_foreground) {
    int rank = static_cast<int>(spatial.size());
    int64_t total = numel(spatial);
    Shape strides = row_major_strides(spatial);
    auto offsets = neighbor_offsets(connectivity, rank);

    ComponentMap out;
    out.labels.assign(static_cast<size_t>(total), 0);
    out.sizes.push_back(0);
    out.touches_border.push_back(false);

    auto wanted = [&](int64_t idx) {
        bool fg = values[idx] != 0.0f;
        return fg == label_foreground;
    };

    std::vector<int64_t> stack;
    std::vector<int64_t> coord(static_cast<size_t>(rank));
    for (int64_t seed = 0; seed < total; ++seed) {
        if (out.labels[static_cast<size_t>(seed)] != 0 || !wanted(seed)) {
            continue;
        }
        int32_t label = static_cast<int32_t>(out.sizes.size());
        out.sizes.push_back(0);
        out.touches_border.push_back(false);

        stack.clear();
        stack.push_back(seed);
        out.labels[static_cast<size_t>(seed)] = label;
        while (!stack.empty()) {
            int64_t idx = stack.back();
            stack.pop_back();
            ++out.sizes[static_cast<size_t>(label)];

            int64_t rem = idx;
            bool border = false;
            for (int axis = 0; axis < rank; ++axis) {
                coord[static_cast<size_t>(axis)] = rem / strides[static_cast<size_t>(axis)];
                rem %= strides[static_cast<size_t>(axis)];
                if (coord[static_cast<size_t>(axis)] == 0 ||
                    coord[static_cast<size_t>(axis)] == spatial[static_cast<size_t>(axis)] - 1) {
                    border = true;
                }
            }
            if (border) {
                out.touches_border[static_cast<size_t>(label)] = true;
            }

            for (const auto& offset : offsets) {
                int64_t nbr = 0;
                bool inside = true;
                for (int axis = 0; axis < rank; ++axis) {
                    int64_t c = coord[static_cast<size_t>(axis)] + offset[static_cast<size_t>(axis)];
                    if (c < 0 || c >= spatial[static_cast<size_t>(axis)]) {
                        inside = false;
                        break;
                    }
                    nbr += c * strides[static_cast<size_t>(axis)];
                }
                if (inside && out.labels[static_cast<size_t>(nbr)] == 0 && wanted(nbr)) {
                    out.labels[static_cast<size_t>(nbr)] = label;
                    stack.push_back(nbr);
                }
            }
        }
    }
    return out;
}

}  // namespace neuropipe
