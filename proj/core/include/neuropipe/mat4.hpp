#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace neuropipe {

// 4x4 double matrix, row-major. Maps voxel indices to world millimeters.
struct Mat4 {
    std::array<double, 16> m{};

    static Mat4 identity() {
        Mat4 out;
        out.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
        return out;
    }

    static Mat4 diagonal(double sx, double sy, double sz) {
        Mat4 out = identity();
        out.at(0, 0) = sx;
        out.at(1, 1) = sy;
        out.at(2, 2) = sz;
        return out;
    }

    double& at(int row, int col) { return m[static_cast<size_t>(row * 4 + col)]; }
    double at(int row, int col) const { return m[static_cast<size_t>(row * 4 + col)]; }

    double column_norm(int col) const {
        double s = 0;
        for (int row = 0; row < 3; ++row) {
            s += at(row, col) * at(row, col);
        }
        return std::sqrt(s);
    }

    bool bottom_row_is_0001() const {
        return at(3, 0) == 0.0 && at(3, 1) == 0.0 && at(3, 2) == 0.0 && at(3, 3) == 1.0;
    }

    void set_bottom_row() {
        at(3, 0) = 0;
        at(3, 1) = 0;
        at(3, 2) = 0;
        at(3, 3) = 1;
    }

    double max_abs_diff(const Mat4& other) const {
        double worst = 0;
        for (size_t i = 0; i < 16; ++i) {
            worst = std::max(worst, std::abs(m[i] - other.m[i]));
        }
        return worst;
    }

    bool operator==(const Mat4& other) const { return m == other.m; }
};

}  // namespace neuropipe
