#pragma once

#include <map>
#include <string>
#include <utility>

#include "neuropipe/mat4.hpp"
#include "neuropipe/tensor.hpp"

namespace neuropipe {

/// Dense float32 voxel grid plus the voxel-to-world affine. Shape is
/// [X, Y, Z, C] for 3D data or [X, Y, C] for 2D; the last axis is always
/// channels (C >= 1).
class AffineVolume {
public:
    AffineVolume() = default;

    AffineVolume(Tensor data, Mat4 affine,
                 std::map<std::string, std::string> meta = {})
        : data_(std::move(data)), affine_(affine), meta_(std::move(meta)) {
        validate();
        cache_spacing();
    }

    explicit AffineVolume(Tensor data) : AffineVolume(std::move(data), Mat4::identity()) {}

    const Tensor& data() const { return data_; }
    Tensor& data() { return data_; }
    const Mat4& affine() const { return affine_; }
    const std::map<std::string, std::string>& meta() const { return meta_; }
    std::map<std::string, std::string>& meta() { return meta_; }

    void set_affine(const Mat4& affine) {
        affine_ = affine;
        require(affine_.bottom_row_is_0001(), ErrorCode::InvalidArgument,
                "affine bottom row must be [0,0,0,1]");
        cache_spacing();
    }

    int spatial_rank() const { return data_.rank() - 1; }
    bool is_3d() const { return spatial_rank() == 3; }

    Shape spatial_shape() const {
        const Shape& s = data_.shape();
        return Shape(s.begin(), s.end() - 1);
    }

    int64_t channels() const { return data_.shape().back(); }
    int64_t voxels() const { return numel(spatial_shape()); }

    /// Per-spatial-axis voxel size in mm (Euclidean norm of the affine column).
    const std::vector<double>& spacing() const { return spacing_; }

    AffineVolume with_data(Tensor data) const {
        AffineVolume out(std::move(data), affine_, meta_);
        return out;
    }

    /// One single-channel volume per channel, sharing the affine.
    std::vector<AffineVolume> split_channels() const {
        int64_t c_total = channels();
        int64_t n = voxels();
        Shape channel_shape = spatial_shape();
        channel_shape.push_back(1);
        std::vector<AffineVolume> out;
        out.reserve(static_cast<size_t>(c_total));
        for (int64_t c = 0; c < c_total; ++c) {
            Tensor t(channel_shape);
            for (int64_t v = 0; v < n; ++v) {
                t[v] = data_[v * c_total + c];
            }
            out.emplace_back(std::move(t), affine_);
        }
        return out;
    }

private:
    void validate() const {
        require(data_.rank() == 3 || data_.rank() == 4, ErrorCode::InvalidArgument,
                "volume shape must be [X,Y,C] or [X,Y,Z,C], got " + shape_str(data_.shape()));
        require(affine_.bottom_row_is_0001(), ErrorCode::InvalidArgument,
                "affine bottom row must be [0,0,0,1]");
    }

    void cache_spacing() {
        spacing_.resize(static_cast<size_t>(spatial_rank()));
        for (int axis = 0; axis < spatial_rank(); ++axis) {
            spacing_[static_cast<size_t>(axis)] = affine_.column_norm(axis);
        }
    }

    Tensor data_;
    Mat4 affine_ = Mat4::identity();
    std::map<std::string, std::string> meta_;
    std::vector<double> spacing_;
};

}  // namespace neuropipe
