#include "neuropipe/nifti.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace neuropipe {

namespace {

constexpr size_t kHeaderBytes = 348;
constexpr float kVoxOffset = 352.0f;

void swap_bytes(void* p, size_t width) {
    auto* b = static_cast<unsigned char*>(p);
    for (size_t i = 0, j = width - 1; i < j; ++i, --j) {
        std::swap(b[i], b[j]);
    }
}

void swap_header(NiftiHeader& h) {
    swap_bytes(&h.sizeof_hdr, 4);
    swap_bytes(&h.extents, 4);
    swap_bytes(&h.session_error, 2);
    for (auto& d : h.dim) swap_bytes(&d, 2);
    swap_bytes(&h.intent_p1, 4);
    swap_bytes(&h.intent_p2, 4);
    swap_bytes(&h.intent_p3, 4);
    swap_bytes(&h.intent_code, 2);
    swap_bytes(&h.datatype, 2);
    swap_bytes(&h.bitpix, 2);
    swap_bytes(&h.slice_start, 2);
    for (auto& d : h.pixdim) swap_bytes(&d, 4);
    swap_bytes(&h.vox_offset, 4);
    swap_bytes(&h.scl_slope, 4);
    swap_bytes(&h.scl_inter, 4);
    swap_bytes(&h.slice_end, 2);
    swap_bytes(&h.cal_max, 4);
    swap_bytes(&h.cal_min, 4);
    swap_bytes(&h.slice_duration, 4);
    swap_bytes(&h.toffset, 4);
    swap_bytes(&h.glmax, 4);
    swap_bytes(&h.glmin, 4);
    swap_bytes(&h.qform_code, 2);
    swap_bytes(&h.sform_code, 2);
    swap_bytes(&h.quatern_b, 4);
    swap_bytes(&h.quatern_c, 4);
    swap_bytes(&h.quatern_d, 4);
    swap_bytes(&h.qoffset_x, 4);
    swap_bytes(&h.qoffset_y, 4);
    swap_bytes(&h.qoffset_z, 4);
    for (auto& v : h.srow_x) swap_bytes(&v, 4);
    for (auto& v : h.srow_y) swap_bytes(&v, 4);
    for (auto& v : h.srow_z) swap_bytes(&v, 4);
}

int bytes_per_element(int16_t datatype) {
    switch (datatype) {
        case kNiftiUint8: return 1;
        case kNiftiInt16: return 2;
        case kNiftiInt32: return 4;
        case kNiftiFloat32: return 4;
        case kNiftiFloat64: return 8;
        default: return 0;
    }
}

Mat4 affine_from_quaternion(const NiftiHeader& h) {
    double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double a2 = 1.0 - (b * b + c * c + d * d);
    double a = a2 > 0 ? std::sqrt(a2) : 0.0;
    double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    double sx = h.pixdim[1] != 0 ? h.pixdim[1] : 1.0;
    double sy = h.pixdim[2] != 0 ? h.pixdim[2] : 1.0;
    double sz = h.pixdim[3] != 0 ? h.pixdim[3] : 1.0;

    Mat4 out = Mat4::identity();
    out.at(0, 0) = (a * a + b * b - c * c - d * d) * sx;
    out.at(0, 1) = (2 * b * c - 2 * a * d) * sy;
    out.at(0, 2) = (2 * b * d + 2 * a * c) * sz * qfac;
    out.at(1, 0) = (2 * b * c + 2 * a * d) * sx;
    out.at(1, 1) = (a * a + c * c - b * b - d * d) * sy;
    out.at(1, 2) = (2 * c * d - 2 * a * b) * sz * qfac;
    out.at(2, 0) = (2 * b * d - 2 * a * c) * sx;
    out.at(2, 1) = (2 * c * d + 2 * a * b) * sy;
    out.at(2, 2) = (a * a + d * d - b * b - c * c) * sz * qfac;
    out.at(0, 3) = h.qoffset_x;
    out.at(1, 3) = h.qoffset_y;
    out.at(2, 3) = h.qoffset_z;
    return out;
}

Mat4 affine_from_header(const NiftiHeader& h) {
    if (h.sform_code > 0) {
        Mat4 out = Mat4::identity();
        for (int col = 0; col < 4; ++col) {
            out.at(0, col) = h.srow_x[col];
            out.at(1, col) = h.srow_y[col];
            out.at(2, col) = h.srow_z[col];
        }
        return out;
    }
    if (h.qform_code > 0) {
        return affine_from_quaternion(h);
    }
    return Mat4::diagonal(h.pixdim[1] != 0 ? h.pixdim[1] : 1.0,
                          h.pixdim[2] != 0 ? h.pixdim[2] : 1.0,
                          h.pixdim[3] != 0 ? h.pixdim[3] : 1.0);
}

// Reads the whole file through zlib's gz layer, which passes plain files
// through untouched, so one path covers both .nii and .nii.gz.
std::vector<unsigned char> read_all_bytes(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        raise(ErrorCode::IoError, "no such file: " + path);
    }
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) {
        raise(ErrorCode::IoError, "cannot open " + path);
    }
    std::vector<unsigned char> out;
    unsigned char chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) {
        out.insert(out.end(), chunk, chunk + n);
    }
    bool bad = n < 0;
    gzclose(f);
    if (bad) {
        raise(ErrorCode::IoError, "decompression failed for " + path);
    }
    return out;
}

template <typename Src>
void convert_elements(const unsigned char* payload, int64_t count, bool swap, float slope,
                      float inter, std::vector<float>& out) {
    for (int64_t i = 0; i < count; ++i) {
        Src raw;
        std::memcpy(&raw, payload + i * static_cast<int64_t>(sizeof(Src)), sizeof(Src));
        if (swap && sizeof(Src) > 1) {
            swap_bytes(&raw, sizeof(Src));
        }
        float v = static_cast<float>(raw);
        out[static_cast<size_t>(i)] = slope != 0.0f ? v * slope + inter : v;
    }
}

}  // namespace

AffineVolume parse_nifti(const std::vector<unsigned char>& bytes, const std::string& origin) {
    if (bytes.size() < kHeaderBytes) {
        raise(ErrorCode::MalformedHeader,
              origin + ": " + std::to_string(bytes.size()) + " bytes, need 348 for a header");
    }
    NiftiHeader h;
    std::memcpy(&h, bytes.data(), kHeaderBytes);

    bool swapped = h.dim[0] < 1 || h.dim[0] > 7;
    if (swapped) {
        swap_header(h);
    }
    require(h.sizeof_hdr == 348, ErrorCode::MalformedHeader,
            origin + ": sizeof_hdr=" + std::to_string(h.sizeof_hdr));
    if (std::memcmp(h.magic, "ni1\0", 4) == 0) {
        raise(ErrorCode::MalformedHeader, origin + ": two-file (.hdr/.img) pairs not supported");
    }
    require(std::memcmp(h.magic, "n+1\0", 4) == 0, ErrorCode::MalformedHeader,
            origin + ": bad magic");
    require(h.dim[0] >= 2 && h.dim[0] <= 4, ErrorCode::MalformedHeader,
            origin + ": dim[0]=" + std::to_string(h.dim[0]) + " outside {2,3,4}");
    for (int i = 1; i <= h.dim[0]; ++i) {
        require(h.dim[i] >= 1, ErrorCode::MalformedHeader,
                origin + ": dim[" + std::to_string(i) + "]=" + std::to_string(h.dim[i]));
    }
    int elem_bytes = bytes_per_element(h.datatype);
    require(elem_bytes > 0, ErrorCode::UnsupportedDatatype,
            origin + ": datatype code " + std::to_string(h.datatype));

    int64_t count = 1;
    for (int i = 1; i <= h.dim[0]; ++i) {
        count *= h.dim[i];
    }
    double off = h.vox_offset;
    if (!(off >= kHeaderBytes) || off != std::floor(off) ||
        off > static_cast<double>(bytes.size())) {
        raise(ErrorCode::MalformedHeader,
              origin + ": vox_offset=" + std::to_string(h.vox_offset));
    }
    auto payload_offset = static_cast<size_t>(off);
    int64_t need = count * elem_bytes;
    if (static_cast<int64_t>(bytes.size() - payload_offset) < need) {
        raise(ErrorCode::TruncatedPayload,
              origin + ": payload has " + std::to_string(bytes.size() - payload_offset) +
                  " bytes, need " + std::to_string(need));
    }

    std::vector<float> voxels(static_cast<size_t>(count));
    const unsigned char* payload = bytes.data() + payload_offset;
    switch (h.datatype) {
        case kNiftiUint8:
            convert_elements<uint8_t>(payload, count, swapped, h.scl_slope, h.scl_inter, voxels);
            break;
        case kNiftiInt16:
            convert_elements<int16_t>(payload, count, swapped, h.scl_slope, h.scl_inter, voxels);
            break;
        case kNiftiInt32:
            convert_elements<int32_t>(payload, count, swapped, h.scl_slope, h.scl_inter, voxels);
            break;
        case kNiftiFloat32:
            convert_elements<float>(payload, count, swapped, h.scl_slope, h.scl_inter, voxels);
            break;
        case kNiftiFloat64:
            convert_elements<double>(payload, count, swapped, h.scl_slope, h.scl_inter, voxels);
            break;
        default:
            raise(ErrorCode::UnsupportedDatatype, origin);
    }

    // NIfTI stores x fastest; our tensors store the last axis fastest, so the
    // disk order [x fastest] matches shape [.., Z, Y, X] reversed. Transpose
    // into [X, Y, (Z,) C] with C fastest.
    Shape shape;
    int64_t nx = h.dim[1], ny = h.dim[2];
    int64_t nz = h.dim[0] >= 3 ? h.dim[3] : 1;
    int64_t nc = h.dim[0] == 4 ? h.dim[4] : 1;
    if (h.dim[0] == 2) {
        shape = {nx, ny, 1};
    } else {
        shape = {nx, ny, nz, nc};
    }

    Tensor data(shape);
    float* dst = data.data();
    // Disk index: x + nx*(y + ny*(z + nz*c)).
    for (int64_t c = 0; c < nc; ++c) {
        for (int64_t z = 0; z < nz; ++z) {
            for (int64_t y = 0; y < ny; ++y) {
                for (int64_t x = 0; x < nx; ++x) {
                    int64_t src = x + nx * (y + ny * (z + nz * c));
                    int64_t dst_idx = h.dim[0] == 2 ? (x * ny + y)
                                                    : ((x * ny + y) * nz + z) * nc + c;
                    dst[dst_idx] = voxels[static_cast<size_t>(src)];
                }
            }
        }
    }

    std::map<std::string, std::string> meta;
    meta["source"] = origin;
    char descrip[81] = {};
    std::memcpy(descrip, h.descrip, 80);
    if (descrip[0] != '\0') {
        meta["description"] = descrip;
    }
    return AffineVolume(std::move(data), affine_from_header(h), std::move(meta));
}

AffineVolume read_nifti(const std::string& path) {
    return parse_nifti(read_all_bytes(path), path);
}

std::vector<unsigned char> serialize_nifti(const AffineVolume& vol) {
    const Tensor& data = vol.data();
    require(data.size() >= 1, ErrorCode::InvalidArgument, "empty volume");

    NiftiHeader h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.regular = 'r';

    Shape sp = vol.spatial_shape();
    int64_t nc = vol.channels();
    if (vol.is_3d()) {
        if (nc == 1) {
            h.dim[0] = 3;
            h.dim[1] = static_cast<int16_t>(sp[0]);
            h.dim[2] = static_cast<int16_t>(sp[1]);
            h.dim[3] = static_cast<int16_t>(sp[2]);
            h.dim[4] = 1;
        } else {
            h.dim[0] = 4;
            h.dim[1] = static_cast<int16_t>(sp[0]);
            h.dim[2] = static_cast<int16_t>(sp[1]);
            h.dim[3] = static_cast<int16_t>(sp[2]);
            h.dim[4] = static_cast<int16_t>(nc);
        }
    } else {
        // 2D: single-channel keeps dim[0]=2; multi-channel is promoted to a
        // one-slice 4D file (round-trips with Z=1).
        if (nc == 1) {
            h.dim[0] = 2;
            h.dim[1] = static_cast<int16_t>(sp[0]);
            h.dim[2] = static_cast<int16_t>(sp[1]);
            h.dim[3] = 1;
            h.dim[4] = 1;
        } else {
            h.dim[0] = 4;
            h.dim[1] = static_cast<int16_t>(sp[0]);
            h.dim[2] = static_cast<int16_t>(sp[1]);
            h.dim[3] = 1;
            h.dim[4] = static_cast<int16_t>(nc);
        }
    }
    for (int i = h.dim[0] + 1; i < 8; ++i) {
        h.dim[i] = 1;
    }
    h.dim[5] = h.dim[6] = h.dim[7] = 1;

    h.datatype = kNiftiFloat32;
    h.bitpix = 32;
    h.pixdim[0] = 1.0f;
    for (int axis = 0; axis < vol.spatial_rank(); ++axis) {
        h.pixdim[axis + 1] = static_cast<float>(vol.spacing()[static_cast<size_t>(axis)]);
    }
    for (int i = vol.spatial_rank() + 1; i < 8; ++i) {
        h.pixdim[i] = 1.0f;
    }
    h.vox_offset = kVoxOffset;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.qform_code = 0;
    h.sform_code = 1;
    const Mat4& a = vol.affine();
    for (int col = 0; col < 4; ++col) {
        h.srow_x[col] = static_cast<float>(a.at(0, col));
        h.srow_y[col] = static_cast<float>(a.at(1, col));
        h.srow_z[col] = static_cast<float>(a.at(2, col));
    }
    std::strncpy(h.descrip, "neuropipe", sizeof(h.descrip) - 1);
    std::memcpy(h.magic, "n+1\0", 4);

    int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    int64_t count = data.size();
    std::vector<unsigned char> out(static_cast<size_t>(kVoxOffset) +
                                   static_cast<size_t>(count) * 4);
    std::memcpy(out.data(), &h, kHeaderBytes);
    // 348..352 stays zero: no extensions.

    auto* payload = reinterpret_cast<float*>(out.data() + static_cast<size_t>(kVoxOffset));
    const float* src = data.data();
    for (int64_t c = 0; c < nc; ++c) {
        for (int64_t z = 0; z < nz; ++z) {
            for (int64_t y = 0; y < ny; ++y) {
                for (int64_t x = 0; x < nx; ++x) {
                    int64_t src_idx = vol.is_3d() ? ((x * ny + y) * nz + z) * nc + c
                                                  : (x * ny + y) * nc + c;
                    payload[x + nx * (y + ny * (z + nz * c))] = src[src_idx];
                }
            }
        }
    }
    return out;
}

void write_nifti(const AffineVolume& vol, const std::string& path, bool gzip_compress) {
    std::vector<unsigned char> bytes = serialize_nifti(vol);
    if (gzip_compress) {
        gzFile f = gzopen(path.c_str(), "wb6");
        if (!f) {
            raise(ErrorCode::IoError, "cannot open " + path + " for writing");
        }
        unsigned written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        int rc = gzclose(f);
        if (written != bytes.size() || rc != Z_OK) {
            raise(ErrorCode::IoError, "short gzip write to " + path);
        }
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) {
            raise(ErrorCode::IoError, "cannot open " + path + " for writing");
        }
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) {
            raise(ErrorCode::IoError, "short write to " + path);
        }
    }
}

}  // namespace neuropipe
