#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neuropipe/volume.hpp"

namespace neuropipe {

// NIfTI-1 single-file header, 348 bytes, field-for-field per the standard.
struct NiftiHeader {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1;
    float intent_p2;
    float intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max;
    float cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax;
    int32_t glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b;
    float quatern_c;
    float quatern_d;
    float qoffset_x;
    float qoffset_y;
    float qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};

static_assert(sizeof(NiftiHeader) == 348, "NiftiHeader must pack to 348 bytes");

// Supported on-disk datatype codes.
enum NiftiDatatype : int16_t {
    kNiftiUint8 = 2,
    kNiftiInt16 = 4,
    kNiftiInt32 = 8,
    kNiftiFloat32 = 16,
    kNiftiFloat64 = 64,
};

/// Reads a single-file NIfTI-1 volume (plain or gzip-compressed; compression
/// is detected from the leading bytes). Voxels are converted to float32 with
/// scl_slope/scl_inter applied; the affine comes from sform when present,
/// else qform, else a pixdim diagonal. 3D files yield [X,Y,Z,1]; 4D files
/// map the 4th dimension to channels; 2D files yield [X,Y,1].
AffineVolume read_nifti(const std::string& path);

/// Same parser over an in-memory byte buffer (already decompressed).
AffineVolume parse_nifti(const std::vector<unsigned char>& bytes,
                         const std::string& origin = "<memory>");

/// Writes vol as a single-file NIfTI-1: float32 payload, scl_slope=1,
/// scl_inter=0, sform from the affine (sform_code=1), vox_offset=352.
void write_nifti(const AffineVolume& vol, const std::string& path, bool gzip_compress = false);

/// Serializes without touching the filesystem (uncompressed layout).
std::vector<unsigned char> serialize_nifti(const AffineVolume& vol);

}  // namespace neuropipe
