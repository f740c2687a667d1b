#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "neuropipe/nifti.hpp"
#include "neuropipe/rng.hpp"

using namespace neuropipe;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "neuropipe-volio-tests";
    fs::create_directories(dir);
    return dir;
}

AffineVolume random_volume(Shape shape, uint64_t seed) {
    Rng rng(seed);
    Tensor data(shape);
    for (int64_t i = 0; i < data.size(); ++i) {
        data[i] = static_cast<float>(rng.uniform(-4.0, 4.0));
    }
    Mat4 affine = Mat4::identity();
    for (int axis = 0; axis < 3; ++axis) {
        affine.at(axis, axis) = rng.uniform(0.5, 3.0);
        affine.at(axis, 3) = rng.uniform(-6.0, 6.0);
    }
    return AffineVolume(std::move(data), affine);
}

// Serialized header bytes + payload in one buffer, starting from a valid
// serialized volume so tests can mutate specific fields.
std::vector<unsigned char> valid_bytes() {
    return serialize_nifti(random_volume(Shape{4, 4, 4, 1}, 5));
}

void byte_swap_fixture(std::vector<unsigned char>& bytes) {
    NiftiHeader h;
    std::memcpy(&h, bytes.data(), sizeof(h));
    auto swap2 = [&](size_t off) { std::swap(bytes[off], bytes[off + 1]); };
    auto swap4 = [&](size_t off) {
        std::swap(bytes[off], bytes[off + 3]);
        std::swap(bytes[off + 1], bytes[off + 2]);
    };
    swap4(0);                      // sizeof_hdr
    swap4(32);                     // extents
    swap2(36);                     // session_error
    for (int i = 0; i < 8; ++i) {  // dim
        swap2(40 + 2 * static_cast<size_t>(i));
    }
    swap4(56);
    swap4(60);
    swap4(64);
    swap2(68);
    swap2(70);  // datatype
    swap2(72);  // bitpix
    swap2(74);
    for (int i = 0; i < 8; ++i) {
        swap4(76 + 4 * static_cast<size_t>(i));  // pixdim
    }
    swap4(108);  // vox_offset
    swap4(112);  // scl_slope
    swap4(116);  // scl_inter
    swap2(120);
    swap4(124);
    swap4(128);
    swap4(132);
    swap4(136);
    swap4(140);
    swap4(144);
    swap2(252);  // qform_code
    swap2(254);  // sform_code
    for (size_t off = 256; off < 328; off += 4) {
        swap4(off);  // quaternion + srows
    }
    // payload: float32 elements
    for (size_t off = 352; off + 3 < bytes.size(); off += 4) {
        swap4(off);
    }
}

}  // namespace

TEST_CASE("write emits the fixed header constants") {
    auto bytes = valid_bytes();
    int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    CHECK(sizeof_hdr == 348);
    CHECK(std::memcmp(bytes.data() + 344, "n+1\0", 4) == 0);
    float vox_offset;
    std::memcpy(&vox_offset, bytes.data() + 108, 4);
    CHECK(vox_offset == 352.0f);
}

TEST_CASE("hand-built header: dims and datatype map to the volume shape") {
    NiftiHeader h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = h.dim[2] = h.dim[3] = 4;
    h.datatype = kNiftiFloat32;
    h.bitpix = 32;
    h.vox_offset = 352;
    h.scl_slope = 1;
    std::memcpy(h.magic, "n+1\0", 4);

    std::vector<unsigned char> bytes(352 + 64 * 4, 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    AffineVolume vol = parse_nifti(bytes);
    CHECK(vol.data().shape() == Shape{4, 4, 4, 1});
}

TEST_CASE("scl_slope and scl_inter scale stored values") {
    NiftiHeader h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.dim[0] = 2;
    h.dim[1] = 1;
    h.dim[2] = 1;
    h.datatype = kNiftiFloat32;
    h.bitpix = 32;
    h.vox_offset = 352;
    h.scl_slope = 2.0f;
    h.scl_inter = 1.0f;
    std::memcpy(h.magic, "n+1\0", 4);

    std::vector<unsigned char> bytes(352 + 4, 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    float stored = 3.0f;
    std::memcpy(bytes.data() + 352, &stored, 4);
    AffineVolume vol = parse_nifti(bytes);
    CHECK(vol.data()[0] == 7.0f);  // 3*2 + 1
}

TEST_CASE("round trip: random 8x8x8x2 volume, plain and gzip") {
    AffineVolume original = random_volume(Shape{8, 8, 8, 2}, 17);
    for (bool gz : {false, true}) {
        fs::path path = temp_dir() / (gz ? "rt.nii.gz" : "rt.nii");
        write_nifti(original, path.string(), gz);
        AffineVolume loaded = read_nifti(path.string());
        REQUIRE(loaded.data().shape() == original.data().shape());
        for (int64_t i = 0; i < original.data().size(); ++i) {
            REQUIRE(loaded.data()[i] == original.data()[i]);  // bit-exact
        }
        CHECK(loaded.affine().max_abs_diff(original.affine()) <= 1e-6);
    }
}

TEST_CASE("2D single-channel volumes round trip as 2D") {
    Tensor data(Shape{5, 7, 1});
    Rng rng(3);
    for (int64_t i = 0; i < data.size(); ++i) {
        data[i] = static_cast<float>(rng.uniform(0, 1));
    }
    AffineVolume original{std::move(data)};
    fs::path path = temp_dir() / "rt2d.nii";
    write_nifti(original, path.string());
    AffineVolume loaded = read_nifti(path.string());
    CHECK(loaded.data().shape() == Shape{5, 7, 1});
    for (int64_t i = 0; i < original.data().size(); ++i) {
        REQUIRE(loaded.data()[i] == original.data()[i]);
    }
}

TEST_CASE("byte-swapped fixture parses to the same volume") {
    AffineVolume original = random_volume(Shape{3, 5, 2, 1}, 23);
    auto bytes = serialize_nifti(original);
    auto swapped = bytes;
    byte_swap_fixture(swapped);
    REQUIRE(swapped != bytes);
    AffineVolume from_swapped = parse_nifti(swapped);
    AffineVolume from_native = parse_nifti(bytes);
    REQUIRE(from_swapped.data().shape() == from_native.data().shape());
    for (int64_t i = 0; i < from_native.data().size(); ++i) {
        REQUIRE(from_swapped.data()[i] == from_native.data()[i]);
    }
    CHECK(from_swapped.affine().max_abs_diff(from_native.affine()) <= 1e-12);
}

TEST_CASE("integer datatypes convert to float32") {
    NiftiHeader h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.dim[0] = 2;
    h.dim[1] = 2;
    h.dim[2] = 1;
    h.datatype = kNiftiInt16;
    h.bitpix = 16;
    h.vox_offset = 352;
    std::memcpy(h.magic, "n+1\0", 4);
    std::vector<unsigned char> bytes(352 + 4, 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    int16_t values[2] = {-5, 1000};
    std::memcpy(bytes.data() + 352, values, 4);
    AffineVolume vol = parse_nifti(bytes);
    CHECK(vol.data()[0] == -5.0f);
    CHECK(vol.data()[1] == 1000.0f);
}

TEST_CASE("affine precedence: sform beats qform beats pixdim") {
    auto base = valid_bytes();

    NiftiHeader h;
    std::memcpy(&h, base.data(), sizeof(h));
    REQUIRE(h.sform_code == 1);
    h.qform_code = 1;
    h.quatern_b = h.quatern_c = h.quatern_d = 0;  // identity rotation
    h.qoffset_x = 99;
    h.pixdim[1] = h.pixdim[2] = h.pixdim[3] = 5;

    // sform wins
    std::memcpy(base.data(), &h, sizeof(h));
    AffineVolume with_sform = parse_nifti(base);
    CHECK(with_sform.affine().at(0, 3) != doctest::Approx(99.0));

    // qform next
    h.sform_code = 0;
    std::memcpy(base.data(), &h, sizeof(h));
    AffineVolume with_qform = parse_nifti(base);
    CHECK(with_qform.affine().at(0, 3) == doctest::Approx(99.0));
    CHECK(with_qform.affine().at(0, 0) == doctest::Approx(5.0));

    // pixdim diagonal last
    h.qform_code = 0;
    std::memcpy(base.data(), &h, sizeof(h));
    AffineVolume with_pixdim = parse_nifti(base);
    CHECK(with_pixdim.affine().at(0, 0) == doctest::Approx(5.0));
    CHECK(with_pixdim.affine().at(0, 3) == doctest::Approx(0.0));
}

TEST_CASE("structured errors for malformed inputs") {
    auto check_code = [](std::vector<unsigned char> bytes, ErrorCode code) {
        try {
            parse_nifti(bytes);
            FAIL("expected a structured error");
        } catch (const Error& e) {
            CHECK(e.code() == code);
        }
    };

    auto bad_magic = valid_bytes();
    bad_magic[344] = 'x';
    check_code(bad_magic, ErrorCode::MalformedHeader);

    auto two_file = valid_bytes();
    std::memcpy(two_file.data() + 344, "ni1\0", 4);
    check_code(two_file, ErrorCode::MalformedHeader);

    auto bad_datatype = valid_bytes();
    int16_t dt = 128;  // RGB, unsupported
    std::memcpy(bad_datatype.data() + 70, &dt, 2);
    check_code(bad_datatype, ErrorCode::UnsupportedDatatype);

    auto truncated = valid_bytes();
    truncated.resize(400);
    check_code(truncated, ErrorCode::TruncatedPayload);

    check_code(std::vector<unsigned char>(100, 0), ErrorCode::MalformedHeader);

    CHECK_THROWS_AS(read_nifti("/nonexistent/path.nii"), Error);
}

TEST_CASE("fuzz: arbitrary bytes raise Error, never crash") {
    Rng rng(99);
    for (int round = 0; round < 300; ++round) {
        std::vector<unsigned char> bytes(rng.next_below(800));
        for (auto& b : bytes) {
            b = static_cast<unsigned char>(rng.next_below(256));
        }
        CHECK_THROWS_AS(parse_nifti(bytes), Error);
    }
    // Mutations of a valid file parse or raise, never crash.
    auto base = valid_bytes();
    for (int round = 0; round < 300; ++round) {
        auto mutated = base;
        size_t pos = rng.next_below(mutated.size());
        mutated[pos] = static_cast<unsigned char>(rng.next_below(256));
        try {
            parse_nifti(mutated);
        } catch (const Error&) {
        }
    }
}

TEST_CASE("volumes with zero-extent dims cannot exist") {
    CHECK_THROWS_AS(Tensor(Shape{0, 4, 4, 1}), Error);
}
