#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "neuropipe/collection.hpp"

// DNAR container: magic "DNAR", u32 version, u64 manifest length, UTF-8 JSON
// manifest, then contiguous little-endian float32 blobs at 64-byte alignment
// with a CRC32 per blob. Blob offsets in the manifest are relative to the
// 64-byte-aligned start of the data section.

static_assert(std::endian::native == std::endian::little,
              "DNAR serialization assumes a little-endian host");

namespace neuropipe {

namespace {

constexpr char kMagic[4] = {'D', 'N', 'A', 'R'};
constexpr uint32_t kVersion = 1;
constexpr size_t kAlign = 64;

size_t align_up(size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

uint32_t blob_crc(const void* data, size_t bytes) {
    return static_cast<uint32_t>(
        crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(bytes)));
}

}  // namespace

void write_archive(const DataCollection& c, const std::string& path) {
    using nlohmann::json;

    struct Blob {
        std::shared_ptr<const AffineVolume> volume;
        size_t offset = 0;
    };

    json manifest;
    manifest["version"] = kVersion;
    manifest["groups"] = json::array();
    for (const auto& g : c.groups()) {
        manifest["groups"].push_back({{"name", g.name}, {"channel_labels", g.channel_labels}});
    }

    std::vector<Blob> blobs;
    manifest["cases"] = json::array();
    size_t cursor = 0;
    for (const auto& kase : c.cases()) {
        json entry;
        entry["id"] = kase.id;
        entry["tensors"] = json::object();
        for (const auto& g : c.groups()) {
            if (!kase.sources.count(g.name)) {
                continue;
            }
            auto vol = c.case_volume(kase.id, g.name);
            require(vol->channels() == static_cast<int64_t>(g.channel_labels.size()),
                    ErrorCode::ShapeMismatch,
                    "case '" + kase.id + "' group '" + g.name + "': stacked channels " +
                        std::to_string(vol->channels()) + " != labels " +
                        std::to_string(g.channel_labels.size()));
            size_t bytes = static_cast<size_t>(vol->data().size()) * sizeof(float);
            json t;
            t["shape"] = vol->data().shape();
            t["offset"] = cursor;
            t["bytes"] = bytes;
            t["crc32"] = blob_crc(vol->data().data(), bytes);
            t["affine"] = vol->affine().m;
            entry["tensors"][g.name] = std::move(t);
            blobs.push_back({vol, cursor});
            cursor = align_up(cursor + bytes);
        }
        manifest["cases"].push_back(std::move(entry));
    }

    std::string manifest_text = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::IoError, "cannot open " + path + " for writing");

    out.write(kMagic, 4);
    uint32_t version = kVersion;
    uint64_t manifest_len = manifest_text.size();
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&manifest_len), 8);
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));

    size_t header_bytes = 16 + manifest_text.size();
    std::vector<char> zeros(kAlign, 0);
    out.write(zeros.data(), static_cast<std::streamsize>(align_up(header_bytes) - header_bytes));

    size_t written = 0;
    for (const auto& blob : blobs) {
        if (blob.offset > written) {
            out.write(zeros.data(), static_cast<std::streamsize>(blob.offset - written));
            written = blob.offset;
        }
        size_t bytes = static_cast<size_t>(blob.volume->data().size()) * sizeof(float);
        out.write(reinterpret_cast<const char*>(blob.volume->data().data()),
                  static_cast<std::streamsize>(bytes));
        written += bytes;
    }
    require(out.good(), ErrorCode::IoError, "short write to " + path);
}

DataCollection read_archive(const std::string& path) {
    using nlohmann::json;

    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());

    require(bytes.size() >= 16, ErrorCode::BadMagic, path + ": too short for a DNAR header");
    require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::BadMagic,
            path + ": not a DNAR file");
    uint32_t version;
    uint64_t manifest_len;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&manifest_len, bytes.data() + 8, 8);
    require(version == kVersion, ErrorCode::VersionUnsupported,
            path + ": DNAR version " + std::to_string(version));
    require(16 + manifest_len <= bytes.size(), ErrorCode::TruncatedPayload,
            path + ": manifest extends past end of file");

    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 16,
                               bytes.begin() + 16 + static_cast<ptrdiff_t>(manifest_len));
    } catch (const json::exception& e) {
        raise(ErrorCode::BadHeader, path + ": manifest is not valid JSON: " + e.what());
    }

    size_t data_start = align_up(16 + static_cast<size_t>(manifest_len));

    DataCollection collection;
    std::vector<std::pair<size_t, size_t>> spans;  // (offset, bytes)
    try {
        for (const auto& g : manifest.at("groups")) {
            collection.add_group(DataGroup{g.at("name").get<std::string>(),
                                           g.at("channel_labels").get<std::vector<std::string>>()});
        }

        for (const auto& entry : manifest.at("cases")) {
            Case kase{entry.at("id").get<std::string>(), {}};
            for (const auto& [group_name, t] : entry.at("tensors").items()) {
                const DataGroup& g = collection.group(group_name);
                Shape shape = t.at("shape").get<Shape>();
                size_t offset = t.at("offset").get<size_t>();
                size_t blob_bytes = t.at("bytes").get<size_t>();
                uint32_t expected_crc = t.at("crc32").get<uint32_t>();
                spans.emplace_back(offset, blob_bytes);

                require(numel(shape) * sizeof(float) == blob_bytes, ErrorCode::BadHeader,
                        path + ": blob size disagrees with shape " + shape_str(shape));
                require(shape.size() >= 2, ErrorCode::BadHeader, path + ": blob rank < 2");
                int64_t channels = shape.back();
                require(channels == static_cast<int64_t>(g.channel_labels.size()),
                        ErrorCode::BadHeader,
                        path + ": case '" + kase.id + "' group '" + group_name +
                            "' has " + std::to_string(channels) + " channels, group declares " +
                            std::to_string(g.channel_labels.size()));

                size_t start = data_start + offset;
                require(start + blob_bytes <= bytes.size(), ErrorCode::TruncatedPayload,
                        path + ": blob for case '" + kase.id + "' extends past end of file");
                require(blob_crc(bytes.data() + start, blob_bytes) == expected_crc,
                        ErrorCode::ChecksumMismatch,
                        path + ": case '" + kase.id + "' group '" + group_name + "'");

                Mat4 affine = Mat4::identity();
                if (t.contains("affine")) {
                    auto values = t.at("affine").get<std::vector<double>>();
                    require(values.size() == 16, ErrorCode::BadHeader, path + ": bad affine");
                    std::copy(values.begin(), values.end(), affine.m.begin());
                }

                Tensor stacked(shape);
                std::memcpy(stacked.data(), bytes.data() + start, blob_bytes);

                // Split back into one in-memory volume per channel label.
                Shape channel_shape(shape.begin(), shape.end() - 1);
                channel_shape.push_back(1);
                int64_t voxels = numel(Shape(shape.begin(), shape.end() - 1));
                std::vector<ChannelSource> sources;
                for (int64_t k = 0; k < channels; ++k) {
                    Tensor channel(channel_shape);
                    for (int64_t v = 0; v < voxels; ++v) {
                        channel[v] = stacked[v * channels + k];
                    }
                    sources.emplace_back(AffineVolume(std::move(channel), affine));
                }
                kase.sources.emplace(group_name, std::move(sources));
            }
            collection.add_case(std::move(kase));
        }
    } catch (const json::exception& e) {
        raise(ErrorCode::BadHeader, path + ": manifest missing fields: " + e.what());
    }

    std::sort(spans.begin(), spans.end());
    for (size_t i = 1; i < spans.size(); ++i) {
        require(spans[i].first > spans[i - 1].first &&
                    spans[i].first >= spans[i - 1].first + spans[i - 1].second,
                ErrorCode::BadHeader, path + ": blob offsets overlap or are unordered");
    }
    return collection;
}

}  // namespace neuropipe
