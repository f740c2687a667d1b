#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "neuropipe/net/unet.hpp"

// DNMD model container: magic "DNMD", u32 version, u64 manifest length,
// JSON manifest (config echo, training state, blob directory), then float32
// little-endian parameter blobs at 64-byte alignment with per-blob CRC32.

static_assert(std::endian::native == std::endian::little,
              "DNMD serialization assumes a little-endian host");

namespace neuropipe::net {

namespace {

constexpr char kMagic[4] = {'D', 'N', 'M', 'D'};
constexpr uint32_t kVersion = 1;
constexpr size_t kAlign = 64;

size_t align_up(size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

uint32_t blob_crc(const void* data, size_t bytes) {
    return static_cast<uint32_t>(
        crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(bytes)));
}

nlohmann::json blob_entry(const std::string& name, const Tensor& t, size_t offset) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    e["bytes"] = static_cast<size_t>(t.size()) * sizeof(float);
    e["crc32"] = blob_crc(t.data(), static_cast<size_t>(t.size()) * sizeof(float));
    return e;
}

}  // namespace

void save_model(const Model& m, const std::string& path) {
    using nlohmann::json;

    json manifest;
    manifest["version"] = kVersion;
    manifest["config"] = json::parse(m.config.to_json_text());
    json state;
    state["step"] = m.state.step;
    if (std::isfinite(m.state.best_loss)) {
        state["best_loss"] = m.state.best_loss;
    } else {
        state["best_loss"] = nullptr;
    }
    state["seed"] = m.state.seed;
    manifest["training_state"] = std::move(state);

    std::vector<const Tensor*> blobs;
    size_t cursor = 0;
    json params = json::array();
    for (const auto& [name, tensor] : m.params.values) {
        json e = blob_entry(name, tensor, cursor);
        e["trainable"] = m.params.trainable.count(name) > 0;
        params.push_back(std::move(e));
        blobs.push_back(&tensor);
        cursor = align_up(cursor + static_cast<size_t>(tensor.size()) * sizeof(float));
    }
    manifest["params"] = std::move(params);

    json moments = json::array();
    for (const auto& [name, tensor] : m.state.moments) {
        moments.push_back(blob_entry(name, tensor, cursor));
        blobs.push_back(&tensor);
        cursor = align_up(cursor + static_cast<size_t>(tensor.size()) * sizeof(float));
    }
    manifest["moments"] = std::move(moments);

    std::string manifest_text = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::IoError, "cannot open " + path + " for writing");

    out.write(kMagic, 4);
    uint32_t version = kVersion;
    uint64_t manifest_len = manifest_text.size();
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&manifest_len), 8);
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));

    std::vector<char> zeros(kAlign, 0);
    size_t header_bytes = 16 + manifest_text.size();
    out.write(zeros.data(), static_cast<std::streamsize>(align_up(header_bytes) - header_bytes));

    size_t written = 0;
    for (const Tensor* t : blobs) {
        size_t bytes = static_cast<size_t>(t->size()) * sizeof(float);
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(bytes));
        written += bytes;
        size_t aligned = align_up(written);
        out.write(zeros.data(), static_cast<std::streamsize>(aligned - written));
        written = aligned;
    }
    require(out.good(), ErrorCode::IoError, "short write to " + path);
}

Model load_model(const std::string& path) {
    using nlohmann::json;

    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());

    require(bytes.size() >= 16, ErrorCode::BadMagic, path + ": too short for a DNMD header");
    require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::BadMagic,
            path + ": not a DNMD file");
    uint32_t version;
    uint64_t manifest_len;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&manifest_len, bytes.data() + 8, 8);
    require(version == kVersion, ErrorCode::VersionUnsupported,
            path + ": DNMD version " + std::to_string(version));
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

    auto read_blob = [&](const json& entry) -> std::pair<std::string, Tensor> {
        std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        size_t offset = entry.at("offset").get<size_t>();
        size_t blob_bytes = entry.at("bytes").get<size_t>();
        auto expected_crc = entry.at("crc32").get<uint32_t>();
        require(numel(shape) * sizeof(float) == blob_bytes, ErrorCode::BadHeader,
                path + ": blob '" + name + "' size disagrees with shape");
        size_t start = data_start + offset;
        require(start + blob_bytes <= bytes.size(), ErrorCode::TruncatedPayload,
                path + ": blob '" + name + "' extends past end of file");
        require(blob_crc(bytes.data() + start, blob_bytes) == expected_crc,
                ErrorCode::ChecksumMismatch, path + ": blob '" + name + "'");
        Tensor t(shape);
        std::memcpy(t.data(), bytes.data() + start, blob_bytes);
        return {std::move(name), std::move(t)};
    };

    try {
        UNetConfig cfg = UNetConfig::from_json_text(manifest.at("config").dump());
        Model m = build_unet(cfg, 0);

        for (const auto& entry : manifest.at("params")) {
            auto [name, tensor] = read_blob(entry);
            auto it = m.params.values.find(name);
            require(it != m.params.values.end(), ErrorCode::BadHeader,
                    path + ": unknown parameter '" + name + "'");
            require(it->second.shape() == tensor.shape(), ErrorCode::ShapeMismatch,
                    path + ": parameter '" + name + "' shape " + shape_str(tensor.shape()) +
                        " vs expected " + shape_str(it->second.shape()));
            it->second = std::move(tensor);
        }
        for (const auto& entry : manifest.value("moments", json::array())) {
            auto [name, tensor] = read_blob(entry);
            m.state.moments.emplace(std::move(name), std::move(tensor));
        }

        const json& state = manifest.at("training_state");
        m.state.step = state.value("step", int64_t{0});
        if (state.contains("best_loss") && !state.at("best_loss").is_null()) {
            m.state.best_loss = state.at("best_loss").get<double>();
        }
        m.state.seed = state.value("seed", uint64_t{0});
        return m;
    } catch (const json::exception& e) {
        raise(ErrorCode::BadHeader, path + ": manifest missing fields: " + e.what());
    }
}

}  // namespace neuropipe::net
