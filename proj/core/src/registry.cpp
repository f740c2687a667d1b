#include "neuropipe/registry.hpp"

#include <unistd.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "httplib.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace neuropipe {

// --- SHA-256 (FIPS 180-4) -------------------------------------------------

namespace {

constexpr uint32_t kSha256K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
    0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
    0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
    0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
    0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
    0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
    0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2};

inline uint32_t rotr(uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

struct Sha256 {
    uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                     0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    unsigned char block[64];
    size_t block_len = 0;
    uint64_t total = 0;

    void compress(const unsigned char* p) {
        uint32_t w[64];
        for (int i = 0; i < 16; ++i) {
            w[i] = (uint32_t(p[4 * i]) << 24) | (uint32_t(p[4 * i + 1]) << 16) |
                   (uint32_t(p[4 * i + 2]) << 8) | uint32_t(p[4 * i + 3]);
        }
        for (int i = 16; i < 64; ++i) {
            uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6],
                 hh = h[7];
        for (int i = 0; i < 64; ++i) {
            uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            uint32_t ch = (e & f) ^ (~e & g);
            uint32_t t1 = hh + s1 + ch + kSha256K[i] + w[i];
            uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            uint32_t t2 = s0 + maj;
            hh = g;
            g = f;
            f = e;
            e = d + t1;
            d = c;
            c = b;
            b = a;
            a = t1 + t2;
        }
        h[0] += a;
        h[1] += b;
        h[2] += c;
        h[3] += d;
        h[4] += e;
        h[5] += f;
        h[6] += g;
        h[7] += hh;
    }

    void update(const unsigned char* data, size_t size) {
        total += size;
        while (size > 0) {
            size_t take = std::min(size, sizeof(block) - block_len);
            std::memcpy(block + block_len, data, take);
            block_len += take;
            data += take;
            size -= take;
            if (block_len == 64) {
                compress(block);
                block_len = 0;
            }
        }
    }

    std::string finish() {
        uint64_t bits = total * 8;
        unsigned char pad = 0x80;
        update(&pad, 1);
        unsigned char zero = 0;
        while (block_len != 56) {
            update(&zero, 1);
        }
        unsigned char len[8];
        for (int i = 0; i < 8; ++i) {
            len[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
        }
        update(len, 8);

        static const char* hex = "0123456789abcdef";
        std::string out(64, '0');
        for (int i = 0; i < 8; ++i) {
            for (int b = 0; b < 4; ++b) {
                auto byte = static_cast<unsigned char>(h[i] >> (24 - 8 * b));
                out[static_cast<size_t>(i * 8 + b * 2)] = hex[byte >> 4];
                out[static_cast<size_t>(i * 8 + b * 2 + 1)] = hex[byte & 0xf];
            }
        }
        return out;
    }
};

}  // namespace

std::string sha256_hex(const unsigned char* data, size_t size) {
    Sha256 state;
    state.update(data, size);
    return state.finish();
}

std::string sha256_hex(const std::vector<unsigned char>& data) {
    return sha256_hex(data.data(), data.size());
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    Sha256 state;
    char chunk[1 << 16];
    while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
        state.update(reinterpret_cast<const unsigned char*>(chunk),
                     static_cast<size_t>(in.gcount()));
    }
    return state.finish();
}

// --- manifest ----------------------------------------------------------------

RegistryManifest RegistryManifest::from_json_text(const std::string& text,
                                                  const std::string& base_dir) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("registry manifest JSON: ") + e.what());
    }
    RegistryManifest manifest;
    manifest.base_dir = base_dir;
    try {
        for (const auto& [name, e] : doc.at("entries").items()) {
            RegistryEntry entry;
            entry.name = name;
            entry.version = e.value("version", std::string("1"));
            entry.url = e.at("url").get<std::string>();
            entry.sha256 = e.at("sha256").get<std::string>();
            entry.bytes = e.value("bytes", uint64_t{0});
            if (e.contains("config")) {
                entry.config_json = e.at("config").dump();
            }
            require(entry.sha256.size() == 64 &&
                        entry.sha256.find_first_not_of("0123456789abcdef") == std::string::npos,
                    ErrorCode::InvalidConfig,
                    "entry '" + name + "': sha256 must be 64 lowercase hex chars");
            manifest.entries.emplace(name, std::move(entry));
        }
    } catch (const json::exception& e) {
        raise(ErrorCode::InvalidConfig, std::string("registry manifest: ") + e.what());
    }
    return manifest;
}

RegistryManifest RegistryManifest::from_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text, fs::path(path).parent_path().string());
}

// --- transport -----------------------------------------------------------------

Transport default_transport() {
    return [](const std::string& url) -> std::vector<unsigned char> {
        std::string path = url;
        if (url.rfind("http://", 0) == 0) {
            auto host_start = url.find("//") + 2;
            auto path_start = url.find('/', host_start);
            std::string host = url.substr(host_start, path_start - host_start);
            std::string target = path_start == std::string::npos ? "/" : url.substr(path_start);
            httplib::Client client(("http://" + host).c_str());
            auto res = client.Get(target.c_str());
            if (!res || res->status != 200) {
                raise(ErrorCode::NetworkError,
                      "GET " + url + " failed" +
                          (res ? " with status " + std::to_string(res->status) : ""));
            }
            return std::vector<unsigned char>(res->body.begin(), res->body.end());
        }
        if (url.rfind("https://", 0) == 0) {
            raise(ErrorCode::NetworkError, "https not supported by the built-in transport");
        }
        if (url.rfind("file://", 0) == 0) {
            path = url.substr(7);
        } else if (url.rfind("file:", 0) == 0) {
            path = url.substr(5);
        }
        std::ifstream in(path, std::ios::binary);
        if (!in.good()) {
            raise(ErrorCode::NetworkError, "cannot read " + path);
        }
        return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());
    };
}

// --- registry ----------------------------------------------------------------

ModelRegistry::ModelRegistry(RegistryManifest manifest, std::string cache_dir,
                             Transport transport)
    : manifest_(std::move(manifest)),
      cache_dir_(std::move(cache_dir)),
      transport_(transport ? std::move(transport) : default_transport()) {
    fs::create_directories(cache_dir_);
}

std::string ModelRegistry::cache_path(const std::string& name) const {
    return (fs::path(cache_dir_) / (name + ".dnmd")).string();
}

std::string ModelRegistry::quarantine_path(const std::string& name) const {
    return (fs::path(cache_dir_) / "quarantine" / (name + ".dnmd")).string();
}

std::string ModelRegistry::fetch(const std::string& name) {
    auto it = manifest_.entries.find(name);
    require(it != manifest_.entries.end(), ErrorCode::NotInManifest,
            "model '" + name + "' is not in the registry manifest");
    const RegistryEntry& entry = it->second;

    std::shared_ptr<std::mutex> lock;
    {
        std::lock_guard guard(mu_);
        auto& slot = entry_locks_[name];
        if (!slot) {
            slot = std::make_shared<std::mutex>();
        }
        lock = slot;
    }
    std::lock_guard entry_guard(*lock);

    std::string path = cache_path(name);
    if (fs::exists(path) && sha256_file(path) == entry.sha256) {
        return path;
    }

    std::string url = entry.url;
    bool relative_file = url.rfind("file:", 0) == 0 && url.rfind("file:///", 0) != 0 &&
                         !manifest_.base_dir.empty();
    if (relative_file) {
        std::string rel = url.substr(url.rfind("file://", 0) == 0 ? 7 : 5);
        if (!rel.empty() && rel[0] != '/') {
            url = "file:" + (fs::path(manifest_.base_dir) / rel).string();
        }
    }

    std::vector<unsigned char> bytes = transport_(url);
    std::string digest = sha256_hex(bytes);
    if (digest != entry.sha256) {
        // Quarantine the corrupt download; the cache slot stays untouched.
        fs::create_directories(fs::path(quarantine_path(name)).parent_path());
        std::ofstream bad(quarantine_path(name), std::ios::binary);
        bad.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        raise(ErrorCode::ChecksumMismatch, "model '" + name + "': expected sha256 " +
                                               entry.sha256 + ", got " + digest +
                                               " (quarantined)");
    }

    std::string tmp = path + ".part." + std::to_string(getpid());
    {
        std::ofstream out(tmp, std::ios::binary);
        require(out.good(), ErrorCode::IoError, "cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        require(out.good(), ErrorCode::IoError, "short write to " + tmp);
    }
    fs::rename(tmp, path);  // atomic publish
    return path;
}

void ModelRegistry::remove(const std::string& name) {
    std::error_code ec;
    fs::remove(cache_path(name), ec);
}

std::vector<RegistryEntry> ModelRegistry::list() const {
    std::vector<RegistryEntry> out;
    for (const auto& [name, entry] : manifest_.entries) {
        out.push_back(entry);
    }
    return out;
}

std::string default_cache_dir() {
    if (const char* env = std::getenv("NEUROPIPE_CACHE")) {
        return env;
    }
    if (const char* home = std::getenv("HOME")) {
        return (fs::path(home) / ".cache" / "neuropipe").string();
    }
    return ".neuropipe-cache";
}

}  // namespace neuropipe
