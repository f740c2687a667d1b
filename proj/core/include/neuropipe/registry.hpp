#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "neuropipe/errors.hpp"

namespace neuropipe {

/// Lowercase hex SHA-256 of a byte buffer.
std::string sha256_hex(const unsigned char* data, size_t size);
std::string sha256_hex(const std::vector<unsigned char>& data);
std::string sha256_file(const std::string& path);

struct RegistryEntry {
    std::string name;
    std::string version;
    std::string url;
    std::string sha256;  // lowercase hex, 64 chars
    uint64_t bytes = 0;
    std::string config_json;  // optional model config echo
};

struct RegistryManifest {
    std::map<std::string, RegistryEntry> entries;
    std::string base_dir;  // resolves relative file: urls

    static RegistryManifest from_json_text(const std::string& text,
                                           const std::string& base_dir = {});
    static RegistryManifest from_file(const std::string& path);
};

/// Fetches a URL into memory. The default transport handles file: URLs and
/// bare paths (resolved against the manifest directory) plus plain http://.
using Transport = std::function<std::vector<unsigned char>(const std::string& url)>;

Transport default_transport();

/// Checksummed local model cache. Fetch verifies sha256 before exposing a
/// file, quarantines corrupt downloads, and serializes concurrent fetches of
/// the same entry so the transport runs once.
class ModelRegistry {
public:
    ModelRegistry(RegistryManifest manifest, std::string cache_dir, Transport transport = {});

    /// Local path of the verified model file; downloads on cache miss.
    std::string fetch(const std::string& name);

    /// Removes the cache entry; missing entries are a no-op.
    void remove(const std::string& name);

    std::vector<RegistryEntry> list() const;
    const RegistryManifest& manifest() const { return manifest_; }
    std::string cache_path(const std::string& name) const;
    std::string quarantine_path(const std::string& name) const;

private:
    RegistryManifest manifest_;
    std::string cache_dir_;
    Transport transport_;
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<std::mutex>> entry_locks_;
};

/// NEUROPIPE_CACHE, or ~/.cache/neuropipe, or ./.neuropipe-cache as a last
/// resort.
std::string default_cache_dir();

}  // namespace neuropipe
