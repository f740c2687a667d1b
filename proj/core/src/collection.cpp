#include "neuropipe/collection.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "neuropipe/nifti.hpp"
#include "neuropipe/rng.hpp"

namespace fs = std::filesystem;

namespace neuropipe {

namespace {

std::string cache_key(const std::string& case_id, const std::string& group) {
    return case_id + "\x1f" + group;
}

// fnmatch-lite: '*' matches any run, '?' any single character.
bool glob_match(const std::string& pattern, const std::string& text) {
    size_t p = 0, t = 0, star = std::string::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') {
        ++p;
    }
    return p == pattern.size();
}

std::string strip_wildcards(const std::string& pattern) {
    std::string out;
    for (char c : pattern) {
        if (c != '*' && c != '?') {
            out += c;
        }
    }
    return out;
}

}  // namespace

struct DataCollection::CacheState {
    std::mutex mu;
    std::map<std::string, std::shared_future<std::shared_ptr<const AffineVolume>>> entries;
    std::list<std::string> lru;  // most recently used first
    size_t capacity = 0;         // 0 = unbounded
    VolumeLoader loader;
    std::map<std::string, GroupAttributes> attributes;

    void touch(const std::string& key) {
        lru.remove(key);
        lru.push_front(key);
        if (capacity > 0) {
            while (lru.size() > capacity) {
                entries.erase(lru.back());
                lru.pop_back();
            }
        }
    }
};

DataCollection::DataCollection() : cache_(std::make_shared<CacheState>()) {
    cache_->loader = [](const std::string& path) { return read_nifti(path); };
}

DataCollection::DataCollection(std::vector<DataGroup> groups) : DataCollection() {
    for (auto& g : groups) {
        add_group(std::move(g));
    }
}

void DataCollection::add_group(DataGroup group) {
    require(!group.name.empty(), ErrorCode::InvalidArgument, "group name must be nonempty");
    require(!group.channel_labels.empty(), ErrorCode::InvalidArgument,
            "group '" + group.name + "' needs at least one channel label");
    require(find_group(group.name) == nullptr, ErrorCode::InvalidArgument,
            "duplicate group '" + group.name + "'");
    groups_.push_back(std::move(group));
}

void DataCollection::add_case(Case c) {
    for (const auto& existing : cases_) {
        require(existing.id != c.id, ErrorCode::InvalidArgument,
                "duplicate case id '" + c.id + "'");
    }
    for (const auto& [group_name, sources] : c.sources) {
        const DataGroup* g = find_group(group_name);
        require(g != nullptr, ErrorCode::InvalidArgument,
                "case '" + c.id + "' references undeclared group '" + group_name + "'");
        require(sources.size() == g->channel_labels.size(), ErrorCode::InvalidArgument,
                "case '" + c.id + "' group '" + group_name + "': " +
                    std::to_string(sources.size()) + " sources for " +
                    std::to_string(g->channel_labels.size()) + " channels");
    }
    cases_.push_back(std::move(c));
}

const DataGroup* DataCollection::find_group(const std::string& name) const {
    for (const auto& g : groups_) {
        if (g.name == name) {
            return &g;
        }
    }
    return nullptr;
}

const DataGroup& DataCollection::group(const std::string& name) const {
    const DataGroup* g = find_group(name);
    require(g != nullptr, ErrorCode::InvalidArgument, "no group '" + name + "'");
    return *g;
}

const Case& DataCollection::case_by_id(const std::string& id) const {
    for (const auto& c : cases_) {
        if (c.id == id) {
            return c;
        }
    }
    raise(ErrorCode::InvalidArgument, "no case '" + id + "'");
}

std::shared_ptr<const AffineVolume> DataCollection::case_volume(
    const std::string& case_id, const std::string& group_name) const {
    const Case& c = case_by_id(case_id);
    const DataGroup& g = group(group_name);
    auto it = c.sources.find(group_name);
    require(it != c.sources.end(), ErrorCode::InvalidArgument,
            "case '" + case_id + "' has no group '" + group_name + "'");

    const std::string key = cache_key(case_id, group_name);
    std::shared_future<std::shared_ptr<const AffineVolume>> future;
    std::shared_ptr<std::promise<std::shared_ptr<const AffineVolume>>> owned;
    {
        std::lock_guard lock(cache_->mu);
        auto hit = cache_->entries.find(key);
        if (hit != cache_->entries.end()) {
            cache_->touch(key);
            future = hit->second;
        } else {
            owned = std::make_shared<std::promise<std::shared_ptr<const AffineVolume>>>();
            future = owned->get_future().share();
            cache_->entries.emplace(key, future);
            cache_->touch(key);
        }
    }
    if (!owned) {
        return future.get();  // may rethrow the loader's error
    }

    try {
        // Load and stack channels in label order outside the lock.
        std::vector<AffineVolume> channels;
        channels.reserve(it->second.size());
        for (const ChannelSource& src : it->second) {
            if (std::holds_alternative<std::string>(src)) {
                channels.push_back(cache_->loader(std::get<std::string>(src)));
            } else {
                channels.push_back(std::get<AffineVolume>(src));
            }
        }
        Shape spatial = channels.front().spatial_shape();
        int64_t total_c = 0;
        for (size_t i = 0; i < channels.size(); ++i) {
            require(channels[i].spatial_shape() == spatial, ErrorCode::ShapeMismatch,
                    "case '" + case_id + "' group '" + group_name + "' channel '" +
                        g.channel_labels[std::min(i, g.channel_labels.size() - 1)] +
                        "': expected " + shape_str(spatial) + ", got " +
                        shape_str(channels[i].spatial_shape()));
            total_c += channels[i].channels();
        }
        Shape out_shape = spatial;
        out_shape.push_back(total_c);
        Tensor stacked(out_shape);
        int64_t voxels = numel(spatial);
        float* dst = stacked.data();
        int64_t c_off = 0;
        for (const AffineVolume& ch : channels) {
            int64_t cc = ch.channels();
            const float* src_data = ch.data().data();
            for (int64_t v = 0; v < voxels; ++v) {
                for (int64_t k = 0; k < cc; ++k) {
                    dst[v * total_c + c_off + k] = src_data[v * cc + k];
                }
            }
            c_off += cc;
        }
        auto volume = std::make_shared<const AffineVolume>(std::move(stacked),
                                                           channels.front().affine());
        owned->set_value(volume);
        return volume;
    } catch (...) {
        {
            std::lock_guard lock(cache_->mu);
            cache_->entries.erase(key);
            cache_->lru.remove(key);
        }
        owned->set_exception(std::current_exception());
        throw;
    }
}

const Tensor& DataCollection::case_tensor(const std::string& case_id,
                                          const std::string& group_name) const {
    // The cache keeps the volume alive for the collection's lifetime.
    return case_volume(case_id, group_name)->data();
}

const GroupAttributes& DataCollection::attributes(const std::string& group_name) const {
    {
        std::lock_guard lock(cache_->mu);
        auto it = cache_->attributes.find(group_name);
        if (it != cache_->attributes.end()) {
            return it->second;
        }
    }
    require(!cases_.empty(), ErrorCode::EmptyCollection,
            "attributes of '" + group_name + "' need at least one case");
    GroupAttributes attrs;
    bool first = true;
    for (const auto& c : cases_) {
        if (!c.sources.count(group_name)) {
            continue;
        }
        auto vol = case_volume(c.id, group_name);
        if (first) {
            attrs.spatial_shape = vol->spatial_shape();
            attrs.spatial_rank = vol->spatial_rank();
            attrs.channels = vol->channels();
            attrs.intensity_min = attrs.intensity_max = vol->data()[0];
            first = false;
        }
        for (int64_t i = 0; i < vol->data().size(); ++i) {
            attrs.intensity_min = std::min(attrs.intensity_min, vol->data()[i]);
            attrs.intensity_max = std::max(attrs.intensity_max, vol->data()[i]);
        }
    }
    require(!first, ErrorCode::InvalidArgument,
            "no case carries group '" + group_name + "'");
    std::lock_guard lock(cache_->mu);
    return cache_->attributes.emplace(group_name, attrs).first->second;
}

std::vector<size_t> DataCollection::sample_case_indices(int64_t batch_size,
                                                        uint64_t seed) const {
    require(!cases_.empty(), ErrorCode::EmptyCollection, "cannot sample an empty collection");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    Rng rng{hash_u64s({seed, 0x706169726564ULL})};
    std::vector<size_t> indices(static_cast<size_t>(batch_size));
    for (auto& idx : indices) {
        idx = static_cast<size_t>(rng.next_below(cases_.size()));
    }
    return indices;
}

std::map<std::string, Tensor> DataCollection::sample_batch(int64_t batch_size, SampleMode mode,
                                                           uint64_t seed) const {
    require(!cases_.empty(), ErrorCode::EmptyCollection, "cannot sample an empty collection");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");

    std::vector<size_t> paired = sample_case_indices(batch_size, seed);
    std::map<std::string, Tensor> batch;
    for (size_t gi = 0; gi < groups_.size(); ++gi) {
        const DataGroup& g = groups_[gi];
        std::vector<size_t> indices;
        if (mode == SampleMode::Paired) {
            indices = paired;
        } else {
            Rng rng{hash_u64s({seed, 0x756e706169ULL, gi})};
            indices.resize(static_cast<size_t>(batch_size));
            for (auto& idx : indices) {
                idx = static_cast<size_t>(rng.next_below(cases_.size()));
            }
        }
        Tensor out;
        for (int64_t slot = 0; slot < batch_size; ++slot) {
            const Case& c = cases_[indices[static_cast<size_t>(slot)]];
            auto vol = case_volume(c.id, g.name);
            const Tensor& t = vol->data();
            if (slot == 0) {
                Shape s = t.shape();
                s.insert(s.begin(), batch_size);
                out = Tensor(s);
            }
            require(numel(t.shape()) * batch_size == out.size(), ErrorCode::ShapeMismatch,
                    "case '" + c.id + "' group '" + g.name + "' shape " + shape_str(t.shape()) +
                        " differs within batch");
            std::copy(t.data(), t.data() + t.size(), out.data() + slot * t.size());
        }
        batch.emplace(g.name, std::move(out));
    }
    return batch;
}

void DataCollection::set_loader(VolumeLoader loader) {
    std::lock_guard lock(cache_->mu);
    cache_->loader = std::move(loader);
}

void DataCollection::set_cache_capacity(size_t max_entries) {
    std::lock_guard lock(cache_->mu);
    cache_->capacity = max_entries;
    if (max_entries > 0) {
        while (cache_->lru.size() > max_entries) {
            cache_->entries.erase(cache_->lru.back());
            cache_->lru.pop_back();
        }
    }
}

size_t DataCollection::cached_volume_count() const {
    std::lock_guard lock(cache_->mu);
    return cache_->entries.size();
}

DataCollection collection_from_directory(
    const std::string& root,
    const std::map<std::string, std::vector<std::string>>& pattern_map) {
    require(fs::is_directory(root), ErrorCode::EmptyRoot, "not a directory: " + root);

    std::vector<DataGroup> groups;
    for (const auto& [name, patterns] : pattern_map) {
        DataGroup g{name, {}};
        for (const auto& p : patterns) {
            g.channel_labels.push_back(strip_wildcards(p));
        }
        groups.push_back(std::move(g));
    }
    DataCollection collection(std::move(groups));

    std::vector<std::string> case_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) {
            case_dirs.push_back(entry.path().filename().string());
        }
    }
    require(!case_dirs.empty(), ErrorCode::EmptyRoot, "no case directories under " + root);
    std::sort(case_dirs.begin(), case_dirs.end());

    for (const auto& dir_name : case_dirs) {
        fs::path dir = fs::path(root) / dir_name;
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file()) {
                files.push_back(entry.path().filename().string());
            }
        }
        std::sort(files.begin(), files.end());

        Case c{dir_name, {}};
        for (const auto& [group_name, patterns] : pattern_map) {
            std::vector<ChannelSource> sources;
            for (const auto& pattern : patterns) {
                std::vector<std::string> matches;
                for (const auto& f : files) {
                    if (glob_match(pattern, f)) {
                        matches.push_back(f);
                    }
                }
                if (matches.empty()) {
                    raise(ErrorCode::MissingChannel, "case '" + dir_name + "' group '" +
                                                         group_name + "': no file matches '" +
                                                         pattern + "'");
                }
                if (matches.size() > 1) {
                    raise(ErrorCode::AmbiguousPattern,
                          "case '" + dir_name + "' group '" + group_name + "': pattern '" +
                              pattern + "' matches " + std::to_string(matches.size()) + " files");
                }
                sources.emplace_back((dir / matches.front()).string());
            }
            c.sources.emplace(group_name, std::move(sources));
        }
        collection.add_case(std::move(c));
    }
    return collection;
}

DataCollection collection_from_csv(const std::string& path) {
    std::ifstream file(path);
    require(file.good(), ErrorCode::IoError, "cannot open " + path);

    std::string line;
    require(static_cast<bool>(std::getline(file, line)), ErrorCode::BadHeader,
            path + ": empty file");
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            header.push_back(cell);
        }
    }
    require(header.size() >= 2 && header[0] == "case", ErrorCode::BadHeader,
            path + ": header must start with 'case' and declare at least one column");

    // Column order defines both group order and channel stacking order.
    std::vector<DataGroup> groups;
    std::vector<std::pair<std::string, std::string>> columns;  // (group, label)
    for (size_t i = 1; i < header.size(); ++i) {
        size_t colon = header[i].find(':');
        require(colon != std::string::npos && colon > 0 && colon + 1 < header[i].size(),
                ErrorCode::BadHeader,
                path + ": column '" + header[i] + "' is not <group>:<label>");
        std::string group_name = header[i].substr(0, colon);
        std::string label = header[i].substr(colon + 1);
        columns.emplace_back(group_name, label);
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const DataGroup& g) { return g.name == group_name; });
        if (it == groups.end()) {
            groups.push_back(DataGroup{group_name, {label}});
        } else {
            it->channel_labels.push_back(label);
        }
    }

    DataCollection collection(groups);
    std::vector<Case> parsed;
    size_t row_number = 1;
    while (std::getline(file, line)) {
        ++row_number;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        {
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) {
                cells.push_back(cell);
            }
            if (!line.empty() && line.back() == ',') {
                cells.push_back("");
            }
        }
        for (const auto& cell : cells) {
            require(cell.find('"') == std::string::npos, ErrorCode::BadHeader,
                    path + " row " + std::to_string(row_number) +
                        ": quoting is not supported; paths must not contain commas");
        }
        require(cells.size() == header.size(), ErrorCode::MissingPath,
                path + " row " + std::to_string(row_number) + ": expected " +
                    std::to_string(header.size()) + " cells, got " +
                    std::to_string(cells.size()));
        Case c{cells[0], {}};
        for (size_t i = 1; i < cells.size(); ++i) {
            require(!cells[i].empty(), ErrorCode::MissingPath,
                    path + " row " + std::to_string(row_number) + ": empty path in column '" +
                        header[i] + "'");
            c.sources[columns[i - 1].first].emplace_back(cells[i]);
        }
        parsed.push_back(std::move(c));
    }
    std::sort(parsed.begin(), parsed.end(),
              [](const Case& a, const Case& b) { return a.id < b.id; });
    for (auto& c : parsed) {
        collection.add_case(std::move(c));
    }
    return collection;
}

}  // namespace neuropipe
