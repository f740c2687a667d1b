#pragma once

#include <functional>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "neuropipe/volume.hpp"

namespace neuropipe {

/// A named role within a case, e.g. "input_data" or "ground_truth", with an
/// ordered list of channel labels defining the stacking order.
struct DataGroup {
    std::string name;
    std::vector<std::string> channel_labels;
};

/// One channel of one case: either a file path (loaded lazily) or an
/// in-memory volume.
using ChannelSource = std::variant<std::string, AffineVolume>;

struct Case {
    std::string id;
    std::map<std::string, std::vector<ChannelSource>> sources;  // group -> channels
};

struct GroupAttributes {
    Shape spatial_shape;
    int spatial_rank = 0;
    int64_t channels = 0;
    float intensity_min = 0;
    float intensity_max = 0;
};

using VolumeLoader = std::function<AffineVolume(const std::string& path)>;

/// Case-oriented dataset: declared groups, ordered cases, and a lazy
/// channel-stacking cache. Constructing a collection performs no volume I/O;
/// tensors materialize on first access and are then served from the cache.
/// Copies share the cache. Safe for concurrent reads after construction.
class DataCollection {
public:
    DataCollection();
    explicit DataCollection(std::vector<DataGroup> groups);

    void add_group(DataGroup group);
    void add_case(Case c);

    const std::vector<DataGroup>& groups() const { return groups_; }
    const DataGroup* find_group(const std::string& name) const;
    const DataGroup& group(const std::string& name) const;

    const std::vector<Case>& cases() const { return cases_; }
    const Case& case_at(size_t index) const { return cases_.at(index); }
    const Case& case_by_id(const std::string& id) const;
    size_t case_count() const { return cases_.size(); }

    /// Channels of (case, group) stacked in channel_labels order, with the
    /// affine of the first channel. Cached; repeated calls do not re-read.
    std::shared_ptr<const AffineVolume> case_volume(const std::string& case_id,
                                                    const std::string& group_name) const;

    const Tensor& case_tensor(const std::string& case_id, const std::string& group_name) const;

    /// Derived per-group summary (shape of the first case, global intensity
    /// range over all cases). Computed on demand, then cached.
    const GroupAttributes& attributes(const std::string& group_name) const;

    enum class SampleMode { Paired, Unpaired };

    /// Batch of stacked tensors [B, spatial..., C] per group, drawn with
    /// replacement. Paired mode shares the case draw across groups.
    std::map<std::string, Tensor> sample_batch(int64_t batch_size, SampleMode mode,
                                               uint64_t seed) const;

    /// Paired draw of case indices only (the training loop uses this).
    std::vector<size_t> sample_case_indices(int64_t batch_size, uint64_t seed) const;

    /// Replaces the file loader (tests inject I/O-counting shims).
    void set_loader(VolumeLoader loader);

    /// Caps the number of cached stacked volumes; 0 means unbounded.
    void set_cache_capacity(size_t max_entries);

    size_t cached_volume_count() const;

private:
    struct CacheState;

    std::vector<DataGroup> groups_;
    std::vector<Case> cases_;
    std::shared_ptr<CacheState> cache_;
};

/// Scans the immediate subdirectories of root; each subdirectory with all
/// pattern matches becomes a case (id = directory name). Patterns support
/// '*' and '?'; each must match exactly one file. Channel labels are the
/// patterns with wildcards stripped.
DataCollection collection_from_directory(
    const std::string& root,
    const std::map<std::string, std::vector<std::string>>& pattern_map);

/// CSV ingestion. Header: `case,<group>:<label>,...`; one path per cell; no
/// quoting (paths containing commas are rejected).
DataCollection collection_from_csv(const std::string& path);

/// DNAR archive round trip. The archive stores every case's stacked tensors;
/// reading yields a fully in-memory-backed collection.
void write_archive(const DataCollection& c, const std::string& path);
DataCollection read_archive(const std::string& path);

}  // namespace neuropipe
