#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "neuropipe/collection.hpp"
#include "neuropipe/nifti.hpp"
#include "neuropipe/rng.hpp"

using namespace neuropipe;
namespace fs = std::filesystem;

namespace {

AffineVolume random_volume(Shape shape, uint64_t seed) {
    Rng rng(seed);
    Tensor data(shape);
    for (int64_t i = 0; i < data.size(); ++i) {
        data[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
    }
    return AffineVolume(std::move(data));
}

// Two-case directory layout with FLAIR/T1POST channels and a mask.
fs::path make_layout(const std::string& tag, Shape shape = {6, 6, 4, 1}) {
    fs::path root = fs::temp_directory_path() / ("neuropipe-coll-" + tag);
    fs::remove_all(root);
    uint64_t seed = 1;
    for (const char* case_id : {"p01", "p02"}) {
        fs::create_directories(root / case_id);
        write_nifti(random_volume(shape, seed++), (root / case_id / "FLAIR.nii.gz").string(),
                    true);
        write_nifti(random_volume(shape, seed++), (root / case_id / "T1POST.nii.gz").string(),
                    true);
        write_nifti(random_volume(shape, seed++), (root / case_id / "mask.nii.gz").string(),
                    true);
    }
    return root;
}

std::map<std::string, std::vector<std::string>> patterns() {
    return {{"input_data", {"FLAIR*", "T1POST*"}}, {"ground_truth", {"mask*"}}};
}

}  // namespace

TEST_CASE("directory ingestion: two cases, nothing loaded") {
    fs::path root = make_layout("dir");
    DataCollection c = collection_from_directory(root.string(), patterns());

    std::atomic<int> loads{0};
    c.set_loader([&loads](const std::string& path) {
        ++loads;
        return read_nifti(path);
    });

    REQUIRE(c.case_count() == 2);
    CHECK(c.cases()[0].id == "p01");
    CHECK(c.cases()[1].id == "p02");
    CHECK(c.group("input_data").channel_labels == std::vector<std::string>{"FLAIR", "T1POST"});
    CHECK(loads.load() == 0);  // construction is lazy

    const Tensor& t = c.case_tensor("p01", "input_data");
    CHECK(t.shape() == Shape{6, 6, 4, 2});
    CHECK(loads.load() == 2);
    c.case_tensor("p01", "input_data");
    CHECK(loads.load() == 2);  // cache hit
}

TEST_CASE("directory ingestion error contracts") {
    fs::path root = make_layout("dir-err");
    fs::remove(root / "p02" / "T1POST.nii.gz");
    try {
        collection_from_directory(root.string(), patterns());
        FAIL("expected MissingChannel");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingChannel);
        CHECK(std::string(e.what()).find("p02") != std::string::npos);
        CHECK(std::string(e.what()).find("T1POST*") != std::string::npos);
    }

    fs::path root2 = make_layout("dir-amb");
    write_nifti(random_volume({6, 6, 4, 1}, 9), (root2 / "p01" / "FLAIR_b.nii.gz").string(),
                true);
    try {
        collection_from_directory(root2.string(), patterns());
        FAIL("expected AmbiguousPattern");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::AmbiguousPattern);
    }

    fs::path empty = fs::temp_directory_path() / "neuropipe-coll-empty";
    fs::remove_all(empty);
    fs::create_directories(empty);
    CHECK_THROWS_AS(collection_from_directory(empty.string(), patterns()), Error);
}

TEST_CASE("csv ingestion equals directory ingestion") {
    fs::path root = make_layout("csv");
    fs::path csv = root / "list.csv";
    {
        std::ofstream out(csv);
        out << "case,input_data:FLAIR,input_data:T1POST,ground_truth:mask\n";
        // Rows deliberately out of order; ingestion sorts by id.
        for (const char* id : {"p02", "p01"}) {
            out << id << "," << (root / id / "FLAIR.nii.gz").string() << ","
                << (root / id / "T1POST.nii.gz").string() << ","
                << (root / id / "mask.nii.gz").string() << "\n";
        }
    }
    DataCollection from_csv = collection_from_csv(csv.string());
    DataCollection from_dir = collection_from_directory(root.string(), patterns());

    REQUIRE(from_csv.case_count() == from_dir.case_count());
    for (size_t i = 0; i < from_csv.case_count(); ++i) {
        CHECK(from_csv.cases()[i].id == from_dir.cases()[i].id);
    }
    for (const char* id : {"p01", "p02"}) {
        for (const char* group : {"input_data", "ground_truth"}) {
            const Tensor& a = from_csv.case_tensor(id, group);
            const Tensor& b = from_dir.case_tensor(id, group);
            REQUIRE(a.shape() == b.shape());
            for (int64_t i = 0; i < a.size(); ++i) {
                REQUIRE(a[i] == b[i]);
            }
        }
    }
}

TEST_CASE("csv error contracts") {
    fs::path dir = fs::temp_directory_path() / "neuropipe-coll-csverr";
    fs::create_directories(dir);

    {
        std::ofstream out(dir / "bad_header.csv");
        out << "id,input_data:FLAIR\nrow,x.nii\n";
    }
    try {
        collection_from_csv((dir / "bad_header.csv").string());
        FAIL("expected BadHeader");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BadHeader);
    }

    {
        std::ofstream out(dir / "missing_path.csv");
        out << "case,input_data:FLAIR,input_data:T1POST\np01,a.nii,\n";
    }
    try {
        collection_from_csv((dir / "missing_path.csv").string());
        FAIL("expected MissingPath");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingPath);
    }

    {
        std::ofstream out(dir / "quoted.csv");
        out << "case,input_data:FLAIR\np01,\"a,b.nii\"\n";
    }
    CHECK_THROWS_AS(collection_from_csv((dir / "quoted.csv").string()), Error);
}

TEST_CASE("case_tensor: shape mismatch and cache outliving sources") {
    fs::path root = make_layout("cache");
    write_nifti(random_volume({6, 6, 5, 1}, 31), (root / "p01" / "T1POST.nii.gz").string(),
                true);
    DataCollection c = collection_from_directory(root.string(), patterns());
    try {
        c.case_tensor("p01", "input_data");
        FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ShapeMismatch);
    }

    // Cache boundary: delete the file after the first load.
    const Tensor& t = c.case_tensor("p02", "input_data");
    float first = t[0];
    fs::remove(root / "p02" / "FLAIR.nii.gz");
    const Tensor& again = c.case_tensor("p02", "input_data");
    CHECK(again[0] == first);
}

TEST_CASE("concurrent case_tensor loads exactly once") {
    fs::path root = make_layout("conc");
    DataCollection c = collection_from_directory(root.string(), patterns());
    std::atomic<int> loads{0};
    c.set_loader([&loads](const std::string& path) {
        ++loads;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return read_nifti(path);
    });

    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&c] { c.case_tensor("p01", "input_data"); });
    }
    for (auto& t : threads) {
        t.join();
    }
    CHECK(loads.load() == 2);  // one per channel, not per thread
}

TEST_CASE("cache capacity evicts least recently used") {
    fs::path root = make_layout("lru");
    DataCollection c = collection_from_directory(root.string(), patterns());
    c.set_cache_capacity(1);
    c.case_tensor("p01", "input_data");
    CHECK(c.cached_volume_count() == 1);
    c.case_tensor("p02", "input_data");
    CHECK(c.cached_volume_count() == 1);
}

TEST_CASE("attributes derive from sources") {
    fs::path root = make_layout("attrs");
    DataCollection c = collection_from_directory(root.string(), patterns());
    const GroupAttributes& attrs = c.attributes("input_data");
    CHECK(attrs.spatial_shape == Shape{6, 6, 4});
    CHECK(attrs.channels == 2);
    CHECK(attrs.intensity_min <= attrs.intensity_max);
    CHECK(attrs.intensity_max <= 2.0f);
}

TEST_CASE("archive round trip is bit-exact") {
    fs::path root = make_layout("arch");
    DataCollection c = collection_from_directory(root.string(), patterns());
    fs::path path = fs::temp_directory_path() / "neuropipe-test.dnar";
    write_archive(c, path.string());
    DataCollection loaded = read_archive(path.string());

    REQUIRE(loaded.case_count() == c.case_count());
    for (const char* id : {"p01", "p02"}) {
        for (const char* group : {"input_data", "ground_truth"}) {
            const Tensor& a = c.case_tensor(id, group);
            const Tensor& b = loaded.case_tensor(id, group);
            REQUIRE(a.shape() == b.shape());
            for (int64_t i = 0; i < a.size(); ++i) {
                REQUIRE(a[i] == b[i]);
            }
        }
    }
    // Archived collections are fully in-memory: sources are volumes.
    for (const auto& kase : loaded.cases()) {
        for (const auto& [group, sources] : kase.sources) {
            for (const auto& src : sources) {
                CHECK(std::holds_alternative<AffineVolume>(src));
            }
        }
    }
}

TEST_CASE("archive corruption and format errors") {
    fs::path root = make_layout("arch-err");
    DataCollection c = collection_from_directory(root.string(), patterns());
    fs::path path = fs::temp_directory_path() / "neuropipe-corrupt.dnar";
    write_archive(c, path.string());

    auto bytes = [&] {
        std::ifstream in(path, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
    }();

    // Flip one payload byte (well past the manifest).
    auto corrupted = bytes;
    corrupted[corrupted.size() - 5] ^= 0x40;
    fs::path bad = fs::temp_directory_path() / "neuropipe-bad.dnar";
    std::ofstream(bad, std::ios::binary).write(corrupted.data(),
                                               static_cast<std::streamsize>(corrupted.size()));
    try {
        read_archive(bad.string());
        FAIL("expected ChecksumMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ChecksumMismatch);
    }

    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    std::ofstream(bad, std::ios::binary)
        .write(wrong_magic.data(), static_cast<std::streamsize>(wrong_magic.size()));
    try {
        read_archive(bad.string());
        FAIL("expected BadMagic");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BadMagic);
    }

    auto wrong_version = bytes;
    wrong_version[4] = 9;
    std::ofstream(bad, std::ios::binary)
        .write(wrong_version.data(), static_cast<std::streamsize>(wrong_version.size()));
    try {
        read_archive(bad.string());
        FAIL("expected VersionUnsupported");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::VersionUnsupported);
    }
}

TEST_CASE("empty collection archives and restores") {
    DataCollection empty({DataGroup{"input_data", {"FLAIR"}}});
    fs::path path = fs::temp_directory_path() / "neuropipe-empty.dnar";
    write_archive(empty, path.string());
    DataCollection loaded = read_archive(path.string());
    CHECK(loaded.case_count() == 0);
    CHECK(loaded.groups().size() == 1);
}

TEST_CASE("sample_batch: determinism and paired alignment") {
    fs::path root = make_layout("batch");
    DataCollection c = collection_from_directory(root.string(), patterns());

    auto a = c.sample_batch(4, DataCollection::SampleMode::Paired, 7);
    auto b = c.sample_batch(4, DataCollection::SampleMode::Paired, 7);
    REQUIRE(a.count("input_data") == 1);
    REQUIRE(a.at("input_data").shape() == Shape{4, 6, 6, 4, 2});
    for (const auto& [group, tensor] : a) {
        const Tensor& other = b.at(group);
        for (int64_t i = 0; i < tensor.size(); ++i) {
            REQUIRE(tensor[i] == other[i]);
        }
    }

    // Paired alignment: each slot's input and mask come from the same case.
    auto indices = c.sample_case_indices(16, 21);
    auto batch = c.sample_batch(16, DataCollection::SampleMode::Paired, 21);
    for (int64_t slot = 0; slot < 16; ++slot) {
        const Case& kase = c.cases()[indices[static_cast<size_t>(slot)]];
        const Tensor& expected = c.case_tensor(kase.id, "input_data");
        const Tensor& got = batch.at("input_data");
        for (int64_t i = 0; i < expected.size(); ++i) {
            REQUIRE(got[slot * expected.size() + i] == expected[i]);
        }
    }

    CHECK_THROWS_AS(DataCollection({DataGroup{"input_data", {"x"}}})
                        .sample_batch(1, DataCollection::SampleMode::Paired, 0),
                    Error);
}

TEST_CASE("sample_batch: unpaired marginals are uniform within 3 sigma") {
    // Four single-voxel cases whose values identify the case index.
    DataCollection c({DataGroup{"a", {"ch"}}, DataGroup{"b", {"ch"}}});
    for (int i = 0; i < 4; ++i) {
        Tensor t(Shape{1, 1, 1, 1});
        t[0] = static_cast<float>(i);
        Case kase{"c" + std::to_string(i), {}};
        kase.sources.emplace("a", std::vector<ChannelSource>{AffineVolume(t)});
        kase.sources.emplace("b", std::vector<ChannelSource>{AffineVolume(t)});
        c.add_case(std::move(kase));
    }

    const int64_t draws = 10000;
    auto batch = c.sample_batch(draws, DataCollection::SampleMode::Unpaired, 3);
    std::map<std::string, std::vector<int>> counts;
    bool differ = false;
    for (const auto& [group, tensor] : batch) {
        counts[group].assign(4, 0);
        for (int64_t i = 0; i < draws; ++i) {
            ++counts[group][static_cast<size_t>(tensor[i])];
        }
    }
    const Tensor& ga = batch.at("a");
    const Tensor& gb = batch.at("b");
    for (int64_t i = 0; i < draws; ++i) {
        if (ga[i] != gb[i]) {
            differ = true;
        }
    }
    CHECK(differ);  // unpaired groups draw independently

    double expected = draws / 4.0;
    double sigma = std::sqrt(draws * 0.25 * 0.75);
    for (const auto& [group, tally] : counts) {
        for (int count : tally) {
            CHECK(std::abs(count - expected) <= 3 * sigma);
        }
    }
}
