#include <set>

#include "doctest.h"
#include "neuropipe/mat4.hpp"
#include "neuropipe/rng.hpp"
#include "neuropipe/tensor.hpp"

using namespace neuropipe;

TEST_CASE("tensor shape and indexing") {
    Tensor t(Shape{2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);

    Shape strides = row_major_strides(t.shape());
    CHECK(strides == Shape{12, 4, 1});

    std::vector<int64_t> idx{1, 2, 3};
    CHECK(t.offset(idx) == 12 + 8 + 3);
    t.at(idx) = 7.0f;
    CHECK(t[23] == 7.0f);

    CHECK_THROWS_AS(Tensor(Shape{2, 0, 3}), Error);
    CHECK_THROWS_AS(t.reshaped(Shape{5, 5}), Error);
    CHECK(t.reshaped(Shape{24}).size() == 24);
}

TEST_CASE("tensor cast preserves values") {
    Tensor t(Shape{4});
    for (int64_t i = 0; i < 4; ++i) {
        t[i] = static_cast<float>(i) * 0.5f;
    }
    Tensor64 d = t.cast<double>();
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(d[i] == doctest::Approx(t[i]));
    }
}

TEST_CASE("index iterator walks row-major") {
    IndexIter it(Shape{2, 3});
    std::vector<std::pair<int64_t, int64_t>> seen;
    for (; !it.done(); it.next()) {
        seen.emplace_back(it.index()[0], it.index()[1]);
    }
    REQUIRE(seen.size() == 6);
    CHECK(seen.front() == std::pair<int64_t, int64_t>{0, 0});
    CHECK(seen[1] == std::pair<int64_t, int64_t>{0, 1});
    CHECK(seen.back() == std::pair<int64_t, int64_t>{1, 2});
}

TEST_CASE("rng: deterministic, stream-independent forks") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }

    Rng base(7);
    Rng f1 = base.fork(1);
    Rng f2 = base.fork(2);
    CHECK(f1.next_u64() != f2.next_u64());
    // Forking does not advance the parent.
    Rng base2(7);
    base2.fork(1);
    Rng base3(7);
    CHECK(base2.next_u64() == base3.next_u64());
}

TEST_CASE("rng: bounded draws and uniforms stay in range") {
    Rng rng(123);
    for (int i = 0; i < 1000; ++i) {
        CHECK(rng.next_below(7) < 7);
        double u = rng.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        double v = rng.uniform(2.0, 5.0);
        CHECK(v >= 2.0);
        CHECK(v < 5.0);
    }
}

TEST_CASE("rng: shuffle is a permutation") {
    std::vector<int> items{0, 1, 2, 3, 4, 5, 6, 7};
    Rng rng(9);
    rng.shuffle(items);
    std::set<int> unique(items.begin(), items.end());
    CHECK(unique.size() == 8);
}

TEST_CASE("mat4 column norms and bottom row") {
    Mat4 m = Mat4::diagonal(2.0, 3.0, 4.0);
    CHECK(m.column_norm(0) == doctest::Approx(2.0));
    CHECK(m.column_norm(2) == doctest::Approx(4.0));
    CHECK(m.bottom_row_is_0001());
    m.at(3, 0) = 1.0;
    CHECK_FALSE(m.bottom_row_is_0001());
}

TEST_CASE("hash_u64s: order sensitive and stable") {
    CHECK(hash_u64s({1, 2}) != hash_u64s({2, 1}));
    CHECK(hash_u64s({1, 2}) == hash_u64s({1, 2}));
}
