#include "doctest.h"
#include "support.hpp"

#include "slbfgs/curvature_memory.hpp"

using namespace slbfgs;

namespace {
Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }
}  // namespace

TEST_CASE("push_pair accepts positive curvature above threshold") {
    LbfgsMemory mem(3, 1.0);
    CHECK(mem.push_pair(v2(1, 0), v2(2, 0)));
    CHECK(mem.size() == 1);
}

TEST_CASE("push_pair rejects negative curvature and leaves memory unchanged") {
    LbfgsMemory mem(3, 0.01);
    REQUIRE(mem.push_pair(v2(0, 1), v2(0, 3)));
    const auto before = mem.pairs();
    CHECK_FALSE(mem.push_pair(v2(1, 0), v2(-1, 0)));
    REQUIRE(mem.size() == 1);
    CHECK(mem.pair(0).s == before[0].s);
    CHECK(mem.pair(0).y == before[0].y);
}

TEST_CASE("zero step is rejected") {
    LbfgsMemory mem(2);
    CHECK_FALSE(mem.push_pair(v2(0, 0), v2(1, 1)));
    CHECK(mem.empty());
}

TEST_CASE("full memory evicts the oldest pair") {
    LbfgsMemory mem(2);
    mem.push_pair(v2(1, 0), v2(1, 0));
    mem.push_pair(v2(0, 1), v2(0, 2));
    mem.push_pair(v2(1, 1), v2(3, 3));
    REQUIRE(mem.size() == 2);
    CHECK(mem.pair(0).s == v2(0, 1));
    CHECK(mem.pair(1).s == v2(1, 1));
}

TEST_CASE("dimension mismatch is a contract violation") {
    LbfgsMemory mem(2);
    CHECK_THROWS_AS(mem.push_pair(v2(1, 0), Vector::Ones(3)), ContractViolation);
    mem.push_pair(v2(1, 0), v2(1, 0));
    CHECK_THROWS_AS(mem.push_pair(Vector::Ones(3), Vector::Ones(3)), ContractViolation);
}

TEST_CASE("base vectors follow s-history, y-history, g ordering") {
    SUBCASE("m = 1") {
        LbfgsMemory mem(1);
        // s=(1,0), y=(0,1) has y's = 0 and never enters the memory.
        CHECK_FALSE(mem.push_pair(v2(1, 0), v2(0, 1)));
        mem.push_pair(v2(1, 0), v2(1, 1));
        const auto b = base_vectors(mem, v2(2, 2));
        REQUIRE(b.size() == 3);
        CHECK(b[0] == v2(1, 0));
        CHECK(b[1] == v2(1, 1));
        CHECK(b[2] == v2(2, 2));
    }
    SUBCASE("m = 0") {
        LbfgsMemory mem(0);
        const auto b = base_vectors(mem, v2(2, 2));
        REQUIRE(b.size() == 1);
        CHECK(b[0] == v2(2, 2));
    }
    SUBCASE("m = 2 insertion order") {
        LbfgsMemory mem(2);
        mem.push_pair(v2(1, 0), v2(2, 0));
        mem.push_pair(v2(0, 1), v2(0, 3));
        const auto b = base_vectors(mem, v2(5, 5));
        REQUIRE(b.size() == 5);
        CHECK(b[0] == v2(1, 0));
        CHECK(b[1] == v2(0, 1));
        CHECK(b[2] == v2(2, 0));
        CHECK(b[3] == v2(0, 3));
        CHECK(b[4] == v2(5, 5));
    }
    SUBCASE("not full") {
        LbfgsMemory mem(2);
        mem.push_pair(v2(1, 0), v2(2, 0));
        CHECK_THROWS_AS(base_vectors(mem, v2(1, 1)), ContractViolation);
    }
}

TEST_CASE("property: stored pairs always pass the cautious rule, size bounded, rejects are no-ops") {
    Rng rng(7);
    std::uniform_int_distribution<int> cap_dist(0, 6);
    for (int trial = 0; trial < 200; ++trial) {
        const auto cap = static_cast<std::size_t>(cap_dist(rng));
        const double eps = std::pow(10.0, -static_cast<double>(trial % 6));
        LbfgsMemory mem(cap, eps);
        std::size_t accepted = 0;
        for (int k = 0; k < 40; ++k) {
            const Vector s = testing::random_vector(rng, 4);
            const Vector y = testing::random_vector(rng, 4);
            const auto before = mem.pairs();
            const bool ok = mem.push_pair(s, y);
            if (!ok) {
                REQUIRE(mem.pairs().size() == before.size());
                for (std::size_t i = 0; i < before.size(); ++i) {
                    REQUIRE(mem.pair(i).s == before[i].s);
                    REQUIRE(mem.pair(i).y == before[i].y);
                }
            } else {
                ++accepted;
            }
            REQUIRE(mem.size() <= cap);
            REQUIRE(mem.size() == std::min(accepted, cap));
            for (const auto& p : mem.pairs()) REQUIRE(p.y.dot(p.s) >= eps * p.s.squaredNorm());
        }
    }
}
