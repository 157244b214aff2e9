#include "doctest.h"

#include <cmath>
#include <random>

#include "fastvar/prune.hpp"
#include "oracles.hpp"

using namespace fastvar;

TEST_CASE("keep_count") {
    CHECK(keep_count(10, 0.0) == 10);
    CHECK(keep_count(10, 0.25) == 7);  // 2.5 rounds up to 3 pruned
    CHECK(keep_count(10, 0.5) == 5);
    CHECK(keep_count(1, 0.9) == 1);    // never below one token
    CHECK(keep_count(3, 0.99) == 1);
    CHECK(keep_count(2304, 0.4) == 1382);
    CHECK(keep_count(4096, 0.5) == 2048);
    CHECK(keep_count(10, 1.0) == 0);
    CHECK_THROWS_AS(keep_count(10, -0.1), ArgumentError);
    CHECK_THROWS_AS(keep_count(10, 1.1), ArgumentError);
}

TEST_CASE("pivotal_score") {
    CHECK(pivotal_score(TokenMap(2, 2, 1, {1, 2, 3, 4})) == std::vector<Real>{1.5F, 0.5F, 0.5F, 1.5F});
    CHECK(pivotal_score(TokenMap(1, 1, 2, {3, 4})) == std::vector<Real>{0});
    // Mean is (1, 0); distances are 1, 1, 0, sqrt(8).
    const TokenMap x(2, 2, 2, {0, 0, 2, 0, 1, 0, 1, 0});
    const TokenMap y(1, 4, 2, {0, 1, 2, -1, 1, 0, 1, 0});
    const auto s = pivotal_score(x);
    CHECK(s == std::vector<Real>{1, 1, 0, 0});
    const auto t = pivotal_score(y);
    CHECK(t[0] == doctest::Approx(std::sqrt(2.0)));
    CHECK(t[1] == doctest::Approx(std::sqrt(2.0)));
    CHECK(t[2] == 0.0F);
    CHECK(t[3] == 0.0F);
    CHECK(pivotal_score(TokenMap::filled(3, 3, 4, 2.5F)) == std::vector<Real>(9, 0.0F));
}

TEST_CASE("select_pivotal") {
    SUBCASE("outlier is kept") {
        TokenMap x = TokenMap::filled(3, 3, 2, 0.0F);
        x.at(1, 2, 0) = 5;
        const Selection sel = select_pivotal(x, 0.85);
        CHECK(sel.decision.kept.indices() == std::vector<std::size_t>{5});
        CHECK(sel.kept_tokens.data() == std::vector<Real>{5, 0});
    }
    SUBCASE("ratio zero keeps everything in order") {
        std::mt19937_64 rng(1);
        const TokenMap x = oracle::random_map(rng, 3, 4, 5);
        const Selection sel = select_pivotal(x, 0.0);
        CHECK(sel.decision.kept == IndexList::all(12));
        CHECK(sel.kept_tokens.data() == x.data());
    }
    SUBCASE("constant map ties resolve to the first tokens") {
        const Selection sel = select_pivotal(TokenMap::filled(2, 3, 2, 1.0F), 0.5);
        CHECK(sel.decision.kept.indices() == std::vector<std::size_t>{0, 1, 2});
    }
    SUBCASE("hand example") {
        const Selection sel = select_pivotal(TokenMap(2, 2, 1, {1, 2, 3, 4}), 0.5);
        CHECK(sel.decision.kept.indices() == std::vector<std::size_t>{0, 3});
        CHECK(sel.kept_tokens.data() == std::vector<Real>{1, 4});
    }
    SUBCASE("ratio 1.0 is rejected") { CHECK_THROWS_AS(select_pivotal(TokenMap(2, 2, 1), 1.0), ArgumentError); }
    SUBCASE("random cases against brute force") {
        std::mt19937_64 rng(77);
        std::uniform_real_distribution<double> rd(0.0, 0.999);
        for (int trial = 0; trial < 300; ++trial) {
            const std::size_t h = 1 + trial % 7, w = 1 + trial % 9, d = 1 + trial % 4;
            TokenMap x = oracle::random_map(rng, h, w, d);
            if (trial % 5 == 0) {
                // Duplicate rows to provoke exact ties.
                for (std::size_t t = 1; t < x.tokens(); t += 2) {
                    const auto src = x.token(t - 1);
                    std::copy(src.begin(), src.end(), x.token(t).begin());
                }
            }
            const double r = rd(rng);
            const Selection sel = select_pivotal(x, r);
            CHECK(sel.decision.kept.indices() == oracle::brute_force_select(x, r));
            CHECK(sel.decision.keep() == keep_count(h * w, r));
            CHECK(sel.decision.total == h * w);
        }
    }
}

TEST_CASE("LayerCacheStore") {
    LayerCacheStore store(3);
    CHECK(store.step() == 3);
    CHECK_THROWS_AS(store.capture(2, 0, SublayerKind::Attention, TokenMap(2, 2, 1)), StateError);
    store.capture(3, 0, SublayerKind::Attention, TokenMap(2, 2, 1));
    CHECK(store.contains(0, SublayerKind::Attention));
    CHECK_FALSE(store.contains(0, SublayerKind::Ffn));
    CHECK_THROWS_AS(store.capture(3, 0, SublayerKind::Attention, TokenMap(2, 2, 1)), StateError);
    CHECK_THROWS_AS(store.capture(3, 0, SublayerKind::Ffn, TokenMap(3, 3, 1)), ArgumentError);
    CHECK_THROWS_AS(store.at(1, SublayerKind::Ffn), StateError);
    CHECK(store.size() == 1);
}

TEST_CASE("default caching step") {
    ScaleSchedule infinity = ScaleSchedule::from_sides({1, 2, 3, 4, 6, 9, 12, 16, 21, 27, 36, 48, 64}, ResizeMode::Nearest);
    infinity.texture_steps = 4;
    CHECK(make_prune_schedule(infinity, {0.4, 0.5, 1.0, 1.0}).effective_cache_step() == 9);
    ScaleSchedule hart = ScaleSchedule::from_sides({1, 2, 3, 4, 5, 6, 8, 10, 13, 16, 20, 24, 28, 32}, ResizeMode::Nearest);
    hart.texture_steps = 2;
    CHECK(make_prune_schedule(hart, {0.5, 0.75}).effective_cache_step() == 12);
}

TEST_CASE("restore_cached") {
    SUBCASE("hand example") {
        LayerCacheStore st(1);
        st.capture(1, 0, SublayerKind::Attention, TokenMap(1, 1, 1, {5}));
        const PruneDecision d{IndexList({3}, 4), 0.75, 4};
        CHECK(restore_cached(TokenMap(1, 1, 1, {9}), st, 0, SublayerKind::Attention, d, {2, 2}, ResizeMode::Nearest)
                  .data() == std::vector<Real>{5, 5, 5, 9});
    }
    SUBCASE("full keep ignores the cache") {
        LayerCacheStore st(1);
        st.capture(1, 0, SublayerKind::Ffn, TokenMap(1, 1, 1, {5}));
        const PruneDecision d{IndexList::all(4), 0.0, 4};
        const TokenMap y(1, 4, 1, {1, 2, 3, 4});
        CHECK(restore_cached(y, st, 0, SublayerKind::Ffn, d, {2, 2}, ResizeMode::Bilinear) == y.reshaped(2, 2));
    }
    LayerCacheStore store(1);
    store.capture(1, 0, SublayerKind::Ffn, TokenMap(1, 2, 1, {7, 8}));
    const PruneDecision dec{IndexList({1, 2}, 4), 0.5, 4};
    const TokenMap out =
        restore_cached(TokenMap(1, 2, 1, {-1, -2}), store, 0, SublayerKind::Ffn, dec, {2, 2}, ResizeMode::Nearest);
    CHECK(out.data() == std::vector<Real>{7, -1, -2, 8});

    SUBCASE("kept tokens equal fresh outputs, pruned tokens equal the upsampled cache") {
        std::mt19937_64 rng(4);
        for (int trial = 0; trial < 100; ++trial) {
            const TokenMap cached = oracle::random_map(rng, 2, 3, 2);
            LayerCacheStore st(2);
            st.capture(2, 1, SublayerKind::Attention, cached);
            const TokenMap x = oracle::random_map(rng, 4, 6, 2);
            const Selection sel = select_pivotal(x, 0.6);
            const TokenMap fresh = oracle::random_map(rng, 1, sel.decision.keep(), 2);
            const TokenMap r = restore_cached(fresh, st, 1, SublayerKind::Attention, sel.decision, {4, 6},
                                              ResizeMode::Nearest);
            const TokenMap up = resize(cached, {4, 6}, ResizeMode::Nearest);
            std::size_t j = 0;
            for (std::size_t t = 0; t < 24; ++t) {
                const bool kept = j < sel.decision.keep() && sel.decision.kept[j] == t;
                const auto got = r.token(t);
                const auto want = kept ? fresh.token(j) : up.token(t);
                CHECK(std::equal(got.begin(), got.end(), want.begin()));
                if (kept) ++j;
            }
        }
    }
    CHECK_THROWS_AS(restore_cached(TokenMap(1, 2, 1), store, 0, SublayerKind::Ffn, dec, {3, 3}, ResizeMode::Nearest),
                    ArgumentError);
}

TEST_CASE("make_prune_schedule") {
    ScaleSchedule base = ScaleSchedule::from_sides({1, 2, 3, 4, 6}, ResizeMode::Nearest);
    base.texture_steps = 3;
    ScaleSchedule infinity = ScaleSchedule::from_sides({1, 2, 3, 4, 6, 9, 12, 16, 21, 27, 36, 48, 64}, ResizeMode::Nearest);
    infinity.texture_steps = 4;
    const ScaleSchedule inf = make_prune_schedule(infinity, {0.4, 0.5, 1.0, 1.0});
    CHECK_FALSE(inf.is_skipped(11));
    CHECK(inf.is_skipped(12));
    CHECK(inf.is_skipped(13));
    ScaleSchedule two = ScaleSchedule::from_sides({1, 2, 3, 4}, ResizeMode::Nearest);
    two.texture_steps = 2;
    CHECK_NOTHROW(make_prune_schedule(two, {0.5, 0.75}));
    CHECK_THROWS_AS(make_prune_schedule(two, {0.75, 0.5}), ArgumentError);

    const ScaleSchedule s = make_prune_schedule(base, {0.2, 0.5, 1.0});
    const auto entries = prune_entries(s);
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].step == 3);
    CHECK(entries[0].ratio == 0.2);
    CHECK(entries[2].step == 5);
    CHECK(s.is_skipped(5));
    CHECK_THROWS_AS(make_prune_schedule(base, {0.5, 0.2, 1.0}), ArgumentError);
    CHECK_THROWS_AS(make_prune_schedule(base, {0.5, 1.0}), ArgumentError);
    CHECK_THROWS_AS(make_prune_schedule(base, {0.5, 1.0, 2.0}), ArgumentError);
}
