#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "kicrank/bm25.hpp"
#include "kicrank/demos.hpp"
#include "kicrank/rng.hpp"
#include "kicrank/synthetic.hpp"
#include "kicrank/verbalizer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace kicrank;
using kicrank::testing::naive_bm25;
using kicrank::testing::reference_diversity;
using kicrank::testing::TempDir;
using kicrank::testing::write_text;

namespace {

RawDataset raw(std::vector<RawTriple> train, std::vector<RawTriple> test = {}) {
    RawDataset d;
    d.train = std::move(train);
    d.test = std::move(test);
    return d;
}

std::vector<Triple> random_pool(Rng& rng) {
    const auto n = rng.uniform_index(30);
    const auto entities = 1 + rng.uniform_index(12);
    std::vector<Triple> pool;
    for (std::uint64_t i = 0; i < n; ++i) {
        pool.push_back({static_cast<EntityId>(rng.uniform_index(entities)), 0,
                        static_cast<EntityId>(rng.uniform_index(entities))});
    }
    return pool;
}

}  // namespace

TEST(Pools, AnalogyPoolFiltersByRelation) {
    const auto kg = KnowledgeGraph::build(raw({{"a", "r", "b"}, {"c", "r", "d"}, {"a", "s", "b"}}, {{"a", "r", "x"}}));
    const auto pool = build_analogy_pool(kg, *kg.find_relation("r"));
    ASSERT_EQ(pool.size(), 2u);
    EXPECT_EQ(kg.entities().name(kg.known_triple(pool[0]).tail), "b");
    EXPECT_EQ(kg.entities().name(kg.known_triple(pool[1]).head), "c");
}

TEST(Pools, RelationOnlyInTestGivesEmptyPool) {
    const auto kg = KnowledgeGraph::build(raw({{"a", "r", "b"}}, {{"a", "t", "b"}}));
    EXPECT_TRUE(build_analogy_pool(kg, *kg.find_relation("t")).empty());
}

TEST(Pools, SupplementPoolHeadThenTail) {
    const auto kg = KnowledgeGraph::build(raw({{"c", "s", "a"}, {"a", "r", "b"}, {"a", "r", "a"}}));
    const auto a = *kg.find_entity("a");
    const auto pool = build_supplement_pool(kg, a);
    ASSERT_EQ(pool.size(), 3u);
    EXPECT_EQ(kg.known_triple(pool[0]).head, a);
    EXPECT_EQ(kg.known_triple(pool[1]).head, a);
    EXPECT_EQ(kg.known_triple(pool[1]).tail, a);  // self-loop listed once
    EXPECT_EQ(kg.entities().name(kg.known_triple(pool[2]).head), "c");
}

TEST(Pools, IsolatedEntityHasEmptySupplementPool) {
    const auto kg = KnowledgeGraph::build(raw({{"a", "r", "b"}}, {{"z", "r", "a"}}));
    EXPECT_TRUE(build_supplement_pool(kg, *kg.find_entity("z")).empty());
}

TEST(Diversity, HandSimulatedExample) {
    // a=0, b=1, c=2, d=3, e=4
    const std::vector<Triple> pool = {{0, 0, 1}, {0, 0, 2}, {3, 0, 4}};
    Rng rng(0);
    EXPECT_EQ(diversity_order_from(pool, 0, rng), (std::vector<std::size_t>{0, 2, 1}));
}

TEST(Diversity, SingleTriple) {
    const std::vector<Triple> pool = {{5, 1, 6}};
    Rng rng(3);
    EXPECT_EQ(diversity_order(pool, rng), std::vector<std::size_t>{0});
}

TEST(Diversity, MatchesReferenceOnRandomPools) {
    Rng pools(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto pool = random_pool(pools);
        const auto seed = pools.next();
        Rng a(seed), b(seed);
        const auto got = diversity_order(pool, a);
        const auto want = reference_diversity(pool, b);
        ASSERT_EQ(got, want) << "trial " << trial;
        // Permutation and replayable minimality.
        std::vector<std::size_t> sorted = got;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) ASSERT_EQ(sorted[i], i);
        std::map<EntityId, long> counter;
        std::vector<bool> used(pool.size(), false);
        for (std::size_t k = 0; k < got.size(); ++k) {
            const auto sum = [&](std::size_t i) { return counter[pool[i].head] + counter[pool[i].tail]; };
            if (k > 0) {
                for (std::size_t i = 0; i < pool.size(); ++i) {
                    if (!used[i]) ASSERT_LE(sum(got[k]), sum(i));
                }
            }
            used[got[k]] = true;
            ++counter[pool[got[k]].head];
            ++counter[pool[got[k]].tail];
        }
    }
}

TEST(Diversity, OrderAnalogyIsDeterministicPermutation) {
    const auto kg = KnowledgeGraph::build(synthetic::random_graph(30, 3, 120, 5));
    for (RelationId r = 0; r < kg.num_relations(); ++r) {
        const auto pool = build_analogy_pool(kg, r);
        const auto a = order_analogy(kg, pool, 77);
        EXPECT_EQ(a, order_analogy(kg, pool, 77));
        auto sorted = a;
        std::sort(sorted.begin(), sorted.end());
        auto expected = pool;
        std::sort(expected.begin(), expected.end());
        EXPECT_EQ(sorted, expected);
    }
}

TEST(Bm25, SingleDocumentIdf) {
    // N = 1, df = 1: ln((1 - 1 + 0.5) / (1 + 0.5) + 1) = ln(4/3).
    const std::vector<std::vector<std::string>> docs = {{"x"}};
    const CorpusStats stats(docs);
    EXPECT_NEAR(stats.idf("x"), std::log(4.0 / 3.0), 1e-12);
    EXPECT_NEAR(stats.idf("x"), 0.2877, 1e-4);
    EXPECT_NEAR(stats.idf("unseen"), std::log(1.5 / 0.5 + 1.0), 1e-12);
}

TEST(Bm25, AbsentTermContributesNothing) {
    const std::vector<std::vector<std::string>> docs = {{"a", "b"}, {"c"}};
    const CorpusStats stats(docs);
    EXPECT_EQ(bm25_score(docs[0], std::vector<std::string>{"zzz"}, stats), 0.0);
}

TEST(Bm25, Tokenize) {
    EXPECT_EQ(tokenize("The /tv/tv_program, Café!"),
              (std::vector<std::string>{"the", "tv", "tv", "program", "café"}));
    EXPECT_TRUE(tokenize(" -- ").empty());
}

TEST(Bm25, MatchesNaiveOracleOnRandomCorpora) {
    Rng rng(9);
    const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f", "g"};
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::vector<std::string>> docs(1 + rng.uniform_index(8));
        for (auto& d : docs) {
            const auto len = 1 + rng.uniform_index(10);
            for (std::uint64_t i = 0; i < len; ++i) d.push_back(vocab[rng.uniform_index(vocab.size())]);
        }
        std::vector<std::string> query;
        for (std::uint64_t i = 0, n = 1 + rng.uniform_index(5); i < n; ++i) {
            query.push_back(vocab[rng.uniform_index(vocab.size())]);
        }
        const CorpusStats stats(docs);
        for (std::size_t d = 0; d < docs.size(); ++d) {
            const double got = bm25_score(docs[d], query, stats);
            ASSERT_NEAR(got, naive_bm25(docs, d, query), 1e-9);
            ASSERT_GE(got, 0.0);
        }
    }
}

TEST(Bm25, AddingQueryTermNeverLowersScore) {
    Rng rng(13);
    const std::vector<std::string> vocab = {"a", "b", "c", "d"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::vector<std::string>> docs(2 + rng.uniform_index(5));
        for (auto& d : docs) {
            for (std::uint64_t i = 0, n = 1 + rng.uniform_index(6); i < n; ++i) {
                d.push_back(vocab[rng.uniform_index(vocab.size())]);
            }
        }
        const std::vector<std::string> query = {vocab[rng.uniform_index(vocab.size())]};
        const CorpusStats before(docs);
        const double s0 = bm25_score(docs[0], query, before);
        // Same corpus statistics, one more occurrence in the document.
        auto doc = docs[0];
        doc.push_back(query[0]);
        const double s1 = bm25_score(doc, query, before);
        ASSERT_GE(s1 + 1e-12, s0);
    }
}

TEST(Supplement, NoOverlapKeepsPoolOrder) {
    const std::vector<TripleId> pool = {4, 2, 9};
    const std::vector<std::string> texts = {"alpha", "beta", "gamma"};
    EXPECT_EQ(order_supplement(pool, texts, "delta"), pool);
}

TEST(Supplement, ToyCorpusMatchesNaiveOracle) {
    const std::vector<TripleId> pool = {10, 11, 12};
    const std::vector<std::string> texts = {"paris is the capital of france", "berlin is a city",
                                            "france borders germany and the capital is paris"};
    const std::string query = "what is the capital of france";
    std::vector<std::vector<std::string>> docs;
    for (const auto& t : texts) docs.push_back(tokenize(t));
    const auto q = tokenize(query);
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < docs.size(); ++i) scored.emplace_back(-naive_bm25(docs, i, q), i);
    std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first < b.first; });
    std::vector<TripleId> expected;
    for (const auto& [s, i] : scored) expected.push_back(pool[i]);
    EXPECT_EQ(order_supplement(pool, texts, query), expected);
}

TEST(Supplement, SingleElement) {
    const std::vector<TripleId> pool = {3};
    const std::vector<std::string> texts = {"x"};
    EXPECT_EQ(order_supplement(pool, texts, "x"), pool);
}

TEST(RandomDemonstrations, DistinctAndBounded) {
    const auto kg = KnowledgeGraph::build(synthetic::random_graph(20, 2, 60, 1));
    Rng rng(4);
    const auto picks = random_demonstrations(kg, 10, rng);
    ASSERT_EQ(picks.size(), 10u);
    auto sorted = picks;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (auto id : picks) EXPECT_LT(id, kg.known_triples().size());
    Rng again(4);
    EXPECT_EQ(random_demonstrations(kg, 1000, again).size(), kg.known_triples().size());
}

TEST(Engine, OrdersArePermutationsOfPools) {
    const auto kg = KnowledgeGraph::build(synthetic::random_graph(30, 3, 120, 8));
    const Verbalizer v(kg, Scheme::FreebaseOfJoin);
    DemonstrationEngine engine(v, 5);
    for (const auto& q : make_queries(kg, "test")) {
        const auto set = engine.for_query(q);
        auto a = set.analogy_order, s = set.supplement_order;
        auto pa = set.analogy_pool, ps = set.supplement_pool;
        std::sort(a.begin(), a.end());
        std::sort(s.begin(), s.end());
        std::sort(pa.begin(), pa.end());
        std::sort(ps.begin(), ps.end());
        EXPECT_EQ(a, pa);
        EXPECT_EQ(s, ps);
    }
}

TEST(Engine, CacheRoundTripIsByteIdentical) {
    TempDir dir;
    const auto kg = KnowledgeGraph::build(synthetic::random_graph(30, 3, 120, 8));
    const Verbalizer v(kg, Scheme::FreebaseOfJoin);
    auto run = [&](const std::string& name) {
        DemonstrationEngine engine(v, 5);
        for (RelationId r = 0; r < kg.num_relations(); ++r) engine.analogy_order(r);
        for (const auto& q : make_queries(kg, "test")) engine.supplement_order(q);
        engine.cache().write(dir / name);
        return kicrank::testing::read_text(dir / name);
    };
    const auto first = run("a.jsonl");
    EXPECT_EQ(first, run("b.jsonl"));

    const auto loaded = DemoCache::read(dir / "a.jsonl");
    DemonstrationEngine warm(v, 999, loaded);  // different seed: cached orders must win
    for (RelationId r = 0; r < kg.num_relations(); ++r) {
        EXPECT_EQ(warm.analogy_order(r), loaded.analogy.at(kg.relations().name(r)));
    }
}

TEST(Engine, CorruptCacheLineSkipped) {
    TempDir dir;
    write_text(dir / "c.jsonl",
               "{\"kind\":\"analogy\",\"key\":\"r\",\"triples\":[1,0]}\nnot json\n"
               "{\"kind\":\"supplement\",\"key\":\"a\\tr\\ttail\",\"triples\":[2]}\n");
    const auto cache = DemoCache::read(dir / "c.jsonl");
    EXPECT_EQ(cache.analogy.at("r"), (std::vector<TripleId>{1, 0}));
    EXPECT_EQ(cache.supplement.size(), 1u);
}
