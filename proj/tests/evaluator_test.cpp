#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "kicrank/errors.hpp"
#include "kicrank/evaluator.hpp"
#include "kicrank/reranker.hpp"
#include "kicrank/synthetic.hpp"
#include "test_util.hpp"

using namespace kicrank;
using kicrank::testing::read_text;
using kicrank::testing::TempDir;
using kicrank::testing::write_text;

namespace {

struct Fixture {
    KnowledgeGraph kg;
    RetrieverModel model;

    Fixture() : kg(KnowledgeGraph::build(synthetic::compositional_rings(60, 10, 0.2, 4))) {
        TrainConfig tc;
        tc.dim = 16;
        tc.batch_size = 32;
        tc.negatives_per_positive = 8;
        tc.steps = 150;
        model = RetrieverModel::initialize(kg.num_entities(), kg.num_relations(), tc.dim, tc.gamma, tc.seed);
        train(model, kg, tc);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

PipelineResult run(const Fixture& f, Gateway& gw, std::size_t m, Ablations ablations = {}, std::size_t jobs = 1) {
    const Verbalizer v(f.kg, Scheme::FreebaseOfJoin);
    DemonstrationEngine engine(v, 1);
    PipelineConfig pc;
    pc.m = m;
    pc.ablations = ablations;
    pc.jobs = jobs;
    pc.seed = 9;
    return run_pipeline(f.kg, f.model, v, engine, PromptTemplates::defaults(), gw, pc, "test");
}

Gateway identity_gateway() {
    GatewayConfig c;
    c.intermediate_turns = false;
    return Gateway(c, std::make_unique<IdentityBackend>());
}

Gateway oracle_gateway(const KnowledgeGraph& kg) {
    GatewayConfig c;
    c.intermediate_turns = false;
    const auto queries = make_queries(kg, "test");
    return Gateway(c, std::make_unique<OracleBackend>(oracle_answers(kg, queries)));
}

void expect_same_metrics(const Metrics& a, const Metrics& b) {
    EXPECT_EQ(a.mrr, b.mrr);
    EXPECT_EQ(a.hits1, b.hits1);
    EXPECT_EQ(a.hits3, b.hits3);
    EXPECT_EQ(a.hits10, b.hits10);
    EXPECT_EQ(a.count, b.count);
}

void expect_same_result(const QueryResult& a, const QueryResult& b) {
    EXPECT_EQ(a.query, b.query);
    EXPECT_EQ(a.top_m_before, b.top_m_before);
    EXPECT_EQ(a.llm_order, b.llm_order);
    EXPECT_EQ(a.retriever_rank, b.retriever_rank);
    EXPECT_EQ(a.filtered_rank, b.filtered_rank);
    EXPECT_EQ(a.repairs, b.repairs);
    EXPECT_EQ(a.score_failures, b.score_failures);
}

}  // namespace

TEST(Merge, Examples) {
    const std::vector<EntityId> r = {10, 11, 12, 13};
    EXPECT_EQ(rerank_merge(r, std::vector<EntityId>{11, 10}, 2), (std::vector<EntityId>{11, 10, 12, 13}));
    EXPECT_EQ(rerank_merge(r, std::vector<EntityId>{13, 12, 11, 10}, 4), (std::vector<EntityId>{13, 12, 11, 10}));
    EXPECT_EQ(rerank_merge(r, std::vector<EntityId>{10, 11, 12}, 3), r);
}

TEST(Merge, RejectsNonPermutations) {
    const std::vector<EntityId> r = {10, 11, 12, 13};
    EXPECT_THROW(rerank_merge(r, std::vector<EntityId>{10, 12}, 2), ContractViolation);
    EXPECT_THROW(rerank_merge(r, std::vector<EntityId>{10, 10}, 2), ContractViolation);
    EXPECT_THROW(rerank_merge(r, std::vector<EntityId>{10}, 2), ContractViolation);
    EXPECT_THROW(rerank_merge(r, std::vector<EntityId>{10, 11, 12, 13, 14}, 5), ContractViolation);
}

TEST(Merge, TailUnchangedForRandomPermutations) {
    Rng rng(2);
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = 1 + rng.uniform_index(40);
        std::vector<EntityId> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order.begin(), order.end());
        const auto m = 1 + rng.uniform_index(n);
        std::vector<EntityId> llm(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
        rng.shuffle(llm.begin(), llm.end());
        const auto merged = rerank_merge(order, llm, m);
        ASSERT_EQ(merged.size(), n);
        ASSERT_TRUE(std::equal(llm.begin(), llm.end(), merged.begin()));
        ASSERT_TRUE(std::equal(order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                               merged.begin() + static_cast<std::ptrdiff_t>(m)));
    }
}

TEST(FilteredRank, Examples) {
    // x=1, y=2, answer=3
    EXPECT_EQ(filtered_rank(std::vector<EntityId>{1, 2, 3}, 3, std::vector<EntityId>{1, 2, 3}), 1u);
    EXPECT_EQ(filtered_rank(std::vector<EntityId>{1, 3}, 3, std::vector<EntityId>{3}), 2u);
    // k1=1, u1=2, k2=3, u2=4, answer=5
    EXPECT_EQ(filtered_rank(std::vector<EntityId>{1, 2, 3, 4, 5}, 5, std::vector<EntityId>{1, 3, 5}), 3u);
    EXPECT_THROW(filtered_rank(std::vector<EntityId>{1, 2}, 5, std::vector<EntityId>{}), ContractViolation);
}

TEST(FilteredRank, NeverAboveRawRank) {
    Rng rng(8);
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = 1 + rng.uniform_index(30);
        std::vector<EntityId> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order.begin(), order.end());
        const EntityId answer = static_cast<EntityId>(rng.uniform_index(n));
        std::vector<EntityId> known;
        for (EntityId e = 0; e < n; ++e)
            if (e == answer || rng.uniform_real() < 0.3) known.push_back(e);
        const auto raw = static_cast<std::size_t>(std::find(order.begin(), order.end(), answer) - order.begin()) + 1;
        const auto rank = filtered_rank(order, answer, known);
        ASSERT_GE(rank, 1u);
        ASSERT_LE(rank, raw);
    }
}

TEST(Metrics, Examples) {
    auto m = aggregate_metrics(std::vector<std::size_t>{1});
    EXPECT_EQ(m.mrr, 1.0);
    EXPECT_EQ(m.hits1, 1.0);
    EXPECT_EQ(m.hits10, 1.0);
    m = aggregate_metrics(std::vector<std::size_t>{2, 4});
    EXPECT_DOUBLE_EQ(m.mrr, 0.375);
    EXPECT_EQ(m.hits1, 0.0);
    EXPECT_EQ(m.hits3, 0.5);
    EXPECT_EQ(m.hits10, 1.0);
    EXPECT_EQ(m.count, 2u);
    EXPECT_EQ(aggregate_metrics(std::vector<std::size_t>{11}).hits10, 0.0);
    EXPECT_EQ(aggregate_metrics(std::vector<std::size_t>{10}).hits10, 1.0);
    EXPECT_THROW(aggregate_metrics(std::vector<std::size_t>{}), ContractViolation);
    EXPECT_THROW(aggregate_metrics(std::vector<std::size_t>{1, 0}), ContractViolation);
}

TEST(Longtail, DegreeGroups) {
    EXPECT_EQ(degree_group(0), 0u);
    EXPECT_EQ(degree_group(1), 1u);
    EXPECT_EQ(degree_group(2), 1u);
    EXPECT_EQ(degree_group(3), 2u);
    EXPECT_EQ(degree_group(8), 3u);
    for (std::size_t d = 0; d < 5000; ++d) {
        EXPECT_EQ(degree_group(d), static_cast<std::size_t>(std::floor(std::log2(static_cast<double>(d) + 1.0))));
    }
}

TEST(Longtail, SharedGroupCountedOnce) {
    RawDataset d;
    // a and b both have degree 3 (group 2); c has degree 1 (group 1).
    d.train = {{"a", "r", "b"}, {"a", "s", "b"}, {"a", "r", "x"}, {"b", "r", "y"}, {"c", "r", "z"}};
    d.test = {{"a", "t", "b"}, {"c", "t", "a"}};
    const auto kg = KnowledgeGraph::build(d);
    const auto queries = make_queries(kg, "test");
    std::vector<QueryResult> results;
    for (const auto& q : queries) {
        QueryResult r;
        r.query = q;
        r.filtered_rank = r.retriever_rank = 1;
        results.push_back(r);
    }
    const auto groups = longtail_report(results, kg);
    std::map<std::size_t, std::size_t> counts;
    std::size_t total = 0;
    for (const auto& g : groups) {
        counts[g.group] = g.metrics.count;
        total += g.metrics.count;
    }
    EXPECT_EQ(counts[2], queries.size());
    EXPECT_EQ(counts[1], 2u);
    EXPECT_GE(total, results.size());
}

TEST(Pipeline, IdentityEqualsRetrieverOnly) {
    const auto& f = fixture();
    const auto baseline = evaluate_retriever(f.kg, f.model, "test");
    ASSERT_GT(baseline.query_count, 20u);
    for (std::size_t m : {1u, 5u, 10u}) {
        auto gw = identity_gateway();
        const auto out = run(f, gw, m);
        expect_same_metrics(out.report.reranked, baseline.reranked);
        expect_same_metrics(out.report.retriever, baseline.retriever);
        for (const auto& r : out.results) {
            EXPECT_EQ(r.llm_order, r.top_m_before);
            EXPECT_EQ(r.filtered_rank, r.retriever_rank);
        }
    }
}

TEST(Pipeline, OracleHitsAtOneEqualsRetrieverHitsAtM) {
    const auto& f = fixture();
    double last = -1.0;
    for (std::size_t m : {1u, 3u, 10u, 30u}) {
        auto gw = oracle_gateway(f.kg);
        const auto out = run(f, gw, m);
        std::size_t within = 0;
        for (const auto& r : out.results) within += r.retriever_rank <= m ? 1 : 0;
        EXPECT_DOUBLE_EQ(out.report.reranked.hits1,
                         static_cast<double>(within) / static_cast<double>(out.results.size()));
        EXPECT_GE(out.report.reranked.hits1, last);
        last = out.report.reranked.hits1;
        for (const auto& r : out.results) EXPECT_LE(r.filtered_rank, r.retriever_rank);
    }
}

TEST(Pipeline, AblationsLeaveMergeAndMetricsPathAlone) {
    const auto& f = fixture();
    const auto baseline = evaluate_retriever(f.kg, f.model, "test");
    for (int which = 0; which < 3; ++which) {
        Ablations a;
        a.no_icl = which == 0;
        a.trivial_prompt = which == 1;
        a.random_demos = which == 2;
        auto gw = identity_gateway();
        expect_same_metrics(run(f, gw, 10, a).report.reranked, baseline.reranked);
    }
    Ablations shuffled;
    shuffled.shuffle_candidates = true;
    auto gw = oracle_gateway(f.kg);
    const auto out = run(f, gw, 10, shuffled);
    auto gw2 = oracle_gateway(f.kg);
    const auto plain = run(f, gw2, 10);
    EXPECT_EQ(out.report.reranked.hits1, plain.report.reranked.hits1);
    bool any_moved = false;
    for (std::size_t i = 0; i < out.results.size(); ++i) {
        auto a = out.results[i].top_m_before;
        auto b = plain.results[i].top_m_before;
        any_moved = any_moved || a != b;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        EXPECT_EQ(a, b);
    }
    EXPECT_TRUE(any_moved);
}

TEST(Pipeline, ReproducibleAcrossJobCounts) {
    const auto& f = fixture();
    Ablations a;
    a.shuffle_candidates = true;
    a.random_demos = true;
    auto gw1 = identity_gateway();
    auto gw4 = identity_gateway();
    const auto one = run(f, gw1, 10, a, 1);
    const auto four = run(f, gw4, 10, a, 4);
    ASSERT_EQ(one.results.size(), four.results.size());
    for (std::size_t i = 0; i < one.results.size(); ++i) expect_same_result(one.results[i], four.results[i]);
}

TEST(Pipeline, MaxQueriesLimitsWork) {
    const auto& f = fixture();
    auto gw = identity_gateway();
    const Verbalizer v(f.kg, Scheme::FreebaseOfJoin);
    DemonstrationEngine engine(v, 1);
    PipelineConfig pc;
    pc.max_queries = 5;
    const auto out = run_pipeline(f.kg, f.model, v, engine, PromptTemplates::defaults(), gw, pc, "test");
    EXPECT_EQ(out.results.size(), 5u);
    pc.m = 0;
    EXPECT_THROW(run_pipeline(f.kg, f.model, v, engine, PromptTemplates::defaults(), gw, pc, "test"), ConfigError);
}

TEST(Predictions, RoundTrip) {
    const auto& f = fixture();
    auto gw = oracle_gateway(f.kg);
    auto out = run(f, gw, 5);
    out.results[0].repairs = RepairFlags{2, 1, false};
    out.results[1].repairs.hard_failure = true;
    out.results[1].score_failures = 3;
    TempDir dir;
    write_predictions(dir / "p.jsonl", f.kg, out.results);
    const auto back = read_predictions(dir / "p.jsonl", f.kg);
    ASSERT_EQ(back.size(), out.results.size());
    for (std::size_t i = 0; i < back.size(); ++i) expect_same_result(back[i], out.results[i]);

    const auto first = nlohmann::json::parse(read_text(dir / "p.jsonl").substr(0, read_text(dir / "p.jsonl").find('\n')));
    for (const auto* key : {"query", "top_m_before", "R_LLM", "retriever_rank", "filtered_rank", "repairs"}) {
        EXPECT_TRUE(first.contains(key)) << key;
    }

    write_text(dir / "bad.jsonl", "{\"query\": 1}\n");
    EXPECT_THROW(read_predictions(dir / "bad.jsonl", f.kg), DatasetError);
    write_text(dir / "unknown.jsonl",
               R"({"query":{"head":"nope","relation":"/ring/step/next","tail":"e1","direction":"tail"},)"
               R"("top_m_before":[],"R_LLM":[],"retriever_rank":1,"filtered_rank":1,)"
               R"("repairs":{"dropped":0,"appended":0,"hard_failure":false,"score_failures":0}})"
               "\n");
    EXPECT_THROW(read_predictions(dir / "unknown.jsonl", f.kg), DatasetError);
}

TEST(Reports, JsonAndCsvShapes) {
    const auto& f = fixture();
    auto gw = identity_gateway();
    const auto out = run(f, gw, 10);
    const auto doc = nlohmann::json::parse(report_json(out.report));
    EXPECT_DOUBLE_EQ(doc["reranked"]["MRR"].get<double>(), out.report.reranked.mrr);
    const auto csv = report_csv(out.report);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "scope,group,metric,value");
    EXPECT_NE(csv.find("reranked,all,MRR,"), std::string::npos);
    EXPECT_NE(csv.find("retriever,all,Hits@10,"), std::string::npos);
    EXPECT_NE(csv.find("repairs,all,"), std::string::npos);

    const auto groups = longtail_report(out.results, f.kg);
    ASSERT_FALSE(groups.empty());
    const auto lt = longtail_csv(groups);
    EXPECT_EQ(static_cast<std::size_t>(std::count(lt.begin(), lt.end(), '\n')), 1 + 4 * groups.size());
    EXPECT_EQ(nlohmann::json::parse(longtail_json(groups)).size(), groups.size());
}
