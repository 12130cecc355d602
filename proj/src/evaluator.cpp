#include "kicrank/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <exception>
#include <fstream>
#include <map>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "kicrank/errors.hpp"
#include "kicrank/reranker.hpp"
#include "kicrank/rng.hpp"

namespace kicrank {

using nlohmann::json;

std::vector<EntityId> rerank_merge(std::span<const EntityId> retriever_order, std::span<const EntityId> llm_order,
                                   std::size_t m) {
    if (m > retriever_order.size() || llm_order.size() != m) {
        throw ContractViolation(fmt::format("R_LLM has {} entities, expected the top {} of {}", llm_order.size(), m,
                                            retriever_order.size()));
    }
    std::vector<EntityId> top(retriever_order.begin(), retriever_order.begin() + static_cast<std::ptrdiff_t>(m));
    std::vector<EntityId> given(llm_order.begin(), llm_order.end());
    std::sort(top.begin(), top.end());
    std::sort(given.begin(), given.end());
    if (top != given) throw ContractViolation("R_LLM is not a permutation of the retriever's top m");

    std::vector<EntityId> merged(llm_order.begin(), llm_order.end());
    merged.insert(merged.end(), retriever_order.begin() + static_cast<std::ptrdiff_t>(m), retriever_order.end());
    return merged;
}

std::size_t filtered_rank(std::span<const EntityId> order, EntityId answer, std::span<const EntityId> known) {
    std::size_t rank = 1;
    for (EntityId e : order) {
        if (e == answer) return rank;
        if (!std::binary_search(known.begin(), known.end(), e)) ++rank;
    }
    throw ContractViolation(fmt::format("ground truth {} is not in the ranking", answer));
}

Metrics aggregate_metrics(std::span<const std::size_t> ranks) {
    if (ranks.empty()) throw ContractViolation("cannot aggregate an empty rank list");
    Metrics m;
    for (std::size_t r : ranks) {
        if (r == 0) throw ContractViolation("ranks are 1-based");
        m.mrr += 1.0 / static_cast<double>(r);
        m.hits1 += r <= 1 ? 1.0 : 0.0;
        m.hits3 += r <= 3 ? 1.0 : 0.0;
        m.hits10 += r <= 10 ? 1.0 : 0.0;
    }
    const auto n = static_cast<double>(ranks.size());
    m.mrr /= n;
    m.hits1 /= n;
    m.hits3 /= n;
    m.hits10 /= n;
    m.count = ranks.size();
    return m;
}

std::size_t degree_group(std::size_t degree) { return std::bit_width(degree + 1) - 1; }

std::vector<GroupMetrics> longtail_report(std::span<const QueryResult> results, const KnowledgeGraph& kg) {
    std::map<std::size_t, std::vector<std::size_t>> by_group;
    for (const auto& r : results) {
        const auto t = r.query.triple();
        const auto gh = degree_group(kg.degree(t.head));
        const auto gt = degree_group(kg.degree(t.tail));
        by_group[gh].push_back(r.filtered_rank);
        if (gt != gh) by_group[gt].push_back(r.filtered_rank);
    }
    std::vector<GroupMetrics> out;
    for (const auto& [group, ranks] : by_group) out.push_back({group, aggregate_metrics(ranks)});
    return out;
}

EvalReport summarize(std::span<const QueryResult> results) {
    EvalReport report;
    report.query_count = results.size();
    if (results.empty()) return report;
    std::vector<std::size_t> reranked, retriever, rr_tail, rr_head, rt_tail, rt_head;
    for (const auto& r : results) {
        reranked.push_back(r.filtered_rank);
        retriever.push_back(r.retriever_rank);
        const bool tail = r.query.direction == Direction::TailMissing;
        (tail ? rr_tail : rr_head).push_back(r.filtered_rank);
        (tail ? rt_tail : rt_head).push_back(r.retriever_rank);
        report.repairs.dropped += r.repairs.dropped;
        report.repairs.appended += r.repairs.appended;
        report.repairs.hard_failures += r.repairs.hard_failure ? 1 : 0;
        report.repairs.score_failures += r.score_failures;
        const bool repaired = r.repairs.dropped > 0 || r.repairs.appended > 0 || r.repairs.hard_failure ||
                              r.score_failures > 0;
        report.repairs.repaired_queries += repaired ? 1 : 0;
    }
    report.reranked = aggregate_metrics(reranked);
    report.retriever = aggregate_metrics(retriever);
    if (!rr_tail.empty()) report.reranked_tail = aggregate_metrics(rr_tail);
    if (!rr_head.empty()) report.reranked_head = aggregate_metrics(rr_head);
    if (!rt_tail.empty()) report.retriever_tail = aggregate_metrics(rt_tail);
    if (!rt_head.empty()) report.retriever_head = aggregate_metrics(rt_head);
    return report;
}

namespace {

std::vector<Query> split_queries(const KnowledgeGraph& kg, std::string_view split, std::optional<std::size_t> limit) {
    auto queries = make_queries(kg, split);
    if (limit && *limit < queries.size()) queries.resize(*limit);
    return queries;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    const auto workers = std::max<std::size_t>(1, std::min(jobs, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n && !failed; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

DemonstrationSet random_set(const KnowledgeGraph& kg, const Query& q, Rng& rng) {
    DemonstrationSet set;
    const auto na = build_analogy_pool(kg, q.relation).size();
    const auto ns = build_supplement_pool(kg, q.anchor).size();
    set.analogy_pool = random_demonstrations(kg, na, rng);
    set.supplement_pool = random_demonstrations(kg, ns, rng);
    set.analogy_order = set.analogy_pool;
    set.supplement_order = set.supplement_pool;
    return set;
}

}  // namespace

PipelineResult run_pipeline(const KnowledgeGraph& kg, const RetrieverModel& model, const Verbalizer& verbalizer,
                            DemonstrationEngine& demos, const PromptTemplates& templates, Gateway& gateway,
                            const PipelineConfig& config, std::string_view split) {
    if (config.m == 0) throw ConfigError("re-ranking window m must be positive");
    const auto queries = split_queries(kg, split, config.max_queries);
    const auto m = std::min(config.m, kg.num_entities());

    ConversationOptions options = config.conversation;
    options.include_demonstrations = options.include_demonstrations && !config.ablations.no_icl;
    options.trivial = options.trivial || config.ablations.trivial_prompt;

    PipelineResult out;
    out.results.resize(queries.size());
    std::atomic<std::size_t> done{0};
    parallel_for(queries.size(), config.jobs, [&](std::size_t i) {
        const auto& q = queries[i];
        const auto ranking = rank_all(model, q);
        const auto known = kg.known_answers(q.anchor, q.relation, q.direction);
        const auto top = ranking.head(m);

        QueryResult r;
        r.query = q;
        r.retriever_rank = filtered_rank(ranking.order, q.answer, known);
        r.top_m_before.assign(top.begin(), top.end());
        if (config.ablations.shuffle_candidates) {
            auto rng = Rng::substream(config.seed, "shuffle", i);
            rng.shuffle(r.top_m_before.begin(), r.top_m_before.end());
        }

        DemonstrationSet set;
        if (options.include_demonstrations) {
            if (config.ablations.random_demos) {
                auto rng = Rng::substream(config.seed, "random_demos", i);
                set = random_set(kg, q, rng);
            } else {
                set = demos.for_query(q);
            }
        }
        auto outcome = rerank_candidates(q, set, r.top_m_before, verbalizer, templates, options, gateway);
        r.llm_order = std::move(outcome.order);
        r.repairs = outcome.repairs;
        r.score_failures = outcome.score_failures;
        const auto merged = rerank_merge(ranking.order, r.llm_order, m);
        r.filtered_rank = filtered_rank(merged, q.answer, known);
        out.results[i] = std::move(r);

        const auto n = ++done;
        if (n % 100 == 0 || n == queries.size()) spdlog::info("re-ranked {}/{} queries", n, queries.size());
    });
    out.report = summarize(out.results);
    return out;
}

EvalReport evaluate_retriever(const KnowledgeGraph& kg, const RetrieverModel& model, std::string_view split) {
    const auto queries = make_queries(kg, split);
    std::vector<QueryResult> results;
    results.reserve(queries.size());
    for (const auto& q : queries) {
        const auto ranking = rank_all(model, q);
        const auto known = kg.known_answers(q.anchor, q.relation, q.direction);
        QueryResult r;
        r.query = q;
        r.retriever_rank = r.filtered_rank = filtered_rank(ranking.order, q.answer, known);
        results.push_back(std::move(r));
    }
    return summarize(results);
}

namespace {

json names_of(const KnowledgeGraph& kg, std::span<const EntityId> ids) {
    json arr = json::array();
    for (EntityId e : ids) arr.push_back(kg.entities().name(e));
    return arr;
}

EntityId entity_named(const KnowledgeGraph& kg, const std::string& name) {
    auto id = kg.find_entity(name);
    if (!id) throw DatasetError("unknown entity in predictions: " + name);
    return *id;
}

json metrics_json(const Metrics& m) {
    return {{"MRR", m.mrr}, {"Hits@1", m.hits1}, {"Hits@3", m.hits3}, {"Hits@10", m.hits10}, {"count", m.count}};
}

void metric_rows(std::string& out, std::string_view scope, std::string_view group, const Metrics& m,
                 bool with_hits3 = true) {
    out += fmt::format("{},{},MRR,{}\n", scope, group, m.mrr);
    out += fmt::format("{},{},Hits@1,{}\n", scope, group, m.hits1);
    if (with_hits3) out += fmt::format("{},{},Hits@3,{}\n", scope, group, m.hits3);
    out += fmt::format("{},{},Hits@10,{}\n", scope, group, m.hits10);
    out += fmt::format("{},{},count,{}\n", scope, group, m.count);
}

}  // namespace

void write_predictions(const std::filesystem::path& path, const KnowledgeGraph& kg,
                       std::span<const QueryResult> results) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write predictions: " + path.string());
    for (const auto& r : results) {
        const auto t = r.query.triple();
        json doc = json::object();
        doc["query"] = {{"head", kg.entities().name(t.head)},
                        {"relation", kg.relations().name(t.relation)},
                        {"tail", kg.entities().name(t.tail)},
                        {"direction", std::string(to_string(r.query.direction))}};
        doc["top_m_before"] = names_of(kg, r.top_m_before);
        doc["R_LLM"] = names_of(kg, r.llm_order);
        doc["retriever_rank"] = r.retriever_rank;
        doc["filtered_rank"] = r.filtered_rank;
        doc["repairs"] = {{"dropped", r.repairs.dropped},
                          {"appended", r.repairs.appended},
                          {"hard_failure", r.repairs.hard_failure},
                          {"score_failures", r.score_failures}};
        out << doc.dump() << '\n';
    }
    if (!out) throw Error("failed writing predictions: " + path.string());
}

std::vector<QueryResult> read_predictions(const std::filesystem::path& path, const KnowledgeGraph& kg) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot read predictions: " + path.string());
    std::vector<QueryResult> results;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto doc = json::parse(line);
            const auto& q = doc.at("query");
            const auto head = entity_named(kg, q.at("head").get<std::string>());
            const auto tail = entity_named(kg, q.at("tail").get<std::string>());
            const auto rel_name = q.at("relation").get<std::string>();
            const auto rel = kg.find_relation(rel_name);
            if (!rel) throw DatasetError("unknown relation in predictions: " + rel_name);
            const auto dir = q.at("direction").get<std::string>();
            QueryResult r;
            if (dir == "tail") {
                r.query = Query{Direction::TailMissing, head, *rel, tail};
            } else if (dir == "head") {
                r.query = Query{Direction::HeadMissing, tail, *rel, head};
            } else {
                throw DatasetError("bad direction: " + dir);
            }
            for (const auto& n : doc.at("top_m_before")) r.top_m_before.push_back(entity_named(kg, n.get<std::string>()));
            for (const auto& n : doc.at("R_LLM")) r.llm_order.push_back(entity_named(kg, n.get<std::string>()));
            r.retriever_rank = doc.at("retriever_rank").get<std::size_t>();
            r.filtered_rank = doc.at("filtered_rank").get<std::size_t>();
            const auto& rep = doc.at("repairs");
            r.repairs.dropped = rep.at("dropped").get<std::size_t>();
            r.repairs.appended = rep.at("appended").get<std::size_t>();
            r.repairs.hard_failure = rep.at("hard_failure").get<bool>();
            r.score_failures = rep.at("score_failures").get<std::size_t>();
            results.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DatasetError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        } catch (const DatasetError& e) {
            throw DatasetError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return results;
}

std::string report_json(const EvalReport& report) {
    json doc = json::object();
    doc["query_count"] = report.query_count;
    doc["reranked"] = metrics_json(report.reranked);
    doc["retriever"] = metrics_json(report.retriever);
    doc["by_direction"] = {{"tail", {{"reranked", metrics_json(report.reranked_tail)},
                                     {"retriever", metrics_json(report.retriever_tail)}}},
                           {"head", {{"reranked", metrics_json(report.reranked_head)},
                                     {"retriever", metrics_json(report.retriever_head)}}}};
    doc["repairs"] = {{"dropped", report.repairs.dropped},
                      {"appended", report.repairs.appended},
                      {"hard_failures", report.repairs.hard_failures},
                      {"score_failures", report.repairs.score_failures},
                      {"repaired_queries", report.repairs.repaired_queries}};
    return doc.dump(2) + "\n";
}

std::string report_csv(const EvalReport& report) {
    std::string out = "scope,group,metric,value\n";
    metric_rows(out, "reranked", "all", report.reranked);
    metric_rows(out, "reranked", "tail", report.reranked_tail);
    metric_rows(out, "reranked", "head", report.reranked_head);
    metric_rows(out, "retriever", "all", report.retriever);
    metric_rows(out, "retriever", "tail", report.retriever_tail);
    metric_rows(out, "retriever", "head", report.retriever_head);
    out += fmt::format("repairs,all,dropped,{}\n", report.repairs.dropped);
    out += fmt::format("repairs,all,appended,{}\n", report.repairs.appended);
    out += fmt::format("repairs,all,hard_failures,{}\n", report.repairs.hard_failures);
    out += fmt::format("repairs,all,score_failures,{}\n", report.repairs.score_failures);
    out += fmt::format("repairs,all,repaired_queries,{}\n", report.repairs.repaired_queries);
    return out;
}

std::string longtail_json(std::span<const GroupMetrics> groups) {
    json arr = json::array();
    for (const auto& g : groups) {
        auto m = metrics_json(g.metrics);
        m["group"] = g.group;
        arr.push_back(std::move(m));
    }
    return arr.dump(2) + "\n";
}

std::string longtail_csv(std::span<const GroupMetrics> groups) {
    std::string out = "scope,group,metric,value\n";
    for (const auto& g : groups) metric_rows(out, "longtail", std::to_string(g.group), g.metrics, false);
    return out;
}

}  // namespace kicrank
