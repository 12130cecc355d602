#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kicrank/demos.hpp"
#include "kicrank/gateway.hpp"
#include "kicrank/kg.hpp"
#include "kicrank/prompt.hpp"
#include "kicrank/retriever.hpp"
#include "kicrank/verbalizer.hpp"

namespace kicrank {

/// R_LLM followed by positions m+1.. of the retriever order. Throws
/// ContractViolation unless `llm_order` is a permutation of the first m.
std::vector<EntityId> rerank_merge(std::span<const EntityId> retriever_order, std::span<const EntityId> llm_order,
                                   std::size_t m);

/// 1 + number of entities before `answer` that are not other known answers.
/// `known` must be sorted. Throws ContractViolation if `answer` is absent.
std::size_t filtered_rank(std::span<const EntityId> order, EntityId answer, std::span<const EntityId> known);

struct Metrics {
    double mrr = 0.0;
    double hits1 = 0.0;
    double hits3 = 0.0;
    double hits10 = 0.0;
    std::size_t count = 0;
};

/// Throws ContractViolation on empty input or a zero rank.
Metrics aggregate_metrics(std::span<const std::size_t> ranks);

/// floor(log2(degree + 1))
std::size_t degree_group(std::size_t degree);

struct QueryResult {
    Query query;
    std::vector<EntityId> top_m_before;  // retriever head, in the order shown to the model
    std::vector<EntityId> llm_order;     // R_LLM
    std::size_t retriever_rank = 0;      // filtered, before re-ranking
    std::size_t filtered_rank = 0;       // filtered, after re-ranking
    RepairFlags repairs;
    std::size_t score_failures = 0;
};

struct GroupMetrics {
    std::size_t group = 0;
    Metrics metrics;
};

/// A result counts once toward each distinct group among its head and tail.
std::vector<GroupMetrics> longtail_report(std::span<const QueryResult> results, const KnowledgeGraph& kg);

struct RepairStats {
    std::size_t dropped = 0;
    std::size_t appended = 0;
    std::size_t hard_failures = 0;
    std::size_t score_failures = 0;
    std::size_t repaired_queries = 0;
};

struct EvalReport {
    Metrics reranked;
    Metrics retriever;
    Metrics reranked_tail;  // tail-missing queries only
    Metrics reranked_head;
    Metrics retriever_tail;
    Metrics retriever_head;
    RepairStats repairs;
    std::size_t query_count = 0;
};

EvalReport summarize(std::span<const QueryResult> results);

struct PipelineConfig {
    std::size_t m = 10;
    ConversationOptions conversation;
    Ablations ablations;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::optional<std::size_t> max_queries;  // first N queries of the split
};

struct PipelineResult {
    std::vector<QueryResult> results;
    EvalReport report;
};

/// Retrieve, prompt, parse, merge and rank every query of `split`.
/// Gateway failures propagate; parse failures degrade to the retriever order.
PipelineResult run_pipeline(const KnowledgeGraph& kg, const RetrieverModel& model, const Verbalizer& verbalizer,
                            DemonstrationEngine& demos, const PromptTemplates& templates, Gateway& gateway,
                            const PipelineConfig& config, std::string_view split);

/// The retriever-only evaluation, no model calls.
EvalReport evaluate_retriever(const KnowledgeGraph& kg, const RetrieverModel& model, std::string_view split);

void write_predictions(const std::filesystem::path& path, const KnowledgeGraph& kg,
                       std::span<const QueryResult> results);
/// Throws DatasetError on malformed records or unknown entity names.
std::vector<QueryResult> read_predictions(const std::filesystem::path& path, const KnowledgeGraph& kg);

std::string report_json(const EvalReport& report);
/// Rows "scope,group,metric,value".
std::string report_csv(const EvalReport& report);
std::string longtail_json(std::span<const GroupMetrics> groups);
std::string longtail_csv(std::span<const GroupMetrics> groups);

}  // namespace kicrank
