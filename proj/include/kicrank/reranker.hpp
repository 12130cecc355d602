#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kicrank/gateway.hpp"
#include "kicrank/prompt.hpp"

namespace kicrank {

struct RerankOutcome {
    std::vector<EntityId> order;  // permutation of the candidates
    RepairFlags repairs;
    std::size_t score_failures = 0;  // score mode: replies with no number
    Conversation conversation;
};

/// Raw-id key identifying a query to offline backends.
std::string query_key(const KnowledgeGraph& kg, const Query& q);

/// Ground-truth table for the oracle backend: every answer of `queries`
/// grouped by query key.
AnswerTable oracle_answers(const KnowledgeGraph& kg, std::span<const Query> queries);

/// Runs one conversation through the gateway and turns the reply (or
/// replies) into an order over `candidates`. Never throws on unparseable
/// replies: sort mode falls back to the given order, score mode ranks failed
/// candidates last with score -1.
RerankOutcome rerank_candidates(const Query& query, const DemonstrationSet& demos,
                                std::span<const EntityId> candidates, const Verbalizer& verbalizer,
                                const PromptTemplates& templates, const ConversationOptions& options,
                                Gateway& gateway);

}  // namespace kicrank
