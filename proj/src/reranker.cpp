#include "kicrank/reranker.hpp"

#include <algorithm>
#include <numeric>

namespace kicrank {

std::string query_key(const KnowledgeGraph& kg, const Query& q) {
    return kg.entities().name(q.anchor) + "\t" + kg.relations().name(q.relation) + "\t" +
           std::string(to_string(q.direction));
}

AnswerTable oracle_answers(const KnowledgeGraph& kg, std::span<const Query> queries) {
    AnswerTable table;
    for (const auto& q : queries) {
        auto& answers = table[query_key(kg, q)];
        const auto& name = kg.entities().name(q.answer);
        if (std::find(answers.begin(), answers.end(), name) == answers.end()) answers.push_back(name);
    }
    return table;
}

namespace {

// Asks for a reply to each user turn that the conversation acknowledges with
// an assistant message. The scripted acknowledgement stays in the history.
void send_intermediate_turns(const std::vector<Message>& messages, std::size_t end, const RequestHints& base,
                             Gateway& gateway) {
    for (std::size_t i = 1; i < end; ++i) {
        if (messages[i].role != Role::Assistant || messages[i - 1].role != Role::User) continue;
        RequestHints hints = base;
        hints.stage = messages[i - 1].stage;
        hints.scoring_index.reset();
        gateway.complete(std::vector<Message>(messages.begin(), messages.begin() + static_cast<std::ptrdiff_t>(i)),
                         std::move(hints));
    }
}

}  // namespace

RerankOutcome rerank_candidates(const Query& query, const DemonstrationSet& demos,
                                std::span<const EntityId> candidates, const Verbalizer& verbalizer,
                                const PromptTemplates& templates, const ConversationOptions& options,
                                Gateway& gateway) {
    const auto& kg = verbalizer.graph();
    RerankOutcome outcome;
    outcome.conversation = build_conversation(query, demos, candidates, verbalizer, templates, options);
    const auto& conv = outcome.conversation;

    RequestHints hints;
    hints.mode = options.mode;
    hints.candidate_names = candidate_names(kg, candidates);
    for (EntityId c : candidates) hints.candidate_ids.push_back(kg.entities().name(c));
    hints.query_key = query_key(kg, query);

    if (options.mode == InteractionMode::Sort) {
        if (gateway.config().intermediate_turns) {
            send_intermediate_turns(conv.messages, conv.messages.size(), hints, gateway);
        }
        hints.stage = conv.messages.back().stage;
        const auto reply = gateway.complete(conv.request(), hints);
        const auto parsed = parse_sort_response(reply, hints.candidate_names);
        outcome.repairs = parsed.repairs;
        for (std::size_t i : parsed.order) outcome.order.push_back(candidates[i]);
        return outcome;
    }

    if (gateway.config().intermediate_turns) {
        send_intermediate_turns(conv.messages, conv.scoring_turns.front(), hints, gateway);
    }
    std::vector<double> scores(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        hints.stage = conv.messages[conv.scoring_turns[i]].stage;
        hints.scoring_index = i;
        const auto parsed = parse_score_response(gateway.complete(conv.request(i), hints));
        scores[i] = parsed.score;
        if (parsed.hard_failure) ++outcome.score_failures;
    }
    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (std::size_t i : idx) outcome.order.push_back(candidates[i]);
    outcome.repairs.hard_failure = outcome.score_failures == candidates.size();
    return outcome;
}

}  // namespace kicrank
