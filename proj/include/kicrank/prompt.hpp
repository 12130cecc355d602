#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kicrank/demos.hpp"
#include "kicrank/kg.hpp"
#include "kicrank/verbalizer.hpp"

namespace kicrank {

enum class Role { System, User, Assistant };
std::string_view to_string(Role r);

enum class Stage { Responsibility, Description, Demonstrations, FinalQuery, Trivial, Alignment };

struct Message {
    Role role = Role::User;
    std::string text;
    Stage stage = Stage::FinalQuery;

    friend bool operator==(const Message&, const Message&) = default;
};

/// One multi-round interaction.
///
/// In sort mode the last message is the single re-ranking request. In score
/// mode `scoring_turns[i]` indexes the user message asking for candidate i's
/// score; each is sent on its own after the shared prefix
/// messages[0, scoring_turns.front()).
struct Conversation {
    std::vector<Message> messages;
    std::vector<std::size_t> scoring_turns;
    std::size_t estimated_tokens = 0;

    /// The request actually sent for scoring turn i (score mode) or the whole
    /// conversation (sort mode, i ignored).
    std::vector<Message> request(std::size_t i = 0) const;
};

enum class InteractionMode { Sort, Score };
std::string_view to_string(InteractionMode m);
/// Throws ConfigError on anything but "sort" / "score".
InteractionMode parse_mode(std::string_view tag);

using TokenEstimator = std::function<std::size_t(std::string_view)>;

/// ceil(bytes / 4)
std::size_t estimate_tokens(std::string_view text);
std::size_t estimate_tokens(std::span<const Message> messages, const TokenEstimator& estimator = {});

/// Prompt wording keyed "<mode>.<stage>" (e.g. "sort.final"). Placeholders use
/// {name}. Defaults reproduce the published FB15k-237 (sort), WN18RR (score),
/// trivial-prompt and self-alignment prompts.
class PromptTemplates {
public:
    static PromptTemplates defaults();
    /// JSON object of the same keys; entries override the defaults.
    static PromptTemplates load(const std::filesystem::path& path);

    const std::string& get(const std::string& key) const;
    void set(std::string key, std::string text) { entries_[std::move(key)] = std::move(text); }
    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

/// Replaces {name} placeholders; unknown names are left untouched.
std::string render(std::string_view tpl, const std::map<std::string, std::string>& values);

struct Ablations {
    bool shuffle_candidates = false;
    bool random_demos = false;
    bool no_icl = false;
    bool trivial_prompt = false;

    friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct ConversationOptions {
    InteractionMode mode = InteractionMode::Sort;
    std::size_t token_budget = 4096;
    std::size_t reply_reserve = 512;
    std::size_t demo_batch_size = 4;
    bool include_demonstrations = true;  // false for the no-ICL ablation
    bool trivial = false;                // single flat prompt
    TokenEstimator estimator;            // empty -> estimate_tokens
};

/// Surface names shown to the model: entity text, with " (id)" appended when
/// two candidates collide after case/whitespace normalization.
std::vector<std::string> candidate_names(const KnowledgeGraph& kg, std::span<const EntityId> candidates);

/// Assembles the four-stage conversation. Demonstration turns take up to
/// demo_batch_size triples from each of the analogy and supplement orders
/// and are appended until the next one would exceed
/// token_budget - reply_reserve. Throws BudgetError when stages 1, 2 and 4
/// alone do not fit.
Conversation build_conversation(const Query& query, const DemonstrationSet& demos,
                                std::span<const EntityId> candidates, const Verbalizer& verbalizer,
                                const PromptTemplates& templates, const ConversationOptions& options);

/// Normalized match key: trimmed, inner whitespace collapsed, ASCII lowercase.
std::string normalize_name(std::string_view s);

/// "The final order: [a | b | c]"
std::string format_sort_response(std::span<const std::string> names);

struct RepairFlags {
    std::size_t dropped = 0;   // items that matched no candidate, or repeated one
    std::size_t appended = 0;  // candidates missing from the reply
    bool hard_failure = false;

    friend bool operator==(const RepairFlags&, const RepairFlags&) = default;
};

struct SortOutcome {
    std::vector<std::size_t> order;  // permutation of candidate indices
    RepairFlags repairs;
};

/// Parses a sort-mode reply against candidate surface names. Unknown items
/// are dropped and missing candidates appended in their given order; on hard
/// failure (no item matched) the given order is returned.
SortOutcome parse_sort_response(std::string_view text, std::span<const std::string> candidates);

struct ScoreOutcome {
    double score = -1.0;  // -1 sentinel on hard failure
    bool clamped = false;
    bool hard_failure = false;
};

/// First number in the text, clamped to [0, 100].
ScoreOutcome parse_score_response(std::string_view text);

/// Single-turn self-alignment prompt listing the first demonstrations of
/// `analogy_order` that fit the budget. Throws ContractViolation on an empty
/// order and BudgetError if not even one demonstration fits.
Conversation build_alignment_prompt(RelationId relation, std::span<const TripleId> analogy_order,
                                    const Verbalizer& verbalizer, const PromptTemplates& templates,
                                    std::size_t token_budget, const TokenEstimator& estimator = {});

/// Extracts "it means A is ... B ..." from the reply and binds A/B to the
/// statement's first/second entity. Falls back to the default verbalization
/// (fallback = true) when the reply lacks the format.
AlignedTemplate parse_alignment_response(std::string_view text, RelationId relation, const Verbalizer& verbalizer);

}  // namespace kicrank
