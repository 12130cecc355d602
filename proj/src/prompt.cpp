#include "kicrank/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <unordered_map>

#include <json.hpp>

#include "kicrank/errors.hpp"

namespace kicrank {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return std::string(s);
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string join(std::span<const std::string> items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += sep;
        out += items[i];
    }
    return out;
}

std::string mode_key(InteractionMode mode, std::string_view stage) {
    return std::string(to_string(mode)) + "." + std::string(stage);
}

class Assembler {
public:
    Assembler(const Query& query, const DemonstrationSet& demos, std::span<const EntityId> candidates,
              const Verbalizer& verbalizer, const PromptTemplates& templates, const ConversationOptions& options)
        : query_(query),
          demos_(demos),
          candidates_(candidates),
          verbalizer_(verbalizer),
          templates_(templates),
          options_(options),
          question_(verbalizer.query(query)),
          names_(candidate_names(verbalizer.graph(), candidates)) {}

    Conversation build() {
        if (candidates_.empty()) throw ContractViolation("conversation needs at least one candidate");
        const std::size_t budget =
            options_.token_budget > options_.reply_reserve ? options_.token_budget - options_.reply_reserve : 0;
        return options_.trivial ? build_trivial(budget) : build_staged(budget);
    }

private:
    std::size_t tokens(std::string_view text) const {
        return options_.estimator ? options_.estimator(text) : estimate_tokens(text);
    }

    std::string tpl(std::string_view stage) const { return templates_.get(mode_key(options_.mode, stage)); }

    std::vector<std::string> render_items(std::span<const TripleId> ids, bool quoted) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        const auto& kg = verbalizer_.graph();
        for (TripleId id : ids) {
            auto text = verbalizer_.triple(kg.known_triple(id));
            out.push_back(quoted ? render(tpl("item"), {{"text", text}}) : std::move(text));
        }
        return out;
    }

    std::string topic() const {
        const auto rel = verbalizer_.relation(query_.relation);
        const auto anchor = verbalizer_.entity(query_.anchor);
        return query_.direction == Direction::HeadMissing ? rel + " of " + anchor
                                                          : anchor + " as the subject of " + rel;
    }

    std::string anchor_definition() const {
        const auto& desc = verbalizer_.graph().entity_description(query_.anchor);
        if (desc.empty()) return {};
        auto text = verbalizer_.entity(query_.anchor) + " : " + desc;
        if (text.back() != '.') text.push_back('.');
        return text + " ";
    }

    std::vector<Message> final_turns() const {
        std::vector<Message> turns;
        if (options_.mode == InteractionMode::Sort) {
            turns.push_back({Role::User,
                             render(tpl("final"), {{"candidates", join(names_, ", ")}, {"question", question_}}),
                             Stage::FinalQuery});
            return turns;
        }
        for (EntityId c : candidates_) {
            Query completed = query_;
            completed.answer = c;
            const auto statement = verbalizer_.triple(completed.triple());
            turns.push_back({Role::User, render(tpl("final"), {{"statement", statement}}), Stage::FinalQuery});
        }
        return turns;
    }

    // Next demonstration batch as (analogy ids, supplement ids); empty when both streams are exhausted.
    std::pair<std::span<const TripleId>, std::span<const TripleId>> next_batch() const {
        const std::span<const TripleId> a(demos_.analogy_order);
        const std::span<const TripleId> s(demos_.supplement_order);
        const auto k = options_.demo_batch_size;
        const auto ta = std::min(k, a.size() - analogy_used_);
        const auto ts = std::min(k, s.size() - supplement_used_);
        return {a.subspan(analogy_used_, ta), s.subspan(supplement_used_, ts)};
    }

    Conversation build_staged(std::size_t budget) {
        const bool quoted = options_.mode == InteractionMode::Sort;
        std::vector<Message> head = {
            {Role::User, tpl("responsibility"), Stage::Responsibility},
            {Role::Assistant, tpl("responsibility_ack"), Stage::Responsibility},
            {Role::User,
             render(tpl("description"),
                    {{"question", question_}, {"topic", topic()}, {"anchor_definition", anchor_definition()}}),
             Stage::Description},
            {Role::Assistant, tpl("description_ack"), Stage::Description},
        };
        const auto tail = final_turns();

        std::size_t used = 0;
        for (const auto& m : head) used += tokens(m.text);
        for (const auto& m : tail) used += tokens(m.text);
        if (used > budget) {
            throw BudgetError("token budget " + std::to_string(options_.token_budget) + " (reserve " +
                              std::to_string(options_.reply_reserve) + ") cannot hold the " + std::to_string(used) +
                              " tokens of the prompt without demonstrations");
        }

        std::vector<Message> demo_turns;
        const auto ack = tpl("demonstrations_ack");
        while (options_.include_demonstrations && options_.demo_batch_size > 0) {
            const auto [a, s] = next_batch();
            if (a.empty() && s.empty()) break;
            const auto a_items = render_items(a, quoted);
            const auto s_items = render_items(s, quoted);
            const auto text = render(
                tpl("demonstrations"),
                {{"analogy_block", a.empty() ? "" : render(tpl("analogy_block"), {{"items", join(a_items, "\n")}})},
                 {"supplement_block",
                  s.empty() ? "" : render(tpl("supplement_block"), {{"items", join(s_items, "\n")}})}});
            const auto cost = tokens(text) + tokens(ack);
            if (used + cost > budget) break;
            used += cost;
            demo_turns.push_back({Role::User, text, Stage::Demonstrations});
            demo_turns.push_back({Role::Assistant, ack, Stage::Demonstrations});
            analogy_used_ += a.size();
            supplement_used_ += s.size();
        }

        Conversation conv;
        conv.messages = std::move(head);
        conv.messages.insert(conv.messages.end(), demo_turns.begin(), demo_turns.end());
        if (options_.mode == InteractionMode::Score) {
            for (std::size_t i = 0; i < tail.size(); ++i) conv.scoring_turns.push_back(conv.messages.size() + i);
        }
        conv.messages.insert(conv.messages.end(), tail.begin(), tail.end());
        conv.estimated_tokens = used;
        return conv;
    }

    Conversation build_trivial(std::size_t budget) {
        const auto tail = final_turns();
        std::size_t used = 0;
        for (const auto& m : tail) used += tokens(m.text);
        if (used > budget) {
            throw BudgetError("token budget " + std::to_string(options_.token_budget) +
                              " cannot hold the trivial prompt");
        }
        // Separator newline between demonstrations and the question.
        std::string lines;
        while (options_.include_demonstrations && options_.demo_batch_size > 0) {
            const auto [a, s] = next_batch();
            if (a.empty() && s.empty()) break;
            std::vector<std::string> items = render_items(a, false);
            const auto more = render_items(s, false);
            items.insert(items.end(), more.begin(), more.end());
            const auto chunk = join(items, "\n") + "\n";
            // Adding text to one message can change its token estimate by more
            // than the chunk alone under ceiling rounding; measure the whole.
            const auto before = lines.empty() ? 0 : tokens(lines);
            const auto after = tokens(lines + chunk);
            if (used - before + after > budget) break;
            used = used - before + after;
            lines += chunk;
            analogy_used_ += a.size();
            supplement_used_ += s.size();
        }

        Conversation conv;
        if (options_.mode == InteractionMode::Sort) {
            conv.messages.push_back({Role::User, lines + tail.front().text, Stage::Trivial});
        } else {
            if (!lines.empty()) {
                lines.pop_back();
                conv.messages.push_back({Role::User, lines, Stage::Trivial});
            }
            for (const auto& m : tail) {
                conv.scoring_turns.push_back(conv.messages.size());
                conv.messages.push_back(m);
            }
        }
        conv.estimated_tokens = estimate_tokens(conv.messages, options_.estimator);
        return conv;
    }

    const Query& query_;
    const DemonstrationSet& demos_;
    std::span<const EntityId> candidates_;
    const Verbalizer& verbalizer_;
    const PromptTemplates& templates_;
    const ConversationOptions& options_;
    std::string question_;
    std::vector<std::string> names_;
    std::size_t analogy_used_ = 0;
    std::size_t supplement_used_ = 0;
};

const std::map<std::string, std::string>& default_entries() {
    static const std::map<std::string, std::string> entries = {
        {"sort.responsibility",
         "You are a good assistant to perform link prediction and sorting. Given a goal question and a list of "
         "candidate answers to this question. You need to order these candidate answers in the list to let "
         "candidate answers which are more possible to be the answer to the question prior. If you have known your "
         "responsibility, respond \"Yes\". Otherwise, respond \"No\". Do not output anything except \"Yes\" and "
         "\"No\"."},
        {"sort.responsibility_ack", "Yes."},
        {"sort.description",
         "The goal question is: {question} To sort the candidate answers, typically you would need to refer to some "
         "other examples that may be similar to or related to the question.\n Part of the given examples are similar "
         "to the goal question, you should analogy them to understand the potential meaning of the goal question. "
         "Another part of the given facts contains supplementary information, keep capturing this extra information "
         "and mining potential relationships among them to help the sorting. Please carefully read, realize, and "
         "think about these examples. Summarize the way of thinking in these examples and memorize the information "
         "you think maybe help your sorting task. During I give examples please keep silent until I let you output."},
        {"sort.description_ack", "Okay, I understand. I will wait for your examples and instructions."},
        {"sort.item", "\"{text}\""},
        {"sort.analogy_block", "Examples used to Analogy: {items}\n\n"},
        {"sort.supplement_block", "Examples give supplement information: {items} "},
        {"sort.demonstrations", "{analogy_block}{supplement_block}Keep thinking but not output."},
        {"sort.demonstrations_ack",
         "Okay, I will keep thinking and analyzing the given examples to identify potential relationships and "
         "patterns that can help with the sorting task."},
        {"sort.final",
         "The list of candidate answers is [{candidates}]. And the question is {question} Now, based on the previous "
         "examples and your own knowledge and thinking, sort the list to let the candidate answers which are more "
         "possible to be the true answer to the question prior. Output the sorted order of candidate answers using "
         "the format \"[most possible answer | second possible answer | ... | least possible answer]\" and please "
         "start your response with \"The final order:\". Do not output anything except the final order. Note your "
         "output sorted order should contain all the candidates in the list but not add new answers to it."},
        {"score.responsibility",
         "Assume you're a linguist of English lexicons. You will be first given some examples. Then use these "
         "examples as references and your own knowledge to score for some statements. If you have known your "
         "responsibility, respond \"Yes\". Otherwise, respond \"No\". Do not output anything except \"Yes\" and "
         "\"No\"."},
        {"score.responsibility_ack", "Yes."},
        {"score.description",
         "The goal statements are about {topic}. {anchor_definition}Part of the given examples are similar to the "
         "statements, you should analogy them to understand the potential meaning of the statements to be scored. "
         "Another part of the given examples contains supplementary information, keep capturing this extra "
         "information and mining potential relationships among them to help the scoring. Please carefully read, "
         "realize and think about these examples. Summarize the way of thinking in these examples and memorize the "
         "information you think maybe help. DO NOT give me any feedback."},
        {"score.description_ack", "Okay."},
        {"score.item", "{text}"},
        {"score.analogy_block", "Examples used to Analogy:\n{items}\n"},
        {"score.supplement_block", "Examples give supplement information:\n{items}\n"},
        {"score.demonstrations", "{analogy_block}{supplement_block}Keep thinking but DO NOT give me any feedback."},
        {"score.demonstrations_ack", "Okay."},
        {"score.final",
         "{statement}. Directly give a score out of 100 for the statement and DO NOT output any other thing"},
        {"alignment.prompt",
         "You are a good assistant to reading, understanding and summarizing.\n{statements}\nIn above examples, What "
         "do you think \"{relation}\" mean? Summarize and descript its meaning using the format: \"If the example "
         "shows something A {connector} something B, it means A is [mask] of B.\" Fill the mask and the statement "
         "should be as short as possible."},
    };
    return entries;
}

}  // namespace

std::string_view to_string(Role r) {
    switch (r) {
        case Role::System:
            return "system";
        case Role::User:
            return "user";
        case Role::Assistant:
            return "assistant";
    }
    return "user";
}

std::string_view to_string(InteractionMode m) { return m == InteractionMode::Sort ? "sort" : "score"; }

InteractionMode parse_mode(std::string_view tag) {
    if (tag == "sort") return InteractionMode::Sort;
    if (tag == "score") return InteractionMode::Score;
    throw ConfigError("unknown interaction mode: " + std::string(tag));
}

std::vector<Message> Conversation::request(std::size_t i) const {
    if (scoring_turns.empty()) return messages;
    const auto prefix_end = static_cast<std::ptrdiff_t>(scoring_turns.front());
    std::vector<Message> out(messages.begin(), messages.begin() + prefix_end);
    out.push_back(messages.at(scoring_turns.at(i)));
    return out;
}

std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

std::size_t estimate_tokens(std::span<const Message> messages, const TokenEstimator& estimator) {
    std::size_t total = 0;
    for (const auto& m : messages) total += estimator ? estimator(m.text) : estimate_tokens(m.text);
    return total;
}

PromptTemplates PromptTemplates::defaults() {
    PromptTemplates t;
    t.entries_ = default_entries();
    return t;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read prompt templates: " + path.string());
    auto t = defaults();
    try {
        const auto doc = nlohmann::json::parse(in);
        for (const auto& [key, value] : doc.items()) {
            if (!default_entries().contains(key)) throw ConfigError("unknown prompt template key: " + key);
            t.entries_[key] = value.get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return t;
}

const std::string& PromptTemplates::get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("missing prompt template: " + key);
    return it->second;
}

std::string render(std::string_view tpl, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tpl.size());
    std::size_t i = 0;
    while (i < tpl.size()) {
        if (tpl[i] == '{') {
            const auto close = tpl.find('}', i);
            if (close != std::string_view::npos) {
                auto it = values.find(std::string(tpl.substr(i + 1, close - i - 1)));
                if (it != values.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tpl[i++]);
    }
    return out;
}

std::vector<std::string> candidate_names(const KnowledgeGraph& kg, std::span<const EntityId> candidates) {
    std::unordered_map<std::string, std::size_t> counts;
    for (EntityId c : candidates) ++counts[normalize_name(kg.entity_text(c))];
    std::vector<std::string> names;
    names.reserve(candidates.size());
    for (EntityId c : candidates) {
        const auto& text = kg.entity_text(c);
        names.push_back(counts[normalize_name(text)] > 1 ? text + " (" + kg.entities().name(c) + ")" : text);
    }
    return names;
}

Conversation build_conversation(const Query& query, const DemonstrationSet& demos,
                                std::span<const EntityId> candidates, const Verbalizer& verbalizer,
                                const PromptTemplates& templates, const ConversationOptions& options) {
    return Assembler(query, demos, candidates, verbalizer, templates, options).build();
}

std::string normalize_name(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::string format_sort_response(std::span<const std::string> names) {
    return "The final order: [" + join(names, " | ") + "]";
}

SortOutcome parse_sort_response(std::string_view text, std::span<const std::string> candidates) {
    SortOutcome outcome;
    std::unordered_map<std::string, std::size_t> lookup;
    for (std::size_t i = 0; i < candidates.size(); ++i) lookup.emplace(normalize_name(candidates[i]), i);

    static constexpr std::string_view kMarker = "the final order:";
    const auto lowered = lower(text);
    auto start = lowered.find(kMarker);
    start = start == std::string::npos ? 0 : start + kMarker.size();
    std::string_view body = text.substr(start);
    if (const auto lb = body.find('['); lb != std::string_view::npos) {
        body.remove_prefix(lb + 1);
        if (const auto rb = body.find(']'); rb != std::string_view::npos) body = body.substr(0, rb);
    } else if (const auto nl = body.find('\n'); nl != std::string_view::npos) {
        body = body.substr(0, nl);
    }

    std::vector<bool> seen(candidates.size(), false);
    std::size_t pos = 0;
    while (pos <= body.size()) {
        const auto bar = body.find('|', pos);
        auto item = trim(body.substr(pos, bar == std::string_view::npos ? std::string_view::npos : bar - pos));
        pos = bar == std::string_view::npos ? body.size() + 1 : bar + 1;
        while (!item.empty() && (item.back() == '.' || item.back() == '"' || item.back() == '\'')) item.pop_back();
        while (!item.empty() && (item.front() == '"' || item.front() == '\'')) item.erase(item.begin());
        if (item.empty()) continue;
        auto it = lookup.find(normalize_name(item));
        if (it == lookup.end() || seen[it->second]) {
            ++outcome.repairs.dropped;
            continue;
        }
        seen[it->second] = true;
        outcome.order.push_back(it->second);
    }

    if (outcome.order.empty()) {
        outcome.repairs = RepairFlags{0, 0, true};
        for (std::size_t i = 0; i < candidates.size(); ++i) outcome.order.push_back(i);
        return outcome;
    }
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!seen[i]) {
            outcome.order.push_back(i);
            ++outcome.repairs.appended;
        }
    }
    return outcome;
}

ScoreOutcome parse_score_response(std::string_view text) {
    static const std::regex kNumber(R"([-+]?\d+(?:\.\d+)?)");
    std::match_results<std::string_view::const_iterator> match;
    ScoreOutcome outcome;
    if (!std::regex_search(text.begin(), text.end(), match, kNumber)) {
        outcome.hard_failure = true;
        return outcome;
    }
    const double value = std::stod(match.str());
    outcome.score = std::clamp(value, 0.0, 100.0);
    outcome.clamped = outcome.score != value;
    return outcome;
}

Conversation build_alignment_prompt(RelationId relation, std::span<const TripleId> analogy_order,
                                    const Verbalizer& verbalizer, const PromptTemplates& templates,
                                    std::size_t token_budget, const TokenEstimator& estimator) {
    if (analogy_order.empty()) {
        throw ContractViolation("self-alignment needs at least one demonstration for relation " +
                                verbalizer.graph().relations().name(relation));
    }
    auto tokens = [&](std::string_view t) { return estimator ? estimator(t) : estimate_tokens(t); };
    const auto connector = verbalizer.connector(relation);
    const auto phrase = verbalizer.statement_tail_first(relation) ? verbalizer.relation(relation) + " of" : connector;
    const auto& tpl = templates.get("alignment.prompt");
    auto prompt_with = [&](const std::vector<std::string>& statements) {
        return render(tpl, {{"statements", join(statements, "\n")}, {"relation", phrase}, {"connector", connector}});
    };

    std::vector<std::string> statements;
    std::string text;
    const auto& kg = verbalizer.graph();
    for (TripleId id : analogy_order) {
        statements.push_back(verbalizer.statement(kg.known_triple(id)));
        auto candidate = prompt_with(statements);
        if (tokens(candidate) > token_budget) {
            statements.pop_back();
            break;
        }
        text = std::move(candidate);
    }
    if (statements.empty()) {
        throw BudgetError("token budget " + std::to_string(token_budget) +
                          " cannot hold a self-alignment prompt with one demonstration");
    }
    Conversation conv;
    conv.messages.push_back({Role::User, text, Stage::Alignment});
    conv.estimated_tokens = tokens(text);
    return conv;
}

AlignedTemplate parse_alignment_response(std::string_view text, RelationId relation, const Verbalizer& verbalizer) {
    const bool tail_first = verbalizer.statement_tail_first(relation);
    const std::string first = tail_first ? "[T]" : "[H]";
    const std::string second = tail_first ? "[H]" : "[T]";

    AlignedTemplate result{relation, {}, false};
    auto fallback = [&] {
        result.fallback = true;
        result.text = first + " " + verbalizer.connector(relation) + " " + second + ".";
        return result;
    };

    static constexpr std::string_view kMarker = "it means a is ";
    const auto lowered = lower(text);
    const auto at = lowered.find(kMarker);
    if (at == std::string::npos) return fallback();
    std::string fill = trim(text.substr(at + kMarker.size()));
    if (const auto nl = fill.find('\n'); nl != std::string::npos) fill = trim(fill.substr(0, nl));
    while (!fill.empty() && (fill.back() == '.' || fill.back() == '"' || is_space(fill.back()))) fill.pop_back();

    std::size_t b_pos = std::string::npos;
    std::size_t b_count = 0;
    for (std::size_t i = 0; i < fill.size(); ++i) {
        if (fill[i] != 'B') continue;
        const bool left = i == 0 || !is_alnum(fill[i - 1]);
        const bool right = i + 1 == fill.size() || !is_alnum(fill[i + 1]);
        if (left && right) {
            b_pos = i;
            ++b_count;
        }
    }
    if (b_count != 1 || fill.size() == 1) return fallback();
    result.text = first + " is " + fill.substr(0, b_pos) + second + fill.substr(b_pos + 1) + ".";
    if (!is_valid_template(result.text)) return fallback();
    return result;
}

}  // namespace kicrank
