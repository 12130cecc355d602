#include "kicrank/verbalizer.hpp"

#include <algorithm>
#include <fstream>
#include <vector>

#include <spdlog/spdlog.h>

#include "kicrank/errors.hpp"

namespace kicrank {

namespace {

constexpr std::string_view kHead = "[H]";
constexpr std::string_view kTail = "[T]";

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

std::string underscores_to_spaces(std::string_view s) {
    std::string out(s);
    std::replace(out.begin(), out.end(), '_', ' ');
    return out;
}

std::string sentence(std::string text) {
    while (!text.empty() && text.back() == ' ') text.pop_back();
    if (!text.empty() && text.back() != '.' && text.back() != '!' && text.back() != '?') text.push_back('.');
    return text;
}

std::string strip_trailing_period(std::string text) {
    while (!text.empty() && (text.back() == '.' || text.back() == ' ')) text.pop_back();
    return text;
}

}  // namespace

std::string_view to_string(Scheme s) {
    switch (s) {
        case Scheme::FreebaseOfJoin:
            return "freebase-of-join";
        case Scheme::WordnetInfix:
            return "wordnet-infix";
        case Scheme::Aligned:
            return "aligned";
    }
    return "?";
}

Scheme parse_scheme(std::string_view tag) {
    if (tag == "freebase-of-join") return Scheme::FreebaseOfJoin;
    if (tag == "wordnet-infix") return Scheme::WordnetInfix;
    if (tag == "aligned") return Scheme::Aligned;
    throw ConfigError("unknown verbalization scheme: " + std::string(tag));
}

bool is_valid_template(std::string_view text) {
    return count_occurrences(text, kHead) == 1 && count_occurrences(text, kTail) == 1;
}

std::string apply_template(std::string_view text, std::string_view head, std::string_view tail) {
    std::string out;
    out.reserve(text.size() + head.size() + tail.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.substr(i, kHead.size()) == kHead) {
            out.append(head);
            i += kHead.size();
        } else if (text.substr(i, kTail.size()) == kTail) {
            out.append(tail);
            i += kTail.size();
        } else {
            out.push_back(text[i++]);
        }
    }
    return out;
}

std::string verbalize_relation(std::string_view raw, Scheme scheme) {
    if (scheme == Scheme::Aligned) {
        scheme = raw.find('/') != std::string_view::npos ? Scheme::FreebaseOfJoin : Scheme::WordnetInfix;
    }
    if (scheme == Scheme::WordnetInfix) {
        if (!raw.empty() && raw.front() == '_') raw.remove_prefix(1);
        return underscores_to_spaces(raw);
    }

    std::vector<std::string> segments;
    std::size_t start = 0;
    while (start <= raw.size()) {
        const auto pos = raw.find('/', start);
        const auto piece = raw.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        if (!piece.empty()) segments.push_back(underscores_to_spaces(piece));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    std::string out;
    for (auto it = segments.rbegin(); it != segments.rend(); ++it) {
        if (!out.empty()) out += " of ";
        out += *it;
    }
    return out;
}

Verbalizer::Verbalizer(const KnowledgeGraph& kg, Scheme scheme, AlignedTemplates templates)
    : kg_(&kg), scheme_(scheme), templates_(std::move(templates)) {}

std::string Verbalizer::entity(EntityId e) const { return kg_->entity_text(e); }

std::string Verbalizer::relation(RelationId r) const {
    return verbalize_relation(kg_->relation_text(r), scheme_);
}

const std::string& Verbalizer::template_for(RelationId r) const {
    auto it = templates_.find(r);
    if (it == templates_.end()) {
        throw ConfigError("no aligned template for relation " + kg_->relations().name(r));
    }
    return it->second;
}

bool Verbalizer::wordnet_style(RelationId r) const {
    return scheme_ == Scheme::WordnetInfix ||
           (scheme_ == Scheme::Aligned && kg_->relation_text(r).find('/') == std::string::npos);
}

bool Verbalizer::statement_tail_first(RelationId r) const { return !wordnet_style(r); }

std::string Verbalizer::connector(RelationId r) const {
    const auto rel = relation(r);
    return wordnet_style(r) ? "be " + rel + " of" : "is the " + rel + " of";
}

std::string Verbalizer::with_definition(EntityId e) const {
    const auto& desc = kg_->entity_description(e);
    if (desc.empty()) return {};
    return sentence(entity(e) + " : " + desc) + " ";
}

std::string Verbalizer::cloze_sentence(const Query& q) const {
    const bool tail_missing = q.direction == Direction::TailMissing;
    const auto anchor = entity(q.anchor);
    const auto rel = relation(q.relation);
    switch (scheme_) {
        case Scheme::FreebaseOfJoin:
            return tail_missing ? "what is the " + rel + " of " + anchor + "?"
                                : anchor + " is the " + rel + " of what?";
        case Scheme::WordnetInfix:
            return tail_missing ? anchor + " be " + rel + " of what?" : "what be " + rel + " of " + anchor + "?";
        case Scheme::Aligned: {
            const auto& tpl = template_for(q.relation);
            auto text = tail_missing ? apply_template(tpl, anchor, "what") : apply_template(tpl, "what", anchor);
            return strip_trailing_period(std::move(text)) + "?";
        }
    }
    return {};
}

std::string Verbalizer::query(const Query& q) const {
    const auto rel = relation(q.relation);
    const auto anchor = entity(q.anchor);
    const bool tail_missing = q.direction == Direction::TailMissing;
    std::string out = tail_missing ? "predict the tail entity [MASK] from the given (" + anchor + ", " + rel +
                                         ", [MASK])"
                                   : "predict the head entity [MASK] from the given ([MASK], " + rel + ", " +
                                         anchor + ")";
    out += " by completing the sentence \"" + cloze_sentence(q) + " The answer is \".";
    return out;
}

std::string Verbalizer::triple(const Triple& t) const {
    const auto head = entity(t.head);
    const auto tail = entity(t.tail);
    switch (scheme_) {
        case Scheme::FreebaseOfJoin: {
            const Query q{Direction::TailMissing, t.head, t.relation, t.tail};
            return query(q) + " The answer is " + tail + ", so the [MASK] is " + tail + ".";
        }
        case Scheme::WordnetInfix: {
            std::string defs = with_definition(t.tail);
            if (t.head != t.tail) defs += with_definition(t.head);
            return defs + head + " be " + relation(t.relation) + " of " + tail;
        }
        case Scheme::Aligned:
            return apply_template(template_for(t.relation), head, tail);
    }
    return {};
}

std::string Verbalizer::statement(const Triple& t) const {
    const auto head = entity(t.head);
    const auto tail = entity(t.tail);
    switch (scheme_) {
        case Scheme::FreebaseOfJoin:
            return tail + " " + connector(t.relation) + " " + head;
        case Scheme::WordnetInfix:
            return head + " " + connector(t.relation) + " " + tail;
        case Scheme::Aligned:
            return apply_template(template_for(t.relation), head, tail);
    }
    return {};
}

std::string verbalize_triple(const Triple& t, const KnowledgeGraph& kg, Scheme scheme,
                             const AlignedTemplates& templates) {
    return Verbalizer(kg, scheme, templates).triple(t);
}

std::string verbalize_query(const Query& q, const KnowledgeGraph& kg, Scheme scheme,
                            const AlignedTemplates& templates) {
    return Verbalizer(kg, scheme, templates).query(q);
}

AlignedTemplates load_aligned_templates(const std::filesystem::path& path, const KnowledgeGraph& kg) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read aligned templates: " + path.string());
    AlignedTemplates templates;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            spdlog::warn("{}:{}: expected relation<TAB>template", path.string(), lineno);
            continue;
        }
        const auto rel = kg.find_relation(line.substr(0, tab));
        const auto text = line.substr(tab + 1);
        if (!rel) {
            spdlog::warn("{}:{}: unknown relation {}", path.string(), lineno, line.substr(0, tab));
            continue;
        }
        if (!is_valid_template(text)) {
            spdlog::warn("{}:{}: template needs exactly one [H] and one [T]", path.string(), lineno);
            continue;
        }
        templates[*rel] = text;
    }
    return templates;
}

void save_aligned_templates(const std::filesystem::path& path, const KnowledgeGraph& kg,
                            const AlignedTemplates& templates) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write aligned templates: " + path.string());
    for (RelationId r = 0; r < kg.num_relations(); ++r) {
        auto it = templates.find(r);
        if (it != templates.end()) out << kg.relations().name(r) << '\t' << it->second << '\n';
    }
}

}  // namespace kicrank
