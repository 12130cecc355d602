#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>

#include "kicrank/kg.hpp"

namespace kicrank {

enum class Scheme { FreebaseOfJoin, WordnetInfix, Aligned };

std::string_view to_string(Scheme s);
/// Accepts "freebase-of-join", "wordnet-infix", "aligned". Throws ConfigError.
Scheme parse_scheme(std::string_view tag);

/// A relation template with exactly one [H] and one [T] placeholder.
struct AlignedTemplate {
    RelationId relation = 0;
    std::string text;
    bool fallback = false;  // true when the text came from the default verbalization
};

using AlignedTemplates = std::unordered_map<RelationId, std::string>;

bool is_valid_template(std::string_view text);
std::string apply_template(std::string_view text, std::string_view head, std::string_view tail);

/// Freebase paths: "/tv/tv_program/country_of_origin" -> "country of origin of tv program of tv".
/// WordNet names: "_member_of_domain_usage" -> "member of domain usage".
/// Aligned picks whichever of the two matches the raw form.
std::string verbalize_relation(std::string_view raw, Scheme scheme);

/// Renders triples and queries of one graph as text.
class Verbalizer {
public:
    Verbalizer(const KnowledgeGraph& kg, Scheme scheme, AlignedTemplates templates = {});

    Scheme scheme() const { return scheme_; }
    const KnowledgeGraph& graph() const { return *kg_; }
    const AlignedTemplates& templates() const { return templates_; }

    std::string entity(EntityId e) const;
    std::string relation(RelationId r) const;

    /// Demonstration text. Freebase: the tail cloze question followed by its
    /// answer. WordNet: "{head} be {relation} of {tail}", prefixed with entity
    /// definitions when the dataset has them. Aligned: template substitution.
    std::string triple(const Triple& t) const;

    /// Short declarative form used in self-alignment prompts.
    std::string statement(const Triple& t) const;

    /// Cloze question with [MASK] at the missing slot.
    std::string query(const Query& q) const;

    /// The phrase joining A and B in statements ("is the {rel} of" / "be {rel} of").
    std::string connector(RelationId r) const;

    /// True when the first entity of the statement form is the tail
    /// (Freebase-style "{tail} is the {rel} of {head}").
    bool statement_tail_first(RelationId r) const;

private:
    bool wordnet_style(RelationId r) const;
    const std::string& template_for(RelationId r) const;
    std::string cloze_sentence(const Query& q) const;
    std::string with_definition(EntityId e) const;

    const KnowledgeGraph* kg_;
    Scheme scheme_;
    AlignedTemplates templates_;
};

std::string verbalize_triple(const Triple& t, const KnowledgeGraph& kg, Scheme scheme,
                             const AlignedTemplates& templates = {});
std::string verbalize_query(const Query& q, const KnowledgeGraph& kg, Scheme scheme,
                            const AlignedTemplates& templates = {});

/// TSV "relation_id\ttemplate". Unknown relations and invalid templates are
/// skipped with a warning.
AlignedTemplates load_aligned_templates(const std::filesystem::path& path, const KnowledgeGraph& kg);
void save_aligned_templates(const std::filesystem::path& path, const KnowledgeGraph& kg,
                            const AlignedTemplates& templates);

}  // namespace kicrank
