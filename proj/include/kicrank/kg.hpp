#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kicrank {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
// Index into KnowledgeGraph::known_triples() (train followed by valid).
using TripleId = std::uint32_t;

struct Triple {
    EntityId head = 0;
    RelationId relation = 0;
    EntityId tail = 0;

    friend auto operator<=>(const Triple&, const Triple&) = default;
};

enum class Direction : std::uint8_t { TailMissing, HeadMissing };

std::string_view to_string(Direction d);

struct Query {
    Direction direction = Direction::TailMissing;
    EntityId anchor = 0;  // head for tail-missing, tail for head-missing
    RelationId relation = 0;
    EntityId answer = 0;

    /// The completed triple this query was derived from.
    Triple triple() const {
        return direction == Direction::TailMissing ? Triple{anchor, relation, answer}
                                                   : Triple{answer, relation, anchor};
    }

    friend bool operator==(const Query&, const Query&) = default;
};

/// Interned string <-> dense id mapping, ids in first-seen order.
class Vocabulary {
public:
    std::uint32_t intern(std::string_view name);
    std::optional<std::uint32_t> find(std::string_view name) const;
    const std::string& name(std::uint32_t id) const { return names_.at(id); }
    std::size_t size() const { return names_.size(); }
    std::span<const std::string> names() const { return names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// Raw triples as read from the split files.
struct RawTriple {
    std::string head;
    std::string relation;
    std::string tail;
};

struct RawDataset {
    std::vector<RawTriple> train;
    std::vector<RawTriple> valid;
    std::vector<RawTriple> test;
    std::unordered_map<std::string, std::string> entity_text;
    std::unordered_map<std::string, std::string> relation_text;
    std::unordered_map<std::string, std::string> entity_description;
};

/// Immutable, indexed knowledge graph.
///
/// Adjacency, degrees and demonstration pools are built over train+valid
/// only. Filtered-answer lookups cover all three splits.
class KnowledgeGraph {
public:
    KnowledgeGraph() = default;

    static KnowledgeGraph build(const RawDataset& raw);

    std::size_t num_entities() const { return entities_.size(); }
    std::size_t num_relations() const { return relations_.size(); }
    const Vocabulary& entities() const { return entities_; }
    const Vocabulary& relations() const { return relations_; }

    std::span<const Triple> train() const { return train_; }
    std::span<const Triple> valid() const { return valid_; }
    std::span<const Triple> test() const { return test_; }
    /// Throws DatasetError on an unknown split name.
    std::span<const Triple> split(std::string_view name) const;

    /// train followed by valid; TripleId indexes this list.
    std::span<const Triple> known_triples() const { return known_; }
    const Triple& known_triple(TripleId id) const { return known_.at(id); }

    std::span<const TripleId> by_relation(RelationId r) const;
    std::span<const TripleId> as_head(EntityId e) const;
    std::span<const TripleId> as_tail(EntityId e) const;
    std::size_t degree(EntityId e) const { return degree_.at(e); }

    /// Every entity completing (anchor, relation, direction) in any split.
    std::vector<EntityId> known_answers(EntityId anchor, RelationId relation,
                                        Direction direction) const;

    bool is_train_triple(const Triple& t) const;

    const std::string& entity_text(EntityId e) const;
    const std::string& relation_text(RelationId r) const;
    /// Long-form definition, empty when the dataset ships none.
    const std::string& entity_description(EntityId e) const;

    std::optional<EntityId> find_entity(std::string_view name) const { return entities_.find(name); }
    std::optional<RelationId> find_relation(std::string_view name) const {
        return relations_.find(name);
    }

private:
    Vocabulary entities_;
    Vocabulary relations_;
    std::vector<Triple> train_;
    std::vector<Triple> valid_;
    std::vector<Triple> test_;
    std::vector<Triple> known_;

    std::vector<std::vector<TripleId>> by_relation_;
    std::vector<std::vector<TripleId>> as_head_;
    std::vector<std::vector<TripleId>> as_tail_;
    std::vector<std::size_t> degree_;

    std::unordered_map<std::uint64_t, std::vector<EntityId>> answers_;
    std::unordered_map<std::uint64_t, std::vector<EntityId>> train_tails_;

    std::vector<std::string> entity_text_;
    std::vector<std::string> relation_text_;
    std::vector<std::string> entity_description_;
};

/// Reads train/valid/test.txt plus optional entity2text.txt,
/// relation2text.txt and entity2textlong.txt from a directory.
KnowledgeGraph load_dataset(const std::filesystem::path& directory);

RawDataset read_raw_dataset(const std::filesystem::path& directory);

/// Free-function form of KnowledgeGraph::known_answers.
std::vector<EntityId> known_answers(const KnowledgeGraph& kg, EntityId anchor, RelationId relation,
                                    Direction direction);

/// Two queries per triple of the split: tail-missing, then head-missing.
std::vector<Query> make_queries(const KnowledgeGraph& kg, std::string_view split);

}  // namespace kicrank
