#include "kicrank/kg.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

#include <spdlog/spdlog.h>

#include "kicrank/errors.hpp"

namespace kicrank {

namespace {

std::uint64_t answer_key(EntityId anchor, RelationId relation, Direction direction) {
    return (static_cast<std::uint64_t>(anchor) << 32) | (static_cast<std::uint64_t>(relation) << 1) |
           (direction == Direction::HeadMissing ? 1u : 0u);
}

std::uint64_t pair_key(EntityId e, RelationId r) {
    return (static_cast<std::uint64_t>(e) << 32) | r;
}

std::vector<std::string> split_tabs(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        out.emplace_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::vector<RawTriple> read_triples(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("missing required file: " + path.string());

    std::vector<RawTriple> triples;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    std::size_t duplicates = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        strip_cr(line);
        if (line.empty()) continue;
        auto cols = split_tabs(line);
        if (cols.size() != 3) {
            throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns, got " +
                               std::to_string(cols.size()));
        }
        if (!seen.emplace(cols[0], cols[1], cols[2]).second) {
            ++duplicates;
            continue;
        }
        triples.push_back({std::move(cols[0]), std::move(cols[1]), std::move(cols[2])});
    }
    if (duplicates > 0) {
        spdlog::warn("{}: dropped {} duplicate triple(s)", path.string(), duplicates);
    }
    return triples;
}

std::unordered_map<std::string, std::string> read_text_map(const std::filesystem::path& path) {
    std::unordered_map<std::string, std::string> map;
    std::ifstream in(path);
    if (!in) return map;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        strip_cr(line);
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": expected 2 columns");
        }
        map.insert_or_assign(line.substr(0, tab), line.substr(tab + 1));
    }
    return map;
}

const std::string kEmpty;

}  // namespace

std::string_view to_string(Direction d) {
    return d == Direction::TailMissing ? "tail" : "head";
}

std::uint32_t Vocabulary::intern(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it != index_.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(names_.size());
    names_.emplace_back(name);
    index_.emplace(names_.back(), id);
    return id;
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

KnowledgeGraph KnowledgeGraph::build(const RawDataset& raw) {
    KnowledgeGraph kg;
    auto intern_split = [&kg](const std::vector<RawTriple>& in, std::vector<Triple>& out) {
        out.reserve(in.size());
        for (const auto& t : in) {
            const EntityId h = kg.entities_.intern(t.head);
            const RelationId r = kg.relations_.intern(t.relation);
            const EntityId tl = kg.entities_.intern(t.tail);
            out.push_back({h, r, tl});
        }
    };
    intern_split(raw.train, kg.train_);
    intern_split(raw.valid, kg.valid_);
    intern_split(raw.test, kg.test_);

    kg.known_.reserve(kg.train_.size() + kg.valid_.size());
    kg.known_.insert(kg.known_.end(), kg.train_.begin(), kg.train_.end());
    kg.known_.insert(kg.known_.end(), kg.valid_.begin(), kg.valid_.end());

    const auto ne = kg.entities_.size();
    const auto nr = kg.relations_.size();
    kg.by_relation_.assign(nr, {});
    kg.as_head_.assign(ne, {});
    kg.as_tail_.assign(ne, {});
    kg.degree_.assign(ne, 0);
    for (TripleId id = 0; id < kg.known_.size(); ++id) {
        const auto& t = kg.known_[id];
        kg.by_relation_[t.relation].push_back(id);
        kg.as_head_[t.head].push_back(id);
        kg.as_tail_[t.tail].push_back(id);
        ++kg.degree_[t.head];
        ++kg.degree_[t.tail];
    }

    for (const auto* split : {&kg.train_, &kg.valid_, &kg.test_}) {
        for (const auto& t : *split) {
            kg.answers_[answer_key(t.head, t.relation, Direction::TailMissing)].push_back(t.tail);
            kg.answers_[answer_key(t.tail, t.relation, Direction::HeadMissing)].push_back(t.head);
        }
    }
    for (auto& [key, list] : kg.answers_) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    for (const auto& t : kg.train_) kg.train_tails_[pair_key(t.head, t.relation)].push_back(t.tail);
    for (auto& [key, list] : kg.train_tails_) std::sort(list.begin(), list.end());

    auto lookup = [](const auto& map, const std::string& id, const std::string& fallback) {
        auto it = map.find(id);
        return it == map.end() ? fallback : it->second;
    };
    kg.entity_text_.reserve(ne);
    kg.entity_description_.reserve(ne);
    for (const auto& name : kg.entities_.names()) {
        kg.entity_text_.push_back(lookup(raw.entity_text, name, name));
        kg.entity_description_.push_back(lookup(raw.entity_description, name, std::string()));
    }
    kg.relation_text_.reserve(nr);
    for (const auto& name : kg.relations_.names()) {
        kg.relation_text_.push_back(lookup(raw.relation_text, name, name));
    }
    return kg;
}

std::span<const Triple> KnowledgeGraph::split(std::string_view name) const {
    if (name == "train") return train_;
    if (name == "valid") return valid_;
    if (name == "test") return test_;
    throw DatasetError("unknown split: " + std::string(name));
}

std::span<const TripleId> KnowledgeGraph::by_relation(RelationId r) const {
    return r < by_relation_.size() ? std::span<const TripleId>(by_relation_[r]) : std::span<const TripleId>();
}

std::span<const TripleId> KnowledgeGraph::as_head(EntityId e) const {
    return e < as_head_.size() ? std::span<const TripleId>(as_head_[e]) : std::span<const TripleId>();
}

std::span<const TripleId> KnowledgeGraph::as_tail(EntityId e) const {
    return e < as_tail_.size() ? std::span<const TripleId>(as_tail_[e]) : std::span<const TripleId>();
}

std::vector<EntityId> KnowledgeGraph::known_answers(EntityId anchor, RelationId relation,
                                                    Direction direction) const {
    auto it = answers_.find(answer_key(anchor, relation, direction));
    return it == answers_.end() ? std::vector<EntityId>{} : it->second;
}

bool KnowledgeGraph::is_train_triple(const Triple& t) const {
    auto it = train_tails_.find(pair_key(t.head, t.relation));
    return it != train_tails_.end() && std::binary_search(it->second.begin(), it->second.end(), t.tail);
}

const std::string& KnowledgeGraph::entity_text(EntityId e) const {
    return e < entity_text_.size() ? entity_text_[e] : kEmpty;
}

const std::string& KnowledgeGraph::relation_text(RelationId r) const {
    return r < relation_text_.size() ? relation_text_[r] : kEmpty;
}

const std::string& KnowledgeGraph::entity_description(EntityId e) const {
    return e < entity_description_.size() ? entity_description_[e] : kEmpty;
}

RawDataset read_raw_dataset(const std::filesystem::path& directory) {
    RawDataset raw;
    raw.train = read_triples(directory / "train.txt");
    raw.valid = read_triples(directory / "valid.txt");
    raw.test = read_triples(directory / "test.txt");
    raw.entity_text = read_text_map(directory / "entity2text.txt");
    raw.relation_text = read_text_map(directory / "relation2text.txt");
    raw.entity_description = read_text_map(directory / "entity2textlong.txt");
    return raw;
}

KnowledgeGraph load_dataset(const std::filesystem::path& directory) {
    auto kg = KnowledgeGraph::build(read_raw_dataset(directory));
    spdlog::info("loaded {}: {} entities, {} relations, {}/{}/{} train/valid/test", directory.string(),
                 kg.num_entities(), kg.num_relations(), kg.train().size(), kg.valid().size(), kg.test().size());
    return kg;
}

std::vector<EntityId> known_answers(const KnowledgeGraph& kg, EntityId anchor, RelationId relation,
                                    Direction direction) {
    return kg.known_answers(anchor, relation, direction);
}

std::vector<Query> make_queries(const KnowledgeGraph& kg, std::string_view split) {
    const auto triples = kg.split(split);
    std::vector<Query> queries;
    queries.reserve(2 * triples.size());
    for (const auto& t : triples) {
        queries.push_back({Direction::TailMissing, t.head, t.relation, t.tail});
        queries.push_back({Direction::HeadMissing, t.tail, t.relation, t.head});
    }
    return queries;
}

}  // namespace kicrank
