#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kicrank/kg.hpp"
#include "kicrank/rng.hpp"
#include "kicrank/verbalizer.hpp"

namespace kicrank {

struct DemonstrationSet {
    std::vector<TripleId> analogy_pool;
    std::vector<TripleId> supplement_pool;
    std::vector<TripleId> analogy_order;     // permutation of analogy_pool
    std::vector<TripleId> supplement_order;  // permutation of supplement_pool
};

/// train+valid triples carrying `relation`, in index order.
std::vector<TripleId> build_analogy_pool(const KnowledgeGraph& kg, RelationId relation);

/// train+valid triples with `anchor` as head, then those with it as tail.
/// A self-loop appears once.
std::vector<TripleId> build_supplement_pool(const KnowledgeGraph& kg, EntityId anchor);

/// Diversity ordering. Starts from pool[first], then repeatedly takes the
/// remaining triple whose endpoint counters have the smallest sum. Ties are
/// broken by a uniform draw over the tied triples in pool order. Returns a
/// permutation of pool indices.
std::vector<std::size_t> diversity_order_from(std::span<const Triple> pool, std::size_t first, Rng& rng);

/// As above with a uniformly drawn first triple.
std::vector<std::size_t> diversity_order(std::span<const Triple> pool, Rng& rng);

std::vector<TripleId> order_analogy(const KnowledgeGraph& kg, std::span<const TripleId> pool,
                                    std::uint64_t seed);

/// Indices of `documents` by descending BM25 against `query`, stable on ties.
std::vector<std::size_t> bm25_order(std::span<const std::string> documents, std::string_view query);

/// `pool_texts[i]` is the rendered text of `pool[i]`.
std::vector<TripleId> order_supplement(std::span<const TripleId> pool, std::span<const std::string> pool_texts,
                                       std::string_view query_text);

/// `count` distinct train+valid triples drawn uniformly (fewer if the graph is smaller).
std::vector<TripleId> random_demonstrations(const KnowledgeGraph& kg, std::size_t count, Rng& rng);

/// Cache key for a query's supplement order: "anchor\trelation\tdirection".
std::string supplement_key(const KnowledgeGraph& kg, const Query& q);

/// Precomputed orders, persisted as JSON lines
/// {"kind": "analogy"|"supplement", "key": ..., "triples": [ids...]}.
struct DemoCache {
    std::map<std::string, std::vector<TripleId>> analogy;     // keyed by relation name
    std::map<std::string, std::vector<TripleId>> supplement;  // keyed by supplement_key

    void write(const std::filesystem::path& path) const;
    static DemoCache read(const std::filesystem::path& path);
};

/// Serves ordered demonstrations per query, computing and memoizing orders on
/// first use. Safe to call from several threads.
class DemonstrationEngine {
public:
    DemonstrationEngine(const Verbalizer& verbalizer, std::uint64_t seed, DemoCache cache = {});

    DemonstrationSet for_query(const Query& q);
    std::vector<TripleId> analogy_order(RelationId r);
    std::vector<TripleId> supplement_order(const Query& q);

    /// Snapshot of every order computed or loaded so far.
    DemoCache cache() const;

private:
    const Verbalizer* verbalizer_;
    std::uint64_t seed_;
    mutable std::mutex mutex_;
    DemoCache cache_;
};

}  // namespace kicrank
