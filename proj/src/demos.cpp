#include "kicrank/demos.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "kicrank/bm25.hpp"
#include "kicrank/errors.hpp"

namespace kicrank {

std::vector<TripleId> build_analogy_pool(const KnowledgeGraph& kg, RelationId relation) {
    const auto ids = kg.by_relation(relation);
    return {ids.begin(), ids.end()};
}

std::vector<TripleId> build_supplement_pool(const KnowledgeGraph& kg, EntityId anchor) {
    const auto heads = kg.as_head(anchor);
    std::vector<TripleId> pool(heads.begin(), heads.end());
    for (TripleId id : kg.as_tail(anchor)) {
        if (kg.known_triple(id).head != anchor) pool.push_back(id);
    }
    return pool;
}

std::vector<std::size_t> diversity_order_from(std::span<const Triple> pool, std::size_t first, Rng& rng) {
    const std::size_t n = pool.size();
    std::vector<std::size_t> order;
    if (n == 0) return order;
    order.reserve(n);

    // Each pool index is listed once per endpoint, so a self-loop appears twice
    // under its entity and its sum moves by 2 per counter increment.
    std::unordered_map<EntityId, std::vector<std::size_t>> incident;
    for (std::size_t i = 0; i < n; ++i) {
        incident[pool[i].head].push_back(i);
        incident[pool[i].tail].push_back(i);
    }

    std::vector<long> sum(n, 0);
    std::vector<bool> taken(n, false);
    std::map<long, std::set<std::size_t>> buckets;
    auto& zero = buckets[0];
    for (std::size_t i = 0; i < n; ++i) zero.insert(zero.end(), i);

    auto take = [&](std::size_t i) {
        auto bucket = buckets.find(sum[i]);
        bucket->second.erase(i);
        if (bucket->second.empty()) buckets.erase(bucket);
        taken[i] = true;
        order.push_back(i);
        for (EntityId e : {pool[i].head, pool[i].tail}) {
            for (std::size_t j : incident[e]) {
                if (taken[j]) continue;
                auto from = buckets.find(sum[j]);
                from->second.erase(j);
                if (from->second.empty()) buckets.erase(from);
                buckets[++sum[j]].insert(j);
            }
        }
    };

    take(first);
    while (order.size() < n) {
        const auto& lowest = buckets.begin()->second;
        const auto pick = rng.uniform_index(lowest.size());
        take(*std::next(lowest.begin(), static_cast<std::ptrdiff_t>(pick)));
    }
    return order;
}

std::vector<std::size_t> diversity_order(std::span<const Triple> pool, Rng& rng) {
    if (pool.empty()) return {};
    const auto first = rng.uniform_index(pool.size());
    return diversity_order_from(pool, first, rng);
}

std::vector<TripleId> order_analogy(const KnowledgeGraph& kg, std::span<const TripleId> pool,
                                    std::uint64_t seed) {
    std::vector<Triple> triples;
    triples.reserve(pool.size());
    for (TripleId id : pool) triples.push_back(kg.known_triple(id));
    Rng rng(seed);
    std::vector<TripleId> ordered;
    ordered.reserve(pool.size());
    for (auto i : diversity_order(triples, rng)) ordered.push_back(pool[i]);
    return ordered;
}

std::vector<std::size_t> bm25_order(std::span<const std::string> documents, std::string_view query) {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(documents.size());
    for (const auto& d : documents) docs.push_back(tokenize(d));
    const CorpusStats stats(docs);
    const auto query_tokens = tokenize(query);

    std::vector<double> scores(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) scores[i] = bm25_score(docs[i], query_tokens, stats);
    std::vector<std::size_t> idx(docs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

std::vector<TripleId> order_supplement(std::span<const TripleId> pool, std::span<const std::string> pool_texts,
                                       std::string_view query_text) {
    if (pool.size() != pool_texts.size()) {
        throw ContractViolation("order_supplement: one text per pool triple required");
    }
    std::vector<TripleId> ordered;
    ordered.reserve(pool.size());
    for (auto i : bm25_order(pool_texts, query_text)) ordered.push_back(pool[i]);
    return ordered;
}

std::vector<TripleId> random_demonstrations(const KnowledgeGraph& kg, std::size_t count, Rng& rng) {
    const std::size_t n = kg.known_triples().size();
    count = std::min(count, n);
    // Sparse partial Fisher-Yates: only touched slots are materialized.
    std::unordered_map<std::size_t, std::size_t> swapped;
    auto at = [&](std::size_t i) {
        auto it = swapped.find(i);
        return it == swapped.end() ? i : it->second;
    };
    std::vector<TripleId> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.uniform_index(n - i);
        const std::size_t vi = at(i), vj = at(j);
        swapped[i] = vj;
        swapped[j] = vi;
        out.push_back(static_cast<TripleId>(vj));
    }
    return out;
}

std::string supplement_key(const KnowledgeGraph& kg, const Query& q) {
    return kg.entities().name(q.anchor) + '\t' + kg.relations().name(q.relation) + '\t' +
           std::string(to_string(q.direction));
}

void DemoCache::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write demonstration cache: " + path.string());
    auto emit = [&out](std::string_view kind, const auto& map) {
        for (const auto& [key, ids] : map) {
            nlohmann::json record{{"kind", kind}, {"key", key}, {"triples", ids}};
            out << record.dump() << '\n';
        }
    };
    emit("analogy", analogy);
    emit("supplement", supplement);
}

DemoCache DemoCache::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read demonstration cache: " + path.string());
    DemoCache cache;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto record = nlohmann::json::parse(line);
            const auto kind = record.at("kind").get<std::string>();
            auto ids = record.at("triples").get<std::vector<TripleId>>();
            auto key = record.at("key").get<std::string>();
            if (kind == "analogy") {
                cache.analogy[std::move(key)] = std::move(ids);
            } else if (kind == "supplement") {
                cache.supplement[std::move(key)] = std::move(ids);
            } else {
                spdlog::warn("{}:{}: unknown record kind {}", path.string(), lineno, kind);
            }
        } catch (const nlohmann::json::exception& e) {
            spdlog::warn("{}:{}: skipping malformed record ({})", path.string(), lineno, e.what());
        }
    }
    return cache;
}

DemonstrationEngine::DemonstrationEngine(const Verbalizer& verbalizer, std::uint64_t seed, DemoCache cache)
    : verbalizer_(&verbalizer), seed_(seed), cache_(std::move(cache)) {}

std::vector<TripleId> DemonstrationEngine::analogy_order(RelationId r) {
    const auto& kg = verbalizer_->graph();
    const auto& key = kg.relations().name(r);
    {
        std::lock_guard lock(mutex_);
        auto it = cache_.analogy.find(key);
        if (it != cache_.analogy.end()) return it->second;
    }
    auto ordered = order_analogy(kg, build_analogy_pool(kg, r), mix_seed(seed_, "demos.analogy", r));
    std::lock_guard lock(mutex_);
    return cache_.analogy.emplace(key, std::move(ordered)).first->second;
}

std::vector<TripleId> DemonstrationEngine::supplement_order(const Query& q) {
    const auto& kg = verbalizer_->graph();
    const auto key = supplement_key(kg, q);
    {
        std::lock_guard lock(mutex_);
        auto it = cache_.supplement.find(key);
        if (it != cache_.supplement.end()) return it->second;
    }
    const auto pool = build_supplement_pool(kg, q.anchor);
    std::vector<std::string> texts;
    texts.reserve(pool.size());
    for (TripleId id : pool) texts.push_back(verbalizer_->triple(kg.known_triple(id)));
    auto ordered = order_supplement(pool, texts, verbalizer_->query(q));
    std::lock_guard lock(mutex_);
    return cache_.supplement.emplace(key, std::move(ordered)).first->second;
}

DemonstrationSet DemonstrationEngine::for_query(const Query& q) {
    const auto& kg = verbalizer_->graph();
    DemonstrationSet set;
    set.analogy_pool = build_analogy_pool(kg, q.relation);
    set.supplement_pool = build_supplement_pool(kg, q.anchor);
    set.analogy_order = analogy_order(q.relation);
    set.supplement_order = supplement_order(q);
    return set;
}

DemoCache DemonstrationEngine::cache() const {
    std::lock_guard lock(mutex_);
    return cache_;
}

}  // namespace kicrank
