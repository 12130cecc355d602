#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <string>
#include <vector>

#include "kicrank/kg.hpp"
#include "kicrank/retriever.hpp"
#include "kicrank/rng.hpp"

namespace kicrank::testing {

// Straight-line replay of the diversity ordering: uniform first pick, then
// repeatedly the remaining triple with the smallest endpoint-counter sum,
// ties drawn uniformly among candidates in pool order.
inline std::vector<std::size_t> reference_diversity(const std::vector<Triple>& pool, Rng& rng) {
    const std::size_t n = pool.size();
    std::vector<std::size_t> order;
    if (n == 0) return order;
    std::map<EntityId, long> counter;
    std::vector<bool> used(n, false);
    auto pick = [&](std::size_t i) {
        used[i] = true;
        order.push_back(i);
        ++counter[pool[i].head];
        ++counter[pool[i].tail];
    };
    pick(rng.uniform_index(n));
    while (order.size() < n) {
        long best = -1;
        std::vector<std::size_t> ties;
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            const long s = counter[pool[i].head] + counter[pool[i].tail];
            if (best < 0 || s < best) {
                best = s;
                ties.clear();
            }
            if (s == best) ties.push_back(i);
        }
        pick(ties[rng.uniform_index(ties.size())]);
    }
    return order;
}

// Okapi BM25 written out term by term with no shared helpers.
inline double naive_bm25(const std::vector<std::vector<std::string>>& docs, std::size_t d,
                  const std::vector<std::string>& query) {
    const double k1 = 1.5, b = 0.75;
    const double n = static_cast<double>(docs.size());
    double total_len = 0.0;
    for (const auto& doc : docs) total_len += static_cast<double>(doc.size());
    const double avgdl = total_len / n;
    double score = 0.0;
    for (const auto& term : query) {
        double df = 0.0;
        for (const auto& doc : docs) {
            if (std::find(doc.begin(), doc.end(), term) != doc.end()) df += 1.0;
        }
        const double tf = static_cast<double>(std::count(docs[d].begin(), docs[d].end(), term));
        if (tf == 0.0) continue;
        const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
        const double len = static_cast<double>(docs[d].size());
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avgdl));
    }
    return score;
}

// Straight-line reference: -sum_i |h_i * exp(i*theta_i) - t_i| with std::complex.
inline double reference_score(const RetrieverModel& m, EntityId h, RelationId r, EntityId t) {
    const auto d = m.dim();
    const auto eh = m.entity(h);
    const auto et = m.entity(t);
    const auto ph = m.phases(r);
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const std::complex<double> hc(eh[i], eh[d + i]);
        const std::complex<double> tc(et[i], et[d + i]);
        total += std::abs(hc * std::polar(1.0, ph[i]) - tc);
    }
    return -total;
}

}  // namespace kicrank::testing
