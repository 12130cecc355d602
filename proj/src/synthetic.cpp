#include "kicrank/synthetic.hpp"

#include <set>
#include <string>
#include <tuple>

#include "kicrank/rng.hpp"

namespace kicrank::synthetic {

namespace {

std::string entity_name(std::size_t i) { return "e" + std::to_string(i); }

}  // namespace

RawDataset compositional_rings(std::size_t num_entities, std::size_t ring_size, double holdout,
                               std::uint64_t seed) {
    static const char* kRelations[] = {"/ring/step/next", "/ring/step/skip_two", "/ring/step/skip_three",
                                       "/ring/step/previous"};
    static const long kOffsets[] = {1, 2, 3, -1};

    RawDataset raw;
    std::vector<RawTriple> others;
    const std::size_t rings = num_entities / ring_size;
    for (std::size_t ring = 0; ring < rings; ++ring) {
        const std::size_t base = ring * ring_size;
        for (std::size_t i = 0; i < ring_size; ++i) {
            for (std::size_t k = 0; k < 4; ++k) {
                const auto j = static_cast<std::size_t>(
                    (static_cast<long>(i) + kOffsets[k] + static_cast<long>(ring_size)) %
                    static_cast<long>(ring_size));
                RawTriple t{entity_name(base + i), kRelations[k], entity_name(base + j)};
                if (k == 0) {
                    raw.train.push_back(std::move(t));
                } else {
                    others.push_back(std::move(t));
                }
            }
        }
    }
    Rng rng = Rng::substream(seed, "synthetic.rings");
    rng.shuffle(others.begin(), others.end());
    const auto held = static_cast<std::size_t>(holdout * static_cast<double>(others.size()));
    for (std::size_t i = 0; i < others.size(); ++i) {
        if (i < held) {
            raw.test.push_back(std::move(others[i]));
        } else if (i < 2 * held) {
            raw.valid.push_back(std::move(others[i]));
        } else {
            raw.train.push_back(std::move(others[i]));
        }
    }
    for (std::size_t e = 0; e < rings * ring_size; ++e) {
        raw.entity_text[entity_name(e)] = "node " + std::to_string(e % ring_size) + " of ring " +
                                          std::to_string(e / ring_size);
    }
    return raw;
}

RawDataset chain(std::size_t num_entities, std::size_t test_edges) {
    RawDataset raw;
    for (std::size_t i = 0; i + 1 < num_entities; ++i) {
        RawTriple t{entity_name(i), "/chain/link/next", entity_name(i + 1)};
        if (i + 1 + test_edges >= num_entities) {
            raw.test.push_back(std::move(t));
        } else {
            raw.train.push_back(std::move(t));
        }
    }
    return raw;
}

RawDataset random_graph(std::size_t num_entities, std::size_t num_relations, std::size_t num_triples,
                        std::uint64_t seed) {
    RawDataset raw;
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
    auto relation_name = [](std::size_t r) { return "/random/rel/r" + std::to_string(r); };

    for (std::size_t i = 0; i < num_entities; ++i) {
        const std::size_t j = (i + 1) % num_entities;
        const std::size_t r = i % num_relations;
        seen.emplace(i, r, j);
        raw.train.push_back({entity_name(i), relation_name(r), entity_name(j)});
    }

    Rng rng = Rng::substream(seed, "synthetic.random");
    std::vector<RawTriple> extra;
    std::size_t attempts = 0;
    while (seen.size() < num_triples && attempts < 100 * num_triples) {
        ++attempts;
        const auto h = rng.uniform_index(num_entities);
        const auto r = rng.uniform_index(num_relations);
        const auto t = rng.uniform_index(num_entities);
        if (!seen.emplace(h, r, t).second) continue;
        extra.push_back({entity_name(h), relation_name(r), entity_name(t)});
    }
    const std::size_t n = extra.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n * 8 / 10) {
            raw.train.push_back(std::move(extra[i]));
        } else if (i < n * 9 / 10) {
            raw.valid.push_back(std::move(extra[i]));
        } else {
            raw.test.push_back(std::move(extra[i]));
        }
    }
    return raw;
}

}  // namespace kicrank::synthetic
