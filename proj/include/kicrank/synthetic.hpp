#pragma once

#include <cstddef>
#include <cstdint>

#include "kicrank/kg.hpp"

namespace kicrank::synthetic {

/// Disjoint rings of `ring_size` entities with four relations that compose
/// (next, skip-two, skip-three, previous). Every `next` edge is in train;
/// `holdout` of the remaining edges go to test and the same fraction to valid.
RawDataset compositional_rings(std::size_t num_entities, std::size_t ring_size, double holdout,
                               std::uint64_t seed);

/// A single path e0 -> e1 -> ... under one relation, all in train except the
/// final `test_edges` links which go to test.
RawDataset chain(std::size_t num_entities, std::size_t test_edges);

/// Random multi-relational graph. A spanning cycle guarantees every entity and
/// relation appears in train; the rest are uniform random distinct triples
/// split 80/10/10.
RawDataset random_graph(std::size_t num_entities, std::size_t num_relations, std::size_t num_triples,
                        std::uint64_t seed);

}  // namespace kicrank::synthetic
