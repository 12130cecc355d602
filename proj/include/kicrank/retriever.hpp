#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "kicrank/kg.hpp"

namespace kicrank {

struct TrainConfig {
    std::size_t dim = 64;
    std::size_t batch_size = 256;
    std::size_t negatives_per_positive = 64;
    double gamma = 6.0;
    double adversarial_temperature = 1.0;
    double learning_rate = 1.0;
    std::size_t steps = 2000;
    std::uint64_t seed = 0;

    /// Throws ConfigError unless every field is positive.
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Complex-rotation embedding model.
///
/// Entities are complex vectors of dimension `dim`, stored as [re..., im...].
/// Relations are stored as phases, so every relation coordinate e^{i*phase}
/// has unit modulus by construction.
class RetrieverModel {
public:
    RetrieverModel() = default;

    /// Entity coordinates uniform in +-(gamma + 2) / dim, phases uniform in [-pi, pi).
    static RetrieverModel initialize(std::size_t num_entities, std::size_t num_relations, std::size_t dim,
                                     double gamma, std::uint64_t seed);

    std::size_t dim() const { return dim_; }
    std::size_t num_entities() const { return num_entities_; }
    std::size_t num_relations() const { return num_relations_; }
    double gamma() const { return gamma_; }
    std::uint64_t seed() const { return seed_; }

    std::span<const double> entity(EntityId e) const {
        return {entity_.data() + static_cast<std::size_t>(e) * 2 * dim_, 2 * dim_};
    }
    std::span<double> entity(EntityId e) {
        return {entity_.data() + static_cast<std::size_t>(e) * 2 * dim_, 2 * dim_};
    }
    std::span<const double> phases(RelationId r) const {
        return {phase_.data() + static_cast<std::size_t>(r) * dim_, dim_};
    }
    std::span<double> phases(RelationId r) {
        return {phase_.data() + static_cast<std::size_t>(r) * dim_, dim_};
    }

    std::span<const double> entity_payload() const { return entity_; }
    std::span<const double> phase_payload() const { return phase_; }

    /// sum_i |h_i * e^{i*phase_i} - t_i|
    double distance(EntityId head, RelationId relation, EntityId tail) const;

    /// Largest | |e^{i*phase}| - 1 | over all relation coordinates.
    double max_modulus_deviation() const;

    bool all_finite() const;

    friend bool operator==(const RetrieverModel&, const RetrieverModel&) = default;

private:
    friend RetrieverModel load_model(const std::filesystem::path& path);

    std::size_t dim_ = 0;
    std::size_t num_entities_ = 0;
    std::size_t num_relations_ = 0;
    double gamma_ = 0.0;
    std::uint64_t seed_ = 0;
    std::vector<double> entity_;
    std::vector<double> phase_;
};

/// Plausibility of `candidate` filling the query's missing slot: the negated
/// rotation distance. Higher is more plausible.
double score(const RetrieverModel& model, const Query& query, EntityId candidate);

struct Ranking {
    std::vector<EntityId> order;  // every entity, descending score
    std::vector<double> scores;   // aligned with order

    /// The first m entities. Throws ContractViolation unless 1 <= m <= |E|.
    std::span<const EntityId> head(std::size_t m) const;
};

/// All entities by descending score, ties by ascending entity id.
Ranking rank_all(const RetrieverModel& model, const Query& query);

struct TrainingReport {
    std::vector<double> loss;  // one entry per step
    double max_modulus_deviation = 0.0;  // worst value seen after any step
};

/// Self-adversarial negative-sampling training with plain SGD.
/// Throws TrainingError if the loss becomes non-finite.
TrainingReport train(RetrieverModel& model, const KnowledgeGraph& kg, const TrainConfig& config);

void save_model(const RetrieverModel& model, const std::filesystem::path& path);
/// Throws CheckpointError (Corrupt on checksum/size failure, VersionMismatch).
RetrieverModel load_model(const std::filesystem::path& path);

// Loss internals, exposed for gradient checking.

struct TrainingSample {
    Triple positive;
    std::vector<Triple> negatives;
};

/// Sparse gradient keyed by parameter row.
struct Gradient {
    std::map<EntityId, std::vector<double>> entities;     // 2 * dim per row
    std::map<RelationId, std::vector<double>> relations;  // dim per row
};

/// Softmax over negatives of temperature * (gamma - distance), per sample.
std::vector<std::vector<double>> adversarial_weights(const RetrieverModel& model,
                                                     std::span<const TrainingSample> batch, double gamma,
                                                     double temperature);

/// Batch loss
///   0.5 * mean_b[-log sigmoid(gamma - d_pos)]
/// + 0.5 * mean_b[sum_j w_bj * -log sigmoid(d_neg_j - gamma)]
/// with the adversarial weights w held constant. Accumulates the gradient
/// into `grad` when non-null.
double batch_loss(const RetrieverModel& model, std::span<const TrainingSample> batch, double gamma,
                  const std::vector<std::vector<double>>& weights, Gradient* grad);

}  // namespace kicrank
