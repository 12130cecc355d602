#include "kicrank/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "kicrank/errors.hpp"
#include "kicrank/hash.hpp"
#include "kicrank/rng.hpp"

namespace kicrank {

namespace {

constexpr char kMagic[8] = {'K', 'I', 'C', 'R', 'A', 'N', 'K', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

double log_sigmoid(double x) {
    return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct Rotation {
    std::vector<double> cos;
    std::vector<double> sin;

    explicit Rotation(std::span<const double> phases) : cos(phases.size()), sin(phases.size()) {
        for (std::size_t i = 0; i < phases.size(); ++i) {
            cos[i] = std::cos(phases[i]);
            sin[i] = std::sin(phases[i]);
        }
    }
};

double rotated_distance(std::span<const double> h, const Rotation& rot, std::span<const double> t,
                        std::size_t dim) {
    double sum = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double re = h[i] * rot.cos[i] - h[dim + i] * rot.sin[i] - t[i];
        const double im = h[i] * rot.sin[i] + h[dim + i] * rot.cos[i] - t[dim + i];
        sum += std::sqrt(re * re + im * im);
    }
    return sum;
}

// Adds coeff * d(distance)/d(params) for one triple into the row buffers.
void accumulate_distance_gradient(std::span<const double> h, const Rotation& rot, std::span<const double> t, std::size_t dim,
                                  double coeff, double* gh, double* gr, double* gt) {
    for (std::size_t i = 0; i < dim; ++i) {
        const double a = h[i], b = h[dim + i];
        const double re = a * rot.cos[i] - b * rot.sin[i] - t[i];
        const double im = a * rot.sin[i] + b * rot.cos[i] - t[dim + i];
        const double mod = std::sqrt(re * re + im * im);
        if (mod == 0.0) continue;
        const double ur = coeff * re / mod;
        const double ui = coeff * im / mod;
        gh[i] += ur * rot.cos[i] + ui * rot.sin[i];
        gh[dim + i] += -ur * rot.sin[i] + ui * rot.cos[i];
        gt[i] -= ur;
        gt[dim + i] -= ui;
        gr[i] += ur * (-a * rot.sin[i] - b * rot.cos[i]) + ui * (a * rot.cos[i] - b * rot.sin[i]);
    }
}

std::vector<double>& row(std::map<std::uint32_t, std::vector<double>>& rows, std::uint32_t id,
                         std::size_t width) {
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) it->second.assign(width, 0.0);
    return it->second;
}

template <typename T>
void put(std::vector<std::uint8_t>& buf, const T& value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& buf, std::size_t& offset) {
    T value;
    std::memcpy(&value, buf.data() + offset, sizeof(T));
    offset += sizeof(T);
    return value;
}

}  // namespace

void TrainConfig::validate() const {
    if (dim == 0 || batch_size == 0 || negatives_per_positive == 0 || !(gamma > 0) ||
        !(adversarial_temperature > 0) || !(learning_rate > 0)) {
        throw ConfigError("train config: dim, batch_size, negatives, gamma, temperature and "
                          "learning_rate must all be positive");
    }
}

RetrieverModel RetrieverModel::initialize(std::size_t num_entities, std::size_t num_relations,
                                          std::size_t dim, double gamma, std::uint64_t seed) {
    RetrieverModel m;
    m.dim_ = dim;
    m.num_entities_ = num_entities;
    m.num_relations_ = num_relations;
    m.gamma_ = gamma;
    m.seed_ = seed;
    Rng rng = Rng::substream(seed, "retriever.init");
    const double range = (gamma + 2.0) / static_cast<double>(dim);
    m.entity_.resize(num_entities * 2 * dim);
    for (auto& v : m.entity_) v = rng.uniform_real(-range, range);
    m.phase_.resize(num_relations * dim);
    for (auto& v : m.phase_) v = rng.uniform_real(-std::numbers::pi, std::numbers::pi);
    return m;
}

double RetrieverModel::distance(EntityId head, RelationId relation, EntityId tail) const {
    return rotated_distance(entity(head), Rotation(phases(relation)), entity(tail), dim_);
}

double RetrieverModel::max_modulus_deviation() const {
    double worst = 0.0;
    for (double p : phase_) {
        const double c = std::cos(p), s = std::sin(p);
        worst = std::max(worst, std::abs(std::sqrt(c * c + s * s) - 1.0));
    }
    return worst;
}

bool RetrieverModel::all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    return std::all_of(entity_.begin(), entity_.end(), finite) &&
           std::all_of(phase_.begin(), phase_.end(), finite);
}

double score(const RetrieverModel& model, const Query& query, EntityId candidate) {
    return query.direction == Direction::TailMissing
               ? -model.distance(query.anchor, query.relation, candidate)
               : -model.distance(candidate, query.relation, query.anchor);
}

std::span<const EntityId> Ranking::head(std::size_t m) const {
    if (m < 1 || m > order.size()) {
        throw ContractViolation("re-rank window m=" + std::to_string(m) + " outside [1, " +
                                std::to_string(order.size()) + "]");
    }
    return std::span<const EntityId>(order).first(m);
}

Ranking rank_all(const RetrieverModel& model, const Query& query) {
    const std::size_t n = model.num_entities();
    const std::size_t dim = model.dim();
    const Rotation rot(model.phases(query.relation));
    const auto anchor = model.entity(query.anchor);

    std::vector<double> by_entity(n);
    for (EntityId e = 0; e < n; ++e) {
        by_entity[e] = query.direction == Direction::TailMissing
                           ? -rotated_distance(anchor, rot, model.entity(e), dim)
                           : -rotated_distance(model.entity(e), rot, anchor, dim);
    }

    Ranking ranking;
    ranking.order.resize(n);
    std::iota(ranking.order.begin(), ranking.order.end(), EntityId{0});
    std::sort(ranking.order.begin(), ranking.order.end(), [&](EntityId a, EntityId b) {
        if (by_entity[a] != by_entity[b]) return by_entity[a] > by_entity[b];
        return a < b;
    });
    ranking.scores.reserve(n);
    for (EntityId e : ranking.order) ranking.scores.push_back(by_entity[e]);
    return ranking;
}

std::vector<std::vector<double>> adversarial_weights(const RetrieverModel& model,
                                                     std::span<const TrainingSample> batch, double gamma,
                                                     double temperature) {
    std::map<RelationId, Rotation> rotations;
    std::vector<std::vector<double>> weights;
    weights.reserve(batch.size());
    for (const auto& sample : batch) {
        std::vector<double> w(sample.negatives.size());
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const auto& neg = sample.negatives[j];
            auto it = rotations.find(neg.relation);
            if (it == rotations.end()) it = rotations.emplace(neg.relation, Rotation(model.phases(neg.relation))).first;
            const double d = rotated_distance(model.entity(neg.head), it->second, model.entity(neg.tail), model.dim());
            w[j] = temperature * (gamma - d);
            peak = std::max(peak, w[j]);
        }
        double total = 0.0;
        for (auto& v : w) {
            v = std::exp(v - peak);
            total += v;
        }
        for (auto& v : w) v /= total;
        weights.push_back(std::move(w));
    }
    return weights;
}

double batch_loss(const RetrieverModel& model, std::span<const TrainingSample> batch, double gamma,
                  const std::vector<std::vector<double>>& weights, Gradient* grad) {
    if (batch.empty()) return 0.0;
    const std::size_t dim = model.dim();
    const double scale = 0.5 / static_cast<double>(batch.size());

    std::map<RelationId, Rotation> rotations;
    auto rotation_for = [&](RelationId r) -> const Rotation& {
        auto it = rotations.find(r);
        if (it == rotations.end()) it = rotations.emplace(r, Rotation(model.phases(r))).first;
        return it->second;
    };

    double positive = 0.0;
    double negative = 0.0;
    auto visit = [&](const Triple& t, double dloss_ddist) {
        const Rotation& rot = rotation_for(t.relation);
        if (grad == nullptr) return;
        auto& gh = row(grad->entities, t.head, 2 * dim);
        auto& gt = row(grad->entities, t.tail, 2 * dim);
        auto& gr = row(grad->relations, t.relation, dim);
        if (t.head == t.tail) {
            // gh and gt alias the same row; accumulate separately then merge.
            std::vector<double> tmp_t(2 * dim, 0.0);
            accumulate_distance_gradient(model.entity(t.head), rot,
                                         model.entity(t.tail), dim, dloss_ddist, gh.data(), gr.data(),
                                         tmp_t.data());
            for (std::size_t i = 0; i < 2 * dim; ++i) gh[i] += tmp_t[i];
        } else {
            accumulate_distance_gradient(model.entity(t.head), rot,
                                         model.entity(t.tail), dim, dloss_ddist, gh.data(), gr.data(),
                                         gt.data());
        }
    };

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& sample = batch[b];
        const auto& p = sample.positive;
        const double dp = rotated_distance(model.entity(p.head), rotation_for(p.relation),
                                           model.entity(p.tail), dim);
        positive += -log_sigmoid(gamma - dp);
        visit(p, scale * sigmoid(dp - gamma));

        for (std::size_t j = 0; j < sample.negatives.size(); ++j) {
            const auto& n = sample.negatives[j];
            const double w = weights[b][j];
            const double dn = rotated_distance(model.entity(n.head), rotation_for(n.relation),
                                               model.entity(n.tail), dim);
            negative += -w * log_sigmoid(dn - gamma);
            visit(n, -scale * w * sigmoid(gamma - dn));
        }
    }
    return scale * (positive + negative);
}

TrainingReport train(RetrieverModel& model, const KnowledgeGraph& kg, const TrainConfig& config) {
    config.validate();
    TrainingReport report;
    report.max_modulus_deviation = model.max_modulus_deviation();
    const auto positives = kg.train();
    if (config.steps == 0 || positives.empty()) return report;

    Rng rng = Rng::substream(config.seed, "retriever.train");
    const std::size_t num_entities = model.num_entities();
    std::vector<std::size_t> epoch(positives.size());
    std::iota(epoch.begin(), epoch.end(), std::size_t{0});
    rng.shuffle(epoch.begin(), epoch.end());
    std::size_t cursor = 0;

    std::vector<TrainingSample> batch(config.batch_size);
    report.loss.reserve(config.steps);
    for (std::size_t step = 0; step < config.steps; ++step) {
        for (auto& sample : batch) {
            if (cursor == epoch.size()) {
                rng.shuffle(epoch.begin(), epoch.end());
                cursor = 0;
            }
            sample.positive = positives[epoch[cursor++]];
            const bool corrupt_head = rng.coin();
            sample.negatives.resize(config.negatives_per_positive);
            for (auto& neg : sample.negatives) {
                neg = sample.positive;
                for (int attempt = 0; attempt < 16; ++attempt) {
                    const auto e = static_cast<EntityId>(rng.uniform_index(num_entities));
                    (corrupt_head ? neg.head : neg.tail) = e;
                    if (!kg.is_train_triple(neg)) break;
                }
            }
        }

        const auto weights =
            adversarial_weights(model, batch, config.gamma, config.adversarial_temperature);
        Gradient grad;
        const double loss = batch_loss(model, batch, config.gamma, weights, &grad);
        if (!std::isfinite(loss)) {
            throw TrainingError("non-finite loss at step " + std::to_string(step) +
                                "; lower the learning rate or check the data");
        }
        report.loss.push_back(loss);

        for (const auto& [id, g] : grad.entities) {
            auto params = model.entity(id);
            for (std::size_t i = 0; i < g.size(); ++i) params[i] -= config.learning_rate * g[i];
        }
        for (const auto& [id, g] : grad.relations) {
            auto params = model.phases(id);
            for (std::size_t i = 0; i < g.size(); ++i) params[i] -= config.learning_rate * g[i];
        }
        report.max_modulus_deviation = std::max(report.max_modulus_deviation, model.max_modulus_deviation());
        if (step % 500 == 0) spdlog::debug("step {} loss {:.6f}", step, loss);
    }
    if (!model.all_finite()) throw TrainingError("non-finite embedding after training");
    return report;
}

void save_model(const RetrieverModel& model, const std::filesystem::path& path) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), std::begin(kMagic), std::end(kMagic));
    put(buf, kFormatVersion);
    put(buf, static_cast<std::uint32_t>(model.dim()));
    put(buf, static_cast<std::uint64_t>(model.num_entities()));
    put(buf, static_cast<std::uint64_t>(model.num_relations()));
    put(buf, model.gamma());
    put(buf, model.seed());
    for (double v : model.entity_payload()) put(buf, v);
    for (double v : model.phase_payload()) put(buf, v);
    const auto digest = sha256(buf);
    buf.insert(buf.end(), digest.begin(), digest.end());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path.string());
}

RetrieverModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot read " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    constexpr std::size_t kHeader = sizeof(kMagic) + 2 * sizeof(std::uint32_t) + 2 * sizeof(std::uint64_t) +
                                    sizeof(double) + sizeof(std::uint64_t);
    const std::size_t digest_size = Digest{}.size();
    auto corrupt = [&](const std::string& why) {
        return CheckpointError(CheckpointError::Kind::Corrupt, path.string() + ": " + why);
    };
    if (buf.size() < kHeader + digest_size) throw corrupt("checksum mismatch (file truncated)");
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) throw corrupt("not a retriever checkpoint");

    const std::size_t body = buf.size() - digest_size;
    const auto digest = sha256({buf.data(), body});
    if (!std::equal(digest.begin(), digest.end(), buf.begin() + static_cast<std::ptrdiff_t>(body))) {
        throw corrupt("checksum mismatch");
    }

    std::size_t offset = sizeof(kMagic);
    const auto version = take<std::uint32_t>(buf, offset);
    if (version != kFormatVersion) {
        throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                              path.string() + ": format version " + std::to_string(version) +
                                  ", expected " + std::to_string(kFormatVersion));
    }
    RetrieverModel m;
    m.dim_ = take<std::uint32_t>(buf, offset);
    m.num_entities_ = take<std::uint64_t>(buf, offset);
    m.num_relations_ = take<std::uint64_t>(buf, offset);
    m.gamma_ = take<double>(buf, offset);
    m.seed_ = take<std::uint64_t>(buf, offset);
    const std::size_t values = m.num_entities_ * 2 * m.dim_ + m.num_relations_ * m.dim_;
    if (offset + values * sizeof(double) != body) throw corrupt("payload size does not match header");
    m.entity_.resize(m.num_entities_ * 2 * m.dim_);
    m.phase_.resize(m.num_relations_ * m.dim_);
    std::memcpy(m.entity_.data(), buf.data() + offset, m.entity_.size() * sizeof(double));
    offset += m.entity_.size() * sizeof(double);
    std::memcpy(m.phase_.data(), buf.data() + offset, m.phase_.size() * sizeof(double));
    return m;
}

}  // namespace kicrank
