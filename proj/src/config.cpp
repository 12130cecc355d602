#include "kicrank/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <toml.hpp>

#include "kicrank/errors.hpp"

namespace kicrank {

namespace {

// Reads typed values from one TOML table and rejects keys nobody asked for.
class Section {
public:
    Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

    bool present() const { return table_ != nullptr; }

    template <typename T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        const auto* node = table_ ? table_->get(key) : nullptr;
        if (node == nullptr) return;
        if constexpr (std::is_same_v<T, bool>) {
            out = require(node->value<bool>(), key, "a boolean");
        } else if constexpr (std::is_same_v<T, double>) {
            out = require(node->value<double>(), key, "a number");
        } else if constexpr (std::is_integral_v<T>) {
            const auto v = require(node->value<std::int64_t>(), key, "an integer");
            if (v < 0) throw ConfigError(fmt::format("{}: must be non-negative", where(key)));
            out = static_cast<T>(v);
        } else {
            out = require(node->value<std::string>(), key, "a string");
        }
    }

    const toml::table* subtable(const std::string& key) {
        seen_.insert(key);
        if (!table_) return nullptr;
        const auto* node = table_->get(key);
        if (node == nullptr) return nullptr;
        if (!node->is_table()) throw ConfigError(where(key) + ": expected a table");
        return node->as_table();
    }

    void reject_unknown() const {
        if (!table_) return;
        for (const auto& [key, node] : *table_) {
            const std::string k(key.str());
            if (k == "api_key" || k == "apikey" || k == "key") {
                throw ConfigError(where(k) + ": API keys must come from the environment, never from config files");
            }
            if (!seen_.contains(k)) throw ConfigError("unknown config key: " + where(k));
        }
    }

private:
    template <typename T>
    T require(std::optional<T> v, const std::string& key, std::string_view what) const {
        if (!v) throw ConfigError(fmt::format("{}: expected {}", where(key), what));
        return *v;
    }

    std::string where(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

    const toml::table* table_;
    std::string name_;
    std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

bool wordnet_like(const std::string& name) { return name.find("WN") != std::string::npos; }

}  // namespace

std::optional<std::string> process_env(const std::string& name) {
    const char* v = std::getenv(name.c_str());
    if (v == nullptr) return std::nullopt;
    return std::string(v);
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir, const EnvLookup& env) {
    toml::table doc;
    try {
        doc = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "invalid TOML: " << e.description() << " at " << e.source().begin;
        throw ConfigError(msg.str());
    }

    RunConfig c;
    Section root(&doc, "");
    root.read("seed", c.seed);
    root.read("jobs", c.jobs);
    std::string output_dir = c.output_dir.string();
    root.read("output_dir", output_dir);
    c.output_dir = resolve(base_dir, output_dir);

    Section dataset(root.subtable("dataset"), "dataset");
    std::string path;
    dataset.read("path", path);
    c.dataset_dir = resolve(base_dir, path);
    dataset.read("name", c.dataset_name);
    dataset.read("split", c.split);
    std::size_t max_queries = 0;
    dataset.read("max_queries", max_queries);
    if (max_queries > 0) c.max_queries = max_queries;
    if (const auto* syn_table = dataset.subtable("synthetic")) {
        Section syn(syn_table, "dataset.synthetic");
        SyntheticSpec s;
        syn.read("kind", s.kind);
        syn.read("entities", s.entities);
        syn.read("ring_size", s.ring_size);
        syn.read("holdout", s.holdout);
        syn.read("relations", s.relations);
        syn.read("triples", s.triples);
        syn.reject_unknown();
        if (s.kind != "rings" && s.kind != "random") {
            throw ConfigError("dataset.synthetic.kind must be \"rings\" or \"random\"");
        }
        c.synthetic = s;
    }
    dataset.reject_unknown();
    if (c.dataset_name.empty()) {
        c.dataset_name = c.synthetic ? "synthetic-" + c.synthetic->kind : c.dataset_dir.filename().string();
    }
    if (!c.synthetic && c.dataset_dir.empty()) throw ConfigError("dataset.path is required");

    Section retriever(root.subtable("retriever"), "retriever");
    retriever.read("dim", c.retriever.dim);
    retriever.read("batch_size", c.retriever.batch_size);
    retriever.read("negatives", c.retriever.negatives_per_positive);
    retriever.read("gamma", c.retriever.gamma);
    retriever.read("adversarial_temperature", c.retriever.adversarial_temperature);
    retriever.read("learning_rate", c.retriever.learning_rate);
    retriever.read("steps", c.retriever.steps);
    retriever.reject_unknown();
    c.retriever.seed = c.seed;
    c.retriever.validate();

    const bool wn = wordnet_like(c.dataset_name);
    c.mode = wn ? InteractionMode::Score : InteractionMode::Sort;
    c.scheme = wn ? Scheme::WordnetInfix : Scheme::FreebaseOfJoin;
    Section rerank(root.subtable("rerank"), "rerank");
    rerank.read("m", c.m);
    std::string mode(to_string(c.mode));
    rerank.read("mode", mode);
    c.mode = parse_mode(mode);
    std::string scheme(to_string(c.scheme));
    rerank.read("scheme", scheme);
    c.scheme = parse_scheme(scheme);
    rerank.read("demo_batch_size", c.demo_batch_size);
    rerank.read("token_budget", c.token_budget);
    rerank.read("reply_reserve", c.reply_reserve);
    rerank.read("alignment", c.alignment);
    std::string templates;
    rerank.read("templates", templates);
    c.prompt_templates = resolve(base_dir, templates);
    rerank.reject_unknown();
    if (c.m == 0) throw ConfigError("rerank.m must be positive");
    if (c.reply_reserve >= c.token_budget) throw ConfigError("rerank.reply_reserve must be below rerank.token_budget");

    auto& g = c.gateway;
    Section gateway(root.subtable("gateway"), "gateway");
    std::string backend(to_string(g.backend));
    gateway.read("backend", backend);
    g.backend = parse_backend(backend);
    gateway.read("endpoint", g.endpoint);
    gateway.read("model", g.model);
    gateway.read("temperature", g.sampling.temperature);
    gateway.read("top_p", g.sampling.top_p);
    gateway.read("presence_penalty", g.sampling.presence_penalty);
    gateway.read("frequency_penalty", g.sampling.frequency_penalty);
    gateway.read("max_in_flight", g.max_in_flight);
    std::string cache = g.cache_path.string();
    gateway.read("cache", cache);
    g.cache_path = cache;  // relative to the output directory
    gateway.read("api_key_env", g.api_key_env);
    gateway.read("timeout_seconds", g.timeout_seconds);
    gateway.read("intermediate_turns", g.intermediate_turns);
    std::string script;
    gateway.read("script", script);
    g.script_path = resolve(base_dir, script);
    if (const auto* retry_table = gateway.subtable("retry")) {
        Section retry(retry_table, "gateway.retry");
        std::size_t attempts = static_cast<std::size_t>(g.retry.max_attempts);
        retry.read("max_attempts", attempts);
        g.retry.max_attempts = static_cast<int>(attempts);
        retry.read("initial_backoff_seconds", g.retry.initial_backoff_seconds);
        retry.read("multiplier", g.retry.multiplier);
        retry.read("jitter", g.retry.jitter);
        retry.reject_unknown();
    }
    gateway.reject_unknown();
    if (auto v = env("KICRANK_ENDPOINT"); v && !v->empty()) g.endpoint = *v;
    if (auto v = env("KICRANK_MODEL"); v && !v->empty()) g.model = *v;
    if (g.max_in_flight == 0) throw ConfigError("gateway.max_in_flight must be positive");
    if (g.retry.max_attempts < 1) throw ConfigError("gateway.retry.max_attempts must be at least 1");

    Section ablation(root.subtable("ablation"), "ablation");
    ablation.read("shuffle_candidates", c.ablations.shuffle_candidates);
    ablation.read("random_demos", c.ablations.random_demos);
    ablation.read("no_icl", c.ablations.no_icl);
    ablation.read("trivial_prompt", c.ablations.trivial_prompt);
    ablation.reject_unknown();

    root.reject_unknown();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const EnvLookup& env) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    const auto base = std::filesystem::absolute(path).parent_path();
    try {
        return parse_run_config(buffer.str(), base, env);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string dump_run_config(const RunConfig& c) {
    auto i = [](std::size_t v) { return static_cast<std::int64_t>(v); };

    toml::table dataset{{"path", c.dataset_dir.string()},
                        {"name", c.dataset_name},
                        {"split", c.split},
                        {"max_queries", i(c.max_queries.value_or(0))}};
    if (c.synthetic) {
        const auto& s = *c.synthetic;
        dataset.insert("synthetic", toml::table{{"kind", s.kind},
                                                {"entities", i(s.entities)},
                                                {"ring_size", i(s.ring_size)},
                                                {"holdout", s.holdout},
                                                {"relations", i(s.relations)},
                                                {"triples", i(s.triples)}});
    }
    const auto& r = c.retriever;
    const auto& g = c.gateway;
    toml::table doc{
        {"seed", static_cast<std::int64_t>(c.seed)},
        {"jobs", i(c.jobs)},
        {"output_dir", c.output_dir.string()},
        {"dataset", std::move(dataset)},
        {"retriever", toml::table{{"dim", i(r.dim)},
                                  {"batch_size", i(r.batch_size)},
                                  {"negatives", i(r.negatives_per_positive)},
                                  {"gamma", r.gamma},
                                  {"adversarial_temperature", r.adversarial_temperature},
                                  {"learning_rate", r.learning_rate},
                                  {"steps", i(r.steps)}}},
        {"rerank", toml::table{{"m", i(c.m)},
                               {"mode", std::string(to_string(c.mode))},
                               {"scheme", std::string(to_string(c.scheme))},
                               {"demo_batch_size", i(c.demo_batch_size)},
                               {"token_budget", i(c.token_budget)},
                               {"reply_reserve", i(c.reply_reserve)},
                               {"alignment", c.alignment},
                               {"templates", c.prompt_templates.string()}}},
        {"gateway", toml::table{{"backend", std::string(to_string(g.backend))},
                                {"endpoint", g.endpoint},
                                {"model", g.model},
                                {"temperature", g.sampling.temperature},
                                {"top_p", g.sampling.top_p},
                                {"presence_penalty", g.sampling.presence_penalty},
                                {"frequency_penalty", g.sampling.frequency_penalty},
                                {"max_in_flight", i(g.max_in_flight)},
                                {"cache", g.cache_path.string()},
                                {"api_key_env", g.api_key_env},
                                {"timeout_seconds", g.timeout_seconds},
                                {"intermediate_turns", g.intermediate_turns},
                                {"script", g.script_path.string()},
                                {"retry", toml::table{{"max_attempts", static_cast<std::int64_t>(g.retry.max_attempts)},
                                                      {"initial_backoff_seconds", g.retry.initial_backoff_seconds},
                                                      {"multiplier", g.retry.multiplier},
                                                      {"jitter", g.retry.jitter}}}}},
        {"ablation", toml::table{{"shuffle_candidates", c.ablations.shuffle_candidates},
                                 {"random_demos", c.ablations.random_demos},
                                 {"no_icl", c.ablations.no_icl},
                                 {"trivial_prompt", c.ablations.trivial_prompt}}},
    };
    std::ostringstream out;
    out << doc << '\n';
    return out.str();
}

}  // namespace kicrank
