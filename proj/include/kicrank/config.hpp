#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "kicrank/gateway.hpp"
#include "kicrank/prompt.hpp"
#include "kicrank/retriever.hpp"
#include "kicrank/verbalizer.hpp"

namespace kicrank {

/// Generated dataset used instead of files on disk.
struct SyntheticSpec {
    std::string kind;  // "rings" or "random"
    std::size_t entities = 200;
    std::size_t ring_size = 10;
    double holdout = 0.2;
    std::size_t relations = 5;
    std::size_t triples = 400;

    friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct RunConfig {
    std::filesystem::path dataset_dir;
    std::string dataset_name;  // defaults to the directory name
    std::optional<SyntheticSpec> synthetic;
    std::string split = "test";
    std::optional<std::size_t> max_queries;

    TrainConfig retriever;

    std::size_t m = 10;
    InteractionMode mode = InteractionMode::Sort;
    Scheme scheme = Scheme::FreebaseOfJoin;
    std::size_t demo_batch_size = 4;
    std::size_t token_budget = 4096;
    std::size_t reply_reserve = 512;
    bool alignment = false;
    std::filesystem::path prompt_templates;  // empty: built-in wording

    GatewayConfig gateway;
    Ablations ablations;

    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::filesystem::path output_dir = "runs/default";

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Process environment lookup.
std::optional<std::string> process_env(const std::string& name);

/// Parses a TOML run config. Relative paths resolve against the file's
/// directory. Mode and scheme default by dataset name: names containing
/// "WN" get score mode with infix verbalization, everything else sort mode
/// with "of"-joined verbalization. KICRANK_ENDPOINT and KICRANK_MODEL
/// override the gateway settings. Throws ConfigError on unknown keys, bad
/// values, or an API key written into the file.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                           const EnvLookup& env = process_env);
RunConfig load_run_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

/// TOML for the fully resolved config; parsing it yields the same RunConfig.
std::string dump_run_config(const RunConfig& config);

}  // namespace kicrank
