// kicrank: batch command-line driver for retrieval, re-ranking and evaluation.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kicrank/config.hpp"
#include "kicrank/demos.hpp"
#include "kicrank/errors.hpp"
#include "kicrank/evaluator.hpp"
#include "kicrank/gateway.hpp"
#include "kicrank/kg.hpp"
#include "kicrank/reranker.hpp"
#include "kicrank/retriever.hpp"
#include "kicrank/synthetic.hpp"
#include "kicrank/verbalizer.hpp"

namespace fs = std::filesystem;
using namespace kicrank;

namespace {

constexpr const char* kCheckpoint = "retriever.ckpt";
constexpr const char* kTrainingReport = "training_report.json";
constexpr const char* kDemoCache = "demos.jsonl";
constexpr const char* kAlignedTemplates = "aligned_templates.tsv";
constexpr const char* kPredictions = "predictions.jsonl";

struct Overrides {
    std::string config;
    std::optional<std::size_t> jobs;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> backend;
    std::optional<std::string> output_dir;
    bool verbose = false;
};

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

fs::path require_artifact(const RunConfig& c, const char* name, const char* producer) {
    auto path = c.output_dir / name;
    if (!fs::exists(path)) {
        throw Error(fmt::format("{} not found; run `kicrank {} --config <file>` first", path.string(), producer));
    }
    return path;
}

RunConfig prepare(const Overrides& o) {
    auto c = load_run_config(o.config);
    if (o.jobs) c.jobs = *o.jobs;
    if (o.seed) {
        c.seed = *o.seed;
        c.retriever.seed = *o.seed;
    }
    if (o.backend) c.gateway.backend = parse_backend(*o.backend);
    if (o.output_dir) c.output_dir = fs::absolute(*o.output_dir);
    if (c.jobs == 0) throw ConfigError("--jobs must be positive");
    fs::create_directories(c.output_dir);
    write_file(c.output_dir / "effective_config.toml", dump_run_config(c));
    return c;
}

KnowledgeGraph load_graph(const RunConfig& c) {
    if (!c.synthetic) return load_dataset(c.dataset_dir);
    const auto& s = *c.synthetic;
    const auto raw = s.kind == "rings" ? synthetic::compositional_rings(s.entities, s.ring_size, s.holdout, c.seed)
                                       : synthetic::random_graph(s.entities, s.relations, s.triples, c.seed);
    return KnowledgeGraph::build(raw);
}

PromptTemplates load_templates(const RunConfig& c) {
    return c.prompt_templates.empty() ? PromptTemplates::defaults() : PromptTemplates::load(c.prompt_templates);
}

// Scheme the self-alignment prompts are written in: the raw relation form decides.
Scheme base_scheme(const RunConfig& c, const KnowledgeGraph& kg) {
    if (c.scheme != Scheme::Aligned) return c.scheme;
    for (const auto& name : kg.relations().names()) {
        if (name.find('/') != std::string::npos) return Scheme::FreebaseOfJoin;
    }
    return Scheme::WordnetInfix;
}

std::unique_ptr<Gateway> open_gateway(const RunConfig& c, const KnowledgeGraph& kg) {
    AnswerTable answers;
    if (c.gateway.backend == BackendKind::Oracle) answers = oracle_answers(kg, make_queries(kg, c.split));
    auto gateway = std::make_unique<Gateway>(c.gateway, make_backend(c.gateway, std::move(answers)));
    if (!c.gateway.cache_path.empty()) {
        const auto path = c.output_dir / c.gateway.cache_path;
        const auto n = gateway->load_cache(path);
        if (n > 0) spdlog::info("loaded {} cached completions from {}", n, path.string());
    }
    return gateway;
}

void close_gateway(const RunConfig& c, const Gateway& gateway) {
    const auto s = gateway.stats();
    spdlog::info("gateway: {} requests, {} cache hits, {} backend calls, {} retries", s.requests, s.cache_hits,
                 s.backend_calls, s.retries);
    if (!c.gateway.cache_path.empty()) {
        const auto n = gateway.flush_cache(c.output_dir / c.gateway.cache_path);
        spdlog::info("wrote {} cached completions", n);
    }
}

AlignedTemplates align_relations(const RunConfig& c, const KnowledgeGraph& kg, Gateway& gateway) {
    const Verbalizer base(kg, base_scheme(c, kg));
    DemonstrationEngine engine(base, c.seed);
    const auto templates = load_templates(c);
    AlignedTemplates aligned;
    std::size_t fallbacks = 0;
    for (RelationId r = 0; r < kg.num_relations(); ++r) {
        const auto order = engine.analogy_order(r);
        AlignedTemplate t;
        if (order.empty()) {
            t = parse_alignment_response("", r, base);
        } else {
            const auto conv =
                build_alignment_prompt(r, order, base, templates, c.token_budget - c.reply_reserve);
            RequestHints hints;
            hints.stage = Stage::Alignment;
            const auto reply = gateway.complete(conv.messages, hints);
            t = parse_alignment_response(reply, r, base);
        }
        fallbacks += t.fallback ? 1 : 0;
        aligned.emplace(r, t.text);
    }
    spdlog::info("aligned {} relations ({} fell back to the default wording)", kg.num_relations(), fallbacks);
    return aligned;
}

Verbalizer make_verbalizer(const RunConfig& c, const KnowledgeGraph& kg) {
    if (c.scheme != Scheme::Aligned) return Verbalizer(kg, c.scheme);
    const auto path = require_artifact(c, kAlignedTemplates, "preprocess");
    return Verbalizer(kg, Scheme::Aligned, load_aligned_templates(path, kg));
}

int cmd_preprocess(const RunConfig& c) {
    const auto kg = load_graph(c);
    if (c.alignment || c.scheme == Scheme::Aligned) {
        auto gateway = open_gateway(c, kg);
        const auto aligned = align_relations(c, kg, *gateway);
        save_aligned_templates(c.output_dir / kAlignedTemplates, kg, aligned);
        close_gateway(c, *gateway);
    }
    const auto verbalizer = make_verbalizer(c, kg);
    DemonstrationEngine engine(verbalizer, c.seed);
    for (RelationId r = 0; r < kg.num_relations(); ++r) engine.analogy_order(r);
    for (const auto& q : make_queries(kg, c.split)) engine.supplement_order(q);
    const auto cache = engine.cache();
    cache.write(c.output_dir / kDemoCache);
    spdlog::info("wrote {} analogy and {} supplement orders", cache.analogy.size(), cache.supplement.size());
    return 0;
}

int cmd_train(const RunConfig& c) {
    const auto kg = load_graph(c);
    auto model = RetrieverModel::initialize(kg.num_entities(), kg.num_relations(), c.retriever.dim,
                                            c.retriever.gamma, c.retriever.seed);
    const auto report = train(model, kg, c.retriever);
    save_model(model, c.output_dir / kCheckpoint);

    nlohmann::json doc = {{"steps", report.loss.size()},
                          {"initial_loss", report.loss.empty() ? 0.0 : report.loss.front()},
                          {"final_loss", report.loss.empty() ? 0.0 : report.loss.back()},
                          {"max_modulus_deviation", report.max_modulus_deviation},
                          {"loss", report.loss}};
    if (!kg.valid().empty()) {
        const auto valid = evaluate_retriever(kg, model, "valid");
        doc["valid"] = {{"MRR", valid.retriever.mrr},
                        {"Hits@1", valid.retriever.hits1},
                        {"Hits@3", valid.retriever.hits3},
                        {"Hits@10", valid.retriever.hits10}};
        spdlog::info("valid MRR {:.4f}, Hits@10 {:.4f}", valid.retriever.mrr, valid.retriever.hits10);
    }
    write_file(c.output_dir / kTrainingReport, doc.dump(2) + "\n");
    return 0;
}

int cmd_predict(const RunConfig& c) {
    const auto kg = load_graph(c);
    const auto model = load_model(require_artifact(c, kCheckpoint, "train"));
    if (model.num_entities() != kg.num_entities() || model.num_relations() != kg.num_relations()) {
        throw Error("the checkpoint does not match the dataset; rerun `kicrank train`");
    }
    const auto verbalizer = make_verbalizer(c, kg);
    DemoCache cache;
    if (fs::exists(c.output_dir / kDemoCache)) cache = DemoCache::read(c.output_dir / kDemoCache);
    DemonstrationEngine demos(verbalizer, c.seed, std::move(cache));
    const auto templates = load_templates(c);
    auto gateway = open_gateway(c, kg);

    PipelineConfig pc;
    pc.m = c.m;
    pc.conversation.mode = c.mode;
    pc.conversation.token_budget = c.token_budget;
    pc.conversation.reply_reserve = c.reply_reserve;
    pc.conversation.demo_batch_size = c.demo_batch_size;
    pc.ablations = c.ablations;
    pc.seed = c.seed;
    pc.jobs = c.jobs;
    pc.max_queries = c.max_queries;

    PipelineResult result;
    try {
        result = run_pipeline(kg, model, verbalizer, demos, templates, *gateway, pc, c.split);
    } catch (...) {
        close_gateway(c, *gateway);
        throw;
    }
    close_gateway(c, *gateway);
    write_predictions(c.output_dir / kPredictions, kg, result.results);
    spdlog::info("{} queries: MRR {:.4f} (retriever {:.4f}), Hits@1 {:.4f} (retriever {:.4f})",
                 result.report.query_count, result.report.reranked.mrr, result.report.retriever.mrr,
                 result.report.reranked.hits1, result.report.retriever.hits1);
    return 0;
}

int cmd_evaluate(const RunConfig& c) {
    const auto kg = load_graph(c);
    const auto results = read_predictions(require_artifact(c, kPredictions, "predict"), kg);
    if (results.empty()) throw Error("predictions file is empty; rerun `kicrank predict`");
    const auto report = summarize(results);
    write_file(c.output_dir / "report.json", report_json(report));
    write_file(c.output_dir / "report.csv", report_csv(report));
    std::cout << fmt::format("queries  {}\n", report.query_count);
    std::cout << fmt::format("{:<10} {:>8} {:>8} {:>8} {:>8}\n", "", "MRR", "Hits@1", "Hits@3", "Hits@10");
    for (const auto& [label, m] : {std::pair{"retriever", report.retriever}, std::pair{"reranked", report.reranked}}) {
        std::cout << fmt::format("{:<10} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f}\n", label, m.mrr, m.hits1, m.hits3,
                                 m.hits10);
    }
    return 0;
}

int cmd_longtail(const RunConfig& c) {
    const auto kg = load_graph(c);
    const auto results = read_predictions(require_artifact(c, kPredictions, "predict"), kg);
    const auto groups = longtail_report(results, kg);
    write_file(c.output_dir / "longtail.json", longtail_json(groups));
    write_file(c.output_dir / "longtail.csv", longtail_csv(groups));
    std::cout << fmt::format("{:>5} {:>7} {:>8} {:>8}\n", "group", "count", "Hits@1", "Hits@10");
    for (const auto& g : groups) {
        std::cout << fmt::format("{:>5} {:>7} {:>8.4f} {:>8.4f}\n", g.group, g.metrics.count, g.metrics.hits1,
                                 g.metrics.hits10);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-graph completion with LLM re-ranking"};
    app.require_subcommand(1);
    Overrides o;

    using Handler = int (*)(const RunConfig&);
    const std::vector<std::tuple<const char*, const char*, Handler>> commands = {
        {"preprocess", "Build demonstration orders and aligned relation templates", cmd_preprocess},
        {"train", "Train the embedding retriever", cmd_train},
        {"predict", "Re-rank the retriever's top candidates for every query", cmd_predict},
        {"evaluate", "Compute filtered metrics from predictions", cmd_evaluate},
        {"longtail", "Break metrics down by entity degree group", cmd_longtail},
    };
    Handler selected = nullptr;
    for (const auto& [name, help, handler] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config, "TOML run configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--jobs", o.jobs, "Worker threads");
        sub->add_option("--seed", o.seed, "Run seed");
        sub->add_option("--backend", o.backend, "Model backend")
            ->check(CLI::IsMember({"http", "identity", "oracle", "scripted"}));
        sub->add_option("--output-dir", o.output_dir, "Artifact directory");
        sub->add_flag("-v,--verbose", o.verbose, "Debug logging");
        sub->callback([&selected, h = handler] { selected = h; });
    }
    CLI11_PARSE(app, argc, argv);

    spdlog::set_default_logger(spdlog::stderr_color_mt("kicrank"));
    spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);
    try {
        const auto config = prepare(o);
        return selected(config);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
}
