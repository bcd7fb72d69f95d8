#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "redkit/annotation.hpp"
#include "redkit/corpus.hpp"
#include "redkit/dataset.hpp"
#include "redkit/experiments.hpp"
#include "redkit/graph.hpp"
#include "redkit/mentions.hpp"
#include "redkit/pipeline.hpp"

// Last: httplib pulls in <resolv.h>, whose _res macro breaks Eigen headers.
#include "redkit/annotation_http.hpp"

using namespace redkit;
namespace fs = std::filesystem;
namespace ex = redkit::experiments;

namespace {

using dataset::RelationInstance;
using dataset::Split;

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::vector<RelationInstance> by_split(const std::vector<RelationInstance>& all, Split split) {
    std::vector<RelationInstance> out;
    for (const auto& inst : all)
        if (inst.split == split) out.push_back(inst);
    return out;
}

/// Experiment config: RunConfig fields plus "data" paths and an "output" directory,
/// all relative to the config file.
struct Experiment {
    ex::RunConfig run;
    json raw;
    fs::path base;
    fs::path output;

    bool has(const std::string& key) const { return raw.contains("data") && raw["data"].contains(key); }
    std::vector<RelationInstance> load(const std::string& key) const {
        if (!has(key)) throw ParseError("config lacks data." + key);
        return dataset::read_instances(resolve(base, raw["data"][key].get<std::string>()));
    }
    /// data.train/dev/test files, or the splits of data.instances.
    std::vector<RelationInstance> part(const std::string& key, Split split) const {
        if (has(key)) return load(key);
        return by_split(load("instances"), split);
    }
};

Experiment load_experiment(const std::string& path) {
    Experiment e;
    e.raw = read_json_file(path);
    e.base = fs::absolute(path).parent_path();
    e.run = ex::run_config_from_json(e.raw);
    e.output = resolve(e.base, e.raw.value("output", "results"));
    fs::create_directories(e.output);
    return e;
}

void emit_results(const Experiment& e, const std::vector<ex::RunResult>& runs) {
    std::vector<json> records;
    for (const auto& r : runs) {
        const auto rs = ex::result_records(r);
        records.insert(records.end(), rs.begin(), rs.end());
    }
    write_jsonl(e.output / "results.jsonl", records);
    const std::string table = ex::format_summary(runs);
    std::ofstream(e.output / "summary.txt") << table;
    std::cout << table;
}

void save_checkpoints(const Experiment& e, const ex::RunResult& r) {
    for (const auto& s : r.seeds)
        write_json_file(e.output / ("model_seed" + std::to_string(s.seed) + ".json"),
                        {{"backend", e.run.backend}, {"model", s.checkpoint}});
}

models::RelationModel load_model(const fs::path& path) {
    const json j = read_json_file(path);
    std::shared_ptr<encoder::Backend> backend = encoder::BackendRegistry::global().create(j.at("backend"));
    return models::RelationModel::from_checkpoint(j.at("model"), std::move(backend));
}

void run_train(const std::string& config) {
    const auto e = load_experiment(config);
    const auto train = e.part("train", Split::Train);
    const auto dev = e.part("dev", Split::Dev);
    const auto test = e.has("test") || e.has("instances") ? e.part("test", Split::Test) : dev;
    const auto r = ex::run_holdout(e.run, train, dev, test, e.raw.value("name", "holdout"));
    save_checkpoints(e, r);
    emit_results(e, {r});
}

void run_eval(const std::string& config) {
    const json raw = read_json_file(config);
    const fs::path base = fs::absolute(config).parent_path();
    const auto model = load_model(resolve(base, raw.at("checkpoint").get<std::string>()));
    const auto test = dataset::read_instances(resolve(base, raw.at("data").at("test").get<std::string>()));
    const auto r = ex::evaluate(model, test, model.config().space);
    json out;
    for (const auto& [mode, v] : r.f1) out[dataset::to_string(mode)] = v;
    std::cout << out.dump(2) << "\n" << dataset::format_class_tables(r.confusion)
              << dataset::format_false_negatives(r.confusion);
}

void run_kfold(const std::string& config) {
    const auto e = load_experiment(config);
    emit_results(e, {ex::run_kfold(e.run, e.load("instances"), e.raw.value("name", "kfold"))});
}

void run_cross(const std::string& config) {
    const auto e = load_experiment(config);
    emit_results(e, {ex::cross_disease(e.run, e.load("train_dataset"), e.load("eval_dataset"), e.raw.value("name", "cross"))});
}

void run_baseline(const std::string& config) {
    const json raw = read_json_file(config);
    const fs::path base = fs::absolute(config).parent_path();
    const auto space = dataset::label_space_from_string(raw.value("setup", "multiclass"));
    auto gold_of = [&](const std::string& counts_key, const std::string& data_key) {
        std::vector<dataset::Label> gold;
        if (raw.contains(counts_key)) {
            const auto counts = raw.at(counts_key).get<std::vector<std::size_t>>();
            // Four-class counts may be scored in the binary space.
            for (auto l : ex::labels_from_counts(counts, counts.size() == 4 ? dataset::LabelSpace::Multiclass : space))
                gold.push_back(space == dataset::LabelSpace::Binary ? dataset::project_binary(l) : l);
        } else {
            for (const auto& inst : dataset::read_instances(resolve(base, raw.at("data").at(data_key).get<std::string>())))
                gold.push_back(space == dataset::LabelSpace::Binary ? dataset::project_binary(inst.label) : inst.label);
        }
        return gold;
    };
    const auto train = gold_of("train_counts", "train");
    const auto test = gold_of("test_counts", "test");
    const auto r = ex::random_baseline(ex::label_distribution(train, space), test, space, raw.value("trials", 100000),
                                       raw.value("seed", std::uint64_t{42}));
    json out{{"trials", r.trials}};
    for (const auto& [mode, v] : r.mean) out["mean"][dataset::to_string(mode)] = v;
    for (const auto& [mode, v] : r.stddev) out["std"][dataset::to_string(mode)] = v;
    std::cout << out.dump(2) << "\n";
}

void run_silver(const std::string& config) {
    const json raw = read_json_file(config);
    const fs::path base = fs::absolute(config).parent_path();
    std::vector<models::RelationModel> models;
    for (const auto& p : raw.at("checkpoints")) models.push_back(load_model(resolve(base, p.get<std::string>())));
    std::vector<const models::RelationModel*> ensemble;
    for (const auto& m : models) ensemble.push_back(&m);
    const auto instances = dataset::read_instances(resolve(base, raw.at("data").at("unlabeled").get<std::string>()));
    const auto records = ex::silver_label(instances, ensemble);
    const fs::path out = resolve(base, raw.value("output", "silver.jsonl"));
    dataset::write_instances(out, ex::apply_silver(instances, records));
    std::map<std::string, std::size_t> counts;
    std::size_t ties = 0;
    for (const auto& r : records) {
        ++counts[dataset::to_string(r.label)];
        ties += r.tie_broken;
    }
    std::cout << json{{"instances", records.size()}, {"labels", counts}, {"ties_broken", ties}, {"output", out}}.dump(2)
              << "\n";
}

void run_probe(const std::string& config) {
    const auto e = load_experiment(config);
    const json probe = e.raw.value("probe", json::object());
    const ex::ProbeData data{e.part("train", Split::Train), e.part("dev", Split::Dev), e.part("test", Split::Test)};
    std::shared_ptr<encoder::Backend> backend = encoder::BackendRegistry::global().create(e.run.backend);
    ex::ProbeGrid grid;
    if (probe.value("kind", "layers") == "attention") {
        grid = ex::probe_attention(e.run, data, *backend, ex::attention_probe_from_string(probe.value("mode", "per_head")));
    } else {
        grid = ex::probe_layers(e.run, data, backend, probe.value("variant", "P").at(0),
                                models::architecture_from_string(probe.value("aggregation", "lamreda")),
                                probe.value("projection", true));
    }
    write_json_file(e.output / "probe_grid.json", ex::to_json(grid));
    std::cout << ex::format_grid(grid);
}

int run_pipeline(const std::string& config) {
    const auto manifest = pipeline::manifest_from_json(read_json_file(config), fs::absolute(config).parent_path());
    const auto r = pipeline::run_pipeline(manifest);
    for (const auto& s : r.stages)
        std::cout << s.name << ": " << pipeline::to_string(s.status) << (s.error.empty() ? "" : " (" + s.error + ")") << "\n";
    return r.ok() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"redkit: biomedical relation dataset and modelling toolkit"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Fetch abstracts for a query and split them into sentences");
    std::string query, out_dir, stub;
    std::size_t page_limit = 100;
    ingest->add_option("--query", query, "Search query")->required();
    ingest->add_option("--out", out_dir, "Output directory")->required();
    ingest->add_option("--page-limit", page_limit, "Ids per search page");
    ingest->add_option("--stub", stub, "Offline fixture of abstracts instead of the remote service");

    // extract
    auto* extract = app.add_subcommand("extract", "Extract linked mentions from sentences");
    std::string sentences_path, extractor = "gazetteer", gazetteer, command, mentions_out;
    std::size_t workers = 1;
    bool allow_errors = false;
    extract->add_option("--sentences", sentences_path)->required();
    extract->add_option("--extractor", extractor);
    extract->add_option("--gazetteer", gazetteer);
    extract->add_option("--command", command);
    extract->add_option("--out", mentions_out)->required();
    extract->add_option("--workers", workers);
    extract->add_flag("--allow-errors", allow_errors, "Keep going when some sentences fail");

    // graph
    auto* graph_cmd = app.add_subcommand("graph", "Co-occurrence graph");
    graph_cmd->require_subcommand(1);
    auto* graph_build = graph_cmd->add_subcommand("build", "Build the graph from mentions");
    std::string mentions_path, graph_dir;
    graph_build->add_option("--mentions", mentions_path)->required();
    graph_build->add_option("--out", graph_dir)->required();
    graph_build->add_option("--workers", workers);
    auto* graph_query = graph_cmd->add_subcommand("query", "Pair frequency of two cuis");
    std::vector<std::string> pair;
    graph_query->add_option("--graph", graph_dir)->required();
    graph_query->add_option("--pair", pair)->required()->expected(2);

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "Draw sentences for annotation");
    std::size_t n = 0;
    std::uint64_t seed = 42;
    std::string sample_out;
    sample_cmd->add_option("--graph", graph_dir)->required();
    sample_cmd->add_option("--sentences", sentences_path)->required();
    sample_cmd->add_option("--mentions", mentions_path)->required();
    sample_cmd->add_option("-n", n)->required();
    sample_cmd->add_option("--seed", seed);
    sample_cmd->add_option("--out", sample_out)->required();

    // dataset
    auto* dataset_cmd = app.add_subcommand("dataset", "Instance files");
    dataset_cmd->require_subcommand(1);
    std::string instances_path, dataset_out;
    auto* ds_build = dataset_cmd->add_subcommand("build", "Instances from sampled sentences and mentions");
    ds_build->add_option("--sentences", sentences_path)->required();
    ds_build->add_option("--mentions", mentions_path)->required();
    ds_build->add_option("--out", dataset_out)->required();
    auto* ds_stats = dataset_cmd->add_subcommand("stats", "Sentence, instance, cui and label counts");
    ds_stats->add_option("--instances", instances_path)->required();
    bool as_json = false;
    ds_stats->add_flag("--json", as_json);
    auto* ds_split = dataset_cmd->add_subcommand("split", "Sentence-level train/dev/test assignment");
    std::string ratios = "0.68,0.12,0.20";
    ds_split->add_option("--instances", instances_path)->required();
    ds_split->add_option("--seed", seed);
    ds_split->add_option("--ratios", ratios);
    ds_split->add_option("--out", dataset_out)->required();
    auto* ds_kappa = dataset_cmd->add_subcommand("kappa", "Fleiss' kappa of the annotator labels");
    ds_kappa->add_option("--instances", instances_path)->required();

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Annotation service and UI");
    std::string service_config, export_path;
    serve_cmd->add_option("--config", service_config)->required();
    serve_cmd->add_option("--export", export_path, "Write the annotated instances.jsonl and exit");

    // run / probe
    auto* run_cmd = app.add_subcommand("run", "Experiments");
    run_cmd->require_subcommand(1);
    std::string config;
    std::map<std::string, CLI::App*> runs;
    for (const char* name : {"train", "eval", "kfold", "cross", "baseline", "silver", "probe", "pipeline"}) {
        runs[name] = run_cmd->add_subcommand(name);
        runs[name]->add_option("--config", config)->required();
    }
    auto* probe_cmd = app.add_subcommand("probe", "Layer or attention probes (same as run probe)");
    probe_cmd->add_option("--config", config)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            std::unique_ptr<corpus::ArticleSource> source;
            if (stub.empty()) source = std::make_unique<corpus::EntrezSource>(corpus::EntrezSource::Options{});
            else source = corpus::StubArticleSource::from_fixture(stub);
            const auto [abstracts, sentences] = pipeline::ingest(*source, query, page_limit);
            fs::create_directories(out_dir);
            corpus::write_abstracts(fs::path(out_dir) / pipeline::files::kAbstracts, abstracts);
            corpus::write_sentences(fs::path(out_dir) / pipeline::files::kSentences, sentences);
            std::cout << json{{"abstracts", abstracts.size()}, {"sentences", sentences.size()}}.dump() << "\n";
        } else if (*extract) {
            mentions::ExtractorOptions eo{gazetteer, command};
            auto ext = mentions::ExtractorRegistry::global().create(extractor, eo);
            const auto processed = mentions::process_corpus(corpus::read_sentences(sentences_path), *ext,
                                                            mentions::PriorityTable::defaults(), {}, workers);
            std::vector<mentions::LinkedMention> all;
            std::size_t failed = 0;
            for (const auto& s : processed) {
                all.insert(all.end(), s.mentions.begin(), s.mentions.end());
                if (s.error) {
                    ++failed;
                    std::cerr << "extract: " << s.sentence_id << ": " << *s.error << "\n";
                }
            }
            mentions::write_mentions(mentions_out, all);
            if (failed && !allow_errors) return 1;
        } else if (*graph_build) {
            graph::build_graph(mentions::read_mentions(mentions_path), {}, workers).save(graph_dir);
        } else if (*graph_query) {
            const auto g = graph::CooccurrenceGraph::load(graph_dir);
            std::cout << json{{"pair", pair}, {"weight", g.pair_frequency(pair[0], pair[1])}}.dump() << "\n";
        } else if (*sample_cmd) {
            corpus::write_sentences(sample_out, pipeline::sample_sentences(graph::CooccurrenceGraph::load(graph_dir),
                                                                           mentions::read_mentions(mentions_path),
                                                                           corpus::read_sentences(sentences_path), n, seed));
        } else if (*ds_build) {
            dataset::write_instances(dataset_out, pipeline::build_instances(corpus::read_sentences(sentences_path),
                                                                            mentions::read_mentions(mentions_path)));
        } else if (*ds_stats) {
            const auto stats = dataset::compute_stats(dataset::read_instances(instances_path));
            std::cout << (as_json ? dataset::to_json(stats).dump(2) + "\n" : dataset::format_stats(stats));
        } else if (*ds_split) {
            const auto parts = split(ratios, ',');
            if (parts.size() != 3) throw ParseError("--ratios needs three comma-separated values");
            auto instances = dataset::read_instances(instances_path);
            dataset::split_dataset(instances, {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])}, seed);
            dataset::write_instances(dataset_out, instances);
        } else if (*ds_kappa) {
            std::vector<std::map<std::string, dataset::Label>> ratings;
            for (const auto& inst : dataset::read_instances(instances_path))
                if (!inst.annotator_labels.empty()) ratings.push_back(inst.annotator_labels);
            std::cout << json{{"instances", ratings.size()},
                              {"multiclass", dataset::fleiss_kappa(dataset::rating_matrix(ratings, dataset::LabelSpace::Multiclass))},
                              {"binary", dataset::fleiss_kappa(dataset::rating_matrix(ratings, dataset::LabelSpace::Binary))}}
                             .dump(2)
                      << "\n";
        } else if (*serve_cmd) {
            annotation::Service service(annotation::service_config_from_json(
                read_json_file(service_config), fs::absolute(service_config).parent_path()));
            if (!export_path.empty()) {
                service.export_to(export_path);
            } else {
                std::cerr << "serving on " << service.config().host << ":" << service.config().port << "\n";
                annotation::serve(service);
            }
        } else if (*probe_cmd || *runs["probe"]) {
            run_probe(config);
        } else if (*runs["train"]) {
            run_train(config);
        } else if (*runs["eval"]) {
            run_eval(config);
        } else if (*runs["kfold"]) {
            run_kfold(config);
        } else if (*runs["cross"]) {
            run_cross(config);
        } else if (*runs["baseline"]) {
            run_baseline(config);
        } else if (*runs["silver"]) {
            run_silver(config);
        } else if (*runs["pipeline"]) {
            return run_pipeline(config);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
