#include "redkit/pipeline.hpp"

#include <map>
#include <set>

#include "redkit/corpus.hpp"
#include "redkit/dataset.hpp"
#include "redkit/graph.hpp"
#include "redkit/mentions.hpp"
#include "redkit/sampler.hpp"

namespace redkit::pipeline {

namespace fs = std::filesystem;

namespace {

void run_ingest(const json& c, const fs::path& dir) {
    std::unique_ptr<corpus::ArticleSource> source;
    if (c.contains("stub")) {
        source = corpus::StubArticleSource::from_fixture(c.at("stub").get<std::string>());
    } else {
        corpus::EntrezSource::Options o;
        o.base_url = c.value("base_url", o.base_url);
        o.requests_per_second = c.value("requests_per_second", o.requests_per_second);
        source = std::make_unique<corpus::EntrezSource>(o);
    }
    corpus::FetchOptions fo;
    fo.batch_size = c.value("batch_size", fo.batch_size);
    fo.workers = c.value("workers", fo.workers);
    const auto [abstracts, sentences] = ingest(*source, c.at("query").get<std::string>(), c.value("page_limit", 100), fo);
    corpus::write_abstracts(dir / files::kAbstracts, abstracts);
    corpus::write_sentences(dir / files::kSentences, sentences);
}

void run_extract(const json& c, const fs::path& dir) {
    mentions::ExtractorOptions eo;
    if (c.contains("gazetteer")) eo.gazetteer = c.at("gazetteer").get<std::string>();
    eo.command = c.value("command", "");
    auto extractor = mentions::ExtractorRegistry::global().create(c.value("extractor", "gazetteer"), eo);
    const auto table = c.contains("priorities") ? mentions::PriorityTable::from_json(c.at("priorities"))
                                                : mentions::PriorityTable::defaults();
    const auto processed = mentions::process_corpus(corpus::read_sentences(dir / files::kSentences), *extractor, table,
                                                    {}, c.value("workers", std::size_t{1}));
    std::vector<mentions::LinkedMention> all;
    std::vector<json> errors;
    for (const auto& s : processed) {
        all.insert(all.end(), s.mentions.begin(), s.mentions.end());
        if (s.error) errors.push_back({{"sentence_id", s.sentence_id}, {"error", *s.error}});
    }
    write_jsonl(dir / files::kMentionErrors, errors);
    if (!errors.empty() && !c.value("allow_errors", false))
        throw Error("extract: " + std::to_string(errors.size()) + " sentences failed, first: " +
                    errors.front().at("error").get<std::string>());
    mentions::write_mentions(dir / files::kMentions, all);
}

void run_graph(const json& c, const fs::path& dir) {
    graph::GraphOptions o;
    o.single_mention_nodes = c.value("single_mention_nodes", true);
    const auto g = graph::build_graph(mentions::read_mentions(dir / files::kMentions), o, c.value("workers", std::size_t{1}));
    fs::remove_all(dir / files::kGraph);
    g.save(dir / files::kGraph);
}

void run_sample(const json& c, const fs::path& dir) {
    corpus::write_sentences(dir / files::kSampled,
                            sample_sentences(graph::CooccurrenceGraph::load(dir / files::kGraph),
                                             mentions::read_mentions(dir / files::kMentions),
                                             corpus::read_sentences(dir / files::kSentences), c.at("n").get<std::size_t>(),
                                             c.value("seed", std::uint64_t{42})));
}

void run_instances(const json& c, const fs::path& dir) {
    auto out = build_instances(corpus::read_sentences(dir / files::kSampled), mentions::read_mentions(dir / files::kMentions));
    if (c.contains("split")) {
        const auto r = c.at("split").at("ratios").get<std::vector<double>>();
        if (r.size() != 3) throw ParseError("instances: split ratios need three values");
        dataset::split_dataset(out, {r[0], r[1], r[2]}, c.at("split").value("seed", std::uint64_t{42}));
    }
    dataset::write_instances(dir / files::kInstances, out);
}

std::string hash_strings(const std::vector<std::string>& parts) {
    std::uint64_t h = fnv1a64("stage");
    for (const auto& p : parts) {
        h = fnv1a64(p, h);
        h = fnv1a64(std::string_view("\x1f", 1), h);
    }
    return to_hex(h);
}

} // namespace

std::vector<corpus::SentenceRecord> sample_sentences(const graph::CooccurrenceGraph& graph,
                                                     const std::vector<mentions::LinkedMention>& mentions,
                                                     const std::vector<corpus::SentenceRecord>& sentences, std::size_t n,
                                                     std::uint64_t seed) {
    const auto scores = sampler::score_sentences(mentions, graph);
    const auto ids = sampler::sample(sampler::build_distributions(scores.weights), n, seed);
    std::map<std::string, const corpus::SentenceRecord*> by_id;
    for (const auto& s : sentences) by_id.emplace(s.sentence_id, &s);
    std::vector<corpus::SentenceRecord> out;
    for (const auto& id : ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw PreconditionError("sampled sentence " + id + " is missing from the sentence file");
        out.push_back(*it->second);
    }
    return out;
}

std::vector<dataset::RelationInstance> build_instances(const std::vector<corpus::SentenceRecord>& sentences,
                                                       const std::vector<mentions::LinkedMention>& mentions) {
    std::map<std::string, std::vector<mentions::LinkedMention>> by_sentence;
    for (const auto& m : mentions) by_sentence[m.sentence_id].push_back(m);
    std::vector<dataset::RelationInstance> out;
    for (const auto& s : sentences) {
        const auto it = by_sentence.find(s.sentence_id);
        if (it == by_sentence.end() || it->second.size() < 2) continue;
        auto made = dataset::make_instances(s, it->second);
        out.insert(out.end(), made.begin(), made.end());
    }
    return out;
}

std::pair<std::vector<corpus::AbstractRecord>, std::vector<corpus::SentenceRecord>> ingest(
    corpus::ArticleSource& source, const std::string& query, std::size_t page_limit, const corpus::FetchOptions& options) {
    const auto ids = corpus::fetch_article_ids(source, query, page_limit, options.retry);
    const auto fetched = corpus::fetch_abstracts(source, ids, options);
    if (!fetched.failures.empty())
        throw Error("ingest: " + std::to_string(fetched.failures.size()) + " batches failed, first: " +
                    fetched.failures.front().error);
    std::vector<corpus::SentenceRecord> sentences;
    const corpus::SentenceSplitter splitter;
    for (const auto& r : fetched.records) {
        auto s = corpus::split_sentences(r, splitter);
        sentences.insert(sentences.end(), s.begin(), s.end());
    }
    return {fetched.records, sentences};
}

StageRegistry& StageRegistry::global() {
    static StageRegistry registry = [] {
        StageRegistry r;
        r.add("ingest", {{}, {files::kAbstracts, files::kSentences}, {"stub"}, run_ingest});
        r.add("extract", {{files::kSentences}, {files::kMentions, files::kMentionErrors}, {"gazetteer"}, run_extract});
        r.add("graph", {{files::kMentions}, {files::kGraph}, {}, run_graph});
        r.add("sample", {{files::kGraph, files::kMentions, files::kSentences}, {files::kSampled}, {}, run_sample});
        r.add("instances", {{files::kSampled, files::kMentions}, {files::kInstances}, {}, run_instances});
        return r;
    }();
    return registry;
}

void StageRegistry::add(const std::string& name, StageDefinition stage) { stages_[name] = std::move(stage); }

const StageDefinition& StageRegistry::get(const std::string& name) const {
    const auto it = stages_.find(name);
    if (it == stages_.end()) throw PreconditionError("unknown pipeline stage: " + name);
    return it->second;
}

std::string to_string(StageStatus s) {
    switch (s) {
    case StageStatus::Ran: return "ran";
    case StageStatus::Skipped: return "skipped";
    case StageStatus::Failed: return "failed";
    case StageStatus::NotRun: return "not_run";
    }
    return "not_run";
}

bool PipelineResult::ok() const {
    for (const auto& s : stages)
        if (s.status == StageStatus::Failed || s.status == StageStatus::NotRun) return false;
    return true;
}

json to_json(const StageRecord& r) {
    json j{{"name", r.name},
           {"status", to_string(r.status)},
           {"key", r.key},
           {"inputs", r.input_hashes},
           {"outputs", r.output_hashes},
           {"timestamp", r.timestamp}};
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

Manifest manifest_from_json(const json& j, const fs::path& base) {
    Manifest m;
    fs::path work = j.at("work_dir").get<std::string>();
    m.work_dir = work.is_absolute() || base.empty() ? work : base / work;
    const auto& registry = StageRegistry::global();
    for (const auto& s : j.at("stages")) {
        StageSpec spec{s.at("name").get<std::string>(), s.value("config", json::object())};
        // External file paths in the config are relative to the manifest.
        const auto& def = registry.get(spec.name);
        for (const auto& key : def.file_keys) {
            if (!spec.config.contains(key) || base.empty()) continue;
            fs::path p = spec.config.at(key).get<std::string>();
            if (!p.is_absolute()) spec.config[key] = (base / p).string();
        }
        m.stages.push_back(std::move(spec));
    }
    std::set<std::string> seen;
    for (const auto& s : m.stages)
        if (!seen.insert(s.name).second) throw ParseError("stage listed twice: " + s.name);
    return m;
}

PipelineResult run_pipeline(const Manifest& manifest, const StageRegistry& registry) {
    fs::create_directories(manifest.work_dir);
    const fs::path state_path = manifest.work_dir / "manifest.state.json";
    json state = fs::exists(state_path) ? read_json_file(state_path) : json::object();

    // Every input must be produced by an earlier stage or already exist.
    std::set<std::string> produced;
    for (const auto& spec : manifest.stages) {
        const auto& def = registry.get(spec.name);
        for (const auto& in : def.inputs)
            if (!produced.count(in) && !fs::exists(manifest.work_dir / in))
                throw PreconditionError("stage " + spec.name + " needs " + in + ", which no earlier stage produces");
        produced.insert(def.outputs.begin(), def.outputs.end());
    }

    PipelineResult result;
    bool halted = false;
    for (const auto& spec : manifest.stages) {
        StageRecord rec;
        rec.name = spec.name;
        if (halted) {
            result.stages.push_back(rec);
            continue;
        }
        const auto& def = registry.get(spec.name);
        std::vector<std::string> parts{spec.name, spec.config.dump()};
        for (const auto& key : def.file_keys)
            if (spec.config.contains(key)) parts.push_back(key + "=" + hash_path(spec.config.at(key).get<std::string>()));
        for (const auto& in : def.inputs) {
            rec.input_hashes[in] = hash_path(manifest.work_dir / in);
            parts.push_back(in + "=" + rec.input_hashes[in]);
        }
        rec.key = hash_strings(parts);

        bool fresh = state.contains(spec.name) && state[spec.name].value("key", "") == rec.key &&
                     state[spec.name].value("status", "") != "failed";
        if (fresh)
            for (const auto& out : def.outputs)
                if (state[spec.name]["outputs"].value(out, "") != hash_path(manifest.work_dir / out)) fresh = false;
        if (fresh) {
            rec.status = StageStatus::Skipped;
            rec.output_hashes = state[spec.name]["outputs"].get<std::map<std::string, std::string>>();
            rec.timestamp = state[spec.name].value("timestamp", "");
        } else {
            rec.timestamp = iso8601_now();
            try {
                def.run(spec.config, manifest.work_dir);
                for (const auto& out : def.outputs) rec.output_hashes[out] = hash_path(manifest.work_dir / out);
                rec.status = StageStatus::Ran;
            } catch (const std::exception& e) {
                rec.status = StageStatus::Failed;
                rec.error = e.what();
                halted = true;
            }
            state[spec.name] = to_json(rec);
            write_json_file(state_path, state);
        }
        result.stages.push_back(rec);
    }
    return result;
}

} // namespace redkit::pipeline
