#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "redkit/corpus.hpp"
#include "redkit/dataset.hpp"
#include "redkit/graph.hpp"

namespace redkit::pipeline {

/// Work-directory artifacts of the built-in stages.
namespace files {
inline constexpr const char* kAbstracts = "abstracts.jsonl";
inline constexpr const char* kSentences = "sentences.jsonl";
inline constexpr const char* kMentions = "mentions.jsonl";
inline constexpr const char* kMentionErrors = "mention_errors.jsonl";
inline constexpr const char* kGraph = "graph";
inline constexpr const char* kSampled = "sampled.jsonl";
inline constexpr const char* kInstances = "instances.jsonl";
} // namespace files

/// Sampled sentences in draw order.
std::vector<corpus::SentenceRecord> sample_sentences(const graph::CooccurrenceGraph& graph,
                                                     const std::vector<mentions::LinkedMention>& mentions,
                                                     const std::vector<corpus::SentenceRecord>& sentences, std::size_t n,
                                                     std::uint64_t seed);
/// Instances of every sentence with at least two mentions.
std::vector<dataset::RelationInstance> build_instances(const std::vector<corpus::SentenceRecord>& sentences,
                                                       const std::vector<mentions::LinkedMention>& mentions);
/// Abstracts for `query` and their sentences; throws if any fetch batch failed.
std::pair<std::vector<corpus::AbstractRecord>, std::vector<corpus::SentenceRecord>> ingest(
    corpus::ArticleSource& source, const std::string& query, std::size_t page_limit,
    const corpus::FetchOptions& options = {});

/// Paths are relative to the work directory unless absolute.
struct StageSpec {
    std::string name;
    json config = json::object();
};

struct Manifest {
    std::filesystem::path work_dir;
    std::vector<StageSpec> stages;
};

/// {"work_dir": ..., "stages": [{"name": ..., "config": {...}}, ...]}; a
/// relative work_dir is resolved against `base`.
Manifest manifest_from_json(const json& j, const std::filesystem::path& base = {});

struct StageDefinition {
    std::vector<std::string> inputs;   // artifacts read from the work directory
    std::vector<std::string> outputs;  // artifacts written to the work directory
    /// Config keys naming external files whose contents feed the cache key.
    std::vector<std::string> file_keys;
    std::function<void(const json& config, const std::filesystem::path& work_dir)> run;
};

/// Built-in stages: ingest, extract, graph, sample, instances.
class StageRegistry {
public:
    static StageRegistry& global();
    void add(const std::string& name, StageDefinition stage);
    const StageDefinition& get(const std::string& name) const;

private:
    std::map<std::string, StageDefinition> stages_;
};

enum class StageStatus { Ran, Skipped, Failed, NotRun };
std::string to_string(StageStatus s);

struct StageRecord {
    std::string name;
    StageStatus status = StageStatus::NotRun;
    std::string key;  // hash of stage name, config, external files and input artifacts
    std::map<std::string, std::string> input_hashes;
    std::map<std::string, std::string> output_hashes;
    std::string timestamp;
    std::string error;
};

struct PipelineResult {
    std::vector<StageRecord> stages;
    bool ok() const;
};

json to_json(const StageRecord& r);

/// Runs the stages in order. A stage is skipped when its key matches the
/// recorded one and its outputs still hash as recorded. A failure stops the
/// run; later stages are not attempted and earlier outputs stay in place.
/// State is kept in <work_dir>/manifest.state.json.
PipelineResult run_pipeline(const Manifest& manifest, const StageRegistry& registry = StageRegistry::global());

} // namespace redkit::pipeline
