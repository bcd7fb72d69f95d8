#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <fstream>
#include <unistd.h>

#include "redkit/dataset.hpp"
#include "redkit/mentions.hpp"
#include "redkit/pipeline.hpp"

using namespace redkit;
using namespace redkit::pipeline;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() / ("redkit_pipeline_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const std::vector<std::string> kAbstracts{
    "Rett syndrome is caused by mutations in MECP2. Aspirin does not change MECP2 levels in Rett syndrome.",
    "Amyloid deposits mark Alzheimer's disease. Aspirin was studied in Alzheimer's disease with amyloid imaging.",
    "Type II diabetes raises the risk of Alzheimer's disease. Aspirin use in diabetes was common.",
    "The norepinephrine transporter inhibitor reduced symptoms. MECP2 and amyloid were unrelated here."};

json manifest_json(const fs::path& dir, std::uint64_t sample_seed) {
    {
        std::ofstream out(dir / "stub.jsonl");
        for (std::size_t i = 0; i < kAbstracts.size(); ++i)
            out << json{{"article_id", std::to_string(1000 + i)}, {"title", "t"}, {"abstract", kAbstracts[i]}}.dump() << "\n";
    }
    fs::copy_file(fs::path(REDKIT_FIXTURES) / "gazetteer.jsonl", dir / "gazetteer.jsonl", fs::copy_options::overwrite_existing);
    return {{"work_dir", "work"},
            {"stages",
             {{{"name", "ingest"}, {"config", {{"query", "rett"}, {"stub", "stub.jsonl"}}}},
              {{"name", "extract"}, {"config", {{"extractor", "gazetteer"}, {"gazetteer", "gazetteer.jsonl"}}}},
              {{"name", "graph"}},
              {{"name", "sample"}, {"config", {{"n", 4}, {"seed", sample_seed}}}},
              {{"name", "instances"}}}}};
}

std::vector<StageStatus> statuses(const PipelineResult& r) {
    std::vector<StageStatus> out;
    for (const auto& s : r.stages) out.push_back(s.status);
    return out;
}

class FailingExtractor : public mentions::Extractor {
public:
    std::string name() const override { return "failing"; }
    std::vector<mentions::RawMention> extract(const corpus::SentenceRecord&) override {
        throw mentions::ExtractorError("tool crashed");
    }
};

} // namespace

TEST_CASE("pipeline runs end to end and caches") {
    TempDir tmp;
    const auto manifest = manifest_from_json(manifest_json(tmp.path, 42), tmp.path);
    const auto first = run_pipeline(manifest);
    for (const auto& s : first.stages) INFO(s.name << ": " << s.error);
    CHECK(first.ok());
    CHECK(statuses(first) == std::vector<StageStatus>(5, StageStatus::Ran));
    const auto instances = dataset::read_instances(manifest.work_dir / files::kInstances);
    CHECK_FALSE(instances.empty());
    for (std::size_t i = 1; i < first.stages.size(); ++i)
        for (const auto& [name, hash] : first.stages[i].input_hashes)
            for (const auto& prev : first.stages)
                if (prev.output_hashes.count(name)) CHECK(prev.output_hashes.at(name) == hash);

    SUBCASE("an unchanged rerun skips everything") {
        const auto again = run_pipeline(manifest);
        CHECK(statuses(again) == std::vector<StageStatus>(5, StageStatus::Skipped));
    }
    SUBCASE("a new sampler seed reruns only the sampler and downstream") {
        const auto reseeded = manifest_from_json(manifest_json(tmp.path, 7), tmp.path);
        const auto r = run_pipeline(reseeded);
        CHECK(statuses(r) == std::vector<StageStatus>{StageStatus::Skipped, StageStatus::Skipped, StageStatus::Skipped,
                                                      StageStatus::Ran, StageStatus::Ran});
    }
    SUBCASE("a modified output is rebuilt") {
        std::ofstream(manifest.work_dir / files::kInstances, std::ios::app) << "\n";
        const auto r = run_pipeline(manifest);
        CHECK(r.stages.back().status == StageStatus::Ran);
        CHECK(r.stages[3].status == StageStatus::Skipped);
    }
    SUBCASE("outputs are a pure function of inputs and configs") {
        TempDir other;
        const auto m2 = manifest_from_json(manifest_json(other.path, 42), other.path);
        const auto r2 = run_pipeline(m2);
        CHECK(r2.stages.back().output_hashes == first.stages.back().output_hashes);
    }
}

TEST_CASE("a failing extractor halts the pipeline") {
    mentions::ExtractorRegistry::global().add(
        "failing", [](const mentions::ExtractorOptions&) { return std::make_unique<FailingExtractor>(); });
    TempDir tmp;
    auto j = manifest_json(tmp.path, 42);
    j["stages"][1]["config"] = {{"extractor", "failing"}};
    const auto r = run_pipeline(manifest_from_json(j, tmp.path));
    CHECK_FALSE(r.ok());
    CHECK(statuses(r) == std::vector<StageStatus>{StageStatus::Ran, StageStatus::Failed, StageStatus::NotRun,
                                                  StageStatus::NotRun, StageStatus::NotRun});
    CHECK(r.stages[1].error.find("tool crashed") != std::string::npos);
    CHECK(fs::exists(tmp.path / "work" / files::kSentences));
    CHECK_FALSE(fs::exists(tmp.path / "work" / files::kGraph));
    const auto rerun = run_pipeline(manifest_from_json(j, tmp.path));
    CHECK(rerun.stages[0].status == StageStatus::Skipped);
    CHECK(rerun.stages[1].status == StageStatus::Failed);
}

TEST_CASE("manifest validation") {
    CHECK_THROWS_AS(manifest_from_json({{"work_dir", "w"}, {"stages", {{{"name", "nope"}}}}}), PreconditionError);
    CHECK_THROWS_AS(manifest_from_json({{"work_dir", "w"}, {"stages", {{{"name", "graph"}}, {{"name", "graph"}}}}}),
                    ParseError);
    TempDir tmp;
    const auto m = manifest_from_json({{"work_dir", "w"}, {"stages", {{{"name", "graph"}}}}}, tmp.path);
    CHECK_THROWS_AS(run_pipeline(m), PreconditionError);
}
