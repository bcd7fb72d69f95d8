#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "redkit/graph.hpp"

using namespace redkit;
using namespace redkit::graph;
using mentions::LinkedMention;
namespace fs = std::filesystem;

namespace {

LinkedMention m(const std::string& sid, const std::string& cui, const std::string& surface = "") {
    return {sid, {0, 1}, surface.empty() ? cui : surface, cui, "Disease or Syndrome", mentions::Linker::UMLS, {}};
}

std::vector<LinkedMention> fixture_mentions() {
    std::vector<LinkedMention> out;
    for_each_jsonl(fs::path(REDKIT_FIXTURES) / "graph_mentions.jsonl",
                   [&](const json& j) { out.push_back(mentions::mention_from_json(j)); });
    return out;
}

} // namespace

TEST_CASE("one sentence yields a complete graph") {
    const auto g = build_graph({m("s", "X"), m("s", "Y"), m("s", "Z")});
    CHECK(g.edges().size() == 3);
    CHECK(g.pair_frequency("X", "Y") == 1);
    CHECK(g.pair_frequency("X", "Z") == 1);
    CHECK(g.pair_frequency("Z", "Y") == 1);
    CHECK(g.nodes().size() == 3);
}

TEST_CASE("repeated pairs count once per sentence; self pairs are excluded") {
    const auto g = build_graph({m("a", "X"), m("a", "Y"), m("a", "X"), m("b", "X"), m("b", "Y")});
    CHECK(g.pair_frequency("X", "Y") == 2);
    CHECK(g.edges().at("X|Y").sentence_ids.size() == 2);
    CHECK(g.pair_frequency("X", "X") == 0);
    CHECK(g.pair_frequency("X", "Q") == 0);
}

TEST_CASE("single-mention sentences contribute nodes unless disabled") {
    CHECK(build_graph({m("a", "X")}).nodes().size() == 1);
    GraphOptions opt;
    opt.single_mention_nodes = false;
    CHECK(build_graph({m("a", "X")}, opt).nodes().empty());
}

TEST_CASE("node description is the smallest surface regardless of order") {
    const auto g1 = build_graph({m("a", "X", "beta"), m("b", "X", "alpha"), m("b", "Y")});
    const auto g2 = build_graph({m("b", "X", "alpha"), m("b", "Y"), m("a", "X", "beta")});
    CHECK(g1.nodes().at("X").description == "alpha");
    CHECK(g1 == g2);
}

TEST_CASE("10-sentence fixture matches the brute-force pair counter") {
    const auto mentions = fixture_mentions();
    const json expected = read_json_file(fs::path(REDKIT_FIXTURES) / "graph_edges.json");
    const auto g = build_graph(mentions);
    REQUIRE(g.edges().size() == expected.size());
    for (const auto& [key, e] : expected.items()) {
        INFO(key);
        REQUIRE(g.edges().count(key));
        CHECK(g.edges().at(key).weight == e.at("weight").get<std::uint64_t>());
        CHECK(g.edges().at(key).sentence_ids == e.at("sentence_ids").get<std::set<std::string>>());
    }
    // total weight == sum over sentences of C(k, 2)
    std::map<std::string, std::set<std::string>> per_sentence;
    for (const auto& x : mentions) per_sentence[x.sentence_id].insert(x.cui);
    std::uint64_t expected_total = 0;
    for (const auto& [sid, cuis] : per_sentence) expected_total += cuis.size() * (cuis.size() - 1) / 2;
    CHECK(g.total_weight() == expected_total);
    for (const auto& [cui, node] : g.nodes()) CHECK_FALSE(node.sentence_ids.empty());
}

TEST_CASE("build is order independent, shardable and incremental") {
    auto mentions = fixture_mentions();
    const auto batch = build_graph(mentions);
    Rng rng(99);
    for (int i = 0; i < 10; ++i) {
        rng.shuffle(mentions);
        CHECK(build_graph(mentions) == batch);
        CHECK(build_graph(mentions, {}, 3) == batch);
    }

    std::map<std::string, std::vector<LinkedMention>> by_sentence;
    for (const auto& x : mentions) by_sentence[x.sentence_id].push_back(x);
    CooccurrenceGraph incremental;
    for (const auto& [sid, ms] : by_sentence) {
        const auto before = incremental;
        incremental.add_sentence(sid, ms);
        std::set<std::string> cuis;
        for (const auto& x : ms) cuis.insert(x.cui);
        const std::vector<std::string> v(cuis.begin(), cuis.end());
        for (std::size_t a = 0; a < v.size(); ++a)
            for (std::size_t b = a + 1; b < v.size(); ++b)
                CHECK(incremental.pair_frequency(v[a], v[b]) == before.pair_frequency(v[a], v[b]) + 1);
    }
    CHECK(incremental == batch);
    // re-adding a known sentence changes nothing
    incremental.add_sentence(by_sentence.begin()->first, by_sentence.begin()->second);
    CHECK(incremental == batch);
}

TEST_CASE("graph is undirected") {
    const auto g = build_graph(fixture_mentions());
    for (const auto& [a, na] : g.nodes())
        for (const auto& [b, nb] : g.nodes()) CHECK(g.pair_frequency(a, b) == g.pair_frequency(b, a));
}

TEST_CASE("subgraph") {
    const auto g = build_graph(fixture_mentions());
    std::set<std::string> all;
    for (const auto& [cui, n] : g.nodes()) all.insert(cui);
    CHECK(g.subgraph(all) == g);
    CHECK(g.subgraph({}).nodes().empty());
    CHECK(g.subgraph({}).edges().empty());
    const auto& e = g.edges().begin()->second;
    const auto two = g.subgraph({e.cui_a, e.cui_b});
    CHECK(two.nodes().size() == 2);
    REQUIRE(two.edges().size() == 1);
    CHECK(two.edges().begin()->second == e);
}

TEST_CASE("save and load round-trip") {
    const auto g = build_graph(fixture_mentions());
    const fs::path dir = fs::temp_directory_path() / "redkit_graph_test";
    fs::remove_all(dir);
    g.save(dir);
    CHECK(fs::exists(dir / "nodes.jsonl"));
    CHECK(fs::exists(dir / "edges.jsonl"));
    const auto edges = read_jsonl(dir / "edges.jsonl");
    CHECK(edges.front().at("key") == edges.front().at("cui_a").get<std::string>() + "|" +
                                         edges.front().at("cui_b").get<std::string>());
    CHECK(CooccurrenceGraph::load(dir) == g);
    fs::remove_all(dir);
    CHECK(edge_key("b", "a") == "a|b");
}
