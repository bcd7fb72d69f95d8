#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "redkit/mentions.hpp"

using namespace redkit;
using namespace redkit::mentions;
namespace fs = std::filesystem;

namespace {

corpus::SentenceRecord sentence(const std::string& text, const std::string& id = "1_0") {
    return {id, "1", 0, text, text.size()};
}

GazetteerExtractor gazetteer() { return GazetteerExtractor::from_file(fs::path(REDKIT_FIXTURES) / "gazetteer.jsonl"); }

LinkedMention lm(std::size_t s, std::size_t e, const std::string& cui, const std::string& type = "Disease or Syndrome",
                 Linker linker = Linker::UMLS) {
    return {"1_0", {s, e}, "", cui, type, linker, {}};
}

std::string surface_of(const RawMention& m) {
    return std::visit([](const auto& x) { return x.surface; }, m);
}

} // namespace

TEST_CASE("semantic type registry holds the 82 types") {
    const auto& reg = SemanticTypeRegistry::standard();
    CHECK(reg.size() == 82);
    CHECK(reg.contains("Disease or Syndrome"));
    CHECK(reg.contains("Gene or Genome"));
    CHECK_FALSE(reg.contains("Spaceship"));
}

TEST_CASE("gazetteer extraction") {
    auto ex = gazetteer();
    const auto s = sentence("MECP2 mutations cause Rett syndrome.");
    const auto ms = ex.extract(s);
    REQUIRE(ms.size() == 2);
    CHECK(surface_of(ms[0]) == "MECP2");
    CHECK(surface_of(ms[1]) == "Rett syndrome");
    const auto& rett = std::get<LinkedMention>(ms[1]);
    CHECK(rett.span == Span{22, 35});
    CHECK(rett.cui == "C0035372");
    CHECK(s.text.substr(rett.span.start, rett.span.end - rett.span.start) == rett.surface);

    CHECK(ex.extract(sentence("Nothing to see here.")).empty());
    // whole-word and case-insensitive
    CHECK(ex.extract(sentence("mecp2 matters")).size() == 1);
    CHECK(ex.extract(sentence("MECP22 does not")).empty());
}

TEST_CASE("two linkers on one span yield a candidate set") {
    auto ex = gazetteer();
    const auto ms = ex.extract(sentence("Low-dose aspirin was given."));
    REQUIRE(ms.size() == 1);
    const auto& set = std::get<CandidateLinkSet>(ms[0]);
    CHECK(set.candidates.at(Linker::UMLS) == std::set<std::string>{"C0004057"});
    CHECK(set.candidates.at(Linker::RXNORM) == std::set<std::string>{"R1191"});
    CHECK(set.predicted_coarse_type == CoarseType::ChemicalDrug);
    // RxNorm is consulted first for chemicals
    CHECK(resolve_cui(set).cui == "R1191");
    CHECK(resolve_cui(set).source_linker == Linker::RXNORM);
}

TEST_CASE("gazetteer rejects unknown semantic types") {
    CHECK_THROWS_AS(GazetteerExtractor({{"x", "C1", "Not A Type", Linker::UMLS, CoarseType::Other}}), ParseError);
}

TEST_CASE("resolve_cui walks the priority table") {
    CandidateLinkSet c;
    c.sentence_id = "1_0";
    c.span = {0, 4};
    c.surface = "drug";
    c.predicted_coarse_type = CoarseType::Disease;
    c.candidates[Linker::UMLS] = {"C2", "C1"};
    c.semantic_types = {{"C1", "Disease or Syndrome"}, {"C2", "Finding"}};
    auto m = resolve_cui(c);
    CHECK(m.cui == "C1");
    CHECK(m.semantic_type == "Disease or Syndrome");
    CHECK(m.source_linker == Linker::UMLS);

    c.candidates[Linker::MESH] = {"M9"};
    CHECK(resolve_cui(c).cui == "M9");

    PriorityTable custom = PriorityTable::defaults();
    custom.set(CoarseType::Disease, {Linker::UMLS});
    CHECK(resolve_cui(c, custom).cui == "C1");

    CandidateLinkSet empty = c;
    empty.candidates.clear();
    empty.candidates[Linker::GO] = {};
    CHECK_THROWS_AS(resolve_cui(empty), UnresolvableError);
}

TEST_CASE("resolve_cui is independent of candidate insertion order") {
    std::vector<std::string> cuis{"C0500", "C0020", "C0999", "C0100"};
    std::sort(cuis.begin(), cuis.end());
    do {
        CandidateLinkSet c;
        c.predicted_coarse_type = CoarseType::Organism;
        for (const auto& cui : cuis) c.candidates[Linker::NCBI].insert(cui);
        CHECK(resolve_cui(c).cui == "C0020");
    } while (std::next_permutation(cuis.begin(), cuis.end()));
}

TEST_CASE("seeded-random tie break is reproducible and stays in the winning set") {
    CandidateLinkSet c;
    c.sentence_id = "9_1";
    c.span = {3, 8};
    c.candidates[Linker::UMLS] = {"A", "B", "C", "D"};
    ResolveOptions opt;
    opt.tie_break = ResolveOptions::TieBreak::SeededRandom;
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        opt.seed = seed;
        const auto a = resolve_cui(c, PriorityTable::defaults(), opt).cui;
        CHECK(a == resolve_cui(c, PriorityTable::defaults(), opt).cui);
        seen.insert(a);
    }
    CHECK(seen.size() > 1);
    CHECK(std::includes(c.candidates[Linker::UMLS].begin(), c.candidates[Linker::UMLS].end(), seen.begin(), seen.end()));
}

TEST_CASE("merge: adjacent mentions join into one span") {
    const std::string text = "A norepinephrine transporter inhibitor was used.";
    auto ex = gazetteer();
    const auto result = process_sentence(sentence(text), ex);
    REQUIRE_FALSE(result.error);
    REQUIRE(result.mentions.size() == 1);
    CHECK(result.mentions[0].surface == "norepinephrine transporter inhibitor");
    // head keeps identity: UMLS outranks MESH in the generic order
    CHECK(result.mentions[0].cui == "C0069286");
    CHECK(result.mentions[0].alt_semantic_types == std::vector<std::string>{"Chemical Viewed Functionally"});
}

TEST_CASE("merge: every two-span topology") {
    //            0         1         2
    //            0123456789012345678901234
    const std::string text = "alpha beta,gamma  delta e";
    struct Case {
        const char* name;
        Span a, b;
        std::vector<Span> expected;
        const char* expected_cui;  // cui of the first output span
    };
    const std::vector<Case> cases{
        {"disjoint, punctuation gap", {6, 10}, {11, 16}, {{6, 10}, {11, 16}}, "A"},
        {"disjoint, word in between", {0, 5}, {11, 16}, {{0, 5}, {11, 16}}, "A"},
        {"single-space gap", {0, 5}, {6, 10}, {{0, 10}}, "A"},
        {"multi-space gap", {11, 16}, {18, 23}, {{11, 23}}, "A"},
        {"touching", {0, 3}, {3, 5}, {{0, 5}}, "A"},
        {"partial overlap", {0, 7}, {6, 10}, {{0, 10}}, "A"},
        {"nested inside head", {0, 10}, {2, 4}, {{0, 10}}, "A"},
        {"nested, shared start", {0, 3}, {0, 10}, {{0, 10}}, "B"},
        {"nested, shared end", {0, 10}, {6, 10}, {{0, 10}}, "A"},
        {"identical", {6, 10}, {6, 10}, {{6, 10}}, "A"},
    };
    for (const auto& c : cases) {
        INFO(std::string(c.name));
        const auto out = merge_mentions({lm(c.a.start, c.a.end, "A"), lm(c.b.start, c.b.end, "B", "Organism")}, text);
        REQUIRE(out.size() == c.expected.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i].span == c.expected[i]);
            CHECK(out[i].surface == text.substr(out[i].span.start, out[i].span.end - out[i].span.start));
        }
        CHECK(out[0].cui == c.expected_cui);
        CHECK(merge_mentions(out, text).size() == out.size());
    }
}

TEST_CASE("merge: tail wins only with a strictly preferred linker") {
    const std::string text = "alpha beta";
    auto out = merge_mentions({lm(0, 5, "H", "Organism", Linker::SNOMED), lm(6, 10, "T", "Virus", Linker::UMLS)}, text);
    REQUIRE(out.size() == 1);
    CHECK(out[0].cui == "T");
    CHECK(out[0].semantic_type == "Virus");
    CHECK(out[0].alt_semantic_types == std::vector<std::string>{"Organism"});

    out = merge_mentions({lm(0, 5, "H", "Organism", Linker::UMLS), lm(6, 10, "T", "Virus", Linker::UMLS)}, text);
    CHECK(out[0].cui == "H");
}

TEST_CASE("merge rejects unsorted input and leaves disjoint input unchanged") {
    const std::string text = "aa, bb, cc";
    CHECK_THROWS_AS(merge_mentions({lm(4, 6, "B"), lm(0, 2, "A")}, text), PreconditionError);
    const auto out = merge_mentions({lm(0, 2, "A"), lm(4, 6, "B"), lm(8, 10, "C")}, text);
    CHECK(out.size() == 3);
}

TEST_CASE("merge is idempotent on random mention sets") {
    Rng rng(7);
    std::string text;
    for (int i = 0; i < 60; ++i) text += (rng.bernoulli(0.2) ? (rng.bernoulli(0.5) ? ' ' : ',') : 'x');
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<LinkedMention> ms;
        const int k = 1 + static_cast<int>(rng.below(6));
        for (int i = 0; i < k; ++i) {
            const auto s = rng.below(55);
            const auto e = s + 1 + rng.below(5);
            ms.push_back(lm(s, e, "C" + std::to_string(i), "Organism", all_linkers()[rng.below(10)]));
        }
        std::sort(ms.begin(), ms.end(), [](const auto& x, const auto& y) { return x.span.start < y.span.start; });
        const auto once = merge_mentions(ms, text);
        const auto twice = merge_mentions(once, text);
        REQUIRE(once.size() == twice.size());
        for (std::size_t i = 0; i < once.size(); ++i) {
            CHECK(once[i].span == twice[i].span);
            CHECK(once[i].cui == twice[i].cui);
            if (i > 0) CHECK(once[i - 1].span.end <= once[i].span.start);
        }
    }
}

TEST_CASE("pipeline output has no overlaps and one cui per mention") {
    auto ex = gazetteer();
    const auto r = process_sentence(sentence("Amyloid fibrils are found in type II diabetes and Alzheimer's disease."), ex);
    REQUIRE_FALSE(r.error);
    REQUIRE(r.mentions.size() == 3);
    CHECK(r.mentions[1].surface == "type II diabetes");
    CHECK(r.mentions[1].cui == "C0011860");
    CHECK(r.mentions[2].surface == "Alzheimer's disease");
    for (std::size_t i = 1; i < r.mentions.size(); ++i) CHECK(r.mentions[i - 1].span.end <= r.mentions[i].span.start);
    for (const auto& m : r.mentions) CHECK_FALSE(m.cui.empty());
}

TEST_CASE("command extractor: JSON lines protocol and per-sentence failures") {
    CommandExtractor ok(std::string(REDKIT_FIXTURES) + "/fake_extractor.sh");
    const auto raw = ok.extract(sentence("Bacteria grow."));
    REQUIRE(raw.size() == 2);
    CHECK(std::get<LinkedMention>(raw[0]).surface == "Bacteria");
    const auto& set = std::get<CandidateLinkSet>(raw[1]);
    CHECK(resolve_cui(set).cui == "C0000002");
    CHECK(resolve_cui(set).semantic_type == "Organism");

    CommandExtractor failing("false");
    const std::vector<corpus::SentenceRecord> sentences{sentence("One.", "1_0"), sentence("Two.", "1_1")};
    const auto results = process_corpus(sentences, failing);
    REQUIRE(results.size() == 2);
    CHECK(results[0].error.has_value());
    CHECK(results[1].error.has_value());
    CHECK(results[1].sentence_id == "1_1");
}

TEST_CASE("parallel corpus processing keeps input order") {
    auto ex = gazetteer();
    std::vector<corpus::SentenceRecord> sentences;
    for (int i = 0; i < 25; ++i)
        sentences.push_back(sentence(i % 2 ? "MECP2 and Rett syndrome." : "aspirin and diabetes", "7_" + std::to_string(i)));
    const auto serial = process_corpus(sentences, ex, PriorityTable::defaults(), {}, 1);
    const auto parallel = process_corpus(sentences, ex, PriorityTable::defaults(), {}, 4);
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        CHECK(parallel[i].sentence_id == sentences[i].sentence_id);
        REQUIRE(serial[i].mentions.size() == parallel[i].mentions.size());
        for (std::size_t j = 0; j < serial[i].mentions.size(); ++j) CHECK(serial[i].mentions[j].cui == parallel[i].mentions[j].cui);
    }
}

TEST_CASE("registry and priority table configuration") {
    auto& reg = ExtractorRegistry::global();
    CHECK(reg.has("gazetteer"));
    CHECK(reg.has("command"));
    CHECK_THROWS_AS(reg.create("metamaplite", {}), PreconditionError);
    ExtractorOptions opt;
    opt.gazetteer = fs::path(REDKIT_FIXTURES) / "gazetteer.jsonl";
    CHECK(reg.create("gazetteer", opt)->name() == "gazetteer");

    const auto t = PriorityTable::from_json(json{{"CHEMICAL_DRUG", {"GS", "UMLS"}}});
    const auto order = t.order(CoarseType::ChemicalDrug);
    CHECK(order.size() == all_linkers().size());
    CHECK(order[0] == Linker::GS);
    CHECK(order[1] == Linker::UMLS);
    CHECK(PriorityTable::from_json(t.to_json()).order(CoarseType::ChemicalDrug) == order);
    CHECK(PriorityTable::defaults().order(CoarseType::ChemicalDrug)[0] == Linker::RXNORM);
}

TEST_CASE("mention records round-trip with the documented fields") {
    LinkedMention m = lm(2, 6, "C9", "Virus", Linker::NCBI);
    m.surface = "flu";
    const json j = to_json(m);
    for (const char* key : {"sentence_id", "start", "end", "surface", "cui", "semantic_type", "source_linker"})
        CHECK(j.contains(key));
    const auto back = mention_from_json(j);
    CHECK(back.span == m.span);
    CHECK(back.source_linker == Linker::NCBI);
}
