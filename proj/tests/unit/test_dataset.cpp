#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "redkit/dataset.hpp"

using namespace redkit;
using namespace redkit::dataset;
namespace fs = std::filesystem;

namespace {

corpus::SentenceRecord sentence(const std::string& id, const std::string& text) { return {id, "1", 0, text, text.size()}; }

mentions::LinkedMention mention(const std::string& sid, std::size_t s, std::size_t e, const std::string& cui) {
    return {sid, {s, e}, "", cui, "Disease or Syndrome", mentions::Linker::UMLS, {}};
}

std::vector<Label> labels(const std::vector<std::string>& names) {
    std::vector<Label> out;
    for (const auto& n : names) out.push_back(label_from_string(n));
    return out;
}

// n sentences with `per` instances each.
std::vector<RelationInstance> synthetic(std::size_t n, std::size_t per = 2) {
    std::vector<RelationInstance> out;
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < per; ++i) {
            RelationInstance r;
            r.sentence_id = "s" + std::to_string(s);
            r.instance_id = r.sentence_id + "#" + std::to_string(i);
            r.label = static_cast<Label>((s + i) % 4);
            r.entity1 = mention(r.sentence_id, 0, 1, "C" + std::to_string(s));
            r.entity2 = mention(r.sentence_id, 2, 3, "C" + std::to_string(s + i + 1));
            r.text = "a b c";
            out.push_back(r);
        }
    return out;
}

} // namespace

TEST_CASE("labels and projection") {
    CHECK(project_binary(Label::Positive) == Label::Relation);
    CHECK(project_binary(Label::Complex) == Label::Relation);
    CHECK(project_binary(Label::Negative) == Label::Relation);
    CHECK(project_binary(Label::NoRelation) == Label::NoRelation);
    CHECK_THROWS_AS(project_binary(Label::Unlabeled), PreconditionError);
    CHECK(label_from_string("no relation") == Label::NoRelation);
    CHECK(label_from_string("Positive") == Label::Positive);
    CHECK_THROWS_AS(label_from_string("MAYBE"), ParseError);
    CHECK_THROWS_AS(class_index(Label::Relation, LabelSpace::Multiclass), LabelSpaceError);
}

TEST_CASE("make_instances") {
    const auto s = sentence("9_0", "MECP2 causes Rett syndrome in girls");
    std::vector<mentions::LinkedMention> ms{mention("9_0", 13, 26, "B"), mention("9_0", 0, 5, "A"),
                                            mention("9_0", 30, 35, "C")};
    const auto three = make_instances(s, ms);
    CHECK(three.size() == 3);
    CHECK(three[0].entity1.cui == "A");
    CHECK(three[0].entity2.cui == "B");
    std::set<std::string> ids;
    for (const auto& i : three) ids.insert(i.instance_id);
    CHECK(ids.size() == 3);

    ms.pop_back();
    CHECK(make_instances(s, ms).size() == 1);
    // ids are content addressed
    std::reverse(ms.begin(), ms.end());
    CHECK(make_instances(s, ms)[0].instance_id == three[0].instance_id);
    CHECK(make_instance_id("9_0", {0, 5}, {13, 26}) == make_instance_id("9_0", {13, 26}, {0, 5}));
    CHECK(make_instance_id("9_0", {0, 5}, {13, 26}) != make_instance_id("9_1", {0, 5}, {13, 26}));

    CHECK_THROWS_AS(make_instances(s, {ms[0]}), PreconditionError);
    CHECK_THROWS_AS(make_instances(s, {mention("9_0", 0, 5, "A"), mention("9_0", 3, 8, "B")}), PreconditionError);
}

TEST_CASE("majority vote") {
    using L = Label;
    CHECK(majority_vote(std::map<std::string, Label>{{"a", L::Positive}, {"b", L::Positive}, {"c", L::Complex}}) ==
          L::Positive);
    CHECK_FALSE(majority_vote(std::map<std::string, Label>{{"a", L::Positive}, {"b", L::Complex}, {"c", L::Negative}}));
    std::vector<Label> ensemble(6, L::Complex);
    ensemble.insert(ensemble.end(), 4, L::Positive);
    CHECK(majority_vote(ensemble) == L::Complex);
    CHECK_FALSE(majority_vote(std::vector<Label>{L::Positive, L::Complex}));
    CHECK_THROWS_AS(majority_vote(std::vector<Label>{}), PreconditionError);
}

TEST_CASE("fleiss kappa closed cases") {
    CHECK(fleiss_kappa({{3, 0, 0, 0}, {0, 3, 0, 0}, {0, 0, 0, 3}}) == 1.0);
    CHECK(fleiss_kappa({{3, 0}, {3, 0}}) == 1.0);
    // observed agreement equals chance agreement
    CHECK(fleiss_kappa({{2, 0}, {0, 2}, {1, 1}, {1, 1}}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(fleiss_kappa({{3, 0}, {1, 1}}), PreconditionError);
    CHECK_THROWS_AS(fleiss_kappa({{1, 0}}), PreconditionError);
    CHECK_THROWS_AS(fleiss_kappa({}), PreconditionError);
}

TEST_CASE("fleiss kappa long-hand worked example") {
    // 10 subjects, 14 raters, 5 categories; P-bar = 0.378, P-e = 0.213, kappa = 0.210
    const std::vector<std::vector<double>> m{{0, 0, 0, 0, 14}, {0, 2, 6, 4, 2}, {0, 0, 3, 5, 6}, {0, 3, 9, 2, 0},
                                             {2, 2, 8, 1, 1},  {7, 7, 0, 0, 0}, {3, 2, 6, 3, 0}, {2, 5, 3, 2, 2},
                                             {6, 5, 2, 1, 0},  {0, 2, 2, 3, 7}};
    CHECK(fleiss_kappa(m) == doctest::Approx(0.20993).epsilon(1e-4));
}

TEST_CASE("fleiss kappa matches the statsmodels fixtures") {
    const json fx = read_json_file(fs::path(REDKIT_FIXTURES) / "kappa.json");
    for (const auto& c : fx) {
        const auto counts = c.at("counts").get<std::vector<std::vector<double>>>();
        CHECK(fleiss_kappa(counts) == doctest::Approx(c.at("kappa").get<double>()).epsilon(1e-12));
        CHECK(fleiss_kappa(c.at("binary_counts").get<std::vector<std::vector<double>>>()) ==
              doctest::Approx(c.at("binary_kappa").get<double>()).epsilon(1e-12));

        // row and column permutations
        auto rows = counts;
        std::reverse(rows.begin(), rows.end());
        CHECK(fleiss_kappa(rows) == doctest::Approx(fleiss_kappa(counts)).epsilon(1e-12));
        auto cols = counts;
        for (auto& r : cols) std::rotate(r.begin(), r.begin() + 1, r.end());
        CHECK(fleiss_kappa(cols) == doctest::Approx(fleiss_kappa(counts)).epsilon(1e-12));
    }
}

TEST_CASE("rating matrix projects to the binary space") {
    const std::vector<std::map<std::string, Label>> ratings{
        {{"a", Label::Positive}, {"b", Label::Complex}, {"c", Label::NoRelation}}};
    CHECK(rating_matrix(ratings, LabelSpace::Multiclass)[0] == std::vector<double>{1, 1, 0, 1});
    CHECK(rating_matrix(ratings, LabelSpace::Binary)[0] == std::vector<double>{2, 1});
}

TEST_CASE("split_dataset: sentence granularity and target sizes") {
    std::vector<std::string> ids;
    for (int i = 0; i < 601; ++i) ids.push_back("s" + std::to_string(i));
    const auto a = split_sentences(ids, {0.68, 0.12, 0.20}, 1);
    std::map<Split, int> sizes;
    for (const auto& [id, s] : a) ++sizes[s];
    CHECK(sizes[Split::Train] == 409);
    CHECK(sizes[Split::Dev] == 72);
    CHECK(sizes[Split::Test] == 120);

    const auto b = split_sentences(ids, {0.68, 0.12, 0.20}, 2);
    CHECK(a != b);
    std::map<Split, int> sizes_b;
    for (const auto& [id, s] : b) ++sizes_b[s];
    CHECK(sizes == sizes_b);

    auto inst = synthetic(50, 3);
    split_dataset(inst, {1, 0, 0}, 3);
    for (const auto& i : inst) CHECK(i.split == Split::Train);
    split_dataset(inst, {0.6, 0.2, 0.2}, 3);
    std::map<std::string, Split> seen;
    for (const auto& i : inst) {
        auto [it, fresh] = seen.emplace(i.sentence_id, i.split);
        CHECK(it->second == i.split);
    }
    CHECK_THROWS_AS(split_sentences(ids, {0.5, 0.2, 0.2}, 1), PreconditionError);
}

TEST_CASE("split sizes stay within one sentence of the target") {
    for (std::size_t n : {1u, 2u, 7u, 10u, 33u, 100u}) {
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
        const std::array<double, 3> r{0.7, 0.1, 0.2};
        std::map<Split, double> sizes;
        for (const auto& [id, s] : split_sentences(ids, r, 5)) sizes[s] += 1;
        CHECK(std::abs(sizes[Split::Train] - 0.7 * n) <= 1.0);
        CHECK(std::abs(sizes[Split::Dev] - 0.1 * n) <= 1.0);
        CHECK(std::abs(sizes[Split::Test] - 0.2 * n) <= 1.0);
    }
}

TEST_CASE("kfold partitions sentences") {
    const auto inst = synthetic(10, 2);
    const auto folds = kfold(inst, 5, 42);
    REQUIRE(folds.size() == 5);
    std::vector<int> seen(inst.size(), 0);
    for (const auto& f : folds) {
        std::set<std::string> test_sentences, train_sentences;
        for (auto i : f.test) ++seen[i], test_sentences.insert(inst[i].sentence_id);
        for (auto i : f.train) train_sentences.insert(inst[i].sentence_id);
        CHECK(test_sentences.size() == 2);
        CHECK(f.test.size() + f.train.size() == inst.size());
        for (const auto& s : test_sentences) CHECK_FALSE(train_sentences.count(s));
    }
    for (int c : seen) CHECK(c == 1);

    const auto other = kfold(inst, 5, 7);
    bool differs = false;
    for (std::size_t f = 0; f < 5; ++f) {
        CHECK(other[f].test.size() == folds[f].test.size());
        differs = differs || other[f].test != folds[f].test;
    }
    CHECK(differs);
    CHECK_THROWS_AS(kfold(inst, 1, 0), PreconditionError);
    CHECK_THROWS_AS(kfold(synthetic(3), 5, 0), PreconditionError);

    const auto uneven = kfold(synthetic(13, 1), 5, 1);
    for (const auto& f : uneven) CHECK((f.test.size() == 2 || f.test.size() == 3));
}

TEST_CASE("holdout keeps sentences together") {
    const auto inst = synthetic(40, 3);
    std::vector<std::size_t> all(inst.size());
    std::iota(all.begin(), all.end(), 0);
    const auto [train, dev] = holdout(inst, all, 0.15, 11);
    CHECK(dev.size() == 6 * 3);
    CHECK(train.size() + dev.size() == inst.size());
    std::set<std::string> dev_s;
    for (auto i : dev) dev_s.insert(inst[i].sentence_id);
    for (auto i : train) CHECK_FALSE(dev_s.count(inst[i].sentence_id));
}

TEST_CASE("f1 modes on trivial inputs") {
    const auto gold = labels({"POSITIVE", "COMPLEX", "NEGATIVE", "NO_RELATION", "POSITIVE"});
    for (F1Mode m : {F1Mode::Binary, F1Mode::BinaryMicro, F1Mode::Micro, F1Mode::Macro, F1Mode::Weighted})
        CHECK(f1_score(gold, gold, m) == 1.0);

    const auto balanced = labels({"POSITIVE", "NO_RELATION", "COMPLEX", "NO_RELATION"});
    const std::vector<Label> none(4, Label::NoRelation);
    CHECK(f1_score(balanced, none, F1Mode::Binary) == 0.0);

    // one-class gold and prediction
    const std::vector<Label> all_pos(6, Label::Positive);
    CHECK(f1_score(all_pos, all_pos, F1Mode::Micro) == 1.0);
    CHECK(f1_score(all_pos, all_pos, F1Mode::Macro) == 0.25);  // three absent classes contribute 0

    CHECK_THROWS_AS(f1_score(gold, none, F1Mode::Micro), PreconditionError);
    CHECK_THROWS_AS(f1_score({}, {}, F1Mode::Micro), PreconditionError);
    CHECK_THROWS_AS(f1_score({Label::Relation}, {Label::Relation}, F1Mode::Micro), LabelSpaceError);
    CHECK(f1_score({Label::Relation}, {Label::Positive}, F1Mode::Binary) == 1.0);
}

TEST_CASE("f1 and confusion tables match the scikit-learn fixtures") {
    const json fx = read_json_file(fs::path(REDKIT_FIXTURES) / "f1.json");
    for (const auto& c : fx) {
        const auto gold = labels(c.at("gold").get<std::vector<std::string>>());
        const auto pred = labels(c.at("pred").get<std::vector<std::string>>());
        CHECK(f1_score(gold, pred, F1Mode::Micro) == doctest::Approx(c.at("micro").get<double>()).epsilon(1e-12));
        CHECK(f1_score(gold, pred, F1Mode::Macro) == doctest::Approx(c.at("macro").get<double>()).epsilon(1e-12));
        CHECK(f1_score(gold, pred, F1Mode::Weighted) == doctest::Approx(c.at("weighted").get<double>()).epsilon(1e-12));
        CHECK(f1_score(gold, pred, F1Mode::Binary) == doctest::Approx(c.at("binary").get<double>()).epsilon(1e-12));
        CHECK(f1_score(gold, pred, F1Mode::BinaryMicro) ==
              doctest::Approx(c.at("binary_micro").get<double>()).epsilon(1e-12));
        CHECK(f1_score(gold, pred, F1Mode::Macro, LabelSpace::Binary) ==
              doctest::Approx(c.at("binary_macro").get<double>()).epsilon(1e-12));

        const auto report = confusion_matrices(gold, pred);
        const auto cm = c.at("confusion").get<std::vector<std::vector<std::size_t>>>();
        CHECK(report.matrix == cm);
        const auto per_class = c.at("per_class").get<std::vector<double>>();
        for (std::size_t k = 0; k < 4; ++k) {
            const auto& t = report.per_class[k];
            CHECK(t.f1 == doctest::Approx(per_class[k]).epsilon(1e-12));
            CHECK(t.tp + t.tn + t.fp + t.fn == gold.size());
            // brute-force one-vs-rest counts
            std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
            for (std::size_t i = 0; i < gold.size(); ++i) {
                const bool g = gold[i] == t.label, p = pred[i] == t.label;
                tp += g && p, fp += !g && p, fn += g && !p, tn += !g && !p;
            }
            CHECK(t.tp == tp);
            CHECK(t.fp == fp);
            CHECK(t.fn == fn);
            CHECK(t.tn == tn);
        }

        // binary projection then micro equals the binary-micro score
        std::vector<Label> pg, pp;
        for (auto l : gold) pg.push_back(project_binary(l));
        for (auto l : pred) pp.push_back(project_binary(l));
        CHECK(f1_score(pg, pp, F1Mode::Micro, LabelSpace::Binary) == f1_score(gold, pred, F1Mode::BinaryMicro));
    }
}

TEST_CASE("positive-class cell pattern at ReDReS scale") {
    std::vector<Label> gold, pred;
    auto add = [&](std::size_t n, Label g, Label p) {
        gold.insert(gold.end(), n, g);
        pred.insert(pred.end(), n, p);
    };
    add(1344, Label::Positive, Label::Positive);
    add(386, Label::Positive, Label::Complex);
    add(274, Label::Complex, Label::Positive);
    add(3255, Label::NoRelation, Label::NoRelation);
    const auto r = confusion_matrices(gold, pred);
    const auto& pos = r.per_class[0];
    CHECK(pos.tp == 1344);
    CHECK(pos.tn == 3255);
    CHECK(pos.fp == 274);
    CHECK(pos.fn == 386);
    CHECK(pos.tp + pos.tn + pos.fp + pos.fn == 5259);
    CHECK(format_class_tables(r).find("1344") != std::string::npos);
    CHECK(format_false_negatives(r).find("386 (100.0%)") != std::string::npos);
}

TEST_CASE("label space mismatch") {
    auto inst = synthetic(3);
    CHECK_NOTHROW(check_label_space(inst, LabelSpace::Multiclass));
    inst[0].label = Label::Relation;
    CHECK_THROWS_AS(check_label_space(inst, LabelSpace::Multiclass), LabelSpaceError);
    CHECK_NOTHROW(check_label_space(inst, LabelSpace::Binary));
}

TEST_CASE("stats and instance files") {
    auto inst = synthetic(5, 3);
    inst[1].annotator_labels = {{"ann1", Label::Positive}, {"ann2", Label::Complex}};
    inst[1].context_note = "see previous sentence";
    inst[2].needs_adjudication = true;
    const auto stats = compute_stats(inst);
    CHECK(stats.sentences == 5);
    CHECK(stats.instances == 15);
    std::size_t total = 0;
    for (const auto& [l, c] : stats.label_counts) total += c;
    CHECK(total == stats.instances);
    CHECK(format_stats(stats).find("instances       15") != std::string::npos);

    const fs::path path = fs::temp_directory_path() / "redkit_instances_test.jsonl";
    write_instances(path, inst);
    const auto back = read_instances(path);
    REQUIRE(back.size() == inst.size());
    CHECK(back[1].annotator_labels == inst[1].annotator_labels);
    CHECK(back[1].context_note == inst[1].context_note);
    CHECK(back[2].needs_adjudication);
    CHECK(back[4].label == inst[4].label);
    fs::remove(path);
}
