#include "redkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace redkit::dataset {

namespace {

const std::array<std::pair<Label, const char*>, 6> kLabelNames{{
    {Label::Positive, "POSITIVE"},
    {Label::Complex, "COMPLEX"},
    {Label::Negative, "NEGATIVE"},
    {Label::NoRelation, "NO_RELATION"},
    {Label::Relation, "RELATION"},
    {Label::Unlabeled, "UNLABELED"},
}};

const std::array<std::pair<Split, const char*>, 4> kSplitNames{{
    {Split::Train, "TRAIN"},
    {Split::Dev, "DEV"},
    {Split::Test, "TEST"},
    {Split::None, "NONE"},
}};

double safe_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

std::vector<std::string> unique_sentences(const std::vector<RelationInstance>& instances,
                                          const std::vector<std::size_t>& indices) {
    std::set<std::string> ids;
    for (std::size_t i : indices) ids.insert(instances.at(i).sentence_id);
    return {ids.begin(), ids.end()};
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace

std::string to_string(Label label) {
    for (auto [l, n] : kLabelNames)
        if (l == label) return n;
    return "UNLABELED";
}

Label label_from_string(const std::string& name) {
    std::string key;
    for (char c : trim(name)) key += (c == ' ' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (auto [l, n] : kLabelNames)
        if (key == n) return l;
    throw ParseError("unknown label '" + name + "'");
}

std::string to_string(Split split) {
    for (auto [s, n] : kSplitNames)
        if (s == split) return n;
    return "NONE";
}

Split split_from_string(const std::string& name) {
    const std::string upper = [&] {
        std::string s = name;
        for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return s;
    }();
    for (auto [s, n] : kSplitNames)
        if (upper == n) return s;
    throw ParseError("unknown split '" + name + "'");
}

std::string to_string(LabelSpace space) { return space == LabelSpace::Binary ? "binary" : "multiclass"; }

LabelSpace label_space_from_string(const std::string& name) {
    const std::string s = to_lower(name);
    if (s == "binary") return LabelSpace::Binary;
    if (s == "multiclass" || s == "multi-class" || s == "multi") return LabelSpace::Multiclass;
    throw ParseError("unknown label space '" + name + "'");
}

Label project_binary(Label label) {
    switch (label) {
    case Label::Positive:
    case Label::Complex:
    case Label::Negative:
    case Label::Relation: return Label::Relation;
    case Label::NoRelation: return Label::NoRelation;
    case Label::Unlabeled: break;
    }
    throw PreconditionError("cannot project an unlabeled instance");
}

const std::vector<Label>& classes(LabelSpace space) {
    static const std::vector<Label> binary{Label::Relation, Label::NoRelation};
    static const std::vector<Label> multi{Label::Positive, Label::Complex, Label::Negative, Label::NoRelation};
    return space == LabelSpace::Binary ? binary : multi;
}

std::size_t class_index(Label label, LabelSpace space) {
    if (label == Label::Unlabeled) throw PreconditionError("unlabeled instance has no class index");
    if (space == LabelSpace::Binary) label = project_binary(label);
    const auto& cs = classes(space);
    auto it = std::find(cs.begin(), cs.end(), label);
    if (it == cs.end()) throw LabelSpaceError("label " + to_string(label) + " is not in the multiclass label space");
    return static_cast<std::size_t>(it - cs.begin());
}

// ---------------------------------------------------------------- instances

std::string make_instance_id(const std::string& sentence_id, const mentions::Span& a, const mentions::Span& b) {
    const auto& [lo, hi] = a < b ? std::pair{a, b} : std::pair{b, a};
    std::ostringstream key;
    key << sentence_id << '#' << lo.start << ':' << lo.end << '#' << hi.start << ':' << hi.end;
    return to_hex(fnv1a64(key.str()));
}

std::vector<RelationInstance> make_instances(const corpus::SentenceRecord& sentence,
                                             const std::vector<mentions::LinkedMention>& mentions) {
    if (mentions.size() < 2)
        throw PreconditionError("make_instances: sentence " + sentence.sentence_id + " has fewer than two mentions");
    std::vector<mentions::LinkedMention> sorted = mentions;
    std::sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) { return x.span < y.span; });
    for (const auto& m : sorted)
        if (m.span.end > sentence.text.size() || m.span.start >= m.span.end)
            throw PreconditionError("make_instances: span outside sentence " + sentence.sentence_id);

    std::vector<RelationInstance> out;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        for (std::size_t j = i + 1; j < sorted.size(); ++j) {
            if (sorted[i].span.overlaps(sorted[j].span))
                throw PreconditionError("make_instances: overlapping mentions in " + sentence.sentence_id);
            RelationInstance inst;
            inst.instance_id = make_instance_id(sentence.sentence_id, sorted[i].span, sorted[j].span);
            inst.sentence_id = sentence.sentence_id;
            inst.text = sentence.text;
            inst.entity1 = sorted[i];
            inst.entity2 = sorted[j];
            out.push_back(std::move(inst));
        }
    }
    return out;
}

// ------------------------------------------------------------------- voting

std::optional<Label> majority_vote(const std::vector<Label>& labels) {
    if (labels.empty()) throw PreconditionError("majority_vote: no labels");
    std::map<Label, std::size_t> counts;
    for (Label l : labels) ++counts[l];
    for (const auto& [label, c] : counts)
        if (2 * c > labels.size()) return label;
    return std::nullopt;
}

std::optional<Label> majority_vote(const std::map<std::string, Label>& labels) {
    std::vector<Label> v;
    for (const auto& [annotator, l] : labels) v.push_back(l);
    return majority_vote(v);
}

double fleiss_kappa(const std::vector<std::vector<double>>& counts) {
    if (counts.empty()) throw PreconditionError("fleiss_kappa: empty matrix");
    const std::size_t k = counts.front().size();
    const double n = std::accumulate(counts.front().begin(), counts.front().end(), 0.0);
    if (n < 2) throw PreconditionError("fleiss_kappa: need at least two raters per item");
    std::vector<double> column(k, 0.0);
    double p_bar = 0.0;
    for (const auto& row : counts) {
        if (row.size() != k) throw PreconditionError("fleiss_kappa: ragged matrix");
        double sum = 0.0, sq = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (row[j] < 0) throw PreconditionError("fleiss_kappa: negative count");
            sum += row[j];
            sq += row[j] * row[j];
            column[j] += row[j];
        }
        if (sum != n) throw PreconditionError("fleiss_kappa: rows have different rater counts");
        p_bar += (sq - n) / (n * (n - 1));
    }
    const double items = static_cast<double>(counts.size());
    p_bar /= items;
    double p_e = 0.0;
    for (double c : column) {
        const double p = c / (items * n);
        p_e += p * p;
    }
    if (p_e == 1.0) return 1.0;  // every rating in one category: perfect agreement
    return (p_bar - p_e) / (1.0 - p_e);
}

std::vector<std::vector<double>> rating_matrix(const std::vector<std::map<std::string, Label>>& ratings,
                                               LabelSpace space) {
    std::vector<std::vector<double>> m;
    for (const auto& item : ratings) {
        std::vector<double> row(classes(space).size(), 0.0);
        for (const auto& [annotator, label] : item) row[class_index(label, space)] += 1.0;
        m.push_back(std::move(row));
    }
    return m;
}

// ------------------------------------------------------------------- splits

std::map<std::string, Split> split_sentences(const std::vector<std::string>& sentence_ids,
                                             const std::array<double, 3>& ratios, std::uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
        throw PreconditionError("split ratios must be non-negative and sum to 1");
    std::set<std::string> unique(sentence_ids.begin(), sentence_ids.end());
    std::vector<std::string> ids(unique.begin(), unique.end());
    Rng rng(seed);
    rng.shuffle(ids);

    const std::size_t n = ids.size();
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = ratios[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++sizes[order[r % 3]];

    std::map<std::string, Split> out;
    std::size_t pos = 0;
    const std::array<Split, 3> names{Split::Train, Split::Dev, Split::Test};
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t c = 0; c < sizes[s]; ++c) out[ids[pos++]] = names[s];
    return out;
}

void split_dataset(std::vector<RelationInstance>& instances, const std::array<double, 3>& ratios, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& inst : instances) ids.push_back(inst.sentence_id);
    const auto assignment = split_sentences(ids, ratios, seed);
    for (auto& inst : instances) inst.split = assignment.at(inst.sentence_id);
}

std::vector<Fold> kfold(const std::vector<RelationInstance>& instances, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw PreconditionError("kfold: k must be at least 2");
    std::vector<std::string> sentences = unique_sentences(instances, all_indices(instances.size()));
    if (sentences.size() < k) throw PreconditionError("kfold: fewer sentences than folds");
    Rng rng(seed);
    rng.shuffle(sentences);
    std::map<std::string, std::size_t> fold_of;
    for (std::size_t i = 0; i < sentences.size(); ++i) fold_of[sentences[i]] = i % k;

    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const std::size_t f = fold_of.at(instances[i].sentence_id);
        for (std::size_t g = 0; g < k; ++g) (g == f ? folds[g].test : folds[g].train).push_back(i);
    }
    return folds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout(const std::vector<RelationInstance>& instances,
                                                                      const std::vector<std::size_t>& indices,
                                                                      double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw PreconditionError("holdout fraction must be in (0, 1)");
    std::vector<std::string> sentences = unique_sentences(instances, indices);
    if (sentences.size() < 2) throw PreconditionError("holdout: need at least two sentences");
    Rng rng(seed);
    rng.shuffle(sentences);
    const auto n_dev = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(sentences.size()))), 1, sentences.size() - 1);
    const std::set<std::string> dev(sentences.begin(), sentences.begin() + static_cast<std::ptrdiff_t>(n_dev));
    std::vector<std::size_t> train_idx, dev_idx;
    for (std::size_t i : indices) (dev.count(instances[i].sentence_id) ? dev_idx : train_idx).push_back(i);
    return {train_idx, dev_idx};
}

// ------------------------------------------------------------------ metrics

std::string to_string(F1Mode mode) {
    switch (mode) {
    case F1Mode::Binary: return "binary";
    case F1Mode::BinaryMicro: return "binary_micro";
    case F1Mode::Micro: return "micro";
    case F1Mode::Macro: return "macro";
    case F1Mode::Weighted: return "weighted";
    }
    return "micro";
}

F1Mode f1_mode_from_string(const std::string& name) {
    for (F1Mode m : {F1Mode::Binary, F1Mode::BinaryMicro, F1Mode::Micro, F1Mode::Macro, F1Mode::Weighted})
        if (to_string(m) == name) return m;
    throw ParseError("unknown F1 mode '" + name + "'");
}

ConfusionReport confusion_matrices(const std::vector<Label>& gold, const std::vector<Label>& pred, LabelSpace space) {
    if (gold.size() != pred.size()) throw PreconditionError("gold and predicted label sequences differ in length");
    const auto& cs = classes(space);
    std::vector<std::vector<std::size_t>> matrix(cs.size(), std::vector<std::size_t>(cs.size(), 0));
    for (std::size_t i = 0; i < gold.size(); ++i) ++matrix[class_index(gold[i], space)][class_index(pred[i], space)];
    return report_from_matrix(std::move(matrix), space);
}

ConfusionReport report_from_matrix(std::vector<std::vector<std::size_t>> matrix, LabelSpace space) {
    const auto& cs = classes(space);
    if (matrix.size() != cs.size()) throw PreconditionError("confusion matrix does not match the label space");
    ConfusionReport r;
    r.space = space;
    r.matrix = std::move(matrix);
    for (const auto& row : r.matrix) {
        if (row.size() != cs.size()) throw PreconditionError("confusion matrix does not match the label space");
        for (std::size_t v : row) r.total += v;
    }
    for (std::size_t c = 0; c < cs.size(); ++c) {
        ClassTable t;
        t.label = cs[c];
        for (std::size_t g = 0; g < cs.size(); ++g) {
            for (std::size_t p = 0; p < cs.size(); ++p) {
                const std::size_t v = r.matrix[g][p];
                if (g == c && p == c) t.tp += v;
                else if (g == c) t.fn += v;
                else if (p == c) t.fp += v;
                else t.tn += v;
            }
        }
        t.precision = t.tp + t.fp ? static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fp) : 0.0;
        t.recall = t.tp + t.fn ? static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fn) : 0.0;
        t.f1 = safe_f1(t.tp, t.fp, t.fn);
        r.per_class.push_back(t);
    }
    return r;
}

double f1_from_report(const ConfusionReport& r, F1Mode mode) {
    if (r.total == 0) throw PreconditionError("f1 of an empty confusion report");
    if ((mode == F1Mode::Binary || mode == F1Mode::BinaryMicro) && r.space != LabelSpace::Binary)
        throw PreconditionError("binary F1 modes need a binary confusion report");
    switch (mode) {
    case F1Mode::Binary: return r.per_class[class_index(Label::Relation, LabelSpace::Binary)].f1;
    case F1Mode::BinaryMicro:
    case F1Mode::Micro: {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (const auto& t : r.per_class) {
            tp += t.tp;
            fp += t.fp;
            fn += t.fn;
        }
        return safe_f1(tp, fp, fn);
    }
    case F1Mode::Macro: {
        double sum = 0.0;
        for (const auto& t : r.per_class) sum += t.f1;
        return sum / static_cast<double>(r.per_class.size());
    }
    case F1Mode::Weighted: {
        double sum = 0.0;
        for (const auto& t : r.per_class) sum += t.f1 * static_cast<double>(t.support());
        return sum / static_cast<double>(r.total);
    }
    }
    return 0.0;
}

double f1_score(const std::vector<Label>& gold, const std::vector<Label>& pred, F1Mode mode, LabelSpace space) {
    if (gold.empty()) throw PreconditionError("f1_score: empty label sequences");
    if (mode == F1Mode::Binary || mode == F1Mode::BinaryMicro) space = LabelSpace::Binary;
    return f1_from_report(confusion_matrices(gold, pred, space), mode);
}

std::string format_class_tables(const ConfusionReport& report) {
    std::ostringstream os;
    for (const auto& t : report.per_class) {
        os << to_string(t.label) << "\n";
        os << "              pred+   pred-\n";
        os << "  gold+  " << std::setw(8) << t.tp << std::setw(8) << t.fn << "\n";
        os << "  gold-  " << std::setw(8) << t.fp << std::setw(8) << t.tn << "\n";
    }
    return os.str();
}

std::string format_false_negatives(const ConfusionReport& report) {
    const auto& cs = classes(report.space);
    std::ostringstream os;
    os << std::left << std::setw(14) << "gold \\ pred";
    for (Label l : cs) os << std::setw(14) << to_string(l);
    os << "FN\n";
    for (std::size_t g = 0; g < cs.size(); ++g) {
        const std::size_t fn = report.per_class[g].fn;
        os << std::setw(14) << to_string(cs[g]);
        for (std::size_t p = 0; p < cs.size(); ++p) {
            std::ostringstream cell;
            if (p == g) cell << "-";
            else {
                const double share = fn ? 100.0 * static_cast<double>(report.matrix[g][p]) / static_cast<double>(fn) : 0.0;
                cell << report.matrix[g][p] << " (" << std::fixed << std::setprecision(1) << share << "%)";
            }
            os << std::setw(14) << cell.str();
        }
        os << fn << "\n";
    }
    return os.str();
}

void check_label_space(const std::vector<RelationInstance>& instances, LabelSpace space) {
    if (space != LabelSpace::Multiclass) return;
    for (const auto& inst : instances)
        if (inst.label == Label::Relation)
            throw LabelSpaceError("instance " + inst.instance_id + " carries a binary-only RELATION label but the setup is multiclass");
}

// -------------------------------------------------------------------- stats

DatasetStats compute_stats(const std::vector<RelationInstance>& instances) {
    DatasetStats s;
    std::set<std::string> sentences, cuis, types;
    for (const auto& inst : instances) {
        sentences.insert(inst.sentence_id);
        for (const auto* e : {&inst.entity1, &inst.entity2}) {
            cuis.insert(e->cui);
            types.insert(e->semantic_type);
        }
        ++s.label_counts[inst.label];
        ++s.split_label_counts[inst.split][inst.label];
    }
    s.sentences = sentences.size();
    s.instances = instances.size();
    s.unique_cuis = cuis.size();
    s.semantic_types = types.size();
    return s;
}

json to_json(const DatasetStats& s) {
    json labels = json::object();
    for (const auto& [l, c] : s.label_counts) labels[to_string(l)] = c;
    json splits = json::object();
    for (const auto& [sp, counts] : s.split_label_counts) {
        json j = json::object();
        for (const auto& [l, c] : counts) j[to_string(l)] = c;
        splits[to_string(sp)] = j;
    }
    return {{"sentences", s.sentences},   {"instances", s.instances}, {"unique_cuis", s.unique_cuis},
            {"semantic_types", s.semantic_types}, {"labels", labels}, {"splits", splits}};
}

std::string format_stats(const DatasetStats& s) {
    std::ostringstream os;
    os << "sentences       " << s.sentences << "\n"
       << "instances       " << s.instances << "\n"
       << "unique CUIs     " << s.unique_cuis << "\n"
       << "semantic types  " << s.semantic_types << "\n\n";
    const std::vector<Label> cols{Label::Positive, Label::Complex, Label::Negative, Label::NoRelation, Label::Relation,
                                  Label::Unlabeled};
    os << std::left << std::setw(8) << "split";
    for (Label l : cols) os << std::setw(13) << to_string(l);
    os << "total\n";
    for (const auto& [sp, counts] : s.split_label_counts) {
        os << std::setw(8) << to_string(sp);
        std::size_t total = 0;
        for (Label l : cols) {
            auto it = counts.find(l);
            const std::size_t c = it == counts.end() ? 0 : it->second;
            total += c;
            os << std::setw(13) << c;
        }
        os << total << "\n";
    }
    return os.str();
}

// -------------------------------------------------------------- persistence

json to_json(const RelationInstance& inst) {
    json annotators = json::object();
    for (const auto& [a, l] : inst.annotator_labels) annotators[a] = to_string(l);
    json j = {{"instance_id", inst.instance_id},
              {"sentence_id", inst.sentence_id},
              {"text", inst.text},
              {"entity1", mentions::to_json(inst.entity1)},
              {"entity2", mentions::to_json(inst.entity2)},
              {"label", to_string(inst.label)},
              {"annotator_labels", annotators},
              {"split", to_string(inst.split)}};
    j["context_note"] = inst.context_note ? json(*inst.context_note) : json(nullptr);
    if (inst.needs_adjudication) j["needs_adjudication"] = true;
    return j;
}

RelationInstance instance_from_json(const json& j) {
    RelationInstance inst;
    inst.instance_id = j.at("instance_id").get<std::string>();
    inst.sentence_id = j.at("sentence_id").get<std::string>();
    inst.text = j.at("text").get<std::string>();
    inst.entity1 = mentions::mention_from_json(j.at("entity1"));
    inst.entity2 = mentions::mention_from_json(j.at("entity2"));
    inst.label = label_from_string(j.value("label", "UNLABELED"));
    if (j.contains("annotator_labels"))
        for (const auto& [a, l] : j.at("annotator_labels").items()) inst.annotator_labels[a] = label_from_string(l.get<std::string>());
    if (j.contains("context_note") && !j.at("context_note").is_null()) inst.context_note = j.at("context_note").get<std::string>();
    inst.split = split_from_string(j.value("split", "NONE"));
    inst.needs_adjudication = j.value("needs_adjudication", false);
    if (inst.entity1.span.end > inst.text.size() || inst.entity2.span.end > inst.text.size())
        throw ParseError("instance " + inst.instance_id + ": entity span outside text");
    if (inst.entity1.span.overlaps(inst.entity2.span))
        throw ParseError("instance " + inst.instance_id + ": overlapping entity spans");
    return inst;
}

void write_instances(const std::filesystem::path& path, const std::vector<RelationInstance>& instances) {
    std::vector<json> out;
    for (const auto& inst : instances) out.push_back(to_json(inst));
    write_jsonl(path, out);
}

std::vector<RelationInstance> read_instances(const std::filesystem::path& path) {
    std::vector<RelationInstance> out;
    for_each_jsonl(path, [&](const json& j) { out.push_back(instance_from_json(j)); });
    return out;
}

} // namespace redkit::dataset
