#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "redkit/corpus.hpp"
#include "redkit/mentions.hpp"

namespace redkit::dataset {

/// RELATION only occurs in binary-only datasets; UNLABELED marks instances
/// awaiting annotation or adjudication.
enum class Label { Positive, Complex, Negative, NoRelation, Relation, Unlabeled };
enum class Split { Train, Dev, Test, None };
enum class LabelSpace { Binary, Multiclass };

std::string to_string(Label label);
/// Accepts the canonical upper-case names and "NO RELATION"/"NO-RELATION".
Label label_from_string(const std::string& name);
std::string to_string(Split split);
Split split_from_string(const std::string& name);
std::string to_string(LabelSpace space);
LabelSpace label_space_from_string(const std::string& name);

/// POSITIVE/COMPLEX/NEGATIVE/RELATION -> RELATION; NO_RELATION unchanged.
Label project_binary(Label label);
/// Classes scored in a label space, in index order.
const std::vector<Label>& classes(LabelSpace space);
std::size_t class_index(Label label, LabelSpace space);

class LabelSpaceError : public Error {
public:
    using Error::Error;
};

struct RelationInstance {
    std::string instance_id;
    std::string sentence_id;
    std::string text;
    mentions::LinkedMention entity1;  // leftmost
    mentions::LinkedMention entity2;
    Label label = Label::Unlabeled;
    std::map<std::string, Label> annotator_labels;
    std::optional<std::string> context_note;
    Split split = Split::None;
    bool needs_adjudication = false;
};

/// Stable id from the sentence id and both spans (order-insensitive).
std::string make_instance_id(const std::string& sentence_id, const mentions::Span& a, const mentions::Span& b);

/// One instance per unordered mention pair, entity1 being the leftmost.
std::vector<RelationInstance> make_instances(const corpus::SentenceRecord& sentence,
                                             const std::vector<mentions::LinkedMention>& mentions);

/// Strict-majority label; nullopt is a tie needing adjudication.
std::optional<Label> majority_vote(const std::map<std::string, Label>& labels);
std::optional<Label> majority_vote(const std::vector<Label>& labels);

/// Fleiss' kappa over an items x categories count matrix with a constant row sum n >= 2.
double fleiss_kappa(const std::vector<std::vector<double>>& counts);
/// Builds the count matrix from per-instance annotator labels, optionally after binary projection.
std::vector<std::vector<double>> rating_matrix(const std::vector<std::map<std::string, Label>>& ratings,
                                               LabelSpace space);

/// Sentence-level assignment with largest-remainder sizing; ratios sum to 1.
std::map<std::string, Split> split_sentences(const std::vector<std::string>& sentence_ids,
                                             const std::array<double, 3>& ratios, std::uint64_t seed);
void split_dataset(std::vector<RelationInstance>& instances, const std::array<double, 3>& ratios, std::uint64_t seed);

struct Fold {
    std::vector<std::size_t> train;  // indices into the instance vector
    std::vector<std::size_t> test;
};

/// k sentence-granular folds; each instance is in exactly one test fold.
std::vector<Fold> kfold(const std::vector<RelationInstance>& instances, std::size_t k, std::uint64_t seed);

/// Deterministic sentence-level holdout of `fraction` of `indices` (used for dev sets).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout(const std::vector<RelationInstance>& instances,
                                                                      const std::vector<std::size_t>& indices,
                                                                      double fraction, std::uint64_t seed);

enum class F1Mode {
    Binary,       // F1 of the RELATION class after projection
    BinaryMicro,  // micro F1 over {RELATION, NO_RELATION} after projection
    Micro,
    Macro,        // unweighted over all classes of the space; absent classes count as 0
    Weighted,     // per-class F1 weighted by gold support
};

std::string to_string(F1Mode mode);
F1Mode f1_mode_from_string(const std::string& name);

double f1_score(const std::vector<Label>& gold, const std::vector<Label>& pred, F1Mode mode,
                LabelSpace space = LabelSpace::Multiclass);

struct ClassTable {
    Label label = Label::Unlabeled;
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    std::size_t support() const { return tp + fn; }
};

struct ConfusionReport {
    LabelSpace space = LabelSpace::Multiclass;
    std::vector<ClassTable> per_class;
    /// matrix[g][p]: count of gold class g predicted as p.
    std::vector<std::vector<std::size_t>> matrix;
    std::size_t total = 0;
};

ConfusionReport confusion_matrices(const std::vector<Label>& gold, const std::vector<Label>& pred,
                                   LabelSpace space = LabelSpace::Multiclass);
/// Report from a gold x predicted count matrix in class order.
ConfusionReport report_from_matrix(std::vector<std::vector<std::size_t>> matrix, LabelSpace space);
/// Binary modes need a binary-space report.
double f1_from_report(const ConfusionReport& report, F1Mode mode);
/// Per-class 2x2 tables, one block per class.
std::string format_class_tables(const ConfusionReport& report);
/// For every gold class, where its false negatives went (counts and shares).
std::string format_false_negatives(const ConfusionReport& report);

/// Throws LabelSpaceError when a multiclass setup meets binary-only labels.
void check_label_space(const std::vector<RelationInstance>& instances, LabelSpace space);

struct DatasetStats {
    std::size_t sentences = 0;
    std::size_t instances = 0;
    std::size_t unique_cuis = 0;
    std::size_t semantic_types = 0;
    std::map<Label, std::size_t> label_counts;
    std::map<Split, std::map<Label, std::size_t>> split_label_counts;
};

DatasetStats compute_stats(const std::vector<RelationInstance>& instances);
json to_json(const DatasetStats& stats);
std::string format_stats(const DatasetStats& stats);

json to_json(const RelationInstance& instance);
RelationInstance instance_from_json(const json& j);
void write_instances(const std::filesystem::path& path, const std::vector<RelationInstance>& instances);
std::vector<RelationInstance> read_instances(const std::filesystem::path& path);

} // namespace redkit::dataset
