#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "redkit/dataset.hpp"
#include "redkit/encoder.hpp"
#include "redkit/models.hpp"

namespace redkit::experiments {

using dataset::F1Mode;
using dataset::Label;
using dataset::LabelSpace;
using dataset::RelationInstance;

enum class Imbalance { None, Undersample, Oversample, Reweight };

std::string to_string(Imbalance i);
Imbalance imbalance_from_string(const std::string& name);

struct RunConfig {
    std::size_t epochs = 50;
    double learning_rate = 1e-5;
    std::size_t batch_size = 16;
    std::vector<std::uint64_t> seeds{42, 3, 7, 21, 77, 24, 69, 96, 44, 11};
    LabelSpace setup = LabelSpace::Binary;
    /// Dev metric for checkpoint selection; unset means binary micro F1 for the
    /// binary setup and macro F1 for the multi-class setup.
    std::optional<F1Mode> selection_metric;
    Imbalance imbalance = Imbalance::None;
    /// Share of the training data held out as dev for k-fold and cross-dataset runs.
    double dev_fraction = 0.15;
    std::size_t folds = 5;
    models::ModelConfig model;
    /// Backend registry config, e.g. {"name": "mock", "d": 16}.
    json backend = {{"name", "mock"}};
};

/// Fills defaults, with "weakly_supervised": true switching to 10 epochs and batch 32.
RunConfig run_config_from_json(const json& j);
json to_json(const RunConfig& c);
F1Mode selection_metric(const RunConfig& c);
/// Metrics reported for a setup: binary micro and RELATION-class F1 for
/// binary; micro, macro and weighted F1 for multi-class.
std::vector<F1Mode> reported_metrics(LabelSpace setup);

class TrainingError : public Error {
public:
    using Error::Error;
};

struct TrainResult {
    json checkpoint;           // best-dev parameters
    std::size_t best_epoch = 0;  // 1-based
    double best_dev_f1 = 0.0;
    std::vector<double> dev_f1;      // per epoch
    std::vector<double> train_loss;  // mean per epoch
};

/// 1-based index of the first maximum.
std::size_t select_best_epoch(const std::vector<double>& dev_f1);

/// Adam training with a per-epoch reshuffle under `seed`; after every epoch
/// the dev set is scored and the best checkpoint kept. On return the model
/// holds the best checkpoint.
TrainResult train(const RunConfig& config, models::RelationModel& model, const std::vector<RelationInstance>& train_set,
                  const std::vector<RelationInstance>& dev_set, std::uint64_t seed);

struct EvalResult {
    std::vector<Label> gold;
    std::vector<Label> predicted;
    std::vector<models::Prediction> predictions;
    std::map<F1Mode, double> f1;
    dataset::ConfusionReport confusion;
};

EvalResult evaluate(const models::RelationModel& model, const std::vector<RelationInstance>& test_set, LabelSpace setup);

struct SeedResult {
    std::uint64_t seed = 0;
    std::map<std::string, double> scores;  // metric name -> test F1
    std::size_t best_epoch = 0;
    double best_dev_f1 = 0.0;
    json checkpoint;  // best-dev checkpoint (last fold for k-fold runs)
    bool operator==(const SeedResult&) const = default;
};

struct RunResult {
    std::string name;
    std::vector<SeedResult> seeds;

    std::vector<double> values(const std::string& metric) const;
    double mean(const std::string& metric) const;
    /// Population standard deviation (ddof = 0).
    double stddev(const std::string& metric) const;
    std::vector<std::string> metrics() const;
    bool operator==(const RunResult&) const = default;
};

/// One JSON record per seed plus a summary record.
std::vector<json> result_records(const RunResult& r);
/// Rows are runs, columns metrics, cells "mean ± std" in percent.
std::string format_summary(const std::vector<RunResult>& results);

/// Builds a fresh backend and model for a seed.
models::RelationModel make_model(const RunConfig& config, std::uint64_t seed);

/// Train on `train_set`, select on `dev_set`, score `test_set`, once per seed.
RunResult run_holdout(const RunConfig& config, const std::vector<RelationInstance>& train_set,
                      const std::vector<RelationInstance>& dev_set, const std::vector<RelationInstance>& test_set,
                      const std::string& name = "holdout");

/// Sentence-level k-fold CV per seed; each fold trains on its training part
/// minus a dev holdout. Per-seed scores are fold means.
RunResult run_kfold(const RunConfig& config, const std::vector<RelationInstance>& instances,
                    const std::string& name = "kfold");

/// Train on one dataset (minus a dev holdout), evaluate on all of the other.
RunResult cross_disease(const RunConfig& config, const std::vector<RelationInstance>& train_dataset,
                        const std::vector<RelationInstance>& eval_dataset, const std::string& name = "cross");

struct BaselineResult {
    std::size_t trials = 0;
    std::map<F1Mode, double> mean;
    std::map<F1Mode, double> stddev;
};

/// Mean F1 of labels drawn i.i.d. from `distribution` (class order of `space`) over trials.
BaselineResult random_baseline(const std::vector<double>& distribution, const std::vector<Label>& test_gold,
                               LabelSpace space, std::size_t trials, std::uint64_t seed);

/// Label distribution of instances in class order.
std::vector<double> label_distribution(const std::vector<Label>& labels, LabelSpace space);
/// Gold labels expanded from per-class counts in class order.
std::vector<Label> labels_from_counts(const std::vector<std::size_t>& counts, LabelSpace space);

struct SilverRecord {
    std::string instance_id;
    Label label = Label::Unlabeled;
    std::map<Label, std::size_t> votes;
    std::map<Label, double> mean_scores;
    /// Several labels shared the top vote count; the highest mean score won.
    bool tie_broken = false;
};

/// Per-model predictions, then a plurality vote; ties go to the tied label
/// with the highest mean score (first in class order if still tied).
std::vector<SilverRecord> silver_label(const std::vector<RelationInstance>& instances,
                                       const std::vector<const models::RelationModel*>& ensemble);
/// Copies of `instances` carrying the silver labels.
std::vector<RelationInstance> apply_silver(const std::vector<RelationInstance>& instances,
                                           const std::vector<SilverRecord>& records);

struct ProbeCell {
    std::size_t layer = 0;  // 0 = embeddings; attention layers are 1-based
    std::size_t head = 0;   // 1-based; 0 = all heads of the layer (or all layers)
    double dev_f1 = 0.0;
    double test_f1 = 0.0;
};

struct ProbeGrid {
    std::string kind;
    std::vector<ProbeCell> cells;

    const ProbeCell& best() const;
    const ProbeCell& at(std::size_t layer, std::size_t head = 0) const;
};

json to_json(const ProbeGrid& g);
/// Text grid: one row per layer, one column per head.
std::string format_grid(const ProbeGrid& g);

struct ProbeData {
    std::vector<RelationInstance> train, dev, test;
};

/// Per layer 0..L: the variant's representation from that layer's vectors
/// (context weights still from last-layer attention), frozen backend, only the
/// head trained. Scores are dev-selected test F1 for the first seed.
ProbeGrid probe_layers(const RunConfig& config, const ProbeData& data, std::shared_ptr<encoder::Backend> backend,
                       char variant, models::Architecture aggregation, bool with_projection);

enum class AttentionProbe { PerLayer, PerHead, AllLayers };

std::string to_string(AttentionProbe m);
AttentionProbe attention_probe_from_string(const std::string& name);

/// Two features per (layer, head): the attention mass entity-1 tokens put on
/// entity-2 tokens, averaged over entity-1 tokens, and the reverse.
std::vector<double> attention_features(const encoder::MarkedSequence& seq, const encoder::EncodedSequence& enc,
                                       std::size_t layer, std::size_t head);

ProbeGrid probe_attention(const RunConfig& config, const ProbeData& data, const encoder::Backend& backend,
                          AttentionProbe mode);

/// Softmax-regression probe over fixed feature vectors, trained like the models.
struct LinearProbeResult {
    double dev_f1 = 0.0;
    double test_f1 = 0.0;
};

LinearProbeResult train_linear_probe(const RunConfig& config, const std::vector<std::vector<double>>& train_x,
                                     const std::vector<Label>& train_y, const std::vector<std::vector<double>>& dev_x,
                                     const std::vector<Label>& dev_y, const std::vector<std::vector<double>>& test_x,
                                     const std::vector<Label>& test_y, std::uint64_t seed);

/// Random sentences with two entity mentions each, unlabeled; sentence ids are
/// "syn-<i>". Deterministic in `seed`.
std::vector<RelationInstance> synthetic_instances(std::size_t n, std::uint64_t seed);

} // namespace redkit::experiments
