#include "redkit/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace redkit::experiments {

using encoder::EncodedSequence;
using encoder::MarkedSequence;

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t state = seed ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
    return splitmix64(state);
}

std::vector<RelationInstance> subset(const std::vector<RelationInstance>& all, const std::vector<std::size_t>& idx) {
    std::vector<RelationInstance> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
}

Label gold_label(const RelationInstance& inst, LabelSpace space) {
    if (inst.label == Label::Unlabeled) throw PreconditionError("instance " + inst.instance_id + " is unlabeled");
    return space == LabelSpace::Binary ? dataset::project_binary(inst.label) : inst.label;
}

/// Epoch composition under the imbalance remedy, before shuffling.
std::vector<std::size_t> epoch_indices(const std::vector<std::size_t>& class_of, std::size_t num_classes,
                                       Imbalance mode, Rng& rng) {
    std::vector<std::size_t> all(class_of.size());
    std::iota(all.begin(), all.end(), 0);
    if (mode != Imbalance::Undersample && mode != Imbalance::Oversample) return all;
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < class_of.size(); ++i) by_class[class_of[i]].push_back(i);
    std::size_t target = mode == Imbalance::Undersample ? class_of.size() : 0;
    for (const auto& members : by_class) {
        if (members.empty()) continue;
        target = mode == Imbalance::Undersample ? std::min(target, members.size()) : std::max(target, members.size());
    }
    std::vector<std::size_t> out;
    for (auto members : by_class) {
        if (members.empty()) continue;
        if (mode == Imbalance::Undersample) {
            rng.shuffle(members);
            out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(target));
        } else {
            out.insert(out.end(), members.begin(), members.end());
            for (std::size_t k = members.size(); k < target; ++k) out.push_back(members[rng.below(members.size())]);
        }
    }
    return out;
}

struct Prepared {
    std::vector<MarkedSequence> seqs;
    std::vector<EncodedSequence> encodings;  // empty unless the backend is frozen
};

Prepared prepare(const models::RelationModel& model, const std::vector<RelationInstance>& instances, bool cache) {
    Prepared p;
    p.seqs.reserve(instances.size());
    for (const auto& inst : instances) p.seqs.push_back(encoder::prepare_instance(model.backend(), inst));
    if (cache) {
        p.encodings.reserve(p.seqs.size());
        for (const auto& s : p.seqs) p.encodings.push_back(model.backend().encode(s));
    }
    return p;
}

std::vector<Label> predict_all(const models::RelationModel& model, const Prepared& p) {
    std::vector<Label> out;
    out.reserve(p.seqs.size());
    for (std::size_t i = 0; i < p.seqs.size(); ++i)
        out.push_back(model.predict(p.seqs[i], p.encodings.empty() ? nullptr : &p.encodings[i]).label);
    return out;
}

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * v;
    return os.str();
}

void check_setup(const models::RelationModel& model, LabelSpace setup) {
    if (model.config().space != setup) throw PreconditionError("model label space does not match the run setup");
}

SeedResult seed_result(std::uint64_t seed, const TrainResult& tr, const EvalResult& ev) {
    SeedResult r;
    r.seed = seed;
    for (const auto& [mode, v] : ev.f1) r.scores[dataset::to_string(mode)] = v;
    r.best_epoch = tr.best_epoch;
    r.best_dev_f1 = tr.best_dev_f1;
    r.checkpoint = tr.checkpoint;
    return r;
}

std::vector<std::vector<double>> standardize(std::vector<std::vector<double>> x, const std::vector<double>& mean,
                                             const std::vector<double>& scale) {
    for (auto& row : x)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean[j]) / scale[j];
    return x;
}

} // namespace

// ---------------------------------------------------------------------------
// Config

std::string to_string(Imbalance i) {
    switch (i) {
    case Imbalance::None: return "none";
    case Imbalance::Undersample: return "undersample";
    case Imbalance::Oversample: return "oversample";
    case Imbalance::Reweight: return "reweight";
    }
    return "none";
}

Imbalance imbalance_from_string(const std::string& name) {
    for (Imbalance i : {Imbalance::None, Imbalance::Undersample, Imbalance::Oversample, Imbalance::Reweight})
        if (to_string(i) == to_lower(name)) return i;
    throw ParseError("unknown imbalance remedy: " + name);
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    if (j.value("weakly_supervised", false)) {
        c.epochs = 10;
        c.batch_size = 32;
    }
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("setup")) c.setup = dataset::label_space_from_string(j.at("setup").get<std::string>());
    if (j.contains("selection_metric") && !j.at("selection_metric").is_null())
        c.selection_metric = dataset::f1_mode_from_string(j.at("selection_metric").get<std::string>());
    if (j.contains("imbalance")) c.imbalance = imbalance_from_string(j.at("imbalance").get<std::string>());
    c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
    c.folds = j.value("folds", c.folds);
    if (j.contains("model")) c.model = models::model_config_from_json(j.at("model"));
    if (j.contains("backend")) c.backend = j.at("backend");
    c.model.space = c.setup;
    if (c.seeds.empty()) throw ParseError("seeds must not be empty");
    if (c.batch_size == 0) throw ParseError("batch_size must be at least 1");
    if (c.epochs == 0) throw ParseError("epochs must be at least 1");
    return c;
}

json to_json(const RunConfig& c) {
    return {{"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"seeds", c.seeds},
            {"setup", dataset::to_string(c.setup)},
            {"selection_metric", dataset::to_string(selection_metric(c))},
            {"imbalance", to_string(c.imbalance)},
            {"dev_fraction", c.dev_fraction},
            {"folds", c.folds},
            {"model", models::to_json(c.model)},
            {"backend", c.backend}};
}

F1Mode selection_metric(const RunConfig& c) {
    if (c.selection_metric) return *c.selection_metric;
    return c.setup == LabelSpace::Binary ? F1Mode::BinaryMicro : F1Mode::Macro;
}

std::vector<F1Mode> reported_metrics(LabelSpace setup) {
    if (setup == LabelSpace::Binary) return {F1Mode::BinaryMicro, F1Mode::Binary};
    return {F1Mode::Micro, F1Mode::Macro, F1Mode::Weighted};
}

// ---------------------------------------------------------------------------
// Training and evaluation

std::size_t select_best_epoch(const std::vector<double>& dev_f1) {
    if (dev_f1.empty()) throw PreconditionError("no epochs to select from");
    return static_cast<std::size_t>(std::max_element(dev_f1.begin(), dev_f1.end()) - dev_f1.begin()) + 1;
}

TrainResult train(const RunConfig& config, models::RelationModel& model, const std::vector<RelationInstance>& train_set,
                  const std::vector<RelationInstance>& dev_set, std::uint64_t seed) {
    if (train_set.empty() || dev_set.empty()) throw PreconditionError("training needs non-empty train and dev sets");
    if (config.batch_size == 0 || config.epochs == 0) throw PreconditionError("epochs and batch_size must be positive");
    check_setup(model, config.setup);
    dataset::check_label_space(train_set, config.setup);
    dataset::check_label_space(dev_set, config.setup);

    const bool cache = !model.trains_backend();
    const Prepared tr = prepare(model, train_set, cache);
    const Prepared dv = prepare(model, dev_set, cache);
    std::vector<Label> train_gold, dev_gold;
    std::vector<std::size_t> train_class;
    for (const auto& inst : train_set) {
        train_gold.push_back(gold_label(inst, config.setup));
        train_class.push_back(dataset::class_index(train_gold.back(), config.setup));
    }
    for (const auto& inst : dev_set) dev_gold.push_back(gold_label(inst, config.setup));

    const std::size_t k = dataset::classes(config.setup).size();
    if (config.imbalance == Imbalance::Reweight) {
        std::vector<double> counts(k, 0.0), weights(k, 0.0);
        for (std::size_t c : train_class) counts[c] += 1.0;
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] > 0) weights[c] = static_cast<double>(train_class.size()) / (static_cast<double>(k) * counts[c]);
        model.set_class_weights(weights);
    }

    Adam adam(config.learning_rate);
    Rng order_rng(derive(seed, 1));
    Rng dropout_rng(derive(seed, 2));
    const F1Mode metric = selection_metric(config);
    TrainResult result;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        auto idx = epoch_indices(train_class, k, config.imbalance, order_rng);
        order_rng.shuffle(idx);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < idx.size(); start += config.batch_size) {
            const std::size_t stop = std::min(idx.size(), start + config.batch_size);
            model.zero_grad();
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t i = idx[b];
                const double l = model.accumulate(tr.seqs[i], train_gold[i], &dropout_rng,
                                                  tr.encodings.empty() ? nullptr : &tr.encodings[i]);
                if (!std::isfinite(l)) {
                    std::ostringstream os;
                    os << "non-finite loss " << l << " at epoch " << epoch << ", batch starting " << start
                       << ", instance " << train_set[i].instance_id << " (lr " << config.learning_rate << ")";
                    throw TrainingError(os.str());
                }
                loss_sum += l;
            }
            const auto params = model.parameters();
            const double scale = 1.0 / static_cast<double>(stop - start);
            for (auto& [name, p] : params) p->grad *= scale;
            adam.step(params);
        }
        result.train_loss.push_back(loss_sum / static_cast<double>(idx.size()));
        const double f1 = dataset::f1_score(dev_gold, predict_all(model, dv), metric, config.setup);
        result.dev_f1.push_back(f1);
        if (epoch == 1 || f1 > result.best_dev_f1) {
            result.best_dev_f1 = f1;
            result.best_epoch = epoch;
            result.checkpoint = model.checkpoint();
        }
    }
    model.load_checkpoint(result.checkpoint);
    return result;
}

EvalResult evaluate(const models::RelationModel& model, const std::vector<RelationInstance>& test_set, LabelSpace setup) {
    if (test_set.empty()) throw PreconditionError("evaluation needs a non-empty test set");
    check_setup(model, setup);
    dataset::check_label_space(test_set, setup);
    EvalResult r;
    for (const auto& inst : test_set) {
        const auto seq = encoder::prepare_instance(model.backend(), inst);
        r.predictions.push_back(model.predict(seq));
        r.predicted.push_back(r.predictions.back().label);
        r.gold.push_back(gold_label(inst, setup));
    }
    for (F1Mode m : reported_metrics(setup)) r.f1[m] = dataset::f1_score(r.gold, r.predicted, m, setup);
    r.confusion = dataset::confusion_matrices(r.gold, r.predicted, setup);
    return r;
}

// ---------------------------------------------------------------------------
// Results

std::vector<double> RunResult::values(const std::string& metric) const {
    std::vector<double> v;
    for (const auto& s : seeds) {
        const auto it = s.scores.find(metric);
        if (it == s.scores.end()) throw PreconditionError("metric " + metric + " missing from run " + name);
        v.push_back(it->second);
    }
    return v;
}

double RunResult::mean(const std::string& metric) const {
    const auto v = values(metric);
    if (v.empty()) throw PreconditionError("run has no seeds");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double RunResult::stddev(const std::string& metric) const {
    const auto v = values(metric);
    const double m = mean(metric);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

std::vector<std::string> RunResult::metrics() const {
    std::vector<std::string> out;
    if (seeds.empty()) return out;
    for (const auto& [k, v] : seeds.front().scores) out.push_back(k);
    return out;
}

std::vector<json> result_records(const RunResult& r) {
    std::vector<json> out;
    for (const auto& s : r.seeds)
        out.push_back({{"run", r.name},
                       {"seed", s.seed},
                       {"scores", s.scores},
                       {"best_epoch", s.best_epoch},
                       {"best_dev_f1", s.best_dev_f1}});
    json summary{{"run", r.name}, {"summary", true}};
    for (const auto& m : r.metrics()) summary["scores"][m] = {{"mean", r.mean(m)}, {"std", r.stddev(m)}};
    out.push_back(summary);
    return out;
}

std::string format_summary(const std::vector<RunResult>& results) {
    std::vector<std::string> metrics;
    for (const auto& r : results)
        for (const auto& m : r.metrics())
            if (std::find(metrics.begin(), metrics.end(), m) == metrics.end()) metrics.push_back(m);
    std::size_t name_w = 4;
    for (const auto& r : results) name_w = std::max(name_w, r.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_w + 2)) << "run";
    for (const auto& m : metrics) os << std::setw(18) << m;
    os << "\n";
    for (const auto& r : results) {
        os << std::setw(static_cast<int>(name_w + 2)) << r.name;
        const auto have = r.metrics();
        for (const auto& m : metrics) {
            if (std::find(have.begin(), have.end(), m) == have.end()) os << std::setw(18) << "-";
            else os << std::setw(18) << (pct(r.mean(m)) + " ± " + pct(r.stddev(m)));
        }
        os << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Harness runs

models::RelationModel make_model(const RunConfig& config, std::uint64_t seed) {
    std::shared_ptr<encoder::Backend> backend = encoder::BackendRegistry::global().create(config.backend);
    models::ModelConfig m = config.model;
    m.space = config.setup;
    m.seed = seed;
    return models::RelationModel(m, std::move(backend));
}

RunResult run_holdout(const RunConfig& config, const std::vector<RelationInstance>& train_set,
                      const std::vector<RelationInstance>& dev_set, const std::vector<RelationInstance>& test_set,
                      const std::string& name) {
    RunResult result;
    result.name = name;
    for (std::uint64_t seed : config.seeds) {
        auto model = make_model(config, seed);
        const auto tr = train(config, model, train_set, dev_set, seed);
        result.seeds.push_back(seed_result(seed, tr, evaluate(model, test_set, config.setup)));
    }
    return result;
}

RunResult run_kfold(const RunConfig& config, const std::vector<RelationInstance>& instances, const std::string& name) {
    RunResult result;
    result.name = name;
    for (std::uint64_t seed : config.seeds) {
        const auto folds = dataset::kfold(instances, config.folds, seed);
        SeedResult acc;
        acc.seed = seed;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            const auto [train_idx, dev_idx] = dataset::holdout(instances, folds[f].train, config.dev_fraction, derive(seed, 10 + f));
            auto model = make_model(config, seed);
            const auto tr = train(config, model, subset(instances, train_idx), subset(instances, dev_idx), seed);
            const auto ev = evaluate(model, subset(instances, folds[f].test), config.setup);
            for (const auto& [mode, v] : ev.f1) acc.scores[dataset::to_string(mode)] += v / static_cast<double>(folds.size());
            acc.best_dev_f1 += tr.best_dev_f1 / static_cast<double>(folds.size());
            acc.best_epoch = tr.best_epoch;
            acc.checkpoint = tr.checkpoint;
        }
        result.seeds.push_back(std::move(acc));
    }
    return result;
}

RunResult cross_disease(const RunConfig& config, const std::vector<RelationInstance>& train_dataset,
                        const std::vector<RelationInstance>& eval_dataset, const std::string& name) {
    dataset::check_label_space(train_dataset, config.setup);
    dataset::check_label_space(eval_dataset, config.setup);
    std::vector<std::size_t> all(train_dataset.size());
    std::iota(all.begin(), all.end(), 0);
    RunResult result;
    result.name = name;
    for (std::uint64_t seed : config.seeds) {
        const auto [train_idx, dev_idx] = dataset::holdout(train_dataset, all, config.dev_fraction, derive(seed, 3));
        auto model = make_model(config, seed);
        const auto tr = train(config, model, subset(train_dataset, train_idx), subset(train_dataset, dev_idx), seed);
        result.seeds.push_back(seed_result(seed, tr, evaluate(model, eval_dataset, config.setup)));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Random baseline

std::vector<double> label_distribution(const std::vector<Label>& labels, LabelSpace space) {
    if (labels.empty()) throw PreconditionError("label distribution of an empty set");
    std::vector<double> d(dataset::classes(space).size(), 0.0);
    for (Label l : labels) d[dataset::class_index(l, space)] += 1.0;
    for (double& x : d) x /= static_cast<double>(labels.size());
    return d;
}

std::vector<Label> labels_from_counts(const std::vector<std::size_t>& counts, LabelSpace space) {
    const auto& cs = dataset::classes(space);
    if (counts.size() != cs.size()) throw PreconditionError("one count per class is required");
    std::vector<Label> out;
    for (std::size_t c = 0; c < cs.size(); ++c) out.insert(out.end(), counts[c], cs[c]);
    return out;
}

BaselineResult random_baseline(const std::vector<double>& distribution, const std::vector<Label>& test_gold,
                               LabelSpace space, std::size_t trials, std::uint64_t seed) {
    const std::size_t k = dataset::classes(space).size();
    if (distribution.size() != k) throw PreconditionError("distribution needs one probability per class");
    double total = 0.0;
    for (double p : distribution) {
        if (!(p >= 0.0)) throw PreconditionError("probabilities must be non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw PreconditionError("distribution must sum to 1");
    if (test_gold.empty() || trials == 0) throw PreconditionError("baseline needs test labels and at least one trial");

    std::vector<std::size_t> gold_idx;
    for (Label l : test_gold) gold_idx.push_back(dataset::class_index(l, space));

    const auto modes = reported_metrics(space);
    std::map<F1Mode, double> mean, m2;
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> matrix(k, std::vector<std::size_t>(k));
    for (std::size_t t = 1; t <= trials; ++t) {
        for (auto& row : matrix) std::fill(row.begin(), row.end(), 0);
        for (std::size_t g : gold_idx) ++matrix[g][rng.categorical(distribution)];
        const auto report = dataset::report_from_matrix(matrix, space);
        for (F1Mode m : modes) {
            // Welford update.
            const double x = dataset::f1_from_report(report, m);
            const double delta = x - mean[m];
            mean[m] += delta / static_cast<double>(t);
            m2[m] += delta * (x - mean[m]);
        }
    }
    BaselineResult r;
    r.trials = trials;
    for (F1Mode m : modes) {
        r.mean[m] = mean[m];
        r.stddev[m] = std::sqrt(m2[m] / static_cast<double>(trials));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Silver labels

std::vector<SilverRecord> silver_label(const std::vector<RelationInstance>& instances,
                                       const std::vector<const models::RelationModel*>& ensemble) {
    if (ensemble.size() < 3) throw PreconditionError("silver labelling needs at least three models");
    const LabelSpace space = ensemble.front()->config().space;
    for (const auto* m : ensemble)
        if (!m || m->config().space != space) throw PreconditionError("ensemble models must share a label space");
    const auto& cs = dataset::classes(space);
    std::vector<SilverRecord> out;
    for (const auto& inst : instances) {
        SilverRecord rec;
        rec.instance_id = inst.instance_id;
        std::vector<double> score_sum(cs.size(), 0.0);
        for (const auto* m : ensemble) {
            const auto pred = m->predict(encoder::prepare_instance(m->backend(), inst));
            ++rec.votes[pred.label];
            for (std::size_t c = 0; c < cs.size(); ++c) score_sum[c] += pred.scores(static_cast<Eigen::Index>(c));
        }
        for (std::size_t c = 0; c < cs.size(); ++c) rec.mean_scores[cs[c]] = score_sum[c] / static_cast<double>(ensemble.size());
        std::size_t top = 0;
        for (const auto& [label, n] : rec.votes) top = std::max(top, n);
        std::vector<Label> tied;
        for (Label l : cs)
            if (rec.votes.count(l) && rec.votes[l] == top) tied.push_back(l);
        rec.label = tied.front();
        if (tied.size() > 1) {
            rec.tie_broken = true;
            for (Label l : tied)
                if (rec.mean_scores[l] > rec.mean_scores[rec.label]) rec.label = l;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<RelationInstance> apply_silver(const std::vector<RelationInstance>& instances,
                                           const std::vector<SilverRecord>& records) {
    std::map<std::string, const SilverRecord*> by_id;
    for (const auto& r : records) by_id[r.instance_id] = &r;
    std::vector<RelationInstance> out;
    for (const auto& inst : instances) {
        const auto it = by_id.find(inst.instance_id);
        if (it == by_id.end()) throw PreconditionError("no silver label for instance " + inst.instance_id);
        RelationInstance copy = inst;
        copy.label = it->second->label;
        if (it->second->tie_broken) copy.context_note = "silver tie broken by mean score";
        out.push_back(std::move(copy));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Probing

const ProbeCell& ProbeGrid::best() const {
    if (cells.empty()) throw PreconditionError("empty probe grid");
    return *std::max_element(cells.begin(), cells.end(),
                             [](const ProbeCell& a, const ProbeCell& b) { return a.test_f1 < b.test_f1; });
}

const ProbeCell& ProbeGrid::at(std::size_t layer, std::size_t head) const {
    for (const auto& c : cells)
        if (c.layer == layer && c.head == head) return c;
    throw PreconditionError("probe grid has no cell (" + std::to_string(layer) + ", " + std::to_string(head) + ")");
}

json to_json(const ProbeGrid& g) {
    json cells = json::array();
    for (const auto& c : g.cells)
        cells.push_back({{"layer", c.layer}, {"head", c.head}, {"dev_f1", c.dev_f1}, {"test_f1", c.test_f1}});
    return {{"kind", g.kind}, {"cells", cells}};
}

std::string format_grid(const ProbeGrid& g) {
    std::size_t max_head = 0;
    std::vector<std::size_t> layers;
    for (const auto& c : g.cells) {
        max_head = std::max(max_head, c.head);
        if (std::find(layers.begin(), layers.end(), c.layer) == layers.end()) layers.push_back(c.layer);
    }
    std::ostringstream os;
    os << g.kind << " (test F1 %)\n" << std::left << std::setw(8) << "layer";
    if (max_head == 0) os << std::setw(8) << "all";
    for (std::size_t h = 1; h <= max_head; ++h) os << std::setw(8) << ("h" + std::to_string(h));
    os << "\n";
    for (std::size_t l : layers) {
        os << std::setw(8) << l;
        for (std::size_t h = max_head == 0 ? 0 : 1; h <= max_head; ++h) {
            std::string cell = "-";
            for (const auto& c : g.cells)
                if (c.layer == l && c.head == h) cell = pct(c.test_f1);
            os << std::setw(8) << cell;
        }
        os << "\n";
    }
    return os.str();
}

ProbeGrid probe_layers(const RunConfig& config, const ProbeData& data, std::shared_ptr<encoder::Backend> backend,
                       char variant, models::Architecture aggregation, bool with_projection) {
    if (variant != 'D' && variant != 'O' && variant != 'P') throw PreconditionError("layer probes use variants D, O or P");
    if (aggregation == models::Architecture::LaMEL) throw PreconditionError("layer probes use LaMReD aggregation");
    ProbeGrid grid;
    grid.kind = std::string("layers/") + variant + "/" + models::to_string(aggregation) +
                (with_projection ? "/projection" : "/raw");
    const std::uint64_t seed = config.seeds.front();
    for (std::size_t layer = 0; layer <= backend->num_layers(); ++layer) {
        models::ModelConfig m = config.model;
        m.architecture = aggregation;
        m.variant = variant;
        m.layer = layer;
        m.use_projection = with_projection;
        m.train_backend = false;
        m.space = config.setup;
        m.seed = seed;
        models::RelationModel model(m, backend);
        const auto tr = train(config, model, data.train, data.dev, seed);
        const auto ev = evaluate(model, data.test, config.setup);
        grid.cells.push_back({layer, 0, tr.best_dev_f1, ev.f1.at(selection_metric(config))});
    }
    return grid;
}

std::string to_string(AttentionProbe m) {
    switch (m) {
    case AttentionProbe::PerLayer: return "per_layer";
    case AttentionProbe::PerHead: return "per_head";
    case AttentionProbe::AllLayers: return "all_layers";
    }
    return "per_head";
}

AttentionProbe attention_probe_from_string(const std::string& name) {
    for (auto m : {AttentionProbe::PerLayer, AttentionProbe::PerHead, AttentionProbe::AllLayers})
        if (to_string(m) == to_lower(name)) return m;
    throw ParseError("unknown attention probe mode: " + name);
}

std::vector<double> attention_features(const MarkedSequence& seq, const EncodedSequence& enc, std::size_t layer,
                                       std::size_t head) {
    if (layer < 1 || layer > enc.attentions.size() || head < 1 || head > enc.attentions[layer - 1].size())
        throw PreconditionError("attention cell out of range");
    const auto& a = enc.attentions[layer - 1][head - 1];
    // Attention mass on `cols`, averaged over `rows`.
    auto mass = [&](const encoder::TokenRange& rows, const encoder::TokenRange& cols) {
        double s = 0.0;
        for (std::size_t i = rows.begin; i < rows.end; ++i)
            for (std::size_t j = cols.begin; j < cols.end; ++j) s += a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        return s / static_cast<double>(rows.size());
    };
    return {mass(seq.e1_tokens, seq.e2_tokens), mass(seq.e2_tokens, seq.e1_tokens)};
}

LinearProbeResult train_linear_probe(const RunConfig& config, const std::vector<std::vector<double>>& train_x,
                                     const std::vector<Label>& train_y, const std::vector<std::vector<double>>& dev_x,
                                     const std::vector<Label>& dev_y, const std::vector<std::vector<double>>& test_x,
                                     const std::vector<Label>& test_y, std::uint64_t seed) {
    if (train_x.empty() || dev_x.empty() || test_x.empty()) throw PreconditionError("probe needs train, dev and test data");
    if (train_x.size() != train_y.size() || dev_x.size() != dev_y.size() || test_x.size() != test_y.size())
        throw PreconditionError("probe features and labels differ in length");
    const std::size_t f = train_x.front().size();
    const LabelSpace space = config.setup;
    const auto& cs = dataset::classes(space);
    const auto k = static_cast<Eigen::Index>(cs.size());

    // Standardize with training statistics.
    std::vector<double> mean(f, 0.0), scale(f, 0.0);
    for (const auto& row : train_x)
        for (std::size_t j = 0; j < f; ++j) mean[j] += row[j] / static_cast<double>(train_x.size());
    for (const auto& row : train_x)
        for (std::size_t j = 0; j < f; ++j) scale[j] += (row[j] - mean[j]) * (row[j] - mean[j]) / static_cast<double>(train_x.size());
    for (double& s : scale) s = s > 0.0 ? std::sqrt(s) : 1.0;
    const auto tx = standardize(train_x, mean, scale);
    const auto dx = standardize(dev_x, mean, scale);
    const auto sx = standardize(test_x, mean, scale);

    Parameter w(Eigen::MatrixXd::Zero(k, static_cast<Eigen::Index>(f)));
    Parameter b(Eigen::MatrixXd::Zero(k, 1));
    const ParameterRefs params{{"W", &w}, {"b", &b}};
    auto logits = [&](const std::vector<double>& x) {
        const Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
        return Eigen::VectorXd(w.value * v + b.value.col(0));
    };
    auto predict = [&](const std::vector<std::vector<double>>& xs) {
        std::vector<Label> out;
        for (const auto& x : xs) {
            Eigen::Index best = 0;
            logits(x).maxCoeff(&best);
            out.push_back(cs[static_cast<std::size_t>(best)]);
        }
        return out;
    };
    std::vector<std::size_t> train_class;
    for (Label l : train_y) train_class.push_back(dataset::class_index(l, space));
    auto project = [&](const std::vector<Label>& ys) {
        std::vector<Label> out;
        for (Label l : ys) out.push_back(space == LabelSpace::Binary ? dataset::project_binary(l) : l);
        return out;
    };
    const auto dev_gold = project(dev_y);
    const auto test_gold = project(test_y);

    Adam adam(config.learning_rate);
    Rng rng(derive(seed, 4));
    const F1Mode metric = selection_metric(config);
    LinearProbeResult best;
    Eigen::MatrixXd best_w, best_b;
    std::vector<std::size_t> idx(tx.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(idx);
        for (std::size_t start = 0; start < idx.size(); start += config.batch_size) {
            const std::size_t stop = std::min(idx.size(), start + config.batch_size);
            w.zero_grad();
            b.zero_grad();
            for (std::size_t q = start; q < stop; ++q) {
                const std::size_t i = idx[q];
                Eigen::VectorXd z = logits(tx[i]);
                z.array() -= z.maxCoeff();
                Eigen::VectorXd p = z.array().exp();
                p /= p.sum();
                p(static_cast<Eigen::Index>(train_class[i])) -= 1.0;
                const Eigen::Map<const Eigen::VectorXd> v(tx[i].data(), static_cast<Eigen::Index>(f));
                w.grad += p * v.transpose();
                b.grad.col(0) += p;
            }
            w.grad /= static_cast<double>(stop - start);
            b.grad /= static_cast<double>(stop - start);
            adam.step(params);
        }
        const double dev_f1 = dataset::f1_score(dev_gold, predict(dx), metric, space);
        if (epoch == 1 || dev_f1 > best.dev_f1) {
            best.dev_f1 = dev_f1;
            best_w = w.value;
            best_b = b.value;
        }
    }
    w.value = best_w;
    b.value = best_b;
    best.test_f1 = dataset::f1_score(test_gold, predict(sx), metric, space);
    return best;
}

ProbeGrid probe_attention(const RunConfig& config, const ProbeData& data, const encoder::Backend& backend,
                          AttentionProbe mode) {
    const std::size_t layers = backend.num_layers();
    const std::size_t heads = backend.num_heads();
    struct Encoded {
        std::vector<MarkedSequence> seqs;
        std::vector<EncodedSequence> encs;
        std::vector<Label> labels;
    };
    auto encode_all = [&](const std::vector<RelationInstance>& set) {
        dataset::check_label_space(set, config.setup);
        Encoded e;
        for (const auto& inst : set) {
            e.seqs.push_back(encoder::prepare_instance(backend, inst));
            e.encs.push_back(backend.encode(e.seqs.back()));
            e.labels.push_back(gold_label(inst, config.setup));
        }
        return e;
    };
    const Encoded tr = encode_all(data.train), dv = encode_all(data.dev), ts = encode_all(data.test);

    // Cells as (layer, head) lists; head 0 = all heads, layer 0 = all layers.
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    if (mode == AttentionProbe::PerHead)
        for (std::size_t l = 1; l <= layers; ++l)
            for (std::size_t h = 1; h <= heads; ++h) cells.emplace_back(l, h);
    else if (mode == AttentionProbe::PerLayer)
        for (std::size_t l = 1; l <= layers; ++l) cells.emplace_back(l, 0);
    else
        cells.emplace_back(0, 0);

    auto features = [&](const Encoded& e, std::size_t layer, std::size_t head) {
        std::vector<std::vector<double>> x;
        for (std::size_t i = 0; i < e.seqs.size(); ++i) {
            std::vector<double> row;
            for (std::size_t l = 1; l <= layers; ++l) {
                if (layer != 0 && l != layer) continue;
                for (std::size_t h = 1; h <= heads; ++h) {
                    if (head != 0 && h != head) continue;
                    const auto f = attention_features(e.seqs[i], e.encs[i], l, h);
                    row.insert(row.end(), f.begin(), f.end());
                }
            }
            x.push_back(std::move(row));
        }
        return x;
    };

    ProbeGrid grid;
    grid.kind = "attention/" + to_string(mode);
    for (const auto& [l, h] : cells) {
        const auto r = train_linear_probe(config, features(tr, l, h), tr.labels, features(dv, l, h), dv.labels,
                                          features(ts, l, h), ts.labels, config.seeds.front());
        grid.cells.push_back({l, h, r.dev_f1, r.test_f1});
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Synthetic data

std::vector<RelationInstance> synthetic_instances(std::size_t n, std::uint64_t seed) {
    static const std::vector<std::string> words{
        "the",      "patients", "showed",  "levels",    "of",        "in",       "with",     "and",
        "increased", "reduced", "treatment", "response", "cells",    "expression", "after",  "during",
        "study",    "cohort",   "risk",    "associated", "observed", "significant", "dose",  "onset",
        "severe",   "mild",     "clinical", "trial",     "group",     "compared", "baseline", "markers",
        "signal",   "pathway",  "tissue",  "samples",   "mice",      "model",    "effect",   "analysis"};
    static const std::vector<std::string> entities{
        "aspirin",   "MECP2",     "Rett syndrome", "amyloid",   "tau protein", "insulin",   "metformin",
        "diabetes",  "dopamine",  "APOE",          "lithium",   "seizures",    "serotonin", "BDNF",
        "ibuprofen", "hepatitis", "TNF alpha",     "valproate", "autism",      "obesity"};
    Rng rng(seed);
    std::vector<RelationInstance> out;
    std::set<std::string> seen;
    for (std::size_t i = 0; out.size() < n; ++i) {
        const std::size_t len = 6 + rng.below(7);
        std::vector<std::string> toks;
        for (std::size_t t = 0; t < len; ++t) toks.push_back(words[rng.below(words.size())]);
        std::size_t p1 = rng.below(len - 1);
        std::size_t p2 = p1 + 1 + rng.below(len - p1 - 1);
        const std::size_t a = rng.below(entities.size());
        std::size_t b = rng.below(entities.size() - 1);
        if (b >= a) ++b;
        toks[p1] = entities[a];
        toks[p2] = entities[b];
        std::string text;
        mentions::Span s1, s2;
        for (std::size_t t = 0; t < toks.size(); ++t) {
            if (t) text += ' ';
            if (t == p1) s1.start = text.size();
            if (t == p2) s2.start = text.size();
            text += toks[t];
            if (t == p1) s1.end = text.size();
            if (t == p2) s2.end = text.size();
        }
        text += '.';
        if (!seen.insert(text).second) continue;
        RelationInstance inst;
        inst.sentence_id = "syn-" + std::to_string(out.size());
        inst.text = text;
        inst.instance_id = dataset::make_instance_id(inst.sentence_id, s1, s2);
        inst.entity1 = {inst.sentence_id, s1, entities[a], "CS" + std::to_string(a), "Pharmacologic Substance",
                        mentions::Linker::UMLS, {}};
        inst.entity2 = {inst.sentence_id, s2, entities[b], "CS" + std::to_string(b), "Disease or Syndrome",
                        mentions::Linker::UMLS, {}};
        out.push_back(std::move(inst));
    }
    return out;
}

} // namespace redkit::experiments
