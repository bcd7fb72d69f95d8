#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "redkit/dataset.hpp"
#include "redkit/encoder.hpp"
#include "redkit/optim.hpp"

namespace redkit::models {

/// Constituents a relation representation can be built from. S = [ent] marker,
/// E = [/ent] marker, P = mean of the entity tokens, INTER = mean of the tokens
/// between the two entities, CONTEXT = attention-weighted context vector.
enum class Role { CLS, S1, E1, P1, S2, E2, P2, INTER, CONTEXT };

std::string to_string(Role role);

/// LaMReD-A sums the projected constituents, LaMReD-M multiplies them
/// element-wise, LaMEL compares two entity representations by cosine.
enum class Architecture { LaMReDA, LaMReDM, LaMEL };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& name);

/// Constituents of LaMReD variant 'A'..'P'.
const std::vector<Role>& lamred_roles(char variant);
/// Valid variant letters for an architecture.
std::string variants(Architecture a);

enum class ContextMode {
    EntityTokens,  // attention rows of the entity tokens, averaged per entity
    Markers,       // attention rows of each entity's [ent] marker
};

struct ContextWeights {
    Eigen::VectorXd distribution;  // over tokens, sums to 1
    bool uniform_fallback = false;  // the entity attention product was all zero
};

/// Per head, averages the last-layer attention rows of each entity, multiplies
/// the two entity vectors element-wise, averages over heads and normalizes.
ContextWeights context_weights(const encoder::MarkedSequence& seq, const encoder::EncodedSequence& enc,
                               ContextMode mode = ContextMode::EntityTokens);

/// Sparse linear map from token rows to a constituent vector.
using TokenWeights = std::vector<std::pair<std::size_t, double>>;

/// Token weights of a constituent; empty for an empty INTER range.
TokenWeights constituent_weights(Role role, const encoder::MarkedSequence& seq, const ContextWeights& context);
Eigen::VectorXd apply_weights(const Eigen::MatrixXd& layer, const TokenWeights& w);
/// Constituent vector from `layer`: marker and [CLS] rows, index-order means
/// (sum, then divide) for P and INTER, weighted sum for CONTEXT.
Eigen::VectorXd constituent_vector(Role role, const encoder::MarkedSequence& seq, const ContextWeights& context,
                                   const Eigen::MatrixXd& layer);

/// Representation of entity `which` (1 or 2) for LaMEL variant 'A'..'H'.
/// Variants E-H multiply by the INTER mean; an empty INTER range contributes ones.
Eigen::VectorXd entity_representation(char variant, int which, const encoder::MarkedSequence& seq,
                                      const Eigen::MatrixXd& layer);

struct ModelConfig {
    Architecture architecture = Architecture::LaMReDA;
    /// LaMReD constituent set 'A'..'P' or LaMEL entity variant 'A'..'H'.
    char variant = 'I';
    dataset::LabelSpace space = dataset::LabelSpace::Binary;
    /// Tie the projections of corresponding entity-1/entity-2 constituents.
    bool shared_projection = false;
    /// Without projection the constituents are aggregated as they are.
    bool use_projection = true;
    /// Projection width; 0 means the input width (d, or 2d for LaMEL variant C).
    std::size_t hidden = 0;
    double dropout = 0.3;
    double margin = 0.0;
    double threshold = 0.5;
    ContextMode context_mode = ContextMode::EntityTokens;
    /// Layer the token vectors are read from; unset means the last layer.
    std::optional<std::size_t> layer;
    bool train_backend = true;
    std::uint64_t seed = 42;
};

/// Also accepts the keys family (LAMEL|LAMREDA|LAMREDM), aggregation (ADD|MUL,
/// must agree with the family) and num_classes (2|4).
json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& j);

/// Representation before the classifier (LaMReD) or the similarity (LaMEL),
/// computed without dropout.
struct Representation {
    Eigen::VectorXd relation;  // LaMReD aggregate
    Eigen::VectorXd entity1;   // LaMEL projected entity vectors
    Eigen::VectorXd entity2;
    bool inter_fallback = false;
    bool context_fallback = false;
};

struct Prediction {
    dataset::Label label = dataset::Label::Unlabeled;
    /// One score per class of the label space; argmax is the predicted label.
    /// LaMReD: softmax probabilities. LaMEL: cos - threshold and threshold - cos.
    Eigen::VectorXd scores;
    /// LaMEL cosine similarity; unset for LaMReD.
    std::optional<double> cosine;
    bool inter_fallback = false;
    bool context_fallback = false;
};

class ModelError : public Error {
public:
    using Error::Error;
};

class RelationModel {
public:
    RelationModel(ModelConfig config, std::shared_ptr<encoder::Backend> backend);

    const ModelConfig& config() const { return config_; }
    encoder::Backend& backend() { return *backend_; }
    const encoder::Backend& backend() const { return *backend_; }
    std::vector<dataset::Label> classes() const { return dataset::classes(config_.space); }

    /// Per-class loss weights in class order; defaults to ones.
    void set_class_weights(std::vector<double> weights);

    /// `cached` may hold the backend encoding of `seq`; it must be current,
    /// so only pass it while backend parameters are not being trained.
    Prediction predict(const encoder::MarkedSequence& seq, const encoder::EncodedSequence* cached = nullptr) const;
    Representation represent(const encoder::MarkedSequence& seq) const;
    /// Forward and backward for one example; gradients accumulate into parameters().
    /// `dropout_rng` enables dropout. Returns the (weighted) loss.
    double accumulate(const encoder::MarkedSequence& seq, dataset::Label gold, Rng* dropout_rng,
                      const encoder::EncodedSequence* cached = nullptr);
    /// Loss only, without dropout or gradients.
    double loss(const encoder::MarkedSequence& seq, dataset::Label gold) const;
    /// True when training updates backend parameters.
    bool trains_backend() const { return config_.train_backend && !backend_->parameters().empty(); }

    /// Head parameters, plus backend parameters when the backend is trained.
    ParameterRefs parameters();
    void zero_grad();
    /// Head parameter by name, e.g. "W.S1", "b.S1", "C", "c", "W.1".
    Parameter& head_parameter(const std::string& name);
    std::size_t hidden() const { return hidden_; }

    json checkpoint() const;
    static RelationModel from_checkpoint(const json& j, std::shared_ptr<encoder::Backend> backend);
    /// Restores parameters (and backend state) from a checkpoint of this model's shape.
    void load_checkpoint(const json& j);

private:
    struct Tape;
    Tape forward(const encoder::MarkedSequence& seq, Rng* dropout_rng, const encoder::EncodedSequence* cached = nullptr) const;
    double backward(Tape& tape, dataset::Label gold);
    double loss_of(const Tape& tape, dataset::Label gold) const;
    Prediction to_prediction(const Tape& tape) const;
    std::string projection_key(Role role) const;
    std::size_t layer_index() const;

    ModelConfig config_;
    std::shared_ptr<encoder::Backend> backend_;
    std::size_t hidden_ = 0;
    std::map<std::string, Parameter> params_;
    std::vector<double> class_weights_;
};

/// Inverted dropout mask: entries are 0 with probability p, else 1/(1-p).
/// A null rng or p = 0 gives ones.
Eigen::VectorXd dropout_mask(Eigen::Index n, double p, Rng* rng);

/// Cosine with each norm clamped below at 1e-12.
double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v);
/// y = +1: 1 - cos; y = -1: max(0, cos - margin). margin must lie in [0, 1).
double cosine_embedding_loss(double cos, int y, double margin);

} // namespace redkit::models
