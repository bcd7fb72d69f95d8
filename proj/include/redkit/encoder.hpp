#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "redkit/dataset.hpp"
#include "redkit/mentions.hpp"
#include "redkit/optim.hpp"

namespace redkit::encoder {

inline constexpr const char* kEntStart = "[ent]";
inline constexpr const char* kEntEnd = "[/ent]";
inline constexpr const char* kCls = "[CLS]";
inline constexpr const char* kSep = "[SEP]";

/// Half-open token index range.
struct TokenRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    bool empty() const { return begin >= end; }
    std::size_t size() const { return empty() ? 0 : end - begin; }
    bool operator==(const TokenRange&) const = default;
};

/// Text with the four entity markers inserted, plus the entity spans inside it.
struct MarkedText {
    std::string text;
    mentions::Span entity1;  // span of the entity surface within `text`
    mentions::Span entity2;
};

/// Inserts "[ent] " before and " [/ent]" after each entity. Spans must not
/// overlap; entity 1 is the leftmost.
MarkedText insert_markers(std::string_view text, const mentions::Span& e1, const mentions::Span& e2);
/// Inverse of insert_markers.
std::string strip_markers(std::string_view marked);

struct MarkedSequence {
    std::vector<std::string> tokens;
    std::size_t e1_start = 0, e1_end = 0;  // marker positions
    std::size_t e2_start = 0, e2_end = 0;
    TokenRange e1_tokens;
    TokenRange e2_tokens;
    TokenRange inter;  // strictly between e1's [/ent] and e2's [ent]
    std::size_t cls_index = 0;
};

/// Lower-cased word/punctuation tokenizer with [CLS]/[SEP] framing. Decoder
/// style omits [CLS] and uses the final token as the sequence token. Sequences
/// longer than `max_length` lose tokens from the right; losing a marker is an error.
MarkedSequence tokenize(std::string_view text, const mentions::Span& e1, const mentions::Span& e2,
                        std::size_t max_length, bool decoder_style = false);
std::vector<std::string> word_tokens(std::string_view text);

struct EncodedSequence {
    std::vector<Eigen::MatrixXd> layers;                   // L+1 arrays of T x d
    std::vector<std::vector<Eigen::MatrixXd>> attentions;  // L x H arrays of T x T, rows sum to 1
    std::size_t d = 0, num_layers = 0, num_heads = 0;

    std::size_t length() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().rows()); }
    const Eigen::MatrixXd& last() const { return layers.back(); }
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string name() const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::size_t num_layers() const = 0;
    virtual std::size_t num_heads() const = 0;
    virtual std::size_t max_length() const = 0;
    virtual bool decoder_style() const { return false; }

    virtual MarkedSequence prepare(const std::string& text, const mentions::Span& e1, const mentions::Span& e2) const {
        return tokenize(text, e1, e2, max_length(), decoder_style());
    }
    virtual EncodedSequence encode(const MarkedSequence& seq) const = 0;

    /// Trainable backend parameters (empty for frozen backends).
    virtual ParameterRefs parameters() { return {}; }
    /// Accumulates parameter gradients given dLoss/d(layers[layer]).
    virtual void backward(const MarkedSequence&, const EncodedSequence&, std::size_t /*layer*/,
                          const Eigen::MatrixXd& /*grad*/) {}
    virtual json state() const { return json::object(); }
    virtual void load_state(const json&) {}
};

/// Prepares the marked sequence of a relation instance.
MarkedSequence prepare_instance(const Backend& backend, const dataset::RelationInstance& instance);

/// Deterministic stand-in for a transformer encoder. Token vectors come from
/// a hashed vocabulary table plus position vectors; each layer adds a
/// head-averaged attention mix, h_l = h_{l-1} + (1/H) sum_h A_lh h_{l-1} W_lh,
/// where A_lh depends only on token identities and positions. Output depends
/// only on the token sequence and the two trainable marker embeddings.
class MockBackend : public Backend {
public:
    struct Options {
        std::size_t d = 16;
        std::size_t layers = 4;
        std::size_t heads = 2;
        std::uint64_t seed = 0;
        std::size_t max_length = 128;
        bool decoder_style = false;
        bool train_markers = true;
        /// Sharpness of the attention logits.
        double attention_temperature = 3.0;
    };

    static constexpr std::size_t kVocab = 4096;
    static constexpr std::size_t kKeyDim = 8;

    explicit MockBackend(Options options);
    MockBackend() : MockBackend(Options{}) {}

    std::string name() const override { return "mock"; }
    std::size_t dim() const override { return opt_.d; }
    std::size_t num_layers() const override { return opt_.layers; }
    std::size_t num_heads() const override { return opt_.heads; }
    std::size_t max_length() const override { return opt_.max_length; }
    bool decoder_style() const override { return opt_.decoder_style; }
    const Options& options() const { return opt_; }

    EncodedSequence encode(const MarkedSequence& seq) const override;
    ParameterRefs parameters() override;
    void backward(const MarkedSequence& seq, const EncodedSequence& enc, std::size_t layer,
                  const Eigen::MatrixXd& grad) override;
    json state() const override;
    void load_state(const json& j) override;

    /// Gradients accumulated for [ent] and [/ent] (1 x d each).
    const Parameter& marker(bool start) const { return start ? ent_start_ : ent_end_; }

private:
    Eigen::RowVectorXd token_vector(const std::string& token) const;
    Eigen::RowVectorXd hashed_row(std::uint64_t key, std::size_t n, double scale) const;

    Options opt_;
    Eigen::MatrixXd vocab_;                         // kVocab x d
    std::vector<std::vector<Eigen::MatrixXd>> w_;   // L x H of d x d
    Parameter ent_start_;
    Parameter ent_end_;
};

/// Wraps a backend and plants label information for probing tests: layer
/// `signal_layer` vectors are shifted by +/-strength * u according to the
/// binary label, and at attention cell (attention_layer, attention_head)
/// (1-based) entity-1 rows move 80% of their mass onto entity-2 tokens when
/// related, onto the other tokens otherwise. Labels are looked up by token sequence.
class PlantedSignalBackend : public Backend {
public:
    struct Options {
        std::size_t signal_layer = 2;
        std::size_t attention_layer = 3;
        std::size_t attention_head = 1;
        double strength = 10.0;
        std::uint64_t seed = 1;
    };

    PlantedSignalBackend(std::shared_ptr<const Backend> inner, std::map<std::string, bool> related_by_key, Options options);
    PlantedSignalBackend(std::shared_ptr<const Backend> inner, std::map<std::string, bool> related_by_key)
        : PlantedSignalBackend(std::move(inner), std::move(related_by_key), Options{}) {}

    static std::string key(const MarkedSequence& seq);

    std::string name() const override { return "planted"; }
    std::size_t dim() const override { return inner_->dim(); }
    std::size_t num_layers() const override { return inner_->num_layers(); }
    std::size_t num_heads() const override { return inner_->num_heads(); }
    std::size_t max_length() const override { return inner_->max_length(); }
    bool decoder_style() const override { return inner_->decoder_style(); }
    MarkedSequence prepare(const std::string& text, const mentions::Span& e1, const mentions::Span& e2) const override {
        return inner_->prepare(text, e1, e2);
    }
    EncodedSequence encode(const MarkedSequence& seq) const override;

private:
    std::shared_ptr<const Backend> inner_;
    std::map<std::string, bool> related_;
    Options opt_;
    Eigen::RowVectorXd direction_;
};

/// Explicit index-order mean over rows [r.begin, r.end) of `layer`.
Eigen::VectorXd mean_pool(const Eigen::MatrixXd& layer, const TokenRange& r);

using BackendFactory = std::function<std::unique_ptr<Backend>(const json& config)>;

class BackendRegistry {
public:
    /// Pre-populated with "mock".
    static BackendRegistry& global();
    void add(const std::string& name, BackendFactory factory);
    bool has(const std::string& name) const { return factories_.count(name) > 0; }
    std::unique_ptr<Backend> create(const json& config) const;

private:
    std::map<std::string, BackendFactory> factories_;
};

MockBackend::Options mock_options_from_json(const json& j);
json to_json(const MockBackend::Options& o);

} // namespace redkit::encoder
