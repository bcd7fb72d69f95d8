#include "redkit/encoder.hpp"

#include <cctype>
#include <cmath>

namespace redkit::encoder {

namespace {

constexpr std::string_view kStartInsert = "[ent] ";
constexpr std::string_view kEndInsert = " [/ent]";

std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t state = 0x9e3779b97f4a7c15ULL;
    std::uint64_t out = 0;
    for (auto p : parts) {
        state ^= p + 0x632be59bd9b4e5b9ULL + (state << 6) + (state >> 2);
        out = splitmix64(state);
    }
    return out;
}

double unit_uniform(std::uint64_t& state) {
    // Uniform in [-1, 1).
    return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-52 - 1.0;
}

std::uint64_t token_id(const std::string& token) { return fnv1a64(token) % MockBackend::kVocab; }

} // namespace

MarkedText insert_markers(std::string_view text, const mentions::Span& e1, const mentions::Span& e2) {
    if (!(e1.start < e1.end && e1.end <= e2.start && e2.start < e2.end && e2.end <= text.size()))
        throw PreconditionError("entity spans must be non-empty, ordered, disjoint and inside the text");
    MarkedText out;
    out.text.append(text.substr(0, e1.start));
    out.text.append(kStartInsert);
    out.entity1.start = out.text.size();
    out.text.append(text.substr(e1.start, e1.end - e1.start));
    out.entity1.end = out.text.size();
    out.text.append(kEndInsert);
    out.text.append(text.substr(e1.end, e2.start - e1.end));
    out.text.append(kStartInsert);
    out.entity2.start = out.text.size();
    out.text.append(text.substr(e2.start, e2.end - e2.start));
    out.entity2.end = out.text.size();
    out.text.append(kEndInsert);
    out.text.append(text.substr(e2.end));
    return out;
}

std::string strip_markers(std::string_view marked) {
    std::string out;
    std::size_t i = 0;
    while (i < marked.size()) {
        if (marked.substr(i, kStartInsert.size()) == kStartInsert) {
            i += kStartInsert.size();
        } else if (marked.substr(i, kEndInsert.size()) == kEndInsert) {
            i += kEndInsert.size();
        } else {
            out.push_back(marked[i++]);
        }
    }
    return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
            out.emplace_back(1, ch);
        }
    }
    flush();
    return out;
}

MarkedSequence tokenize(std::string_view text, const mentions::Span& e1, const mentions::Span& e2,
                        std::size_t max_length, bool decoder_style) {
    if (!(e1.start < e1.end && e1.end <= e2.start && e2.start < e2.end && e2.end <= text.size()))
        throw PreconditionError("entity spans must be non-empty, ordered, disjoint and inside the text");
    MarkedSequence seq;
    auto& t = seq.tokens;
    auto append = [&](std::string_view piece) {
        for (auto& w : word_tokens(piece)) t.push_back(std::move(w));
    };
    if (!decoder_style) t.emplace_back(kCls);
    append(text.substr(0, e1.start));
    seq.e1_start = t.size();
    t.emplace_back(kEntStart);
    append(text.substr(e1.start, e1.end - e1.start));
    seq.e1_end = t.size();
    t.emplace_back(kEntEnd);
    append(text.substr(e1.end, e2.start - e1.end));
    seq.e2_start = t.size();
    t.emplace_back(kEntStart);
    append(text.substr(e2.start, e2.end - e2.start));
    seq.e2_end = t.size();
    t.emplace_back(kEntEnd);
    append(text.substr(e2.end));
    t.emplace_back(kSep);

    if (seq.e1_end == seq.e1_start + 1 || seq.e2_end == seq.e2_start + 1)
        throw PreconditionError("entity surface produced no tokens");
    if (max_length < 2) throw PreconditionError("max_length must be at least 2");
    if (t.size() > max_length) {
        if (seq.e2_end >= max_length - 1) throw PreconditionError("truncation to max_length would drop an entity marker");
        t.resize(max_length - 1);
        t.emplace_back(kSep);
    }
    seq.e1_tokens = {seq.e1_start + 1, seq.e1_end};
    seq.e2_tokens = {seq.e2_start + 1, seq.e2_end};
    seq.inter = {seq.e1_end + 1, seq.e2_start};
    seq.cls_index = decoder_style ? t.size() - 1 : 0;
    return seq;
}

MarkedSequence prepare_instance(const Backend& backend, const dataset::RelationInstance& instance) {
    return backend.prepare(instance.text, instance.entity1.span, instance.entity2.span);
}

Eigen::VectorXd mean_pool(const Eigen::MatrixXd& layer, const TokenRange& r) {
    if (r.empty() || r.end > static_cast<std::size_t>(layer.rows()))
        throw PreconditionError("mean_pool over an empty or out-of-range token range");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(layer.cols());
    for (std::size_t i = r.begin; i < r.end; ++i) sum += layer.row(static_cast<Eigen::Index>(i)).transpose();
    return sum / static_cast<double>(r.size());
}

// ---------------------------------------------------------------------------
// MockBackend

MockBackend::MockBackend(Options options) : opt_(options) {
    if (opt_.d == 0 || opt_.layers == 0 || opt_.heads == 0) throw PreconditionError("mock backend dimensions must be positive");
    vocab_.resize(static_cast<Eigen::Index>(kVocab), static_cast<Eigen::Index>(opt_.d));
    for (std::size_t v = 0; v < kVocab; ++v) vocab_.row(static_cast<Eigen::Index>(v)) = hashed_row(mix({opt_.seed, 1, v}), opt_.d, 1.0);
    const double wscale = 0.5 / std::sqrt(static_cast<double>(opt_.d));
    w_.assign(opt_.layers, std::vector<Eigen::MatrixXd>(opt_.heads));
    for (std::size_t l = 0; l < opt_.layers; ++l)
        for (std::size_t h = 0; h < opt_.heads; ++h) {
            auto& w = w_[l][h];
            w.resize(static_cast<Eigen::Index>(opt_.d), static_cast<Eigen::Index>(opt_.d));
            for (std::size_t r = 0; r < opt_.d; ++r)
                w.row(static_cast<Eigen::Index>(r)) = hashed_row(mix({opt_.seed, 2, l, h, r}), opt_.d, wscale);
        }
    const Eigen::RowVectorXd mean = vocab_.colwise().mean();
    ent_start_ = Parameter(Eigen::MatrixXd(mean));
    ent_end_ = Parameter(Eigen::MatrixXd(mean));
}

Eigen::RowVectorXd MockBackend::hashed_row(std::uint64_t key, std::size_t n, double scale) const {
    Eigen::RowVectorXd row(static_cast<Eigen::Index>(n));
    std::uint64_t state = key;
    for (std::size_t i = 0; i < n; ++i) row(static_cast<Eigen::Index>(i)) = scale * unit_uniform(state);
    return row;
}

Eigen::RowVectorXd MockBackend::token_vector(const std::string& token) const {
    if (token == kEntStart) return ent_start_.value.row(0);
    if (token == kEntEnd) return ent_end_.value.row(0);
    return vocab_.row(static_cast<Eigen::Index>(token_id(token)));
}

EncodedSequence MockBackend::encode(const MarkedSequence& seq) const {
    const auto T = static_cast<Eigen::Index>(seq.tokens.size());
    if (T == 0) throw PreconditionError("cannot encode an empty sequence");
    const auto d = static_cast<Eigen::Index>(opt_.d);
    EncodedSequence enc;
    enc.d = opt_.d;
    enc.num_layers = opt_.layers;
    enc.num_heads = opt_.heads;

    Eigen::MatrixXd h0(T, d);
    for (Eigen::Index p = 0; p < T; ++p)
        h0.row(p) = token_vector(seq.tokens[static_cast<std::size_t>(p)]) +
                    hashed_row(mix({opt_.seed, 3, static_cast<std::uint64_t>(p)}), opt_.d, 0.5);
    enc.layers.push_back(std::move(h0));

    std::vector<std::uint64_t> ids(static_cast<std::size_t>(T));
    for (std::size_t p = 0; p < ids.size(); ++p) ids[p] = fnv1a64(seq.tokens[p]);
    const double logit_scale = opt_.attention_temperature / std::sqrt(static_cast<double>(kKeyDim));
    const double inv_heads = 1.0 / static_cast<double>(opt_.heads);

    for (std::size_t l = 0; l < opt_.layers; ++l) {
        const Eigen::MatrixXd& prev = enc.layers.back();
        Eigen::MatrixXd next = prev;
        std::vector<Eigen::MatrixXd> heads;
        for (std::size_t h = 0; h < opt_.heads; ++h) {
            Eigen::MatrixXd q(T, static_cast<Eigen::Index>(kKeyDim)), k(T, static_cast<Eigen::Index>(kKeyDim));
            for (Eigen::Index p = 0; p < T; ++p) {
                const auto up = static_cast<std::uint64_t>(p);
                const auto id = ids[static_cast<std::size_t>(p)];
                q.row(p) = hashed_row(mix({opt_.seed, 4, l, h, id}), kKeyDim, 1.0) +
                           0.5 * hashed_row(mix({opt_.seed, 5, l, h, up}), kKeyDim, 1.0);
                k.row(p) = hashed_row(mix({opt_.seed, 6, l, h, id}), kKeyDim, 1.0) +
                           0.5 * hashed_row(mix({opt_.seed, 7, l, h, up}), kKeyDim, 1.0);
            }
            Eigen::MatrixXd a = logit_scale * (q * k.transpose());
            for (Eigen::Index i = 0; i < T; ++i) {
                const Eigen::Index visible = opt_.decoder_style ? i + 1 : T;
                const double mx = a.row(i).head(visible).maxCoeff();
                double z = 0.0;
                for (Eigen::Index j = 0; j < T; ++j) {
                    a(i, j) = j < visible ? std::exp(a(i, j) - mx) : 0.0;
                    z += a(i, j);
                }
                a.row(i) /= z;
            }
            next += inv_heads * (a * prev * w_[l][h]);
            heads.push_back(std::move(a));
        }
        enc.attentions.push_back(std::move(heads));
        enc.layers.push_back(std::move(next));
    }
    return enc;
}

ParameterRefs MockBackend::parameters() {
    if (!opt_.train_markers) return {};
    return {{"backend.ent_start", &ent_start_}, {"backend.ent_end", &ent_end_}};
}

void MockBackend::backward(const MarkedSequence& seq, const EncodedSequence& enc, std::size_t layer,
                           const Eigen::MatrixXd& grad) {
    if (!opt_.train_markers) return;
    if (layer > opt_.layers) throw PreconditionError("backward layer out of range");
    const double inv_heads = 1.0 / static_cast<double>(opt_.heads);
    Eigen::MatrixXd g = grad;
    for (std::size_t l = layer; l-- > 0;) {
        Eigen::MatrixXd prev = g;
        for (std::size_t h = 0; h < opt_.heads; ++h)
            prev += inv_heads * (enc.attentions[l][h].transpose() * g * w_[l][h].transpose());
        g = std::move(prev);
    }
    for (std::size_t p = 0; p < seq.tokens.size(); ++p) {
        if (seq.tokens[p] == kEntStart) ent_start_.grad.row(0) += g.row(static_cast<Eigen::Index>(p));
        else if (seq.tokens[p] == kEntEnd) ent_end_.grad.row(0) += g.row(static_cast<Eigen::Index>(p));
    }
}

json MockBackend::state() const {
    return {{"options", to_json(opt_)},
            {"ent_start", matrix_to_json(ent_start_.value)},
            {"ent_end", matrix_to_json(ent_end_.value)}};
}

void MockBackend::load_state(const json& j) {
    auto s = matrix_from_json(j.at("ent_start"));
    auto e = matrix_from_json(j.at("ent_end"));
    if (s.rows() != 1 || s.cols() != static_cast<Eigen::Index>(opt_.d) || e.rows() != 1 ||
        e.cols() != static_cast<Eigen::Index>(opt_.d))
        throw ParseError("marker embedding shape does not match the backend");
    ent_start_ = Parameter(std::move(s));
    ent_end_ = Parameter(std::move(e));
}

MockBackend::Options mock_options_from_json(const json& j) {
    MockBackend::Options o;
    o.d = j.value("d", o.d);
    o.layers = j.value("layers", o.layers);
    o.heads = j.value("heads", o.heads);
    o.seed = j.value("seed", o.seed);
    o.max_length = j.value("max_length", o.max_length);
    o.decoder_style = j.value("decoder_style", o.decoder_style);
    o.train_markers = j.value("train_markers", o.train_markers);
    o.attention_temperature = j.value("attention_temperature", o.attention_temperature);
    return o;
}

json to_json(const MockBackend::Options& o) {
    return {{"name", "mock"},
            {"d", o.d},
            {"layers", o.layers},
            {"heads", o.heads},
            {"seed", o.seed},
            {"max_length", o.max_length},
            {"decoder_style", o.decoder_style},
            {"train_markers", o.train_markers},
            {"attention_temperature", o.attention_temperature}};
}

// ---------------------------------------------------------------------------
// PlantedSignalBackend

PlantedSignalBackend::PlantedSignalBackend(std::shared_ptr<const Backend> inner, std::map<std::string, bool> related_by_key,
                                           Options options)
    : inner_(std::move(inner)), related_(std::move(related_by_key)), opt_(options) {
    if (!inner_) throw PreconditionError("planted backend needs an inner backend");
    if (opt_.signal_layer > inner_->num_layers()) throw PreconditionError("signal layer out of range");
    if (opt_.attention_layer < 1 || opt_.attention_layer > inner_->num_layers() || opt_.attention_head < 1 ||
        opt_.attention_head > inner_->num_heads())
        throw PreconditionError("attention cell out of range");
    const auto d = static_cast<Eigen::Index>(inner_->dim());
    direction_.resize(d);
    std::uint64_t state = mix({opt_.seed, 11});
    for (Eigen::Index i = 0; i < d; ++i) direction_(i) = unit_uniform(state);
    direction_.normalize();
}

std::string PlantedSignalBackend::key(const MarkedSequence& seq) {
    std::string k;
    for (const auto& t : seq.tokens) {
        if (!k.empty()) k.push_back(' ');
        k += t;
    }
    return k;
}

EncodedSequence PlantedSignalBackend::encode(const MarkedSequence& seq) const {
    EncodedSequence enc = inner_->encode(seq);
    const auto it = related_.find(key(seq));
    if (it == related_.end()) throw PreconditionError("planted backend has no label for sequence: " + key(seq));
    const bool related = it->second;

    auto& layer = enc.layers[opt_.signal_layer];
    const Eigen::RowVectorXd shift = (related ? opt_.strength : -opt_.strength) * direction_;
    layer.rowwise() += shift;

    auto& a = enc.attentions[opt_.attention_layer - 1][opt_.attention_head - 1];
    const auto T = a.cols();
    Eigen::RowVectorXd target = Eigen::RowVectorXd::Zero(T);
    for (Eigen::Index j = 0; j < T; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        const bool in_e2 = uj >= seq.e2_tokens.begin && uj < seq.e2_tokens.end;
        if (in_e2 == related) target(j) = 1.0;
    }
    target /= target.sum();
    for (std::size_t i = seq.e1_tokens.begin; i < seq.e1_tokens.end; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        a.row(r) = 0.2 * a.row(r) + 0.8 * target;
    }
    return enc;
}

// ---------------------------------------------------------------------------
// Registry

BackendRegistry& BackendRegistry::global() {
    static BackendRegistry registry = [] {
        BackendRegistry r;
        r.add("mock", [](const json& config) { return std::make_unique<MockBackend>(mock_options_from_json(config)); });
        return r;
    }();
    return registry;
}

void BackendRegistry::add(const std::string& name, BackendFactory factory) { factories_[name] = std::move(factory); }

std::unique_ptr<Backend> BackendRegistry::create(const json& config) const {
    const std::string name = config.value("name", std::string("mock"));
    const auto it = factories_.find(name);
    if (it == factories_.end()) throw PreconditionError("unknown encoder backend: " + name);
    return it->second(config);
}

} // namespace redkit::encoder
