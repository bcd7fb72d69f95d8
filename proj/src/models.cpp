#include "redkit/models.hpp"

#include <cmath>

namespace redkit::models {

using dataset::Label;
using encoder::EncodedSequence;
using encoder::MarkedSequence;
using encoder::TokenRange;

namespace {

constexpr double kNormEps = 1e-12;
constexpr int kCheckpointVersion = 1;

const std::map<char, std::vector<Role>>& lamred_table() {
    using R = Role;
    static const std::map<char, std::vector<Role>> table{
        {'A', {R::S1, R::S2}},
        {'B', {R::E1, R::E2}},
        {'C', {R::S1, R::E1, R::S2, R::E2}},
        {'D', {R::P1, R::P2}},
        {'E', {R::INTER}},
        {'F', {R::CLS, R::P1, R::P2}},
        {'G', {R::CLS, R::S1, R::S2}},
        {'H', {R::CLS, R::E1, R::E2}},
        {'I', {R::CLS, R::S1, R::E1, R::S2, R::E2}},
        {'J', {R::CLS, R::INTER}},
        {'K', {R::S1, R::INTER, R::S2}},
        {'L', {R::E1, R::INTER, R::E2}},
        {'M', {R::S1, R::E1, R::INTER, R::S2, R::E2}},
        {'N', {R::P1, R::INTER, R::P2}},
        {'O', {R::CONTEXT}},
        {'P', {R::P1, R::P2, R::CONTEXT}},
    };
    return table;
}

TokenWeights mean_weights(const TokenRange& r) {
    TokenWeights w;
    for (std::size_t t = r.begin; t < r.end; ++t) w.emplace_back(t, 1.0 / static_cast<double>(r.size()));
    return w;
}

Eigen::VectorXd row_mean(const Eigen::MatrixXd& a, const TokenRange& r) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(a.cols());
    for (std::size_t i = r.begin; i < r.end; ++i) v += a.row(static_cast<Eigen::Index>(i)).transpose();
    return v / static_cast<double>(r.size());
}

Eigen::MatrixXd xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
    return m;
}

struct EntityParts {
    std::size_t start = 0, end = 0;
    TokenRange tokens;
    TokenRange inter;
    Eigen::VectorXd s, e, p, i;  // i is ones when inter is empty
};

EntityParts entity_parts(int which, const MarkedSequence& seq, const Eigen::MatrixXd& layer) {
    EntityParts parts;
    parts.start = which == 1 ? seq.e1_start : seq.e2_start;
    parts.end = which == 1 ? seq.e1_end : seq.e2_end;
    parts.tokens = which == 1 ? seq.e1_tokens : seq.e2_tokens;
    parts.inter = seq.inter;
    parts.s = layer.row(static_cast<Eigen::Index>(parts.start)).transpose();
    parts.e = layer.row(static_cast<Eigen::Index>(parts.end)).transpose();
    parts.p = encoder::mean_pool(layer, parts.tokens);
    parts.i = parts.inter.empty() ? Eigen::VectorXd::Ones(layer.cols()) : encoder::mean_pool(layer, parts.inter);
    return parts;
}

Eigen::VectorXd entity_vector(char variant, const EntityParts& x) {
    switch (variant) {
    case 'A': return x.s;
    case 'B': return x.e;
    case 'C': {
        Eigen::VectorXd out(x.s.size() * 2);
        out << x.s, x.e;
        return out;
    }
    case 'D': return x.p;
    case 'E': return x.p.cwiseProduct(x.i);
    case 'F': return x.s.cwiseProduct(x.i);
    case 'G': return x.e.cwiseProduct(x.i);
    case 'H': return x.s.cwiseProduct(x.e).cwiseProduct(x.i);
    default: throw ModelError(std::string("unknown entity variant ") + variant);
    }
}

void scatter_entity_grad(char variant, const EntityParts& x, const Eigen::VectorXd& dr, Eigen::MatrixXd& dh) {
    const Eigen::Index d = x.s.size();
    Eigen::VectorXd ds = Eigen::VectorXd::Zero(d), de = ds, dp = ds, di = ds;
    switch (variant) {
    case 'A': ds = dr; break;
    case 'B': de = dr; break;
    case 'C': ds = dr.head(d); de = dr.tail(d); break;
    case 'D': dp = dr; break;
    case 'E': dp = dr.cwiseProduct(x.i); di = dr.cwiseProduct(x.p); break;
    case 'F': ds = dr.cwiseProduct(x.i); di = dr.cwiseProduct(x.s); break;
    case 'G': de = dr.cwiseProduct(x.i); di = dr.cwiseProduct(x.e); break;
    case 'H':
        ds = dr.cwiseProduct(x.e).cwiseProduct(x.i);
        de = dr.cwiseProduct(x.s).cwiseProduct(x.i);
        di = dr.cwiseProduct(x.s).cwiseProduct(x.e);
        break;
    default: throw ModelError(std::string("unknown entity variant ") + variant);
    }
    dh.row(static_cast<Eigen::Index>(x.start)) += ds.transpose();
    dh.row(static_cast<Eigen::Index>(x.end)) += de.transpose();
    for (std::size_t t = x.tokens.begin; t < x.tokens.end; ++t)
        dh.row(static_cast<Eigen::Index>(t)) += dp.transpose() / static_cast<double>(x.tokens.size());
    if (!x.inter.empty())
        for (std::size_t t = x.inter.begin; t < x.inter.end; ++t)
            dh.row(static_cast<Eigen::Index>(t)) += di.transpose() / static_cast<double>(x.inter.size());
}

Eigen::VectorXd cosine_grad(const Eigen::VectorXd& u, const Eigen::VectorXd& v, double cos) {
    const double nu_raw = u.norm();
    const double nu = std::max(nu_raw, kNormEps);
    const double nv = std::max(v.norm(), kNormEps);
    Eigen::VectorXd g = v / (nu * nv);
    if (nu_raw > kNormEps) g -= cos * u / (nu_raw * nu_raw);
    return g;
}

std::string context_mode_name(ContextMode m) { return m == ContextMode::Markers ? "markers" : "entity_tokens"; }

} // namespace

std::string to_string(Role role) {
    switch (role) {
    case Role::CLS: return "CLS";
    case Role::S1: return "S1";
    case Role::E1: return "E1";
    case Role::P1: return "P1";
    case Role::S2: return "S2";
    case Role::E2: return "E2";
    case Role::P2: return "P2";
    case Role::INTER: return "INTER";
    case Role::CONTEXT: return "CONTEXT";
    }
    return "?";
}

std::string to_string(Architecture a) {
    switch (a) {
    case Architecture::LaMReDA: return "LaMReDA";
    case Architecture::LaMReDM: return "LaMReDM";
    case Architecture::LaMEL: return "LaMEL";
    }
    return "?";
}

Architecture architecture_from_string(const std::string& name) {
    const auto n = to_lower(name);
    if (n == "lamreda" || n == "lamred-a") return Architecture::LaMReDA;
    if (n == "lamredm" || n == "lamred-m") return Architecture::LaMReDM;
    if (n == "lamel") return Architecture::LaMEL;
    throw ParseError("unknown architecture: " + name);
}

const std::vector<Role>& lamred_roles(char variant) {
    const auto& t = lamred_table();
    const auto it = t.find(variant);
    if (it == t.end()) throw ModelError(std::string("unknown LaMReD variant ") + variant);
    return it->second;
}

std::string variants(Architecture a) { return a == Architecture::LaMEL ? "ABCDEFGH" : "ABCDEFGHIJKLMNOP"; }

ContextWeights context_weights(const MarkedSequence& seq, const EncodedSequence& enc, ContextMode mode) {
    if (enc.attentions.empty()) throw PreconditionError("context vector needs attention weights");
    const auto& heads = enc.attentions.back();
    const auto T = static_cast<Eigen::Index>(seq.tokens.size());
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(T);
    for (const auto& a : heads) {
        Eigen::VectorXd a1, a2;
        if (mode == ContextMode::Markers) {
            a1 = a.row(static_cast<Eigen::Index>(seq.e1_start)).transpose();
            a2 = a.row(static_cast<Eigen::Index>(seq.e2_start)).transpose();
        } else {
            a1 = row_mean(a, seq.e1_tokens);
            a2 = row_mean(a, seq.e2_tokens);
        }
        acc += a1.cwiseProduct(a2);
    }
    acc /= static_cast<double>(heads.size());
    ContextWeights out;
    double total = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) total += acc(t);
    if (!(total > 0.0)) {
        out.distribution = Eigen::VectorXd::Constant(T, 1.0 / static_cast<double>(T));
        out.uniform_fallback = true;
    } else {
        out.distribution = acc / total;
    }
    return out;
}

TokenWeights constituent_weights(Role role, const MarkedSequence& seq, const ContextWeights& context) {
    switch (role) {
    case Role::CLS: return {{seq.cls_index, 1.0}};
    case Role::S1: return {{seq.e1_start, 1.0}};
    case Role::E1: return {{seq.e1_end, 1.0}};
    case Role::P1: return mean_weights(seq.e1_tokens);
    case Role::S2: return {{seq.e2_start, 1.0}};
    case Role::E2: return {{seq.e2_end, 1.0}};
    case Role::P2: return mean_weights(seq.e2_tokens);
    case Role::INTER: return mean_weights(seq.inter);
    case Role::CONTEXT: {
        TokenWeights w;
        for (Eigen::Index t = 0; t < context.distribution.size(); ++t)
            w.emplace_back(static_cast<std::size_t>(t), context.distribution(t));
        return w;
    }
    }
    return {};
}

Eigen::VectorXd apply_weights(const Eigen::MatrixXd& layer, const TokenWeights& w) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(layer.cols());
    for (const auto& [t, wt] : w) v += wt * layer.row(static_cast<Eigen::Index>(t)).transpose();
    return v;
}

Eigen::VectorXd constituent_vector(Role role, const MarkedSequence& seq, const ContextWeights& context,
                                   const Eigen::MatrixXd& layer) {
    switch (role) {
    case Role::P1: return encoder::mean_pool(layer, seq.e1_tokens);
    case Role::P2: return encoder::mean_pool(layer, seq.e2_tokens);
    case Role::INTER: return encoder::mean_pool(layer, seq.inter);
    default: return apply_weights(layer, constituent_weights(role, seq, context));
    }
}

Eigen::VectorXd entity_representation(char variant, int which, const MarkedSequence& seq, const Eigen::MatrixXd& layer) {
    return entity_vector(variant, entity_parts(which, seq, layer));
}

Eigen::VectorXd dropout_mask(Eigen::Index n, double p, Rng* rng) {
    Eigen::VectorXd m = Eigen::VectorXd::Ones(n);
    if (!rng || p <= 0.0) return m;
    const double keep = 1.0 - p;
    for (Eigen::Index i = 0; i < n; ++i) m(i) = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    return m;
}

double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    return u.dot(v) / (std::max(u.norm(), kNormEps) * std::max(v.norm(), kNormEps));
}

double cosine_embedding_loss(double cos, int y, double margin) {
    if (!(margin >= 0.0 && margin < 1.0)) throw PreconditionError("margin must lie in [0, 1)");
    if (y == 1) return 1.0 - cos;
    if (y == -1) return std::max(0.0, cos - margin);
    throw PreconditionError("cosine embedding target must be +1 or -1");
}

json to_json(const ModelConfig& c) {
    const char* family = c.architecture == Architecture::LaMEL     ? "LAMEL"
                         : c.architecture == Architecture::LaMReDA ? "LAMREDA"
                                                                   : "LAMREDM";
    json j{{"family", family},
            {"variant", std::string(1, c.variant)},
            {"num_classes", c.space == dataset::LabelSpace::Binary ? 2 : 4},
            {"shared_projection", c.shared_projection},
            {"use_projection", c.use_projection},
            {"hidden", c.hidden},
            {"dropout", c.dropout},
            {"margin", c.margin},
            {"threshold", c.threshold},
            {"context_mode", context_mode_name(c.context_mode)},
            {"layer", c.layer ? json(*c.layer) : json(nullptr)},
            {"train_backend", c.train_backend},
            {"seed", c.seed}};
    if (c.architecture != Architecture::LaMEL) j["aggregation"] = c.architecture == Architecture::LaMReDA ? "ADD" : "MUL";
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    if (j.contains("architecture")) c.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    if (j.contains("family")) c.architecture = architecture_from_string(j.at("family").get<std::string>());
    if (j.contains("aggregation")) {
        const auto agg = to_lower(j.at("aggregation").get<std::string>());
        const bool ok = (agg == "add" && c.architecture == Architecture::LaMReDA) ||
                        (agg == "mul" && c.architecture == Architecture::LaMReDM);
        if (!ok) throw ParseError("aggregation " + agg + " does not match family " + to_string(c.architecture));
    }
    if (j.contains("num_classes")) {
        const int k = j.at("num_classes").get<int>();
        if (k != 2 && k != 4) throw ParseError("num_classes must be 2 or 4");
        c.space = k == 2 ? dataset::LabelSpace::Binary : dataset::LabelSpace::Multiclass;
    }
    if (j.contains("variant")) {
        const auto v = j.at("variant").get<std::string>();
        if (v.size() != 1) throw ParseError("variant must be a single letter");
        c.variant = static_cast<char>(std::toupper(static_cast<unsigned char>(v[0])));
    }
    if (j.contains("space")) c.space = dataset::label_space_from_string(j.at("space").get<std::string>());
    c.shared_projection = j.value("shared_projection", c.shared_projection);
    c.use_projection = j.value("use_projection", c.use_projection);
    c.hidden = j.value("hidden", c.hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.margin = j.value("margin", c.margin);
    c.threshold = j.value("threshold", c.threshold);
    if (j.contains("context_mode")) {
        const auto m = j.at("context_mode").get<std::string>();
        if (m == "markers") c.context_mode = ContextMode::Markers;
        else if (m == "entity_tokens") c.context_mode = ContextMode::EntityTokens;
        else throw ParseError("unknown context_mode: " + m);
    }
    if (j.contains("layer") && !j.at("layer").is_null()) c.layer = j.at("layer").get<std::size_t>();
    c.train_backend = j.value("train_backend", c.train_backend);
    c.seed = j.value("seed", c.seed);
    return c;
}

// ---------------------------------------------------------------------------
// RelationModel

struct RelationModel::Tape {
    MarkedSequence seq;
    EncodedSequence enc;
    std::size_t layer = 0;
    bool inter_fallback = false;
    bool context_fallback = false;
    // LaMReD
    std::vector<Role> roles;
    std::vector<TokenWeights> weights;
    std::vector<Eigen::VectorXd> c, z;
    Eigen::VectorXd mask, dropped, probs;
    // LaMEL
    EntityParts parts[2];
    Eigen::VectorXd rmask[2], x[2], u[2];
    double cos = 0.0;
};

RelationModel::RelationModel(ModelConfig config, std::shared_ptr<encoder::Backend> backend)
    : config_(config), backend_(std::move(backend)) {
    if (!backend_) throw ModelError("model needs an encoder backend");
    if (variants(config_.architecture).find(config_.variant) == std::string::npos)
        throw ModelError(std::string("variant ") + config_.variant + " is not defined for " + to_string(config_.architecture));
    if (config_.architecture == Architecture::LaMEL && config_.space != dataset::LabelSpace::Binary)
        throw ModelError("LaMEL supports the binary label space only");
    if (config_.dropout < 0.0 || config_.dropout >= 1.0) throw ModelError("dropout must be in [0, 1)");
    if (!(config_.threshold > -1.0 && config_.threshold < 1.0)) throw ModelError("threshold must lie in (-1, 1)");
    if (!(config_.margin >= 0.0 && config_.margin < 1.0)) throw ModelError("margin must lie in [0, 1)");
    layer_index();

    const auto d = static_cast<Eigen::Index>(backend_->dim());
    hidden_ = config_.use_projection ? (config_.hidden ? config_.hidden : backend_->dim()) : backend_->dim();
    const auto h = static_cast<Eigen::Index>(hidden_);
    Rng rng(config_.seed);
    if (config_.architecture == Architecture::LaMEL) {
        const Eigen::Index in = config_.variant == 'C' ? 2 * d : d;
        if (!config_.use_projection || !config_.hidden) hidden_ = static_cast<std::size_t>(in);
        if (config_.use_projection) {
            const auto out = static_cast<Eigen::Index>(hidden_);
            for (const std::string& key : config_.shared_projection ? std::vector<std::string>{"e"} : std::vector<std::string>{"1", "2"}) {
                params_.emplace("W." + key, Parameter(xavier(out, in, rng)));
                params_.emplace("b." + key, Parameter(Eigen::MatrixXd::Zero(out, 1)));
            }
        }
    } else {
        if (config_.use_projection) {
            for (Role r : lamred_roles(config_.variant)) {
                const auto key = projection_key(r);
                if (params_.count("W." + key)) continue;
                params_.emplace("W." + key, Parameter(xavier(h, d, rng)));
                params_.emplace("b." + key, Parameter(Eigen::MatrixXd::Zero(h, 1)));
            }
        }
        const auto k = static_cast<Eigen::Index>(classes().size());
        params_.emplace("C", Parameter(xavier(k, h, rng)));
        params_.emplace("c", Parameter(Eigen::MatrixXd::Zero(k, 1)));
    }
    class_weights_.assign(classes().size(), 1.0);
}

void RelationModel::set_class_weights(std::vector<double> weights) {
    if (weights.size() != classes().size()) throw PreconditionError("one class weight per class is required");
    for (double w : weights)
        if (!(w >= 0.0) || !std::isfinite(w)) throw PreconditionError("class weights must be finite and non-negative");
    class_weights_ = std::move(weights);
}

std::size_t RelationModel::layer_index() const {
    const std::size_t last = backend_->num_layers();
    if (!config_.layer) return last;
    if (*config_.layer > last) throw ModelError("layer " + std::to_string(*config_.layer) + " exceeds the backend depth");
    return *config_.layer;
}

std::string RelationModel::projection_key(Role role) const {
    if (config_.shared_projection) {
        switch (role) {
        case Role::S1: case Role::S2: return "S";
        case Role::E1: case Role::E2: return "E";
        case Role::P1: case Role::P2: return "P";
        default: break;
        }
    }
    return to_string(role);
}

RelationModel::Tape RelationModel::forward(const MarkedSequence& seq, Rng* dropout_rng, const EncodedSequence* cached) const {
    Tape tape;
    tape.seq = seq;
    tape.enc = cached ? *cached : backend_->encode(seq);
    tape.layer = layer_index();
    const Eigen::MatrixXd& hmat = tape.enc.layers[tape.layer];
    const auto h = static_cast<Eigen::Index>(hidden_);

    if (config_.architecture == Architecture::LaMEL) {
        tape.inter_fallback = config_.variant >= 'E' && seq.inter.empty();
        for (int k = 0; k < 2; ++k) {
            tape.parts[k] = entity_parts(k + 1, seq, hmat);
            const Eigen::VectorXd r = entity_vector(config_.variant, tape.parts[k]);
            tape.rmask[k] = dropout_mask(r.size(), config_.dropout, dropout_rng);
            tape.x[k] = r.cwiseProduct(tape.rmask[k]);
            if (config_.use_projection) {
                const std::string key = config_.shared_projection ? "e" : std::to_string(k + 1);
                tape.u[k] = params_.at("W." + key).value * tape.x[k] + params_.at("b." + key).value.col(0);
            } else {
                tape.u[k] = tape.x[k];
            }
        }
        tape.cos = cosine(tape.u[0], tape.u[1]);
        return tape;
    }

    ContextWeights ctx;
    const auto& roles = lamred_roles(config_.variant);
    if (std::find(roles.begin(), roles.end(), Role::CONTEXT) != roles.end()) {
        ctx = context_weights(seq, tape.enc, config_.context_mode);
        tape.context_fallback = ctx.uniform_fallback;
    }
    const bool mul = config_.architecture == Architecture::LaMReDM;
    Eigen::VectorXd s = mul ? Eigen::VectorXd::Ones(h) : Eigen::VectorXd::Zero(h);
    for (Role r : roles) {
        auto w = constituent_weights(r, seq, ctx);
        if (w.empty()) {
            // Empty INTER range: the constituent is the aggregation's neutral element.
            tape.inter_fallback = true;
            continue;
        }
        Eigen::VectorXd c = constituent_vector(r, seq, ctx, hmat);
        Eigen::VectorXd z = c;
        if (config_.use_projection) {
            const auto key = projection_key(r);
            z = params_.at("W." + key).value * c + params_.at("b." + key).value.col(0);
        }
        s = mul ? Eigen::VectorXd(s.cwiseProduct(z)) : Eigen::VectorXd(s + z);
        tape.roles.push_back(r);
        tape.weights.push_back(std::move(w));
        tape.c.push_back(std::move(c));
        tape.z.push_back(std::move(z));
    }
    tape.mask = dropout_mask(h, config_.dropout, dropout_rng);
    tape.dropped = s.cwiseProduct(tape.mask);
    Eigen::VectorXd logits = params_.at("C").value * tape.dropped + params_.at("c").value.col(0);
    logits.array() -= logits.maxCoeff();
    tape.probs = logits.array().exp();
    tape.probs /= tape.probs.sum();
    return tape;
}

double RelationModel::loss_of(const Tape& tape, Label gold) const {
    const std::size_t gi = dataset::class_index(gold, config_.space);
    const double w = class_weights_[gi];
    if (config_.architecture == Architecture::LaMEL) {
        const int y = gi == 0 ? 1 : -1;  // class 0 is RELATION
        return w * cosine_embedding_loss(tape.cos, y, config_.margin);
    }
    return -w * std::log(std::max(tape.probs(static_cast<Eigen::Index>(gi)), 1e-300));
}

double RelationModel::backward(Tape& tape, Label gold) {
    const std::size_t gi = dataset::class_index(gold, config_.space);
    const double w = class_weights_[gi];
    const double loss = loss_of(tape, gold);
    const Eigen::MatrixXd& hmat = tape.enc.layers[tape.layer];
    Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(hmat.rows(), hmat.cols());

    if (config_.architecture == Architecture::LaMEL) {
        const int y = gi == 0 ? 1 : -1;
        double dcos = 0.0;
        if (y == 1) dcos = -w;
        else if (tape.cos > config_.margin) dcos = w;
        if (dcos != 0.0) {
            Eigen::VectorXd du[2] = {dcos * cosine_grad(tape.u[0], tape.u[1], tape.cos),
                                     dcos * cosine_grad(tape.u[1], tape.u[0], tape.cos)};
            for (int k = 0; k < 2; ++k) {
                Eigen::VectorXd dx = du[k];
                if (config_.use_projection) {
                    const std::string key = config_.shared_projection ? "e" : std::to_string(k + 1);
                    auto& W = params_.at("W." + key);
                    W.grad += du[k] * tape.x[k].transpose();
                    params_.at("b." + key).grad.col(0) += du[k];
                    dx = W.value.transpose() * du[k];
                }
                const Eigen::VectorXd dr = dx.cwiseProduct(tape.rmask[k]);
                scatter_entity_grad(config_.variant, tape.parts[k], dr, dh);
            }
        }
    } else {
        Eigen::VectorXd dlogits = tape.probs;
        dlogits(static_cast<Eigen::Index>(gi)) -= 1.0;
        dlogits *= w;
        auto& C = params_.at("C");
        C.grad += dlogits * tape.dropped.transpose();
        params_.at("c").grad.col(0) += dlogits;
        const Eigen::VectorXd ds = (C.value.transpose() * dlogits).cwiseProduct(tape.mask);
        const bool mul = config_.architecture == Architecture::LaMReDM;
        for (std::size_t i = 0; i < tape.roles.size(); ++i) {
            Eigen::VectorXd dz = ds;
            if (mul)
                for (std::size_t j = 0; j < tape.z.size(); ++j)
                    if (j != i) dz = dz.cwiseProduct(tape.z[j]);
            Eigen::VectorXd dc = dz;
            if (config_.use_projection) {
                const auto key = projection_key(tape.roles[i]);
                auto& W = params_.at("W." + key);
                W.grad += dz * tape.c[i].transpose();
                params_.at("b." + key).grad.col(0) += dz;
                dc = W.value.transpose() * dz;
            }
            for (const auto& [t, wt] : tape.weights[i]) dh.row(static_cast<Eigen::Index>(t)) += wt * dc.transpose();
        }
    }
    if (config_.train_backend) backend_->backward(tape.seq, tape.enc, tape.layer, dh);
    return loss;
}

Prediction RelationModel::to_prediction(const Tape& tape) const {
    Prediction p;
    p.inter_fallback = tape.inter_fallback;
    p.context_fallback = tape.context_fallback;
    const auto& cs = classes();
    if (config_.architecture == Architecture::LaMEL) {
        p.cosine = tape.cos;
        p.scores = Eigen::VectorXd(2);
        p.scores << tape.cos - config_.threshold, config_.threshold - tape.cos;
        p.label = tape.cos > config_.threshold ? Label::Relation : Label::NoRelation;
        return p;
    }
    p.scores = tape.probs;
    Eigen::Index best = 0;
    p.scores.maxCoeff(&best);
    p.label = cs[static_cast<std::size_t>(best)];
    return p;
}

Prediction RelationModel::predict(const MarkedSequence& seq, const EncodedSequence* cached) const {
    return to_prediction(forward(seq, nullptr, cached));
}

Representation RelationModel::represent(const MarkedSequence& seq) const {
    const auto tape = forward(seq, nullptr);
    Representation r;
    r.inter_fallback = tape.inter_fallback;
    r.context_fallback = tape.context_fallback;
    if (config_.architecture == Architecture::LaMEL) {
        r.entity1 = tape.u[0];
        r.entity2 = tape.u[1];
    } else {
        r.relation = tape.dropped;
    }
    return r;
}

Parameter& RelationModel::head_parameter(const std::string& name) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw PreconditionError("no head parameter " + name);
    return it->second;
}

double RelationModel::accumulate(const MarkedSequence& seq, Label gold, Rng* dropout_rng, const EncodedSequence* cached) {
    auto tape = forward(seq, dropout_rng, cached);
    return backward(tape, gold);
}

double RelationModel::loss(const MarkedSequence& seq, Label gold) const { return loss_of(forward(seq, nullptr), gold); }

ParameterRefs RelationModel::parameters() {
    ParameterRefs refs;
    for (auto& [name, p] : params_) refs.emplace_back("head." + name, &p);
    if (config_.train_backend)
        for (auto& ref : backend_->parameters()) refs.push_back(ref);
    return refs;
}

void RelationModel::zero_grad() {
    for (auto& [name, p] : parameters()) p->zero_grad();
}

json RelationModel::checkpoint() const {
    json params = json::object();
    for (const auto& [name, p] : params_) params[name] = matrix_to_json(p.value);
    return {{"format", "redkit.model"},
            {"version", kCheckpointVersion},
            {"config", to_json(config_)},
            {"class_weights", class_weights_},
            {"params", params},
            {"backend", backend_->state()}};
}

RelationModel RelationModel::from_checkpoint(const json& j, std::shared_ptr<encoder::Backend> backend) {
    if (j.value("format", std::string()) != "redkit.model") throw ParseError("not a model checkpoint");
    RelationModel model(model_config_from_json(j.at("config")), std::move(backend));
    model.load_checkpoint(j);
    return model;
}

void RelationModel::load_checkpoint(const json& j) {
    if (j.value("format", std::string()) != "redkit.model") throw ParseError("not a model checkpoint");
    if (j.value("version", 0) != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
    const auto& params = j.at("params");
    if (params.size() != params_.size()) throw ParseError("checkpoint parameter set does not match the model");
    std::map<std::string, Eigen::MatrixXd> loaded;
    for (const auto& [name, p] : params_) {
        if (!params.contains(name)) throw ParseError("checkpoint is missing parameter " + name);
        auto value = matrix_from_json(params.at(name));
        if (value.rows() != p.value.rows() || value.cols() != p.value.cols())
            throw ParseError("checkpoint parameter " + name + " has the wrong shape");
        loaded.emplace(name, std::move(value));
    }
    set_class_weights(j.at("class_weights").get<std::vector<double>>());
    // Assign in place so outstanding parameter references stay valid.
    for (auto& [name, p] : params_) {
        p.value = std::move(loaded.at(name));
        p.zero_grad();
    }
    if (j.contains("backend") && !j.at("backend").empty()) backend_->load_state(j.at("backend"));
}

} // namespace redkit::models
