#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "redkit/models.hpp"

using namespace redkit;
using namespace redkit::models;
using dataset::Label;
using dataset::LabelSpace;
using encoder::MarkedSequence;
using encoder::MockBackend;

namespace {

const std::string kText = "MECP2 mutations cause Rett syndrome in girls.";
const mentions::Span kE1{0, 5};
const mentions::Span kE2{22, 35};

std::shared_ptr<MockBackend> small_backend(bool decoder = false) {
    MockBackend::Options o;
    o.d = 4;
    o.layers = 2;
    o.heads = 2;
    o.decoder_style = decoder;
    return std::make_shared<MockBackend>(o);
}

/// Central differences over every parameter coordinate.
void check_gradients(RelationModel& model, const MarkedSequence& seq, Label gold) {
    model.zero_grad();
    model.accumulate(seq, gold, nullptr);
    for (auto& [name, p] : model.parameters()) {
        for (Eigen::Index k = 0; k < p->value.size(); ++k) {
            const double h = 1e-6;
            const double orig = p->value.data()[k];
            p->value.data()[k] = orig + h;
            const double up = model.loss(seq, gold);
            p->value.data()[k] = orig - h;
            const double down = model.loss(seq, gold);
            p->value.data()[k] = orig;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p->grad.data()[k];
            INFO(to_string(model.config().architecture) << " " << model.config().variant << " " << name << "[" << k
                                                          << "] analytic " << analytic << " numeric " << numeric);
            CHECK(std::abs(analytic - numeric) <= 1e-5 * std::max(1.0, std::abs(numeric)));
        }
    }
}

encoder::EncodedSequence uniform_encoding(const MarkedSequence& seq, std::size_t d, std::size_t heads) {
    const auto T = static_cast<Eigen::Index>(seq.tokens.size());
    encoder::EncodedSequence enc;
    enc.d = d;
    enc.num_layers = 1;
    enc.num_heads = heads;
    Eigen::MatrixXd h(T, static_cast<Eigen::Index>(d));
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index j = 0; j < h.cols(); ++j) h(t, j) = static_cast<double>(t * 10 + j);
    enc.layers = {h, h};
    enc.attentions = {std::vector<Eigen::MatrixXd>(heads, Eigen::MatrixXd::Constant(T, T, 1.0 / static_cast<double>(T)))};
    return enc;
}

} // namespace

TEST_CASE("LaMReD variants list their constituents") {
    CHECK(variants(Architecture::LaMReDA).size() == 16);
    CHECK(variants(Architecture::LaMEL).size() == 8);
    CHECK(lamred_roles('A') == std::vector<Role>{Role::S1, Role::S2});
    CHECK(lamred_roles('I') == std::vector<Role>{Role::CLS, Role::S1, Role::E1, Role::S2, Role::E2});
    CHECK(lamred_roles('M') == std::vector<Role>{Role::S1, Role::E1, Role::INTER, Role::S2, Role::E2});
    CHECK(lamred_roles('O') == std::vector<Role>{Role::CONTEXT});
    CHECK(lamred_roles('P') == std::vector<Role>{Role::P1, Role::P2, Role::CONTEXT});
    CHECK_THROWS_AS(lamred_roles('Q'), ModelError);
}

TEST_CASE("constituent weights point at markers, entity tokens and the inter range") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    ContextWeights none;
    CHECK(constituent_weights(Role::CLS, seq, none) == TokenWeights{{0, 1.0}});
    CHECK(constituent_weights(Role::S1, seq, none) == TokenWeights{{1, 1.0}});
    CHECK(constituent_weights(Role::E1, seq, none) == TokenWeights{{3, 1.0}});
    CHECK(constituent_weights(Role::S2, seq, none) == TokenWeights{{6, 1.0}});
    CHECK(constituent_weights(Role::E2, seq, none) == TokenWeights{{9, 1.0}});
    CHECK(constituent_weights(Role::P2, seq, none) == TokenWeights{{7, 0.5}, {8, 0.5}});
    CHECK(constituent_weights(Role::INTER, seq, none) == TokenWeights{{4, 0.5}, {5, 0.5}});
}

TEST_CASE("uniform attention gives a uniform context distribution and the mean token vector") {
    // 16 tokens keeps 1/T exact in binary floating point.
    const std::string text = "alpha beta gamma delta eps zeta eta theta iota kappa";
    const auto seq = encoder::tokenize(text, {0, 5}, {17, 22}, 64);
    REQUIRE(seq.tokens.size() == 16);
    const auto enc = uniform_encoding(seq, 3, 2);
    for (auto mode : {ContextMode::EntityTokens, ContextMode::Markers}) {
        const auto ctx = context_weights(seq, enc, mode);
        CHECK_FALSE(ctx.uniform_fallback);
        for (Eigen::Index t = 0; t < 16; ++t) CHECK(ctx.distribution(t) == 1.0 / 16.0);
        const auto cv = apply_weights(enc.last(), constituent_weights(Role::CONTEXT, seq, ctx));
        const Eigen::VectorXd mean = enc.last().colwise().mean().transpose();
        CHECK(cv.isApprox(mean, 1e-15));
    }
}

TEST_CASE("context weights follow the entity attention product") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    auto enc = uniform_encoding(seq, 3, 1);
    const auto T = static_cast<Eigen::Index>(seq.tokens.size());
    auto& a = enc.attentions[0][0];
    // Entity 1 (token 2) spreads over tokens 4 and 5, entity 2 (tokens 7, 8) over 5 and 11.
    a.row(2).setZero();
    a(2, 4) = 0.5;
    a(2, 5) = 0.5;
    for (Eigen::Index r : {7, 8}) {
        a.row(r).setZero();
        a(r, 5) = 0.25;
        a(r, 11) = 0.75;
    }
    const auto ctx = context_weights(seq, enc);
    CHECK_FALSE(ctx.uniform_fallback);
    for (Eigen::Index t = 0; t < T; ++t) CHECK(ctx.distribution(t) == doctest::Approx(t == 5 ? 1.0 : 0.0));

    // Disjoint supports give a zero product and fall back to uniform.
    a(2, 5) = 0.0;
    a(2, 4) = 1.0;
    const auto fallback = context_weights(seq, enc);
    CHECK(fallback.uniform_fallback);
    CHECK(fallback.distribution.sum() == doctest::Approx(1.0));
    CHECK(fallback.distribution(0) == doctest::Approx(1.0 / static_cast<double>(T)));
}

TEST_CASE("context weights use the last layer attention and average heads") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    MockBackend backend;
    const auto enc = backend.encode(seq);
    const auto ctx = context_weights(seq, enc);
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(seq.tokens.size()));
    for (const auto& a : enc.attentions.back()) {
        const Eigen::VectorXd a1 = a.row(2).transpose();
        const Eigen::VectorXd a2 = (a.row(7) + a.row(8)).transpose() / 2.0;
        expected += a1.cwiseProduct(a2);
    }
    expected /= expected.sum();
    CHECK(ctx.distribution.isApprox(expected, 1e-12));
}

TEST_CASE("LaMEL entity representations combine markers, pools and the inter mean") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    Eigen::MatrixXd h(static_cast<Eigen::Index>(seq.tokens.size()), 2);
    for (Eigen::Index t = 0; t < h.rows(); ++t) h.row(t) << static_cast<double>(t), static_cast<double>(t * t);
    const Eigen::Vector2d s2(6, 36), e2(9, 81), p2(7.5, (49 + 64) / 2.0), inter(4.5, (16 + 25) / 2.0);
    CHECK(entity_representation('A', 2, seq, h).isApprox(s2));
    CHECK(entity_representation('B', 2, seq, h).isApprox(e2));
    Eigen::VectorXd c(4);
    c << s2, e2;
    CHECK(entity_representation('C', 2, seq, h).isApprox(c));
    CHECK(entity_representation('D', 2, seq, h).isApprox(p2));
    CHECK(entity_representation('E', 2, seq, h).isApprox(p2.cwiseProduct(inter)));
    CHECK(entity_representation('F', 2, seq, h).isApprox(s2.cwiseProduct(inter)));
    CHECK(entity_representation('G', 2, seq, h).isApprox(e2.cwiseProduct(inter)));
    CHECK(entity_representation('H', 2, seq, h).isApprox(s2.cwiseProduct(e2).cwiseProduct(inter)));
    CHECK(entity_representation('A', 1, seq, h).isApprox(Eigen::Vector2d(1, 1)));

    const auto adjacent = encoder::tokenize("aspirin ibuprofen", {0, 7}, {8, 17}, 64);
    Eigen::MatrixXd h2 = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(adjacent.tokens.size()), 2, 3.0);
    CHECK(entity_representation('E', 1, adjacent, h2).isApprox(Eigen::Vector2d(3, 3)));
}

TEST_CASE("cosine and cosine embedding loss") {
    const Eigen::Vector2d a(1, 0), b(0, 2), c(3, 0);
    CHECK(cosine(a, c) == doctest::Approx(1.0));
    CHECK(cosine(a, b) == doctest::Approx(0.0));
    CHECK(cosine(a, -c) == doctest::Approx(-1.0));
    CHECK(cosine(Eigen::Vector2d::Zero(), a) == 0.0);
    CHECK(cosine_embedding_loss(0.3, 1, 0.0) == doctest::Approx(0.7));
    CHECK(cosine_embedding_loss(0.3, -1, 0.0) == doctest::Approx(0.3));
    CHECK(cosine_embedding_loss(-0.3, -1, 0.0) == 0.0);
    CHECK(cosine_embedding_loss(0.3, -1, 0.5) == 0.0);
    CHECK_THROWS_AS(cosine_embedding_loss(0.3, -1, 1.0), PreconditionError);
    CHECK_THROWS_AS(cosine_embedding_loss(0.3, -1, -0.1), PreconditionError);
    CHECK_THROWS_AS(cosine_embedding_loss(0.3, 0, 0.0), PreconditionError);
}

TEST_CASE("dropout masks drop at the configured rate and rescale survivors") {
    Rng rng(3);
    const auto m = dropout_mask(200000, 0.3, &rng);
    const double dropped = static_cast<double>((m.array() == 0.0).count()) / 200000.0;
    CHECK(dropped == doctest::Approx(0.3).epsilon(0.02));
    CHECK(m.mean() == doctest::Approx(1.0).epsilon(0.01));
    for (Eigen::Index i = 0; i < m.size(); ++i) REQUIRE((m(i) == 0.0 || m(i) == doctest::Approx(1.0 / 0.7)));
    CHECK(dropout_mask(5, 0.3, nullptr).isOnes());
    CHECK(dropout_mask(5, 0.0, &rng).isOnes());
}

TEST_CASE("LaMReD gradients match finite differences for every variant") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    for (auto arch : {Architecture::LaMReDA, Architecture::LaMReDM}) {
        for (char v : variants(arch)) {
            for (auto space : {LabelSpace::Binary, LabelSpace::Multiclass}) {
                ModelConfig cfg;
                cfg.architecture = arch;
                cfg.variant = v;
                cfg.space = space;
                cfg.dropout = 0.0;
                cfg.hidden = 3;
                RelationModel model(cfg, small_backend());
                check_gradients(model, seq, space == LabelSpace::Binary ? Label::Relation : Label::Complex);
            }
        }
    }
}

TEST_CASE("LaMEL gradients match finite differences for every entity variant") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    for (char v : variants(Architecture::LaMEL)) {
        for (bool shared : {false, true}) {
            ModelConfig cfg;
            cfg.architecture = Architecture::LaMEL;
            cfg.variant = v;
            cfg.dropout = 0.0;
            cfg.shared_projection = shared;
            RelationModel model(cfg, small_backend());
            check_gradients(model, seq, Label::Relation);
            if (!shared && *model.predict(seq).cosine <= 0.0) {
                // Biases start at zero, so negating one projection flips the cosine
                // and keeps the negative-pair hinge active.
                model.head_parameter("W.2").value *= -1.0;
            }
            if (!shared) CHECK(*model.predict(seq).cosine > 0.0);
            check_gradients(model, seq, Label::NoRelation);
        }
    }
}

TEST_CASE("gradients stay exact for shared projections, decoder style and probing layers") {
    const auto seq_enc = encoder::tokenize(kText, kE1, kE2, 64);
    const auto seq_dec = encoder::tokenize(kText, kE1, kE2, 64, true);
    ModelConfig shared;
    shared.variant = 'C';
    shared.shared_projection = true;
    shared.dropout = 0.0;
    RelationModel a(shared, small_backend());
    CHECK(a.parameters().size() == 2 * 2 + 2 + 2);  // W/b for S and E, classifier, two markers
    check_gradients(a, seq_enc, Label::NoRelation);

    ModelConfig dec;
    dec.architecture = Architecture::LaMReDM;
    dec.variant = 'P';
    dec.dropout = 0.0;
    RelationModel b(dec, small_backend(true));
    check_gradients(b, seq_dec, Label::Relation);

    ModelConfig probe;
    probe.variant = 'D';
    probe.layer = 1;
    probe.use_projection = false;
    probe.dropout = 0.0;
    RelationModel c(probe, small_backend());
    check_gradients(c, seq_enc, Label::Relation);
}

TEST_CASE("projection-free probes aggregate raw constituents of the chosen layer") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    auto backend = small_backend();
    ModelConfig cfg;
    cfg.variant = 'D';
    cfg.layer = 1;
    cfg.use_projection = false;
    cfg.train_backend = false;
    cfg.dropout = 0.0;
    RelationModel model(cfg, backend);
    CHECK(model.parameters().size() == 2);
    const auto enc = backend->encode(seq);
    const Eigen::VectorXd s = encoder::mean_pool(enc.layers[1], seq.e1_tokens) + encoder::mean_pool(enc.layers[1], seq.e2_tokens);
    auto params = model.parameters();
    const Eigen::VectorXd logits = params[0].second->value * s + params[1].second->value.col(0);
    const Eigen::VectorXd p = logits.array().exp() / logits.array().exp().sum();
    const auto pred = model.predict(seq);
    CHECK(pred.scores.isApprox(p, 1e-12));
    cfg.layer = 3;
    CHECK_THROWS_AS(RelationModel(cfg, backend), ModelError);
}

TEST_CASE("empty inter ranges use the neutral element and are flagged") {
    const auto seq = encoder::tokenize("aspirin ibuprofen", {0, 7}, {8, 17}, 64);
    for (auto arch : {Architecture::LaMReDA, Architecture::LaMReDM}) {
        ModelConfig cfg;
        cfg.architecture = arch;
        cfg.variant = 'K';
        cfg.dropout = 0.0;
        RelationModel model(cfg, small_backend());
        const auto pred = model.predict(seq);
        CHECK(pred.inter_fallback);
        CHECK(pred.scores.allFinite());
        check_gradients(model, seq, Label::Relation);
    }
    ModelConfig lamel;
    lamel.architecture = Architecture::LaMEL;
    lamel.variant = 'H';
    lamel.dropout = 0.0;
    RelationModel model(lamel, small_backend());
    CHECK(model.predict(seq).inter_fallback);
    check_gradients(model, seq, Label::Relation);
    lamel.variant = 'D';
    CHECK_FALSE(RelationModel(lamel, small_backend()).predict(seq).inter_fallback);
}

TEST_CASE("LaMEL predicts RELATION iff the cosine exceeds the threshold") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    ModelConfig cfg;
    cfg.architecture = Architecture::LaMEL;
    cfg.variant = 'A';
    for (double threshold : {-0.99, 0.99}) {
        cfg.threshold = threshold;
        RelationModel model(cfg, small_backend());
        const auto pred = model.predict(seq);
        REQUIRE(pred.cosine);
        CHECK(pred.label == (*pred.cosine > threshold ? Label::Relation : Label::NoRelation));
        CHECK(pred.scores(0) == doctest::Approx(*pred.cosine - threshold));
    }
    cfg.threshold = 1.0;
    CHECK_THROWS_AS(RelationModel(cfg, small_backend()), ModelError);
    cfg.threshold = 0.5;
    cfg.margin = 1.0;
    CHECK_THROWS_AS(RelationModel(cfg, small_backend()), ModelError);
    cfg.margin = 0.0;
    cfg.space = LabelSpace::Multiclass;
    CHECK_THROWS_AS(RelationModel(cfg, small_backend()), ModelError);
}

TEST_CASE("LaMEL projections keep the input width, 2d for variant C") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    ModelConfig cfg;
    cfg.architecture = Architecture::LaMEL;
    cfg.variant = 'C';
    RelationModel c(cfg, small_backend());
    CHECK(c.head_parameter("W.1").value.rows() == 8);
    CHECK(c.head_parameter("W.1").value.cols() == 8);
    CHECK(c.represent(seq).entity1.size() == 8);
    cfg.variant = 'D';
    RelationModel d(cfg, small_backend());
    CHECK(d.represent(seq).entity2.size() == 4);
}

TEST_CASE("relation representations have width d for every variant") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    for (auto arch : {Architecture::LaMReDA, Architecture::LaMReDM})
        for (char v : variants(arch)) {
            ModelConfig cfg;
            cfg.architecture = arch;
            cfg.variant = v;
            RelationModel model(cfg, small_backend());
            CHECK(model.represent(seq).relation.size() == 4);
        }
}

TEST_CASE("variant E is the same under both aggregations") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    ModelConfig cfg;
    cfg.variant = 'E';
    RelationModel add(cfg, small_backend());
    cfg.architecture = Architecture::LaMReDM;
    RelationModel mul(cfg, small_backend());
    CHECK(add.represent(seq).relation.isApprox(mul.represent(seq).relation, 0.0));
    CHECK(add.predict(seq).scores.isApprox(mul.predict(seq).scores, 0.0));
}

TEST_CASE("zero classifier weights give uniform scores and evaluation is repeatable") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    ModelConfig cfg;
    cfg.space = LabelSpace::Multiclass;
    RelationModel model(cfg, small_backend());
    const auto first = model.predict(seq).scores;
    CHECK(model.predict(seq).scores.isApprox(first, 0.0));
    model.head_parameter("C").value.setZero();
    CHECK(model.predict(seq).scores.isApprox(Eigen::VectorXd::Constant(4, 0.25), 1e-15));
    CHECK_THROWS_AS(model.head_parameter("W.nope"), PreconditionError);
}

TEST_CASE("model config accepts family, aggregation and class count") {
    const auto c = model_config_from_json({{"family", "LAMREDM"}, {"variant", "n"}, {"aggregation", "MUL"}, {"num_classes", 4}});
    CHECK(c.architecture == Architecture::LaMReDM);
    CHECK(c.variant == 'N');
    CHECK(c.space == LabelSpace::Multiclass);
    CHECK_THROWS_AS(model_config_from_json({{"family", "LAMREDA"}, {"aggregation", "MUL"}}), ParseError);
    CHECK_THROWS_AS(model_config_from_json({{"num_classes", 3}}), ParseError);
    const auto j = to_json(c);
    CHECK(j.at("aggregation") == "MUL");
    CHECK(model_config_from_json(j).architecture == Architecture::LaMReDM);
}

TEST_CASE("class weights scale the loss") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    ModelConfig cfg;
    cfg.space = LabelSpace::Multiclass;
    RelationModel model(cfg, small_backend());
    const double base = model.loss(seq, Label::Negative);
    model.set_class_weights({1.0, 1.0, 4.0, 1.0});
    CHECK(model.loss(seq, Label::Negative) == doctest::Approx(4.0 * base));
    CHECK_THROWS_AS(model.set_class_weights({1.0}), PreconditionError);
    CHECK_THROWS_AS(model.loss(seq, Label::Relation), dataset::LabelSpaceError);
}

TEST_CASE("checkpoints restore identical predictions") {
    const auto seq = encoder::tokenize(kText, kE1, kE2, 64);
    ModelConfig cfg;
    cfg.architecture = Architecture::LaMReDM;
    cfg.variant = 'N';
    cfg.space = LabelSpace::Multiclass;
    auto backend = small_backend();
    RelationModel model(cfg, backend);
    for (auto& [name, p] : model.parameters()) p->value.array() += 0.01;
    const auto ckpt = json::parse(model.checkpoint().dump());
    RelationModel restored = RelationModel::from_checkpoint(ckpt, small_backend());
    CHECK(restored.predict(seq).scores.isApprox(model.predict(seq).scores, 0.0));
    CHECK(model_config_from_json(to_json(cfg)).variant == 'N');

    json bad = ckpt;
    bad["version"] = 99;
    CHECK_THROWS_AS(RelationModel::from_checkpoint(bad, small_backend()), ParseError);
    bad = ckpt;
    bad["params"].erase("C");
    CHECK_THROWS_AS(RelationModel::from_checkpoint(bad, small_backend()), ParseError);
}
