#include <cstdio>
#include <cstring>
#include <limits>
#include <random>

#include "doctest.h"
#include "nesy/trainer.hpp"

using namespace nesy;

namespace {

/// Four parts per item; class pos/neg shows up as a bump on feature 0 or 1.
Dataset toy_dataset(std::uint64_t seed, std::size_t n) {
    Dataset d;
    d.task = "toy";
    d.parts = 4;
    d.part_dim = 6;
    d.label_names = {"pos", "neg"};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        Input item;
        for (int p = 0; p < 4; ++p) {
            Eigen::VectorXd v(6);
            for (int k = 0; k < 6; ++k) v(k) = noise(rng) + (k == y ? 1.0 : 0.0);
            item.push_back(v);
        }
        d.items.push_back(item);
        d.labels.push_back(static_cast<std::size_t>(y));
        d.splits.push_back(Split::Train);
    }
    return d;
}

RuleSet toy_rules() {
    return parse_rules("pred a/1\npred b/1\npred pos/1\npred neg/1\nA: a(x) => pos(x)\nB: b(x) => neg(x)\n");
}

TrainConfig small_config(std::uint64_t seed) {
    TrainConfig c;
    c.seed = seed;
    c.em_rounds = 4;
    c.batch = 8;
    c.feature_dim = 4;
    c.hidden = 8;
    c.lr_theta1 = 1e-2;
    c.lr_theta2 = 1e-2;
    return c;
}

/// Single glyphs labelled with their digit.
Dataset glyph_classes(std::uint64_t seed, std::size_t n_train, std::size_t n_test, double noise) {
    Dataset d;
    d.task = "glyphs";
    d.parts = 1;
    d.part_dim = kGlyphPixels;
    for (int k = 0; k < 10; ++k) d.label_names.push_back(std::to_string(k));
    for (std::size_t i = 0; i < n_train + n_test; ++i) {
        std::mt19937_64 rng(derive_seed(seed, i));
        const int digit = static_cast<int>(i % 10);
        d.items.push_back({render_glyph(digit, noise, rng)});
        d.labels.push_back(static_cast<std::size_t>(digit));
        d.splits.push_back(i < n_train ? Split::Train : Split::Test);
    }
    return d;
}

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("config text round trip and validation") {
    TrainConfig c;
    c.alpha = 0.5;
    c.lr_w = 0.125;
    c.seed = 77;
    c.l_cro_form = LcroForm::Literal;
    TrainConfig d;
    d.apply_text(c.to_text());
    CHECK(d.to_text() == c.to_text());
    CHECK(d.l_cro_form == LcroForm::Literal);
    d.apply_text("# comment\n  beta = 0.25  \n\n");
    CHECK(d.beta == 0.25);

    auto code = [](auto&& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::Io;
    };
    CHECK(code([] { TrainConfig x; x.set("nope", "1"); }) == Errc::InvalidConfig);
    CHECK(code([] { TrainConfig x; x.set("em_rounds", "three"); }) == Errc::InvalidConfig);
    CHECK(code([] { TrainConfig x; x.alpha = 1.5; x.validate(); }) == Errc::FactorRange);
    CHECK(code([] { TrainConfig x; x.em_rounds = 0; x.validate(); }) == Errc::InvalidConfig);
    CHECK(code([] { TrainConfig x; x.lr_w = -1; x.validate(); }) == Errc::InvalidConfig);
}

TEST_CASE("task context keeps rules of the training labels") {
    Dataset d = gen_attribute_dataset(1, 3, attribute_rules(), attribute_test_classes(), 0.0);
    TaskContext ctx = TaskContext::make(d, attribute_rules(), {}, kDefaultGroundingCap);
    CHECK(ctx.rules->rules.size() == 5);
    CHECK(ctx.constants == std::vector<std::string>{"c1"});
    CHECK(ctx.family.empty());

    Dataset digits = gen_digit_dataset(1, 10, 0, 0.1).data;
    TaskContext dc = TaskContext::make(digits, make_addition_rules(1), digit_domains(), kDefaultGroundingCap);
    CHECK(dc.family == "addition");
    CHECK(dc.graph_template.num_atoms() == 39);
}

TEST_CASE("digit items observe the sum family and bridge it") {
    Dataset digits = gen_digit_dataset(1, 10, 0, 0.1).data;
    TaskContext ctx = TaskContext::make(digits, make_addition_rules(1), digit_domains(), kDefaultGroundingCap);
    ConceptNetworkState cn = ConceptNetworkState::init(*ctx.all_rules, ctx.domains, 8, 1);
    ItemModel item = build_item_model(ctx, cn, WeightVector::from_rules(*ctx.rules), 7);
    const MlnGraph& g = item.model.graph;
    for (long v = 0; v <= 18; ++v) {
        const auto& a = g.atom(g.index_of("addition(;" + std::to_string(v) + ")"));
        REQUIRE(a.observed);
        CHECK(*a.observed == (v == 7));
    }
    CHECK(item.model.bridges.size() == 19);
    for (std::size_t i = 0; i < g.num_atoms(); ++i)
        if (g.atom(i).key.rfind("digit", 0) == 0) CHECK(g.is_free(i));

    ItemModel blind = build_item_model(ctx, cn, WeightVector::from_rules(*ctx.rules), -1);
    for (std::size_t i = 0; i < blind.model.graph.num_atoms(); ++i) CHECK(blind.model.graph.is_free(i));
}

TEST_CASE("without the symbolic terms weights stay put and the task network ignores the symbolic side") {
    Dataset d = toy_dataset(3, 16);
    TrainConfig c = small_config(3);
    c.alpha = 1.0;
    c.beta = 0.0;
    c.gamma = 0.0;
    TrainResult plain = train(c, d, toy_rules(), {});
    TrainOptions forced;
    forced.force_symbolic = true;
    TrainResult with_symbolic = train(c, d, toy_rules(), {}, forced);
    CHECK(plain.checkpoint.weights == WeightVector::from_rules(toy_rules()));
    CHECK(with_symbolic.checkpoint.weights == WeightVector::from_rules(toy_rules()));
    TaskNetworkState a = plain.checkpoint.task_net, b = with_symbolic.checkpoint.task_net;
    auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t t = 0; t < pa.size(); ++t)
        CHECK(std::memcmp(pa[t].data, pb[t].data, sizeof(double) * static_cast<std::size_t>(pa[t].size())) == 0);
}

TEST_CASE("one round with zero rates leaves the initial parameters") {
    Dataset d = toy_dataset(4, 16);
    TrainConfig c = small_config(4);
    c.em_rounds = 1;
    c.lr_theta1 = c.lr_theta2 = c.lr_w = 0.0;
    TrainResult r = train(c, d, toy_rules(), {});
    TaskNetworkState init = TaskNetworkState::init(4, 6, c.hidden, c.feature_dim, 2, c.seed);
    TaskNetworkState got = r.checkpoint.task_net;
    CHECK(got.checksum() == init.checksum());
    auto gp = got.params(), ip = init.params();
    for (std::size_t t = 0; t < gp.size(); ++t) CHECK(gp[t].map() == ip[t].map());
    ConceptNetworkState cinit = ConceptNetworkState::init(toy_rules(), {}, c.feature_dim, c.seed);
    CHECK(r.checkpoint.concepts.checksum() == cinit.checksum());
    CHECK(r.checkpoint.weights == WeightVector::from_rules(toy_rules()));
}

TEST_CASE("objective never decreases on a tiny two-rule, four-constant problem") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TrainConfig c = small_config(seed);
        c.em_rounds = 6;
        TrainResult r = train(c, toy_dataset(seed, 24), toy_rules(), {});
        REQUIRE(r.diagnostics.size() == 6);
        for (std::size_t k = 0; k < r.diagnostics.size(); ++k) {
            INFO("seed " << seed << " round " << k + 1);
            CHECK(r.diagnostics[k].min_step_gain >= 0.0);
            if (k > 0) CHECK(r.diagnostics[k].objective >= r.diagnostics[k - 1].objective);
            CHECK(std::isfinite(r.diagnostics[k].elbo));
        }
    }
}

TEST_CASE("identical seeds give byte-identical checkpoints") {
    Dataset d = toy_dataset(5, 16);
    std::string a = serialize_checkpoint(train(small_config(5), d, toy_rules(), {}).checkpoint);
    std::string b = serialize_checkpoint(train(small_config(5), d, toy_rules(), {}).checkpoint);
    CHECK(a == b);
    std::string other = serialize_checkpoint(train(small_config(6), d, toy_rules(), {}).checkpoint);
    CHECK(a != other);
}

TEST_CASE("checkpoint bytes round trip and are validated") {
    Dataset d = toy_dataset(6, 16);
    Checkpoint c = train(small_config(6), d, toy_rules(), {}).checkpoint;
    const std::string bytes = serialize_checkpoint(c);
    CHECK(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes);
    auto code = [](const std::string& s) {
        try {
            deserialize_checkpoint(s);
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::Io;
    };
    CHECK(code(bytes.substr(0, bytes.size() - 3)) == Errc::Format);
    CHECK(code(bytes + "x") == Errc::Format);
    CHECK(code("NOTACKPT" + bytes.substr(8)) == Errc::Format);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ck"), Error);
}

TEST_CASE("save and load reproduce evaluation exactly") {
    Dataset d = toy_dataset(7, 24);
    Checkpoint c = train(small_config(7), d, toy_rules(), {}).checkpoint;
    const std::string path = "trainer_roundtrip.ckpt";
    save_checkpoint(path, c);
    Checkpoint back = load_checkpoint(path);
    Metrics m1 = evaluate(c, d, EvalMode::Transductive), m2 = evaluate(back, d, EvalMode::Transductive);
    CHECK(m1.acc == m2.acc);
    CHECK(m1.tp == m2.tp);
    CHECK(m1.fp == m2.fp);
    auto p1 = predict_transductive(c, d.items), p2 = predict_transductive(back, d.items);
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].distribution == p2[i].distribution);
    std::remove(path.c_str());
}

TEST_CASE("evaluation guards") {
    Dataset d = toy_dataset(8, 16);
    Checkpoint c = train(small_config(8), d, toy_rules(), {}).checkpoint;
    RuleSet other = parse_rules("pred a/1\npred pos/1\nA: a(x) => pos(x)\n");
    try {
        evaluate(c, d, EvalMode::Transductive, &other);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::HashMismatch);
    }
    CHECK_THROWS_AS(evaluate(c, d, EvalMode::Inductive), Error);
    RuleSet unknown = parse_rules("pred shade/1\npred pos/1\nS: shade(x) => pos(x)\n");
    try {
        infer_items(c, unknown, d.items);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UntrainedPredicate);
    }
    RuleSet own = toy_rules();
    CHECK_NOTHROW(evaluate(c, d, EvalMode::Transductive, &own));
}

TEST_CASE("untrained network scores at chance on ten glyph classes") {
    Dataset d = glyph_classes(1, 10, 1000, 0.1);
    TrainConfig c;
    c.em_rounds = 1;
    c.beta = c.gamma = 0.0;
    c.lr_theta1 = c.lr_theta2 = c.lr_w = 0.0;
    c.feature_dim = 16;
    c.hidden = 16;
    // A predictor independent of training hits each class with probability 1/10;
    // averaged over 20 initialisations the spread is about 0.1 / sqrt(20).
    double mean = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        c.seed = seed;
        mean += evaluate(train(c, d, RuleSet{}, {}).checkpoint, d, EvalMode::Transductive).acc / 20.0;
    }
    CHECK(std::abs(mean - 0.1) <= 4 * std::sqrt(0.09 / 20.0));
}

TEST_CASE("noiseless separable glyphs reach the ceiling") {
    Dataset d = glyph_classes(2, 100, 50, 0.0);
    TrainConfig c;
    c.em_rounds = 30;
    c.beta = c.gamma = 0.0;
    c.lr_theta1 = 1e-2;
    c.batch = 20;
    c.feature_dim = 16;
    c.hidden = 16;
    c.seed = 3;
    CHECK(evaluate(train(c, d, RuleSet{}, {}).checkpoint, d, EvalMode::Transductive).acc == 1.0);
}

TEST_CASE("non-finite training aborts with the last good checkpoint") {
    Dataset d = toy_dataset(9, 16);
    d.items[5][2](1) = std::numeric_limits<double>::infinity();
    TrainConfig c = small_config(9);
    try {
        train(c, d, toy_rules(), {});
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.code() == Errc::Divergence);
        for (const auto& p : const_cast<Checkpoint&>(e.last_good()).task_net.params())
            CHECK(p.map().allFinite());
    }
}

} // TEST_SUITE
