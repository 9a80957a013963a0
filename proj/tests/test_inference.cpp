#include <random>

#include "doctest.h"
#include "nesy/inference.hpp"
#include "nesy/tasks.hpp"
#include "oracles.hpp"

using namespace nesy;

namespace {

HighLevelNode scalar_node(const std::string& id, long slot) {
    HighLevelNode n;
    n.id = id;
    n.slot = slot;
    return n;
}

Assignment by_key(const MlnGraph& g, const std::map<std::string, double>& v) {
    Assignment a = Assignment::Constant(static_cast<Eigen::Index>(g.num_atoms()), 0.5);
    for (const auto& [k, x] : v) a(static_cast<Eigen::Index>(g.index_of(k))) = x;
    return a;
}

PseudoLabel uniform(Eigen::Index n) { return PseudoLabel::from_distribution(Eigen::VectorXd::Constant(n, 1.0 / double(n))); }

/// Digit scorer that reads the digit off a one-hot feature vector.
ConceptNetworkState oracle_digits() {
    RuleSet rs = parse_rules("pred digit/1+1 latent\n");
    ConceptNetworkState c = ConceptNetworkState::init(rs, digit_domains(), 10, 0);
    c.scorers[0].w = 8.0 * Eigen::MatrixXd::Identity(10, 10);
    c.scorers[0].b.setZero();
    return c;
}

Eigen::VectorXd onehot(int d) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(10);
    v(d) = 1.0;
    return v;
}

} // namespace

TEST_SUITE("inference") {

TEST_CASE("evidence posterior is the product of atom probabilities") {
    std::vector<double> a{0.9, 0.9}, b{0.9, 0.5};
    CHECK(evidence_posterior(a) == doctest::Approx(0.81).epsilon(1e-12));
    CHECK(evidence_posterior(b) == doctest::Approx(0.45).epsilon(1e-12));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 500; ++k) {
        std::vector<double> p(1 + k % 8);
        double prod = 1.0;
        for (double& x : p) {
            x = u(rng);
            prod *= x;
        }
        CHECK(std::abs(evidence_posterior(p) - prod) <= 1e-12);
    }
}

TEST_CASE("most probable candidate rule is the evidence") {
    RuleSet rs = parse_rules("pred a/1\npred b/1\npred c/1\nr1: a(x) => c(x)\nr2: b(x) => c(x)\n");
    MlnGraph g = ground_rules(rs, {"c1"}, {});
    BiLevelModel m = attach_levels({uniform(2)}, {scalar_node("c(c1)", 0)}, g, WeightVector::from_rules(rs));
    Assignment p = by_key(g, {{"a(c1)", 0.9}, {"b(c1)", 0.5}, {"c(c1)", 0.9}});
    Explanation e = explain_transductive(m, p);
    REQUIRE(e.evidence);
    CHECK(rs.rules[e.evidence->rule].id == "r1");
    REQUIRE(e.ranked.size() == 2);
    CHECK(e.ranked[0].posterior == doctest::Approx(0.81).epsilon(1e-12));
    CHECK(e.ranked[1].posterior == doctest::Approx(0.45).epsilon(1e-12));
    CHECK(e.evidence->fuzzy_truth == doctest::Approx(1.0).epsilon(1e-12));

    const std::string report = render_explanation(e, m, {"no", "yes"});
    CHECK(report.find("rule\tr1: a(x) => c(x)") != std::string::npos);
    CHECK(report.find("posterior\t0.81") != std::string::npos);

    // Scaling every candidate's posterior by one factor keeps the choice.
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int k = 0; k < 100; ++k) {
        Assignment q = by_key(g, {{"a(c1)", u(rng)}, {"b(c1)", u(rng)}, {"c(c1)", 1.0}});
        Explanation full = explain_transductive(m, q);
        q(static_cast<Eigen::Index>(g.index_of("c(c1)"))) = u(rng);
        Explanation scaled = explain_transductive(m, q);
        CHECK(full.evidence->rule == scaled.evidence->rule);
    }
}

TEST_CASE("single candidate and no candidate") {
    RuleSet rs = parse_rules("pred a/1\npred c/1\npred d/1\nr1: a(x) => c(x)\n");
    MlnGraph g = ground_rules(rs, {"c1"}, {});
    BiLevelModel m = attach_levels({uniform(2)}, {scalar_node("c(c1)", 1)}, g, WeightVector::from_rules(rs));
    Explanation e = explain_transductive(m, by_key(g, {{"a(c1)", 0.01}, {"c(c1)", 0.02}}));
    REQUIRE(e.evidence);
    CHECK(e.evidence->rule == 0);

    BiLevelModel off = attach_levels({uniform(2)}, {scalar_node("d(c1)", 1)}, g, WeightVector::from_rules(rs));
    Explanation none = explain_transductive(off, by_key(g, {}));
    CHECK_FALSE(none.evidence);
    CHECK(render_explanation(none, off, {}).find("rule\tnone") != std::string::npos);
}

TEST_CASE("scene rule with a disjunctive head") {
    RuleSet rs = parse_rules("pred laptop/1\npred nextto/2\npred keyboard/1\npred mouse/1\npred cup/1\n"
                             "scene: laptop(x) & nextto(x, y) => keyboard(y) | mouse(y)\n"
                             "clutter: cup(x) => keyboard(x)\n");
    MlnGraph g = ground_rules(rs, {"c1", "c2"}, {});
    BiLevelModel m = attach_levels({uniform(2)}, {scalar_node("keyboard(c2)", 0)}, g, WeightVector::from_rules(rs));
    Assignment p = by_key(g, {{"laptop(c1)", 0.95}, {"nextto(c1,c2)", 0.9}, {"keyboard(c2)", 0.85},
                              {"mouse(c2)", 0.2}, {"cup(c2)", 0.1}, {"laptop(c2)", 0.05}, {"nextto(c2,c1)", 0.1}});
    Explanation e = explain_transductive(m, p);
    REQUIRE(e.evidence);
    CHECK(rs.rules[e.evidence->rule].id == "scene");
    CHECK(std::abs(e.evidence->posterior - 0.95 * 0.9 * 0.85 * 0.2) <= 1e-12);
}

TEST_CASE("inductive single and multi digit heads") {
    ConceptNetworkState c = oracle_digits();
    InductiveResult r = infer_inductive(make_addition_rules(1), c, {onehot(2), onehot(3)});
    REQUIRE(r.head_value);
    CHECK(*r.head_value == 5);
    REQUIRE(r.reasoning_path.size() == 2);
    CHECK(r.reasoning_path[0].atom == "digit(c1;2)");
    CHECK(r.reasoning_path[1].label == "3");

    InductiveResult r2 = infer_inductive(make_addition_rules(2), c, {onehot(1), onehot(2), onehot(3), onehot(4)});
    CHECK(*r2.head_value == 12 + 34);
    CHECK(r2.head_label == "46");

    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> d(0, 9);
    for (int k = 0; k < 100; ++k) {
        int a = d(rng), b = d(rng), e = d(rng), f = d(rng);
        CHECK(*infer_inductive(make_addition_rules(2), c, {onehot(a), onehot(b), onehot(e), onehot(f)}).head_value ==
              10 * a + b + 10 * e + f);
    }
}

TEST_CASE("inductive result follows variable renaming") {
    ConceptNetworkState c = oracle_digits();
    RuleSet fwd = parse_rules("pred digit/1+1 latent\npred out/0+1\ndigit(x; a) & digit(y; b) => out(; 10*a + 1*b -> z)\n");
    RuleSet rev = parse_rules("pred digit/1+1 latent\npred out/0+1\ndigit(y; b) & digit(x; a) => out(; 10*a + 1*b -> z)\n");
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> d(0, 9);
    for (int k = 0; k < 50; ++k) {
        int a = d(rng), b = d(rng);
        CHECK(*infer_inductive(fwd, c, {onehot(a), onehot(b)}).head_value ==
              *infer_inductive(rev, c, {onehot(b), onehot(a)}).head_value);
    }
}

TEST_CASE("inductive errors") {
    ConceptNetworkState c = oracle_digits();
    RuleSet empty_body;
    empty_body.predicates.push_back({"out", 0, 1, PredicateKind::Observed});
    Rule r;
    r.id = "bare";
    Atom h;
    h.predicate = 0;
    h.args.push_back(ValueExpr{{{1, "d"}}, 0, "z"});
    r.head.push_back(h);
    empty_body.rules.push_back(r);
    try {
        infer_inductive(empty_body, c, {});
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UnboundHeadVariable);
    }
    RuleSet untrained = parse_rules("pred shade/1\npred dark/1\nshade(x) => dark(x)\n");
    try {
        infer_inductive(untrained, c, {onehot(1)});
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UntrainedPredicate);
    }
}

TEST_CASE("rule confidence is the mean grounding truth") {
    RuleSet rs = parse_rules("pred a/1\npred b/1\nr: a(x) => b(x)\n");
    MlnGraph g = ground_rules(rs, {"c1", "c2"}, {});
    CHECK(rule_confidence(g, 0, Assignment::Ones(4)) == 1.0);
    CHECK(rule_confidence(g, 0, by_key(g, {{"a(c1)", 1}, {"a(c2)", 1}, {"b(c1)", 0}, {"b(c2)", 0}})) == 0.0);
    // Truths 0.8 and 0.4.
    Assignment s = by_key(g, {{"a(c1)", 1.0}, {"b(c1)", 0.8}, {"a(c2)", 0.9}, {"b(c2)", 0.3}});
    const double t1 = oracle::t_implies(1.0, 0.8), t2 = oracle::t_implies(0.9, 0.3);
    CHECK(rule_confidence(g, 0, s) == doctest::Approx((t1 + t2) / 2).epsilon(1e-12));
    CHECK(rule_confidence(g, 0, s) == doctest::Approx(0.6).epsilon(1e-12));
}

} // TEST_SUITE
