#include <random>

#include "doctest.h"
#include "nesy/logic.hpp"
#include "oracles.hpp"

using namespace nesy;

namespace {

const char* kR1 = R"(pred likecat/1
pred tawny/1
pred spot/1
pred leopard/1
R1: likecat(x) & tawny(x) & spot(x) => leopard(x) :: 1.0
)";

Errc parse_code(const std::string& text) {
    try {
        parse_rules(text);
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected a parse error");
    return Errc::Syntax;
}

} // namespace

TEST_SUITE("logic") {

TEST_CASE("three-atom body rule parses") {
    RuleSet rs = parse_rules(kR1);
    REQUIRE(rs.rules.size() == 1);
    CHECK(rs.rules[0].id == "R1");
    CHECK(rs.rules[0].body.size() == 3);
    CHECK(rs.rules[0].head.size() == 1);
    CHECK(rs.rules[0].weight == 1.0);
    CHECK(rs.predicate_of(rs.rules[0].head[0]).name == "leopard");
}

TEST_CASE("addition head is a linear value expression") {
    RuleSet rs = parse_rules("pred digit/1+1 latent\npred addition/0+1\n"
                             "digit(x; d1) & digit(y; d2) => addition(; 1*d1 + 1*d2 -> z)\n");
    REQUIRE(rs.rules.size() == 1);
    const Rule& r = rs.rules[0];
    CHECK(r.weight == 1.0); // default weight
    REQUIRE(r.head[0].args.size() == 1);
    const auto* e = std::get_if<ValueExpr>(&r.head[0].args[0]);
    REQUIRE(e != nullptr);
    CHECK(e->terms == std::vector<std::pair<long, std::string>>{{1, "d1"}, {1, "d2"}});
    CHECK(e->offset == 0);
    CHECK(e->output == "z");
    CHECK(rs.predicates[0].kind == PredicateKind::Latent);
}

TEST_CASE("empty source gives an empty rule set") {
    RuleSet rs = parse_rules("");
    CHECK(rs.predicates.empty());
    CHECK(rs.rules.empty());
    CHECK(parse_rules("# only a comment\n\n").rules.empty());
}

TEST_CASE("errors carry distinct codes and positions") {
    CHECK(parse_code("pred a/1\na(x) => \n") == Errc::Syntax);
    CHECK(parse_code("pred a/1\na(x) => b(x)\n") == Errc::UndeclaredPredicate);
    CHECK(parse_code("pred a/1\npred b/1\na(x, y) => b(x)\n") == Errc::ArityMismatch);
    CHECK(parse_code("pred a/1\npred b/1\nr: a(x) => b(x)\nr: b(x) => a(x)\n") == Errc::DuplicateRuleId);
    CHECK(parse_code("pred a/0+1\npred b/0+1\na(; u) => b(; v)\n") == Errc::UnboundHeadVariable);
    try {
        parse_rules("pred a/1\n\n  a(x) => zz(x)\n");
        FAIL("no error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
        CHECK(e.column() == 11);
    }
}

TEST_CASE("a failed parse never leaks a partial rule set") {
    RuleSet before = parse_rules(kR1);
    RuleSet rs = before;
    CHECK_THROWS_AS(rs = parse_rules(std::string(kR1) + "broken =>\n"), ParseError);
    CHECK(rs == before);
}

TEST_CASE("render then parse is the identity") {
    std::mt19937_64 rng(11);
    for (int k = 0; k < 50; ++k) {
        RuleSet rs = parse_rules(oracle::random_rules_text(rng, 4, 3, k % 2 == 0));
        CHECK(parse_rules(render_rules(rs)) == rs);
    }
    RuleSet digits = parse_rules("pred digit/1+1 latent\npred addition/0+1\n"
                                 "add: digit(x; a) & digit(y; b) & digit(z; c) => addition(; 10*a + 1*b + 3 -> s) :: 0.25\n"
                                 "lit: digit(\"c1\"; 4) => addition(; 4)\n");
    CHECK(parse_rules(render_rules(digits)) == digits);
    CHECK(rules_hash(parse_rules(render_rules(digits))) == rules_hash(digits));
}

TEST_CASE("lukasiewicz examples") {
    CHECK(luk_and(1.0, 0.6) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(luk_and(0.0, 0.37) == 0.0);
    CHECK(luk_and(0.7, 0.6) == doctest::Approx(oracle::t_and(0.7, 0.6)).epsilon(1e-12));
    CHECK(luk_and(0.7, 0.6) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(luk_implies(1.0, 0.0) == 0.0);
    CHECK(luk_or(0.3, 0.5) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(luk_not(luk_not(0.42)) == doctest::Approx(0.42).epsilon(1e-12));
    CHECK_THROWS_AS(luk_and(1.2, 0.5), Error);
    CHECK_THROWS_AS(luk_not(-0.1), Error);
    CHECK_NOTHROW(luk_or(1.0 + 5e-10, 0.0));
}

TEST_CASE("boolean truth tables are classical") {
    for (int a = 0; a <= 1; ++a) {
        for (int b = 0; b <= 1; ++b) {
            CHECK(std::abs(luk_and(double(a), double(b)) - double(a && b)) <= 1e-12);
            CHECK(std::abs(luk_or(double(a), double(b)) - double(a || b)) <= 1e-12);
            CHECK(std::abs(luk_implies(double(a), double(b)) - double(!a || b)) <= 1e-12);
        }
        CHECK(luk_not(double(a)) == double(!a));
    }
}

TEST_CASE("identities and involution on random inputs") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 1000; ++k) {
        double a = u(rng), b = u(rng), c = u(rng);
        CHECK(std::abs(luk_and(a, 1.0) - a) <= 1e-12);
        CHECK(std::abs(luk_or(a, 0.0) - a) <= 1e-12);
        CHECK(std::abs(luk_not(luk_not(a)) - a) <= 1e-12);
        CHECK(std::abs(luk_and(a, b) - luk_and(b, a)) <= 1e-12);
        CHECK(std::abs(luk_and(luk_and(a, b), c) - luk_and(a, luk_and(b, c))) <= 1e-12);
        CHECK(std::abs(luk_or(a, b) - oracle::t_or(a, b)) <= 1e-12);
        CHECK(std::abs(luk_implies(a, b) - oracle::t_implies(a, b)) <= 1e-12);
    }
}

TEST_CASE("rule soft truth") {
    std::vector<double> b1{1.0, 1.0, 1.0}, h1{1.0}, h0{0.0};
    CHECK(rule_soft_truth(b1, h1) == 1.0);
    CHECK(rule_soft_truth(b1, h0) == 0.0);
    std::vector<double> b{0.9, 0.8}, h{0.5};
    const double expect = oracle::t_implies(oracle::t_and(0.9, 0.8), 0.5);
    CHECK(rule_soft_truth(b, h) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(rule_soft_truth(b, h) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("rule soft truth is monotone in head and antitone in body") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 500; ++k) {
        std::vector<double> body{u(rng), u(rng)}, head{u(rng), u(rng)};
        const double base = rule_soft_truth(body, head);
        auto hb = head;
        hb[k % 2] = std::min(1.0, hb[k % 2] + u(rng) * 0.3);
        CHECK(rule_soft_truth(body, hb) >= base - 1e-12);
        auto bb = body;
        bb[k % 2] = std::min(1.0, bb[k % 2] + u(rng) * 0.3);
        CHECK(rule_soft_truth(bb, head) <= base + 1e-12);
    }
}

TEST_CASE("expected satisfaction matches brute-force expectation") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 50; ++k) {
        std::vector<double> body{u(rng), u(rng)}, head{u(rng)};
        double e = 0.0;
        for (int m = 0; m < 8; ++m) {
            int x0 = m & 1, x1 = (m >> 1) & 1, x2 = (m >> 2) & 1;
            double p = (x0 ? body[0] : 1 - body[0]) * (x1 ? body[1] : 1 - body[1]) * (x2 ? head[0] : 1 - head[0]);
            if (!x0 || !x1 || x2) e += p;
        }
        CHECK(expected_satisfaction(body, head) == doctest::Approx(e).epsilon(1e-12));
    }
}

} // TEST_SUITE
