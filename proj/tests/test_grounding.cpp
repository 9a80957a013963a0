#include <random>

#include "doctest.h"
#include "nesy/grounding.hpp"
#include "nesy/tasks.hpp"
#include "oracles.hpp"

using namespace nesy;

namespace {

const char* kAnimals = R"(pred likecat/1
pred tawny/1
pred spot/1
pred leopard/1
pred horselike/1
pred whiteblack/1
pred stripe/1
pred zebra/1
R1: likecat(x) & tawny(x) & spot(x) => leopard(x)
R2: horselike(x) & whiteblack(x) & stripe(x) => zebra(x)
)";

std::set<std::string> keys(const MlnGraph& g, const std::vector<std::size_t>& idx) {
    std::set<std::string> out;
    for (std::size_t i : idx) out.insert(g.atom(i).key);
    return out;
}

} // namespace

TEST_SUITE("grounding") {

TEST_CASE("R1 over two constants") {
    RuleSet rs = parse_rules(kAnimals);
    rs.rules.resize(1);
    MlnGraph g = ground_rules(rs, {"c1", "c2"}, {});
    CHECK(g.num_atoms() == 8);
    CHECK(g.ground_rules().size() == 2);
    std::set<std::string> all;
    for (const auto& a : g.atoms()) all.insert(a.key);
    CHECK(all == std::set<std::string>{"likecat(c1)", "likecat(c2)", "tawny(c1)", "tawny(c2)", "spot(c1)", "spot(c2)",
                                       "leopard(c1)", "leopard(c2)"});
    CHECK(keys(g, markov_blanket(g, "leopard(c1)")) == std::set<std::string>{"likecat(c1)", "tawny(c1)", "spot(c1)"});
}

TEST_CASE("no constants gives an empty graph") {
    MlnGraph g = ground_rules(parse_rules(kAnimals), {}, {});
    CHECK(g.num_atoms() == 0);
    CHECK(g.ground_rules().empty());
}

TEST_CASE("digit addition grounding counts") {
    RuleSet rs = make_addition_rules(1);
    MlnGraph g = ground_rules(rs, {"c1", "c2"}, digit_domains());
    std::size_t digit = 0, addition = 0;
    for (const auto& a : g.atoms()) (a.key.rfind("digit", 0) == 0 ? digit : addition)++;
    CHECK(digit == 20);
    CHECK(addition == 19);
    CHECK(g.ground_rules().size() == 100);

    ValueDomains doms = digit_domains();
    doms["addition"] = {};
    for (long v = 0; v <= 18; ++v) doms["addition"].push_back(v);
    auto brute = oracle::brute_ground(rs, {"c1", "c2"}, doms);
    CHECK(brute.atoms.size() == 39);
    CHECK(brute.rules.size() == 100);
}

TEST_CASE("grounding agrees with the brute-force enumerator on random rules") {
    std::mt19937_64 rng(21);
    for (int k = 0; k < 100; ++k) {
        RuleSet rs = parse_rules(oracle::random_rules_text(rng, 3 + k % 3, 1 + k % 4, k % 2 == 0));
        std::vector<std::string> constants;
        for (int c = 0; c < 1 + k % 4; ++c) constants.push_back("c" + std::to_string(c + 1));
        MlnGraph g = ground_rules(rs, constants, {});
        auto brute = oracle::brute_ground(rs, constants, {});
        CHECK(g.num_atoms() == brute.atoms.size());
        CHECK(g.ground_rules().size() == brute.rules.size());
        std::set<std::string> mine;
        for (const auto& a : g.atoms()) mine.insert(a.key);
        CHECK(mine == brute.atoms);
    }
}

TEST_CASE("unary atom count is distinct predicates times constants") {
    std::mt19937_64 rng(2);
    for (int k = 0; k < 30; ++k) {
        RuleSet rs = parse_rules(oracle::random_rules_text(rng, 4, 1 + k % 3, false));
        std::set<std::size_t> preds;
        for (const auto& r : rs.rules)
            for (const auto* side : {&r.body, &r.head})
                for (const auto& a : *side) preds.insert(a.predicate);
        MlnGraph g = ground_rules(rs, {"c1", "c2", "c3"}, {});
        CHECK(g.num_atoms() == preds.size() * 3);
    }
}

TEST_CASE("adjacency is symmetric and loop-free; regrounding is identical") {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 40; ++k) {
        RuleSet rs = parse_rules(oracle::random_rules_text(rng, 4, 3, true));
        MlnGraph g = ground_rules(rs, {"c1", "c2", "c3"}, {});
        for (std::size_t i = 0; i < g.num_atoms(); ++i) {
            for (std::size_t j : g.neighbors(i)) {
                CHECK(j != i);
                const auto& back = g.neighbors(j);
                CHECK(std::find(back.begin(), back.end(), i) != back.end());
            }
        }
        // Co-occurrence defines adjacency.
        std::set<std::pair<std::size_t, std::size_t>> co;
        for (const auto& gr : g.ground_rules())
            for (std::size_t a : gr.atoms)
                for (std::size_t b : gr.atoms)
                    if (a != b) co.emplace(a, b);
        std::size_t edges = 0;
        for (std::size_t i = 0; i < g.num_atoms(); ++i) edges += g.neighbors(i).size();
        CHECK(edges == co.size());

        MlnGraph h = ground_rules(rs, {"c1", "c2", "c3"}, {});
        CHECK(g.dump() == h.dump());
    }
}

TEST_CASE("markov blanket of chains and isolated atoms") {
    RuleSet rs = parse_rules("pred a/1\npred b/1\npred c/1\npred d/1\nr1: a(x) => b(x)\nr2: b(x) & c(x) => d(x)\n");
    MlnGraph g = ground_rules(rs, {"c1"}, {});
    CHECK(keys(g, markov_blanket(g, "b(c1)")) == std::set<std::string>{"a(c1)", "c(c1)", "d(c1)"});
    CHECK(keys(g, markov_blanket(g, "a(c1)")) == std::set<std::string>{"b(c1)"});
    std::size_t iso = g.add_atom(0, {0}, {}); // existing key, dedups
    CHECK(iso == g.index_of("a(c1)"));
    MlnGraph lone(std::make_shared<RuleSet>(rs), {"c1", "c2"});
    lone.add_atom(2, {1}, {});
    CHECK(markov_blanket(lone, "c(c2)").empty());
    CHECK_THROWS_AS(markov_blanket(g, "nope(c9)"), Error);
}

TEST_CASE("grounding cap reports the projected count") {
    RuleSet rs = make_addition_rules(1);
    try {
        ground_rules(rs, {"c1", "c2"}, digit_domains(), 10);
        FAIL("expected cap error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::GroundingCap);
        CHECK(std::string(e.what()).find("39") != std::string::npos);
    }
}

TEST_CASE("relevant rule selection") {
    RuleSet rs = parse_rules(kAnimals);
    auto ids = [](const RuleSet& r) {
        std::vector<std::string> v;
        for (const auto& x : r.rules) v.push_back(x.id);
        return v;
    };
    CHECK(ids(select_relevant_rules(rs, {"leopard"})) == std::vector<std::string>{"R1"});
    CHECK(select_relevant_rules(rs, {}).rules.empty());
    CHECK(ids(select_relevant_rules(rs, {"zebra", "leopard"})) == std::vector<std::string>{"R1", "R2"});
    RuleSet lit = parse_rules("pred d/1+1\npred s/0+1\nk: d(x; 5) => s(; 5)\nm: d(x; 2) => s(; 2)\n");
    CHECK(ids(select_relevant_rules(lit, {"5"})) == std::vector<std::string>{"k"});
}

} // TEST_SUITE
