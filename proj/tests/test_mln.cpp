#include <random>

#include "doctest.h"
#include "nesy/mln.hpp"
#include "oracles.hpp"

using namespace nesy;

namespace {

std::vector<double> wvec(const WeightVector& w) {
    return std::vector<double>(w.values.data(), w.values.data() + w.values.size());
}

Assignment boolean(const MlnGraph& g, const std::vector<int>& x) {
    Assignment a(static_cast<Eigen::Index>(g.num_atoms()));
    for (std::size_t i = 0; i < x.size(); ++i) a(static_cast<Eigen::Index>(i)) = x[i];
    return a;
}

Assignment set_keys(const MlnGraph& g, const std::map<std::string, double>& v, double rest = 0.0) {
    Assignment a = Assignment::Constant(static_cast<Eigen::Index>(g.num_atoms()), rest);
    for (const auto& [k, x] : v) a(static_cast<Eigen::Index>(g.index_of(k))) = x;
    return a;
}

/// Random graph with at most `max_atoms` atoms.
MlnGraph random_graph(std::mt19937_64& rng, std::size_t max_atoms) {
    for (;;) {
        RuleSet rs = parse_rules(oracle::random_rules_text(rng, 3, 3, true));
        MlnGraph g = ground_rules(rs, {"c1", "c2"}, {});
        if (g.num_atoms() <= max_atoms && !g.ground_rules().empty()) return g;
    }
}

const char* kR1 = "pred likecat/1\npred tawny/1\npred spot/1\npred leopard/1\n"
                  "R1: likecat(x) & tawny(x) & spot(x) => leopard(x)\n";

} // namespace

TEST_SUITE("mln") {

TEST_CASE("rule potential counts satisfied groundings at boolean points") {
    RuleSet rs = parse_rules("pred a/1\npred b/1\nr: a(x) => b(x)\n");
    MlnGraph g = ground_rules(rs, {"c1", "c2", "c3"}, {});
    CHECK(rule_potential(g, 0, Assignment::Ones(6)) == 3.0);
    CHECK(rule_potential(g, 0, set_keys(g, {{"a(c1)", 1}, {"a(c2)", 1}, {"a(c3)", 1}})) == 0.0);

    RuleSet two = parse_rules("pred a/1\npred b/1\nr: a(x) => b(x)\n");
    MlnGraph h = ground_rules(two, {"c1", "c2"}, {});
    std::mt19937_64 rng(1);
    for (int k = 0; k < 16; ++k) {
        std::vector<int> x(h.num_atoms());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = (k >> i) & 1;
        double sat = 0;
        for (const auto& gr : h.ground_rules()) sat += oracle::clause_holds(gr, x) ? 1 : 0;
        CHECK(rule_potential(h, 0, boolean(h, x)) == sat);
    }
}

TEST_CASE("log joint examples and linearity in weights") {
    RuleSet rs = parse_rules("pred a/1\npred b/1\nr: a(x) => b(x) :: 2.0\ns: b(x) => a(x) :: 0.5\n");
    MlnGraph g = ground_rules(rs, {"c1", "c2", "c3", "c4"}, {});
    CHECK(log_joint_unnormalized(g, WeightVector::constant(rs, 0.0), Assignment::Ones(8)) == 0.0);
    // b true everywhere, a true on c1 only: r satisfied 4 times, s once.
    Assignment a = set_keys(g, {{"b(c1)", 1}, {"b(c2)", 1}, {"b(c3)", 1}, {"b(c4)", 1}, {"a(c1)", 1}});
    WeightVector w = WeightVector::from_rules(rs);
    CHECK(rule_potential(g, 0, a) == 4.0);
    CHECK(rule_potential(g, 1, a) == 1.0);
    CHECK(log_joint_unnormalized(g, w, a) == doctest::Approx(2.0 * 4 + 0.5 * 1).epsilon(1e-12));

    RuleSet single = parse_rules("pred a/1\npred b/1\nr: a(x) => b(x) :: 2.0\n");
    MlnGraph h = ground_rules(single, {"c1", "c2", "c3"}, {});
    CHECK(log_joint_unnormalized(h, WeightVector::from_rules(single), Assignment::Ones(6)) == 6.0);

    RuleSet pair = parse_rules("pred a/1\npred b/1\npred c/1\nr: a(x) => b(x) :: 1.0\ns: a(x) => c(x) :: 0.5\n");
    MlnGraph p = ground_rules(pair, {"c1", "c2", "c3", "c4"}, {});
    Assignment pa = set_keys(p, {{"b(c1)", 1}, {"b(c2)", 1}, {"a(c3)", 1}, {"a(c4)", 1}, {"c(c1)", 1},
                                 {"c(c2)", 1}, {"c(c3)", 1}, {"c(c4)", 1}});
    CHECK(rule_potential(p, 0, pa) == 2.0);
    CHECK(rule_potential(p, 1, pa) == 4.0);
    CHECK(log_joint_unnormalized(p, WeightVector::from_rules(pair), pa) == doctest::Approx(4.0).epsilon(1e-12));

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 20; ++k) {
        MlnGraph r = random_graph(rng, 12);
        WeightVector w1 = WeightVector::from_rules(r.rules());
        WeightVector w2 = w1;
        w2.values *= 2.0;
        Assignment q(static_cast<Eigen::Index>(r.num_atoms()));
        for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = u(rng);
        CHECK(log_joint_unnormalized(r, w2, q) ==
              doctest::Approx(2.0 * log_joint_unnormalized(r, w1, q)).epsilon(1e-12));
    }
}

TEST_CASE("exact partition function") {
    CHECK(partition_exact(MlnGraph(), WeightVector{}) == 0.0);

    RuleSet one = parse_rules("pred a/1\n");
    MlnGraph g(std::make_shared<RuleSet>(one), {"c1"});
    g.add_atom(0, {0}, {});
    CHECK(partition_exact(g, WeightVector::from_rules(one)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    RuleSet rs = parse_rules("pred a/1\npred b/1\npred c/1\nr: a(x) & b(x) => c(x) :: 1.0\n");
    MlnGraph h = ground_rules(rs, {"c1"}, {});
    REQUIRE(h.num_atoms() == 3);
    const auto t = oracle::enumerate_joint(h, {1.0});
    CHECK(partition_exact(h, WeightVector::from_rules(rs)) == doctest::Approx(t.log_z).epsilon(1e-12));
    CHECK(t.log_z == doctest::Approx(std::log(7 * std::exp(1.0) + 1.0)).epsilon(1e-12));

    RuleSet big = parse_rules("pred a/1\npred b/1\nr: a(x) => b(x)\n");
    MlnGraph b = ground_rules(big, {"c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9", "c10", "c11"}, {});
    CHECK_THROWS_AS(partition_exact(b, WeightVector::from_rules(big)), Error);
}

TEST_CASE("conditional examples") {
    RuleSet rs = parse_rules(std::string(kR1) + "pred other/1\n");
    MlnGraph g = ground_rules(rs, {"c1"}, {});
    g.add_atom(4, {0}, {});
    WeightVector w = WeightVector::constant(rs, 2.0);
    Assignment a = set_keys(g, {{"likecat(c1)", 1}, {"tawny(c1)", 1}, {"spot(c1)", 1}});
    CHECK(conditional(g, w, "other(c1)", a) == 0.5);
    const double expect = std::exp(2.0) / (std::exp(2.0) + 1.0);
    CHECK(conditional(g, w, "leopard(c1)", a) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(conditional(g, w, "leopard(c1)", a) == doctest::Approx(0.8808).epsilon(1e-4));
    CHECK_THROWS_AS(conditional(g, w, "leopard(c9)", a), Error);
}

TEST_CASE("local conditionals match full enumeration (blanket separation)") {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int k = 0; k < 50; ++k) {
        MlnGraph g = random_graph(rng, 12);
        WeightVector w = WeightVector::from_rules(g.rules());
        for (Eigen::Index r = 0; r < w.values.size(); ++r) w.values(r) = u(rng);
        if (k % 3 == 0) g.observe(0, true);
        const auto t = oracle::enumerate_joint(g, wvec(w));
        std::vector<int> x(g.num_atoms());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const auto& a = g.atom(i);
            x[i] = a.observed ? (*a.observed ? 1 : 0) : static_cast<int>(rng() & 1);
        }
        for (std::size_t i = 0; i < g.num_atoms(); ++i) {
            if (!g.is_free(i)) continue;
            const double local = conditional(g, w, i, boolean(g, x));
            const double blanket = oracle::conditional_from_joint(t, i, g.neighbors(i), x);
            std::vector<std::size_t> rest;
            for (std::size_t j = 0; j < g.num_atoms(); ++j)
                if (j != i) rest.push_back(j);
            const double full = oracle::conditional_from_joint(t, i, rest, x);
            CHECK(std::abs(local - blanket) <= 1e-9);
            CHECK(std::abs(local - full) <= 1e-9);
        }
    }
}

TEST_CASE("pseudo-log-likelihood") {
    RuleSet empty_rs;
    CHECK(pseudo_log_likelihood(MlnGraph(), WeightVector::from_rules(empty_rs), Assignment(0)) == 0.0);

    RuleSet one = parse_rules("pred a/1\n");
    MlnGraph g(std::make_shared<RuleSet>(one), {"c1"});
    g.add_atom(0, {0}, {});
    CHECK(pseudo_log_likelihood(g, WeightVector::from_rules(one), Assignment::Ones(1)) ==
          doctest::Approx(std::log(0.5)).epsilon(1e-12));

    RuleSet rs = parse_rules("pred a/1\npred b/1\npred c/1\nr: a(x) & b(x) => c(x) :: 1.3\n");
    MlnGraph h = ground_rules(rs, {"c1"}, {});
    WeightVector w = WeightVector::from_rules(rs);
    const auto t = oracle::enumerate_joint(h, wvec(w));
    for (int m = 0; m < 8; ++m) {
        std::vector<int> x{m & 1, (m >> 1) & 1, (m >> 2) & 1};
        double expect = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            std::vector<std::size_t> rest;
            for (std::size_t j = 0; j < 3; ++j)
                if (j != i) rest.push_back(j);
            const double p = oracle::conditional_from_joint(t, i, rest, x);
            expect += std::log(x[i] ? p : 1.0 - p);
        }
        CHECK(pseudo_log_likelihood(h, w, boolean(h, x)) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("pseudo-log-likelihood is non-positive") {
    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> u(0.0, 1.0), wu(-3.0, 3.0);
    for (int k = 0; k < 50; ++k) {
        MlnGraph g = random_graph(rng, 12);
        WeightVector w = WeightVector::from_rules(g.rules());
        for (Eigen::Index r = 0; r < w.values.size(); ++r) w.values(r) = wu(rng);
        Assignment q(static_cast<Eigen::Index>(g.num_atoms()));
        for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = u(rng);
        CHECK(pseudo_log_likelihood(g, w, q) <= 0.0);
    }
}

TEST_CASE("weight gradient examples") {
    RuleSet rs = parse_rules(kR1);
    MlnGraph g = ground_rules(rs, {"c1"}, {});
    WeightVector w = WeightVector::constant(rs, 2.0);
    Assignment q = Assignment::Ones(4);
    const double p = std::exp(2.0) / (std::exp(2.0) + 1.0);
    // Head contributes 1 - p; body atoms have a flat conditional (0.5) once the head holds.
    CHECK(weight_gradient_literal(g, w, q)(0) == doctest::Approx((1.0 - p) + 3 * 0.5).epsilon(1e-12));
    CHECK(weight_gradient(g, w, q)(0) == doctest::Approx(1.0 - p).epsilon(1e-12));
    CHECK(1.0 - p == doctest::Approx(0.1192).epsilon(1e-3));

    // Targets equal to conditionals: zero gradient.
    RuleSet lone = parse_rules("pred a/1\npred b/1\nr: a(x) => b(x)\n");
    MlnGraph h = ground_rules(lone, {"c1"}, {});
    WeightVector w0 = WeightVector::constant(lone, 0.0);
    CHECK(weight_gradient(h, w0, Assignment::Constant(2, 0.5)).norm() == 0.0);
    CHECK(weight_gradient_literal(h, w0, Assignment::Constant(2, 0.5)).norm() == 0.0);
}

TEST_CASE("weight gradient matches finite differences") {
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> u(0.02, 0.98), wu(-2.0, 2.0);
    for (int k = 0; k < 30; ++k) {
        MlnGraph g = random_graph(rng, 10);
        WeightVector w = WeightVector::from_rules(g.rules());
        for (Eigen::Index r = 0; r < w.values.size(); ++r) w.values(r) = wu(rng);
        Assignment q(static_cast<Eigen::Index>(g.num_atoms()));
        for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = u(rng);
        for (Semantics sem : {Semantics::Lukasiewicz, Semantics::Expectation}) {
            Eigen::VectorXd grad = weight_gradient(g, w, q, sem);
            for (Eigen::Index r = 0; r < w.values.size(); ++r) {
                auto f = [&](double x) {
                    WeightVector v = w;
                    v.values(r) = x;
                    return pseudo_log_likelihood(g, v, q, sem);
                };
                CHECK(oracle::rel_err(grad(r), oracle::central_difference(f, w.values(r))) <= 1e-4);
            }
        }
    }
}

TEST_CASE("m-step") {
    RuleSet rs = parse_rules("pred a/1\npred b/1\nr: a(x) => b(x)\n");
    MlnGraph g = ground_rules(rs, {"c1", "c2", "c3", "c4"}, {});
    WeightVector w = WeightVector::from_rules(rs);
    CHECK(m_step(g, w, Assignment::Ones(8), 0.05, 0) == w);

    // Every grounding satisfied: the weight climbs every step.
    double prev = w.values(0);
    WeightVector cur = w;
    for (int s = 0; s < 10; ++s) {
        cur = m_step(g, cur, Assignment::Ones(8), 0.05, 1);
        CHECK(cur.values(0) > prev);
        prev = cur.values(0);
    }
    std::vector<double> trace;
    m_step(g, w, Assignment::Ones(8), 0.5, 20, &trace);
    REQUIRE(trace.size() == 21);
    for (std::size_t s = 1; s < trace.size(); ++s) CHECK(trace[s] >= trace[s - 1]);

    // Each truth-table row once: the gradient cancels at w = 0.
    Assignment q = set_keys(g, {{"a(c1)", 1}, {"b(c1)", 1}, {"a(c2)", 1}, {"b(c3)", 1}});
    WeightVector zero = WeightVector::constant(rs, 0.0);
    WeightVector after = m_step(g, zero, q, 0.05, 10);
    CHECK(std::abs(after.values(0)) <= 0.05);
}

TEST_CASE("m-step rejects non-finite gradients") {
    RuleSet rs = parse_rules("pred a/1\npred b/1\nr: a(x) => b(x)\n");
    MlnGraph g = ground_rules(rs, {"c1"}, {});
    Assignment q = Assignment::Constant(2, std::nan(""));
    CHECK_THROWS_AS(m_step(g, WeightVector::from_rules(rs), q, 0.05, 3), Error);
}

} // TEST_SUITE
