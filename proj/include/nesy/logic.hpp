#ifndef NESY_LOGIC_HPP
#define NESY_LOGIC_HPP

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "nesy/error.hpp"

namespace nesy {

// ---------------------------------------------------------------------------
// Terms, atoms, rules
// ---------------------------------------------------------------------------

struct EntityVariable {
    std::string name;
    bool operator==(const EntityVariable&) const = default;
};

/// Index into RuleSet::constants.
struct EntityConstant {
    std::size_t id = 0;
    bool operator==(const EntityConstant&) const = default;
};

struct ValueVariable {
    std::string name;
    bool operator==(const ValueVariable&) const = default;
};

struct ValueLiteral {
    long value = 0;
    bool operator==(const ValueLiteral&) const = default;
};

/// Integer-linear head expression `c1*v1 + c2*v2 + ... + offset -> output`.
struct ValueExpr {
    std::vector<std::pair<long, std::string>> terms;
    long offset = 0;
    std::string output;
    bool operator==(const ValueExpr&) const = default;
};

using Term = std::variant<EntityVariable, EntityConstant, ValueVariable, ValueLiteral, ValueExpr>;

inline bool is_entity_term(const Term& t) {
    return std::holds_alternative<EntityVariable>(t) || std::holds_alternative<EntityConstant>(t);
}

enum class PredicateKind { Observed, Latent };

struct PredicateDecl {
    std::string name;
    std::size_t entity_arity = 0;
    std::size_t value_arity = 0;
    PredicateKind kind = PredicateKind::Observed;

    std::size_t arity() const { return entity_arity + value_arity; }
    bool operator==(const PredicateDecl&) const = default;
};

/// Entity slots first, then value slots.
struct Atom {
    std::size_t predicate = 0;
    std::vector<Term> args;
    bool operator==(const Atom&) const = default;
};

struct Rule {
    std::string id;
    std::vector<Atom> body;
    std::vector<Atom> head;
    double weight = 1.0;
    bool operator==(const Rule&) const = default;
};

struct RuleSet {
    std::vector<PredicateDecl> predicates;
    std::vector<Rule> rules;
    std::vector<std::string> constants;

    std::optional<std::size_t> find_predicate(std::string_view name) const;
    std::optional<std::size_t> find_rule(std::string_view id) const;
    const PredicateDecl& predicate_of(const Atom& atom) const { return predicates.at(atom.predicate); }

    bool operator==(const RuleSet&) const = default;
};

/// Parses the line-oriented rule language. Never returns a partial RuleSet.
RuleSet parse_rules(std::string_view text);

/// Canonical source text; parse_rules(render_rules(r)) == r.
std::string render_rules(const RuleSet& rules);
std::string render_rule(const RuleSet& rules, const Rule& rule);
std::string render_atom(const RuleSet& rules, const Atom& atom);

/// Checks every RuleSet invariant; throws the matching Error otherwise.
void validate(const RuleSet& rules);

/// FNV-1a over the canonical rendering; stable across runs and platforms.
std::uint64_t rules_hash(const RuleSet& rules);

// ---------------------------------------------------------------------------
// Łukasiewicz t-norm fuzzy logic
// ---------------------------------------------------------------------------

namespace fuzzy {

template <std::floating_point T>
inline constexpr T kSlack = T(1e-9);

template <std::floating_point T>
T checked(T a) {
    if (!(a >= -kSlack<T> && a <= T(1) + kSlack<T>))
        throw Error(Errc::Domain, "soft truth outside [0,1]: " + std::to_string(static_cast<double>(a)));
    return std::clamp(a, T(0), T(1));
}

} // namespace fuzzy

template <std::floating_point T>
T luk_and(T a, T b) {
    return std::max(T(0), fuzzy::checked(a) + fuzzy::checked(b) - T(1));
}

template <std::floating_point T>
T luk_or(T a, T b) {
    return std::min(T(1), fuzzy::checked(a) + fuzzy::checked(b));
}

template <std::floating_point T>
T luk_implies(T a, T b) {
    return std::min(T(1), T(1) - fuzzy::checked(a) + fuzzy::checked(b));
}

template <std::floating_point T>
T luk_not(T a) {
    return T(1) - fuzzy::checked(a);
}

/// Conjunction folded left; the empty conjunction is true.
template <std::floating_point T>
T luk_and_all(std::span<const T> xs) {
    T acc = T(1);
    for (T x : xs) acc = luk_and(acc, x);
    return acc;
}

/// Disjunction folded left; the empty disjunction is false.
template <std::floating_point T>
T luk_or_all(std::span<const T> xs) {
    T acc = T(0);
    for (T x : xs) acc = luk_or(acc, x);
    return acc;
}

/// Soft truth of `body => head`: implies(and(body), or(head)).
double rule_soft_truth(std::span<const double> body, std::span<const double> head);

/// Exact probability that a ground clause is satisfied when every atom is an
/// independent Bernoulli with the given marginal.
double expected_satisfaction(std::span<const double> body, std::span<const double> head);

} // namespace nesy

#endif // NESY_LOGIC_HPP
