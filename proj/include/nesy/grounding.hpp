#ifndef NESY_GROUNDING_HPP
#define NESY_GROUNDING_HPP

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "nesy/logic.hpp"

namespace nesy {

struct Binding {
    std::map<std::string, std::size_t> entity_map;
    std::map<std::string, long> value_map;
    bool operator==(const Binding&) const = default;
};

struct GroundAtom {
    std::string key;
    std::size_t predicate = 0;
    std::vector<std::size_t> entity_args;
    std::vector<long> value_args;
    std::optional<bool> observed;
    double score = 0.5;
};

struct GroundRule {
    std::size_t rule = 0;
    Binding binding;
    std::vector<std::size_t> atoms; ///< body atoms first, then head atoms
    std::size_t body_size = 0;

    std::size_t head_size() const { return atoms.size() - body_size; }
};

/// One finite integer domain per value-typed predicate, shared by its value slots.
using ValueDomains = std::map<std::string, std::vector<long>>;

inline constexpr std::size_t kDefaultGroundingCap = 200000;

/// Ground Markov network. Atoms are deduplicated by key; adjacency is kept
/// sorted and symmetric with no self-loops.
class MlnGraph {
public:
    MlnGraph() : rules_(std::make_shared<RuleSet>()) {}
    MlnGraph(std::shared_ptr<const RuleSet> rules, std::vector<std::string> constants);

    const RuleSet& rules() const { return *rules_; }
    std::shared_ptr<const RuleSet> rules_ptr() const { return rules_; }
    const std::vector<std::string>& constants() const { return constants_; }

    std::size_t add_atom(std::size_t predicate, std::vector<std::size_t> entity_args, std::vector<long> value_args);
    std::size_t add_ground_rule(std::size_t rule, Binding binding, const std::vector<std::size_t>& body,
                                const std::vector<std::size_t>& head);

    std::size_t num_atoms() const { return atoms_.size(); }
    const std::vector<GroundAtom>& atoms() const { return atoms_; }
    const GroundAtom& atom(std::size_t i) const { return atoms_.at(i); }
    const std::vector<GroundRule>& ground_rules() const { return ground_rules_; }

    std::optional<std::size_t> find(const std::string& key) const;
    std::size_t index_of(const std::string& key) const; ///< throws UnknownAtom

    const std::vector<std::size_t>& neighbors(std::size_t atom) const { return adjacency_.at(atom); }
    const std::vector<std::size_t>& rules_of(std::size_t atom) const { return atom_to_rules_.at(atom); }

    bool is_latent(std::size_t atom) const;
    bool is_free(std::size_t atom) const { return !atoms_.at(atom).observed.has_value(); }
    std::vector<std::size_t> free_atoms() const;

    void observe(std::size_t atom, bool value);
    void clear_evidence(std::size_t atom);
    void apply_evidence(const std::map<std::string, bool>& evidence);

    /// Line-delimited debug dump: one `atom` line per atom, one `rule` line per ground rule.
    std::string dump() const;

private:
    std::string make_key(std::size_t predicate, const std::vector<std::size_t>& entity_args,
                         const std::vector<long>& value_args) const;
    void link(std::size_t a, std::size_t b);

    std::shared_ptr<const RuleSet> rules_;
    std::vector<std::string> constants_;
    std::vector<GroundAtom> atoms_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<GroundRule> ground_rules_;
    std::map<std::tuple<std::size_t, std::vector<std::size_t>, std::vector<std::size_t>>, std::size_t> rule_keys_;
    std::vector<std::vector<std::size_t>> adjacency_;
    std::vector<std::vector<std::size_t>> atom_to_rules_;
};

/// Canonical key "pred(c1,c2;v1)". Zero-entity atoms render as "pred(;v)".
std::string atom_key(const std::string& predicate, const std::vector<std::string>& entities,
                     const std::vector<long>& values, bool has_value_slots);

/// Domains of every value-typed predicate: the supplied ones plus head domains
/// derived from body domains by interval arithmetic over the head expression.
ValueDomains complete_domains(const RuleSet& rules, const ValueDomains& given);

/// Upper bound on ground atoms: sum over predicates of n^entity_arity * |dom|^value_arity.
double projected_atom_count(const RuleSet& rules, std::size_t num_constants, const ValueDomains& domains);

MlnGraph ground_rules(std::shared_ptr<const RuleSet> rules, const std::vector<std::string>& constants,
                      const ValueDomains& domains, std::size_t cap = kDefaultGroundingCap);
MlnGraph ground_rules(const RuleSet& rules, const std::vector<std::string>& constants, const ValueDomains& domains,
                      std::size_t cap = kDefaultGroundingCap);

std::vector<std::size_t> markov_blanket(const MlnGraph& graph, const std::string& key);

/// Rules whose body or head mentions a label, matched against predicate names
/// and integer value literals. Order-preserving.
RuleSet select_relevant_rules(const RuleSet& rules, const std::set<std::string>& labels);

} // namespace nesy

#endif // NESY_GROUNDING_HPP
