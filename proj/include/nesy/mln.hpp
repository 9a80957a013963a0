#ifndef NESY_MLN_HPP
#define NESY_MLN_HPP

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nesy/grounding.hpp"

namespace nesy {

/// Soft truth per ground atom, indexed like MlnGraph::atoms(). NaN marks a missing score.
using Assignment = Eigen::VectorXd;

/// How a ground rule is scored.
/// Lukasiewicz: implies(and(body), or(head)).
/// Expectation: probability the clause holds when atoms are independent Bernoullis.
/// Both agree at Boolean assignments.
enum class Semantics { Lukasiewicz, Expectation };

struct WeightVector {
    std::vector<std::string> ids;
    Eigen::VectorXd values;

    static WeightVector from_rules(const RuleSet& rules);
    static WeightVector constant(const RuleSet& rules, double w);

    std::size_t size() const { return ids.size(); }
    double at(const std::string& id) const;
    void set(const std::string& id, double w);
    bool operator==(const WeightVector& o) const { return ids == o.ids && values == o.values; }
};

/// Current GroundAtom scores of the graph.
Assignment graph_scores(const MlnGraph& graph);

double ground_rule_truth(const MlnGraph& graph, std::size_t ground_rule, const Assignment& a,
                         Semantics sem = Semantics::Lukasiewicz);

/// Sum of soft truths over the groundings of one rule.
double rule_potential(const MlnGraph& graph, std::size_t rule, const Assignment& a,
                      Semantics sem = Semantics::Lukasiewicz);
Eigen::VectorXd rule_potentials(const MlnGraph& graph, const Assignment& a, Semantics sem = Semantics::Lukasiewicz);

double log_joint_unnormalized(const MlnGraph& graph, const WeightVector& w, const Assignment& a,
                              Semantics sem = Semantics::Lukasiewicz);

inline constexpr std::size_t kMaxEnumeratedAtoms = 20;

/// log Z by enumerating every Boolean completion of the unobserved atoms.
double partition_exact(const MlnGraph& graph, const WeightVector& w, std::size_t max_free = kMaxEnumeratedAtoms);

/// Per-rule potential with atom `i` forced to 1 minus the same with it forced to 0,
/// over the ground rules touching `i`.
Eigen::VectorXd potential_delta(const MlnGraph& graph, std::size_t atom, const Assignment& a,
                                Semantics sem = Semantics::Lukasiewicz);

/// P(A_i = 1 | Markov blanket) = sigmoid(w . delta).
double conditional(const MlnGraph& graph, const WeightVector& w, std::size_t atom, const Assignment& a,
                   Semantics sem = Semantics::Lukasiewicz);
double conditional(const MlnGraph& graph, const WeightVector& w, const std::string& key, const Assignment& a,
                   Semantics sem = Semantics::Lukasiewicz);

/// sum_i q_i log P_i + (1 - q_i) log(1 - P_i), with P_i evaluated with neighbours at q.
double pseudo_log_likelihood(const MlnGraph& graph, const WeightVector& w, const Assignment& q,
                             Semantics sem = Semantics::Lukasiewicz);

/// Exact derivative of pseudo_log_likelihood: sum_i (q_i - P_i) * delta_{i,r}.
Eigen::VectorXd weight_gradient(const MlnGraph& graph, const WeightVector& w, const Assignment& q,
                                Semantics sem = Semantics::Lukasiewicz);

/// sum over (atom, touching rule) of (q_i - P_i), without the potential-difference factor.
Eigen::VectorXd weight_gradient_literal(const MlnGraph& graph, const WeightVector& w, const Assignment& q,
                                        Semantics sem = Semantics::Lukasiewicz);

/// One graph plus its mean-field scores; the M-step objective sums over these.
struct PllTerm {
    const MlnGraph* graph = nullptr;
    const Assignment* q = nullptr;
};

double pseudo_log_likelihood(const std::vector<PllTerm>& terms, const WeightVector& w,
                             Semantics sem = Semantics::Lukasiewicz);
Eigen::VectorXd weight_gradient(const std::vector<PllTerm>& terms, const WeightVector& w,
                                Semantics sem = Semantics::Lukasiewicz);

/// Gradient ascent on the summed pseudo-log-likelihood. A step that lowers the
/// objective is halved up to 5 times and dropped if it still does. `trace`, when
/// given, receives the objective before the first and after every step.
WeightVector m_step(const std::vector<PllTerm>& terms, const WeightVector& w, double lr, int steps,
                    std::vector<double>* trace = nullptr, Semantics sem = Semantics::Lukasiewicz);
WeightVector m_step(const MlnGraph& graph, const WeightVector& w, const Assignment& q, double lr, int steps,
                    std::vector<double>* trace = nullptr, Semantics sem = Semantics::Lukasiewicz);

/// Tab-separated `rule_id<TAB>weight<TAB>potential` lines.
std::string dump_potentials(const MlnGraph& graph, const WeightVector& w, const Assignment& a);

} // namespace nesy

#endif // NESY_MLN_HPP
