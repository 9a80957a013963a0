#ifndef NESY_INFERENCE_HPP
#define NESY_INFERENCE_HPP

#include <optional>
#include <string>
#include <vector>

#include "nesy/bilevel.hpp"

namespace nesy {

struct Candidate {
    std::size_t ground_rule = 0;
    std::size_t rule = 0;
    double posterior = 0.0; ///< product of the atoms' probabilities
    double fuzzy_truth = 0.0;
};

struct AtomEvidence {
    std::string key;
    double p = 0.0;
};

struct Explanation {
    PseudoLabel prediction;
    std::optional<Candidate> evidence; ///< empty when no rule touches a bridged atom
    std::vector<AtomEvidence> atom_scores;
    std::vector<Candidate> ranked; ///< every candidate, best first
};

/// Product of the atom probabilities, taken as exp(sum log p).
double evidence_posterior(std::span<const double> p);

/// Scores every ground rule touching a bridged atom. `p` holds p(A_i | y) per
/// atom of model.graph. Order: posterior, then fuzzy truth, then rule index,
/// then grounding index.
Explanation explain_transductive(const BiLevelModel& model, const Assignment& p, std::size_t label = 0);

/// Text report: prediction, chosen rule in source syntax, per-atom p, posterior, fuzzy truth.
std::string render_explanation(const Explanation& e, const BiLevelModel& model,
                               const std::vector<std::string>& label_names);

struct PathStep {
    std::string atom;  ///< ground key, constants named after input positions
    std::string label; ///< argmax value, or "true"/"false" for scalar concepts
    double score = 0.0;
};

struct InductiveResult {
    std::size_t rule = 0;
    std::optional<long> head_value; ///< value heads
    std::string head_label;         ///< rendered head value or head predicate name
    double body_truth = 0.0;
    std::vector<PathStep> reasoning_path;
};

/// Binds the inputs positionally to each rule's entity variables (first
/// appearance order), labels every body concept by argmax and evaluates the
/// head. With several rules the one with the highest Lukasiewicz body truth wins,
/// then the higher product, then the earlier rule.
InductiveResult infer_inductive(const RuleSet& rules, const ConceptNetworkState& concepts,
                                const std::vector<Eigen::VectorXd>& features);

/// Mean Lukasiewicz truth over the groundings of `rule`; 0 when there are none.
double rule_confidence(const MlnGraph& graph, std::size_t rule, const Assignment& scores);

} // namespace nesy

#endif // NESY_INFERENCE_HPP
