#ifndef NESY_BILEVEL_HPP
#define NESY_BILEVEL_HPP

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nesy/mln.hpp"
#include "nesy/neural.hpp"

namespace nesy {

/// A high-level node names one slot of a pseudo-label (scalar node, id = atom
/// key) or a whole value family (id "pred(c1;*)", slot v - value_base).
struct HighLevelNode {
    std::string id;
    std::size_t label = 0; ///< index into BiLevelModel::labels
    long slot = -1;        ///< scalar nodes only
    long value_base = 0;   ///< value-family nodes only
    bool bridged = false;

    bool is_family() const { return slot < 0; }
};

struct BridgeEdge {
    std::size_t node = 0;
    std::size_t atom = 0;
    long slot = 0; ///< position in the node's label distribution
};

struct BiLevelModel {
    std::vector<PseudoLabel> labels;
    std::vector<HighLevelNode> nodes;
    MlnGraph graph;
    WeightVector weights;
    std::vector<BridgeEdge> bridges;
    std::vector<std::vector<std::size_t>> node_edges; ///< bridge indices per node
    std::vector<std::vector<std::size_t>> atom_edges; ///< bridge indices per atom
};

/// Bridges every node to the atoms whose identifiers match. Unmatched nodes stay
/// with bridged = false.
BiLevelModel attach_levels(std::vector<PseudoLabel> labels, std::vector<HighLevelNode> nodes, MlnGraph graph,
                           WeightVector weights);

double bridge_potential(double y, double q);
double bridge_potential(const Eigen::VectorXd& y, const Eigen::VectorXd& q);
/// phi_b of one node under atom scores `q`. Throws Unbridged for unmatched nodes.
double bridge_potential(const BiLevelModel& model, std::size_t node, const Assignment& q);

/// -sum phi_b + sum_r w_r * potential_r under Lukasiewicz scoring.
double o_logic(const BiLevelModel& model, const Assignment& a);

struct OLogicGradient {
    Eigen::VectorXd dq;                   ///< per atom
    std::vector<Eigen::VectorXd> dlabels; ///< per pseudo-label distribution
};

/// Mean-field expectation of o_logic for independent Bernoulli atoms. Scalar
/// bridges use the exact expectation; value families the plug-in distance.
double expected_o_logic(const BiLevelModel& model, const Assignment& q, OLogicGradient* grad = nullptr);

/// expected_o_logic + entropy of the free atoms. The log partition is left out,
/// so this bounds log sum_configs exp(o_logic) from below.
double elbo(const BiLevelModel& model, const Assignment& q);

/// Sequential coordinate-ascent sweeps of the mean-field posterior over `atoms`.
void mean_field_update(const BiLevelModel& model, Assignment& q, const std::vector<std::size_t>& atoms, int sweeps);

struct Factors {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
};

void check_factors(const Factors& f);

/// alpha * o_task + beta * o_logic - gamma * l_cro.
double e_step_objective(double o_task, double o_logic, double l_cro, const Factors& f);

/// Bridged slots replaced by the atom scores, then renormalized.
std::vector<PseudoLabel> revise_labels(const BiLevelModel& model, const Assignment& q);

} // namespace nesy

#endif // NESY_BILEVEL_HPP
