#include "nesy/bilevel.hpp"

#include <cmath>
#include <unordered_map>

namespace nesy {

namespace {

std::string family_of(const GroundAtom& a, const PredicateDecl& d) {
    if (d.value_arity != 1) return {};
    auto semi = a.key.rfind(';');
    return a.key.substr(0, semi + 1) + "*)";
}

double yslot(const BiLevelModel& m, const BridgeEdge& e) {
    return m.labels[m.nodes[e.node].label].distribution(e.slot);
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double binary_entropy(double q) {
    double h = 0.0;
    if (q > 0.0) h -= q * std::log(q);
    if (q < 1.0) h -= (1.0 - q) * std::log(1.0 - q);
    return h;
}

} // namespace

BiLevelModel attach_levels(std::vector<PseudoLabel> labels, std::vector<HighLevelNode> nodes, MlnGraph graph,
                           WeightVector weights) {
    BiLevelModel m;
    m.labels = std::move(labels);
    m.nodes = std::move(nodes);
    m.graph = std::move(graph);
    m.weights = std::move(weights);
    m.node_edges.assign(m.nodes.size(), {});
    m.atom_edges.assign(m.graph.num_atoms(), {});

    std::unordered_map<std::string, std::vector<std::size_t>> families;
    const auto& preds = m.graph.rules().predicates;
    for (std::size_t i = 0; i < m.graph.num_atoms(); ++i) {
        const auto& a = m.graph.atom(i);
        std::string f = family_of(a, preds[a.predicate]);
        if (!f.empty()) families[f].push_back(i);
    }

    auto add_edge = [&](std::size_t node, std::size_t atom, long slot) {
        m.node_edges[node].push_back(m.bridges.size());
        m.atom_edges[atom].push_back(m.bridges.size());
        m.bridges.push_back({node, atom, slot});
    };

    for (std::size_t n = 0; n < m.nodes.size(); ++n) {
        auto& node = m.nodes[n];
        if (node.label >= m.labels.size()) throw Error(Errc::SizeMismatch, "node '" + node.id + "' has no label");
        const long width = static_cast<long>(m.labels[node.label].distribution.size());
        node.bridged = false;
        if (node.is_family()) {
            auto it = families.find(node.id);
            if (it == families.end()) continue;
            for (std::size_t atom : it->second) {
                long slot = m.graph.atom(atom).value_args[0] - node.value_base;
                if (slot < 0 || slot >= width) continue;
                add_edge(n, atom, slot);
                node.bridged = true;
            }
        } else {
            if (node.slot >= width) throw Error(Errc::SizeMismatch, "node '" + node.id + "' slot out of range");
            if (auto atom = m.graph.find(node.id)) {
                add_edge(n, *atom, node.slot);
                node.bridged = true;
            }
        }
    }
    return m;
}

double bridge_potential(double y, double q) { return std::abs(y - q); }

double bridge_potential(const Eigen::VectorXd& y, const Eigen::VectorXd& q) {
    if (y.size() != q.size()) throw Error(Errc::SizeMismatch, "bridge operands differ in size");
    return (y - q).norm();
}

double bridge_potential(const BiLevelModel& m, std::size_t node, const Assignment& q) {
    const auto& edges = m.node_edges.at(node);
    if (edges.empty()) throw Error(Errc::Unbridged, "node '" + m.nodes[node].id + "' has no bridged atom");
    Eigen::VectorXd y(static_cast<Eigen::Index>(edges.size())), x(static_cast<Eigen::Index>(edges.size()));
    for (std::size_t k = 0; k < edges.size(); ++k) {
        const auto& e = m.bridges[edges[k]];
        y(static_cast<Eigen::Index>(k)) = yslot(m, e);
        x(static_cast<Eigen::Index>(k)) = q(static_cast<Eigen::Index>(e.atom));
    }
    return m.nodes[node].is_family() ? bridge_potential(y, x) : bridge_potential(y(0), x(0));
}

double o_logic(const BiLevelModel& m, const Assignment& a) {
    double v = log_joint_unnormalized(m.graph, m.weights, a, Semantics::Lukasiewicz);
    for (std::size_t n = 0; n < m.nodes.size(); ++n)
        if (!m.node_edges[n].empty()) v -= bridge_potential(m, n, a);
    return v;
}

double expected_o_logic(const BiLevelModel& m, const Assignment& q, OLogicGradient* grad) {
    const MlnGraph& g = m.graph;
    if (static_cast<std::size_t>(q.size()) != g.num_atoms())
        throw Error(Errc::SizeMismatch, "assignment does not cover the graph");
    if (grad) {
        grad->dq = Eigen::VectorXd::Zero(q.size());
        grad->dlabels.clear();
        for (const auto& l : m.labels) grad->dlabels.push_back(Eigen::VectorXd::Zero(l.distribution.size()));
    }

    double total = 0.0;
    std::vector<double> x;
    for (const auto& gr : g.ground_rules()) {
        const double w = m.weights.values(static_cast<Eigen::Index>(gr.rule));
        x.resize(gr.atoms.size());
        for (std::size_t k = 0; k < gr.atoms.size(); ++k) {
            x[k] = q(static_cast<Eigen::Index>(gr.atoms[k]));
            if (std::isnan(x[k])) throw Error(Errc::MissingScore, "no score for atom '" + g.atom(gr.atoms[k]).key + "'");
        }
        // Violation probability: prod body q * prod head (1 - q).
        auto factor = [&](std::size_t k) { return k < gr.body_size ? x[k] : 1.0 - x[k]; };
        double viol = 1.0;
        for (std::size_t k = 0; k < x.size(); ++k) viol *= factor(k);
        total += w * (1.0 - viol);
        if (!grad || w == 0.0) continue;
        for (std::size_t k = 0; k < x.size(); ++k) {
            double others = 1.0;
            for (std::size_t j = 0; j < x.size(); ++j)
                if (j != k) others *= factor(j);
            // d(1 - viol)/dq_k: body atoms lower satisfaction, head atoms raise it.
            grad->dq(static_cast<Eigen::Index>(gr.atoms[k])) += w * (k < gr.body_size ? -others : others);
        }
    }

    for (std::size_t n = 0; n < m.nodes.size(); ++n) {
        const auto& edges = m.node_edges[n];
        if (edges.empty()) continue;
        const std::size_t lab = m.nodes[n].label;
        if (!m.nodes[n].is_family()) {
            const auto& e = m.bridges[edges[0]];
            double y = yslot(m, e), qa = q(static_cast<Eigen::Index>(e.atom));
            total -= qa * (1.0 - y) + (1.0 - qa) * y;
            if (grad) {
                grad->dq(static_cast<Eigen::Index>(e.atom)) -= 1.0 - 2.0 * y;
                grad->dlabels[lab](e.slot) -= 1.0 - 2.0 * qa;
            }
            continue;
        }
        double sq = 0.0;
        for (std::size_t b : edges) {
            double d = yslot(m, m.bridges[b]) - q(static_cast<Eigen::Index>(m.bridges[b].atom));
            sq += d * d;
        }
        double norm = std::sqrt(sq);
        total -= norm;
        if (grad && norm > 0.0) {
            for (std::size_t b : edges) {
                const auto& e = m.bridges[b];
                double d = (yslot(m, e) - q(static_cast<Eigen::Index>(e.atom))) / norm;
                grad->dq(static_cast<Eigen::Index>(e.atom)) += d;
                grad->dlabels[lab](e.slot) -= d;
            }
        }
    }
    return total;
}

double elbo(const BiLevelModel& m, const Assignment& q) {
    double v = expected_o_logic(m, q);
    for (std::size_t i = 0; i < m.graph.num_atoms(); ++i)
        if (m.graph.is_free(i)) v += binary_entropy(q(static_cast<Eigen::Index>(i)));
    return v;
}

void mean_field_update(const BiLevelModel& m, Assignment& q, const std::vector<std::size_t>& atoms, int sweeps) {
    for (int s = 0; s < sweeps; ++s) {
        for (std::size_t i : atoms) {
            double logit = m.weights.values.dot(potential_delta(m.graph, i, q, Semantics::Expectation));
            for (std::size_t b : m.atom_edges[i]) {
                const auto& e = m.bridges[b];
                const auto& node = m.nodes[e.node];
                if (!node.is_family()) {
                    logit += 2.0 * yslot(m, e) - 1.0;
                    continue;
                }
                double rest = 0.0, self_y = 0.0;
                for (std::size_t b2 : m.node_edges[e.node]) {
                    const auto& e2 = m.bridges[b2];
                    if (e2.atom == i) {
                        self_y = yslot(m, e2);
                        continue;
                    }
                    double d = yslot(m, e2) - q(static_cast<Eigen::Index>(e2.atom));
                    rest += d * d;
                }
                double on = std::sqrt(rest + (self_y - 1.0) * (self_y - 1.0));
                double off = std::sqrt(rest + self_y * self_y);
                logit -= on - off;
            }
            q(static_cast<Eigen::Index>(i)) = sigmoid(logit);
        }
    }
}

void check_factors(const Factors& f) {
    for (double v : {f.alpha, f.beta, f.gamma})
        if (!(v >= 0.0 && v <= 1.0))
            throw Error(Errc::FactorRange, "trade-off factor " + std::to_string(v) + " outside [0,1]");
}

double e_step_objective(double o_task, double o_logic_value, double l_cro, const Factors& f) {
    check_factors(f);
    return f.alpha * o_task + f.beta * o_logic_value - f.gamma * l_cro;
}

std::vector<PseudoLabel> revise_labels(const BiLevelModel& m, const Assignment& q) {
    std::vector<Eigen::VectorXd> dists;
    for (const auto& l : m.labels) dists.push_back(l.distribution);
    std::vector<bool> touched(m.labels.size(), false);
    for (const auto& e : m.bridges) {
        const std::size_t lab = m.nodes[e.node].label;
        dists[lab](e.slot) = q(static_cast<Eigen::Index>(e.atom));
        touched[lab] = true;
    }
    std::vector<PseudoLabel> out;
    for (std::size_t l = 0; l < dists.size(); ++l) {
        if (!touched[l]) {
            out.push_back(m.labels[l]);
            continue;
        }
        Eigen::VectorXd d = dists[l].cwiseMax(0.0);
        double s = d.sum();
        if (s > 0.0) d /= s;
        else d.setConstant(1.0 / static_cast<double>(d.size()));
        out.push_back(PseudoLabel::from_distribution(std::move(d)));
    }
    return out;
}

} // namespace nesy
