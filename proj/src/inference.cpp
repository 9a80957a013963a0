#include "nesy/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace nesy {

double evidence_posterior(std::span<const double> p) {
    double s = 0.0;
    for (double x : p) {
        if (!(x >= 0.0 && x <= 1.0)) throw Error(Errc::Domain, "atom probability outside [0,1]");
        if (x == 0.0) return 0.0;
        s += std::log(x);
    }
    return std::exp(s);
}

Explanation explain_transductive(const BiLevelModel& model, const Assignment& p, std::size_t label) {
    const MlnGraph& g = model.graph;
    if (static_cast<std::size_t>(p.size()) != g.num_atoms())
        throw Error(Errc::SizeMismatch, "probabilities do not cover the graph");
    Explanation ex;
    ex.prediction = model.labels.at(label);

    std::vector<bool> candidate(g.ground_rules().size(), false);
    for (const auto& e : model.bridges)
        for (std::size_t gi : g.rules_of(e.atom)) candidate[gi] = true;

    std::vector<double> xs;
    for (std::size_t gi = 0; gi < candidate.size(); ++gi) {
        if (!candidate[gi]) continue;
        const auto& gr = g.ground_rules()[gi];
        xs.clear();
        for (std::size_t a : gr.atoms) {
            double v = p(static_cast<Eigen::Index>(a));
            if (std::isnan(v)) throw Error(Errc::MissingScore, "no probability for atom '" + g.atom(a).key + "'");
            xs.push_back(v);
        }
        Candidate c;
        c.ground_rule = gi;
        c.rule = gr.rule;
        c.posterior = evidence_posterior(xs);
        c.fuzzy_truth = rule_soft_truth(std::span<const double>(xs.data(), gr.body_size),
                                        std::span<const double>(xs.data() + gr.body_size, xs.size() - gr.body_size));
        ex.ranked.push_back(c);
    }
    std::sort(ex.ranked.begin(), ex.ranked.end(), [](const Candidate& a, const Candidate& b) {
        if (a.posterior != b.posterior) return a.posterior > b.posterior;
        if (a.fuzzy_truth != b.fuzzy_truth) return a.fuzzy_truth > b.fuzzy_truth;
        if (a.rule != b.rule) return a.rule < b.rule;
        return a.ground_rule < b.ground_rule;
    });
    if (!ex.ranked.empty()) {
        ex.evidence = ex.ranked.front();
        for (std::size_t a : g.ground_rules()[ex.evidence->ground_rule].atoms)
            ex.atom_scores.push_back({g.atom(a).key, p(static_cast<Eigen::Index>(a))});
    }
    return ex;
}

std::string render_explanation(const Explanation& e, const BiLevelModel& model,
                               const std::vector<std::string>& label_names) {
    std::ostringstream out;
    out.precision(17);
    const std::size_t hard = e.prediction.hard;
    out << "prediction\t" << (hard < label_names.size() ? label_names[hard] : std::to_string(hard)) << "\t"
        << e.prediction.distribution(static_cast<Eigen::Index>(hard)) << "\n";
    if (!e.evidence) {
        out << "rule\tnone\n";
        return out.str();
    }
    const RuleSet& rs = model.graph.rules();
    out << "rule\t" << render_rule(rs, rs.rules[e.evidence->rule]) << "\n";
    for (const auto& a : e.atom_scores) out << "atom\t" << a.key << "\t" << a.p << "\n";
    out << "posterior\t" << e.evidence->posterior << "\n";
    out << "fuzzy_truth\t" << e.evidence->fuzzy_truth << "\n";
    return out.str();
}

namespace {

struct RuleInference {
    InductiveResult result;
    double product = 1.0;
};

RuleInference infer_rule(const RuleSet& rs, std::size_t ri, const ConceptNetworkState& concepts,
                         const std::vector<Eigen::VectorXd>& features) {
    const Rule& r = rs.rules[ri];
    std::vector<std::string> evars;
    auto note = [&](const Atom& a) {
        for (const Term& t : a.args) {
            if (auto v = std::get_if<EntityVariable>(&t)) {
                if (std::find(evars.begin(), evars.end(), v->name) == evars.end()) evars.push_back(v->name);
            } else if (std::holds_alternative<EntityConstant>(t)) {
                throw Error(Errc::Unsupported, "rule '" + r.id + "' names a constant; inductive inputs bind variables only");
            }
        }
    };
    for (const Atom& a : r.body) note(a);
    for (const Atom& a : r.head) note(a);
    if (features.empty() || evars.size() > features.size())
        throw Error(Errc::UnboundHeadVariable, "rule '" + r.id + "' has " + std::to_string(evars.size()) +
                                                   " entity variables but only " + std::to_string(features.size()) +
                                                   " inputs");
    if (evars.size() < features.size())
        throw Error(Errc::LengthMismatch, "rule '" + r.id + "' binds " + std::to_string(evars.size()) + " inputs, got " +
                                              std::to_string(features.size()));

    auto input_of = [&](const std::string& var) {
        return static_cast<std::size_t>(std::find(evars.begin(), evars.end(), var) - evars.begin());
    };
    std::map<std::string, long> values;
    RuleInference out;
    out.result.rule = ri;
    std::vector<double> scores;

    for (const Atom& a : r.body) {
        const auto& d = rs.predicate_of(a);
        auto sc = concepts.find(d.name);
        if (!sc) throw Error(Errc::UntrainedPredicate, "no trained concept scorer for '" + d.name + "'");
        std::vector<Eigen::VectorXd> feats;
        std::vector<std::string> names;
        for (std::size_t k = 0; k < d.entity_arity; ++k) {
            std::size_t in = input_of(std::get<EntityVariable>(a.args[k]).name);
            feats.push_back(features[in]);
            names.push_back("c" + std::to_string(in + 1));
        }
        Eigen::VectorXd out_dist = concept_forward(concepts, *sc, feats);
        const Scorer& scorer = concepts.scorers[*sc];
        PathStep step;
        if (scorer.kind == ScorerKind::Value) {
            if (d.value_arity != 1) throw Error(Errc::KindMismatch, "value scorer on '" + d.name + "' arity mismatch");
            const Term& vt = a.args[d.entity_arity];
            long value = 0;
            Eigen::Index pos = 0;
            auto bound_value = [&](long v) {
                auto it = std::lower_bound(scorer.domain.begin(), scorer.domain.end(), v);
                if (it == scorer.domain.end() || *it != v) return Eigen::Index{-1};
                return static_cast<Eigen::Index>(it - scorer.domain.begin());
            };
            if (auto vv = std::get_if<ValueVariable>(&vt); vv && !values.count(vv->name)) {
                out_dist.maxCoeff(&pos); // first maximal entry
                value = scorer.domain[static_cast<std::size_t>(pos)];
                values[vv->name] = value;
            } else {
                value = vv ? values.at(vv->name) : std::get<ValueLiteral>(vt).value;
                pos = bound_value(value);
            }
            step.label = std::to_string(value);
            step.score = pos < 0 ? 0.0 : out_dist(pos);
            step.atom = atom_key(d.name, names, {value}, true);
        } else {
            step.score = out_dist(0);
            step.label = step.score >= 0.5 ? "true" : "false";
            step.atom = atom_key(d.name, names, {}, false);
        }
        scores.push_back(step.score);
        out.product *= step.score;
        out.result.reasoning_path.push_back(std::move(step));
    }
    out.result.body_truth = luk_and_all(std::span<const double>(scores));

    const Atom& h = r.head.front();
    const auto& hd = rs.predicate_of(h);
    if (hd.value_arity > 0) {
        const Term& t = h.args[hd.entity_arity];
        long v = 0;
        if (auto e = std::get_if<ValueExpr>(&t)) {
            v = e->offset;
            for (const auto& [c, name] : e->terms) {
                auto it = values.find(name);
                if (it == values.end())
                    throw Error(Errc::UnboundHeadVariable, "head variable '" + name + "' of rule '" + r.id + "' is unbound");
                v += c * it->second;
            }
        } else if (auto vv = std::get_if<ValueVariable>(&t)) {
            auto it = values.find(vv->name);
            if (it == values.end())
                throw Error(Errc::UnboundHeadVariable, "head variable '" + vv->name + "' of rule '" + r.id + "' is unbound");
            v = it->second;
        } else {
            v = std::get<ValueLiteral>(t).value;
        }
        out.result.head_value = v;
        out.result.head_label = std::to_string(v);
    } else {
        out.result.head_label = hd.name;
    }
    return out;
}

} // namespace

InductiveResult infer_inductive(const RuleSet& rules, const ConceptNetworkState& concepts,
                                const std::vector<Eigen::VectorXd>& features) {
    if (rules.rules.empty()) throw Error(Errc::UnboundHeadVariable, "no rule to evaluate");
    std::optional<RuleInference> best;
    for (std::size_t ri = 0; ri < rules.rules.size(); ++ri) {
        RuleInference cur = infer_rule(rules, ri, concepts, features);
        if (!best || cur.result.body_truth > best->result.body_truth ||
            (cur.result.body_truth == best->result.body_truth && cur.product > best->product))
            best = std::move(cur);
    }
    return best->result;
}

double rule_confidence(const MlnGraph& graph, std::size_t rule, const Assignment& scores) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t gi = 0; gi < graph.ground_rules().size(); ++gi) {
        if (graph.ground_rules()[gi].rule != rule) continue;
        sum += ground_rule_truth(graph, gi, scores, Semantics::Lukasiewicz);
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

} // namespace nesy
