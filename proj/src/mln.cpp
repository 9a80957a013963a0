#include "nesy/mln.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace nesy {

WeightVector WeightVector::from_rules(const RuleSet& rules) {
    WeightVector w;
    w.values.resize(static_cast<Eigen::Index>(rules.rules.size()));
    for (std::size_t i = 0; i < rules.rules.size(); ++i) {
        w.ids.push_back(rules.rules[i].id);
        w.values(static_cast<Eigen::Index>(i)) = rules.rules[i].weight;
    }
    return w;
}

WeightVector WeightVector::constant(const RuleSet& rules, double value) {
    WeightVector w = from_rules(rules);
    w.values.setConstant(value);
    return w;
}

double WeightVector::at(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return values(static_cast<Eigen::Index>(i));
    throw Error(Errc::UnknownAtom, "no weight for rule '" + id + "'");
}

void WeightVector::set(const std::string& id, double value) {
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) {
            values(static_cast<Eigen::Index>(i)) = value;
            return;
        }
    throw Error(Errc::UnknownAtom, "no weight for rule '" + id + "'");
}

Assignment graph_scores(const MlnGraph& graph) {
    Assignment a(static_cast<Eigen::Index>(graph.num_atoms()));
    for (std::size_t i = 0; i < graph.num_atoms(); ++i) a(static_cast<Eigen::Index>(i)) = graph.atom(i).score;
    return a;
}

namespace {

void check_sizes(const MlnGraph& graph, const WeightVector& w, const Assignment& a) {
    if (static_cast<std::size_t>(a.size()) != graph.num_atoms())
        throw Error(Errc::SizeMismatch, "assignment covers " + std::to_string(a.size()) + " atoms, graph has " +
                                            std::to_string(graph.num_atoms()));
    if (w.size() != graph.rules().rules.size())
        throw Error(Errc::SizeMismatch, "weight vector does not match the rule set");
}

double score_of(const MlnGraph& graph, const Assignment& a, std::size_t atom) {
    double v = a(static_cast<Eigen::Index>(atom));
    if (std::isnan(v)) throw Error(Errc::MissingScore, "no score for atom '" + graph.atom(atom).key + "'");
    return v;
}

/// Truth of ground rule g with atom `forced` (if any) replaced by `value`.
double truth_with(const MlnGraph& graph, const GroundRule& g, const Assignment& a, Semantics sem,
                  std::size_t forced, double value) {
    constexpr std::size_t kSmall = 16;
    double buf[kSmall];
    std::vector<double> big;
    double* xs = buf;
    if (g.atoms.size() > kSmall) {
        big.resize(g.atoms.size());
        xs = big.data();
    }
    for (std::size_t k = 0; k < g.atoms.size(); ++k)
        xs[k] = g.atoms[k] == forced ? value : score_of(graph, a, g.atoms[k]);
    std::span<const double> body(xs, g.body_size);
    std::span<const double> head(xs + g.body_size, g.atoms.size() - g.body_size);
    return sem == Semantics::Lukasiewicz ? rule_soft_truth(body, head) : expected_satisfaction(body, head);
}

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

} // namespace

double ground_rule_truth(const MlnGraph& graph, std::size_t ground_rule, const Assignment& a, Semantics sem) {
    return truth_with(graph, graph.ground_rules().at(ground_rule), a, sem, kNone, 0.0);
}

Eigen::VectorXd rule_potentials(const MlnGraph& graph, const Assignment& a, Semantics sem) {
    if (static_cast<std::size_t>(a.size()) != graph.num_atoms())
        throw Error(Errc::SizeMismatch, "assignment does not cover the graph");
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(graph.rules().rules.size()));
    for (const auto& g : graph.ground_rules())
        phi(static_cast<Eigen::Index>(g.rule)) += truth_with(graph, g, a, sem, kNone, 0.0);
    return phi;
}

double rule_potential(const MlnGraph& graph, std::size_t rule, const Assignment& a, Semantics sem) {
    if (rule >= graph.rules().rules.size()) throw Error(Errc::UnknownAtom, "rule index out of range");
    double sum = 0.0;
    for (const auto& g : graph.ground_rules())
        if (g.rule == rule) sum += truth_with(graph, g, a, sem, kNone, 0.0);
    return sum;
}

double log_joint_unnormalized(const MlnGraph& graph, const WeightVector& w, const Assignment& a, Semantics sem) {
    check_sizes(graph, w, a);
    return w.values.dot(rule_potentials(graph, a, sem));
}

double partition_exact(const MlnGraph& graph, const WeightVector& w, std::size_t max_free) {
    std::vector<std::size_t> free = graph.free_atoms();
    if (free.size() > max_free)
        throw Error(Errc::TooLarge, std::to_string(free.size()) + " unobserved atoms exceed the enumeration limit of " +
                                        std::to_string(max_free));
    Assignment a = graph_scores(graph);
    check_sizes(graph, w, a);
    const std::size_t n = free.size();
    const std::uint64_t total = std::uint64_t{1} << n;
    std::vector<double> terms;
    terms.reserve(total);
    double best = -std::numeric_limits<double>::infinity();
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        for (std::size_t k = 0; k < n; ++k)
            a(static_cast<Eigen::Index>(free[k])) = (mask >> k) & 1U ? 1.0 : 0.0;
        double e = log_joint_unnormalized(graph, w, a);
        terms.push_back(e);
        best = std::max(best, e);
    }
    double s = 0.0;
    for (double e : terms) s += std::exp(e - best);
    return best + std::log(s);
}

Eigen::VectorXd potential_delta(const MlnGraph& graph, std::size_t atom, const Assignment& a, Semantics sem) {
    if (atom >= graph.num_atoms()) throw Error(Errc::UnknownAtom, "atom index out of range");
    Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(graph.rules().rules.size()));
    for (std::size_t gi : graph.rules_of(atom)) {
        const auto& g = graph.ground_rules()[gi];
        d(static_cast<Eigen::Index>(g.rule)) +=
            truth_with(graph, g, a, sem, atom, 1.0) - truth_with(graph, g, a, sem, atom, 0.0);
    }
    return d;
}

double conditional(const MlnGraph& graph, const WeightVector& w, std::size_t atom, const Assignment& a,
                   Semantics sem) {
    check_sizes(graph, w, a);
    double x = w.values.dot(potential_delta(graph, atom, a, sem));
    return std::exp(log_sigmoid(x));
}

double conditional(const MlnGraph& graph, const WeightVector& w, const std::string& key, const Assignment& a,
                   Semantics sem) {
    return conditional(graph, w, graph.index_of(key), a, sem);
}

double pseudo_log_likelihood(const MlnGraph& graph, const WeightVector& w, const Assignment& q, Semantics sem) {
    check_sizes(graph, w, q);
    double sum = 0.0;
    for (std::size_t i = 0; i < graph.num_atoms(); ++i) {
        double qi = score_of(graph, q, i);
        double x = w.values.dot(potential_delta(graph, i, q, sem));
        // log P = log sigmoid(x), log(1 - P) = log sigmoid(-x)
        if (qi > 0.0) sum += qi * log_sigmoid(x);
        if (qi < 1.0) sum += (1.0 - qi) * log_sigmoid(-x);
    }
    return sum;
}

Eigen::VectorXd weight_gradient(const MlnGraph& graph, const WeightVector& w, const Assignment& q, Semantics sem) {
    check_sizes(graph, w, q);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w.size()));
    for (std::size_t i = 0; i < graph.num_atoms(); ++i) {
        if (graph.rules_of(i).empty()) continue;
        Eigen::VectorXd d = potential_delta(graph, i, q, sem);
        double p = std::exp(log_sigmoid(w.values.dot(d)));
        grad += (score_of(graph, q, i) - p) * d;
    }
    return grad;
}

Eigen::VectorXd weight_gradient_literal(const MlnGraph& graph, const WeightVector& w, const Assignment& q,
                                        Semantics sem) {
    check_sizes(graph, w, q);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w.size()));
    for (std::size_t i = 0; i < graph.num_atoms(); ++i) {
        if (graph.rules_of(i).empty()) continue;
        double p = conditional(graph, w, i, q, sem);
        double r = score_of(graph, q, i) - p;
        std::vector<bool> seen(w.size(), false);
        for (std::size_t gi : graph.rules_of(i)) {
            std::size_t rule = graph.ground_rules()[gi].rule;
            if (seen[rule]) continue;
            seen[rule] = true;
            grad(static_cast<Eigen::Index>(rule)) += r;
        }
    }
    return grad;
}

double pseudo_log_likelihood(const std::vector<PllTerm>& terms, const WeightVector& w, Semantics sem) {
    double sum = 0.0;
    for (const auto& t : terms) sum += pseudo_log_likelihood(*t.graph, w, *t.q, sem);
    return sum;
}

Eigen::VectorXd weight_gradient(const std::vector<PllTerm>& terms, const WeightVector& w, Semantics sem) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w.size()));
    for (const auto& t : terms) g += weight_gradient(*t.graph, w, *t.q, sem);
    return g;
}

WeightVector m_step(const std::vector<PllTerm>& terms, const WeightVector& w0, double lr, int steps,
                    std::vector<double>* trace, Semantics sem) {
    if (!(lr > 0.0)) throw Error(Errc::InvalidConfig, "M-step learning rate must be positive");
    WeightVector w = w0;
    double f = pseudo_log_likelihood(terms, w, sem);
    if (trace) trace->push_back(f);
    for (int s = 0; s < steps; ++s) {
        Eigen::VectorXd g = weight_gradient(terms, w, sem);
        if (!g.allFinite() || !std::isfinite(f)) {
            std::ostringstream msg;
            msg << "non-finite M-step at step " << s << ": objective " << f << ", gradient norm " << g.norm();
            throw Error(Errc::NonFinite, msg.str());
        }
        double step = lr;
        bool accepted = false;
        for (int halving = 0; halving <= 5; ++halving, step *= 0.5) {
            WeightVector trial = w;
            trial.values += step * g;
            double ft = pseudo_log_likelihood(terms, trial, sem);
            if (std::isfinite(ft) && ft >= f) {
                w = std::move(trial);
                f = ft;
                accepted = true;
                break;
            }
        }
        if (trace) trace->push_back(f);
        if (!accepted) break;
    }
    return w;
}

WeightVector m_step(const MlnGraph& graph, const WeightVector& w, const Assignment& q, double lr, int steps,
                    std::vector<double>* trace, Semantics sem) {
    return m_step(std::vector<PllTerm>{{&graph, &q}}, w, lr, steps, trace, sem);
}

std::string dump_potentials(const MlnGraph& graph, const WeightVector& w, const Assignment& a) {
    check_sizes(graph, w, a);
    Eigen::VectorXd phi = rule_potentials(graph, a);
    std::ostringstream out;
    out.precision(17);
    for (std::size_t r = 0; r < w.size(); ++r)
        out << w.ids[r] << "\t" << w.values(static_cast<Eigen::Index>(r)) << "\t" << phi(static_cast<Eigen::Index>(r))
            << "\n";
    return out.str();
}

} // namespace nesy
