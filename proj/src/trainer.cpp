#include "nesy/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace nesy {

namespace {

std::string fmt(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size())
        throw Error(Errc::InvalidConfig, "bad value '" + text + "' for '" + key + "'");
    return v;
}

bool is_integer_label(const std::string& s) {
    if (s.empty()) return false;
    std::size_t i = s[0] == '-' ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (s[i] < '0' || s[i] > '9') return false;
    return true;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

} // namespace

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    check_factors(factors());
    if (em_rounds < 1) throw Error(Errc::InvalidConfig, "em_rounds must be at least 1");
    if (e_passes < 0 || m_steps < 0 || mf_sweeps < 0)
        throw Error(Errc::InvalidConfig, "e_passes, m_steps and mf_sweeps must be non-negative");
    for (double r : {lr_theta1, lr_theta2, lr_w})
        if (!(r >= 0.0 && std::isfinite(r))) throw Error(Errc::InvalidConfig, "learning rates must be finite and >= 0");
    if (batch < 1 || feature_dim < 1 || hidden < 1 || grounding_cap < 1)
        throw Error(Errc::InvalidConfig, "batch, feature_dim, hidden and grounding_cap must be positive");
}

std::string TrainConfig::to_text() const {
    std::ostringstream o;
    o << "alpha = " << fmt(alpha) << "\n"
      << "beta = " << fmt(beta) << "\n"
      << "gamma = " << fmt(gamma) << "\n"
      << "em_rounds = " << em_rounds << "\n"
      << "e_passes = " << e_passes << "\n"
      << "m_steps = " << m_steps << "\n"
      << "lr_theta1 = " << fmt(lr_theta1) << "\n"
      << "lr_theta2 = " << fmt(lr_theta2) << "\n"
      << "lr_w = " << fmt(lr_w) << "\n"
      << "batch = " << batch << "\n"
      << "seed = " << seed << "\n"
      << "grounding_cap = " << grounding_cap << "\n"
      << "l_cro_form = " << (l_cro_form == LcroForm::Literal ? "literal" : "conventional") << "\n"
      << "feature_dim = " << feature_dim << "\n"
      << "hidden = " << hidden << "\n"
      << "mf_sweeps = " << mf_sweeps << "\n";
    return o.str();
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (key == "alpha") alpha = parse_number<double>(key, v);
    else if (key == "beta") beta = parse_number<double>(key, v);
    else if (key == "gamma") gamma = parse_number<double>(key, v);
    else if (key == "em_rounds") em_rounds = parse_number<int>(key, v);
    else if (key == "e_passes") e_passes = parse_number<int>(key, v);
    else if (key == "m_steps") m_steps = parse_number<int>(key, v);
    else if (key == "lr_theta1") lr_theta1 = parse_number<double>(key, v);
    else if (key == "lr_theta2") lr_theta2 = parse_number<double>(key, v);
    else if (key == "lr_w") lr_w = parse_number<double>(key, v);
    else if (key == "batch") batch = parse_number<std::size_t>(key, v);
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
    else if (key == "grounding_cap") grounding_cap = parse_number<std::size_t>(key, v);
    else if (key == "feature_dim") feature_dim = parse_number<std::size_t>(key, v);
    else if (key == "hidden") hidden = parse_number<std::size_t>(key, v);
    else if (key == "mf_sweeps") mf_sweeps = parse_number<int>(key, v);
    else if (key == "l_cro_form") {
        if (v == "literal") l_cro_form = LcroForm::Literal;
        else if (v == "conventional") l_cro_form = LcroForm::Conventional;
        else throw Error(Errc::InvalidConfig, "l_cro_form must be 'literal' or 'conventional', got '" + v + "'");
    } else {
        throw Error(Errc::InvalidConfig, "unknown config key '" + key + "'");
    }
}

void TrainConfig::apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(Errc::InvalidConfig, "config line " + std::to_string(n) + ": expected 'key = value'");
        set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

// ---------------------------------------------------------------------------
// Task context and per-item models
// ---------------------------------------------------------------------------

TaskContext TaskContext::make(const std::string& task, std::size_t parts, std::size_t part_dim,
                              std::vector<std::string> label_names, const std::vector<std::string>& relevant,
                              const RuleSet& rules, const ValueDomains& domains, std::size_t cap) {
    if (parts == 0) throw Error(Errc::ShapeMismatch, "task needs at least one part");
    TaskContext ctx;
    ctx.task = task;
    ctx.parts = parts;
    ctx.part_dim = part_dim;
    ctx.label_names = std::move(label_names);
    ctx.relevant_labels = relevant;
    ctx.all_rules = std::make_shared<const RuleSet>(rules);

    const bool numeric = !ctx.label_names.empty() &&
                         std::all_of(ctx.label_names.begin(), ctx.label_names.end(), is_integer_label);
    if (numeric) {
        for (const auto& r : rules.rules) {
            for (const auto& h : r.head) {
                const auto& d = rules.predicate_of(h);
                if (d.entity_arity == 0 && d.value_arity == 1) {
                    ctx.family = d.name;
                    break;
                }
            }
            if (!ctx.family.empty()) break;
        }
    }
    std::set<std::string> wanted(relevant.begin(), relevant.end());
    if (!ctx.family.empty()) wanted.insert(ctx.family);
    ctx.rules = std::make_shared<const RuleSet>(select_relevant_rules(rules, wanted));
    ctx.domains = complete_domains(rules, domains);
    for (std::size_t k = 0; k < parts; ++k) ctx.constants.push_back("c" + std::to_string(k + 1));
    ctx.graph_template = ground_rules(ctx.rules, ctx.constants, ctx.domains, cap);
    return ctx;
}

TaskContext TaskContext::make(const Dataset& d, const RuleSet& rules, const ValueDomains& domains, std::size_t cap) {
    const bool has_train = std::find(d.splits.begin(), d.splits.end(), Split::Train) != d.splits.end();
    std::vector<bool> seen(d.label_names.size(), false);
    for (std::size_t i = 0; i < d.size(); ++i)
        if (!has_train || d.splits[i] == Split::Train) seen.at(d.labels[i]) = true;
    std::vector<std::string> relevant;
    for (std::size_t k = 0; k < seen.size(); ++k)
        if (seen[k]) relevant.push_back(d.label_names[k]);
    return make(d.task, d.parts, d.part_dim, d.label_names, relevant, rules, domains, cap);
}

namespace {

/// Part index of every graph constant, or -1.
std::vector<long> constant_parts(const TaskContext& ctx, const MlnGraph& g) {
    std::vector<long> out;
    for (const auto& c : g.constants()) {
        auto it = std::find(ctx.constants.begin(), ctx.constants.end(), c);
        out.push_back(it == ctx.constants.end() ? -1 : static_cast<long>(it - ctx.constants.begin()));
    }
    return out;
}

void observe_label(const TaskContext& ctx, MlnGraph& g, long label) {
    const RuleSet& rs = g.rules();
    const std::string& name = ctx.label_names.at(static_cast<std::size_t>(label));
    if (!ctx.family.empty()) {
        const long value = std::stol(name);
        for (std::size_t i = 0; i < g.num_atoms(); ++i) {
            const auto& a = g.atom(i);
            if (rs.predicates[a.predicate].name == ctx.family) g.observe(i, a.value_args.at(0) == value);
        }
        return;
    }
    // Class labels: head classes are one-hot; the class's own rule body fixes
    // the attribute atoms.
    std::set<std::string> classes, attrs, label_body;
    for (const auto& r : rs.rules) {
        for (const auto& h : r.head)
            if (rs.predicate_of(h).value_arity == 0) classes.insert(rs.predicate_of(h).name);
        bool own = std::any_of(r.head.begin(), r.head.end(),
                               [&](const Atom& h) { return rs.predicate_of(h).name == name; });
        for (const auto& b : r.body) {
            attrs.insert(rs.predicate_of(b).name);
            if (own) label_body.insert(rs.predicate_of(b).name);
        }
    }
    const bool has_rule = !label_body.empty();
    for (std::size_t i = 0; i < g.num_atoms(); ++i) {
        const std::string& p = rs.predicates[g.atom(i).predicate].name;
        if (classes.count(p)) g.observe(i, p == name);
        else if (has_rule && attrs.count(p)) g.observe(i, label_body.count(p) > 0);
    }
}

} // namespace

ItemModel build_item_model(const TaskContext& ctx, const ConceptNetworkState& concepts, const WeightVector& w,
                           long label) {
    MlnGraph g = ctx.graph_template;
    if (label >= 0) observe_label(ctx, g, label);

    const auto L = static_cast<Eigen::Index>(ctx.label_names.size());
    std::vector<PseudoLabel> labels{PseudoLabel::from_distribution(Eigen::VectorXd::Constant(L, 1.0 / double(L)))};
    std::vector<HighLevelNode> nodes;
    if (!ctx.family.empty()) {
        HighLevelNode n;
        n.id = ctx.family + "(;*)";
        n.slot = -1;
        n.value_base = 0;
        nodes.push_back(n);
    } else {
        for (std::size_t k = 0; k < ctx.label_names.size(); ++k) {
            std::string id = atom_key(ctx.label_names[k], {ctx.constants[0]}, {}, false);
            if (!g.find(id)) continue;
            HighLevelNode n;
            n.id = id;
            n.slot = static_cast<long>(k);
            nodes.push_back(n);
        }
    }
    if (!ctx.family.empty()) {
        // Family slots are label indices, so the base must map value -> index.
        nodes[0].value_base = std::stol(ctx.label_names[0]);
    }

    ItemModel item;
    item.model = attach_levels(std::move(labels), std::move(nodes), std::move(g), w);
    const MlnGraph& graph = item.model.graph;
    const RuleSet& rs = graph.rules();
    const auto parts = constant_parts(ctx, graph);

    std::map<std::pair<std::size_t, std::vector<std::size_t>>, std::size_t> eval_index;
    item.atom_eval.assign(graph.num_atoms(), -1);
    item.atom_entry.assign(graph.num_atoms(), 0);
    for (std::size_t i = 0; i < graph.num_atoms(); ++i) {
        const auto& a = graph.atom(i);
        auto sc = concepts.find(rs.predicates[a.predicate].name);
        if (!sc) continue;
        const Scorer& scorer = concepts.scorers[*sc];
        std::vector<std::size_t> cs;
        bool ok = a.entity_args.size() == scorer.entity_arity;
        for (std::size_t c : a.entity_args) {
            if (parts.at(c) < 0) ok = false;
            else cs.push_back(static_cast<std::size_t>(parts[c]));
        }
        Eigen::Index entry = 0;
        if (scorer.kind == ScorerKind::Value) {
            auto it = std::lower_bound(scorer.domain.begin(), scorer.domain.end(), a.value_args.at(0));
            if (it == scorer.domain.end() || *it != a.value_args[0]) ok = false;
            else entry = it - scorer.domain.begin();
        }
        if (!ok) continue;
        auto key = std::make_pair(*sc, cs);
        auto [it, fresh] = eval_index.try_emplace(key, item.evals.size());
        if (fresh) item.evals.push_back({*sc, cs});
        item.atom_eval[i] = static_cast<long>(it->second);
        item.atom_entry[i] = entry;
    }

    item.targets.assign(item.evals.size(), Eigen::VectorXd());
    std::vector<std::vector<std::size_t>> members(item.evals.size());
    for (std::size_t i = 0; i < graph.num_atoms(); ++i)
        if (item.atom_eval[i] >= 0) members[static_cast<std::size_t>(item.atom_eval[i])].push_back(i);
    for (std::size_t e = 0; e < item.evals.size(); ++e) {
        const Scorer& scorer = concepts.scorers[item.evals[e].scorer];
        const bool all_observed = std::all_of(members[e].begin(), members[e].end(),
                                              [&](std::size_t i) { return !graph.is_free(i); });
        if (!all_observed) continue;
        if (scorer.kind != ScorerKind::Value) {
            item.targets[e] = Eigen::VectorXd::Constant(1, *graph.atom(members[e][0]).observed ? 1.0 : 0.0);
            continue;
        }
        Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scorer.domain.size()));
        for (std::size_t i : members[e])
            if (*graph.atom(i).observed) t(item.atom_entry[i]) = 1.0;
        if (t.sum() == 1.0) item.targets[e] = t;
    }

    for (std::size_t i = 0; i < graph.num_atoms(); ++i) {
        if (!graph.is_free(i)) continue;
        const bool bridged = !item.model.atom_edges[i].empty();
        if (item.atom_eval[i] < 0 || (bridged && graph.is_latent(i))) item.refinable.push_back(i);
    }
    return item;
}

Assignment item_scores(const ItemModel& item, const ConceptNetworkState& concepts,
                       const std::vector<Eigen::VectorXd>& features, int mf_sweeps,
                       std::vector<Eigen::VectorXd>* eval_outputs, ConceptTape* tape) {
    const MlnGraph& g = item.model.graph;
    std::vector<Eigen::VectorXd> outs;
    for (const auto& ev : item.evals) {
        std::vector<Eigen::VectorXd> feats;
        for (std::size_t c : ev.constants) {
            if (c >= features.size()) throw Error(Errc::MissingFeature, "no feature vector for part " + std::to_string(c));
            feats.push_back(features[c]);
        }
        outs.push_back(concept_forward(concepts, ev.scorer, feats, tape));
    }
    Assignment q = Assignment::Constant(static_cast<Eigen::Index>(g.num_atoms()), kNaN);
    std::vector<bool> refine(g.num_atoms(), false);
    for (std::size_t i : item.refinable) refine[i] = true;
    for (std::size_t i = 0; i < g.num_atoms(); ++i) {
        const auto& a = g.atom(i);
        if (a.observed) q(static_cast<Eigen::Index>(i)) = *a.observed ? 1.0 : 0.0;
        else if (refine[i]) q(static_cast<Eigen::Index>(i)) = 0.5;
        else q(static_cast<Eigen::Index>(i)) = outs[static_cast<std::size_t>(item.atom_eval[i])](item.atom_entry[i]);
    }
    mean_field_update(item.model, q, item.refinable, mf_sweeps);
    if (eval_outputs) *eval_outputs = std::move(outs);
    return q;
}

std::string format_diagnostics(const RoundDiagnostics& d) {
    std::ostringstream o;
    o << "round=" << d.round << "\to_task=" << fmt(d.o_task) << "\to_logic=" << fmt(d.o_logic)
      << "\tl_cro=" << fmt(d.l_cro) << "\tmean_phi_b=" << fmt(d.mean_phi_b) << "\tobjective=" << fmt(d.objective)
      << "\ttrain_acc=" << fmt(d.train_acc) << "\telbo=" << (std::isnan(d.elbo) ? std::string("nan") : fmt(d.elbo))
      << "\tmin_step_gain=" << fmt(d.min_step_gain) << "\trejected_steps=" << d.rejected_steps;
    return o.str();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct BatchResult {
    double objective = 0.0, o_task = 0.0, o_logic = 0.0, l_cro = 0.0;
    double phi_sum = 0.0;
    std::size_t phi_count = 0;
    std::vector<std::size_t> predictions; ///< NRM argmax (revision would see the label evidence)
    TaskNetworkState gtask;
    ConceptNetworkState gconcepts;
};

double log_softmax_at(const Eigen::VectorXd& logits, std::size_t k) {
    const double m = logits.maxCoeff();
    return logits(static_cast<Eigen::Index>(k)) - m - std::log((logits.array() - m).exp().sum());
}

class Trainer {
public:
    Trainer(const TrainConfig& cfg, const TaskContext& ctx, const Dataset& train, bool symbolic)
        : cfg_(cfg), ctx_(ctx), data_(train), symbolic_(symbolic), adam_task_(cfg.lr_theta1),
          adam_concepts_(cfg.lr_theta2) {
        task_net = TaskNetworkState::init(ctx.parts, ctx.part_dim, cfg.hidden, cfg.feature_dim,
                                          ctx.label_names.size(), cfg.seed);
        concepts = ConceptNetworkState::init(*ctx.all_rules, ctx.domains, cfg.feature_dim, cfg.seed);
        weights = WeightVector::from_rules(*ctx.rules);
        if (symbolic_)
            for (std::size_t i = 0; i < data_.size(); ++i)
                items_.push_back(build_item_model(ctx_, concepts, weights, static_cast<long>(data_.labels[i])));
    }

    /// Mean objective over `idx`; gradients of the objective when `grads`.
    BatchResult run(const std::vector<std::size_t>& idx, bool grads) {
        BatchResult res;
        const double B = static_cast<double>(idx.size());
        const double a = cfg_.alpha, b = cfg_.beta, c = cfg_.gamma;
        std::vector<Input> batch;
        for (std::size_t i : idx) batch.push_back(data_.items[i]);
        TaskTape ttape;
        TaskOutput out = task_forward(task_net, batch, grads ? &ttape : nullptr);

        const bool concept_grads = grads && symbolic_ && (b != 0.0 || c != 0.0);
        ConceptTape ctape;
        std::vector<Eigen::VectorXd> dout;
        std::vector<std::pair<std::size_t, std::size_t>> owner; // (batch pos, item eval)
        TaskAdjoint adj;
        if (grads) adj.dlogits.resize(idx.size());

        for (std::size_t k = 0; k < idx.size(); ++k) {
            const std::size_t y = data_.labels[idx[k]];
            const Eigen::VectorXd& p = out.labels[k].distribution;
            const double lp = log_softmax_at(out.logits[k], y);
            res.o_task += lp / B;
            double obj = a * lp;
            std::size_t pred = out.labels[k].hard;
            OLogicGradient og;
            if (symbolic_) {
                ItemModel& item = items_[idx[k]];
                item.model.labels[0] = out.labels[k];
                std::vector<Eigen::VectorXd> outs;
                const std::size_t offset = ctape.evals.size();
                Assignment q = item_scores(item, concepts, out.features[k], cfg_.mf_sweeps, &outs,
                                           concept_grads ? &ctape : nullptr);
                const double ol = expected_o_logic(item.model, q, grads && b != 0.0 ? &og : nullptr);
                std::vector<CroTerm> terms;
                std::vector<std::size_t> term_eval;
                for (std::size_t e = 0; e < item.evals.size(); ++e) {
                    if (item.targets[e].size() == 0) continue;
                    terms.push_back({outs[e], item.targets[e]});
                    term_eval.push_back(e);
                }
                std::vector<Eigen::VectorXd> dcro;
                const double lc =
                    terms.empty() ? 0.0
                                  : concept_cross_entropy(terms, cfg_.l_cro_form, grads && c != 0.0 ? &dcro : nullptr);
                res.o_logic += ol / B;
                res.l_cro += lc / B;
                obj += b * ol - c * lc;
                for (std::size_t n = 0; n < item.model.nodes.size(); ++n) {
                    if (item.model.node_edges[n].empty()) continue;
                    res.phi_sum += bridge_potential(item.model, n, q);
                    ++res.phi_count;
                }

                if (concept_grads) {
                    for (std::size_t e = 0; e < item.evals.size(); ++e) {
                        dout.push_back(Eigen::VectorXd::Zero(outs[e].size()));
                        owner.emplace_back(k, e);
                    }
                    if (b != 0.0) {
                        std::vector<bool> refine(item.model.graph.num_atoms(), false);
                        for (std::size_t i : item.refinable) refine[i] = true;
                        for (std::size_t i = 0; i < item.model.graph.num_atoms(); ++i) {
                            if (item.atom_eval[i] < 0 || refine[i] || !item.model.graph.is_free(i)) continue;
                            dout[offset + static_cast<std::size_t>(item.atom_eval[i])](item.atom_entry[i]) +=
                                b * og.dq(static_cast<Eigen::Index>(i)) / B;
                        }
                    }
                    if (c != 0.0)
                        for (std::size_t t = 0; t < term_eval.size(); ++t) dout[offset + term_eval[t]] -= c * dcro[t] / B;
                }
            }
            res.objective += obj / B;
            res.predictions.push_back(pred);
            if (grads) {
                Eigen::VectorXd d = -p;
                d(static_cast<Eigen::Index>(y)) += 1.0;
                adj.dlogits[k] = (a / B) * d;
                if (symbolic_ && b != 0.0) adj.dlogits[k] += (b / B) * softmax_backward(p, og.dlabels[0]);
            }
        }

        if (grads) {
            res.gconcepts = concepts.zeros_like();
            if (concept_grads && !ctape.evals.empty()) {
                ConceptGradient cg = concept_backward(concepts, ctape, dout);
                res.gconcepts = std::move(cg.params);
                adj.dfeatures.assign(idx.size(), std::vector<Eigen::VectorXd>(
                                                     ctx_.parts, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(
                                                                     cfg_.feature_dim))));
                for (std::size_t g = 0; g < owner.size(); ++g) {
                    const auto [k, e] = owner[g];
                    const auto& ev = items_[idx[k]].evals[e];
                    for (std::size_t j = 0; j < ev.constants.size(); ++j)
                        adj.dfeatures[k][ev.constants[j]] += cg.dinputs[g][j];
                }
            }
            res.gtask = task_backward(task_net, ttape, adj);
        }
        return res;
    }

    /// Forward-only pass over the whole training set, in batches.
    BatchResult run_all() {
        BatchResult total;
        const std::size_t n = data_.size();
        for (std::size_t s = 0; s < n; s += cfg_.batch) {
            std::vector<std::size_t> idx;
            for (std::size_t i = s; i < std::min(n, s + cfg_.batch); ++i) idx.push_back(i);
            BatchResult r = run(idx, false);
            const double f = static_cast<double>(idx.size()) / static_cast<double>(n);
            total.objective += f * r.objective;
            total.o_task += f * r.o_task;
            total.o_logic += f * r.o_logic;
            total.l_cro += f * r.l_cro;
            total.phi_sum += r.phi_sum;
            total.phi_count += r.phi_count;
            total.predictions.insert(total.predictions.end(), r.predictions.begin(), r.predictions.end());
        }
        return total;
    }

    /// One E-step ascent with backtracking. Returns the objective gain, or NaN when rejected.
    double step(const std::vector<std::size_t>& idx, double f0, BatchResult& grads) {
        const TaskNetworkState task0 = task_net;
        const ConceptNetworkState concepts0 = concepts;
        const Adam adam_task0 = adam_task_, adam_concepts0 = adam_concepts_;
        double scale = 1.0;
        for (int attempt = 0; attempt <= 5; ++attempt, scale *= 0.5) {
            task_net = task0;
            concepts = concepts0;
            adam_task_ = adam_task0;
            adam_concepts_ = adam_concepts0;
            adam_task_.ascend(task_net.params(), grads.gtask.params(), scale);
            if (symbolic_) adam_concepts_.ascend(concepts.params(), grads.gconcepts.params(), scale);
            const double f1 = run(idx, false).objective;
            if (std::isfinite(f1) && f1 >= f0) return f1 - f0;
        }
        // Rejected: parameters revert, but the moments keep this gradient so
        // the next attempt does not replay the same step.
        task_net = task0;
        concepts = concepts0;
        adam_task_ = adam_task0;
        adam_concepts_ = adam_concepts0;
        TaskNetworkState scratch_task = task0;
        ConceptNetworkState scratch_concepts = concepts0;
        adam_task_.ascend(scratch_task.params(), grads.gtask.params(), 0.0);
        if (symbolic_) adam_concepts_.ascend(scratch_concepts.params(), grads.gconcepts.params(), 0.0);
        return kNaN;
    }

    /// Mean-field scores of every training item under the current parameters.
    std::vector<Assignment> all_scores() {
        std::vector<Assignment> qs;
        const std::size_t n = data_.size();
        for (std::size_t s = 0; s < n; s += cfg_.batch) {
            std::vector<Input> batch(data_.items.begin() + static_cast<long>(s),
                                     data_.items.begin() + static_cast<long>(std::min(n, s + cfg_.batch)));
            TaskOutput out = task_forward(task_net, batch);
            for (std::size_t k = 0; k < batch.size(); ++k) {
                ItemModel& item = items_[s + k];
                item.model.labels[0] = out.labels[k];
                qs.push_back(item_scores(item, concepts, out.features[k], cfg_.mf_sweeps));
            }
        }
        return qs;
    }

    void m_step_and_revise() {
        if (!symbolic_ || cfg_.beta == 0.0) return;
        std::vector<Assignment> qs = all_scores();
        if (cfg_.lr_w > 0.0 && cfg_.m_steps > 0 && weights.size() > 0) {
            std::vector<PllTerm> terms;
            for (std::size_t i = 0; i < items_.size(); ++i) terms.push_back({&items_[i].model.graph, &qs[i]});
            weights = m_step(terms, weights, cfg_.lr_w, cfg_.m_steps);
            for (auto& item : items_) item.model.weights = weights;
        }
        // Revised labels become L_cro targets of latent bridged scored atoms.
        for (std::size_t i = 0; i < items_.size(); ++i) {
            ItemModel& item = items_[i];
            posterior_targets(item, qs[i]);
            const PseudoLabel revised = revise_labels(item.model, qs[i])[0];
            for (const auto& e : item.model.bridges) {
                const long ev = item.atom_eval[e.atom];
                if (ev < 0 || !item.model.graph.is_latent(e.atom)) continue;
                if (concepts.scorers[item.evals[static_cast<std::size_t>(ev)].scorer].outputs() != 1) continue;
                item.targets[static_cast<std::size_t>(ev)] = Eigen::VectorXd::Constant(1, revised.distribution(e.slot));
            }
        }
    }

    /// Latent, unbridged scored atoms: concept prior times the evidence factor
    /// exp(w . delta) of the network, normalised per eval.
    void posterior_targets(ItemModel& item, const Assignment& q) const {
        const MlnGraph& g = item.model.graph;
        std::vector<Eigen::VectorXd> logits(item.evals.size());
        std::vector<bool> eligible(item.evals.size(), true);
        for (std::size_t i = 0; i < g.num_atoms(); ++i) {
            const long ev = item.atom_eval[i];
            if (ev < 0) continue;
            const auto e = static_cast<std::size_t>(ev);
            if (!g.is_free(i) || !g.is_latent(i) || !item.model.atom_edges[i].empty()) {
                eligible[e] = false;
                continue;
            }
            if (logits[e].size() == 0)
                logits[e] = Eigen::VectorXd::Constant(
                    static_cast<Eigen::Index>(concepts.scorers[item.evals[e].scorer].outputs()), -kInf);
            const double prior = q(static_cast<Eigen::Index>(i));
            const double shift = weights.values.dot(potential_delta(g, i, q, Semantics::Expectation));
            logits[e](item.atom_entry[i]) =
                logits[e].size() == 1 ? std::log(prior) - std::log1p(-prior) + shift : std::log(prior) + shift;
        }
        for (std::size_t e = 0; e < item.evals.size(); ++e) {
            if (!eligible[e] || logits[e].size() == 0) continue;
            if (logits[e].size() == 1) {
                item.targets[e] = Eigen::VectorXd::Constant(1, 1.0 / (1.0 + std::exp(-logits[e](0))));
            } else if (std::isfinite(logits[e].maxCoeff())) {
                item.targets[e] = softmax(logits[e]);
            }
        }
    }

    double mean_elbo() {
        if (!symbolic_ || items_.empty()) return kNaN;
        std::vector<Assignment> qs = all_scores();
        double total = 0.0;
        for (std::size_t i = 0; i < items_.size(); ++i) {
            if (items_[i].model.graph.free_atoms().size() > 12) return kNaN;
            total += elbo(items_[i].model, qs[i]);
        }
        return total / static_cast<double>(items_.size());
    }

    std::vector<std::string> trained_predicates() const {
        std::set<std::string> used;
        for (const auto& r : ctx_.rules->rules) {
            for (const auto& a : r.body) used.insert(ctx_.rules->predicate_of(a).name);
            for (const auto& a : r.head) used.insert(ctx_.rules->predicate_of(a).name);
        }
        std::vector<std::string> out;
        for (const auto& sc : concepts.scorers)
            if (used.count(sc.predicate)) out.push_back(sc.predicate);
        return out;
    }

    TaskNetworkState task_net;
    ConceptNetworkState concepts;
    WeightVector weights;

private:
    const TrainConfig& cfg_;
    const TaskContext& ctx_;
    const Dataset& data_;
    bool symbolic_;
    std::vector<ItemModel> items_;
    Adam adam_task_, adam_concepts_;
};

Checkpoint snapshot(const TrainConfig& cfg, const TaskContext& ctx, const RuleSet& rules, const Trainer& t, int round,
                    const std::vector<RoundDiagnostics>& diags, std::vector<std::string> trained) {
    Checkpoint c;
    c.config = cfg;
    c.round = round;
    c.rules_text = render_rules(rules);
    c.rules_hash = rules_hash(rules);
    c.task = ctx.task;
    c.parts = ctx.parts;
    c.part_dim = ctx.part_dim;
    c.label_names = ctx.label_names;
    c.domains = ctx.domains;
    c.relevant_labels = ctx.relevant_labels;
    c.trained_predicates = std::move(trained);
    c.task_net = t.task_net;
    c.concepts = t.concepts;
    c.weights = t.weights;
    c.diagnostics = diags;
    return c;
}

} // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, const RuleSet& rules, const ValueDomains& domains,
                  const TrainOptions& options) {
    cfg.validate();
    validate(rules);
    const bool has_train = std::find(data.splits.begin(), data.splits.end(), Split::Train) != data.splits.end();
    const Dataset train_set = has_train ? data.subset(Split::Train) : data;
    if (train_set.size() == 0) throw Error(Errc::InvalidConfig, "no training items");
    const TaskContext ctx = TaskContext::make(data, rules, domains, cfg.grounding_cap);

    const bool symbolic = cfg.beta > 0.0 || cfg.gamma > 0.0 || options.force_symbolic;
    Trainer t(cfg, ctx, train_set, symbolic);
    const auto trained = t.trained_predicates();
    TrainResult result;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int round = 1; round <= cfg.em_rounds; ++round) {
        Checkpoint last_good = snapshot(cfg, ctx, rules, t, round - 1, result.diagnostics, trained);
        std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(round)));
        std::shuffle(order.begin(), order.end(), rng);

        RoundDiagnostics d;
        d.round = round;
        d.min_step_gain = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < order.size(); s += cfg.batch) {
            std::vector<std::size_t> idx(order.begin() + static_cast<long>(s),
                                         order.begin() + static_cast<long>(std::min(order.size(), s + cfg.batch)));
            for (int pass = 0; pass < cfg.e_passes; ++pass) {
                BatchResult g = t.run(idx, true);
                if (!std::isfinite(g.objective))
                    throw DivergenceError("objective became non-finite in round " + std::to_string(round),
                                          std::move(last_good));
                const double gain = t.step(idx, g.objective, g);
                if (std::isnan(gain)) ++d.rejected_steps;
                else d.min_step_gain = std::min(d.min_step_gain, gain);
            }
        }
        if (!std::isfinite(d.min_step_gain)) d.min_step_gain = 0.0;

        try {
            t.m_step_and_revise();
        } catch (const Error& e) {
            if (e.code() != Errc::NonFinite) throw;
            throw DivergenceError(std::string("weight learning diverged: ") + e.what(), std::move(last_good));
        }

        BatchResult all = t.run_all();
        if (!std::isfinite(all.objective))
            throw DivergenceError("objective became non-finite in round " + std::to_string(round), std::move(last_good));
        d.o_task = all.o_task;
        d.o_logic = all.o_logic;
        d.l_cro = all.l_cro;
        d.objective = all.objective;
        d.mean_phi_b = all.phi_count ? all.phi_sum / static_cast<double>(all.phi_count) : 0.0;
        d.train_acc = accuracy(all.predictions, train_set.labels, std::max<std::size_t>(ctx.label_names.size(), 3)).acc;
        d.elbo = t.mean_elbo();
        result.diagnostics.push_back(d);
        if (options.on_round) options.on_round(d);
    }
    result.checkpoint = snapshot(cfg, ctx, rules, t, cfg.em_rounds, result.diagnostics, trained);
    return result;
}

// ---------------------------------------------------------------------------
// Using a checkpoint
// ---------------------------------------------------------------------------

RuleSet checkpoint_rules(const Checkpoint& c) {
    RuleSet rs = parse_rules(c.rules_text);
    if (rules_hash(rs) != c.rules_hash) throw Error(Errc::HashMismatch, "checkpoint rules do not match their hash");
    return rs;
}

TaskContext checkpoint_context(const Checkpoint& c) {
    return TaskContext::make(c.task, c.parts, c.part_dim, c.label_names, c.relevant_labels, checkpoint_rules(c),
                             c.domains, c.config.grounding_cap);
}

namespace {

std::vector<PseudoLabel> predict_with(const Checkpoint& c, const TaskContext& ctx, const std::vector<Input>& items) {
    TaskOutput out = task_forward(c.task_net, items);
    if (c.config.beta == 0.0) return out.labels;
    std::vector<PseudoLabel> res;
    for (std::size_t k = 0; k < items.size(); ++k) {
        ItemModel item = build_item_model(ctx, c.concepts, c.weights, -1);
        item.model.labels[0] = out.labels[k];
        Assignment q = item_scores(item, c.concepts, out.features[k], c.config.mf_sweeps);
        res.push_back(revise_labels(item.model, q)[0]);
    }
    return res;
}

void check_trained(const Checkpoint& c, const RuleSet& rules) {
    for (const auto& r : rules.rules)
        for (const auto& a : r.body) {
            const std::string& name = rules.predicate_of(a).name;
            if (std::find(c.trained_predicates.begin(), c.trained_predicates.end(), name) == c.trained_predicates.end())
                throw Error(Errc::UntrainedPredicate, "predicate '" + name + "' of rule '" + r.id +
                                                          "' was not trained in this checkpoint");
        }
}

} // namespace

std::vector<PseudoLabel> predict_transductive(const Checkpoint& c, const std::vector<Input>& items) {
    return predict_with(c, checkpoint_context(c), items);
}

Metrics evaluate(const Checkpoint& c, const Dataset& data, EvalMode mode, const RuleSet* rules) {
    if (data.part_dim != c.part_dim)
        throw Error(Errc::ShapeMismatch, "dataset part size " + std::to_string(data.part_dim) + " does not match the " +
                                             "checkpoint's " + std::to_string(c.part_dim));
    const bool has_test = std::find(data.splits.begin(), data.splits.end(), Split::Test) != data.splits.end();
    const Dataset d = has_test ? data.subset(Split::Test) : data;
    if (d.size() == 0) throw Error(Errc::LengthMismatch, "no items to evaluate");
    std::vector<std::size_t> preds;
    if (mode == EvalMode::Transductive) {
        if (rules && rules_hash(*rules) != c.rules_hash)
            throw Error(Errc::HashMismatch, "rules differ from the checkpoint's; use inductive mode for rewritten rules");
        if (d.label_names != c.label_names || d.parts != c.parts)
            throw Error(Errc::ShapeMismatch, "dataset labels or parts differ from the checkpoint's task");
        for (const auto& l : predict_transductive(c, d.items)) preds.push_back(l.hard);
        return accuracy(preds, d.labels, d.label_names.size());
    }
    if (!rules) throw Error(Errc::InvalidConfig, "inductive evaluation needs a rule set");
    check_trained(c, *rules);
    for (const auto& r : infer_items(c, *rules, d.items)) {
        auto it = std::find(d.label_names.begin(), d.label_names.end(), r.head_label);
        preds.push_back(static_cast<std::size_t>(it - d.label_names.begin()));
    }
    return accuracy(preds, d.labels, std::max<std::size_t>(d.label_names.size() + 1, 3));
}

std::vector<InductiveResult> infer_items(const Checkpoint& c, const RuleSet& rules, const std::vector<Input>& items) {
    check_trained(c, rules);
    std::vector<InductiveResult> out;
    for (const auto& item : items) out.push_back(infer_inductive(rules, c.concepts, task_encode(c.task_net, item)));
    return out;
}

ItemExplanation explain_item(const Checkpoint& c, const RuleSet& rules, const Input& item) {
    ItemExplanation res;
    if (rules_hash(rules) == c.rules_hash) {
        const TaskContext ctx = checkpoint_context(c);
        TaskOutput out = task_forward(c.task_net, {item});
        ItemModel im = build_item_model(ctx, c.concepts, c.weights, -1);
        im.model.labels[0] = out.labels[0];
        Assignment q = item_scores(im, c.concepts, out.features[0], c.config.mf_sweeps);
        if (c.config.beta > 0.0) im.model.labels[0] = revise_labels(im.model, q)[0];
        for (const auto& e : im.model.bridges)
            q(static_cast<Eigen::Index>(e.atom)) = im.model.labels[0].distribution(e.slot);
        res.explanation = explain_transductive(im.model, q, 0);
        res.model = std::move(im.model);
        res.label_names = ctx.label_names;
        return res;
    }

    // Rewritten rules: every head is a unary class; the pseudo-label is the
    // normalised best body truth per class.
    check_trained(c, rules);
    std::vector<std::string> classes;
    for (const auto& r : rules.rules) {
        if (r.head.size() != 1) throw Error(Errc::Unsupported, "rule '" + r.id + "' needs a single head to explain");
        const auto& d = rules.predicate_of(r.head[0]);
        if (d.entity_arity != 1 || d.value_arity != 0)
            throw Error(Errc::Unsupported, "rule '" + r.id + "' head must be a unary class predicate");
        if (std::find(classes.begin(), classes.end(), d.name) == classes.end()) classes.push_back(d.name);
    }
    const auto feats = task_encode(c.task_net, item);
    std::vector<std::string> constants;
    for (std::size_t k = 0; k < feats.size(); ++k) constants.push_back("c" + std::to_string(k + 1));
    auto shared = std::make_shared<const RuleSet>(rules);
    MlnGraph g = ground_rules(shared, constants, c.domains, c.config.grounding_cap);

    std::vector<Eigen::VectorXd> by_constant(g.constants().size());
    for (std::size_t k = 0; k < g.constants().size(); ++k) {
        auto it = std::find(constants.begin(), constants.end(), g.constants()[k]);
        if (it != constants.end()) by_constant[k] = feats[static_cast<std::size_t>(it - constants.begin())];
    }
    Assignment p = Assignment::Constant(static_cast<Eigen::Index>(g.num_atoms()), kNaN);
    std::set<std::string> heads(classes.begin(), classes.end());
    for (std::size_t i = 0; i < g.num_atoms(); ++i)
        if (!heads.count(rules.predicates[g.atom(i).predicate].name))
            p(static_cast<Eigen::Index>(i)) = concept_score(c.concepts, g, i, by_constant);

    Eigen::VectorXd truth = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes.size()));
    std::vector<double> xs;
    for (const auto& gr : g.ground_rules()) {
        xs.clear();
        for (std::size_t k = 0; k < gr.body_size; ++k) xs.push_back(p(static_cast<Eigen::Index>(gr.atoms[k])));
        const auto& name = rules.predicates[g.atom(gr.atoms[gr.body_size]).predicate].name;
        auto slot = std::find(classes.begin(), classes.end(), name) - classes.begin();
        truth(slot) = std::max(truth(slot), luk_and_all(std::span<const double>(xs)));
    }
    if (truth.sum() > 0.0) truth /= truth.sum();
    else truth.setConstant(1.0 / static_cast<double>(classes.size()));

    std::vector<HighLevelNode> nodes;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        HighLevelNode n;
        n.id = atom_key(classes[k], {constants[0]}, {}, false);
        n.slot = static_cast<long>(k);
        nodes.push_back(n);
    }
    BiLevelModel m = attach_levels({PseudoLabel::from_distribution(truth)}, std::move(nodes), std::move(g),
                                   WeightVector::from_rules(rules));
    for (const auto& e : m.bridges) p(static_cast<Eigen::Index>(e.atom)) = truth(e.slot);
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (std::isnan(p(i))) p(i) = 0.0; // head atoms of classes not bridged to c1
    res.explanation = explain_transductive(m, p, 0);
    res.model = std::move(m);
    res.label_names = classes;
    return res;
}

} // namespace nesy
