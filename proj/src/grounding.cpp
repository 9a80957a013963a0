#include "nesy/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace nesy {

std::string atom_key(const std::string& predicate, const std::vector<std::string>& entities,
                     const std::vector<long>& values, bool has_value_slots) {
    std::string key = predicate + "(";
    for (std::size_t i = 0; i < entities.size(); ++i) {
        if (i) key += ",";
        key += entities[i];
    }
    if (has_value_slots) {
        key += ";";
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) key += ",";
            key += std::to_string(values[i]);
        }
    }
    return key + ")";
}

MlnGraph::MlnGraph(std::shared_ptr<const RuleSet> rules, std::vector<std::string> constants)
    : rules_(std::move(rules)), constants_(std::move(constants)) {}

std::string MlnGraph::make_key(std::size_t predicate, const std::vector<std::size_t>& entity_args,
                               const std::vector<long>& value_args) const {
    const auto& d = rules_->predicates.at(predicate);
    std::vector<std::string> names;
    names.reserve(entity_args.size());
    for (std::size_t c : entity_args) {
        if (c >= constants_.size()) throw Error(Errc::UnknownConstant, "constant index out of range");
        names.push_back(constants_[c]);
    }
    return atom_key(d.name, names, value_args, d.value_arity > 0);
}

std::size_t MlnGraph::add_atom(std::size_t predicate, std::vector<std::size_t> entity_args,
                               std::vector<long> value_args) {
    const auto& d = rules_->predicates.at(predicate);
    if (entity_args.size() != d.entity_arity || value_args.size() != d.value_arity)
        throw Error(Errc::ArityMismatch, "ground atom arity mismatch for '" + d.name + "'");
    std::string key = make_key(predicate, entity_args, value_args);
    if (auto it = index_.find(key); it != index_.end()) return it->second;
    GroundAtom a;
    a.key = key;
    a.predicate = predicate;
    a.entity_args = std::move(entity_args);
    a.value_args = std::move(value_args);
    std::size_t idx = atoms_.size();
    atoms_.push_back(std::move(a));
    index_.emplace(std::move(key), idx);
    adjacency_.emplace_back();
    atom_to_rules_.emplace_back();
    return idx;
}

void MlnGraph::link(std::size_t a, std::size_t b) {
    if (a == b) return;
    auto insert_sorted = [](std::vector<std::size_t>& v, std::size_t x) {
        auto it = std::lower_bound(v.begin(), v.end(), x);
        if (it == v.end() || *it != x) v.insert(it, x);
    };
    insert_sorted(adjacency_[a], b);
    insert_sorted(adjacency_[b], a);
}

std::size_t MlnGraph::add_ground_rule(std::size_t rule, Binding binding, const std::vector<std::size_t>& body,
                                      const std::vector<std::size_t>& head) {
    if (rule >= rules_->rules.size()) throw Error(Errc::UnknownAtom, "ground rule refers to unknown rule");
    for (std::size_t a : body)
        if (a >= atoms_.size()) throw Error(Errc::UnknownAtom, "ground rule refers to unknown atom");
    for (std::size_t a : head)
        if (a >= atoms_.size()) throw Error(Errc::UnknownAtom, "ground rule refers to unknown atom");

    std::vector<std::size_t> sb = body, sh = head;
    std::sort(sb.begin(), sb.end());
    std::sort(sh.begin(), sh.end());
    auto [pos, fresh] = rule_keys_.emplace(std::make_tuple(rule, std::move(sb), std::move(sh)), ground_rules_.size());
    if (!fresh) return pos->second;

    GroundRule g;
    g.rule = rule;
    g.binding = std::move(binding);
    g.atoms = body;
    g.atoms.insert(g.atoms.end(), head.begin(), head.end());
    g.body_size = body.size();
    std::size_t idx = ground_rules_.size();
    for (std::size_t i = 0; i < g.atoms.size(); ++i) {
        auto& owners = atom_to_rules_[g.atoms[i]];
        if (owners.empty() || owners.back() != idx) owners.push_back(idx);
        for (std::size_t j = i + 1; j < g.atoms.size(); ++j) link(g.atoms[i], g.atoms[j]);
    }
    ground_rules_.push_back(std::move(g));
    return idx;
}

std::optional<std::size_t> MlnGraph::find(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::size_t MlnGraph::index_of(const std::string& key) const {
    auto i = find(key);
    if (!i) throw Error(Errc::UnknownAtom, "unknown ground atom '" + key + "'");
    return *i;
}

bool MlnGraph::is_latent(std::size_t atom) const {
    return rules_->predicates.at(atoms_.at(atom).predicate).kind == PredicateKind::Latent;
}

std::vector<std::size_t> MlnGraph::free_atoms() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < atoms_.size(); ++i)
        if (!atoms_[i].observed) out.push_back(i);
    return out;
}

void MlnGraph::observe(std::size_t atom, bool value) {
    auto& a = atoms_.at(atom);
    a.observed = value;
    a.score = value ? 1.0 : 0.0;
}

void MlnGraph::clear_evidence(std::size_t atom) {
    auto& a = atoms_.at(atom);
    a.observed.reset();
    a.score = 0.5;
}

void MlnGraph::apply_evidence(const std::map<std::string, bool>& evidence) {
    for (const auto& [key, value] : evidence) observe(index_of(key), value);
}

std::string MlnGraph::dump() const {
    std::ostringstream out;
    for (const auto& a : atoms_) {
        out << "atom\t" << a.key;
        if (a.observed) out << "\tobserved=" << (*a.observed ? 1 : 0);
        out << "\n";
    }
    for (const auto& g : ground_rules_) {
        out << "rule\t" << rules_->rules[g.rule].id;
        for (std::size_t i = 0; i < g.atoms.size(); ++i) {
            out << (i == g.body_size ? "\t=>\t" : "\t") << atoms_[g.atoms[i]].key;
        }
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Domains
// ---------------------------------------------------------------------------

namespace {

std::vector<long> normalized(std::vector<long> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

std::vector<long> intersect(const std::vector<long>& a, const std::vector<long>& b) {
    std::vector<long> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

/// Domain of every body value variable: intersection over the slots it fills.
std::optional<std::map<std::string, std::vector<long>>> body_var_domains(const RuleSet& rs, const Rule& r,
                                                                         const ValueDomains& domains) {
    std::map<std::string, std::vector<long>> out;
    for (const Atom& a : r.body) {
        const auto& d = rs.predicate_of(a);
        for (std::size_t i = d.entity_arity; i < a.args.size(); ++i) {
            auto v = std::get_if<ValueVariable>(&a.args[i]);
            if (!v) continue;
            auto dom = domains.find(d.name);
            if (dom == domains.end()) return std::nullopt;
            auto [it, fresh] = out.emplace(v->name, dom->second);
            if (!fresh) it->second = intersect(it->second, dom->second);
        }
    }
    return out;
}

} // namespace

ValueDomains complete_domains(const RuleSet& rs, const ValueDomains& given) {
    ValueDomains out;
    for (const auto& [name, dom] : given) out[name] = normalized(dom);

    std::map<std::string, std::pair<long, long>> derived;
    for (std::size_t pass = 0; pass <= rs.rules.size(); ++pass) {
        bool changed = false;
        for (const Rule& r : rs.rules) {
            auto vars = body_var_domains(rs, r, out);
            if (!vars) continue;
            for (const Atom& a : r.head) {
                const auto& d = rs.predicate_of(a);
                if (d.value_arity == 0 || given.count(d.name)) continue;
                for (std::size_t i = d.entity_arity; i < a.args.size(); ++i) {
                    long lo = 0, hi = 0;
                    bool ok = true;
                    const Term& t = a.args[i];
                    auto range_of = [&](const std::string& name, long& l, long& h) {
                        auto it = vars->find(name);
                        if (it == vars->end() || it->second.empty()) return false;
                        l = it->second.front();
                        h = it->second.back();
                        return true;
                    };
                    if (auto v = std::get_if<ValueVariable>(&t)) {
                        ok = range_of(v->name, lo, hi);
                    } else if (auto l = std::get_if<ValueLiteral>(&t)) {
                        lo = hi = l->value;
                    } else if (auto e = std::get_if<ValueExpr>(&t)) {
                        lo = hi = e->offset;
                        for (const auto& [c, name] : e->terms) {
                            long vl = 0, vh = 0;
                            if (!range_of(name, vl, vh)) {
                                ok = false;
                                break;
                            }
                            lo += std::min(c * vl, c * vh);
                            hi += std::max(c * vl, c * vh);
                        }
                    }
                    if (!ok) continue;
                    auto [it, fresh] = derived.emplace(d.name, std::make_pair(lo, hi));
                    if (!fresh) {
                        auto widened = std::make_pair(std::min(it->second.first, lo), std::max(it->second.second, hi));
                        if (widened == it->second) continue;
                        it->second = widened;
                    }
                    changed = true;
                }
            }
            for (const auto& [name, range] : derived) {
                std::vector<long> dom;
                for (long v = range.first; v <= range.second; ++v) dom.push_back(v);
                out[name] = std::move(dom);
            }
        }
        if (!changed) break;
    }
    return out;
}

double projected_atom_count(const RuleSet& rs, std::size_t num_constants, const ValueDomains& domains) {
    double total = 0.0;
    for (const auto& d : rs.predicates) {
        double n = std::pow(static_cast<double>(num_constants), static_cast<double>(d.entity_arity));
        if (d.value_arity > 0) {
            auto it = domains.find(d.name);
            double size = it == domains.end() ? 0.0 : static_cast<double>(it->second.size());
            n *= std::pow(size, static_cast<double>(d.value_arity));
        }
        total += n;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Grounding
// ---------------------------------------------------------------------------

MlnGraph ground_rules(std::shared_ptr<const RuleSet> rules_ptr, const std::vector<std::string>& constants,
                      const ValueDomains& given, std::size_t cap) {
    const RuleSet& rs = *rules_ptr;
    MlnGraph graph(rules_ptr, constants);
    if (constants.empty()) return graph;

    ValueDomains domains = complete_domains(rs, given);
    double projected = projected_atom_count(rs, constants.size(), domains);
    if (projected > static_cast<double>(cap)) {
        std::ostringstream msg;
        msg << "grounding would create up to " << static_cast<long long>(projected) << " atoms (cap " << cap << ")";
        throw Error(Errc::GroundingCap, msg.str());
    }

    // Rule-level constants are resolved against the run's constant table by name.
    std::vector<std::size_t> constant_map(rs.constants.size());
    for (std::size_t i = 0; i < rs.constants.size(); ++i) {
        auto it = std::find(constants.begin(), constants.end(), rs.constants[i]);
        if (it == constants.end()) throw Error(Errc::UnknownConstant, "constant '" + rs.constants[i] + "' not in table");
        constant_map[i] = static_cast<std::size_t>(it - constants.begin());
    }

    for (std::size_t ri = 0; ri < rs.rules.size(); ++ri) {
        const Rule& r = rs.rules[ri];
        std::vector<std::string> evars;
        auto note_entity = [&](const Atom& a) {
            for (const Term& t : a.args)
                if (auto v = std::get_if<EntityVariable>(&t))
                    if (std::find(evars.begin(), evars.end(), v->name) == evars.end()) evars.push_back(v->name);
        };
        for (const Atom& a : r.body) note_entity(a);
        for (const Atom& a : r.head) note_entity(a);

        auto vdoms = body_var_domains(rs, r, domains);
        if (!vdoms) throw Error(Errc::EmptyDomain, "rule '" + r.id + "' uses a value predicate without a domain");
        std::vector<std::pair<std::string, const std::vector<long>*>> vvars;
        for (const auto& [name, dom] : *vdoms) vvars.emplace_back(name, &dom);

        Binding b;
        std::vector<bool> used(constants.size(), false);

        auto instantiate = [&](const Atom& a, std::vector<std::size_t>& ents, std::vector<long>& vals) -> bool {
            const auto& d = rs.predicate_of(a);
            ents.clear();
            vals.clear();
            for (std::size_t i = 0; i < a.args.size(); ++i) {
                const Term& t = a.args[i];
                if (auto v = std::get_if<EntityVariable>(&t)) ents.push_back(b.entity_map.at(v->name));
                else if (auto c = std::get_if<EntityConstant>(&t)) ents.push_back(constant_map.at(c->id));
                else if (auto vv = std::get_if<ValueVariable>(&t)) vals.push_back(b.value_map.at(vv->name));
                else if (auto l = std::get_if<ValueLiteral>(&t)) vals.push_back(l->value);
                else if (auto e = std::get_if<ValueExpr>(&t)) {
                    long s = e->offset;
                    for (const auto& [coef, name] : e->terms) s += coef * b.value_map.at(name);
                    vals.push_back(s);
                }
            }
            if (d.value_arity > 0) {
                const auto& dom = domains.at(d.name);
                for (long v : vals)
                    if (!std::binary_search(dom.begin(), dom.end(), v)) return false;
            }
            return true;
        };

        auto emit = [&] {
            std::vector<std::size_t> body, head, ents;
            std::vector<long> vals;
            for (const Atom& a : r.body)
                if (!instantiate(a, ents, vals)) return;
            for (const Atom& a : r.head)
                if (!instantiate(a, ents, vals)) return;
            for (const Atom& a : r.body) {
                instantiate(a, ents, vals);
                body.push_back(graph.add_atom(a.predicate, ents, vals));
            }
            for (const Atom& a : r.head) {
                instantiate(a, ents, vals);
                head.push_back(graph.add_atom(a.predicate, ents, vals));
            }
            graph.add_ground_rule(ri, b, body, head);
        };

        std::function<void(std::size_t)> values = [&](std::size_t k) {
            if (k == vvars.size()) {
                emit();
                return;
            }
            for (long v : *vvars[k].second) {
                b.value_map[vvars[k].first] = v;
                values(k + 1);
            }
        };
        std::function<void(std::size_t)> entities = [&](std::size_t k) {
            if (k == evars.size()) {
                values(0);
                return;
            }
            for (std::size_t c = 0; c < constants.size(); ++c) {
                if (used[c]) continue;
                used[c] = true;
                b.entity_map[evars[k]] = c;
                entities(k + 1);
                used[c] = false;
            }
            b.entity_map.erase(evars[k]);
        };
        entities(0);
    }
    return graph;
}

MlnGraph ground_rules(const RuleSet& rules, const std::vector<std::string>& constants, const ValueDomains& domains,
                      std::size_t cap) {
    return ground_rules(std::make_shared<const RuleSet>(rules), constants, domains, cap);
}

std::vector<std::size_t> markov_blanket(const MlnGraph& graph, const std::string& key) {
    return graph.neighbors(graph.index_of(key));
}

RuleSet select_relevant_rules(const RuleSet& rules, const std::set<std::string>& labels) {
    RuleSet out;
    out.predicates = rules.predicates;
    out.constants = rules.constants;
    auto mentions = [&](const Atom& a) {
        if (labels.count(rules.predicate_of(a).name)) return true;
        for (const Term& t : a.args)
            if (auto l = std::get_if<ValueLiteral>(&t); l && labels.count(std::to_string(l->value))) return true;
        return false;
    };
    for (const Rule& r : rules.rules) {
        bool hit = std::any_of(r.body.begin(), r.body.end(), mentions) ||
                   std::any_of(r.head.begin(), r.head.end(), mentions);
        if (hit) out.rules.push_back(r);
    }
    return out;
}

} // namespace nesy
