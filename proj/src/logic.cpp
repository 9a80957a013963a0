#include "nesy/logic.hpp"

#include <charconv>
#include <cctype>
#include <cstdint>
#include <set>
#include <sstream>

namespace nesy {

const char* errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::Syntax: return "syntax";
    case Errc::UndeclaredPredicate: return "undeclared-predicate";
    case Errc::ArityMismatch: return "arity-mismatch";
    case Errc::DuplicateRuleId: return "duplicate-rule-id";
    case Errc::DuplicatePredicate: return "duplicate-predicate";
    case Errc::UnboundHeadVariable: return "unbound-head-variable";
    case Errc::InvalidWeight: return "invalid-weight";
    case Errc::Domain: return "domain";
    case Errc::MissingScore: return "missing-score";
    case Errc::GroundingCap: return "grounding-cap";
    case Errc::EmptyDomain: return "empty-domain";
    case Errc::UnknownConstant: return "unknown-constant";
    case Errc::UnknownAtom: return "unknown-atom";
    case Errc::SizeMismatch: return "size-mismatch";
    case Errc::TooLarge: return "too-large";
    case Errc::NonFinite: return "non-finite";
    case Errc::ShapeMismatch: return "shape-mismatch";
    case Errc::MissingFeature: return "missing-feature";
    case Errc::KindMismatch: return "kind-mismatch";
    case Errc::StaleTape: return "stale-tape";
    case Errc::Unbridged: return "unbridged";
    case Errc::FactorRange: return "factor-range";
    case Errc::InvalidConfig: return "invalid-config";
    case Errc::Divergence: return "divergence";
    case Errc::UntrainedPredicate: return "untrained-predicate";
    case Errc::Unsupported: return "unsupported";
    case Errc::Uncoverable: return "uncoverable";
    case Errc::LengthMismatch: return "length-mismatch";
    case Errc::Io: return "io";
    case Errc::Format: return "format";
    case Errc::HashMismatch: return "hash-mismatch";
    }
    return "unknown";
}

std::optional<std::size_t> RuleSet::find_predicate(std::string_view name) const {
    for (std::size_t i = 0; i < predicates.size(); ++i)
        if (predicates[i].name == name) return i;
    return std::nullopt;
}

std::optional<std::size_t> RuleSet::find_rule(std::string_view id) const {
    for (std::size_t i = 0; i < rules.size(); ++i)
        if (rules[i].id == id) return i;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

namespace {

enum class Tok { Ident, Int, Real, String, LParen, RParen, Comma, Semi, Amp, Bar, Arrow, Maps, DoubleColon, Colon, Slash, Plus, Star, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    int column = 1;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::vector<Token> lex_line(std::string_view line, int lineno) {
    std::vector<Token> out;
    std::size_t i = 0;
    auto col = [&] { return static_cast<int>(i) + 1; };
    while (i < line.size()) {
        char c = line[i];
        if (c == '#') break;
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        Token t;
        t.column = col();
        if (ident_start(c)) {
            std::size_t j = i;
            while (j < line.size() && ident_char(line[j])) ++j;
            t.kind = Tok::Ident;
            t.text = std::string(line.substr(i, j - i));
            i = j;
        } else if (digit(c) || ((c == '-' || c == '+') && i + 1 < line.size() && (digit(line[i + 1]) || line[i + 1] == '.')) ||
                   (c == '.' && i + 1 < line.size() && digit(line[i + 1]))) {
            // A leading '+' is only a sign when the previous token cannot end an operand.
            bool sign = (c == '-' || c == '+');
            bool prev_operand = !out.empty() && (out.back().kind == Tok::Int || out.back().kind == Tok::Real ||
                                                 out.back().kind == Tok::Ident || out.back().kind == Tok::RParen);
            if (sign && (c == '+' || prev_operand)) {
                if (c == '+') {
                    t.kind = Tok::Plus;
                    t.text = "+";
                    ++i;
                    out.push_back(t);
                    continue;
                }
                throw ParseError(Errc::Syntax, lineno, col(), "unexpected '-'");
            }
            std::size_t j = i + (sign ? 1 : 0);
            bool real = false;
            while (j < line.size() && digit(line[j])) ++j;
            if (j < line.size() && line[j] == '.') {
                real = true;
                ++j;
                while (j < line.size() && digit(line[j])) ++j;
            }
            if (j < line.size() && (line[j] == 'e' || line[j] == 'E')) {
                std::size_t k = j + 1;
                if (k < line.size() && (line[k] == '+' || line[k] == '-')) ++k;
                if (k < line.size() && digit(line[k])) {
                    real = true;
                    j = k;
                    while (j < line.size() && digit(line[j])) ++j;
                }
            }
            t.kind = real ? Tok::Real : Tok::Int;
            t.text = std::string(line.substr(i, j - i));
            i = j;
        } else if (c == '"') {
            std::size_t j = i + 1;
            while (j < line.size() && line[j] != '"') ++j;
            if (j >= line.size()) throw ParseError(Errc::Syntax, lineno, col(), "unterminated constant");
            t.kind = Tok::String;
            t.text = std::string(line.substr(i + 1, j - i - 1));
            if (t.text.empty()) throw ParseError(Errc::Syntax, lineno, col(), "empty constant name");
            i = j + 1;
        } else if (line.substr(i, 2) == "=>") {
            t.kind = Tok::Arrow;
            i += 2;
        } else if (line.substr(i, 2) == "->") {
            t.kind = Tok::Maps;
            i += 2;
        } else if (line.substr(i, 2) == "::") {
            t.kind = Tok::DoubleColon;
            i += 2;
        } else {
            switch (c) {
            case '(': t.kind = Tok::LParen; break;
            case ')': t.kind = Tok::RParen; break;
            case ',': t.kind = Tok::Comma; break;
            case ';': t.kind = Tok::Semi; break;
            case '&': t.kind = Tok::Amp; break;
            case '|': t.kind = Tok::Bar; break;
            case ':': t.kind = Tok::Colon; break;
            case '/': t.kind = Tok::Slash; break;
            case '+': t.kind = Tok::Plus; break;
            case '*': t.kind = Tok::Star; break;
            default:
                throw ParseError(Errc::Syntax, lineno, col(), std::string("unexpected character '") + c + "'");
            }
            t.text = std::string(1, c);
            ++i;
        }
        out.push_back(std::move(t));
    }
    Token end;
    end.kind = Tok::End;
    end.column = static_cast<int>(line.size()) + 1;
    out.push_back(end);
    return out;
}

long to_long(const Token& t, int lineno) {
    long v = 0;
    const char* first = t.text.data();
    if (*first == '+') ++first;
    auto [p, ec] = std::from_chars(first, t.text.data() + t.text.size(), v);
    if (ec != std::errc() || p != t.text.data() + t.text.size())
        throw ParseError(Errc::Syntax, lineno, t.column, "bad integer '" + t.text + "'");
    return v;
}

double to_double(const Token& t, int lineno) {
    double v = 0;
    const char* first = t.text.data();
    if (*first == '+') ++first;
    auto [p, ec] = std::from_chars(first, t.text.data() + t.text.size(), v);
    if (ec != std::errc() || p != t.text.data() + t.text.size())
        throw ParseError(Errc::Syntax, lineno, t.column, "bad number '" + t.text + "'");
    return v;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

class LineParser {
public:
    LineParser(std::vector<Token> toks, int lineno, RuleSet& rs)
        : toks_(std::move(toks)), line_(lineno), rs_(rs) {}

    bool at(Tok k, std::size_t ahead = 0) const {
        return pos_ + ahead < toks_.size() && toks_[pos_ + ahead].kind == k;
    }
    const Token& peek() const { return toks_[pos_]; }
    const Token& next() { return toks_[pos_++]; }

    const Token& expect(Tok k, const char* what) {
        if (!at(k)) fail(Errc::Syntax, std::string("expected ") + what);
        return next();
    }

    [[noreturn]] void fail(Errc code, const std::string& msg) const {
        throw ParseError(code, line_, peek().column, msg);
    }
    [[noreturn]] void fail_at(Errc code, int column, const std::string& msg) const {
        throw ParseError(code, line_, column, msg);
    }

    void declaration() {
        next(); // 'pred'
        const Token& name = expect(Tok::Ident, "predicate name");
        expect(Tok::Slash, "'/'");
        PredicateDecl d;
        d.name = name.text;
        d.entity_arity = static_cast<std::size_t>(non_negative(expect(Tok::Int, "entity arity")));
        if (at(Tok::Plus)) {
            next();
            d.value_arity = static_cast<std::size_t>(non_negative(expect(Tok::Int, "value arity")));
        }
        if (at(Tok::Ident) && peek().text == "latent") {
            next();
            d.kind = PredicateKind::Latent;
        }
        if (!at(Tok::End)) fail(Errc::Syntax, "trailing tokens after declaration");
        if (d.arity() == 0) fail_at(Errc::ArityMismatch, name.column, "predicate '" + d.name + "' has zero arity");
        if (rs_.find_predicate(d.name))
            fail_at(Errc::DuplicatePredicate, name.column, "predicate '" + d.name + "' declared twice");
        rs_.predicates.push_back(std::move(d));
    }

    Rule rule(std::size_t index) {
        Rule r;
        if (at(Tok::Ident) && at(Tok::Colon, 1)) {
            r.id = next().text;
            next();
        } else {
            r.id = "r" + std::to_string(index + 1);
        }
        r.body.push_back(atom());
        while (at(Tok::Amp)) {
            next();
            r.body.push_back(atom());
        }
        expect(Tok::Arrow, "'=>'");
        r.head.push_back(atom());
        while (at(Tok::Bar)) {
            next();
            r.head.push_back(atom());
        }
        if (at(Tok::DoubleColon)) {
            next();
            if (at(Tok::Int) || at(Tok::Real)) {
                const Token& w = next();
                r.weight = to_double(w, line_);
                if (!std::isfinite(r.weight)) fail_at(Errc::InvalidWeight, w.column, "weight must be finite");
            } else {
                fail(Errc::Syntax, "expected weight");
            }
        }
        if (!at(Tok::End)) fail(Errc::Syntax, "trailing tokens after rule");
        return r;
    }

private:
    long non_negative(const Token& t) {
        long v = to_long(t, line_);
        if (v < 0) fail_at(Errc::ArityMismatch, t.column, "negative arity");
        return v;
    }

    Atom atom() {
        const Token& name = expect(Tok::Ident, "predicate name");
        auto pred = rs_.find_predicate(name.text);
        if (!pred) fail_at(Errc::UndeclaredPredicate, name.column, "undeclared predicate '" + name.text + "'");
        expect(Tok::LParen, "'('");
        Atom a;
        a.predicate = *pred;
        std::size_t entities = 0;
        std::size_t values = 0;
        if (!at(Tok::Semi) && !at(Tok::RParen)) {
            a.args.push_back(entity_term());
            ++entities;
            while (at(Tok::Comma)) {
                next();
                a.args.push_back(entity_term());
                ++entities;
            }
        }
        if (at(Tok::Semi)) {
            next();
            if (!at(Tok::RParen)) {
                a.args.push_back(value_term());
                ++values;
                while (at(Tok::Comma)) {
                    next();
                    a.args.push_back(value_term());
                    ++values;
                }
            }
        }
        expect(Tok::RParen, "')'");
        const PredicateDecl& d = rs_.predicates[*pred];
        if (entities != d.entity_arity || values != d.value_arity)
            fail_at(Errc::ArityMismatch, name.column,
                    "'" + d.name + "' expects " + std::to_string(d.entity_arity) + " entity and " +
                        std::to_string(d.value_arity) + " value arguments, got " + std::to_string(entities) +
                        " and " + std::to_string(values));
        return a;
    }

    Term entity_term() {
        if (at(Tok::Ident)) return EntityVariable{next().text};
        if (at(Tok::String)) {
            std::string name = next().text;
            auto it = std::find(rs_.constants.begin(), rs_.constants.end(), name);
            std::size_t id = static_cast<std::size_t>(it - rs_.constants.begin());
            if (it == rs_.constants.end()) rs_.constants.push_back(name);
            return EntityConstant{id};
        }
        fail(Errc::Syntax, "expected entity variable or quoted constant");
    }

    Term value_term() {
        if (at(Tok::Ident)) return ValueVariable{next().text};
        if (!at(Tok::Int)) fail(Errc::Syntax, "expected value term");
        if (!at(Tok::Star, 1)) return ValueLiteral{to_long(next(), line_)};

        ValueExpr e;
        int start = peek().column;
        std::set<std::string> seen;
        auto coefficient_term = [&] {
            long c = to_long(next(), line_);
            expect(Tok::Star, "'*'");
            const Token& v = expect(Tok::Ident, "value variable");
            if (!seen.insert(v.text).second)
                fail_at(Errc::Syntax, v.column, "variable '" + v.text + "' repeated in expression");
            e.terms.emplace_back(c, v.text);
        };
        coefficient_term();
        while (at(Tok::Plus)) {
            next();
            if (at(Tok::Int) && at(Tok::Star, 1)) {
                coefficient_term();
            } else if (at(Tok::Int)) {
                e.offset = to_long(next(), line_);
                break;
            } else {
                fail(Errc::Syntax, "expected 'int*var' or integer offset");
            }
        }
        if (!at(Tok::Maps)) fail_at(Errc::Syntax, start, "value expression must end with '-> var'");
        next();
        e.output = expect(Tok::Ident, "output variable").text;
        return e;
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    int line_;
    RuleSet& rs_;
};

void check_head_bindings(const RuleSet& rs, const Rule& r, int line) {
    std::set<std::string> bound;
    for (const Atom& a : r.body)
        for (const Term& t : a.args)
            if (auto v = std::get_if<ValueVariable>(&t)) bound.insert(v->name);
    auto unbound = [&](const std::string& name) {
        throw ParseError(Errc::UnboundHeadVariable, line, 1,
                         "rule '" + r.id + "': head value variable '" + name + "' is not bound by the body");
    };
    for (const Atom& a : r.head) {
        for (const Term& t : a.args) {
            if (auto v = std::get_if<ValueVariable>(&t)) {
                if (!bound.count(v->name)) unbound(v->name);
            } else if (auto e = std::get_if<ValueExpr>(&t)) {
                if (e->terms.empty())
                    throw ParseError(Errc::Syntax, line, 1, "rule '" + r.id + "': empty value expression");
                for (const auto& [c, name] : e->terms)
                    if (!bound.count(name)) unbound(name);
            }
        }
    }
    for (const Atom& a : r.body)
        for (const Term& t : a.args)
            if (std::holds_alternative<ValueExpr>(t))
                throw ParseError(Errc::Syntax, line, 1, "rule '" + r.id + "': value expressions are only allowed in heads");
    (void)rs;
}

} // namespace

RuleSet parse_rules(std::string_view text) {
    RuleSet rs;
    std::vector<std::pair<int, std::vector<Token>>> rule_lines;

    int lineno = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++lineno;
        auto toks = lex_line(line, lineno);
        if (toks.front().kind != Tok::End) {
            if (toks.front().kind == Tok::Ident && toks.front().text == "pred" && toks.size() > 1 &&
                toks[1].kind == Tok::Ident) {
                LineParser p(std::move(toks), lineno, rs);
                p.declaration();
            } else {
                rule_lines.emplace_back(lineno, std::move(toks));
            }
        }
        if (end == text.size()) break;
        start = end + 1;
    }

    std::set<std::string> ids;
    for (auto& [line, toks] : rule_lines) {
        int first_col = toks.front().column;
        LineParser p(std::move(toks), line, rs);
        Rule r = p.rule(rs.rules.size());
        if (!ids.insert(r.id).second)
            throw ParseError(Errc::DuplicateRuleId, line, first_col, "duplicate rule id '" + r.id + "'");
        check_head_bindings(rs, r, line);
        rs.rules.push_back(std::move(r));
    }
    return rs;
}

void validate(const RuleSet& rs) {
    std::set<std::string> names;
    for (const auto& d : rs.predicates) {
        if (d.arity() == 0) throw Error(Errc::ArityMismatch, "predicate '" + d.name + "' has zero arity");
        if (!names.insert(d.name).second) throw Error(Errc::DuplicatePredicate, "predicate '" + d.name + "' declared twice");
    }
    std::set<std::string> ids;
    for (const auto& r : rs.rules) {
        if (!ids.insert(r.id).second) throw Error(Errc::DuplicateRuleId, "duplicate rule id '" + r.id + "'");
        if (!std::isfinite(r.weight)) throw Error(Errc::InvalidWeight, "rule '" + r.id + "' has non-finite weight");
        if (r.body.empty() || r.head.empty()) throw Error(Errc::Syntax, "rule '" + r.id + "' needs a body and a head");
        auto check_atom = [&](const Atom& a) {
            if (a.predicate >= rs.predicates.size())
                throw Error(Errc::UndeclaredPredicate, "rule '" + r.id + "' uses an undeclared predicate");
            const auto& d = rs.predicates[a.predicate];
            if (a.args.size() != d.arity())
                throw Error(Errc::ArityMismatch, "rule '" + r.id + "': arity mismatch for '" + d.name + "'");
            for (std::size_t i = 0; i < a.args.size(); ++i) {
                bool entity_slot = i < d.entity_arity;
                if (entity_slot != is_entity_term(a.args[i]))
                    throw Error(Errc::ArityMismatch, "rule '" + r.id + "': slot kind mismatch for '" + d.name + "'");
                if (auto c = std::get_if<EntityConstant>(&a.args[i]); c && c->id >= rs.constants.size())
                    throw Error(Errc::UnknownConstant, "rule '" + r.id + "': constant index out of range");
            }
        };
        for (const auto& a : r.body) check_atom(a);
        for (const auto& a : r.head) check_atom(a);
        try {
            check_head_bindings(rs, r, 0);
        } catch (const ParseError& e) {
            throw Error(e.code(), "rule '" + r.id + "': " + std::string(e.what()));
        }
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace {

std::string format_weight(double w) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, w);
    std::string s(buf, p);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string render_term(const RuleSet& rs, const Term& t) {
    return std::visit(
        [&](const auto& v) -> std::string {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, EntityVariable> || std::is_same_v<V, ValueVariable>) {
                return v.name;
            } else if constexpr (std::is_same_v<V, EntityConstant>) {
                return "\"" + rs.constants.at(v.id) + "\"";
            } else if constexpr (std::is_same_v<V, ValueLiteral>) {
                return std::to_string(v.value);
            } else {
                std::string s;
                for (std::size_t i = 0; i < v.terms.size(); ++i) {
                    if (i) s += " + ";
                    s += std::to_string(v.terms[i].first) + "*" + v.terms[i].second;
                }
                if (v.offset != 0) s += " + " + std::to_string(v.offset);
                return s + " -> " + v.output;
            }
        },
        t);
}

} // namespace

std::string render_atom(const RuleSet& rs, const Atom& a) {
    const auto& d = rs.predicates.at(a.predicate);
    std::string s = d.name + "(";
    for (std::size_t i = 0; i < d.entity_arity; ++i) {
        if (i) s += ", ";
        s += render_term(rs, a.args[i]);
    }
    if (d.value_arity > 0) {
        s += d.entity_arity ? "; " : ";";
        for (std::size_t i = 0; i < d.value_arity; ++i) {
            if (i) s += ", ";
            s += render_term(rs, a.args[d.entity_arity + i]);
        }
    }
    return s + ")";
}

std::string render_rule(const RuleSet& rs, const Rule& r) {
    std::string s = r.id + ": ";
    for (std::size_t i = 0; i < r.body.size(); ++i) {
        if (i) s += " & ";
        s += render_atom(rs, r.body[i]);
    }
    s += " => ";
    for (std::size_t i = 0; i < r.head.size(); ++i) {
        if (i) s += " | ";
        s += render_atom(rs, r.head[i]);
    }
    return s + " :: " + format_weight(r.weight);
}

std::string render_rules(const RuleSet& rs) {
    std::ostringstream out;
    for (const auto& d : rs.predicates) {
        out << "pred " << d.name << "/" << d.entity_arity;
        if (d.value_arity) out << "+" << d.value_arity;
        if (d.kind == PredicateKind::Latent) out << " latent";
        out << "\n";
    }
    for (const auto& r : rs.rules) out << render_rule(rs, r) << "\n";
    return out.str();
}

std::uint64_t rules_hash(const RuleSet& rs) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : render_rules(rs)) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Rule scoring
// ---------------------------------------------------------------------------

double rule_soft_truth(std::span<const double> body, std::span<const double> head) {
    return luk_implies(luk_and_all(body), luk_or_all(head));
}

double expected_satisfaction(std::span<const double> body, std::span<const double> head) {
    double violated = 1.0;
    for (double q : body) violated *= fuzzy::checked(q);
    for (double q : head) violated *= 1.0 - fuzzy::checked(q);
    return 1.0 - violated;
}

} // namespace nesy
