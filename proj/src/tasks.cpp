#include "nesy/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace nesy {

Dataset Dataset::subset(Split split) const {
    Dataset out = *this;
    out.items.clear();
    out.labels.clear();
    out.splits.clear();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (splits[i] != split) continue;
        out.items.push_back(items[i]);
        out.labels.push_back(labels[i]);
        out.splits.push_back(split);
    }
    return out;
}

Dataset Dataset::take(std::size_t n) const {
    Dataset out = *this;
    n = std::min(n, items.size());
    out.items.resize(n);
    out.labels.resize(n);
    out.splits.resize(n);
    return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Glyphs
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kGlyphs[10][kGlyphSide] = {
    {"..####..", ".#....#.", ".#...##.", ".#..#.#.", ".#.#..#.", ".##...#.", ".#....#.", "..####.."},
    {"...##...", "..###...", ".#.##...", "...##...", "...##...", "...##...", "...##...", ".######."},
    {"..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....", ".######."},
    {"..####..", ".#....#.", "......#.", "...###..", "......#.", "......#.", ".#....#.", "..####.."},
    {"....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..", ".....#.."},
    {".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####.."},
    {"...###..", "..#.....", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####.."},
    {".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....", "...#...."},
    {"..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####.."},
    {"..####..", ".#....#.", ".#....#.", ".#....#.", "..#####.", "......#.", ".....#..", "..###..."},
};

std::array<std::array<std::uint8_t, kGlyphPixels>, 10> build_templates() {
    std::array<std::array<std::uint8_t, kGlyphPixels>, 10> t{};
    for (int d = 0; d < 10; ++d)
        for (std::size_t r = 0; r < kGlyphSide; ++r)
            for (std::size_t c = 0; c < kGlyphSide; ++c) t[d][r * kGlyphSide + c] = kGlyphs[d][r][c] == '#' ? 1 : 0;
    return t;
}

} // namespace

const std::array<std::uint8_t, kGlyphPixels>& glyph_template(int d) {
    static const auto templates = build_templates();
    if (d < 0 || d > 9) throw Error(Errc::Domain, "digit " + std::to_string(d) + " has no glyph");
    return templates[static_cast<std::size_t>(d)];
}

Eigen::VectorXd render_glyph(int digit, double noise, std::mt19937_64& rng) {
    const auto& t = glyph_template(digit);
    std::bernoulli_distribution flip(noise);
    Eigen::VectorXd v(static_cast<Eigen::Index>(kGlyphPixels));
    for (std::size_t i = 0; i < kGlyphPixels; ++i) {
        bool on = t[i] != 0;
        if (noise > 0.0 && flip(rng)) on = !on;
        v(static_cast<Eigen::Index>(i)) = on ? 1.0 : 0.0;
    }
    return v;
}

DigitData gen_digit_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test, double noise,
                            int num_digits) {
    if (num_digits != 1 && num_digits != 2)
        throw Error(Errc::Unsupported, "digit count " + std::to_string(num_digits) + " not supported");
    if (!(noise >= 0.0 && noise <= 0.5)) throw Error(Errc::Domain, "glyph noise must lie in [0, 0.5]");
    if (n_train + n_test == 0) throw Error(Errc::Domain, "dataset must contain at least one item");

    DigitData out;
    Dataset& d = out.data;
    d.task = num_digits == 1 ? "digits" : "digits2";
    d.parts = num_digits == 1 ? 2 : 4;
    d.part_dim = kGlyphPixels;
    const int max_label = num_digits == 1 ? 18 : 198;
    for (int l = 0; l <= max_label; ++l) d.label_names.push_back(std::to_string(l));

    for (std::size_t i = 0; i < n_train + n_test; ++i) {
        std::mt19937_64 rng(derive_seed(seed, i));
        std::uniform_int_distribution<int> pick(0, 9);
        std::vector<int> digits(d.parts);
        for (auto& x : digits) x = pick(rng);
        Input item;
        for (int x : digits) item.push_back(render_glyph(x, noise, rng));
        int label = num_digits == 1 ? digits[0] + digits[1] : 10 * digits[0] + digits[1] + 10 * digits[2] + digits[3];
        d.items.push_back(std::move(item));
        d.labels.push_back(static_cast<std::size_t>(label));
        d.splits.push_back(i < n_train ? Split::Train : Split::Test);
        out.audit_digits.push_back(std::move(digits));
    }
    return out;
}

RuleSet make_addition_rules(int num_digits) {
    if (num_digits == 1)
        return parse_rules("pred digit/1+1 latent\n"
                           "pred addition/0+1\n"
                           "add: digit(x; d1) & digit(y; d2) => addition(; 1*d1 + 1*d2 -> z)\n");
    if (num_digits == 2)
        return parse_rules("pred digit/1+1 latent\n"
                           "pred addition/0+1\n"
                           "add2: digit(a; d1) & digit(b; d2) & digit(c; d3) & digit(e; d4) => "
                           "addition(; 10*d1 + 1*d2 + 10*d3 + 1*d4 -> z)\n");
    throw Error(Errc::Unsupported, "addition rules exist for 1 or 2 digits, not " + std::to_string(num_digits));
}

ValueDomains digit_domains() { return {{"digit", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}}}; }

// ---------------------------------------------------------------------------
// Attributes
// ---------------------------------------------------------------------------

RuleSet attribute_rules() {
    return parse_rules(R"(# attributes
pred likecat/1
pred tawny/1
pred spot/1
pred stripe/1
pred whiteblack/1
pred horselike/1
pred hooves/1
pred bulky/1
pred aquatic/1
pred hairless/1
# classes
pred leopard/1
pred zebra/1
pred cow/1
pred hippo/1
pred horse/1
pred tiger/1
pred killerwhale/1
R1: likecat(x) & tawny(x) & spot(x) => leopard(x)
R2: horselike(x) & whiteblack(x) & stripe(x) => zebra(x)
R3: hooves(x) & bulky(x) & spot(x) => cow(x)
R4: bulky(x) & aquatic(x) & hairless(x) => hippo(x)
R5: horselike(x) & hooves(x) & tawny(x) => horse(x)
R6: likecat(x) & tawny(x) & stripe(x) => tiger(x)
R7: aquatic(x) & whiteblack(x) & bulky(x) => killerwhale(x)
)");
}

std::vector<std::string> attribute_test_classes() { return {"tiger", "killerwhale"}; }

std::vector<std::string> attribute_names(const RuleSet& rs) {
    std::set<std::size_t> used;
    for (const auto& r : rs.rules)
        for (const auto& a : r.body) used.insert(a.predicate);
    std::vector<std::string> out;
    for (std::size_t p : used) out.push_back(rs.predicates[p].name);
    return out;
}

Dataset gen_attribute_dataset(std::uint64_t seed, std::size_t n_per_class, const RuleSet& rs,
                              const std::vector<std::string>& test_classes, double noise) {
    if (!(noise >= 0.0 && noise <= 0.5)) throw Error(Errc::Domain, "attribute noise must lie in [0, 0.5]");
    const auto attrs = attribute_names(rs);
    for (const auto& r : rs.rules) {
        if (r.head.size() != 1) throw Error(Errc::Unsupported, "class rule '" + r.id + "' needs a single head");
        for (const auto& a : r.body)
            if (rs.predicate_of(a).arity() != 1 || rs.predicate_of(a).entity_arity != 1)
                throw Error(Errc::Unsupported, "class rule '" + r.id + "' body must be unary attributes");
    }
    auto is_test = [&](const std::string& c) {
        return std::find(test_classes.begin(), test_classes.end(), c) != test_classes.end();
    };

    // Coverage: every attribute a test rule needs appears in some train rule body.
    std::set<std::size_t> trained;
    for (const auto& r : rs.rules)
        if (!is_test(rs.predicate_of(r.head[0]).name))
            for (const auto& a : r.body) trained.insert(a.predicate);
    for (const auto& r : rs.rules) {
        if (!is_test(rs.predicate_of(r.head[0]).name)) continue;
        for (const auto& a : r.body)
            if (!trained.count(a.predicate))
                throw Error(Errc::Uncoverable, "test class '" + rs.predicate_of(r.head[0]).name + "' needs attribute '" +
                                                   rs.predicate_of(a).name + "' that no training class shows");
    }

    Dataset d;
    d.task = "attributes";
    d.parts = 1;
    d.part_dim = attrs.size() * kAttributeRepeat;
    for (const auto& r : rs.rules) d.label_names.push_back(rs.predicate_of(r.head[0]).name);

    std::uint64_t index = 0;
    for (std::size_t ci = 0; ci < rs.rules.size(); ++ci) {
        const auto& r = rs.rules[ci];
        Eigen::VectorXd signature = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(attrs.size()));
        for (const auto& a : r.body) {
            auto pos = std::find(attrs.begin(), attrs.end(), rs.predicate_of(a).name) - attrs.begin();
            signature(pos) = 1.0;
        }
        const Split split = is_test(d.label_names[ci]) ? Split::Test : Split::Train;
        for (std::size_t n = 0; n < n_per_class; ++n) {
            std::mt19937_64 rng(derive_seed(seed, index++));
            std::bernoulli_distribution flip(noise);
            Eigen::VectorXd x(static_cast<Eigen::Index>(d.part_dim));
            for (std::size_t rep = 0; rep < kAttributeRepeat; ++rep)
                for (std::size_t k = 0; k < attrs.size(); ++k) {
                    double v = signature(static_cast<Eigen::Index>(k));
                    if (noise > 0.0 && flip(rng)) v = 1.0 - v;
                    x(static_cast<Eigen::Index>(rep * attrs.size() + k)) = v;
                }
            d.items.push_back(Input{std::move(x)});
            d.labels.push_back(ci);
            d.splits.push_back(split);
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

Metrics accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                 std::size_t num_classes) {
    if (preds.size() != labels.size())
        throw Error(Errc::LengthMismatch, "predictions and labels differ in length (" + std::to_string(preds.size()) +
                                              " vs " + std::to_string(labels.size()) + ")");
    if (preds.empty()) throw Error(Errc::LengthMismatch, "accuracy of an empty prediction list");
    if (num_classes == 0)
        num_classes = 1 + std::max(*std::max_element(preds.begin(), preds.end()),
                                   *std::max_element(labels.begin(), labels.end()));
    Metrics m;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (num_classes == 2) {
            if (preds[i] == 1 && labels[i] == 1) ++m.tp;
            else if (preds[i] == 0 && labels[i] == 0) ++m.tn;
            else if (preds[i] == 1) ++m.fp;
            else ++m.fn;
        } else if (preds[i] == labels[i]) {
            ++m.tp;
        } else {
            ++m.fn;
        }
    }
    m.acc = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.tp + m.tn + m.fp + m.fn);
    return m;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t n = static_cast<std::uint32_t>(bytes[i]) << 16;
        if (i + 1 < bytes.size()) n |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
        if (i + 2 < bytes.size()) n |= bytes[i + 2];
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += i + 1 < bytes.size() ? kB64[(n >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? kB64[n & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw Error(Errc::Format, "base64 length is not a multiple of 4");
    auto value = [](char c) -> int {
        const char* p = std::strchr(kB64, c);
        return c != '\0' && p ? static_cast<int>(p - kB64) : -1;
    };
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            char c = text[i + static_cast<std::size_t>(k)];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                v[k] = 0;
                ++pad;
            } else {
                v[k] = value(c);
                if (v[k] < 0 || pad) throw Error(Errc::Format, "invalid base64 character");
            }
        }
        std::uint32_t n = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                          (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
        out.push_back(static_cast<std::uint8_t>(n >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((n >> 8) & 255));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(n & 255));
    }
    return out;
}

void write_dataset(std::ostream& out, const Dataset& d) {
    out << "#nesy-dataset task=" << d.task << " parts=" << d.parts << " dim=" << d.part_dim << " labels=";
    for (std::size_t i = 0; i < d.label_names.size(); ++i) out << (i ? "," : "") << d.label_names[i];
    out << "\n";
    for (std::size_t i = 0; i < d.items.size(); ++i) {
        std::vector<std::uint8_t> bytes;
        for (const auto& part : d.items[i])
            for (Eigen::Index k = 0; k < part.size(); ++k)
                bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(part(k), 0.0, 1.0) * 255.0)));
        out << (d.splits[i] == Split::Train ? "train" : "test") << "\t" << d.label_names.at(d.labels[i]) << "\t"
            << base64_encode(bytes) << "\n";
    }
}

Dataset read_dataset(std::istream& in) {
    Dataset d;
    std::string line;
    if (!std::getline(in, line) || line.rfind("#nesy-dataset", 0) != 0)
        throw Error(Errc::Format, "line 1: missing '#nesy-dataset' header");
    std::istringstream header(line.substr(13));
    std::string field;
    bool has_parts = false, has_dim = false;
    while (header >> field) {
        auto eq = field.find('=');
        if (eq == std::string::npos) throw Error(Errc::Format, "line 1: malformed header field '" + field + "'");
        std::string key = field.substr(0, eq), value = field.substr(eq + 1);
        try {
            if (key == "task") d.task = value;
            else if (key == "parts") d.parts = std::stoul(value), has_parts = true;
            else if (key == "dim") d.part_dim = std::stoul(value), has_dim = true;
            else if (key == "labels") {
                std::istringstream ls(value);
                std::string name;
                while (std::getline(ls, name, ',')) d.label_names.push_back(name);
            }
        } catch (const std::logic_error&) {
            throw Error(Errc::Format, "line 1: bad value for '" + key + "'");
        }
    }
    if (!has_parts || !has_dim || d.parts == 0 || d.part_dim == 0 || d.label_names.empty())
        throw Error(Errc::Format, "line 1: header needs parts, dim and labels");

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream rec(line);
        std::string split, label, payload;
        if (!std::getline(rec, split, '\t') || !std::getline(rec, label, '\t') || !std::getline(rec, payload))
            throw Error(Errc::Format, "line " + std::to_string(lineno) + ": expected split, label and payload");
        if (split != "train" && split != "test")
            throw Error(Errc::Format, "line " + std::to_string(lineno) + ": unknown split '" + split + "'");
        auto pos = std::find(d.label_names.begin(), d.label_names.end(), label);
        if (pos == d.label_names.end())
            throw Error(Errc::Format, "line " + std::to_string(lineno) + ": unknown label '" + label + "'");
        std::vector<std::uint8_t> bytes;
        try {
            bytes = base64_decode(payload);
        } catch (const Error& e) {
            throw Error(Errc::Format, "line " + std::to_string(lineno) + ": " + e.what());
        }
        if (bytes.size() != d.parts * d.part_dim)
            throw Error(Errc::Format, "line " + std::to_string(lineno) + ": payload has " + std::to_string(bytes.size()) +
                                          " entries, expected " + std::to_string(d.parts * d.part_dim));
        Input item;
        for (std::size_t p = 0; p < d.parts; ++p) {
            Eigen::VectorXd v(static_cast<Eigen::Index>(d.part_dim));
            for (std::size_t k = 0; k < d.part_dim; ++k)
                v(static_cast<Eigen::Index>(k)) = bytes[p * d.part_dim + k] / 255.0;
            item.push_back(std::move(v));
        }
        d.items.push_back(std::move(item));
        d.labels.push_back(static_cast<std::size_t>(pos - d.label_names.begin()));
        d.splits.push_back(split == "train" ? Split::Train : Split::Test);
    }
    return d;
}

void save_dataset(const std::string& path, const Dataset& d) {
    std::ofstream out(path);
    if (!out) throw Error(Errc::Io, "cannot write dataset '" + path + "'");
    write_dataset(out, d);
    if (!out) throw Error(Errc::Io, "write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot read dataset '" + path + "'");
    try {
        return read_dataset(in);
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

} // namespace nesy
