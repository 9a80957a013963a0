#ifndef NESY_TASKS_HPP
#define NESY_TASKS_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "nesy/grounding.hpp"
#include "nesy/neural.hpp"

namespace nesy {

enum class Split { Train, Test };

/// Labelled items. Digit tasks carry only sum labels; per-digit truth is never
/// part of a Dataset.
struct Dataset {
    std::string task; ///< "digits", "digits2" or "attributes"
    std::size_t parts = 0;
    std::size_t part_dim = 0;
    std::vector<std::string> label_names;
    std::vector<Input> items;
    std::vector<std::size_t> labels; ///< indices into label_names
    std::vector<Split> splits;

    std::size_t size() const { return items.size(); }
    Dataset subset(Split split) const;
    Dataset take(std::size_t n) const; ///< first n items
};

// ---------------------------------------------------------------------------
// Glyph digits
// ---------------------------------------------------------------------------

inline constexpr std::size_t kGlyphSide = 8;
inline constexpr std::size_t kGlyphPixels = kGlyphSide * kGlyphSide;

/// 8x8 binary template of digit d, row-major.
const std::array<std::uint8_t, kGlyphPixels>& glyph_template(int d);

Eigen::VectorXd render_glyph(int digit, double noise, std::mt19937_64& rng);

struct DigitData {
    Dataset data;
    /// Per item, the digit drawn for every part. For audits only; training code
    /// takes a Dataset and never sees these.
    std::vector<std::vector<int>> audit_digits;
};

/// `num_digits` 1: items are glyph pairs labelled with their sum (0..18).
/// `num_digits` 2: items are (a1, a2, b1, b2) labelled 10*a1 + a2 + 10*b1 + b2 (0..198).
DigitData gen_digit_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test, double noise,
                            int num_digits = 1);

RuleSet make_addition_rules(int num_digits);
ValueDomains digit_domains();

// ---------------------------------------------------------------------------
// Attribute zero-shot pack
// ---------------------------------------------------------------------------

inline constexpr std::size_t kAttributeRepeat = 4;

/// Class rules `attr1(x) & attr2(x) & attr3(x) => class(x)` for the built-in
/// animal pack (five seen classes, tiger and killerwhale unseen).
RuleSet attribute_rules();
std::vector<std::string> attribute_test_classes();

/// Unary body predicates of the class rules, in declaration order.
std::vector<std::string> attribute_names(const RuleSet& class_rules);

/// Each item is the class signature over attribute_names, repeated
/// kAttributeRepeat times, with per-entry flip noise. Classes in `test_classes`
/// go to the test split, the rest to train.
Dataset gen_attribute_dataset(std::uint64_t seed, std::size_t n_per_class, const RuleSet& class_rules,
                              const std::vector<std::string>& test_classes, double noise);

// ---------------------------------------------------------------------------
// Metrics and files
// ---------------------------------------------------------------------------

struct Metrics {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    double acc = 0.0;
};

/// Two classes: confusion with class 1 as positive. More: tp = correct,
/// fn = wrong, so acc is the exact-match fraction.
Metrics accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels,
                 std::size_t num_classes = 0);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Header `#nesy-dataset task=<t> parts=<n> dim=<m> labels=<a,b,...>`, then
/// `split<TAB>label<TAB>base64(bytes)` per item with one byte per entry (v*255).
void write_dataset(std::ostream& out, const Dataset& d);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

/// Derived per-item stream so generation is order-independent.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

} // namespace nesy

#endif // NESY_TASKS_HPP
