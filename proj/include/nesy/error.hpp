#ifndef NESY_ERROR_HPP
#define NESY_ERROR_HPP

#include <stdexcept>
#include <string>

namespace nesy {

enum class Errc {
    // rule language
    Syntax,
    UndeclaredPredicate,
    ArityMismatch,
    DuplicateRuleId,
    DuplicatePredicate,
    UnboundHeadVariable,
    InvalidWeight,
    // fuzzy logic
    Domain,
    MissingScore,
    // grounding / graphs
    GroundingCap,
    EmptyDomain,
    UnknownConstant,
    UnknownAtom,
    // inference over the network
    SizeMismatch,
    TooLarge,
    NonFinite,
    // neural
    ShapeMismatch,
    MissingFeature,
    KindMismatch,
    StaleTape,
    // bilevel / training
    Unbridged,
    FactorRange,
    InvalidConfig,
    Divergence,
    // inference over trained state
    UntrainedPredicate,
    // tasks / io
    Unsupported,
    Uncoverable,
    LengthMismatch,
    Io,
    Format,
    HashMismatch,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// Rule-language error carrying the 1-based source position.
class ParseError : public Error {
public:
    ParseError(Errc code, int line, int column, const std::string& message)
        : Error(code, format(line, column, message)), line_(line), column_(column) {}

    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    static std::string format(int line, int column, const std::string& message) {
        return std::to_string(line) + ":" + std::to_string(column) + ": " + message;
    }

    int line_;
    int column_;
};

} // namespace nesy

#endif // NESY_ERROR_HPP
