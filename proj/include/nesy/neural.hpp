#ifndef NESY_NEURAL_HPP
#define NESY_NEURAL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nesy/grounding.hpp"

namespace nesy {

/// Mutable view of one parameter tensor (column-major, Eigen layout).
struct ParamView {
    std::string name;
    double* data = nullptr;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;

    Eigen::Map<Eigen::MatrixXd> map() const { return {data, rows, cols}; }
    Eigen::Index size() const { return rows * cols; }
};

std::uint64_t checksum(const std::vector<ParamView>& params);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
/// Adjoint of the logits given the adjoint of p = softmax(logits).
Eigen::VectorXd softmax_backward(const Eigen::VectorXd& p, const Eigen::VectorXd& dp);

struct PseudoLabel {
    Eigen::VectorXd distribution;
    std::size_t hard = 0; ///< smallest index among the maximal entries

    static PseudoLabel from_distribution(Eigen::VectorXd dist);
};

// ---------------------------------------------------------------------------
// Task network: shared per-part encoder, linear classifier over all parts
// ---------------------------------------------------------------------------

/// One item: a fixed number of parts (e.g. glyphs), each a real vector.
using Input = std::vector<Eigen::VectorXd>;

struct TaskNetworkState {
    std::size_t parts = 0;
    std::size_t part_dim = 0;
    std::size_t hidden = 0;
    std::size_t feature_dim = 0;
    std::size_t labels = 0;

    Eigen::MatrixXd w1; ///< hidden x part_dim
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2; ///< feature_dim x hidden
    Eigen::VectorXd b2;
    Eigen::MatrixXd wc; ///< labels x (parts * feature_dim)
    Eigen::VectorXd bc;

    static TaskNetworkState init(std::size_t parts, std::size_t part_dim, std::size_t hidden, std::size_t feature_dim,
                                 std::size_t labels, std::uint64_t seed);
    /// Same shapes, all zeros (gradient accumulator).
    TaskNetworkState zeros_like() const;

    std::vector<ParamView> params();
    std::uint64_t checksum() const;
};

struct TaskTape {
    std::uint64_t checksum = 0;
    std::vector<Input> inputs;
    std::vector<std::vector<Eigen::VectorXd>> z1, z2; ///< pre-activations [item][part]
    std::vector<Eigen::VectorXd> probs;
};

struct TaskOutput {
    std::vector<PseudoLabel> labels;
    std::vector<Eigen::VectorXd> logits;
    std::vector<std::vector<Eigen::VectorXd>> features; ///< [item][part], each feature_dim
};

TaskOutput task_forward(const TaskNetworkState& state, const std::vector<Input>& batch, TaskTape* tape = nullptr);

/// Encoder features of each part, for any number of parts.
std::vector<Eigen::VectorXd> task_encode(const TaskNetworkState& state, const Input& item);

/// Loss adjoints for a recorded batch. Empty vectors mean zero.
struct TaskAdjoint {
    std::vector<Eigen::VectorXd> dlogits;
    std::vector<std::vector<Eigen::VectorXd>> dfeatures;
};

TaskNetworkState task_backward(const TaskNetworkState& state, const TaskTape& tape, const TaskAdjoint& adjoint);

// ---------------------------------------------------------------------------
// Concept network: one scorer per predicate over entity feature vectors
// ---------------------------------------------------------------------------

enum class ScorerKind { Unary, Binary, Value };

struct Scorer {
    std::string predicate;
    ScorerKind kind = ScorerKind::Unary;
    std::size_t entity_arity = 1;
    std::vector<long> domain; ///< Value scorers only
    Eigen::MatrixXd w; ///< Unary 1xD, Binary DxD, Value |domain| x (entity_arity*D)
    Eigen::VectorXd b; ///< size 1, or |domain|

    std::size_t outputs() const { return kind == ScorerKind::Value ? domain.size() : 1; }
};

struct ConceptNetworkState {
    std::size_t feature_dim = 0;
    std::vector<Scorer> scorers;

    /// Scorers for every predicate with one or two entity slots and no value
    /// slot, or entity slots plus a single value slot with a known domain.
    static ConceptNetworkState init(const RuleSet& rules, const ValueDomains& domains, std::size_t feature_dim,
                                    std::uint64_t seed);
    ConceptNetworkState zeros_like() const;

    std::optional<std::size_t> find(const std::string& predicate) const;
    std::vector<ParamView> params();
    std::uint64_t checksum() const;
};

struct ConceptEval {
    std::size_t scorer = 0;
    std::vector<Eigen::VectorXd> inputs;
    Eigen::VectorXd out;
};

struct ConceptTape {
    std::uint64_t checksum = 0;
    std::vector<ConceptEval> evals;
};

/// Scalar scorers return a length-1 vector in (0,1); value scorers a distribution.
Eigen::VectorXd concept_forward(const ConceptNetworkState& state, std::size_t scorer,
                                const std::vector<Eigen::VectorXd>& features, ConceptTape* tape = nullptr);

struct ConceptGradient {
    ConceptNetworkState params;
    std::vector<std::vector<Eigen::VectorXd>> dinputs; ///< [eval][entity]
};

/// `dout[k]` is the adjoint of tape.evals[k].out.
ConceptGradient concept_backward(const ConceptNetworkState& state, const ConceptTape& tape,
                                 const std::vector<Eigen::VectorXd>& dout);

/// Q(A) for one ground atom given features per constant index. Scalar atoms give
/// their probability; value-typed atoms the probability of their value.
double concept_score(const ConceptNetworkState& state, const MlnGraph& graph, std::size_t atom,
                     const std::vector<Eigen::VectorXd>& features_by_constant);

/// Full output distribution (or length-1 probability) for a predicate applied to constants.
Eigen::VectorXd concept_distribution(const ConceptNetworkState& state, const std::string& predicate,
                                     const std::vector<Eigen::VectorXd>& features);

// ---------------------------------------------------------------------------
// Concept cross-entropy
// ---------------------------------------------------------------------------

enum class LcroForm { Literal, Conventional };

/// One scored atom (length 1) or value group (a distribution) and its target.
struct CroTerm {
    Eigen::VectorXd q;
    Eigen::VectorXd target;
};

inline constexpr double kLogClamp = 1e-12;

/// Literal: sum q * log(target). Conventional: binary cross-entropy for
/// length-1 terms, categorical -sum target * log q otherwise. `dq`, when given,
/// receives d L / d q per term.
double concept_cross_entropy(const std::vector<CroTerm>& terms, LcroForm form,
                             std::vector<Eigen::VectorXd>* dq = nullptr);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    /// Moves params along +grad (ascent) scaled by `scale` * lr.
    void ascend(const std::vector<ParamView>& params, const std::vector<ParamView>& grads, double scale = 1.0);

    double lr() const { return lr_; }
    long steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Eigen::ArrayXd> m_, v_;
};

} // namespace nesy

#endif // NESY_NEURAL_HPP
