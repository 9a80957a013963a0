#ifndef NESY_TRAINER_HPP
#define NESY_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "nesy/bilevel.hpp"
#include "nesy/inference.hpp"
#include "nesy/tasks.hpp"

namespace nesy {

struct TrainConfig {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
    int em_rounds = 30;
    int e_passes = 5;
    int m_steps = 10;
    double lr_theta1 = 1e-3;
    double lr_theta2 = 1e-3;
    double lr_w = 0.05;
    std::size_t batch = 64;
    std::uint64_t seed = 0;
    std::size_t grounding_cap = kDefaultGroundingCap;
    LcroForm l_cro_form = LcroForm::Conventional;
    std::size_t feature_dim = 64;
    std::size_t hidden = 64;
    int mf_sweeps = 3;

    Factors factors() const { return {alpha, beta, gamma}; }
    /// Throws InvalidConfig / FactorRange.
    void validate() const;

    /// `key = value` lines, one per field, fixed order.
    std::string to_text() const;
    /// Sets one field from text; throws InvalidConfig for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    /// Applies every `key = value` line (`#` comments allowed) on top of *this.
    void apply_text(const std::string& text);
};

/// Everything needed to turn dataset items into per-item bi-level models.
struct TaskContext {
    std::string task;
    std::size_t parts = 0;
    std::size_t part_dim = 0;
    std::vector<std::string> label_names;
    std::shared_ptr<const RuleSet> all_rules; ///< as supplied
    std::shared_ptr<const RuleSet> rules;     ///< relevant subset used for grounding
    ValueDomains domains;                     ///< completed value domains
    std::vector<std::string> constants;       ///< c1..c<parts>
    MlnGraph graph_template;                  ///< grounded, no evidence
    std::string family;                       ///< value-family predicate for numeric labels, else empty
    std::vector<std::string> relevant_labels;

    /// Rules are narrowed to those mentioning a relevant label (or the value
    /// family that numeric labels live in).
    static TaskContext make(const std::string& task, std::size_t parts, std::size_t part_dim,
                            std::vector<std::string> label_names, const std::vector<std::string>& relevant_labels,
                            const RuleSet& rules, const ValueDomains& domains, std::size_t cap);
    /// Relevant labels are those of the training items.
    static TaskContext make(const Dataset& d, const RuleSet& rules, const ValueDomains& domains, std::size_t cap);
};

/// Per-item bi-level model plus bookkeeping for the concept network.
struct ItemModel {
    BiLevelModel model;
    struct Eval {
        std::size_t scorer = 0;
        std::vector<std::size_t> constants;
    };
    std::vector<Eval> evals;
    std::vector<long> atom_eval;          ///< eval index per atom, -1 when unscored
    std::vector<Eigen::Index> atom_entry; ///< output entry within that eval
    std::vector<std::size_t> refinable;   ///< free atoms refined by mean-field
    std::vector<Eigen::VectorXd> targets; ///< per eval: L_cro target, empty when none
};

/// Builds the item's model. `label` (index into label_names) adds training
/// evidence; pass -1 for unlabelled items.
ItemModel build_item_model(const TaskContext& ctx, const ConceptNetworkState& concepts, const WeightVector& w,
                           long label);

/// Atom scores for one item: observed atoms fixed, scored atoms from the concept
/// network, refinable atoms by mean-field (using model.labels).
Assignment item_scores(const ItemModel& item, const ConceptNetworkState& concepts,
                       const std::vector<Eigen::VectorXd>& features, int mf_sweeps,
                       std::vector<Eigen::VectorXd>* eval_outputs = nullptr, ConceptTape* tape = nullptr);

struct RoundDiagnostics {
    int round = 0;
    double o_task = 0.0;
    double o_logic = 0.0;
    double l_cro = 0.0;
    double mean_phi_b = 0.0;
    double objective = 0.0;
    double train_acc = 0.0;
    double elbo = std::numeric_limits<double>::quiet_NaN(); ///< only for small latent sets
    double min_step_gain = 0.0;                             ///< smallest accepted per-batch objective change
    int rejected_steps = 0;
};

std::string format_diagnostics(const RoundDiagnostics& d);

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    TrainConfig config;
    int round = 0;
    std::string rules_text;
    std::uint64_t rules_hash = 0;
    std::string task;
    std::size_t parts = 0;
    std::size_t part_dim = 0;
    std::vector<std::string> label_names;
    ValueDomains domains;
    std::string data_path;
    std::vector<std::string> relevant_labels;
    std::vector<std::string> trained_predicates;
    TaskNetworkState task_net;
    ConceptNetworkState concepts;
    WeightVector weights;
    std::vector<RoundDiagnostics> diagnostics;
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

/// Raised when the objective turns non-finite; carries the last good state.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, Checkpoint last_good)
        : Error(Errc::Divergence, what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const { return last_good_; }

private:
    Checkpoint last_good_;
};

struct TrainOptions {
    /// Run the symbolic side even when beta = gamma = 0 (used to check independence).
    bool force_symbolic = false;
    /// Called after every round.
    std::function<void(const RoundDiagnostics&)> on_round;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<RoundDiagnostics> diagnostics;
};

TrainResult train(const TrainConfig& cfg, const Dataset& data, const RuleSet& rules, const ValueDomains& domains,
                  const TrainOptions& options = {});

/// Rules of a checkpoint, verified against its stored hash.
RuleSet checkpoint_rules(const Checkpoint& c);
TaskContext checkpoint_context(const Checkpoint& c);

/// NRM argmax when beta = 0, otherwise the revised pseudo-label.
std::vector<PseudoLabel> predict_transductive(const Checkpoint& c, const std::vector<Input>& items);

enum class EvalMode { Transductive, Inductive };

/// Scores `data` (its test split when present). Inductive mode needs `rules`;
/// transductive mode accepts the checkpoint's own rules (hash-checked) or none.
Metrics evaluate(const Checkpoint& c, const Dataset& data, EvalMode mode, const RuleSet* rules = nullptr);

/// Per item inductive results under rewritten rules.
std::vector<InductiveResult> infer_items(const Checkpoint& c, const RuleSet& rules, const std::vector<Input>& items);

/// Explanation of one item. With the checkpoint's own rules the revised
/// pseudo-label drives the high-level layer; with rewritten rules the pseudo-label
/// is the normalised body truth of each rule head.
struct ItemExplanation {
    Explanation explanation;
    BiLevelModel model;
    std::vector<std::string> label_names;
};
ItemExplanation explain_item(const Checkpoint& c, const RuleSet& rules, const Input& item);

} // namespace nesy

#endif // NESY_TRAINER_HPP
