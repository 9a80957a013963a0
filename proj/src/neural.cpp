#include "nesy/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

namespace nesy {

std::uint64_t checksum(const std::vector<ParamView>& params) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.data);
        const std::size_t n = static_cast<std::size_t>(p.size()) * sizeof(double);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    if (logits.size() == 0) return logits;
    Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return e / e.sum();
}

Eigen::VectorXd softmax_backward(const Eigen::VectorXd& p, const Eigen::VectorXd& dp) {
    return (p.array() * (dp.array() - p.dot(dp))).matrix();
}

PseudoLabel PseudoLabel::from_distribution(Eigen::VectorXd dist) {
    PseudoLabel l;
    l.distribution = std::move(dist);
    for (Eigen::Index i = 1; i < l.distribution.size(); ++i)
        if (l.distribution(i) > l.distribution(static_cast<Eigen::Index>(l.hard))) l.hard = static_cast<std::size_t>(i);
    return l;
}

namespace {

void fill_uniform(Eigen::MatrixXd& m, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
}

ParamView view(const std::string& name, Eigen::MatrixXd& m) { return {name, m.data(), m.rows(), m.cols()}; }
ParamView view(const std::string& name, Eigen::VectorXd& v) { return {name, v.data(), v.size(), 1}; }

Eigen::VectorXd relu(const Eigen::VectorXd& z) { return z.cwiseMax(0.0); }

Eigen::VectorXd relu_backward(const Eigen::VectorXd& z, const Eigen::VectorXd& d) {
    return (z.array() > 0.0).select(d, 0.0);
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

} // namespace

// ---------------------------------------------------------------------------
// Task network
// ---------------------------------------------------------------------------

TaskNetworkState TaskNetworkState::init(std::size_t parts, std::size_t part_dim, std::size_t hidden,
                                        std::size_t feature_dim, std::size_t labels, std::uint64_t seed) {
    if (parts == 0 || part_dim == 0 || hidden == 0 || feature_dim == 0 || labels == 0)
        throw Error(Errc::ShapeMismatch, "task network dimensions must be positive");
    TaskNetworkState s;
    s.parts = parts;
    s.part_dim = part_dim;
    s.hidden = hidden;
    s.feature_dim = feature_dim;
    s.labels = labels;
    const auto H = static_cast<Eigen::Index>(hidden), P = static_cast<Eigen::Index>(part_dim),
               D = static_cast<Eigen::Index>(feature_dim), L = static_cast<Eigen::Index>(labels);
    std::mt19937_64 rng(seed);
    s.w1.resize(H, P);
    fill_uniform(s.w1, part_dim, rng);
    s.b1 = Eigen::VectorXd::Zero(H);
    s.w2.resize(D, H);
    fill_uniform(s.w2, hidden, rng);
    s.b2 = Eigen::VectorXd::Zero(D);
    s.wc.resize(L, static_cast<Eigen::Index>(parts) * D);
    fill_uniform(s.wc, parts * feature_dim, rng);
    s.bc = Eigen::VectorXd::Zero(L);
    return s;
}

TaskNetworkState TaskNetworkState::zeros_like() const {
    TaskNetworkState z = *this;
    z.w1.setZero();
    z.b1.setZero();
    z.w2.setZero();
    z.b2.setZero();
    z.wc.setZero();
    z.bc.setZero();
    return z;
}

std::vector<ParamView> TaskNetworkState::params() {
    return {view("task.w1", w1), view("task.b1", b1), view("task.w2", w2),
            view("task.b2", b2), view("task.wc", wc), view("task.bc", bc)};
}

std::uint64_t TaskNetworkState::checksum() const { return nesy::checksum(const_cast<TaskNetworkState*>(this)->params()); }

TaskOutput task_forward(const TaskNetworkState& s, const std::vector<Input>& batch, TaskTape* tape) {
    TaskOutput out;
    if (tape) {
        *tape = TaskTape{};
        tape->checksum = s.checksum();
        tape->inputs = batch;
    }
    const auto D = static_cast<Eigen::Index>(s.feature_dim);
    Eigen::VectorXd concat(static_cast<Eigen::Index>(s.parts) * D);
    for (const Input& item : batch) {
        if (item.size() != s.parts)
            throw Error(Errc::ShapeMismatch, "item has " + std::to_string(item.size()) + " parts, network expects " +
                                                 std::to_string(s.parts));
        std::vector<Eigen::VectorXd> feats, z1s, z2s;
        for (std::size_t k = 0; k < s.parts; ++k) {
            if (static_cast<std::size_t>(item[k].size()) != s.part_dim)
                throw Error(Errc::ShapeMismatch, "part of size " + std::to_string(item[k].size()) + ", expected " +
                                                     std::to_string(s.part_dim));
            Eigen::VectorXd z1 = s.w1 * item[k] + s.b1;
            Eigen::VectorXd z2 = s.w2 * relu(z1) + s.b2;
            Eigen::VectorXd e = relu(z2);
            concat.segment(static_cast<Eigen::Index>(k) * D, D) = e;
            feats.push_back(std::move(e));
            if (tape) {
                z1s.push_back(std::move(z1));
                z2s.push_back(std::move(z2));
            }
        }
        Eigen::VectorXd logits = s.wc * concat + s.bc;
        Eigen::VectorXd p = softmax(logits);
        if (tape) {
            tape->z1.push_back(std::move(z1s));
            tape->z2.push_back(std::move(z2s));
            tape->probs.push_back(p);
        }
        out.labels.push_back(PseudoLabel::from_distribution(std::move(p)));
        out.logits.push_back(std::move(logits));
        out.features.push_back(std::move(feats));
    }
    return out;
}

std::vector<Eigen::VectorXd> task_encode(const TaskNetworkState& s, const Input& item) {
    std::vector<Eigen::VectorXd> out;
    for (const auto& x : item) {
        if (static_cast<std::size_t>(x.size()) != s.part_dim)
            throw Error(Errc::ShapeMismatch, "part of size " + std::to_string(x.size()) + ", expected " +
                                                 std::to_string(s.part_dim));
        out.push_back(relu(s.w2 * relu(s.w1 * x + s.b1) + s.b2));
    }
    return out;
}

TaskNetworkState task_backward(const TaskNetworkState& s, const TaskTape& tape, const TaskAdjoint& adj) {
    if (tape.checksum != s.checksum())
        throw Error(Errc::StaleTape, "task tape was recorded with different parameters");
    const std::size_t n = tape.inputs.size();
    if ((!adj.dlogits.empty() && adj.dlogits.size() != n) || (!adj.dfeatures.empty() && adj.dfeatures.size() != n))
        throw Error(Errc::StaleTape, "adjoint batch size does not match the tape");
    TaskNetworkState g = s.zeros_like();
    const auto D = static_cast<Eigen::Index>(s.feature_dim);
    Eigen::VectorXd concat(static_cast<Eigen::Index>(s.parts) * D);
    for (std::size_t i = 0; i < n; ++i) {
        const bool has_logits = !adj.dlogits.empty() && adj.dlogits[i].size() > 0;
        Eigen::VectorXd dconcat = Eigen::VectorXd::Zero(concat.size());
        if (has_logits) {
            for (std::size_t k = 0; k < s.parts; ++k)
                concat.segment(static_cast<Eigen::Index>(k) * D, D) = relu(tape.z2[i][k]);
            g.wc.noalias() += adj.dlogits[i] * concat.transpose();
            g.bc += adj.dlogits[i];
            dconcat.noalias() = s.wc.transpose() * adj.dlogits[i];
        }
        for (std::size_t k = 0; k < s.parts; ++k) {
            Eigen::VectorXd de = dconcat.segment(static_cast<Eigen::Index>(k) * D, D);
            if (!adj.dfeatures.empty() && k < adj.dfeatures[i].size() && adj.dfeatures[i][k].size() > 0)
                de += adj.dfeatures[i][k];
            if (de.isZero(0.0)) continue;
            Eigen::VectorXd dz2 = relu_backward(tape.z2[i][k], de);
            g.w2.noalias() += dz2 * relu(tape.z1[i][k]).transpose();
            g.b2 += dz2;
            Eigen::VectorXd dz1 = relu_backward(tape.z1[i][k], s.w2.transpose() * dz2);
            g.w1.noalias() += dz1 * tape.inputs[i][k].transpose();
            g.b1 += dz1;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Concept network
// ---------------------------------------------------------------------------

ConceptNetworkState ConceptNetworkState::init(const RuleSet& rules, const ValueDomains& domains,
                                              std::size_t feature_dim, std::uint64_t seed) {
    ConceptNetworkState s;
    s.feature_dim = feature_dim;
    const auto D = static_cast<Eigen::Index>(feature_dim);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto& d : rules.predicates) {
        Scorer sc;
        sc.predicate = d.name;
        sc.entity_arity = d.entity_arity;
        if (d.value_arity == 0 && d.entity_arity == 1) {
            sc.kind = ScorerKind::Unary;
            sc.w.resize(1, D);
            fill_uniform(sc.w, feature_dim, rng);
            sc.b = Eigen::VectorXd::Zero(1);
        } else if (d.value_arity == 0 && d.entity_arity == 2) {
            sc.kind = ScorerKind::Binary;
            sc.w.resize(D, D);
            fill_uniform(sc.w, feature_dim * feature_dim, rng);
            sc.b = Eigen::VectorXd::Zero(1);
        } else if (d.value_arity == 1 && d.entity_arity >= 1 && domains.count(d.name)) {
            sc.kind = ScorerKind::Value;
            sc.domain = domains.at(d.name);
            const auto in = static_cast<Eigen::Index>(d.entity_arity) * D;
            sc.w.resize(static_cast<Eigen::Index>(sc.domain.size()), in);
            fill_uniform(sc.w, d.entity_arity * feature_dim, rng);
            sc.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sc.domain.size()));
        } else {
            continue;
        }
        s.scorers.push_back(std::move(sc));
    }
    return s;
}

ConceptNetworkState ConceptNetworkState::zeros_like() const {
    ConceptNetworkState z = *this;
    for (auto& sc : z.scorers) {
        sc.w.setZero();
        sc.b.setZero();
    }
    return z;
}

std::optional<std::size_t> ConceptNetworkState::find(const std::string& predicate) const {
    for (std::size_t i = 0; i < scorers.size(); ++i)
        if (scorers[i].predicate == predicate) return i;
    return std::nullopt;
}

std::vector<ParamView> ConceptNetworkState::params() {
    std::vector<ParamView> out;
    for (auto& sc : scorers) {
        out.push_back(view("concept." + sc.predicate + ".w", sc.w));
        out.push_back(view("concept." + sc.predicate + ".b", sc.b));
    }
    return out;
}

std::uint64_t ConceptNetworkState::checksum() const {
    return nesy::checksum(const_cast<ConceptNetworkState*>(this)->params());
}

Eigen::VectorXd concept_forward(const ConceptNetworkState& s, std::size_t scorer,
                                const std::vector<Eigen::VectorXd>& features, ConceptTape* tape) {
    const Scorer& sc = s.scorers.at(scorer);
    if (features.size() != sc.entity_arity)
        throw Error(Errc::KindMismatch, "scorer '" + sc.predicate + "' takes " + std::to_string(sc.entity_arity) +
                                            " feature vectors, got " + std::to_string(features.size()));
    for (const auto& f : features)
        if (static_cast<std::size_t>(f.size()) != s.feature_dim)
            throw Error(Errc::ShapeMismatch, "feature vector of size " + std::to_string(f.size()) + ", expected " +
                                                 std::to_string(s.feature_dim));
    Eigen::VectorXd out;
    switch (sc.kind) {
    case ScorerKind::Unary:
        out = Eigen::VectorXd::Constant(1, sigmoid(sc.w.row(0).dot(features[0]) + sc.b(0)));
        break;
    case ScorerKind::Binary:
        out = Eigen::VectorXd::Constant(1, sigmoid(features[0].dot(sc.w * features[1]) + sc.b(0)));
        break;
    case ScorerKind::Value: {
        const auto D = static_cast<Eigen::Index>(s.feature_dim);
        Eigen::VectorXd x(static_cast<Eigen::Index>(features.size()) * D);
        for (std::size_t k = 0; k < features.size(); ++k) x.segment(static_cast<Eigen::Index>(k) * D, D) = features[k];
        out = softmax(sc.w * x + sc.b);
        break;
    }
    }
    if (tape) {
        if (tape->evals.empty()) tape->checksum = s.checksum();
        tape->evals.push_back({scorer, features, out});
    }
    return out;
}

ConceptGradient concept_backward(const ConceptNetworkState& s, const ConceptTape& tape,
                                 const std::vector<Eigen::VectorXd>& dout) {
    if (!tape.evals.empty() && tape.checksum != s.checksum())
        throw Error(Errc::StaleTape, "concept tape was recorded with different parameters");
    if (dout.size() != tape.evals.size()) throw Error(Errc::StaleTape, "adjoint count does not match the tape");
    ConceptGradient g;
    g.params = s.zeros_like();
    g.dinputs.resize(tape.evals.size());
    const auto D = static_cast<Eigen::Index>(s.feature_dim);
    for (std::size_t k = 0; k < tape.evals.size(); ++k) {
        const ConceptEval& ev = tape.evals[k];
        const Scorer& sc = s.scorers.at(ev.scorer);
        Scorer& gs = g.params.scorers[ev.scorer];
        auto& dx = g.dinputs[k];
        dx.assign(ev.inputs.size(), Eigen::VectorXd::Zero(D));
        if (dout[k].size() == 0) continue;
        if (static_cast<std::size_t>(dout[k].size()) != sc.outputs())
            throw Error(Errc::ShapeMismatch, "adjoint size mismatch for scorer '" + sc.predicate + "'");
        switch (sc.kind) {
        case ScorerKind::Unary: {
            double y = ev.out(0);
            double dz = dout[k](0) * y * (1.0 - y);
            gs.w.row(0) += dz * ev.inputs[0].transpose();
            gs.b(0) += dz;
            dx[0] = dz * sc.w.row(0).transpose();
            break;
        }
        case ScorerKind::Binary: {
            double y = ev.out(0);
            double dz = dout[k](0) * y * (1.0 - y);
            gs.w.noalias() += dz * ev.inputs[0] * ev.inputs[1].transpose();
            gs.b(0) += dz;
            dx[0] = dz * (sc.w * ev.inputs[1]);
            dx[1] = dz * (sc.w.transpose() * ev.inputs[0]);
            break;
        }
        case ScorerKind::Value: {
            Eigen::VectorXd dz = softmax_backward(ev.out, dout[k]);
            Eigen::VectorXd x(static_cast<Eigen::Index>(ev.inputs.size()) * D);
            for (std::size_t e = 0; e < ev.inputs.size(); ++e)
                x.segment(static_cast<Eigen::Index>(e) * D, D) = ev.inputs[e];
            gs.w.noalias() += dz * x.transpose();
            gs.b += dz;
            Eigen::VectorXd dxx = sc.w.transpose() * dz;
            for (std::size_t e = 0; e < ev.inputs.size(); ++e) dx[e] = dxx.segment(static_cast<Eigen::Index>(e) * D, D);
            break;
        }
        }
    }
    return g;
}

Eigen::VectorXd concept_distribution(const ConceptNetworkState& s, const std::string& predicate,
                                     const std::vector<Eigen::VectorXd>& features) {
    auto idx = s.find(predicate);
    if (!idx) throw Error(Errc::KindMismatch, "no concept scorer for predicate '" + predicate + "'");
    return concept_forward(s, *idx, features);
}

double concept_score(const ConceptNetworkState& s, const MlnGraph& graph, std::size_t atom,
                     const std::vector<Eigen::VectorXd>& features_by_constant) {
    const GroundAtom& a = graph.atom(atom);
    const auto& pred = graph.rules().predicates.at(a.predicate);
    auto idx = s.find(pred.name);
    if (!idx) throw Error(Errc::KindMismatch, "no concept scorer for predicate '" + pred.name + "'");
    std::vector<Eigen::VectorXd> feats;
    for (std::size_t c : a.entity_args) {
        if (c >= features_by_constant.size() || features_by_constant[c].size() == 0)
            throw Error(Errc::MissingFeature, "no feature vector for constant '" + graph.constants().at(c) + "'");
        feats.push_back(features_by_constant[c]);
    }
    Eigen::VectorXd out = concept_forward(s, *idx, feats);
    const Scorer& sc = s.scorers[*idx];
    if (sc.kind != ScorerKind::Value) return out(0);
    auto it = std::lower_bound(sc.domain.begin(), sc.domain.end(), a.value_args.at(0));
    if (it == sc.domain.end() || *it != a.value_args[0])
        throw Error(Errc::KindMismatch, "value " + std::to_string(a.value_args[0]) + " outside the scorer domain");
    return out(it - sc.domain.begin());
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

double concept_cross_entropy(const std::vector<CroTerm>& terms, LcroForm form, std::vector<Eigen::VectorXd>* dq) {
    double total = 0.0;
    if (dq) dq->clear();
    for (const auto& t : terms) {
        if (t.q.size() != t.target.size() || t.q.size() == 0)
            throw Error(Errc::SizeMismatch, "cross-entropy term with mismatched sizes");
        Eigen::VectorXd d(t.q.size());
        if (form == LcroForm::Literal) {
            for (Eigen::Index k = 0; k < t.q.size(); ++k) {
                double lt = std::log(std::max(t.target(k), kLogClamp));
                total += t.q(k) * lt;
                d(k) = lt;
            }
        } else if (t.q.size() == 1) {
            double q = std::clamp(t.q(0), kLogClamp, 1.0 - kLogClamp);
            double y = t.target(0);
            total += -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
            d(0) = -y / q + (1.0 - y) / (1.0 - q);
        } else {
            for (Eigen::Index k = 0; k < t.q.size(); ++k) {
                double q = std::max(t.q(k), kLogClamp);
                total += -t.target(k) * std::log(q);
                d(k) = -t.target(k) / q;
            }
        }
        if (dq) dq->push_back(std::move(d));
    }
    return total;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::ascend(const std::vector<ParamView>& params, const std::vector<ParamView>& grads, double scale) {
    if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "parameter/gradient count mismatch");
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.push_back(Eigen::ArrayXd::Zero(p.size()));
            v_.push_back(Eigen::ArrayXd::Zero(p.size()));
        }
    }
    if (m_.size() != params.size()) throw Error(Errc::ShapeMismatch, "optimizer state does not match parameters");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size())
            throw Error(Errc::ShapeMismatch, "gradient shape mismatch for '" + params[i].name + "'");
        Eigen::Map<Eigen::ArrayXd> p(params[i].data, params[i].size());
        Eigen::Map<const Eigen::ArrayXd> g(grads[i].data, grads[i].size());
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
        p += scale * lr_ * (m_[i] / c1) / ((v_[i] / c2).sqrt() + eps_);
    }
}

} // namespace nesy
