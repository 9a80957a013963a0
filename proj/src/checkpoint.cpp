#include <cstring>
#include <fstream>
#include <sstream>

#include "nesy/trainer.hpp"

namespace nesy {

namespace {

constexpr char kMagic[8] = {'N', 'E', 'S', 'Y', 'C', 'K', 'P', 'T'};

class Writer {
public:
    void u64(std::uint64_t v) {
        for (int k = 0; k < 8; ++k) out_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    }
    void u32(std::uint32_t v) {
        for (int k = 0; k < 4; ++k) out_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    }
    void i64(long v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u64(bits);
    }
    void str(const std::string& s) {
        u64(s.size());
        out_ += s;
    }
    void strings(const std::vector<std::string>& v) {
        u64(v.size());
        for (const auto& s : v) str(s);
    }
    void longs(const std::vector<long>& v) {
        u64(v.size());
        for (long x : v) i64(x);
    }
    void tensor(const ParamView& p) {
        str(p.name);
        u64(static_cast<std::uint64_t>(p.rows));
        u64(static_cast<std::uint64_t>(p.cols));
        for (Eigen::Index i = 0; i < p.size(); ++i) f64(p.data[i]);
    }
    void raw(const char* p, std::size_t n) { out_.append(p, n); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= std::uint64_t(static_cast<unsigned char>(in_[pos_ + k])) << (8 * k);
        pos_ += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= std::uint32_t(static_cast<unsigned char>(in_[pos_ + k])) << (8 * k);
        pos_ += 4;
        return v;
    }
    long i64() { return static_cast<long>(u64()); }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::size_t count() {
        std::uint64_t n = u64();
        if (n > in_.size() - pos_) throw Error(Errc::Format, "checkpoint length field out of range");
        return static_cast<std::size_t>(n);
    }
    std::string str() {
        std::size_t n = count();
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<std::string> strings() {
        std::vector<std::string> v(count());
        for (auto& s : v) s = str();
        return v;
    }
    std::vector<long> longs() {
        std::vector<long> v(count());
        for (auto& x : v) x = i64();
        return v;
    }
    void tensor(const ParamView& p) {
        std::string name = str();
        if (name != p.name) throw Error(Errc::Format, "expected tensor '" + p.name + "', found '" + name + "'");
        auto rows = u64(), cols = u64();
        if (rows != static_cast<std::uint64_t>(p.rows) || cols != static_cast<std::uint64_t>(p.cols))
            throw Error(Errc::Format, "tensor '" + name + "' has unexpected shape");
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data[i] = f64();
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw Error(Errc::Format, "checkpoint is truncated");
    }
    const std::string& in_;
    std::size_t pos_ = 0;
};

} // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(Checkpoint::kVersion);
    w.u64(c.rules_hash);
    w.i64(c.round);
    w.str(c.config.to_text());
    w.str(c.rules_text);
    w.str(c.task);
    w.u64(c.parts);
    w.u64(c.part_dim);
    w.strings(c.label_names);
    w.u64(c.domains.size());
    for (const auto& [name, dom] : c.domains) {
        w.str(name);
        w.longs(dom);
    }
    w.str(c.data_path);
    w.strings(c.relevant_labels);
    w.strings(c.trained_predicates);

    auto task = c.task_net;
    for (std::size_t v : {task.parts, task.part_dim, task.hidden, task.feature_dim, task.labels}) w.u64(v);
    for (const auto& p : task.params()) w.tensor(p);

    auto concepts = c.concepts;
    w.u64(concepts.feature_dim);
    w.u64(concepts.scorers.size());
    for (const auto& s : concepts.scorers) {
        w.str(s.predicate);
        w.u32(static_cast<std::uint32_t>(s.kind));
        w.u64(s.entity_arity);
        w.longs(s.domain);
    }
    for (const auto& p : concepts.params()) w.tensor(p);

    w.u64(c.weights.size());
    for (std::size_t i = 0; i < c.weights.size(); ++i) {
        w.str(c.weights.ids[i]);
        w.f64(c.weights.values(static_cast<Eigen::Index>(i)));
    }

    w.u64(c.diagnostics.size());
    for (const auto& d : c.diagnostics) {
        w.i64(d.round);
        for (double v : {d.o_task, d.o_logic, d.l_cro, d.mean_phi_b, d.objective, d.train_acc, d.elbo, d.min_step_gain})
            w.f64(v);
        w.i64(d.rejected_steps);
    }
    return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
        throw Error(Errc::Format, "not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != Checkpoint::kVersion)
        throw Error(Errc::Format, "unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.rules_hash = r.u64();
    c.round = static_cast<int>(r.i64());
    c.config.apply_text(r.str());
    c.rules_text = r.str();
    c.task = r.str();
    c.parts = r.u64();
    c.part_dim = r.u64();
    c.label_names = r.strings();
    for (std::size_t n = r.count(); n > 0; --n) {
        std::string name = r.str();
        c.domains[name] = r.longs();
    }
    c.data_path = r.str();
    c.relevant_labels = r.strings();
    c.trained_predicates = r.strings();

    auto& t = c.task_net;
    t.parts = r.u64();
    t.part_dim = r.u64();
    t.hidden = r.u64();
    t.feature_dim = r.u64();
    t.labels = r.u64();
    const auto H = static_cast<Eigen::Index>(t.hidden), P = static_cast<Eigen::Index>(t.part_dim),
               D = static_cast<Eigen::Index>(t.feature_dim), L = static_cast<Eigen::Index>(t.labels);
    t.w1.resize(H, P);
    t.b1.resize(H);
    t.w2.resize(D, H);
    t.b2.resize(D);
    t.wc.resize(L, static_cast<Eigen::Index>(t.parts) * D);
    t.bc.resize(L);
    for (const auto& p : t.params()) r.tensor(p);

    auto& cn = c.concepts;
    cn.feature_dim = r.u64();
    const auto CD = static_cast<Eigen::Index>(cn.feature_dim);
    cn.scorers.resize(r.count());
    for (auto& s : cn.scorers) {
        s.predicate = r.str();
        const std::uint32_t kind = r.u32();
        if (kind > static_cast<std::uint32_t>(ScorerKind::Value)) throw Error(Errc::Format, "unknown scorer kind");
        s.kind = static_cast<ScorerKind>(kind);
        s.entity_arity = r.u64();
        s.domain = r.longs();
        switch (s.kind) {
        case ScorerKind::Unary:
            s.w.resize(1, CD);
            s.b.resize(1);
            break;
        case ScorerKind::Binary:
            s.w.resize(CD, CD);
            s.b.resize(1);
            break;
        case ScorerKind::Value:
            s.w.resize(static_cast<Eigen::Index>(s.domain.size()), static_cast<Eigen::Index>(s.entity_arity) * CD);
            s.b.resize(static_cast<Eigen::Index>(s.domain.size()));
            break;
        }
    }
    for (const auto& p : cn.params()) r.tensor(p);

    const std::size_t nw = r.count();
    c.weights.values.resize(static_cast<Eigen::Index>(nw));
    for (std::size_t i = 0; i < nw; ++i) {
        c.weights.ids.push_back(r.str());
        c.weights.values(static_cast<Eigen::Index>(i)) = r.f64();
    }

    for (std::size_t n = r.count(); n > 0; --n) {
        RoundDiagnostics d;
        d.round = static_cast<int>(r.i64());
        for (double* v : {&d.o_task, &d.o_logic, &d.l_cro, &d.mean_phi_b, &d.objective, &d.train_acc, &d.elbo,
                          &d.min_step_gain})
            *v = r.f64();
        d.rejected_steps = static_cast<int>(r.i64());
        c.diagnostics.push_back(d);
    }
    if (!r.done()) throw Error(Errc::Format, "trailing bytes after checkpoint");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write checkpoint '" + path + "'");
    const std::string bytes = serialize_checkpoint(c);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::Io, "failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

} // namespace nesy
