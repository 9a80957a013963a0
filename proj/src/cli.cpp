#include "nesy/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

namespace nesy {

namespace fs = std::filesystem;

TrainConfig resolve_config(const std::optional<std::string>& config_text,
                           const std::vector<std::pair<std::string, std::string>>& overrides) {
    TrainConfig cfg;
    if (config_text) cfg.apply_text(*config_text);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    cfg.validate();
    return cfg;
}

ValueDomains task_domains(const std::string& task) {
    if (task == "digits" || task == "digits2") return digit_domains();
    return {};
}

const std::vector<AblationVariant>& ablation_variants() {
    static const std::vector<AblationVariant> v{
        {"full", 1.0, 1.0, 1.0}, {"-SRM", 1.0, 0.0, 0.0}, {"-NRM", 0.5, 1.0, 1.0}, {"-OI", 1.0, 1.0, 0.0}};
    return v;
}

namespace {

/// Usage problems (bad flags, missing inputs) map to exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path, const std::string& flag) {
    if (!fs::exists(path)) throw Error(Errc::Io, flag + ": file '" + path + "' does not exist");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, flag + ": cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write '" + path + "'");
    out << text;
}

RuleSet load_rules(const std::string& path) {
    const std::string text = read_file(path, "--rules");
    try {
        return parse_rules(text);
    } catch (const Error& e) {
        throw Error(e.code(), path + ":" + e.what());
    }
}

Dataset load_data(const std::string& path, const std::string& flag) {
    if (!fs::exists(path)) throw Error(Errc::Io, flag + ": file '" + path + "' does not exist");
    return load_dataset(path);
}

std::string fmt(double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}

std::string metrics_text(const Metrics& m, const std::string& mode) {
    std::ostringstream o;
    o << "mode\t" << mode << "\nacc\t" << fmt(m.acc) << "\ntp\t" << m.tp << "\ntn\t" << m.tn << "\nfp\t" << m.fp
      << "\nfn\t" << m.fn << "\n";
    return o.str();
}

struct Common {
    std::string rules, data, checkpoint, out, config, input, mode = "transductive", task = "digits";
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha, beta, gamma;
    std::vector<std::string> sets;
    int digits = 1;
    std::size_t n_train = 300, n_test = 1000, per_class = 40;
    double noise = 0.1;
    std::string emit_rules;
};

TrainConfig config_from(const Common& c) {
    std::optional<std::string> text;
    if (!c.config.empty()) text = read_file(c.config, "--config");
    std::vector<std::pair<std::string, std::string>> ov;
    for (const auto& s : c.sets) {
        auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
        ov.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (c.seed) ov.emplace_back("seed", std::to_string(*c.seed));
    if (c.alpha) ov.emplace_back("alpha", fmt(*c.alpha));
    if (c.beta) ov.emplace_back("beta", fmt(*c.beta));
    if (c.gamma) ov.emplace_back("gamma", fmt(*c.gamma));
    return resolve_config(text, ov);
}

void require(const std::string& value, const std::string& flag, const std::string& cmd) {
    if (value.empty()) throw UsageError(cmd + ": " + flag + " is required");
}

int cmd_gen_data(const Common& c, std::ostream& out) {
    require(c.out, "--out", "gen-data");
    const std::uint64_t seed = c.seed.value_or(0);
    Dataset d;
    RuleSet rules;
    if (c.task == "digits") {
        if (c.digits != 1 && c.digits != 2) throw UsageError("--digits must be 1 or 2");
        d = gen_digit_dataset(seed, c.n_train, c.n_test, c.noise, c.digits).data;
        rules = make_addition_rules(c.digits);
    } else if (c.task == "attributes") {
        rules = attribute_rules();
        d = gen_attribute_dataset(seed, c.per_class, rules, attribute_test_classes(), c.noise);
    } else {
        throw UsageError("--task must be 'digits' or 'attributes'");
    }
    save_dataset(c.out, d);
    if (!c.emit_rules.empty()) write_file(c.emit_rules, render_rules(rules));
    out << "wrote " << d.size() << " items to " << c.out << "\n";
    return kExitOk;
}

int cmd_train(const Common& c, std::ostream& out, std::ostream& err) {
    require(c.rules, "--rules", "train");
    require(c.data, "--data", "train");
    require(c.out, "--out", "train");
    const TrainConfig cfg = config_from(c);
    const RuleSet rules = load_rules(c.rules);
    const Dataset data = load_data(c.data, "--data");
    fs::create_directories(c.out);
    const fs::path dir(c.out);
    std::ofstream diag(dir / "diagnostics.tsv", std::ios::trunc);
    TrainOptions opt;
    opt.on_round = [&](const RoundDiagnostics& d) {
        diag << format_diagnostics(d) << "\n";
        diag.flush();
    };
    try {
        TrainResult r = train(cfg, data, rules, task_domains(data.task), opt);
        r.checkpoint.data_path = c.data;
        save_checkpoint((dir / "final").string(), r.checkpoint);
        write_file((dir / "config.txt").string(), cfg.to_text());
        out << "trained " << cfg.em_rounds << " rounds; checkpoint " << (dir / "final").string() << "\n";
        if (!r.diagnostics.empty()) out << format_diagnostics(r.diagnostics.back()) << "\n";
        return kExitOk;
    } catch (const DivergenceError& e) {
        Checkpoint last = e.last_good();
        last.data_path = c.data;
        save_checkpoint((dir / "last_good").string(), last);
        err << "error: " << e.what() << "; last good state saved to " << (dir / "last_good").string() << "\n";
        return kExitDivergence;
    }
}

EvalMode parse_mode(const std::string& m) {
    if (m == "transductive") return EvalMode::Transductive;
    if (m == "inductive") return EvalMode::Inductive;
    throw UsageError("--mode must be 'transductive' or 'inductive'");
}

int cmd_eval(const Common& c, std::ostream& out) {
    require(c.checkpoint, "--checkpoint", "eval");
    const EvalMode mode = parse_mode(c.mode);
    if (!fs::exists(c.checkpoint)) throw Error(Errc::Io, "--checkpoint: file '" + c.checkpoint + "' does not exist");
    const Checkpoint ck = load_checkpoint(c.checkpoint);
    const std::string data_path = c.data.empty() ? ck.data_path : c.data;
    if (data_path.empty()) throw UsageError("eval: --data is required (the checkpoint records no data path)");
    const Dataset data = load_data(data_path, "--data");
    std::optional<RuleSet> rules;
    if (!c.rules.empty()) rules = load_rules(c.rules);
    if (mode == EvalMode::Inductive && !rules) throw UsageError("eval: inductive mode needs --rules");
    const Metrics m = evaluate(ck, data, mode, rules ? &*rules : nullptr);
    const std::string text = metrics_text(m, c.mode);
    const std::string dest = c.out.empty() ? c.checkpoint + ".metrics" : c.out;
    write_file(dest, text);
    out << text;
    return kExitOk;
}

int cmd_explain(const Common& c, std::ostream& out) {
    require(c.checkpoint, "--checkpoint", "explain");
    require(c.input, "--input", "explain");
    if (!fs::exists(c.checkpoint)) throw Error(Errc::Io, "--checkpoint: file '" + c.checkpoint + "' does not exist");
    const Checkpoint ck = load_checkpoint(c.checkpoint);
    const RuleSet rules = c.rules.empty() ? checkpoint_rules(ck) : load_rules(c.rules);
    const Dataset items = load_data(c.input, "--input");
    std::ostringstream report;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const ItemExplanation ex = explain_item(ck, rules, items.items[i]);
        report << "item\t" << i << "\n" << render_explanation(ex.explanation, ex.model, ex.label_names) << "\n";
    }
    if (!c.out.empty()) write_file(c.out, report.str());
    out << report.str();
    return kExitOk;
}

int cmd_infer(const Common& c, std::ostream& out) {
    require(c.checkpoint, "--checkpoint", "infer");
    require(c.rules, "--rules", "infer");
    require(c.input, "--input", "infer");
    if (!fs::exists(c.checkpoint)) throw Error(Errc::Io, "--checkpoint: file '" + c.checkpoint + "' does not exist");
    const Checkpoint ck = load_checkpoint(c.checkpoint);
    const RuleSet rules = load_rules(c.rules);
    const Dataset items = load_data(c.input, "--input");
    std::ostringstream report;
    const auto results = infer_items(ck, rules, items.items);
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        report << "item\t" << i << "\thead\t" << r.head_label << "\trule\t" << rules.rules[r.rule].id << "\tbody_truth\t"
               << fmt(r.body_truth) << "\n";
        for (const auto& s : r.reasoning_path) report << "step\t" << s.atom << "\t" << s.label << "\t" << fmt(s.score) << "\n";
    }
    if (!c.out.empty()) write_file(c.out, report.str());
    out << report.str();
    return kExitOk;
}

int cmd_ablate(const Common& c, std::ostream& out, std::ostream& err) {
    require(c.rules, "--rules", "ablate");
    require(c.data, "--data", "ablate");
    const TrainConfig base = config_from(c);
    const RuleSet rules = load_rules(c.rules);
    const Dataset data = load_data(c.data, "--data");
    std::ostringstream table;
    table << "variant\talpha\tbeta\tgamma\tacc\n";
    for (const auto& v : ablation_variants()) {
        TrainConfig cfg = base;
        cfg.alpha = v.alpha;
        cfg.beta = v.beta;
        cfg.gamma = v.gamma;
        try {
            const TrainResult r = train(cfg, data, rules, task_domains(data.task));
            const Metrics m = evaluate(r.checkpoint, data, EvalMode::Transductive);
            table << v.name << "\t" << fmt(v.alpha) << "\t" << fmt(v.beta) << "\t" << fmt(v.gamma) << "\t" << fmt(m.acc)
                  << "\n";
        } catch (const DivergenceError& e) {
            err << "error: variant " << v.name << ": " << e.what() << "\n";
            return kExitDivergence;
        }
    }
    if (!c.out.empty()) write_file(c.out, table.str());
    out << table.str();
    return kExitOk;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bi-level neuro-symbolic trainer: generate data, train, evaluate, explain, infer, ablate"};
    app.require_subcommand(1);
    Common c;

    auto add_config_flags = [&](CLI::App* s) {
        s->add_option("--config", c.config, "key = value config file");
        s->add_option("--seed", c.seed, "random seed");
        s->add_option("--alpha", c.alpha, "weight of the task objective");
        s->add_option("--beta", c.beta, "weight of the logic objective");
        s->add_option("--gamma", c.gamma, "weight of the concept cross-entropy");
        s->add_option("--set", c.sets, "override any config field, key=value");
    };

    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    gen->add_option("--task", c.task, "digits or attributes");
    gen->add_option("--digits", c.digits, "digits per operand (1 or 2)");
    gen->add_option("--seed", c.seed, "random seed");
    gen->add_option("--n-train", c.n_train, "training items (digits)");
    gen->add_option("--n-test", c.n_test, "test items (digits)");
    gen->add_option("--per-class", c.per_class, "items per class (attributes)");
    gen->add_option("--noise", c.noise, "pixel or attribute flip probability");
    gen->add_option("--out", c.out, "dataset file");
    gen->add_option("--emit-rules", c.emit_rules, "also write the task's rules here");

    auto* tr = app.add_subcommand("train", "train and write <out>/final");
    tr->add_option("--rules", c.rules, "rule file");
    tr->add_option("--data", c.data, "dataset file");
    tr->add_option("--out", c.out, "output directory");
    add_config_flags(tr);

    auto* ev = app.add_subcommand("eval", "score a checkpoint");
    ev->add_option("--checkpoint", c.checkpoint, "checkpoint file");
    ev->add_option("--data", c.data, "dataset (default: the training data)");
    ev->add_option("--rules", c.rules, "rules (required for inductive mode)");
    ev->add_option("--mode", c.mode, "transductive or inductive");
    ev->add_option("--out", c.out, "metrics file (default: <checkpoint>.metrics)");

    auto* ex = app.add_subcommand("explain", "explain predictions for items");
    ex->add_option("--checkpoint", c.checkpoint, "checkpoint file");
    ex->add_option("--input", c.input, "items (dataset format)");
    ex->add_option("--rules", c.rules, "rewritten rules (default: the checkpoint's)");
    ex->add_option("--out", c.out, "report file");

    auto* in = app.add_subcommand("infer", "inductive inference with rewritten rules");
    in->add_option("--checkpoint", c.checkpoint, "checkpoint file");
    in->add_option("--rules", c.rules, "rewritten rules");
    in->add_option("--input", c.input, "items (dataset format)");
    in->add_option("--out", c.out, "report file");

    auto* ab = app.add_subcommand("ablate", "train the full model and its three variants");
    ab->add_option("--rules", c.rules, "rule file");
    ab->add_option("--data", c.data, "dataset file");
    ab->add_option("--out", c.out, "table file");
    add_config_flags(ab);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(c, out);
        if (tr->parsed()) return cmd_train(c, out, err);
        if (ev->parsed()) return cmd_eval(c, out);
        if (ex->parsed()) return cmd_explain(c, out);
        if (in->parsed()) return cmd_infer(c, out);
        if (ab->parsed()) return cmd_ablate(c, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const Error& e) {
        err << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
        const bool usage = e.code() == Errc::InvalidConfig || e.code() == Errc::FactorRange;
        return usage ? kExitUsage : kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

} // namespace nesy
