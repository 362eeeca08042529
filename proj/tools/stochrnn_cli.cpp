#include "stochrnn/error.hpp"
#include "stochrnn/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <regex>

namespace fs = std::filesystem;
using namespace stochrnn;

namespace {

enum Exit { kOk = 0, kOther = 1, kMissing = 2, kConfig = 3, kNumeric = 4 };

io::Json read_json(const fs::path& path) {
    const std::string text = io::read_file(path);
    try {
        return io::Json::parse(text);
    } catch (const io::Json::parse_error& e) {
        throw ConfigError(path.string() + ": not valid JSON (" + e.what() + ")");
    }
}

void emit(const fs::path& path, const std::string& text) {
    io::write_file(path, text);
    std::cout << path.string() << "\n";
}

void emit_json(const fs::path& path, const io::Json& j) {
    emit(path, io::dump_json(j) + "\n");
}

std::string epoch_tag(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "e%05zu", epoch);
    return buf;
}

std::string checkpoint_name(std::size_t epoch) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "epoch_%05zu.ckpt", epoch);
    return buf;
}

// Options shared by every command.
struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "runs";
    bool out_given = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON config file");
    app->add_option("--seed", c.seed, "seed override");
    app->add_option("--out", c.out, "output root (default runs/)");
}

hmm::HmmSpec spec_from_flags(const std::string& spec_path, const std::string& preset, std::size_t M) {
    if (!spec_path.empty()) return train::hmm_from_config(read_json(spec_path));
    if (!preset.empty()) return train::hmm_from_config(io::Json{{"preset", preset}});
    return train::hmm_from_config(io::Json{{"linear_chain", {{"M", M}}}});
}

// ---------------------------------------------------------------------------
// Model context for analysis commands

struct Loaded {
    pipeline::Model model;
    pipeline::AnalysisConfig cfg;
    fs::path reports;
};

fs::path run_dir_of(const fs::path& checkpoint) {
    const auto parent = fs::absolute(checkpoint).parent_path();
    if (parent.filename() == "checkpoints") return parent.parent_path();
    return {};
}

pipeline::AnalysisConfig analysis_config(const Common& c) {
    auto cfg = c.config.empty() ? pipeline::AnalysisConfig{} : pipeline::AnalysisConfig::from_json(read_json(c.config));
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

train::TrainConfig train_config_for(const fs::path& checkpoint, const std::string& explicit_path) {
    fs::path path = explicit_path;
    if (path.empty()) {
        const auto run = run_dir_of(checkpoint);
        if (run.empty()) throw MissingFileError("no --train-config given and " + checkpoint.string() + " is not inside a run directory");
        path = run / "config.json";
    }
    return train::TrainConfig::from_json(read_json(path));
}

Loaded load_model(const Common& c, const std::string& checkpoint, const std::string& train_config) {
    if (checkpoint.empty()) throw ConfigError("config key \"checkpoint\": --checkpoint is required");
    Loaded l;
    l.model.train = train_config_for(checkpoint, train_config);
    const auto ck = train::load_checkpoint(checkpoint, l.model.train.digest());
    l.model.params = ck.params;
    l.model.epoch = ck.epoch;
    l.model.digest = ck.digest;
    l.cfg = analysis_config(c);
    const auto run = run_dir_of(checkpoint);
    l.reports = (c.out_given || run.empty()) ? fs::path(c.out) / ck.digest / "reports" : run / "reports";
    return l;
}

std::vector<pipeline::Model> load_run(const fs::path& run) {
    const auto tc = train::TrainConfig::from_json(read_json(run / "config.json"));
    const auto dir = run / "checkpoints";
    if (!fs::is_directory(dir)) throw MissingFileError(dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (std::regex_match(e.path().filename().string(), std::regex("epoch_[0-9]+\\.ckpt"))) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<pipeline::Model> out;
    for (const auto& f : files) {
        const auto ck = train::load_checkpoint(f, tc.digest());
        out.push_back({ck.params, tc, ck.epoch, ck.digest});
    }
    if (out.size() < 2) throw DataError("epoch sweep needs at least two checkpoints in " + dir.string());
    return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_hmm_sample(const Common& c, const std::string& spec_path, const std::string& preset, std::size_t M, std::size_t len,
                   std::size_t n) {
    const auto spec = spec_from_flags(spec_path, preset, M);
    const std::uint64_t seed = c.seed.value_or(0);
    if (len == 0 || n == 0) throw ConfigError("config key \"len\"/\"n\": must be >= 1");
    io::Json key{{"spec", io::Json::parse(hmm::to_json(spec))}, {"len", len}, {"n", n}, {"seed", seed}};
    const std::string digest = io::digest(key);
    const RngStream root(seed);
    io::Json obs = io::Json::array(), states = io::Json::array();
    for (std::size_t i = 0; i < n; ++i) {
        RngStream s = root.split(i);
        const auto smp = hmm::sample(spec, len, s);
        obs.push_back(smp.obs.observations);
        states.push_back(smp.states);
    }
    key["digest"] = digest;
    key["observations"] = obs;
    key["states"] = states;
    emit_json(fs::path(c.out) / digest / "reports" / "hmm_sample.json", key);
    return kOk;
}

int cmd_train(const Common& c, std::optional<std::size_t> epochs, bool resume) {
    auto cfg = c.config.empty() ? train::TrainConfig{} : train::TrainConfig::from_json(read_json(c.config));
    if (c.seed) cfg.seed = *c.seed;
    if (epochs) cfg.epochs = *epochs;
    cfg.validate();
    const auto run = fs::path(c.out) / cfg.digest();
    auto saved = cfg.to_json();
    io::write_file(run / "config.json", io::dump_json(saved) + "\n");

    std::optional<train::Checkpoint> start;
    train::LossLog previous;
    if (resume && fs::is_directory(run / "checkpoints")) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(run / "checkpoints"))
            if (std::regex_match(e.path().filename().string(), std::regex("epoch_[0-9]+\\.ckpt"))) files.push_back(e.path());
        if (!files.empty()) {
            std::sort(files.begin(), files.end());
            start = train::load_checkpoint(files.back(), cfg.digest());
            if (fs::exists(run / "logs" / "loss.csv")) previous = train::LossLog::parse_csv(io::read_file(run / "logs" / "loss.csv"));
            previous.rows.erase(std::remove_if(previous.rows.begin(), previous.rows.end(),
                                               [&](const train::LossRow& r) { return r.epoch > start->epoch; }),
                                previous.rows.end());
        }
    }

    train::TrainHooks hooks;
    hooks.on_checkpoint = [&](const train::Checkpoint& ck, train::CheckpointKind kind) {
        const std::string name = kind == train::CheckpointKind::diagnostic ? "diagnostic_" + checkpoint_name(ck.epoch) : checkpoint_name(ck.epoch);
        train::save_checkpoint(run / "checkpoints" / name, ck);
    };
    hooks.on_epoch = [&](const train::LossRow& r) {
        std::fprintf(stderr, "epoch %zu train %.6g val %.6g grad %.4g (%.2fs)\n", r.epoch, r.train_loss, r.val_loss, r.grad_norm, r.seconds);
    };
    const auto result = train::train(cfg, hooks, start ? &*start : nullptr);
    for (const auto& r : result.log.rows) previous.rows.push_back(r);
    emit(run / "logs" / "loss.csv", previous.csv());
    std::cout << (run / "checkpoints").string() << "\n";
    return kOk;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, const std::string& train_config, const std::string& sequences,
                 const std::string& spec_path, const std::string& preset, std::size_t M) {
    if (!sequences.empty()) {
        // Externally supplied sequences against an HMM spec.
        const auto cfg = analysis_config(c);
        const auto spec = spec_from_flags(spec_path, preset, M);
        const auto doc = read_json(sequences);
        std::vector<hmm::ObsSequence> seqs;
        for (const auto& o : doc.at("observations")) {
            hmm::ObsSequence s;
            s.K = spec.K;
            s.observations = o.get<std::vector<int>>();
            seqs.push_back(std::move(s));
        }
        if (seqs.empty()) throw DataError("no sequences in " + sequences);
        const RngStream ref_root = RngStream(cfg.seed).split(pipeline::kEvalReference);
        std::vector<hmm::ObsSequence> ref;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            RngStream s = ref_root.split(i);
            ref.push_back(hmm::sample(spec, seqs[0].observations.size(), s).obs);
        }
        auto rep = metrics::evaluate(seqs, spec, ref, {cfg.eval_eps, 500, 1e-6}).to_json();
        const std::string digest = io::digest({{"sequences", io::read_file(sequences)}, {"analysis", cfg.to_json()}});
        rep["provenance"] = {{"sequences", sequences}, {"analysis_seed", cfg.seed}, {"analysis_digest", cfg.digest()}, {"digest", digest}};
        emit_json(fs::path(c.out) / digest / "reports" / "metrics_sequences.json", rep);
        return kOk;
    }
    const auto l = load_model(c, checkpoint, train_config);
    emit_json(l.reports / ("metrics_" + epoch_tag(l.model.epoch) + ".json"), pipeline::stamp(pipeline::evaluate(l.model, l.cfg).to_json(), l.model, l.cfg));
    return kOk;
}

int cmd_analyze(const std::string& what, const Common& c, const std::string& checkpoint, const std::string& train_config,
                const std::string& run) {
    if (what == "epochs") {
        if (run.empty()) throw ConfigError("config key \"run\": analyze epochs needs --run <dir>");
        const auto cfg = analysis_config(c);
        const auto models = load_run(run);
        const auto rows = pipeline::epoch_sweep(models, cfg);
        emit(fs::path(run) / "reports" / "epoch_sweep.csv", dynamics::sweep_csv(rows));
        return kOk;
    }
    const auto l = load_model(c, checkpoint, train_config);
    const auto& m = l.model;
    const std::string tag = epoch_tag(m.epoch);
    io::Json rep;
    if (what == "fixed-points") {
        rep = pipeline::fixed_points(m, l.cfg).to_json();
    } else if (what == "orbits") {
        rep = pipeline::orbits(m, l.cfg).to_json();
    } else if (what == "zones") {
        rep = pipeline::zones(m, l.cfg).to_json();
    } else if (what == "noise") {
        rep = pipeline::noise(m, l.cfg, pipeline::zones(m, l.cfg));
    } else if (what == "perturbation") {
        rep = pipeline::perturbation(m, l.cfg, pipeline::fixed_points(m, l.cfg)).to_json();
    } else if (what == "subspaces") {
        rep = pipeline::subspaces(m, l.cfg);
    } else {
        throw ConfigError("config key \"analysis\": unknown analysis " + what);
    }
    std::string file = what;
    std::replace(file.begin(), file.end(), '-', '_');
    emit_json(l.reports / (file + "_" + tag + ".json"), pipeline::stamp(rep, m, l.cfg));
    return kOk;
}

int cmd_circuit(const std::string& what, const Common& c, const std::string& checkpoint, const std::string& train_config) {
    const auto l = load_model(c, checkpoint, train_config);
    const auto& m = l.model;
    const std::string tag = epoch_tag(m.epoch);
    if (what == "alignment") {
        const auto al = pipeline::alignment(m, l.cfg);
        io::Json values = io::Json::array();
        for (std::size_t i = 0; i < al.values.size(); ++i) {
            if (al.defined[i]) {
                values.push_back(al.values[i]);
            } else {
                values.push_back(nullptr);
            }
        }
        emit_json(l.reports / ("circuit_alignment_" + tag + ".json"),
                  pipeline::stamp({{"alignment", values}, {"mean", al.mean}}, m, l.cfg));
        return kOk;
    }
    const auto zones = pipeline::zones(m, l.cfg);
    const auto pert = pipeline::perturbation(m, l.cfg, pipeline::fixed_points(m, l.cfg));
    auto run = pipeline::detect(m, l.cfg, zones, pert);
    const bool empty = run.groups.kicks.empty() && run.groups.populations.empty();
    if (empty && (what == "report" || what == "oscillations")) {
        // Nothing detected is a result, not a failure.
        const std::string file = what == "report" ? "circuit_connectivity_" : "circuit_oscillations_";
        emit_json(l.reports / (file + tag + ".json"), pipeline::stamp({{"groups_detected", false}, {"groups", run.groups.to_json()}}, m, l.cfg));
        return kOk;
    }
    if (what == "detect") {
        emit_json(l.reports / ("circuit_groups_" + tag + ".json"), pipeline::stamp(run.groups.to_json(), m, l.cfg));
    } else if (what == "report") {
        emit_json(l.reports / ("circuit_connectivity_" + tag + ".json"),
                  pipeline::stamp(circuit::connectivity_report(m.params, run.groups).to_json(), m, l.cfg));
    } else if (what == "intervene") {
        pipeline::intervene_all(m, l.cfg, run);
        emit(l.reports / ("circuit_interventions_" + tag + ".csv"), circuit::interventions_csv(run.rows));
        emit_json(l.reports / ("circuit_interventions_" + tag + ".json"), pipeline::stamp(run.to_json(), m, l.cfg));
    } else if (what == "oscillations") {
        const auto tr = pipeline::oscillations(m, l.cfg, run.groups);
        emit(l.reports / ("circuit_oscillations_" + tag + ".csv"), tr.csv());
        emit_json(l.reports / ("circuit_oscillations_" + tag + ".json"), pipeline::stamp(tr.to_json(), m, l.cfg));
    } else {
        throw ConfigError("config key \"circuit\": unknown circuit command " + what);
    }
    return kOk;
}

int cmd_bundle(const std::string& run) {
    if (run.empty()) throw ConfigError("config key \"run\": report bundle needs --run <dir>");
    const fs::path dir(run);
    io::Json bundle;
    bundle["config"] = read_json(dir / "config.json");
    if (fs::exists(dir / "logs" / "loss.csv")) bundle["loss_log"] = io::read_file(dir / "logs" / "loss.csv");
    io::Json reports = io::Json::object();
    if (fs::is_directory(dir / "reports")) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir / "reports")) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const auto name = f.filename().string();
            if (name == "bundle.json") continue;
            if (f.extension() == ".json") {
                reports[name] = read_json(f);
            } else {
                reports[name] = io::read_file(f);
            }
        }
    }
    bundle["reports"] = reports;
    std::vector<std::string> cks;
    if (fs::is_directory(dir / "checkpoints"))
        for (const auto& e : fs::directory_iterator(dir / "checkpoints")) cks.push_back(e.path().filename().string());
    std::sort(cks.begin(), cks.end());
    bundle["checkpoints"] = cks;
    emit_json(dir / "reports" / "bundle.json", bundle);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic-emission RNN toolkit"};
    app.require_subcommand(1);
    Common common;

    std::string spec_path, preset, checkpoint, train_config, run, sequences;
    std::size_t M = 2, len = 100, n = 10;
    std::optional<std::size_t> epochs;
    bool resume = false;
    std::string action;

    auto* hmm_cmd = app.add_subcommand("hmm", "HMM utilities");
    hmm_cmd->require_subcommand(1);
    auto* sample = hmm_cmd->add_subcommand("sample", "sample observation sequences");
    add_common(sample, common);
    sample->add_option("--M", M, "linear-chain length");
    sample->add_option("--preset", preset, "fully_connected | cyclic");
    sample->add_option("--spec", spec_path, "HMM spec JSON");
    sample->add_option("--len", len, "sequence length");
    sample->add_option("--n", n, "number of sequences");

    auto* train_cmd = app.add_subcommand("train", "train a network");
    add_common(train_cmd, common);
    train_cmd->add_option("--epochs", epochs, "epochs override");
    train_cmd->add_flag("--resume", resume, "continue from the latest checkpoint of the run");

    auto* eval_cmd = app.add_subcommand("evaluate", "emission metrics");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--checkpoint", checkpoint);
    eval_cmd->add_option("--train-config", train_config);
    eval_cmd->add_option("--sequences", sequences, "hmm sample output to evaluate instead of a model");
    eval_cmd->add_option("--M", M);
    eval_cmd->add_option("--preset", preset);
    eval_cmd->add_option("--spec", spec_path);

    auto* analyze = app.add_subcommand("analyze", "latent dynamics analyses");
    analyze->require_subcommand(1);
    for (const char* name : {"fixed-points", "orbits", "zones", "noise", "perturbation", "epochs", "subspaces"}) {
        auto* sub = analyze->add_subcommand(name);
        add_common(sub, common);
        sub->add_option("--checkpoint", checkpoint);
        sub->add_option("--train-config", train_config);
        sub->add_option("--run", run, "run directory (epochs)");
        sub->callback([&action, name] { action = std::string("analyze:") + name; });
    }

    auto* circ = app.add_subcommand("circuit", "single-neuron circuit analyses");
    circ->require_subcommand(1);
    for (const char* name : {"detect", "report", "intervene", "oscillations", "alignment"}) {
        auto* sub = circ->add_subcommand(name);
        add_common(sub, common);
        sub->add_option("--checkpoint", checkpoint);
        sub->add_option("--train-config", train_config);
        sub->callback([&action, name] { action = std::string("circuit:") + name; });
    }

    auto* report = app.add_subcommand("report", "aggregate outputs");
    report->require_subcommand(1);
    auto* bundle = report->add_subcommand("bundle");
    bundle->add_option("--run", run)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    // --out given explicitly on whichever subcommand ran
    for (auto* sub : {sample, train_cmd, eval_cmd})
        if (sub->parsed() && sub->count("--out")) common.out_given = true;
    for (auto* group : {analyze, circ})
        for (auto* sub : group->get_subcommands())
            if (sub->count("--out")) common.out_given = true;

    try {
        if (sample->parsed()) return cmd_hmm_sample(common, spec_path, preset, M, len, n);
        if (train_cmd->parsed()) return cmd_train(common, epochs, resume);
        if (eval_cmd->parsed()) return cmd_evaluate(common, checkpoint, train_config, sequences, spec_path, preset, M);
        if (bundle->parsed()) return cmd_bundle(run);
        if (action.rfind("analyze:", 0) == 0) return cmd_analyze(action.substr(8), common, checkpoint, train_config, run);
        if (action.rfind("circuit:", 0) == 0) return cmd_circuit(action.substr(8), common, checkpoint, train_config);
        return kConfig;
    } catch (const MissingFileError& e) {
        std::cerr << "missing file: " << e.what() << "\n";
        return kMissing;
    } catch (const ConfigDriftError& e) {
        std::cerr << "config drift: " << e.what() << "\n";
        return kConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
}
