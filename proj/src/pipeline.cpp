#include "stochrnn/pipeline.hpp"

#include "stochrnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stochrnn::pipeline {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void bad(const std::string& key, const std::string& why) {
    throw ConfigError("config key \"" + key + "\": " + why);
}

// Overlays `in` on `base`; every key of `in` must exist in `base` with a
// compatible type.
void overlay(io::Json& base, const io::Json& in, const std::string& prefix) {
    if (!in.is_object()) bad(prefix.empty() ? "<root>" : prefix, "expected an object");
    for (auto it = in.begin(); it != in.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) bad(key, "unknown key");
        auto& slot = base[it.key()];
        const auto& v = it.value();
        if (slot.is_object()) {
            overlay(slot, v, key);
        } else if (slot.is_array()) {
            if (!v.is_array() || v.empty()) bad(key, "expected a nonempty array of numbers");
            for (const auto& x : v)
                if (!x.is_number()) bad(key, "expected a nonempty array of numbers");
            slot = v;
        } else if (slot.is_number_unsigned()) {
            if (!v.is_number_integer() || v.get<long long>() < 0) bad(key, "expected a non-negative integer");
            slot = v.get<std::uint64_t>();
        } else {
            if (!v.is_number()) bad(key, "expected a number");
            slot = v.get<double>();
        }
    }
}

Vector numbers(const io::Json& j) {
    Vector v;
    for (const auto& x : j) v.push_back(x.get<double>());
    return v;
}

std::size_t count(const io::Json& j, const char* key) { return j.at(key).get<std::size_t>(); }

io::Json nullable(double x) {
    if (std::isfinite(x)) return x;
    return nullptr;
}

io::Json fit_json(const LinearFit& f) {
    return {{"slope", nullable(f.slope)}, {"intercept", nullable(f.intercept)}, {"r2", nullable(f.r2)}};
}

io::Json pair_json(const circuit::PairCount& p) {
    return {{"mean", p.mean}, {"sd", p.sd}, {"delta", p.delta}, {"states", p.states}};
}

RngStream root(const AnalysisConfig& cfg) { return RngStream(cfg.seed); }

}  // namespace

// ---------------------------------------------------------------------------
// Config

io::Json AnalysisConfig::to_json() const {
    io::Json j;
    j["seed"] = seed;
    j["evaluate"] = {{"sequences", eval_sequences}, {"burn_in", eval_burn_in}, {"eps", eval_eps}};
    j["fixed_points"] = {{"n_inits", fixed_points.n_inits},
                         {"max_steps", fixed_points.max_steps},
                         {"tol", fixed_points.tol},
                         {"init_scale", fixed_points.init_scale},
                         {"divergence_norm", fixed_points.divergence_norm}};
    j["orbits"] = {{"variances", orbit_variances}, {"length", orbit_length}, {"burn_in", orbit_burn_in}};
    j["zones"] = {{"base_length", residency.base_length},
                  {"burn_in", residency.burn_in},
                  {"samples", residency.samples},
                  {"rollouts", residency.rollouts},
                  {"cap", residency.cap},
                  {"sigma", residency.sigma},
                  {"cluster_above", zones.cluster_above},
                  {"transition_below", zones.transition_below}};
    j["noise"] = {{"gammas", noise_gammas}, {"trajectories", noise_trajectories}, {"length", noise_length}};
    j["perturbation"] = {{"variances", perturbation_variances},
                         {"horizon", perturbation_horizon},
                         {"trajectories", perturbation_trajectories}};
    j["sweep"] = {{"rate_length", sweep_rate_length}};
    j["subspaces"] = {{"length", subspace_length}};
    j["circuit"] = {{"gap_sd", kicks.gap_sd},
                    {"top_fraction", kicks.top_fraction},
                    {"population_sd", population_sd},
                    {"mus", intervention_mus},
                    {"horizon", intervention_horizon},
                    {"pair_states", pair_states},
                    {"pair_delta", pair_delta},
                    {"oscillation_length", oscillation_length}};
    return j;
}

AnalysisConfig AnalysisConfig::from_json(const io::Json& in) {
    io::Json j = AnalysisConfig{}.to_json();
    overlay(j, in, "");
    AnalysisConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& ev = j.at("evaluate");
    c.eval_sequences = count(ev, "sequences");
    c.eval_burn_in = count(ev, "burn_in");
    c.eval_eps = ev.at("eps").get<double>();
    const auto& fp = j.at("fixed_points");
    c.fixed_points.n_inits = count(fp, "n_inits");
    c.fixed_points.max_steps = count(fp, "max_steps");
    c.fixed_points.tol = fp.at("tol").get<double>();
    c.fixed_points.init_scale = fp.at("init_scale").get<double>();
    c.fixed_points.divergence_norm = fp.at("divergence_norm").get<double>();
    const auto& ob = j.at("orbits");
    c.orbit_variances = numbers(ob.at("variances"));
    c.orbit_length = count(ob, "length");
    c.orbit_burn_in = count(ob, "burn_in");
    const auto& zn = j.at("zones");
    c.residency.base_length = count(zn, "base_length");
    c.residency.burn_in = count(zn, "burn_in");
    c.residency.samples = count(zn, "samples");
    c.residency.rollouts = count(zn, "rollouts");
    c.residency.cap = count(zn, "cap");
    c.residency.sigma = zn.at("sigma").get<double>();
    c.zones.cluster_above = zn.at("cluster_above").get<double>();
    c.zones.transition_below = zn.at("transition_below").get<double>();
    const auto& ns = j.at("noise");
    c.noise_gammas = numbers(ns.at("gammas"));
    c.noise_trajectories = count(ns, "trajectories");
    c.noise_length = count(ns, "length");
    const auto& pt = j.at("perturbation");
    c.perturbation_variances = numbers(pt.at("variances"));
    c.perturbation_horizon = count(pt, "horizon");
    c.perturbation_trajectories = count(pt, "trajectories");
    c.sweep_rate_length = count(j.at("sweep"), "rate_length");
    c.subspace_length = count(j.at("subspaces"), "length");
    const auto& ci = j.at("circuit");
    c.kicks.gap_sd = ci.at("gap_sd").get<double>();
    c.kicks.top_fraction = ci.at("top_fraction").get<double>();
    c.population_sd = ci.at("population_sd").get<double>();
    c.intervention_mus = numbers(ci.at("mus"));
    c.intervention_horizon = count(ci, "horizon");
    c.pair_states = count(ci, "pair_states");
    c.pair_delta = ci.at("pair_delta").get<double>();
    c.oscillation_length = count(ci, "oscillation_length");

    if (c.eval_sequences < 2) bad("evaluate.sequences", "must be >= 2");
    if (!(c.eval_eps > 0.0)) bad("evaluate.eps", "must be > 0");
    if (c.fixed_points.n_inits == 0) bad("fixed_points.n_inits", "must be >= 1");
    if (!(c.fixed_points.tol > 0.0)) bad("fixed_points.tol", "must be > 0");
    if (c.orbit_length < c.orbit_burn_in + 1000) bad("orbits.length", "must be >= burn_in + 1000");
    for (double v : c.orbit_variances)
        if (!(v >= 0.0)) bad("orbits.variances", "must be >= 0");
    if (c.residency.samples == 0 || c.residency.rollouts == 0 || c.residency.cap == 0) bad("zones", "samples, rollouts and cap must be >= 1");
    if (c.residency.base_length < c.residency.burn_in + c.residency.samples) bad("zones.base_length", "too short for the samples");
    for (double g : c.noise_gammas)
        if (!(g >= 0.0 && g <= 1.0)) bad("noise.gammas", "must lie in [0, 1]");
    if (c.noise_trajectories < 2) bad("noise.trajectories", "must be >= 2");
    for (double v : c.perturbation_variances)
        if (!(v >= 0.0)) bad("perturbation.variances", "must be >= 0");
    if (c.perturbation_trajectories == 0) bad("perturbation.trajectories", "must be >= 1");
    if (!(c.kicks.top_fraction > 0.0 && c.kicks.top_fraction <= 1.0)) bad("circuit.top_fraction", "must lie in (0, 1]");
    for (double m : c.intervention_mus)
        if (!(m >= 0.0) || !std::isfinite(m)) bad("circuit.mus", "must be finite and >= 0");
    if (c.intervention_horizon < 2) bad("circuit.horizon", "must be >= 2");
    if (!(c.pair_delta >= 0.0)) bad("circuit.pair_delta", "must be >= 0");
    return c;
}

std::string AnalysisConfig::digest() const {
    return io::digest(to_json());
}

io::Json stamp(io::Json report, const Model& m, const AnalysisConfig& cfg) {
    report["provenance"] = {{"checkpoint_digest", m.digest},
                            {"epoch", m.epoch},
                            {"train_seed", m.train.seed},
                            {"analysis_seed", cfg.seed},
                            {"analysis_digest", cfg.digest()}};
    return report;
}

// ---------------------------------------------------------------------------
// Steps

metrics::MetricReport evaluate(const Model& m, const AnalysisConfig& cfg) {
    const auto seqs = rnn::emit_sequences(m.params, cfg.eval_sequences, m.train.seq_len, cfg.eval_burn_in, m.train.sigma_input,
                                          root(cfg).split(kEvalModel));
    const RngStream ref_root = root(cfg).split(kEvalReference);
    std::vector<hmm::ObsSequence> ref;
    for (std::size_t i = 0; i < cfg.eval_sequences; ++i) {
        RngStream s = ref_root.split(i);
        ref.push_back(hmm::sample(m.train.hmm, m.train.seq_len, s).obs);
    }
    return metrics::evaluate(seqs, m.train.hmm, ref, {cfg.eval_eps, 500, 1e-6});
}

dynamics::FixedPointReport fixed_points(const Model& m, const AnalysisConfig& cfg) {
    return dynamics::find_fixed_points(m.params, cfg.fixed_points, root(cfg).split(kFixedPoints));
}

const dynamics::FixedPoint& main_point(const dynamics::FixedPointReport& r) {
    if (r.points.empty()) throw DataError("no fixed point converged");
    return *std::max_element(r.points.begin(), r.points.end(),
                             [](const dynamics::FixedPoint& a, const dynamics::FixedPoint& b) { return a.basin < b.basin; });
}

dynamics::OrbitScan orbits(const Model& m, const AnalysisConfig& cfg) {
    return dynamics::orbit_radius_scan(m.params, cfg.orbit_variances, cfg.orbit_length, cfg.orbit_burn_in, root(cfg).split(kOrbits));
}

io::Json Zones::to_json() const {
    io::Json j = map.to_json(false);
    std::vector<std::size_t> hist(map.cap + 1, 0);
    for (double rt : map.residency) ++hist[std::min(map.cap, static_cast<std::size_t>(rt))];
    j["rt_histogram"] = hist;
    j["summary"] = {{"n_cluster", summary.n_cluster},
                    {"n_kick", summary.n_kick},
                    {"n_transition", summary.n_transition},
                    {"cluster_logits", summary.cluster_logits},
                    {"bimodal", summary.bimodal}};
    return j;
}

Zones zones(const Model& m, const AnalysisConfig& cfg) {
    Zones z;
    z.map = dynamics::classify_zones(dynamics::residency_map(m.params, cfg.residency, root(cfg).split(kZones)), cfg.zones);
    z.summary = dynamics::summarize_zones(z.map, cfg.zones);
    return z;
}

io::Json noise(const Model& m, const AnalysisConfig& cfg, const Zones& z) {
    io::Json out;
    out["gammas"] = cfg.noise_gammas;
    double cluster_mean = kNaN, transition_mean = kNaN;
    for (auto zone : {dynamics::Zone::cluster, dynamics::Zone::transition}) {
        const auto name = dynamics::zone_name(zone);
        const auto it = std::find(z.map.labels.begin(), z.map.labels.end(), zone);
        if (it == z.map.labels.end()) {
            out[name] = nullptr;
            continue;
        }
        const auto idx = static_cast<std::size_t>(it - z.map.labels.begin());
        io::Json runs = io::Json::array();
        for (std::size_t g = 0; g < cfg.noise_gammas.size(); ++g) {
            const auto probe = dynamics::noise_sensitivity(m.params, z.map.states.row(idx), cfg.noise_gammas[g], cfg.noise_trajectories,
                                                           cfg.noise_length, m.train.sigma_input, root(cfg).split(kNoise).split(g));
            const double avg = mean(probe.covariance_trace);
            runs.push_back({{"gamma", cfg.noise_gammas[g]},
                            {"covariance_trace", probe.covariance_trace},
                            {"mean_distance", probe.mean_distance},
                            {"mean_trace", avg}});
            if (cfg.noise_gammas[g] == 1.0) (zone == dynamics::Zone::cluster ? cluster_mean : transition_mean) = avg;
        }
        out[name] = {{"sample", idx}, {"runs", runs}};
    }
    out["cluster_over_transition_at_gamma_1"] = nullable(cluster_mean / transition_mean);
    return out;
}

io::Json PerturbationScan::to_json() const {
    io::Json norms_json = io::Json::array();
    for (double n : norms) norms_json.push_back(nullable(n));
    return {{"variances", variances},
            {"norms", norms_json},
            {"fit", fit_json(fit)},
            {"has_fixed_point", has_fixed_point},
            {"mean_at_unit_variance", mean_unit}};
}

PerturbationScan perturbation(const Model& m, const AnalysisConfig& cfg, const dynamics::FixedPointReport& fps) {
    PerturbationScan s;
    s.variances = cfg.perturbation_variances;
    if (fps.points.empty()) {
        s.norms.assign(s.variances.size(), kNaN);
        s.fit = {kNaN, kNaN, kNaN};
        s.mean_unit.assign(m.params.H, kNaN);
        return s;
    }
    s.has_fixed_point = true;
    const auto& z = main_point(fps).z;
    const RngStream base = root(cfg).split(kPerturbation);
    for (std::size_t k = 0; k < s.variances.size(); ++k)
        s.norms.push_back(dynamics::second_order_perturbation(m.params, z, s.variances[k], cfg.perturbation_horizon,
                                                              cfg.perturbation_trajectories, base.split(k))
                              .norm());
    if (s.variances.size() >= 2) s.fit = linear_fit(s.variances, s.norms);
    s.mean_unit = dynamics::second_order_perturbation(m.params, z, 1.0, cfg.perturbation_horizon, cfg.perturbation_trajectories,
                                                      base.split(s.variances.size()))
                      .mean;
    return s;
}

std::vector<dynamics::EpochRow> epoch_sweep(const std::vector<Model>& models, const AnalysisConfig& cfg) {
    std::vector<dynamics::EpochRow> rows;
    for (const auto& m : models) {
        dynamics::SweepOptions o;
        o.rate_length = cfg.sweep_rate_length;
        o.burn_in = cfg.residency.burn_in;
        o.sigma = m.train.sigma_input;
        o.variance = 1.0;
        o.horizon = cfg.perturbation_horizon;
        o.n_traj = cfg.perturbation_trajectories;
        o.fixed_points = cfg.fixed_points;
        rows.push_back(dynamics::sweep_row(m.params, m.epoch, o, root(cfg).split(kSweep)));
    }
    return rows;
}

io::Json subspaces(const Model& m, const AnalysisConfig& cfg) {
    RngStream in = root(cfg).split(kSubspaces);
    const auto r = rnn::rollout(m.params, cfg.subspace_length, rnn::GaussianInput{m.train.sigma_input, &in}, {}, 1.0, nullptr);
    const std::size_t skip = std::min(cfg.orbit_burn_in, cfg.subspace_length - 1);
    Matrix states(cfg.subspace_length - skip, m.params.H);
    std::vector<int> labels;
    for (std::size_t t = skip; t < cfg.subspace_length; ++t) {
        std::copy(r.h.row(t).begin(), r.h.row(t).end(), states.row(t - skip).begin());
        labels.push_back(static_cast<int>(rnn::argmax(r.logits.row(t))));
    }
    io::Json pairs = io::Json::array();
    for (int a = 0; a < static_cast<int>(rnn::kOutputs); ++a)
        for (int b = a + 1; b < static_cast<int>(rnn::kOutputs); ++b) {
            io::Json entry{{"pair", {a, b}}};
            try {
                const auto sub = dynamics::pair_subspace_pca(states, labels, a, b);
                entry["rows"] = sub.rows.size();
                entry["explained_variance"] = sub.basis.explained_variance;
                entry["components"] = io::to_json(sub.basis.components);
                entry["mean"] = sub.basis.mean;
            } catch (const DataError& e) {
                entry["skipped"] = e.what();
            }
            pairs.push_back(entry);
        }
    return {{"pairs", pairs}, {"length", cfg.subspace_length}};
}

// ---------------------------------------------------------------------------
// Circuit

io::Json CircuitRun::to_json() const {
    return {{"groups", groups.to_json()}, {"has_populations", has_populations}, {"interventions", interventions}};
}

CircuitRun detect(const Model& m, const AnalysisConfig& cfg, const Zones& z, const PerturbationScan& pert) {
    CircuitRun run;
    if (!pert.has_fixed_point) throw DataError("kick detection needs a fixed point for the perturbation vector");
    run.groups = circuit::detect_kick_neurons(z.map, pert.mean_unit, cfg.kicks);
    if (run.groups.kicks.size() >= 2) {
        run.groups = circuit::detect_populations(m.params, run.groups, cfg.population_sd);
        run.has_populations = !run.groups.populations.empty();
    }
    run.interventions = io::Json::array();
    return run;
}

void intervene_all(const Model& m, const AnalysisConfig& cfg, CircuitRun& run) {
    struct Target {
        std::string name;
        circuit::Group neurons;
        circuit::Mode mode;
        long long source;  // −1 for populations
    };
    std::vector<Target> targets;
    for (const auto& k : run.groups.kicks)
        targets.push_back({"kick_" + std::to_string(k.source), k.neurons, circuit::Mode::activity, static_cast<long long>(k.source)});
    for (std::size_t i = 0; i < run.groups.populations.size(); ++i)
        if (!run.groups.populations[i].empty())
            targets.push_back({"population_" + std::to_string(i), run.groups.populations[i], circuit::Mode::noise_drive, -1});
    const std::size_t n_targets = targets.size();
    for (std::size_t t = 0; t < n_targets; ++t) {
        try {
            auto ctrl = circuit::control_set(run.groups, targets[t].neurons.size(), root(cfg).split(kControl).split(t));
            targets.push_back({"control_" + targets[t].name, std::move(ctrl), targets[t].mode, targets[t].source});
        } catch (const StructureError&) {
            // Not enough residual neurons for a matched control; the row is simply absent.
        }
    }
    run.rows.clear();
    run.interventions = io::Json::array();
    for (const auto& target : targets)
        for (double mu : cfg.intervention_mus) {
            circuit::InterventionSpec spec;
            spec.modulations = {{target.neurons, target.mode, mu}};
            spec.horizon = cfg.intervention_horizon;
            spec.sigma = m.train.sigma_input;
            const auto r = circuit::intervene(m.params, spec, root(cfg).split(kIntervention));
            const std::size_t steps = r.steps();
            const std::size_t S = std::min(cfg.pair_states, steps);
            Matrix zs(S, m.params.H);
            for (std::size_t s = 0; s < S; ++s) {
                const auto src = r.z.row((s + 1) * steps / (S + 1));
                std::copy(src.begin(), src.end(), zs.row(s).begin());
            }
            const auto pairs = circuit::critical_pairs(m.params, zs, r.activity_scale, cfg.pair_delta);
            run.rows.push_back({mu, target.name, target.mode, r.transition_count, pairs});
            io::Json detail{{"mu", mu},
                            {"target", target.name},
                            {"neurons", target.neurons},
                            {"mode", circuit::mode_name(target.mode)},
                            {"transition_count", r.transition_count},
                            {"direction_counts", io::to_json(r.direction_counts)},
                            {"critical_pairs", pair_json(pairs)},
                            {"diverged_at", r.diverged_at ? io::Json(*r.diverged_at) : io::Json(nullptr)}};
            if (target.source >= 0) {
                detail["source"] = target.source;
                detail["transitions_from_source"] = r.transitions_from(static_cast<std::size_t>(target.source));
            }
            run.interventions.push_back(detail);
        }
}

circuit::OscillationTraces oscillations(const Model& m, const AnalysisConfig& cfg, const circuit::NeuronGroups& g) {
    return circuit::oscillation_traces(m.params, cfg.oscillation_length, g, m.train.sigma_input, root(cfg).split(kOscillation));
}

circuit::Alignment alignment(const Model& m, const AnalysisConfig& cfg) {
    RngStream in = root(cfg).split(kPlane);
    const auto r = rnn::rollout(m.params, cfg.orbit_length, rnn::GaussianInput{m.train.sigma_input, &in}, {}, 1.0, nullptr);
    std::vector<std::size_t> rows;
    for (std::size_t t = cfg.orbit_burn_in; t < cfg.orbit_length; ++t) rows.push_back(t);
    return circuit::readout_alignment(m.params, pca_fit(select_rows(r.h, rows), 2));
}

}  // namespace stochrnn::pipeline
