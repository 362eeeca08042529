#pragma once

#include "stochrnn/circuit.hpp"
#include "stochrnn/dynamics.hpp"
#include "stochrnn/io.hpp"
#include "stochrnn/metrics.hpp"
#include "stochrnn/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

// End-to-end analysis steps shared by the command-line tool and the
// acceptance suite. Every step takes a trained model plus an AnalysisConfig
// and returns typed results together with their JSON form.
namespace stochrnn::pipeline {

struct AnalysisConfig {
    std::uint64_t seed = 0;

    // evaluation
    std::size_t eval_sequences = 500;
    std::size_t eval_burn_in = 200;
    double eval_eps = 0.05;

    dynamics::FixedPointOptions fixed_points;

    Vector orbit_variances{0.1, 1.0, 2.0, 3.0, 4.0};
    std::size_t orbit_length = 5000;
    std::size_t orbit_burn_in = 200;

    dynamics::ResidencyOptions residency;
    dynamics::ZoneThresholds zones;

    Vector noise_gammas{0.0, 0.5, 1.0};
    std::size_t noise_trajectories = 20;
    std::size_t noise_length = 50;

    Vector perturbation_variances{0.1, 1.0, 2.0, 3.0, 4.0};
    std::size_t perturbation_horizon = 10;
    std::size_t perturbation_trajectories = 100;

    std::size_t sweep_rate_length = 10000;

    std::size_t subspace_length = 5000;

    circuit::KickOptions kicks;
    double population_sd = 1.0;
    Vector intervention_mus{0.0, 1.0, 2.0};
    std::size_t intervention_horizon = 10000;
    std::size_t pair_states = 500;
    double pair_delta = 0.05;
    std::size_t oscillation_length = 2000;

    io::Json to_json() const;
    // Keys must already exist in the default document; throws ConfigError.
    static AnalysisConfig from_json(const io::Json& j);
    std::string digest() const;
};

// A checkpoint together with the training config that produced it.
struct Model {
    rnn::RnnParams params;
    train::TrainConfig train;
    std::size_t epoch = 0;
    std::string digest;
};

// Sub-stream ids under RngStream(cfg.seed).
enum StreamId : std::uint64_t {
    kEvalModel = 0,
    kEvalReference = 1,
    kFixedPoints = 2,
    kOrbits = 3,
    kZones = 4,
    kNoise = 5,
    kPerturbation = 6,
    kSweep = 7,
    kSubspaces = 8,
    kIntervention = 9,
    kControl = 10,
    kOscillation = 11,
    kPlane = 12,
};

metrics::MetricReport evaluate(const Model& m, const AnalysisConfig& cfg);

dynamics::FixedPointReport fixed_points(const Model& m, const AnalysisConfig& cfg);
// The point with the largest basin; throws DataError when none converged.
const dynamics::FixedPoint& main_point(const dynamics::FixedPointReport& r);

dynamics::OrbitScan orbits(const Model& m, const AnalysisConfig& cfg);

struct Zones {
    dynamics::ZoneMap map;
    dynamics::ZoneSummary summary;
    io::Json to_json() const;
};
Zones zones(const Model& m, const AnalysisConfig& cfg);

// Dispersion from a cluster state and a transition state for each γ.
io::Json noise(const Model& m, const AnalysisConfig& cfg, const Zones& z);

struct PerturbationScan {
    Vector variances;
    Vector norms;
    LinearFit fit;
    bool has_fixed_point = false;
    Vector mean_unit;  // E[dh⁽²⁾] at σ² = 1
    io::Json to_json() const;
};
// Each σ² uses its own stream, so the fit carries Monte Carlo noise.
PerturbationScan perturbation(const Model& m, const AnalysisConfig& cfg, const dynamics::FixedPointReport& fps);

// One sweep row per model, all with the same streams.
std::vector<dynamics::EpochRow> epoch_sweep(const std::vector<Model>& models, const AnalysisConfig& cfg);

io::Json subspaces(const Model& m, const AnalysisConfig& cfg);

struct CircuitRun {
    circuit::NeuronGroups groups;
    bool has_populations = false;
    std::vector<circuit::InterventionRow> rows;
    io::Json interventions;  // per-row detail including directional counts
    io::Json to_json() const;
};
CircuitRun detect(const Model& m, const AnalysisConfig& cfg, const Zones& z, const PerturbationScan& pert);
// Fills rows: every kick group and population at every μ, each with a
// matched control set of equal size; all runs share one input stream.
void intervene_all(const Model& m, const AnalysisConfig& cfg, CircuitRun& run);
circuit::OscillationTraces oscillations(const Model& m, const AnalysisConfig& cfg, const circuit::NeuronGroups& g);
circuit::Alignment alignment(const Model& m, const AnalysisConfig& cfg);

// Attaches provenance to a report document.
io::Json stamp(io::Json report, const Model& m, const AnalysisConfig& cfg);

}  // namespace stochrnn::pipeline
