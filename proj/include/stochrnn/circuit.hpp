#pragma once

#include "stochrnn/dynamics.hpp"
#include "stochrnn/io.hpp"
#include "stochrnn/numerics.hpp"
#include "stochrnn/rnn.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

// Single-neuron and connectivity analysis of a trained network.
namespace stochrnn::circuit {

using Group = std::vector<std::size_t>;

struct KickGroup {
    std::size_t source = 0;  // dominant logit of the cluster the transition leaves
    Group neurons;
};

struct NeuronGroups {
    std::vector<KickGroup> kicks;     // sorted by size, largest first
    std::vector<Group> populations;   // [0]: s > 0, [1]: s < 0
    Group residual;
    double gap_threshold = 0.0;
    double score_threshold = 0.0;
    std::vector<double> scores;       // population score per neuron, NaN for kick neurons

    void validate(std::size_t H) const;
    Group kick_union() const;
    io::Json to_json() const;
};

struct KickOptions {
    double gap_sd = 1.0;     // θ_gap in units of the pooled z standard deviation
    double top_fraction = 0.1;
};

// Candidates need (mean z in transition samples leaving cluster c) −
// (mean z in cluster-c samples) > θ_gap, mean z in cluster c < 0, and a
// top-fraction rank by |E[dh⁽²⁾]|. A neuron rising on several directions
// goes to the one with the largest gap.
NeuronGroups detect_kick_neurons(const dynamics::ZoneMap& zm, std::span<const double> dh2, const KickOptions& opts = {});

// Scores non-kick neurons by their drive difference onto the first two kick
// groups and splits those with |s| > score_sd·sd(s) by sign.
NeuronGroups detect_populations(const rnn::RnnParams& p, NeuronGroups groups, double score_sd = 1.0);

struct BlockStats {
    double within = 0.0;  // mean over same-group blocks, diagonal included
    double cross = 0.0;   // mean over different-group blocks
};

struct WeightEntry {
    std::size_t from = 0;
    std::size_t to = 0;
    double weight = 0.0;
};

struct ConnectivityReport {
    Group kick_order;
    Matrix kick_block;      // W_hh[kick, kick]
    BlockStats kick_stats;
    std::vector<WeightEntry> population_to_kick;  // descending weight
    double population_to_kick_mean = 0.0;
    Group population_order;
    Matrix population_block;
    BlockStats population_stats;

    io::Json to_json() const;
};

BlockStats block_stats(const Matrix& W, const std::vector<Group>& groups);
ConnectivityReport connectivity_report(const rnn::RnnParams& p, const NeuronGroups& groups);

enum class Mode { activity, noise_drive };
std::string mode_name(Mode m);

struct Modulation {
    Group target;
    Mode mode = Mode::activity;
    double mu = 1.0;
};

struct InterventionSpec {
    std::vector<Modulation> modulations;
    std::size_t horizon = 0;
    Vector h0;  // empty means the zero state
    double sigma = 1.0;
    // The run stops once ‖h‖ exceeds this or turns non-finite.
    double divergence_norm = 1e6;

    void validate(std::size_t H) const;
};

struct InterventionResult {
    Matrix z;       // steps × H
    Matrix h;       // steps × H, after activity scaling
    Matrix logits;  // steps × 3
    std::vector<std::size_t> dominant;
    std::vector<std::size_t> visited;  // run-length compressed dominant sequence
    std::size_t transition_count = 0;
    Matrix direction_counts;  // 3 × 3, [from][to]
    Vector activity_scale;    // per neuron, for jacobian_at
    // First step whose state blew up; steps before it are kept. Empty if the
    // run finished the horizon.
    std::optional<std::size_t> diverged_at;

    std::size_t steps() const noexcept { return dominant.size(); }

    std::size_t transitions_from(std::size_t source) const;
};

// Activity mode scales post-ReLU activity of the target every step; noise
// mode scales the target rows of W_ih. Inputs are drawn exactly as a
// single-sequence rollout draws them, so all-μ = 1 reproduces
// rnn::rollout bit for bit.
InterventionResult intervene(const rnn::RnnParams& p, const InterventionSpec& spec, RngStream stream);

struct PairCount {
    double mean = 0.0;
    double sd = 0.0;
    double delta = 0.05;
    std::size_t states = 0;
};

// Conjugate pairs with Im λ ≠ 0 and |λ| ∈ [1 − δ, 1 + δ], counted once each.
std::size_t count_critical_pairs(const std::vector<Complex>& spectrum, double delta, double imag_tol = 1e-12);
// States are pre-activations; activity scaling enters through the Jacobian.
PairCount critical_pairs(const rnn::RnnParams& p, const Matrix& z_states, std::span<const double> activity_scale,
                         double delta = 0.05);

struct OscillationTraces {
    std::vector<std::string> names;
    std::vector<Vector> series;  // one per group, length T
    std::vector<std::size_t> band;  // dominant logit per step
    double population_correlation = 0.0;  // NaN without two populations

    std::string csv() const;
    io::Json to_json() const;
};

OscillationTraces oscillation_traces(const rnn::RnnParams& p, std::size_t length, const NeuronGroups& groups, double sigma,
                                     RngStream stream);

struct Alignment {
    Vector values;  // per readout row, NaN for a zero row
    std::vector<bool> defined;
    double mean = 0.0;  // over defined rows
};

Alignment readout_alignment(const rnn::RnnParams& p, const PcaBasis& basis);

// Interventions CSV with header mu,target,mode,transition_count,critical_pairs_mean,critical_pairs_sd.
struct InterventionRow {
    double mu = 1.0;
    std::string target;
    Mode mode = Mode::activity;
    std::size_t transition_count = 0;
    PairCount pairs;
};
std::string interventions_csv(const std::vector<InterventionRow>& rows);

// An equal-sized random set drawn from the residual neurons.
Group control_set(const NeuronGroups& groups, std::size_t size, RngStream stream);

}  // namespace stochrnn::circuit
