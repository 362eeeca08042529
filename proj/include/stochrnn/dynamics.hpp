#pragma once

#include "stochrnn/io.hpp"
#include "stochrnn/numerics.hpp"
#include "stochrnn/rnn.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// Latent-dynamics analysis of a trained network: fixed points, spectra,
// orbits, residency zones, noise probes and second-order perturbations.
namespace stochrnn::dynamics {

// ---------------------------------------------------------------------------
// Fixed points

struct FixedPointOptions {
    std::size_t n_inits = 100;
    std::size_t max_steps = 10000;
    double tol = 1e-9;
    // Standard deviation of the Gaussian initial states; ≤ 0 means 1/√H.
    double init_scale = 0.0;
    // Trajectories whose norm exceeds this are reported as diverged.
    double divergence_norm = 1e6;
};

struct FixedPoint {
    Vector h;
    // Pre-activation of the last iterate. At the origin of a bias-free ReLU
    // net z vanishes, so the gate pattern is read from the direction the
    // trajectory approached from.
    Vector z;
    double residual = 0.0;  // ‖h − ReLU(h·W_hhᵀ)‖
    std::size_t basin = 0;  // inits merged into this point
    std::vector<Complex> spectrum;
};

struct FixedPointReport {
    std::vector<FixedPoint> points;  // merged, in order of discovery
    std::vector<long long> assignment;  // per init: point index, −1 not converged, −2 diverged
    std::vector<std::size_t> steps;     // per init
    std::size_t n_converged = 0;
    std::size_t n_diverged = 0;
    double tol = 0.0;

    io::Json to_json() const;
};

// Autonomous iteration h ← ReLU(h·W_hhᵀ). An init converges once the
// geometric estimate of its distance to the limit, ‖Δ‖/(1 − ρ̂) with ρ̂ the
// ratio of successive steps, falls below tol. Points within 10·tol merge.
FixedPointReport find_fixed_points(const rnn::RnnParams& p, const FixedPointOptions& opts, const RngStream& stream);

// J = W_hhᵀ·D with D = diag(1[z > 0]), optionally with per-unit activity
// scales μ (J = W_hhᵀ·D·diag(μ)).
Matrix jacobian_at(const rnn::RnnParams& p, std::span<const double> z, std::span<const double> activity_scale = {});

// μ(λ) = (λ − 1)/(λ + 1): the unit circle goes to the imaginary axis and
// |λ| < 1 to the left half-plane. Throws PoleError at λ = −1.
Complex mobius(Complex lambda);

struct SpectrumStats {
    double unstable_fraction = 0.0;  // |λ| > 1
    double complex_fraction = 0.0;   // Im λ ≠ 0
};
SpectrumStats spectrum_stats(const std::vector<Complex>& spectrum, double imag_tol = 1e-12);

// ---------------------------------------------------------------------------
// Orbits

struct OrbitScan {
    Vector variances;
    Vector radii;
    LinearFit fit;
    PcaBasis plane;  // fitted on the σ² = 1 rollout

    io::Json to_json() const;
};

// For each σ², a noisy rollout from h0 = 0 of `length` steps is projected
// onto the σ² = 1 principal plane; radius = mean distance of post-burn-in
// points from their centroid.
OrbitScan orbit_radius_scan(const rnn::RnnParams& p, const Vector& variances, std::size_t length, std::size_t burn_in,
                            const RngStream& stream);

// ---------------------------------------------------------------------------
// Residency zones

enum class Zone { cluster, kick, transition };
std::string zone_name(Zone z);

struct ZoneThresholds {
    double cluster_above = 8.0;     // RT > 8
    double transition_below = 2.0;  // RT < 2
};

struct ResidencyOptions {
    std::size_t base_length = 20000;
    std::size_t burn_in = 200;
    std::size_t samples = 2000;
    std::size_t rollouts = 32;
    std::size_t cap = 50;
    double sigma = 1.0;
};

struct ZoneMap {
    Matrix states;  // S × H
    Matrix z;       // S × H pre-activations of the sampled states
    Vector residency;
    Vector sign_changes;
    std::vector<std::size_t> unstable;
    std::vector<std::size_t> dominant;
    std::vector<Zone> labels;  // empty until classified
    std::size_t cap = 0;

    io::Json to_json(bool with_states = false) const;
};

ZoneMap residency_map(const rnn::RnnParams& p, const ResidencyOptions& opts, const RngStream& stream);
ZoneMap classify_zones(ZoneMap zm, const ZoneThresholds& th = {});

struct ZoneSummary {
    std::size_t n_cluster = 0, n_kick = 0, n_transition = 0;
    // Dominant logits that own at least one cluster-labelled state.
    std::vector<std::size_t> cluster_logits;
    bool bimodal = false;
};
// Bimodal: in the unit-width RT histogram the tallest transition bin and the
// tallest cluster bin both exceed the lowest kick-zone bin.
ZoneSummary summarize_zones(const ZoneMap& zm, const ZoneThresholds& th = {});

// ---------------------------------------------------------------------------
// Noise sensitivity

struct NoiseProbe {
    std::vector<Matrix> trajectories;  // n_traj × (T × H)
    Vector covariance_trace;           // per step
    Vector mean_distance;              // per step, to the mean trajectory
};

// All trajectories share a reference input draw; each step's input is
// replaced by a fresh draw with probability γ, independently per trajectory.
NoiseProbe noise_sensitivity(const rnn::RnnParams& p, std::span<const double> ic, double gamma, std::size_t n_traj,
                             std::size_t length, double sigma, const RngStream& stream);

// ---------------------------------------------------------------------------
// Second-order perturbation

struct Perturbation {
    Vector mean;  // E[dh⁽²⁾_t]
    double variance = 0.0;
    std::size_t horizon = 0;
    std::size_t trajectories = 0;

    double norm() const { return norm2(mean); }
};

// The reference is the stationary trajectory at a fixed point whose
// pre-activation is z_ref. With D = diag(1[z_ref > 0]) and f = 1[z_ref < 0],
// pre-activation perturbations follow
//   dh⁽¹⁾_k = dh⁽¹⁾_{k−1}·D·W_hhᵀ + x_k·W_ihᵀ
//   dh⁽²⁾_k = dh⁽²⁾_{k−1}·D·W_hhᵀ + ½(dh⁽¹⁾_k)² ⊙ f
// for k = 0..horizon, averaged over n_traj input draws x ~ N(0, variance·I).
// Every variance reuses the same standard-normal draws.
Perturbation second_order_perturbation(const rnn::RnnParams& p, std::span<const double> z_ref, double variance,
                                       std::size_t horizon, std::size_t n_traj, const RngStream& stream);

// ---------------------------------------------------------------------------
// Epoch sweep

struct EpochRow {
    std::size_t epoch = 0;
    double transition_rate = 0.0;
    bool has_fixed_point = false;
    double unstable_fraction = 0.0;
    double complex_fraction = 0.0;
    double dh2_norm = 0.0;
};

struct SweepOptions {
    std::size_t rate_length = 10000;
    std::size_t burn_in = 200;
    double sigma = 1.0;
    double variance = 1.0;
    std::size_t horizon = 10;
    std::size_t n_traj = 100;
    FixedPointOptions fixed_points;
};

// Dominant-logit changes per step over a noisy rollout after burn-in.
double transition_rate(const rnn::RnnParams& p, std::size_t length, std::size_t burn_in, double sigma, const RngStream& stream);

EpochRow sweep_row(const rnn::RnnParams& p, std::size_t epoch, const SweepOptions& opts, const RngStream& stream);
std::string sweep_csv(const std::vector<EpochRow>& rows);

// ---------------------------------------------------------------------------
// Pair subspaces

struct PairSubspace {
    PcaBasis basis;
    Matrix coords;
    std::vector<std::size_t> rows;  // indices into the input states
};

// Keeps timesteps labelled a or b plus the unlabelled runs between an a and
// a b, then fits a two-component PCA on them. Labels < 0 mean "in transit".
PairSubspace pair_subspace_pca(const Matrix& states, const std::vector<int>& labels, int a, int b);

}  // namespace stochrnn::dynamics
