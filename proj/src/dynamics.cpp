#include "stochrnn/dynamics.hpp"

#include "stochrnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stochrnn::dynamics {

namespace {

Vector relu(const Vector& z) {
    Vector h(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) h[i] = std::max(0.0, z[i]);
    return h;
}

double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

io::Json complex_list(const std::vector<Complex>& v) {
    io::Json out = io::Json::array();
    for (auto c : v) out.push_back({c.real(), c.imag()});
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Fixed points

io::Json FixedPointReport::to_json() const {
    io::Json j;
    j["tol"] = tol;
    j["n_inits"] = assignment.size();
    j["n_converged"] = n_converged;
    j["n_diverged"] = n_diverged;
    j["cluster_count"] = points.size();
    io::Json pts = io::Json::array();
    for (const auto& fp : points) {
        const auto st = spectrum_stats(fp.spectrum);
        pts.push_back({{"h", fp.h},
                       {"residual", fp.residual},
                       {"basin", fp.basin},
                       {"norm", norm2(fp.h)},
                       {"spectral_radius", fp.spectrum.empty() ? 0.0 : std::abs(fp.spectrum.front())},
                       {"unstable_fraction", st.unstable_fraction},
                       {"complex_fraction", st.complex_fraction},
                       {"spectrum", complex_list(fp.spectrum)}});
    }
    j["points"] = pts;
    j["assignment"] = assignment;
    j["steps"] = steps;
    return j;
}

FixedPointReport find_fixed_points(const rnn::RnnParams& p, const FixedPointOptions& opts, const RngStream& stream) {
    p.validate();
    if (opts.n_inits == 0) throw ParameterError("find_fixed_points needs n_inits >= 1");
    if (!(opts.tol > 0.0)) throw ParameterError("find_fixed_points needs tol > 0");
    const double scale = opts.init_scale > 0.0 ? opts.init_scale : 1.0 / std::sqrt(static_cast<double>(p.H));

    FixedPointReport rep;
    rep.tol = opts.tol;
    for (std::size_t i = 0; i < opts.n_inits; ++i) {
        RngStream s = stream.split(i);
        Vector h(p.H);
        for (auto& x : h) x = s.gaussian(scale);
        Vector z;
        double prev = std::numeric_limits<double>::infinity();
        long long outcome = -1;
        std::size_t step = 0;
        while (step < opts.max_steps) {
            ++step;
            z = row_times_transpose(h, p.W_hh);
            Vector next = relu(z);
            const double diff = distance(next, h);
            h = std::move(next);
            const double n = norm2(h);
            if (!std::isfinite(n) || n > opts.divergence_norm) {
                outcome = -2;
                break;
            }
            const double rho = diff / prev;
            if (diff == 0.0 || (rho < 1.0 && diff / (1.0 - rho) < opts.tol)) {
                outcome = 0;
                break;
            }
            prev = diff;
        }
        rep.steps.push_back(step);
        if (outcome == -2) {
            ++rep.n_diverged;
            rep.assignment.push_back(-2);
            continue;
        }
        if (outcome == -1) {
            rep.assignment.push_back(-1);
            continue;
        }
        ++rep.n_converged;
        long long match = -1;
        for (std::size_t k = 0; k < rep.points.size(); ++k)
            if (distance(rep.points[k].h, h) < 10.0 * opts.tol) {
                match = static_cast<long long>(k);
                break;
            }
        if (match < 0) {
            FixedPoint fp;
            fp.residual = distance(relu(row_times_transpose(h, p.W_hh)), h);
            fp.h = h;
            fp.z = z;
            fp.spectrum = eigenvalues(jacobian_at(p, fp.z));
            rep.points.push_back(std::move(fp));
            match = static_cast<long long>(rep.points.size() - 1);
        }
        ++rep.points[static_cast<std::size_t>(match)].basin;
        rep.assignment.push_back(match);
    }
    return rep;
}

Matrix jacobian_at(const rnn::RnnParams& p, std::span<const double> z, std::span<const double> activity_scale) {
    if (z.size() != p.H) throw DimensionError("jacobian_at: pre-activation width != H");
    if (!activity_scale.empty() && activity_scale.size() != p.H) throw DimensionError("jacobian_at: scale width != H");
    Matrix J(p.H, p.H);
    for (std::size_t j = 0; j < p.H; ++j) {
        if (!(z[j] > 0.0)) continue;
        const double g = activity_scale.empty() ? 1.0 : activity_scale[j];
        for (std::size_t i = 0; i < p.H; ++i) J(i, j) = p.W_hh(j, i) * g;
    }
    return J;
}

Complex mobius(Complex lambda) {
    const Complex den = lambda + 1.0;
    if (den == Complex(0.0, 0.0)) throw PoleError("mobius: pole at lambda = -1");
    return (lambda - 1.0) / den;
}

SpectrumStats spectrum_stats(const std::vector<Complex>& spectrum, double imag_tol) {
    SpectrumStats s;
    if (spectrum.empty()) return s;
    for (auto l : spectrum) {
        if (std::abs(l) > 1.0) s.unstable_fraction += 1.0;
        if (std::abs(l.imag()) > imag_tol) s.complex_fraction += 1.0;
    }
    s.unstable_fraction /= static_cast<double>(spectrum.size());
    s.complex_fraction /= static_cast<double>(spectrum.size());
    return s;
}

// ---------------------------------------------------------------------------
// Orbits

io::Json OrbitScan::to_json() const {
    return {{"variances", variances},
            {"radii", radii},
            {"fit", {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}}},
            {"plane_explained_variance", plane.explained_variance}};
}

OrbitScan orbit_radius_scan(const rnn::RnnParams& p, const Vector& variances, std::size_t length, std::size_t burn_in,
                            const RngStream& stream) {
    if (variances.empty()) throw ParameterError("orbit_radius_scan needs a nonempty variance grid");
    if (length < burn_in + 1000) throw ParameterError("orbit_radius_scan needs length >= burn_in + 1000");
    auto post_burn = [&](double sigma) {
        // Common random numbers: every σ² scales the same standard-normal draws.
        RngStream in = stream.split(0);
        const auto r = rnn::rollout(p, length, rnn::GaussianInput{sigma, &in}, {}, 1.0, nullptr);
        Matrix states(length - burn_in, p.H);
        for (std::size_t t = burn_in; t < length; ++t) std::copy(r.h.row(t).begin(), r.h.row(t).end(), states.row(t - burn_in).begin());
        return states;
    };
    OrbitScan out;
    out.variances = variances;
    out.plane = pca_fit(post_burn(1.0), 2);
    for (double v : variances) {
        if (!(v >= 0.0)) throw ParameterError("orbit_radius_scan: variances must be >= 0");
        const Matrix c = pca_project(out.plane, post_burn(std::sqrt(v)));
        double cx = 0.0, cy = 0.0;
        for (std::size_t t = 0; t < c.rows(); ++t) {
            cx += c(t, 0);
            cy += c(t, 1);
        }
        cx /= static_cast<double>(c.rows());
        cy /= static_cast<double>(c.rows());
        double r = 0.0;
        for (std::size_t t = 0; t < c.rows(); ++t) r += std::hypot(c(t, 0) - cx, c(t, 1) - cy);
        out.radii.push_back(r / static_cast<double>(c.rows()));
    }
    if (variances.size() >= 2) out.fit = linear_fit(out.variances, out.radii);
    return out;
}

// ---------------------------------------------------------------------------
// Residency zones

std::string zone_name(Zone z) {
    switch (z) {
        case Zone::cluster: return "cluster";
        case Zone::kick: return "kick";
        case Zone::transition: return "transition";
    }
    return "?";
}

io::Json ZoneMap::to_json(bool with_states) const {
    io::Json j;
    j["cap"] = cap;
    j["residency"] = residency;
    j["sign_changes"] = sign_changes;
    j["unstable"] = unstable;
    j["dominant"] = dominant;
    io::Json labels_json = io::Json::array();
    for (auto l : labels) labels_json.push_back(zone_name(l));
    j["labels"] = labels_json;
    if (with_states) {
        j["states"] = io::to_json(states);
        j["z"] = io::to_json(z);
    }
    return j;
}

ZoneMap residency_map(const rnn::RnnParams& p, const ResidencyOptions& opts, const RngStream& stream) {
    p.validate();
    if (opts.samples == 0 || opts.rollouts == 0 || opts.cap == 0) throw ParameterError("residency_map needs S, R, cap >= 1");
    if (opts.base_length < opts.burn_in + opts.samples) throw ParameterError("residency_map: base rollout too short for S samples");
    RngStream base_in = stream.split(0);
    const auto base = rnn::rollout(p, opts.base_length, rnn::GaussianInput{opts.sigma, &base_in}, {}, 1.0, nullptr);

    const std::size_t S = opts.samples, R = opts.rollouts, H = p.H;
    ZoneMap zm;
    zm.cap = opts.cap;
    zm.states = Matrix(S, H);
    zm.z = Matrix(S, H);
    zm.residency.assign(S, 0.0);
    zm.sign_changes.assign(S, 0.0);
    zm.unstable.assign(S, 0);
    zm.dominant.assign(S, 0);
    const RngStream probe_root = stream.split(1);
    const std::size_t span = opts.base_length - opts.burn_in;
    for (std::size_t k = 0; k < S; ++k) {
        const std::size_t t0 = opts.burn_in + k * span / S;
        std::copy(base.h.row(t0).begin(), base.h.row(t0).end(), zm.states.row(k).begin());
        std::copy(base.z.row(t0).begin(), base.z.row(t0).end(), zm.z.row(k).begin());
        const std::size_t d0 = rnn::argmax(base.logits.row(t0));
        zm.dominant[k] = d0;
        const double v0 = base.logits(t0, d0);

        Matrix h0(R, H);
        for (std::size_t r = 0; r < R; ++r) std::copy(base.h.row(t0).begin(), base.h.row(t0).end(), h0.row(r).begin());
        const RngStream state_root = probe_root.split(k);
        std::vector<RngStream> inputs;
        for (std::size_t r = 0; r < R; ++r) inputs.push_back(state_root.split(r));
        const auto probe = rnn::rollout_batch(p, opts.cap, inputs, opts.sigma, h0, 1.0, {});

        double rt_sum = 0.0, flips_sum = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            std::size_t rt = opts.cap;
            for (std::size_t t = 0; t < opts.cap; ++t)
                if (rnn::argmax(probe.logits[t].row(r)) != d0) {
                    rt = t + 1;
                    break;
                }
            // Sign flips of the one-step difference of the dominant logit
            // while it is still dominant.
            double prev_value = v0, prev_delta = 0.0;
            std::size_t flips = 0;
            for (std::size_t t = 0; t + 1 < rt; ++t) {
                const double v = probe.logits[t](r, d0);
                const double delta = v - prev_value;
                if (delta != 0.0) {
                    if (prev_delta != 0.0 && (delta > 0.0) != (prev_delta > 0.0)) ++flips;
                    prev_delta = delta;
                }
                prev_value = v;
            }
            rt_sum += static_cast<double>(rt);
            flips_sum += static_cast<double>(flips);
        }
        zm.residency[k] = rt_sum / static_cast<double>(R);
        zm.sign_changes[k] = flips_sum / static_cast<double>(R);
        for (auto l : eigenvalues(jacobian_at(p, zm.z.row(k))))
            if (std::abs(l) > 1.0) ++zm.unstable[k];
    }
    return zm;
}

ZoneMap classify_zones(ZoneMap zm, const ZoneThresholds& th) {
    if (zm.residency.empty()) throw StateError("classify_zones: residency times not populated");
    zm.labels.clear();
    for (double rt : zm.residency) {
        if (rt > th.cluster_above) {
            zm.labels.push_back(Zone::cluster);
        } else if (rt < th.transition_below) {
            zm.labels.push_back(Zone::transition);
        } else {
            zm.labels.push_back(Zone::kick);
        }
    }
    return zm;
}

ZoneSummary summarize_zones(const ZoneMap& zm, const ZoneThresholds& th) {
    if (zm.labels.size() != zm.residency.size()) throw StateError("summarize_zones: map is not classified");
    ZoneSummary s;
    for (std::size_t i = 0; i < zm.labels.size(); ++i) {
        switch (zm.labels[i]) {
            case Zone::cluster:
                ++s.n_cluster;
                if (std::find(s.cluster_logits.begin(), s.cluster_logits.end(), zm.dominant[i]) == s.cluster_logits.end())
                    s.cluster_logits.push_back(zm.dominant[i]);
                break;
            case Zone::kick: ++s.n_kick; break;
            case Zone::transition: ++s.n_transition; break;
        }
    }
    std::sort(s.cluster_logits.begin(), s.cluster_logits.end());
    // Unit-width RT histogram: two modes when both the transition bin and
    // the tallest cluster bin stand above the lowest bin between them.
    std::vector<std::size_t> hist(zm.cap + 1, 0);
    for (double rt : zm.residency) ++hist[std::min(zm.cap, static_cast<std::size_t>(rt))];
    const auto lo_end = static_cast<std::size_t>(std::ceil(th.transition_below));
    const auto hi_start = static_cast<std::size_t>(std::floor(th.cluster_above)) + 1;
    if (lo_end >= 1 && hi_start > lo_end && hi_start <= zm.cap) {
        std::size_t low = 0, high = 0, valley = std::numeric_limits<std::size_t>::max();
        for (std::size_t b = 1; b < lo_end; ++b) low = std::max(low, hist[b]);
        for (std::size_t b = lo_end; b < hi_start; ++b) valley = std::min(valley, hist[b]);
        for (std::size_t b = hi_start; b <= zm.cap; ++b) high = std::max(high, hist[b]);
        s.bimodal = low > valley && high > valley;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Noise sensitivity

NoiseProbe noise_sensitivity(const rnn::RnnParams& p, std::span<const double> ic, double gamma, std::size_t n_traj,
                             std::size_t length, double sigma, const RngStream& stream) {
    p.validate();
    if (n_traj < 2) throw ParameterError("noise_sensitivity needs n_traj >= 2");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("noise_sensitivity: gamma must lie in [0, 1]");
    if (ic.size() != p.H) throw DimensionError("noise_sensitivity: initial state width != H");
    RngStream ref = stream.split(0);
    Matrix shared(length, p.d);
    for (auto& x : shared.values()) x = ref.gaussian(sigma);

    NoiseProbe out;
    for (std::size_t k = 0; k < n_traj; ++k) {
        RngStream own = stream.split(1 + k);
        Matrix traj(length, p.H);
        Vector h(ic.begin(), ic.end());
        Vector x(p.d);
        for (std::size_t t = 0; t < length; ++t) {
            if (own.uniform() < gamma) {
                for (auto& v : x) v = own.gaussian(sigma);
            } else {
                std::copy(shared.row(t).begin(), shared.row(t).end(), x.begin());
            }
            h = rnn::step(p, h, x).h;
            std::copy(h.begin(), h.end(), traj.row(t).begin());
        }
        out.trajectories.push_back(std::move(traj));
    }
    out.covariance_trace.assign(length, 0.0);
    out.mean_distance.assign(length, 0.0);
    const double n = static_cast<double>(n_traj);
    for (std::size_t t = 0; t < length; ++t) {
        // tr Cov = Σ_{a<b} ‖x_a − x_b‖² / (n(n − 1)); exactly zero for equal rows.
        double pair_sum = 0.0;
        for (std::size_t a = 0; a < n_traj; ++a)
            for (std::size_t b = a + 1; b < n_traj; ++b) {
                const double dd = distance(out.trajectories[a].row(t), out.trajectories[b].row(t));
                pair_sum += dd * dd;
            }
        out.covariance_trace[t] = pair_sum / (n * (n - 1.0));
        Vector centre(p.H, 0.0);
        for (const auto& tr : out.trajectories)
            for (std::size_t i = 0; i < p.H; ++i) centre[i] += tr(t, i) / n;
        double dist = 0.0;
        for (const auto& tr : out.trajectories) dist += distance(tr.row(t), centre);
        out.mean_distance[t] = dist / n;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Second-order perturbation

Perturbation second_order_perturbation(const rnn::RnnParams& p, std::span<const double> z_ref, double variance,
                                       std::size_t horizon, std::size_t n_traj, const RngStream& stream) {
    p.validate();
    if (z_ref.size() != p.H) throw DimensionError("second_order_perturbation: reference width != H");
    if (!(variance >= 0.0)) throw ParameterError("second_order_perturbation: variance must be >= 0");
    if (n_traj == 0) throw ParameterError("second_order_perturbation needs n_traj >= 1");
    const std::size_t H = p.H;
    const double sigma = std::sqrt(variance);
    // δh·D·W_hhᵀ as a single matrix: rows of W_hhᵀ for closed gates vanish.
    Matrix A(H, H);
    for (std::size_t i = 0; i < H; ++i) {
        if (!(z_ref[i] > 0.0)) continue;
        for (std::size_t j = 0; j < H; ++j) A(i, j) = p.W_hh(j, i);
    }
    Perturbation out;
    out.mean.assign(H, 0.0);
    out.variance = variance;
    out.horizon = horizon;
    out.trajectories = n_traj;
    for (std::size_t n = 0; n < n_traj; ++n) {
        RngStream s = stream.split(n);
        Vector dh1(H, 0.0), dh2(H, 0.0), x(p.d);
        for (std::size_t k = 0; k <= horizon; ++k) {
            for (auto& v : x) v = sigma * s.gaussian();
            Vector next1 = row_times(dh1, A);
            const Vector drive = row_times_transpose(x, p.W_ih);
            for (std::size_t i = 0; i < H; ++i) next1[i] += drive[i];
            dh1 = std::move(next1);
            Vector next2 = row_times(dh2, A);
            for (std::size_t i = 0; i < H; ++i)
                if (z_ref[i] < 0.0) next2[i] += 0.5 * dh1[i] * dh1[i];
            dh2 = std::move(next2);
        }
        for (std::size_t i = 0; i < H; ++i) out.mean[i] += dh2[i];
    }
    for (auto& v : out.mean) v /= static_cast<double>(n_traj);
    return out;
}

// ---------------------------------------------------------------------------
// Epoch sweep

double transition_rate(const rnn::RnnParams& p, std::size_t length, std::size_t burn_in, double sigma, const RngStream& stream) {
    if (length < burn_in + 2) throw ParameterError("transition_rate: rollout shorter than burn-in");
    RngStream in = stream;
    const auto r = rnn::rollout(p, length, rnn::GaussianInput{sigma, &in}, {}, 1.0, nullptr);
    std::size_t changes = 0;
    std::size_t prev = rnn::argmax(r.logits.row(burn_in));
    for (std::size_t t = burn_in + 1; t < length; ++t) {
        const std::size_t d = rnn::argmax(r.logits.row(t));
        if (d != prev) ++changes;
        prev = d;
    }
    return static_cast<double>(changes) / static_cast<double>(length - burn_in - 1);
}

EpochRow sweep_row(const rnn::RnnParams& p, std::size_t epoch, const SweepOptions& opts, const RngStream& stream) {
    EpochRow row;
    row.epoch = epoch;
    row.transition_rate = transition_rate(p, opts.rate_length, opts.burn_in, opts.sigma, stream.split(0));
    const auto fps = find_fixed_points(p, opts.fixed_points, stream.split(1));
    if (fps.points.empty()) {
        row.dh2_norm = std::numeric_limits<double>::quiet_NaN();
        row.unstable_fraction = std::numeric_limits<double>::quiet_NaN();
        row.complex_fraction = std::numeric_limits<double>::quiet_NaN();
        return row;
    }
    const auto best = std::max_element(fps.points.begin(), fps.points.end(),
                                       [](const FixedPoint& a, const FixedPoint& b) { return a.basin < b.basin; });
    row.has_fixed_point = true;
    const auto st = spectrum_stats(best->spectrum);
    row.unstable_fraction = st.unstable_fraction;
    row.complex_fraction = st.complex_fraction;
    row.dh2_norm = second_order_perturbation(p, best->z, opts.variance, opts.horizon, opts.n_traj, stream.split(2)).norm();
    return row;
}

std::string sweep_csv(const std::vector<EpochRow>& rows) {
    io::CsvWriter w("epoch,transition_rate,has_fixed_point,unstable_fraction,complex_fraction,dh2_norm");
    for (const auto& r : rows) {
        w.row({io::cell(r.epoch), io::cell(r.transition_rate), io::cell(r.has_fixed_point ? 1 : 0), io::cell(r.unstable_fraction),
               io::cell(r.complex_fraction), io::cell(r.dh2_norm)});
    }
    return w.text();
}

// ---------------------------------------------------------------------------
// Pair subspaces

PairSubspace pair_subspace_pca(const Matrix& states, const std::vector<int>& labels, int a, int b) {
    if (labels.size() != states.rows()) throw DimensionError("pair_subspace_pca: one label per state required");
    const bool has_a = std::find(labels.begin(), labels.end(), a) != labels.end();
    const bool has_b = std::find(labels.begin(), labels.end(), b) != labels.end();
    if (!has_a || !has_b) throw DataError("pair_subspace_pca: both clusters of the pair must be present");
    PairSubspace out;
    const auto in_pair = [&](int l) { return l == a || l == b; };
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (in_pair(labels[t])) {
            out.rows.push_back(t);
            continue;
        }
        if (labels[t] >= 0) continue;
        // A transit run counts when it is bracketed by the two pair clusters.
        std::size_t lo = t, hi = t;
        while (lo > 0 && labels[lo] < 0) --lo;
        while (hi + 1 < labels.size() && labels[hi] < 0) ++hi;
        if (labels[lo] >= 0 && labels[hi] >= 0 && in_pair(labels[lo]) && in_pair(labels[hi]) && labels[lo] != labels[hi]) {
            out.rows.push_back(t);
        }
    }
    if (out.rows.size() < 2) throw DataError("pair_subspace_pca: restriction is empty");
    const Matrix sub = select_rows(states, out.rows);
    out.basis = pca_fit(sub, std::min<std::size_t>(2, std::min(sub.rows(), sub.cols())));
    out.coords = pca_project(out.basis, sub);
    return out;
}

}  // namespace stochrnn::dynamics
