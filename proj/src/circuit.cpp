#include "stochrnn/circuit.hpp"

#include "stochrnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace stochrnn::circuit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_indices(const Group& g, std::size_t H, const char* what) {
    for (auto i : g)
        if (i >= H) throw ValidationError(std::string(what) + ": neuron index out of range");
}

Matrix submatrix(const Matrix& W, const Group& order) {
    Matrix out(order.size(), order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t j = 0; j < order.size(); ++j) out(i, j) = W(order[i], order[j]);
    return out;
}

io::Json block_json(const BlockStats& s) {
    return {{"within", s.within}, {"cross", s.cross}};
}

}  // namespace

void NeuronGroups::validate(std::size_t H) const {
    std::set<std::size_t> seen;
    for (const auto& k : kicks) {
        check_indices(k.neurons, H, "kick group");
        for (auto i : k.neurons)
            if (!seen.insert(i).second) throw ValidationError("kick groups must be disjoint");
    }
    std::set<std::size_t> pop_seen;
    for (const auto& g : populations) {
        check_indices(g, H, "population");
        for (auto i : g)
            if (!pop_seen.insert(i).second) throw ValidationError("populations must be disjoint");
    }
}

Group NeuronGroups::kick_union() const {
    Group out;
    for (const auto& k : kicks) out.insert(out.end(), k.neurons.begin(), k.neurons.end());
    return out;
}

io::Json NeuronGroups::to_json() const {
    io::Json kj = io::Json::array();
    for (const auto& k : kicks) kj.push_back({{"source", k.source}, {"neurons", k.neurons}, {"size", k.neurons.size()}});
    io::Json sc = io::Json::array();
    for (double s : scores) {
        if (std::isfinite(s)) {
            sc.push_back(s);
        } else {
            sc.push_back(nullptr);
        }
    }
    return {{"kick_groups", kj},
            {"populations", populations},
            {"residual", residual},
            {"gap_threshold", gap_threshold},
            {"score_threshold", score_threshold},
            {"scores", sc}};
}

NeuronGroups detect_kick_neurons(const dynamics::ZoneMap& zm, std::span<const double> dh2, const KickOptions& opts) {
    const std::size_t S = zm.z.rows(), H = zm.z.cols();
    if (zm.labels.size() != S || zm.dominant.size() != S) throw StateError("detect_kick_neurons: zone labels missing");
    if (dh2.size() != H) throw DimensionError("detect_kick_neurons: dh2 width != H");
    if (!(opts.top_fraction > 0.0 && opts.top_fraction <= 1.0)) throw ParameterError("detect_kick_neurons: top fraction in (0, 1]");

    NeuronGroups out;
    out.gap_threshold = opts.gap_sd * stddev(zm.z.values());

    std::vector<std::size_t> order(H);
    for (std::size_t i = 0; i < H; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(dh2[a]) > std::abs(dh2[b]); });
    const auto top_n = static_cast<std::size_t>(std::ceil(opts.top_fraction * static_cast<double>(H)));
    std::vector<bool> top(H, false);
    for (std::size_t r = 0; r < std::min(top_n, H); ++r)
        if (dh2[order[r]] != 0.0) top[order[r]] = true;

    std::set<std::size_t> sources;
    for (std::size_t s = 0; s < S; ++s)
        if (zm.labels[s] == dynamics::Zone::cluster) sources.insert(zm.dominant[s]);

    // best[n] = (gap, source) of the strongest qualifying direction.
    std::vector<std::pair<double, long long>> best(H, {-std::numeric_limits<double>::infinity(), -1});
    for (auto c : sources) {
        Vector in_cluster(H, 0.0), in_transition(H, 0.0);
        std::size_t nc = 0, nt = 0;
        for (std::size_t s = 0; s < S; ++s) {
            if (zm.dominant[s] != c) continue;
            if (zm.labels[s] == dynamics::Zone::cluster) {
                for (std::size_t i = 0; i < H; ++i) in_cluster[i] += zm.z(s, i);
                ++nc;
            } else if (zm.labels[s] == dynamics::Zone::transition) {
                for (std::size_t i = 0; i < H; ++i) in_transition[i] += zm.z(s, i);
                ++nt;
            }
        }
        if (nc == 0 || nt == 0) continue;
        for (std::size_t i = 0; i < H; ++i) {
            const double mc = in_cluster[i] / static_cast<double>(nc);
            const double gap = in_transition[i] / static_cast<double>(nt) - mc;
            if (top[i] && mc < 0.0 && gap > out.gap_threshold && gap > best[i].first) best[i] = {gap, static_cast<long long>(c)};
        }
    }
    for (auto c : sources) {
        KickGroup g;
        g.source = c;
        for (std::size_t i = 0; i < H; ++i)
            if (best[i].second == static_cast<long long>(c)) g.neurons.push_back(i);
        if (!g.neurons.empty()) out.kicks.push_back(std::move(g));
    }
    std::stable_sort(out.kicks.begin(), out.kicks.end(),
                     [](const KickGroup& a, const KickGroup& b) { return a.neurons.size() > b.neurons.size(); });
    for (std::size_t i = 0; i < H; ++i)
        if (best[i].second < 0) out.residual.push_back(i);
    return out;
}

NeuronGroups detect_populations(const rnn::RnnParams& p, NeuronGroups groups, double score_sd) {
    p.validate();
    if (groups.kicks.size() < 2) throw StructureError("detect_populations needs at least two kick groups");
    groups.validate(p.H);
    std::vector<bool> is_kick(p.H, false);
    for (auto i : groups.kick_union()) is_kick[i] = true;

    groups.scores.assign(p.H, kNaN);
    Vector finite;
    for (std::size_t n = 0; n < p.H; ++n) {
        if (is_kick[n]) continue;
        double s = 0.0;
        for (auto j : groups.kicks[0].neurons) s += p.W_hh(j, n);
        for (auto j : groups.kicks[1].neurons) s -= p.W_hh(j, n);
        groups.scores[n] = s;
        finite.push_back(s);
    }
    groups.score_threshold = score_sd * stddev(finite);
    groups.populations.assign(2, {});
    groups.residual.clear();
    for (std::size_t n = 0; n < p.H; ++n) {
        if (is_kick[n]) continue;
        const double s = groups.scores[n];
        if (groups.score_threshold > 0.0 && std::abs(s) > groups.score_threshold) {
            groups.populations[s > 0.0 ? 0 : 1].push_back(n);
        } else {
            groups.residual.push_back(n);
        }
    }
    if (groups.populations[0].empty() && groups.populations[1].empty()) groups.populations.clear();
    return groups;
}

BlockStats block_stats(const Matrix& W, const std::vector<Group>& groups) {
    double within = 0.0, cross = 0.0;
    std::size_t nw = 0, nc = 0;
    for (std::size_t a = 0; a < groups.size(); ++a)
        for (std::size_t b = 0; b < groups.size(); ++b)
            for (auto i : groups[a])
                for (auto j : groups[b]) {
                    if (a == b) {
                        within += W(i, j);
                        ++nw;
                    } else {
                        cross += W(i, j);
                        ++nc;
                    }
                }
    return {nw ? within / static_cast<double>(nw) : kNaN, nc ? cross / static_cast<double>(nc) : kNaN};
}

io::Json ConnectivityReport::to_json() const {
    io::Json p2k = io::Json::array();
    for (const auto& e : population_to_kick) p2k.push_back({{"from", e.from}, {"to", e.to}, {"weight", e.weight}});
    return {{"kick_order", kick_order},
            {"kick_block", io::to_json(kick_block)},
            {"kick_stats", block_json(kick_stats)},
            {"population_to_kick", p2k},
            {"population_to_kick_mean", population_to_kick_mean},
            {"population_order", population_order},
            {"population_block", io::to_json(population_block)},
            {"population_stats", block_json(population_stats)}};
}

ConnectivityReport connectivity_report(const rnn::RnnParams& p, const NeuronGroups& groups) {
    p.validate();
    groups.validate(p.H);
    if (groups.kicks.empty() && groups.populations.empty()) throw StructureError("connectivity_report: no groups");
    ConnectivityReport r;
    std::vector<Group> kick_sets;
    for (const auto& k : groups.kicks) kick_sets.push_back(k.neurons);
    r.kick_order = groups.kick_union();
    r.kick_block = submatrix(p.W_hh, r.kick_order);
    r.kick_stats = block_stats(p.W_hh, kick_sets);
    for (const auto& g : groups.populations) r.population_order.insert(r.population_order.end(), g.begin(), g.end());
    r.population_block = submatrix(p.W_hh, r.population_order);
    r.population_stats = block_stats(p.W_hh, groups.populations);
    double sum = 0.0;
    for (auto n : r.population_order)
        for (auto j : r.kick_order) {
            r.population_to_kick.push_back({n, j, p.W_hh(j, n)});
            sum += p.W_hh(j, n);
        }
    r.population_to_kick_mean = r.population_to_kick.empty() ? kNaN : sum / static_cast<double>(r.population_to_kick.size());
    std::stable_sort(r.population_to_kick.begin(), r.population_to_kick.end(),
                     [](const WeightEntry& a, const WeightEntry& b) { return a.weight > b.weight; });
    return r;
}

std::string mode_name(Mode m) {
    return m == Mode::activity ? "activity" : "noise_drive";
}

void InterventionSpec::validate(std::size_t H) const {
    if (horizon == 0) throw ValidationError("intervention horizon must be >= 1");
    if (!h0.empty() && h0.size() != H) throw DimensionError("intervention h0 width != H");
    if (!(divergence_norm > 0.0)) throw ValidationError("intervention divergence_norm must be > 0");
    std::vector<int> mode_of(H, -1);
    for (const auto& m : modulations) {
        if (!std::isfinite(m.mu) || m.mu < 0.0) throw ValidationError("intervention mu must be finite and >= 0");
        check_indices(m.target, H, "intervention target");
        for (auto i : m.target) {
            const int mode = static_cast<int>(m.mode);
            if (mode_of[i] >= 0 && mode_of[i] != mode) throw ValidationError("intervention target modulated in both modes");
            mode_of[i] = mode;
        }
    }
}

std::size_t InterventionResult::transitions_from(std::size_t source) const {
    double n = 0.0;
    for (std::size_t j = 0; j < direction_counts.cols(); ++j) n += direction_counts(source, j);
    return static_cast<std::size_t>(n);
}

InterventionResult intervene(const rnn::RnnParams& p, const InterventionSpec& spec, RngStream stream) {
    p.validate();
    spec.validate(p.H);
    Matrix W_ih = p.W_ih;
    InterventionResult r;
    r.activity_scale.assign(p.H, 1.0);
    for (const auto& m : spec.modulations) {
        for (auto i : m.target) {
            if (m.mode == Mode::activity) {
                r.activity_scale[i] *= m.mu;
            } else {
                for (auto& v : W_ih.row(i)) v *= m.mu;
            }
        }
    }
    const std::size_t T = spec.horizon;
    r.z = Matrix(T, p.H);
    r.h = Matrix(T, p.H);
    r.logits = Matrix(T, rnn::kOutputs);
    r.direction_counts = Matrix(rnn::kOutputs, rnn::kOutputs);
    Matrix prev(1, p.H);
    if (!spec.h0.empty()) std::copy(spec.h0.begin(), spec.h0.end(), prev.row(0).begin());
    // Same arithmetic as rnn::rollout_batch with one member.
    for (std::size_t t = 0; t < T; ++t) {
        Matrix x(1, p.d);
        for (auto& v : x.row(0)) v = stream.gaussian(spec.sigma);
        Matrix z = matmul_bt(prev, p.W_hh);
        z += matmul_bt(x, W_ih);
        Matrix h(1, p.H);
        for (std::size_t i = 0; i < p.H; ++i) h(0, i) = std::max(0.0, z(0, i)) * r.activity_scale[i];
        const double hn = norm2(h.row(0));
        if (!std::isfinite(hn) || hn > spec.divergence_norm) {
            r.diverged_at = t;
            break;
        }
        const Matrix y = matmul_bt(h, p.A);
        std::copy(z.row(0).begin(), z.row(0).end(), r.z.row(t).begin());
        std::copy(h.row(0).begin(), h.row(0).end(), r.h.row(t).begin());
        std::copy(y.row(0).begin(), y.row(0).end(), r.logits.row(t).begin());
        const std::size_t d = rnn::argmax(y.row(0));
        if (!r.dominant.empty() && r.dominant.back() != d) {
            ++r.transition_count;
            r.direction_counts(r.dominant.back(), d) += 1.0;
        }
        if (r.visited.empty() || r.visited.back() != d) r.visited.push_back(d);
        r.dominant.push_back(d);
        prev = std::move(h);
    }
    if (r.diverged_at) {
        const std::size_t n = *r.diverged_at;
        auto head = [n](const Matrix& m) {
            Matrix out(n, m.cols());
            std::copy(m.values().begin(), m.values().begin() + static_cast<std::ptrdiff_t>(n * m.cols()), out.values().begin());
            return out;
        };
        r.z = head(r.z);
        r.h = head(r.h);
        r.logits = head(r.logits);
    }
    return r;
}

std::size_t count_critical_pairs(const std::vector<Complex>& spectrum, double delta, double imag_tol) {
    std::size_t n = 0;
    for (auto l : spectrum) {
        const double m = std::abs(l);
        if (l.imag() > imag_tol && m >= 1.0 - delta && m <= 1.0 + delta) ++n;
    }
    return n;
}

PairCount critical_pairs(const rnn::RnnParams& p, const Matrix& z_states, std::span<const double> activity_scale, double delta) {
    if (!(delta >= 0.0)) throw ParameterError("critical_pairs: delta must be >= 0");
    if (z_states.cols() != p.H) throw DimensionError("critical_pairs: state width != H");
    PairCount out;
    out.delta = delta;
    out.states = z_states.rows();
    Vector counts;
    for (std::size_t s = 0; s < z_states.rows(); ++s)
        counts.push_back(static_cast<double>(count_critical_pairs(eigenvalues(dynamics::jacobian_at(p, z_states.row(s), activity_scale)), delta)));
    if (!counts.empty()) {
        out.mean = mean(counts);
        out.sd = stddev(counts);
    }
    return out;
}

std::string OscillationTraces::csv() const {
    std::string header = "t,band";
    for (const auto& n : names) header += "," + n;
    io::CsvWriter w(header);
    for (std::size_t t = 0; t < band.size(); ++t) {
        std::vector<std::string> row{io::cell(t), io::cell(band[t])};
        for (const auto& s : series) row.push_back(io::cell(s[t]));
        w.row(row);
    }
    return w.text();
}

io::Json OscillationTraces::to_json() const {
    io::Json j{{"names", names}, {"length", band.size()}};
    if (std::isfinite(population_correlation)) {
        j["population_correlation"] = population_correlation;
    } else {
        j["population_correlation"] = nullptr;
    }
    return j;
}

OscillationTraces oscillation_traces(const rnn::RnnParams& p, std::size_t length, const NeuronGroups& groups, double sigma,
                                     RngStream stream) {
    groups.validate(p.H);
    if (groups.kicks.empty() && groups.populations.empty()) throw StructureError("oscillation_traces: no groups");
    const auto r = rnn::rollout(p, length, rnn::GaussianInput{sigma, &stream}, {}, 1.0, nullptr);
    OscillationTraces out;
    std::vector<Group> sets;
    for (const auto& k : groups.kicks) {
        out.names.push_back("kick_" + std::to_string(k.source));
        sets.push_back(k.neurons);
    }
    for (std::size_t i = 0; i < groups.populations.size(); ++i) {
        out.names.push_back("population_" + std::to_string(i));
        sets.push_back(groups.populations[i]);
    }
    for (const auto& g : sets) {
        Vector s(length, 0.0);
        if (!g.empty())
            for (std::size_t t = 0; t < length; ++t) {
                for (auto i : g) s[t] += r.h(t, i);
                s[t] /= static_cast<double>(g.size());
            }
        out.series.push_back(std::move(s));
    }
    for (std::size_t t = 0; t < length; ++t) out.band.push_back(rnn::argmax(r.logits.row(t)));
    out.population_correlation = kNaN;
    if (groups.populations.size() == 2 && !groups.populations[0].empty() && !groups.populations[1].empty()) {
        const std::size_t k = groups.kicks.size();
        out.population_correlation = pearson(out.series[k], out.series[k + 1]);
    }
    return out;
}

Alignment readout_alignment(const rnn::RnnParams& p, const PcaBasis& basis) {
    if (basis.rank() != 2) throw ParameterError("readout_alignment needs a two-component basis");
    if (basis.width() != p.H) throw DimensionError("readout_alignment: basis width != H");
    Alignment out;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.A.rows(); ++i) {
        const auto a = p.A.row(i);
        const double len = norm2(a);
        if (len == 0.0) {
            out.values.push_back(kNaN);
            out.defined.push_back(false);
            continue;
        }
        double proj = 0.0;
        for (std::size_t k = 0; k < 2; ++k) {
            const double c = dot(basis.components.row(k), a);
            proj += c * c;
        }
        const double v = std::min(1.0, std::sqrt(proj) / len);
        out.values.push_back(v);
        out.defined.push_back(true);
        sum += v;
        ++n;
    }
    out.mean = n ? sum / static_cast<double>(n) : kNaN;
    return out;
}

std::string interventions_csv(const std::vector<InterventionRow>& rows) {
    io::CsvWriter w("mu,target,mode,transition_count,critical_pairs_mean,critical_pairs_sd");
    for (const auto& r : rows)
        w.row({io::cell(r.mu), r.target, mode_name(r.mode), io::cell(r.transition_count), io::cell(r.pairs.mean), io::cell(r.pairs.sd)});
    return w.text();
}

Group control_set(const NeuronGroups& groups, std::size_t size, RngStream stream) {
    Group pool = groups.residual;
    if (pool.size() < size) throw StructureError("control_set: not enough neurons outside kick groups and populations");
    shuffle(pool, stream);
    pool.resize(size);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace stochrnn::circuit
