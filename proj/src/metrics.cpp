#include "stochrnn/metrics.hpp"

#include "stochrnn/error.hpp"

#include <cmath>

namespace stochrnn::metrics {

namespace {

io::Json mean_sd_json(const MeanSd& m) { return {{"mean", m.mean}, {"sd", m.sd}}; }

MeanSd summarize(const Vector& v) {
    MeanSd out;
    out.mean = mean(v);
    out.sd = v.size() > 1 ? stddev(v) : 0.0;
    return out;
}

}  // namespace

io::Json TransitionMatrix::to_json() const {
    io::Json rows = io::Json::array();
    for (std::size_t r = 0; r < values.rows(); ++r) {
        if (!defined[r]) {
            rows.push_back(nullptr);
            continue;
        }
        io::Json row = io::Json::array();
        for (double x : values.row(r)) row.push_back(x);
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix flatten_one_hot(const std::vector<hmm::ObsSequence>& seqs) {
    if (seqs.empty()) throw DimensionError("no sequences to flatten");
    const std::size_t T = seqs[0].length(), K = seqs[0].K;
    Matrix out(seqs.size(), T * K);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        if (seqs[i].length() != T || seqs[i].K != K) throw DimensionError("sequence " + std::to_string(i) + " has a different length");
        for (std::size_t t = 0; t < T; ++t) out(i, t * K + static_cast<std::size_t>(seqs[i].observations[t])) = 1.0;
    }
    return out;
}

MeanSd aligned_euclidean(const std::vector<hmm::ObsSequence>& a, const std::vector<hmm::ObsSequence>& b,
                         const ot::SinkhornOptions& opts) {
    const Matrix xa = flatten_one_hot(a), xb = flatten_one_hot(b);
    if (xa.cols() != xb.cols()) throw DimensionError("aligned_euclidean: sequence lengths differ between the two sets");
    const auto X = ot::PointCloud::uniform(xa), Y = ot::PointCloud::uniform(xb);
    const auto pairing = ot::align(X, Y, opts);
    Vector dist(pairing.size());
    for (std::size_t i = 0; i < pairing.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < xa.cols(); ++k) {
            const double diff = xa(i, k) - xb(pairing[i], k);
            s += diff * diff;
        }
        dist[i] = std::sqrt(s);
    }
    return summarize(dist);
}

AlignedReport aligned_euclidean_with_baseline(const std::vector<hmm::ObsSequence>& model,
                                              const std::vector<hmm::ObsSequence>& reference,
                                              const ot::SinkhornOptions& opts) {
    if (reference.size() < 2) throw DimensionError("baseline needs at least two reference sequences");
    AlignedReport r;
    r.model = aligned_euclidean(model, reference, opts);
    const std::size_t half = reference.size() / 2;
    const std::vector<hmm::ObsSequence> first(reference.begin(), reference.begin() + static_cast<std::ptrdiff_t>(half));
    const std::vector<hmm::ObsSequence> second(reference.begin() + static_cast<std::ptrdiff_t>(half), reference.end());
    r.baseline = aligned_euclidean(first, second, opts);
    return r;
}

TransitionMatrix empirical_transition(const std::vector<hmm::ObsSequence>& seqs, std::size_t K) {
    TransitionMatrix out{Matrix(K, K), std::vector<bool>(K, false)};
    Matrix counts(K, K);
    for (const auto& s : seqs)
        for (std::size_t t = 1; t < s.length(); ++t)
            counts(static_cast<std::size_t>(s.observations[t - 1]), static_cast<std::size_t>(s.observations[t])) += 1.0;
    for (std::size_t i = 0; i < K; ++i) {
        double n = 0.0;
        for (double c : counts.row(i)) n += c;
        if (n == 0.0) continue;
        out.defined[i] = true;
        for (std::size_t j = 0; j < K; ++j) out.values(i, j) = counts(i, j) / n;
    }
    return out;
}

TransitionMatrix transition_sq_diff(const TransitionMatrix& a, const TransitionMatrix& b) {
    if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) throw DimensionError("transition matrices differ in shape");
    const std::size_t K = a.values.rows();
    TransitionMatrix out{Matrix(K, a.values.cols()), std::vector<bool>(K, false)};
    for (std::size_t i = 0; i < K; ++i) {
        out.defined[i] = a.defined[i] && b.defined[i];
        if (!out.defined[i]) continue;
        for (std::size_t j = 0; j < a.values.cols(); ++j) {
            const double diff = a.values(i, j) - b.values(i, j);
            out.values(i, j) = diff * diff;
        }
    }
    return out;
}

double max_defined(const TransitionMatrix& m) {
    double best = 0.0;
    for (std::size_t i = 0; i < m.values.rows(); ++i)
        if (m.defined[i])
            for (double x : m.values.row(i)) best = std::max(best, x);
    return best;
}

Vector observation_frequencies(const std::vector<hmm::ObsSequence>& seqs, std::size_t K) {
    Vector counts(K, 0.0);
    double n = 0.0;
    for (const auto& s : seqs)
        for (int o : s.observations) {
            counts[static_cast<std::size_t>(o)] += 1.0;
            n += 1.0;
        }
    if (n == 0.0) throw DimensionError("observation_frequencies: no observations");
    for (auto& c : counts) c /= n;
    return counts;
}

double volatility(const std::vector<hmm::ObsSequence>& seqs) {
    double changes = 0.0, pairs = 0.0;
    for (const auto& s : seqs)
        for (std::size_t t = 1; t < s.length(); ++t) {
            pairs += 1.0;
            if (s.observations[t] != s.observations[t - 1]) changes += 1.0;
        }
    if (pairs == 0.0) throw DimensionError("volatility: no adjacent pairs");
    return changes / pairs;
}

io::Json MetricReport::to_json() const {
    io::Json j;
    j["aligned_euclidean"] = {{"model", mean_sd_json(aligned.model)}, {"baseline", mean_sd_json(aligned.baseline)}};
    j["transition"] = {{"model", transition_model.to_json()},
                       {"hmm", transition_hmm.to_json()},
                       {"sq_diff", transition_sq_diff.to_json()},
                       {"sq_diff_max", max_defined(transition_sq_diff)}};
    j["frequencies"] = {{"model", frequencies_model}, {"hmm", frequencies_hmm}};
    j["volatility"] = {{"model", volatility_model}, {"hmm", volatility_hmm}};
    return j;
}

MetricReport evaluate(const std::vector<hmm::ObsSequence>& model, const hmm::HmmSpec& spec,
                      const std::vector<hmm::ObsSequence>& reference, const ot::SinkhornOptions& opts) {
    MetricReport r;
    r.aligned = aligned_euclidean_with_baseline(model, reference, opts);
    r.transition_model = empirical_transition(model, spec.K);
    r.transition_hmm.values = hmm::obs_pair_matrix(spec);
    r.transition_hmm.defined.assign(spec.K, true);
    r.transition_sq_diff = transition_sq_diff(r.transition_model, r.transition_hmm);
    r.frequencies_model = observation_frequencies(model, spec.K);
    r.frequencies_hmm = hmm::obs_frequencies(spec);
    r.volatility_model = volatility(model);
    r.volatility_hmm = hmm::obs_volatility(spec);
    return r;
}

}  // namespace stochrnn::metrics
