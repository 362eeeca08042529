#pragma once

#include "stochrnn/hmm.hpp"
#include "stochrnn/io.hpp"
#include "stochrnn/ot.hpp"

#include <optional>
#include <vector>

// Emission-statistics metrics comparing generated sequences with an HMM.
namespace stochrnn::metrics {

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

// Rows whose symbol never appears (as a predecessor) are undefined and are
// left out of every comparison.
struct TransitionMatrix {
    Matrix values;              // K × K, undefined rows hold zeros
    std::vector<bool> defined;  // per row

    io::Json to_json() const;  // undefined rows serialize as null
};

Matrix flatten_one_hot(const std::vector<hmm::ObsSequence>& seqs);

// Pairs each sequence of `a` with argmax_j Π_ij on flattened one-hots and
// returns mean ± sd of the Euclidean distances over the pairs.
MeanSd aligned_euclidean(const std::vector<hmm::ObsSequence>& a, const std::vector<hmm::ObsSequence>& b,
                         const ot::SinkhornOptions& opts = {});

struct AlignedReport {
    MeanSd model;
    MeanSd baseline;  // first half of the HMM set against the second half
};
AlignedReport aligned_euclidean_with_baseline(const std::vector<hmm::ObsSequence>& model,
                                              const std::vector<hmm::ObsSequence>& reference,
                                              const ot::SinkhornOptions& opts = {});

TransitionMatrix empirical_transition(const std::vector<hmm::ObsSequence>& seqs, std::size_t K = 3);
TransitionMatrix transition_sq_diff(const TransitionMatrix& a, const TransitionMatrix& b);
// Largest entry over rows defined in both inputs.
double max_defined(const TransitionMatrix& m);

Vector observation_frequencies(const std::vector<hmm::ObsSequence>& seqs, std::size_t K = 3);
double volatility(const std::vector<hmm::ObsSequence>& seqs);

struct MetricReport {
    AlignedReport aligned;
    TransitionMatrix transition_model;
    TransitionMatrix transition_hmm;  // analytic pair matrix
    TransitionMatrix transition_sq_diff;
    Vector frequencies_model;
    Vector frequencies_hmm;
    double volatility_model = 0.0;
    double volatility_hmm = 0.0;

    io::Json to_json() const;
};

// Analytic HMM statistics are the reference for transitions, frequencies and
// volatility; `reference` supplies sequences for the aligned distance.
MetricReport evaluate(const std::vector<hmm::ObsSequence>& model, const hmm::HmmSpec& spec,
                      const std::vector<hmm::ObsSequence>& reference, const ot::SinkhornOptions& opts = {});

}  // namespace stochrnn::metrics
