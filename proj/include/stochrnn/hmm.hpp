#pragma once

#include "stochrnn/numerics.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace stochrnn::hmm {

// Hidden Markov model with M latent states and K observation symbols.
// Indices are 0-based; reports shift to 1-based when printed for people.
struct HmmSpec {
    std::size_t M = 0;
    std::size_t K = 3;
    Matrix T;    // M × M, row-stochastic
    Matrix E;    // M × K, row-stochastic
    Vector pi0;  // initial distribution over states

    // Throws ValidationError when any row leaves the simplex (tolerance 1e-12).
    void validate() const;
};

struct ObsSequence {
    std::size_t K = 3;
    std::vector<int> observations;

    std::size_t length() const noexcept { return observations.size(); }
    Matrix one_hot() const;
};

struct Sample {
    std::vector<int> states;
    ObsSequence obs;
};

enum class Preset { fully_connected, cyclic };

HmmSpec build_linear_chain(std::size_t M, double rho = 0.05, double eps = 0.01);
HmmSpec build_preset(Preset kind);

Sample sample(const HmmSpec& spec, std::size_t len, RngStream& stream);

// Left Perron vector of T. Requires a primitive chain (some power of T
// strictly positive); throws StructureError otherwise.
Vector stationary_distribution(const HmmSpec& spec);

// P(o_{t+1} = j | o_t = i) under stationarity. Throws DataError naming the
// first row whose symbol has zero stationary probability.
Matrix obs_pair_matrix(const HmmSpec& spec);

// πᵀE
Vector obs_frequencies(const HmmSpec& spec);
// 1 − Σ_i P(o_t = i, o_{t+1} = i)
double obs_volatility(const HmmSpec& spec);

std::string to_json(const HmmSpec& spec);
HmmSpec from_json(const std::string& text);

}  // namespace stochrnn::hmm
