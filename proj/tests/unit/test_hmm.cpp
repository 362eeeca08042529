#include "stochrnn/error.hpp"
#include "stochrnn/hmm.hpp"

#include <doctest.h>

#include <cmath>

using namespace stochrnn;
using namespace stochrnn::hmm;

namespace {

void check_stochastic(const Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double s = 0.0;
        for (double x : m.row(r)) s += x;
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

HmmSpec single_state(Vector emission) {
    HmmSpec s;
    s.M = 1;
    s.K = emission.size();
    s.T = Matrix(1, 1, 1.0);
    s.E = Matrix(1, s.K, emission);
    s.pi0 = {1.0};
    return s;
}

}  // namespace

TEST_CASE("linear chain M=2 matches the closed form") {
    const auto s = build_linear_chain(2);
    CHECK(s.T == Matrix::from_rows({{0.95, 0.05}, {0.05, 0.95}}));
    const Matrix E = Matrix::from_rows({{0.99, 0.01, 0.0}, {0.0, 0.01, 0.99}});
    for (std::size_t i = 0; i < 6; ++i) CHECK(s.E.values()[i] == doctest::Approx(E.values()[i]).epsilon(1e-15));
    CHECK(s.pi0 == Vector{0.5, 0.5});
}

TEST_CASE("linear chain M=5 interior rows") {
    const auto s = build_linear_chain(5);
    const double q = std::pow(0.05, 0.25);
    CHECK(s.T(2, 2) == doctest::Approx(1.0 - 2.0 * q).epsilon(1e-15));
    CHECK(s.E(2, 0) == doctest::Approx(0.495).epsilon(1e-15));
    CHECK(s.E(2, 1) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(s.E(2, 2) == doctest::Approx(0.495).epsilon(1e-15));
    CHECK_THROWS_AS(build_linear_chain(3, 1.0), ParameterError);
    CHECK_THROWS_AS(build_linear_chain(1), ParameterError);
    // ρ large enough that q ≥ ½.
    CHECK_THROWS_AS(build_linear_chain(3, 0.3), ParameterError);
}

TEST_CASE("linear chain design property q^(M-1) = rho") {
    for (std::size_t M = 2; M <= 5; ++M) {
        const auto s = build_linear_chain(M);
        CHECK(std::pow(s.T(0, 1), static_cast<double>(M - 1)) == doctest::Approx(0.05).epsilon(1e-12));
        check_stochastic(s.T);
        check_stochastic(s.E);
    }
}

TEST_CASE("presets satisfy their structural constraints") {
    const auto fc = build_preset(Preset::fully_connected);
    for (double x : fc.T.values()) CHECK(x > 0.0);
    std::vector<bool> seen(3, false);
    for (std::size_t i = 0; i < 3; ++i) {
        std::size_t arg = 0;
        for (std::size_t k = 1; k < 3; ++k)
            if (fc.E(i, k) > fc.E(i, arg)) arg = k;
        seen[arg] = true;
    }
    CHECK((seen[0] && seen[1] && seen[2]));

    const auto cy = build_preset(Preset::cyclic);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            const bool ring = j == i || j == (i + 1) % 4 || j == (i + 3) % 4;
            if (!ring) CHECK(cy.T(i, j) == 0.0);
        }
    // Adjacent states share a dominant-or-weak output.
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t j = (i + 1) % 4;
        bool shared = false;
        for (std::size_t k = 0; k < 3; ++k) shared = shared || (cy.E(i, k) > 0.2 && cy.E(j, k) > 0.2);
        CHECK(shared);
    }
    for (const auto* s : {&fc, &cy}) {
        check_stochastic(s->T);
        check_stochastic(s->E);
    }
}

TEST_CASE("sample: absorbing, deterministic emission, reproducibility") {
    HmmSpec s;
    s.M = 2;
    s.K = 3;
    s.T = Matrix::identity(2);
    s.E = Matrix::from_rows({{0, 0, 1}, {0, 0, 1}});
    s.pi0 = {0.0, 1.0};
    RngStream r(1);
    const auto out = sample(s, 50, r);
    for (int st : out.states) CHECK(st == 1);
    for (int o : out.obs.observations) CHECK(o == 2);

    const auto chain = build_linear_chain(3);
    RngStream a(9, 1), b(9, 1);
    CHECK(sample(chain, 200, a).obs.observations == sample(chain, 200, b).obs.observations);
    CHECK_THROWS_AS(sample(chain, 0, a), ParameterError);
}

TEST_CASE("sample: empirical transitions approach T") {
    const auto s = build_linear_chain(2);
    RngStream r(2);
    const auto out = sample(s, 1000000, r);
    Matrix counts(2, 2);
    for (std::size_t t = 1; t < out.states.size(); ++t) counts(out.states[t - 1], out.states[t]) += 1.0;
    for (std::size_t i = 0; i < 2; ++i) {
        const double n = counts(i, 0) + counts(i, 1);
        for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(counts(i, j) / n - s.T(i, j)) < 0.005);
    }
}

TEST_CASE("stationary distribution") {
    const auto pi2 = stationary_distribution(build_linear_chain(2));
    CHECK(pi2[0] == doctest::Approx(0.5).epsilon(1e-14));
    auto id = build_linear_chain(2);
    id.T = Matrix::identity(2);
    CHECK_THROWS_AS(stationary_distribution(id), StructureError);

    const auto s5 = build_linear_chain(5);
    const auto pi = stationary_distribution(s5);
    const auto piT = row_times(pi, s5.T);
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(piT[i] - pi[i]) <= 1e-12);

    HmmSpec periodic = build_linear_chain(2);
    periodic.T = Matrix::from_rows({{0, 1}, {1, 0}});
    CHECK_THROWS_AS(stationary_distribution(periodic), StructureError);
}

TEST_CASE("observation statistics of the M=2 chain") {
    const auto s = build_linear_chain(2);
    const auto pair = obs_pair_matrix(s);
    CHECK(pair(0, 0) == doctest::Approx(0.9405).epsilon(1e-12));
    CHECK(pair(0, 1) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(pair(0, 2) == doctest::Approx(0.0495).epsilon(1e-12));
    check_stochastic(pair);
    const auto f = obs_frequencies(s);
    CHECK(f[0] == doctest::Approx(0.495).epsilon(1e-12));
    CHECK(f[1] == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(obs_volatility(s) == doctest::Approx(0.0689).epsilon(1e-3));
}

TEST_CASE("observation statistics of degenerate specs") {
    const auto one = single_state({0.2, 0.3, 0.5});
    const auto pair = obs_pair_matrix(one);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(pair(i, j) == doctest::Approx(one.E(0, j)).epsilon(1e-12));
    CHECK(obs_volatility(single_state({1.0, 0.0, 0.0})) == 0.0);
    CHECK_THROWS_AS(obs_pair_matrix(single_state({1.0, 0.0, 0.0})), DataError);
}

TEST_CASE("simulated statistics agree with the analytic oracles") {
    for (const auto& s : {build_linear_chain(2), build_linear_chain(4), build_preset(Preset::fully_connected),
                          build_preset(Preset::cyclic)}) {
        RngStream r(17);
        const auto out = sample(s, 1000000, r);
        const auto& o = out.obs.observations;
        Vector freq(3, 0.0);
        Matrix pairs(3, 3);
        for (std::size_t t = 0; t < o.size(); ++t) {
            freq[o[t]] += 1.0 / static_cast<double>(o.size());
            if (t > 0) pairs(o[t - 1], o[t]) += 1.0;
        }
        const auto f = obs_frequencies(s);
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(freq[k] - f[k]) < 0.005);
        const auto p = obs_pair_matrix(s);
        for (std::size_t i = 0; i < 3; ++i) {
            double n = 0.0;
            for (std::size_t j = 0; j < 3; ++j) n += pairs(i, j);
            for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(pairs(i, j) / n - p(i, j)) < 0.01);
        }
    }
}

TEST_CASE("HmmSpec JSON round trip") {
    const auto s = build_linear_chain(5);
    const auto back = from_json(to_json(s));
    CHECK(back.T == s.T);
    CHECK(back.E == s.E);
    CHECK(back.pi0 == s.pi0);
    CHECK_THROWS_AS(from_json("{\"M\": 2}"), FormatError);
    CHECK_THROWS_AS(from_json("not json"), FormatError);
    auto broken = s;
    broken.T(0, 0) += 0.1;
    CHECK_THROWS_AS(broken.validate(), ValidationError);
}
