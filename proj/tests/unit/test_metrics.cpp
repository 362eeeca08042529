#include "stochrnn/error.hpp"
#include "stochrnn/metrics.hpp"

#include <doctest.h>

#include <cmath>

using namespace stochrnn;
using namespace stochrnn::metrics;

namespace {

hmm::ObsSequence seq(std::vector<int> o) {
    hmm::ObsSequence s;
    s.observations = std::move(o);
    return s;
}

}  // namespace

TEST_CASE("empirical transition oracles") {
    const auto c = empirical_transition({seq({0, 0, 0, 0})});
    CHECK(c.defined == std::vector<bool>{true, false, false});
    CHECK(c.values(0, 0) == 1.0);
    CHECK(c.values(0, 1) == 0.0);
    CHECK(c.to_json()[1].is_null());

    const auto cyc = empirical_transition({seq({0, 1, 2, 0, 1, 2, 0})});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(cyc.values(i, j) == (j == (i + 1) % 3 ? 1.0 : 0.0));

    // Pooled over sequences, no transition across sequence boundaries.
    const auto pooled = empirical_transition({seq({0, 0}), seq({1, 0})});
    CHECK(pooled.values(0, 0) == 1.0);
    CHECK(pooled.values(1, 0) == 1.0);
    CHECK_FALSE(pooled.defined[2]);
}

TEST_CASE("transition rows sum to one and match the pair oracle") {
    const auto spec = hmm::build_linear_chain(2);
    RngStream s(11);
    std::vector<hmm::ObsSequence> seqs;
    for (int i = 0; i < 1000; ++i) seqs.push_back(hmm::sample(spec, 1000, s).obs);
    const auto t = empirical_transition(seqs);
    const Matrix oracle = hmm::obs_pair_matrix(spec);
    for (std::size_t i = 0; i < 3; ++i) {
        if (!t.defined[i]) continue;
        double row = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            row += t.values(i, j);
            CHECK(std::abs(t.values(i, j) - oracle(i, j)) < 0.01);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-15));
    }
    const auto f = observation_frequencies(seqs);
    CHECK(std::abs(f[0] - 0.495) < 0.005);
    CHECK(std::abs(f[1] - 0.01) < 0.005);
    CHECK(std::abs(f[2] - 0.495) < 0.005);
    CHECK(std::abs(volatility(seqs) - hmm::obs_volatility(spec)) < 0.005);
}

TEST_CASE("squared difference") {
    TransitionMatrix a{Matrix(3, 3), {true, true, false}}, b{Matrix(3, 3), {true, true, true}};
    CHECK(max_defined(transition_sq_diff(a, a)) == 0.0);
    b.values(0, 1) = 0.1;
    b.values(2, 2) = 0.9;  // undefined in a, must not count
    const auto d = transition_sq_diff(a, b);
    CHECK(d.values(0, 1) == doctest::Approx(0.01));
    CHECK_FALSE(d.defined[2]);
    CHECK(max_defined(d) == doctest::Approx(0.01));
}

TEST_CASE("frequencies and volatility") {
    const auto f = observation_frequencies({seq({2, 2, 2})});
    CHECK(f == Vector{0.0, 0.0, 1.0});
    CHECK(volatility({seq({2, 2, 2})}) == 0.0);
    CHECK(volatility({seq({0, 1, 0, 1, 0})}) == 1.0);
    CHECK(volatility({seq({0, 0}), seq({0, 1})}) == 0.5);
}

TEST_CASE("metrics ignore sequence order") {
    std::vector<hmm::ObsSequence> a{seq({0, 1, 1, 2}), seq({2, 2, 0, 0}), seq({1, 0, 2, 2})};
    std::vector<hmm::ObsSequence> b{a[2], a[0], a[1]};
    CHECK(empirical_transition(a).values == empirical_transition(b).values);
    CHECK(observation_frequencies(a) == observation_frequencies(b));
    CHECK(volatility(a) == volatility(b));
}

TEST_CASE("aligned euclidean") {
    std::vector<hmm::ObsSequence> a{seq({0, 1, 2, 0}), seq({2, 2, 1, 0}), seq({1, 1, 1, 1})};
    const auto same = aligned_euclidean(a, a, {1e-3, 2000, 1e-9});
    CHECK(same.mean == doctest::Approx(0.0).epsilon(1e-12));

    const auto one = aligned_euclidean({seq({0, 1, 2})}, {seq({0, 1, 1})}, {1e-3, 2000, 1e-9});
    CHECK(one.mean == doctest::Approx(std::sqrt(2.0)));

    CHECK_THROWS_AS(aligned_euclidean({seq({0, 1})}, {seq({0, 1, 2})}), DimensionError);

    const auto spec = hmm::build_linear_chain(2);
    RngStream s(2);
    std::vector<hmm::ObsSequence> ref, model;
    for (int i = 0; i < 40; ++i) ref.push_back(hmm::sample(spec, 50, s).obs);
    for (int i = 0; i < 20; ++i) model.push_back(hmm::sample(spec, 50, s).obs);
    const auto rep = evaluate(model, spec, ref, {0.5, 500, 1e-6});
    CHECK(rep.aligned.baseline.mean > 0.0);
    CHECK(rep.volatility_hmm == doctest::Approx(hmm::obs_volatility(spec)));
    const auto j = rep.to_json();
    CHECK(j["transition"].contains("sq_diff_max"));
}
