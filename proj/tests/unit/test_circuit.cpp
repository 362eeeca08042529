#include "stochrnn/circuit.hpp"
#include "stochrnn/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace stochrnn;
using namespace stochrnn::circuit;
using dynamics::Zone;

namespace {

rnn::RnnParams zeros(std::size_t H, std::size_t d) {
    rnn::RnnParams p;
    p.H = H;
    p.d = d;
    p.W_hh = Matrix(H, H);
    p.W_ih = Matrix(H, d);
    p.A = Matrix(3, H);
    return p;
}

rnn::RnnParams random_params(std::size_t H, std::size_t d, std::uint64_t seed) {
    RngStream s(seed);
    return rnn::init_params(H, d, s);
}

// Three neurons; cluster samples of logit 0 and 2 plus transitions leaving 0.
dynamics::ZoneMap three_neuron_map(bool gap) {
    dynamics::ZoneMap zm;
    zm.z = Matrix(30, 3);
    for (std::size_t s = 0; s < 30; ++s) {
        if (s < 10) {
            zm.labels.push_back(Zone::cluster);
            zm.dominant.push_back(0);
        } else if (s < 20) {
            zm.labels.push_back(Zone::cluster);
            zm.dominant.push_back(2);
        } else {
            zm.labels.push_back(Zone::transition);
            zm.dominant.push_back(0);
        }
        const double wiggle = (s % 2 ? 0.1 : -0.1);
        zm.z(s, 0) = 1.0 + wiggle;
        zm.z(s, 2) = -1.0 + wiggle;
        zm.z(s, 1) = wiggle + (gap ? (s < 10 ? -3.0 : (s >= 20 ? 3.0 : 0.0)) : 0.0);
    }
    zm.residency.assign(30, 1.0);
    return zm;
}

}  // namespace

TEST_CASE("kick detection on a hand-built gating pattern") {
    const Vector dh2{0.1, 1.0, 0.2};
    const auto g = detect_kick_neurons(three_neuron_map(true), dh2, {1.0, 0.34});
    REQUIRE(g.kicks.size() == 1);
    CHECK(g.kicks[0].source == 0);
    CHECK(g.kicks[0].neurons == Group{1});
    CHECK(g.residual == Group{0, 2});

    const auto none = detect_kick_neurons(three_neuron_map(false), dh2, {1.0, 1.0});
    CHECK(none.kicks.empty());

    // Gap present but the neuron is not among the top |dh2| components.
    const auto off = detect_kick_neurons(three_neuron_map(true), Vector{1.0, 0.0, 0.5}, {1.0, 0.34});
    CHECK(off.kicks.empty());
}

TEST_CASE("population detection") {
    NeuronGroups g;
    g.kicks = {{0, {0, 1}}, {2, {2, 3}}};
    auto p = zeros(12, 1);
    CHECK(detect_populations(p, g).populations.empty());

    for (std::size_t n : {4, 5}) {
        for (std::size_t j : {0, 1}) p.W_hh(j, n) = 1.0;
        for (std::size_t j : {2, 3}) p.W_hh(j, n) = -1.0;
    }
    for (std::size_t n : {6, 7}) {
        for (std::size_t j : {0, 1}) p.W_hh(j, n) = -1.0;
        for (std::size_t j : {2, 3}) p.W_hh(j, n) = 1.0;
    }
    const auto found = detect_populations(p, g);
    REQUIRE(found.populations.size() == 2);
    CHECK(found.populations[0] == Group{4, 5});
    CHECK(found.populations[1] == Group{6, 7});
    CHECK(found.residual == Group{8, 9, 10, 11});
    CHECK(std::isnan(found.scores[0]));
    CHECK(found.scores[4] == 4.0);

    NeuronGroups one;
    one.kicks = {{0, {0}}};
    CHECK_THROWS_AS(detect_populations(p, one), StructureError);
}

TEST_CASE("connectivity blocks") {
    auto p = zeros(4, 1);
    for (std::size_t i = 0; i < 4; ++i) p.W_hh(i, i) = 1.0;
    NeuronGroups g;
    g.kicks = {{0, {0}}, {2, {1}}};
    g.populations = {{2}, {3}};
    const auto r = connectivity_report(p, g);
    CHECK(r.kick_block(0, 0) == 1.0);
    CHECK(r.kick_block(0, 1) == 0.0);
    CHECK(r.kick_stats.within == 1.0);
    CHECK(r.kick_stats.cross == 0.0);
    CHECK(r.population_to_kick.size() == 4);

    // Constant blocks: +0.5 within, −0.25 across.
    auto q = zeros(6, 1);
    const std::vector<Group> blocks{{0, 1, 2}, {3, 4, 5}};
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b)
            for (auto i : blocks[a])
                for (auto j : blocks[b]) q.W_hh(i, j) = a == b ? 0.5 : -0.25;
    const auto st = block_stats(q.W_hh, blocks);
    CHECK(st.within == 0.5);
    CHECK(st.cross == -0.25);
    const auto sorted = connectivity_report(random_params(6, 1, 3), NeuronGroups{{{0, {0, 1}}, {2, {2}}}, {{3, 4}, {5}}, {}, 0, 0, {}});
    for (std::size_t i = 1; i < sorted.population_to_kick.size(); ++i)
        CHECK(sorted.population_to_kick[i - 1].weight >= sorted.population_to_kick[i].weight);
}

TEST_CASE("identity intervention reproduces the rollout bit for bit") {
    const auto p = random_params(10, 3, 5);
    RngStream in(9);
    const auto ref = rnn::rollout(p, 200, rnn::GaussianInput{1.0, &in}, {}, 1.0, nullptr);
    for (auto mode : {Mode::activity, Mode::noise_drive}) {
        InterventionSpec s;
        s.horizon = 200;
        s.modulations = {{{0, 3, 7}, mode, 1.0}};
        const auto r = intervene(p, s, RngStream(9));
        CHECK(r.h == ref.h);
        CHECK(r.z == ref.z);
        CHECK(r.logits == ref.logits);
    }
}

TEST_CASE("full silencing and spec validation") {
    const auto p = random_params(6, 2, 6);
    InterventionSpec s;
    s.horizon = 20;
    s.modulations = {{{0, 1, 2, 3, 4, 5}, Mode::activity, 0.0}};
    const auto r = intervene(p, s, RngStream(1));
    for (double v : r.h.values()) CHECK(v == 0.0);
    CHECK(r.transition_count == 0);

    s.modulations = {{{0, 1}, Mode::activity, 0.0}, {{1, 2}, Mode::noise_drive, 0.0}};
    CHECK_THROWS_AS(intervene(p, s, RngStream(1)), ValidationError);
    s.modulations = {{{0}, Mode::activity, std::nan("")}};
    CHECK_THROWS_AS(intervene(p, s, RngStream(1)), ValidationError);
    s.modulations = {{{6}, Mode::activity, 1.0}};
    CHECK_THROWS_AS(intervene(p, s, RngStream(1)), ValidationError);
}

TEST_CASE("amplified activity stops at divergence") {
    auto p = random_params(4, 2, 8);
    InterventionSpec s;
    s.horizon = 400;
    const auto base = intervene(p, s, RngStream(3));
    CHECK_FALSE(base.diverged_at);
    CHECK(base.steps() == 400);

    // W_hh = I with every unit doubled: ‖h‖ at least doubles once it is nonzero.
    p.W_hh = Matrix(4, 4);
    for (std::size_t i = 0; i < 4; ++i) p.W_hh(i, i) = 1.0;
    s.modulations = {{{0, 1, 2, 3}, Mode::activity, 2.0}};
    const auto r = intervene(p, s, RngStream(3));
    REQUIRE(r.diverged_at);
    CHECK(*r.diverged_at < 60);
    CHECK(r.steps() == *r.diverged_at);
    CHECK(r.z.rows() == r.steps());
    CHECK(r.h.rows() == r.steps());
    for (double v : r.h.values()) CHECK(std::isfinite(v));
}

TEST_CASE("intervention direction counts") {
    const auto p = random_params(8, 2, 7);
    InterventionSpec s;
    s.horizon = 500;
    const auto r = intervene(p, s, RngStream(2));
    double total = 0.0;
    for (double v : r.direction_counts.values()) total += v;
    CHECK(total == static_cast<double>(r.transition_count));
    CHECK(r.visited.size() == r.transition_count + 1);
    std::size_t from = 0;
    for (std::size_t k = 0; k < 3; ++k) from += r.transitions_from(k);
    CHECK(from == r.transition_count);
}

TEST_CASE("critical pair counting") {
    const double th = 0.7;
    auto p = zeros(4, 1);
    p.W_hh(0, 0) = std::cos(th);
    p.W_hh(0, 1) = -std::sin(th);
    p.W_hh(1, 0) = std::sin(th);
    p.W_hh(1, 1) = std::cos(th);
    Matrix z(1, 4);
    for (auto& v : z.values()) v = 1.0;
    CHECK(critical_pairs(p, z, {}, 0.0).mean == 1.0);

    auto half = zeros(3, 1);
    for (std::size_t i = 0; i < 3; ++i) half.W_hh(i, i) = 0.5;
    Matrix z3(2, 3);
    for (auto& v : z3.values()) v = 1.0;
    const auto pc = critical_pairs(half, z3, {}, 0.05);
    CHECK(pc.mean == 0.0);
    CHECK(pc.states == 2);

    std::vector<Complex> spec{Complex(0.2, 0.99), Complex(0.2, -0.99), Complex(1.0, 0.0), Complex(0, 2)};
    const auto n = count_critical_pairs(spec, 0.05);
    std::reverse(spec.begin(), spec.end());
    CHECK(count_critical_pairs(spec, 0.05) == n);
    spec[2] = std::conj(spec[2]);
    spec[3] = std::conj(spec[3]);
    CHECK(count_critical_pairs(spec, 0.05) == n);
    CHECK(n == 1);

    // Silencing one rotation neuron removes the pair.
    const Vector scale{0.0, 1.0, 1.0, 1.0};
    CHECK(critical_pairs(p, z, scale, 0.05).mean == 0.0);
}

TEST_CASE("oscillation traces and correlation") {
    Vector a, b;
    for (int t = 0; t < 200; ++t) {
        a.push_back(std::sin(0.1 * t));
        b.push_back(-std::sin(0.1 * t));
    }
    CHECK(pearson(a, b) == doctest::Approx(-1.0));
    CHECK(pearson(a, a) == doctest::Approx(1.0));

    const auto p = random_params(8, 2, 8);
    NeuronGroups g{{{0, {0}}, {2, {1}}}, {{2, 3}, {4, 5}}, {6, 7}, 0, 0, {}};
    const auto tr = oscillation_traces(p, 100, g, 1.0, RngStream(3));
    CHECK(tr.series.size() == 4);
    CHECK(tr.band.size() == 100);
    CHECK(std::isfinite(tr.population_correlation));
    CHECK(tr.csv().rfind("t,band,kick_0,kick_2,population_0,population_1\n", 0) == 0);
}

TEST_CASE("readout alignment") {
    auto p = zeros(4, 1);
    PcaBasis b;
    b.mean = Vector(4, 0.0);
    b.components = Matrix(2, 4);
    b.components(0, 0) = 1.0;
    b.components(1, 1) = 1.0;
    p.A(0, 0) = 3.0;
    p.A(0, 1) = 4.0;  // in plane
    p.A(1, 2) = 1.0;  // orthogonal
    const auto al = readout_alignment(p, b);
    CHECK(al.values[0] == doctest::Approx(1.0));
    CHECK(al.values[1] == 0.0);
    CHECK_FALSE(al.defined[2]);
    CHECK(al.mean == doctest::Approx(0.5));

    RngStream s(4);
    auto q = random_params(4, 1, 9);
    const auto before = readout_alignment(q, b);
    for (auto& v : q.A.values()) v *= 7.5;
    const auto after = readout_alignment(q, b);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(after.values[i] == doctest::Approx(before.values[i]));
        CHECK(after.values[i] >= 0.0);
        CHECK(after.values[i] <= 1.0);
    }
}

TEST_CASE("control sets and intervention table") {
    NeuronGroups g;
    g.residual = {3, 5, 8, 9, 11};
    const auto c = control_set(g, 3, RngStream(1));
    CHECK(c.size() == 3);
    for (auto i : c) CHECK(std::find(g.residual.begin(), g.residual.end(), i) != g.residual.end());
    CHECK(control_set(g, 3, RngStream(1)) == c);
    CHECK_THROWS_AS(control_set(g, 6, RngStream(1)), StructureError);

    const std::string csv = interventions_csv({{0.0, "kick_0", Mode::activity, 3, {1.5, 0.5, 0.05, 10}}});
    CHECK(csv == "mu,target,mode,transition_count,critical_pairs_mean,critical_pairs_sd\n0.0,kick_0,activity,3,1.5,0.5\n");
}
