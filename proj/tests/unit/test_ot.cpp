#include "stochrnn/error.hpp"
#include "stochrnn/ot.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace stochrnn;
using namespace stochrnn::ot;

namespace {

PointCloud cloud(std::size_t n, std::size_t dim, RngStream& s, double scale = 1.0) {
    Matrix m(n, dim);
    for (auto& x : m.values()) x = scale * s.gaussian();
    return PointCloud::uniform(std::move(m));
}

// Exact assignment optimum by enumerating all permutations.
double brute_assignment(const Matrix& c) {
    std::vector<std::size_t> perm(c.rows());
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
        double v = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) v += c(i, perm[i]);
        best = std::min(best, v / static_cast<double>(perm.size()));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

const SinkhornOptions kTight{0.05, 5000, 1e-12};

}  // namespace

TEST_CASE("cost_matrix") {
    const auto x = PointCloud::uniform(Matrix::from_rows({{0.0}}));
    CHECK(cost_matrix(x, x) == Matrix::from_rows({{0.0}}));
    const auto y = PointCloud::uniform(Matrix::from_rows({{2.0}}));
    CHECK(cost_matrix(x, y)(0, 0) == 2.0);
    RngStream s(1);
    const auto a = cloud(4, 3, s), b = cloud(5, 3, s);
    CHECK(cost_matrix(a, b) == cost_matrix(b, a).transposed());
    CHECK_THROWS_AS(cost_matrix(a, cloud(2, 2, s)), DimensionError);
}

TEST_CASE("ot_eps on single atoms and self-transport") {
    const auto x = PointCloud::uniform(Matrix::from_rows({{0.0, 1.0}}));
    const auto y = PointCloud::uniform(Matrix::from_rows({{2.0, -1.0}}));
    const auto r = ot_eps(x, y);
    CHECK(r.value == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(r.converged);

    RngStream s(2);
    const auto c = cloud(5, 2, s);
    double prev = INFINITY;
    for (double eps : {1.0, 0.1, 0.01}) {
        const auto self = ot_eps(c, c, {eps, 5000, 1e-12});
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(self.coupling(i, j) - self.coupling(j, i)) < 1e-9);
        CHECK(self.value < prev);
        prev = self.value;
    }
    CHECK(prev < 0.05);
    CHECK_THROWS_AS(ot_eps(c, c, {0.0, 10, 1e-6}), ParameterError);
}

TEST_CASE("ot_eps coupling respects the marginals") {
    RngStream s(3);
    const auto a = cloud(6, 3, s), b = cloud(4, 3, s);
    const auto r = ot_eps(a, b, {0.1, 2000, 1e-10});
    REQUIRE(r.converged);
    for (std::size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (double p : r.coupling.row(i)) {
            CHECK(p >= 0.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0 / 6.0) < 1e-10);
    }
}

TEST_CASE("entropic value approaches the assignment optimum monotonically") {
    RngStream s(4);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 4);
        const auto a = cloud(n, 2, s), b = cloud(n, 2, s);
        const double exact = brute_assignment(cost_matrix(a, b));
        double prev = INFINITY;
        for (double eps : {1.0, 0.1, 0.01, 0.001}) {
            const double gap = std::abs(ot_eps(a, b, {eps, 20000, 1e-12}).value - exact);
            CHECK(gap < prev);
            prev = gap;
        }
    }
}

TEST_CASE("sinkhorn divergence identities") {
    RngStream s(5);
    const auto a = cloud(5, 3, s), b = cloud(6, 3, s);
    CHECK(std::abs(sinkhorn_divergence(a, a, kTight)) < 1e-9);
    const auto x = PointCloud::uniform(Matrix::from_rows({{0.0}}));
    const auto y = PointCloud::uniform(Matrix::from_rows({{2.0}}));
    CHECK(sinkhorn_divergence(x, y) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(sinkhorn_divergence(a, b, kTight) - sinkhorn_divergence(b, a, kTight)) < 1e-9);

    for (int trial = 0; trial < 20; ++trial) {
        const auto p = cloud(1 + trial % 5, 2, s), q = cloud(1 + trial % 3, 2, s, 0.5);
        CHECK(sinkhorn_divergence(p, q, kTight) >= -1e-9);
        PointCloud pt = p, qt = q;
        const double shift[2] = {s.gaussian(3.0), s.gaussian(3.0)};
        for (std::size_t i = 0; i < pt.n(); ++i)
            for (std::size_t k = 0; k < 2; ++k) pt.points(i, k) += shift[k];
        for (std::size_t i = 0; i < qt.n(); ++i)
            for (std::size_t k = 0; k < 2; ++k) qt.points(i, k) += shift[k];
        CHECK(std::abs(sinkhorn_divergence(pt, qt, kTight) - sinkhorn_divergence(p, q, kTight)) < 1e-9);
    }
}

TEST_CASE("divergence gradient") {
    const auto x = PointCloud::uniform(Matrix::from_rows({{0.0}}));
    const auto y = PointCloud::uniform(Matrix::from_rows({{2.0}}));
    CHECK(divergence_gradient(x, y).gradient(0, 0) == doctest::Approx(-2.0).epsilon(1e-12));

    RngStream s(6);
    const auto a = cloud(5, 3, s);
    const auto self = divergence_gradient(a, a, kTight);
    for (double v : self.gradient.values()) CHECK(std::abs(v) < 1e-6);

    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 5), m = 1 + static_cast<std::size_t>(trial % 6);
        const std::size_t dim = 1 + static_cast<std::size_t>(trial % 4);
        const SinkhornOptions opts{0.5, 20000, 1e-13};
        const auto X = cloud(n, dim, s), Y = cloud(m, dim, s);
        const auto g = divergence_gradient(X, Y, opts);
        INFO("trial " << trial);
        REQUIRE(g.converged);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < n * dim; ++i) {
            constexpr double h = 1e-5;
            PointCloud plus = X, minus = X;
            plus.points.values()[i] += h;
            minus.points.values()[i] -= h;
            const double fd = (sinkhorn_divergence(plus, Y, opts) - sinkhorn_divergence(minus, Y, opts)) / (2 * h);
            num += (fd - g.gradient.values()[i]) * (fd - g.gradient.values()[i]);
            den += fd * fd;
        }
        CHECK(std::sqrt(num / den) < 1e-4);
    }
}

TEST_CASE("align") {
    const auto x = PointCloud::uniform(Matrix::from_rows({{0.0, 0.0}, {3.0, 0.0}, {0.0, 3.0}, {3.0, 3.0}}));
    const auto id = align(x, x, {0.01, 500, 1e-9});
    CHECK(id == std::vector<std::size_t>{0, 1, 2, 3});

    // Clusters around (0,0) and (10,10); the pairing never crosses clusters.
    const auto a = PointCloud::uniform(Matrix::from_rows({{0.1, 0.0}, {10.0, 10.2}, {-0.1, 0.1}, {9.9, 10.0}}));
    const auto b = PointCloud::uniform(Matrix::from_rows({{10.1, 9.9}, {0.0, 0.2}, {10.0, 10.1}, {0.2, -0.1}}));
    const auto pairs = align(a, b, {0.01, 2000, 1e-9});
    for (std::size_t i = 0; i < 4; ++i) CHECK((a.points(i, 0) > 5.0) == (b.points(pairs[i], 0) > 5.0));

    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    Matrix shuffled(4, 2);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 2; ++k) shuffled(j, k) = x.points(perm[j], k);
    const auto moved = align(x, PointCloud::uniform(shuffled), {0.01, 500, 1e-9});
    for (std::size_t i = 0; i < 4; ++i) CHECK(perm[moved[i]] == id[i]);
}
