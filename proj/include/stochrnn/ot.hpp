#pragma once

#include "stochrnn/numerics.hpp"

#include <cstddef>
#include <vector>

// Entropic optimal transport between weighted point clouds with the
// quadratic cost ½‖x − y‖².
namespace stochrnn::ot {

struct PointCloud {
    Matrix points;   // n × dim
    Vector weights;  // sums to 1

    static PointCloud uniform(Matrix points);
    std::size_t n() const noexcept { return points.rows(); }
    std::size_t dim() const noexcept { return points.cols(); }
    void validate() const;
};

struct SinkhornOptions {
    double eps = 0.05;
    std::size_t max_iters = 500;
    double tol = 1e-6;
};

struct SinkhornResult {
    double value = 0.0;  // ⟨Π, C⟩ + ε·KL(Π ‖ a⊗b)
    Vector f;
    Vector g;
    Matrix coupling;
    std::size_t iterations = 0;
    double marginal_error = 0.0;
    bool converged = false;
};

Matrix cost_matrix(const PointCloud& X, const PointCloud& Y);

// Log-domain Sinkhorn with ε-scaling: the blur starts at the largest cost and
// halves toward `opts.eps` (one symmetric update per stage) before plain
// alternating updates run to the marginal tolerance.
SinkhornResult ot_eps(const PointCloud& X, const PointCloud& Y, const SinkhornOptions& opts = {});
SinkhornResult ot_eps(const Matrix& cost, const Vector& a, const Vector& b, const SinkhornOptions& opts = {});

// S_ε(X,Y) = OT_ε(X,Y) − ½OT_ε(X,X) − ½OT_ε(Y,Y).
double sinkhorn_divergence(const PointCloud& X, const PointCloud& Y, const SinkhornOptions& opts = {});

struct DivergenceGradient {
    double value = 0.0;
    Matrix gradient;  // ∂S/∂X, n × dim
    bool converged = false;
};

// Envelope gradient: the converged plans are held fixed and only the cost is
// differentiated.
DivergenceGradient divergence_gradient(const PointCloud& X, const PointCloud& Y, const SinkhornOptions& opts = {});

// j*(i) = argmax_j Π_ij, ties to the smallest j.
std::vector<std::size_t> align(const PointCloud& X, const PointCloud& Y, const SinkhornOptions& opts = {});

}  // namespace stochrnn::ot
