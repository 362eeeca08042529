#include "stochrnn/ot.hpp"

#include "stochrnn/error.hpp"

#include <algorithm>
#include <cmath>

namespace stochrnn::ot {

PointCloud PointCloud::uniform(Matrix points) {
    if (points.rows() == 0) throw DimensionError("point cloud needs at least one point");
    PointCloud c;
    c.weights.assign(points.rows(), 1.0 / static_cast<double>(points.rows()));
    c.points = std::move(points);
    return c;
}

void PointCloud::validate() const {
    if (n() == 0) throw DimensionError("point cloud needs at least one point");
    if (weights.size() != n()) throw DimensionError("point cloud needs one weight per point");
    validate_probability_vector(weights, 1e-9, "point cloud weights");
}

Matrix cost_matrix(const PointCloud& X, const PointCloud& Y) {
    if (X.dim() != Y.dim()) {
        throw DimensionError("cost_matrix: dims " + std::to_string(X.dim()) + " and " + std::to_string(Y.dim()) + " differ");
    }
    Matrix c(X.n(), Y.n());
    for (std::size_t i = 0; i < X.n(); ++i) {
        const auto x = X.points.row(i);
        for (std::size_t j = 0; j < Y.n(); ++j) {
            const auto y = Y.points.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < x.size(); ++k) {
                const double diff = x[k] - y[k];
                s += diff * diff;
            }
            c(i, j) = 0.5 * s;
        }
    }
    return c;
}

namespace {

// out_i = −ε log Σ_j w_j exp((pot_j − C_ij)/ε) over the rows of `cost`.
void softmin(const Matrix& cost, const Vector& log_w, const Vector& pot, double eps, Vector& out) {
    const std::size_t n = cost.rows(), m = cost.cols();
    Vector shifted(m), terms(m);
    const double inv = 1.0 / eps;
    for (std::size_t j = 0; j < m; ++j) shifted[j] = log_w[j] + pot[j] * inv;
    for (std::size_t i = 0; i < n; ++i) {
        const double* c = cost.data() + i * m;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < m; ++j) {
            terms[j] = shifted[j] - c[j] * inv;
            mx = std::max(mx, terms[j]);
        }
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += std::exp(terms[j] - mx);
        out[i] = -eps * (mx + std::log(s));
    }
}

Vector logs(const Vector& w) {
    Vector out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = std::log(w[i]);
    return out;
}

bool self_transport(const Matrix& cost, const Vector& a, const Vector& b) {
    if (cost.rows() != cost.cols() || a != b) return false;
    for (std::size_t i = 0; i < cost.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (cost(i, j) != cost(j, i)) return false;
    return true;
}

SinkhornResult finish(const Matrix& cost, const Vector& a, const Vector& b, double eps, SinkhornResult r);

}  // namespace

SinkhornResult ot_eps(const Matrix& cost, const Vector& a, const Vector& b, const SinkhornOptions& opts) {
    if (!(opts.eps > 0.0)) throw ParameterError("ot_eps: blur must be > 0");
    if (opts.max_iters == 0) throw ParameterError("ot_eps: max_iters must be >= 1");
    const std::size_t n = cost.rows(), m = cost.cols();
    if (n == 0 || m == 0) throw DimensionError("ot_eps: empty point cloud");
    if (a.size() != n || b.size() != m) throw DimensionError("ot_eps: weights do not match the cost matrix");
    if (!cost.all_finite()) throw NumericError("ot_eps: non-finite cost");

    SinkhornResult r;
    r.f.assign(n, 0.0);
    r.g.assign(m, 0.0);
    Vector f_new(n), g_new(m);
    const Vector log_a = logs(a), log_b = logs(b);
    const Matrix cost_t = cost.transposed();

    double cmax = 0.0;
    for (double c : cost.values()) cmax = std::max(cmax, c);
    // Annealing stages: symmetric (averaged) updates keep the pair balanced.
    for (double e = cmax; e > opts.eps; e *= 0.5) {
        softmin(cost, log_b, r.g, e, f_new);
        softmin(cost_t, log_a, r.f, e, g_new);
        for (std::size_t i = 0; i < n; ++i) r.f[i] = 0.5 * (r.f[i] + f_new[i]);
        for (std::size_t j = 0; j < m; ++j) r.g[j] = 0.5 * (r.g[j] + g_new[j]);
    }

    const double eps = opts.eps;
    r.marginal_error = INFINITY;
    if (self_transport(cost, a, b)) {
        // One potential: f ← ½(f + softmin(f)); the plan stays exactly symmetric.
        for (std::size_t i = 0; i < n; ++i) r.f[i] = 0.5 * (r.f[i] + r.g[i]);
        for (std::size_t it = 1; it <= opts.max_iters; ++it) {
            r.iterations = it;
            softmin(cost, log_a, r.f, eps, f_new);
            double err = 0.0;
            for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(a[i] * std::expm1((r.f[i] - f_new[i]) / eps)));
            r.marginal_error = err;
            if (err <= opts.tol) {
                r.converged = true;
                break;
            }
            for (std::size_t i = 0; i < n; ++i) r.f[i] = 0.5 * (r.f[i] + f_new[i]);
        }
        r.g = r.f;
        return finish(cost, a, b, eps, std::move(r));
    }
    softmin(cost_t, log_a, r.f, eps, r.g);
    for (std::size_t it = 1; it <= opts.max_iters; ++it) {
        r.iterations = it;
        softmin(cost, log_b, r.g, eps, f_new);
        // Columns are exact after the g update; the row sums of the current
        // plan are a_i·exp((f_i − f_new_i)/ε).
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(a[i] * std::expm1((r.f[i] - f_new[i]) / eps)));
        r.marginal_error = err;
        if (err <= opts.tol) {
            r.converged = true;
            break;
        }
        r.f = f_new;
        softmin(cost_t, log_a, r.f, eps, r.g);
    }

    return finish(cost, a, b, eps, std::move(r));
}

namespace {

SinkhornResult finish(const Matrix& cost, const Vector& a, const Vector& b, double eps, SinkhornResult r) {
    const std::size_t n = cost.rows(), m = cost.cols();
    r.coupling = Matrix(n, m);
    double value = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double p = a[i] * b[j] * std::exp((r.f[i] + r.g[j] - cost(i, j)) / eps);
            r.coupling(i, j) = p;
            // Π·log(Π/ab) = Π·(f + g − C)/ε, so the primal value is Σ Π (f + g).
            value += p * (r.f[i] + r.g[j]);
        }
    r.value = value;
    if (!std::isfinite(r.value)) throw NumericError("ot_eps: non-finite transport value");
    return r;
}

}  // namespace

SinkhornResult ot_eps(const PointCloud& X, const PointCloud& Y, const SinkhornOptions& opts) {
    X.validate();
    Y.validate();
    return ot_eps(cost_matrix(X, Y), X.weights, Y.weights, opts);
}

double sinkhorn_divergence(const PointCloud& X, const PointCloud& Y, const SinkhornOptions& opts) {
    const double xy = ot_eps(X, Y, opts).value;
    const double xx = ot_eps(X, X, opts).value;
    const double yy = ot_eps(Y, Y, opts).value;
    return xy - 0.5 * xx - 0.5 * yy;
}

DivergenceGradient divergence_gradient(const PointCloud& X, const PointCloud& Y, const SinkhornOptions& opts) {
    const SinkhornResult xy = ot_eps(X, Y, opts);
    const SinkhornResult xx = ot_eps(X, X, opts);
    const SinkhornResult yy = ot_eps(Y, Y, opts);
    DivergenceGradient out;
    out.value = xy.value - 0.5 * xx.value - 0.5 * yy.value;
    out.converged = xy.converged && xx.converged && yy.converged;

    const std::size_t n = X.n(), m = Y.n(), dim = X.dim();
    out.gradient = Matrix(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        auto gi = out.gradient.row(i);
        const auto xi = X.points.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double p = xy.coupling(i, j);
            const auto yj = Y.points.row(j);
            for (std::size_t k = 0; k < dim; ++k) gi[k] += p * (xi[k] - yj[k]);
        }
        // X appears in both slots of OT(X,X).
        for (std::size_t j = 0; j < n; ++j) {
            const double p = 0.5 * (xx.coupling(i, j) + xx.coupling(j, i));
            const auto xj = X.points.row(j);
            for (std::size_t k = 0; k < dim; ++k) gi[k] -= p * (xi[k] - xj[k]);
        }
    }
    return out;
}

std::vector<std::size_t> align(const PointCloud& X, const PointCloud& Y, const SinkhornOptions& opts) {
    const SinkhornResult r = ot_eps(X, Y, opts);
    std::vector<std::size_t> pairing(X.n());
    for (std::size_t i = 0; i < X.n(); ++i) pairing[i] = static_cast<std::size_t>(
        std::max_element(r.coupling.row(i).begin(), r.coupling.row(i).end()) - r.coupling.row(i).begin());
    return pairing;
}

}  // namespace stochrnn::ot
