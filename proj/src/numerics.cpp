#include "stochrnn/numerics.hpp"

#include "stochrnn/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace stochrnn {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) { return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())); }
MutMap view(Matrix& m) { return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())); }

std::string shape(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, Vector data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<Vector> v;
    for (const auto& r : rows) v.emplace_back(r);
    return from_rows(v);
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) return {};
    const std::size_t cols = rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) throw DimensionError("ragged rows in matrix literal");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Vector Matrix::row_vector(std::size_t r) const {
    auto s = row(r);
    return {s.begin(), s.end()};
}

Vector Matrix::col_vector(std::size_t c) const {
    Vector v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double Matrix::frobenius_norm() const noexcept { return norm2(data_); }

Matrix& Matrix::operator*=(double s) noexcept {
    for (auto& x : data_) x *= s;
    return *this;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    if (rows_ != other.rows_ || cols_ != other.cols_) throw DimensionError("matrix add " + shape(*this) + " + " + shape(other));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    if (rows_ != other.rows_ || cols_ != other.cols_) throw DimensionError("matrix sub " + shape(*this) + " - " + shape(other));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul " + shape(a) + " * " + shape(b));
    Matrix out(a.rows(), b.cols());
    if (out.empty() || a.cols() == 0) return out;
    view(out).noalias() = view(a) * view(b);
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw DimensionError("matmul_bt " + shape(a) + " * " + shape(b) + "^T");
    Matrix out(a.rows(), b.rows());
    if (out.empty() || a.cols() == 0) return out;
    view(out).noalias() = view(a) * view(b).transpose();
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw DimensionError("matmul_at " + shape(a) + "^T * " + shape(b));
    Matrix out(a.cols(), b.cols());
    if (out.empty() || a.rows() == 0) return out;
    view(out).noalias() = view(a).transpose() * view(b);
    return out;
}

Vector row_times_transpose(std::span<const double> x, const Matrix& m) {
    if (x.size() != m.cols()) throw DimensionError("vector of width " + std::to_string(x.size()) + " times (" + shape(m) + ")^T");
    Vector out(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(x, m.row(r));
    return out;
}

Vector row_times(std::span<const double> x, const Matrix& m) {
    if (x.size() != m.rows()) throw DimensionError("vector of width " + std::to_string(x.size()) + " times " + shape(m));
    Vector out(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) out[c] += xr * row[c];
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double mean(std::span<const double> a) {
    if (a.empty()) return 0.0;
    return std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
}

double stddev(std::span<const double> a) {
    if (a.size() < 2) return 0.0;
    const double m = mean(a);
    double ss = 0.0;
    for (double x : a) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(a.size() - 1));
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("pearson: series lengths differ");
    const double ma = mean(a), mb = mean(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DimensionError("linear_fit needs two equal-length series of at least 2 points");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw DimensionError("linear_fit: x has zero variance");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (fit.slope * x[i] + fit.intercept);
        ss_res += r * r;
    }
    fit.r2 = syy == 0.0 ? (ss_res == 0.0 ? 1.0 : 0.0) : 1.0 - ss_res / syy;
    return fit;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m.rows()) throw DimensionError("row index out of range");
        std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
    }
    return out;
}

// ---------------------------------------------------------------------------
// RngStream

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
    : seed_(seed), stream_id_(stream_id), key_(mix64(mix64(seed ^ 0x5851F42D4C957F2DULL) + mix64(stream_id + kGolden))) {}

RngStream RngStream::split(std::uint64_t child) const noexcept {
    return RngStream(seed_, mix64(stream_id_ * 0xD1342543DE82EF95ULL + mix64(child + 1)));
}

std::uint64_t RngStream::next_u64() noexcept {
    const std::uint64_t z = key_ + (counter_++) * kGolden;
    return mix64(mix64(z) ^ key_);
}

double RngStream::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform_open() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

double RngStream::gaussian(double sigma) noexcept {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::gumbel() noexcept { return -std::log(-std::log(uniform_open())); }

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

void validate_probability_vector(std::span<const double> p, double tol, const char* what) {
    if (p.empty()) throw ValidationError(std::string(what) + ": empty probability vector");
    double s = 0.0;
    for (double x : p) {
        if (!(x >= 0.0) || x > 1.0 + tol) throw ValidationError(std::string(what) + ": entry outside [0,1]");
        s += x;
    }
    if (std::abs(s - 1.0) > tol) {
        std::ostringstream os;
        os.precision(17);
        os << what << ": probabilities sum to " << s;
        throw ValidationError(os.str());
    }
}

std::size_t RngStream::categorical(std::span<const double> p) {
    validate_probability_vector(p, 1e-9, "categorical");
    const double u = uniform();
    double cum = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) last_positive = i;
        cum += p[i];
        if (u < cum && p[i] > 0.0) return i;
    }
    return last_positive;
}

Matrix draw(RngStream& stream, const Distribution& dist, std::size_t rows, std::size_t cols) {
    Matrix out(rows, cols);
    auto& v = out.values();
    std::visit(
        [&](const auto& d) {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, CategoricalDist>) {
                validate_probability_vector(d.p, 1e-9, "categorical");
            }
            for (auto& x : v) {
                if constexpr (std::is_same_v<D, GaussianDist>) {
                    x = stream.gaussian(d.sigma);
                } else if constexpr (std::is_same_v<D, GumbelDist>) {
                    x = stream.gumbel();
                } else if constexpr (std::is_same_v<D, UniformDist>) {
                    x = stream.uniform();
                } else {
                    x = static_cast<double>(stream.categorical(d.p));
                }
            }
        },
        dist);
    return out;
}

// ---------------------------------------------------------------------------
// Spectra

namespace {

bool modulus_order(const Complex& a, const Complex& b) {
    const double ma = std::abs(a), mb = std::abs(b);
    if (ma != mb) return ma > mb;
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
}

}  // namespace

EigenSystem eig(const Matrix& m, bool with_vectors) {
    if (!m.square()) throw DimensionError("eig needs a square matrix, got " + shape(m));
    if (!m.all_finite()) throw NumericError("eig: matrix has non-finite entries");
    EigenSystem out;
    const auto n = static_cast<Eigen::Index>(m.rows());
    if (n == 0) return out;
    Eigen::MatrixXd a = view(m);
    Eigen::EigenSolver<Eigen::MatrixXd> solver;
    constexpr Eigen::Index kIterationsPerRow = 40;
    solver.setMaxIterations(kIterationsPerRow * n);
    solver.compute(a, with_vectors);
    if (solver.info() != Eigen::Success) {
        throw NumericError("eig: shifted QR did not converge within " + std::to_string(kIterationsPerRow * n) + " iterations");
    }
    const auto& vals = solver.eigenvalues();
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return modulus_order(vals(static_cast<Eigen::Index>(i)), vals(static_cast<Eigen::Index>(j)));
    });
    for (auto i : order) out.values.push_back(vals(static_cast<Eigen::Index>(i)));
    if (with_vectors) {
        const auto vecs = solver.eigenvectors();
        for (auto i : order) {
            std::vector<Complex> col(static_cast<std::size_t>(n));
            for (Eigen::Index r = 0; r < n; ++r) col[static_cast<std::size_t>(r)] = vecs(r, static_cast<Eigen::Index>(i));
            out.vectors.push_back(std::move(col));
        }
    }
    return out;
}

std::vector<Complex> eigenvalues(const Matrix& m) { return eig(m, false).values; }

// ---------------------------------------------------------------------------
// PCA

PcaBasis pca_fit(const Matrix& data, std::size_t k) {
    const std::size_t n = data.rows(), width = data.cols();
    if (n < 2) throw DimensionError("pca_fit needs at least 2 samples");
    if (k == 0 || k > std::min(n, width)) {
        throw DimensionError("pca_fit: k=" + std::to_string(k) + " outside [1, " + std::to_string(std::min(n, width)) + "]");
    }
    PcaBasis basis;
    basis.mean.assign(width, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < width; ++c) basis.mean[c] += data(r, c);
    for (auto& x : basis.mean) x /= static_cast<double>(n);

    Eigen::MatrixXd centered = view(data);
    for (Eigen::Index c = 0; c < centered.cols(); ++c) centered.col(c).array() -= basis.mean[static_cast<std::size_t>(c)];
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericError("pca_fit: covariance eigendecomposition failed");

    basis.components = Matrix(k, width);
    basis.explained_variance.resize(k);
    const auto w = static_cast<Eigen::Index>(width);
    for (std::size_t i = 0; i < k; ++i) {
        const Eigen::Index col = w - 1 - static_cast<Eigen::Index>(i);
        basis.explained_variance[i] = std::max(0.0, solver.eigenvalues()(col));
        Eigen::VectorXd v = solver.eigenvectors().col(col);
        // Deterministic sign: largest-magnitude entry positive.
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        for (std::size_t c = 0; c < width; ++c) basis.components(i, c) = v(static_cast<Eigen::Index>(c));
    }
    return basis;
}

Matrix pca_project(const PcaBasis& basis, const Matrix& states) {
    if (states.cols() != basis.width()) {
        throw DimensionError("pca_project: state width " + std::to_string(states.cols()) + " != basis width " + std::to_string(basis.width()));
    }
    Matrix centered = states;
    for (std::size_t r = 0; r < centered.rows(); ++r)
        for (std::size_t c = 0; c < centered.cols(); ++c) centered(r, c) -= basis.mean[c];
    return matmul_bt(centered, basis.components);
}

Matrix pca_reconstruct(const PcaBasis& basis, const Matrix& coords) {
    if (coords.cols() != basis.rank()) throw DimensionError("pca_reconstruct: coordinate width does not match basis rank");
    Matrix out = matmul(coords, basis.components);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += basis.mean[c];
    return out;
}

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::zeros_like(std::span<const Matrix> params, double lr) {
    AdamState s;
    s.lr = lr;
    for (const auto& p : params) {
        s.first_moment.emplace_back(p.rows(), p.cols());
        s.second_moment.emplace_back(p.rows(), p.cols());
    }
    return s;
}

void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state, std::span<const std::string> names) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size() || params.size() != state.second_moment.size()) {
        throw DimensionError("adam_step: parameter, gradient and moment block counts differ");
    }
    auto block_name = [&](std::size_t i) { return i < names.size() ? names[i] : "block " + std::to_string(i); };
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        const auto& g = grads[i];
        if (p.rows() != g.rows() || p.cols() != g.cols() || p.rows() != state.first_moment[i].rows() ||
            p.cols() != state.first_moment[i].cols() || p.rows() != state.second_moment[i].rows() ||
            p.cols() != state.second_moment[i].cols()) {
            throw DimensionError("adam_step: shape mismatch in " + block_name(i));
        }
        if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient in " + block_name(i));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].values();
        const auto& g = grads[i].values();
        auto& m = state.first_moment[i].values();
        auto& v = state.second_moment[i].values();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p[j] -= state.lr * (m_hat / (std::sqrt(v_hat) + state.eps));
        }
    }
}

}  // namespace stochrnn
