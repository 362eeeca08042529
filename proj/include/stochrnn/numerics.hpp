#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace stochrnn {

using Vector = std::vector<double>;
using Complex = std::complex<double>;

// Dense row-major matrix of 64-bit reals.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, Vector data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix from_rows(const std::vector<Vector>& rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    bool square() const noexcept { return rows_ == cols_; }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }
    Vector row_vector(std::size_t r) const;
    Vector col_vector(std::size_t c) const;

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    const Vector& values() const noexcept { return data_; }
    Vector& values() noexcept { return data_; }

    Matrix transposed() const;
    bool all_finite() const noexcept;
    double frobenius_norm() const noexcept;

    Matrix& operator*=(double s) noexcept;
    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vector data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

// a · b
Matrix matmul(const Matrix& a, const Matrix& b);
// a · bᵀ
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// aᵀ · b
Matrix matmul_at(const Matrix& a, const Matrix& b);
// x · mᵀ for a row vector x (length m.cols()); the model's row-vector convention.
Vector row_times_transpose(std::span<const double> x, const Matrix& m);
// x · m for a row vector x (length m.rows()).
Vector row_times(std::span<const double> x, const Matrix& m);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double mean(std::span<const double> a);
// Sample standard deviation (n − 1); zero for fewer than two values.
double stddev(std::span<const double> a);
double pearson(std::span<const double> a, std::span<const double> b);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

// Ordinary least squares y ≈ slope·x + intercept. r2 is 1 when y is constant
// and exactly fitted.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);

// ---------------------------------------------------------------------------
// Random streams

// Counter-based generator: draw k of stream (seed, id) is a keyed 64-bit mix of
// k, so any stream can be replayed from its counter and split without sharing
// state. Not thread-safe; split one stream per unit of work.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept;

    RngStream split(std::uint64_t child) const noexcept;

    std::uint64_t next_u64() noexcept;
    double uniform() noexcept;       // [0, 1)
    double uniform_open() noexcept;  // (0, 1)
    double uniform(double lo, double hi) noexcept;
    double gaussian(double sigma = 1.0) noexcept;
    double gumbel() noexcept;
    std::size_t categorical(std::span<const double> p);
    std::uint64_t below(std::uint64_t n) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }
    std::uint64_t counter() const noexcept { return counter_; }
    void set_counter(std::uint64_t c) noexcept { counter_ = c; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

struct GaussianDist {
    double sigma = 1.0;
};
struct GumbelDist {};
struct UniformDist {};
struct CategoricalDist {
    Vector p;
};
using Distribution = std::variant<GaussianDist, GumbelDist, UniformDist, CategoricalDist>;

// Fills a rows × cols matrix in row-major order. Categorical draws are stored
// as the index value.
Matrix draw(RngStream& stream, const Distribution& dist, std::size_t rows, std::size_t cols);

void validate_probability_vector(std::span<const double> p, double tol, const char* what);

template <class T>
void shuffle(std::vector<T>& v, RngStream& stream) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(stream.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

// ---------------------------------------------------------------------------
// Spectra

struct EigenSystem {
    std::vector<Complex> values;                // descending modulus
    std::vector<std::vector<Complex>> vectors;  // right eigenvectors, vectors[i] ↔ values[i]
};

EigenSystem eig(const Matrix& m, bool with_vectors = false);
std::vector<Complex> eigenvalues(const Matrix& m);

// ---------------------------------------------------------------------------
// PCA

struct PcaBasis {
    Vector mean;
    Matrix components;  // k × width, orthonormal rows
    Vector explained_variance;

    std::size_t width() const noexcept { return mean.size(); }
    std::size_t rank() const noexcept { return components.rows(); }
};

PcaBasis pca_fit(const Matrix& data, std::size_t k);
Matrix pca_project(const PcaBasis& basis, const Matrix& states);
Matrix pca_reconstruct(const PcaBasis& basis, const Matrix& coords);

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::uint64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState zeros_like(std::span<const Matrix> params, double lr = 1e-3);
};

// Bias-corrected Adam update applied in place. `names` labels the parameter
// blocks in error messages and may be empty.
void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state,
               std::span<const std::string> names = {});

}  // namespace stochrnn
