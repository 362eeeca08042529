#include "stochrnn/hmm.hpp"

#include "stochrnn/error.hpp"
#include "stochrnn/io.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace stochrnn::hmm {

namespace {

constexpr double kRowTol = 1e-12;

void check_row_stochastic(const Matrix& m, const char* what) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double s = 0.0;
        for (double x : m.row(r)) {
            if (!(x >= 0.0 && x <= 1.0)) {
                throw ValidationError(std::string(what) + " row " + std::to_string(r) + " has an entry outside [0,1]");
            }
            s += x;
        }
        if (std::abs(s - 1.0) > kRowTol) {
            std::ostringstream os;
            os.precision(17);
            os << what << " row " << r << " sums to " << s;
            throw ValidationError(os.str());
        }
    }
}

// A chain is primitive iff T^k > 0 for k = (M−1)² + 1 (Wielandt).
bool is_primitive(const Matrix& T) {
    const std::size_t m = T.rows();
    Matrix pattern(m, m);
    for (std::size_t i = 0; i < T.size(); ++i) pattern.values()[i] = T.values()[i] > 0.0 ? 1.0 : 0.0;
    Matrix power = pattern;
    const std::size_t bound = (m - 1) * (m - 1) + 1;
    for (std::size_t k = 1; k < bound; ++k) {
        power = matmul(power, pattern);
        for (auto& x : power.values()) x = x > 0.0 ? 1.0 : 0.0;
    }
    return std::all_of(power.values().begin(), power.values().end(), [](double x) { return x > 0.0; });
}

}  // namespace

void HmmSpec::validate() const {
    if (M == 0 || K == 0) throw ValidationError("HMM needs at least one state and one symbol");
    if (T.rows() != M || T.cols() != M) throw ValidationError("transition matrix must be M x M");
    if (E.rows() != M || E.cols() != K) throw ValidationError("emission matrix must be M x K");
    if (pi0.size() != M) throw ValidationError("initial distribution must have M entries");
    check_row_stochastic(T, "transition matrix");
    check_row_stochastic(E, "emission matrix");
    validate_probability_vector(pi0, kRowTol, "initial distribution");
}

Matrix ObsSequence::one_hot() const {
    Matrix m(observations.size(), K);
    for (std::size_t t = 0; t < observations.size(); ++t) m(t, static_cast<std::size_t>(observations[t])) = 1.0;
    return m;
}

HmmSpec build_linear_chain(std::size_t M, double rho, double eps) {
    if (M < 2) throw ParameterError("linear chain needs M >= 2");
    if (!(rho > 0.0 && rho < 1.0)) throw ParameterError("rho must lie in (0, 1)");
    if (!(eps > 0.0 && eps < 1.0)) throw ParameterError("eps must lie in (0, 1)");
    const double q = std::pow(rho, 1.0 / static_cast<double>(M - 1));
    if (!(q < 0.5)) {
        std::ostringstream os;
        os << "neighbour probability q = " << q << " must be < 1/2 for M = " << M;
        throw ParameterError(os.str());
    }
    HmmSpec spec;
    spec.M = M;
    spec.K = 3;
    spec.T = Matrix(M, M);
    spec.E = Matrix(M, 3);
    for (std::size_t i = 0; i < M; ++i) {
        const bool end = i == 0 || i == M - 1;
        spec.T(i, i) = end ? 1.0 - q : 1.0 - 2.0 * q;
        if (i > 0) spec.T(i, i - 1) = q;
        if (i + 1 < M) spec.T(i, i + 1) = q;
        const double alpha = static_cast<double>(i) / static_cast<double>(M - 1);
        spec.E(i, 0) = (1.0 - eps) * (1.0 - alpha);
        spec.E(i, 1) = eps;
        spec.E(i, 2) = (1.0 - eps) * alpha;
    }
    spec.pi0.assign(M, 1.0 / static_cast<double>(M));
    spec.validate();
    return spec;
}

HmmSpec build_preset(Preset kind) {
    HmmSpec spec;
    spec.K = 3;
    if (kind == Preset::fully_connected) {
        spec.M = 3;
        spec.T = Matrix(3, 3, 0.05);
        spec.E = Matrix(3, 3, 0.05);
        for (std::size_t i = 0; i < 3; ++i) {
            spec.T(i, i) = 0.90;
            spec.E(i, i) = 0.90;
        }
    } else {
        // Ring 0-1-2-3-0. Each state emits a dominant/weak output pair; the
        // pairs {0,1}, {1,2}, {2,0}, {2,1} give every adjacent pair one shared output.
        spec.M = 4;
        spec.T = Matrix(4, 4);
        for (std::size_t i = 0; i < 4; ++i) {
            spec.T(i, i) = 0.90;
            spec.T(i, (i + 1) % 4) = 0.05;
            spec.T(i, (i + 3) % 4) = 0.05;
        }
        constexpr int pairs[4][2] = {{0, 1}, {1, 2}, {2, 0}, {2, 1}};
        spec.E = Matrix(4, 3, 0.01);
        for (std::size_t i = 0; i < 4; ++i) {
            spec.E(i, static_cast<std::size_t>(pairs[i][0])) = 0.70;
            spec.E(i, static_cast<std::size_t>(pairs[i][1])) = 0.29;
        }
    }
    spec.pi0.assign(spec.M, 1.0 / static_cast<double>(spec.M));
    spec.validate();
    return spec;
}

Sample sample(const HmmSpec& spec, std::size_t len, RngStream& stream) {
    if (len == 0) throw ParameterError("sample length must be >= 1");
    Sample out;
    out.obs.K = spec.K;
    out.states.reserve(len);
    out.obs.observations.reserve(len);
    auto state = stream.categorical(spec.pi0);
    for (std::size_t t = 0; t < len; ++t) {
        if (t > 0) state = stream.categorical(spec.T.row(state));
        out.states.push_back(static_cast<int>(state));
        out.obs.observations.push_back(static_cast<int>(stream.categorical(spec.E.row(state))));
    }
    return out;
}

Vector stationary_distribution(const HmmSpec& spec) {
    spec.validate();
    if (!is_primitive(spec.T)) throw StructureError("transition matrix is reducible or periodic; no unique stationary distribution");
    const auto m = static_cast<Eigen::Index>(spec.M);
    // Solve (Tᵀ − I)π = 0 with the last equation replaced by Σπ = 1.
    Eigen::MatrixXd a(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            a(i, j) = spec.T(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) - (i == j ? 1.0 : 0.0);
    a.row(m - 1).setOnes();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
    b(m - 1) = 1.0;
    Eigen::VectorXd pi = a.fullPivLu().solve(b);
    // One step of refinement against the chain itself.
    Vector out(spec.M);
    double s = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        out[static_cast<std::size_t>(i)] = std::max(0.0, pi(i));
        s += out[static_cast<std::size_t>(i)];
    }
    for (auto& x : out) x /= s;
    return out;
}

Vector obs_frequencies(const HmmSpec& spec) { return row_times(stationary_distribution(spec), spec.E); }

Matrix obs_pair_matrix(const HmmSpec& spec) {
    const Vector pi = stationary_distribution(spec);
    const std::size_t K = spec.K, M = spec.M;
    Matrix joint(K, K);
    for (std::size_t s = 0; s < M; ++s)
        for (std::size_t s2 = 0; s2 < M; ++s2) {
            const double w = pi[s] * spec.T(s, s2);
            if (w == 0.0) continue;
            for (std::size_t i = 0; i < K; ++i)
                for (std::size_t j = 0; j < K; ++j) joint(i, j) += w * spec.E(s, i) * spec.E(s2, j);
        }
    Matrix out(K, K);
    for (std::size_t i = 0; i < K; ++i) {
        double marginal = 0.0;
        for (std::size_t s = 0; s < M; ++s) marginal += pi[s] * spec.E(s, i);
        if (marginal <= 0.0) throw DataError("observation " + std::to_string(i) + " has zero stationary probability; pair row undefined");
        double row_sum = 0.0;
        for (std::size_t j = 0; j < K; ++j) row_sum += joint(i, j);
        // Divide by the row's own sum so it is normalised to rounding.
        for (std::size_t j = 0; j < K; ++j) out(i, j) = joint(i, j) / row_sum;
    }
    return out;
}

double obs_volatility(const HmmSpec& spec) {
    const Vector pi = stationary_distribution(spec);
    double same = 0.0;
    for (std::size_t s = 0; s < spec.M; ++s)
        for (std::size_t s2 = 0; s2 < spec.M; ++s2)
            for (std::size_t i = 0; i < spec.K; ++i) same += pi[s] * spec.T(s, s2) * spec.E(s, i) * spec.E(s2, i);
    return std::clamp(1.0 - same, 0.0, 1.0);
}

std::string to_json(const HmmSpec& spec) {
    io::Json j;
    j["M"] = spec.M;
    j["K"] = spec.K;
    j["T"] = io::to_json(spec.T);
    j["E"] = io::to_json(spec.E);
    j["pi0"] = spec.pi0;
    return io::dump_json(j);
}

HmmSpec from_json(const std::string& text) {
    io::Json j;
    try {
        j = io::Json::parse(text);
    } catch (const io::Json::parse_error& e) {
        throw FormatError(std::string("HMM spec is not valid JSON: ") + e.what());
    }
    for (const char* key : {"M", "K", "T", "E", "pi0"}) {
        if (!j.contains(key)) throw FormatError(std::string("HMM spec missing key \"") + key + "\"");
    }
    HmmSpec spec;
    spec.M = j.at("M").get<std::size_t>();
    spec.K = j.at("K").get<std::size_t>();
    spec.T = io::matrix_from_json(j.at("T"));
    spec.E = io::matrix_from_json(j.at("E"));
    spec.pi0 = j.at("pi0").get<Vector>();
    spec.validate();
    return spec;
}

}  // namespace stochrnn::hmm
