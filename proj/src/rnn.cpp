#include "stochrnn/rnn.hpp"

#include "stochrnn/error.hpp"

#include <algorithm>
#include <cmath>

namespace stochrnn::rnn {

void RnnParams::validate() const {
    if (H == 0 || d == 0) throw DimensionError("network needs H >= 1 and d >= 1");
    if (W_hh.rows() != H || W_hh.cols() != H) throw DimensionError("W_hh must be H x H");
    if (W_ih.rows() != H || W_ih.cols() != d) throw DimensionError("W_ih must be H x d");
    if (A.rows() != kOutputs || A.cols() != H) throw DimensionError("A must be 3 x H");
    for (std::size_t i = 0; i < 3; ++i) {
        if (!blocks()[i]->all_finite()) throw NumericError(kBlockNames[i] + " has non-finite entries");
    }
}

RnnParams init_params(std::size_t H, std::size_t d, RngStream& stream) {
    if (H == 0 || d == 0) throw ParameterError("init_params needs H >= 1 and d >= 1");
    const double bound = std::sqrt(1.0 / static_cast<double>(H));
    auto fill = [&](std::size_t r, std::size_t c) {
        Matrix m(r, c);
        for (auto& x : m.values()) x = stream.uniform(-bound, bound);
        return m;
    };
    RnnParams p;
    p.H = H;
    p.d = d;
    p.W_hh = fill(H, H);
    p.W_ih = fill(H, d);
    p.A = fill(kOutputs, H);
    return p;
}

StepResult step(const RnnParams& p, std::span<const double> h_prev, std::span<const double> x) {
    if (h_prev.size() != p.H) throw DimensionError("step: state width " + std::to_string(h_prev.size()) + " != H");
    if (x.size() != p.d) throw DimensionError("step: input width " + std::to_string(x.size()) + " != d");
    StepResult out;
    out.z = row_times_transpose(h_prev, p.W_hh);
    const Vector drive = row_times_transpose(x, p.W_ih);
    out.h.resize(p.H);
    for (std::size_t i = 0; i < p.H; ++i) {
        out.z[i] += drive[i];
        out.h[i] = std::max(0.0, out.z[i]);
    }
    return out;
}

Vector readout(const RnnParams& p, std::span<const double> h) {
    if (h.size() != p.H) throw DimensionError("readout: state width " + std::to_string(h.size()) + " != H");
    return row_times_transpose(h, p.A);
}

namespace {

void softmax_into(std::span<const double> logits, double tau, std::span<const double> gumbel, std::span<double> out) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out[k] = (logits[k] + (gumbel.empty() ? 0.0 : gumbel[k])) / tau;
        mx = std::max(mx, out[k]);
    }
    double s = 0.0;
    for (auto& v : out) {
        v = std::exp(v - mx);
        s += v;
    }
    for (auto& v : out) v /= s;
}

}  // namespace

Vector gumbel_softmax(std::span<const double> logits, double tau, std::span<const double> gumbel) {
    if (!(tau > 0.0)) throw ParameterError("gumbel_softmax: temperature must be > 0");
    if (!gumbel.empty() && gumbel.size() != logits.size()) throw DimensionError("gumbel_softmax: noise width != logit width");
    Vector out(logits.size());
    softmax_into(logits, tau, gumbel, out);
    return out;
}

std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

BatchRollout rollout_batch(const RnnParams& p, std::size_t length, std::span<RngStream> input_streams, double sigma,
                           const Matrix& h0, double tau, std::span<RngStream> gumbel_streams) {
    if (length == 0) throw ParameterError("rollout length must be >= 1");
    if (!(tau > 0.0)) throw ParameterError("rollout: temperature must be > 0");
    const std::size_t B = h0.rows();
    if (h0.cols() != p.H) throw DimensionError("rollout: h0 width != H");
    if (!input_streams.empty() && input_streams.size() != B) throw DimensionError("rollout: one input stream per batch member");
    if (!gumbel_streams.empty() && gumbel_streams.size() != B) throw DimensionError("rollout: one Gumbel stream per batch member");

    BatchRollout r;
    r.batch = B;
    r.tau = tau;
    r.h0 = h0;
    r.inputs.reserve(length);
    r.z.reserve(length);
    r.h.reserve(length);
    r.logits.reserve(length);
    r.soft.reserve(length);
    if (!gumbel_streams.empty()) r.gumbel.reserve(length);

    const Matrix* prev = &h0;
    for (std::size_t t = 0; t < length; ++t) {
        Matrix x(B, p.d);
        if (!input_streams.empty()) {
            for (std::size_t b = 0; b < B; ++b)
                for (auto& v : x.row(b)) v = input_streams[b].gaussian(sigma);
        }
        Matrix z = matmul_bt(*prev, p.W_hh);
        if (!input_streams.empty()) z += matmul_bt(x, p.W_ih);
        Matrix h(B, p.H);
        for (std::size_t i = 0; i < z.size(); ++i) h.values()[i] = std::max(0.0, z.values()[i]);
        Matrix y = matmul_bt(h, p.A);
        Matrix soft(B, kOutputs);
        if (!gumbel_streams.empty()) {
            Matrix g(B, kOutputs);
            for (std::size_t b = 0; b < B; ++b) {
                for (auto& v : g.row(b)) v = gumbel_streams[b].gumbel();
                softmax_into(y.row(b), tau, g.row(b), soft.row(b));
            }
            r.gumbel.push_back(std::move(g));
        } else {
            for (std::size_t b = 0; b < B; ++b) softmax_into(y.row(b), tau, {}, soft.row(b));
        }
        r.inputs.push_back(std::move(x));
        r.z.push_back(std::move(z));
        r.h.push_back(std::move(h));
        r.logits.push_back(std::move(y));
        r.soft.push_back(std::move(soft));
        prev = &r.h.back();
    }
    return r;
}

Rollout rollout(const RnnParams& p, std::size_t length, const InputSource& input, std::span<const double> h0, double tau,
                RngStream* gumbel_stream) {
    p.validate();
    Matrix h0m(1, p.H);
    if (!h0.empty()) {
        if (h0.size() != p.H) throw DimensionError("rollout: h0 width != H");
        std::copy(h0.begin(), h0.end(), h0m.row(0).begin());
    }
    double sigma = 0.0;
    std::span<RngStream> inputs;
    if (const auto* g = std::get_if<GaussianInput>(&input)) {
        if (g->stream == nullptr) throw ParameterError("gaussian input source needs a stream");
        sigma = g->sigma;
        inputs = {g->stream, 1};
    }
    std::span<RngStream> gumbels;
    if (gumbel_stream != nullptr) gumbels = {gumbel_stream, 1};
    const BatchRollout b = rollout_batch(p, length, inputs, sigma, h0m, tau, gumbels);

    Rollout r;
    r.h0 = h0m.row_vector(0);
    r.tau = tau;
    r.inputs = Matrix(length, p.d);
    r.z = Matrix(length, p.H);
    r.h = Matrix(length, p.H);
    r.logits = Matrix(length, kOutputs);
    r.soft = Matrix(length, kOutputs);
    if (gumbel_stream != nullptr) r.gumbel = Matrix(length, kOutputs);
    for (std::size_t t = 0; t < length; ++t) {
        std::copy(b.inputs[t].data(), b.inputs[t].data() + p.d, r.inputs.row(t).begin());
        std::copy(b.z[t].data(), b.z[t].data() + p.H, r.z.row(t).begin());
        std::copy(b.h[t].data(), b.h[t].data() + p.H, r.h.row(t).begin());
        std::copy(b.logits[t].data(), b.logits[t].data() + kOutputs, r.logits.row(t).begin());
        std::copy(b.soft[t].data(), b.soft[t].data() + kOutputs, r.soft.row(t).begin());
        if (gumbel_stream != nullptr) std::copy(b.gumbel[t].data(), b.gumbel[t].data() + kOutputs, r.gumbel.row(t).begin());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Gradients

Gradients Gradients::zeros_like(const RnnParams& p) {
    return {Matrix(p.H, p.H), Matrix(p.H, p.d), Matrix(kOutputs, p.H)};
}

double Gradients::norm() const {
    double s = 0.0;
    for (const auto* b : blocks())
        for (double x : b->values()) s += x * x;
    return std::sqrt(s);
}

Gradients& Gradients::operator+=(const Gradients& other) {
    dW_hh += other.dW_hh;
    dW_ih += other.dW_ih;
    dA += other.dA;
    return *this;
}

Gradients& Gradients::operator*=(double s) {
    dW_hh *= s;
    dW_ih *= s;
    dA *= s;
    return *this;
}

Gradients bptt_batch(const RnnParams& p, const BatchRollout& r, std::span<const Matrix> dL_dsoft) {
    const std::size_t T = r.length();
    if (r.z.size() != T || T == 0) throw StateError("bptt: rollout is missing stored pre-activations");
    if (r.gumbel.size() != T) throw StateError("bptt: rollout is missing stored Gumbel draws");
    if (dL_dsoft.size() != T) throw DimensionError("bptt: need one output gradient per step");
    const std::size_t B = r.batch;
    const double inv_tau = 1.0 / r.tau;

    Gradients g = Gradients::zeros_like(p);
    Matrix dz_next;  // dL/dz_{t+1}, B × H
    for (std::size_t t = T; t-- > 0;) {
        const Matrix& s = r.soft[t];
        const Matrix& ds = dL_dsoft[t];
        if (ds.rows() != B || ds.cols() != kOutputs) throw DimensionError("bptt: output gradient must be B x 3");
        // Softmax Jacobian: dy = (1/τ)·s ⊙ (ds − ⟨ds, s⟩).
        Matrix dy(B, kOutputs);
        for (std::size_t b = 0; b < B; ++b) {
            const double inner = dot(ds.row(b), s.row(b));
            for (std::size_t k = 0; k < kOutputs; ++k) dy(b, k) = inv_tau * s(b, k) * (ds(b, k) - inner);
        }
        g.dA += matmul_at(dy, r.h[t]);
        Matrix dh = matmul(dy, p.A);
        if (!dz_next.empty()) dh += matmul(dz_next, p.W_hh);
        const Matrix& z = r.z[t];
        for (std::size_t i = 0; i < dh.size(); ++i)
            if (!(z.values()[i] > 0.0)) dh.values()[i] = 0.0;
        const Matrix& h_prev = t > 0 ? r.h[t - 1] : r.h0;
        g.dW_hh += matmul_at(dh, h_prev);
        g.dW_ih += matmul_at(dh, r.inputs[t]);
        dz_next = std::move(dh);
    }
    return g;
}

Gradients bptt(const RnnParams& p, const Rollout& r, const Matrix& dL_dsoft, double tau) {
    const std::size_t T = r.length();
    if (r.z.rows() != T || r.z.cols() != p.H || T == 0) throw StateError("bptt: rollout is missing stored pre-activations");
    if (r.gumbel.rows() != T) throw StateError("bptt: rollout is missing stored Gumbel draws");
    if (dL_dsoft.rows() != T || dL_dsoft.cols() != kOutputs) throw DimensionError("bptt: dL_dsoft must be T x 3");
    BatchRollout b;
    b.batch = 1;
    b.tau = tau;
    b.h0 = Matrix(1, p.H, r.h0.empty() ? Vector(p.H, 0.0) : r.h0);
    std::vector<Matrix> grads;
    for (std::size_t t = 0; t < T; ++t) {
        b.inputs.emplace_back(1, p.d, r.inputs.row_vector(t));
        b.z.emplace_back(1, p.H, r.z.row_vector(t));
        b.h.emplace_back(1, p.H, r.h.row_vector(t));
        b.logits.emplace_back(1, kOutputs, r.logits.row_vector(t));
        b.gumbel.emplace_back(1, kOutputs, r.gumbel.row_vector(t));
        b.soft.emplace_back(1, kOutputs, r.soft.row_vector(t));
        grads.emplace_back(1, kOutputs, dL_dsoft.row_vector(t));
    }
    return bptt_batch(p, b, grads);
}

Gradients clip_grad_norm(Gradients g, double max_norm) {
    if (!(max_norm > 0.0)) throw ParameterError("clip_grad_norm: max_norm must be > 0");
    const double n = g.norm();
    if (n > max_norm) g *= max_norm / n;
    return g;
}

std::vector<hmm::ObsSequence> emit_sequences(const RnnParams& p, std::size_t n, std::size_t length, std::size_t burn_in,
                                             double sigma, const RngStream& stream) {
    p.validate();
    constexpr std::size_t kChunk = 256;
    std::vector<hmm::ObsSequence> out;
    out.reserve(n);
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t B = std::min(kChunk, n - start);
        std::vector<RngStream> inputs, gumbels;
        for (std::size_t b = 0; b < B; ++b) {
            const RngStream s = stream.split(start + b);
            inputs.push_back(s.split(0));
            gumbels.push_back(s.split(1));
        }
        const BatchRollout r = rollout_batch(p, burn_in + length, inputs, sigma, Matrix(B, p.H), 1.0, gumbels);
        for (std::size_t b = 0; b < B; ++b) {
            hmm::ObsSequence seq;
            seq.K = kOutputs;
            seq.observations.reserve(length);
            for (std::size_t t = burn_in; t < burn_in + length; ++t) {
                double best = -INFINITY;
                int arg = 0;
                for (std::size_t k = 0; k < kOutputs; ++k) {
                    const double v = r.logits[t](b, k) + r.gumbel[t](b, k);
                    if (v > best) {
                        best = v;
                        arg = static_cast<int>(k);
                    }
                }
                seq.observations.push_back(arg);
            }
            out.push_back(std::move(seq));
        }
    }
    return out;
}

}  // namespace stochrnn::rnn
