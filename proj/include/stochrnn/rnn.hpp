#pragma once

#include "stochrnn/hmm.hpp"
#include "stochrnn/numerics.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

// Vanilla ReLU recurrent network with a linear three-logit readout.
//
// Row-vector convention throughout: h_t = ReLU(h_{t−1}·W_hhᵀ + x_t·W_ihᵀ),
// y_t = h_t·Aᵀ. Perturbations propagate as δh_t = δh_{t−1}·J_t with
// J_t = W_hhᵀ·D_t, D_t = diag(1[z_t > 0]).
namespace stochrnn::rnn {

inline constexpr std::size_t kOutputs = 3;

struct RnnParams {
    std::size_t H = 0;
    std::size_t d = 0;
    Matrix W_hh;  // H × H
    Matrix W_ih;  // H × d
    Matrix A;     // 3 × H

    void validate() const;
    std::array<const Matrix*, 3> blocks() const { return {&W_hh, &W_ih, &A}; }
    friend bool operator==(const RnnParams&, const RnnParams&) = default;
};

inline const std::array<std::string, 3> kBlockNames = {"W_hh", "W_ih", "A"};

// Entries i.i.d. uniform on (−1/√H, 1/√H), drawn W_hh, W_ih, A in row-major order.
RnnParams init_params(std::size_t H, std::size_t d, RngStream& stream);

struct StepResult {
    Vector z;
    Vector h;
};

StepResult step(const RnnParams& p, std::span<const double> h_prev, std::span<const double> x);
Vector readout(const RnnParams& p, std::span<const double> h);
Vector gumbel_softmax(std::span<const double> logits, double tau, std::span<const double> gumbel);
// Index of the largest entry; ties go to the smallest index.
std::size_t argmax(std::span<const double> v);

struct ZeroInput {};
struct GaussianInput {
    double sigma = 1.0;
    RngStream* stream = nullptr;
};
using InputSource = std::variant<ZeroInput, GaussianInput>;

struct Rollout {
    Vector h0;
    double tau = 1.0;
    Matrix inputs;  // T × d
    Matrix z;       // T × H pre-activations
    Matrix h;       // T × H
    Matrix logits;  // T × 3
    Matrix gumbel;  // T × 3, empty when no Gumbel stream was given
    Matrix soft;    // T × 3

    std::size_t length() const noexcept { return h.rows(); }
};

// `h0` empty means the zero state. Without a Gumbel stream the soft outputs
// are softmax(logits / τ).
Rollout rollout(const RnnParams& p, std::size_t length, const InputSource& input, std::span<const double> h0, double tau,
                RngStream* gumbel_stream);

// Time-major batch: every per-step matrix has one row per batch member.
struct BatchRollout {
    std::size_t batch = 0;
    double tau = 1.0;
    Matrix h0;                   // B × H
    std::vector<Matrix> inputs;  // per step, B × d
    std::vector<Matrix> z;       // per step, B × H
    std::vector<Matrix> h;       // per step, B × H
    std::vector<Matrix> logits;  // per step, B × 3
    std::vector<Matrix> gumbel;  // per step, B × 3 (empty vector when absent)
    std::vector<Matrix> soft;    // per step, B × 3

    std::size_t length() const noexcept { return h.size(); }
};

// One input stream and (optionally) one Gumbel stream per batch member; an
// empty `input_streams` span means zero input. Member b draws exactly what a
// single-sequence rollout with the same streams would draw.
BatchRollout rollout_batch(const RnnParams& p, std::size_t length, std::span<RngStream> input_streams, double sigma,
                           const Matrix& h0, double tau, std::span<RngStream> gumbel_streams);

struct Gradients {
    Matrix dW_hh;
    Matrix dW_ih;
    Matrix dA;

    static Gradients zeros_like(const RnnParams& p);
    double norm() const;
    Gradients& operator+=(const Gradients& other);
    Gradients& operator*=(double s);
    std::array<const Matrix*, 3> blocks() const { return {&dW_hh, &dW_ih, &dA}; }
};

// Reverse-mode gradient of Σ_t ⟨dL_dsoft_t, soft_t⟩ with respect to the
// parameters, replaying the stored pre-activations and Gumbel draws.
Gradients bptt(const RnnParams& p, const Rollout& r, const Matrix& dL_dsoft, double tau);
Gradients bptt_batch(const RnnParams& p, const BatchRollout& r, std::span<const Matrix> dL_dsoft);

// Rescales all blocks by max_norm / ‖g‖ when the global L2 norm exceeds max_norm.
Gradients clip_grad_norm(Gradients g, double max_norm);

// Hard emissions for evaluation: Gumbel-max on the logits after `burn_in`
// discarded steps, from h0 = 0 with N(0, σ²) inputs. Sequence i uses
// stream.split(i).
std::vector<hmm::ObsSequence> emit_sequences(const RnnParams& p, std::size_t n, std::size_t length, std::size_t burn_in,
                                             double sigma, const RngStream& stream);

}  // namespace stochrnn::rnn
