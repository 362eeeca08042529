#pragma once

#include "stochrnn/hmm.hpp"
#include "stochrnn/io.hpp"
#include "stochrnn/numerics.hpp"
#include "stochrnn/rnn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace stochrnn::train {

struct TrainConfig {
    std::size_t H = 50;
    std::size_t d = 10;
    hmm::HmmSpec hmm = hmm::build_linear_chain(2);
    std::size_t seq_len = 100;
    std::size_t n_sequences = 3000;
    std::size_t batch_size = 256;
    double lr = 1e-3;
    double clip_norm = 0.9;
    std::size_t epochs = 300;
    double sinkhorn_eps = 0.05;
    std::size_t sinkhorn_max_iters = 500;
    double sinkhorn_tol = 1e-6;
    double tau = 1.0;
    double sigma_input = 1.0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 10;
    double val_fraction = 0.1;

    // Throws ConfigError naming the offending key.
    void validate() const;
    std::size_t n_val() const;
    std::size_t n_train() const { return n_sequences - n_val(); }

    io::Json to_json() const;
    // Unknown keys are rejected. "hmm" accepts a full spec object,
    // {"linear_chain": {"M", "rho", "eps"}} or {"preset": "fully_connected" | "cyclic"}.
    static TrainConfig from_json(const io::Json& j);
    // Covers every field that changes the optimisation trajectory; `epochs`
    // and `checkpoint_every` are left out so a run can be extended.
    std::string digest() const;
};

hmm::HmmSpec hmm_from_config(const io::Json& j);

struct Checkpoint {
    rnn::RnnParams params;
    AdamState adam;
    std::size_t epoch = 0;
    std::string digest;
    // Index of the next epoch to run; every stream of that epoch is derived
    // from (seed, epoch), so this is all the generator state a resume needs.
    std::uint64_t rng_cursor = 0;
};

std::string serialize_checkpoint(const Checkpoint& c);
// Throws FormatError on malformed text and ConfigDriftError when
// `expected_digest` is given and differs from the header.
Checkpoint parse_checkpoint(const std::string& text, const std::optional<std::string>& expected_digest = std::nullopt);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_digest = std::nullopt);

struct LossRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double grad_norm = 0.0;  // mean pre-clip norm over the epoch's batches
    double seconds = 0.0;
};

struct LossLog {
    std::vector<LossRow> rows;
    // `with_seconds = false` drops the wall-time column, which is the only
    // field that differs between repeated runs.
    std::string csv(bool with_seconds = true) const;
    static LossLog parse_csv(const std::string& text);
};

enum class CheckpointKind { initial, periodic, final, diagnostic };

struct TrainHooks {
    std::function<void(const Checkpoint&, CheckpointKind)> on_checkpoint;
    std::function<void(const LossRow&)> on_epoch;
};

struct TrainResult {
    std::vector<Checkpoint> checkpoints;
    LossLog log;
};

// Fixed target dataset: sequence i is sampled from stream (seed, data).split(i).
std::vector<hmm::ObsSequence> sample_targets(const TrainConfig& cfg);

// Runs epochs [start, cfg.epochs). With `resume`, training continues from that
// checkpoint; its digest must match cfg.
TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {}, const Checkpoint* resume = nullptr);

// One batch: Sinkhorn divergence between flattened soft outputs and one-hot
// targets, and its gradient through the network.
struct BatchLoss {
    double loss = 0.0;
    rnn::Gradients grads;
    bool converged = true;
};
BatchLoss batch_loss(const rnn::RnnParams& p, const TrainConfig& cfg, const std::vector<const hmm::ObsSequence*>& targets,
                     std::span<RngStream> input_streams, std::span<RngStream> gumbel_streams, bool with_gradient);

}  // namespace stochrnn::train
