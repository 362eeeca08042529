#include "stochrnn/train.hpp"

#include "stochrnn/error.hpp"
#include "stochrnn/ot.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace stochrnn::train {

namespace {

// Child ids of the run's root stream.
enum StreamId : std::uint64_t { kInit = 0, kData = 1, kShuffle = 2, kInput = 3, kGumbel = 4, kValInput = 5, kValGumbel = 6 };

const std::set<std::string> kConfigKeys = {"H",        "d",         "hmm",         "seq_len",  "n_sequences", "batch_size",
                                           "lr",       "clip_norm", "epochs",      "sinkhorn_eps", "sinkhorn_max_iters",
                                           "sinkhorn_tol", "tau",   "sigma_input", "seed",     "checkpoint_every", "val_fraction"};

[[noreturn]] void bad(const std::string& key, const std::string& why) { throw ConfigError("config key \"" + key + "\": " + why); }

template <class T>
T get(const io::Json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const io::Json::exception& e) {
        bad(key, e.what());
    }
}

double get_real(const io::Json& j, const std::string& key) {
    const auto& v = j.at(key);
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
        bad(key, "expected a number, got \"" + s + "\"");
    }
    if (!v.is_number()) bad(key, "expected a number");
    return v.get<double>();
}

std::size_t get_count(const io::Json& j, const std::string& key) {
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) bad(key, "expected a non-negative integer");
    return v.get<std::size_t>();
}

io::Json real_json(double x) {
    if (std::isinf(x) && x > 0) return "Infinity";
    return x;
}

}  // namespace

hmm::HmmSpec hmm_from_config(const io::Json& j) {
    try {
        if (!j.is_object()) bad("hmm", "expected an object");
        if (j.contains("linear_chain")) {
            const auto& c = j.at("linear_chain");
            for (auto it = c.begin(); it != c.end(); ++it)
                if (it.key() != "M" && it.key() != "rho" && it.key() != "eps") bad("hmm.linear_chain." + it.key(), "unknown key");
            return hmm::build_linear_chain(c.at("M").get<std::size_t>(), c.value("rho", 0.05), c.value("eps", 0.01));
        }
        if (j.contains("preset")) {
            const auto name = j.at("preset").get<std::string>();
            if (name == "fully_connected") return hmm::build_preset(hmm::Preset::fully_connected);
            if (name == "cyclic") return hmm::build_preset(hmm::Preset::cyclic);
            bad("hmm.preset", "unknown preset \"" + name + "\"");
        }
        for (auto it = j.begin(); it != j.end(); ++it) {
            static const std::set<std::string> keys = {"M", "K", "T", "E", "pi0"};
            if (!keys.count(it.key())) bad("hmm." + it.key(), "unknown key");
        }
        return hmm::from_json(j.dump());
    } catch (const ParameterError& e) {
        bad("hmm", e.what());
    } catch (const ValidationError& e) {
        bad("hmm", e.what());
    } catch (const FormatError& e) {
        bad("hmm", e.what());
    } catch (const io::Json::exception& e) {
        bad("hmm", e.what());
    }
}

std::size_t TrainConfig::n_val() const {
    const auto v = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n_sequences)));
    return std::max<std::size_t>(1, v);
}

void TrainConfig::validate() const {
    if (H == 0) bad("H", "must be >= 1");
    if (d == 0) bad("d", "must be >= 1");
    if (seq_len == 0) bad("seq_len", "must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) bad("val_fraction", "must lie in (0, 1)");
    if (n_sequences < 2 || n_val() >= n_sequences) bad("n_sequences", "too few sequences for a train/validation split");
    if (batch_size == 0 || batch_size > n_train()) bad("batch_size", "must be in [1, number of training sequences]");
    if (!(lr >= 0.0) || !std::isfinite(lr)) bad("lr", "must be finite and >= 0");
    if (!(clip_norm > 0.0)) bad("clip_norm", "must be > 0");
    if (!(sinkhorn_eps > 0.0) || !std::isfinite(sinkhorn_eps)) bad("sinkhorn_eps", "must be > 0");
    if (sinkhorn_max_iters == 0) bad("sinkhorn_max_iters", "must be >= 1");
    if (!(sinkhorn_tol > 0.0)) bad("sinkhorn_tol", "must be > 0");
    if (!(tau > 0.0) || !std::isfinite(tau)) bad("tau", "must be > 0");
    if (!(sigma_input >= 0.0) || !std::isfinite(sigma_input)) bad("sigma_input", "must be finite and >= 0");
    if (checkpoint_every == 0) bad("checkpoint_every", "must be >= 1");
    try {
        hmm.validate();
    } catch (const ValidationError& e) {
        bad("hmm", e.what());
    }
    if (hmm.K != rnn::kOutputs) bad("hmm", "target HMM must emit " + std::to_string(rnn::kOutputs) + " symbols");
}

io::Json TrainConfig::to_json() const {
    io::Json j;
    j["H"] = H;
    j["d"] = d;
    j["hmm"] = io::Json::parse(hmm::to_json(hmm));
    j["seq_len"] = seq_len;
    j["n_sequences"] = n_sequences;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["clip_norm"] = real_json(clip_norm);
    j["epochs"] = epochs;
    j["sinkhorn_eps"] = sinkhorn_eps;
    j["sinkhorn_max_iters"] = sinkhorn_max_iters;
    j["sinkhorn_tol"] = sinkhorn_tol;
    j["tau"] = tau;
    j["sigma_input"] = sigma_input;
    j["seed"] = seed;
    j["checkpoint_every"] = checkpoint_every;
    j["val_fraction"] = val_fraction;
    return j;
}

TrainConfig TrainConfig::from_json(const io::Json& j) {
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!kConfigKeys.count(it.key())) bad(it.key(), "unknown key");
    TrainConfig c;
    if (j.contains("H")) c.H = get_count(j, "H");
    if (j.contains("d")) c.d = get_count(j, "d");
    if (j.contains("hmm")) c.hmm = hmm_from_config(j.at("hmm"));
    if (j.contains("seq_len")) c.seq_len = get_count(j, "seq_len");
    if (j.contains("n_sequences")) c.n_sequences = get_count(j, "n_sequences");
    if (j.contains("batch_size")) c.batch_size = get_count(j, "batch_size");
    if (j.contains("lr")) c.lr = get_real(j, "lr");
    if (j.contains("clip_norm")) c.clip_norm = get_real(j, "clip_norm");
    if (j.contains("epochs")) c.epochs = get_count(j, "epochs");
    if (j.contains("sinkhorn_eps")) c.sinkhorn_eps = get_real(j, "sinkhorn_eps");
    if (j.contains("sinkhorn_max_iters")) c.sinkhorn_max_iters = get_count(j, "sinkhorn_max_iters");
    if (j.contains("sinkhorn_tol")) c.sinkhorn_tol = get_real(j, "sinkhorn_tol");
    if (j.contains("tau")) c.tau = get_real(j, "tau");
    if (j.contains("sigma_input")) c.sigma_input = get_real(j, "sigma_input");
    if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed");
    if (j.contains("checkpoint_every")) c.checkpoint_every = get_count(j, "checkpoint_every");
    if (j.contains("val_fraction")) c.val_fraction = get_real(j, "val_fraction");
    c.validate();
    return c;
}

std::string TrainConfig::digest() const {
    io::Json j = to_json();
    j.erase("epochs");
    j.erase("checkpoint_every");
    return io::digest(j);
}

// ---------------------------------------------------------------------------
// Checkpoint file: one compact JSON header line, then one base-64 line per
// matrix in the order W_hh, W_ih, A, Adam first moments, Adam second moments.

namespace {

const std::vector<std::string> kPayloadOrder = {"W_hh", "W_ih", "A", "m_W_hh", "m_W_ih", "m_A", "v_W_hh", "v_W_ih", "v_A"};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
    io::Json h;
    h["H"] = c.params.H;
    h["d"] = c.params.d;
    h["epoch"] = c.epoch;
    h["digest"] = c.digest;
    h["rng_cursor"] = c.rng_cursor;
    h["adam_step"] = c.adam.step;
    h["adam_lr"] = c.adam.lr;
    h["adam_beta1"] = c.adam.beta1;
    h["adam_beta2"] = c.adam.beta2;
    h["adam_eps"] = c.adam.eps;
    h["blocks"] = kPayloadOrder;
    std::string out = io::dump_json(h, -1);
    out += '\n';
    std::vector<const Matrix*> mats = {&c.params.W_hh, &c.params.W_ih, &c.params.A};
    for (const auto& m : c.adam.first_moment) mats.push_back(&m);
    for (const auto& m : c.adam.second_moment) mats.push_back(&m);
    if (mats.size() != kPayloadOrder.size()) throw StateError("checkpoint Adam state does not have three blocks per moment");
    for (const auto* m : mats) {
        out += io::encode_reals(m->values());
        out += '\n';
    }
    return out;
}

Checkpoint parse_checkpoint(const std::string& text, const std::optional<std::string>& expected_digest) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    if (lines.empty()) throw FormatError("checkpoint is empty");
    if (text.back() != '\n') throw FormatError("checkpoint is truncated (no final newline)");
    io::Json h;
    try {
        h = io::Json::parse(lines[0]);
    } catch (const io::Json::exception& e) {
        throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    Checkpoint c;
    try {
        c.params.H = h.at("H").get<std::size_t>();
        c.params.d = h.at("d").get<std::size_t>();
        c.epoch = h.at("epoch").get<std::size_t>();
        c.digest = h.at("digest").get<std::string>();
        c.rng_cursor = h.at("rng_cursor").get<std::uint64_t>();
        c.adam.step = h.at("adam_step").get<std::uint64_t>();
        c.adam.lr = h.at("adam_lr").get<double>();
        c.adam.beta1 = h.at("adam_beta1").get<double>();
        c.adam.beta2 = h.at("adam_beta2").get<double>();
        c.adam.eps = h.at("adam_eps").get<double>();
        if (h.at("blocks").get<std::vector<std::string>>() != kPayloadOrder) throw FormatError("unexpected checkpoint block order");
    } catch (const io::Json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    if (expected_digest && *expected_digest != c.digest) {
        throw ConfigDriftError("checkpoint digest " + c.digest + " does not match config digest " + *expected_digest);
    }
    if (lines.size() != 1 + kPayloadOrder.size()) {
        throw FormatError("checkpoint has " + std::to_string(lines.size() - 1) + " payload lines, expected " +
                          std::to_string(kPayloadOrder.size()));
    }
    const std::size_t H = c.params.H, d = c.params.d;
    const std::size_t rows[3] = {H, H, rnn::kOutputs};
    const std::size_t cols[3] = {H, d, H};
    std::vector<Matrix> mats;
    for (std::size_t i = 0; i < kPayloadOrder.size(); ++i) {
        Vector v = io::decode_reals(lines[1 + i]);
        const std::size_t r = rows[i % 3], k = cols[i % 3];
        if (v.size() != r * k) throw FormatError("checkpoint block " + kPayloadOrder[i] + " has the wrong length");
        mats.emplace_back(r, k, std::move(v));
    }
    c.params.W_hh = std::move(mats[0]);
    c.params.W_ih = std::move(mats[1]);
    c.params.A = std::move(mats[2]);
    c.adam.first_moment = {std::move(mats[3]), std::move(mats[4]), std::move(mats[5])};
    c.adam.second_moment = {std::move(mats[6]), std::move(mats[7]), std::move(mats[8])};
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) { io::write_file(path, serialize_checkpoint(c)); }

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_digest) {
    return parse_checkpoint(io::read_file(path), expected_digest);
}

// ---------------------------------------------------------------------------
// Loss log

std::string LossLog::csv(bool with_seconds) const {
    io::CsvWriter w(with_seconds ? "epoch,train_loss,val_loss,grad_norm,seconds" : "epoch,train_loss,val_loss,grad_norm");
    for (const auto& r : rows) {
        if (with_seconds) {
            w.row({io::cell(r.epoch), io::cell(r.train_loss), io::cell(r.val_loss), io::cell(r.grad_norm), io::cell(r.seconds)});
        } else {
            w.row({io::cell(r.epoch), io::cell(r.train_loss), io::cell(r.val_loss), io::cell(r.grad_norm)});
        }
    }
    return w.text();
}

LossLog LossLog::parse_csv(const std::string& text) {
    LossLog log;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("epoch,train_loss,val_loss,grad_norm", 0) != 0) {
        throw FormatError("loss log header missing");
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() < 4) throw FormatError("loss log row has too few columns: " + line);
        LossRow r;
        try {
            r.epoch = std::stoul(cells[0]);
            r.train_loss = std::stod(cells[1]);
            r.val_loss = std::stod(cells[2]);
            r.grad_norm = std::stod(cells[3]);
            if (cells.size() > 4) r.seconds = std::stod(cells[4]);
        } catch (const std::exception&) {
            throw FormatError("loss log row is not numeric: " + line);
        }
        log.rows.push_back(r);
    }
    return log;
}

// ---------------------------------------------------------------------------
// Training

std::vector<hmm::ObsSequence> sample_targets(const TrainConfig& cfg) {
    const RngStream data = RngStream(cfg.seed).split(kData);
    std::vector<hmm::ObsSequence> out;
    out.reserve(cfg.n_sequences);
    for (std::size_t i = 0; i < cfg.n_sequences; ++i) {
        RngStream s = data.split(i);
        out.push_back(hmm::sample(cfg.hmm, cfg.seq_len, s).obs);
    }
    return out;
}

BatchLoss batch_loss(const rnn::RnnParams& p, const TrainConfig& cfg, const std::vector<const hmm::ObsSequence*>& targets,
                     std::span<RngStream> input_streams, std::span<RngStream> gumbel_streams, bool with_gradient) {
    const std::size_t B = targets.size(), T = cfg.seq_len, K = rnn::kOutputs;
    const auto r = rnn::rollout_batch(p, T, input_streams, cfg.sigma_input, Matrix(B, p.H), cfg.tau, gumbel_streams);

    Matrix X(B, T * K), Y(B, T * K);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < K; ++k) X(b, t * K + k) = r.soft[t](b, k);
            Y(b, t * K + static_cast<std::size_t>(targets[b]->observations[t])) = 1.0;
        }
    const ot::SinkhornOptions opts{cfg.sinkhorn_eps, cfg.sinkhorn_max_iters, cfg.sinkhorn_tol};
    const auto div = ot::divergence_gradient(ot::PointCloud::uniform(std::move(X)), ot::PointCloud::uniform(std::move(Y)), opts);

    BatchLoss out;
    out.loss = div.value;
    out.converged = div.converged;
    if (!with_gradient) return out;
    std::vector<Matrix> dsoft;
    dsoft.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Matrix g(B, K);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < K; ++k) g(b, k) = div.gradient(b, t * K + k);
        dsoft.push_back(std::move(g));
    }
    out.grads = rnn::bptt_batch(p, r, dsoft);
    return out;
}

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks, const Checkpoint* resume) {
    cfg.validate();
    const std::string digest = cfg.digest();
    const RngStream root(cfg.seed);

    Checkpoint state;
    if (resume != nullptr) {
        if (resume->digest != digest) throw ConfigDriftError("resume checkpoint digest " + resume->digest + " != config digest " + digest);
        if (resume->params.H != cfg.H || resume->params.d != cfg.d) throw ConfigError("resume checkpoint shape does not match H, d");
        state = *resume;
    } else {
        RngStream init = root.split(kInit);
        state.params = rnn::init_params(cfg.H, cfg.d, init);
        const std::vector<Matrix> blocks = {state.params.W_hh, state.params.W_ih, state.params.A};
        state.adam = AdamState::zeros_like(blocks, cfg.lr);
        state.digest = digest;
    }
    state.adam.lr = cfg.lr;

    TrainResult result;
    auto emit = [&](CheckpointKind kind) {
        state.rng_cursor = state.epoch;
        result.checkpoints.push_back(state);
        if (hooks.on_checkpoint) hooks.on_checkpoint(state, kind);
    };
    if (resume == nullptr) emit(CheckpointKind::initial);

    const auto targets = sample_targets(cfg);
    const std::size_t n_train = cfg.n_train(), n_val = cfg.n_val(), B = cfg.batch_size;
    const std::size_t n_batches = n_train / B;
    const std::size_t val_chunk = std::min(B, n_val);
    const std::size_t n_val_chunks = n_val / val_chunk;

    auto streams_for = [](const RngStream& parent, std::size_t first, std::size_t count) {
        std::vector<RngStream> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) out.push_back(parent.split(first + i));
        return out;
    };

    for (std::size_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(n_train);
        std::iota(order.begin(), order.end(), 0);
        RngStream shuffler = root.split(kShuffle).split(epoch);
        shuffle(order, shuffler);

        const RngStream input_root = root.split(kInput).split(epoch);
        const RngStream gumbel_root = root.split(kGumbel).split(epoch);
        double loss_sum = 0.0, norm_sum = 0.0;
        for (std::size_t bi = 0; bi < n_batches; ++bi) {
            std::vector<const hmm::ObsSequence*> batch(B);
            for (std::size_t b = 0; b < B; ++b) batch[b] = &targets[order[bi * B + b]];
            auto inputs = streams_for(input_root, bi * B, B);
            auto gumbels = streams_for(gumbel_root, bi * B, B);
            BatchLoss bl = batch_loss(state.params, cfg, batch, inputs, gumbels, true);
            if (!std::isfinite(bl.loss) || !std::isfinite(bl.grads.norm())) {
                emit(CheckpointKind::diagnostic);
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(bi));
            }
            loss_sum += bl.loss;
            norm_sum += bl.grads.norm();
            const rnn::Gradients g = std::isinf(cfg.clip_norm) ? bl.grads : rnn::clip_grad_norm(bl.grads, cfg.clip_norm);
            std::vector<Matrix> params = {state.params.W_hh, state.params.W_ih, state.params.A};
            const std::vector<Matrix> grads = {g.dW_hh, g.dW_ih, g.dA};
            adam_step(params, grads, state.adam, rnn::kBlockNames);
            state.params.W_hh = std::move(params[0]);
            state.params.W_ih = std::move(params[1]);
            state.params.A = std::move(params[2]);
        }

        double val_sum = 0.0;
        const RngStream val_in = root.split(kValInput).split(epoch);
        const RngStream val_gum = root.split(kValGumbel).split(epoch);
        for (std::size_t c = 0; c < n_val_chunks; ++c) {
            std::vector<const hmm::ObsSequence*> batch(val_chunk);
            for (std::size_t b = 0; b < val_chunk; ++b) batch[b] = &targets[n_train + c * val_chunk + b];
            auto inputs = streams_for(val_in, c * val_chunk, val_chunk);
            auto gumbels = streams_for(val_gum, c * val_chunk, val_chunk);
            val_sum += batch_loss(state.params, cfg, batch, inputs, gumbels, false).loss;
        }

        LossRow row;
        row.epoch = epoch + 1;
        row.train_loss = loss_sum / static_cast<double>(n_batches);
        row.val_loss = val_sum / static_cast<double>(n_val_chunks);
        row.grad_norm = norm_sum / static_cast<double>(n_batches);
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        state.epoch = epoch + 1;
        if (!std::isfinite(row.val_loss)) {
            emit(CheckpointKind::diagnostic);
            throw NumericError("non-finite validation loss at epoch " + std::to_string(row.epoch));
        }
        result.log.rows.push_back(row);
        if (hooks.on_epoch) hooks.on_epoch(row);
        if (state.epoch == cfg.epochs) {
            emit(CheckpointKind::final);
        } else if (state.epoch % cfg.checkpoint_every == 0) {
            emit(CheckpointKind::periodic);
        }
    }
    if (result.checkpoints.empty() || result.checkpoints.back().epoch != state.epoch) emit(CheckpointKind::final);
    return result;
}

}  // namespace stochrnn::train
