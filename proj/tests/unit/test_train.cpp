#include "stochrnn/error.hpp"
#include "stochrnn/train.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace stochrnn;
using namespace stochrnn::train;

namespace {

TrainConfig tiny() {
    TrainConfig c;
    c.H = 4;
    c.d = 2;
    c.seq_len = 5;
    c.n_sequences = 20;
    c.batch_size = 8;
    c.epochs = 2;
    c.sinkhorn_eps = 0.5;
    c.checkpoint_every = 1;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("config validation names the key") {
    auto c = tiny();
    CHECK_NOTHROW(c.validate());
    c.batch_size = 0;
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("batch_size") != std::string::npos);
    }
    CHECK_THROWS_AS(TrainConfig::from_json(io::Json{{"learning_rate", 0.1}}), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json(io::Json{{"hmm", {{"linear_chain", {{"M", 2}, {"rho", 0.05}, {"eps", 0.01}}}}}, {"d", -1}}),
                    ConfigError);
}

TEST_CASE("config json round trip and digest scope") {
    auto c = tiny();
    c.clip_norm = std::numeric_limits<double>::infinity();
    const auto back = TrainConfig::from_json(c.to_json());
    CHECK(back.digest() == c.digest());
    CHECK(std::isinf(back.clip_norm));

    auto longer = c;
    longer.epochs = 500;
    longer.checkpoint_every = 7;
    CHECK(longer.digest() == c.digest());
    auto other = c;
    other.lr = 2e-3;
    CHECK(other.digest() != c.digest());
}

TEST_CASE("hmm config forms") {
    const auto lc = hmm_from_config(io::Json{{"linear_chain", {{"M", 3}, {"rho", 0.05}, {"eps", 0.01}}}});
    CHECK(lc.M == 3);
    CHECK(hmm_from_config(io::Json{{"preset", "cyclic"}}).M == hmm::build_preset(hmm::Preset::cyclic).M);
    CHECK_THROWS_AS(hmm_from_config(io::Json{{"preset", "ring"}}), ConfigError);
}

TEST_CASE("epochs = 0 returns the initialization") {
    auto c = tiny();
    c.epochs = 0;
    const auto r = stochrnn::train::train(c);
    REQUIRE(r.checkpoints.size() == 1);
    CHECK(r.checkpoints[0].epoch == 0);
    CHECK(r.log.rows.empty());
    RngStream init = RngStream(c.seed).split(0);
    CHECK(r.checkpoints[0].params == rnn::init_params(c.H, c.d, init));
}

TEST_CASE("training is deterministic and losses are finite") {
    const auto c = tiny();
    const auto a = stochrnn::train::train(c), b = stochrnn::train::train(c);
    CHECK(a.log.csv(false) == b.log.csv(false));
    CHECK(a.checkpoints.back().params == b.checkpoints.back().params);
    CHECK(serialize_checkpoint(a.checkpoints.back()) == serialize_checkpoint(b.checkpoints.back()));
    for (const auto& row : a.log.rows) {
        CHECK(std::isfinite(row.train_loss));
        CHECK(std::isfinite(row.val_loss));
    }
    // initial + one per epoch (final coincides with the last periodic one)
    CHECK(a.checkpoints.size() == 3);
    CHECK_FALSE(a.checkpoints.back().params == a.checkpoints.front().params);
}

TEST_CASE("lr = 0 with unbounded clip leaves parameters unchanged") {
    auto c = tiny();
    c.lr = 0.0;
    c.clip_norm = std::numeric_limits<double>::infinity();
    c.epochs = 3;
    const auto r = stochrnn::train::train(c);
    for (const auto& ck : r.checkpoints) CHECK(ck.params == r.checkpoints.front().params);
}

TEST_CASE("resume reproduces an uninterrupted run") {
    auto c = tiny();
    c.epochs = 3;
    const auto full = stochrnn::train::train(c);
    auto first = c;
    first.epochs = 1;
    const auto head = stochrnn::train::train(first);
    const auto tail = stochrnn::train::train(c, {}, &head.checkpoints.back());
    CHECK(tail.checkpoints.back().params == full.checkpoints.back().params);
    CHECK(tail.log.rows.size() == 2);
    CHECK(tail.log.rows.back().train_loss == full.log.rows.back().train_loss);

    auto drift = c;
    drift.lr = 0.5;
    CHECK_THROWS_AS(stochrnn::train::train(drift, {}, &head.checkpoints.back()), ConfigDriftError);
}

TEST_CASE("checkpoint round trip, drift and truncation") {
    const auto r = stochrnn::train::train(tiny());
    const auto& ck = r.checkpoints.back();
    const std::string text = serialize_checkpoint(ck);
    const auto back = parse_checkpoint(text, ck.digest);
    CHECK(serialize_checkpoint(back) == text);
    CHECK(back.params == ck.params);
    CHECK(back.adam.step == ck.adam.step);

    const auto path = std::filesystem::temp_directory_path() / "stochrnn_ck_test.txt";
    save_checkpoint(path, ck);
    CHECK(serialize_checkpoint(load_checkpoint(path)) == text);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(parse_checkpoint(text, std::string("0000")), ConfigDriftError);
    CHECK_THROWS_AS(parse_checkpoint(text.substr(0, text.size() / 2)), FormatError);
    CHECK_THROWS_AS(parse_checkpoint(text.substr(0, text.size() - 1)), FormatError);
    CHECK_THROWS_AS(parse_checkpoint("not a checkpoint\n"), FormatError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ck.txt"), MissingFileError);
}

TEST_CASE("loss log csv") {
    LossLog log;
    log.rows.push_back({1, 2.5, 2.25, 0.125, 0.5});
    const std::string text = log.csv();
    CHECK(text.rfind("epoch,train_loss,val_loss,grad_norm,seconds\n", 0) == 0);
    const auto back = LossLog::parse_csv(text);
    REQUIRE(back.rows.size() == 1);
    CHECK(back.rows[0].val_loss == 2.25);
    CHECK(back.csv() == text);
}

TEST_CASE("batch loss gradient matches finite differences") {
    auto c = tiny();
    c.sinkhorn_tol = 1e-13;
    c.sinkhorn_max_iters = 20000;
    const auto targets = sample_targets(c);
    std::vector<const hmm::ObsSequence*> ptrs;
    for (std::size_t i = 0; i < 6; ++i) ptrs.push_back(&targets[i]);
    RngStream init(7);
    const auto p = rnn::init_params(c.H, c.d, init);
    auto streams = [](std::uint64_t k) {
        std::vector<RngStream> v;
        for (std::size_t i = 0; i < 6; ++i) v.push_back(RngStream(k).split(i));
        return v;
    };
    auto in = streams(1), gb = streams(2);
    const auto base = batch_loss(p, c, ptrs, in, gb, true);
    CHECK(base.converged);

    RngStream dir(9);
    auto q = p;
    Matrix dW(c.H, c.H);
    for (auto& x : dW.values()) x = dir.gaussian();
    const double e = 1e-5;
    auto eval = [&](double s) {
        auto r = p;
        for (std::size_t i = 0; i < dW.size(); ++i) r.W_hh.values()[i] += s * dW.values()[i];
        auto a = streams(1), b = streams(2);
        return batch_loss(r, c, ptrs, a, b, false).loss;
    };
    const double fd = (eval(e) - eval(-e)) / (2 * e);
    double an = 0.0;
    for (std::size_t i = 0; i < dW.size(); ++i) an += base.grads.dW_hh.values()[i] * dW.values()[i];
    CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(fd)));
}
