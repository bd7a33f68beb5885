// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "gltr/error.hpp"
#include "gltr/log.hpp"
#include "gltr/trainer.hpp"
#include "test_util.hpp"

using namespace gltr;
using gltr::test::random_matrix;

namespace {

Matrix ramp(std::size_t d, std::size_t T) {
    Matrix m(d, T);
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t t = 0; t < T; ++t) {
            m(c, t) = static_cast<double>(t) + 0.001 * static_cast<double>(c);
        }
    }
    return m;
}

std::vector<LabeledSequence> toy_dataset(std::size_t ids, std::size_t per_id, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LabeledSequence> out;
    for (std::size_t i = 0; i < ids; ++i) {
        const Matrix center = random_matrix(d, 1, rng, -2.0, 2.0);
        for (std::size_t k = 0; k < per_id; ++k) {
            Matrix x = random_matrix(d, 20, rng, -0.3, 0.3);
            for (std::size_t c = 0; c < d; ++c) {
                for (std::size_t t = 0; t < 20; ++t) {
                    x(c, t) += center(c, 0);
                }
            }
            out.push_back({x, i});
        }
    }
    return out;
}

ModelConfig toy_model(std::size_t d, std::size_t ids) {
    ModelConfig c;
    c.frame_dim = d;
    c.num_identities = ids;
    return c;
}

bool same_parameters(const GltrNetwork& a, const GltrNetwork& b) {
    const auto pa = parameter_groups(a, true);
    const auto pb = parameter_groups(b, true);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (!std::equal(pa[i].values.begin(), pa[i].values.end(), pb[i].values.begin(), pb[i].values.end())) {
            return false;
        }
    }
    return pa.size() == pb.size();
}

bool same_log(const std::vector<EpochStats>& a, const std::vector<EpochStats>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].epoch != b[i].epoch || a[i].lr != b[i].lr || a[i].mean_loss != b[i].mean_loss ||
            a[i].train_accuracy != b[i].train_accuracy) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("sample_clip: exact length, uniform start, contiguity, padding") {
    Rng rng(1);
    const Matrix exact = ramp(3, 16);
    std::size_t start = 99;
    CHECK(sample_clip(exact, 16, rng, &start) == exact);
    CHECK(start == 0);

    const Matrix long_track = ramp(2, 200);
    std::set<std::size_t> starts;
    for (int i = 0; i < 5000; ++i) {
        const Matrix clip = sample_clip(long_track, 16, rng, &start);
        REQUIRE(clip.cols() == 16);
        CHECK(start <= 184);
        starts.insert(start);
        for (std::size_t t = 0; t < 16; ++t) {
            CHECK(clip(0, t) == static_cast<double>(start + t));
        }
    }
    CHECK(*starts.begin() == 0);
    CHECK(*starts.rbegin() == 184);
    CHECK(starts.size() == 185);

    const Matrix short_track = ramp(2, 5);
    const Matrix padded = sample_clip(short_track, 16, rng, &start);
    REQUIRE(padded.cols() == 16);
    for (std::size_t t = 0; t < 16; ++t) {
        CHECK(padded(0, t) == static_cast<double>(std::min<std::size_t>(t, 4)));
    }
    CHECK_THROWS_AS(sample_clip(Matrix(), 16, rng), Error);
}

TEST_CASE("lr schedule: step decay at the decay epoch") {
    const TrainConfig cfg;
    CHECK(lr_at_epoch(cfg, 0) == 0.01);
    CHECK(lr_at_epoch(cfg, 119) == 0.01);
    CHECK(lr_at_epoch(cfg, 120) == 0.01 * 0.1);
    CHECK(lr_at_epoch(cfg, 399) == 0.01 * 0.1);
    CHECK_THROWS_AS(lr_at_epoch(cfg, 400), Error);
    TrainConfig flat = cfg;
    flat.lr_decay_factor = 1.0;
    for (std::size_t e : {0, 119, 120, 300}) {
        CHECK(lr_at_epoch(flat, e) == 0.01);
    }
    TrainConfig bad = cfg;
    bad.lr_decay_epoch = 400;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("label map assigns contiguous labels in id order") {
    std::vector<SequenceRecord> recs = {{7, 1, Matrix(1, 1)}, {3, 2, Matrix(1, 1)}, {7, 2, Matrix(1, 1)},
                                        {10, 1, Matrix(1, 1)}};
    const LabelMap map(recs);
    CHECK(map.size() == 3);
    CHECK(map.label_of(3) == 0);
    CHECK(map.label_of(7) == 1);
    CHECK(map.label_of(10) == 2);
    CHECK_THROWS_AS(map.label_of(4), Error);
    const auto labeled = map.labeled(recs);
    CHECK(labeled[0].label == 1);
    CHECK(labeled[1].label == 0);
}

TEST_CASE("sgd step is exactly theta - lr * grad") {
    GltrNetwork net = GltrNetwork::initialized(toy_model(4, 3), 2);
    GradientTape tape(net);
    std::mt19937_64 rng(3);
    const Matrix x = random_matrix(4, 8, rng);
    forward_backward(x, 1, net, tape, Mode::Inference);
    const GltrNetwork before = net;
    SgdOptimizer sgd(0.0, 0.0);
    sgd.step(net, tape.grads, 0.05);
    const auto p0 = parameter_groups(before);
    const auto p1 = parameter_groups(net);
    const auto g = parameter_groups(tape.grads);
    for (std::size_t i = 0; i < p0.size(); ++i) {
        for (std::size_t k = 0; k < p0[i].values.size(); ++k) {
            CHECK(p1[i].values[k] == p0[i].values[k] - 0.05 * g[i].values[k]);
        }
    }
}

TEST_CASE("a small step along the analytic gradient lowers the loss on a frozen batch") {
    ModelConfig c = toy_model(6, 4);
    GltrNetwork net(c);
    randomize_all_parameters(net, 5);
    std::mt19937_64 rng(6);
    std::vector<Matrix> clips;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 4; ++i) {
        clips.push_back(random_matrix(6, 10, rng));
        labels.push_back(i);
    }
    GradientTape tape(net);
    const double before = forward_backward_batch(clips, labels, net, tape, Mode::Inference).mean_loss;
    SgdOptimizer(0.0, 0.0).step(net, tape.grads, 1e-6);
    GradientTape again(net);
    const double after = forward_backward_batch(clips, labels, net, again, Mode::Inference).mean_loss;
    CHECK(after < before);
}

TEST_CASE("training is bitwise reproducible and resumable") {
    const auto data = toy_dataset(4, 3, 4, 7);
    TrainConfig cfg;
    cfg.clip_length = 12;
    cfg.batch_size = 5;
    cfg.lr_initial = 0.05;
    cfg.lr_decay_epoch = 4;
    cfg.total_epochs = 8;
    cfg.seed = 99;

    GltrNetwork a = GltrNetwork::initialized(toy_model(4, 4), 1);
    GltrNetwork b = a;
    const auto log_a = train(data, a, cfg);
    const auto log_b = train(data, b, cfg);
    CHECK(same_log(log_a, log_b));
    CHECK(same_parameters(a, b));
    CHECK(training_log_csv(log_a) == training_log_csv(log_b));

    // Interrupt after 6 epochs, then resume; the schedule continues at epoch 6.
    GltrNetwork c = GltrNetwork::initialized(toy_model(4, 4), 1);
    TrainConfig first = cfg;
    first.total_epochs = 6;
    auto log_c = train(data, c, first);
    const auto rest = train(data, c, cfg, 6);
    REQUIRE(rest.size() == 2);
    CHECK(rest[0].epoch == 6);
    CHECK(rest[0].lr == lr_at_epoch(cfg, 6));
    log_c.insert(log_c.end(), rest.begin(), rest.end());
    CHECK(same_log(log_a, log_c));
    CHECK(same_parameters(a, c));

    TrainConfig other = cfg;
    other.seed = 100;
    GltrNetwork d = GltrNetwork::initialized(toy_model(4, 4), 1);
    CHECK_FALSE(same_log(log_a, train(data, d, other)));
}

TEST_CASE("single-identity dataset trains to zero loss") {
    std::vector<LabeledSequence> data = toy_dataset(1, 3, 4, 8);
    GltrNetwork net = GltrNetwork::initialized(toy_model(4, 1), 2);
    TrainConfig cfg;
    cfg.total_epochs = 3;
    cfg.lr_decay_epoch = 2;
    const auto log = train(data, net, cfg);
    for (const EpochStats& s : log) {
        CHECK(s.mean_loss == 0.0);
        CHECK(s.train_accuracy == 1.0);
    }
}

TEST_CASE("degenerate datasets are rejected") {
    GltrNetwork net = GltrNetwork::initialized(toy_model(4, 3), 2);
    TrainConfig cfg;
    cfg.total_epochs = 2;
    cfg.lr_decay_epoch = 1;
    CHECK_THROWS_AS(train({}, net, cfg), Error);
    // Identity 2 has no tracklets.
    CHECK_THROWS_AS(train(toy_dataset(2, 2, 4, 9), net, cfg), Error);
    auto wrong_dim = toy_dataset(3, 1, 5, 9);
    CHECK_THROWS_AS(train(wrong_dim, net, cfg), Error);
}

TEST_CASE("a diverging run stops with a numeric error") {
    GltrNetwork net = GltrNetwork::initialized(toy_model(4, 3), 2);
    TrainConfig cfg;
    cfg.lr_initial = 1e200;
    cfg.total_epochs = 5;
    cfg.lr_decay_epoch = 4;
    try {
        train(toy_dataset(3, 2, 4, 12), net, cfg);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Numeric);
    }
}

TEST_CASE("short clips trigger a receptive-field warning") {
    std::vector<std::string> warnings;
    set_warning_handler([&](const std::string& m) { warnings.push_back(m); });
    GltrNetwork net = GltrNetwork::initialized(toy_model(4, 2), 2);
    TrainConfig cfg;
    cfg.clip_length = 4; // widest branch spans 9 frames
    cfg.total_epochs = 2;
    cfg.lr_decay_epoch = 1;
    train(toy_dataset(2, 2, 4, 10), net, cfg);
    set_warning_handler({});
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("receptive field") != std::string::npos);
}

TEST_CASE("training log csv") {
    const std::vector<EpochStats> log = {{0, 0.01, 1.5, 0.25}, {1, 0.001, 0.75, 0.5}};
    CHECK(training_log_csv(log) == "epoch,lr,mean_loss,train_accuracy\n0,0.01,1.5,0.25\n1,0.001,0.75,0.5\n");
}

TEST_CASE("20 separable synthetic identities reach 95% training accuracy within 200 epochs") {
    BenchmarkConfig bc;
    bc.lookalike_fraction = 0.0;
    const Benchmark b = generate_benchmark(bc, 2024);
    const LabelMap labels(b.train);
    const auto data = labels.labeled(b.train);
    REQUIRE(labels.size() == 20);
    ModelConfig mc = toy_model(bc.frame_dim, 20);
    GltrNetwork net = GltrNetwork::initialized(mc, 11);
    TrainConfig cfg; // defaults: clip 16, batch 10, lr 0.01
    cfg.total_epochs = 200;
    cfg.lr_decay_epoch = 120;
    cfg.seed = 5;
    const auto log = train(data, net, cfg);
    INFO("final accuracy " << log.back().train_accuracy);
    CHECK(log.back().train_accuracy >= 0.95);
    CHECK(log.back().mean_loss < log.front().mean_loss);
}
