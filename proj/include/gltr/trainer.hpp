// SPDX-License-Identifier: Apache-2.0
//
// Clip-based SGD training with a single step decay of the learning rate.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gltr/model.hpp"
#include "gltr/rng.hpp"
#include "gltr/synth.hpp"

namespace gltr {

struct TrainConfig {
    std::size_t clip_length = 16;
    std::size_t batch_size = 10;
    double lr_initial = 0.01;
    double lr_decay_factor = 0.1;
    std::size_t lr_decay_epoch = 120;
    std::size_t total_epochs = 400;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LabeledSequence {
    Matrix frames; // d x T
    std::size_t label = 0;
};

// Maps person ids onto contiguous class indices in ascending id order.
class LabelMap {
public:
    LabelMap() = default;
    explicit LabelMap(std::span<const SequenceRecord> records);

    std::size_t size() const noexcept { return to_label_.size(); }
    std::size_t label_of(std::uint32_t person_id) const;
    std::vector<LabeledSequence> labeled(std::span<const SequenceRecord> records) const;

private:
    std::map<std::uint32_t, std::size_t> to_label_;
};

// Contiguous window of `clip_length` frames starting uniformly at random.
// Tracklets shorter than the clip are padded by repeating their last frame.
Matrix sample_clip(const Matrix& tracklet, std::size_t clip_length, Rng& rng,
                   std::size_t* start = nullptr);

double lr_at_epoch(const TrainConfig& config, std::size_t epoch);

// Plain SGD, with optional momentum and L2 weight decay (both off by default).
class SgdOptimizer {
public:
    SgdOptimizer(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(GltrNetwork& net, GltrNetwork& grads, double lr);

private:
    double momentum_;
    double weight_decay_;
    GltrNetwork velocity_;
    bool has_velocity_ = false;
};

struct EpochStats {
    std::size_t epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Runs epochs [start_epoch, total_epochs). Each epoch shuffles the tracklets
// and draws one clip per tracklet; the random stream of an epoch depends only
// on (seed, epoch), so a resumed run matches an uninterrupted one.
std::vector<EpochStats> train(std::span<const LabeledSequence> dataset, GltrNetwork& net,
                              const TrainConfig& config, std::size_t start_epoch = 0,
                              const EpochCallback& on_epoch = {});

std::string training_log_csv(std::span<const EpochStats> log);

} // namespace gltr
