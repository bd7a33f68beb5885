// SPDX-License-Identifier: Apache-2.0
#include "gltr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gltr/error.hpp"
#include "gltr/log.hpp"

namespace gltr {

void TrainConfig::validate() const {
    require(clip_length >= 1, ErrorCode::InvalidArgument, "clip_length must be >= 1");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    require(lr_initial > 0.0, ErrorCode::InvalidArgument, "lr_initial must be positive");
    require(lr_decay_factor > 0.0, ErrorCode::InvalidArgument, "lr_decay_factor must be positive");
    require(lr_decay_epoch >= 1, ErrorCode::InvalidArgument, "lr_decay_epoch must be >= 1");
    require(total_epochs >= 1, ErrorCode::InvalidArgument, "total_epochs must be >= 1");
    require(lr_decay_epoch < total_epochs, ErrorCode::InvalidArgument,
            "lr_decay_epoch must be smaller than total_epochs");
    require(momentum >= 0.0 && momentum < 1.0, ErrorCode::InvalidArgument, "momentum must be in [0,1)");
    require(weight_decay >= 0.0, ErrorCode::InvalidArgument, "weight_decay must be nonnegative");
}

LabelMap::LabelMap(std::span<const SequenceRecord> records) {
    for (const SequenceRecord& r : records) {
        to_label_.emplace(r.person_id, 0);
    }
    std::size_t next = 0;
    for (auto& [id, label] : to_label_) {
        label = next++;
    }
}

std::size_t LabelMap::label_of(std::uint32_t person_id) const {
    const auto it = to_label_.find(person_id);
    require(it != to_label_.end(), ErrorCode::InvalidArgument,
            "person id " + std::to_string(person_id) + " has no label");
    return it->second;
}

std::vector<LabeledSequence> LabelMap::labeled(std::span<const SequenceRecord> records) const {
    std::vector<LabeledSequence> out;
    out.reserve(records.size());
    for (const SequenceRecord& r : records) {
        out.push_back({r.frames, label_of(r.person_id)});
    }
    return out;
}

Matrix sample_clip(const Matrix& tracklet, std::size_t clip_length, Rng& rng, std::size_t* start) {
    require(!tracklet.empty() && tracklet.cols() >= 1, ErrorCode::InvalidArgument, "empty tracklet");
    require(clip_length >= 1, ErrorCode::InvalidArgument, "clip_length must be >= 1");
    const std::size_t frames = tracklet.cols();
    if (frames < clip_length) {
        Matrix clip(tracklet.rows(), clip_length);
        for (std::size_t r = 0; r < tracklet.rows(); ++r) {
            for (std::size_t t = 0; t < clip_length; ++t) {
                clip(r, t) = tracklet(r, std::min(t, frames - 1));
            }
        }
        if (start != nullptr) {
            *start = 0;
        }
        return clip;
    }
    const std::size_t first = rng.below(frames - clip_length + 1);
    if (start != nullptr) {
        *start = first;
    }
    return tracklet.columns(first, clip_length);
}

double lr_at_epoch(const TrainConfig& config, std::size_t epoch) {
    require(epoch < config.total_epochs, ErrorCode::InvalidArgument,
            "epoch " + std::to_string(epoch) + " outside [0," + std::to_string(config.total_epochs) + ")");
    return epoch < config.lr_decay_epoch ? config.lr_initial : config.lr_initial * config.lr_decay_factor;
}

void SgdOptimizer::step(GltrNetwork& net, GltrNetwork& grads, double lr) {
    std::vector<ParameterGroup> params = parameter_groups(net);
    std::vector<ParameterGroup> g = parameter_groups(grads);
    require(params.size() == g.size(), ErrorCode::DimensionMismatch, "gradient layout mismatch");
    if (momentum_ > 0.0 && !has_velocity_) {
        velocity_ = GltrNetwork(net.config);
        has_velocity_ = true;
    }
    std::vector<ParameterGroup> vel;
    if (momentum_ > 0.0) {
        vel = parameter_groups(velocity_);
    }
    for (std::size_t gi = 0; gi < params.size(); ++gi) {
        auto theta = params[gi].values;
        auto grad = g[gi].values;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            double step = grad[i] + weight_decay_ * theta[i];
            if (momentum_ > 0.0) {
                double& v = vel[gi].values[i];
                v = momentum_ * v + step;
                step = v;
            }
            theta[i] -= lr * step;
        }
    }
}

std::vector<EpochStats> train(std::span<const LabeledSequence> dataset, GltrNetwork& net,
                              const TrainConfig& config, std::size_t start_epoch,
                              const EpochCallback& on_epoch) {
    config.validate();
    require(!dataset.empty(), ErrorCode::InvalidArgument, "training set is empty");
    std::vector<std::size_t> seen(net.config.num_identities, 0);
    for (const LabeledSequence& s : dataset) {
        require(s.label < net.config.num_identities, ErrorCode::InvalidArgument,
                "label " + std::to_string(s.label) + " exceeds the classifier size");
        require(s.frames.rows() == net.config.frame_dim, ErrorCode::DimensionMismatch,
                "training sequence dimension does not match the network");
        ++seen[s.label];
    }
    require(std::all_of(seen.begin(), seen.end(), [](std::size_t n) { return n > 0; }),
            ErrorCode::InvalidArgument, "every identity needs at least one training tracklet");
    if (net.config.use_dtp && config.clip_length < 2 * net.dtp.receptive_radius() + 1) {
        warn("clip_length " + std::to_string(config.clip_length) +
             " is shorter than the widest pyramid receptive field (" +
             std::to_string(2 * net.dtp.receptive_radius() + 1) + " frames)");
    }

    SgdOptimizer optimizer(config.momentum, config.weight_decay);
    GradientTape tape(net);
    std::vector<EpochStats> log;
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t epoch = start_epoch; epoch < config.total_epochs; ++epoch) {
        Rng rng(mix_seed(config.seed, epoch));
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        const double lr = lr_at_epoch(config, epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, order.size() - first);
            std::vector<Matrix> clips;
            std::vector<std::size_t> labels;
            for (std::size_t k = 0; k < count; ++k) {
                const LabeledSequence& s = dataset[order[first + k]];
                clips.push_back(sample_clip(s.frames, config.clip_length, rng));
                labels.push_back(s.label);
            }
            const BatchOutcome outcome = forward_backward_batch(clips, labels, net, tape, Mode::Training);
            require(std::isfinite(outcome.mean_loss), ErrorCode::Numeric,
                    "training diverged at epoch " + std::to_string(epoch) + ": non-finite loss (lr " +
                        std::to_string(lr) + ")");
            loss_sum += outcome.mean_loss * static_cast<double>(count);
            correct += outcome.correct;
            optimizer.step(net, tape.grads, lr);
        }
        EpochStats stats{epoch, lr, loss_sum / static_cast<double>(dataset.size()),
                         static_cast<double>(correct) / static_cast<double>(dataset.size())};
        log.push_back(stats);
        if (on_epoch) {
            on_epoch(stats);
        }
    }
    return log;
}

std::string training_log_csv(std::span<const EpochStats> log) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,lr,mean_loss,train_accuracy\n";
    for (const EpochStats& s : log) {
        out << s.epoch << ',' << s.lr << ',' << s.mean_loss << ',' << s.train_accuracy << '\n';
    }
    return out.str();
}

} // namespace gltr
