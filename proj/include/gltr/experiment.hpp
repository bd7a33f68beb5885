// SPDX-License-Identifier: Apache-2.0
//
// JSON-configured experiments: benchmark generation, training, evaluation,
// attention traces and gradient checks. Each command writes only under the
// configured output directory, and (config, seed, input files) determine its
// outputs byte for byte.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gltr/eval.hpp"
#include "gltr/model.hpp"
#include "gltr/synth.hpp"
#include "gltr/trainer.hpp"

namespace gltr {

struct DataConfig {
    BenchmarkConfig benchmark;
    // Feature files; a split whose path is empty is generated from `benchmark`.
    std::string train_features;
    std::string query_features;
    std::string gallery_features;
};

struct TraceConfig {
    // Source tracklet: record `index` of `features`, or, when no file is
    // given, a fresh benchmark tracklet of `identity` with an occlusion
    // window of `occluded_frames` frames.
    std::string features;
    std::size_t index = 0;
    std::size_t identity = 0;
    std::size_t occluded_frames = 0;
};

struct GradcheckConfig {
    std::size_t frame_dim = 8;
    std::size_t length = 12;
    std::size_t branches = 3;
    std::size_t kernel_width = 3;
    std::size_t identities = 5;
    bool mask_normalization = true;
    double step = 1e-4;
    double tolerance = 1e-5;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "gltr_out";
    std::size_t threads = 1;
    // frame_dim and num_identities are taken from the data.
    ModelConfig model;
    TrainConfig train; // train.seed is replaced by `seed`
    std::string resume_from;
    // Checkpoint read by eval and trace; defaults to <out_dir>/checkpoint.gltr.
    std::string checkpoint;
    DataConfig data;
    EvalProtocol protocol;
    std::string embeddings_out;
    TraceConfig trace;
    GradcheckConfig gradcheck;

    void validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig parse_experiment_config(std::string_view json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string experiment_config_json(const ExperimentConfig& config);

struct GenResult {
    std::vector<std::filesystem::path> files;
    std::size_t train_records = 0;
    std::size_t query_records = 0;
    std::size_t gallery_records = 0;
};

struct TrainResult {
    std::filesystem::path checkpoint;
    std::vector<EpochStats> log;
    std::size_t start_epoch = 0;
};

struct TraceResult {
    std::vector<double> pca_input;    // pca(F)
    std::vector<double> pca_local;    // pca(F')
    std::vector<double> pca_temporal; // pca(F'')
    AttentionMask mask;
    std::vector<double> embedding;
    std::size_t occlusion_start = 0;
    std::size_t occlusion_end = 0;
};

GenResult run_gen(const ExperimentConfig& config);
TrainResult run_train(const ExperimentConfig& config, const EpochCallback& on_epoch = {});
EvalReport run_eval(const ExperimentConfig& config);
TraceResult run_trace(const ExperimentConfig& config);
GradCheckReport run_gradcheck(const ExperimentConfig& config);

std::string eval_report_json(const EvalReport& report);
std::string gradcheck_report_json(const GradCheckReport& report);

// Seed of the initial weights, kept apart from the per-epoch streams.
std::uint64_t init_seed(std::uint64_t seed);

} // namespace gltr
