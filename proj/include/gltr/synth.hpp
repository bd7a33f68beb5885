// SPDX-License-Identifier: Apache-2.0
//
// Synthetic frame-feature tracklets. Each frame is an identity appearance
// vector plus a sinusoidal motion component along a per-identity direction,
// plus Gaussian noise; occluded frames are replaced by an occluder vector.
// Look-alike identity pairs share appearance and direction and differ only in
// motion frequency, so only temporal structure tells them apart.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gltr/tensor.hpp"

namespace gltr {

struct Occlusion {
    std::size_t start = 0; // first occluded frame
    std::size_t end = 0;   // one past the last occluded frame
    std::vector<double> occluder;
};

struct MotionPattern {
    double frequency = 0.0; // cycles per frame
    double phase = 0.0;
    double amplitude = 0.0;
    std::vector<double> direction; // unit norm
};

struct TrackletSpec {
    std::uint32_t person_id = 0;
    std::uint32_t camera_id = 0;
    std::size_t length = 0;
    std::vector<double> appearance;
    MotionPattern motion;
    double noise_sigma = 0.0;
    std::vector<Occlusion> occlusions;

    void validate() const;
};

// d x T frames; a pure function of (spec, seed).
Matrix render_tracklet(const TrackletSpec& spec, std::uint64_t seed);

struct SequenceRecord {
    std::uint32_t person_id = 0;
    std::uint32_t camera_id = 0;
    Matrix frames; // d x T

    friend bool operator==(const SequenceRecord&, const SequenceRecord&) = default;
};

struct BenchmarkConfig {
    std::size_t num_identities = 20;
    std::size_t cameras = 2;
    std::size_t tracklets_per_id_per_cam = 2;       // test split
    std::size_t train_tracklets_per_id_per_cam = 2; // train split
    std::size_t frame_dim = 16;
    std::size_t length = 32;
    // Fraction of identities placed in look-alike pairs.
    double lookalike_fraction = 1.0;
    // Cosine similarity between the appearances of a look-alike pair.
    double appearance_similarity = 1.0;
    double appearance_sigma = 1.0;
    double low_frequency = 0.05;
    double high_frequency = 0.15;
    double amplitude = 1.0;
    double noise_sigma = 0.1;
    double camera_shift_sigma = 0.0;
    // Probability that a tracklet carries one occlusion window.
    double occlusion_probability = 0.0;
    double occlusion_fraction = 0.25;
    double occluder_sigma = 1.0;

    void validate() const;
};

struct Benchmark {
    std::vector<SequenceRecord> train;
    std::vector<SequenceRecord> query;
    std::vector<SequenceRecord> gallery;
    std::vector<TrackletSpec> identity_templates; // one per identity, phase 0, no occlusion
    std::vector<double> occluder;                 // shared by every occluded tracklet
};

// Camera ids are 1-based. Queries are the first test tracklet of every
// identity in camera 1; the gallery is every other test tracklet.
Benchmark generate_benchmark(const BenchmarkConfig& config, std::uint64_t seed);

// Builds a fresh tracklet of a benchmark identity with a random phase and an
// optional occlusion window of `occluded_frames` frames at a random start.
TrackletSpec sample_tracklet_spec(const Benchmark& benchmark, const BenchmarkConfig& config,
                                  std::size_t identity, std::uint32_t camera_id,
                                  std::size_t occluded_frames, std::uint64_t seed);

// Binary feature file, little-endian: "GLFV", u32 version, u32 d, then per
// record u32 person_id, u32 camera_id, u32 T and T frames of d reals.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct FeatureFile {
    std::uint32_t dim = 0;
    std::vector<SequenceRecord> records;
};

std::vector<std::uint8_t> encode_features(std::uint32_t dim, std::span<const SequenceRecord> records);
FeatureFile decode_features(std::span<const std::uint8_t> bytes);
void write_features(const std::filesystem::path& path, std::uint32_t dim,
                    std::span<const SequenceRecord> records);
FeatureFile read_features(const std::filesystem::path& path);
// Rejects files whose header dimension differs from `expected_dim`.
FeatureFile read_features(const std::filesystem::path& path, std::uint32_t expected_dim);

} // namespace gltr
