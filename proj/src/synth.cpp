// SPDX-License-Identifier: Apache-2.0
#include "gltr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "binary_io.hpp"
#include "gltr/error.hpp"
#include "gltr/rng.hpp"

namespace gltr {

void TrackletSpec::validate() const {
    const std::size_t d = appearance.size();
    require(length >= 1, ErrorCode::InvalidArgument, "tracklet length must be >= 1");
    require(d >= 1, ErrorCode::InvalidArgument, "appearance must be non-empty");
    require(motion.direction.size() == d, ErrorCode::DimensionMismatch,
            "motion direction length differs from appearance");
    require(noise_sigma >= 0.0, ErrorCode::InvalidArgument, "noise_sigma must be nonnegative");
    double norm = 0.0;
    for (double v : motion.direction) {
        norm += v * v;
    }
    require(std::abs(std::sqrt(norm) - 1.0) < 1e-9, ErrorCode::InvalidArgument,
            "motion direction must have unit norm");
    std::vector<const Occlusion*> sorted;
    for (const Occlusion& o : occlusions) {
        require(o.start < o.end && o.end <= length, ErrorCode::InvalidArgument,
                "occlusion interval [" + std::to_string(o.start) + "," + std::to_string(o.end) +
                    ") is not inside [0," + std::to_string(length) + ")");
        require(o.occluder.size() == d, ErrorCode::DimensionMismatch,
                "occluder length differs from appearance");
        sorted.push_back(&o);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const Occlusion* a, const Occlusion* b) { return a->start < b->start; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        require(sorted[i]->start >= sorted[i - 1]->end, ErrorCode::InvalidArgument,
                "occlusion intervals overlap");
    }
}

Matrix render_tracklet(const TrackletSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::size_t d = spec.appearance.size();
    const CounterNormal noise(seed);
    Matrix frames(d, spec.length);
    for (std::size_t t = 0; t < spec.length; ++t) {
        const Occlusion* occ = nullptr;
        for (const Occlusion& o : spec.occlusions) {
            if (t >= o.start && t < o.end) {
                occ = &o;
            }
        }
        const double wave = spec.motion.amplitude *
                            std::sin(2.0 * std::numbers::pi * spec.motion.frequency * static_cast<double>(t) +
                                     spec.motion.phase);
        for (std::size_t c = 0; c < d; ++c) {
            const double base =
                occ != nullptr ? occ->occluder[c] : spec.appearance[c] + wave * spec.motion.direction[c];
            const double eps = spec.noise_sigma > 0.0 ? spec.noise_sigma * noise(t * d + c) : 0.0;
            frames(c, t) = base + eps;
        }
    }
    return frames;
}

void BenchmarkConfig::validate() const {
    require(num_identities >= 2, ErrorCode::InvalidArgument, "need at least 2 identities");
    require(cameras >= 1, ErrorCode::InvalidArgument, "need at least 1 camera");
    require(tracklets_per_id_per_cam >= 1, ErrorCode::InvalidArgument,
            "need at least 1 test tracklet per identity and camera");
    require(frame_dim >= 1 && length >= 1, ErrorCode::InvalidArgument, "frame_dim and length must be >= 1");
    require(lookalike_fraction >= 0.0 && lookalike_fraction <= 1.0, ErrorCode::InvalidArgument,
            "lookalike_fraction must be in [0,1]");
    require(appearance_similarity >= -1.0 && appearance_similarity <= 1.0, ErrorCode::InvalidArgument,
            "appearance_similarity must be in [-1,1]");
    require(noise_sigma >= 0.0 && camera_shift_sigma >= 0.0 && appearance_sigma > 0.0,
            ErrorCode::InvalidArgument, "sigmas must be nonnegative");
    require(occlusion_probability >= 0.0 && occlusion_probability <= 1.0, ErrorCode::InvalidArgument,
            "occlusion_probability must be in [0,1]");
    require(occlusion_fraction >= 0.0 && occlusion_fraction < 1.0, ErrorCode::InvalidArgument,
            "occlusion_fraction must be in [0,1)");
}

namespace {

std::vector<double> gaussian_vector(Rng& rng, std::size_t d, double sigma) {
    std::vector<double> v(d);
    for (double& x : v) {
        x = sigma * rng.normal();
    }
    return v;
}

std::vector<double> unit_vector(Rng& rng, std::size_t d) {
    std::vector<double> v = gaussian_vector(rng, d, 1.0);
    double norm = 0.0;
    for (double x : v) {
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) {
        x /= norm;
    }
    return v;
}

// Vector with the same norm as `base` and cosine similarity `similarity`.
std::vector<double> lookalike_of(const std::vector<double>& base, double similarity, Rng& rng) {
    std::vector<double> other = gaussian_vector(rng, base.size(), 1.0);
    double base_sq = 0.0;
    double dot = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        base_sq += base[i] * base[i];
        dot += base[i] * other[i];
    }
    double other_sq = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        other[i] -= dot / base_sq * base[i];
        other_sq += other[i] * other[i];
    }
    const double base_norm = std::sqrt(base_sq);
    const double scale = other_sq > 0.0 ? base_norm / std::sqrt(other_sq) : 0.0;
    const double ortho = std::sqrt(std::max(0.0, 1.0 - similarity * similarity));
    std::vector<double> out(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        out[i] = similarity * base[i] + ortho * scale * other[i];
    }
    return out;
}

} // namespace

TrackletSpec sample_tracklet_spec(const Benchmark& benchmark, const BenchmarkConfig& config,
                                  std::size_t identity, std::uint32_t camera_id,
                                  std::size_t occluded_frames, std::uint64_t seed) {
    require(identity < benchmark.identity_templates.size(), ErrorCode::InvalidArgument,
            "identity out of range");
    require(occluded_frames < config.length, ErrorCode::InvalidArgument,
            "occlusion must leave at least one clean frame");
    Rng rng(seed);
    TrackletSpec spec = benchmark.identity_templates[identity];
    spec.camera_id = camera_id;
    spec.motion.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (occluded_frames > 0) {
        const std::size_t start = rng.below(config.length - occluded_frames + 1);
        spec.occlusions.push_back({start, start + occluded_frames, benchmark.occluder});
    }
    return spec;
}

Benchmark generate_benchmark(const BenchmarkConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t d = config.frame_dim;
    Rng rng(mix_seed(seed, 1));
    Benchmark out;

    std::vector<std::vector<double>> camera_shift;
    for (std::size_t c = 0; c < config.cameras; ++c) {
        camera_shift.push_back(gaussian_vector(rng, d, config.camera_shift_sigma));
    }
    out.occluder = gaussian_vector(rng, d, config.occluder_sigma);

    const std::size_t paired = 2 * static_cast<std::size_t>(std::floor(
                                       config.lookalike_fraction * static_cast<double>(config.num_identities) / 2.0));
    for (std::size_t id = 0; id < config.num_identities; ++id) {
        TrackletSpec spec;
        spec.person_id = static_cast<std::uint32_t>(id);
        spec.length = config.length;
        spec.noise_sigma = config.noise_sigma;
        spec.motion.amplitude = config.amplitude;
        if (id < paired && id % 2 == 1) {
            // Second member of a look-alike pair: same direction, faster motion.
            const TrackletSpec& twin = out.identity_templates[id - 1];
            spec.appearance = lookalike_of(twin.appearance, config.appearance_similarity, rng);
            spec.motion.direction = twin.motion.direction;
            spec.motion.frequency = config.high_frequency;
        } else {
            spec.appearance = gaussian_vector(rng, d, config.appearance_sigma);
            spec.motion.direction = unit_vector(rng, d);
            spec.motion.frequency = id < paired ? config.low_frequency
                                                : rng.uniform(config.low_frequency, config.high_frequency);
        }
        out.identity_templates.push_back(std::move(spec));
    }

    const auto occluded_frames = static_cast<std::size_t>(
        std::round(config.occlusion_fraction * static_cast<double>(config.length)));
    std::uint64_t tracklet_counter = 0;
    auto make = [&](std::size_t id, std::size_t cam) {
        const std::uint64_t tracklet_seed = mix_seed(seed, 1000 + tracklet_counter++);
        const bool occluded = occluded_frames > 0 && rng.uniform() < config.occlusion_probability;
        TrackletSpec spec = sample_tracklet_spec(out, config, id, static_cast<std::uint32_t>(cam + 1),
                                                 occluded ? occluded_frames : 0, tracklet_seed);
        for (std::size_t c = 0; c < d; ++c) {
            spec.appearance[c] += camera_shift[cam][c];
        }
        return SequenceRecord{spec.person_id, spec.camera_id, render_tracklet(spec, mix_seed(tracklet_seed, 7))};
    };

    for (std::size_t id = 0; id < config.num_identities; ++id) {
        for (std::size_t cam = 0; cam < config.cameras; ++cam) {
            for (std::size_t k = 0; k < config.train_tracklets_per_id_per_cam; ++k) {
                out.train.push_back(make(id, cam));
            }
            for (std::size_t k = 0; k < config.tracklets_per_id_per_cam; ++k) {
                SequenceRecord rec = make(id, cam);
                if (cam == 0 && k == 0) {
                    out.query.push_back(std::move(rec));
                } else {
                    out.gallery.push_back(std::move(rec));
                }
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> encode_features(std::uint32_t dim, std::span<const SequenceRecord> records) {
    require(dim >= 1, ErrorCode::InvalidArgument, "feature dimension must be >= 1");
    detail::ByteWriter w;
    w.magic("GLFV");
    w.u32(kFeatureFileVersion);
    w.u32(dim);
    for (const SequenceRecord& r : records) {
        require(r.frames.rows() == dim, ErrorCode::DimensionMismatch,
                "record has " + std::to_string(r.frames.rows()) + " channels, file has " +
                    std::to_string(dim));
        require(r.frames.cols() <= UINT32_MAX, ErrorCode::InvalidArgument, "sequence too long");
        w.u32(r.person_id);
        w.u32(r.camera_id);
        w.u32(static_cast<std::uint32_t>(r.frames.cols()));
        for (std::size_t t = 0; t < r.frames.cols(); ++t) {
            for (std::size_t c = 0; c < dim; ++c) {
                w.f64(r.frames(c, t));
            }
        }
    }
    return w.release();
}

FeatureFile decode_features(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "feature file");
    r.expect_magic("GLFV");
    const std::uint32_t version = r.u32();
    require(version == kFeatureFileVersion, ErrorCode::Format,
            "feature file version " + std::to_string(version) + " is not supported");
    FeatureFile file;
    file.dim = r.u32();
    require(file.dim >= 1, ErrorCode::Format, "feature file declares d = 0");
    while (!r.at_end()) {
        SequenceRecord rec;
        rec.person_id = r.u32();
        rec.camera_id = r.u32();
        const std::uint32_t frames = r.u32();
        require(frames >= 1, ErrorCode::Format, "feature record with zero frames");
        require(r.remaining() / 8 / file.dim >= frames, ErrorCode::Format, "feature file: truncated");
        rec.frames = Matrix(file.dim, frames);
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t c = 0; c < file.dim; ++c) {
                rec.frames(c, t) = r.f64();
            }
        }
        file.records.push_back(std::move(rec));
    }
    return file;
}

void write_features(const std::filesystem::path& path, std::uint32_t dim,
                    std::span<const SequenceRecord> records) {
    detail::write_file(path, encode_features(dim, records));
}

FeatureFile read_features(const std::filesystem::path& path) {
    return decode_features(detail::read_file(path));
}

FeatureFile read_features(const std::filesystem::path& path, std::uint32_t expected_dim) {
    FeatureFile file = read_features(path);
    require(file.dim == expected_dim, ErrorCode::DimensionMismatch,
            path.string() + " has d = " + std::to_string(file.dim) + ", expected " +
                std::to_string(expected_dim));
    return file;
}

} // namespace gltr
