// SPDX-License-Identifier: Apache-2.0
//
// Temporal aggregation network: a dilated temporal pyramid
// (parallel depthwise temporal convolutions, dilations 1, 2, 4, ...), a
// temporal self-attention block with a zero-initialized residual projection,
// temporal average pooling and a linear identity classifier. Forward and
// backward passes are written out by hand.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gltr/tensor.hpp"

namespace gltr {

struct ModelConfig {
    std::size_t frame_dim = 128;
    std::size_t branches = 3;
    std::size_t kernel_width = 3;
    std::size_t alpha = 2;
    std::size_t num_identities = 2;
    bool mask_normalization = true;
    bool use_dtp = true;
    bool use_tsa = true;
    TapAlignment alignment = TapAlignment::Centered;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    // Channel count entering the attention block and leaving the pooling.
    std::size_t embedding_dim() const noexcept { return use_dtp ? branches * frame_dim : frame_dim; }
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DtpLayer {
    std::vector<DepthwiseKernel> branches;
    std::vector<std::size_t> dilations; // 2^(n-1) for branch n = 1..N
    std::size_t input_channels = 0;
    TapAlignment alignment = TapAlignment::Centered;

    DtpLayer() = default;
    DtpLayer(std::size_t input_channels, std::size_t num_branches, std::size_t width,
             TapAlignment alignment = TapAlignment::Centered);

    std::size_t output_channels() const noexcept { return branches.size() * input_channels; }
    // Largest |s - t| for which input frame s can reach output frame t.
    std::size_t receptive_radius() const noexcept;
};

struct Projection {
    Matrix weight; // out x in
    std::vector<double> bias;

    Projection() = default;
    Projection(std::size_t out_channels, std::size_t in_channels)
        : weight(out_channels, in_channels), bias(out_channels, 0.0) {}
};

struct TsaLayer {
    std::size_t channels = 0;
    std::size_t alpha = 2;
    bool normalize_mask = true;
    Projection proj_b;
    BatchNormState bn_b;
    Projection proj_c;
    BatchNormState bn_c;
    Projection proj_f;
    Projection out_proj; // zero at construction

    TsaLayer() = default;
    TsaLayer(std::size_t channels, std::size_t alpha, bool normalize_mask, double bn_eps = 1e-5,
             double bn_momentum = 0.1);

    std::size_t reduced_channels() const noexcept { return channels / alpha; }
};

// T x T frame affinity and its column sums, the per-frame weight each frame
// receives when the attended features are pooled.
struct AttentionMask {
    Matrix m_matrix;
    std::vector<double> m_vector;
};

struct GltrNetwork {
    ModelConfig config;
    DtpLayer dtp;  // empty when config.use_dtp is false
    TsaLayer tsa;  // empty when config.use_tsa is false
    Projection classifier;

    GltrNetwork() = default;
    // All parameters zero except batch-norm defaults.
    explicit GltrNetwork(const ModelConfig& config);
    // Uniform(+-1/sqrt(fan_in)) init; the attention output projection stays zero.
    static GltrNetwork initialized(const ModelConfig& config, std::uint64_t seed);

    std::size_t embedding_dim() const noexcept { return config.embedding_dim(); }
};

template <class T>
struct BasicParameterGroup {
    std::string name;
    std::span<T> values;
};
using ParameterGroup = BasicParameterGroup<double>;
using ConstParameterGroup = BasicParameterGroup<const double>;

// Trainable groups in declaration order. With `include_running_stats` the
// batch-norm running estimates are interleaved after each gamma/beta pair,
// which is the checkpoint layout.
std::vector<ParameterGroup> parameter_groups(GltrNetwork& net, bool include_running_stats = false);
std::vector<ConstParameterGroup> parameter_groups(const GltrNetwork& net,
                                                  bool include_running_stats = false);

// Fills every group, including the attention output projection and the
// running statistics, with random values. Used to build gradient-check
// instances away from the zero-init special case.
void randomize_all_parameters(GltrNetwork& net, std::uint64_t seed);

// Intermediates of a batched forward pass. Clips are laid side by side along
// the column axis so batch norm sees batch x time samples.
struct ForwardCache {
    Mode mode = Mode::Inference;
    std::vector<Matrix> inputs;
    std::vector<std::size_t> offsets;
    Matrix features; // after the pyramid (or the raw input when disabled)
    Matrix pre_b, pre_c;
    BatchNormCache bn_b, bn_c;
    Matrix norm_b, norm_c;
    Matrix keys, queries; // B and C
    Matrix values;        // projected features
    std::vector<Matrix> raw_masks;
    std::vector<Matrix> masks;
    Matrix attended;
    Matrix output; // after the residual update
    Matrix embeddings; // embedding_dim x batch
    Matrix probabilities; // num_identities x batch
};

struct GradientTape {
    GltrNetwork grads; // same shapes as the network
    std::vector<Matrix> input_grads;
    ForwardCache cache;

    GradientTape() = default;
    explicit GradientTape(const GltrNetwork& like) { reset(like); }
    void reset(const GltrNetwork& like);
};

Matrix dtp_forward(const Matrix& frames, const DtpLayer& layer);

struct TsaResult {
    Matrix output;
    AttentionMask mask;
};

// Training mode normalizes with the statistics of `features` and updates the
// running estimates.
TsaResult tsa_forward(const Matrix& features, TsaLayer& layer, Mode mode);
TsaResult tsa_forward(const Matrix& features, const TsaLayer& layer);

std::vector<double> temporal_avg_pool(const Matrix& features);

struct Embedding {
    std::vector<double> vector;
    AttentionMask mask;       // empty without the attention block
    Matrix local_features;    // after the pyramid
    Matrix temporal_features; // after attention
};

Embedding gltr_embed(const Matrix& frames, const GltrNetwork& net);
Embedding gltr_embed(const Matrix& frames, GltrNetwork& net, Mode mode);

std::vector<double> classifier_logits(const GltrNetwork& net, std::span<const double> embedding);

struct BatchOutcome {
    double mean_loss = 0.0;
    std::size_t correct = 0;
};

// Mean cross-entropy over the clips; leaves d(mean loss)/d(theta) in
// `tape.grads` and d(mean loss)/d(clip) in `tape.input_grads`.
BatchOutcome forward_backward_batch(std::span<const Matrix> clips, std::span<const std::size_t> labels,
                                    GltrNetwork& net, GradientTape& tape,
                                    Mode mode = Mode::Training);

double forward_backward(const Matrix& frames, std::size_t label, GltrNetwork& net, GradientTape& tape,
                        Mode mode = Mode::Training);

// Loss with batch norm in inference mode; a pure function of its arguments.
double inference_loss(const GltrNetwork& net, const Matrix& frames, std::size_t label);

// The same loss recomputed with plain loops in extended precision. This is
// the finite-difference side of grad_check: it shares no code with the
// forward pass above, and its rounding noise sits far below the 1e-8 error
// floor even where a gradient is exactly zero.
long double reference_loss(const GltrNetwork& net, const Matrix& frames, std::size_t label);

struct GroupCheck {
    std::string name;
    std::size_t size = 0;
    double max_relative_error = 0.0;
    bool passed = false;
};

struct GradCheckReport {
    double step = 0.0;
    double tolerance = 0.0;
    std::vector<GroupCheck> groups;

    bool passed() const;
    const GroupCheck& group(const std::string& name) const;
};

using AnalyticGradient =
    std::function<void(GltrNetwork& net, const Matrix& frames, std::size_t label, GradientTape& tape)>;

// Central differences against the analytic backward pass, batch norm held in
// inference mode. Error per element is |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(const GltrNetwork& net, const Matrix& frames, std::size_t label,
                           double step, double tolerance, const AnalyticGradient& analytic = {});

// Binary checkpoint ("GLTR" + version + hyperparameters + parameter groups).
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    GltrNetwork network;
    std::uint32_t epochs_completed = 0;
};

std::vector<std::uint8_t> serialize_checkpoint(const GltrNetwork& net, std::uint32_t epochs_completed);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const GltrNetwork& net,
                     std::uint32_t epochs_completed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace gltr
