// SPDX-License-Identifier: Apache-2.0
#include "gltr/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "gltr/error.hpp"
#include "gltr/rng.hpp"

namespace gltr {

namespace {

Matrix row_block(const Matrix& m, std::size_t first, std::size_t count) {
    Matrix out(count, m.cols());
    for (std::size_t r = 0; r < count; ++r) {
        std::copy(m.row(first + r).begin(), m.row(first + r).end(), out.row(r).begin());
    }
    return out;
}

void add_row_sums(const Matrix& m, std::span<double> acc) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        acc[r] += std::accumulate(row.begin(), row.end(), 0.0);
    }
}

AttentionMask make_mask(Matrix m) {
    AttentionMask mask;
    mask.m_vector.assign(m.cols(), 0.0);
    for (std::size_t s = 0; s < m.rows(); ++s) {
        for (std::size_t t = 0; t < m.cols(); ++t) {
            mask.m_vector[t] += m(s, t);
        }
    }
    mask.m_matrix = std::move(m);
    return mask;
}

} // namespace

void ModelConfig::validate() const {
    require(frame_dim > 0, ErrorCode::InvalidArgument, "frame_dim must be positive");
    require(branches > 0, ErrorCode::InvalidArgument, "branches must be positive");
    require(branches <= 16, ErrorCode::InvalidArgument, "more than 16 branches is not supported");
    require(kernel_width % 2 == 1, ErrorCode::InvalidArgument, "kernel_width must be odd");
    require(alpha > 0, ErrorCode::InvalidArgument, "alpha must be positive");
    require(num_identities > 0, ErrorCode::InvalidArgument, "num_identities must be positive");
    if (use_tsa) {
        require(embedding_dim() % alpha == 0, ErrorCode::InvalidArgument,
                "alpha must divide the attention channel count " + std::to_string(embedding_dim()));
    }
    require(bn_eps > 0.0, ErrorCode::InvalidArgument, "bn_eps must be positive");
    require(bn_momentum > 0.0 && bn_momentum < 1.0, ErrorCode::InvalidArgument,
            "bn_momentum must be in (0,1)");
}

DtpLayer::DtpLayer(std::size_t channels, std::size_t num_branches, std::size_t width,
                   TapAlignment align)
    : input_channels(channels), alignment(align) {
    require(channels > 0 && num_branches > 0, ErrorCode::InvalidArgument,
            "pyramid needs channels and branches");
    for (std::size_t n = 0; n < num_branches; ++n) {
        branches.emplace_back(channels, width);
        dilations.push_back(std::size_t{1} << n);
    }
}

std::size_t DtpLayer::receptive_radius() const noexcept {
    if (branches.empty()) {
        return 0;
    }
    const std::size_t w = branches.front().width();
    const std::size_t reach = alignment == TapAlignment::Centered ? (w - 1) / 2 : w;
    return dilations.back() * reach;
}

TsaLayer::TsaLayer(std::size_t c, std::size_t a, bool normalize, double bn_eps, double bn_momentum)
    : channels(c), alpha(a), normalize_mask(normalize) {
    require(a > 0 && c % a == 0, ErrorCode::InvalidArgument,
            "alpha must divide the attention channel count");
    const std::size_t reduced = c / a;
    proj_b = Projection(reduced, c);
    bn_b = BatchNormState(reduced, bn_eps, bn_momentum);
    proj_c = Projection(reduced, c);
    bn_c = BatchNormState(reduced, bn_eps, bn_momentum);
    proj_f = Projection(reduced, c);
    out_proj = Projection(c, reduced);
}

GltrNetwork::GltrNetwork(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    if (config.use_dtp) {
        dtp = DtpLayer(config.frame_dim, config.branches, config.kernel_width, config.alignment);
    }
    if (config.use_tsa) {
        tsa = TsaLayer(config.embedding_dim(), config.alpha, config.mask_normalization, config.bn_eps,
                       config.bn_momentum);
    }
    classifier = Projection(config.num_identities, config.embedding_dim());
}

GltrNetwork GltrNetwork::initialized(const ModelConfig& cfg, std::uint64_t seed) {
    GltrNetwork net(cfg);
    Rng rng(seed);
    auto fill_uniform = [&](std::span<double> values, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : values) {
            v = rng.uniform(-bound, bound);
        }
    };
    for (DepthwiseKernel& k : net.dtp.branches) {
        fill_uniform(k.taps.values(), k.width());
    }
    if (cfg.use_tsa) {
        for (Projection* p : {&net.tsa.proj_b, &net.tsa.proj_c, &net.tsa.proj_f}) {
            fill_uniform(p->weight.values(), p->weight.cols());
            fill_uniform(p->bias, p->weight.cols());
        }
    }
    fill_uniform(net.classifier.weight.values(), net.classifier.weight.cols());
    fill_uniform(net.classifier.bias, net.classifier.weight.cols());
    return net;
}

namespace {

template <class Net, class T>
std::vector<BasicParameterGroup<T>> collect_groups(Net& net, bool include_running_stats) {
    std::vector<BasicParameterGroup<T>> groups;
    auto add = [&](std::string name, auto&& values) {
        groups.push_back({std::move(name), std::span<T>(values.data(), values.size())});
    };
    for (std::size_t n = 0; n < net.dtp.branches.size(); ++n) {
        add("dtp.branch" + std::to_string(n) + ".taps", net.dtp.branches[n].taps.values());
    }
    if (net.config.use_tsa) {
        auto add_path = [&](const std::string& proj, auto& p, const std::string& bn, auto& state) {
            add("tsa." + proj + ".weight", p.weight.values());
            add("tsa." + proj + ".bias", p.bias);
            add("tsa." + bn + ".gamma", state.gamma);
            add("tsa." + bn + ".beta", state.beta);
            if (include_running_stats) {
                add("tsa." + bn + ".running_mean", state.running_mean);
                add("tsa." + bn + ".running_var", state.running_var);
            }
        };
        add_path("proj_b", net.tsa.proj_b, "bn_b", net.tsa.bn_b);
        add_path("proj_c", net.tsa.proj_c, "bn_c", net.tsa.bn_c);
        add("tsa.proj_f.weight", net.tsa.proj_f.weight.values());
        add("tsa.proj_f.bias", net.tsa.proj_f.bias);
        add("tsa.out_proj.weight", net.tsa.out_proj.weight.values());
        add("tsa.out_proj.bias", net.tsa.out_proj.bias);
    }
    add("classifier.weight", net.classifier.weight.values());
    add("classifier.bias", net.classifier.bias);
    return groups;
}

} // namespace

std::vector<ParameterGroup> parameter_groups(GltrNetwork& net, bool include_running_stats) {
    return collect_groups<GltrNetwork, double>(net, include_running_stats);
}

std::vector<ConstParameterGroup> parameter_groups(const GltrNetwork& net, bool include_running_stats) {
    return collect_groups<const GltrNetwork, const double>(net, include_running_stats);
}

void randomize_all_parameters(GltrNetwork& net, std::uint64_t seed) {
    Rng rng(seed);
    for (ParameterGroup& g : parameter_groups(net, true)) {
        const bool positive = g.name.ends_with(".gamma") || g.name.ends_with(".running_var");
        for (double& v : g.values) {
            v = positive ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5);
        }
    }
}

void GradientTape::reset(const GltrNetwork& like) {
    if (!(grads.config == like.config) || grads.classifier.weight.empty()) {
        grads = GltrNetwork(like.config);
    }
    for (ParameterGroup& g : parameter_groups(grads)) {
        std::fill(g.values.begin(), g.values.end(), 0.0);
    }
    input_grads.clear();
}

Matrix dtp_forward(const Matrix& frames, const DtpLayer& layer) {
    require(!layer.branches.empty(), ErrorCode::InvalidArgument, "pyramid has no branches");
    require(frames.rows() == layer.input_channels, ErrorCode::DimensionMismatch,
            "pyramid expects " + std::to_string(layer.input_channels) + " channels, got " +
                std::to_string(frames.rows()));
    const std::size_t d = layer.input_channels;
    Matrix out(layer.output_channels(), frames.cols());
    for (std::size_t n = 0; n < layer.branches.size(); ++n) {
        const Matrix branch =
            depthwise_dilated_conv(frames, layer.branches[n], layer.dilations[n], layer.alignment);
        for (std::size_t c = 0; c < d; ++c) {
            std::copy(branch.row(c).begin(), branch.row(c).end(), out.row(n * d + c).begin());
        }
    }
    return out;
}

namespace {

struct TsaPass {
    Matrix pre_b, pre_c;
    BatchNormCache bn_b, bn_c;
    Matrix norm_b, norm_c;
    Matrix keys, queries, values;
    std::vector<Matrix> raw_masks, masks;
    Matrix attended, output;
};

// Attention over a side-by-side batch; `offsets` / `lengths` delimit clips.
TsaPass run_tsa(const Matrix& features, const TsaLayer& layer, Mode mode,
                std::span<const std::size_t> offsets, std::span<const std::size_t> lengths) {
    require(features.rows() == layer.channels, ErrorCode::DimensionMismatch,
            "attention expects " + std::to_string(layer.channels) + " channels, got " +
                std::to_string(features.rows()));
    TsaPass p;
    p.pre_b = pointwise_conv(features, layer.proj_b.weight, layer.proj_b.bias);
    p.norm_b = batchnorm_forward(p.pre_b, layer.bn_b, mode, &p.bn_b);
    p.keys = relu(p.norm_b);
    p.pre_c = pointwise_conv(features, layer.proj_c.weight, layer.proj_c.bias);
    p.norm_c = batchnorm_forward(p.pre_c, layer.bn_c, mode, &p.bn_c);
    p.queries = relu(p.norm_c);
    p.values = pointwise_conv(features, layer.proj_f.weight, layer.proj_f.bias);
    p.attended = Matrix(layer.reduced_channels(), features.cols());
    for (std::size_t k = 0; k < offsets.size(); ++k) {
        const Matrix b = p.keys.columns(offsets[k], lengths[k]);
        const Matrix c = p.queries.columns(offsets[k], lengths[k]);
        // M[i,j] = <C[:,i], B[:,j]>
        Matrix raw = matmul_tn(c, b);
        Matrix mask = layer.normalize_mask ? row_softmax(raw) : raw;
        // Column t of the result mixes value columns with the weights in row t.
        p.attended.set_columns(offsets[k], matmul_nt(p.values.columns(offsets[k], lengths[k]), mask));
        p.raw_masks.push_back(std::move(raw));
        p.masks.push_back(std::move(mask));
    }
    p.output = pointwise_conv(p.attended, layer.out_proj.weight, layer.out_proj.bias);
    p.output += features;
    return p;
}

void forward_into(const GltrNetwork& net, std::span<const Matrix> clips, Mode mode, ForwardCache& cache) {
    require(!clips.empty(), ErrorCode::InvalidArgument, "empty batch");
    const ModelConfig& cfg = net.config;
    cache.mode = mode;
    cache.inputs.assign(clips.begin(), clips.end());
    cache.offsets.clear();
    std::vector<std::size_t> lengths;
    std::vector<Matrix> features;
    std::size_t at = 0;
    for (const Matrix& clip : clips) {
        require(clip.rows() == cfg.frame_dim, ErrorCode::DimensionMismatch,
                "sequence has " + std::to_string(clip.rows()) + " channels, network expects " +
                    std::to_string(cfg.frame_dim));
        cache.offsets.push_back(at);
        lengths.push_back(clip.cols());
        at += clip.cols();
        features.push_back(cfg.use_dtp ? dtp_forward(clip, net.dtp) : clip);
    }
    cache.features = hconcat(features);

    if (cfg.use_tsa) {
        TsaPass p = run_tsa(cache.features, net.tsa, mode, cache.offsets, lengths);
        cache.pre_b = std::move(p.pre_b);
        cache.pre_c = std::move(p.pre_c);
        cache.bn_b = std::move(p.bn_b);
        cache.bn_c = std::move(p.bn_c);
        cache.norm_b = std::move(p.norm_b);
        cache.norm_c = std::move(p.norm_c);
        cache.keys = std::move(p.keys);
        cache.queries = std::move(p.queries);
        cache.values = std::move(p.values);
        cache.raw_masks = std::move(p.raw_masks);
        cache.masks = std::move(p.masks);
        cache.attended = std::move(p.attended);
        cache.output = std::move(p.output);
    } else {
        cache.masks.clear();
        cache.raw_masks.clear();
        cache.output = cache.features;
    }

    const std::size_t dim = cfg.embedding_dim();
    cache.embeddings = Matrix(dim, clips.size());
    cache.probabilities = Matrix(cfg.num_identities, clips.size());
    for (std::size_t k = 0; k < clips.size(); ++k) {
        const std::vector<double> e = temporal_avg_pool(cache.output.columns(cache.offsets[k], lengths[k]));
        std::vector<double> logits = classifier_logits(net, e);
        const double peak = *std::max_element(logits.begin(), logits.end());
        double total = 0.0;
        for (double& z : logits) {
            z = std::exp(z - peak);
            total += z;
        }
        for (std::size_t r = 0; r < dim; ++r) {
            cache.embeddings(r, k) = e[r];
        }
        for (std::size_t i = 0; i < logits.size(); ++i) {
            cache.probabilities(i, k) = logits[i] / total;
        }
    }
}

double cross_entropy(const GltrNetwork& net, std::span<const double> embedding, std::size_t label) {
    const std::vector<double> logits = classifier_logits(net, embedding);
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double z : logits) {
        total += std::exp(z - peak);
    }
    return peak + std::log(total) - logits[label];
}

} // namespace

TsaResult tsa_forward(const Matrix& features, TsaLayer& layer, Mode mode) {
    const std::size_t offsets[] = {0};
    const std::size_t lengths[] = {features.cols()};
    TsaPass p = run_tsa(features, layer, mode, offsets, lengths);
    if (mode == Mode::Training) {
        batchnorm_update_running(layer.bn_b, p.bn_b);
        batchnorm_update_running(layer.bn_c, p.bn_c);
    }
    return {std::move(p.output), make_mask(std::move(p.masks.front()))};
}

TsaResult tsa_forward(const Matrix& features, const TsaLayer& layer) {
    const std::size_t offsets[] = {0};
    const std::size_t lengths[] = {features.cols()};
    TsaPass p = run_tsa(features, layer, Mode::Inference, offsets, lengths);
    return {std::move(p.output), make_mask(std::move(p.masks.front()))};
}

std::vector<double> temporal_avg_pool(const Matrix& features) {
    std::vector<double> out(features.rows(), 0.0);
    const double inv = 1.0 / static_cast<double>(features.cols());
    for (std::size_t r = 0; r < features.rows(); ++r) {
        const auto row = features.row(r);
        out[r] = std::accumulate(row.begin(), row.end(), 0.0) * inv;
    }
    return out;
}

std::vector<double> classifier_logits(const GltrNetwork& net, std::span<const double> embedding) {
    const Matrix& w = net.classifier.weight;
    require(embedding.size() == w.cols(), ErrorCode::DimensionMismatch,
            "embedding length does not match classifier");
    std::vector<double> logits(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const auto row = w.row(i);
        logits[i] = std::inner_product(row.begin(), row.end(), embedding.begin(), net.classifier.bias[i]);
    }
    return logits;
}

namespace {

Embedding embed_impl(const Matrix& frames, const GltrNetwork& net, Mode mode, ForwardCache& cache) {
    forward_into(net, std::span<const Matrix>(&frames, 1), mode, cache);
    Embedding e;
    e.vector = cache.embeddings.column(0);
    if (net.config.use_tsa) {
        e.mask = make_mask(cache.masks.front());
    }
    e.local_features = cache.features;
    e.temporal_features = cache.output;
    return e;
}

} // namespace

Embedding gltr_embed(const Matrix& frames, const GltrNetwork& net) {
    ForwardCache cache;
    return embed_impl(frames, net, Mode::Inference, cache);
}

Embedding gltr_embed(const Matrix& frames, GltrNetwork& net, Mode mode) {
    ForwardCache cache;
    Embedding e = embed_impl(frames, net, mode, cache);
    if (mode == Mode::Training && net.config.use_tsa) {
        batchnorm_update_running(net.tsa.bn_b, cache.bn_b);
        batchnorm_update_running(net.tsa.bn_c, cache.bn_c);
    }
    return e;
}

BatchOutcome forward_backward_batch(std::span<const Matrix> clips, std::span<const std::size_t> labels,
                                    GltrNetwork& net, GradientTape& tape, Mode mode) {
    require(clips.size() == labels.size(), ErrorCode::DimensionMismatch, "one label per clip");
    const ModelConfig& cfg = net.config;
    for (std::size_t label : labels) {
        require(label < cfg.num_identities, ErrorCode::InvalidArgument,
                "label " + std::to_string(label) + " out of range for " +
                    std::to_string(cfg.num_identities) + " identities");
    }
    tape.reset(net);
    ForwardCache& cache = tape.cache;
    forward_into(net, clips, mode, cache);

    const std::size_t batch = clips.size();
    const double inv_batch = 1.0 / static_cast<double>(batch);
    BatchOutcome outcome;
    GltrNetwork& g = tape.grads;

    Matrix d_output(cfg.embedding_dim(), cache.output.cols());
    for (std::size_t k = 0; k < batch; ++k) {
        const std::vector<double> e = cache.embeddings.column(k);
        outcome.mean_loss += cross_entropy(net, e, labels[k]) * inv_batch;

        std::size_t best = 0;
        for (std::size_t i = 1; i < cfg.num_identities; ++i) {
            if (cache.probabilities(i, k) > cache.probabilities(best, k)) {
                best = i;
            }
        }
        outcome.correct += best == labels[k] ? 1 : 0;

        std::vector<double> d_logits(cfg.num_identities);
        for (std::size_t i = 0; i < cfg.num_identities; ++i) {
            d_logits[i] = (cache.probabilities(i, k) - (i == labels[k] ? 1.0 : 0.0)) * inv_batch;
        }
        std::vector<double> d_embed(cfg.embedding_dim(), 0.0);
        for (std::size_t i = 0; i < cfg.num_identities; ++i) {
            auto grow = g.classifier.weight.row(i);
            const auto wrow = net.classifier.weight.row(i);
            for (std::size_t r = 0; r < e.size(); ++r) {
                grow[r] += d_logits[i] * e[r];
                d_embed[r] += wrow[r] * d_logits[i];
            }
            g.classifier.bias[i] += d_logits[i];
        }
        const std::size_t len = clips[k].cols();
        const double inv_len = 1.0 / static_cast<double>(len);
        for (std::size_t r = 0; r < d_embed.size(); ++r) {
            for (std::size_t t = 0; t < len; ++t) {
                d_output(r, cache.offsets[k] + t) = d_embed[r] * inv_len;
            }
        }
    }

    Matrix d_features = d_output;
    if (cfg.use_tsa) {
        const TsaLayer& tsa = net.tsa;
        TsaLayer& gt = g.tsa;
        gt.out_proj.weight += matmul_nt(d_output, cache.attended);
        add_row_sums(d_output, gt.out_proj.bias);
        const Matrix d_attended = matmul_tn(tsa.out_proj.weight, d_output);

        const std::size_t reduced = tsa.reduced_channels();
        Matrix d_values(reduced, cache.output.cols());
        Matrix d_keys(reduced, cache.output.cols());
        Matrix d_queries(reduced, cache.output.cols());
        for (std::size_t k = 0; k < batch; ++k) {
            const std::size_t off = cache.offsets[k];
            const std::size_t len = clips[k].cols();
            const Matrix& mask = cache.masks[k];
            const Matrix da = d_attended.columns(off, len);
            const Matrix v = cache.values.columns(off, len);
            d_values.set_columns(off, matmul(da, mask));
            const Matrix d_mask = matmul_tn(da, v);
            const Matrix d_raw = tsa.normalize_mask ? row_softmax_backward(mask, d_mask) : d_mask;
            d_queries.set_columns(off, matmul_nt(cache.keys.columns(off, len), d_raw));
            d_keys.set_columns(off, matmul(cache.queries.columns(off, len), d_raw));
        }

        gt.proj_f.weight += matmul_nt(d_values, cache.features);
        add_row_sums(d_values, gt.proj_f.bias);
        d_features += matmul_tn(tsa.proj_f.weight, d_values);

        auto branch_back = [&](const Matrix& d_act, const Matrix& norm, const BatchNormState& bn,
                               const BatchNormCache& bn_cache, BatchNormState& g_bn, const Projection& proj,
                               Projection& g_proj) {
            Matrix d_norm = d_act;
            for (std::size_t i = 0; i < d_norm.size(); ++i) {
                if (!(norm.values()[i] > 0.0)) {
                    d_norm.values()[i] = 0.0;
                }
            }
            const Matrix d_pre = batchnorm_backward(d_norm, bn, bn_cache, g_bn.gamma, g_bn.beta);
            g_proj.weight += matmul_nt(d_pre, cache.features);
            add_row_sums(d_pre, g_proj.bias);
            d_features += matmul_tn(proj.weight, d_pre);
        };
        branch_back(d_keys, cache.norm_b, tsa.bn_b, cache.bn_b, gt.bn_b, tsa.proj_b, gt.proj_b);
        branch_back(d_queries, cache.norm_c, tsa.bn_c, cache.bn_c, gt.bn_c, tsa.proj_c, gt.proj_c);
    }

    tape.input_grads.clear();
    for (std::size_t k = 0; k < batch; ++k) {
        const std::size_t len = clips[k].cols();
        Matrix d_clip_features = d_features.columns(cache.offsets[k], len);
        if (!cfg.use_dtp) {
            tape.input_grads.push_back(std::move(d_clip_features));
            continue;
        }
        Matrix d_in(cfg.frame_dim, len);
        for (std::size_t n = 0; n < net.dtp.branches.size(); ++n) {
            const Matrix d_branch = row_block(d_clip_features, n * cfg.frame_dim, cfg.frame_dim);
            depthwise_dilated_conv_backward(clips[k], net.dtp.branches[n], net.dtp.dilations[n],
                                            net.dtp.alignment, d_branch, d_in, g.dtp.branches[n].taps);
        }
        tape.input_grads.push_back(std::move(d_in));
    }

    if (mode == Mode::Training && cfg.use_tsa) {
        batchnorm_update_running(net.tsa.bn_b, cache.bn_b);
        batchnorm_update_running(net.tsa.bn_c, cache.bn_c);
    }
    return outcome;
}

double forward_backward(const Matrix& frames, std::size_t label, GltrNetwork& net, GradientTape& tape,
                        Mode mode) {
    const std::size_t labels[] = {label};
    return forward_backward_batch(std::span<const Matrix>(&frames, 1), labels, net, tape, mode).mean_loss;
}

double inference_loss(const GltrNetwork& net, const Matrix& frames, std::size_t label) {
    require(label < net.config.num_identities, ErrorCode::InvalidArgument, "label out of range");
    const Embedding e = gltr_embed(frames, net);
    return cross_entropy(net, e.vector, label);
}

bool GradCheckReport::passed() const {
    return std::all_of(groups.begin(), groups.end(), [](const GroupCheck& g) { return g.passed; });
}

const GroupCheck& GradCheckReport::group(const std::string& name) const {
    for (const GroupCheck& g : groups) {
        if (g.name == name) {
            return g;
        }
    }
    fail(ErrorCode::InvalidArgument, "no gradient group named " + name);
}

GradCheckReport grad_check(const GltrNetwork& net, const Matrix& frames, std::size_t label, double step,
                           double tolerance, const AnalyticGradient& analytic) {
    require(step > 0.0, ErrorCode::InvalidArgument, "finite-difference step must be positive");
    GltrNetwork work = net;
    GradientTape tape(work);
    if (analytic) {
        analytic(work, frames, label, tape);
    } else {
        forward_backward(frames, label, work, tape, Mode::Inference);
    }
    work = net;

    auto relative = [](double a, double n) {
        return std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n));
    };

    GradCheckReport report;
    report.step = step;
    report.tolerance = tolerance;
    const std::vector<ParameterGroup> params = parameter_groups(work);
    const std::vector<ParameterGroup> grads = parameter_groups(tape.grads);
    for (std::size_t gi = 0; gi < params.size(); ++gi) {
        GroupCheck check{params[gi].name, params[gi].values.size(), 0.0, false};
        for (std::size_t i = 0; i < params[gi].values.size(); ++i) {
            double& theta = params[gi].values[i];
            const double saved = theta;
            theta = saved + step;
            const long double plus = reference_loss(work, frames, label);
            theta = saved - step;
            const long double minus = reference_loss(work, frames, label);
            theta = saved;
            const double numeric = static_cast<double>((plus - minus) / (2.0L * step));
            check.max_relative_error =
                std::max(check.max_relative_error, relative(grads[gi].values[i], numeric));
        }
        check.passed = check.max_relative_error < tolerance;
        report.groups.push_back(check);
    }

    GroupCheck input{"input", frames.size(), 0.0, false};
    Matrix probe = frames;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        double& x = probe.values()[i];
        const double saved = x;
        x = saved + step;
        const long double plus = reference_loss(work, probe, label);
        x = saved - step;
        const long double minus = reference_loss(work, probe, label);
        x = saved;
        input.max_relative_error =
            std::max(input.max_relative_error,
                     relative(tape.input_grads.front().values()[i],
                              static_cast<double>((plus - minus) / (2.0L * step))));
    }
    input.passed = input.max_relative_error < tolerance;
    report.groups.push_back(input);
    return report;
}

namespace {

constexpr std::uint32_t kFlagMaskNormalization = 1u << 0;
constexpr std::uint32_t kFlagDtp = 1u << 1;
constexpr std::uint32_t kFlagTsa = 1u << 2;
constexpr std::uint32_t kFlagForwardTaps = 1u << 3;

std::uint32_t narrow(std::size_t v, const char* what) {
    require(v <= UINT32_MAX, ErrorCode::InvalidArgument, std::string(what) + " does not fit in 32 bits");
    return static_cast<std::uint32_t>(v);
}

} // namespace

std::vector<std::uint8_t> serialize_checkpoint(const GltrNetwork& net, std::uint32_t epochs_completed) {
    const ModelConfig& cfg = net.config;
    detail::ByteWriter w;
    w.magic("GLTR");
    w.u32(kCheckpointVersion);
    w.u32(narrow(cfg.frame_dim, "frame_dim"));
    w.u32(narrow(cfg.branches, "branches"));
    w.u32(narrow(cfg.kernel_width, "kernel_width"));
    w.u32(narrow(cfg.alpha, "alpha"));
    w.u32(narrow(cfg.num_identities, "num_identities"));
    std::uint32_t flags = 0;
    flags |= cfg.mask_normalization ? kFlagMaskNormalization : 0;
    flags |= cfg.use_dtp ? kFlagDtp : 0;
    flags |= cfg.use_tsa ? kFlagTsa : 0;
    flags |= cfg.alignment == TapAlignment::Forward ? kFlagForwardTaps : 0;
    w.u32(flags);
    w.u32(epochs_completed);
    w.f64(cfg.bn_eps);
    w.f64(cfg.bn_momentum);
    for (const ConstParameterGroup& g : parameter_groups(net, true)) {
        w.u64(g.values.size());
        for (double v : g.values) {
            w.f64(v);
        }
    }
    return w.release();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "checkpoint");
    r.expect_magic("GLTR");
    const std::uint32_t version = r.u32();
    require(version == kCheckpointVersion, ErrorCode::Format,
            "checkpoint version " + std::to_string(version) + " is not supported");
    ModelConfig cfg;
    cfg.frame_dim = r.u32();
    cfg.branches = r.u32();
    cfg.kernel_width = r.u32();
    cfg.alpha = r.u32();
    cfg.num_identities = r.u32();
    const std::uint32_t flags = r.u32();
    cfg.mask_normalization = (flags & kFlagMaskNormalization) != 0;
    cfg.use_dtp = (flags & kFlagDtp) != 0;
    cfg.use_tsa = (flags & kFlagTsa) != 0;
    cfg.alignment = (flags & kFlagForwardTaps) != 0 ? TapAlignment::Forward : TapAlignment::Centered;
    Checkpoint ckpt;
    ckpt.epochs_completed = r.u32();
    cfg.bn_eps = r.f64();
    cfg.bn_momentum = r.f64();
    try {
        ckpt.network = GltrNetwork(cfg);
    } catch (const Error& e) {
        fail(ErrorCode::Format, std::string("checkpoint header is invalid: ") + e.what());
    }
    for (ParameterGroup& g : parameter_groups(ckpt.network, true)) {
        const std::uint64_t count = r.u64();
        require(count == g.values.size(), ErrorCode::Format,
                "checkpoint group " + g.name + " has " + std::to_string(count) + " values, expected " +
                    std::to_string(g.values.size()));
        for (double& v : g.values) {
            v = r.f64();
        }
    }
    require(r.at_end(), ErrorCode::Format, "checkpoint has trailing bytes");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const GltrNetwork& net,
                     std::uint32_t epochs_completed) {
    detail::write_file(path, serialize_checkpoint(net, epochs_completed));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(detail::read_file(path));
}

} // namespace gltr
