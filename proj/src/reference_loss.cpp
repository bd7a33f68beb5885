// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "gltr/error.hpp"
#include "gltr/model.hpp"

namespace gltr {

namespace {

using Real = long double;
using Grid = std::vector<std::vector<Real>>; // [channel][frame]

Grid project(const Grid& x, const Projection& p) {
    const std::size_t frames = x.front().size();
    Grid out(p.weight.rows(), std::vector<Real>(frames, 0.0L));
    for (std::size_t o = 0; o < p.weight.rows(); ++o) {
        for (std::size_t t = 0; t < frames; ++t) {
            Real acc = p.bias[o];
            for (std::size_t i = 0; i < x.size(); ++i) {
                acc += static_cast<Real>(p.weight(o, i)) * x[i][t];
            }
            out[o][t] = acc;
        }
    }
    return out;
}

Grid norm_relu(const Grid& x, const BatchNormState& bn) {
    Grid out = x;
    for (std::size_t c = 0; c < x.size(); ++c) {
        const Real inv = 1.0L / std::sqrt(static_cast<Real>(bn.running_var[c]) + bn.eps);
        for (Real& v : out[c]) {
            v = bn.gamma[c] * (v - bn.running_mean[c]) * inv + bn.beta[c];
            v = v > 0.0L ? v : 0.0L;
        }
    }
    return out;
}

} // namespace

long double reference_loss(const GltrNetwork& net, const Matrix& frames, std::size_t label) {
    const ModelConfig& cfg = net.config;
    require(frames.rows() == cfg.frame_dim, ErrorCode::DimensionMismatch, "frame dimension mismatch");
    require(label < cfg.num_identities, ErrorCode::InvalidArgument, "label out of range");
    const std::size_t d = cfg.frame_dim;
    const long T = static_cast<long>(frames.cols());

    Grid x(d, std::vector<Real>(frames.cols()));
    for (std::size_t c = 0; c < d; ++c) {
        for (long t = 0; t < T; ++t) {
            x[c][t] = frames(c, static_cast<std::size_t>(t));
        }
    }

    Grid local;
    if (cfg.use_dtp) {
        for (std::size_t n = 0; n < net.dtp.branches.size(); ++n) {
            const Matrix& taps = net.dtp.branches[n].taps;
            const long r = static_cast<long>(net.dtp.dilations[n]);
            const std::size_t w = taps.cols();
            for (std::size_t c = 0; c < d; ++c) {
                std::vector<Real> row(frames.cols(), 0.0L);
                for (long t = 0; t < T; ++t) {
                    for (std::size_t i = 0; i < w; ++i) {
                        const long s = t + r * tap_offset(i, w, net.dtp.alignment);
                        if (s >= 0 && s < T) {
                            row[t] += x[c][s] * static_cast<Real>(taps(c, i));
                        }
                    }
                }
                local.push_back(std::move(row));
            }
        }
    } else {
        local = x;
    }

    Grid out = local;
    if (cfg.use_tsa) {
        const TsaLayer& tsa = net.tsa;
        const Grid keys = norm_relu(project(local, tsa.proj_b), tsa.bn_b);
        const Grid queries = norm_relu(project(local, tsa.proj_c), tsa.bn_c);
        const Grid values = project(local, tsa.proj_f);
        std::vector<std::vector<Real>> mask(T, std::vector<Real>(T, 0.0L));
        for (long i = 0; i < T; ++i) {
            for (long j = 0; j < T; ++j) {
                for (std::size_t q = 0; q < keys.size(); ++q) {
                    mask[i][j] += queries[q][i] * keys[q][j];
                }
            }
            if (tsa.normalize_mask) {
                Real peak = mask[i][0];
                for (long j = 1; j < T; ++j) {
                    peak = std::max(peak, mask[i][j]);
                }
                Real total = 0.0L;
                for (long j = 0; j < T; ++j) {
                    mask[i][j] = std::exp(mask[i][j] - peak);
                    total += mask[i][j];
                }
                for (long j = 0; j < T; ++j) {
                    mask[i][j] /= total;
                }
            }
        }
        Grid attended(values.size(), std::vector<Real>(frames.cols(), 0.0L));
        for (std::size_t q = 0; q < values.size(); ++q) {
            for (long t = 0; t < T; ++t) {
                for (long s = 0; s < T; ++s) {
                    attended[q][t] += mask[t][s] * values[q][s];
                }
            }
        }
        const Grid residual = project(attended, tsa.out_proj);
        for (std::size_t c = 0; c < out.size(); ++c) {
            for (long t = 0; t < T; ++t) {
                out[c][t] += residual[c][t];
            }
        }
    }

    std::vector<Real> pooled(out.size(), 0.0L);
    for (std::size_t c = 0; c < out.size(); ++c) {
        for (long t = 0; t < T; ++t) {
            pooled[c] += out[c][t];
        }
        pooled[c] /= static_cast<Real>(T);
    }
    std::vector<Real> logits(cfg.num_identities);
    Real peak = -INFINITY;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        Real z = net.classifier.bias[k];
        for (std::size_t c = 0; c < pooled.size(); ++c) {
            z += static_cast<Real>(net.classifier.weight(k, c)) * pooled[c];
        }
        logits[k] = z;
        peak = std::max(peak, z);
    }
    Real total = 0.0L;
    for (Real z : logits) {
        total += std::exp(z - peak);
    }
    return peak + std::log(total) - logits[label];
}

} // namespace gltr
