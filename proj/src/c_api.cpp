// SPDX-License-Identifier: Apache-2.0
#include "gltr/gltr.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "gltr/error.hpp"
#include "gltr/experiment.hpp"

struct gltr_network {
    gltr::GltrNetwork net;
};

struct gltr_feature_set {
    std::uint32_t dim = 0;
    std::vector<gltr::SequenceRecord> records;
    std::vector<std::vector<double>> frame_major; // per record, t * dim + c
};

namespace {

thread_local std::string last_error;
std::atomic<std::size_t> thread_override{0};

gltr_status to_status(gltr::ErrorCode code) {
    switch (code) {
    case gltr::ErrorCode::InvalidArgument: return GLTR_ERR_INVALID_ARGUMENT;
    case gltr::ErrorCode::DimensionMismatch: return GLTR_ERR_DIMENSION_MISMATCH;
    case gltr::ErrorCode::Format: return GLTR_ERR_FORMAT;
    case gltr::ErrorCode::Io: return GLTR_ERR_IO;
    case gltr::ErrorCode::Numeric: return GLTR_ERR_NUMERIC;
    }
    return GLTR_ERR_INTERNAL;
}

template <class Fn>
gltr_status guarded(Fn&& fn) {
    try {
        fn();
        return GLTR_OK;
    } catch (const gltr::Error& e) {
        last_error = e.what();
        return to_status(e.code());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
    } catch (const std::exception& e) {
        last_error = e.what();
    } catch (...) {
        last_error = "unknown error";
    }
    return GLTR_ERR_INTERNAL;
}

void require_arg(const void* p, const char* name) {
    gltr::require(p != nullptr, gltr::ErrorCode::InvalidArgument, std::string(name) + " must not be NULL");
}

gltr::ExperimentConfig parse(const char* config_json) {
    require_arg(config_json, "config_json");
    gltr::ExperimentConfig c = gltr::parse_experiment_config(config_json);
    if (const std::size_t t = thread_override.load(); t > 0) {
        c.threads = t;
    }
    return c;
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) {
        throw std::bad_alloc();
    }
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

} // namespace

extern "C" {

const char* gltr_version(void) {
    return "1.0.0";
}

const char* gltr_last_error(void) {
    return last_error.c_str();
}

void gltr_string_free(char* s) {
    std::free(s);
}

gltr_status gltr_set_num_threads(size_t threads) {
    thread_override.store(threads);
    return GLTR_OK;
}

gltr_status gltr_cmd_gen(const char* config_json) {
    return guarded([&] { gltr::run_gen(parse(config_json)); });
}

gltr_status gltr_cmd_train(const char* config_json, int verbose) {
    return guarded([&] {
        gltr::EpochCallback report;
        if (verbose != 0) {
            report = [](const gltr::EpochStats& s) {
                std::fprintf(stderr, "epoch %zu lr %.6g loss %.6f acc %.4f\n", s.epoch, s.lr, s.mean_loss,
                             s.train_accuracy);
            };
        }
        gltr::run_train(parse(config_json), report);
    });
}

gltr_status gltr_cmd_eval(const char* config_json, char** report_json) {
    return guarded([&] {
        const gltr::EvalReport report = gltr::run_eval(parse(config_json));
        if (report_json != nullptr) {
            *report_json = dup_string(gltr::eval_report_json(report));
        }
    });
}

gltr_status gltr_cmd_trace(const char* config_json) {
    return guarded([&] { gltr::run_trace(parse(config_json)); });
}

gltr_status gltr_cmd_gradcheck(const char* config_json, int* passed, char** report_json) {
    return guarded([&] {
        const gltr::GradCheckReport report = gltr::run_gradcheck(parse(config_json));
        if (passed != nullptr) {
            *passed = report.passed() ? 1 : 0;
        }
        if (report_json != nullptr) {
            *report_json = dup_string(gltr::gradcheck_report_json(report));
        }
    });
}

gltr_status gltr_config_normalize(const char* config_json, char** normalized_json) {
    return guarded([&] {
        require_arg(normalized_json, "normalized_json");
        require_arg(config_json, "config_json");
        *normalized_json = dup_string(gltr::experiment_config_json(gltr::parse_experiment_config(config_json)));
    });
}

gltr_status gltr_network_load(const char* checkpoint_path, gltr_network** out) {
    return guarded([&] {
        require_arg(checkpoint_path, "checkpoint_path");
        require_arg(out, "out");
        *out = nullptr;
        auto handle = std::make_unique<gltr_network>();
        handle->net = gltr::load_checkpoint(checkpoint_path).network;
        *out = handle.release();
    });
}

void gltr_network_free(gltr_network* net) {
    delete net;
}

gltr_status gltr_network_info(const gltr_network* net, size_t* frame_dim, size_t* embedding_dim,
                              size_t* num_identities) {
    return guarded([&] {
        require_arg(net, "net");
        if (frame_dim != nullptr) {
            *frame_dim = net->net.config.frame_dim;
        }
        if (embedding_dim != nullptr) {
            *embedding_dim = net->net.embedding_dim();
        }
        if (num_identities != nullptr) {
            *num_identities = net->net.config.num_identities;
        }
    });
}

gltr_status gltr_network_embed(const gltr_network* net, const double* frames, size_t num_frames,
                               double* embedding, double* mask_m) {
    return guarded([&] {
        require_arg(net, "net");
        require_arg(frames, "frames");
        require_arg(embedding, "embedding");
        gltr::require(num_frames >= 1, gltr::ErrorCode::InvalidArgument, "num_frames must be >= 1");
        const std::size_t d = net->net.config.frame_dim;
        gltr::Matrix x(d, num_frames);
        for (std::size_t t = 0; t < num_frames; ++t) {
            for (std::size_t c = 0; c < d; ++c) {
                x(c, t) = frames[t * d + c];
            }
        }
        const gltr::Embedding e = gltr::gltr_embed(x, net->net);
        std::copy(e.vector.begin(), e.vector.end(), embedding);
        if (mask_m != nullptr) {
            if (e.mask.m_vector.empty()) {
                std::fill(mask_m, mask_m + num_frames, 1.0);
            } else {
                std::copy(e.mask.m_vector.begin(), e.mask.m_vector.end(), mask_m);
            }
        }
    });
}

gltr_status gltr_features_read(const char* path, gltr_feature_set** out) {
    return guarded([&] {
        require_arg(path, "path");
        require_arg(out, "out");
        *out = nullptr;
        gltr::FeatureFile file = gltr::read_features(path);
        auto handle = std::make_unique<gltr_feature_set>();
        handle->dim = file.dim;
        handle->records = std::move(file.records);
        for (const gltr::SequenceRecord& r : handle->records) {
            std::vector<double> fm(r.frames.size());
            for (std::size_t t = 0; t < r.frames.cols(); ++t) {
                for (std::size_t c = 0; c < r.frames.rows(); ++c) {
                    fm[t * r.frames.rows() + c] = r.frames(c, t);
                }
            }
            handle->frame_major.push_back(std::move(fm));
        }
        *out = handle.release();
    });
}

void gltr_features_free(gltr_feature_set* set) {
    delete set;
}

gltr_status gltr_features_info(const gltr_feature_set* set, size_t* dim, size_t* count) {
    return guarded([&] {
        require_arg(set, "set");
        if (dim != nullptr) {
            *dim = set->dim;
        }
        if (count != nullptr) {
            *count = set->records.size();
        }
    });
}

gltr_status gltr_features_record(const gltr_feature_set* set, size_t index, uint32_t* person_id,
                                 uint32_t* camera_id, size_t* num_frames, const double** frames) {
    return guarded([&] {
        require_arg(set, "set");
        gltr::require(index < set->records.size(), gltr::ErrorCode::InvalidArgument,
                      "record index " + std::to_string(index) + " out of range");
        const gltr::SequenceRecord& r = set->records[index];
        if (person_id != nullptr) {
            *person_id = r.person_id;
        }
        if (camera_id != nullptr) {
            *camera_id = r.camera_id;
        }
        if (num_frames != nullptr) {
            *num_frames = r.frames.cols();
        }
        if (frames != nullptr) {
            *frames = set->frame_major[index].data();
        }
    });
}

} // extern "C"
