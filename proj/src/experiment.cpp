// SPDX-License-Identifier: Apache-2.0
#include "gltr/experiment.hpp"

#include <fstream>
#include <optional>
#include <type_traits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gltr/error.hpp"
#include "gltr/parallel.hpp"
#include "gltr/rng.hpp"

namespace gltr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads one JSON object, tracking which keys were consumed so leftovers can
// be reported as unknown.
class Section {
public:
    Section(const json& object, std::string name) : object_(object), name_(std::move(name)) {
        require(object_.is_object(), ErrorCode::InvalidArgument, where() + " must be a JSON object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        const auto it = object_.find(key);
        return it == object_.end() ? nullptr : &*it;
    }

    template <class U>
        requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
    void get(const std::string& key, U& out) {
        if (const json* v = find(key)) {
            require(v->is_number_unsigned(), ErrorCode::InvalidArgument,
                    where(key) + " must be a nonnegative integer");
            out = v->get<U>();
        }
    }
    void get(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            require(v->is_number(), ErrorCode::InvalidArgument, where(key) + " must be a number");
            out = v->get<double>();
        }
    }
    void get(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            require(v->is_boolean(), ErrorCode::InvalidArgument, where(key) + " must be true or false");
            out = v->get<bool>();
        }
    }
    void get(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            require(v->is_string(), ErrorCode::InvalidArgument, where(key) + " must be a string");
            out = v->get<std::string>();
        }
    }

    void finish() const {
        for (const auto& [key, value] : object_.items()) {
            require(seen_.count(key) != 0, ErrorCode::InvalidArgument, "unknown config key " + where(key));
        }
    }

private:
    std::string where(const std::string& key = {}) const {
        std::string path = name_;
        if (!key.empty()) {
            path += path.empty() ? key : "." + key;
        }
        return path.empty() ? "config" : "'" + path + "'";
    }

    const json& object_;
    std::string name_;
    std::set<std::string> seen_;
};

const char* alignment_name(TapAlignment a) {
    return a == TapAlignment::Forward ? "forward" : "centered";
}

TapAlignment parse_alignment(const std::string& s) {
    if (s == "centered") {
        return TapAlignment::Centered;
    }
    if (s == "forward") {
        return TapAlignment::Forward;
    }
    fail(ErrorCode::InvalidArgument, "model.tap_alignment must be \"centered\" or \"forward\", got \"" + s + "\"");
}

json config_to_json(const ExperimentConfig& c) {
    const ModelConfig& m = c.model;
    const TrainConfig& t = c.train;
    const BenchmarkConfig& b = c.data.benchmark;
    const GradcheckConfig& g = c.gradcheck;
    json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["threads"] = c.threads;
    j["checkpoint"] = c.checkpoint;
    j["model"] = {{"branches", m.branches},
                  {"kernel_width", m.kernel_width},
                  {"alpha", m.alpha},
                  {"mask_normalization", m.mask_normalization},
                  {"use_dtp", m.use_dtp},
                  {"use_tsa", m.use_tsa},
                  {"tap_alignment", alignment_name(m.alignment)},
                  {"bn_eps", m.bn_eps},
                  {"bn_momentum", m.bn_momentum}};
    j["train"] = {{"clip_length", t.clip_length},
                  {"batch_size", t.batch_size},
                  {"lr_initial", t.lr_initial},
                  {"lr_decay_factor", t.lr_decay_factor},
                  {"lr_decay_epoch", t.lr_decay_epoch},
                  {"total_epochs", t.total_epochs},
                  {"momentum", t.momentum},
                  {"weight_decay", t.weight_decay},
                  {"resume_from", c.resume_from}};
    j["data"] = {{"num_identities", b.num_identities},
                 {"cameras", b.cameras},
                 {"tracklets_per_id_per_cam", b.tracklets_per_id_per_cam},
                 {"train_tracklets_per_id_per_cam", b.train_tracklets_per_id_per_cam},
                 {"frame_dim", b.frame_dim},
                 {"length", b.length},
                 {"lookalike_fraction", b.lookalike_fraction},
                 {"appearance_similarity", b.appearance_similarity},
                 {"appearance_sigma", b.appearance_sigma},
                 {"low_frequency", b.low_frequency},
                 {"high_frequency", b.high_frequency},
                 {"amplitude", b.amplitude},
                 {"noise_sigma", b.noise_sigma},
                 {"camera_shift_sigma", b.camera_shift_sigma},
                 {"occlusion_probability", b.occlusion_probability},
                 {"occlusion_fraction", b.occlusion_fraction},
                 {"occluder_sigma", b.occluder_sigma},
                 {"train_features", c.data.train_features},
                 {"query_features", c.data.query_features},
                 {"gallery_features", c.data.gallery_features}};
    j["eval"] = {{"cross_camera_only", c.protocol.cross_camera_only},
                 {"max_rank", c.protocol.max_rank},
                 {"embeddings_out", c.embeddings_out}};
    j["trace"] = {{"features", c.trace.features},
                  {"index", c.trace.index},
                  {"identity", c.trace.identity},
                  {"occluded_frames", c.trace.occluded_frames}};
    j["gradcheck"] = {{"frame_dim", g.frame_dim},
                      {"length", g.length},
                      {"branches", g.branches},
                      {"kernel_width", g.kernel_width},
                      {"identities", g.identities},
                      {"mask_normalization", g.mask_normalization},
                      {"step", g.step},
                      {"tolerance", g.tolerance}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    Section top(j, "");
    top.get("seed", c.seed);
    top.get("out_dir", c.out_dir);
    top.get("threads", c.threads);
    top.get("checkpoint", c.checkpoint);
    if (const json* v = top.find("model")) {
        Section s(*v, "model");
        s.get("branches", c.model.branches);
        s.get("kernel_width", c.model.kernel_width);
        s.get("alpha", c.model.alpha);
        s.get("mask_normalization", c.model.mask_normalization);
        s.get("use_dtp", c.model.use_dtp);
        s.get("use_tsa", c.model.use_tsa);
        std::string alignment = alignment_name(c.model.alignment);
        s.get("tap_alignment", alignment);
        c.model.alignment = parse_alignment(alignment);
        s.get("bn_eps", c.model.bn_eps);
        s.get("bn_momentum", c.model.bn_momentum);
        s.finish();
    }
    if (const json* v = top.find("train")) {
        Section s(*v, "train");
        s.get("clip_length", c.train.clip_length);
        s.get("batch_size", c.train.batch_size);
        s.get("lr_initial", c.train.lr_initial);
        s.get("lr_decay_factor", c.train.lr_decay_factor);
        s.get("lr_decay_epoch", c.train.lr_decay_epoch);
        s.get("total_epochs", c.train.total_epochs);
        s.get("momentum", c.train.momentum);
        s.get("weight_decay", c.train.weight_decay);
        s.get("resume_from", c.resume_from);
        s.finish();
    }
    if (const json* v = top.find("data")) {
        Section s(*v, "data");
        BenchmarkConfig& b = c.data.benchmark;
        s.get("num_identities", b.num_identities);
        s.get("cameras", b.cameras);
        s.get("tracklets_per_id_per_cam", b.tracklets_per_id_per_cam);
        s.get("train_tracklets_per_id_per_cam", b.train_tracklets_per_id_per_cam);
        s.get("frame_dim", b.frame_dim);
        s.get("length", b.length);
        s.get("lookalike_fraction", b.lookalike_fraction);
        s.get("appearance_similarity", b.appearance_similarity);
        s.get("appearance_sigma", b.appearance_sigma);
        s.get("low_frequency", b.low_frequency);
        s.get("high_frequency", b.high_frequency);
        s.get("amplitude", b.amplitude);
        s.get("noise_sigma", b.noise_sigma);
        s.get("camera_shift_sigma", b.camera_shift_sigma);
        s.get("occlusion_probability", b.occlusion_probability);
        s.get("occlusion_fraction", b.occlusion_fraction);
        s.get("occluder_sigma", b.occluder_sigma);
        s.get("train_features", c.data.train_features);
        s.get("query_features", c.data.query_features);
        s.get("gallery_features", c.data.gallery_features);
        s.finish();
    }
    if (const json* v = top.find("eval")) {
        Section s(*v, "eval");
        s.get("cross_camera_only", c.protocol.cross_camera_only);
        s.get("max_rank", c.protocol.max_rank);
        s.get("embeddings_out", c.embeddings_out);
        s.finish();
    }
    if (const json* v = top.find("trace")) {
        Section s(*v, "trace");
        s.get("features", c.trace.features);
        s.get("index", c.trace.index);
        s.get("identity", c.trace.identity);
        s.get("occluded_frames", c.trace.occluded_frames);
        s.finish();
    }
    if (const json* v = top.find("gradcheck")) {
        Section s(*v, "gradcheck");
        GradcheckConfig& g = c.gradcheck;
        s.get("frame_dim", g.frame_dim);
        s.get("length", g.length);
        s.get("branches", g.branches);
        s.get("kernel_width", g.kernel_width);
        s.get("identities", g.identities);
        s.get("mask_normalization", g.mask_normalization);
        s.get("step", g.step);
        s.get("tolerance", g.tolerance);
        s.finish();
    }
    top.finish();
    return c;
}

std::string format_real(double x) {
    std::ostringstream out;
    out.precision(17);
    out << x;
    return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot open " + path.string() + " for writing");
    out << text;
    out.close();
    require(static_cast<bool>(out), ErrorCode::Io, "failed writing " + path.string());
}

void prepare_out_dir(const ExperimentConfig& c) {
    std::error_code ec;
    fs::create_directories(c.out_dir, ec);
    require(!ec, ErrorCode::Io, "cannot create output directory " + c.out_dir + ": " + ec.message());
    write_text(fs::path(c.out_dir) / "config.json", experiment_config_json(c));
}

bool generates_any(const DataConfig& d) {
    return d.train_features.empty() || d.query_features.empty() || d.gallery_features.empty();
}

fs::path checkpoint_path(const ExperimentConfig& c) {
    return c.checkpoint.empty() ? fs::path(c.out_dir) / "checkpoint.gltr" : fs::path(c.checkpoint);
}

// Loads a split from its feature file, or generates the benchmark when the
// path is empty. `generated` caches the benchmark across splits.
std::vector<SequenceRecord> load_split(const ExperimentConfig& c, const std::string& path,
                                       std::vector<SequenceRecord> Benchmark::*split,
                                       std::optional<Benchmark>& generated) {
    if (!path.empty()) {
        return read_features(path).records;
    }
    if (!generated) {
        generated = generate_benchmark(c.data.benchmark, c.seed);
    }
    return (*generated).*split;
}

std::vector<EmbeddingRecord> embed_all(std::span<const SequenceRecord> records, const GltrNetwork& net,
                                       std::size_t threads) {
    std::vector<EmbeddingRecord> out(records.size());
    for (const SequenceRecord& r : records) {
        require(r.frames.rows() == net.config.frame_dim, ErrorCode::DimensionMismatch,
                "feature dimension " + std::to_string(r.frames.rows()) + " does not match the checkpoint (" +
                    std::to_string(net.config.frame_dim) + ")");
    }
    parallel_for(records.size(), threads, [&](std::size_t i) {
        out[i] = {records[i].person_id, records[i].camera_id, gltr_embed(records[i].frames, net).vector};
    });
    return out;
}

std::string csv_row(std::span<const double> values) {
    std::string line;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i > 0) {
            line += ',';
        }
        line += format_real(values[i]);
    }
    return line;
}

} // namespace

void ExperimentConfig::validate() const {
    require(!out_dir.empty(), ErrorCode::InvalidArgument, "out_dir must not be empty");
    require(threads >= 1, ErrorCode::InvalidArgument, "threads must be >= 1");
    ModelConfig probe = model;
    probe.frame_dim = std::max<std::size_t>(1, data.benchmark.frame_dim);
    probe.num_identities = 1;
    probe.validate();
    train.validate();
    require(protocol.max_rank >= 1, ErrorCode::InvalidArgument, "eval.max_rank must be >= 1");
    if (generates_any(data)) {
        data.benchmark.validate();
        require(!(protocol.cross_camera_only && data.benchmark.cameras < 2), ErrorCode::InvalidArgument,
                "cross-camera evaluation needs at least 2 cameras (data.cameras = " +
                    std::to_string(data.benchmark.cameras) + ")");
    }
    require(gradcheck.frame_dim >= 1 && gradcheck.length >= 1 && gradcheck.identities >= 1,
            ErrorCode::InvalidArgument, "gradcheck dimensions must be positive");
    require(gradcheck.step > 0.0 && gradcheck.tolerance > 0.0, ErrorCode::InvalidArgument,
            "gradcheck step and tolerance must be positive");
}

ExperimentConfig parse_experiment_config(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text.begin(), json_text.end());
    } catch (const json::parse_error& e) {
        fail(ErrorCode::InvalidArgument, std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_experiment_config(text.str());
}

std::string experiment_config_json(const ExperimentConfig& config) {
    return config_to_json(config).dump(2) + "\n";
}

std::uint64_t init_seed(std::uint64_t seed) {
    return mix_seed(splitmix64(seed), 0x696e6974);
}

GenResult run_gen(const ExperimentConfig& config) {
    config.validate();
    config.data.benchmark.validate();
    require(!(config.protocol.cross_camera_only && config.data.benchmark.cameras < 2),
            ErrorCode::InvalidArgument, "cross-camera evaluation needs at least 2 cameras");
    const Benchmark b = generate_benchmark(config.data.benchmark, config.seed);
    const auto dim = static_cast<std::uint32_t>(config.data.benchmark.frame_dim);
    const std::vector<std::uint8_t> blobs[3] = {encode_features(dim, b.train), encode_features(dim, b.query),
                                                encode_features(dim, b.gallery)};
    const char* names[3] = {"train.glfv", "query.glfv", "gallery.glfv"};

    prepare_out_dir(config);
    GenResult result;
    const fs::path out(config.out_dir);
    for (int i = 0; i < 3; ++i) {
        const fs::path path = out / names[i];
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(f), ErrorCode::Io, "cannot open " + path.string() + " for writing");
        f.write(reinterpret_cast<const char*>(blobs[i].data()), static_cast<std::streamsize>(blobs[i].size()));
        f.close();
        require(static_cast<bool>(f), ErrorCode::Io, "failed writing " + path.string());
        result.files.push_back(path);
    }
    result.train_records = b.train.size();
    result.query_records = b.query.size();
    result.gallery_records = b.gallery.size();

    json manifest;
    manifest["seed"] = config.seed;
    manifest["frame_dim"] = config.data.benchmark.frame_dim;
    manifest["length"] = config.data.benchmark.length;
    manifest["num_identities"] = config.data.benchmark.num_identities;
    manifest["cameras"] = config.data.benchmark.cameras;
    manifest["files"] = {{"train", names[0]}, {"query", names[1]}, {"gallery", names[2]}};
    manifest["records"] = {{"train", result.train_records},
                           {"query", result.query_records},
                           {"gallery", result.gallery_records}};
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    result.files.push_back(out / "manifest.json");
    return result;
}

TrainResult run_train(const ExperimentConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    std::optional<Benchmark> generated;
    const std::vector<SequenceRecord> records =
        load_split(config, config.data.train_features, &Benchmark::train, generated);
    require(!records.empty(), ErrorCode::InvalidArgument, "training set is empty");
    const LabelMap labels(records);
    const std::vector<LabeledSequence> dataset = labels.labeled(records);

    ModelConfig mc = config.model;
    mc.frame_dim = records.front().frames.rows();
    mc.num_identities = labels.size();
    mc.validate();
    TrainConfig tc = config.train;
    tc.seed = config.seed;

    TrainResult result;
    GltrNetwork net;
    if (!config.resume_from.empty()) {
        Checkpoint ck = load_checkpoint(config.resume_from);
        require(ck.network.config == mc, ErrorCode::InvalidArgument,
                "checkpoint " + config.resume_from + " was trained with a different model or dataset shape");
        net = std::move(ck.network);
        result.start_epoch = std::min<std::size_t>(ck.epochs_completed, tc.total_epochs);
    } else {
        net = GltrNetwork::initialized(mc, init_seed(config.seed));
    }

    prepare_out_dir(config);
    if (result.start_epoch < tc.total_epochs) {
        result.log = train(dataset, net, tc, result.start_epoch, on_epoch);
    }
    const fs::path out(config.out_dir);
    result.checkpoint = out / "checkpoint.gltr";
    save_checkpoint(result.checkpoint, net, static_cast<std::uint32_t>(tc.total_epochs));
    write_text(out / "train_log.csv", training_log_csv(result.log));
    return result;
}

EvalReport run_eval(const ExperimentConfig& config) {
    config.validate();
    const Checkpoint ck = load_checkpoint(checkpoint_path(config));
    std::optional<Benchmark> generated;
    const std::vector<SequenceRecord> query =
        load_split(config, config.data.query_features, &Benchmark::query, generated);
    const std::vector<SequenceRecord> gallery =
        load_split(config, config.data.gallery_features, &Benchmark::gallery, generated);
    const std::vector<EmbeddingRecord> q = embed_all(query, ck.network, config.threads);
    const std::vector<EmbeddingRecord> g = embed_all(gallery, ck.network, config.threads);
    const EvalReport report = evaluate(q, g, config.protocol, config.threads);

    prepare_out_dir(config);
    const fs::path out(config.out_dir);
    write_text(out / "report.json", eval_report_json(report));
    if (!config.embeddings_out.empty()) {
        std::string csv = "split,person_id,camera_id";
        for (std::size_t k = 0; k < ck.network.embedding_dim(); ++k) {
            csv += ",e" + std::to_string(k);
        }
        csv += '\n';
        const auto emit = [&](const char* split, std::span<const EmbeddingRecord> items) {
            for (const EmbeddingRecord& e : items) {
                csv += std::string(split) + ',' + std::to_string(e.person_id) + ',' +
                       std::to_string(e.camera_id) + ',' + csv_row(e.vector) + '\n';
            }
        };
        emit("query", q);
        emit("gallery", g);
        const fs::path path = fs::path(config.embeddings_out).is_absolute()
                                  ? fs::path(config.embeddings_out)
                                  : out / config.embeddings_out;
        write_text(path, csv);
    }
    return report;
}

TraceResult run_trace(const ExperimentConfig& config) {
    config.validate();
    const Checkpoint ck = load_checkpoint(checkpoint_path(config));
    const GltrNetwork& net = ck.network;
    TraceResult result;
    Matrix frames;
    if (!config.trace.features.empty()) {
        FeatureFile file = read_features(config.trace.features);
        require(config.trace.index < file.records.size(), ErrorCode::InvalidArgument,
                "trace.index " + std::to_string(config.trace.index) + " is past the last record (" +
                    std::to_string(file.records.size()) + " records)");
        frames = std::move(file.records[config.trace.index].frames);
    } else {
        const Benchmark b = generate_benchmark(config.data.benchmark, config.seed);
        const std::uint64_t stream = mix_seed(config.seed, 0x7472616365);
        const TrackletSpec spec = sample_tracklet_spec(b, config.data.benchmark, config.trace.identity, 1,
                                                       config.trace.occluded_frames, stream);
        frames = render_tracklet(spec, splitmix64(stream));
        if (!spec.occlusions.empty()) {
            result.occlusion_start = spec.occlusions.front().start;
            result.occlusion_end = spec.occlusions.front().end;
        }
    }
    require(frames.rows() == net.config.frame_dim, ErrorCode::DimensionMismatch,
            "tracklet dimension does not match the checkpoint");

    const Embedding e = gltr_embed(frames, net);
    result.pca_input = pca_first_component(frames);
    result.pca_local = pca_first_component(e.local_features);
    result.pca_temporal = pca_first_component(e.temporal_features);
    result.mask = e.mask;
    result.embedding = e.vector;

    prepare_out_dir(config);
    const fs::path out(config.out_dir);
    write_text(out / "pca_traces.csv", "F," + csv_row(result.pca_input) + "\nF_local," +
                                           csv_row(result.pca_local) + "\nF_temporal," +
                                           csv_row(result.pca_temporal) + "\n");
    if (!result.mask.m_matrix.empty()) {
        std::string m;
        for (std::size_t r = 0; r < result.mask.m_matrix.rows(); ++r) {
            m += csv_row(result.mask.m_matrix.row(r)) + '\n';
        }
        write_text(out / "mask_M.csv", m);
        write_text(out / "mask_m.csv", csv_row(result.mask.m_vector) + "\n");
    }
    write_text(out / "embedding.csv", csv_row(result.embedding) + "\n");
    json info;
    info["frames"] = frames.cols();
    info["attention"] = !result.mask.m_matrix.empty();
    info["occlusion_start"] = result.occlusion_start;
    info["occlusion_end"] = result.occlusion_end;
    write_text(out / "trace.json", info.dump(2) + "\n");
    return result;
}

GradCheckReport run_gradcheck(const ExperimentConfig& config) {
    config.validate();
    const GradcheckConfig& g = config.gradcheck;
    ModelConfig mc = config.model;
    mc.frame_dim = g.frame_dim;
    mc.branches = g.branches;
    mc.kernel_width = g.kernel_width;
    mc.num_identities = g.identities;
    mc.mask_normalization = g.mask_normalization;
    mc.validate();
    GltrNetwork net(mc);
    randomize_all_parameters(net, config.seed);
    Rng rng(mix_seed(config.seed, 0x6763));
    Matrix frames(g.frame_dim, g.length);
    for (std::size_t r = 0; r < frames.rows(); ++r) {
        for (std::size_t t = 0; t < frames.cols(); ++t) {
            frames(r, t) = rng.normal();
        }
    }
    const std::size_t label = static_cast<std::size_t>(config.seed % g.identities);
    GradCheckReport report = grad_check(net, frames, label, g.step, g.tolerance);

    prepare_out_dir(config);
    write_text(fs::path(config.out_dir) / "gradcheck.json", gradcheck_report_json(report));
    return report;
}

std::string eval_report_json(const EvalReport& report) {
    json j;
    j["rank1"] = report.rank(1);
    j["rank5"] = report.rank(5);
    j["rank10"] = report.rank(10);
    j["rank20"] = report.rank(20);
    j["mAP"] = report.map;
    j["cmc"] = report.cmc;
    j["num_queries"] = report.num_queries_evaluated;
    j["skipped_queries"] = report.skipped_queries;
    j["post_processing"] = report.post_processing;
    return j.dump(2) + "\n";
}

std::string gradcheck_report_json(const GradCheckReport& report) {
    json j;
    j["passed"] = report.passed();
    j["step"] = report.step;
    j["tolerance"] = report.tolerance;
    json groups = json::array();
    for (const GroupCheck& g : report.groups) {
        groups.push_back({{"name", g.name},
                          {"size", g.size},
                          {"max_relative_error", g.max_relative_error},
                          {"passed", g.passed}});
    }
    j["groups"] = groups;
    return j.dump(2) + "\n";
}

} // namespace gltr
