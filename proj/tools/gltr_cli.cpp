// SPDX-License-Identifier: Apache-2.0
//
// gltr: command-line front end over the C API.
//
//   gltr gen       synthetic benchmark -> train/query/gallery feature files
//   gltr train     checkpoint.gltr + train_log.csv
//   gltr eval      report.json (rank1/5/10/20, mAP)
//   gltr trace     pca_traces.csv, mask_M.csv, mask_m.csv for one tracklet
//   gltr gradcheck gradcheck.json; exit code 2 when a group fails
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gltr/gltr.h"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

int exit_code_for(gltr_status s) {
    if (s == GLTR_OK) {
        return kExitOk;
    }
    std::cerr << "gltr: error: " << gltr_last_error() << '\n';
    return s == GLTR_ERR_NUMERIC ? kExitNumeric : kExitUsage;
}

std::string take(char* s) {
    std::string out = s != nullptr ? s : "";
    gltr_string_free(s);
    return out;
}

json read_config(const std::string& path) {
    if (path.empty()) {
        return json::object();
    }
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config " + path + " is not valid JSON: " + e.what());
    }
}

// Sets config[section][key], creating the section when needed.
template <class T>
void patch(json& config, const char* section, const char* key, const T& value) {
    json& s = config[section];
    if (!s.is_object()) {
        s = json::object();
    }
    s[key] = value;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tracklet embedding for re-identification: generate, train, evaluate, trace"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::size_t threads = 0;
    app.add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Seed overriding the config");
    app.add_option("--out", out_dir, "Output directory overriding the config");
    app.add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);

    CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic benchmark as feature files");

    CLI::App* train = app.add_subcommand("train", "Train a network and write a checkpoint");
    bool no_dtp = false;
    bool no_tsa = false;
    bool verbose = false;
    std::string resume;
    std::string train_features;
    std::optional<std::size_t> epochs;
    train->add_flag("--no-dtp", no_dtp, "Drop the dilated temporal pyramid");
    train->add_flag("--no-tsa", no_tsa, "Drop the temporal self-attention block");
    train->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
    train->add_option("--features", train_features, "Training feature file")->check(CLI::ExistingFile);
    train->add_option("--epochs", epochs, "Total epochs");
    train->add_flag("-v,--verbose", verbose, "Print per-epoch statistics");

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on query/gallery features");
    std::string checkpoint;
    std::string query_features;
    std::string gallery_features;
    std::string embeddings_out;
    bool cross_camera = false;
    eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.gltr)");
    eval->add_option("--query", query_features, "Query feature file")->check(CLI::ExistingFile);
    eval->add_option("--gallery", gallery_features, "Gallery feature file")->check(CLI::ExistingFile);
    eval->add_option("--embeddings-out", embeddings_out, "CSV of every query and gallery embedding");
    eval->add_flag("--cross-camera", cross_camera, "Drop same-camera matches of the query identity");

    CLI::App* trace = app.add_subcommand("trace", "Export PCA traces and the attention mask of one tracklet");
    std::string trace_features;
    std::optional<std::size_t> trace_index;
    std::optional<std::size_t> trace_identity;
    std::optional<std::size_t> occluded_frames;
    trace->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.gltr)");
    trace->add_option("--features", trace_features, "Feature file holding the tracklet")->check(CLI::ExistingFile);
    trace->add_option("--index", trace_index, "Record index in --features");
    trace->add_option("--identity", trace_identity, "Benchmark identity of a generated tracklet");
    trace->add_option("--occluded-frames", occluded_frames, "Occlusion window length of a generated tracklet");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    json config;
    try {
        config = read_config(config_path);
    } catch (const std::exception& e) {
        std::cerr << "gltr: error: " << e.what() << '\n';
        return kExitUsage;
    }
    if (!config.is_object()) {
        std::cerr << "gltr: error: config must be a JSON object\n";
        return kExitUsage;
    }
    if (seed) {
        config["seed"] = *seed;
    }
    if (!out_dir.empty()) {
        config["out_dir"] = out_dir;
    }
    if (threads > 0) {
        config["threads"] = threads;
        gltr_set_num_threads(threads);
    }
    if (!checkpoint.empty()) {
        config["checkpoint"] = checkpoint;
    }

    if (*gen) {
        return exit_code_for(gltr_cmd_gen(config.dump().c_str()));
    }
    if (*train) {
        if (no_dtp) {
            patch(config, "model", "use_dtp", false);
        }
        if (no_tsa) {
            patch(config, "model", "use_tsa", false);
        }
        if (!resume.empty()) {
            patch(config, "train", "resume_from", resume);
        }
        if (epochs) {
            patch(config, "train", "total_epochs", *epochs);
        }
        if (!train_features.empty()) {
            patch(config, "data", "train_features", train_features);
        }
        return exit_code_for(gltr_cmd_train(config.dump().c_str(), verbose ? 1 : 0));
    }
    if (*eval) {
        if (!query_features.empty()) {
            patch(config, "data", "query_features", query_features);
        }
        if (!gallery_features.empty()) {
            patch(config, "data", "gallery_features", gallery_features);
        }
        if (!embeddings_out.empty()) {
            patch(config, "eval", "embeddings_out", embeddings_out);
        }
        if (cross_camera) {
            patch(config, "eval", "cross_camera_only", true);
        }
        char* report = nullptr;
        const gltr_status s = gltr_cmd_eval(config.dump().c_str(), &report);
        if (s == GLTR_OK) {
            std::cout << take(report);
        }
        return exit_code_for(s);
    }
    if (*trace) {
        if (!trace_features.empty()) {
            patch(config, "trace", "features", trace_features);
        }
        if (trace_index) {
            patch(config, "trace", "index", *trace_index);
        }
        if (trace_identity) {
            patch(config, "trace", "identity", *trace_identity);
        }
        if (occluded_frames) {
            patch(config, "trace", "occluded_frames", *occluded_frames);
        }
        return exit_code_for(gltr_cmd_trace(config.dump().c_str()));
    }
    if (*gradcheck) {
        int passed = 0;
        char* report = nullptr;
        const gltr_status s = gltr_cmd_gradcheck(config.dump().c_str(), &passed, &report);
        if (s != GLTR_OK) {
            return exit_code_for(s);
        }
        const json r = json::parse(take(report));
        for (const json& g : r["groups"]) {
            std::printf("%-28s %-4s max_rel_err=%.3e\n", g["name"].get<std::string>().c_str(),
                        g["passed"].get<bool>() ? "ok" : "FAIL", g["max_relative_error"].get<double>());
        }
        std::printf("gradcheck %s\n", passed != 0 ? "passed" : "FAILED");
        return passed != 0 ? kExitOk : kExitNumeric;
    }
    return kExitUsage;
}
