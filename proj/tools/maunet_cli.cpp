// Command-line front end: synthetic data generation, training, evaluation,
// single-image prediction and gradient checking.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "maunet/checkpoint.hpp"
#include "maunet/checks.hpp"
#include "maunet/dataset.hpp"
#include "maunet/error.hpp"
#include "maunet/metrics.hpp"
#include "maunet/model.hpp"
#include "maunet/png_io.hpp"
#include "maunet/run_config.hpp"
#include "maunet/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;    // validation / data errors
constexpr int kExitNumeric = 2;  // gradcheck failure or NaN abort

int cmd_gen_synth(const std::string& out, int n, int size, std::uint64_t seed) {
    maunet::gen_synthetic(n, size, seed, out);
    std::cout << "wrote " << n << " samples (" << size << "x" << size << ") under " << out << "\n";
    return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& ckpt_path, const std::string& log_path) {
    const maunet::RunConfig config = maunet::load_run_config(config_path);
    config.model.validate();
    config.train.validate();

    auto dataset = maunet::load_dataset(data_dir, 0.8, config.train.seed);
    auto model = maunet::build_model<float>(config.model, maunet::RngState(config.train.seed));
    const auto census = maunet::param_report(model);
    std::cout << "model: " << census.count << " parameters ("
              << census.megabytes << " MB at 4 bytes/value)\n";

    const maunet::TrainState state =
        maunet::train_model(model, dataset, config.train, ckpt_path, log_path);
    std::cout << "trained " << state.step << " steps over " << state.log.size() << " epochs\n";
    for (const auto& e : state.log) {
        std::printf("epoch %3d  loss %.6f  val_miou %.4f  val_mdc %.4f  %.2fs\n", e.epoch,
                    e.mean_loss, e.val_miou, e.val_mdc, e.seconds);
    }
    std::cout << "best " << maunet::to_string(config.train.monitor) << " " << state.best_metric
              << ", checkpoint " << state.best_checkpoint_path << " (" << state.checkpoint_writes
              << " writes)\n";
    return kExitOk;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path,
             const std::string& report_path, double threshold, const std::string& split) {
    maunet::LoadedCheckpoint loaded = maunet::load_checkpoint(ckpt_path);
    auto dataset = maunet::load_dataset(data_dir, 0.8, loaded.config.train.seed);

    std::vector<const maunet::SegSample*> samples;
    if (split == "all") {
        for (const auto& s : dataset) samples.push_back(&s);
    } else {
        samples = maunet::split_of(dataset, split == "train" ? maunet::SegSample::Split::Train
                                                             : maunet::SegSample::Split::Val);
    }
    if (samples.empty()) throw maunet::DataError("eval: split '" + split + "' is empty");

    const maunet::MetricsReport report = maunet::evaluate_model(
        loaded.model, samples, loaded.config.train.batch_size, static_cast<float>(threshold));

    const std::string csv = maunet::metrics_report_csv(report);
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw maunet::IoError("eval: cannot open " + report_path + " for writing");
    out << csv;

    std::printf("samples %d  miou %.6f  mdc %.6f  (threshold %.2f, split %s)\n", report.n_samples,
                report.miou, report.mdc, threshold, split.c_str());
    std::cout << "report written to " << report_path << "\n";
    return kExitOk;
}

int cmd_predict(const std::string& image_path, const std::string& ckpt_path,
                const std::string& out_path, bool prob) {
    maunet::LoadedCheckpoint loaded = maunet::load_checkpoint(ckpt_path);
    const maunet::GrayImage img = maunet::read_png_gray8(image_path);

    std::vector<float> values(img.pixels.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = static_cast<float>(img.pixels[i]) / 255.0f;
    }
    const maunet::TensorF input({1, 1, img.height, img.width}, std::move(values));
    const maunet::TensorF probs = maunet::forward_model(loaded.model, input);

    maunet::GrayImage out_img{img.width, img.height,
                              std::vector<std::uint8_t>(img.pixels.size())};
    if (prob) {
        for (std::size_t i = 0; i < out_img.pixels.size(); ++i) {
            out_img.pixels[i] = static_cast<std::uint8_t>(std::lround(probs[i] * 255.0f));
        }
    } else {
        for (std::size_t i = 0; i < out_img.pixels.size(); ++i) {
            out_img.pixels[i] = probs[i] >= 0.5f ? 255 : 0;
        }
    }
    maunet::write_png_gray8(out_path, out_img);
    std::cout << "wrote " << (prob ? "probability map" : "binary mask") << " to " << out_path
              << "\n";
    return kExitOk;
}

int cmd_gradcheck(const std::string& block, std::uint64_t seed) {
    std::vector<maunet::BlockCheck> results;
    if (block.empty()) {
        results = maunet::run_all_gradchecks(seed);
    } else if (block == "conv" || block == "channel" || block == "context" || block == "gate" ||
               block == "model") {
        results.push_back(maunet::run_gradcheck(block, seed));
    } else {
        throw maunet::UsageError("gradcheck: --block must be one of conv|channel|context|gate|model");
    }
    bool all_pass = true;
    for (const auto& r : results) {
        const bool pass = r.report.pass(r.tol);
        all_pass = all_pass && pass;
        std::printf("%-10s max_rel_err %.3e  tol %.0e  coords %d  %s\n", r.name.c_str(),
                    r.report.max_rel_err, r.tol, r.report.checked, pass ? "PASS" : "FAIL");
        if (!pass) std::cerr << r.report.summary() << "\n";
    }
    return all_pass ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MA-UNet segmentation kit"};
    app.require_subcommand(1);

    std::string out_dir, data_dir, config_path, ckpt_path, log_path, report_path;
    std::string image_path, out_path, split = "all", block;
    int n = 16, size = 64;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    bool prob = false;

    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic ellipse dataset");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--n", n, "number of samples");
    gen->add_option("--size", size, "image side length");
    gen->add_option("--seed", seed, "rng seed");

    auto* train = app.add_subcommand("train", "train on a dataset directory");
    train->add_option("--data", data_dir, "dataset root (images/ + masks/)")->required();
    train->add_option("--config", config_path, "key=value run configuration")->required();
    train->add_option("--out", ckpt_path, "checkpoint output path")->required();
    train->add_option("--log", log_path, "epoch log CSV path");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--data", data_dir, "dataset root")->required();
    eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    eval->add_option("--report", report_path, "metrics CSV output path")->required();
    eval->add_option("--threshold", threshold, "binarization threshold");
    eval->add_option("--split", split, "all|train|val")
        ->check(CLI::IsMember({"all", "train", "val"}));

    auto* predict = app.add_subcommand("predict", "segment one PNG image");
    predict->add_option("--image", image_path, "input 8-bit grayscale PNG")->required();
    predict->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    predict->add_option("--out", out_path, "output PNG path")->required();
    predict->add_flag("--prob", prob, "write probabilities instead of the binarized mask");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gradcheck->add_option("--block", block, "conv|channel|context|gate|model (default: all)");
    gradcheck->add_option("--seed", seed, "rng seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_synth(out_dir, n, size, seed);
        if (train->parsed()) return cmd_train(data_dir, config_path, ckpt_path, log_path);
        if (eval->parsed()) return cmd_eval(data_dir, ckpt_path, report_path, threshold, split);
        if (predict->parsed()) return cmd_predict(image_path, ckpt_path, out_path, prob);
        if (gradcheck->parsed()) return cmd_gradcheck(block, seed);
    } catch (const maunet::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const maunet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
