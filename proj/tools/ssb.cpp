#include <malloc.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ssb/bench.hpp"
#include "ssb/flops.hpp"
#include "ssb/train.hpp"
#include "ssb/visualize.hpp"

namespace fs = std::filesystem;

namespace {

void apply_threads(int threads) {
    if (threads > 0) {
        ssb::set_thread_count(threads);
    } else if (const char* env = std::getenv("SSB_THREADS")) {
        ssb::set_thread_count(std::atoi(env));
    }
}

ssb::RunConfig load_config(const std::string& path, std::uint64_t seed_override,
                           const std::string& out_override) {
    ssb::RunConfig cfg = ssb::load_run_config(path);
    if (seed_override != 0) cfg.seed = seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (cfg.data_dir.empty()) throw ssb::data_error("config: data_dir is required");
    if (!fs::is_directory(cfg.data_dir))
        throw ssb::data_error("data_dir '" + cfg.data_dir + "' is not a directory");
    fs::create_directories(cfg.out_dir);
    return cfg;
}

int cmd_train(const std::string& config_path, std::uint64_t seed, const std::string& out,
              int threads) {
    apply_threads(threads);
    ssb::RunConfig cfg = load_config(config_path, seed, out);
    ssb::Dataset train_ds = ssb::load_cifar_train(cfg.data_dir);
    ssb::Dataset val_ds = ssb::load_cifar_test(cfg.data_dir);
    ssb::Network<float> net(cfg.network_spec(), cfg.seed);
    ssb::TrainResult result = ssb::train(net, cfg, train_ds, val_ds, &std::cout);
    result.log.save(cfg.out_dir + "/metrics.csv");
    ssb::save_checkpoint(cfg.out_dir + "/model.ckpt", result.checkpoint);
    std::cout << "final val acc " << result.final_val_acc << std::endl;
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path, int threads) {
    apply_threads(threads);
    ssb::RunConfig cfg = ssb::load_run_config(config_path);
    if (cfg.data_dir.empty()) throw ssb::data_error("config: data_dir is required");
    ssb::Dataset val_ds = ssb::load_cifar_test(cfg.data_dir);
    ssb::Network<float> net(cfg.network_spec(), cfg.seed);
    if (!ckpt_path.empty()) {
        ssb::Checkpoint ckpt = ssb::load_checkpoint(ckpt_path);
        net.load_state_dict(ckpt.tensors);
    }
    std::cout << "val acc " << ssb::evaluate(net, val_ds) << std::endl;
    return 0;
}

int cmd_bench(const std::string& out_csv, int reps, int threads) {
    apply_threads(threads);
    struct Case {
        std::size_t n, r, d;
    };
    const Case grid[] = {{32, 8, 64},  {32, 16, 64},  {64, 16, 256},
                         {64, 32, 256}, {128, 32, 128}, {64, 64, 64}};
    std::vector<ssb::BenchRow> rows;
    for (const Case& c : grid) rows.push_back(ssb::bench_case<float>(c.n, c.n, c.r, c.r, c.d, reps));
    ssb::write_bench_csv(std::cout, rows);
    if (!out_csv.empty()) {
        std::ofstream os(out_csv);
        if (!os) throw ssb::data_error("cannot open '" + out_csv + "' for writing");
        ssb::write_bench_csv(os, rows);
    }
    return 0;
}

int cmd_flops(const std::string& spec_name, std::size_t input_size, const std::string& convention,
              const std::string& variant, bool sparse, const std::string& out_csv) {
    ssb::NetworkSpec spec = ssb::spec_by_name(spec_name, ssb::parse_sampler_kind(variant));
    ssb::CostReport rep = ssb::count_flops(
        spec, input_size, ssb::parse_convention(convention),
        sparse ? ssb::SamplerCostMode::sparse : ssb::SamplerCostMode::dense);
    rep.write_table(std::cout);
    if (!out_csv.empty()) {
        std::ofstream os(out_csv);
        if (!os) throw ssb::data_error("cannot open '" + out_csv + "' for writing");
        rep.write_csv(os);
    }
    return 0;
}

int cmd_visualize(const std::string& config_path, const std::string& ckpt_path,
                  const std::string& image_path, const std::string& layer, const std::string& out,
                  int threads) {
    apply_threads(threads);
    ssb::RunConfig cfg = ssb::load_run_config(config_path);
    ssb::Network<float> net(cfg.network_spec(), cfg.seed);
    if (!ckpt_path.empty()) {
        ssb::Checkpoint ckpt = ssb::load_checkpoint(ckpt_path);
        net.load_state_dict(ckpt.tensors);
    }
    ssb::Tensor<float> image = ssb::read_ppm(image_path);
    fs::create_directories(out);
    ssb::VisualizeResult res = ssb::visualize(net, image, layer, out);
    std::cout << res.saliency_pgm << "\n" << res.resized_ppm << "\n" << res.sampled_ppm
              << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    // tensor buffers churn fast; keep glibc from bouncing them through mmap
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);

    CLI::App app{"saliency sampling bottleneck toolkit"};
    app.require_subcommand(1);

    std::string config_path, out, ckpt_path, image_path, layer = "2-2";
    std::uint64_t seed = 0;
    int threads = 0, reps = 25;

    CLI::App* train = app.add_subcommand("train", "train a network from a JSON config");
    train->add_option("--config", config_path, "JSON run config")->required();
    train->add_option("--seed", seed, "override config seed");
    train->add_option("--out", out, "override config output dir");
    train->add_option("--threads", threads, "worker threads (default: SSB_THREADS or cores)");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test batch");
    eval->add_option("--config", config_path, "JSON run config")->required();
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file (omit for fresh weights)");
    eval->add_option("--threads", threads, "worker threads");

    CLI::App* bench = app.add_subcommand("bench", "dense vs sparse sampling kernel timings");
    bench->add_option("--out", out, "CSV output path");
    bench->add_option("--reps", reps, "timed repetitions per case")->check(CLI::PositiveNumber);
    bench->add_option("--threads", threads, "worker threads");

    std::string spec_name = "micro", convention = "1xmac", variant = "adaptive";
    std::size_t input_size = 32;
    bool sparse_mode = false;
    CLI::App* flops = app.add_subcommand("flops", "analytical cost report for a spec");
    flops->add_option("spec", spec_name, "spec name")->required();
    flops->add_option("input_size", input_size, "square input resolution")->required();
    flops->add_option("convention", convention, "1xmac or 2xmac");
    flops->add_option("--variant", variant, "sampler variant");
    flops->add_flag("--sparse", sparse_mode, "cost the sparse sampling kernels");
    flops->add_option("--out", out, "CSV output path");

    CLI::App* vis = app.add_subcommand("visualize", "emit saliency and sampled images");
    vis->add_option("--config", config_path, "JSON run config")->required();
    vis->add_option("--checkpoint", ckpt_path, "checkpoint file (omit for fresh weights)");
    vis->add_option("--image", image_path, "input image (binary PPM)")->required();
    vis->add_option("--layer", layer, "sampled layer as group-block, e.g. 2-2");
    vis->add_option("--out", out, "output directory")->required();
    vis->add_option("--threads", threads, "worker threads");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(config_path, seed, out, threads);
        if (app.got_subcommand(eval)) return cmd_eval(config_path, ckpt_path, threads);
        if (app.got_subcommand(bench)) return cmd_bench(out, reps, threads);
        if (app.got_subcommand(flops))
            return cmd_flops(spec_name, input_size, convention, variant, sparse_mode, out);
        if (app.got_subcommand(vis))
            return cmd_visualize(config_path, ckpt_path, image_path, layer, out, threads);
    } catch (const ssb::numeric_error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 3;
    } catch (const ssb::error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 1;
}
