#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssb/checkpoint.hpp"
#include "ssb/cifar.hpp"
#include "ssb/network.hpp"
#include "ssb/specs.hpp"

namespace ssb {

struct RunConfig {
    std::string spec = "micro";
    std::string variant = "adaptive";
    std::vector<std::size_t> sampling_sizes;  // per sampled group, square; empty = spec default
    std::size_t epochs = 20;
    std::size_t batch_size = 128;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::string schedule = "cosine";  // or "step"
    std::size_t warmup_epochs = 1;
    std::uint64_t seed = 1;
    std::string data_dir;
    std::string out_dir = ".";
    std::size_t subset = 0;  // cap on train samples; 0 = all

    NetworkSpec network_spec() const {
        NetworkSpec s = spec_by_name(spec, parse_sampler_kind(variant));
        if (!sampling_sizes.empty()) {
            std::size_t i = 0;
            for (auto& g : s.groups) {
                if (!g.sampled) continue;
                if (i >= sampling_sizes.size())
                    throw data_error("sampling_sizes: expected one entry per sampled group");
                g.sample_h = g.sample_w = sampling_sizes[i++];
            }
            if (i != sampling_sizes.size())
                throw data_error("sampling_sizes: expected one entry per sampled group");
        }
        return s;
    }
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
    static const char* known[] = {"spec",     "variant",  "sampling_sizes", "epochs",
                                  "batch_size", "lr",     "momentum",       "weight_decay",
                                  "schedule", "warmup_epochs", "seed",      "data_dir",
                                  "out_dir",  "subset"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw data_error("config: unknown key '" + it.key() + "'");
    }
    RunConfig c;
    if (j.contains("spec")) c.spec = j.at("spec").get<std::string>();
    if (j.contains("variant")) c.variant = j.at("variant").get<std::string>();
    if (j.contains("sampling_sizes"))
        c.sampling_sizes = j.at("sampling_sizes").get<std::vector<std::size_t>>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("schedule")) c.schedule = j.at("schedule").get<std::string>();
    if (j.contains("warmup_epochs")) c.warmup_epochs = j.at("warmup_epochs").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("subset")) c.subset = j.at("subset").get<std::size_t>();
    if (c.schedule != "cosine" && c.schedule != "step")
        throw data_error("config: schedule must be 'cosine' or 'step'");
    if (c.epochs < 1 || c.batch_size < 1) throw data_error("config: epochs/batch_size must be >= 1");
    parse_sampler_kind(c.variant);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("config '" + path + "': " + e.what());
    }
    return parse_run_config(j);
}

struct MetricsRow {
    std::size_t epoch = 0;
    double train_loss = 0, train_acc = 0, val_acc = 0, wall_s = 0;
};

struct MetricsLog {
    std::vector<MetricsRow> rows;

    void write_csv(std::ostream& os) const {
        os << "epoch,train_loss,train_acc,val_acc,wall_s\n";
        os.precision(10);
        for (const auto& r : rows)
            os << r.epoch << "," << r.train_loss << "," << r.train_acc << "," << r.val_acc << ","
               << r.wall_s << "\n";
    }
    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw data_error("cannot open '" + path + "' for writing");
        write_csv(os);
    }
    static MetricsLog parse_csv(std::istream& is) {
        MetricsLog log;
        std::string line;
        if (!std::getline(is, line) || line != "epoch,train_loss,train_acc,val_acc,wall_s")
            throw data_error("metrics csv: bad header");
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            MetricsRow r;
            char c;
            std::istringstream ls(line);
            if (!(ls >> r.epoch >> c >> r.train_loss >> c >> r.train_acc >> c >> r.val_acc >> c >>
                  r.wall_s))
                throw data_error("metrics csv: bad row '" + line + "'");
            log.rows.push_back(r);
        }
        return log;
    }
};

namespace detail {

// One rng per (seed, epoch, sample); augmentation draws are independent of
// batch composition and iteration order.
inline std::mt19937 aug_rng(std::uint64_t seed, std::size_t epoch, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index),
                      0x9e3779b9u};
    return std::mt19937(seq);
}

// pad 4 + random 32x32 crop + horizontal flip, then channel normalization
inline void augment_into(const Dataset& ds, std::size_t src, Tensor<float>& batch, std::size_t dst,
                         std::uint64_t seed, std::size_t epoch) {
    auto rng = aug_rng(seed, epoch, src);
    std::uniform_int_distribution<int> off(0, 8);
    const int dy = off(rng), dx = off(rng);
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    for (int y = 0; y < 32; ++y) {
        const int sy = y + dy - 4;
        for (int x = 0; x < 32; ++x) {
            int sx = x + dx - 4;
            if (flip) sx = 31 - sx;
            for (std::size_t c = 0; c < 3; ++c) {
                float v = 0.0f;
                if (sy >= 0 && sy < 32 && sx >= 0 && sx < 32)
                    v = ds.images.at4(src, static_cast<std::size_t>(sy),
                                      static_cast<std::size_t>(sx), c);
                batch.at4(dst, static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
                    (v - kCifarMean[c]) / kCifarStd[c];
            }
        }
    }
}

inline void copy_into(const Dataset& ds, std::size_t src, Tensor<float>& batch, std::size_t dst) {
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                batch.at4(dst, y, x, c) =
                    (ds.images.at4(src, y, x, c) - kCifarMean[c]) / kCifarStd[c];
}

inline std::size_t count_correct(const Tensor<float>& logits, const std::vector<int>& labels,
                                 const std::vector<std::size_t>& idx, std::size_t begin) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits.data[i * k + j] > logits.data[i * k + best]) best = j;
        if (static_cast<int>(best) == labels[idx[begin + i]]) ++correct;
    }
    return correct;
}

}  // namespace detail

// Fractional-epoch position -> learning rate. Warmup is linear from 0.
inline double lr_at(const RunConfig& cfg, double progress) {
    const double w = static_cast<double>(cfg.warmup_epochs);
    if (w > 0 && progress < w) return cfg.lr * progress / w;
    const double total = static_cast<double>(cfg.epochs);
    if (cfg.schedule == "cosine") {
        const double t = total > w ? (progress - w) / (total - w) : 1.0;
        return cfg.lr * 0.5 * (1.0 + std::cos(t * 3.14159265358979323846));
    }
    double lr = cfg.lr;
    if (progress >= 0.5 * total) lr *= 0.1;
    if (progress >= 0.75 * total) lr *= 0.1;
    return lr;
}

template <class T>
double evaluate(Network<T>& net, const Dataset& ds, std::size_t batch_size = 250) {
    std::size_t correct = 0;
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
        const std::size_t n = std::min(batch_size, ds.size() - begin);
        Tensor<float> batch({n, 32, 32, 3});
        for (std::size_t i = 0; i < n; ++i) detail::copy_into(ds, begin + i, batch, i);
        Var<T> logits = net.forward(batch.template cast<T>(), false);
        logits->value.check_finite("eval logits");
        correct += detail::count_correct(logits->value.template cast<float>(), ds.labels, idx,
                                         begin);
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct TrainResult {
    MetricsLog log;
    Checkpoint checkpoint;
    double final_val_acc = 0;
};

// Average cross-entropy over a fixed sample set, no updates, inference mode.
template <class T>
double dataset_loss(Network<T>& net, const Dataset& ds, std::size_t limit,
                    std::size_t batch_size = 250) {
    const std::size_t total = limit ? std::min(limit, ds.size()) : ds.size();
    double loss_sum = 0;
    for (std::size_t begin = 0; begin < total; begin += batch_size) {
        const std::size_t n = std::min(batch_size, total - begin);
        Tensor<float> batch({n, 32, 32, 3});
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            detail::copy_into(ds, begin + i, batch, i);
            labels[i] = ds.labels[begin + i];
        }
        Var<T> loss = net.softmax_loss(batch, labels, false);
        loss_sum += static_cast<double>(loss->value.data[0]) * static_cast<double>(n);
    }
    return loss_sum / static_cast<double>(total);
}

template <class T>
TrainResult train(Network<T>& net, const RunConfig& cfg, const Dataset& train_ds,
                  const Dataset& val_ds, std::ostream* progress = nullptr) {
    const std::size_t total = cfg.subset ? std::min(cfg.subset, train_ds.size()) : train_ds.size();
    if (total == 0) throw data_error("empty training set");

    OptimizerState<T> opt;
    opt.momentum = static_cast<T>(cfg.momentum);
    opt.weight_decay = static_cast<T>(cfg.weight_decay);
    opt.bind(net.parameters());

    TrainResult result;
    {
        MetricsRow r0;
        r0.epoch = 0;
        r0.train_loss = dataset_loss(net, train_ds, total);
        r0.val_acc = evaluate(net, val_ds);
        result.log.rows.push_back(r0);
        if (progress)
            *progress << "epoch 0 loss " << r0.train_loss << " val " << r0.val_acc << std::endl;
    }

    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t steps_per_epoch = (total + cfg.batch_size - 1) / cfg.batch_size;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        {
            std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                              static_cast<std::uint32_t>(cfg.seed >> 32),
                              static_cast<std::uint32_t>(epoch), 0x5351554du};
            std::mt19937 shuffle_rng(seq);
            std::shuffle(order.begin(), order.end(), shuffle_rng);
        }
        double loss_sum = 0;
        std::size_t correct = 0, step = 0;
        for (std::size_t begin = 0; begin < total; begin += cfg.batch_size, ++step) {
            const std::size_t n = std::min(cfg.batch_size, total - begin);
            Tensor<float> batch({n, 32, 32, 3});
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) {
                detail::augment_into(train_ds, order[begin + i], batch, i, cfg.seed, epoch);
                labels[i] = train_ds.labels[order[begin + i]];
            }
            const double progress_epochs =
                static_cast<double>(epoch - 1) +
                static_cast<double>(step) / static_cast<double>(steps_per_epoch);
            opt.learning_rate = static_cast<T>(lr_at(cfg, progress_epochs));

            Var<T> logits;
            Var<T> loss = net.softmax_loss(batch, labels, true, &logits);
            const double loss_val = static_cast<double>(loss->value.data[0]);
            if (!std::isfinite(loss_val)) throw numeric_error("training loss is not finite");
            loss_sum += loss_val * static_cast<double>(n);
            {
                const std::size_t k = logits->value.dim(1);
                for (std::size_t i = 0; i < n; ++i) {
                    std::size_t best = 0;
                    for (std::size_t j = 1; j < k; ++j)
                        if (logits->value.data[i * k + j] > logits->value.data[i * k + best])
                            best = j;
                    if (static_cast<int>(best) == labels[i]) ++correct;
                }
            }
            backward(loss);
            sgd_step(net.parameters(), opt);
        }
        MetricsRow r;
        r.epoch = epoch;
        r.train_loss = loss_sum / static_cast<double>(total);
        r.train_acc = static_cast<double>(correct) / static_cast<double>(total);
        r.val_acc = evaluate(net, val_ds);
        r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.rows.push_back(r);
        if (progress)
            *progress << "epoch " << epoch << " lr " << static_cast<double>(opt.learning_rate) << " loss "
                      << r.train_loss << " train " << r.train_acc << " val " << r.val_acc << " ("
                      << r.wall_s << "s)" << std::endl;
    }

    result.final_val_acc = result.log.rows.back().val_acc;
    for (auto& [name, t] : net.state_dict())
        result.checkpoint.tensors.emplace(name, t.template cast<float>());
    result.checkpoint.epoch = static_cast<std::uint32_t>(cfg.epochs);
    result.checkpoint.seed = cfg.seed;
    return result;
}

}  // namespace ssb
