#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssb/ops.hpp"
#include "ssb/sampler_ops.hpp"

// The SSB layer (sample -> residual branch -> inverse sample -> shortcut ->
// activation), the saliency head, and a builder that applies the insertion
// rules (per-group sampling size, first block of each group kept in its
// original form) to bottleneck-residual specs.

namespace ssb {

enum class SamplerKind { adaptive, uniform_mechanism, bilinear, dconv_bilinear };

inline const char* to_string(SamplerKind k) {
    switch (k) {
        case SamplerKind::adaptive: return "adaptive";
        case SamplerKind::uniform_mechanism: return "uniform-mechanism";
        case SamplerKind::bilinear: return "bilinear";
        case SamplerKind::dconv_bilinear: return "dconv-bilinear";
    }
    return "?";
}

inline SamplerKind parse_sampler_kind(const std::string& s) {
    if (s == "adaptive") return SamplerKind::adaptive;
    if (s == "uniform-mechanism" || s == "uniform") return SamplerKind::uniform_mechanism;
    if (s == "bilinear") return SamplerKind::bilinear;
    if (s == "dconv-bilinear") return SamplerKind::dconv_bilinear;
    throw data_error("unknown sampler variant: " + s);
}

enum class StemKind { cifar, imagenet_deep };

struct GroupSpec {
    std::size_t blocks = 1;
    std::size_t planes = 16;  // 3x3 width; block output = planes * expansion
    std::size_t stride = 1;
    bool sampled = false;
    std::size_t sample_h = 0, sample_w = 0;
    // Transition blocks are never wrapped; a spec asking for it is invalid.
    bool include_first_block = false;
};

struct NetworkSpec {
    std::string name = "net";
    StemKind stem = StemKind::cifar;
    std::size_t stem_width = 16;  // cifar stem; deep stem ends at 64
    std::vector<GroupSpec> groups;
    std::size_t classes = 10;
    std::size_t expansion = 4;
    SamplerKind variant = SamplerKind::adaptive;
    std::size_t saliency_kernel = 1;
    std::size_t dconv_kernel = 5;
    std::size_t dconv_stride = 2;

    void validate() const {
        if (groups.empty()) throw data_error("spec '" + name + "': no groups");
        if (classes < 2) throw data_error("spec '" + name + "': needs at least 2 classes");
        if (expansion < 1) throw data_error("spec '" + name + "': expansion must be >= 1");
        if (saliency_kernel != 1 && saliency_kernel != 3 && saliency_kernel != 5)
            throw data_error("spec '" + name + "': saliency kernel must be 1, 3 or 5");
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const GroupSpec& gs = groups[g];
            if (gs.blocks < 1) throw data_error("spec '" + name + "': empty group");
            if (gs.include_first_block)
                throw data_error("spec '" + name + "': group " + std::to_string(g + 1) +
                                 " asks to sample its first block; transition blocks keep "
                                 "their original form");
            if (gs.sampled && (gs.sample_h == 0 || gs.sample_w == 0))
                throw data_error("spec '" + name + "': sampled group " + std::to_string(g + 1) +
                                 " has no sampling size");
        }
    }
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Every parameter gets its own stream derived from (seed, name), so the
// presence of optional parameters (saliency heads) cannot shift the draws
// of the shared backbone weights.
inline std::mt19937 param_rng(std::uint64_t seed, const std::string& name) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(fnv1a(name)),
                      static_cast<std::uint32_t>(fnv1a(name) >> 32)};
    return std::mt19937(seq);
}

}  // namespace detail

template <class T>
struct SaliencyHead {
    Var<T> conv_w;  // k,k,C,1
    BatchNormParams<T> bn;  // gamma starts at 0: uniform sampling at init

    // conv -> BN -> sigmoid -> reshape to N,H,W
    Var<T> forward(const Var<T>& x, bool training) {
        Var<T> s = conv2d(x, conv_w, 1, Padding::same);
        s = batchnorm(s, bn, training);
        s = sigmoid(s);
        const Shape& sh = s->value.shape;
        return reshape(s, {sh[0], sh[1], sh[2]});
    }
};

template <class T>
struct Block {
    bool transition = false;
    std::size_t stride = 1;
    Var<T> conv1_w, conv2_w, conv3_w;
    BatchNormParams<T> bn1, bn2, bn3;
    bool has_proj = false;
    bool proj_pool = false;  // avgpool before the 1x1 (strided transitions)
    Var<T> proj_w;
    BatchNormParams<T> proj_bn;

    bool sampled = false;
    SamplerKind variant = SamplerKind::adaptive;
    std::size_t sample_h = 0, sample_w = 0;
    SaliencyHead<T> head;  // adaptive only
    Var<T> dconv_w;        // dconv-bilinear only
    std::size_t dconv_stride = 2;
};

// Captured sampler state of one forward pass, for visualization.
template <class T>
struct SamplerProbe {
    std::size_t group = 0, block = 0;  // 1-based, matching "group-index" names
    std::size_t h = 0, w = 0, hr = 0, wr = 0;
    Tensor<T> saliency;  // [N,H,W]
    std::vector<SamplingWeights<T>> weights;  // per batch element
};

template <class T>
struct ForwardProbe {
    std::vector<SamplerProbe<T>> layers;
};

template <class T>
class Network {
  public:
    NetworkSpec spec;

    Network(NetworkSpec s, std::uint64_t seed) : spec(std::move(s)), seed_(seed) {
        spec.validate();
        build();
    }

    // x: [N,H,W,3] -> logits [N,classes]
    Var<T> forward(const Tensor<T>& x, bool training, ForwardProbe<T>* probe = nullptr) {
        if (x.rank() != 4) throw shape_error("network input must be N,H,W,C");
        Var<T> h = constant(x);
        h = stem_forward(h, training);
        for (std::size_t g = 0; g < blocks_.size(); ++g)
            for (std::size_t b = 0; b < blocks_[g].size(); ++b)
                h = block_forward(blocks_[g][b], g + 1, b + 1, h, training, probe);
        h = global_avg_pool(h);
        return linear(h, fc_w_, fc_b_);
    }

    // images [N,32,32,3] as float; returns the mean cross-entropy
    Var<T> softmax_loss(const Tensor<float>& images, const std::vector<int>& labels, bool training,
                        Var<T>* logits_out = nullptr) {
        Var<T> logits = forward(images.template cast<T>(), training);
        if (logits_out) *logits_out = logits;
        return softmax_cross_entropy(logits, labels);
    }

    const std::vector<Var<T>>& parameters() const { return param_list_; }
    const std::vector<std::pair<std::string, Var<T>>>& named_parameters() const {
        return named_params_;
    }

    // built on demand: the blocks live in vectors that move while the network
    // is assembled, so pointers into them are only stable afterwards
    std::vector<std::pair<std::string, Tensor<T>*>> named_buffers() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        auto add = [&](const std::string& prefix, BatchNormParams<T>& bn) {
            out.emplace_back(prefix + ".rmean", &bn.running_mean);
            out.emplace_back(prefix + ".rvar", &bn.running_var);
        };
        for (std::size_t i = 0; i < stem_bns_.size(); ++i)
            add("stem.bn" + std::to_string(i + 1), stem_bns_[i]);
        for (std::size_t g = 0; g < blocks_.size(); ++g)
            for (std::size_t b = 0; b < blocks_[g].size(); ++b) {
                std::string base = "g" + std::to_string(g + 1) + ".b" + std::to_string(b + 1);
                Block<T>& blk = blocks_[g][b];
                add(base + ".bn1", blk.bn1);
                add(base + ".bn2", blk.bn2);
                add(base + ".bn3", blk.bn3);
                if (blk.has_proj) add(base + ".projbn", blk.proj_bn);
                if (blk.sampled && blk.variant == SamplerKind::adaptive)
                    add(base + ".sal.bn", blk.head.bn);
            }
        return out;
    }

    std::size_t parameter_count(bool include_saliency = true) const {
        std::size_t n = 0;
        for (const auto& [name, v] : named_params_) {
            if (!include_saliency && name.find(".sal.") != std::string::npos) continue;
            n += v->value.numel();
        }
        return n;
    }

    std::map<std::string, Tensor<T>> state_dict() {
        std::map<std::string, Tensor<T>> out;
        for (const auto& [name, v] : named_params_) out.emplace(name, v->value);
        for (const auto& [name, t] : named_buffers()) out.emplace(name, *t);
        return out;
    }

    void load_state_dict(const std::map<std::string, Tensor<T>>& state) {
        for (auto& [name, v] : named_params_) assign(state, name, v->value);
        for (auto& [name, t] : named_buffers()) assign(state, name, *t);
    }

  private:
    std::uint64_t seed_;
    std::vector<Var<T>> stem_convs_;
    std::vector<BatchNormParams<T>> stem_bns_;
    std::vector<std::vector<Block<T>>> blocks_;
    Var<T> fc_w_, fc_b_;
    std::vector<Var<T>> param_list_;
    std::vector<std::pair<std::string, Var<T>>> named_params_;

    static void assign(const std::map<std::string, Tensor<T>>& state, const std::string& name,
                       Tensor<T>& dst) {
        auto it = state.find(name);
        if (it == state.end()) throw data_error("checkpoint is missing tensor '" + name + "'");
        if (it->second.shape != dst.shape)
            throw data_error("checkpoint tensor '" + name + "' has shape " +
                             shape_str(it->second.shape) + ", expected " + shape_str(dst.shape));
        dst = it->second;
    }

    Var<T> add_param(const std::string& name, Tensor<T> value) {
        Var<T> v = make_leaf(std::move(value), true);
        named_params_.emplace_back(name, v);
        param_list_.push_back(v);
        return v;
    }

    Var<T> he_conv(const std::string& name, std::size_t kh, std::size_t kw, std::size_t cin,
                   std::size_t cout) {
        auto rng = detail::param_rng(seed_, name);
        T std_dev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(kh * kw * cin)));
        return add_param(name, randn<T>({kh, kw, cin, cout}, rng, std_dev));
    }

    BatchNormParams<T> make_bn(const std::string& prefix, std::size_t c, T gamma_init) {
        BatchNormParams<T> bn = BatchNormParams<T>::create(c, gamma_init);
        named_params_.emplace_back(prefix + ".gamma", bn.gamma);
        named_params_.emplace_back(prefix + ".beta", bn.beta);
        param_list_.push_back(bn.gamma);
        param_list_.push_back(bn.beta);
        return bn;
    }

    void build() {
        std::size_t cin;
        if (spec.stem == StemKind::cifar) {
            stem_convs_.push_back(he_conv("stem.conv1.w", 3, 3, 3, spec.stem_width));
            stem_bns_.push_back(make_bn("stem.bn1", spec.stem_width, T(1)));
            cin = spec.stem_width;
        } else {
            // ResNet-D deep stem: 3x3/2 -> 3x3 -> 3x3, then 3x3/2 max pool
            std::size_t widths[3] = {32, 32, 64};
            std::size_t prev = 3;
            for (int i = 0; i < 3; ++i) {
                std::string base = "stem.conv" + std::to_string(i + 1);
                stem_convs_.push_back(he_conv(base + ".w", 3, 3, prev, widths[i]));
                stem_bns_.push_back(make_bn("stem.bn" + std::to_string(i + 1), widths[i], T(1)));
                prev = widths[i];
            }
            cin = 64;
        }
        for (std::size_t g = 0; g < spec.groups.size(); ++g) {
            const GroupSpec& gs = spec.groups[g];
            std::size_t cout = gs.planes * spec.expansion;
            std::vector<Block<T>> group;
            for (std::size_t b = 0; b < gs.blocks; ++b) {
                std::string base = "g" + std::to_string(g + 1) + ".b" + std::to_string(b + 1);
                Block<T> blk;
                blk.transition = (b == 0);
                blk.stride = blk.transition ? gs.stride : 1;
                std::size_t in_c = blk.transition ? cin : cout;
                blk.conv1_w = he_conv(base + ".conv1.w", 1, 1, in_c, gs.planes);
                blk.bn1 = make_bn(base + ".bn1", gs.planes, T(1));
                blk.conv2_w = he_conv(base + ".conv2.w", 3, 3, gs.planes, gs.planes);
                blk.bn2 = make_bn(base + ".bn2", gs.planes, T(1));
                blk.conv3_w = he_conv(base + ".conv3.w", 1, 1, gs.planes, cout);
                blk.bn3 = make_bn(base + ".bn3", cout, T(1));
                if (blk.transition && (in_c != cout || blk.stride != 1)) {
                    blk.has_proj = true;
                    blk.proj_pool = blk.stride != 1;
                    blk.proj_w = he_conv(base + ".proj.w", 1, 1, in_c, cout);
                    blk.proj_bn = make_bn(base + ".projbn", cout, T(1));
                }
                if (!blk.transition && gs.sampled) {
                    blk.sampled = true;
                    blk.variant = spec.variant;
                    blk.sample_h = gs.sample_h;
                    blk.sample_w = gs.sample_w;
                    if (blk.variant == SamplerKind::adaptive) {
                        std::size_t k = spec.saliency_kernel;
                        blk.head.conv_w = he_conv(base + ".sal.conv.w", k, k, cout, 1);
                        blk.head.bn = make_bn(base + ".sal.bn", 1, T(0));
                    } else if (blk.variant == SamplerKind::dconv_bilinear) {
                        std::size_t k = spec.dconv_kernel;
                        auto rng = detail::param_rng(seed_, base + ".dconv.w");
                        T std_dev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(k * k)));
                        blk.dconv_w =
                            add_param(base + ".dconv.w", randn<T>({k, k, cout}, rng, std_dev));
                        blk.dconv_stride = spec.dconv_stride;
                    }
                }
                group.push_back(std::move(blk));
            }
            blocks_.push_back(std::move(group));
            cin = cout;
        }
        {
            auto rng = detail::param_rng(seed_, "fc.w");
            T std_dev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(cin)));
            fc_w_ = add_param("fc.w", randn<T>({cin, spec.classes}, rng, std_dev));
            fc_b_ = add_param("fc.b", Tensor<T>({spec.classes}));
        }
    }

    Var<T> stem_forward(Var<T> h, bool training) {
        if (spec.stem == StemKind::cifar) {
            h = conv2d(h, stem_convs_[0], 1, Padding::same);
            h = relu(batchnorm(h, stem_bns_[0], training));
        } else {
            for (int i = 0; i < 3; ++i) {
                h = conv2d(h, stem_convs_[i], i == 0 ? 2 : 1, Padding::same);
                h = relu(batchnorm(h, stem_bns_[i], training));
            }
            h = max_pool2d(h, 3, 2);
        }
        return h;
    }

    // The wrapped residual branch: 1x1 reduce, 3x3, 1x1 expand.
    Var<T> residual_branch(Block<T>& blk, Var<T> h, bool training, std::size_t stride) {
        h = relu(batchnorm(conv2d(h, blk.conv1_w, 1, Padding::same), blk.bn1, training));
        h = relu(batchnorm(conv2d(h, blk.conv2_w, stride, Padding::same), blk.bn2, training));
        h = batchnorm(conv2d(h, blk.conv3_w, 1, Padding::same), blk.bn3, training);
        return h;
    }

    Var<T> block_forward(Block<T>& blk, std::size_t gi, std::size_t bi, Var<T> x, bool training,
                         ForwardProbe<T>* probe) {
        if (!blk.sampled) {
            Var<T> branch = residual_branch(blk, x, training, blk.stride);
            Var<T> shortcut = x;
            if (blk.has_proj) {
                Var<T> p = x;
                if (blk.proj_pool) p = avg_pool2d(p, blk.stride);
                p = conv2d(p, blk.proj_w, 1, Padding::same);
                shortcut = batchnorm(p, blk.proj_bn, training);
            }
            return relu(add(shortcut, branch));
        }

        std::size_t n = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
        std::size_t hr = blk.sample_h, wr = blk.sample_w;
        if (hr > h || wr > w)
            throw shape_error("sampling size " + std::to_string(hr) + "x" + std::to_string(wr) +
                              " exceeds input " + std::to_string(h) + "x" + std::to_string(w));
        Var<T> out;
        if (blk.variant == SamplerKind::adaptive || blk.variant == SamplerKind::uniform_mechanism) {
            BatchWeights<T> weights;
            Tensor<T> saliency({n, h, w});
            if (blk.variant == SamplerKind::adaptive) {
                Var<T> s = blk.head.forward(x, training);
                saliency = s->value;
                BatchMarginals<T> m = marginalize_op(s);
                weights = BatchWeights<T>{build_weights_op(m.sy, hr), build_weights_op(m.sx, wr)};
            } else {
                saliency.fill(T(0.5));
                weights = uniform_weights_op<T>(h, w, hr, wr);
            }
            if (probe) {
                SamplerProbe<T> p;
                p.group = gi;
                p.block = bi;
                p.h = h;
                p.w = w;
                p.hr = hr;
                p.wr = wr;
                p.saliency = saliency;
                for (std::size_t i = 0; i < n; ++i) p.weights.push_back(weights.at(i));
                probe->layers.push_back(std::move(p));
            }
            Var<T> xr = sample_op(x, weights);
            Var<T> yr = residual_branch(blk, xr, training, 1);
            out = inverse_sample_op(yr, weights);
        } else if (blk.variant == SamplerKind::bilinear) {
            Var<T> xr = bilinear_resize_op(x, hr, wr);
            Var<T> yr = residual_branch(blk, xr, training, 1);
            out = bilinear_resize_op(yr, h, w);
        } else {
            Var<T> xr = depthwise_conv2d(x, blk.dconv_w, blk.dconv_stride);
            Var<T> yr = residual_branch(blk, xr, training, 1);
            out = bilinear_resize_op(yr, h, w);
        }
        return relu(add(x, out));
    }
};

}  // namespace ssb
