#pragma once

#include <string>
#include <vector>

#include "ssb/cifar.hpp"
#include "ssb/image.hpp"
#include "ssb/network.hpp"

// Sampling visualization: runs one image through the network, grabs the
// probe of the selected sampled layer and emits the saliency map, the
// input resized to that layer's resolution, and the sampled image.

namespace ssb {

struct VisualizeResult {
    std::string saliency_pgm;
    std::string resized_ppm;
    std::string sampled_ppm;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> parse_layer_selector(const std::string& sel) {
    const auto dash = sel.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 >= sel.size())
        throw data_error("layer selector must be group-block, e.g. 2-2");
    std::size_t g = 0, b = 0;
    try {
        g = std::stoul(sel.substr(0, dash));
        b = std::stoul(sel.substr(dash + 1));
    } catch (const std::exception&) {
        throw data_error("layer selector must be group-block, e.g. 2-2");
    }
    return {g, b};
}

inline std::string valid_selectors(const NetworkSpec& spec) {
    std::string out;
    for (std::size_t g = 0; g < spec.groups.size(); ++g) {
        if (!spec.groups[g].sampled) continue;
        for (std::size_t b = 2; b <= spec.groups[g].blocks; ++b) {
            if (!out.empty()) out += ", ";
            out += std::to_string(g + 1) + "-" + std::to_string(b);
        }
    }
    return out.empty() ? "(none; no sampled layers)" : out;
}

}  // namespace detail

// image: [H,W,3] in [0,1]
template <class T>
VisualizeResult visualize(Network<T>& net, const Tensor<float>& image, const std::string& selector,
                          const std::string& out_dir) {
    const auto [gsel, bsel] = detail::parse_layer_selector(selector);
    const std::size_t input_size = net.spec.stem == StemKind::cifar ? 32 : 224;

    Tensor<float> resized_input = bilinear_resize(image, input_size, input_size);
    Tensor<T> batch({1, input_size, input_size, 3});
    for (std::size_t i = 0; i < resized_input.numel(); ++i)
        batch.data[i] = static_cast<T>((resized_input.data[i] - kCifarMean[i % 3]) /
                                       kCifarStd[i % 3]);

    ForwardProbe<T> probe;
    net.forward(batch, false, &probe);

    const SamplerProbe<T>* layer = nullptr;
    for (const auto& p : probe.layers)
        if (p.group == gsel && p.block == bsel) layer = &p;
    if (!layer)
        throw data_error("layer " + selector + " is not a sampled layer; valid selectors: " +
                         detail::valid_selectors(net.spec));

    VisualizeResult result;
    const std::string stem = out_dir + "/layer-" + std::to_string(gsel) + "-" +
                             std::to_string(bsel);

    Tensor<float> sal({layer->h, layer->w});
    for (std::size_t i = 0; i < sal.numel(); ++i)
        sal.data[i] = static_cast<float>(layer->saliency.data[i]);
    result.saliency_pgm = stem + "-saliency.pgm";
    write_pgm(result.saliency_pgm, sal);

    Tensor<float> at_layer = bilinear_resize(image, layer->h, layer->w);
    result.resized_ppm = stem + "-resized.ppm";
    write_ppm(result.resized_ppm, at_layer);

    Tensor<T> rgb = at_layer.template cast<T>();
    Tensor<T> sampled = sample_sparse(rgb, layer->weights[0]);
    result.sampled_ppm = stem + "-sampled.ppm";
    write_ppm(result.sampled_ppm, sampled.template cast<float>());
    return result;
}

}  // namespace ssb
