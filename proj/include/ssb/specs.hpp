#pragma once

#include "ssb/network.hpp"

namespace ssb {

// Desk-scale CIFAR spec: single 3x3 stem, three bottleneck groups, sampling
// on the last two groups.
inline NetworkSpec micro_spec(SamplerKind variant = SamplerKind::adaptive) {
    NetworkSpec s;
    s.name = "micro";
    s.stem = StemKind::cifar;
    s.stem_width = 16;
    s.classes = 10;
    s.variant = variant;
    s.groups = {
        GroupSpec{2, 16, 1, false, 0, 0},
        GroupSpec{2, 32, 2, true, 8, 8},
        GroupSpec{2, 64, 2, true, 4, 4},
    };
    return s;
}

// Cost-table anchor; never trained here.
inline NetworkSpec resnet_d50_spec() {
    NetworkSpec s;
    s.name = "resnet-d-50";
    s.stem = StemKind::imagenet_deep;
    s.classes = 1000;
    s.groups = {
        GroupSpec{3, 64, 1, false, 0, 0},
        GroupSpec{4, 128, 2, false, 0, 0},
        GroupSpec{6, 256, 2, false, 0, 0},
        GroupSpec{3, 512, 2, false, 0, 0},
    };
    return s;
}

// Sampling sizes on the last three groups, default (16, 8, 4).
inline NetworkSpec ssb_resnet_d50_spec(std::size_t m1 = 16, std::size_t m2 = 8,
                                       std::size_t m3 = 4,
                                       SamplerKind variant = SamplerKind::adaptive) {
    NetworkSpec s = resnet_d50_spec();
    s.name = "ssb-resnet-d-50";
    s.variant = variant;
    s.groups[1].sampled = true;
    s.groups[1].sample_h = s.groups[1].sample_w = m1;
    s.groups[2].sampled = true;
    s.groups[2].sample_h = s.groups[2].sample_w = m2;
    s.groups[3].sampled = true;
    s.groups[3].sample_h = s.groups[3].sample_w = m3;
    return s;
}

inline NetworkSpec spec_by_name(const std::string& name,
                                SamplerKind variant = SamplerKind::adaptive) {
    if (name == "micro") return micro_spec(variant);
    if (name == "resnet-d-50") return resnet_d50_spec();
    if (name == "ssb-resnet-d-50") return ssb_resnet_d50_spec(16, 8, 4, variant);
    throw data_error("unknown spec '" + name + "' (known: micro, resnet-d-50, ssb-resnet-d-50)");
}

}  // namespace ssb
