#pragma once

#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "ssb/network.hpp"

// Analytical multiply-accumulate accounting for a NetworkSpec, including the
// sampler contractions. Walks the same structure the builder creates, so the
// parameter totals agree with the built network exactly.

namespace ssb {

enum class FlopConvention { mac1, mac2 };  // FLOPs = MACs or 2*MACs

inline FlopConvention parse_convention(const std::string& s) {
    if (s == "1xmac" || s == "mac" || s == "1") return FlopConvention::mac1;
    if (s == "2xmac" || s == "2") return FlopConvention::mac2;
    throw data_error("unknown FLOP convention '" + s + "' (use 1xmac or 2xmac)");
}

enum class SamplerCostMode { dense, sparse };

struct CostRow {
    std::string name;
    std::string kind;
    std::uint64_t macs = 0;
    std::uint64_t params = 0;
};

struct CostReport {
    std::vector<CostRow> rows;
    FlopConvention convention = FlopConvention::mac1;

    std::uint64_t total_macs() const {
        std::uint64_t t = 0;
        for (const auto& r : rows) t += r.macs;
        return t;
    }
    std::uint64_t total_params() const {
        std::uint64_t t = 0;
        for (const auto& r : rows) t += r.params;
        return t;
    }
    std::uint64_t flops_of(std::uint64_t macs) const {
        return convention == FlopConvention::mac2 ? 2 * macs : macs;
    }
    std::uint64_t total_flops() const { return flops_of(total_macs()); }

    void write_csv(std::ostream& os) const {
        os << "name,kind,macs,flops,params\n";
        for (const auto& r : rows)
            os << r.name << "," << r.kind << "," << r.macs << "," << flops_of(r.macs) << ","
               << r.params << "\n";
        os << "total,," << total_macs() << "," << total_flops() << "," << total_params() << "\n";
    }

    void write_table(std::ostream& os) const {
        os << std::left << std::setw(24) << "layer" << std::setw(12) << "kind" << std::right
           << std::setw(14) << "MACs" << std::setw(14) << "FLOPs" << std::setw(12) << "params"
           << "\n";
        for (const auto& r : rows)
            os << std::left << std::setw(24) << r.name << std::setw(12) << r.kind << std::right
               << std::setw(14) << r.macs << std::setw(14) << flops_of(r.macs) << std::setw(12)
               << r.params << "\n";
        os << std::left << std::setw(24) << "total" << std::setw(12) << "" << std::right
           << std::setw(14) << total_macs() << std::setw(14) << total_flops() << std::setw(12)
           << total_params() << "\n";
    }
};

namespace detail {

struct CostWalker {
    CostReport& rep;

    void conv(const std::string& name, std::size_t k, std::size_t cin, std::size_t cout,
              std::size_t h, std::size_t w) {
        rep.rows.push_back({name, "conv", static_cast<std::uint64_t>(k) * k * cin * cout * h * w,
                            static_cast<std::uint64_t>(k) * k * cin * cout});
    }
    void bn(const std::string& name, std::size_t h, std::size_t w, std::size_t c) {
        rep.rows.push_back({name, "bn", static_cast<std::uint64_t>(h) * w * c,
                            static_cast<std::uint64_t>(2) * c});
    }
    void act(const std::string& name, std::size_t h, std::size_t w, std::size_t c) {
        rep.rows.push_back({name, "act", static_cast<std::uint64_t>(h) * w * c, 0});
    }
    void misc(const std::string& name, const std::string& kind, std::uint64_t macs,
              std::uint64_t params = 0) {
        rep.rows.push_back({name, kind, macs, params});
    }
};

}  // namespace detail

inline CostReport count_flops(const NetworkSpec& spec, std::size_t input_size,
                              FlopConvention convention,
                              SamplerCostMode sampler_mode = SamplerCostMode::dense) {
    spec.validate();
    CostReport rep;
    rep.convention = convention;
    detail::CostWalker cw{rep};

    std::size_t res = input_size;
    std::size_t cin;
    if (spec.stem == StemKind::cifar) {
        cw.conv("stem.conv1", 3, 3, spec.stem_width, res, res);
        cw.bn("stem.bn1", res, res, spec.stem_width);
        cw.act("stem.relu1", res, res, spec.stem_width);
        cin = spec.stem_width;
    } else {
        std::size_t widths[3] = {32, 32, 64};
        std::size_t prev = 3;
        res = (res + 1) / 2;
        for (int i = 0; i < 3; ++i) {
            std::string b = "stem.conv" + std::to_string(i + 1);
            cw.conv(b, 3, prev, widths[i], res, res);
            cw.bn("stem.bn" + std::to_string(i + 1), res, res, widths[i]);
            cw.act("stem.relu" + std::to_string(i + 1), res, res, widths[i]);
            prev = widths[i];
        }
        res = (res + 1) / 2;
        cw.misc("stem.maxpool", "pool", static_cast<std::uint64_t>(res) * res * 64 * 9);
        cin = 64;
    }

    for (std::size_t g = 0; g < spec.groups.size(); ++g) {
        const GroupSpec& gs = spec.groups[g];
        std::size_t cout = gs.planes * spec.expansion;
        std::size_t rin = res;
        res = (res + gs.stride - 1) / gs.stride;
        for (std::size_t b = 0; b < gs.blocks; ++b) {
            std::string base = "g" + std::to_string(g + 1) + ".b" + std::to_string(b + 1);
            std::size_t in_c = b == 0 ? cin : cout;
            bool sampled = gs.sampled && b > 0;
            std::size_t rr = res;
            if (sampled) {
                if (spec.variant == SamplerKind::dconv_bilinear)
                    rr = (res + spec.dconv_stride - 1) / spec.dconv_stride;
                else
                    rr = gs.sample_h;
            }
            if (b == 0) {
                // transition: conv1 at the incoming resolution, stride on conv2
                cw.conv(base + ".conv1", 1, in_c, gs.planes, rin, rin);
                cw.bn(base + ".bn1", rin, rin, gs.planes);
                cw.act(base + ".relu1", rin, rin, gs.planes);
            } else {
                if (sampled) {
                    std::size_t d = cout, hin = res, hr = gs.sample_h, wr = gs.sample_w;
                    if (spec.variant == SamplerKind::adaptive) {
                        std::size_t k = spec.saliency_kernel;
                        cw.conv(base + ".sal.conv", k, d, 1, hin, hin);
                        cw.bn(base + ".sal.bn", hin, hin, 1);
                        cw.act(base + ".sal.sigmoid", hin, hin, 1);
                    }
                    if (spec.variant == SamplerKind::adaptive ||
                        spec.variant == SamplerKind::uniform_mechanism) {
                        std::uint64_t fwd, inv;
                        if (sampler_mode == SamplerCostMode::dense) {
                            fwd = static_cast<std::uint64_t>(hr) * hin * hin * d +
                                  static_cast<std::uint64_t>(hr) * wr * hin * d;
                            inv = static_cast<std::uint64_t>(hin) * hr * wr * d +
                                  static_cast<std::uint64_t>(hin) * hin * wr * d;
                        } else {
                            // nnz(Gy) <= H_in + H_r, nnz(Gx) <= W_in + W_r
                            fwd = static_cast<std::uint64_t>(hin + hr) * hin * d +
                                  static_cast<std::uint64_t>(hin + wr) * hr * d;
                            inv = static_cast<std::uint64_t>(hin + hr) * wr * d +
                                  static_cast<std::uint64_t>(hin + wr) * hin * d;
                        }
                        cw.misc(base + ".sample", "sample", fwd);
                        cw.misc(base + ".inv_sample", "sample", inv);
                    } else if (spec.variant == SamplerKind::bilinear) {
                        cw.misc(base + ".resize_down", "resize",
                                static_cast<std::uint64_t>(hr) * wr * d * 4);
                        cw.misc(base + ".resize_up", "resize",
                                static_cast<std::uint64_t>(hin) * hin * d * 4);
                    } else {
                        std::size_t k = spec.dconv_kernel;
                        cw.misc(base + ".dconv", "conv",
                                static_cast<std::uint64_t>(k) * k * d * rr * rr,
                                static_cast<std::uint64_t>(k) * k * d);
                        cw.misc(base + ".resize_up", "resize",
                                static_cast<std::uint64_t>(hin) * hin * d * 4);
                    }
                }
                cw.conv(base + ".conv1", 1, in_c, gs.planes, rr, rr);
                cw.bn(base + ".bn1", rr, rr, gs.planes);
                cw.act(base + ".relu1", rr, rr, gs.planes);
            }
            std::size_t r2 = b == 0 ? res : rr;
            cw.conv(base + ".conv2", 3, gs.planes, gs.planes, r2, r2);
            cw.bn(base + ".bn2", r2, r2, gs.planes);
            cw.act(base + ".relu2", r2, r2, gs.planes);
            cw.conv(base + ".conv3", 1, gs.planes, cout, r2, r2);
            cw.bn(base + ".bn3", r2, r2, cout);
            if (b == 0 && (in_c != cout || gs.stride != 1)) {
                if (gs.stride != 1)
                    cw.misc(base + ".proj.pool", "pool",
                            static_cast<std::uint64_t>(res) * res * in_c * gs.stride * gs.stride);
                cw.conv(base + ".proj", 1, in_c, cout, res, res);
                cw.bn(base + ".projbn", res, res, cout);
            }
            cw.misc(base + ".add", "add", static_cast<std::uint64_t>(res) * res * cout);
            cw.act(base + ".relu", res, res, cout);
        }
        cin = cout;
    }
    cw.misc("gap", "pool", static_cast<std::uint64_t>(res) * res * cin);
    cw.misc("fc", "linear", static_cast<std::uint64_t>(cin) * spec.classes,
            static_cast<std::uint64_t>(cin) * spec.classes + spec.classes);
    return rep;
}

}  // namespace ssb
