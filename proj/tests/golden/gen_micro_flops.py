#!/usr/bin/env python3
"""Regenerates micro_flops.csv from first principles.

Independent arithmetic for the micro network cost table (input 32, 1xMAC
convention, dense sampler accounting), kept separate from the C++ counter so
the two can cross-check each other.
"""

import os

ROWS = []


def row(name, kind, macs, params=0):
    ROWS.append((name, kind, macs, params))


def conv(name, k, cin, cout, res):
    row(name, "conv", k * k * cin * cout * res * res, k * k * cin * cout)


def bn(name, res, c):
    row(name, "bn", res * res * c, 2 * c)


def act(name, res, c):
    row(name, "act", res * res * c, 0)


def bottleneck(base, in_c, planes, cout, res_in, res_out, sampled_to=None, stride=1):
    """One bottleneck block. Transition blocks (stride/proj) pass sampled_to=None."""
    d = cout
    if sampled_to is None:
        conv(base + ".conv1", 1, in_c, planes, res_in)
        bn(base + ".bn1", res_in, planes)
        act(base + ".relu1", res_in, planes)
        r2 = res_out
    else:
        hin, hr = res_out, sampled_to
        conv(base + ".sal.conv", 1, d, 1, hin)
        bn(base + ".sal.bn", hin, 1)
        act(base + ".sal.sigmoid", hin, 1)
        row(base + ".sample", "sample", hr * hin * hin * d + hr * hr * hin * d)
        row(base + ".inv_sample", "sample", hin * hr * hr * d + hin * hin * hr * d)
        conv(base + ".conv1", 1, in_c, planes, hr)
        bn(base + ".bn1", hr, planes)
        act(base + ".relu1", hr, planes)
        r2 = hr
    conv(base + ".conv2", 3, planes, planes, r2)
    bn(base + ".bn2", r2, planes)
    act(base + ".relu2", r2, planes)
    conv(base + ".conv3", 1, planes, cout, r2)
    bn(base + ".bn3", r2, cout)
    if sampled_to is None and (in_c != cout or stride != 1):
        if stride != 1:
            row(base + ".proj.pool", "pool", res_out * res_out * in_c * stride * stride)
        conv(base + ".proj", 1, in_c, cout, res_out)
        bn(base + ".projbn", res_out, cout)
    row(base + ".add", "add", res_out * res_out * cout)
    act(base + ".relu", res_out, cout)


def main():
    conv("stem.conv1", 3, 3, 16, 32)
    bn("stem.bn1", 32, 16)
    act("stem.relu1", 32, 16)

    # group 1: 2 blocks, planes 16, stride 1, no sampling
    bottleneck("g1.b1", 16, 16, 64, 32, 32)
    bottleneck("g1.b2", 64, 16, 64, 32, 32)
    # group 2: 2 blocks, planes 32, stride 2, second block sampled to 8x8
    bottleneck("g2.b1", 64, 32, 128, 32, 16, stride=2)
    bottleneck("g2.b2", 128, 32, 128, 16, 16, sampled_to=8)
    # group 3: 2 blocks, planes 64, stride 2, second block sampled to 4x4
    bottleneck("g3.b1", 128, 64, 256, 16, 8, stride=2)
    bottleneck("g3.b2", 256, 64, 256, 8, 8, sampled_to=4)

    row("gap", "pool", 8 * 8 * 256)
    row("fc", "linear", 256 * 10, 256 * 10 + 10)

    out = os.path.join(os.path.dirname(__file__), "micro_flops.csv")
    with open(out, "w") as f:
        f.write("name,kind,macs,flops,params\n")
        for name, kind, macs, params in ROWS:
            f.write(f"{name},{kind},{macs},{macs},{params}\n")
        tm = sum(r[2] for r in ROWS)
        tp = sum(r[3] for r in ROWS)
        f.write(f"total,,{tm},{tm},{tp}\n")
    print(f"wrote {out}: {tm} MACs, {tp} params")


if __name__ == "__main__":
    main()
