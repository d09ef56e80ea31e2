"""Reference values computed with numpy / scipy / scikit-image / OpenCV.

Writes tests/oracle_values.hpp. The fixture images are integer formulas so the
C++ side rebuilds them bit-exactly (see tests/fixtures.hpp).
"""
import json
import math
import pathlib

import cv2
import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.metrics import structural_similarity

N = 16


def image_a():
    r, c = np.mgrid[0:N, 0:N]
    return ((r * 37 + c * 17 + r * c * 5) % 101) / 100.0


def image_b():
    r, c = np.mgrid[0:N, 0:N]
    return 0.5 * ((r * 23 + c * 41 + r * c * 3) % 89) / 88.0 + 0.5 * image_a()


def bimodal_gray():
    r, c = np.mgrid[0:N, 0:N]
    g = np.where((r * 7 + c * 3) % 97 < 40, 60 + (r * c) % 30, 170 + (r + c) % 50)
    return g.astype(np.uint8)


def ssim_bruteforce(a, b, w, k1=0.01, k2=0.03, rng=1.0):
    c1, c2 = (k1 * rng) ** 2, (k2 * rng) ** 2
    va = np.lib.stride_tricks.sliding_window_view(a, (w, w))
    vb = np.lib.stride_tricks.sliding_window_view(b, (w, w))
    ma, mb = va.mean(axis=(2, 3)), vb.mean(axis=(2, 3))
    sa = va.var(axis=(2, 3))
    sb = vb.var(axis=(2, 3))
    sab = (va * vb).mean(axis=(2, 3)) - ma * mb
    s = ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma**2 + mb**2 + c1) * (sa + sb + c2))
    return float(s.mean())


def otsu_bruteforce(gray):
    hist = np.bincount(gray.ravel(), minlength=256).astype(float)
    p = hist / hist.sum()
    best, best_k = -1.0, 0
    for k in range(256):
        w0, w1 = p[: k + 1].sum(), p[k + 1 :].sum()
        if w0 == 0 or w1 == 0:
            continue
        m0 = (np.arange(k + 1) * p[: k + 1]).sum() / w0
        m1 = (np.arange(k + 1, 256) * p[k + 1 :]).sum() / w1
        between = w0 * w1 * (m0 - m1) ** 2
        if between > best + 1e-12:
            best, best_k = between, k
    return best_k


def main():
    a, b = image_a(), image_b()
    out = {}

    betas = np.linspace(1e-4, 0.02, 200)
    abar = np.cumprod(1.0 - betas)
    for t in (1, 2, 50, 100, 200):
        out[f"alpha_bar_t{t}"] = float(abar[t - 1])
    out["beta_t100"] = float(betas[99])

    out["ssim_ab_w8"] = ssim_bruteforce(a, b, 8)
    out["ssim_ab_w7_skimage"] = float(
        structural_similarity(a, b, win_size=7, data_range=1.0, gaussian_weights=False, use_sample_covariance=False)
    )
    out["ncc_ab"] = float(np.corrcoef(a.ravel(), b.ravel())[0, 1])

    gray = bimodal_gray()
    k_brute = otsu_bruteforce(gray)
    k_skimage = int(threshold_otsu(gray, nbins=256))
    assert k_brute == k_skimage, (k_brute, k_skimage)
    out["otsu_bin"] = k_brute

    blurred = cv2.GaussianBlur(a, (7, 7), sigmaX=1.1, sigmaY=1.1, borderType=cv2.BORDER_REPLICATE)
    out["blur_a_sigma1p1_r3_sum"] = float(blurred.sum())
    out["blur_a_sigma1p1_r3_00"] = float(blurred[0, 0])
    out["blur_a_sigma1p1_r3_57"] = float(blurred[5, 7])

    shifted = ndimage.shift(a, (0.3, -0.2), order=1, mode="nearest")
    out["shift_a_sum"] = float(shifted.sum())
    out["shift_a_00"] = float(shifted[0, 0])
    out["shift_a_915"] = float(shifted[9, 15])

    half = 32
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    out["tfeat_t37_sin5"] = float(np.sin(37 * freqs[5]))
    out["tfeat_t37_cos20"] = float(np.cos(37 * freqs[20]))

    text = json.dumps({"b": [1, 2], "a": {"y": 0.5, "x": "s"}}, sort_keys=True, separators=(",", ":"))
    h = 0xCBF29CE484222325
    for byte in text.encode():
        h ^= byte
        h = (h * 0x100000001B3) % 2**64
    out["fnv_sample"] = f"{h:016x}"

    lines = ["#pragma once", "", "// Generated by tests/oracles/make_oracles.py; do not edit.", "", "namespace oracle {", ""]
    for key, value in out.items():
        if isinstance(value, str):
            lines.append(f'inline constexpr const char* {key} = "{value}";')
        elif isinstance(value, int):
            lines.append(f"inline constexpr int {key} = {value};")
        else:
            lines.append(f"inline constexpr double {key} = {value!r};")
    lines += ["", "}  // namespace oracle", ""]
    target = pathlib.Path(__file__).resolve().parent.parent / "oracle_values.hpp"
    target.write_text("\n".join(lines))
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
