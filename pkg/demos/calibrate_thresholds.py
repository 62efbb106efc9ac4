"""Calibrate the resampling quality floors recorded in panorect.calibration.

Two numbers gate the geometry/resampling stack:

* ERP_CUBE_ROUNDTRIP_PSNR_DB: worst PSNR of erp -> cubemap -> erp over a
  fixed set of synthetic panoramas (full image).
* LUT_RECOVERY_PSNR_DB: worst PSNR of rectifying a tilted panorama with
  its ground-truth LUT, measured on the |latitude| < 60 deg band, over a
  fixed set of panoramas and tilt angles within +/-60 deg.
* RECTIFY_PNG_PSNR_DB: the same recovery, but through the 8-bit command
  line pipeline (quantized upright, quantized tilted render, toy-scale
  128x64 grid), which is what `panorect rectify --pitch --roll` sees.

Run this script after touching the resampling stack; if the printed
floors move by more than the recorded tolerance, update calibration.py
and say why in the commit.
"""
import numpy as np

from panorect.dataset import quantize8, stream_rng, synthetic_panorama
from panorect.images import ErpGridSpec, ErpImage, InclinationAngles
from panorect import resample

GRID = ErpGridSpec(512, 256)
SEED = 100
N_CASES = 20


def psnr(a, b, mask=None):
    d = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2
    if mask is not None:
        d = d[:, mask]
    mse = float(d.mean())
    return 120.0 if mse <= 1e-12 else min(10.0 * np.log10(1.0 / mse), 120.0)


def band(grid, lat_deg=60.0):
    v = np.arange(grid.height)
    lat = 90.0 - 180.0 * (v + 0.5) / grid.height
    return np.repeat((np.abs(lat) < lat_deg)[:, None], grid.width, axis=1)


def main():
    # --- floor 1: projection round trip -----------------------------------
    vals = []
    for seed in range(10):
        img = synthetic_panorama(GRID, seed)
        back = resample.cubemap_to_erp(resample.erp_to_cubemap(img, 128), GRID)
        vals.append(psnr(img.data, back.data))
    t1 = min(vals)
    print(f"erp->cube->erp PSNR over 10 images: min {t1:.2f} dB, "
          f"median {np.median(vals):.2f} dB")

    # --- floor 2: rectification by ground-truth LUT -----------------------
    from panorect.dataset import ground_truth_lut

    m = band(GRID)
    vals2 = []
    for i in range(N_CASES):
        img = synthetic_panorama(GRID, i)
        g = stream_rng(SEED, 1, i)
        p, r = g.uniform(-60.0, 60.0, size=2)
        a = InclinationAngles(float(p), float(r))
        tilted = resample.rotate_erp(img, a)
        lut = ground_truth_lut(a, GRID)
        rec = resample.apply_lut(tilted, lut)
        unrect = psnr(img.data, tilted.data, m)
        rectok = psnr(img.data, rec.data, m)
        vals2.append(rectok)
        print(f"  case {i:2d}: tilt ({p:+6.1f},{r:+6.1f})  "
              f"unrectified {unrect:6.2f} dB  recovered {rectok:6.2f} dB")
    t2 = min(vals2)
    print(f"LUT recovery band PSNR over {N_CASES} cases: min {t2:.2f} dB, "
          f"median {np.median(vals2):.2f} dB")

    # --- floor 3: rectification through the 8-bit toy-scale pipeline ------
    toy = ErpGridSpec(128, 64)
    mt = band(toy)
    vals3 = []
    for i in range(N_CASES):
        up = ErpImage(quantize8(synthetic_panorama(toy, i).data))
        g = stream_rng(SEED, 1, i)
        p, r = g.uniform(-60.0, 60.0, size=2)
        a = InclinationAngles(float(p), float(r))
        tilted = ErpImage(quantize8(resample.rotate_erp(up, a).data))
        lut = ground_truth_lut(a, toy, dtype=np.float64)
        rec = resample.apply_lut(tilted, lut)
        vals3.append(psnr(up.data, rec.data, mt))
    t3 = min(vals3)
    print(f"8-bit toy-scale recovery band PSNR over {N_CASES} cases: "
          f"min {t3:.2f} dB, median {np.median(vals3):.2f} dB")
    print()
    print(f"ERP_CUBE_ROUNDTRIP_PSNR_DB = {np.floor(t1 * 10) / 10:.1f}")
    print(f"LUT_RECOVERY_PSNR_DB = {np.floor(t2 * 10) / 10:.1f}")
    print(f"RECTIFY_PNG_PSNR_DB = {np.floor(t3 * 10) / 10:.1f}")


if __name__ == "__main__":
    main()
