"""Round-trip a panorama between its two projections.

Builds a smooth synthetic 360 panorama, slices it into the six cube
faces, reassembles the equirectangular image from those faces, and
reports how much the double resampling cost. Writes the pieces as PNGs
so you can eyeball the seams.

Equivalent shell commands:
    panorect convert erp2cube pano.png faces/
    panorect convert cube2erp faces/ back.png
"""
from pathlib import Path

import numpy as np

from panorect import resample, tensorio
from panorect.dataset import synthetic_panorama
from panorect.images import ErpGridSpec

OUT = Path("demo_out/projections")
GRID = ErpGridSpec(512, 256)


def psnr(a, b):
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return 10.0 * np.log10(1.0 / mse) if mse > 1e-12 else 120.0


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    pano = synthetic_panorama(GRID, seed=7)
    tensorio.write_png(OUT / "pano.png", pano.data)

    cube = resample.erp_to_cubemap(pano, face_size=128)
    for i, name in enumerate(("+x", "-x", "+y", "-y", "+z", "-z")):
        tensorio.write_png(OUT / f"face{i}_{name.replace('+', 'p').replace('-', 'n')}.png",
                           cube.faces[i])

    back = resample.cubemap_to_erp(cube, GRID)
    tensorio.write_png(OUT / "roundtrip.png", back.data)

    print(f"panorama {GRID.width}x{GRID.height}, cube faces 6 x 128x128")
    print(f"erp -> cube -> erp PSNR: {psnr(pano.data, back.data):.2f} dB")
    print(f"wrote images to {OUT}/")


if __name__ == "__main__":
    main()
