"""Build a small training dataset from a directory of panoramas.

Writes a throwaway corpus of synthetic panoramas, then drives the same
code path as `panorect synth` to tilt each one by seeded random angles
and store the (input, ground truth) pairs in train/val/test splits.
Every sample directory holds the tilted ERP, its cubemap, the upright
target, the ground-truth LUT, and a meta.json with the exact angles.
"""
import json
from pathlib import Path

from panorect import cli, tensorio
from panorect.dataset import synthetic_panorama
from panorect.images import ErpGridSpec

CORPUS = Path("demo_out/corpus")
DATASET = Path("demo_out/dataset")
GRID = ErpGridSpec(128, 64)  # toy-model scale


def main():
    CORPUS.mkdir(parents=True, exist_ok=True)
    for i in range(10):
        tensorio.write_png(CORPUS / f"pano{i:02d}.png",
                           synthetic_panorama(GRID, seed=500 + i).data)
    print(f"corpus: 10 panoramas at {GRID.width}x{GRID.height} in {CORPUS}/")

    rc = cli.main(["synth", str(CORPUS), str(DATASET), "--seed", "100",
                   "--angle-range", "45"])
    assert rc == 0

    man = json.loads((DATASET / "manifest.json").read_text())
    print(f"splits: {man['counts']}")
    for sid in man["splits"]["train"][:3]:
        meta = json.loads((DATASET / "train" / sid / "meta.json").read_text())
        print(f"  {sid}: pitch {meta['pitch_deg']:+7.2f}  roll {meta['roll_deg']:+7.2f}")
    print(f"dataset written to {DATASET}/ (rerunning reproduces it byte for byte)")


if __name__ == "__main__":
    main()
