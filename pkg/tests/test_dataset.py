import json

import numpy as np
import pytest

from panorect import dataset, resample, tensorio
from panorect.dataset import (
    Sample,
    SplitSpec,
    SynthConfig,
    degrade_gaussian,
    degrade_mosaic,
    ground_truth_lut,
    split_dataset,
    stream_rng,
    synth_sample,
    synthetic_panorama,
)
from panorect.errors import ConfigError, DataError
from panorect.images import ErpGridSpec, ErpImage, InclinationAngles

from helpers import psnr, rng

CFG = SynthConfig(erp_height=32, face_size=16, angle_range_deg=60.0, seed=100)


def make_sample(index=0, cfg=CFG):
    return synth_sample(synthetic_panorama(cfg.grid, index), cfg, index)


class TestSynth:
    def test_deterministic(self):
        a = make_sample(3)
        b = make_sample(3)
        assert a == b

    def test_angles_within_range(self):
        cfg = SynthConfig(erp_height=32, face_size=16, angle_range_deg=30.0, seed=5)
        for i in range(50):
            a = dataset.draw_angles(cfg, i)
            assert abs(a.pitch_deg) <= 30.0 and abs(a.roll_deg) <= 30.0

    def test_angle_mean_near_zero(self):
        cfg = SynthConfig(angle_range_deg=60.0, seed=100)
        n = 100_000
        ps = np.empty(n)
        for i in range(n):
            g = stream_rng(cfg.seed, 1, i)
            ps[i] = g.uniform(-60.0, 60.0, size=2)[0]
        assert abs(ps.mean()) < 1.0

    def test_cubemap_matches_single_code_path(self):
        s = make_sample(1)
        again = resample.erp_to_cubemap(s.nonupright_erp, CFG.face_size)
        assert np.array_equal(s.nonupright_cubemap.faces, again.faces.astype(np.float32))

    def test_tilted_is_rotation_of_upright(self):
        s = make_sample(2)
        again = resample.rotate_erp(s.upright_gt, s.angles_gt)
        # stored image is quantized to the 8-bit grid
        assert np.abs(again.data - s.nonupright_erp.data).max() <= 0.5 / 255 + 1e-6

    def test_lut_unit_norm(self):
        s = make_sample(4)
        assert np.abs(s.lut_gt.norms() - 1.0).max() < 1e-6

    def test_lut_recovers_upright(self):
        s = make_sample(5)
        rec = resample.apply_lut(s.nonupright_erp, s.lut_gt)
        ident = s.nonupright_erp
        assert psnr(s.upright_gt.data, rec.data) > psnr(s.upright_gt.data, ident.data)

    def test_wrong_grid_rejected(self):
        img = synthetic_panorama(ErpGridSpec(128, 64), 0)
        with pytest.raises(DataError):
            synth_sample(img, CFG, 0)

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(angle_range_deg=0.0)
        with pytest.raises(ConfigError):
            SynthConfig(angle_range_deg=90.5)


class TestSplit:
    def test_documented_rounding_10(self):
        ids = [f"s{i}" for i in range(10)]
        sp = split_dataset(ids, SplitSpec(), seed=100)
        assert (len(sp["train"]), len(sp["val"]), len(sp["test"])) == (7, 2, 1)

    def test_documented_rounding_100(self):
        ids = [f"s{i}" for i in range(100)]
        sp = split_dataset(ids, SplitSpec(), seed=100)
        assert (len(sp["train"]), len(sp["val"]), len(sp["test"])) == (70, 15, 15)

    def test_disjoint_and_complete(self):
        ids = [f"s{i}" for i in range(37)]
        sp = split_dataset(ids, SplitSpec(), seed=9)
        got = sp["train"] + sp["val"] + sp["test"]
        assert sorted(got) == sorted(ids)
        assert len(set(got)) == len(ids)

    def test_deterministic(self):
        ids = [f"s{i}" for i in range(20)]
        assert split_dataset(ids, SplitSpec(), 1) == split_dataset(ids, SplitSpec(), 1)
        assert split_dataset(ids, SplitSpec(), 1) != split_dataset(ids, SplitSpec(), 2)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError):
            split_dataset(["a", "a"], SplitSpec(), 0)


class TestDegrade:
    def test_mosaic_closed_form_on_ramp(self):
        # one 4x4 block over a horizontal ramp averages to the block mean
        h, w = 32, 64
        ramp = np.tile(np.linspace(0.0, 1.0, w)[None, None], (1, h, 1))
        img = ErpImage(ramp)

        class FixedRng:
            def integers(self, lo, hi):
                return 8

        out = degrade_mosaic(img, mask_size=4, block=4, rng=FixedRng())
        region = out.data[0, 8:12, 8:12]
        assert np.allclose(region, ramp[0, 8:12, 8:12].mean())
        # outside the square untouched
        assert np.array_equal(out.data[0, :8], ramp[0, :8])

    def test_mosaic_partial_edge_blocks(self):
        # mask 12, block 10 -> edge strips 2 wide averaged over actual extent
        g = rng(3)
        img = ErpImage(g.random((1, 32, 64)))

        class FixedRng:
            def integers(self, lo, hi):
                return 0

        out = degrade_mosaic(img, mask_size=12, block=10, rng=FixedRng())
        src = img.data[0]
        assert np.allclose(out.data[0, :10, :10], src[:10, :10].mean())
        assert np.allclose(out.data[0, :10, 10:12], src[:10, 10:12].mean())
        assert np.allclose(out.data[0, 10:12, 10:12], src[10:12, 10:12].mean())

    def test_mosaic_placement_uniform_and_in_bounds(self):
        img = ErpImage(np.zeros((1, 32, 64)))
        for i in range(20):
            out = degrade_mosaic(img, 16, rng=stream_rng(0, 3, i))
            assert out.data.shape == img.data.shape

    def test_mosaic_too_large_rejected(self):
        img = ErpImage(np.zeros((1, 32, 64)))
        with pytest.raises(DataError):
            degrade_mosaic(img, 33)

    def test_gaussian_std(self):
        img = ErpImage(np.full((3, 512, 1024), 0.5))
        sigma = 0.02
        out = degrade_gaussian(img, sigma, rng=rng(7))
        noise = out.data - img.data  # mid-gray: clamp never binds at 10 sigma
        assert abs(noise.std() - sigma) / sigma < 0.02

    def test_gaussian_clamps(self):
        img = ErpImage(np.ones((1, 64, 128)))
        out = degrade_gaussian(img, 0.05, rng=rng(8))
        assert out.data.max() <= 1.0 and out.data.min() >= 0.0

    def test_parse_degradation(self):
        name, param, fn = dataset.parse_degradation("mosaic:32")
        assert (name, param) == ("mosaic", 32)
        name, param, fn = dataset.parse_degradation("gaussian:0.03")
        assert (name, param) == ("gaussian", 0.03)
        assert dataset.parse_degradation(None) is None
        with pytest.raises(ConfigError):
            dataset.parse_degradation("blur:3")
        with pytest.raises(ConfigError):
            dataset.parse_degradation("mosaic:big")


class TestStorage:
    def test_round_trip_bit_exact(self, tmp_path):
        s = make_sample(6)
        dataset.write_sample(tmp_path, "train", s, CFG, 6)
        back = dataset.read_sample(tmp_path / "train" / s.id)
        assert back == s

    def test_meta_angles_full_precision(self, tmp_path):
        s = make_sample(7)
        d = dataset.write_sample(tmp_path, "test", s, CFG, 7)
        meta = json.loads((d / "meta.json").read_text())
        assert meta["pitch_deg"] == s.angles_gt.pitch_deg
        assert meta["roll_deg"] == s.angles_gt.roll_deg
        assert meta["config_hash"]

    def test_container_round_trip(self, tmp_path):
        for arr in (
            rng(1).random((6, 3, 8, 8)).astype(np.float32),
            rng(2).random((3, 4, 8)),
            (rng(3).random((2, 2)) * 255).astype(np.uint8),
        ):
            p = tmp_path / "t.bin"
            tensorio.write_tensor(p, arr)
            back = tensorio.read_tensor(p)
            assert back.dtype == arr.dtype and np.array_equal(back, arr)

    def test_container_detects_corruption(self, tmp_path):
        p = tmp_path / "t.bin"
        tensorio.write_tensor(p, np.zeros((4, 4), dtype=np.float32))
        blob = bytearray(p.read_bytes())
        blob[20] ^= 0xFF
        p.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="checksum"):
            tensorio.read_tensor(p)

    def test_container_rejects_bad_magic(self):
        with pytest.raises(DataError, match="magic"):
            tensorio.tensor_from_bytes(b"XXXX" + b"\0" * 32)

    def test_missing_file_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            tensorio.read_tensor(tmp_path / "nope.bin")
        with pytest.raises(DataError):
            dataset.read_sample(tmp_path / "nope")

    def test_manifest_round_trip(self, tmp_path):
        splits = {"train": ["a"], "val": [], "test": ["b"]}
        dataset.write_manifest(tmp_path, CFG, splits)
        man = dataset.read_manifest(tmp_path)
        assert man["splits"] == splits
        assert man["seed"] == CFG.seed


class TestPng:
    def test_png_round_trip_quantized(self, tmp_path):
        img = dataset.quantize8(rng(5).random((3, 16, 32)))
        p = tmp_path / "x.png"
        tensorio.write_png(p, img)
        back = tensorio.read_png(p)
        assert np.array_equal(back, img)

    def test_unreadable_png_is_data_error(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"not a png")
        with pytest.raises(DataError):
            tensorio.read_png(p)
