import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ygi import dataset as D
from ygi import optics as O
from ygi.errors import ConfigError, FormatError, NumericError


def small_bench():
    return O.OpticalConfig(wavelength=532e-9, d1=0.05, d2=0.201,
                           source_diameter=0.5e-3, sim_grid_n=64,
                           sim_pitch=46.88e-6, detector_n=16,
                           detector_pitch=93.76e-6, pad_factor=1)


def blob_sample(seed, n=28):
    rng = np.random.default_rng(seed)
    v = np.zeros((n, n))
    r0, c0 = rng.integers(6, n - 10, 2)
    v[r0:r0 + 8, c0:c0 + 6] = 1.0
    return O.SampleImage(n=n, pitch=1e-3 / n, values=v)


class TestDeriveSeed:
    def test_static_ignores_repetition(self):
        s0 = D.derive_seed(99, 17, 0, "static")
        s5 = D.derive_seed(99, 17, 5, "static")
        assert s0 == s5

    def test_dynamic_mixes_repetition(self):
        s0 = D.derive_seed(99, 17, 0, "dynamic")
        s1 = D.derive_seed(99, 17, 1, "dynamic")
        assert s0 != s1

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            D.derive_seed(0, 0, 0, "wobbly")

    def test_no_collisions_across_corpus(self):
        # brute-force scan over a full-scale 70000-sample corpus
        seeds = {D.derive_seed(12345, sid, 0, "static") for sid in range(70000)}
        assert len(seeds) == 70000
        seeds |= {D.derive_seed(12345, sid, 0, "dynamic") for sid in range(70000)}
        assert len(seeds) == 140000

    @given(st.integers(0, 2 ** 63), st.integers(0, 2 ** 32), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_seed_is_valid_u64(self, base, sid, rep):
        s = D.derive_seed(base, sid, rep, "dynamic")
        assert 0 <= s <= 0xFFFFFFFFFFFFFFFF


class TestIdx:
    def test_round_trip_and_scaling(self, tmp_path):
        imgs = np.zeros((3, 28, 28), dtype=np.uint8)
        imgs[0, 0, 0] = 255
        imgs[1, 5, 5] = 128
        path = tmp_path / "digits-idx3-ubyte"
        D.write_idx_images(path, imgs)
        loaded = D.load_idx_images(path)
        assert len(loaded) == 3
        assert loaded[0].values[0, 0] == 1.0
        assert loaded[0].values[1, 1] == 0.0
        assert loaded[1].values[5, 5] == pytest.approx(128 / 255)
        assert loaded[0].n * loaded[0].pitch == pytest.approx(1e-3)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 28, 28) + b"\0" * 784)
        with pytest.raises(FormatError, match="magic"):
            D.load_idx_images(path)

    def test_wrong_dims(self, tmp_path):
        path = tmp_path / "dims"
        path.write_bytes(struct.pack(">IIII", D.IDX_IMAGE_MAGIC, 1, 14, 14) + b"\0" * 196)
        with pytest.raises(FormatError, match="28x28"):
            D.load_idx_images(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc"
        path.write_bytes(struct.pack(">IIII", D.IDX_IMAGE_MAGIC, 2, 28, 28) + b"\0" * 784)
        with pytest.raises(FormatError, match="truncated"):
            D.load_idx_images(path)


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        cfg = small_bench()
        samples = [blob_sample(i) for i in range(4)]
        path = tmp_path / "corpus.ygi"
        header = D.generate_dataset(samples, cfg, "dynamic", 7, path)
        assert header.record_count == 4
        rheader, records = D.read_dataset(path)
        assert rheader.record_count == 4
        assert rheader.mode == "dynamic"
        assert rheader.optical_config == cfg
        recs = list(records)
        for i, rec in enumerate(recs):
            pair = O.simulate_pair(samples[i], cfg,
                                   D.derive_seed(7, i, 0, "dynamic"))
            assert np.array_equal(rec.reference.values,
                                  pair.reference.values.astype(np.float32))
            assert np.array_equal(rec.target.values,
                                  samples[i].values.astype(np.float32))
            assert rec.sample_id == i

    def test_regeneration_is_byte_identical(self, tmp_path):
        cfg = small_bench()
        samples = [blob_sample(i) for i in range(3)]
        p1, p2 = tmp_path / "a.ygi", tmp_path / "b.ygi"
        D.generate_dataset(samples, cfg, "dynamic", 3, p1)
        D.generate_dataset(samples, cfg, "dynamic", 3, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_static_reuses_illumination(self, tmp_path):
        cfg = small_bench()
        digit = blob_sample(0)
        other = blob_sample(1)
        path = tmp_path / "static.ygi"
        D.generate_dataset([digit, other, digit], cfg, "static", 3, path,
                           sample_ids=[5, 6, 5])
        _, records = D.read_dataset(path)
        recs = list(records)
        assert np.array_equal(recs[0].reference.values, recs[2].reference.values)
        assert not np.array_equal(recs[0].reference.values, recs[1].reference.values)

    def test_empty_samples_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            D.generate_dataset([], small_bench(), "dynamic", 0, tmp_path / "x")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ygi"
        path.write_bytes(b"NOPE" + b"\0" * 200)
        with pytest.raises(FormatError, match="magic"):
            D.read_dataset(path)

    def test_count_mismatch_detected(self, tmp_path):
        cfg = small_bench()
        path = tmp_path / "c.ygi"
        D.generate_dataset([blob_sample(0)], cfg, "dynamic", 1, path)
        blob = bytearray(path.read_bytes())
        # bump declared record_count beyond the file content
        struct.pack_into("<I", blob, 8, 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="corrupt"):
            D.read_dataset(path)

    def test_load_arrays(self, tmp_path):
        cfg = small_bench()
        samples = [blob_sample(i) for i in range(3)]
        path = tmp_path / "arr.ygi"
        D.generate_dataset(samples, cfg, "dynamic", 11, path)
        _, arrays = D.load_dataset_arrays(path)
        assert arrays["reference"].shape == (3, 16, 16)
        assert arrays["target"].shape == (3, 28, 28)
        assert arrays["reference"].dtype == np.float32
        assert np.array_equal(arrays["sample_id"], [0, 1, 2])


class TestNormalize:
    def test_affine_endpoints(self):
        img = O.IntensityImage(2, 1e-5, np.array([[2.0, 4.0], [6.0, 6.0]]))
        out = D.normalize_speckle(img)
        assert np.array_equal(out.values, [[0.0, 0.5], [1.0, 1.0]])

    def test_idempotent_on_canonical_range(self):
        rng = np.random.default_rng(0)
        v = rng.random((8, 8))
        v[0, 0], v[1, 1] = 0.0, 1.0
        img = O.IntensityImage(8, 1e-5, v)
        out = D.normalize_speckle(img)
        assert np.allclose(out.values, v)

    @given(st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=30, deadline=None)
    def test_scale_invariant(self, c):
        rng = np.random.default_rng(5)
        v = rng.random((6, 6)) + 0.1
        a = D.normalize_speckle(O.IntensityImage(6, 1e-5, v)).values
        b = D.normalize_speckle(O.IntensityImage(6, 1e-5, c * v)).values
        assert np.allclose(a, b, atol=1e-12)

    def test_constant_image_rejected(self):
        img = O.IntensityImage(4, 1e-5, np.ones((4, 4)))
        with pytest.raises(NumericError):
            D.normalize_speckle(img)


class TestDigits:
    def test_pools_are_disjoint_and_sized(self):
        from ygi import digits as G
        pools = G.corpus_pools()
        assert {k: len(v) for k, v in pools.items()} == {
            "train": 1437, "val": 260, "test": 100}
        seen = set()
        for imgs in pools.values():
            for img in imgs:
                key = img.tobytes()
                assert key not in seen
                seen.add(key)

    def test_materialized_idx_loads(self, tmp_path):
        from ygi import digits as G
        paths = G.materialize_idx(tmp_path)
        imgs = D.load_idx_images(paths["test"])
        assert len(imgs) == 100
        assert all(0.0 <= im.values.min() and im.values.max() <= 1.0 for im in imgs)
