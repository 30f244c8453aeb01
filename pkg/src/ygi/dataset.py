"""Speckle-pair corpus generation and binary dataset I/O.

Corpora are generated from digit transmittance masks by the optics
simulator and stored in a flat binary format ("YGI1"): a fixed header with
the bench geometry, then packed fixed-size records of little-endian float32
images.  Every record carries the seed that created it, so any record can
be regenerated bit-exactly.

Seed derivation is a fixed splitmix-style 64-bit hash of
(base_seed, sample_id) plus, in dynamic mode only, the repetition counter:
static illumination is reused whenever the same sample_id is regenerated,
dynamic illumination is fresh per repetition.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Iterator, Literal, Sequence

import numpy as np

from .errors import ConfigError, FormatError, NumericError
from .optics import IntensityImage, OpticalConfig, SampleImage, simulate_pair

__all__ = [
    "DatasetRecord",
    "DatasetHeader",
    "load_idx_images",
    "write_idx_images",
    "derive_seed",
    "generate_dataset",
    "read_dataset",
    "load_dataset_arrays",
    "normalize_speckle",
]

IDX_IMAGE_MAGIC = 0x00000803
DATASET_MAGIC = b"YGI1"
DATASET_VERSION = 1

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_REP_SALT = 0xD1B54A32D192ED03

_HEADER_FMT = "<4sIIIII" + "ddddIdIdI"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


@dataclass
class DatasetRecord:
    """One stored pair: speckles, the target mask, and its provenance."""

    reference: IntensityImage
    test: IntensityImage
    target: SampleImage
    seed: int
    sample_id: int


@dataclass
class DatasetHeader:
    version: int
    record_count: int
    detector_n: int
    target_n: int
    mode: Literal["static", "dynamic"]
    optical_config: OpticalConfig

    @property
    def record_nbytes(self) -> int:
        return 4 * (2 * self.detector_n ** 2 + self.target_n ** 2) + 16


def _mix64(x: int) -> int:
    """SplitMix64 finalizer; the fixed mixing step of seed derivation."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base_seed: int, sample_id: int, repetition: int,
                mode: Literal["static", "dynamic"]) -> int:
    """Per-record illumination seed.

    static:  mix(base + golden * (sample_id + 1))
    dynamic: mix(static ^ (salt * (repetition + 1)))

    Static seeds ignore the repetition counter entirely; dynamic seeds fold
    it in so regenerating the same sample draws fresh illumination.
    """
    if mode not in ("static", "dynamic"):
        raise ConfigError(f"unknown illumination mode {mode!r}")
    s = _mix64((base_seed + _GOLDEN * (sample_id + 1)) & _MASK64)
    if mode == "dynamic":
        s = _mix64(s ^ ((_REP_SALT * (repetition + 1)) & _MASK64))
    return s


def load_idx_images(path) -> list[SampleImage]:
    """Read an IDX3 image file into 28x28 transmittance masks.

    Big-endian header {magic 0x00000803, count, rows, cols}, then unsigned
    bytes row-major.  Pixel bytes are scaled to [0, 1] by /255 and the
    pitch is set so the 28-pixel span covers 1 mm.
    """
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 16:
            raise FormatError(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(
                f"{path}: bad IDX magic 0x{magic:08x} "
                f"(expected 0x{IDX_IMAGE_MAGIC:08x})")
        if (rows, cols) != (28, 28):
            raise FormatError(
                f"{path}: expected 28x28 images, file declares {rows}x{cols}")
        payload = f.read(count * rows * cols)
        if len(payload) != count * rows * cols:
            raise FormatError(
                f"{path}: truncated payload ({len(payload)} of "
                f"{count * rows * cols} bytes)")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    pitch = 1e-3 / 28
    return [SampleImage(n=28, pitch=pitch, values=img / 255.0)
            for img in pixels]


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images (count, 28, 28) in IDX3 layout."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, count, rows, cols))
        f.write(images.tobytes())


def _pack_header(header: DatasetHeader) -> bytes:
    cfg = header.optical_config
    return struct.pack(
        _HEADER_FMT, DATASET_MAGIC, header.version, header.record_count,
        header.detector_n, header.target_n,
        0 if header.mode == "static" else 1,
        cfg.wavelength, cfg.d1, cfg.d2, cfg.source_diameter,
        cfg.sim_grid_n, cfg.sim_pitch, cfg.detector_n, cfg.detector_pitch,
        cfg.pad_factor)


def _unpack_header(raw: bytes, path) -> DatasetHeader:
    (magic, version, count, det_n, tgt_n, mode_code,
     wl, d1, d2, src_d, sim_n, sim_p, cfg_det_n, det_p, pad) = struct.unpack(
        _HEADER_FMT, raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad dataset magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    cfg = OpticalConfig(wavelength=wl, d1=d1, d2=d2, source_diameter=src_d,
                        sim_grid_n=sim_n, sim_pitch=sim_p,
                        detector_n=cfg_det_n, detector_pitch=det_p,
                        pad_factor=pad)
    return DatasetHeader(version=version, record_count=count,
                         detector_n=det_n, target_n=tgt_n,
                         mode="static" if mode_code == 0 else "dynamic",
                         optical_config=cfg)


def _pack_record(rec: DatasetRecord) -> bytes:
    buf = io.BytesIO()
    buf.write(rec.reference.values.astype("<f4").tobytes())
    buf.write(rec.test.values.astype("<f4").tobytes())
    buf.write(rec.target.values.astype("<f4").tobytes())
    buf.write(struct.pack("<Qq", rec.seed & _MASK64, rec.sample_id))
    return buf.getvalue()


def generate_dataset(samples: Sequence[SampleImage], config: OpticalConfig,
                     mode: Literal["static", "dynamic"], base_seed: int,
                     out_path, sample_ids: Sequence[int] | None = None,
                     progress=None) -> DatasetHeader:
    """Simulate one pair per sample and stream records to ``out_path``.

    ``sample_ids`` defaults to the enumeration index; records are written
    in sample order and regeneration with identical arguments is
    byte-identical.
    """
    if not samples:
        raise ConfigError("generate_dataset needs at least one sample")
    if sample_ids is None:
        sample_ids = range(len(samples))
    elif len(sample_ids) != len(samples):
        raise ConfigError("sample_ids length must match samples")
    target_n = samples[0].n
    header = DatasetHeader(version=DATASET_VERSION, record_count=len(samples),
                           detector_n=config.detector_n, target_n=target_n,
                           mode=mode, optical_config=config)
    # identical seeds (static mode) reuse the cached illumination arms
    pair_cache: dict[int, tuple] = {}
    try:
        with open(out_path, "wb") as f:
            f.write(_pack_header(header))
            for i, (sample, sid) in enumerate(zip(samples, sample_ids)):
                seed = derive_seed(base_seed, sid, 0, mode)
                key = seed if mode == "static" else None
                pair = None
                if key is not None and key in pair_cache:
                    cached_sample, cached_pair = pair_cache[key]
                    if np.array_equal(cached_sample, sample.values):
                        pair = cached_pair
                if pair is None:
                    pair = simulate_pair(sample, config, seed,
                                         sample_id=sid, mode=mode)
                    if key is not None:
                        pair_cache = {key: (sample.values.copy(), pair)}
                f.write(_pack_record(DatasetRecord(
                    reference=pair.reference, test=pair.test, target=sample,
                    seed=seed, sample_id=sid)))
                if progress is not None:
                    progress(i + 1, len(samples))
    except OSError as exc:
        raise FormatError(f"writing {out_path}: {exc}") from exc
    return header


def read_dataset(path) -> tuple[DatasetHeader, Iterator[DatasetRecord]]:
    """Open a dataset for streaming; validates header and total size."""
    f = open(path, "rb")
    try:
        raw = f.read(_HEADER_SIZE)
        if len(raw) < _HEADER_SIZE:
            raise FormatError(f"{path}: truncated dataset header")
        header = _unpack_header(raw, path)
        f.seek(0, 2)
        expected = _HEADER_SIZE + header.record_count * header.record_nbytes
        if f.tell() != expected:
            raise FormatError(
                f"{path}: corrupt dataset, {f.tell()} bytes on disk but "
                f"header declares {expected}")
        f.seek(_HEADER_SIZE)
    except Exception:
        f.close()
        raise

    def records():
        det_n, tgt_n = header.detector_n, header.target_n
        cfg = header.optical_config
        img_bytes = 4 * det_n ** 2
        tgt_bytes = 4 * tgt_n ** 2
        with f:
            for _ in range(header.record_count):
                blob = f.read(header.record_nbytes)
                if len(blob) != header.record_nbytes:
                    raise FormatError(f"{path}: truncated record")
                ref = np.frombuffer(blob, "<f4", det_n ** 2, 0)
                tst = np.frombuffer(blob, "<f4", det_n ** 2, img_bytes)
                tgt = np.frombuffer(blob, "<f4", tgt_n ** 2, 2 * img_bytes)
                seed, sid = struct.unpack_from(
                    "<Qq", blob, 2 * img_bytes + tgt_bytes)
                yield DatasetRecord(
                    reference=IntensityImage(det_n, cfg.detector_pitch,
                                             ref.reshape(det_n, det_n).astype(np.float64)),
                    test=IntensityImage(det_n, cfg.detector_pitch,
                                        tst.reshape(det_n, det_n).astype(np.float64)),
                    target=SampleImage(tgt_n, 1e-3 / tgt_n,
                                       tgt.reshape(tgt_n, tgt_n).astype(np.float64)),
                    seed=seed, sample_id=sid)

    return header, records()


def load_dataset_arrays(path) -> tuple[DatasetHeader, dict[str, np.ndarray]]:
    """Load a whole dataset as stacked float32 arrays (training input)."""
    header, records = read_dataset(path)
    refs, tests, targets, seeds, sids = [], [], [], [], []
    for rec in records:
        refs.append(rec.reference.values)
        tests.append(rec.test.values)
        targets.append(rec.target.values)
        seeds.append(rec.seed)
        sids.append(rec.sample_id)
    return header, {
        "reference": np.asarray(refs, dtype=np.float32),
        "test": np.asarray(tests, dtype=np.float32),
        "target": np.asarray(targets, dtype=np.float32),
        "seed": np.asarray(seeds, dtype=np.uint64),
        "sample_id": np.asarray(sids, dtype=np.int64),
    }


def normalize_speckle(image: IntensityImage) -> IntensityImage:
    """Affine min-max rescale to [0, 1]; rejects constant images."""
    v = image.values
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        raise NumericError("cannot normalize a constant image")
    return IntensityImage(image.n, image.pitch, (v - lo) / (hi - lo))
