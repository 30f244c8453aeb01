"""Dual-encoder reconstruction network: assembly, training, checkpoints.

Two structurally identical (but independently parameterized) encoders
ingest the reference and test speckle images; their latents are merged by
elementwise subtraction (reference branch minus test branch) and a single
decoder expands the merged latent back to the 28x28 sample mask through a
sigmoid.  Every convolution is 4x4; encoders downsample by max pooling,
the decoder upsamples by nearest neighbor, and the four final convolutions
run at zero padding 3 to climb from 16 to the 28-pixel output.

Checkpoints ("YNC1") store the architecture fingerprint, a config echo and
named little-endian float32 blobs (parameters plus batchnorm running
statistics), so a load reproduces evaluation-mode inference bit-exactly.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .dataset import derive_seed
from .errors import ConfigError, FormatError, GeometryError, NumericError
from .metrics import psnr, ssim
from .optics import OpticalConfig, SampleImage, SpecklePair, simulate_pair

__all__ = [
    "YNetConfig", "YNet", "TrainHyper", "TrainReport", "train",
    "save_checkpoint", "load_checkpoint", "stability_experiment",
    "normalize_batch",
]

CHECKPOINT_MAGIC = b"YNC1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class YNetConfig:
    """Channel plan and geometry knobs.

    Defaults are the desk-scale (halved) channel plan; ``full_scale`` gives
    the wide variant.  The geometry table derived from these settings must
    land exactly on ``output_n`` or the build is rejected.
    """

    encoder_channels: tuple = (8, 16, 32, 64, 64)
    decoder_channels: tuple = (64, 32, 16, 8, 8, 8, 8, 8, 8, 1)
    dropout_rate: float = 0.6
    input_n: int = 64
    output_n: int = 28
    final_padding: int = 3

    def __post_init__(self):
        if len(self.encoder_channels) != 5:
            raise ConfigError("encoder_channels must list exactly 5 counts")
        if len(self.decoder_channels) != 10:
            raise ConfigError("decoder_channels must list exactly 10 counts")
        if self.decoder_channels[-1] != 1:
            raise ConfigError("last decoder channel count must be 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    @classmethod
    def full_scale(cls) -> "YNetConfig":
        return cls(encoder_channels=(16, 32, 64, 128, 128),
                   decoder_channels=(128, 64, 32, 16, 16, 16, 16, 16, 16, 1))


def _geometry_table(cfg: YNetConfig) -> list[tuple[str, int]]:
    """Spatial-size trace of the full network; raises if it cannot close."""
    table = [("input", cfg.input_n)]
    size = cfg.input_n
    table.append(("encoder.bn", size))
    size = E.conv_output_size(size, 4, 1, 1)
    table.append(("encoder.conv1", size))
    for i in range(2, 6):
        size = E.conv_output_size(size, 4, 1, 1)
        table.append((f"encoder.conv{i}", size))
        size = size // 2
        table.append((f"encoder.pool{i - 1}", size))
    table.append(("merge", size))
    for i in range(1, 5):
        size *= 2
        table.append((f"decoder.up{i}", size))
        size = E.conv_output_size(size, 4, 1, 1)
        table.append((f"decoder.conv{i}", size))
    table.append(("decoder.dropout", size))
    size = E.conv_output_size(size, 4, 1, 1)
    table.append(("decoder.conv5", size))
    size = E.conv_output_size(size, 4, 2, 1)
    table.append(("decoder.conv6(stride2)", size))
    for i in range(7, 11):
        size = E.conv_output_size(size, 4, 1, cfg.final_padding)
        table.append((f"decoder.conv{i}(pad{cfg.final_padding})", size))
    return table


def _format_table(table) -> str:
    return "\n".join(f"  {name:28s} {size}" for name, size in table)


class _Stack:
    """A named sequence of layers with ReLU after each convolution."""

    def __init__(self, prefix, layers):
        self.prefix = prefix
        self.layers = layers  # list of (name, layer, activation or None)

    def params(self):
        out = []
        for name, layer, _ in self.layers:
            for pname, tensor in layer.params():
                out.append((f"{self.prefix}.{name}.{pname}", tensor))
        return out

    def forward(self, x, training, rng=None):
        for _, layer, act in self.layers:
            if isinstance(layer, E.Dropout):
                x = layer.forward(x, training=training, rng=rng)
            else:
                x = layer.forward(x, training=training)
            if act is not None:
                x = act.forward(x, training=training)
        return x

    def backward(self, dout):
        for _, layer, act in reversed(self.layers):
            if act is not None:
                dout = act.backward(dout)
            dout = layer.backward(dout)
        return dout

    def batchnorms(self):
        for name, layer, _ in self.layers:
            if isinstance(layer, E.BatchNorm2d):
                yield f"{self.prefix}.{name}", layer


class YNet:
    """The assembled network.  Build is deterministic in (config, seed)."""

    def __init__(self, config: YNetConfig, seed: int, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        table = _geometry_table(config)
        if table[-1][1] != config.output_n:
            raise GeometryError(
                f"geometry does not close: final size {table[-1][1]} != "
                f"output_n {config.output_n}\n{_format_table(table)}")
        self._table = table
        rng = np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1)]))
        self.encoder_a = self._build_encoder("encoder_a", rng, config, dtype)
        self.encoder_b = self._build_encoder("encoder_b", rng, config, dtype)
        self.decoder = self._build_decoder("decoder", rng, config, dtype)

    @staticmethod
    def _build_encoder(prefix, rng, cfg, dtype):
        ch = cfg.encoder_channels
        layers = [("bn", E.BatchNorm2d(1, dtype=dtype), None)]
        in_c = 1
        for i, out_c in enumerate(ch, start=1):
            layers.append((f"conv{i}",
                           E.Conv2d(in_c, out_c, rng=rng, dtype=dtype),
                           E.ReLU()))
            if i >= 2:  # pooling follows each of conv2..conv5
                layers.append((f"pool{i - 1}", E.MaxPool2(), None))
            in_c = out_c
        return _Stack(prefix, layers)

    @staticmethod
    def _build_decoder(prefix, rng, cfg, dtype):
        ch = cfg.decoder_channels
        in_c = cfg.encoder_channels[-1]
        layers = []
        for i in range(4):
            layers.append((f"up{i + 1}", E.Upsample2(), None))
            layers.append((f"conv{i + 1}",
                           E.Conv2d(in_c, ch[i], rng=rng, dtype=dtype),
                           E.ReLU()))
            in_c = ch[i]
        layers.append(("dropout", E.Dropout(cfg.dropout_rate), None))
        layers.append(("conv5", E.Conv2d(in_c, ch[4], rng=rng, dtype=dtype),
                       E.ReLU()))
        in_c = ch[4]
        layers.append(("conv6", E.Conv2d(in_c, ch[5], stride=2, rng=rng,
                                         dtype=dtype), E.ReLU()))
        in_c = ch[5]
        for i in range(6, 10):
            act = E.Sigmoid() if i == 9 else E.ReLU()
            layers.append((f"conv{i + 1}",
                           E.Conv2d(in_c, ch[i], padding=cfg.final_padding,
                                    rng=rng, dtype=dtype), act))
            in_c = ch[i]
        return _Stack(prefix, layers)

    # -- parameters and state ------------------------------------------------

    def params(self):
        return (self.encoder_a.params() + self.encoder_b.params()
                + self.decoder.params())

    def state_blobs(self):
        """Parameters plus batchnorm running statistics, named."""
        blobs = list(self.params())
        for stack in (self.encoder_a, self.encoder_b, self.decoder):
            for name, bn in stack.batchnorms():
                blobs.append((f"{name}.running_mean", E.Tensor(bn.running_mean)))
                blobs.append((f"{name}.running_var", E.Tensor(bn.running_var)))
        return blobs

    def parameter_count(self) -> int:
        return sum(t.values.size for _, t in self.params())

    def geometry_table(self):
        return list(self._table)

    def fingerprint(self) -> int:
        import hashlib
        cfg = self.config
        desc = repr((cfg.encoder_channels, cfg.decoder_channels,
                     cfg.dropout_rate, cfg.input_n, cfg.output_n,
                     cfg.final_padding)).encode()
        return int.from_bytes(
            hashlib.blake2b(desc, digest_size=8).digest(), "little")

    # -- running the network -------------------------------------------------

    def _check_inputs(self, reference, test):
        n = self.config.input_n
        for name, x in (("reference", reference), ("test", test)):
            if x.shape[-2:] != (n, n):
                raise ConfigError(f"{name} input must be {n}x{n}, got "
                                  f"{x.shape[-2:]}")

    def forward(self, reference, test, training=False, rng=None):
        """Batch forward: (N, 64, 64) speckle pairs -> (N, 28, 28) in (0,1)."""
        self._check_inputs(reference, test)
        a = np.ascontiguousarray(reference, dtype=self.dtype)[:, None]
        b = np.ascontiguousarray(test, dtype=self.dtype)[:, None]
        za = self.encoder_a.forward(a, training)
        zb = self.encoder_b.forward(b, training)
        out = self.decoder.forward(za - zb, training, rng=rng)
        return out[:, 0]

    def encode(self, reference, test, training=False):
        """Merged latent (diagnostic surface)."""
        self._check_inputs(reference, test)
        a = np.ascontiguousarray(reference, dtype=self.dtype)[:, None]
        b = np.ascontiguousarray(test, dtype=self.dtype)[:, None]
        return (self.encoder_a.forward(a, training)
                - self.encoder_b.forward(b, training))

    def backward(self, dout):
        dmerged = self.decoder.backward(dout[:, None])
        self.encoder_a.backward(dmerged)
        self.encoder_b.backward(-dmerged)

    def zero_grad(self):
        for _, p in self.params():
            p.zero_grad()

    def predict_pair(self, pair: SpecklePair) -> SampleImage:
        """Evaluation-mode inference on one already-normalized pair."""
        for name, img in (("reference", pair.reference), ("test", pair.test)):
            if img.values.min() < 0 or img.values.max() > 1:
                raise ConfigError(f"{name} speckle must be normalized to [0, 1]")
        out = self.forward(pair.reference.values[None],
                           pair.test.values[None], training=False)[0]
        out = np.clip(out.astype(np.float64), 0.0, 1.0)
        return SampleImage(n=self.config.output_n,
                           pitch=1e-3 / self.config.output_n, values=out)


# -- training ----------------------------------------------------------------


def normalize_batch(x: np.ndarray) -> np.ndarray:
    """Per-image min-max to [0, 1] over a (N, H, W) stack."""
    x = np.asarray(x, dtype=np.float32)
    lo = x.min(axis=(1, 2), keepdims=True)
    hi = x.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    if np.any(span <= 0):
        raise NumericError("cannot normalize a constant speckle image")
    return (x - lo) / span


@dataclass
class TrainHyper:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.99


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_ssim: list = field(default_factory=list)
    val_psnr: list = field(default_factory=list)
    wall_time: float = 0.0
    seed: int = 0
    best_epoch: int = -1

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_ssim,val_psnr"]
        for i in range(len(self.train_loss)):
            lines.append(f"{i + 1},{self.train_loss[i]!r},{self.val_loss[i]!r},"
                         f"{self.val_ssim[i]!r},{self.val_psnr[i]!r}")
        return "\n".join(lines) + "\n"


def _prepare(split):
    ref = normalize_batch(split["reference"])
    tst = normalize_batch(split["test"])
    tgt = np.asarray(split["target"], dtype=np.float32)
    return ref, tst, tgt


def evaluate_split(model: YNet, data, batch_size=64):
    """Evaluation-mode loss and mean SSIM/PSNR over a prepared split."""
    ref, tst, tgt = data
    losses, ssims, psnrs = [], [], []
    for at in range(0, len(ref), batch_size):
        sl = slice(at, at + batch_size)
        out = model.forward(ref[sl], tst[sl], training=False)
        loss, _ = E.bce_loss(out, tgt[sl])
        losses.append((loss, len(out)))
        for o, t in zip(out, tgt[sl]):
            ssims.append(ssim(np.clip(o.astype(np.float64), 0, 1),
                              t.astype(np.float64)))
            p = psnr(o.astype(np.float64), t.astype(np.float64))
            psnrs.append(p)
    total = sum(n for _, n in losses)
    loss = sum(l * n for l, n in losses) / total
    finite = [p for p in psnrs if np.isfinite(p)]
    return (float(loss), float(np.mean(ssims)),
            float(np.mean(finite)) if finite else float("inf"))


def train(model: YNet, train_split, val_split, hyper: TrainHyper,
          seed: int, log=None) -> TrainReport:
    """Mini-batch Adam on the cross-entropy loss with per-epoch seeded
    shuffling; evaluation-mode validation each epoch; the best-validation
    parameters are restored into the model when training ends."""
    t0 = time.time()
    train_data = _prepare(train_split)
    val_data = _prepare(val_split)
    ref, tst, tgt = train_data
    n = len(ref)
    if n == 0 or len(val_data[0]) == 0:
        raise ConfigError("training and validation splits must be nonempty")

    opt = E.Adam([t for _, t in model.params()], lr=hyper.lr,
                 beta1=hyper.beta1, beta2=hyper.beta2)
    report = TrainReport(seed=seed)
    best = None
    step = 0
    for epoch in range(hyper.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        epoch_loss = 0.0
        for at in range(0, n, hyper.batch_size):
            idx = order[at:at + hyper.batch_size]
            if len(idx) < 2:
                continue  # batchnorm needs batch statistics
            rng = np.random.default_rng([seed, epoch, step])
            out = model.forward(ref[idx], tst[idx], training=True, rng=rng)
            loss, dout = E.bce_loss(out, tgt[idx])
            if not np.isfinite(loss):
                raise NumericError(
                    f"training diverged: non-finite loss at step {step} "
                    f"(epoch {epoch + 1})")
            model.zero_grad()
            model.backward(dout)
            opt.step()
            epoch_loss += loss * len(idx)
            step += 1
        report.train_loss.append(epoch_loss / n)
        vl, vs, vp = evaluate_split(model, val_data)
        report.val_loss.append(vl)
        report.val_ssim.append(vs)
        report.val_psnr.append(vp)
        if best is None or vl < best[0]:
            best = (vl, epoch,
                    [(name, t.values.copy()) for name, t in model.state_blobs()])
            report.best_epoch = epoch + 1
        if log is not None:
            log(f"epoch {epoch + 1}/{hyper.epochs}: train {report.train_loss[-1]:.4f} "
                f"val {vl:.4f} ssim {vs:.4f} psnr {vp:.2f}")
    # restore the best-validation state
    current = dict(model.state_blobs())
    for name, values in best[2]:
        current[name].values[...] = values
    report.wall_time = time.time() - t0
    return report


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(model: YNet, path) -> None:
    cfg = model.config
    blobs = model.state_blobs()
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIQ", CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                            model.fingerprint()))
        f.write(struct.pack("<5I", *cfg.encoder_channels))
        f.write(struct.pack("<10I", *cfg.decoder_channels))
        f.write(struct.pack("<dIII", cfg.dropout_rate, cfg.input_n,
                            cfg.output_n, cfg.final_padding))
        f.write(struct.pack("<I", len(blobs)))
        for name, tensor in blobs:
            raw = name.encode()
            values = tensor.values
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", values.ndim))
            f.write(struct.pack(f"<{values.ndim}I", *values.shape))
            f.write(values.astype("<f4").tobytes())


def _read_exact(f, count, path):
    raw = f.read(count)
    if len(raw) != count:
        raise FormatError(f"{path}: truncated checkpoint")
    return raw


def load_checkpoint(path) -> YNet:
    with open(path, "rb") as f:
        magic, version, fingerprint = struct.unpack(
            "<4sIQ", _read_exact(f, 16, path))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        enc = struct.unpack("<5I", _read_exact(f, 20, path))
        dec = struct.unpack("<10I", _read_exact(f, 40, path))
        rate, in_n, out_n, fpad = struct.unpack("<dIII", _read_exact(f, 20, path))
        config = YNetConfig(encoder_channels=enc, decoder_channels=dec,
                            dropout_rate=rate, input_n=in_n, output_n=out_n,
                            final_padding=fpad)
        model = YNet(config, seed=0)
        if model.fingerprint() != fingerprint:
            raise FormatError(
                f"{path}: architecture fingerprint mismatch "
                f"(stored {fingerprint:#x}, config gives {model.fingerprint():#x})")
        (count,) = struct.unpack("<I", _read_exact(f, 4, path))
        blobs = dict(model.state_blobs())
        if count != len(blobs):
            raise FormatError(f"{path}: expected {len(blobs)} blobs, found {count}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4, path))
            name = _read_exact(f, nlen, path).decode()
            (ndim,) = struct.unpack("<I", _read_exact(f, 4, path))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, path))
            data = np.frombuffer(
                _read_exact(f, 4 * int(np.prod(shape)), path), "<f4"
            ).reshape(shape)
            if name not in blobs:
                raise FormatError(f"{path}: unknown blob {name!r}")
            if blobs[name].values.shape != shape:
                raise FormatError(f"{path}: blob {name!r} has shape {shape}, "
                                  f"expected {blobs[name].values.shape}")
            blobs[name].values[...] = data
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after checkpoint")
    return model


# -- repeated-illumination stability ------------------------------------------


def stability_experiment(model: YNet, sample: SampleImage,
                         config: OpticalConfig, repetitions: int = 10,
                         base_seed: int = 0, sample_id: int = 0):
    """Run the trained model on ``repetitions`` fresh dynamic pairs of the
    same sample; returns (outputs, pairwise SSIM matrix)."""
    outputs = []
    refs, tsts = [], []
    for rep in range(repetitions):
        seed = derive_seed(base_seed, sample_id, rep, "dynamic")
        pair = simulate_pair(sample, config, seed, sample_id=sample_id)
        refs.append(normalize_batch(pair.reference.values[None])[0])
        tsts.append(normalize_batch(pair.test.values[None])[0])
    out = model.forward(np.asarray(refs), np.asarray(tsts), training=False)
    outputs = [np.clip(o.astype(np.float64), 0, 1) for o in out]
    matrix = np.ones((repetitions, repetitions))
    for i in range(repetitions):
        for j in range(i + 1, repetitions):
            matrix[i, j] = matrix[j, i] = ssim(outputs[i], outputs[j])
    return outputs, matrix
