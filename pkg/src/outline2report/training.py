"""Joint training loop: Adam updates of the full model under the summed
objective, with a binary checkpoint format that restores training bit-exactly.

Determinism contract: the seed fully determines the run. Three independent
streams are derived from it: parameter init ([seed, 0]), latent noise and
scheduled-sampling coins ([seed, 1], whose state is checkpointed), and the
per-epoch shuffle ([seed, 2, epoch], recomputable on resume). The global step
counter locates the run inside an epoch: epoch = step // num_batches.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import TrainingConfig
from .corpus import LengthCaps, Vocabulary, encode_batch
from .model import ModelForward, NewsToReportModel, build_model
from .numerics import FLOAT, NonFiniteLossError, clip_global_norm

CHECKPOINT_MAGIC = b"O2RCKPT1"
CHECKPOINT_VERSION = 1

LOSS_LOG_HEADER = "epoch,step,L_outline,L_report,L_model"


class CheckpointError(RuntimeError):
    """Base for unreadable or inconsistent checkpoint files."""


class BadHeaderError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def joint_loss(l_outline: float, l_report: float) -> float:
    """Plain sum of the two stage losses; the reported model objective."""
    if not (math.isfinite(l_outline) and math.isfinite(l_report)):
        raise NonFiniteLossError(
            f"non-finite stage loss: outline={l_outline!r} report={l_report!r}")
    return l_outline + l_report


class AdamOptimizer:
    """Bias-corrected Adam; epsilon added outside the square root."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-8, skip=()):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names passed to optimizer")
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.skip = frozenset(skip)
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        corr1 = 1.0 - self.beta1 ** self.t
        corr2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            if p.name in self.skip:
                continue
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.epsilon)


def diagnose_forward(fwd: ModelForward) -> str:
    """Name the first non-finite intermediate, in pipeline order."""
    stages = [
        ("news embeddings", fwd.news_emb),
        ("encoder states", fwd.enc_states),
        ("outline logits", fwd.outline.logits),
        ("outline loss", fwd.loss_outline),
        ("fusion vector", fwd.u),
        ("latent mean", fwd.report.latent.mean),
        ("latent logvar", fwd.report.latent.logvar),
        ("latent sample", fwd.report.latent.z),
        ("KL term", fwd.report.kl_rows),
        ("report logits", fwd.report.logits),
        ("report loss", fwd.loss_report),
    ]
    for name, value in stages:
        if not np.all(np.isfinite(value)):
            return f"first non-finite intermediate: {name}"
    return "loss non-finite but all cached intermediates finite"


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss_outline: float
    loss_report: float
    loss_model: float

    def csv_row(self) -> str:
        # repr keeps float round-trips exact, so two identical runs diff clean
        return (f"{self.epoch},{self.step},{self.loss_outline!r},"
                f"{self.loss_report!r},{self.loss_model!r}")


# -- checkpoint serialization --------------------------------------------------


@dataclass
class CheckpointState:
    config: dict
    step: int
    adam_t: int
    rng_state: dict
    vocab_sha256: str
    vocab_size: int
    arrays: dict = field(repr=False)


def save_checkpoint(path, model: NewsToReportModel, optimizer: AdamOptimizer,
                    step: int, noise_rng, vocab_sha256: str) -> None:
    params = model.parameters()
    entries = []
    blobs = []
    offset = 0

    def add(name, array):
        nonlocal offset
        a = np.ascontiguousarray(array, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape),
                        "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes())
        offset += a.nbytes

    for p in params:
        add(p.name, p.value)
    for kind, store in (("m", optimizer.m), ("v", optimizer.v)):
        for p in params:
            add(f"adam.{kind}.{p.name}", store[p.name])
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "step": step,
        "adam_t": optimizer.t,
        "rng_state": noise_rng.bit_generator.state,
        "vocab_sha256": vocab_sha256,
        "vocab_size": model.vocab_size,
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> CheckpointState:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 8:
        raise TruncatedCheckpointError(f"{path}: file shorter than fixed header")
    if data[:8] != CHECKPOINT_MAGIC:
        raise BadHeaderError(f"{path}: bad header (magic bytes do not match)")
    (header_len,) = struct.unpack("<Q", data[8:16])
    header_end = 16 + header_len
    if len(data) < header_end:
        raise TruncatedCheckpointError(f"{path}: truncated JSON header")
    try:
        header = json.loads(data[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadHeaderError(f"{path}: unparseable header: {exc}") from exc
    version = header.get("version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{path}: checkpoint version {version!r}, expected {CHECKPOINT_VERSION}")
    payload = data[header_end:]
    arrays = {}
    for entry in header["arrays"]:
        lo = entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(payload):
            raise TruncatedCheckpointError(
                f"{path}: array {entry['name']!r} extends past end of file")
        buf = payload[lo:hi]
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(
            entry["shape"]).astype(FLOAT)
    return CheckpointState(
        config=header["config"], step=header["step"], adam_t=header["adam_t"],
        rng_state=header["rng_state"], vocab_sha256=header["vocab_sha256"],
        vocab_size=header["vocab_size"], arrays=arrays)


def apply_checkpoint(state: CheckpointState, model: NewsToReportModel,
                     optimizer: AdamOptimizer, noise_rng) -> None:
    """Load arrays, moments, step-independent RNG state into live objects."""
    for p in model.parameters():
        for prefix, target in (("", None), ("adam.m.", optimizer.m),
                               ("adam.v.", optimizer.v)):
            name = prefix + p.name
            if name not in state.arrays:
                raise ShapeMismatchError(f"checkpoint missing array {name!r}")
            stored = state.arrays[name]
            expected = p.value.shape
            if stored.shape != expected:
                raise ShapeMismatchError(
                    f"array {name!r} has shape {stored.shape}, model expects {expected}")
            if target is None:
                p.value[...] = stored
            else:
                target[p.name][...] = stored
    optimizer.t = state.adam_t
    noise_rng.bit_generator.state = state.rng_state


# -- the loop ------------------------------------------------------------------


class Trainer:
    """Deterministic epoch/batch loop over encoded pairs."""

    def __init__(self, model: NewsToReportModel, pairs, vocab: Vocabulary,
                 cfg: TrainingConfig):
        if not pairs:
            raise ValueError("no training pairs")
        for pair in pairs:
            if pair.outline is None:
                raise ValueError(f"pair {pair.id!r} has no outline; derive outlines first")
        self.model = model
        self.pairs = list(pairs)
        self.vocab = vocab
        self.cfg = cfg
        self.caps = LengthCaps(news=cfg.max_news_len, outline=cfg.max_outline_len,
                               report=cfg.max_report_len)
        self.num_batches = math.ceil(len(self.pairs) / cfg.batch_size)
        skip = ({p.name for p in model.outline_decoder.parameters()}
                if cfg.freeze_outline else ())
        self.optimizer = AdamOptimizer(
            model.parameters(), learning_rate=cfg.learning_rate,
            beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
            epsilon=cfg.adam_epsilon, skip=skip)
        self.noise_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self.step = 0
        self.history: list[StepRecord] = []
        self._order_cache: tuple[int, np.ndarray] | None = None

    @property
    def epoch(self) -> int:
        return self.step // self.num_batches

    def _epoch_order(self, epoch: int) -> np.ndarray:
        if self._order_cache is not None and self._order_cache[0] == epoch:
            return self._order_cache[1]
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 2, epoch]))
        order = rng.permutation(len(self.pairs))
        self._order_cache = (epoch, order)
        return order

    def _batch_at(self, epoch: int, batch_idx: int):
        order = self._epoch_order(epoch)
        lo = batch_idx * self.cfg.batch_size
        chunk = [self.pairs[i] for i in order[lo:lo + self.cfg.batch_size]]
        return encode_batch(chunk, self.vocab, self.caps)

    def train_one_step(self) -> StepRecord:
        epoch = self.step // self.num_batches
        batch = self._batch_at(epoch, self.step % self.num_batches)
        beta = self.cfg.kl_weight(self.step)
        self.model.zero_grad()
        noise = self.noise_rng.standard_normal((batch.size, self.cfg.d_z))
        ratio = self.cfg.teacher_forcing_ratio
        sample_rng = self.noise_rng if ratio < 1.0 else None
        fwd = self.model.forward(batch, noise, beta, sample_rng=sample_rng,
                                 teacher_forcing_ratio=ratio)
        if not math.isfinite(fwd.loss_model):
            raise NonFiniteLossError(
                f"step {self.step}: loss is not finite; {diagnose_forward(fwd)}")
        self.model.backward(fwd)
        clip_global_norm(self.model.parameters(), self.cfg.gradient_clip_norm)
        self.optimizer.step()
        record = StepRecord(epoch, self.step, fwd.loss_outline,
                            fwd.loss_report, fwd.loss_model)
        self.history.append(record)
        self.step += 1
        return record

    def run(self, max_epochs: int | None = None, on_step=None, on_epoch_end=None):
        """Train until the epoch limit; callbacks see each step and epoch end."""
        limit = self.cfg.max_epochs if max_epochs is None else max_epochs
        total = limit * self.num_batches
        while self.step < total:
            record = self.train_one_step()
            if on_step is not None:
                on_step(record)
            if self.step % self.num_batches == 0 and on_epoch_end is not None:
                on_epoch_end(record.epoch)
        return self.history

    def save(self, path) -> None:
        save_checkpoint(path, self.model, self.optimizer, self.step,
                        self.noise_rng, self.vocab.digest())


def restore_model(state: CheckpointState, vocab: Vocabulary) -> NewsToReportModel:
    """Model with parameters loaded from a checkpoint; no optimizer state."""
    if state.vocab_sha256 != vocab.digest():
        raise CheckpointError(
            f"vocabulary digest mismatch (checkpoint {state.vocab_sha256[:12]}..., "
            f"supplied {vocab.digest()[:12]}...)")
    if state.vocab_size != len(vocab):
        raise ShapeMismatchError(
            f"checkpoint built for vocabulary of {state.vocab_size}, got {len(vocab)}")
    cfg = TrainingConfig(**state.config)
    model = build_model(vocab, cfg)
    for p in model.parameters():
        if p.name not in state.arrays:
            raise ShapeMismatchError(f"checkpoint missing array {p.name!r}")
        stored = state.arrays[p.name]
        if stored.shape != p.value.shape:
            raise ShapeMismatchError(
                f"array {p.name!r} has shape {stored.shape}, model expects {p.value.shape}")
        p.value[...] = stored
    return model


def resume_trainer(path, pairs, vocab: Vocabulary) -> Trainer:
    """Trainer continuing bit-exactly from the checkpoint at `path`."""
    state = load_checkpoint(path)
    if state.vocab_sha256 != vocab.digest():
        raise CheckpointError(
            f"{path}: vocabulary digest mismatch "
            f"(checkpoint {state.vocab_sha256[:12]}..., supplied {vocab.digest()[:12]}...)")
    cfg = TrainingConfig(**state.config)
    model = build_model(vocab, cfg)
    trainer = Trainer(model, pairs, vocab, cfg)
    apply_checkpoint(state, model, trainer.optimizer, trainer.noise_rng)
    trainer.step = state.step
    return trainer
