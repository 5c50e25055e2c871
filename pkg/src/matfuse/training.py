"""Dataset manifest handling, splitting, AdamW + cosine-warmup training,
evaluation, checkpointing, and the robustness / corruption sweeps."""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .cif import parse_cif, expand_symmetry
from .elements import AtomFeatureSpec
from .errors import (EmptySplit, MatfuseError, NonFiniteLoss, ShapeMismatch,
                     TooSmall)
from .graph import CrystalGraph, GraphConfig, build_graph
from .model import ModelConfig, config_from_dict, forward, init_params
from .text import (CLS, UNK, Vocab, build_vocab, corrupt_text, describe,
                   tokenize)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# manifest

@dataclass
class ManifestRecord:
    id: str
    cif: str
    target: float
    text: str | None = None
    property: str = "formation_energy_per_atom"
    units: str = "eV/atom"
    split: str | None = None


def load_manifest(path) -> list[ManifestRecord]:
    records, seen = [], set()
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            rec = ManifestRecord(**d)
            if rec.id in seen:
                raise MatfuseError(f"duplicate manifest id {rec.id!r}")
            if not math.isfinite(rec.target):
                raise MatfuseError(f"non-finite target for {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def save_manifest(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({k: v for k, v in asdict(rec).items()
                                 if v is not None}) + "\n")


def split_dataset(records: list[ManifestRecord], fractions=(0.8, 0.1, 0.1),
                  seed: int = 0) -> list[ManifestRecord]:
    """Seeded shuffle then contiguous slicing into train/val/test.

    Val and test sizes are floored; the remainder goes to train."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
        raise ValueError(f"bad split fractions {fractions}")
    n = len(records)
    n_val = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise TooSmall(f"{n} records cannot fill fractions {fractions}")
    order = np.random.default_rng(seed).permutation(n)
    out = []
    for pos, k in enumerate(order):
        if pos < n_train:
            part = "train"
        elif pos < n_train + n_val:
            part = "val"
        else:
            part = "test"
        out.append(replace(records[k], split=part))
    return out


def split_of(records, name):
    return [r for r in records if r.split == name]


# ---------------------------------------------------------------------------
# featurization

@dataclass
class RawSample:
    id: str
    graph: CrystalGraph
    text: str
    target: float


@dataclass
class Sample:
    id: str
    graph: CrystalGraph
    seq: object
    target: float


def featurize_records(records, graph_cfg: GraphConfig,
                      spec: AtomFeatureSpec | None = None,
                      expand: bool = True, data_dir: str = "",
                      threads: int = 1) -> list[RawSample]:
    """Parse CIFs, build graphs, and attach texts (stored file or the
    deterministic description). Record order is preserved."""
    spec = spec or AtomFeatureSpec()

    def one(rec: ManifestRecord) -> RawSample:
        path = os.path.join(data_dir, rec.cif) if data_dir else rec.cif
        with open(path) as fh:
            s = parse_cif(fh.read(), rec.id)
        if expand:
            s = expand_symmetry(s)
        graph = build_graph(s, graph_cfg, spec)
        if rec.text:
            tpath = os.path.join(data_dir, rec.text) if data_dir else rec.text
            with open(tpath) as fh:
                text = fh.read()
        else:
            text = describe(s)
        return RawSample(rec.id, graph, text, rec.target)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, records))
    return [one(rec) for rec in records]


def prepare(raw: list[RawSample], vocab: Vocab, max_len: int,
            corrupt_p: float = 0.0, corrupt_seed: int = 0) -> list[Sample]:
    out = []
    for k, r in enumerate(raw):
        text = (corrupt_text(r.text, corrupt_p, corrupt_seed + k)
                if corrupt_p > 0 else r.text)
        out.append(Sample(r.id, r.graph, tokenize(text, vocab, max_len),
                          r.target))
    return out


# ---------------------------------------------------------------------------
# target normalization

@dataclass
class TargetNorm:
    mean: float
    std: float
    tmin: float
    tmax: float

    @classmethod
    def fit(cls, targets):
        arr = np.asarray(targets, dtype=float)
        std = float(arr.std())
        return cls(float(arr.mean()), std if std > 0 else 1.0,
                   float(arr.min()), float(arr.max()))

    def normalize(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.std + self.mean


# ---------------------------------------------------------------------------
# optimizer and schedule

def cosine_warmup_lr(t: int, warmup: int, total: int,
                     eta_max: float) -> float:
    """Linear warmup to eta_max, then cosine decay to zero at t = total."""
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    if t < warmup:
        return eta_max * t / warmup
    if total == warmup:  # no decay span left: schedule has ended
        return 0.0
    return eta_max * 0.5 * (1.0 + math.cos(math.pi * (t - warmup)
                                           / (total - warmup)))


class AdamWState:
    def __init__(self, params: dict):
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0


def adamw_step(params: dict, state: AdamWState, lr: float,
               betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.01):
    """Decoupled-weight-decay Adam update using the .grad buffers."""
    b1, b2 = betas
    state.t += 1
    for name, tensor in params.items():
        g = tensor.grad
        if g is None:
            raise ShapeMismatch(f"parameter {name} has no gradient buffer")
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        mhat = m / (1 - b1 ** state.t)
        vhat = v / (1 - b2 ** state.t)
        tensor.data -= lr * (mhat / (np.sqrt(vhat) + eps)
                             + weight_decay * tensor.data)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr_max: float = 1e-3
    warmup_frac: float = 0.05
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    precision: str = "f64"
    max_steps: int | None = None
    min_freq: int = 1
    max_len: int = 128

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class TrainResult:
    params: dict            # best-validation parameters
    model_cfg: ModelConfig
    vocab: Vocab
    norm: TargetNorm
    log: list
    steps: int
    best_val_mae: float


def _snapshot(params):
    return {k: t.data.copy() for k, t in params.items()}


def _restore(params, snap):
    for k, t in params.items():
        t.data = snap[k].copy()


def train(raw_train: list[RawSample], raw_val: list[RawSample],
          model_cfg: ModelConfig, train_cfg: TrainConfig,
          graph_cfg: GraphConfig, spec: AtomFeatureSpec | None = None,
          corrupt_train_p: float = 0.0) -> TrainResult:
    """End-to-end supervised training with MSE loss on z-scored targets.

    The vocabulary is built from the train-split texts only (after any
    requested corruption). Deterministic for a fixed seed in 64-bit
    single-threaded mode."""
    spec = spec or AtomFeatureSpec()
    if not raw_train:
        raise EmptySplit("empty training split")
    rng = np.random.default_rng(train_cfg.seed)

    texts = [r.text for r in raw_train]
    if corrupt_train_p > 0:
        texts = [corrupt_text(t, corrupt_train_p, train_cfg.seed + k)
                 for k, t in enumerate(texts)]
    vocab = build_vocab(texts, train_cfg.min_freq)
    data_train = prepare(raw_train, vocab, train_cfg.max_len,
                         corrupt_train_p, train_cfg.seed)
    data_val = prepare(raw_val, vocab, train_cfg.max_len)
    norm = TargetNorm.fit([s.target for s in data_train])

    params = init_params(model_cfg, spec.length, graph_cfg.n_edge_features,
                         len(vocab), train_cfg.max_len, seed=train_cfg.seed,
                         dtype=train_cfg.dtype)
    state = AdamWState(params)

    n = len(data_train)
    batches_per_epoch = math.ceil(n / train_cfg.batch_size)
    total = train_cfg.epochs * batches_per_epoch
    if train_cfg.max_steps is not None:
        total = min(total, train_cfg.max_steps)
    warmup = max(1, int(round(train_cfg.warmup_frac * total)))

    best = _snapshot(params)
    best_mae = math.inf
    logs, step = [], 0
    done = False
    for epoch in range(train_cfg.epochs):
        if done:
            break
        order = rng.permutation(n)
        losses = []
        for b in range(batches_per_epoch):
            idx = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            batch = [data_train[i] for i in idx]
            targets = norm.normalize([s.target for s in batch])
            with Tape() as tape:
                preds = [forward(s.graph, s.seq, params, model_cfg,
                                 training=True, rng=rng,
                                 dtype=train_cfg.dtype) for s in batch]
                pred_row = ad.concat(preds, axis=-1)
                loss = ad.mse(pred_row, targets.reshape(1, -1)
                              .astype(train_cfg.dtype))
            if not math.isfinite(loss.item()):
                _restore(params, best)
                raise NonFiniteLoss(
                    f"loss became non-finite at step {step}",
                    checkpoint=best)
            for t in params.values():
                t.zero_grad()
            tape.backward(loss)
            lr = cosine_warmup_lr(step, warmup, total, train_cfg.lr_max)
            adamw_step(params, state, lr,
                       (train_cfg.beta1, train_cfg.beta2),
                       train_cfg.eps, train_cfg.weight_decay)
            losses.append(loss.item())
            step += 1
            if step >= total:
                done = True
                break
        train_mse = float(np.mean(losses)) if losses else math.nan
        val_mae = (evaluate_samples(data_val, params, model_cfg, norm,
                                    train_cfg.dtype)["mae"]
                   if data_val else math.nan)
        logs.append({"epoch": epoch, "step": step, "train_mse": train_mse,
                     "val_mae": val_mae,
                     "lr": cosine_warmup_lr(min(step, total), warmup, total,
                                            train_cfg.lr_max)})
        if data_val and val_mae < best_mae:
            best_mae = val_mae
            best = _snapshot(params)

    if not data_val:
        best = _snapshot(params)
        best_mae = math.nan
    _restore(params, best)
    return TrainResult(params, model_cfg, vocab, norm, logs, step, best_mae)


# ---------------------------------------------------------------------------
# evaluation

def predict_samples(samples, params, model_cfg, norm, dtype=np.float64):
    return [(s.id, s.target,
             float(norm.denormalize(
                 forward(s.graph, s.seq, params, model_cfg,
                         dtype=dtype).item())))
            for s in samples]


def regression_metrics(y, yhat):
    """MAE and R^2 = 1 - SS_res / SS_tot."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    mae = float(np.mean(np.abs(y - yhat)))
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    return mae, r2


def evaluate_samples(samples, params, model_cfg, norm, dtype=np.float64):
    """MAE, R^2 and per-record predictions (denormalized)."""
    if not samples:
        raise EmptySplit("evaluation on an empty split")
    rows = predict_samples(samples, params, model_cfg, norm, dtype)
    mae, r2 = regression_metrics([r[1] for r in rows],
                                 [r[2] for r in rows])
    return {"mae": mae, "r2": r2, "predictions": rows}


def zero_shot_eval(raw: list[RawSample], params, model_cfg, vocab, norm,
                   max_len: int, dtype=np.float64):
    """Evaluate on a foreign dataset with the training vocabulary, plus a
    domain-shift report (UNK-token and out-of-range target fractions)."""
    samples = prepare(raw, vocab, max_len)
    metrics = evaluate_samples(samples, params, model_cfg, norm, dtype)
    n_tok = n_unk = 0
    for s in samples:
        real = s.seq.ids[s.seq.mask]
        real = real[real != CLS]
        n_tok += len(real)
        n_unk += int(np.sum(real == UNK))
    out_of_range = [s for s in samples
                    if not norm.tmin <= s.target <= norm.tmax]
    metrics["unk_fraction"] = n_unk / n_tok if n_tok else 0.0
    metrics["target_out_of_range_fraction"] = (len(out_of_range)
                                               / len(samples))
    return metrics


# ---------------------------------------------------------------------------
# experiment drivers

def robustness_sweep(raw_train, raw_val, raw_test, fractions,
                     model_cfg: ModelConfig, train_cfg: TrainConfig,
                     graph_cfg: GraphConfig, seeds=None):
    """Retrain on seeded subsamples of the train split; returns one row
    per (fraction, seed) with the resulting test MAE."""
    seeds = list(seeds) if seeds else [train_cfg.seed]
    rows = []
    for frac in fractions:
        for seed in seeds:
            if frac >= 1.0:
                sub = raw_train
            else:
                k = max(1, int(round(frac * len(raw_train))))
                pick = np.random.default_rng(seed).choice(
                    len(raw_train), size=k, replace=False)
                sub = [raw_train[i] for i in sorted(pick)]
            cfg = replace(train_cfg, seed=seed)
            res = train(sub, raw_val, model_cfg, cfg, graph_cfg)
            test = prepare(raw_test, res.vocab, cfg.max_len)
            mae = evaluate_samples(test, res.params, model_cfg, res.norm,
                                   cfg.dtype)["mae"]
            rows.append({"fraction": frac, "seed": seed, "test_mae": mae,
                         "final_train_mse": res.log[-1]["train_mse"]})
    return rows


def corruption_sweep(raw_train, raw_val, raw_test, p_list,
                     model_cfg: ModelConfig, train_cfg: TrainConfig,
                     graph_cfg: GraphConfig, mode: str = "both",
                     seeds=None):
    """Train/evaluate with text corrupted at each probability p.

    mode selects which side is corrupted: 'train', 'test' or 'both'."""
    if mode not in ("train", "test", "both"):
        raise ValueError(f"unknown corruption mode {mode!r}")
    seeds = list(seeds) if seeds else [train_cfg.seed]
    rows = []
    for p in p_list:
        for seed in seeds:
            cfg = replace(train_cfg, seed=seed)
            train_p = p if mode in ("train", "both") else 0.0
            test_p = p if mode in ("test", "both") else 0.0
            res = train(raw_train, raw_val, model_cfg, cfg, graph_cfg,
                        corrupt_train_p=train_p)
            test = prepare(raw_test, res.vocab, cfg.max_len,
                           test_p, seed + 10_000)
            mae = evaluate_samples(test, res.params, model_cfg, res.norm,
                                   cfg.dtype)["mae"]
            rows.append({"p": p, "seed": seed, "mode": mode,
                         "test_mae": mae,
                         "train_loss_curve": [l["train_mse"]
                                              for l in res.log]})
    return rows


# ---------------------------------------------------------------------------
# checkpoint serialization: 8-byte header length, JSON header, raw blobs

MAGIC = b"MFCK"


@dataclass
class Checkpoint:
    params: dict            # name -> np.ndarray
    model_cfg: dict
    graph_cfg: dict
    max_len: int
    vocab_tokens: list
    norm: dict
    step: int

    @classmethod
    def from_result(cls, res: TrainResult, graph_cfg: GraphConfig):
        return cls({k: t.data for k, t in res.params.items()},
                   asdict(res.model_cfg), asdict(graph_cfg),
                   # vocab max_len lives in the train config; recover from
                   # the positional table so reloads need no extra context
                   res.params["text.pos_emb"].data.shape[0],
                   res.vocab.tokens(), asdict(res.norm), res.steps)

    def model_config(self) -> ModelConfig:
        return config_from_dict(self.model_cfg)

    def graph_config(self) -> GraphConfig:
        return GraphConfig(**self.graph_cfg)

    def vocab(self) -> Vocab:
        return Vocab({t: i + 3 for i, t in enumerate(self.vocab_tokens)})

    def target_norm(self) -> TargetNorm:
        return TargetNorm(**self.norm)

    def tensors(self, dtype=np.float64) -> dict:
        return {k: Tensor(v, requires_grad=True, name=k, dtype=dtype)
                for k, v in self.params.items()}


def save_checkpoint(ckpt: Checkpoint, path):
    header = {"config": ckpt.model_cfg, "graph_config": ckpt.graph_cfg,
              "max_len": ckpt.max_len, "vocab": ckpt.vocab_tokens,
              "norm": ckpt.norm, "step": ckpt.step, "params": {}}
    offset = 0
    blobs = []
    for name, arr in ckpt.params.items():
        raw = np.ascontiguousarray(arr).tobytes()
        header["params"][name] = {"shape": list(arr.shape),
                                  "dtype": str(arr.dtype),
                                  "offset": offset, "nbytes": len(raw)}
        blobs.append(raw)
        offset += len(raw)
    hbytes = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise MatfuseError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        body = fh.read()
    params = {}
    for name, meta in header["params"].items():
        raw = body[meta["offset"]:meta["offset"] + meta["nbytes"]]
        params[name] = np.frombuffer(raw, dtype=meta["dtype"]).reshape(
            meta["shape"]).copy()
    return Checkpoint(params, header["config"], header["graph_config"],
                      header["max_len"], header["vocab"], header["norm"],
                      header["step"])
