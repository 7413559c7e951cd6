"""Toy-scale training and evaluation loops."""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from .. import tensor as T
from ..hornet import HorNet, ModelSpec
from . import checkpoint
from .config import RunConfig, dump_config
from .data import load_idx_dataset, synthetic_shapes
from .optim import clip_grad_norm, make_optimizer

THREADS_ENV = "HORNCORE_THREADS"


class TrainingAborted(RuntimeError):
    """Raised when a non-finite loss, gradient or parameter is detected."""


@dataclass
class TrainResult:
    model: HorNet
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    checkpoint_path: str | None = None


def resolve_threads(threads: int | None) -> int:
    """Explicit value first, then ``HORNCORE_THREADS``, then 1."""
    if threads is not None:
        value = threads
    else:
        raw = os.environ.get(THREADS_ENV, "").strip()
        try:
            value = int(raw) if raw else 1
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"thread count must be >= 1, got {value}")
    return value


def load_dataset(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    d = cfg.data
    spec = cfg.model
    if d.dataset == "synthetic":
        return synthetic_shapes(d.samples, spec.image_size, spec.num_classes, spec.in_chans,
                                seed=d.seed, noise=d.noise)
    for p in (d.images, d.labels):
        if not os.path.exists(p):
            raise FileNotFoundError(f"dataset file not found: {p}")
    x, y = load_idx_dataset(d.images, d.labels)
    check_dataset(spec, x, y)
    return x, y


def check_dataset(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[1] != spec.in_chans:
        raise ValueError(f"images of shape {x.shape} do not match {spec.in_chans} input channels")
    if x.shape[2] % spec.reduction() or x.shape[3] % spec.reduction():
        raise ValueError(f"image size {x.shape[2:]} not divisible by {spec.reduction()}")
    if len(y) and (y.min() < 0 or y.max() >= spec.num_classes):
        raise ValueError(f"labels outside [0, {spec.num_classes})")


def _loss_and_grads(model: HorNet, params: list, x: np.ndarray, y: np.ndarray):
    logits = model(T.Tensor(x, dtype=model.dtype))
    loss = T.softmax_cross_entropy(logits, y)
    grads = T.grad(loss, params)
    correct = int((logits.data.argmax(axis=1) == y).sum())
    return float(loss.data), grads, correct


def _shards(n: int, parts: int) -> list[slice]:
    bounds = np.linspace(0, n, min(parts, n) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _max_abs_param(model: HorNet) -> float:
    return max(float(np.max(np.abs(p.data))) if p.size else 0.0 for p in model.store)


def train(cfg: RunConfig, out: str | os.PathLike | None = None, log: TextIO | None = None,
          threads: int | None = None, callback: Callable[[int, float, float], bool | None] | None = None
          ) -> TrainResult:
    """Train ``cfg.model`` on the configured dataset, logging ``step,loss,acc`` lines.

    With ``out`` the final parameters go to ``out/model.hrnc`` and the
    resolved config to ``out/config.cfg``; nothing is written when training
    aborts.  A ``callback`` returning True stops training early; the
    checkpoint is still written.
    """
    threads = resolve_threads(cfg.threads if threads is None else threads)
    x, y = load_dataset(cfg)
    model = HorNet(cfg.model, seed=cfg.seed)
    result = fit_model(model, x, y, cfg, log=log, threads=threads, callback=callback)
    if out is not None:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "model.hrnc")
        save_model(path, model)
        with open(os.path.join(out, "config.cfg"), "w", encoding="utf-8") as fh:
            fh.write(dump_config(cfg))
        result.checkpoint_path = path
    return result


def fit_model(model: HorNet, x: np.ndarray, y: np.ndarray, cfg: RunConfig, log: TextIO | None = None,
              threads: int = 1, callback: Callable[[int, float, float], bool | None] | None = None
              ) -> TrainResult:
    """Optimize ``model`` in place on arrays using the optimizer/schedule fields of ``cfg``.

    Batches are split across ``threads`` workers whose gradients are
    combined in worker order.
    """
    check_dataset(model.spec, x, y)
    params = list(model.store)
    opt = make_optimizer(cfg.optimizer, model.store, cfg.lr, cfg.weight_decay, cfg.betas, cfg.eps,
                         cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    order = rng.permutation(n)
    cursor = 0
    result = TrainResult(model)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    if log is not None:
        log.write("step,loss,acc\n")
    try:
        for step in range(1, cfg.steps + 1):
            if cursor + cfg.batch_size > n:
                order = rng.permutation(n)
                cursor = 0
            # a batch is a set: sorting makes its loss independent of the shuffle order
            idx = np.sort(order[cursor:cursor + cfg.batch_size])
            cursor += cfg.batch_size
            xb, yb = x[idx], y[idx]
            if pool is None:
                loss, grads, correct = _loss_and_grads(model, params, xb, yb)
            else:
                shards = _shards(len(idx), threads)
                outs = list(pool.map(lambda s: _loss_and_grads(model, params, xb[s], yb[s]), shards))
                weights = [(s.stop - s.start) / len(idx) for s in shards]
                loss = sum(w * o[0] for w, o in zip(weights, outs))
                grads = [sum(w * o[1][i] for w, o in zip(weights, outs)) for i in range(len(params))]
                correct = sum(o[2] for o in outs)
            acc = correct / len(idx)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingAborted(f"non-finite loss or gradient at step {step} "
                                      f"(loss={loss}, max |param| = {_max_abs_param(model):.6g})")
            for p, g in zip(params, grads):
                p.grad = g.astype(p.dtype, copy=False)
            if cfg.grad_clip_norm is not None:
                clip_grad_norm(model.store, cfg.grad_clip_norm)
            opt.step()
            bad = [p.name for p in params if not np.all(np.isfinite(p.data))]
            if bad:
                raise TrainingAborted(f"non-finite parameter {bad[0]} after step {step} "
                                      f"(max |param| = {_max_abs_param(model):.6g})")
            result.losses.append(loss)
            result.accuracies.append(acc)
            if log is not None and (step % cfg.log_every == 0 or step == cfg.steps):
                log.write(f"{step},{loss:.6f},{acc:.4f}\n")
                log.flush()
            if callback is not None and callback(step, loss, acc):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return result


# ---------------------------------------------------------------- persistence


_SPEC_KEY = "__spec__"


def save_model(path: str | os.PathLike, model: HorNet) -> None:
    """Checkpoint the parameters plus the ModelSpec (as a UTF-8 JSON byte record)."""
    state = model.store.state_dict()
    if _SPEC_KEY in state:
        raise ValueError(f"parameter name {_SPEC_KEY!r} is reserved")
    blob = np.frombuffer(json.dumps(model.spec.to_dict()).encode("utf-8"), dtype=np.uint8)
    state[_SPEC_KEY] = blob.astype(np.float32)
    checkpoint.save(path, state)


def load_model(path: str | os.PathLike, spec: ModelSpec | None = None) -> HorNet:
    """Rebuild a model from a checkpoint; an explicit ``spec`` must match its shapes."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    state = checkpoint.load(path)
    raw = state.pop(_SPEC_KEY, None)
    if spec is None:
        if raw is None:
            raise checkpoint.CheckpointError("checkpoint carries no model spec; pass one explicitly")
        spec = ModelSpec.from_dict(json.loads(raw.astype(np.uint8).tobytes().decode("utf-8")))
    model = HorNet(spec, seed=0)
    try:
        model.store.load_state_dict(state)
    except ValueError as exc:
        raise ValueError(f"checkpoint incompatible with model: {exc}") from exc
    return model


def evaluate(model: HorNet | str | os.PathLike, x: np.ndarray, y: np.ndarray,
             batch_size: int = 256) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy over ``(x, y)``."""
    if not isinstance(model, HorNet):
        model = load_model(model)
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    check_dataset(model.spec, x, y)
    if len(x) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    total_loss, correct = 0.0, 0
    with T.no_grad():
        for a in range(0, len(x), batch_size):
            xb, yb = x[a:a + batch_size], y[a:a + batch_size]
            logits = model(T.Tensor(xb, dtype=model.dtype))
            total_loss += float(T.softmax_cross_entropy(logits, yb).data) * len(yb)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
    return correct / len(x), total_loss / len(x)
