"""Dataset assembly, the training loop, and gradient verification.

Training examples are cut from trip logs with the same samplers the online
controller uses: at each admissible position the buffered past supplies the
primitives and history, and the actually-driven next l_f records supply the
known future features and the prediction targets. The corpus is split
7:1.5:1.5 along whole trips so no trip leaks across splits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ColdStartError, DataError, NumericalError
from .grid import (DataChunk, FeatureStats, GridConfig, TripLog, fit_stats,
                   make_chunk, normalize_values)
from .nvformer import NvFormerConfig, NvFormerModel
from .past_sampler import SamplerConfig, TripBuffer, select_primitives


@dataclass(frozen=True)
class TrainingExample:
    """Normalized tensors for one training row."""

    primitives: np.ndarray    # (p, l_h, m)
    history: np.ndarray       # (l_h, m)
    future_known: np.ndarray  # (l_f, m_f)
    target: np.ndarray        # (l_f, m_r)
    trip_id: int

    def __post_init__(self):
        for name in ("primitives", "history", "future_known", "target"):
            arr = getattr(self, name)
            if not np.isfinite(arr).all():
                raise DataError(f"non-finite values in {name}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 256
    warmup_epochs: int = 10
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise DataError("learning rate must be nonnegative")
        if self.warmup_epochs > self.max_epochs:
            raise DataError("warm-up cannot exceed max epochs")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise DataError("batch size and max epochs must be positive")


@dataclass
class TrainResult:
    model: NvFormerModel
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    steps: int = 0


def corpus_stats(trips: list[TripLog]) -> FeatureStats:
    """Min/max stats over whole trips, each treated as one big chunk."""
    chunks = [DataChunk(start_s=t.start_s, values=t.values) for t in trips]
    return fit_stats(chunks)


def build_examples(trips: list[TripLog], grid: GridConfig,
                   sampler_cfg: SamplerConfig, l_f: int,
                   stats: FeatureStats | None = None,
                   hop: int = 2) -> tuple[list[TrainingExample], FeatureStats]:
    """Slide over every trip and emit one example per admissible position.

    A position is admissible once primitives exist (enough buffered past)
    and the trip still covers the full future horizon. ``hop`` thins the
    positions to every hop-th grid point.
    """
    if not trips:
        raise DataError("no trips to build examples from")
    if stats is None:
        stats = corpus_stats(trips)
    m_f = grid.m_f
    examples: list[TrainingExample] = []
    for trip_id, trip in enumerate(trips):
        buffer = TripBuffer(grid)
        for idx in range(trip.s.size):
            s_now = float(trip.s[idx])
            buffer.append(s_now, trip.values[idx])
            if idx % hop:
                continue
            if s_now + l_f * grid.delta_s > trip.end_s + 1e-9:
                continue
            try:
                prim = select_primitives(buffer, sampler_cfg)
            except ColdStartError:
                continue
            future = make_chunk(trip, s_now, l_f)
            fut_norm = normalize_values(future.values, stats)
            examples.append(TrainingExample(
                primitives=np.stack([normalize_values(c.values, stats)
                                     for c in prim.samples]),
                history=normalize_values(prim.history.values, stats),
                future_known=fut_norm[:, :m_f],
                target=fut_norm[:, m_f:],
                trip_id=trip_id,
            ))
    if not examples:
        raise DataError("trips too short to produce any training example")
    return examples, stats


def split_dataset(examples: list[TrainingExample]
                  ) -> tuple[list, list, list]:
    """7 : 1.5 : 1.5 split along whole trips (contiguous ranges as fallback)."""
    if not examples:
        raise DataError("cannot split an empty dataset")
    trip_ids = sorted({e.trip_id for e in examples})
    n = len(examples)
    if len(trip_ids) >= 3:
        groups = [[e for e in examples if e.trip_id == t] for t in trip_ids]
        train, val, test = [], [], []
        for g in groups:
            if len(train) < 0.7 * n:
                train.extend(g)
            elif len(val) < 0.15 * n:
                val.extend(g)
            else:
                test.extend(g)
        if not val and test:
            val = test[: max(1, len(test) // 2)]
            test = test[len(val):]
    else:
        a, b = int(0.7 * n), int(0.85 * n)
        train, val, test = examples[:a], examples[a:b], examples[b:]
    if not train:
        raise DataError("train split is empty")
    return train, val, test


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Linear warm-up over the first warmup_epochs (1-based), then constant."""
    if cfg.warmup_epochs <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * min(1.0, epoch / cfg.warmup_epochs)


def _stack(examples: list[TrainingExample]) -> dict[str, torch.Tensor]:
    return {
        "prim": torch.from_numpy(np.stack([e.primitives for e in examples])),
        "hist": torch.from_numpy(np.stack([e.history for e in examples])),
        "fut": torch.from_numpy(np.stack([e.future_known for e in examples])),
        "y": torch.from_numpy(np.stack([e.target for e in examples])),
    }


def _batch_loss(net, batch, lo, hi) -> torch.Tensor:
    out = net(batch["prim"][lo:hi], batch["hist"][lo:hi], batch["fut"][lo:hi])
    return ((out - batch["y"][lo:hi]) ** 2).mean()


def _eval_loss(net, batch, batch_size: int) -> float:
    n = batch["y"].shape[0]
    total = 0.0
    with torch.no_grad():
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            total += float(_batch_loss(net, batch, lo, hi)) * (hi - lo)
    return total / n


def train(model: NvFormerModel, examples: list[TrainingExample],
          cfg: TrainConfig, max_steps: int | None = None,
          log=None) -> TrainResult:
    """Adam with linear warm-up; returns the lowest-validation checkpoint.

    A non-finite loss aborts immediately and the best checkpoint so far is
    kept; if the very first epoch diverges that is a hard error.
    """
    if not examples:
        raise DataError("empty dataset")
    train_ex, val_ex, _ = split_dataset(examples)
    train_b = _stack(train_ex)
    val_b = _stack(val_ex) if val_ex else None

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net = model.net
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate,
                           betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    result = TrainResult(model=model)
    best_state = None
    n = len(train_ex)
    diverged = False

    for epoch in range(1, cfg.max_epochs + 1):
        lr = lr_at_epoch(cfg, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        order = rng.permutation(n)
        net.train()
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[lo:lo + cfg.batch_size])
            out = net(train_b["prim"][idx], train_b["hist"][idx],
                      train_b["fut"][idx])
            loss = ((out - train_b["y"][idx]) ** 2).mean()
            if not torch.isfinite(loss):
                diverged = True
                break
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * idx.numel()
            result.steps += 1
            if max_steps is not None and result.steps >= max_steps:
                break
        if diverged:
            if best_state is None:
                raise NumericalError("training diverged before any checkpoint")
            break
        net.eval()
        train_loss = epoch_loss / n
        val_loss = _eval_loss(net, val_b, cfg.batch_size) if val_b else train_loss
        result.train_loss.append(train_loss)
        result.val_loss.append(val_loss)
        result.lr.append(lr)
        if val_loss < result.best_val:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_state = {k: v.detach().clone()
                          for k, v in net.state_dict().items()}
        if log is not None:
            log(f"epoch {epoch:3d} lr {lr:.2e} train {train_loss:.3e} "
                f"val {val_loss:.3e}")
        if max_steps is not None and result.steps >= max_steps:
            break

    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    return result


def finite_difference_check(loss_fn, parameters, n_coords: int = 200,
                            h: float = 1e-4, seed: int = 0) -> float:
    """Max relative error between autograd and central finite differences.

    Coordinates are sampled uniformly over the concatenated parameter
    vector. Parameters the loss does not touch count as zero-gradient.
    """
    params = [p for p in parameters if p.requires_grad]
    if not params:
        raise DataError("no trainable parameters")
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat in sorted(int(x) for x in picks):
        k = int(np.searchsorted(bounds, flat, side="right"))
        idx = flat - (bounds[k - 1] if k else 0)
        p = params[k]
        with torch.no_grad():
            orig = p.view(-1)[idx].item()
            p.view(-1)[idx] = orig + h
        loss_p = float(loss_fn().detach())
        with torch.no_grad():
            p.view(-1)[idx] = orig - h
        loss_m = float(loss_fn().detach())
        with torch.no_grad():
            p.view(-1)[idx] = orig
        fd = (loss_p - loss_m) / (2.0 * h)
        g = 0.0 if grads[k] is None else float(grads[k].view(-1)[idx])
        rel = abs(g - fd) / max(abs(g), abs(fd), 1e-6)
        worst = max(worst, rel)
    return worst


def grad_check(model: NvFormerModel, example: TrainingExample,
               n_coords: int = 200, h: float = 1e-4, seed: int = 0) -> float:
    """Finite-difference verification of the full model gradient (dropout off)."""
    net = model.net
    net.eval()
    prim = torch.from_numpy(example.primitives).unsqueeze(0)
    hist = torch.from_numpy(example.history).unsqueeze(0)
    fut = torch.from_numpy(example.future_known).unsqueeze(0)
    y = torch.from_numpy(example.target).unsqueeze(0)

    def loss_fn():
        return ((net(prim, hist, fut) - y) ** 2).mean()

    return finite_difference_check(loss_fn, net.parameters(),
                                   n_coords=n_coords, h=h, seed=seed)


def make_synthetic_examples(cfg: NvFormerConfig, n: int,
                            seed: int = 0) -> list[TrainingExample]:
    """Small learnable dataset: targets are a smooth map of the inputs.

    Used by the overfit check and the gradient tests; targets depend on the
    known future features plus a shift from the primitive context so every
    input path carries signal.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        prim = rng.uniform(0.0, 1.0, (cfg.p, cfg.l_h, cfg.m))
        hist = rng.uniform(0.0, 1.0, (cfg.l_h, cfg.m))
        fut = rng.uniform(0.0, 1.0, (cfg.l_f, cfg.m_f))
        shift = prim.mean() - 0.5
        v, a, th = fut[:, 0], fut[:, 1], fut[:, 2]
        target = np.column_stack([
            0.5 + 0.3 * np.sin(2.0 * np.pi * v) * np.cos(np.pi * th) + 0.1 * shift,
            0.4 + 0.4 * a * v + 0.1 * shift,
            0.5 + 0.25 * np.tanh(2.0 * (v - 0.5)) - 0.2 * th * a,
        ])
        out.append(TrainingExample(primitives=prim, history=hist,
                                   future_known=fut,
                                   target=np.clip(target, 0.0, 1.0),
                                   trip_id=i % 4))
    return out
