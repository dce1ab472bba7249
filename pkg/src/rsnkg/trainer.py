"""Type-based NCE training with Adam over a path corpus."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .kg import KnowledgeGraph, NoiseDistribution, element_frequencies, noise_distribution
from .model import RSN, scatter_rows
from .walker import Corpus, WalkConfig, sample_paths

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.003
    batch_size: int = 512
    negatives: int = 16
    epochs: int = 50
    keep_prob: float = 0.5
    seed: int = 0
    clip_norm: float = 5.0
    resample: bool = True
    exclude_target: bool = True
    skip_dropout: bool = False

    def __post_init__(self):
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class LossReport:
    epoch: int
    loss: float
    seconds: float
    paths: int

    def __post_init__(self):
        if not np.isfinite(self.loss):
            raise NonFiniteGradientError(f"non-finite loss {self.loss} in epoch {self.epoch}")


# -- negatives and loss ----------------------------------------------------


def sample_negatives(target, kind: str, noise: NoiseDistribution, k: int, rng: np.random.Generator,
                     exclude_target: bool = True) -> np.ndarray:
    """Draw ``k`` negatives of the target's type for each target.

    Draws equal to the target are redrawn unless ``exclude_target`` is off.

    ``target`` may be a scalar or an array; the result has shape
    ``target.shape + (k,)`` and holds ids in the type's own id space.
    """
    probs = noise.probs(kind)
    if np.count_nonzero(probs) < 2:
        raise ValueError(f"{kind} vocabulary too small for negative sampling")
    target = np.asarray(target)
    tgt = target[..., None]
    neg = noise.sample(kind, target.shape + (k,), rng)
    clash = neg == tgt if exclude_target else np.zeros(neg.shape, dtype=bool)
    while clash.any():
        neg[clash] = noise.sample(kind, int(clash.sum()), rng)
        clash = neg == tgt
    return neg


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def nce_loss(h: np.ndarray, y: np.ndarray, negs: np.ndarray):
    """NCE loss for one prediction and its gradients.

    ``-log σ(h·y) - Σ_j log σ(-h·ỹ_j)``; returns ``(loss, dh, dy, dnegs)``.
    """
    h, y = np.asarray(h, dtype=np.float64), np.asarray(y, dtype=np.float64)
    negs = np.asarray(negs, dtype=np.float64).reshape(-1, h.shape[-1])
    if not (np.isfinite(h).all() and np.isfinite(y).all() and np.isfinite(negs).all()):
        raise ValueError("non-finite input to nce_loss")
    s_pos = h @ y
    s_neg = negs @ h
    loss = _softplus(-s_pos) + _softplus(s_neg).sum()
    g_pos = -_sigmoid(-s_pos)
    g_neg = _sigmoid(s_neg)
    dh = g_pos * y + g_neg @ negs
    dy = g_pos * h
    dnegs = g_neg[:, None] * h[None, :]
    return float(loss), dh, dy, dnegs


def batch_nce(model: RSN, rows: np.ndarray, out: np.ndarray, noise: NoiseDistribution, k: int,
              rng: np.random.Generator, negatives: np.ndarray | None = None, exclude_target: bool = True):
    """Summed NCE loss over every prediction in a batch.

    Position ``t`` predicts ``rows[:, t + 1]``; even positions have relation
    targets, odd positions entity targets. Returns ``(loss, d_out, d_emb)``
    where the loss is averaged over paths and ``d_emb`` holds the gradient
    through the target/negative embedding rows.
    """
    B, T = rows.shape
    E = model.params["embeddings"]
    n_ent = model.n_ent
    tgt = rows[:, 1:]
    if negatives is None:
        negatives = np.empty((B, T - 1, k), dtype=np.int64)
        rel_pos = slice(0, T - 1, 2)
        ent_pos = slice(1, T - 1, 2)
        negatives[:, rel_pos] = sample_negatives(tgt[:, rel_pos] - n_ent, "relation", noise, k, rng,
                                                   exclude_target) + n_ent
        negatives[:, ent_pos] = sample_negatives(tgt[:, ent_pos], "entity", noise, k, rng, exclude_target)
    o = out[:, :-1]
    y = E[tgt]
    yn = E[negatives]
    s_pos = np.einsum("btd,btd->bt", o, y)
    s_neg = np.einsum("btd,btkd->btk", o, yn)
    loss = (_softplus(-s_pos).sum() + _softplus(s_neg).sum()) / B
    g_pos = -_sigmoid(-s_pos) / B
    g_neg = _sigmoid(s_neg) / B
    d_out = np.zeros_like(out)
    d_out[:, :-1] = g_pos[..., None] * y + np.einsum("btk,btkd->btd", g_neg, yn)
    ids = np.concatenate([tgt.reshape(-1), negatives.reshape(-1)])
    vals = np.concatenate([(g_pos[..., None] * o).reshape(-1, o.shape[-1]),
                           (g_neg[..., None] * o[:, :, None, :]).reshape(-1, o.shape[-1])])
    d_emb = scatter_rows(ids, vals, model.vocab_size)
    return float(loss), d_out, d_emb


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_update(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam step over every parameter in ``grads``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        if params[name].shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# -- epochs ------------------------------------------------------------------


def _batches(corpus: Corpus, batch_size: int, rng: np.random.Generator):
    order = []
    for length, arr in corpus.buckets.items():
        perm = rng.permutation(len(arr))
        for i in range(0, len(arr), batch_size):
            order.append(arr[perm[i : i + batch_size]])
    for j in rng.permutation(len(order)):
        yield order[j]


def train_step(model: RSN, paths: np.ndarray, noise: NoiseDistribution, adam: AdamState, cfg: TrainConfig,
               rng: np.random.Generator) -> float:
    out, trace = model.forward(paths, training=True, rng=rng)
    loss, d_out, d_emb = batch_nce(model, trace.rows, out, noise, cfg.negatives, rng,
                                   exclude_target=cfg.exclude_target)
    grads = model.backward(trace, d_out)
    grads["embeddings"] += d_emb.astype(model.dtype, copy=False)
    clip_by_global_norm(grads, cfg.clip_norm)
    adam_update(model.params, grads, adam, cfg.lr)
    return loss


def train_epoch(model: RSN, corpus: Corpus, cfg: TrainConfig, noise: NoiseDistribution, adam: AdamState,
                rng: np.random.Generator, epoch: int = 0) -> LossReport:
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    start = time.perf_counter()
    total, count = 0.0, 0
    for batch in _batches(corpus, cfg.batch_size, rng):
        loss = train_step(model, batch, noise, adam, cfg, rng)
        total += loss * len(batch)
        count += len(batch)
    return LossReport(epoch, total / count, time.perf_counter() - start, count)


@dataclass
class TrainResult:
    model: RSN
    history: list[LossReport]
    validation: list[tuple[int, float]] = field(default_factory=list)
    best_epoch: int | None = None


def train(
    kg: KnowledgeGraph,
    walk: WalkConfig,
    cfg: TrainConfig,
    dim: int = 256,
    variant: str = "rsn",
    layers: int = 2,
    validate: Callable[[RSN], float] | None = None,
    eval_every: int = 0,
    keep_best: bool = False,
    on_epoch: Callable[[LossReport, RSN], None] | None = None,
    workers: int = 1,
    corpus: Corpus | None = None,
) -> TrainResult:
    """Sample paths and fit a fresh model for ``cfg.epochs`` epochs.

    With ``resample`` the corpus is redrawn every epoch from a seed derived
    from ``(walk.seed, epoch)``. ``validate`` is called every ``eval_every``
    epochs; with ``keep_best`` the best-scoring parameters are restored at
    the end. A given ``corpus`` is used as is for every epoch.
    """
    model = RSN(kg.num_entities, kg.num_relations, dim, layers, variant, cfg.keep_prob, seed=cfg.seed,
                skip_dropout=cfg.skip_dropout)
    noise = noise_distribution(element_frequencies(kg))
    adam = AdamState()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    result = TrainResult(model, [])
    fixed = corpus is not None
    best = (-np.inf, None, None, None)
    for epoch in range(1, cfg.epochs + 1):
        if not fixed and (corpus is None or cfg.resample):
            seed = walk.seed if not cfg.resample else int(np.random.SeedSequence([walk.seed, epoch]).generate_state(1)[0])
            corpus = sample_paths(kg, replace(walk, seed=seed), workers=workers)
        report = train_epoch(model, corpus, cfg, noise, adam, rng, epoch)
        result.history.append(report)
        log.info("epoch %d loss %.4f (%.1fs)", epoch, report.loss, report.seconds)
        if on_epoch is not None:
            on_epoch(report, model)
        if validate is not None and eval_every and epoch % eval_every == 0:
            score = validate(model)
            result.validation.append((epoch, score))
            if score > best[0]:
                best = (score, {k: v.copy() for k, v in model.params.items()}, {k: v.copy() for k, v in model.stats.items()}, epoch)
    if keep_best and best[1] is not None:
        model.params, model.stats = best[1], best[2]
        result.best_epoch = best[3]
    return result
