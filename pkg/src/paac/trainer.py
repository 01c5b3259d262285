"""Training loop: mini-batch Adam over the multi-task objective with early stopping."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from paac.dataset import InteractionDataset, PopularityIndex, build_popularity_index, sample_epoch_batches
from paac.encoder import EmbeddingState, NormalizedAdjacency, build_adjacency, init_embeddings, propagate
from paac.errors import FormatError, NonFiniteLoss
from paac.evaluation import compute_metrics, rank_all
from paac.losses import ABLATIONS, GradientSet, Hyperparams, LossBreakdown, total_loss

log = logging.getLogger(__name__)

CKPT_MAGIC = "PAAC-CKPT v1"
LOGGED_TERMS = ("rec", "sa", "cl_pop", "cl_unpop", "cl_user", "reg", "total")


@dataclass(eq=False)
class AdamState:
    """Adam moments with a step counter per row.

    Only rows with a non-zero gradient are advanced, and bias correction uses
    that row's own step count, so untouched rows stay bitwise unchanged.
    """
    m_user: np.ndarray
    m_item: np.ndarray
    v_user: np.ndarray
    v_item: np.ndarray
    steps_user: np.ndarray
    steps_item: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, state: EmbeddingState) -> "AdamState":
        return cls(np.zeros_like(state.user_base), np.zeros_like(state.item_base),
                   np.zeros_like(state.user_base), np.zeros_like(state.item_base),
                   np.zeros(state.num_users, np.int64), np.zeros(state.num_items, np.int64))

    def copy(self) -> "AdamState":
        return AdamState(self.m_user.copy(), self.m_item.copy(), self.v_user.copy(),
                         self.v_item.copy(), self.steps_user.copy(), self.steps_item.copy(),
                         self.t, self.beta1, self.beta2, self.eps)


def _adam_rows(param, grad, m, v, steps, lr, adam: AdamState):
    rows = np.flatnonzero(np.any(grad != 0, axis=1))
    if len(rows) == 0:
        return
    g = grad[rows]
    steps[rows] += 1
    t = steps[rows][:, None].astype(np.float64)
    m[rows] = adam.beta1 * m[rows] + (1 - adam.beta1) * g
    v[rows] = adam.beta2 * v[rows] + (1 - adam.beta2) * g * g
    m_hat = m[rows] / (1 - adam.beta1 ** t)
    v_hat = v[rows] / (1 - adam.beta2 ** t)
    param[rows] -= lr * m_hat / (np.sqrt(v_hat) + adam.eps)


def adam_update(state: EmbeddingState, adam: AdamState, grads: GradientSet, lr: float) -> None:
    adam.t += 1
    _adam_rows(state.user_base, grads.d_user_base, adam.m_user, adam.v_user, adam.steps_user, lr, adam)
    _adam_rows(state.item_base, grads.d_item_base, adam.m_item, adam.v_item, adam.steps_item, lr, adam)


def train_step(state: EmbeddingState, adam: AdamState, adj: NormalizedAdjacency, batch,
               pop_index: PopularityIndex, hp: Hyperparams, rng: np.random.Generator,
               ablation: str = "full") -> LossBreakdown:
    losses, grads = total_loss(batch, state, adj, pop_index, hp, rng, ablation)
    for name, value in losses.as_dict().items():
        if not np.isfinite(value):
            raise NonFiniteLoss(name, value)
    if not (np.all(np.isfinite(grads.d_user_base)) and np.all(np.isfinite(grads.d_item_base))):
        raise NonFiniteLoss("gradient", float("nan"))
    adam_update(state, adam, grads, hp.lr)
    return losses


@dataclass
class TrainConfig:
    hp: Hyperparams = field(default_factory=Hyperparams)
    eval_every: int = 1
    patience: int = 10
    max_epochs: int | None = None
    checkpoint_dir: str | None = None
    ablation: str = "full"
    eval_k: int = 20
    log_every: int = 1

    def __post_init__(self):
        if self.patience < 1 or self.eval_every < 1:
            raise ValueError("patience and eval_every must be >= 1")
        self.ablation = self.ablation.replace("-", "_")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")

    @property
    def epochs(self) -> int:
        return self.hp.epochs if self.max_epochs is None else self.max_epochs


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_ndcg: float = float("-inf")
    stop_reason: str = ""
    epochs_run: int = 0

    def as_dict(self) -> dict:
        return {"epoch_losses": self.epoch_losses, "val_history": self.val_history,
                "best_epoch": self.best_epoch, "best_val_ndcg": self.best_val_ndcg,
                "stop_reason": self.stop_reason, "epochs_run": self.epochs_run}


def validation_ndcg(state: EmbeddingState, adj: NormalizedAdjacency, dataset: InteractionDataset,
                    layers: int, k: int = 20) -> float:
    prop = propagate(state, adj, layers)
    return compute_metrics(rank_all(prop, dataset, (k,), split="valid"), dataset, k).ndcg


def fit(dataset: InteractionDataset, config: TrainConfig, pop_index: PopularityIndex | None = None,
        log_file: IO[str] | None = None, state: EmbeddingState | None = None
        ) -> tuple[TrainReport, EmbeddingState]:
    """Train from scratch (or from ``state``) and return the best-validation embeddings."""
    hp = config.hp
    pop_index = pop_index or build_popularity_index(dataset)
    adj = build_adjacency(dataset).astype(hp.dtype)
    if state is None:
        state = init_embeddings(dataset.num_users, dataset.num_items, hp.dim, seed=hp.seed)
    state = state.astype(hp.dtype)
    adam = AdamState.zeros_like(state)
    rng = np.random.default_rng([hp.seed, 1])

    report = TrainReport()
    best_state = state.copy()
    bad_evals = 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        sums = dict.fromkeys(LOGGED_TERMS, 0.0)
        n_batches = 0
        for batch in sample_epoch_batches(dataset, hp.batch_size, rng):
            losses = train_step(state, adam, adj, batch, pop_index, hp, rng, config.ablation)
            step += 1
            n_batches += 1
            terms = losses.as_dict()
            for name in LOGGED_TERMS:
                sums[name] += terms[name]
            if log_file is not None and step % config.log_every == 0:
                log_file.write(json.dumps({"step": step, "epoch": epoch,
                                           **{k: terms[k] for k in LOGGED_TERMS}}) + "\n")
        report.epoch_losses.append({"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}})
        report.epochs_run = epoch

        if epoch % config.eval_every:
            continue
        val = validation_ndcg(state, adj, dataset, hp.layers, config.eval_k)
        improved = val > report.best_val_ndcg
        if improved:
            report.best_val_ndcg, report.best_epoch = val, epoch
            best_state = state.copy()
            bad_evals = 0
            if config.checkpoint_dir:
                os.makedirs(config.checkpoint_dir, exist_ok=True)
                save_checkpoint(os.path.join(config.checkpoint_dir, "best.ckpt"), state, adam)
        else:
            bad_evals += 1
        report.val_history.append({"epoch": epoch, "val_ndcg20": val})
        if log_file is not None:
            log_file.write(json.dumps({"epoch": epoch, "val_ndcg20": val, "best": improved}) + "\n")
        log.info("epoch %d loss %.5f val ndcg@%d %.5f%s", epoch,
                 report.epoch_losses[-1]["total"], config.eval_k, val, " *" if improved else "")
        if bad_evals >= config.patience:
            report.stop_reason = f"early stop: no improvement in {config.patience} evaluations"
            break
    else:
        report.stop_reason = "max epochs reached"
    return report, best_state


def save_checkpoint(path, state: EmbeddingState, adam: AdamState) -> None:
    """Header line then little-endian float64 tables/moments and int64 row counters."""
    m, n, d = state.num_users, state.num_items, state.dim
    header = f"{CKPT_MAGIC} {m} {n} {d} {adam.t}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for block in (state.user_base, state.item_base, adam.m_user, adam.m_item,
                      adam.v_user, adam.v_item):
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
        for block in (adam.steps_user, adam.steps_item):
            fh.write(np.ascontiguousarray(block, dtype="<i8").tobytes())


def load_checkpoint(path, num_users: int | None = None, num_items: int | None = None,
                    dim: int | None = None) -> tuple[EmbeddingState, AdamState]:
    """Read a checkpoint; any given dimension that disagrees raises :class:`FormatError`."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").split()
        body = fh.read()
    if header[:2] != CKPT_MAGIC.split() or len(header) != 6:
        raise FormatError(f"{path}: not a {CKPT_MAGIC} file")
    m, n, d, t = map(int, header[2:])
    for name, want, got in (("users", num_users, m), ("items", num_items, n), ("dim", dim, d)):
        if want is not None and want != got:
            raise FormatError(f"{path}: checkpoint has {name}={got}, expected {want}")
    floats = 8 * (3 * (m + n) * d)
    if len(body) != floats + 8 * (m + n):
        raise FormatError(f"{path}: body is {len(body)} bytes, expected {floats + 8 * (m + n)}")
    flat = np.frombuffer(body[:floats], dtype="<f8").astype(np.float64)
    steps = np.frombuffer(body[floats:], dtype="<i8").astype(np.int64)
    blocks = []
    offset = 0
    for rows in (m, n, m, n, m, n):
        blocks.append(flat[offset:offset + rows * d].reshape(rows, d).copy())
        offset += rows * d
    state = EmbeddingState(blocks[0], blocks[1])
    adam = AdamState(blocks[2], blocks[3], blocks[4], blocks[5], steps[:m].copy(), steps[m:].copy(), t=t)
    return state, adam
