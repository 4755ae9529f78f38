"""Scoring, experiment protocols, and deployment-style inference.

Evaluation enumerates the full pair square over the held-out records
whenever that is affordable (n^2 combos from n records), classifying each
pair by thresholded embedding distance. The experiment helpers cover the
two standing protocol questions: how much labeled data the metric needs
(low-data runs with nested training subsets), and how the batch size
steadies the loss trajectory (fixed-epoch ablation).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInput
from .model import SiameseModel, classify_distance
from .synthgen import POS, Record
from .trainer import (
    ComboUniverse,
    FeatureStore,
    TrainConfig,
    contrastive_value,
    embed_all,
    fit,
    pairwise_distances,
)


@dataclass
class EvalConfig:
    threshold: float = 0.5
    margin: float = 1.0
    max_combos: int = 1_000_000  # sample beyond this instead of enumerating
    seed: int = 0
    histogram_bins: int = 40

    def __post_init__(self):
        if not 0.0 < self.threshold < self.margin:
            raise ConfigError(
                f"threshold must lie in (0, margin={self.margin}), got {self.threshold}"
            )
        if self.histogram_bins < 1:
            raise ConfigError(f"histogram_bins must be >= 1, got {self.histogram_bins}")


@dataclass
class EvalReport:
    split: str
    n_records: int
    n_combos: int
    threshold: float
    accuracy: float
    loss: float
    tp: int
    tn: int
    fp: int
    fn: int
    histogram: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def distance_histogram(d: np.ndarray, ind: np.ndarray, bins: int, margin: float) -> dict:
    """Same-class and cross-class distance counts over shared bin edges."""
    hi = max(float(margin), float(d.max()) if len(d) else margin) * 1.001
    edges = np.linspace(0.0, hi, bins + 1)
    same, _ = np.histogram(d[ind == 1], bins=edges)
    diff, _ = np.histogram(d[ind == 0], bins=edges)
    return {
        "bin_edges": [float(e) for e in edges],
        "same_counts": [int(c) for c in same],
        "diff_counts": [int(c) for c in diff],
    }


def _combo_distances(model, store, idxs, cfg: EvalConfig):
    emb = embed_all(model, store, idxs)
    universe = ComboUniverse(store.labels[idxs])
    n = len(idxs)
    if n * n <= cfg.max_combos:
        dmat = pairwise_distances(emb)
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        i, j = i.ravel(), j.ravel()
    else:
        rng = np.random.default_rng(cfg.seed)
        i, j, _ = universe.sample_balanced(rng, cfg.max_combos)
        dmat = None
    ind = universe.indicator(i, j)
    if dmat is not None:
        d = dmat[i, j]
    else:
        d = np.linalg.norm(emb[i].astype(np.float64) - emb[j].astype(np.float64), axis=1)
    return d, ind


def evaluate_records(
    model: SiameseModel,
    store: FeatureStore,
    idxs: np.ndarray,
    cfg: EvalConfig | None = None,
    split_name: str = "test",
) -> EvalReport:
    """Threshold classification over the pair square of the given records."""
    cfg = cfg or EvalConfig()
    idxs = np.asarray(idxs)
    if len(idxs) < 2:
        raise InvalidInput("evaluation needs at least two records")
    d, ind = _combo_distances(model, store, idxs, cfg)
    pred = classify_distance(d, cfg.threshold)
    actual = ind == 1
    tp = int(np.sum(pred & actual))
    tn = int(np.sum(~pred & ~actual))
    fp = int(np.sum(pred & ~actual))
    fn = int(np.sum(~pred & actual))
    return EvalReport(
        split=split_name,
        n_records=len(idxs),
        n_combos=len(d),
        threshold=cfg.threshold,
        accuracy=(tp + tn) / len(d),
        loss=contrastive_value(d, ind, cfg.margin),
        tp=tp, tn=tn, fp=fp, fn=fn,
        histogram=distance_histogram(d, ind, cfg.histogram_bins, cfg.margin),
    )


def threshold_sweep(
    d: np.ndarray, ind: np.ndarray, grid: np.ndarray, margin: float = 1.0
) -> tuple[list[tuple[float, float]], float]:
    """Accuracy at each candidate threshold; returns (rows, best threshold).
    Ties prefer the smaller threshold."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ConfigError("threshold grid is empty")
    if np.any(~np.isfinite(grid)) or np.any(grid <= 0) or np.any(grid >= margin):
        raise ConfigError(f"thresholds must lie strictly inside (0, {margin})")
    actual = ind == 1
    rows = []
    for t in grid:
        acc = float(np.mean(classify_distance(d, float(t)) == actual))
        rows.append((float(t), acc))
    best_idx = int(np.argmax([a for _, a in rows]))
    return rows, rows[best_idx][0]


def sweep_for_model(
    model: SiameseModel,
    store: FeatureStore,
    idxs: np.ndarray,
    grid: np.ndarray,
    cfg: EvalConfig | None = None,
) -> tuple[list[tuple[float, float]], float]:
    cfg = cfg or EvalConfig()
    d, ind = _combo_distances(model, store, np.asarray(idxs), cfg)
    return threshold_sweep(d, ind, grid, cfg.margin)


# ---------------------------------------------------------------------------
# experiment protocols
# ---------------------------------------------------------------------------


def _budget_subset(store: FeatureStore, pool_idx: np.ndarray, budget: int) -> np.ndarray:
    """First budget/2 records of each class from an already-shuffled pool,
    so smaller budgets are strict subsets of larger ones."""
    if budget % 2 != 0:
        raise ConfigError(f"budget must be even for a balanced subset, got {budget}")
    labels = store.labels[pool_idx]
    half = budget // 2
    pos = pool_idx[labels == 1][:half]
    neg = pool_idx[labels == 0][:half]
    if len(pos) < half or len(neg) < half:
        raise InvalidInput(
            f"budget {budget} exceeds the training pool "
            f"({(labels == 1).sum()} pos / {(labels == 0).sum()} neg)"
        )
    return np.concatenate([pos, neg])


def low_data_experiment(
    cfg: TrainConfig,
    store: FeatureStore,
    pool_idx: np.ndarray,
    val_idx: np.ndarray,
    budgets: tuple[int, ...] = (200, 500),
    log=None,
) -> dict:
    """Train identical configurations on nested training subsets of each
    budget and report infer-mode train/val accuracy plus the
    generalization gap. The validation set is shared across budgets."""
    out: dict = {"budgets": list(budgets), "runs": {}}
    eval_cfg = EvalConfig(threshold=cfg.threshold, margin=cfg.margin)
    for budget in budgets:
        sub = _budget_subset(store, pool_idx, budget)
        if log:
            log(f"budget {budget}: training on {len(sub)} base records")
        result = fit(cfg, store, sub, val_idx, log=log)
        train_rep = evaluate_records(result.model, store, sub, eval_cfg, "train")
        val_rep = evaluate_records(result.model, store, val_idx, eval_cfg, "val")
        out["runs"][str(budget)] = {
            "train_accuracy": train_rep.accuracy,
            "val_accuracy": val_rep.accuracy,
            "generalization_gap": train_rep.accuracy - val_rep.accuracy,
            "best_epoch": result.best_epoch,
            "epochs_run": len(result.metrics),
        }
    return out


def batch_ablation(
    cfg: TrainConfig,
    store: FeatureStore,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    batch_sizes: tuple[int, ...] = (8, 64),
    epochs: int = 6,
    log=None,
) -> dict:
    """Fixed-epoch runs differing only in batch size. The stability figure
    is the standard deviation of epoch-to-epoch training-loss deltas."""
    if epochs < 3:
        raise ConfigError(f"need at least 3 epochs to measure deltas, got {epochs}")
    out: dict = {"epochs": epochs, "runs": {}}
    for bs in batch_sizes:
        run_cfg = replace(cfg, batch_size=bs, max_epochs=epochs, patience=0)
        if log:
            log(f"batch size {bs}: {epochs} fixed epochs")
        result = fit(run_cfg, store, train_idx, val_idx, log=log)
        losses = [m.train_loss for m in result.metrics]
        deltas = np.diff(losses)
        out["runs"][str(bs)] = {
            "train_losses": losses,
            "loss_delta_std": float(np.std(deltas)),
            "final_val_acc": result.metrics[-1].val_acc,
        }
    return out


# ---------------------------------------------------------------------------
# deployment-style inference
# ---------------------------------------------------------------------------


def pick_anchors(records: list[Record], k: int = 5) -> list[Record]:
    """Known-positive reference records, deterministically ordered by id."""
    pos = sorted((r for r in records if r.label == POS), key=lambda r: r.id)
    if len(pos) < k:
        raise InvalidInput(f"need {k} positive anchor records, manifest has {len(pos)}")
    return pos[:k]


def detect_movement(
    model: SiameseModel,
    audio_feat: np.ndarray,
    geo_feat: np.ndarray,
    anchor_feats: list[tuple[np.ndarray, np.ndarray]],
    threshold: float = 0.5,
    margin: float = 1.0,
) -> tuple[bool, list[float]]:
    """Compare one query against stored positive anchors; a strict majority
    of anchor distances under the threshold means footsteps are present."""
    if not 0.0 < threshold < margin:
        raise ConfigError(f"threshold must lie in (0, {margin}), got {threshold}")
    if not anchor_feats:
        raise InvalidInput("need at least one anchor")
    a_stack = np.stack([audio_feat] + [a for a, _ in anchor_feats]).astype(np.float32)
    g_stack = np.stack([geo_feat] + [g for _, g in anchor_feats]).astype(np.float32)
    emb = model.embed(a_stack, g_stack, mode="infer").data.astype(np.float64)
    dists = np.linalg.norm(emb[1:] - emb[0], axis=1)
    votes = int(np.sum(dists < threshold))
    verdict = votes * 2 > len(dists)
    return verdict, [float(x) for x in dists]


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def write_histogram_csv(path: str | Path, histogram: dict) -> None:
    edges = histogram["bin_edges"]
    with open(path, "w") as fh:
        fh.write("bin_lo,bin_hi,same_count,diff_count\n")
        for k in range(len(edges) - 1):
            fh.write(
                f"{edges[k]:.6f},{edges[k + 1]:.6f},"
                f"{histogram['same_counts'][k]},{histogram['diff_counts'][k]}\n"
            )


def write_sweep_csv(path: str | Path, rows: list[tuple[float, float]]) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,accuracy\n")
        for t, acc in rows:
            fh.write(f"{t:.6f},{acc:.6f}\n")
