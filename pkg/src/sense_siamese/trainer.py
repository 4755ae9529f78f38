"""Training loop, pair-combination sampling, checkpoints, and metrics.

Training pairs are *combinations*: with n base records there are n^2
ordered pairs (the diagonal included), so 1000 records already yield a
million training examples. An epoch never touches the whole square; it
draws a fixed-size sample, rebalanced to roughly half same-class pairs,
because a uniform draw over the square would be dominated by whichever
class is bigger.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dsp import AUDIO, GEOPHONE, FeatureConfig, cached_features
from .errors import ConfigError, FormatError, InvalidInput, NumericsError
from .model import INPUT_BANDS, INPUT_FRAMES, SiameseModel, classify_distance
from .synthgen import NEG, POS, Record, load_manifest


@dataclass
class TrainConfig:
    variant: str = "cnn"
    batch_size: int = 250
    max_epochs: int = 30
    lr: float = 1e-3
    warmup_steps: int = 0  # linear lr ramp over the first N optimizer steps; 0 starts at full lr
    margin: float = 1.0
    threshold: float = 0.5
    patience: int = 5  # epochs without val improvement before stopping; 0 disables
    seed: int = 0
    epoch_combos: int = 10_000
    val_combos: int = 20_000  # cap when the full validation square is too big
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    frames: int = INPUT_FRAMES  # feature grid the model is built for
    bands: int = INPUT_BANDS

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 < self.threshold < self.margin:
            raise ConfigError(
                f"threshold must lie in (0, margin={self.margin}), got {self.threshold}"
            )
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.epoch_combos < 1:
            raise ConfigError(f"epoch_combos must be >= 1, got {self.epoch_combos}")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ConfigError(f"split must be three non-negative fractions summing to 1, got {self.split}")


# ---------------------------------------------------------------------------
# pair combinations
# ---------------------------------------------------------------------------


class ComboUniverse:
    """All ordered pairs over a labeled index set, sampled without ever
    materializing the square."""

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels)
        if labels.ndim != 1 or len(labels) == 0:
            raise InvalidInput("labels must be a non-empty 1-D array")
        if not np.all((labels == 0) | (labels == 1)):
            raise InvalidInput("labels must be 0/1")
        self.labels = labels.astype(np.int64)
        self.pos_idx = np.flatnonzero(self.labels == 1)
        self.neg_idx = np.flatnonzero(self.labels == 0)
        self.n = len(labels)

    @property
    def count(self) -> int:
        return self.n * self.n

    @property
    def same_count(self) -> int:
        return len(self.pos_idx) ** 2 + len(self.neg_idx) ** 2

    def indicator(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        return (self.labels[i] == self.labels[j]).astype(np.int64)

    def sample_balanced(self, rng: np.random.Generator, k: int):
        """Draw k ordered pairs, half same-class and half cross-class
        (within one when k is odd), uniformly within each stratum.
        Returns (i, j, indicator), shuffled together."""
        if len(self.pos_idx) == 0 or len(self.neg_idx) == 0:
            raise InvalidInput("balanced sampling needs both classes present")
        k_same = k // 2
        k_diff = k - k_same
        npos, nneg = len(self.pos_idx), len(self.neg_idx)

        p_pos = npos * npos / (npos * npos + nneg * nneg)
        from_pos = rng.random(k_same) < p_pos
        i_same = np.where(
            from_pos,
            self.pos_idx[rng.integers(0, npos, k_same)],
            self.neg_idx[rng.integers(0, nneg, k_same)],
        )
        j_same = np.where(
            from_pos,
            self.pos_idx[rng.integers(0, npos, k_same)],
            self.neg_idx[rng.integers(0, nneg, k_same)],
        )

        flip = rng.random(k_diff) < 0.5
        i_diff = np.where(
            flip,
            self.pos_idx[rng.integers(0, npos, k_diff)],
            self.neg_idx[rng.integers(0, nneg, k_diff)],
        )
        j_diff = np.where(
            flip,
            self.neg_idx[rng.integers(0, nneg, k_diff)],
            self.pos_idx[rng.integers(0, npos, k_diff)],
        )

        i = np.concatenate([i_same, i_diff])
        j = np.concatenate([j_same, j_diff])
        ind = np.concatenate([np.ones(k_same, np.int64), np.zeros(k_diff, np.int64)])
        perm = rng.permutation(k)
        return i[perm], j[perm], ind[perm]


def split_records(
    records: list[Record],
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[list[Record], list[Record], list[Record]]:
    """Stratified shuffle split into train/val/test by label."""
    rng = np.random.default_rng(seed)
    out: tuple[list[Record], list[Record], list[Record]] = ([], [], [])
    for label in (POS, NEG):
        group = [r for r in records if r.label == label]
        order = rng.permutation(len(group))
        n_train = int(round(fractions[0] * len(group)))
        n_val = int(round(fractions[1] * len(group)))
        cuts = (
            order[:n_train],
            order[n_train : n_train + n_val],
            order[n_train + n_val :],
        )
        for part, idxs in zip(out, cuts):
            part.extend(group[i] for i in idxs)
    for name, frac, part in zip(("train", "val", "test"), fractions, out):
        if frac > 0 and len(part) == 0:
            raise ConfigError(f"{name} split came out empty; not enough records")
    return out


# ---------------------------------------------------------------------------
# features in memory
# ---------------------------------------------------------------------------


class FeatureStore:
    """Float32 log-mel features for a record list, extracted through the
    on-disk cache once and then served from memory by row index."""

    def __init__(
        self,
        records: list[Record],
        cfg: FeatureConfig | None = None,
        cache_dir: str | Path | None = None,
    ):
        if not records:
            raise InvalidInput("feature store needs at least one record")
        self.records = list(records)
        cfg = cfg or FeatureConfig()
        audio, geo = [], []
        for r in self.records:
            audio.append(cached_features(r.audio, AUDIO, cfg, cache_dir))
            geo.append(cached_features(r.geophone, GEOPHONE, cfg, cache_dir))
        self.audio = np.stack(audio).astype(np.float32)
        self.geo = np.stack(geo).astype(np.float32)
        self.labels = np.array([1 if r.label == POS else 0 for r in self.records], np.int64)

    def __len__(self):
        return len(self.records)

    def take(self, idxs: np.ndarray):
        return self.audio[idxs], self.geo[idxs]


class ArrayFeatureStore:
    """Feature store over already-extracted arrays, for callers that hold
    (audio, geophone) feature stacks in memory instead of a manifest."""

    def __init__(self, audio: np.ndarray, geo: np.ndarray, labels: np.ndarray):
        audio = np.asarray(audio, dtype=np.float32)
        geo = np.asarray(geo, dtype=np.float32)
        labels = np.asarray(labels)
        if audio.ndim != 3 or geo.ndim != 3:
            raise InvalidInput(
                f"feature stacks must be (n, frames, bands), got {audio.shape} and {geo.shape}"
            )
        if audio.shape != geo.shape:
            raise InvalidInput(
                f"audio and geophone stacks disagree: {audio.shape} vs {geo.shape}"
            )
        if labels.shape != (audio.shape[0],) or not np.all((labels == 0) | (labels == 1)):
            raise InvalidInput("labels must be one 0/1 entry per feature row")
        if not (np.all(np.isfinite(audio)) and np.all(np.isfinite(geo))):
            raise InvalidInput("feature stacks contain non-finite values")
        self.audio = audio
        self.geo = geo
        self.labels = labels.astype(np.int64)

    def __len__(self):
        return len(self.labels)

    def take(self, idxs: np.ndarray):
        return self.audio[idxs], self.geo[idxs]


def embed_all(
    model: SiameseModel, store: FeatureStore, idxs: np.ndarray, chunk: int = 64
) -> np.ndarray:
    """Inference-mode joint embeddings for the given store rows."""
    parts = []
    for start in range(0, len(idxs), chunk):
        sel = idxs[start : start + chunk]
        a, g = store.take(sel)
        parts.append(model.embed(a, g, mode="infer").data)
    return np.concatenate(parts, axis=0)


def pairwise_distances(emb: np.ndarray) -> np.ndarray:
    """Full n x n Euclidean distance matrix from one embedding pass."""
    sq = np.sum(emb.astype(np.float64) ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (emb.astype(np.float64) @ emb.astype(np.float64).T)
    np.fill_diagonal(d2, 0.0)  # clear float residue; d(x, x) is zero by definition
    return np.sqrt(np.maximum(d2, 0.0))


def contrastive_value(d: np.ndarray, ind: np.ndarray, margin: float) -> float:
    """Closed-form loss value (no graph), for validation scoring."""
    hinge = np.maximum(0.0, margin - d)
    per = ind * d * d + (1 - ind) * hinge * hinge
    return float(np.mean(per))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

METRICS_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "wall_time_s")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_time_s: float


def write_metrics_csv(path: str | Path, rows: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.epoch, f"{r.train_loss:.8f}", f"{r.train_acc:.6f}",
                 f"{r.val_loss:.8f}", f"{r.val_acc:.6f}", f"{r.wall_time_s:.3f}"]
            )


def read_metrics_csv(path: str | Path) -> list[EpochMetrics]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_COLUMNS:
            raise FormatError(f"{path}: unexpected metrics header {header}")
        rows = []
        for line in reader:
            rows.append(
                EpochMetrics(
                    int(line[0]), float(line[1]), float(line[2]),
                    float(line[3]), float(line[4]), float(line[5]),
                )
            )
    return rows


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"SSCK"
_CKPT_VERSION = 1


@dataclass
class Checkpoint:
    descriptor: dict
    tensors: dict[str, np.ndarray]


def snapshot_tensors(model: SiameseModel, opt: ad.Adam | None = None) -> dict[str, np.ndarray]:
    out = {}
    for name, p in model.params().items():
        out[name] = p.data.astype(np.float32, copy=True)
    for name, s in model.bn_states().items():
        out[f"{name}.running_mean"] = s.running_mean.astype(np.float32, copy=True)
        out[f"{name}.running_var"] = s.running_var.astype(np.float32, copy=True)
    if opt is not None:
        for name, st in opt.state.items():
            out[f"{name}.m"] = st.m.astype(np.float32, copy=True)
            out[f"{name}.v"] = st.v.astype(np.float32, copy=True)
    return out


def build_checkpoint(
    model: SiameseModel, opt: ad.Adam | None = None, extra: dict | None = None
) -> Checkpoint:
    desc = model.descriptor()
    if opt is not None:
        desc["adam"] = {
            "lr": opt.lr,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "t": {name: st.t for name, st in opt.state.items()},
        }
    if extra:
        desc.update(extra)
    return Checkpoint(descriptor=desc, tensors=snapshot_tensors(model, opt))


def save_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    desc = json.dumps(ck.descriptor, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<II", _CKPT_VERSION, len(desc)))
    buf.write(desc)
    buf.write(struct.pack("<I", len(ck.tensors)))
    for name, arr in ck.tensors.items():
        nm = name.encode("utf-8")
        if len(nm) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name}")
        buf.write(struct.pack("<H", len(nm)))
        buf.write(nm)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, desc_len = struct.unpack_from("<II", raw, 4)
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    try:
        descriptor = json.loads(raw[off : off + desc_len].decode("utf-8"))
        off += desc_len
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", raw, off) if rank else ()
            off += 4 * rank
            n_items = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(raw, dtype="<f4", count=n_items, offset=off).reshape(dims)
            off += 4 * n_items
            tensors[name] = arr.copy()
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint: {exc}") from exc
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return Checkpoint(descriptor=descriptor, tensors=tensors)


def model_from_checkpoint(ck: Checkpoint) -> SiameseModel:
    d = ck.descriptor
    model = SiameseModel.build(
        variant=d["variant"], seed=0, margin=d["margin"],
        frames=d["frames"], bands=d["bands"],
    )
    params = model.params()
    states = model.bn_states()
    expected = set(params)
    for name, s in states.items():
        expected.add(f"{name}.running_mean")
        expected.add(f"{name}.running_var")
    stored = {k for k in ck.tensors if not (k.endswith(".m") or k.endswith(".v"))}
    if stored != expected:
        missing = expected - stored
        extra = stored - expected
        raise FormatError(
            f"checkpoint does not match architecture; missing={sorted(missing)[:3]} "
            f"extra={sorted(extra)[:3]}"
        )
    for name, p in params.items():
        arr = ck.tensors[name]
        if arr.shape != p.data.shape:
            raise FormatError(f"{name}: shape {arr.shape} != expected {p.data.shape}")
        p.data = arr.astype(np.float32, copy=True)
    for name, s in states.items():
        s.running_mean = ck.tensors[f"{name}.running_mean"].astype(np.float32, copy=True)
        s.running_var = ck.tensors[f"{name}.running_var"].astype(np.float32, copy=True)
    return model


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[EpochMetrics]
    best_epoch: int
    best_val_loss: float
    model: SiameseModel = field(repr=False, default=None)


def _restore(model: SiameseModel, tensors: dict[str, np.ndarray]):
    for name, p in model.params().items():
        p.data = tensors[name].copy()
    for name, s in model.bn_states().items():
        s.running_mean = tensors[f"{name}.running_mean"].copy()
        s.running_var = tensors[f"{name}.running_var"].copy()


def fit(
    cfg: TrainConfig,
    store: FeatureStore,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    log=None,
) -> TrainResult:
    """Train on sampled pair combinations with validation-based early
    stopping; the returned model carries the best-validation weights."""
    train_labels = store.labels[train_idx]
    val_labels = store.labels[val_idx]
    universe = ComboUniverse(train_labels)
    val_universe = ComboUniverse(val_labels)

    rng = np.random.default_rng(cfg.seed)
    model = SiameseModel.build(
        cfg.variant, seed=cfg.seed, margin=cfg.margin, frames=cfg.frames, bands=cfg.bands
    )
    opt = ad.Adam(model.params(), lr=cfg.lr)

    # one fixed validation pair set: the full square when affordable,
    # otherwise a balanced sample drawn once so epochs stay comparable
    n_val = len(val_idx)
    if n_val * n_val <= max(cfg.val_combos, 250_000):
        vi, vj = np.meshgrid(np.arange(n_val), np.arange(n_val), indexing="ij")
        vi, vj = vi.ravel(), vj.ravel()
        v_ind = val_universe.indicator(vi, vj)
    else:
        val_rng = np.random.default_rng(cfg.seed + 1)
        vi, vj, v_ind = val_universe.sample_balanced(val_rng, cfg.val_combos)

    metrics: list[EpochMetrics] = []
    best_val = np.inf
    best_epoch = 0
    best_tensors = snapshot_tensors(model, opt)
    stale = 0
    step_no = 0

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        ci, cj, cind = universe.sample_balanced(rng, cfg.epoch_combos)
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(ci), cfg.batch_size):
            sl = slice(start, start + cfg.batch_size)
            rows_i = train_idx[ci[sl]]
            rows_j = train_idx[cj[sl]]
            ind_b = cind[sl]
            a1, g1 = store.take(rows_i)
            a2, g2 = store.take(rows_j)
            loss, d = model.pair_loss(a1, g1, a2, g2, ind_b, mode="train", rng=rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericsError(f"training loss became {value} at epoch {epoch}")
            loss.backward()
            step_no += 1
            if cfg.warmup_steps > 0:
                # Adam's first bias-corrected steps move each coordinate by
                # a full +-lr regardless of gradient size; on the wide dense
                # head that coherent kick inflates pair distances past the
                # margin before any learning happens. Ramping lr while the
                # second-moment estimate fills in keeps the geometry intact.
                opt.lr = cfg.lr * min(1.0, step_no / cfg.warmup_steps)
            opt.step()
            opt.zero_grad()
            loss_sum += value * len(ind_b)
            correct += int(np.sum(classify_distance(d, cfg.threshold) == (ind_b == 1)))
        train_loss = loss_sum / len(ci)
        train_acc = correct / len(ci)

        emb = embed_all(model, store, val_idx)
        dmat = pairwise_distances(emb)
        dv = dmat[vi, vj]
        val_loss = contrastive_value(dv, v_ind, cfg.margin)
        if not np.isfinite(val_loss):
            raise NumericsError(f"validation loss became {val_loss} at epoch {epoch}")
        val_acc = float(np.mean(classify_distance(dv, cfg.threshold) == (v_ind == 1)))

        wall = time.perf_counter() - t0
        metrics.append(EpochMetrics(epoch, train_loss, train_acc, val_loss, val_acc, wall))
        if log:
            log(
                f"epoch {epoch:3d}  train_loss {train_loss:.4f}  train_acc {train_acc:.3f}  "
                f"val_loss {val_loss:.4f}  val_acc {val_acc:.3f}  ({wall:.1f}s)"
            )

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_tensors = snapshot_tensors(model, opt)
            stale = 0
        else:
            stale += 1
            if cfg.patience > 0 and stale >= cfg.patience:
                break

    _restore(model, best_tensors)
    extra = {
        "best_epoch": best_epoch,
        "best_val_loss": best_val,
        "epochs_run": len(metrics),
        "threshold": cfg.threshold,
        "seed": cfg.seed,
    }
    ck = Checkpoint(descriptor={**model.descriptor(), **extra, "adam": {
        "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
        "t": {name: st.t for name, st in opt.state.items()},
    }}, tensors=dict(best_tensors))
    return TrainResult(ck, metrics, best_epoch, float(best_val), model)


def run_training(
    cfg: TrainConfig,
    manifest_path: str | Path,
    out_dir: str | Path,
    cache_dir: str | Path | None = None,
    feature_cfg: FeatureConfig | None = None,
    log=None,
) -> TrainResult:
    """File-level entry: manifest in, checkpoint + metrics + config out."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = load_manifest(manifest_path)
    train_recs, val_recs, _test = split_records(records, cfg.split, cfg.seed)
    ordered = train_recs + val_recs
    store = FeatureStore(ordered, feature_cfg, cache_dir)
    train_idx = np.arange(len(train_recs))
    val_idx = np.arange(len(train_recs), len(ordered))
    result = fit(cfg, store, train_idx, val_idx, log=log)

    save_checkpoint(out / "checkpoint.ssck", result.checkpoint)
    write_metrics_csv(out / "metrics.csv", result.metrics)
    resolved = {
        "config": asdict(cfg),
        "manifest": str(Path(manifest_path).resolve()),
        "n_train_records": len(train_recs),
        "n_val_records": len(val_recs),
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
    }
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    return result
