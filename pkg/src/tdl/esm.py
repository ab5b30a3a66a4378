"""Embedding-space separation losses over frame pairs.

Three hinge terms act on cosine similarities between L2-normalized
frame embeddings: same-class pairs (real-real and fake-fake) are pushed
above ``tau_same``, cross-class pairs below ``tau_diff``. Each term is
the worst violation over its pair set, so gradients flow only through
one pair per active term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FrameLabels
from .errors import ConfigError, ShapeError, ValidationError

# frame_class codes
FAKE = 0
REAL = 1
PADDING = -1

_COS_EPS = 1e-12


@dataclass
class EsmConfig:
    """Margins and optional pair-sampling budget for the hinge losses."""

    tau_same: float = 0.9
    tau_diff: float = 0.0
    pair_budget: int | None = None
    sample_seed: int = 0

    def __post_init__(self):
        if not -1.0 < self.tau_same <= 1.0:
            raise ConfigError(f"tau_same {self.tau_same} outside (-1, 1]")
        if not -1.0 <= self.tau_diff < 1.0:
            raise ConfigError(f"tau_diff {self.tau_diff} outside [-1, 1)")
        if self.tau_same <= self.tau_diff:
            raise ConfigError(
                f"tau_same {self.tau_same} must exceed tau_diff {self.tau_diff}; "
                "the margins are jointly unsatisfiable otherwise"
            )
        if self.pair_budget is not None and self.pair_budget < 1:
            raise ConfigError("pair_budget must be positive when set")

    def to_dict(self) -> dict:
        return {"tau_same": self.tau_same, "tau_diff": self.tau_diff,
                "pair_budget": self.pair_budget, "sample_seed": self.sample_seed}

    @classmethod
    def from_dict(cls, obj: dict) -> "EsmConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown esm keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class EsmLoss:
    l_real: float
    l_fake: float
    l_diff: float

    @property
    def total(self) -> float:
        return self.l_real + self.l_fake + self.l_diff

    def to_dict(self) -> dict:
        return {"l_real": self.l_real, "l_fake": self.l_fake,
                "l_diff": self.l_diff, "total": self.total}


@dataclass
class EmbeddingSequence:
    """Unit-norm embedding columns plus a real/fake/padding class per frame."""

    dim: int
    num_frames: int
    values: np.ndarray
    frame_class: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.frame_class = np.asarray(self.frame_class, dtype=np.int8)
        if self.values.shape != (self.dim, self.num_frames):
            raise ShapeError(f"embedding shape {self.values.shape}")
        if self.frame_class.shape != (self.num_frames,):
            raise ShapeError(f"frame_class shape {self.frame_class.shape}")
        if not np.all(np.isin(self.frame_class, (REAL, FAKE, PADDING))):
            raise ValidationError("frame_class entries must be real/fake/padding")
        live = self.frame_class != PADDING
        norms = np.sqrt((self.values[:, live] ** 2).sum(axis=0))
        if norms.size and np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValidationError("non-padding embedding columns must be unit norm")


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """S(u, v) = u.v / (|u||v|), clamped into [-1, 1] against rounding.

    Identical vectors short-circuit to exactly 1.0 (self-similarity is
    scale invariant, so its gradient is zero anyway).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"cosine on shapes {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < _COS_EPS or nv < _COS_EPS:
        raise ValidationError("cosine_similarity: zero vector")
    if np.array_equal(u, v):
        return 1.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def align_labels_to_embedding(labels: FrameLabels, t_e: int) -> np.ndarray:
    """Map each embedding frame onto the label timeline.

    Embedding frame t reads label index floor(t * L / t_e); label value
    1 is treated as real and 0 as fake, and indices past true_labels are
    padding. The map is exact integer arithmetic, so it is monotone with
    j(0) = 0 and j(t_e - 1) = L - 1 whenever t_e >= L.
    """
    if t_e < 1:
        raise ShapeError("t_e must be >= 1")
    length = labels.labels.size
    j = (np.arange(t_e) * length) // t_e
    classes = np.where(labels.labels[j] == 1, REAL, FAKE).astype(np.int8)
    classes[j >= labels.true_labels] = PADDING
    return classes


# ---------------------------------------------------------------------------
# pair scans
# ---------------------------------------------------------------------------


def _channel_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-column dot product with a fixed sequential channel order.

    numpy's reductions switch between sequential and pairwise summation
    depending on strides; accumulating explicitly keeps pair
    similarities bit-stable across array shapes, which the exact
    brute-force oracle equality relies on.
    """
    acc = a[0] * b[0]
    for c in range(1, a.shape[0]):
        acc = acc + a[c] * b[c]
    return acc


def _normalized(values: np.ndarray):
    norms = np.maximum(np.sqrt(_channel_dot(values, values)), _COS_EPS)
    return values / norms, norms


def _same_class_pairs(indices: np.ndarray, cfg: EsmConfig,
                      rng: np.random.Generator):
    """Unordered distinct pairs (lexicographic order) within one class."""
    m = indices.size
    if m < 2:
        return None, None
    pi, pj = np.triu_indices(m, k=1)
    if cfg.pair_budget is not None and pi.size > cfg.pair_budget:
        keep = np.sort(rng.choice(pi.size, size=cfg.pair_budget, replace=False))
        pi, pj = pi[keep], pj[keep]
    return indices[pi], indices[pj]


def _cross_class_pairs(real_idx: np.ndarray, fake_idx: np.ndarray,
                       cfg: EsmConfig, rng: np.random.Generator):
    if real_idx.size == 0 or fake_idx.size == 0:
        return None, None
    total = real_idx.size * fake_idx.size
    if cfg.pair_budget is not None and total > cfg.pair_budget:
        flat = np.sort(rng.choice(total, size=cfg.pair_budget, replace=False))
        return real_idx[flat // fake_idx.size], fake_idx[flat % fake_idx.size]
    ri = np.repeat(real_idx, fake_idx.size)
    fi = np.tile(fake_idx, real_idx.size)
    return ri, fi


def _pair_sims(normed: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return np.clip(_channel_dot(normed[:, xs], normed[:, ys]), -1.0, 1.0)


def _worst_same(normed, indices, cfg, rng):
    """(hinge loss, (x, y) or None) for max over pairs of [tau_same - S]+."""
    xs, ys = _same_class_pairs(indices, cfg, rng)
    if xs is None:
        return 0.0, None
    sims = _pair_sims(normed, xs, ys)
    w = int(np.argmin(sims))  # first minimum = lowest pair index
    loss = max(0.0, cfg.tau_same - float(sims[w]))
    return loss, (int(xs[w]), int(ys[w]))


def _worst_cross(normed, real_idx, fake_idx, cfg, rng):
    xs, ys = _cross_class_pairs(real_idx, fake_idx, cfg, rng)
    if xs is None:
        return 0.0, None
    sims = _pair_sims(normed, xs, ys)
    w = int(np.argmax(sims))
    loss = max(0.0, float(sims[w]) - cfg.tau_diff)
    return loss, (int(xs[w]), int(ys[w]))


def _components(values: np.ndarray, frame_class: np.ndarray, cfg: EsmConfig):
    normed, norms = _normalized(values)
    rng = np.random.default_rng(cfg.sample_seed)
    real_idx = np.nonzero(frame_class == REAL)[0]
    fake_idx = np.nonzero(frame_class == FAKE)[0]
    l_real, pair_real = _worst_same(normed, real_idx, cfg, rng)
    l_fake, pair_fake = _worst_same(normed, fake_idx, cfg, rng)
    l_diff, pair_diff = _worst_cross(normed, real_idx, fake_idx, cfg, rng)
    return (EsmLoss(l_real, l_fake, l_diff),
            (pair_real, pair_fake, pair_diff), normed, norms)


def esm_real_loss(e: EmbeddingSequence, cfg: EsmConfig) -> float:
    """Worst same-class hinge over distinct real-frame pairs."""
    return _components(e.values, e.frame_class, cfg)[0].l_real


def esm_fake_loss(e: EmbeddingSequence, cfg: EsmConfig) -> float:
    return _components(e.values, e.frame_class, cfg)[0].l_fake


def esm_diff_loss(e: EmbeddingSequence, cfg: EsmConfig) -> float:
    """Worst cross-class hinge: max over (real, fake) of [S - tau_diff]+."""
    return _components(e.values, e.frame_class, cfg)[0].l_diff


def _cosine_pair_grads(values, normed, norms, x: int, y: int):
    """dS/du and dS/dv for the full cosine (norms not assumed unit)."""
    s = float(np.clip(normed[:, x] @ normed[:, y], -1.0, 1.0))
    gu = (normed[:, y] - s * normed[:, x]) / norms[x]
    gv = (normed[:, x] - s * normed[:, y]) / norms[y]
    return gu, gv


def esm_loss(e: EmbeddingSequence, cfg: EsmConfig):
    """All three components plus the subgradient with respect to e.values.

    Only the worst pair of each active component carries gradient; ties
    break toward the lowest pair index, and the subgradient at a hinge
    kink is zero, so training is deterministic.
    """
    return esm_loss_from_arrays(e.values, e.frame_class, cfg)


def esm_loss_from_arrays(values: np.ndarray, frame_class: np.ndarray,
                         cfg: EsmConfig):
    """Validation-free core of esm_loss; columns need not be exactly unit."""
    losses, pairs, normed, norms = _components(values, frame_class, cfg)
    grad = np.zeros_like(values)
    for loss_val, pair, sign in (
        (losses.l_real, pairs[0], -1.0),
        (losses.l_fake, pairs[1], -1.0),
        (losses.l_diff, pairs[2], +1.0),
    ):
        if pair is None or loss_val <= 0.0:
            continue
        x, y = pair
        gu, gv = _cosine_pair_grads(values, normed, norms, x, y)
        grad[:, x] += sign * gu
        grad[:, y] += sign * gv
    return losses, grad


def esm_loss_batch(sequences, cfg: EsmConfig) -> EsmLoss:
    """Mean of per-utterance components across a batch."""
    sequences = list(sequences)
    if not sequences:
        raise ValidationError("esm_loss_batch: empty batch")
    parts = [_components(e.values, e.frame_class, cfg)[0] for e in sequences]
    n = len(parts)
    return EsmLoss(
        sum(p.l_real for p in parts) / n,
        sum(p.l_fake for p in parts) / n,
        sum(p.l_diff for p in parts) / n,
    )
