"""Candidate patches, a desk-scale vehicle classifier and high-confidence selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .boxes import Hbb, iou
from .fusion import rgb_to_hsv
from .raster_io import RgbRaster

__all__ = [
    "PATCH_SIZE",
    "BaselineLinear",
    "Candidate",
    "Classifier",
    "ExternalScores",
    "LabeledSample",
    "Patch",
    "SelectionResult",
    "augment",
    "cross_entropy",
    "extract_patch",
    "featurize",
    "fit_logistic",
    "load_external_scores",
    "load_manual_labels",
    "logistic_loss_and_grad",
    "select_high_quality",
    "train_baseline",
    "update_training_set",
]

PATCH_SIZE = 60
PROB_CLAMP = 1e-12
N_FEATURES = 40

ORIGINS = ("reference-set", "detected", "manual", "selected")


@dataclass(frozen=True, eq=False)
class Patch:
    pixels: np.ndarray
    source_box: Hbb | None = None
    source_image: str = ""
    box_id: str | None = None

    def __post_init__(self):
        if self.pixels.shape != (PATCH_SIZE, PATCH_SIZE, 3):
            raise ValueError(f"patch must be {PATCH_SIZE}x{PATCH_SIZE}x3, got {self.pixels.shape}")


@dataclass(frozen=True)
class LabeledSample:
    patch: Patch
    label: int
    origin: str = "reference-set"
    score: float = 1.0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")


@dataclass(frozen=True)
class Candidate:
    """A box with its patch; ``box.score`` is set once the candidate is scored."""

    box: Hbb
    patch: Patch


@dataclass(frozen=True)
class SelectionResult:
    selected: list[Candidate]
    rejected: list[Candidate]
    threshold: float


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------


def _sample_axis(start: float, length: float, lo: int, hi: int, n: int):
    """Bilinear sample positions for ``n`` output pixels over ``[start, start+length)``.

    Returns lower index, upper index and fractional weight, clamped to the
    pixel range ``lo..hi``.
    """
    u = start + (np.arange(n) + 0.5) * (length / n)
    u = np.clip(u, lo, hi)
    i0 = np.floor(u).astype(np.int64)
    i0 = np.minimum(i0, hi)
    i1 = np.minimum(i0 + 1, hi)
    t = u - i0
    return i0, i1, t


def extract_patch(img: RgbRaster, box: Hbb, source_image: str = "", box_id: str | None = None) -> Patch:
    """Bilinearly rescale the (clipped) box crop to 60x60."""
    clipped = box.clip(img.width, img.height)
    if clipped is None:
        raise ValueError(f"box {box} lies outside the {img.width}x{img.height} image")
    c0, r0, c1, r1 = clipped.pixel_extent()
    c0, r0 = max(c0, 0), max(r0, 0)
    c1, r1 = min(max(c1, c0), img.width - 1), min(max(r1, r0), img.height - 1)
    # pixel centers sit at integer coordinates, so the box edges are sampled directly
    x0, y0 = clipped.x0, clipped.y0
    xi0, xi1, tx = _sample_axis(x0, clipped.w, c0, c1, PATCH_SIZE)
    yi0, yi1, ty = _sample_axis(y0, clipped.h, r0, r1, PATCH_SIZE)
    px = img.pixels.astype(np.float64)
    top = px[yi0][:, xi0] * (1 - tx)[None, :, None] + px[yi0][:, xi1] * tx[None, :, None]
    bot = px[yi1][:, xi0] * (1 - tx)[None, :, None] + px[yi1][:, xi1] * tx[None, :, None]
    out = top * (1 - ty)[:, None, None] + bot * ty[:, None, None]
    out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return Patch(out, source_box=box, source_image=source_image, box_id=box_id)


def augment(p: Patch) -> list[Patch]:
    """Rotations by 0, 90, 180 and 270 degrees (counter-clockwise)."""
    return [replace(p, pixels=np.ascontiguousarray(np.rot90(p.pixels, k))) for k in range(4)]


def _histogram(values: np.ndarray, bins: int, top: float) -> np.ndarray:
    idx = np.minimum((values / top * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx.ravel(), minlength=bins).astype(np.float64)
    return hist / hist.sum()


def featurize(p: Patch) -> np.ndarray:
    """40 features: 8-bin H, S, V histograms and a 16-bin gradient-orientation histogram.

    Each block is L1-normalized; the gradient block is all zeros for a patch
    without luminance gradients.
    """
    hsv = rgb_to_hsv(p.pixels)
    h_hist = _histogram(hsv[..., 0], 8, 360.0)
    s_hist = _histogram(hsv[..., 1], 8, 1.0)
    v_hist = _histogram(hsv[..., 2], 8, 1.0)
    lum = p.pixels.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    idx = np.minimum((ang / (2 * np.pi) * 16).astype(np.int64), 15)
    g_hist = np.bincount(idx.ravel(), weights=mag.ravel(), minlength=16)
    total = g_hist.sum()
    if total > 1e-12:
        g_hist = g_hist / total
    else:
        g_hist = np.zeros(16)
    return np.concatenate([h_hist, s_hist, v_hist, g_hist])


# ---------------------------------------------------------------------------
# Loss and training
# ---------------------------------------------------------------------------


def cross_entropy(probs: Sequence[float], labels: Sequence[int]) -> float:
    """Mean binary cross-entropy; probabilities are clamped to [1e-12, 1 - 1e-12]."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} probabilities vs {y.shape} labels")
    if p.size == 0:
        raise ValueError("cross_entropy of an empty batch")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_loss_and_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy of ``sigmoid(X @ w + b)`` and its gradient; ``params = [w..., b]``."""
    w, b = params[:-1], params[-1]
    p = _sigmoid(X @ w + b)
    loss = cross_entropy(p, y)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    # d/dz of clamped loss: zero where the clamp is active
    active = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    r = np.where(active, pc - y, 0.0) / len(y)
    grad = np.concatenate([X.T @ r, [r.sum()]])
    return loss, grad


def fit_logistic(X, y, lr: float, epochs: int, seed: int = 0):
    """Full-batch gradient descent; returns ``(params, loss_history)``.

    ``loss_history[i]`` is the loss before update ``i``; the last entry is the
    final loss.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lr < 0:
        raise ValueError("lr must be >= 0")
    rng = np.random.default_rng(seed)
    params = rng.normal(0.0, 0.01, X.shape[1] + 1)
    history = []
    for _ in range(epochs):
        loss, grad = logistic_loss_and_grad(params, X, y)
        history.append(loss)
        params = params - lr * grad
    history.append(logistic_loss_and_grad(params, X, y)[0])
    return params, history


class Classifier(Protocol):
    def score(self, patch: Patch) -> float: ...


@dataclass(frozen=True, eq=False)
class BaselineLinear:
    """Logistic model on :func:`featurize` output; ``weights[-1]`` is the bias."""

    weights: np.ndarray
    loss_history: tuple[float, ...] = field(default=(), repr=False)

    def probability(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        return _sigmoid(f @ self.weights[:-1] + self.weights[-1])

    def score(self, patch: Patch) -> float:
        return float(self.probability(featurize(patch)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"weights": [float(v) for v in self.weights]}, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BaselineLinear":
        data = json.loads(Path(path).read_text())
        weights = np.asarray(data["weights"], dtype=np.float64)
        if weights.shape != (N_FEATURES + 1,):
            raise ValueError(f"expected {N_FEATURES + 1} weights, found {weights.shape[0]}")
        return cls(weights)


@dataclass(frozen=True)
class ExternalScores:
    """Scores produced elsewhere (e.g. by a CNN), looked up by ``Patch.box_id``."""

    scores: Mapping[str, float]

    def __post_init__(self):
        for k, v in self.scores.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"score for {k!r} outside [0, 1]: {v}")

    def score(self, patch: Patch) -> float:
        if patch.box_id is None or patch.box_id not in self.scores:
            raise KeyError(f"no external score for box {patch.box_id!r}")
        return float(self.scores[patch.box_id])


def train_baseline(
    samples: Sequence[LabeledSample],
    lr: float = 1.0,
    epochs: int = 500,
    seed: int = 0,
    augment_rotations: bool = True,
) -> BaselineLinear:
    """Fit :class:`BaselineLinear` by gradient descent on the cross-entropy.

    Each sample contributes its four rotations unless ``augment_rotations`` is
    False.
    """
    labels = {s.label for s in samples}
    if labels != {0, 1}:
        raise ValueError("training needs both vehicle and non-vehicle samples")
    if lr < 0:
        raise ValueError("lr must be >= 0")
    X, y = [], []
    for s in samples:
        patches = augment(s.patch) if augment_rotations else [s.patch]
        for p in patches:
            X.append(featurize(p))
            y.append(s.label)
    params, history = fit_logistic(np.array(X), np.array(y), lr, epochs, seed)
    return BaselineLinear(params, tuple(history))


# ---------------------------------------------------------------------------
# Selection loop
# ---------------------------------------------------------------------------


def select_high_quality(candidates: Iterable[Candidate], clf: Classifier, tau: float) -> SelectionResult:
    """Split candidates by ``score >= tau``; order within each side is preserved."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    selected, rejected = [], []
    for c in candidates:
        s = float(clf.score(c.patch))
        scored = Candidate(c.box.with_score(s), c.patch)
        (selected if s >= tau else rejected).append(scored)
    return SelectionResult(selected, rejected, tau)


def update_training_set(base: Sequence[LabeledSample], selected: SelectionResult, dup_iou: float = 0.9) -> list[LabeledSample]:
    """Add selected candidates as positives, dropping duplicates of existing samples.

    Two samples are duplicates when they come from the same image and their
    boxes overlap with IoU above ``dup_iou``; the higher-scoring one survives
    (base samples score 1.0).
    """
    out = list(base)
    for c in selected.selected:
        score = c.box.score if c.box.score is not None else 0.0
        new = LabeledSample(c.patch, 1, "selected", score)
        clash = None
        for i, s in enumerate(out):
            if (
                s.patch.source_image == c.patch.source_image
                and s.patch.source_box is not None
                and iou(s.patch.source_box, c.box) > dup_iou
            ):
                clash = i
                break
        if clash is None:
            out.append(new)
        elif out[clash].score < score:
            out[clash] = new
    return out


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def load_external_scores(path: str | Path) -> ExternalScores:
    """Parse ``<box-id> <probability>`` lines."""
    scores = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected '<box-id> <probability>'")
        try:
            prob = float(parts[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad probability {parts[1]!r}") from None
        if not 0.0 <= prob <= 1.0:
            raise ValueError(f"{path}:{lineno}: probability {prob} outside [0, 1]")
        scores[parts[0]] = prob
    return ExternalScores(scores)


def load_manual_labels(path: str | Path) -> list[tuple[str, int, Hbb]]:
    """Parse ``<image-id> <label> <x_c> <y_c> <w> <h>`` lines (label 0/1 or a name)."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 fields, found {len(parts)}")
        image_id, lab = parts[0], parts[1]
        if lab in ("1", "vehicle"):
            label = 1
        elif lab in ("0", "non-vehicle", "background"):
            label = 0
        else:
            raise ValueError(f"{path}:{lineno}: unknown label {lab!r}")
        try:
            x, y, w, h = (float(v) for v in parts[2:])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric box") from None
        if w <= 0 or h <= 0:
            raise ValueError(f"{path}:{lineno}: box dimensions must be positive")
        out.append((image_id, label, Hbb(x, y, w, h, label="vehicle" if label else "non-vehicle")))
    return out


def save_manual_labels(entries: Iterable[tuple[str, int, Hbb]], path: str | Path) -> None:
    lines = [f"{img} {lab} {b.x_c!r} {b.y_c!r} {b.w!r} {b.h!r}" for img, lab, b in entries]
    Path(path).write_text("".join(line + "\n" for line in lines))
