"""PCA reduction, linear multi-class SVM scoring, and average score fusion.

The covariance eigen-decomposition uses deterministic cyclic Jacobi
sweeps (tolerance 1e-10), switching to the Gram-matrix dual when there
are fewer samples than dimensions so the rotation count stays small.
SVM training is Pegasos-style seeded stochastic subgradient descent,
one-vs-rest.  Fusion is the per-coordinate arithmetic mean computed with
exact summation, so stream order can never change the result.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, FormatError, ParseError, RankError
from .neural import FeatureVector

JACOBI_TOL = 1e-10
_JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray = field(repr=False)
    components: np.ndarray = field(repr=False)  # (k, d), orthonormal rows
    variance_fractions: np.ndarray = field(repr=False)  # (k,), descending

    @property
    def k(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray = field(repr=False)  # (classes, d)
    biases: np.ndarray = field(repr=False)  # (classes,)
    labels: tuple[str, ...]
    regularization: float

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ScoreVector:
    """Per-class scores ordered by class label."""

    values: np.ndarray = field(repr=False)
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.normalized:
            v = self.values
            if np.any(v < 0) or np.any(v > 1) or abs(float(v.sum()) - 1.0) > 1e-6:
                raise ContractError("normalized scores must lie on the simplex")


def jacobi_eigh(matrix: np.ndarray, tol: float = JACOBI_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns:
        (eigenvalues, eigenvectors): columns of the second array are the
        eigenvectors, unsorted.  Deterministic: fixed sweep order, fixed
        rotation formulas, convergence when the off-diagonal Frobenius
        mass falls below tol relative to the total.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"matrix must be square, got {a.shape}")
    m = a.shape[0]
    v = np.eye(m)
    if m == 1:
        return a.diagonal().copy(), v
    total = np.linalg.norm(a)
    if total == 0.0:
        return np.zeros(m), v
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = math.sqrt(max(0.0, float(np.sum(a**2) - np.sum(a.diagonal() ** 2))))
        if off <= tol * total:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(1.0, theta))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    return a.diagonal().copy(), v


def _as_matrix(samples: Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        mat = np.asarray(samples, dtype=np.float64)
        if mat.ndim != 2:
            raise ContractError(f"sample matrix must be 2D, got shape {mat.shape}")
        return mat
    rows = [np.asarray(getattr(s, "values", s), dtype=np.float64) for s in samples]
    if not rows:
        raise ContractError("no samples given")
    dim = len(rows[0])
    for i, r in enumerate(rows):
        if r.ndim != 1 or len(r) != dim:
            raise ContractError(
                f"sample {i} has length {r.shape}, expected ({dim},)"
            )
    return np.stack(rows)


def pca_fit(
    samples: Sequence[FeatureVector] | np.ndarray,
    target: float | int = 0.95,
) -> PcaModel:
    """Fit PCA on the sample covariance.

    Args:
        samples: n >= 2 vectors of uniform length.
        target: retained-variance fraction in (0, 1], or an integer fixed
            component count.

    Returns:
        PcaModel keeping the smallest k whose cumulative explained
        variance reaches the target (or exactly the fixed k).

    Raises:
        RankError: all samples identical (zero covariance).
        ContractError: fewer than 2 samples, ragged lengths, or an
            unreachable fixed k.
    """
    x = _as_matrix(samples)
    n, d = x.shape
    if n < 2:
        raise ContractError(f"need at least 2 samples, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    if not np.any(centered):
        raise RankError("all samples are identical; covariance has no rank")
    total_var = float(np.sum(centered**2)) / (n - 1)
    if d <= n or d <= 48:
        cov = centered.T @ centered / (n - 1)
        eigvals, eigvecs = jacobi_eigh(cov)
        order = np.argsort(-eigvals, kind="stable")
        eigvals = np.clip(eigvals[order], 0.0, None)
        basis = eigvecs[:, order].T  # rows are components
    else:
        # Dual (Gram) route: eigenvectors of X X^T / (n-1) lift to
        # covariance eigenvectors; covers every nonzero eigenvalue.
        gram = centered @ centered.T / (n - 1)
        eigvals, eigvecs = jacobi_eigh(gram)
        order = np.argsort(-eigvals, kind="stable")
        eigvals = np.clip(eigvals[order], 0.0, None)
        keep = eigvals > eigvals[0] * 1e-12
        eigvals = eigvals[keep]
        u = eigvecs[:, order][:, keep]
        basis = (centered.T @ u / np.sqrt((n - 1) * eigvals)).T
    fractions = eigvals / total_var
    if isinstance(target, (int, np.integer)) and not isinstance(target, bool):
        k = int(target)
        if not 1 <= k <= len(basis):
            raise ContractError(
                f"fixed k={k} unavailable; {len(basis)} components exist"
            )
    else:
        t = float(target)
        if not 0.0 < t <= 1.0:
            raise ContractError(f"variance target must be in (0, 1], got {t}")
        cumulative = np.cumsum(fractions)
        reached = np.nonzero(cumulative >= t - 1e-12)[0]
        k = int(reached[0]) + 1 if len(reached) else len(basis)
    return PcaModel(
        mean=mean,
        components=basis[:k].copy(),
        variance_fractions=fractions[:k].copy(),
    )


def pca_project(model: PcaModel, v: FeatureVector | np.ndarray) -> np.ndarray:
    """Project one vector: (v - mean) @ components^T."""
    vec = np.asarray(getattr(v, "values", v), dtype=np.float64)
    if vec.shape != model.mean.shape:
        raise ContractError(
            f"vector length {vec.shape} does not match model dimension "
            f"{model.mean.shape}"
        )
    return (vec - model.mean) @ model.components.T


def svm_train(
    samples: Sequence[FeatureVector] | np.ndarray,
    labels: Sequence[str],
    regularization: float = 1e-3,
    epochs: int = 20,
    seed: int | Sequence[int] = 0,
) -> SvmModel:
    """One-vs-rest linear SVMs via Pegasos subgradient descent.

    Each class trains on hinge loss with step size 1/(reg * t) for
    iteration t, sampling indices from a generator seeded by (seed,
    class index); identical arguments always produce identical models.
    """
    x = _as_matrix(samples)
    y = list(labels)
    if len(y) != len(x):
        raise ContractError(f"{len(x)} samples but {len(y)} labels")
    if regularization <= 0:
        raise ContractError(f"regularization must be positive, got {regularization}")
    classes = tuple(sorted(set(y)))
    if len(classes) < 2:
        raise ContractError(f"need at least 2 classes, got {classes}")
    n, d = x.shape
    weights = np.zeros((len(classes), d))
    biases = np.zeros(len(classes))
    steps = epochs * n
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    for ci, cls in enumerate(classes):
        sign = np.where(np.asarray(y) == cls, 1.0, -1.0)
        rng = np.random.default_rng(base + [ci])
        picks = rng.integers(0, n, size=steps)
        w = np.zeros(d)
        b = 0.0
        # Pegasos on the augmented vector [w; b], i.e. the bias rides along
        # as a constant-1 feature and decays with the weights.
        for t, i in enumerate(picks, start=1):
            eta = 1.0 / (regularization * t)
            margin = sign[i] * (w @ x[i] + b)
            decay = 1.0 - eta * regularization
            w *= decay
            b *= decay
            if margin < 1.0:
                w += eta * sign[i] * x[i]
                b += eta * sign[i]
        weights[ci] = w
        biases[ci] = b
    return SvmModel(weights, biases, classes, regularization)


def svm_margins(model: SvmModel, v: FeatureVector | np.ndarray) -> np.ndarray:
    vec = np.asarray(getattr(v, "values", v), dtype=np.float64)
    if vec.shape != (model.dim,):
        raise ContractError(
            f"vector length {vec.shape} does not match model dimension {model.dim}"
        )
    return model.weights @ vec + model.biases


def svm_score(model: SvmModel, v: FeatureVector | np.ndarray, normalize: bool = True) -> ScoreVector:
    """Per-class scores: softmax-normalized margins by default, raw otherwise.

    Softmax is monotone, so the argmax always equals the raw-margin argmax.
    """
    margins = svm_margins(model, v)
    if not normalize:
        return ScoreVector(values=margins, normalized=False)
    shifted = np.exp(margins - margins.max())
    return ScoreVector(values=shifted / shifted.sum(), normalized=True)


def fuse_scores(streams: Sequence[ScoreVector]) -> ScoreVector:
    """Elementwise arithmetic mean of per-stream score vectors.

    All inputs must agree on length and normalization state.  Each
    coordinate is averaged with exact (fsum) summation and an all-equal
    short-circuit, making the fusion exactly permutation-invariant and
    exactly idempotent.
    """
    if not streams:
        raise ContractError("cannot fuse an empty stream list")
    length = len(streams[0].values)
    normalized = streams[0].normalized
    for i, s in enumerate(streams):
        if len(s.values) != length:
            raise ContractError(
                f"stream {i} has {len(s.values)} classes, expected {length}"
            )
        if s.normalized != normalized:
            raise ContractError("cannot fuse normalized with unnormalized scores")
    stacked = np.stack([s.values for s in streams])
    out = np.empty(length)
    for j in range(length):
        column = stacked[:, j]
        first = column[0]
        if np.all(column == first):
            out[j] = first
        else:
            out[j] = math.fsum(column) / len(column)
    return ScoreVector(values=out, normalized=normalized)


_MODEL_MAGIC = b"DMM1"


def save_models(path: str | Path, pca: PcaModel, svm: SvmModel) -> None:
    """Write the per-stream model pair as a versioned little-endian binary.

    Layout: magic, u32 version, u32 class count, length-prefixed UTF-8
    labels, f64 regularization, then (rows, cols)-prefixed f32le arrays:
    svm weights, svm biases, pca mean, pca components, pca variance
    fractions.  A load/save cycle reproduces the file byte-for-byte.
    """
    blob = bytearray(_MODEL_MAGIC)
    blob += struct.pack("<I", 1)
    blob += struct.pack("<I", len(svm.labels))
    for label in svm.labels:
        encoded = label.encode()
        blob += struct.pack("<I", len(encoded))
        blob += encoded
    blob += struct.pack("<d", svm.regularization)
    for arr in (
        svm.weights,
        svm.biases,
        pca.mean,
        pca.components,
        pca.variance_fractions,
    ):
        two_d = np.atleast_2d(arr)
        blob += struct.pack("<II", *two_d.shape)
        blob += two_d.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_models(path: str | Path) -> tuple[PcaModel, SvmModel]:
    data = Path(path).read_bytes()
    if data[:4] != _MODEL_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}; expected {_MODEL_MAGIC!r}")
    offset = 4
    version, n_labels = struct.unpack_from("<II", data, offset)
    offset += 8
    if version != 1:
        raise FormatError(f"unsupported model version {version}")
    labels = []
    for _ in range(n_labels):
        (ln,) = struct.unpack_from("<I", data, offset)
        offset += 4
        labels.append(data[offset : offset + ln].decode())
        offset += ln
    (reg,) = struct.unpack_from("<d", data, offset)
    offset += 8
    arrays = []
    for _ in range(5):
        if offset + 8 > len(data):
            raise ParseError(f"truncated model file at byte {offset}")
        rows, cols = struct.unpack_from("<II", data, offset)
        offset += 8
        n = rows * cols
        end = offset + 4 * n
        if end > len(data):
            raise ParseError(f"truncated payload: expected {end} bytes, got {len(data)}")
        arrays.append(
            np.frombuffer(data, dtype="<f4", count=n, offset=offset)
            .reshape(rows, cols)
            .astype(np.float64)
        )
        offset = end
    w, b, mean, comps, fracs = arrays
    svm = SvmModel(w, b.ravel(), tuple(labels), reg)
    pca = PcaModel(mean.ravel(), comps, fracs.ravel())
    return pca, svm
