"""Affinity construction plus the closed-form oracle and spectral baseline.

Two affinities drive training: the classifier affinity (Gram matrix of
l2-normalized prediction rows) and the subspace affinity (symmetrized
absolute coefficients, row-normalized by each row's largest off-diagonal
entry). The ridge self-expression solver and spectral clustering here are
validation tools only; the training loop never calls them.
"""

from __future__ import annotations

import numpy as np

from .rng import Xorshift64Star


def class_affinity(predictions: np.ndarray) -> np.ndarray:
    """Gram matrix of prediction rows; entries in [0, 1], diagonal exactly 1.

    Rows must be l2-normalized with non-negative entries (softmax output
    after row normalization). Rounding overshoot beyond 1 is clipped, but
    only within 1e-12.
    """
    nu = np.asarray(predictions, dtype=np.float64)
    if nu.ndim != 2:
        raise ValueError(f"predictions must be 2-d (n, k), got shape {nu.shape}")
    if (nu < 0).any():
        raise ValueError("predictions must be non-negative")
    norms = np.sqrt((nu * nu).sum(axis=1))
    worst = float(np.abs(norms - 1.0).max())
    if worst > 1e-9:
        raise ValueError(f"prediction rows are not l2-normalized (max deviation {worst:.3e})")
    a = nu @ nu.T
    overshoot = float(a.max()) - 1.0
    if overshoot > 1e-12:
        raise ValueError(f"affinity exceeds 1 by {overshoot:.3e}, beyond rounding tolerance")
    a = np.clip(a, 0.0, 1.0)
    np.fill_diagonal(a, 1.0)
    return a


DUST_TOLERANCE = 1e-15


def subspace_row_scales(coeffs: np.ndarray) -> np.ndarray:
    """Per-row normalizers 1/max|off-diagonal| of the symmetrized coefficients.

    Rows whose off-diagonal entries are all below 1e-15 scale to zero rather
    than amplifying numerical dust.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    s = (np.abs(c) + np.abs(c.T)) / 2.0
    row_max = s.max(axis=1)  # diagonal is zero, so this is the off-diagonal max
    return np.where(row_max > DUST_TOLERANCE, 1.0 / np.where(row_max > 0, row_max, 1.0), 0.0)


def _check_coeffs(coeffs: np.ndarray) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"coefficient matrix must be square, got shape {c.shape}")
    if np.count_nonzero(np.diag(c)):
        raise ValueError("coefficient matrix diagonal is not zero; project before use")
    return c


def subspace_affinity(coeffs: np.ndarray) -> np.ndarray:
    """Symmetrize |coeffs|, divide each row by its largest entry, diagonal 1.

    All-zero rows stay zero off the diagonal. The row normalization makes
    the result scale-invariant in the coefficients but not symmetric in
    general (rows own their normalizers).
    """
    c = _check_coeffs(coeffs)
    s = (np.abs(c) + np.abs(c.T)) / 2.0
    a = s * subspace_row_scales(c)[:, None]
    np.fill_diagonal(a, 1.0)
    return a


def ridge_self_expression(latent: np.ndarray, lambda1: float,
                          project_diagonal: bool = True) -> np.ndarray:
    """Closed-form minimizer of ||C||_F^2 + (lambda1/2)||Z - CZ||_F^2.

    With Gram matrix G = Z Z^T the solution is G (G + (2/lambda1) I)^{-1}.
    Used as a test oracle and baseline only, never inside the training loop.
    The diagonal is zeroed by projection afterwards (same projection the
    trained layer uses) unless ``project_diagonal`` is False.
    """
    z = np.asarray(latent, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError(f"latent must be (n >= 2, d), got shape {z.shape}")
    if lambda1 <= 0:
        raise ValueError(f"lambda1 must be > 0, got {lambda1}")
    n = z.shape[0]
    if n > 5000:
        raise ValueError(f"dense solve rejected for n={n} > 5000")
    gram = z @ z.T
    coeffs = np.linalg.solve(gram + (2.0 / lambda1) * np.eye(n), gram)
    if project_diagonal:
        np.fill_diagonal(coeffs, 0.0)
    return coeffs


# ---------------------------------------------------------------------------
# spectral clustering baseline (normalized Laplacian embedding + k-means)
# ---------------------------------------------------------------------------

def kmeans(points: np.ndarray, k: int, seed: int = 0, restarts: int = 10,
           max_iter: int = 300) -> np.ndarray:
    """Seeded multi-restart k-means with k-means++ initialization."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"kmeans needs 1 <= k <= n, got k={k}, n={n}")
    rng = Xorshift64Star(seed)
    sq_norms = (x * x).sum(axis=1)
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = _kmeans_pp_init(x, k, rng, sq_norms)
        labels = None
        for _ in range(max_iter):
            d2 = sq_norms[:, None] - 2.0 * (x @ centers.T) + (centers * centers).sum(axis=1)[None, :]
            new_labels = d2.argmin(axis=1)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                members = labels == c
                if members.any():
                    centers[c] = x[members].mean(axis=0)
                else:  # re-seed an empty cluster at the farthest point
                    centers[c] = x[d2.min(axis=1).argmax()]
        d2 = sq_norms[:, None] - 2.0 * (x @ centers.T) + (centers * centers).sum(axis=1)[None, :]
        inertia = float(np.maximum(d2.min(axis=1), 0.0).sum())
        if inertia < best_inertia:
            best_inertia, best_labels = inertia, labels.copy()
    return best_labels.astype(np.int64)


def _kmeans_pp_init(x, k, rng, sq_norms):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.below(n)]
    d2 = np.maximum(sq_norms - 2.0 * (x @ centers[0]) + (centers[0] * centers[0]).sum(), 0.0)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = x[rng.below(n)]
        else:
            r = rng.uniform() * total
            centers[c] = x[int(np.searchsorted(np.cumsum(d2), r, side="right").clip(0, n - 1))]
        d2 = np.minimum(
            d2, np.maximum(sq_norms - 2.0 * (x @ centers[c]) + (centers[c] * centers[c]).sum(), 0.0))
    return centers


def spectral_cluster(affinity_matrix: np.ndarray, k: int, seed: int = 0,
                     restarts: int = 10) -> np.ndarray:
    """Normalized-Laplacian spectral clustering.

    Embeds points by the k smallest eigenvectors of I - D^{-1/2} A D^{-1/2}
    (equivalently the k largest of the normalized affinity), row-normalizes,
    and runs seeded multi-restart k-means. Zero-degree nodes embed at the
    origin and land with the nearest centroid.
    """
    a = np.asarray(affinity_matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"affinity must be square, got shape {a.shape}")
    n = a.shape[0]
    if k > n:
        raise ValueError(f"cannot cut {n} points into k={k} clusters")
    if (a < 0).any():
        raise ValueError("affinity must be non-negative")
    if float(np.abs(a - a.T).max()) > 1e-10:
        raise ValueError("affinity must be symmetric")
    deg = a.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    normalized = a * inv_sqrt[:, None] * inv_sqrt[None, :]
    normalized = (normalized + normalized.T) / 2.0  # keep eigh input exactly symmetric
    _, vecs = np.linalg.eigh(normalized)
    embedding = vecs[:, -k:]
    row_norms = np.sqrt((embedding * embedding).sum(axis=1, keepdims=True))
    embedding = np.where(row_norms > 1e-30, embedding / np.where(row_norms > 0, row_norms, 1.0), 0.0)
    return kmeans(embedding, k, seed=seed, restarts=restarts)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def affinity_to_csv(a: np.ndarray, path) -> None:
    with open(path, "w") as f:
        for row in np.asarray(a, dtype=np.float64):
            f.write(",".join(repr(float(v)) for v in row))
            f.write("\n")


def affinity_to_pgm(a: np.ndarray, path) -> None:
    """8-bit binary PGM heatmap, pixel = round(255 * value)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"affinity must be 2-d, got shape {arr.shape}")
    pixels = np.clip(np.rint(255.0 * arr), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
