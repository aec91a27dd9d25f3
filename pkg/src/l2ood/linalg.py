"""Dense float64 linear algebra and seeded random generation.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every
public function returns a fresh array and never mutates its inputs.

The random stream is numpy's PCG64 bit generator (O'Neill's permuted
congruential generator, 128-bit LCG state with an XSL-RR output function),
seeded through ``numpy.random.SeedSequence``. PCG64's raw output is
platform-independent; ``tests/test_linalg.py`` pins golden outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotSymmetricError, ShapeError

EPS = float(np.finfo(np.float64).eps)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_l2_norms(a) -> np.ndarray:
    a = as_matrix(a)
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def frobenius_norm(a) -> float:
    a = as_matrix(a)
    return float(np.sqrt(np.sum(a * a)))


def _check_symmetric(a: np.ndarray, atol: float) -> None:
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if a.size and float(np.max(np.abs(a - a.T))) > atol * scale:
        raise NotSymmetricError("matrix is not symmetric within tolerance")


def sym_eig(a, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted in
    descending order and eigenvectors stored as columns, so that
    ``a ~= V @ diag(lam) @ V.T``.
    """
    a = as_matrix(a).copy()
    _check_symmetric(a, 1e-10)
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    total = float(np.sqrt(np.sum(a * a)))
    if n == 0 or total == 0.0:
        return np.zeros(n), v

    for _ in range(max_sweeps):
        off = float(np.sqrt(np.sum((a - np.diag(np.diag(a))) ** 2)))
        if off <= EPS * total:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:  # theta**2 would overflow
                    t = 0.5 / theta
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    lam = np.diag(a).copy()
    order = np.argsort(-lam, kind="stable")
    return lam[order], v[:, order]


def pinv_psd(a, tol_factor: float = EPS) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a symmetric positive semi-definite matrix.

    Eigenvalues at or below ``tol_factor * dim * lambda_max`` are treated as
    zero. Slightly negative eigenvalues from roundoff fall under the same cut.
    """
    lam, v = sym_eig(a)
    n = lam.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    lam_max = float(lam[0])
    tol = tol_factor * n * lam_max
    inv = np.zeros_like(lam)
    keep = lam > tol
    inv[keep] = 1.0 / lam[keep]
    out = (v * inv) @ v.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class RngState:
    """Snapshot of a PCG64 stream: the seed it came from plus its raw state."""

    seed: int
    stream: int
    state: int
    inc: int
    has_uint32: int
    uinteger: int


class Rng:
    """Seeded PCG64 stream. ``stream`` selects an independent child sequence."""

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,) if stream else ())
        self._bitgen = np.random.PCG64(ss)
        self.gen = np.random.Generator(self._bitgen)

    def snapshot(self) -> RngState:
        st = self._bitgen.state
        return RngState(
            seed=self.seed,
            stream=self.stream,
            state=int(st["state"]["state"]),
            inc=int(st["state"]["inc"]),
            has_uint32=int(st["has_uint32"]),
            uinteger=int(st["uinteger"]),
        )

    @classmethod
    def restore(cls, snap: RngState) -> "Rng":
        rng = cls(snap.seed, snap.stream)
        rng._bitgen.state = {
            "bit_generator": "PCG64",
            "state": {"state": snap.state, "inc": snap.inc},
            "has_uint32": snap.has_uint32,
            "uinteger": snap.uinteger,
        }
        return rng

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self.gen.standard_normal(size) * scale

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def uint64(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n)
