"""Sparse Dirichlet systems for the walk on a disc with holes.

Unknowns are the lattice points of U(R) = {|z - center| < R} minus a finite
hole set A.  The operator is I - P restricted to the unknowns; steps that
leave the disc contribute to the exit flux, steps into A to per-hole
columns.  Every solve is checked against a max-norm residual bound.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .errors import SolverNotConverged
from .model import LatticePoint, StepLaw

DIRECT_LIMIT = 250_000
RESIDUAL_TOL = 1e-12


class DiscSystem:
    """I - P on U(R) minus ``holes``, with exit and hole fluxes."""

    def __init__(self, law: StepLaw, radius: int, holes, center=(0, 0)):
        self.law = law
        self.radius = int(radius)
        self.center = LatticePoint(*center)
        self.holes = [LatticePoint(*h) for h in holes]
        h = self.radius - 1
        d = np.arange(-h, h + 1)
        X, Y = np.meshgrid(d, d, indexing="ij")
        disc = X ** 2 + Y ** 2 < self.radius ** 2
        live = disc.copy()
        for p in self.holes:
            live[p.x1 - self.center.x1 + h, p.x2 - self.center.x2 + h] = False
        idx = np.full(disc.shape, -1, dtype=np.int64)
        n = int(live.sum())
        idx[live] = np.arange(n)
        self.n = n
        self._h = h
        self._idx = idx
        self._disc = disc
        self.x1 = X[live] + self.center.x1
        self.x2 = Y[live] + self.center.x2
        hole_id = {(p.x1, p.x2): k for k, p in enumerate(self.holes)}

        rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.ones(n)]
        self.exit_flux = np.zeros(n)
        self.hole_flux = np.zeros((n, len(self.holes)))
        lx, ly = X[live], Y[live]
        for (dz, w) in zip(law.steps, law.probs):
            tx, ty = lx + dz[0], ly + dz[1]
            inside = tx ** 2 + ty ** 2 < self.radius ** 2
            self.exit_flux[~inside] += w
            j = np.full(n, -1, dtype=np.int64)
            j[inside] = idx[tx[inside] + h, ty[inside] + h]
            ok = j >= 0
            rows.append(np.arange(n)[ok])
            cols.append(j[ok])
            vals.append(np.full(int(ok.sum()), -w))
            for k in np.flatnonzero(inside & ~ok):
                self.hole_flux[k, hole_id[(int(tx[k]) + self.center.x1, int(ty[k]) + self.center.x2)]] += w
        self.matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        self.matrix.sum_duplicates()
        self._lu = None
        self._amg = None

    def index(self, z) -> int:
        """Unknown index of z, or -1 for holes and points outside the disc."""
        i, j = z[0] - self.center.x1 + self._h, z[1] - self.center.x2 + self._h
        if 0 <= i < self._idx.shape[0] and 0 <= j < self._idx.shape[1]:
            return int(self._idx[i, j])
        return -1

    def in_disc(self, z) -> bool:
        d1, d2 = z[0] - self.center.x1, z[1] - self.center.x2
        return d1 * d1 + d2 * d2 < self.radius ** 2

    def solve(self, rhs: np.ndarray) -> tuple[np.ndarray, float]:
        """Solve (I - P) X = rhs for one or several right-hand sides."""
        B = np.asarray(rhs, dtype=float)
        one = B.ndim == 1
        B2 = B[:, None] if one else B
        if self.n <= DIRECT_LIMIT:
            if self._lu is None:
                self._lu = spl.splu(self.matrix.tocsc())
            X = self._lu.solve(B2)
        else:
            X = np.column_stack([self._iterative(B2[:, k]) for k in range(B2.shape[1])])
        res = float(np.abs(self.matrix @ X - B2).max()) if X.size else 0.0
        if not res <= RESIDUAL_TOL:
            raise SolverNotConverged(f"residual {res:.3e} exceeds {RESIDUAL_TOL:g} (n={self.n})")
        return (X[:, 0] if one else X), res

    def release(self) -> None:
        """Drop the factorization or multigrid hierarchy (solves rebuild it)."""
        self._lu = None
        self._amg = None

    def _iterative(self, b: np.ndarray) -> np.ndarray:
        import pyamg

        if self._amg is None:
            self._amg = pyamg.smoothed_aggregation_solver(self.matrix)
        accel = "cg" if self.law.is_symmetric else "gmres"
        x = self._amg.solve(b, tol=1e-15, accel=accel, maxiter=1000)
        for _ in range(3):
            r = b - self.matrix @ x
            if np.abs(r).max() <= 0.1 * RESIDUAL_TOL:
                break
            x = x + self._amg.solve(r, tol=1e-15, accel=accel, maxiter=1000)
        return x
