"""Discretisations used by the solver.

TorusGrid: N x N Fourier collocation grid on the unit torus.  Each axis may be
stretched by the periodic map x = c + s - (a / 2 pi K) sin(2 pi K s), which
keeps a node at c and refines the spacing there by the factor 1 / (1 - a).
With a = 0 the grid is uniform.  The Laplacian is
    sum_i J_i^{-1} d/ds_i (J_i^{-1} d/ds_i),   J_i = dx_i/ds_i,
with spectral derivatives in s; it is self-adjoint for the quadrature weights
J_1 J_2 / N^2, so the discrete integral of a Laplacian vanishes exactly.

RadialGrid: nodes r(s) = sinh(beta s)/sinh(beta) on [0, 1], centred finite
differences of order stencil - 1 (7 points by default, mirrored ghosts at the
origin) and a composite Simpson rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from . import geometry as geo

_WORKERS = 1


def set_threads(n: int):
    global _WORKERS
    _WORKERS = max(1, int(n))


def fd_weights(z, x, m):
    """Finite-difference weights at z on nodes x for derivatives 0..m (Fornberg's recursion)."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 = c2 * c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TorusGrid:
    n: int = 512
    center: tuple = (0.0, 0.0)
    strength: float = 0.0
    clusters: int = 1

    def __post_init__(self):
        if self.n % 2 or self.n < 8:
            raise ValueError("grid size must be even and at least 8")
        if not 0.0 <= self.strength < 1.0:
            raise ValueError("map strength must lie in [0, 1)")

    @cached_property
    def s(self):
        return np.arange(self.n) / self.n

    def _axis(self, c):
        a, K = self.strength, self.clusters
        x = c + self.s - a / (2 * np.pi * K) * np.sin(2 * np.pi * K * self.s)
        J = 1.0 - a * np.cos(2 * np.pi * K * self.s)
        return x - np.floor(x), J

    @cached_property
    def axes(self):
        return self._axis(self.center[0]), self._axis(self.center[1])

    @property
    def J1(self):
        return self.axes[0][1]

    @property
    def J2(self):
        return self.axes[1][1]

    @cached_property
    def points(self):
        (x1, _), (x2, _) = self.axes
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        return np.stack([X1, X2], -1)

    @cached_property
    def weights(self):
        return np.outer(self.J1, self.J2) / self.n**2

    @cached_property
    def _ik(self):
        k = 2 * np.pi * np.arange(self.n // 2 + 1, dtype=float)
        k[-1] = 0.0  # Nyquist mode dropped for odd derivatives
        return 1j * k

    def ds(self, u, axis):
        uh = sfft.rfft(u, axis=axis, workers=_WORKERS)
        shape = [1, 1]
        shape[axis] = -1
        uh *= self._ik.reshape(shape)
        return sfft.irfft(uh, n=self.n, axis=axis, workers=_WORKERS)

    def dx(self, u, axis):
        J = self.J1[:, None] if axis == 0 else self.J2[None, :]
        return self.ds(u, axis) / J

    def gradient(self, u):
        return np.stack([self.dx(u, 0), self.dx(u, 1)], -1)

    def laplacian(self, u, nyquist=False):
        """Product-form Laplacian.  It maps the Nyquist mode of each axis to zero;
        nyquist=True restores its symbol -(pi n)^2 by a rank-one term per axis."""
        J1 = self.J1[:, None]
        J2 = self.J2[None, :]
        out = self.ds(self.ds(u, 0) / J1, 0) / J1 + self.ds(self.ds(u, 1) / J2, 1) / J2
        if nyquist:
            sig = (np.pi * self.n) ** 2
            (e1, t1), (e2, t2) = self._nyq
            out -= sig * np.outer(e1, e1 @ (t1[:, None] * u)) / t1[:, None]
            out -= sig * np.outer(u * t2[None, :] @ e2, e2) / t2[None, :]
        return out

    def integrate(self, f):
        return float(np.sum(f * self.weights))

    def spacing(self, x):
        """Local grid spacing (max over the two axes) at a physical point."""
        si = self.to_index(np.asarray(x, float))
        out = []
        for ax in range(2):
            sval = si[..., ax] / self.n
            J = 1.0 - self.strength * np.cos(2 * np.pi * self.clusters * sval)
            out.append(J / self.n)
        return np.maximum(out[0], out[1])

    def to_index(self, x):
        """Fractional node index of physical points (inverse of the stretching map)."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        a, K = self.strength, self.clusters
        for ax in range(2):
            t = x[..., ax] - self.center[ax]
            t = t - np.floor(t)
            s = t.copy()
            if a > 0:
                for _ in range(60):
                    f = s - a / (2 * np.pi * K) * np.sin(2 * np.pi * K * s) - t
                    s = s - f / (1.0 - a * np.cos(2 * np.pi * K * s))
            out[..., ax] = s * self.n
        return out

    def interpolate(self, u, x, order=5):
        """Spline interpolation of a grid field at physical points (periodic)."""
        idx = self.to_index(x)
        coords = np.moveaxis(idx, -1, 0).reshape(2, -1)
        vals = ndimage.map_coordinates(u, coords, order=order, mode="grid-wrap")
        return vals.reshape(idx.shape[:-1])

    def nearest_node(self, x):
        idx = np.rint(self.to_index(np.asarray(x, float))).astype(int) % self.n
        return int(idx[0]), int(idx[1])

    @cached_property
    def _nyq(self):
        """Per axis: unit null vector J^{1/2} (-1)^i of the symmetrised 1-D operator, and J^{1/2}."""
        alt = (-1.0) ** np.arange(self.n)
        out = []
        for J in (self.J1, self.J2):
            t = np.sqrt(J)
            e = t * alt
            out.append((e / np.linalg.norm(e), t))
        return out

    def _eig_factors(self, nyquist):
        n = self.n
        eye = np.eye(n)
        k = self._ik.imag.copy()
        D = sfft.irfft(sfft.rfft(eye, axis=0) * (1j * k)[:, None], n=n, axis=0)
        out = []
        for J, (e, _) in zip((self.J1, self.J2), self._nyq):
            isq = 1.0 / np.sqrt(J)
            S = (isq[:, None] * D) @ ((1.0 / J)[:, None] * D * isq[None, :])
            S = 0.5 * (S + S.T)
            if nyquist:
                S -= (np.pi * n) ** 2 * np.outer(e, e)
            lam, V = np.linalg.eigh(S)
            out.append((lam, V, np.sqrt(J)))
        return out

    @cached_property
    def _eig(self):
        """Symmetric factors of the 1-D operators J^{-1} D J^{-1} D for the preconditioner."""
        return self._eig_factors(False)

    @cached_property
    def _eig_nyq(self):
        return self._eig_factors(True)

    def solve_shifted(self, b, shift, nyquist=False):
        """Solve (Laplacian - shift) u = b exactly (shift > 0) by separable eigen-decomposition."""
        (l1, V1, t1), (l2, V2, t2) = self._eig_nyq if nyquist else self._eig
        B = V1.T @ (t1[:, None] * b * t2[None, :]) @ V2
        B /= l1[:, None] + l2[None, :] - shift
        return (V1 @ B @ V2.T) / (t1[:, None] * t2[None, :])

    def fd_laplacian(self, order=6):
        """Sparse finite-difference Laplacian J^{-2} u_ss - J^{-3} J_s u_s (periodic, given order).

        Used as a preconditioner/reference operator; its Nyquist symbol is negative,
        unlike the product-form spectral operator.
        """
        import scipy.sparse as sp

        n, half = self.n, order // 2
        offs = np.arange(-half, half + 1)
        c = fd_weights(0.0, offs.astype(float), 2) * np.array([1.0, n, n * n])
        mats = []
        for ax, J in enumerate((self.J1, self.J2)):
            a, K = self.strength, self.clusters
            Js = 2 * np.pi * K * a * np.sin(2 * np.pi * K * self.s)
            D1 = _circulant(n, offs, c[:, 1])
            D2 = _circulant(n, offs, c[:, 2])
            mats.append(sp.diags(J**-2) @ D2 - sp.diags(Js * J**-3) @ D1)
        eye = sp.identity(n, format="csr")
        return (sp.kron(mats[0], eye) + sp.kron(eye, mats[1])).tocsc()

    def describe(self):
        return {"n": self.n, "center": [float(c) for c in self.center],
                "map_strength": self.strength, "clusters": self.clusters}


def _circulant(n, offs, w):
    import scipy.sparse as sp

    rows = np.repeat(np.arange(n), len(offs))
    cols = (rows.reshape(n, -1) + offs[None, :]) % n
    return sp.csr_matrix((np.tile(w, n), (rows, cols.ravel())), shape=(n, n))


def torus_grid_for(q, n, strength):
    """Stretched grid whose refinement sits on the concentration points when possible."""
    q = np.atleast_2d(np.asarray(q, float))
    c = tuple(float(v) for v in q[0])
    K = 1
    if len(q) > 1 and strength > 0:
        for cand in range(2, 9):
            ok = True
            for p in q[1:]:
                for ax in range(2):
                    t = (p[ax] - c[ax]) * cand
                    if abs(t - round(t)) > 1e-12:
                        ok = False
            if ok:
                K = cand
                break
    return TorusGrid(n, c, strength, K)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialGrid:
    n: int = 400
    beta: float = 4.0
    stencil: int = 7

    def __post_init__(self):
        if self.n % 4:
            raise ValueError("radial grid size must be a multiple of 4 (composite Boole rule)")

    @cached_property
    def s(self):
        return np.arange(self.n + 1) / self.n

    @cached_property
    def r(self):
        if self.beta == 0:
            return self.s.copy()
        return np.sinh(self.beta * self.s) / np.sinh(self.beta)

    @cached_property
    def dr_ds(self):
        if self.beta == 0:
            return np.ones_like(self.s)
        return self.beta * np.cosh(self.beta * self.s) / np.sinh(self.beta)

    @cached_property
    def weights(self):
        """Weights for the area integral 2 pi int_0^1 f r dr (sixth order, like the stencils)."""
        w = np.zeros(self.n + 1)
        for i in range(0, self.n, 4):
            w[i:i + 5] += (7.0, 32.0, 12.0, 32.0, 7.0)
        w *= 2.0 / (45 * self.n)
        return 2 * np.pi * w * self.r * self.dr_ds

    @cached_property
    def operators(self):
        """Dense matrices for d/dr, d^2/dr^2 and the radial Laplacian on nodes 0..n-1."""
        n, r = self.n, self.r
        half = self.stencil // 2
        # node list extended with mirrored ghosts r_{-k} = -r_k
        ext = np.concatenate([-r[half:0:-1], r])
        off = half
        D1 = np.zeros((n, n + 1))
        D2 = np.zeros((n, n + 1))
        L = np.zeros((n, n + 1))
        for i in range(n):
            lo = i - half
            hi = i + half
            if hi > n:
                hi = n
                lo = n - self.stencil  # one extra node keeps the order off-centre
            idx = np.arange(lo, hi + 1)
            c = fd_weights(r[i], ext[idx + off], 2)
            cols = np.abs(idx)
            for col, w1, w2 in zip(cols, c[:, 1], c[:, 2]):
                D1[i, col] += w1
                D2[i, col] += w2
            if i == 0:
                L[i] = 2 * D2[i]
            else:
                L[i] = D2[i] + D1[i] / r[i]
        return D1, D2, L

    @property
    def laplacian(self):
        return self.operators[2]

    def integrate(self, f):
        return float(np.sum(self.weights * f))

    def describe(self):
        return {"n_r": self.n, "beta": self.beta}


def beta_for_core(core_radius, target_s=0.25, max_beta=12.0):
    """Map parameter placing the given radius near s = target_s."""
    if core_radius >= target_s:
        return 0.0
    lo, hi = 1e-6, max_beta
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sinh(mid * target_s) / np.sinh(mid) > core_radius:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chunked(fn, pts, chunk=16384):
    """Apply a pointwise evaluator to a large (..., 2) array in chunks."""
    pts = np.asarray(pts, float)
    flat = pts.reshape(-1, 2)
    out = None
    for i in range(0, len(flat), chunk):
        v = np.asarray(fn(flat[i:i + chunk]))
        if out is None:
            out = np.empty((len(flat),) + v.shape[1:], dtype=v.dtype)
        out[i:i + chunk] = v
    return out.reshape(pts.shape[:-1] + out.shape[1:])


def min_image_disp(x, y):
    return geo.min_image(np.asarray(x, float) - np.asarray(y, float))
