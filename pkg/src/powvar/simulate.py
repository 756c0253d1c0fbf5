"""Sample-path ensembles: exact Gaussian paths and discretised martingale Volterra integrals."""
from __future__ import annotations

import hashlib
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .covariance import CovarianceModel
from .errors import AlignmentError, DomainError, NotPSDError, SimulationError
from .kernels import DriverSpec, KernelSpec, eval_kernel

MAGIC = b"PVAR1"
_HEADER = struct.Struct("<5sddqqQ16s")
# paths per matrix product; fixed so results never depend on the worker count
CHUNK = 256


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T + epsilon_max] with ``n`` points."""

    T: float
    epsilon_max: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise DomainError("a time grid needs at least 2 points")
        if self.T <= 0 or self.epsilon_max < 0:
            raise DomainError("T must be positive and epsilon_max non-negative")
        self.lag(self.T)
        if self.epsilon_max > 0:
            self.lag(self.epsilon_max)

    @classmethod
    def from_step(cls, T, epsilon_max, step):
        n = (T + epsilon_max) / step
        if abs(n - round(n)) > 1e-9 * max(n, 1.0):
            raise AlignmentError(f"T + epsilon_max = {T + epsilon_max} is not a multiple of step {step}")
        return cls(T, epsilon_max, int(round(n)) + 1)

    @property
    def step(self):
        return (self.T + self.epsilon_max) / (self.n - 1)

    @property
    def times(self):
        return np.arange(self.n) * self.step

    @property
    def n_T(self):
        """Index of the grid point at T."""
        return self.lag(self.T)

    def lag(self, eps):
        """Integer k with eps = k * step; AlignmentError otherwise."""
        k = eps / self.step
        kr = int(round(k))
        if kr < 1 or abs(k - kr) > 1e-9 * max(k, 1.0):
            raise AlignmentError(f"eps={eps!r} is not a positive integer multiple of step {self.step!r}")
        return kr


@dataclass
class PathEnsemble:
    grid: TimeGrid
    values: np.ndarray
    seed: int
    model_id: str

    @property
    def n_paths(self):
        return self.values.shape[0]

    def save(self, path):
        """Write the flat binary format: header then row-major little-endian float64."""
        header = _HEADER.pack(MAGIC, self.grid.T, self.grid.epsilon_max, self.grid.n,
                              self.n_paths, self.seed & (2**64 - 1), self.model_id.encode()[:16].ljust(16))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        magic, T, eps_max, n, n_paths, seed, digest = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a PVAR1 ensemble file")
        values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if values.size != n * n_paths:
            raise ValueError(f"{path}: truncated payload")
        return cls(TimeGrid(T, eps_max, n), values.reshape(n_paths, n).astype(float),
                   seed, digest.rstrip(b" ").decode())


def path_generator(seed, path_index, stream=0):
    """Counter-based stream for one path: Philox keyed by (seed, path index).

    ``stream`` offsets the counter's top word, giving disjoint substreams.
    """
    key = (int(seed) & (2**64 - 1)) | (int(path_index) << 64)
    if stream == 0:
        return np.random.Generator(np.random.Philox(key=key))
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(stream)]))


def _refine_levels(inner_refine):
    """Split inner_refine into base * 2**levels with base >= 4 as large as needed."""
    base, levels = int(inner_refine), 0
    while base % 2 == 0 and base // 2 >= 4:
        base //= 2
        levels += 1
    return base, levels


def brownian_increments(seed, path_index, n_coarse, inner_refine, d):
    """Brownian increments on n_coarse * inner_refine cells of width d.

    The base level draws from substream 0; each doubling splits every
    increment with a Brownian bridge using the next substream. Doubling
    inner_refine therefore refines the same Brownian path.
    """
    base, levels = _refine_levels(inner_refine)
    width = d * 2**levels
    dw = path_generator(seed, path_index).standard_normal(n_coarse * base) * math.sqrt(width)
    for lvl in range(1, levels + 1):
        z = path_generator(seed, path_index, lvl).standard_normal(dw.size)
        width /= 2
        half = 0.5 * dw
        jitter = z * math.sqrt(width / 2)
        dw = np.stack([half + jitter, half - jitter], axis=-1).ravel()
    return dw


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get("POWVAR_THREADS", "1") or 1)
    return max(1, workers)


def _run_chunks(n_paths, fn, workers):
    starts = list(range(0, n_paths, CHUNK))
    if _workers(workers) == 1 or len(starts) == 1:
        return [fn(s) for s in starts]
    with ThreadPoolExecutor(max_workers=_workers(workers)) as pool:
        return list(pool.map(fn, starts))


def _factor(cov):
    n = cov.shape[0]
    scale = np.trace(cov) / n
    eta = 1e-12
    for _ in range(4):
        try:
            return linalg.cholesky(cov + eta * scale * np.eye(n), lower=True)
        except linalg.LinAlgError:
            eta *= 10
    worst = float(linalg.eigvalsh(cov, subset_by_index=[0, 0])[0])
    raise NotPSDError(f"covariance matrix is not PSD (smallest eigenvalue {worst:.3e})", worst)


def simulate_gaussian(model: CovarianceModel, grid: TimeGrid, n_paths, seed, workers=None):
    """Exact joint-Gaussian paths from the covariance matrix on the grid."""
    if n_paths < 1:
        raise DomainError("n_paths must be positive")
    times = grid.times[1:]
    chol = _factor(model.matrix(times))
    dim = times.size

    def chunk(start):
        stop = min(start + CHUNK, n_paths)
        z = np.stack([path_generator(seed, p).standard_normal(dim) for p in range(start, stop)])
        return z @ chol.T

    values = np.zeros((n_paths, grid.n))
    for start, block in zip(range(0, n_paths, CHUNK), _run_chunks(n_paths, chunk, workers)):
        values[start:start + block.shape[0], 1:] = block
    return PathEnsemble(grid, values, seed, model.spec.digest())


def volterra_matrix(kernel: KernelSpec, grid: TimeGrid, inner_refine):
    """Matrix G(t_i, s_k + d/2) over coarse nodes t_i and fine cells [s_k, s_k + d)."""
    K = (grid.n - 1) * inner_refine
    d = grid.step / inner_refine
    t = grid.times
    s_mid = (np.arange(K) + 0.5) * d
    causal = np.arange(K)[None, :] < (np.arange(grid.n) * inner_refine)[:, None]
    mat = np.zeros((grid.n, K))
    ii, kk = np.nonzero(causal)
    mat[ii, kk] = eval_kernel(kernel, t[ii], s_mid[kk])
    bad = ~np.isfinite(mat)
    if np.any(bad):
        i, k = map(int, np.argwhere(bad)[0])
        raise SimulationError(f"non-finite kernel value at t={t[i]!r}, s={k * d!r}")
    return mat


def simulate_martingale_volterra(kernel: KernelSpec, driver: DriverSpec, grid: TimeGrid,
                                 inner_refine, n_paths, seed, workers=None):
    """X(t_i) = sum_{s_k < t_i} G(t_i, s_k + d/2) h(s_k, W(s_k)) (W(s_k + d) - W(s_k)).

    The Brownian driver lives on the grid refined ``inner_refine`` times.
    """
    if not kernel.causal:
        raise DomainError("martingale Volterra simulation needs a causal kernel")
    if inner_refine < 4:
        raise DomainError("inner_refine must be at least 4")
    gmat = volterra_matrix(kernel, grid, inner_refine)
    K = gmat.shape[1]
    d = grid.step / inner_refine
    s_left = np.arange(K) * d
    h = driver.h

    def chunk(start):
        stop = min(start + CHUNK, n_paths)
        dw = np.stack([brownian_increments(seed, p, grid.n - 1, inner_refine, d)
                       for p in range(start, stop)])
        w_left = np.concatenate([np.zeros((dw.shape[0], 1)), np.cumsum(dw[:, :-1], axis=1)], axis=1)
        dm = h(s_left[None, :], w_left) * dw
        out = dm @ gmat.T
        if not np.all(np.isfinite(out)):
            raise SimulationError("non-finite simulated values")
        return out

    values = np.zeros((n_paths, grid.n))
    for start, block in zip(range(0, n_paths, CHUNK), _run_chunks(n_paths, chunk, workers)):
        values[start:start + block.shape[0]] = block
    values[:, 0] = 0.0
    digest = hashlib.sha256(f"{kernel.describe()}|{h.name}".encode()).hexdigest()[:16]
    return PathEnsemble(grid, values, seed, digest)
