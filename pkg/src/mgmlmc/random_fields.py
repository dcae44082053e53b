"""Lognormal random fields on regular grids via circulant embedding.

A mean-zero Gaussian field z with exponential covariance

    Cov[z(x), z(x')] = sigma2 * exp(-||x - x'||_2 / lam)

is sampled exactly at the nodes of a uniform grid by embedding the
(block-)Toeplitz covariance matrix into a (block-)circulant one, which the
FFT diagonalizes.  The returned field is ``scale * exp(z)``, optionally
overridden by a constant inside an axis-aligned box.

Sampling is driven by counter-based Philox streams keyed on
``(global_seed, set_id, level, index)``: the same key always reproduces the
same draw, distinct keys are independent.  For multilevel estimators the
:class:`FieldSampler` draws the Gaussian field once on the finest grid of a
hierarchy and injects it to coarser grids, so coupled samples on adjacent
levels agree exactly at shared nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmbeddingNotPSD, LevelMismatch
from .grids import GridHierarchy

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo_i, hi_i] inside the unit domain."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi):
            raise ValueError("box corners need the same dimension")
        for a, b in zip(lo, hi):
            if not (0.0 <= a <= b <= 1.0):
                raise ValueError("box must lie inside the unit domain")

    def mask(self, axes: list) -> np.ndarray:
        """Boolean mask of grid nodes inside the box.

        ``axes`` holds the node coordinates along each axis; the mask is
        their tensor product, inclusive at the box faces.
        """
        eps = 1e-12
        masks = [
            (ax >= self.lo[d] - eps) & (ax <= self.hi[d] + eps)
            for d, ax in enumerate(axes)
        ]
        out = masks[0]
        for m in masks[1:]:
            out = np.logical_and.outer(out, m)
        return out


@dataclass(frozen=True)
class CovarianceSpec:
    """Exponential covariance with optional deterministic override region.

    sigma2 : variance of the Gaussian field
    lam : correlation length
    scale : multiplicative factor applied to the lognormal field
    region, region_value : where present, the final field is set to
        ``region_value`` on all nodes inside ``region``.
    """

    sigma2: float
    lam: float
    scale: float = 1.0
    region: Box | None = None
    region_value: float = 1.0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if self.scale <= 0:
            raise ValueError("scale must be > 0")


def covariance(x, x2, spec: CovarianceSpec) -> float:
    """Evaluate sigma2 * exp(-||x - x2|| / lam) for two points."""
    d = np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))
                       - np.atleast_1d(np.asarray(x2, dtype=float)))
    return spec.sigma2 * float(np.exp(-d / spec.lam))


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream identity (global_seed, set_id, level, index)."""

    global_seed: int
    set_id: int
    level: int
    index: int

    def __post_init__(self):
        if not 0 <= self.set_id < (1 << 24):
            raise ValueError("set_id outside [0, 2^24)")
        if not 0 <= self.level < (1 << 8):
            raise ValueError("level outside [0, 2^8)")
        if not 0 <= self.index < (1 << 32):
            raise ValueError("index outside [0, 2^32)")

    @property
    def seed_id(self) -> tuple:
        return (self.global_seed, self.set_id, self.level, self.index)

    def generator(self) -> np.random.Generator:
        key0 = self.global_seed & _MASK64
        key1 = (self.set_id << 40) | (self.level << 32) | self.index
        return np.random.Generator(np.random.Philox(key=[key0, key1]))


@dataclass(frozen=True)
class FieldSample:
    """One field realization on the full node grid of a level."""

    level: int
    values: np.ndarray = field(repr=False)
    seed_id: tuple = ()

    @property
    def nodes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CirculantEmbedding:
    """FFT-diagonalized factor of the padded circulant embedding.

    ``sqrt_eig`` holds the square roots of the circulant eigenvalues on the
    extended periodic grid of shape ``ext_shape``; the physical grid is the
    leading ``n`` nodes per axis.
    """

    n: int
    h: float
    dim: int
    padding: int
    sqrt_eig: np.ndarray = field(repr=False)

    @property
    def ext_shape(self) -> tuple:
        return self.sqrt_eig.shape


def build_embedding(
    n: int,
    h: float,
    dim: int,
    spec: CovarianceSpec,
    *,
    initial_padding: int = 2,
    max_padding: int = 8,
    tol_embed: float = 1e-12,
) -> CirculantEmbedding:
    """Embed the covariance of an n-nodes-per-axis grid into a circulant.

    The extended period per axis is ``2 * padding * (n - 1)`` points, so all
    physical lags are represented without wraparound.  Eigenvalues in
    ``[-tol, 0)`` with ``tol = tol_embed * max eigenvalue`` are clipped to
    zero; if any eigenvalue is more negative the padding is doubled, up to
    ``max_padding`` before :class:`EmbeddingNotPSD` is raised.
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    padding = initial_padding
    while True:
        m = 2 * padding * (n - 1)
        lag = h * np.minimum(np.arange(m), m - np.arange(m))
        if dim == 1:
            dist = lag
        else:
            dist = np.sqrt(lag[:, None] ** 2 + lag[None, :] ** 2)
        symbol = spec.sigma2 * np.exp(-dist / spec.lam)
        eig = np.fft.fftn(symbol).real
        top = max(eig.max(), 0.0)
        tol = tol_embed * top
        if eig.min() >= -tol:
            eig = np.clip(eig, 0.0, None)
            return CirculantEmbedding(
                n=n, h=h, dim=dim, padding=padding, sqrt_eig=np.sqrt(eig)
            )
        if padding >= max_padding:
            raise EmbeddingNotPSD(
                f"embedding eigenvalue {eig.min():.3e} < -{tol:.3e} "
                f"at padding {padding}"
            )
        padding *= 2


def sample_gaussian(embedding: CirculantEmbedding, stream: RngStream) -> np.ndarray:
    """Draw one mean-zero Gaussian field on the embedding's grid nodes."""
    rng = stream.generator()
    xi = rng.standard_normal((2,) + embedding.ext_shape)
    eps = xi[0] + 1j * xi[1]
    m_total = float(np.prod(embedding.ext_shape))
    y = np.sqrt(m_total) * np.fft.ifftn(embedding.sqrt_eig * eps)
    sl = (slice(0, embedding.n),) * embedding.dim
    return np.ascontiguousarray(y.real[sl])


def lognormal_from_gaussian(
    z: np.ndarray, spec: CovarianceSpec, h: float
) -> np.ndarray:
    """Map a Gaussian field to scale * exp(z) and apply the region override."""
    k = spec.scale * np.exp(z)
    if spec.region is not None:
        axes = [np.linspace(0.0, 1.0, nax) for nax in k.shape]
        k[spec.region.mask(axes)] = spec.region_value
    return k


def sample_lognormal(
    embedding: CirculantEmbedding,
    stream: RngStream,
    spec: CovarianceSpec,
    level: int,
) -> FieldSample:
    """One lognormal realization on the embedding's grid, tagged ``level``."""
    z = sample_gaussian(embedding, stream)
    return FieldSample(
        level=level,
        values=lognormal_from_gaussian(z, spec, embedding.h),
        seed_id=stream.seed_id,
    )


def inject(values: np.ndarray) -> np.ndarray:
    """Pointwise injection of full-node values to the next coarser grid."""
    sl = (slice(None, None, 2),) * values.ndim
    return values[sl].copy()


def restrict_field(fine: FieldSample, to_level: int) -> FieldSample:
    """Coarsen a field by injection at shared nodes; the seed_id is kept."""
    if to_level != fine.level - 1:
        raise LevelMismatch(
            f"can only restrict one level: {fine.level} -> {to_level}"
        )
    return FieldSample(
        level=to_level, values=inject(fine.values), seed_id=fine.seed_id
    )


class FieldSampler:
    """Level-coupled lognormal sampler over a grid hierarchy.

    The Gaussian field for a stream is drawn once on the hierarchy's finest
    grid and injected down, so for any two levels the realizations of one
    stream coincide at shared nodes.  This makes coupled multilevel
    differences consistent: the coarse member of a level-l pair is exactly
    the fine member of the level-(l-1) pair for the same stream.
    """

    def __init__(self, hierarchy: GridHierarchy, spec: CovarianceSpec, **embed_opts):
        self.hierarchy = hierarchy
        self.spec = spec
        self._embed_opts = embed_opts
        self._embedding: CirculantEmbedding | None = None

    @property
    def embedding(self) -> CirculantEmbedding:
        if self._embedding is None:
            top = self.hierarchy.finest
            self._embedding = build_embedding(
                self.hierarchy.nodes(top),
                self.hierarchy.h(top),
                self.hierarchy.dim,
                self.spec,
                **self._embed_opts,
            )
        return self._embedding

    def _finest_field(self, stream: RngStream) -> np.ndarray:
        z = sample_gaussian(self.embedding, stream)
        return lognormal_from_gaussian(z, self.spec, self.hierarchy.h(self.hierarchy.finest))

    def sample(self, stream: RngStream, level: int) -> FieldSample:
        """Lognormal field at ``level``, injected from the finest draw."""
        values = self._finest_field(stream)
        for _ in range(self.hierarchy.finest - level):
            values = inject(values)
        return FieldSample(level=level, values=values, seed_id=stream.seed_id)

    def pair(self, stream: RngStream, level: int) -> tuple:
        """Coupled (level, level-1) realizations from a single draw."""
        fine = self.sample(stream, level)
        return fine, restrict_field(fine, level - 1)
