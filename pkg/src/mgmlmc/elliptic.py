"""Steady diffusion solves and the two elliptic control problems.

The PDE -div(k grad y) = f on the unit square with Dirichlet boundary data
is discretized by the 5-point variable-coefficient scheme; the coefficient
at a cell face is the arithmetic (optionally harmonic) mean of the two
adjacent node values.  Systems are SPD and solved either by a sparse direct
factorization (default) or by diagonally preconditioned CG.

Two control problems are built on top:

* :class:`LaplaceSourceControl` - the interior heat source is the control,
  the state is tracked against a target in the domain.
* :class:`DtNBoundaryControl` - Dirichlet data on the bottom edge Gamma is
  the control, the normal flux ``k dy/dn`` on Gamma is tracked against a
  target flux.

Per-sample gradients are exact discrete adjoints: the adjoint maps are the
transposes of the assembled forward (and flux extraction) maps, so central
finite differences of the per-sample cost reproduce them to solver accuracy.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LevelMismatch, LinearSolveFailure
from .grids import GAMMA, INTERIOR, GridHierarchy, LevelVector
from .problems import ControlProblem
from .random_fields import Box, CovarianceSpec, FieldSample, RngStream

INTERIOR_SOURCE = "interior_source"
GAMMA_DIRICHLET = "gamma_dirichlet"


@dataclass(frozen=True)
class StateField:
    """State (or adjoint) values on all grid nodes including the boundary."""

    level: int
    values: np.ndarray = dataclass_field(repr=False)

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1]


def _face_coefficients(k: np.ndarray, mean: str):
    """Per-face coefficients west/east/south/north of each interior node."""
    if mean == "arithmetic":
        avg = lambda a, b: 0.5 * (a + b)
    elif mean == "harmonic":
        avg = lambda a, b: 2.0 * a * b / (a + b)
    else:
        raise ValueError(f"unknown face mean '{mean}'")
    kw = avg(k[:-2, 1:-1], k[1:-1, 1:-1])
    ke = avg(k[1:-1, 1:-1], k[2:, 1:-1])
    ks = avg(k[1:-1, :-2], k[1:-1, 1:-1])
    kn = avg(k[1:-1, 1:-1], k[1:-1, 2:])
    return kw, ke, ks, kn


class DiffusionOperator:
    """Assembled 5-point operator for one field realization.

    The matrix acts on flattened interior values (row-major over the
    (x1, x2) interior grid).  It is symmetric positive definite; ``solve``
    therefore serves for both the forward and the adjoint equation.
    """

    def __init__(self, k: np.ndarray, h: float, *,
                 face_mean: str = "arithmetic",
                 method: str = "direct",
                 lin_tol: float = 1e-10,
                 max_iter: int = 20000):
        n = k.shape[0]
        if k.ndim != 2 or k.shape[1] != n:
            raise ValueError("field must be a square full-node array")
        self.m = n - 2
        self.h = h
        self.method = method
        self.lin_tol = lin_tol
        self.max_iter = max_iter
        kw, ke, ks, kn = _face_coefficients(k, face_mean)
        self._ks_bottom = ks[:, 0].copy()
        self._k_gamma = k[1:-1, 0].copy()
        m = self.m
        idx = np.arange(m * m).reshape(m, m)
        inv_h2 = 1.0 / h**2
        diag = (kw + ke + ks + kn).ravel() * inv_h2
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        vals = [diag]
        # horizontal couplings (x1 direction) and their transposes
        r = idx[:-1, :].ravel()
        c = idx[1:, :].ravel()
        v = -ke[:-1, :].ravel() * inv_h2
        rows += [r, c]
        cols += [c, r]
        vals += [v, v]
        # vertical couplings (x2 direction)
        r = idx[:, :-1].ravel()
        c = idx[:, 1:].ravel()
        v = -kn[:, :-1].ravel() * inv_h2
        rows += [r, c]
        cols += [c, r]
        vals += [v, v]
        self.matrix = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m * m, m * m),
        )
        self._lu = None
        self._precond = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A y = rhs for interior values shaped (m, m)."""
        b = np.asarray(rhs, dtype=float).ravel()
        if self.method == "direct":
            if self._lu is None:
                self._lu = spla.splu(self.matrix)
            y = self._lu.solve(b)
        elif self.method == "cg":
            if self._precond is None:
                inv_diag = 1.0 / self.matrix.diagonal()
                self._precond = spla.LinearOperator(
                    self.matrix.shape, matvec=lambda x: inv_diag * x
                )
            y, info = spla.cg(self.matrix, b, rtol=self.lin_tol, atol=0.0,
                              maxiter=self.max_iter, M=self._precond)
            if info != 0:
                raise LinearSolveFailure(
                    f"CG did not reach rtol={self.lin_tol} in {self.max_iter} iters"
                )
        else:
            raise ValueError(f"unknown solver method '{self.method}'")
        nb = np.linalg.norm(b)
        if nb > 0:
            res = np.linalg.norm(self.matrix @ y - b) / nb
            if res > max(self.lin_tol, 1e-9):
                raise LinearSolveFailure(f"relative residual {res:.3e} too large")
        return y.reshape(self.m, self.m)

    # -- boundary lift for Dirichlet data on Gamma (bottom edge) -------------

    def lift_gamma(self, u: np.ndarray) -> np.ndarray:
        """Right-hand side induced by Dirichlet values u on the bottom edge."""
        rhs = np.zeros((self.m, self.m))
        rhs[:, 0] = self._ks_bottom / self.h**2 * u
        return rhs

    def lift_gamma_transpose(self, r: np.ndarray) -> np.ndarray:
        return self._ks_bottom / self.h**2 * r[:, 0]

    # -- one-sided second-order flux k dy/dn on Gamma -------------------------

    def gamma_flux(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Flux k dy/dn at the Gamma nodes; outward normal is -x2."""
        return self._k_gamma * (3.0 * u - 4.0 * y[:, 0] + y[:, 1]) / (2.0 * self.h)

    def gamma_flux_transpose_state(self, w: np.ndarray) -> np.ndarray:
        """Adjoint of y -> flux, landing on interior values."""
        r = np.zeros((self.m, self.m))
        r[:, 0] = -4.0 * self._k_gamma * w / (2.0 * self.h)
        r[:, 1] = self._k_gamma * w / (2.0 * self.h)
        return r

    def gamma_flux_transpose_control(self, w: np.ndarray) -> np.ndarray:
        return 3.0 * self._k_gamma * w / (2.0 * self.h)


class _OperatorCache:
    """Small LRU cache of assembled/factorized operators keyed by seed_id."""

    def __init__(self, max_items: int = 32):
        self.max_items = max_items
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        return None

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.max_items:
                self._data.popitem(last=False)


def solve_diffusion(rhs_or_bc, field: FieldSample, bc_mode: str = INTERIOR_SOURCE,
                    **solver_opts) -> StateField:
    """Solve -div(k grad y) with the given data on the field's grid.

    ``bc_mode`` selects the data interpretation: an interior source with
    zero Dirichlet boundary (``interior_source``), or Dirichlet data on the
    bottom edge Gamma with zero source and zero data elsewhere
    (``gamma_dirichlet``).
    """
    n = field.nodes
    h = 1.0 / (n - 1)
    op = DiffusionOperator(field.values, h, **solver_opts)
    data = rhs_or_bc.values if isinstance(rhs_or_bc, LevelVector) else np.asarray(rhs_or_bc)
    full = np.zeros((n, n))
    if bc_mode == INTERIOR_SOURCE:
        full[1:-1, 1:-1] = op.solve(data)
    elif bc_mode == GAMMA_DIRICHLET:
        full[1:-1, 1:-1] = op.solve(op.lift_gamma(data))
        full[1:-1, 0] = data
    else:
        raise ValueError(f"unknown bc_mode '{bc_mode}'")
    return StateField(level=field.level, values=full)


def indicator_box_target(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Unit indicator of the centered square [1/4, 3/4]^2."""
    return np.where(
        (x1 >= 0.25) & (x1 <= 0.75) & (x2 >= 0.25) & (x2 <= 0.75), 1.0, 0.0
    )


def sine_target_flux(x: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * x)


@dataclass(frozen=True)
class LaplaceProblemSpec:
    """Configuration of the interior source control problem."""

    alpha: float = 1e-6
    target: callable = indicator_box_target
    covariance: CovarianceSpec = dataclass_field(
        default_factory=lambda: CovarianceSpec(sigma2=0.1, lam=0.3)
    )
    face_mean: str = "arithmetic"
    solver: str = "direct"
    lin_tol: float = 1e-10


def default_dtn_covariance() -> CovarianceSpec:
    """Lognormal field forced to 1 on the strip touching the controlled edge."""
    return CovarianceSpec(
        sigma2=0.1, lam=0.3,
        region=Box(lo=(0.0, 0.0), hi=(1.0, 0.25)), region_value=1.0,
    )


@dataclass(frozen=True)
class DtNProblemSpec:
    """Configuration of the boundary flux control problem."""

    alpha: float = 1e-6
    target_flux: callable = sine_target_flux
    covariance: CovarianceSpec = dataclass_field(default_factory=default_dtn_covariance)
    face_mean: str = "arithmetic"
    solver: str = "direct"
    lin_tol: float = 1e-10


class _EllipticBase(ControlProblem):
    kappa_default = 2.0
    is_quadratic = True  # linear PDE + quadratic cost for fixed samples

    def __init__(self, hierarchy: GridHierarchy, spec, cache_size: int = 32):
        if hierarchy.dim != 2:
            raise LevelMismatch("elliptic problems need a 2-D hierarchy")
        super().__init__(hierarchy, spec.alpha, spec.covariance)
        self.spec = spec
        self._cache = _OperatorCache(cache_size)

    def _operator(self, field: FieldSample) -> DiffusionOperator:
        key = (field.level, field.seed_id) if field.seed_id else None
        if key is not None:
            hit = self._cache.get(key)
            if hit is not None:
                return hit
        op = DiffusionOperator(
            field.values, self.hierarchy.h(field.level),
            face_mean=self.spec.face_mean, method=self.spec.solver,
            lin_tol=self.spec.lin_tol,
        )
        if key is not None:
            self._cache.put(key, op)
        return op


class LaplaceSourceControl(_EllipticBase):
    """Track an interior target with a distributed heat source control."""

    name = "laplace"
    control_role = INTERIOR

    def __init__(self, hierarchy, spec: LaplaceProblemSpec | None = None, **kw):
        super().__init__(hierarchy, spec or LaplaceProblemSpec(), **kw)
        self._targets = {}

    def target(self, level: int) -> LevelVector:
        if level not in self._targets:
            self._targets[level] = self.hierarchy.from_function(level, self.spec.target)
        return self._targets[level]

    def _check(self, u: LevelVector, field: FieldSample):
        if u.level != field.level or u.role != INTERIOR:
            raise LevelMismatch("control and field must share an interior level")

    def tracking_cost(self, u, field):
        self._check(u, field)
        op = self._operator(field)
        y = op.solve(u.values)
        r = y - self.target(u.level).values
        return 0.5 * u.h**2 * float(np.vdot(r, r))

    def tracking_cost_grad(self, u, field):
        self._check(u, field)
        op = self._operator(field)
        y = op.solve(u.values)
        r = y - self.target(u.level).values
        jt = 0.5 * u.h**2 * float(np.vdot(r, r))
        p = op.solve(r)
        return jt, u.with_values(p)

    def state(self, u, field):
        self._check(u, field)
        op = self._operator(field)
        n = field.nodes
        full = np.zeros((n, n))
        full[1:-1, 1:-1] = op.solve(u.values)
        return full


class DtNBoundaryControl(_EllipticBase):
    """Track a target normal flux on Gamma with Dirichlet boundary control."""

    name = "dtn"
    control_role = GAMMA

    def __init__(self, hierarchy, spec: DtNProblemSpec | None = None, **kw):
        super().__init__(hierarchy, spec or DtNProblemSpec(), **kw)
        self._targets = {}

    def target_flux(self, level: int) -> np.ndarray:
        if level not in self._targets:
            x = self.hierarchy.interior_coords(level)
            self._targets[level] = np.asarray(self.spec.target_flux(x), dtype=float)
        return self._targets[level]

    def _check(self, u: LevelVector, field: FieldSample):
        if u.level != field.level or u.role != GAMMA:
            raise LevelMismatch("control must be a gamma vector on the field level")

    def _flux(self, u, op):
        y = op.solve(op.lift_gamma(u.values))
        return y, op.gamma_flux(u.values, y)

    def tracking_cost(self, u, field):
        self._check(u, field)
        op = self._operator(field)
        _, f = self._flux(u, op)
        w = f - self.target_flux(u.level)
        return 0.5 * u.h * float(np.vdot(w, w))

    def tracking_cost_grad(self, u, field):
        self._check(u, field)
        op = self._operator(field)
        _, f = self._flux(u, op)
        w = f - self.target_flux(u.level)
        jt = 0.5 * u.h * float(np.vdot(w, w))
        p = op.solve(op.gamma_flux_transpose_state(w))
        q = op.gamma_flux_transpose_control(w) + op.lift_gamma_transpose(p)
        return jt, u.with_values(q)

    def flux_sample(self, u: LevelVector, field: FieldSample) -> np.ndarray:
        """Achieved flux k dy/dn on Gamma for one realization."""
        self._check(u, field)
        op = self._operator(field)
        return self._flux(u, op)[1]

    def state(self, u, field):
        self._check(u, field)
        op = self._operator(field)
        n = field.nodes
        full = np.zeros((n, n))
        full[1:-1, 1:-1] = op.solve(op.lift_gamma(u.values))
        full[1:-1, 0] = u.values
        return full
