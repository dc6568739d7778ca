"""Markovian projection of a reaction network onto a few observed coordinates.

The projected propensities ``abar_j(t, s) = E[a_j(X(t)) | P X(t) = s]`` are fitted
by discrete L2 regression on a tau-leap ensemble, using polynomials in ``(t, s)``
orthonormalised under the empirical inner product of that same ensemble.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

from .network import ReactionNetwork
from .simulate import TimeGrid

MODEL_FORMAT = "srn-mpis/mp-model"
MODEL_VERSION = 1
PIVOT_RTOL = 1e-10


@dataclass(frozen=True)
class Projection:
    """Linear map ``x -> P x`` onto ``dbar`` coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[0] < 1:
            raise ValueError("projection needs at least one row")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def canonical(cls, d: int, species) -> "Projection":
        rows = np.atleast_1d(species)
        m = np.zeros((rows.size, d))
        m[np.arange(rows.size), rows] = 1.0
        return cls(m)

    @property
    def dbar(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def unit_rows(self) -> dict[int, int]:
        """Species -> projected coordinate, for rows that select a single species."""
        out = {}
        for k, row in enumerate(self.matrix):
            nz = np.flatnonzero(row)
            if nz.size == 1 and row[nz[0]] == 1.0:
                out[int(nz[0])] = k
        return out

    def __call__(self, x) -> np.ndarray:
        return np.rint(np.asarray(x) @ self.matrix.T).astype(np.int64)


@dataclass(frozen=True)
class Classification:
    regressed: tuple[int, ...]                      # J_MP
    closed_form: dict                               # j -> ((coord, alpha), ...)
    silent: tuple[int, ...]                         # P nu_j = 0
    nu_bar: np.ndarray


def classify_reactions(net: ReactionNetwork, proj: Projection) -> Classification:
    """Split reactions into silent (``P nu_j = 0``), closed-form and regressed.

    A mass-action propensity is a function of ``P x`` exactly when all of its
    reactant species are projected coordinates; then
    ``abar_j(t, s) = theta_j prod falling(s_k, alpha)``.
    """
    nu_bar = np.rint(net.nu @ proj.matrix.T).astype(np.int64)
    coord = proj.unit_rows()
    regressed, silent, closed = [], [], {}
    for j in range(net.J):
        if not nu_bar[j].any():
            silent.append(j)
            continue
        reactants = np.flatnonzero(net.alpha[j])
        if all(int(i) in coord for i in reactants):
            closed[j] = tuple((coord[int(i)], int(net.alpha[j, i])) for i in reactants)
        else:
            regressed.append(j)
    return Classification(tuple(regressed), closed, tuple(silent), nu_bar)


def default_basis(deg_t: int = 2, deg_s: int = 2) -> np.ndarray:
    """Exponents ``(i_t, i_s)`` of ``t^i_t s^i_s`` over ``{0..deg_t} x {0..deg_s}``."""
    return np.array([(i, k) for i in range(deg_t + 1) for k in range(deg_s + 1)], dtype=np.int64)


def monomials(exponents: np.ndarray, t, s, t_scale: float = 1.0, s_scale=1.0) -> np.ndarray:
    """Evaluate ``(t/t_scale)^e0 * prod_k (s_k/s_scale_k)^e_k`` for rows of ``(t, s)``.

    Rescaling leaves the spanned space unchanged and only improves conditioning.
    """
    t = np.asarray(t, dtype=float).ravel() / t_scale
    s = np.asarray(s, dtype=float).reshape(t.size, -1) / np.asarray(s_scale, dtype=float)
    out = t[:, None] ** exponents[None, :, 0]
    for k in range(s.shape[1]):
        out = out * s[:, k:k + 1] ** exponents[None, :, k + 1]
    return out


@dataclass
class OrthoBasis:
    """Record of an empirical Gram-Schmidt run.

    Orthonormal function ``q`` is ``sum_p L[q, p] m_p`` over the monomials
    ``m_p`` listed in ``exponents`` (lower triangular in the kept ordering).
    """

    exponents: np.ndarray
    L: np.ndarray
    kept: np.ndarray
    dropped: list
    t_scale: float
    s_scale: np.ndarray

    def __call__(self, t, s) -> np.ndarray:
        V = monomials(self.exponents, t, s, self.t_scale, self.s_scale)
        return V @ self.L.T

    @property
    def size(self) -> int:
        return self.L.shape[0]


def regression_rows(paths: np.ndarray, grid: TimeGrid, proj: Projection):
    """Flatten an ensemble ``(M, N + 1, d)`` to rows ``(t_n, x)`` for ``n = 0..N-1``."""
    M = paths.shape[0]
    X = paths[:, :-1, :].reshape(-1, paths.shape[2])
    t = np.tile(grid.times[:-1], M)
    return t, X, proj(X)


def empirical_gram_schmidt(paths: np.ndarray, grid: TimeGrid, exponents: np.ndarray,
                           proj: Projection, rtol: float = PIVOT_RTOL) -> OrthoBasis:
    """Orthonormalise the monomials under ``<f, g> = mean over (m, n) of f g``.

    Classical Gram-Schmidt with one re-orthogonalisation pass. Monomials whose
    residual norm collapses (degenerate ensembles) are dropped and recorded.
    """
    exponents = np.asarray(exponents, dtype=np.int64)
    t, _, s = regression_rows(paths, grid, proj)
    if t.size < len(exponents):
        raise ValueError("ensemble has fewer rows than basis functions")
    s_scale = np.maximum(np.abs(s).max(axis=0), 1).astype(float)
    V = monomials(exponents, t, s, grid.T, s_scale)
    n_basis = len(exponents)
    L = np.zeros((n_basis, n_basis))
    Q = []
    kept, dropped = [], []
    first = None
    for p in range(n_basis):
        v = V[:, p].copy()
        coef = np.zeros(n_basis)
        coef[p] = 1.0
        col_norm = np.sqrt(np.mean(v * v))
        for _ in range(2):
            for q, row in zip(Q, (L[k] for k in kept)):
                r = np.mean(q * v)
                v -= r * q
                coef -= r * row
        norm = np.sqrt(np.mean(v * v))
        if first is None:
            first = norm
        if norm <= rtol * max(first, col_norm) or norm == 0.0:
            dropped.append(tuple(int(e) for e in exponents[p]))
            continue
        Q.append(v / norm)
        L[p] = coef / norm
        kept.append(p)
    kept = np.array(kept, dtype=np.int64)
    return OrthoBasis(exponents, L[kept], kept, dropped, float(grid.T), s_scale)


def design_matrix(basis: OrthoBasis, paths: np.ndarray, grid: TimeGrid, proj: Projection) -> np.ndarray:
    t, _, s = regression_rows(paths, grid, proj)
    return basis(t, s)


@dataclass
class MPModel:
    """Fitted projected network: jumps ``P nu_j`` and propensities ``abar_j(t, s)``."""

    projection: Projection
    theta: np.ndarray
    classification: Classification
    basis: OrthoBasis
    coefficients: dict                      # j -> (n_basis,) over the orthonormal functions
    T: float
    dt_fit: float
    diagnostics: dict = field(default_factory=dict)
    s_observed: tuple = (0, 0)

    def __post_init__(self):
        self._lock = threading.Lock()
        self.extrapolated_queries = 0

    @property
    def nu_bar(self) -> np.ndarray:
        return self.classification.nu_bar

    @property
    def J(self) -> int:
        return self.nu_bar.shape[0]

    def project(self, x) -> np.ndarray:
        return self.projection(x)

    def propensities(self, t: float, s) -> np.ndarray:
        """``abar(t, s)`` for states ``s`` of shape ``(K, dbar)``; returns ``(K, J)``.

        Regressed channels are clamped at zero; silent channels are zero.
        """
        s = np.asarray(s).reshape(-1, self.projection.dbar)
        out = np.zeros((s.shape[0], self.J))
        lo, hi = self.s_observed
        outside = int(np.count_nonzero((s < lo).any(axis=1) | (s > hi).any(axis=1)))
        if outside or not 0.0 <= t <= self.T:
            with self._lock:
                self.extrapolated_queries += outside if 0.0 <= t <= self.T else s.shape[0]
        if self.classification.regressed:
            phi = self.basis(np.full(s.shape[0], float(t)), s)
            for j in self.classification.regressed:
                out[:, j] = np.maximum(phi @ self.coefficients[j], 0.0)
        sf = s.astype(float)
        for j, factors in self.classification.closed_form.items():
            val = np.full(s.shape[0], self.theta[j])
            for k, alpha in factors:
                for r in range(alpha):
                    val *= np.maximum(sf[:, k] - r, 0.0)
            out[:, j] = val
        return out

    def propensity(self, j: int, t: float, s) -> np.ndarray:
        return self.propensities(t, s)[:, j]

    # serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        c = self.classification
        b = self.basis
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "projection": self.projection.matrix.tolist(),
            "theta": self.theta.tolist(),
            "T": self.T,
            "dt_fit": self.dt_fit,
            "regressed": list(c.regressed),
            "silent": list(c.silent),
            "closed_form": {str(j): [list(f) for f in v] for j, v in c.closed_form.items()},
            "nu_bar": c.nu_bar.tolist(),
            "basis": {
                "exponents": b.exponents.tolist(),
                "kept": b.kept.tolist(),
                "dropped": [list(e) for e in b.dropped],
                "t_scale": b.t_scale,
                "s_scale": np.asarray(b.s_scale).tolist(),
                "L": b.L.tolist(),
            },
            "coefficients": {str(j): v.tolist() for j, v in self.coefficients.items()},
            "s_observed": list(self.s_observed),
            "diagnostics": self.diagnostics,
        }

    def dumps(self) -> str:
        # repr-exact floats so a reloaded model reproduces identical controls
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MPModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not an MP model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported MP model version {d.get('version')}")
        cls_ = Classification(
            tuple(d["regressed"]),
            {int(j): tuple(tuple(f) for f in v) for j, v in d["closed_form"].items()},
            tuple(d["silent"]),
            np.asarray(d["nu_bar"], dtype=np.int64),
        )
        b = d["basis"]
        basis = OrthoBasis(np.asarray(b["exponents"], dtype=np.int64), np.asarray(b["L"], float),
                           np.asarray(b["kept"], dtype=np.int64), [tuple(e) for e in b["dropped"]],
                           float(b["t_scale"]), np.asarray(b["s_scale"], float))
        return cls(Projection(np.asarray(d["projection"])), np.asarray(d["theta"], float), cls_, basis,
                   {int(j): np.asarray(v, float) for j, v in d["coefficients"].items()},
                   float(d["T"]), float(d["dt_fit"]), dict(d.get("diagnostics", {})),
                   tuple(d["s_observed"]))

    @classmethod
    def loads(cls, text: str) -> "MPModel":
        return cls.from_dict(json.loads(text))


def fit_mp(paths: np.ndarray, grid: TimeGrid, net: ReactionNetwork, proj: Projection,
           exponents: np.ndarray | None = None, regress_all: bool = False) -> MPModel:
    """Fit ``abar_j`` for the regressed channels by the normal equations.

    The basis is orthonormal on the fitting ensemble, so ``D^T D`` is diagonal
    and each coefficient is ``(D^T psi)_p / (D^T D)_pp``. ``regress_all``
    regresses closed-form channels too (a diagnostic of the fit itself).
    """
    exponents = default_basis() if exponents is None else np.asarray(exponents, dtype=np.int64)
    cls_ = classify_reactions(net, proj)
    if regress_all:
        cls_ = Classification(tuple(sorted((*cls_.regressed, *cls_.closed_form))), {},
                              cls_.silent, cls_.nu_bar)
    basis = empirical_gram_schmidt(paths, grid, exponents, proj)
    t, X, s = regression_rows(paths, grid, proj)
    D = basis(t, s)
    gram_diag = np.einsum("ij,ij->j", D, D)
    coefficients, residual = {}, {}
    if cls_.regressed:
        A = net.propensities(X)
        for j in cls_.regressed:
            psi = A[:, j]
            c = (D.T @ psi) / gram_diag
            coefficients[j] = c
            residual[str(j)] = float(np.mean((psi - D @ c) ** 2))
    diagnostics = {
        "rows": int(t.size),
        "paths": int(paths.shape[0]),
        "basis_kept": int(basis.size),
        "basis_dropped": [list(e) for e in basis.dropped],
        "residual_mse": residual,
    }
    return MPModel(proj, net.theta.copy(), cls_, basis, coefficients, float(grid.T), grid.dt,
                   diagnostics, (int(s.min()), int(s.max())))


def mp_process_paths(model: MPModel, s0, grid: TimeGrid, rng: np.random.Generator,
                     M: int = 1, record: bool = True) -> np.ndarray:
    """Tau-leap the projected process with time-dependent ``abar`` and jumps ``P nu_j``.

    Returns ``(M, N + 1, dbar)`` paths or ``(M, dbar)`` final states.
    """
    s = np.repeat(np.atleast_1d(np.asarray(s0, dtype=np.int64))[None, :], M, axis=0)
    moving = np.flatnonzero(np.any(model.nu_bar != 0, axis=1))
    nu = model.nu_bar[moving]
    out = [s.copy()] if record else None
    for n in range(grid.N):
        abar = model.propensities(n * grid.dt, s)[:, moving]
        p = rng.poisson(abar * grid.dt)
        s = np.maximum(s + p @ nu, 0)
        if record:
            out.append(s.copy())
    return np.stack(out, axis=1) if record else s
