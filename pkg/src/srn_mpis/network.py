"""Reaction networks with stochastic mass-action kinetics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class ReactionNetwork:
    """A network of ``d`` species interacting through ``J`` reaction channels.

    ``alpha[j, i]`` molecules of species ``i`` are consumed and ``beta[j, i]``
    produced when reaction ``j`` fires with rate constant ``theta[j]``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    species_names: tuple[str, ...] = ()
    nu: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.int64, ndmin=2)
        beta = np.array(self.beta, dtype=np.int64, ndmin=2)
        theta = np.array(self.theta, dtype=float, ndmin=1)
        if alpha.shape != beta.shape:
            raise ValueError(f"alpha {alpha.shape} and beta {beta.shape} differ in shape")
        if theta.shape != (alpha.shape[0],):
            raise ValueError(f"theta must have length {alpha.shape[0]}, got {theta.shape}")
        if (alpha < 0).any() or (beta < 0).any():
            raise ValueError("stoichiometric coefficients must be nonnegative")
        if not (theta > 0).all():
            raise ValueError("rate constants must be positive")
        names = tuple(self.species_names) or tuple(f"X{i + 1}" for i in range(alpha.shape[1]))
        if len(names) != alpha.shape[1]:
            raise ValueError("species_names length does not match species count")
        for arr in (alpha, beta, theta):
            arr.setflags(write=False)
        nu = beta - alpha
        nu.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "species_names", names)
        object.__setattr__(self, "nu", nu)

    @property
    def d(self) -> int:
        return self.alpha.shape[1]

    @property
    def J(self) -> int:
        return self.alpha.shape[0]

    def species_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            if not 0 <= name_or_index < self.d:
                raise IndexError(f"species index {name_or_index} out of range")
            return int(name_or_index)
        try:
            return self.species_names.index(name_or_index)
        except ValueError:
            raise KeyError(f"unknown species {name_or_index!r}") from None

    def propensities(self, x) -> np.ndarray:
        """Mass-action propensities for one state (shape ``(d,)``) or a batch ``(M, d)``.

        Uses falling factorials ``x (x-1) ... (x-alpha+1)``, which vanish on their
        own whenever ``0 <= x < alpha``.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        out = np.empty((xb.shape[0], self.J))
        out[:] = self.theta
        for j in range(self.J):
            for i in np.flatnonzero(self.alpha[j]):
                for k in range(self.alpha[j, i]):
                    out[:, j] *= np.maximum(xb[:, i] - k, 0.0)
        return out[0] if single else out

    def to_dict(self) -> dict:
        reactions = []
        for j in range(self.J):
            reactions.append({
                "reactants": {self.species_names[i]: int(self.alpha[j, i])
                              for i in np.flatnonzero(self.alpha[j])},
                "products": {self.species_names[i]: int(self.beta[j, i])
                             for i in np.flatnonzero(self.beta[j])},
                "rate": float(self.theta[j]),
            })
        return {"species": list(self.species_names), "reactions": reactions}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ReactionNetwork":
        species = list(doc["species"])
        index = {name: i for i, name in enumerate(species)}
        reactions = doc["reactions"]
        alpha = np.zeros((len(reactions), len(species)), dtype=np.int64)
        beta = np.zeros_like(alpha)
        theta = np.zeros(len(reactions))
        for j, r in enumerate(reactions):
            for target, key in ((alpha, "reactants"), (beta, "products")):
                for name, coeff in (r.get(key) or {}).items():
                    if name not in index:
                        raise KeyError(f"reaction {j}: unknown species {name!r}")
                    target[j, index[name]] = coeff
            theta[j] = r["rate"]
        return cls(alpha, beta, theta, tuple(species))


def _from_reactions(species: Sequence[str], reactions, theta) -> ReactionNetwork:
    index = {name: i for i, name in enumerate(species)}
    alpha = np.zeros((len(reactions), len(species)), dtype=np.int64)
    beta = np.zeros_like(alpha)
    for j, (lhs, rhs) in enumerate(reactions):
        for name, c in lhs.items():
            alpha[j, index[name]] += c
        for name, c in rhs.items():
            beta[j, index[name]] += c
    return ReactionNetwork(alpha, beta, np.asarray(theta, float), tuple(species))


def michaelis_menten() -> ReactionNetwork:
    """E + S -> C, C -> E + S, C -> E + P."""
    return _from_reactions(
        ["E", "S", "C", "P"],
        [
            ({"E": 1, "S": 1}, {"C": 1}),
            ({"C": 1}, {"E": 1, "S": 1}),
            ({"C": 1}, {"E": 1, "P": 1}),
        ],
        [0.001, 0.005, 0.01],
    )


def goutsias() -> ReactionNetwork:
    """Regulated transcription model with six species and ten channels."""
    return _from_reactions(
        ["M", "D", "RNA", "DNA", "DNA.D", "DNA.2D"],
        [
            ({"RNA": 1}, {"RNA": 1, "M": 1}),
            ({"M": 1}, {}),
            ({"DNA.D": 1}, {"RNA": 1, "DNA.D": 1}),
            ({"RNA": 1}, {}),
            ({"DNA": 1, "D": 1}, {"DNA.D": 1}),
            ({"DNA.D": 1}, {"DNA": 1, "D": 1}),
            ({"DNA.D": 1, "D": 1}, {"DNA.2D": 1}),
            ({"DNA.2D": 1}, {"DNA.D": 1, "D": 1}),
            ({"M": 2}, {"D": 1}),
            ({"D": 1}, {"M": 2}),
        ],
        [0.043, 0.0007, 0.0715, 0.0039, 0.0199, 0.479, 0.000199, 8.77e-12, 0.083, 0.5],
    )


@dataclass(frozen=True)
class Preset:
    network: ReactionNetwork
    x0: tuple[int, ...]
    T: float
    species: int
    threshold: int


def preset(name: str) -> Preset:
    """Built-in experiment setups: network, initial state, horizon and rare event."""
    if name == "michaelis-menten":
        return Preset(michaelis_menten(), (100, 100, 0, 0), 1.0, species=2, threshold=22)
    if name == "goutsias":
        return Preset(goutsias(), (2, 6, 0, 0, 2, 0), 1.0, species=1, threshold=8)
    raise KeyError(f"unknown preset {name!r}; choose 'michaelis-menten' or 'goutsias'")


PRESETS = ("michaelis-menten", "goutsias")
