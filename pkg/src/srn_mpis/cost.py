"""Operation-count model for building a Markovian projection and running MP-IS."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class UnitCosts:
    """Costs of the primitive operations, in arbitrary units."""

    poisson: float = 1.0      # one Poisson variate
    propensity: float = 1.0   # one propensity-vector evaluation
    polynomial: float | None = None  # one basis polynomial; defaults to #Lambda
    likelihood: float = 1.0   # one likelihood update
    control: float = 1.0      # one control evaluation


def mp_cost_model(n_basis: int, dt: float, M: int, J: int, n_regressed: int, d: int,
                  T: float = 1.0, M_fw: int = 0, units: UnitCosts = UnitCosts(),
                  measured: dict | None = None) -> dict:
    """Detailed and dominant-term operation counts.

    Detailed counts::

        W_TL    = N (C_prop + J C_Poi + d (J + 2))
        C_inner = N M (2 + 2 C_pol) + 3
        W_GS    = L (C_inner + L + 1) + (L - 1) L / 2 (2 L + C_inner)
        W_L2    = N M (L C_pol + R C_prop + L^2 + R L) + R L^3
        W_MP    = M W_TL + W_GS + W_L2
        W_fw    = M_fw N (J C_Poi + C_lik + R C_delta)

    with ``N = T / dt``, ``L = #Lambda`` and ``R = #J_MP``.
    """
    if min(n_basis, J, d) <= 0 or dt <= 0 or T <= 0 or M < 0 or M_fw < 0 or n_regressed < 0:
        raise ValueError("cost-model parameters must be positive")
    N = T / dt
    L = n_basis
    R = n_regressed
    c_pol = float(L) if units.polynomial is None else units.polynomial
    w_tl = N * (units.propensity + J * units.poisson + d * (J + 2))
    c_inner = N * M * (2 + 2 * c_pol) + 3
    w_gs = L * (c_inner + L + 1) + (L - 1) * L / 2 * (2 * L + c_inner)
    w_design = M * N * L * c_pol
    w_rhs = R * M * N * units.propensity
    w_normal = L * L * M * N + R * L * M * N
    w_solve = R * L**3
    w_l2 = w_design + w_rhs + w_normal + w_solve
    w_mp = M * w_tl + w_gs + w_l2
    w_fw = M_fw * N * (J * units.poisson + units.likelihood + R * units.control)
    report = {
        "params": {"n_basis": L, "dt": dt, "T": T, "N": N, "M": M, "M_fw": M_fw, "J": J,
                   "n_regressed": R, "d": d, "units": asdict(units) | {"polynomial": c_pol}},
        "detailed": {"W_TL": w_tl, "C_inner": c_inner, "W_GS": w_gs, "W_L2": w_l2,
                     "W_MP": w_mp, "W_forward": w_fw},
        "dominant": {
            "W_TL": N * J * units.poisson,
            "W_GS": M * N * L**3,
            "W_L2": M * N * (L**2 + R * L),
            "W_forward": w_fw,
        },
        "regime_basis_small": L < 1e-2 * N * M,
    }
    report["dominant"]["W_MP"] = (M * report["dominant"]["W_TL"] + report["dominant"]["W_GS"]
                                  + report["dominant"]["W_L2"])
    if measured:
        report["measured"] = dict(measured)
    return report
