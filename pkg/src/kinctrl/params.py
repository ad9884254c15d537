"""Model constants, validation, and the shared scalar functions used by every solver.

All parameter containers are frozen dataclasses: they validate at construction
and are safe to share across workers.  Solver entry points assume validated
parameters and do not re-check.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

# Below this |delta| the growth law switches to its logarithmic (Gompertz)
# limit; avoids catastrophic cancellation in ((x/m)^delta - 1) / delta.
GOMPERTZ_DELTA_EPS = 1e-10


class Strategy(Enum):
    """Which transition rule steers the contact dynamics."""

    UNCONTROLLED = "uncontrolled"
    ADDITIVE_A = "additive_a"
    INTERACTION_B = "interaction_b"


class ClosureKind(Enum):
    """Equilibrium profile used to close the macroscopic moment hierarchy.

    GAMMA corresponds to the slim-tailed equilibrium (delta = +1),
    INVERSE_GAMMA to the power-law-tailed one (delta = -1), and DIRAC to the
    zero-variance limit that collapses onto the classical SIR model.
    """

    GAMMA = "gamma"
    INVERSE_GAMMA = "inverse_gamma"
    DIRAC = "dirac"


@dataclass(frozen=True)
class KineticParams:
    """Constants of the contact-formation dynamics.

    alpha   : growth rate constant (> 0)
    sigma2  : variance scale of the multiplicative noise (> 0)
    delta   : tail exponent in [-1, 1]; +1 gives slim tails, -1 power-law tails
    epsilon : quasi-invariant interaction scale (> 0)
    tau     : time scale separating contact dynamics from epidemic exchange (> 0)
    """

    alpha: float
    sigma2: float
    delta: float
    epsilon: float = 0.01
    tau: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if not -1.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [-1, 1], got {self.delta}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not np.isfinite(self.alpha / self.sigma2):
            raise ValueError("alpha / sigma2 must be finite")

    @property
    def lam(self) -> float:
        """Tail-shape parameter alpha / sigma2 (always derived, never set)."""
        return self.alpha / self.sigma2


@dataclass(frozen=True)
class EpidemicParams:
    """Transmission weights and recovery rate.

    betas  : ordered weights (beta_1, ..., beta_L) coupling the incidence to
             the first L moments of the infected contact distribution
    gamma_i: recovery rate (> 0)
    beta0  : optional contact-independent transmission weight (homogeneous
             mixing term); 0 disables it
    """

    betas: tuple[float, ...]
    gamma_i: float
    beta0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if any(b < 0 for b in self.betas):
            raise ValueError(f"all betas must be >= 0, got {self.betas}")
        if self.beta0 < 0:
            raise ValueError(f"beta0 must be >= 0, got {self.beta0}")
        if not self.gamma_i > 0:
            raise ValueError(f"gamma_i must be > 0, got {self.gamma_i}")

    @property
    def order(self) -> int:
        """Highest contact moment entering the incidence (L)."""
        return len(self.betas)


@dataclass(frozen=True)
class ControlSpec:
    """Control strategy with its penalization weight and contact target.

    nu       : quadratic penalization on the control effort (> 0 when active)
    x_target : contact number the control steers toward (>= 0)
    """

    strategy: Strategy = Strategy.UNCONTROLLED
    nu: float = 0.0
    x_target: float = 0.0

    def __post_init__(self):
        if self.strategy is not Strategy.UNCONTROLLED and not self.nu > 0:
            raise ValueError(f"nu must be > 0 for strategy {self.strategy}, got {self.nu}")
        if self.x_target < 0:
            raise ValueError(f"x_target must be >= 0, got {self.x_target}")

    @classmethod
    def uncontrolled(cls) -> "ControlSpec":
        return cls(Strategy.UNCONTROLLED)

    @classmethod
    def additive(cls, nu: float, x_target: float) -> "ControlSpec":
        return cls(Strategy.ADDITIVE_A, nu, x_target)

    @classmethod
    def interaction(cls, nu: float, x_target: float) -> "ControlSpec":
        return cls(Strategy.INTERACTION_B, nu, x_target)

    @property
    def active(self) -> bool:
        return self.strategy is not Strategy.UNCONTROLLED

    def micro_scaled(self, epsilon: float) -> "ControlSpec":
        """Penalization rescaled (nu -> epsilon * nu) for particle simulations.

        The particle transition rules and the mesoscopic drift-diffusion
        operators agree in the small-epsilon limit only under this rescaling,
        so particle runs that target a mesoscopic penalization nu must use
        the scaled spec.
        """
        if not self.active:
            return self
        return replace(self, nu=self.nu * epsilon)


def growth_rate(x, m: float, p: KineticParams):
    """Relative growth rate of the contact number at x given reference mean m.

    Returns (alpha / (2 delta)) * ((x/m)^delta - 1); in the |delta| -> 0 limit
    this degenerates to the logarithmic law (alpha/2) * ln(x/m).  Strictly
    increasing in x and zero exactly at x = m.

    At x = 0 the value is -inf for delta < 0 and for the logarithmic branch;
    callers must guard that sentinel.
    """
    if not m > 0:
        raise ValueError(f"reference mean must be > 0, got {m}")
    x_arr = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        if abs(p.delta) < GOMPERTZ_DELTA_EPS:
            out = 0.5 * p.alpha * np.log(x_arr / m)
        else:
            out = (p.alpha / (2.0 * p.delta)) * ((x_arr / m) ** p.delta - 1.0)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def growth_rate_times_x(x, m: float, p: KineticParams):
    """growth_rate(x, m) * x, fused so the x = 0 limit is finite.

    For delta < 0 the product (x/m)^delta * x stays finite as x -> 0 even
    though the rate itself diverges; solvers use this form on grids and
    particle arrays that may contain zeros.
    """
    if not m > 0:
        raise ValueError(f"reference mean must be > 0, got {m}")
    x_arr = np.asarray(x, dtype=float)
    if abs(p.delta) < GOMPERTZ_DELTA_EPS:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 0.5 * p.alpha * np.where(x_arr > 0, x_arr * np.log(x_arr / m), 0.0)
    else:
        out = (p.alpha / (2.0 * p.delta)) * (
            x_arr ** (1.0 + p.delta) / m**p.delta - x_arr
        )
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def collision_kernel(x, p: KineticParams):
    """Interaction-frequency weight x^(-(1+delta)/2).

    Identically 1 for delta = -1 (constant-rate interactions).  For
    delta > -1 the weight diverges at x = 0, so x must be positive there.
    """
    if p.delta == -1.0:
        if np.isscalar(x) or np.ndim(x) == 0:
            return 1.0
        return np.ones_like(np.asarray(x, dtype=float))
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise ValueError("collision_kernel requires x > 0 for delta > -1")
    out = x_arr ** (-(1.0 + p.delta) / 2.0)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def moment_ratio(lam: float, delta: float) -> float:
    """Second-to-first-moment ratio ((lam+delta)/lam)^delta of the closure profile.

    Exceeds 1 for every valid input; delta must be +1 or -1, and lam > 1 is
    required at delta = -1 for the second moment to exist.
    """
    if delta not in (-1.0, 1.0):
        raise ValueError(f"moment_ratio is defined for delta = +/-1, got {delta}")
    if not lam > 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    if delta == -1.0 and lam <= 1.0:
        raise ValueError(f"lam must exceed 1 for delta = -1, got {lam}")
    return ((lam + delta) / lam) ** delta
