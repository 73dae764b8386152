"""
Tipping-point conservation environment.

The ecosystem state X follows a grazing model with a consumption term that
saturates in X, which makes the system bistable over a band of consumption
intensities m:

    f(X; m) = r X (1 - X/K) - m X^2 / (X^2 + h^2)

The environment degrades by raising m a fixed amount alpha every step.
Management pushes back with a costly action A:

    m' = max(m + alpha - A, 0)
    X' = clip(X + f(X; m') + sigma X xi, 0, 2K),   xi ~ N(0, 1)
    reward = b X - c A^2

Once m passes the upper fold the high branch is gone and X collapses to the
low branch; bringing it back requires pushing m below the lower fold.

The analysis helpers (equilibria, fold points, separatrix, calibration)
operate on the deterministic map and are exported for the `bifurcation`
and `calibrate` commands.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy import optimize

from .decision_process import BoxSpace, EnvConfig, EpisodicEnv
from .errors import CalibrationError, ConfigurationError
from .helpers import log_event

# Targets of the committed calibration: upper fold, lower fold, collapsed state.
DEFAULT_TARGETS = (0.215, 0.165, 0.10)


@dataclass(frozen=True)
class ConservationParams:
    r: float = 0.496
    K: float = 1.64
    h: float = 0.19
    sigma: float = 0.12
    alpha: float = 0.001
    b: float = 1.0
    c: float = 10000.0
    m0: float = 0.19
    x0: float | None = None
    a_max: float = 0.004
    horizon: int = 300
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("r", "K", "h", "alpha", "b", "c", "a_max"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"conservation {name} must be positive, got {value}")
        if not self.sigma >= 0:
            raise ConfigurationError(f"conservation sigma must be non-negative, got {self.sigma}")
        if not self.m0 >= 0:
            raise ConfigurationError(f"conservation m0 must be non-negative, got {self.m0}")
        if self.x0 is not None and not (0 <= self.x0 <= 2 * self.K):
            raise ConfigurationError(f"conservation x0 must lie in [0, 2K], got {self.x0}")
        if not self.a_max > self.alpha:
            raise ConfigurationError(
                f"conservation a_max ({self.a_max}) must exceed alpha ({self.alpha}), "
                "otherwise degradation can never be reversed"
            )
        if int(self.horizon) < 1:
            raise ConfigurationError(f"conservation horizon must be >= 1, got {self.horizon}")
        if not (0 < self.gamma <= 1):
            raise ConfigurationError(f"conservation gamma must lie in (0, 1], got {self.gamma}")

    @property
    def max_state(self) -> float:
        return 2 * self.K

    @property
    def max_parameter(self) -> float:
        # m can rise by at most alpha per step.
        return self.m0 + self.alpha * int(self.horizon)

    def replace(self, **changes) -> "ConservationParams":
        return replace(self, **changes)

    def env_config(self, seed: int = 0) -> EnvConfig:
        return EnvConfig(horizon=int(self.horizon), gamma=float(self.gamma), seed=int(seed))


@dataclass(frozen=True)
class ConservationState:
    X: float
    m: float
    t: int = 0


@dataclass(frozen=True)
class Equilibrium:
    X: float
    stable: bool


def growth(X, m, params: ConservationParams):
    """f(X; m), vectorized over X and m."""
    X = np.asarray(X, dtype=np.float64)
    return params.r * X * (1.0 - X / params.K) - m * X**2 / (X**2 + params.h**2)


def growth_slope(X, m, params: ConservationParams):
    """df/dX."""
    X = np.asarray(X, dtype=np.float64)
    h2 = params.h**2
    return params.r * (1.0 - 2.0 * X / params.K) - m * 2.0 * X * h2 / (X**2 + h2) ** 2


def equilibria(params: ConservationParams, m: float) -> list[Equilibrium]:
    """Non-negative equilibria of the deterministic map at parameter m, ascending.

    Positive equilibria solve the cubic r(1 - X/K)(X^2 + h^2) - m X = 0.
    X = 0 is always an equilibrium and is unstable since f'(0) = r > 0.
    """
    r, K, h2 = params.r, params.K, params.h**2
    coeffs = [-r / K, r, -(r * h2 / K + m), r * h2]
    roots = np.roots(coeffs)
    positive = sorted(
        float(z.real) for z in roots if abs(z.imag) < 1e-10 and z.real > 0
    )
    found = [Equilibrium(X=0.0, stable=False)]
    for X in positive:
        slope = float(growth_slope(X, m, params))
        found.append(Equilibrium(X=X, stable=-2.0 < slope < 0.0))
    return found


def stable_equilibria(params: ConservationParams, m: float) -> list[float]:
    return [eq.X for eq in equilibria(params, m) if eq.stable]


def upper_equilibrium(params: ConservationParams, m: float) -> float:
    """Largest stable equilibrium at m (the high branch while it exists)."""
    stable = stable_equilibria(params, m)
    if not stable:
        raise CalibrationError(f"no stable equilibrium at m={m}")
    return stable[-1]


def _check_bistable(params: ConservationParams) -> None:
    ratio = params.K / params.h
    if not ratio > 3.0 * math.sqrt(3.0):
        raise CalibrationError(
            f"no bistable regime: requires K/h > 3*sqrt(3) ({3 * math.sqrt(3):.4f}), got K/h = {ratio:.4f}"
        )


def fold_states(params: ConservationParams) -> tuple[float, float]:
    """States (X_lower_fold, X_upper_fold) at which equilibria collide.

    Eliminating m from f = 0 and df/dX = 0 leaves 2 X^3 - K X^2 + K h^2 = 0,
    whose two positive roots are the fold states.
    """
    _check_bistable(params)
    K, h2 = params.K, params.h**2
    roots = np.roots([2.0, -K, 0.0, K * h2])
    positive = sorted(float(z.real) for z in roots if abs(z.imag) < 1e-10 and z.real > 0)
    if len(positive) != 2:
        raise CalibrationError(f"expected two positive fold states, found {positive}")
    return positive[0], positive[1]


def _parameter_on_branch(X: float, params: ConservationParams) -> float:
    """The m for which X is an equilibrium."""
    return params.r * (1.0 - X / params.K) * (X**2 + params.h**2) / X


def fold_points(params: ConservationParams) -> tuple[float, float]:
    """(m_upper_fold, m_lower_fold) where the high and low branches end.

    Starts from the closed-form fold states and polishes each (X, m) pair by
    solving f = 0, df/dX = 0 simultaneously.
    """
    folds = []
    for X_guess in fold_states(params):
        m_guess = _parameter_on_branch(X_guess, params)

        def system(v):
            X, m = v
            return [float(growth(X, m, params)) / max(X, 1e-12), float(growth_slope(X, m, params))]

        solution = optimize.root(system, x0=[X_guess, m_guess], method="hybr", tol=1e-14)
        if not solution.success:
            raise CalibrationError(f"fold point solve failed near X={X_guess:.4f}: {solution.message}")
        folds.append(float(solution.x[1]))
    m_lower, m_upper = folds
    if not (m_upper > m_lower > 0):
        raise CalibrationError(
            f"fold points out of order: upper {m_upper:.6f} must exceed lower {m_lower:.6f} > 0"
        )
    return m_upper, m_lower


def post_collapse_state(params: ConservationParams, delta: float = 1e-3) -> float:
    """Low-branch state just past the upper fold."""
    m_upper, _ = fold_points(params)
    return stable_equilibria(params, m_upper + delta)[0]


def separatrix(params: ConservationParams, m: float) -> float | None:
    """Unstable interior equilibrium dividing the two basins, None outside the bistable band."""
    interior = [eq for eq in equilibria(params, m)[1:] if not eq.stable]
    return interior[0].X if interior else None


def collapse_threshold(params: ConservationParams) -> float:
    """State below which a trajectory counts as collapsed.

    The separatrix at m0 when m0 is bistable, otherwise the geometric mean
    of the two fold states.
    """
    boundary = separatrix(params, params.m0)
    if boundary is not None:
        return boundary
    X_lower, X_upper = fold_states(params)
    return math.sqrt(X_lower * X_upper)


def is_collapsed(params: ConservationParams, X) -> np.ndarray | bool:
    threshold = collapse_threshold(params)
    result = np.asarray(X, dtype=np.float64) < threshold
    return bool(result) if result.ndim == 0 else result


def bifurcation_table(params: ConservationParams, m_grid) -> pd.DataFrame:
    """Long-format equilibria along m_grid: columns m, X, stable, branch."""
    rows = []
    for m in np.asarray(m_grid, dtype=np.float64):
        found = equilibria(params, float(m))
        stable = [eq for eq in found if eq.stable]
        for eq in found:
            if eq.X == 0.0:
                branch = "extinct"
            elif not eq.stable:
                branch = "unstable"
            elif len(stable) > 1 and eq is stable[0]:
                branch = "lower"
            elif len(stable) > 1:
                branch = "upper"
            else:
                branch = "upper" if eq.X > fold_states(params)[0] else "lower"
            rows.append({"m": float(m), "X": eq.X, "stable": eq.stable, "branch": branch})
    return pd.DataFrame(rows, columns=["m", "X", "stable", "branch"])


@dataclass(frozen=True)
class CalibrationResult:
    r: float
    K: float
    h: float
    m_upper: float
    m_lower: float
    collapsed_state: float
    residual: float

    def apply(self, params: ConservationParams) -> ConservationParams:
        return params.replace(r=self.r, K=self.K, h=self.h)


def calibrate(
    targets: tuple[float, float, float] = DEFAULT_TARGETS,
    start: ConservationParams | None = None,
    tol: float = 1e-3,
) -> CalibrationResult:
    """Solve for (r, K, h) whose folds and collapsed state hit `targets`.

    `targets` is (m_upper_fold, m_lower_fold, post_collapse_state).
    """
    m_upper_target, m_lower_target, collapsed_target = (float(t) for t in targets)
    if not (m_upper_target > m_lower_target > 0 and collapsed_target > 0):
        raise CalibrationError(f"calibration targets must satisfy m_upper > m_lower > 0, got {targets}")
    start = start or ConservationParams()

    def residuals(v):
        r, K, h = np.exp(v)
        trial = ConservationParams(r=r, K=K, h=h, m0=0.0)
        try:
            m_upper, m_lower = fold_points(trial)
            collapsed = post_collapse_state(trial)
        except CalibrationError:
            return np.full(3, 1.0)
        return np.array([m_upper - m_upper_target, m_lower - m_lower_target, collapsed - collapsed_target])

    fit = optimize.least_squares(
        residuals, x0=np.log([start.r, start.K, start.h]), xtol=1e-12, ftol=1e-12
    )
    r, K, h = (float(v) for v in np.exp(fit.x))
    residual = float(np.max(np.abs(fit.fun)))
    if residual > tol:
        raise CalibrationError(f"calibration did not reach targets {targets}: max residual {residual:.4g}")
    fitted = ConservationParams(r=r, K=K, h=h, m0=0.0)
    m_upper, m_lower = fold_points(fitted)
    result = CalibrationResult(
        r=r, K=K, h=h, m_upper=m_upper, m_lower=m_lower,
        collapsed_state=post_collapse_state(fitted), residual=residual,
    )
    log_event("calibration_finished", r=r, K=K, h=h, m_upper=m_upper, m_lower=m_lower, residual=residual)
    return result


class ConservationEnv(EpisodicEnv):
    """Observation [X, m], action [A] in [0, a_max]."""

    def __init__(self, params: ConservationParams | None = None, seed: int = 0):
        self.params = params or ConservationParams()
        p = self.params
        self.x_start = float(p.x0) if p.x0 is not None else upper_equilibrium(p, p.m0)
        observation_box = BoxSpace(np.array([0.0, 0.0]), np.array([p.max_state, p.max_parameter]))
        action_box = BoxSpace.interval(0.0, p.a_max)
        super().__init__(p.env_config(seed), observation_box=observation_box, action_box=action_box)

    def _initial_state(self) -> ConservationState:
        return ConservationState(X=self.x_start, m=float(self.params.m0), t=0)

    def _dynamics(self, state: ConservationState, action: np.ndarray):
        p = self.params
        A = float(action[0])
        m_next = max(state.m + p.alpha - A, 0.0)
        xi = float(self.np_random.standard_normal())
        X_next = state.X + float(growth(state.X, m_next, p)) + p.sigma * state.X * xi
        X_next = min(max(X_next, 0.0), p.max_state)
        cost = p.c * A**2
        reward = p.b * state.X - cost
        info = {"m": m_next, "cost": cost, "benefit": p.b * state.X}
        return ConservationState(X=X_next, m=m_next, t=state.t + 1), reward, info

    def _observe(self, state: ConservationState) -> np.ndarray:
        return np.array([state.X, state.m], dtype=np.float64)


def make_conservation_env(params: ConservationParams | None = None, seed: int = 0) -> ConservationEnv:
    return ConservationEnv(params, seed=seed)
