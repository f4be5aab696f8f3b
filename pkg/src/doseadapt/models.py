"""Candidate dose-response models: means, gradients and the MED functional.

Every model mean decomposes as ``f(d) = theta0 + theta1 * f0(d, theta_nl)``
where ``f0`` carries the shape and ``(theta0, theta1)`` enter linearly. The
MED of a model is the smallest dose in the study range whose mean response
exceeds a reference response by the clinical relevance margin ``delta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit


class Shape(str, Enum):
    EMAX = "emax"
    LOGISTIC = "logistic"
    SCALED_BETA = "scaled-beta"
    LINEAR = "linear"


#: number of nonlinear (shape) parameters per family
N_NONLINEAR = {
    Shape.EMAX: 1,
    Shape.LOGISTIC: 2,
    Shape.SCALED_BETA: 2,
    Shape.LINEAR: 0,
}

#: integer codes shared with the compiled kernels
SHAPE_CODE = {
    Shape.LINEAR: 0,
    Shape.EMAX: 1,
    Shape.LOGISTIC: 2,
    Shape.SCALED_BETA: 3,
}


class MedGradientError(ValueError):
    """MED gradient undefined: no MED, boundary MED, or tangential crossing."""


@dataclass(frozen=True)
class DoseResponseModel:
    """One candidate model with full parameter vector (theta0, theta1, theta_nl)."""

    shape: Shape
    theta_linear: Tuple[float, float]
    theta_nonlinear: Tuple[float, ...] = ()
    scal: float = 60.0  # scaled-beta dose scaling constant only

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        object.__setattr__(self, "theta_linear", tuple(float(v) for v in self.theta_linear))
        object.__setattr__(self, "theta_nonlinear", tuple(float(v) for v in self.theta_nonlinear))
        p = N_NONLINEAR[self.shape]
        if len(self.theta_linear) != 2:
            raise ValueError("theta_linear must be (theta0, theta1)")
        if len(self.theta_nonlinear) != p:
            raise ValueError(f"{self.shape.value} needs {p} nonlinear parameters, "
                             f"got {len(self.theta_nonlinear)}")
        if self.shape in (Shape.EMAX, Shape.LOGISTIC, Shape.SCALED_BETA):
            if any(v <= 0.0 for v in self.theta_nonlinear):
                raise ValueError(f"{self.shape.value} nonlinear parameters must be positive")
        if self.shape is Shape.SCALED_BETA and self.scal <= 0.0:
            raise ValueError("scal must be positive")

    @property
    def theta0(self) -> float:
        return self.theta_linear[0]

    @property
    def theta1(self) -> float:
        return self.theta_linear[1]

    @property
    def n_params(self) -> int:
        return 2 + len(self.theta_nonlinear)

    def theta(self) -> np.ndarray:
        """Full parameter vector (theta0, theta1, theta_nl...)."""
        return np.array(self.theta_linear + self.theta_nonlinear, dtype=float)

    def replace_theta(self, theta: Sequence[float]) -> "DoseResponseModel":
        theta = [float(v) for v in theta]
        return DoseResponseModel(self.shape, (theta[0], theta[1]), tuple(theta[2:]), self.scal)


@dataclass(frozen=True)
class ParameterBounds:
    """Box bounds for the nonlinear parameters."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise ValueError("bound vectors differ in length")
        for lo, hi in zip(self.lower, self.upper):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError("bounds must be finite with lower < upper")

    def __len__(self) -> int:
        return len(self.lower)

    def contains(self, point: Sequence[float], strict: bool = True) -> bool:
        if strict:
            return all(lo < x < hi for x, lo, hi in zip(point, self.lower, self.upper))
        return all(lo <= x <= hi for x, lo, hi in zip(point, self.lower, self.upper))

    def clip_inside(self, point: Sequence[float], margin: float = 1e-9) -> Tuple[float, ...]:
        out = []
        for x, lo, hi in zip(point, self.lower, self.upper):
            eps = margin * (hi - lo)
            out.append(min(max(float(x), lo + eps), hi - eps))
        return tuple(out)


@dataclass(frozen=True)
class MedSpec:
    """Clinical relevance margin and dose range defining the MED.

    ``placebo_ref`` overrides the reference response: when set, the MED
    threshold is ``placebo_ref + delta`` instead of the model's own placebo
    response ``f(d1) + delta``. Table-style "true MED" values for models whose
    intercept was calibrated to a nominal placebo effect use the override.
    """

    delta: float
    dose_range: Tuple[float, float]
    placebo_ref: Optional[float] = None

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        lo, hi = self.dose_range
        if not hi > lo:
            raise ValueError("dose_range must be nonempty")
        object.__setattr__(self, "dose_range", (float(lo), float(hi)))


# ---------------------------------------------------------------------------
# shape functions, broadcast over a grid of nonlinear parameters
# ---------------------------------------------------------------------------

def shape_grid(shape: Shape, theta_nl: np.ndarray, d: np.ndarray, scal: float = 60.0) -> np.ndarray:
    """f0 values on a (n_points, n_doses) grid.

    theta_nl has one parameter vector per row; d is the dose vector.
    """
    theta_nl = np.atleast_2d(np.asarray(theta_nl, dtype=float))
    d = np.asarray(d, dtype=float)
    if shape is Shape.LINEAR:
        return np.broadcast_to(d, (theta_nl.shape[0], d.size)).copy()
    if shape is Shape.EMAX:
        t2 = theta_nl[:, 0][:, None]
        return d / (t2 + d)
    if shape is Shape.LOGISTIC:
        t2 = theta_nl[:, 0][:, None]
        t3 = theta_nl[:, 1][:, None]
        return expit((d - t2) / t3)
    if shape is Shape.SCALED_BETA:
        a = theta_nl[:, 0][:, None]
        b = theta_nl[:, 1][:, None]
        x = d / scal
        lnB = (a + b) * np.log(a + b) - a * np.log(a) - b * np.log(b)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(lnB + a * np.log(x) + b * np.log1p(-x))
        out = np.where((x <= 0.0) | (x >= 1.0), 0.0, out)
        return out
    raise ValueError(f"unknown shape {shape!r}")


def _validate_dose(model: DoseResponseModel, d: np.ndarray) -> None:
    if np.any(d < 0.0):
        raise ValueError("dose must be nonnegative")
    if model.shape is Shape.SCALED_BETA and np.any(d > model.scal):
        raise ValueError(f"scaled-beta model is defined on [0, {model.scal}]")


def eval_shape(model: DoseResponseModel, d):
    """f0(d, theta_nl) for a scalar or array dose."""
    d_arr = np.atleast_1d(np.asarray(d, dtype=float))
    _validate_dose(model, d_arr)
    out = shape_grid(model.shape, np.asarray(model.theta_nonlinear), d_arr, model.scal)[0]
    return float(out[0]) if np.isscalar(d) or np.ndim(d) == 0 else out


def eval_mean(model: DoseResponseModel, d):
    """f(d, theta) = theta0 + theta1 * f0(d)."""
    f0 = eval_shape(model, d)
    return model.theta0 + model.theta1 * f0


def shape_gradient(model: DoseResponseModel, d) -> np.ndarray:
    """d f0 / d theta_nl, one row per dose, one column per nonlinear parameter."""
    d_arr = np.atleast_1d(np.asarray(d, dtype=float))
    _validate_dose(model, d_arr)
    t = model.theta_nonlinear
    if model.shape is Shape.LINEAR:
        return np.zeros((d_arr.size, 0))
    if model.shape is Shape.EMAX:
        t2 = t[0]
        return (-d_arr / (t2 + d_arr) ** 2)[:, None]
    if model.shape is Shape.LOGISTIC:
        t2, t3 = t
        L = expit((d_arr - t2) / t3)
        common = L * (1.0 - L) / t3
        return np.column_stack([-common, -common * (d_arr - t2) / t3])
    if model.shape is Shape.SCALED_BETA:
        a, b = t
        x = d_arr / model.scal
        f0 = shape_grid(model.shape, np.asarray(t), d_arr, model.scal)[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            ga = f0 * (np.log((a + b) / a) + np.log(x))
            gb = f0 * (np.log((a + b) / b) + np.log1p(-x))
        interior = (x > 0.0) & (x < 1.0)
        ga = np.where(interior, ga, 0.0)
        gb = np.where(interior, gb, 0.0)
        return np.column_stack([ga, gb])
    raise ValueError(f"unknown shape {model.shape!r}")


def shape_dose_derivative(model: DoseResponseModel, d: float) -> float:
    """d f0 / d dose at a single dose."""
    t = model.theta_nonlinear
    if model.shape is Shape.LINEAR:
        return 1.0
    if model.shape is Shape.EMAX:
        t2 = t[0]
        return t2 / (t2 + d) ** 2
    if model.shape is Shape.LOGISTIC:
        t2, t3 = t
        L = float(expit((d - t2) / t3))
        return L * (1.0 - L) / t3
    if model.shape is Shape.SCALED_BETA:
        a, b = t
        x = d / model.scal
        if x <= 0.0 or x >= 1.0:
            raise ValueError("dose derivative at the domain boundary")
        f0 = eval_shape(model, d)
        return f0 * (a / x - b / (1.0 - x)) / model.scal
    raise ValueError(f"unknown shape {model.shape!r}")


def gradient(model: DoseResponseModel, d):
    """df/dtheta: components (1, f0(d), theta1 * df0/dtheta_nl).

    Returns a vector for scalar d and an (n_doses, n_params) matrix otherwise.
    """
    d_arr = np.atleast_1d(np.asarray(d, dtype=float))
    f0 = shape_grid(model.shape, np.asarray(model.theta_nonlinear), d_arr, model.scal)[0]
    _validate_dose(model, d_arr)
    g_nl = model.theta1 * shape_gradient(model, d_arr)
    out = np.column_stack([np.ones(d_arr.size), f0, g_nl])
    return out[0] if np.isscalar(d) or np.ndim(d) == 0 else out


# ---------------------------------------------------------------------------
# MED
# ---------------------------------------------------------------------------

_ROOT_TOL = 1e-12


def _bisect_increasing(fn, lo: float, hi: float, target: float, tol: float = _ROOT_TOL) -> float:
    """Root of fn(d) = target for fn increasing on [lo, hi]; fn(lo) < target <= fn(hi)."""
    a, b = lo, hi
    while b - a > tol:
        mid = 0.5 * (a + b)
        if fn(mid) >= target:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def _beta_ascending_end(model: DoseResponseModel, d_hi: float) -> float:
    a, b = model.theta_nonlinear
    mode = model.scal * a / (a + b)
    return min(mode, d_hi)


def med(model: DoseResponseModel, spec: MedSpec) -> Optional[float]:
    """Smallest dose in (d1, dk] whose mean exceeds the reference by delta.

    Returns None when no dose in the range produces the required improvement.
    Uses the generalized inverse of f0 (first entry point for unimodal shapes).
    """
    d_lo, d_hi = spec.dose_range
    ref = spec.placebo_ref if spec.placebo_ref is not None else eval_mean(model, d_lo)
    target = ref + spec.delta
    th1 = model.theta1

    if th1 > 0.0 and model.shape is not Shape.SCALED_BETA:
        # strictly increasing shapes: closed-form generalized inverse
        u = (target - model.theta0) / th1
        t = model.theta_nonlinear
        if model.shape is Shape.EMAX:
            if u >= eval_shape(model, d_hi) or u >= 1.0:
                return None
            root = t[0] * u / (1.0 - u) if u > 0.0 else d_lo
        elif model.shape is Shape.LOGISTIC:
            if u >= eval_shape(model, d_hi) or u >= 1.0:
                return None
            root = t[0] + t[1] * math.log(u / (1.0 - u)) if u > 0.0 else d_lo
        else:  # linear
            if u >= d_hi:
                return None
            root = u
        return max(root, d_lo)

    if th1 > 0.0 and model.shape is Shape.SCALED_BETA:
        # unimodal: first entry point lies on the ascending branch
        end = _beta_ascending_end(model, d_hi)
        if eval_mean(model, end) <= target:
            return None
        if eval_mean(model, d_lo) >= target:
            return d_lo
        return _bisect_increasing(lambda x: eval_mean(model, x), d_lo, end, target)

    # degenerate orientations (theta1 <= 0, fitted artifacts): grid scan + bisection
    grid = np.linspace(d_lo, d_hi, 4001)
    vals = model.theta0 + th1 * shape_grid(model.shape, np.asarray(model.theta_nonlinear),
                                           grid, model.scal)[0]
    above = np.nonzero(vals > target)[0]
    if above.size == 0:
        return None
    i = int(above[0])
    if i == 0:
        return d_lo
    a, b = grid[i - 1], grid[i]
    while b - a > _ROOT_TOL:
        m = 0.5 * (a + b)
        if eval_mean(model, m) > target:
            b = m
        else:
            a = m
    return 0.5 * (a + b)


def med_gradient(model: DoseResponseModel, spec: MedSpec) -> np.ndarray:
    """Gradient of the MED functional b(theta) via the implicit function theorem.

    b solves f(b, theta) = ref + delta, so db/dtheta = -F_theta / F_b with
    F_b = theta1 * f0'(b). Raises MedGradientError when the MED does not exist,
    sits on the range boundary, or the crossing is tangential.
    """
    b = med(model, spec)
    d_lo, d_hi = spec.dose_range
    if b is None:
        raise MedGradientError("MED does not exist in the dose range")
    width = d_hi - d_lo
    if b <= d_lo + 1e-9 * width or b >= d_hi - 1e-9 * width:
        raise MedGradientError("MED lies on the dose-range boundary")
    f_b = model.theta1 * shape_dose_derivative(model, b)
    if abs(f_b) < 1e-12:
        raise MedGradientError("tangential threshold crossing")
    f0_b = eval_shape(model, b)
    g_nl_b = shape_gradient(model, np.array([b]))[0]
    if spec.placebo_ref is None:
        f0_lo = eval_shape(model, d_lo)
        g_nl_lo = shape_gradient(model, np.array([d_lo]))[0]
        f_theta = np.concatenate(([0.0, f0_b - f0_lo], model.theta1 * (g_nl_b - g_nl_lo)))
    else:
        f_theta = np.concatenate(([1.0, f0_b], model.theta1 * g_nl_b))
    return -f_theta / f_b
