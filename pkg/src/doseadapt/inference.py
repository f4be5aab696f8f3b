"""Bayesian interim machinery: NIG priors on the linear parameters, bounded
scaled-beta priors on the shape parameters, lattice-rule marginal likelihoods,
posterior model probabilities and shrinkage parameter estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import betaln, logsumexp

from ._backend import kernels
from .models import (
    N_NONLINEAR,
    SHAPE_CODE,
    DoseResponseModel,
    MedSpec,
    ParameterBounds,
    Shape,
    med,
    shape_grid,
)

GRID_SIZE_1D = 100
GRID_SIZE_2D = 1597

_FIBONACCI = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377, 610, 987,
              1597, 2584, 4181, 6765, 10946]


@dataclass(frozen=True)
class NigPrior:
    """Normal-inverse-gamma prior on ((theta0, theta1), sigma^2).

    theta* | sigma^2 ~ N(mu, sigma^2 V); sigma^2 ~ IG(nu/2, a/2), so the
    sigma^2 mode is a/(nu+2) and the marginal theta* covariance a/(nu-2) V.
    """

    mu: np.ndarray
    v: np.ndarray
    a: float
    nu: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(2)
        v = np.asarray(self.v, dtype=float).reshape(2, 2)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "v", 0.5 * (v + v.T))
        if self.a <= 0 or self.nu <= 0:
            raise ValueError("a and nu must be positive")
        if np.linalg.eigvalsh(self.v).min() <= 0:
            raise ValueError("V must be positive definite")

    @property
    def v_inv(self) -> np.ndarray:
        return np.linalg.inv(self.v)

    @property
    def logdet_v(self) -> float:
        return float(np.linalg.slogdet(self.v)[1])

    @property
    def sigma2_mode(self) -> float:
        return self.a / (self.nu + 2.0)


@dataclass(frozen=True)
class ShapePrior:
    """Independent scaled-beta priors on the nonlinear parameters.

    Each coordinate has bounds (lower, upper), a mode (the initial guess) and
    a curvature S = alpha + beta > 2 controlling the shrinkage strength.
    """

    bounds: ParameterBounds
    mode: Tuple[float, ...]
    curvature: Tuple[float, ...]

    def __post_init__(self):
        mode = tuple(float(v) for v in self.mode)
        s = self.curvature
        if np.isscalar(s):
            s = (float(s),) * len(mode)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "curvature", tuple(float(v) for v in s))
        if len(mode) != len(self.bounds) or len(self.curvature) != len(mode):
            raise ValueError("mode/curvature/bounds lengths differ")
        for m, lo, hi, sv in zip(mode, self.bounds.lower, self.bounds.upper, self.curvature):
            if not lo < m < hi:
                raise ValueError("mode must lie strictly inside the bounds")
            if sv <= 2.0:
                raise ValueError("curvature S must exceed 2")

    @property
    def dim(self) -> int:
        return len(self.mode)

    def alpha_beta(self) -> List[Tuple[float, float]]:
        out = []
        for m, lo, hi, s in zip(self.mode, self.bounds.lower, self.bounds.upper, self.curvature):
            alpha = 1.0 + (m - lo) / (hi - lo) * (s - 2.0)
            out.append((alpha, s - alpha))
        return out

    def log_density(self, points: np.ndarray) -> np.ndarray:
        """Joint log density at each row of `points`."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(pts.shape[0])
        for j, ((alpha, beta), lo, hi) in enumerate(
                zip(self.alpha_beta(), self.bounds.lower, self.bounds.upper)):
            out += beta_log_density(pts[:, j], (lo, hi), None, None, _ab=(alpha, beta))
        return out

    def volume(self) -> float:
        return float(np.prod(np.array(self.bounds.upper) - np.array(self.bounds.lower)))

    def grid(self, n: Optional[int] = None) -> np.ndarray:
        """Lattice abscissas rescaled to the bounding box, one point per row."""
        if n is None:
            n = GRID_SIZE_1D if self.dim == 1 else GRID_SIZE_2D
        u = glp_grid(n, self.dim)
        lo = np.array(self.bounds.lower)
        hi = np.array(self.bounds.upper)
        return lo + u * (hi - lo)


def beta_log_density(x, bounds, mode, curvature, _ab=None):
    """Log density of the scaled beta on `bounds` with the given mode and S.

    alpha and beta solve mode = lower + (alpha-1)/(S-2) * (upper-lower) and
    alpha + beta = S. Returns -inf outside the open interval.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if _ab is not None:
        alpha, beta = _ab
    else:
        s = float(curvature)
        if s <= 2.0:
            raise ValueError("curvature S must exceed 2")
        if not lo < float(mode) < hi:
            raise ValueError("mode must lie strictly inside the bounds")
        alpha = 1.0 + (float(mode) - lo) / (hi - lo) * (s - 2.0)
        beta = s - alpha
    x_arr = np.asarray(x, dtype=float)
    width = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (x_arr - lo) / width
        out = ((alpha - 1.0) * np.log(z) + (beta - 1.0) * np.log1p(-z)
               - betaln(alpha, beta) - math.log(width))
    out = np.where((x_arr > lo) & (x_arr < hi), out, -np.inf)
    return float(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class Dataset:
    """Per-dose sufficient statistics of the accrued responses."""

    doses: Tuple[float, ...]
    counts: np.ndarray
    means: np.ndarray
    sumsq: np.ndarray  # per-dose sum of squared responses

    def __post_init__(self):
        doses = tuple(float(d) for d in self.doses)
        counts = np.asarray(self.counts, dtype=float).copy()
        means = np.asarray(self.means, dtype=float).copy()
        sumsq = np.asarray(self.sumsq, dtype=float).copy()
        if not (len(doses) == counts.size == means.size == sumsq.size):
            raise ValueError("per-dose arrays must align with the dose grid")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        means[counts == 0] = 0.0
        for arr in (counts, means, sumsq):
            arr.flags.writeable = False
        object.__setattr__(self, "doses", doses)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sumsq", sumsq)

    @classmethod
    def empty(cls, doses: Sequence[float]) -> "Dataset":
        k = len(doses)
        return cls(tuple(doses), np.zeros(k), np.zeros(k), np.zeros(k))

    @classmethod
    def from_records(cls, doses: Sequence[float], record_doses, responses) -> "Dataset":
        """Accumulate raw (dose, response) records.

        Per-dose sums run over sorted response values so the statistics are
        bit-identical under any permutation of the records.
        """
        doses = tuple(float(d) for d in doses)
        record_doses = np.asarray(record_doses, dtype=float)
        responses = np.asarray(responses, dtype=float)
        index = {d: i for i, d in enumerate(doses)}
        k = len(doses)
        counts = np.zeros(k)
        means = np.zeros(k)
        sumsq = np.zeros(k)
        for i, d in enumerate(doses):
            sel = np.sort(responses[record_doses == d])
            counts[i] = sel.size
            if sel.size:
                means[i] = sel.sum() / sel.size
                sumsq[i] = float(np.sum(sel * sel))
        unknown = set(np.unique(record_doses)) - set(doses)
        if unknown:
            raise ValueError(f"records contain doses outside the grid: {sorted(unknown)}")
        return cls(doses, counts, means, sumsq)

    def add(self, other: "Dataset") -> "Dataset":
        if self.doses != other.doses:
            raise ValueError("dose grids differ")
        counts = self.counts + other.counts
        with np.errstate(invalid="ignore"):
            means = np.where(counts > 0,
                             (self.counts * self.means + other.counts * other.means)
                             / np.maximum(counts, 1.0), 0.0)
        return Dataset(self.doses, counts, means, self.sumsq + other.sumsq)

    @property
    def n_total(self) -> int:
        return int(round(float(self.counts.sum())))

    @property
    def yty(self) -> float:
        return float(self.sumsq.sum())

    def pooled_variance(self) -> float:
        """Within-dose pooled variance estimate (ANOVA denominator N - k_obs)."""
        observed = self.counts > 0
        df = self.counts.sum() - np.count_nonzero(observed)
        if df <= 0:
            raise ValueError("no degrees of freedom for the pooled variance")
        ss_within = self.yty - float(np.sum(self.counts * self.means ** 2))
        return max(ss_within, 0.0) / df


@dataclass(frozen=True)
class Candidate:
    """One candidate model: shape family, priors, prior model probability."""

    name: str
    shape: Shape
    nig: NigPrior
    shape_prior: Optional[ShapePrior] = None
    prior_prob: float = 1.0
    scal: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        p = N_NONLINEAR[self.shape]
        if p == 0:
            if self.shape_prior is not None:
                raise ValueError(f"{self.shape.value} has no nonlinear parameters")
        else:
            if self.shape_prior is None or self.shape_prior.dim != p:
                raise ValueError(f"{self.shape.value} needs a {p}-dimensional shape prior")
        if self.prior_prob < 0:
            raise ValueError("prior probability must be nonnegative")

    def model_at(self, theta_star: Sequence[float], theta_nl: Sequence[float]) -> DoseResponseModel:
        return DoseResponseModel(self.shape, tuple(theta_star), tuple(theta_nl), self.scal)

    def prior_mode_model(self) -> DoseResponseModel:
        nl = self.shape_prior.mode if self.shape_prior is not None else ()
        return DoseResponseModel(self.shape, tuple(self.nig.mu), nl, self.scal)


@dataclass(frozen=True)
class CandidateSet:
    candidates: Tuple[Candidate, ...]

    def __post_init__(self):
        cands = tuple(self.candidates)
        if not cands:
            raise ValueError("candidate set is empty")
        names = [c.name for c in cands]
        if len(set(names)) != len(names):
            raise ValueError("candidate names must be unique")
        total = sum(c.prior_prob for c in cands)
        if not math.isfinite(total) or total <= 0:
            raise ValueError("prior probabilities must have positive total")
        object.__setattr__(self, "candidates", cands)

    def __iter__(self):
        return iter(self.candidates)

    def __len__(self):
        return len(self.candidates)

    def prior_probs(self) -> np.ndarray:
        p = np.array([c.prior_prob for c in self.candidates], dtype=float)
        return p / p.sum()


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-model marginal likelihoods, probabilities and shrinkage estimates."""

    names: Tuple[str, ...]
    log_marginals: np.ndarray
    probs: np.ndarray
    estimates: Tuple[DoseResponseModel, ...]
    med_estimates: Optional[Tuple[Optional[float], ...]] = None
    sigma2_modes: Optional[np.ndarray] = None

    @property
    def med_exists(self) -> Optional[Tuple[bool, ...]]:
        if self.med_estimates is None:
            return None
        return tuple(m is not None for m in self.med_estimates)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def elicit_nig(model: DoseResponseModel, placebo_mean: float, placebo_var: float,
               maxeff_mean: float, maxeff_var: float, sigma2_mode: float, nu: float,
               dose_max: float) -> NigPrior:
    """Back-transform placebo/maximum-effect moments into an NIG prior.

    With the nonlinear parameters fixed at their prior mode (carried by
    `model`), placebo effect and maximum treatment effect over [0, dose_max]
    are an invertible affine map A of (theta0, theta1). mu = A^-1 (means) and
    V is chosen so the marginal t covariance of theta* equals
    A^-1 diag(vars) A^-T, with a = sigma2_mode * (nu + 2).
    """
    if placebo_var <= 0 or maxeff_var <= 0 or sigma2_mode <= 0:
        raise ValueError("variances and sigma2 mode must be positive")
    if nu <= 2:
        raise ValueError("nu must exceed 2 for finite prior moments")
    f0_lo = _f0(model, 0.0)
    f0_max = _f0_max(model, dose_max)
    effect_range = f0_max - f0_lo
    if abs(effect_range) < 1e-12:
        raise ValueError("flat shape over the dose range: elicitation map is singular")
    a_map = np.array([[1.0, f0_lo], [0.0, effect_range]])
    a_inv = np.linalg.inv(a_map)
    mu = a_inv @ np.array([placebo_mean, maxeff_mean])
    target_cov = a_inv @ np.diag([placebo_var, maxeff_var]) @ a_inv.T
    a = sigma2_mode * (nu + 2.0)
    v = target_cov * (nu - 2.0) / a
    return NigPrior(mu=mu, v=v, a=a, nu=nu)


def _f0(model: DoseResponseModel, d: float) -> float:
    return float(shape_grid(model.shape, np.asarray(model.theta_nonlinear),
                            np.array([d]), model.scal)[0, 0])


def _f0_max(model: DoseResponseModel, dose_max: float) -> float:
    if model.shape is Shape.SCALED_BETA:
        a, b = model.theta_nonlinear
        peak = model.scal * a / (a + b)
        return _f0(model, min(peak, dose_max))
    return _f0(model, dose_max)


def glp_grid(n: int, dim: int) -> np.ndarray:
    """Good-lattice-point abscissas on [0,1]^dim, one point per row.

    dim 1: midpoint rule {(i-0.5)/n}. dim 2: Fibonacci lattice
    {((i-0.5)/n, frac(i*F_{j-1}/F_j))} with n = F_j.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if dim == 1:
        return ((np.arange(1, n + 1) - 0.5) / n)[:, None]
    if dim == 2:
        if n not in _FIBONACCI:
            raise ValueError(f"2D lattices need a Fibonacci size, got {n}")
        gen = _FIBONACCI[_FIBONACCI.index(n) - 1] if n > 1 else 1
        i = np.arange(1, n + 1)
        return np.column_stack([(i - 0.5) / n, (i * gen) % n / n])
    raise ValueError("only 1- and 2-dimensional grids are supported")


def integrated_likelihood(data: Dataset, shape: Shape, theta_nl: Sequence[float],
                          prior: NigPrior, scal: float = 60.0) -> float:
    """Closed-form log of the likelihood with (theta*, sigma^2) marginalized."""
    theta_nl = np.atleast_2d(np.asarray(theta_nl, dtype=float))
    out = kernels.nig_log_marginal_grid(
        SHAPE_CODE[Shape(shape)], theta_nl, scal,
        np.asarray(data.doses, dtype=float), data.counts, data.means, data.yty,
        prior.mu, prior.v_inv, prior.a, prior.nu, prior.logdet_v)
    return float(out[0])


def _grid_log_joint(data: Dataset, cand: Candidate, n_grid: Optional[int] = None):
    """(grid points, log p(y|theta0)+log p(theta0)) for one candidate."""
    sp = cand.shape_prior
    pts = sp.grid(n_grid)
    doses = np.asarray(data.doses, dtype=float)
    log_lik = kernels.nig_log_marginal_grid(
        SHAPE_CODE[cand.shape], pts, cand.scal, doses, data.counts, data.means,
        data.yty, cand.nig.mu, cand.nig.v_inv, cand.nig.a, cand.nig.nu,
        cand.nig.logdet_v)
    return pts, log_lik + sp.log_density(pts)


def _log_marginal(data: Dataset, cand: Candidate, n_grid: Optional[int] = None):
    """Lattice-rule estimate of log integral p(y|theta0) p(theta0) dtheta0."""
    if cand.shape_prior is None:
        ll = integrated_likelihood(data, cand.shape, np.empty((1, 0)), cand.nig, cand.scal)
        return None, None, ll
    pts, log_joint = _grid_log_joint(data, cand, n_grid)
    log_mean = logsumexp(log_joint) - math.log(len(log_joint))
    return pts, log_joint, math.log(cand.shape_prior.volume()) + log_mean


def _conditional_linear(data: Dataset, cand: Candidate, theta_nl: Sequence[float]):
    """Posterior (mu_n, a_n, nu_n) of the NIG given theta0 = theta_nl."""
    prior = cand.nig
    f = shape_grid(cand.shape, np.asarray(theta_nl, dtype=float),
                   np.asarray(data.doses, dtype=float), cand.scal)[0]
    x_w = np.column_stack([data.counts, data.counts * f])
    xtx = np.array([[data.counts.sum(), x_w[:, 1].sum()],
                    [x_w[:, 1].sum(), float(np.sum(data.counts * f * f))]])
    xty = np.array([float(np.sum(data.counts * data.means)),
                    float(np.sum(data.counts * f * data.means))])
    v_n_inv = prior.v_inv + xtx
    rhs = prior.v_inv @ prior.mu + xty
    mu_n = np.linalg.solve(v_n_inv, rhs)
    a_n = prior.a + data.yty + prior.mu @ prior.v_inv @ prior.mu - mu_n @ rhs
    return mu_n, max(float(a_n), 1e-300), prior.nu + float(data.counts.sum())


def shrinkage_estimate(data: Dataset, cand: Candidate, refine: bool = True,
                       n_grid: Optional[int] = None, max_refine_evals: int = 200):
    """Two-stage MAP-style estimate (theta*~, theta0~) for one candidate.

    theta0~ maximizes the marginal posterior p(y|theta0) p(theta0) over the
    lattice abscissas, optionally tightened by a bounded local search;
    conditional on it, theta*~ is the mode (= mean) of the conjugate
    posterior. Returns (model, sigma2_mode_at_estimate).
    """
    if cand.shape_prior is None:
        mu_n, a_n, nu_n = _conditional_linear(data, cand, np.empty(0))
        return cand.model_at(mu_n, ()), a_n / (nu_n + 2.0)
    pts, log_joint = _grid_log_joint(data, cand, n_grid)
    return _shrink_from_grid(data, cand, pts, log_joint, refine, max_refine_evals)


def _shrink_from_grid(data: Dataset, cand: Candidate, pts, log_joint,
                      refine: bool, max_refine_evals: int = 200):
    best = pts[int(np.argmax(log_joint))]

    if refine:
        sp = cand.shape_prior
        doses = np.asarray(data.doses, dtype=float)

        def neg_log_joint(theta_nl):
            ll = kernels.nig_log_marginal_grid(
                SHAPE_CODE[cand.shape], theta_nl[None, :], cand.scal, doses,
                data.counts, data.means, data.yty, cand.nig.mu, cand.nig.v_inv,
                cand.nig.a, cand.nig.nu, cand.nig.logdet_v)[0]
            lp = sp.log_density(theta_nl[None, :])[0]
            return -(ll + lp)

        widths = np.array(sp.bounds.upper) - np.array(sp.bounds.lower)
        res = minimize(neg_log_joint, best, method="Nelder-Mead",
                       bounds=list(zip(sp.bounds.lower, sp.bounds.upper)),
                       options={"maxfev": max_refine_evals,
                                "xatol": 1e-6 * float(widths.min()),
                                "fatol": 1e-9})
        if np.isfinite(res.fun) and res.fun <= -np.max(log_joint):
            best = res.x
    best = cand.shape_prior.bounds.clip_inside(best)
    mu_n, a_n, nu_n = _conditional_linear(data, cand, best)
    return cand.model_at(mu_n, best), a_n / (nu_n + 2.0)


def posterior_model_probs(data: Dataset, candidates: CandidateSet,
                          med_spec: Optional[MedSpec] = None,
                          refine: bool = True) -> PosteriorSummary:
    """Posterior model probabilities plus shrinkage estimates per candidate.

    Marginal likelihoods use the lattice rule over each model's bounded box
    (volume-rescaled mean of the integrand); probabilities normalize
    prior * marginal across the set with log-sum-exp stabilization. The grid
    evaluations are reused for the shrinkage maximization.
    """
    log_marg = np.empty(len(candidates))
    estimates = []
    sigma2_modes = np.empty(len(candidates))
    for i, cand in enumerate(candidates):
        pts, log_joint, lm = _log_marginal(data, cand)
        log_marg[i] = lm
        if cand.shape_prior is None:
            est, s2 = shrinkage_estimate(data, cand, refine=refine)
        else:
            est, s2 = _shrink_from_grid(data, cand, pts, log_joint, refine)
        estimates.append(est)
        sigma2_modes[i] = s2
    if not np.any(np.isfinite(log_marg)):
        raise ValueError("all marginal likelihoods vanished")
    log_post = np.log(candidates.prior_probs()) + log_marg
    probs = np.exp(log_post - logsumexp(log_post))
    probs /= probs.sum()
    med_estimates = None
    if med_spec is not None:
        med_estimates = tuple(med(est, med_spec) for est in estimates)
    return PosteriorSummary(
        names=tuple(c.name for c in candidates),
        log_marginals=log_marg,
        probs=probs,
        estimates=tuple(estimates),
        med_estimates=med_estimates,
        sigma2_modes=sigma2_modes,
    )
