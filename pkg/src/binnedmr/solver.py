"""Blockwise proximal gradient descent for the penalized binned likelihood.

The objective is

    F(alpha, beta, gamma) = L(alpha, beta, gamma)
                            + lam * sum_j ||beta_j,:||_2
                            + rho / 2 * sum_k ||gamma_k||_F^2

where L is the scaled negative log-likelihood.  Each iteration updates
beta (group soft-thresholding), then every gamma_k (ridge shrinkage), then
alpha (plain gradient step), each with its own backtracking line search on
the quadratic majorizer, so the objective never increases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .binning import DatasetCollection, validate_binning
from .likelihood import Coefficients, rowwise_nll_and_residual

__all__ = [
    "SolverConfig",
    "FitResult",
    "SolverState",
    "ConvergenceError",
    "NumericalError",
    "InvalidCollectionError",
    "prox_group_rows",
    "update_beta",
    "update_gamma",
    "update_alpha",
    "objective",
    "fit",
    "fit_null_model",
    "lipschitz_step_bound",
]

logger = logging.getLogger(__name__)

# absolute slack (relative to 1 + |L|) in the majorization test
_MM_SLACK = 64 * np.finfo(float).eps
_STALL_ITERS = 50


class InvalidCollectionError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(str(v) for v in self.violations[:5])
        if len(self.violations) > 5:
            msg += f" (+{len(self.violations) - 5} more)"
        super().__init__(f"invalid dataset collection: {msg}")


class ConvergenceError(RuntimeError):
    pass


class NumericalError(FloatingPointError):
    """Non-finite objective; ``coeffs`` holds the offending iterate."""

    def __init__(self, message, coeffs=None, iteration=None):
        super().__init__(message)
        self.coeffs = coeffs
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    """Penalty weights and iteration control.

    A fit has converged when the relative objective change drops below
    ``tol`` and, in the same iteration, no entry of the proximal gradient
    mapping (block displacement divided by its step) exceeds ``kkt_tol``.
    Steps restart each iteration at twice the last accepted step, capped at
    ``step_max``.

    ``init`` is ``"null"`` (beta = 0 with alpha and gamma at the fitted
    beta-free model), ``"zeros"``, or a :class:`Coefficients` warm start.
    """

    lam: float = 0.0
    rho: float = 0.0
    max_iter: int = 2000
    tol: float = 1e-8
    step_init: float = 1.0
    step_max: float = 1e3
    kkt_tol: float = 1e-6
    shrink: float = 0.5
    max_backtracks: int = 50
    init: Union[str, Coefficients] = "null"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.rho >= 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must be in (0, 1), got {self.shrink}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if not self.kkt_tol > 0:
            raise ValueError(f"kkt_tol must be > 0, got {self.kkt_tol}")
        if self.max_iter < 1 or self.max_backtracks < 1:
            raise ValueError("max_iter and max_backtracks must be positive")
        if not 0 < self.step_init <= self.step_max:
            raise ValueError("need 0 < step_init <= step_max")
        if isinstance(self.init, str) and self.init not in ("null", "zeros"):
            raise ValueError(f"unknown init {self.init!r}")

    def replace(self, **changes) -> "SolverConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass
class FitResult:
    coeffs: Coefficients
    objective_trace: list
    converged: bool
    iterations: int
    lam: float
    rho: float
    status: str = "converged"
    steps: dict = field(default_factory=dict)

    @property
    def active_rows(self) -> np.ndarray:
        return self.coeffs.active_rows()

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def prox_group_rows(nu: np.ndarray, threshold: float) -> np.ndarray:
    """Row-wise group soft-thresholding.

    Returns the minimizer of ``0.5 ||B - nu||_F^2 + threshold * sum_j ||B_j||_2``.
    Rows whose norm does not exceed ``threshold`` come back exactly zero.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    nu = np.asarray(nu, dtype=float)
    norms = np.sqrt(np.einsum("ij,ij->i", nu, nu))
    keep = norms > threshold
    scale = np.zeros_like(norms)
    np.divide(threshold, norms, out=scale, where=keep)
    scale = 1.0 - scale
    return np.where(keep[:, None], nu * scale[:, None], 0.0)


def lipschitz_step_bound(collection: DatasetCollection) -> float:
    """Conservative beta step ``N / (sqrt(|C|) * sum_k ||X_k||_F^2)``."""
    fro = sum(float(np.sum(ds.X * ds.X)) for ds in collection.datasets)
    if fro == 0:
        return np.inf
    return collection.N / (np.sqrt(len(collection.categories)) * fro)


class SolverState:
    """Current iterate plus cached linear predictors and residuals.

    Datasets are stacked row-wise so the beta and alpha blocks are single
    matrix operations; ``slices[k]`` selects dataset k's rows.  Cached at the
    current iterate: ``X beta``, the stacked ``Z_k gamma_k``, per-row NLL and
    the residual ``P - C``.
    """

    def __init__(self, collection: DatasetCollection, coeffs: Coefficients,
                 lam: float = 0.0, rho: float = 0.0):
        self.collection = collection
        self.lam = float(lam)
        self.rho = float(rho)
        self.N = collection.N
        C = len(collection.categories)
        bounds = np.cumsum([0] + [ds.n for ds in collection.datasets])
        self.slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        # column-major so active-column gathers copy contiguous blocks
        self.X = np.asfortranarray(np.vstack([ds.X for ds in collection.datasets]))
        self.mask = np.vstack([collection.bin_mask(k) for k in range(collection.K)])
        self.singleton = self.mask.sum(axis=1) == 1
        self.Z = [ds.Z for ds in collection.datasets]

        self.alpha = coeffs.alpha.copy()
        self.beta = coeffs.beta.copy()
        self.has_gamma = collection.r > 0
        if self.has_gamma:
            if coeffs.gamma:
                if len(coeffs.gamma) != collection.K or coeffs.r != collection.r:
                    raise ValueError("initial gamma does not match the collection")
                self.gamma = [g.copy() for g in coeffs.gamma]
            else:
                self.gamma = [np.zeros((collection.r, C)) for _ in range(collection.K)]
        else:
            self.gamma = []
        self.XB = self.xb(self.beta)
        self.ZG = np.zeros((self.N, C))
        for k, g in enumerate(self.gamma):
            self.ZG[self.slices[k]] = self.Z[k] @ g
        self.row_nll, self.R = self.evaluate(self.eta())

    def xb(self, beta):
        active = np.flatnonzero(np.any(beta != 0, axis=1))
        if active.size == beta.shape[0]:
            return self.X @ beta
        if active.size == 0:
            return np.zeros((self.N, beta.shape[1]))
        return self.X[:, active] @ beta[active]

    def eta(self, XB=None, alpha=None):
        e = (self.XB if XB is None else XB) + (self.alpha if alpha is None else alpha)
        if self.has_gamma:
            e += self.ZG
        return e

    def evaluate(self, eta, rows=slice(None)):
        return rowwise_nll_and_residual(eta, self.mask[rows], self.singleton[rows])

    @property
    def coeffs(self) -> Coefficients:
        return Coefficients(self.alpha.copy(), self.beta.copy(),
                            tuple(g.copy() for g in self.gamma))

    def loss(self) -> float:
        return float(self.row_nll.sum()) / self.N

    def penalty(self, beta=None, gamma=None) -> float:
        beta = self.beta if beta is None else beta
        gamma = self.gamma if gamma is None else gamma
        pen = self.lam * float(np.sqrt(np.einsum("ij,ij->i", beta, beta)).sum())
        if gamma:
            pen += 0.5 * self.rho * sum(float(np.sum(g * g)) for g in gamma)
        return pen

    def objective(self) -> float:
        return self.loss() + self.penalty()

    def grad_beta(self) -> np.ndarray:
        return self.X.T @ self.R / self.N

    def grad_gamma(self, k: int) -> np.ndarray:
        return self.Z[k].T @ self.R[self.slices[k]] / self.N

    def grad_alpha(self) -> np.ndarray:
        return self.R.sum(axis=0) / self.N


def update_beta(state: SolverState, step: float) -> np.ndarray:
    """Proximal gradient step on beta with step size ``step``."""
    nu = state.beta - step * state.grad_beta()
    return prox_group_rows(nu, step * state.lam)


def update_gamma(state: SolverState, steps) -> list:
    """Ridge-shrunk gradient step on every gamma_k; ``steps`` is per dataset."""
    steps = np.broadcast_to(np.asarray(steps, dtype=float), (len(state.gamma),))
    return [_gamma_step(state, k, s) for k, s in enumerate(steps)]


def _gamma_step(state, k, s):
    return (state.gamma[k] - s * state.grad_gamma(k)) / (1.0 + s * state.rho)


def update_alpha(state: SolverState, step: float) -> np.ndarray:
    return state.alpha - step * state.grad_alpha()


def objective(coeffs: Coefficients, collection: DatasetCollection,
              lam: float, rho: float) -> float:
    """Penalized objective ``F`` at ``coeffs``."""
    return SolverState(collection, coeffs, lam, rho).objective()


def _accepts(L_new, L_old, lin, dist2, s):
    """Majorization test ``L_new <= L_old + <grad, d> + ||d||^2 / (2 s)``."""
    return L_new <= L_old + lin + dist2 / (2.0 * s) + _MM_SLACK * (1.0 + abs(L_old))


def _gmap(d, s):
    """Largest entry of the proximal gradient mapping ``d / s``."""
    return float(np.max(np.abs(d), initial=0.0)) / s


def _beta_block(state: SolverState, s: float, cfg: SolverConfig):
    L_old = state.loss()
    g = state.grad_beta()
    for _ in range(cfg.max_backtracks):
        beta_new = prox_group_rows(state.beta - s * g, s * state.lam)
        d = beta_new - state.beta
        XB = state.xb(beta_new)
        row_nll, R = state.evaluate(state.eta(XB=XB))
        L_new = float(row_nll.sum()) / state.N
        if _accepts(L_new, L_old, float(np.sum(g * d)), float(np.sum(d * d)), s):
            state.beta, state.XB, state.row_nll, state.R = beta_new, XB, row_nll, R
            return s, _gmap(d, s)
        s *= cfg.shrink
    return None


def _gamma_block(state: SolverState, k: int, s: float, cfg: SolverConfig):
    rows = state.slices[k]
    Z = state.Z[k]
    L_old = float(state.row_nll[rows].sum()) / state.N
    g = state.grad_gamma(k)
    base = state.XB[rows] + state.alpha
    for _ in range(cfg.max_backtracks):
        gamma_new = (state.gamma[k] - s * g) / (1.0 + s * state.rho)
        d = gamma_new - state.gamma[k]
        ZG = Z @ gamma_new
        row_nll, R = state.evaluate(base + ZG, rows)
        L_new = float(row_nll.sum()) / state.N
        if _accepts(L_new, L_old, float(np.sum(g * d)), float(np.sum(d * d)), s):
            state.gamma[k] = gamma_new
            state.ZG[rows] = ZG
            state.row_nll[rows] = row_nll
            state.R[rows] = R
            return s, _gmap(d, s)
        s *= cfg.shrink
    return None


def _alpha_block(state: SolverState, s: float, cfg: SolverConfig):
    L_old = state.loss()
    g = state.grad_alpha()
    gg = float(g @ g)
    for _ in range(cfg.max_backtracks):
        alpha_new = state.alpha - s * g
        row_nll, R = state.evaluate(state.eta(alpha=alpha_new))
        L_new = float(row_nll.sum()) / state.N
        if _accepts(L_new, L_old, -s * gg, s * s * gg, s):
            state.alpha, state.row_nll, state.R = alpha_new, row_nll, R
            return s, float(np.max(np.abs(g), initial=0.0))
        s *= cfg.shrink
    return None


def _check_collection(collection: DatasetCollection):
    violations = validate_binning(collection)
    if violations:
        raise InvalidCollectionError(violations)


def _initial_coeffs(collection: DatasetCollection, cfg: SolverConfig) -> Coefficients:
    C = len(collection.categories)
    if isinstance(cfg.init, Coefficients):
        init = cfg.init
        if init.n_categories != C or init.p != collection.p:
            raise ValueError(
                f"warm start has shape (p={init.p}, C={init.n_categories}), "
                f"collection needs (p={collection.p}, C={C})"
            )
        if collection.r == 0 and init.gamma:
            init = init.without_batch()
        return init
    zeros = Coefficients.for_collection(collection)
    if cfg.init == "zeros" or cfg.init is None:
        return zeros
    return fit_null_model(collection, cfg.rho).coeffs


def _run(state: SolverState, cfg: SolverConfig, update_beta_block: bool,
         grad_tol: float | None = None, callback: Callable | None = None) -> FitResult:
    K = state.collection.K
    do_beta = update_beta_block and state.beta.shape[0] > 0
    s_beta = s_alpha = cfg.step_init
    s_gamma = [cfg.step_init] * K
    F = state.objective()
    if not np.isfinite(F):
        raise NumericalError("non-finite objective at the initial iterate", state.coeffs, 0)
    trace = [F]
    status, converged, it = "max_iter", False, 0
    best_g, best_it = np.inf, 0

    for it in range(1, cfg.max_iter + 1):
        failed = None
        gmap = 0.0
        if do_beta:
            acc = _beta_block(state, min(cfg.step_max, 2 * s_beta), cfg)
            if acc is None:
                failed = "beta"
            else:
                s_beta, gm = acc
                gmap = max(gmap, gm)
        if state.has_gamma and failed is None:
            for k in range(K):
                acc = _gamma_block(state, k, min(cfg.step_max, 2 * s_gamma[k]), cfg)
                if acc is None:
                    failed = f"gamma[{k}]"
                    break
                s_gamma[k], gm = acc
                gmap = max(gmap, gm)
        if failed is None:
            acc = _alpha_block(state, min(cfg.step_max, 2 * s_alpha), cfg)
            if acc is None:
                failed = "alpha"
            else:
                s_alpha, gm = acc
                gmap = max(gmap, gm)

        F_new = state.objective()
        if not np.isfinite(F_new):
            raise NumericalError(f"non-finite objective at iteration {it}",
                                 state.coeffs, it)
        trace.append(F_new)
        if callback is not None:
            callback(it, state)
        if failed is not None:
            status = f"line_search_failed:{failed}"
            logger.warning("line search exhausted on block %s at iteration %d", failed, it)
            break
        if grad_tol is not None:
            gmax = float(np.max(np.abs(state.grad_alpha()), initial=0.0))
            for k in range(len(state.gamma)):
                gk = state.grad_gamma(k) + state.rho * state.gamma[k]
                gmax = max(gmax, float(np.max(np.abs(gk), initial=0.0)))
            if gmax < grad_tol:
                status, converged = "converged", True
                break
            # below the loss's rounding level the line search cannot see
            # overshoot, so the gradient plateaus; stop there
            if gmax < best_g * 0.5:
                best_g, best_it = gmax, it
            elif it - best_it >= _STALL_ITERS:
                status = "stalled"
                break
        elif abs(F - F_new) / (1.0 + abs(F)) < cfg.tol and gmap < cfg.kkt_tol:
            status, converged = "converged", True
            break
        F = F_new

    coeffs = Coefficients(state.alpha, state.beta, tuple(state.gamma)).centered()
    return FitResult(
        coeffs=coeffs,
        objective_trace=trace,
        converged=converged,
        iterations=it,
        lam=state.lam,
        rho=state.rho,
        status=status,
        steps={"beta": s_beta, "alpha": s_alpha, "gamma": list(s_gamma)},
    )


def fit(collection: DatasetCollection, config: SolverConfig | None = None,
        callback: Callable | None = None, **overrides) -> FitResult:
    """Minimize the penalized objective on ``collection``.

    ``callback(iteration, state)`` is called after every full iteration.
    Keyword overrides are applied to ``config``.
    """
    cfg = (config or SolverConfig()).replace(**overrides) if overrides else (config or SolverConfig())
    _check_collection(collection)
    init = _initial_coeffs(collection, cfg)
    state = SolverState(collection, init, cfg.lam, cfg.rho)
    return _run(state, cfg, update_beta_block=True, callback=callback)


def fit_null_model(collection: DatasetCollection, rho: float = 0.0,
                   grad_tol: float = 1e-10, max_iter: int = 20000) -> FitResult:
    """Fit alpha and gamma with beta frozen at zero.

    Stops once every entry of the alpha and gamma gradients of ``F`` falls
    below ``grad_tol`` in absolute value, or once that gradient has stopped
    shrinking (status ``"stalled"``), which happens at the rounding floor of
    the loss.
    """
    _check_collection(collection)
    cfg = SolverConfig(lam=0.0, rho=rho, max_iter=max_iter, init="zeros")
    state = SolverState(collection, Coefficients.for_collection(collection), 0.0, rho)
    res = _run(state, cfg, update_beta_block=False, grad_tol=grad_tol)
    if res.status == "max_iter":
        logger.warning("null model stopped without reaching grad_tol (%s)", res.status)
    return res
