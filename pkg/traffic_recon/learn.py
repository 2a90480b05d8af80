"""
learn.py - Maximum-likelihood hyperparameters from complete historical snapshots

Maximizes the ridge-regularized average log-likelihood

    L(β, η) = Σ β_i⟨x_i⟩ − (η/2)⟨xᵀCx⟩ + (N/2) ln η − βᵀC⁻¹β / (2η)
              − (λ/2)(η² + Σ β_i²)

over β and ln η. C depends only on the network, so it is factorized once per fit
and every C⁻¹β is a pair of triangular solves.

Sign convention: this module ascends the log-likelihood itself. Negating the
gradient gives descent-form expressions whose zero set is the same.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from . import settings
from .errors import ConvergenceError, DataDegeneracyError, ValidationError
from .gmrf import Model
from .road_graph import precision_pattern

logger = logging.getLogger(__name__)

MAX_HALVINGS = 60
TINY_SPREAD = 1e-300
# objective changes below this relative size are treated as ties
ROUNDOFF_SLACK = 4 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Sample averages over K complete snapshots.

    Attributes:
        mean: ⟨x_i⟩ per vertex
        second_moment: ⟨x_i²⟩ per vertex
        edge_moment: ⟨x_i x_j⟩ per edge, aligned with RoadGraph.edges
        count: K
    """
    mean: np.ndarray
    second_moment: np.ndarray
    edge_moment: np.ndarray
    count: int


@dataclass(frozen=True)
class LearnConfig:
    """Gradient-ascent settings; η is always optimized as ln η."""
    lam: float = settings.LEARN_LAMBDA
    step_size: float = settings.LEARN_STEP_SIZE
    max_steps: int = settings.LEARN_MAX_STEPS
    grad_tolerance: float = settings.LEARN_GRAD_TOLERANCE
    max_log_eta: float = settings.MAX_LOG_ETA

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError(f"lambda must be nonnegative, got {self.lam}")
        if not (self.step_size > 0):
            raise ValidationError(f"step_size must be positive, got {self.step_size}")
        if self.max_steps < 1:
            raise ValidationError(f"max_steps must be at least 1, got {self.max_steps}")
        if not (self.grad_tolerance > 0):
            raise ValidationError(f"grad_tolerance must be positive, got {self.grad_tolerance}")


@dataclass(frozen=True, eq=False)
class FitOutcome:
    """A fitted model with its training diagnostics."""
    model: Model
    objective: float
    grad_norm: float
    steps: int
    wall_time: float
    trace: list = field(default_factory=list)

    def report(self):
        return {
            "final_objective": self.objective,
            "gradient_norm": self.grad_norm,
            "steps": self.steps,
            "wall_time_seconds": self.wall_time,
            "eta": self.model.eta,
            "lambda": self.model.lambda_used,
            "epsilon": self.model.epsilon,
            "objective_trace": list(self.trace),
        }


def compute_stats(snapshots, g):
    """Exact sample averages of x_i, x_i² and x_i x_j over complete snapshots."""
    data = np.asarray(snapshots, dtype=float)
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValidationError("At least one complete snapshot is required")
    if data.shape[1] != g.n:
        raise ValidationError(f"Snapshots have {data.shape[1]} values but network has {g.n} roads")
    if not np.all(np.isfinite(data)):
        raise ValidationError("Snapshots must contain finite values only")

    if g.num_edges:
        edge_moment = np.mean(data[:, g.edges[:, 0]] * data[:, g.edges[:, 1]], axis=0)
    else:
        edge_moment = np.zeros(0)
    return SufficientStats(
        mean=data.mean(axis=0),
        second_moment=np.mean(data * data, axis=0),
        edge_moment=edge_moment,
        count=int(data.shape[0]),
    )


class RidgeLikelihood:
    """Objective and gradient for one network, one ε and one data set.

    C is factorized at construction and reused for every evaluation.
    """

    def __init__(self, stats, g, epsilon):
        if len(stats.mean) != g.n:
            raise ValidationError(f"Statistics cover {len(stats.mean)} roads but network has {g.n}")
        self.stats = stats
        self.graph = g
        self.pattern = precision_pattern(g, epsilon)
        self.epsilon = float(epsilon)
        self.n = g.n
        self.c_matrix = self.pattern.to_sparse("csc")
        self._solve_c = factorized(self.c_matrix)
        # ⟨xᵀCx⟩ = Σ (ε + |∂i|)⟨x_i²⟩ − 2 Σ_E ⟨x_i x_j⟩
        self.expected_energy = float(
            np.dot(self.pattern.diag, stats.second_moment)
            - 2.0 * np.sum(stats.edge_moment)
        )

    def solve_c(self, beta):
        return self._solve_c(np.asarray(beta, dtype=float))

    @staticmethod
    def _check_eta(eta):
        if not (np.isfinite(eta) and eta > 0):
            raise ValidationError(f"eta must be positive, got {eta}")

    def objective(self, beta, eta, lam):
        self._check_eta(eta)
        beta = np.asarray(beta, dtype=float)
        c_inv_beta = self.solve_c(beta)
        return float(
            np.dot(beta, self.stats.mean)
            - 0.5 * eta * self.expected_energy
            + 0.5 * self.n * np.log(eta)
            - np.dot(beta, c_inv_beta) / (2.0 * eta)
            - 0.5 * lam * (eta * eta + np.dot(beta, beta))
        )

    def gradient(self, beta, eta, lam):
        self._check_eta(eta)
        beta = np.asarray(beta, dtype=float)
        c_inv_beta = self.solve_c(beta)
        grad_beta = self.stats.mean - c_inv_beta / eta - lam * beta
        grad_eta = (
            -0.5 * self.expected_energy
            + self.n / (2.0 * eta)
            + np.dot(beta, c_inv_beta) / (2.0 * eta * eta)
            - lam * eta
        )
        return grad_beta, float(grad_eta)

    def closed_form(self):
        """Stationary point at λ = 0: η = N / (⟨xᵀCx⟩ − mᵀCm), β = η C m.

        Returns:
            (beta, log_eta); log_eta is computed in log space so zero spread
            gives a huge finite value instead of an overflow
        """
        mean = self.stats.mean
        c_mean = self.c_matrix @ mean
        spread = self.expected_energy - float(np.dot(mean, c_mean))
        log_eta = np.log(self.n) - np.log(max(spread, TINY_SPREAD))
        return c_mean, float(log_eta)

    def ascent_direction(self, beta, eta, lam, grad_beta, grad_eta):
        """Preconditioned gradient-ascent direction in (β, ln η).

        The gradient is scaled block by block with the inverse curvature (a
        block-Newton step). Stationary points are those of plain gradient ascent.

        β block: (C⁻¹/η + λI)⁻¹ ∇β = η (I + ληC)⁻¹ C ∇β.
        ln η block: exact one-dimensional Newton step; the objective is concave in ln η.
        """
        c_grad = self.c_matrix @ grad_beta
        if lam > 0:
            system = (sp.identity(self.n, format="csc") + lam * eta * self.c_matrix).tocsc()
            d_beta = eta * factorized(system)(c_grad)
        else:
            d_beta = eta * c_grad

        q = float(np.dot(beta, self.solve_c(beta)))
        curvature = 0.5 * eta * self.expected_energy + q / (2.0 * eta) + 2.0 * lam * eta * eta
        d_log_eta = eta * grad_eta / max(curvature, np.finfo(float).tiny)
        return d_beta, d_log_eta


def objective(stats, g, beta, eta, epsilon, lam):
    """Ridge-regularized log-likelihood, up to a (β, η)-independent constant."""
    return RidgeLikelihood(stats, g, epsilon).objective(beta, eta, lam)


def gradient(stats, g, beta, eta, epsilon, lam):
    """(∂L/∂β, ∂L/∂η) of the ridge-regularized log-likelihood."""
    return RidgeLikelihood(stats, g, epsilon).gradient(beta, eta, lam)


def stationarity_gap(stats, g, model):
    """‖⟨x⟩ − C⁻¹β/η‖∞, which vanishes for an exact λ = 0 fit."""
    lik = RidgeLikelihood(stats, g, model.epsilon)
    return float(np.max(np.abs(stats.mean - lik.solve_c(model.beta) / model.eta)))


def fit_from_stats(stats, g, epsilon, cfg=None):
    """Preconditioned gradient ascent on the regularized likelihood, from the λ = 0 closed form.

    Each step moves along ascent_direction() with cfg.step_size, halving it until
    the objective does not decrease.

    Returns:
        FitOutcome with the Model and training diagnostics

    Raises:
        DataDegeneracyError: ln η exceeds cfg.max_log_eta (data without spread)
        ConvergenceError: gradient tolerance not reached within cfg.max_steps
    """
    cfg = cfg or LearnConfig()
    start = time.perf_counter()
    lik = RidgeLikelihood(stats, g, epsilon)
    fingerprint = g.fingerprint()
    lam = cfg.lam

    c_mean, log_eta = lik.closed_form()
    if log_eta > cfg.max_log_eta:
        eta_cap = float(np.exp(cfg.max_log_eta))
        if lam == 0:
            raise DataDegeneracyError(
                "Training snapshots have no spread around their mean; eta diverges",
                beta=eta_cap * c_mean, eta=eta_cap, grad_norm=float("inf"), steps=0,
            )
        log_eta = cfg.max_log_eta
    eta = float(np.exp(log_eta))
    beta = eta * c_mean

    value = lik.objective(beta, eta, lam)
    trace = [value]
    grad_norm = float("inf")
    steps = 0

    while True:
        grad_beta, grad_eta = lik.gradient(beta, eta, lam)
        grad_norm = max(float(np.max(np.abs(grad_beta))) if len(grad_beta) else 0.0, abs(grad_eta))
        logger.debug(f"step {steps}: objective {value:.10g}, gradient norm {grad_norm:.3e}, eta {eta:.6g}")
        if grad_norm < cfg.grad_tolerance:
            break
        if steps >= cfg.max_steps:
            raise ConvergenceError(
                f"Learning did not converge in {cfg.max_steps} steps (gradient norm {grad_norm:.3e})",
                beta=beta, eta=eta, grad_norm=grad_norm, steps=steps,
            )

        d_beta, d_log_eta = lik.ascent_direction(beta, eta, lam, grad_beta, grad_eta)
        step = cfg.step_size
        for _ in range(MAX_HALVINGS):
            candidate_log_eta = np.log(eta) + step * d_log_eta
            if candidate_log_eta > cfg.max_log_eta:
                step *= 0.5
                continue
            candidate_eta = float(np.exp(candidate_log_eta))
            candidate_beta = beta + step * d_beta
            candidate_value = lik.objective(candidate_beta, candidate_eta, lam)
            if candidate_value >= value - ROUNDOFF_SLACK * max(1.0, abs(value)):
                break
            step *= 0.5
        else:
            if np.log(eta) + d_log_eta * cfg.step_size > cfg.max_log_eta:
                raise DataDegeneracyError(
                    "eta keeps growing past its cap; the training data is degenerate",
                    beta=beta, eta=eta, grad_norm=grad_norm, steps=steps,
                )
            raise ConvergenceError(
                f"Line search failed at step {steps} (gradient norm {grad_norm:.3e})",
                beta=beta, eta=eta, grad_norm=grad_norm, steps=steps,
            )

        beta, eta, value = candidate_beta, candidate_eta, candidate_value
        trace.append(value)
        steps += 1

    model = Model(beta=beta, eta=eta, epsilon=float(epsilon), lambda_used=float(lam), graph_fingerprint=fingerprint,
                  road_ids=g.labels)
    elapsed = time.perf_counter() - start
    logger.info(f"Fit converged in {steps} steps: eta={eta:.6g}, objective={value:.10g}, gradient norm={grad_norm:.3e}")
    return FitOutcome(model=model, objective=value, grad_norm=grad_norm, steps=steps, wall_time=elapsed, trace=trace)


def fit_detailed(snapshots, g, epsilon, cfg=None):
    return fit_from_stats(compute_stats(snapshots, g), g, epsilon, cfg)


def fit(snapshots, g, epsilon, cfg=None):
    """Fit β and η on complete snapshots; returns the Model."""
    return fit_detailed(snapshots, g, epsilon, cfg).model
