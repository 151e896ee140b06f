"""Demixing solvers.

``struct_dht_solve`` is projected gradient descent on the single-index loss
with block hard thresholding applied to each half of the stacked iterate.
``dht_solve`` is the same iteration with unit blocks and ``dst_solve`` a
proximal-gradient (soft thresholding) convex baseline.
"""
import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import DivergedError, InvalidArgument
from .model import evaluate_gradient, loss_and_gradient
from .operators import adjoint_stacked, apply_stacked
from .sparsity import (BlockPattern, BlockSparseVector, _check_budget,
                       block_energies, hard_threshold_blocks, restricted_spectrum,
                       sample_block_support)

__all__ = [
    "SolverConfig", "TraceRecord", "SolverTrace", "EstimateResult",
    "struct_dht_solve", "dht_solve", "dst_solve", "soft_threshold",
    "group_soft_threshold", "contraction_factor", "default_step_size",
    "estimate_step_size", "lipschitz_constant", "support_hash",
]

# rho this close to 1 is treated as the non-contracting boundary
_RHO_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Iteration parameters shared by all solvers.

    ``stop_tol`` stops the iteration once the relative displacement
    ``||t_new - t|| / (1 + ||t||)`` falls below it; 0 runs all ``max_iters``.
    ``divergence_factor`` flags a run as diverged when the loss climbs above
    ``F(t0) + divergence_factor * max(1, |F(t0)|, mean(y^2))``. Bounded links
    never overflow, so a runaway step shows up only as a loss blow-up.
    """

    step_size: float
    s: int
    b: int = 1
    max_iters: int = 500
    init: str = "zero"
    init_seed: int = 0
    stop_tol: float = 1e-9
    record_trace: bool = True
    divergence_factor: float = 1e3

    def __post_init__(self):
        if not self.step_size > 0 or not math.isfinite(self.step_size):
            raise InvalidArgument("step size must be a positive finite number")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")
        if self.init not in ("zero", "random"):
            raise InvalidArgument("init must be 'zero' or 'random'")
        if self.stop_tol < 0:
            raise InvalidArgument("stop_tol must be >= 0")
        if self.b < 1 or self.s < 0 or self.s % self.b:
            raise InvalidArgument("s must be a non-negative multiple of b")


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    loss: float
    error: float
    support1: int
    support2: int


@dataclass
class SolverTrace:
    records: List[TraceRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def errors(self):
        return np.array([r.error for r in self.records])

    def losses(self):
        return np.array([r.loss for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss", "error", "support1", "support2"])
            for r in self.records:
                w.writerow([r.iter, repr(r.loss), repr(r.error), r.support1, r.support2])


@dataclass(frozen=True, eq=False)
class EstimateResult:
    theta1_hat: BlockSparseVector
    theta2_hat: BlockSparseVector
    beta_hat: np.ndarray
    iterations_used: int
    converged: bool
    trace: Optional[SolverTrace] = None

    @property
    def t_hat(self):
        return np.concatenate([self.theta1_hat.values, self.theta2_hat.values])


def support_hash(v, b):
    """Stable unsigned 64-bit hash of the list of blocks of ``v`` holding nonzeros."""
    blocks = np.flatnonzero(block_energies(v, b) > 0)
    text = ",".join(str(i) for i in blocks).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def soft_threshold(v, tau):
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def group_soft_threshold(v, tau, b):
    """Scale every length-``b`` block by ``max(0, 1 - tau / ||block||)``."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.sqrt(block_energies(v, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > tau, 1.0 - tau / norms, 0.0)
    return (v.reshape(-1, b) * scale[:, None]).ravel()


def _initial_point(model, config):
    p = model.p
    if config.init == "zero":
        return np.zeros(2 * p)
    rng = np.random.default_rng(config.init_seed)
    t = rng.standard_normal(2 * p) / np.sqrt(p)
    return np.concatenate([hard_threshold_blocks(t[:p], config.s, config.b)[0],
                           hard_threshold_blocks(t[p:], config.s, config.b)[0]])


def _iterate(model, config, step, true_theta, pattern_b, hold=0):
    """Shared driver: ``t <- step(t - eta * grad F(t), k)`` until stopping.

    The displacement stopping rule is ignored for iterations ``k < hold``.
    """
    p = model.p
    eta = config.step_size
    theta = None if true_theta is None else np.asarray(true_theta, dtype=np.float64)
    if theta is not None and theta.shape != (2 * p,):
        raise InvalidArgument("true_theta must have length 2p")
    trace = SolverTrace() if config.record_trace else None

    def record(k, loss, t):
        if trace is not None:
            err = float(np.linalg.norm(t - theta)) if theta is not None else math.nan
            trace.records.append(TraceRecord(k, loss, err, support_hash(t[:p], pattern_b),
                                             support_hash(t[p:], pattern_b)))

    t = _initial_point(model, config)
    scale = max(1.0, float(np.mean(model.observations ** 2)))
    loss0 = None
    converged = False
    k = 0
    while True:
        loss, grad = loss_and_gradient(model, t)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise DivergedError(k, "non-finite loss or gradient at iteration %d" % k)
        if loss0 is None:
            loss0 = loss
            scale = max(scale, abs(loss0))
        elif loss > loss0 + config.divergence_factor * scale:
            raise DivergedError(k, "loss exploded to %.3g at iteration %d" % (loss, k))
        record(k, loss, t)
        if converged or k >= config.max_iters:
            break
        t_new = step(t - eta * grad, k)
        converged = k + 1 >= hold and \
            np.linalg.norm(t_new - t) <= config.stop_tol * (1 + np.linalg.norm(t))
        t = t_new
        k += 1
    return t, k, converged, trace


def _result(model, t, s, b, k, converged, trace):
    p = model.p
    halves = []
    for half in (t[:p], t[p:]):
        out, keep = hard_threshold_blocks(half, s, b)
        halves.append(BlockSparseVector(BlockPattern(p, b, s, tuple(keep)), out))
    beta = model.basis.phi.matvec(halves[0].values) + model.basis.psi.matvec(halves[1].values)
    return EstimateResult(halves[0], halves[1], beta, k, bool(converged), trace)


def struct_dht_solve(model, config, true_theta=None):
    """Structured demixing by iterative block hard thresholding.

    Each iteration takes a gradient step on the loss and projects the first
    and second halves of the stacked vector onto ``(s, b)`` block-sparse
    vectors, independently of each other.

    Parameters
    ----------
    model : DemixingModel
    config : SolverConfig
    true_theta : array_like, optional
        Stacked ground truth; when given the trace records ``||t^k - theta||``.

    Returns
    -------
    EstimateResult

    Raises
    ------
    DivergedError
        If the loss or the gradient stops being finite or the loss explodes.
    """
    p, s, b = model.p, config.s, config.b
    _check_budget(p, s, b)

    def project(v, k):
        return np.concatenate([hard_threshold_blocks(v[:p], s, b)[0],
                               hard_threshold_blocks(v[p:], s, b)[0]])

    t, k, converged, trace = _iterate(model, config, project, true_theta, b)
    return _result(model, t, s, b, k, converged, trace)


def dht_solve(model, config, true_theta=None):
    """Unstructured baseline: ``struct_dht_solve`` with unit blocks."""
    return struct_dht_solve(model, replace(config, b=1), true_theta)


def dst_solve(model, config, lam=None, mode="entrywise", true_theta=None,
              continuation=None):
    """Demixing by proximal gradient with soft thresholding.

    With ``lam=None`` the weight starts at ``0.1 * ||grad F(0)||_inf`` and is
    divided by 10 every ``max_iters // 5`` iterations (four times in total).
    An explicit ``lam`` is held fixed unless ``continuation`` is set. The
    final iterate is truncated to the ``(s, b)`` block-sparse set so that its
    error is comparable with the hard-thresholding solvers.
    """
    p, s, b = model.p, config.s, config.b
    _check_budget(p, s, b)
    if mode not in ("entrywise", "group"):
        raise InvalidArgument("mode must be 'entrywise' or 'group'")
    if lam is None:
        _, g0 = loss_and_gradient(model, np.zeros(2 * p))
        lam = 0.1 * float(np.max(np.abs(g0)))
        continuation = True if continuation is None else continuation
    if lam < 0:
        raise InvalidArgument("lambda must be >= 0")
    stage = max(1, config.max_iters // 5)
    eta = config.step_size

    def prox(v, k):
        weight = lam * 10.0 ** -min(k // stage, 4) if continuation else lam
        if weight == 0:
            return v
        if mode == "group":
            return group_soft_threshold(v, eta * weight, b)
        return soft_threshold(v, eta * weight)

    # stopping is only allowed once the last continuation stage is reached
    hold = min(config.max_iters, 4 * stage) if continuation else 0
    t, k, converged, trace = _iterate(model, config, prox, true_theta, b, hold)
    return _result(model, t, s, b, k, converged, trace)


def contraction_factor(eta_prime, m_6s, M_6s):
    """Per-iteration error contraction ``rho = 2 sqrt(1 + eta^2 M^2 - 2 eta m)``.

    Returns ``(rho, admissible)`` where ``admissible`` requires the condition
    number bound ``M/m <= 2/sqrt(3)``, a step inside ``(0.5/M, 1.5/m)`` and
    ``rho < 1``.
    """
    if not m_6s > 0:
        raise InvalidArgument("m_6s must be positive")
    if M_6s < m_6s:
        raise InvalidArgument("need m_6s <= M_6s")
    radicand = 1.0 + eta_prime ** 2 * M_6s ** 2 - 2.0 * eta_prime * m_6s
    rho = 2.0 * math.sqrt(max(radicand, 0.0))
    admissible = (M_6s / m_6s <= 2.0 / math.sqrt(3.0)
                  and 0.5 / M_6s < eta_prime < 1.5 / m_6s
                  and rho < 1.0 - _RHO_TOL)
    return rho, admissible


def default_step_size(m_hat, M_hat):
    """Step minimizing the contraction factor, kept 1% inside ``(0.5/M, 1.5/m)``."""
    if not m_hat > 0:
        raise InvalidArgument("m_hat must be positive")
    if M_hat < m_hat:
        raise InvalidArgument("need m_hat <= M_hat")
    lo, hi = 0.5 / M_hat * 1.01, 1.5 / m_hat * 0.99
    return float(min(max(m_hat / M_hat ** 2, lo), hi))


def lipschitz_constant(model, iters=100, seed=0):
    """Upper estimate of the gradient's Lipschitz constant, ``u ||X Gamma||^2 / m``.

    ``u`` is the link's slope bound; the spectral norm comes from power
    iteration and is inflated by 1% to cover its slight underestimate.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(2 * model.p)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = adjoint_stacked(model.basis, model.design.rmatvec(
            model.design.matvec(apply_stacked(model.basis, v))))
        lam = float(np.linalg.norm(w))
        if lam == 0:
            break
        v = w / lam
    return 1.01 * model.link.upper_slope * lam / model.n


def _greedy_support(model, t, s, b):
    """Stacked support picked by one projected gradient step from ``t``."""
    p = model.p
    v = t - evaluate_gradient(model, t)
    halves = []
    for offset in (0, p):
        _, keep = hard_threshold_blocks(v[offset:offset + p], s, b)
        halves.append(offset + (keep[:, None] * b + np.arange(b)).ravel())
    return np.concatenate(halves)


def estimate_step_size(model, s, b, probes=4, seed=0, t=None, rule="balanced"):
    """Step size from restricted-spectrum probes of the loss at ``t`` (default 0).

    ``rule="theory"`` feeds ``6s``-sized random probes into
    :func:`default_step_size`. ``rule="lipschitz"`` gives ``1/L`` for the
    full gradient, as needed by dense iterates. ``rule="balanced"`` returns
    ``2 / (m + M)`` over ``2s``-sized probes: the support chosen by the first projected
    gradient step plus ``probes`` random ones. It stays usable when the
    ``6s`` restricted problem is ill-conditioned, which is the norm at
    moderate sample counts.
    """
    t = np.zeros(2 * model.p) if t is None else np.asarray(t, dtype=np.float64)
    if rule == "lipschitz":
        return 1.0 / lipschitz_constant(model, seed=seed)
    if rule == "theory":
        m_hat, M_hat = restricted_spectrum(model, t, probe_supports=probes, seed=seed,
                                           s=s, b=b, multiple=3)
        return default_step_size(max(m_hat, 1e-3 * M_hat), M_hat)
    if rule == "balanced":
        rng = np.random.default_rng(seed)
        supports = [_greedy_support(model, t, s, b)]
        supports += [sample_block_support(rng, model.p, s, b, 1) for _ in range(probes)]
        m_hat, M_hat = restricted_spectrum(model, t, supports=supports)
        return 2.0 / (max(m_hat, 0.0) + M_hat)
    raise InvalidArgument("unknown step rule %r" % rule)
