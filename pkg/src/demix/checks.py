"""Invariant self-checks run by ``demix check``."""
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (DemixingModel, evaluate_gradient, evaluate_loss, link_identity,
                    link_shifted_sigmoid)
from .operators import (StackedBasis, adjoint_mismatch, make_basis, make_gaussian_design,
                        make_orthogonal_design, make_partial_circulant_design,
                        orthonormality_error)
from .solvers import contraction_factor, default_step_size
from .sparsity import block_energies, block_project

__all__ = ["CheckResult", "run_checks", "brute_force_blocks", "reversed_tiebreak_project"]


@dataclass(frozen=True)
class CheckResult:
    family: str
    name: str
    passed: bool
    detail: str


def brute_force_blocks(v, s, b):
    """Block indices of the best ``(s, b)`` approximation by exhaustive search.

    Among equally good supports the lexicographically smallest one wins.
    """
    energy = block_energies(v, b)
    best, best_set = -1.0, None
    for combo in itertools.combinations(range(v.size // b), s // b):
        e = float(sum(energy[list(combo)]))
        if e > best:
            best, best_set = e, combo
    return best_set


def reversed_tiebreak_project(v, s, b):
    """Deliberately faulty projector preferring the highest index among ties."""
    energy = block_energies(v, b)
    order = np.argsort(-energy[::-1], kind="stable")
    keep = np.sort(energy.size - 1 - order[:s // b])
    out = np.zeros_like(v)
    idx = (keep[:, None] * b + np.arange(b)).ravel()
    out[idx] = v[idx]
    return out, keep


def _default_projector(v, s, b):
    res = block_project(v, s, b)
    return res.values, np.asarray(res.pattern.active_blocks)


def _adjoint_checks():
    maps = {
        "gaussian design": make_gaussian_design(24, 40, 1),
        "circulant design": make_partial_circulant_design(24, 40, 2),
        "orthogonal design": make_orthogonal_design(24, 40, 3),
        "dct basis": make_basis("dct", 40),
        "random-orthonormal basis": make_basis("random-orthonormal", 40, 4),
    }
    for name, A in maps.items():
        gap = adjoint_mismatch(A, pairs=20, seed=5)
        yield CheckResult("adjoint", name, gap <= 1e-10, "gap=%.2e" % gap)
    for kind in ("identity", "dct", "random-orthonormal"):
        err = orthonormality_error(make_basis(kind, 33, 6))
        yield CheckResult("adjoint", "%s orthonormal" % kind, err <= 1e-8, "err=%.2e" % err)


def _projection_checks(projector):
    rng = np.random.default_rng(7)
    mismatches = 0
    cases = 0
    for p in range(1, 13):
        for b in (1, 2, 3):
            if p % b:
                continue
            for k in range(1, min(3, p // b) + 1):
                for _ in range(10):
                    v = rng.standard_normal(p)
                    values, keep = projector(v, k * b, b)
                    ref = brute_force_blocks(v, k * b, b)
                    expect = np.zeros(p)
                    idx = (np.asarray(ref)[:, None] * b + np.arange(b)).ravel()
                    expect[idx] = v[idx]
                    cases += 1
                    if tuple(keep) != tuple(ref) or not np.array_equal(values, expect):
                        mismatches += 1
    yield CheckResult("projection", "matches exhaustive search", mismatches == 0,
                      "%d/%d mismatches" % (mismatches, cases))
    v = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.5, 0.0])
    _, keep = projector(v, 4, 2)
    yield CheckResult("projection", "ties keep lowest block index", tuple(keep) == (0, 1),
                      "kept blocks %s" % (tuple(int(i) for i in keep),))
    w = rng.standard_normal(12)
    once, _ = projector(w, 6, 3)
    twice, _ = projector(once, 6, 3)
    yield CheckResult("projection", "idempotent", np.array_equal(once, twice), "")


def _gradient_checks():
    p, n = 16, 24
    basis = StackedBasis(make_basis("identity", p), make_basis("dct", p))
    X = make_gaussian_design(n, p, 11)
    rng = np.random.default_rng(12)
    for link in (link_identity(), link_shifted_sigmoid()):
        model = DemixingModel(X, basis, link, rng.standard_normal(n))
        worst = 0.0
        for _ in range(5):
            t = rng.standard_normal(2 * p) * 0.5
            g = evaluate_gradient(model, t)
            fd = np.empty_like(t)
            h = 1e-6
            for i in range(t.size):
                e = np.zeros_like(t)
                e[i] = h
                fd[i] = (evaluate_loss(model, t + e) - evaluate_loss(model, t - e)) / (2 * h)
            worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
        yield CheckResult("gradient", "%s link finite differences" % link.name, worst < 1e-5,
                          "rel err=%.2e" % worst)
        x = np.linspace(-10, 10, 41)
        h = 1e-5
        dtheta = (link.theta_integral(x + h) - link.theta_integral(x - h)) / (2 * h)
        err = np.max(np.abs(dtheta - link.g(x)) / np.maximum(1.0, np.abs(link.g(x))))
        yield CheckResult("gradient", "%s link Theta' = g" % link.name, err < 1e-6,
                          "err=%.2e" % err)


def _contraction_checks():
    rho, ok = contraction_factor(1.0, 1.0, 1.0)
    yield CheckResult("contraction", "rho(1; 1, 1) = 0", rho == 0.0 and ok, "rho=%r" % rho)
    rho, ok = contraction_factor(0.8, 1.0, 1.0)
    yield CheckResult("contraction", "rho(0.8; 1, 1) = 0.4", abs(rho - 0.4) < 1e-12 and ok,
                      "rho=%r" % rho)
    M = 2 / math.sqrt(3)
    rho, ok = contraction_factor(1.0 / M ** 2, 1.0, M)
    yield CheckResult("contraction", "boundary M/m = 2/sqrt(3) gives rho = 1",
                      abs(rho - 1) < 1e-12 and not ok, "rho=%r" % rho)
    eta = default_step_size(0.9, 1.0)
    yield CheckResult("contraction", "default step m/M^2", abs(eta - 0.9) < 1e-15,
                      "eta=%r" % eta)


def run_checks(projector=None):
    """Run every invariant family and return the list of :class:`CheckResult`."""
    projector = projector or _default_projector
    out = []
    out.extend(_adjoint_checks())
    out.extend(_projection_checks(projector))
    out.extend(_gradient_checks())
    out.extend(_contraction_checks())
    return out
