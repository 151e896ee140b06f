"""Monte-Carlo phase-transition experiments.

For every sample count ``n`` in the grid and every trial a fresh ground
truth, design and noise draw are generated from ``(master_seed, n, trial)``
alone, so results do not depend on the order in which trials execute.
"""
import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DivergedError, InvalidArgument
from .model import LINKS, DemixingModel, NoiseSpec, generate_observations, get_link
from .operators import BASIS_KINDS, DESIGN_KINDS, StackedBasis, make_basis, make_design
from .solvers import (SolverConfig, dht_solve, dst_solve, estimate_step_size,
                      struct_dht_solve)
from .sparsity import BlockPattern, BlockSparseVector

__all__ = [
    "SOLVERS", "ExperimentSpec", "TrialResult", "Instance", "default_sample_grid",
    "make_instance", "solve_instance", "run_trial", "run_experiment",
    "success_probability", "median_error", "minimal_success_n", "emit_csv",
    "read_csv", "CSV_HEADER", "solver_config",
]

SOLVERS = ("struct-dht", "dht", "dst")
CSV_HEADER = ("solver", "n", "trial", "norm_error", "err_theta1", "err_theta2", "iters", "ms")


def default_sample_grid(s, points=8, lo=2, hi=16):
    """``points`` log-spaced integer sample counts from ``lo*s`` to ``hi*s``."""
    grid = np.unique(np.round(np.geomspace(lo * s, hi * s, points)).astype(int))
    return tuple(int(n) for n in grid)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines an experiment, including solver knobs.

    ``step_size`` and ``dst_lambda`` accept ``None`` for automatic choice:
    the step from a restricted-spectrum probe of each instance, the DST
    weight from the gradient at zero with continuation.
    """

    p: int = 1024
    b: int = 8
    s: int = 64
    sample_grid: Tuple[int, ...] = ()
    trials: int = 10
    link: str = "sigmoid"
    design: str = "circulant"
    basis_phi: str = "identity"
    basis_psi: str = "dct"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    solvers: Tuple[str, ...] = SOLVERS
    success_threshold: float = 0.05
    master_seed: int = 0
    step_size: Optional[float] = None
    max_iters: int = 500
    stop_tol: float = 1e-9
    init: str = "zero"
    dst_lambda: Optional[float] = None
    dst_mode: str = "entrywise"
    step_probes: int = 4
    step_rule: str = "balanced"

    def __post_init__(self):
        def bad(key, message):
            raise InvalidArgument("%s: %s" % (key, message))

        if self.p < 1:
            bad("p", "must be positive")
        if self.b < 1 or self.p % self.b:
            bad("b", "block length %d must divide p=%d" % (self.b, self.p))
        if self.s < 1 or self.s % self.b or self.s > self.p:
            bad("s", "must be a positive multiple of b=%d and at most p" % self.b)
        if not self.sample_grid:
            object.__setattr__(self, "sample_grid", default_sample_grid(self.s))
        grid = tuple(int(n) for n in self.sample_grid)
        object.__setattr__(self, "sample_grid", grid)
        if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
            bad("sample_grid", "must be strictly increasing positive integers")
        if self.design not in DESIGN_KINDS:
            bad("design", "unknown design %r (expected one of %s)" % (self.design, DESIGN_KINDS))
        if self.design in ("circulant", "orthogonal") and grid[-1] > self.p:
            bad("sample_grid", "%s design needs every n <= p" % self.design)
        for key in ("basis_phi", "basis_psi"):
            if getattr(self, key) not in BASIS_KINDS:
                bad(key, "unknown basis %r (expected one of %s)" % (getattr(self, key), BASIS_KINDS))
        if self.link not in LINKS:
            bad("link", "unknown link %r (expected one of %s)" % (self.link, sorted(LINKS)))
        if self.trials < 1:
            bad("trials", "must be >= 1")
        if not self.success_threshold > 0:
            bad("success_threshold", "must be positive")
        if not self.solvers or set(self.solvers) - set(SOLVERS):
            bad("solvers", "must be a non-empty subset of %s" % (SOLVERS,))
        if self.step_size is not None and not self.step_size > 0:
            bad("step_size", "must be positive or auto")
        if self.dst_lambda is not None and self.dst_lambda < 0:
            bad("dst_lambda", "must be non-negative or auto")
        if self.max_iters < 1:
            bad("max_iters", "must be >= 1")
        if self.stop_tol < 0:
            bad("stop_tol", "must be >= 0")
        if self.init not in ("zero", "random"):
            bad("init", "must be 'zero' or 'random'")
        if self.dst_mode not in ("entrywise", "group"):
            bad("dst_mode", "must be 'entrywise' or 'group'")
        if self.step_rule not in ("balanced", "theory"):
            bad("step_rule", "must be 'balanced' or 'theory'")
        if self.step_probes < 0:
            bad("step_probes", "must be >= 0")

    def basis(self):
        seeds = np.random.SeedSequence([self.master_seed]).generate_state(2)
        return StackedBasis(make_basis(self.basis_phi, self.p, int(seeds[0])),
                            make_basis(self.basis_psi, self.p, int(seeds[1])))


@dataclass(frozen=True)
class TrialResult:
    solver: str
    n: int
    trial: int
    normalized_error: float
    err_theta1: float
    err_theta2: float
    iterations: int
    wall_ms: float = 0.0


@dataclass(frozen=True, eq=False)
class Instance:
    model: DemixingModel
    theta1: BlockSparseVector
    theta2: BlockSparseVector
    beta: np.ndarray
    seed: np.random.SeedSequence

    @property
    def theta(self):
        return np.concatenate([self.theta1.values, self.theta2.values])


def _draw_component(rng, p, s, b):
    blocks = np.sort(rng.choice(p // b, size=s // b, replace=False))
    pattern = BlockPattern(p, b, s, tuple(blocks))
    values = np.zeros(p)
    idx = pattern.support()
    values[idx] = rng.standard_normal(idx.size)
    values /= np.linalg.norm(values)
    return BlockSparseVector(pattern, values)


def make_instance(spec, n, trial, basis=None):
    """Ground truth, design and observations for one ``(n, trial)`` cell.

    Active blocks are uniform over all blocks, their entries standard normal,
    and each component is scaled to unit l2 norm.
    """
    seq = np.random.SeedSequence([spec.master_seed, n, trial])
    truth_seq, design_seq, noise_seq, solver_seq = seq.spawn(4)
    basis = spec.basis() if basis is None else basis
    rng = np.random.default_rng(truth_seq)
    theta1 = _draw_component(rng, spec.p, spec.s, spec.b)
    theta2 = _draw_component(rng, spec.p, spec.s, spec.b)
    design = make_design(spec.design, n, spec.p, int(design_seq.generate_state(1)[0]))
    link = get_link(spec.link)
    y = generate_observations(design, basis, theta1, theta2, link, spec.noise,
                              int(noise_seq.generate_state(1)[0]))
    model = DemixingModel(design, basis, link, y)
    beta = basis.phi.matvec(theta1.values) + basis.psi.matvec(theta2.values)
    return Instance(model, theta1, theta2, beta, solver_seq)


def solver_config(spec, instance, solver, record_trace=False):
    b = 1 if solver == "dht" else spec.b
    seeds = instance.seed.generate_state(2)
    step = spec.step_size
    if step is None:
        step = estimate_step_size(instance.model, spec.s, b, probes=spec.step_probes,
                                  seed=int(seeds[0]),
                                  rule="lipschitz" if solver == "dst" else spec.step_rule)
    return SolverConfig(step_size=step, s=spec.s, b=b, max_iters=spec.max_iters,
                        init=spec.init, init_seed=int(seeds[1]), stop_tol=spec.stop_tol,
                        record_trace=record_trace)


def solve_instance(spec, instance, solver, record_trace=False):
    """Run one solver on one instance; ``DivergedError`` propagates."""
    config = solver_config(spec, instance, solver, record_trace)
    theta = instance.theta if record_trace else None
    if solver == "struct-dht":
        return struct_dht_solve(instance.model, config, theta)
    if solver == "dht":
        return dht_solve(instance.model, config, theta)
    if solver == "dst":
        return dst_solve(instance.model, config, spec.dst_lambda, spec.dst_mode, theta)
    raise InvalidArgument("unknown solver %r" % solver)


def run_trial(spec, n, trial, basis=None):
    """All requested solvers on the instance of cell ``(n, trial)``."""
    instance = make_instance(spec, n, trial, basis)
    beta_norm = np.linalg.norm(instance.beta)
    out = []
    for solver in spec.solvers:
        start = time.perf_counter()
        try:
            res = solve_instance(spec, instance, solver)
        except DivergedError as exc:
            out.append(TrialResult(solver, n, trial, math.inf, math.inf, math.inf,
                                   exc.iteration, 1e3 * (time.perf_counter() - start)))
            continue
        ms = 1e3 * (time.perf_counter() - start)
        out.append(TrialResult(
            solver, n, trial,
            float(np.linalg.norm(res.beta_hat - instance.beta) / beta_norm),
            float(np.linalg.norm(res.theta1_hat.values - instance.theta1.values)),
            float(np.linalg.norm(res.theta2_hat.values - instance.theta2.values)),
            res.iterations_used, ms))
    return out


def run_experiment(spec, threads=1, cells=None, progress=None):
    """Run every ``(n, trial)`` cell and return results sorted by solver, n, trial.

    ``threads > 1`` spreads cells over a thread pool. BLAS is pinned to one
    thread so that results are bit-identical for any ``threads``.
    """
    basis = spec.basis()
    if cells is None:
        cells = [(n, k) for n in spec.sample_grid for k in range(spec.trials)]
    results = []
    with threadpool_limits(limits=1, user_api="blas"):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(run_trial, spec, n, k, basis) for n, k in cells]
                for fut in futures:
                    results.extend(fut.result())
                    if progress:
                        progress()
        else:
            for n, k in cells:
                results.extend(run_trial(spec, n, k, basis))
                if progress:
                    progress()
    order = {name: i for i, name in enumerate(spec.solvers)}
    results.sort(key=lambda r: (order.get(r.solver, len(order)), r.n, r.trial))
    return results


def _select(results, solver, n):
    sel = [r for r in results if r.solver == solver and r.n == n]
    if not sel:
        raise InvalidArgument("no results for solver %r at n=%d" % (solver, n))
    return sel


def success_probability(results, solver, n, threshold=0.05):
    """Fraction of trials with normalized error below ``threshold``."""
    sel = _select(results, solver, n)
    return sum(r.normalized_error < threshold for r in sel) / len(sel)


def median_error(results, solver, n):
    return float(np.median([r.normalized_error for r in _select(results, solver, n)]))


def minimal_success_n(results, solver, level=0.9, threshold=0.05):
    """Smallest ``n`` whose success probability reaches ``level`` (None if never)."""
    grid = sorted({r.n for r in results if r.solver == solver})
    for n in grid:
        if success_probability(results, solver, n, threshold) >= level:
            return n
    return None


def _fmt(x):
    return repr(float(x))


def emit_csv(results, path, timing=False):
    """Write one row per trial. The ``ms`` column is 0 unless ``timing`` is set."""
    if not results:
        raise InvalidArgument("no results to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in results:
            w.writerow([r.solver, r.n, r.trial, _fmt(r.normalized_error), _fmt(r.err_theta1),
                        _fmt(r.err_theta2), r.iterations,
                        ("%.3f" % r.wall_ms) if timing else "0"])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [TrialResult(r["solver"], int(r["n"]), int(r["trial"]), float(r["norm_error"]),
                        float(r["err_theta1"]), float(r["err_theta2"]), int(r["iters"]),
                        float(r["ms"])) for r in rows]

