"""Block-sparse vectors, the stacked hard-thresholding projector and
conditioning probes (incoherence of a basis pair, restricted Hessian spectrum).
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, PreconditionViolation
from .operators import orthonormality_error

__all__ = [
    "BlockPattern", "BlockSparseVector", "StackedCoefficients", "block_project",
    "stacked_block_project", "hard_threshold_blocks", "block_energies",
    "incoherence_estimate", "incoherence_exact_s1", "restricted_hessian",
    "restricted_spectrum", "sample_block_support",
]

MAX_PROBE_SUPPORT = 2000


def _check_budget(p, s, b):
    if b < 1 or p % b:
        raise InvalidArgument("block length b=%d must divide p=%d" % (b, p))
    if s < 0 or s % b:
        raise InvalidArgument("sparsity s=%d must be a non-negative multiple of b=%d" % (s, b))
    if s > p:
        raise InvalidArgument("sparsity s=%d exceeds dimension p=%d" % (s, p))


@dataclass(frozen=True)
class BlockPattern:
    """Support of an ``(s, b)`` block-sparse vector of length ``p``."""

    p: int
    b: int
    s: int
    active_blocks: tuple

    def __post_init__(self):
        _check_budget(self.p, self.s, self.b)
        blocks = tuple(int(i) for i in self.active_blocks)
        object.__setattr__(self, "active_blocks", blocks)
        if len(blocks) != self.s // self.b:
            raise InvalidArgument("pattern needs exactly s/b=%d blocks, got %d"
                                  % (self.s // self.b, len(blocks)))
        nblocks = self.p // self.b
        if any(j <= i for i, j in zip(blocks, blocks[1:])) or \
                (blocks and (blocks[0] < 0 or blocks[-1] >= nblocks)):
            raise InvalidArgument("active blocks must be strictly increasing in [0, %d)" % nblocks)

    def support(self):
        """Coordinate indices covered by the active blocks."""
        blocks = np.asarray(self.active_blocks, dtype=np.intp)
        return (blocks[:, None] * self.b + np.arange(self.b)).ravel()

    def mask(self):
        m = np.zeros(self.p, dtype=bool)
        m[self.support()] = True
        return m

    def to_record(self):
        return {"b": self.b, "s": self.s,
                "blocks": ",".join(str(i) for i in self.active_blocks)}

    @classmethod
    def from_record(cls, record, p):
        text = str(record["blocks"]).strip()
        blocks = tuple(int(x) for x in text.split(",")) if text else ()
        return cls(p=p, b=int(record["b"]), s=int(record["s"]), active_blocks=blocks)


@dataclass(frozen=True, eq=False)
class BlockSparseVector:
    pattern: BlockPattern
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.pattern.p,):
            raise InvalidArgument("values must have length p=%d" % self.pattern.p)
        if np.any(values[~self.pattern.mask()] != 0.0):
            raise InvalidArgument("values are nonzero outside the active blocks")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class StackedCoefficients:
    """Pair of halves ``t = [first; second]`` sharing one ``(s, b)`` budget."""

    first: BlockSparseVector
    second: BlockSparseVector

    @property
    def budget(self):
        return (self.first.pattern.s, self.first.pattern.b)

    @property
    def vector(self):
        return np.concatenate([self.first.values, self.second.values])


def block_energies(v, b):
    """Squared l2 norm of every length-``b`` block of ``v``."""
    v = np.asarray(v, dtype=np.float64)
    return np.einsum("ij,ij->i", v.reshape(-1, b), v.reshape(-1, b))


def hard_threshold_blocks(v, s, b):
    """Keep the ``s // b`` blocks of largest energy.

    Returns the thresholded copy of ``v`` and the sorted kept block indices.
    Ties are resolved towards the lower block index.
    """
    v = np.asarray(v, dtype=np.float64)
    _check_budget(v.size, s, b)
    k = s // b
    energy = block_energies(v, b)
    # stable sort on negated energies keeps equal blocks in index order
    keep = np.sort(np.argsort(-energy, kind="stable")[:k])
    out = np.zeros_like(v)
    idx = (keep[:, None] * b + np.arange(b)).ravel()
    out[idx] = v[idx]
    return out, keep


def block_project(v, s, b):
    """Euclidean projection of ``v`` onto the ``(s, b)`` block-sparse set."""
    out, keep = hard_threshold_blocks(v, s, b)
    return BlockSparseVector(BlockPattern(out.size, b, s, tuple(keep)), out)


def stacked_block_project(t, s, b):
    """Project both halves of a length-``2p`` vector independently."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1 or t.size % 2:
        raise InvalidArgument("stacked vector must be 1-D with even length")
    p = t.size // 2
    return StackedCoefficients(block_project(t[:p], s, b), block_project(t[p:], s, b))


def _check_orthonormal(**maps):
    for name, Q in maps.items():
        err = orthonormality_error(Q)
        if not err <= 1e-8:
            raise PreconditionViolation("%s is not orthonormal (error %.3g)" % (name, err))


def _sparse_unit_columns(rng, p, s, count, sampler, b):
    U = np.zeros((p, count))
    for j in range(count):
        if sampler == "block":
            blocks = rng.choice(p // b, size=s // b, replace=False)
            idx = (blocks[:, None] * b + np.arange(b)).ravel()
        else:
            idx = rng.choice(p, size=s, replace=False)
        U[idx, j] = rng.standard_normal(idx.size)
        U[:, j] /= np.linalg.norm(U[:, j])
    return U


def incoherence_estimate(phi, psi, s, trials, seed, sampler="sparse", b=1):
    """Monte-Carlo lower bound on the incoherence of a basis pair.

    Each trial draws two ``s``-sparse unit vectors ``u, v`` with uniformly
    random supports and Gaussian entries and records ``|<Phi u, Psi v>|``
    as well as ``|<Phi u, Psi u>|``. The maximum over trials is returned; it
    never exceeds the true supremum, so the result is a lower estimate.

    Parameters
    ----------
    phi, psi : LinearMap
        Orthonormal ``p x p`` maps.
    s : int
        Sparsity of the probe vectors.
    trials : int
        Number of random probe pairs.
    seed : int
        Trial ``i`` draws from a generator seeded with ``(seed, i)``, so the
        estimate is non-decreasing in ``trials``.
    sampler : {"sparse", "block"}
        Plain ``s``-sparse supports, or ``(s, b)`` block supports.
    """
    _check_orthonormal(phi=phi, psi=psi)
    p = phi.cols
    if psi.cols != p:
        raise InvalidArgument("phi and psi must have the same size")
    if not 1 <= s <= p:
        raise InvalidArgument("need 1 <= s <= p")
    if sampler == "block":
        _check_budget(p, s, b)
    elif sampler != "sparse":
        raise InvalidArgument("sampler must be 'sparse' or 'block'")
    best = 0.0
    chunk = 256
    for start in range(0, int(trials), chunk):
        ids = range(start, min(int(trials), start + chunk))
        U = np.empty((p, len(ids)))
        V = np.empty((p, len(ids)))
        for j, i in enumerate(ids):
            rng = np.random.default_rng([seed, i])
            U[:, j:j + 1] = _sparse_unit_columns(rng, p, s, 1, sampler, b)
            V[:, j:j + 1] = _sparse_unit_columns(rng, p, s, 1, sampler, b)
        PU = phi.matmat(U)
        cross = np.abs(np.sum(PU * psi.matmat(V), axis=0))
        self_ = np.abs(np.sum(PU * psi.matmat(U), axis=0))
        best = max(best, float(cross.max()), float(self_.max()))
    return min(best, 1.0)


def incoherence_exact_s1(phi, psi):
    """Exact incoherence for ``s = 1``: the largest entry of ``|Phi^T Psi|``."""
    return float(np.max(np.abs(phi.rmatmat(psi.todense()))))


def sample_block_support(rng, p, s, b, multiple=3):
    """Random union support: ``multiple * s/b`` distinct blocks in each half.

    Indices refer to the stacked length-``2p`` coordinate system.
    """
    nblocks = p // b
    k = min(nblocks, multiple * (s // b))
    halves = []
    for offset in (0, p):
        blocks = np.sort(rng.choice(nblocks, size=k, replace=False))
        halves.append(offset + (blocks[:, None] * b + np.arange(b)).ravel())
    return np.concatenate(halves)


def restricted_hessian(model, t, support):
    """Dense Hessian of the loss at ``t`` restricted to rows/columns ``support``.

    ``support`` holds indices into the stacked length-``2p`` vector.
    """
    from .model import forward

    support = np.asarray(support, dtype=np.intp)
    if support.size > MAX_PROBE_SUPPORT:
        raise InvalidArgument("restricted support of size %d exceeds the probe limit %d"
                              % (support.size, MAX_PROBE_SUPPORT))
    p = model.p
    first, second = support[support < p], support[support >= p] - p
    cols = np.hstack([model.basis.phi.columns(first), model.basis.psi.columns(second)])
    A = model.design.matmat(cols)
    w = model.link.g_prime(forward(model, np.asarray(t, dtype=np.float64)))
    H = A.T @ (w[:, None] * A) / model.n
    return (H + H.T) / 2


def restricted_spectrum(model, t, probe_supports=8, seed=0, s=None, b=None,
                        multiple=3, supports=None):
    """Extreme eigenvalues of the restricted Hessian over sampled supports.

    Returns ``(m_hat, M_hat)``: the smallest and the largest eigenvalue seen
    over ``probe_supports`` random unions of ``multiple`` block supports per
    half (``multiple=3`` gives ``6s``-sized unions). Explicit ``supports``
    (an iterable of stacked index arrays) replace the random draw.
    """
    if isinstance(t, StackedCoefficients):
        s0, b0 = t.budget
        s = s0 if s is None else s
        b = b0 if b is None else b
        t = t.vector
    t = np.asarray(t, dtype=np.float64)
    if supports is None:
        if s is None or b is None:
            raise InvalidArgument("s and b are required when t carries no budget")
        _check_budget(model.p, s, b)
        rng = np.random.default_rng(seed)
        supports = [sample_block_support(rng, model.p, s, b, multiple)
                    for _ in range(int(probe_supports))]
    lo, hi = np.inf, -np.inf
    for xi in supports:
        ev = np.linalg.eigvalsh(restricted_hessian(model, t, xi))
        lo, hi = min(lo, float(ev[0])), max(hi, float(ev[-1]))
    return lo, hi
