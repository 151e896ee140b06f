"""Linear maps used as design matrices and synthesis bases.

Every map exposes ``matvec`` (forward) and ``rmatvec`` (adjoint) together
with their column-wise ``matmat``/``rmatmat`` counterparts. Maps are
immutable once built; randomized kinds are fully determined by
``(kind, shape, seed)``.
"""
import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import InvalidArgument, PreconditionViolation

__all__ = [
    "LinearMap", "DenseMap", "IdentityMap", "DCTMap", "PartialCirculantMap",
    "StackedBasis", "make_gaussian_design", "make_partial_circulant_design",
    "make_orthogonal_design", "make_design", "make_basis", "apply_stacked",
    "adjoint_stacked", "adjoint_mismatch", "orthonormality_error",
    "save_dense", "load_dense", "BASIS_KINDS", "DESIGN_KINDS",
]

BASIS_KINDS = ("identity", "dct", "random-orthonormal")
DESIGN_KINDS = ("gaussian", "circulant", "orthogonal")

_MAGIC = b"DMXMAT01"


def _check_dims(**dims):
    for name, value in dims.items():
        if int(value) != value or value < 1:
            raise InvalidArgument("%s must be a positive integer, got %r" % (name, value))


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class LinearMap:
    """Abstract real linear map of shape ``(rows, cols)``."""

    kind = "abstract"

    def __init__(self, rows, cols, seed=None):
        _check_dims(rows=rows, cols=cols)
        self.rows = int(rows)
        self.cols = int(cols)
        self.seed = seed

    @property
    def shape(self):
        return (self.rows, self.cols)

    def _check_in(self, u, n, what):
        u = np.asarray(u, dtype=np.float64)
        if u.shape[0] != n:
            raise InvalidArgument("%s has leading dimension %d, expected %d"
                                  % (what, u.shape[0], n))
        return u

    def matvec(self, u):
        return self.matmat(self._check_in(u, self.cols, "input")[:, None])[:, 0]

    def rmatvec(self, v):
        return self.rmatmat(self._check_in(v, self.rows, "input")[:, None])[:, 0]

    def matmat(self, U):
        raise NotImplementedError

    def rmatmat(self, V):
        raise NotImplementedError

    def todense(self):
        """Materialize the map by applying it to every standard basis vector."""
        return self.matmat(np.eye(self.cols))

    def columns(self, idx):
        """Dense columns ``A[:, idx]``."""
        idx = np.asarray(idx, dtype=np.intp)
        E = np.zeros((self.cols, idx.size))
        E[idx, np.arange(idx.size)] = 1.0
        return self.matmat(E)

    def __repr__(self):
        return "%s(kind=%r, shape=%r, seed=%r)" % (
            type(self).__name__, self.kind, self.shape, self.seed)


class DenseMap(LinearMap):
    """Explicit row-major matrix."""

    def __init__(self, matrix, kind="dense", seed=None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise InvalidArgument("dense map needs a 2-D array")
        super().__init__(matrix.shape[0], matrix.shape[1], seed)
        self.kind = kind
        self.matrix = _readonly(matrix)

    def matvec(self, u):
        return self.matrix @ self._check_in(u, self.cols, "input")

    def rmatvec(self, v):
        return self.matrix.T @ self._check_in(v, self.rows, "input")

    def matmat(self, U):
        return self.matrix @ self._check_in(U, self.cols, "input")

    def rmatmat(self, V):
        return self.matrix.T @ self._check_in(V, self.rows, "input")

    def todense(self):
        return np.array(self.matrix)


class IdentityMap(LinearMap):
    kind = "identity"

    def __init__(self, p):
        super().__init__(p, p)

    def matvec(self, u):
        return np.array(self._check_in(u, self.cols, "input"))

    rmatvec = matvec

    def matmat(self, U):
        return np.array(self._check_in(U, self.cols, "input"))

    rmatmat = matmat


class DCTMap(LinearMap):
    """Orthonormal type-II DCT; the adjoint is the orthonormal type-III DCT.

    Row 0 of the transform is the constant vector ``1/sqrt(p)``, so a constant
    input maps onto the first coefficient only.
    """

    kind = "dct"

    def __init__(self, p):
        super().__init__(p, p)

    def matmat(self, U):
        U = self._check_in(U, self.cols, "input")
        return scipy.fft.dct(U, type=2, norm="ortho", axis=0)

    def rmatmat(self, V):
        V = self._check_in(V, self.rows, "input")
        return scipy.fft.idct(V, type=2, norm="ortho", axis=0)


class PartialCirculantMap(LinearMap):
    """Row-subsampled circulant matrix with random column sign flips.

    Represents ``A = R C D`` where ``C`` is circulant with first column
    ``symbol``, ``D = diag(signs)`` and ``R`` keeps the rows in ``rows``.
    Application costs O(p log p) via the real FFT.
    """

    kind = "circulant-subsampled"

    def __init__(self, symbol, signs, rows, seed=None):
        symbol = _readonly(symbol)
        p = symbol.size
        rows = np.asarray(rows, dtype=np.intp)
        super().__init__(rows.size, p, seed)
        if np.any(rows < 0) or np.any(rows >= p) or np.unique(rows).size != rows.size:
            raise InvalidArgument("row indices must be distinct and within [0, p)")
        self.symbol = symbol
        self.signs = _readonly(signs)
        rows.setflags(write=False)
        self.row_index = rows
        spec = np.fft.rfft(symbol)
        spec.setflags(write=False)
        self._spectrum = spec

    def matmat(self, U):
        U = self._check_in(U, self.cols, "input")
        F = np.fft.rfft(self.signs[:, None] * U, axis=0)
        full = np.fft.irfft(self._spectrum[:, None] * F, n=self.cols, axis=0)
        return full[self.row_index]

    def rmatmat(self, V):
        V = self._check_in(V, self.rows, "input")
        full = np.zeros((self.cols, V.shape[1]))
        full[self.row_index] = V
        F = np.fft.rfft(full, axis=0)
        back = np.fft.irfft(np.conj(self._spectrum)[:, None] * F, n=self.cols, axis=0)
        return self.signs[:, None] * back


def make_gaussian_design(n, p, seed):
    """Dense ``n x p`` design with i.i.d. standard normal entries."""
    _check_dims(n=n, p=p)
    rng = np.random.default_rng(seed)
    return DenseMap(rng.standard_normal((n, p)), kind="dense", seed=seed)


def make_partial_circulant_design(n, p, seed, generator=None, subsample=True,
                                  flip_signs=True):
    """Partial random circulant design.

    Parameters
    ----------
    n, p : int
        Number of retained rows and ambient dimension, ``n <= p``.
    seed : int
        Seed for the Gaussian symbol, the Rademacher column flips and the row
        subset (drawn in that order).
    generator : array_like, optional
        Explicit first column of the circulant factor, replacing the Gaussian
        symbol.
    subsample : bool
        If False the first ``n`` rows are kept instead of a random subset.
    flip_signs : bool
        If False no column sign flips are applied.
    """
    _check_dims(n=n, p=p)
    if n > p:
        raise InvalidArgument("partial circulant design needs n <= p (n=%d, p=%d)" % (n, p))
    rng = np.random.default_rng(seed)
    symbol = rng.standard_normal(p)
    if generator is not None:
        symbol = np.asarray(generator, dtype=np.float64)
        if symbol.shape != (p,):
            raise InvalidArgument("generator must have length p")
    signs = rng.choice(np.array([-1.0, 1.0]), size=p)
    if not flip_signs:
        signs = np.ones(p)
    if subsample:
        rows = np.sort(rng.choice(p, size=n, replace=False))
    else:
        rows = np.arange(n)
    return PartialCirculantMap(symbol, signs, rows, seed=seed)


def make_orthogonal_design(n, p, seed):
    """``sqrt(n)`` times a matrix with orthonormal rows, so ``X X^T = n I``."""
    _check_dims(n=n, p=p)
    if n > p:
        raise InvalidArgument("orthogonal design needs n <= p")
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((p, n)))
    Q *= np.sign(np.diag(R))
    return DenseMap(np.sqrt(n) * Q.T, kind="dense", seed=seed)


def make_design(kind, n, p, seed):
    if kind == "gaussian":
        return make_gaussian_design(n, p, seed)
    if kind == "circulant":
        return make_partial_circulant_design(n, p, seed)
    if kind == "orthogonal":
        return make_orthogonal_design(n, p, seed)
    raise InvalidArgument("unknown design kind %r (expected one of %s)" % (kind, DESIGN_KINDS))


def make_basis(kind, p, seed=0):
    """Orthonormal ``p x p`` basis: ``identity``, ``dct`` or ``random-orthonormal``."""
    _check_dims(p=p)
    if kind == "identity":
        return IdentityMap(p)
    if kind == "dct":
        return DCTMap(p)
    if kind == "random-orthonormal":
        rng = np.random.default_rng(seed)
        Q, R = np.linalg.qr(rng.standard_normal((p, p)))
        Q *= np.sign(np.diag(R))
        return DenseMap(Q, kind="random-orthonormal", seed=seed)
    raise InvalidArgument("unknown basis kind %r (expected one of %s)" % (kind, BASIS_KINDS))


def orthonormality_error(Q, trials=3, seed=0):
    """Largest relative error ``||Q^T Q u - u|| / ||u||`` over random ``u``."""
    if Q.rows != Q.cols:
        return np.inf
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((Q.cols, trials))
    R = Q.rmatmat(Q.matmat(U)) - U
    return float(np.max(np.linalg.norm(R, axis=0) / np.linalg.norm(U, axis=0)))


def adjoint_mismatch(A, pairs=20, seed=0):
    """Largest normalized gap ``|<Au, v> - <u, A^T v>| / (||u|| ||v|| + 1)``."""
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((A.cols, pairs))
    V = rng.standard_normal((A.rows, pairs))
    lhs = np.sum(A.matmat(U) * V, axis=0)
    rhs = np.sum(U * A.rmatmat(V), axis=0)
    scale = np.linalg.norm(U, axis=0) * np.linalg.norm(V, axis=0) + 1.0
    return float(np.max(np.abs(lhs - rhs) / scale))


@dataclass(frozen=True)
class StackedBasis:
    """The pair ``Gamma = [Phi, Psi]`` of orthonormal ``p x p`` maps."""

    phi: LinearMap
    psi: LinearMap
    check: bool = True

    def __post_init__(self):
        if self.phi.shape != self.psi.shape or self.phi.rows != self.phi.cols:
            raise InvalidArgument("phi and psi must both be square with equal size")
        if self.check:
            for name, Q in (("phi", self.phi), ("psi", self.psi)):
                err = orthonormality_error(Q)
                if not err <= 1e-8:
                    raise PreconditionViolation("%s is not orthonormal (error %.3g)" % (name, err))

    @property
    def p(self):
        return self.phi.cols

    def apply(self, t):
        return apply_stacked(self, t)

    def adjoint(self, v):
        return adjoint_stacked(self, v)


def apply_stacked(basis, t):
    """``Phi t[:p] + Psi t[p:]`` for a stacked length-``2p`` vector."""
    t = np.asarray(t, dtype=np.float64)
    p = basis.p
    if t.shape != (2 * p,):
        raise InvalidArgument("stacked vector must have length %d, got %s" % (2 * p, t.shape))
    return basis.phi.matvec(t[:p]) + basis.psi.matvec(t[p:])


def adjoint_stacked(basis, v):
    """``[Phi^T v; Psi^T v]``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (basis.p,):
        raise InvalidArgument("vector must have length %d, got %s" % (basis.p, v.shape))
    return np.concatenate([basis.phi.rmatvec(v), basis.psi.rmatvec(v)])


def save_dense(path, A):
    """Write a dense matrix in the ``DMXMAT01`` binary layout."""
    M = A.todense() if isinstance(A, LinearMap) else np.asarray(A, dtype=np.float64)
    if M.ndim != 2:
        raise InvalidArgument("only 2-D matrices can be serialized")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", M.shape[0], M.shape[1]))
        fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def load_dense(path):
    with open(path, "rb") as fh:
        head = fh.read(24)
        if len(head) != 24 or head[:8] != _MAGIC:
            raise InvalidArgument("%s is not a DMXMAT01 file" % path)
        rows, cols = struct.unpack("<QQ", head[8:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise InvalidArgument("%s is truncated: expected %d values, found %d"
                              % (path, rows * cols, data.size))
    return DenseMap(data.reshape(rows, cols).astype(np.float64))
