"""Link functions, the single-index demixing loss and synthetic observations.

The loss of a stacked coefficient vector ``t = [theta1; theta2]`` is

    F(t) = (1/m) * sum_i Theta(x_i^T Gamma t) - y_i * x_i^T Gamma t

with ``Theta`` the antiderivative of the link ``g`` and ``Gamma = [Phi, Psi]``.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .operators import LinearMap, StackedBasis, apply_stacked, adjoint_stacked

__all__ = [
    "LinkFunction", "link_shifted_sigmoid", "link_identity", "get_link", "LINKS",
    "NoiseSpec", "DemixingModel", "generate_observations", "forward",
    "evaluate_loss", "evaluate_gradient", "loss_and_gradient", "hessian_apply",
]

_LOG2 = np.log(2.0)


@dataclass(frozen=True)
class LinkFunction:
    name: str
    g: Callable
    g_prime: Callable
    theta_integral: Callable
    lower_slope: float
    upper_slope: float


def _sigmoid(x):
    return np.tanh(np.asarray(x, dtype=np.float64) / 2)


def _sigmoid_prime(x):
    e = np.exp(-np.abs(np.asarray(x, dtype=np.float64)))
    return 2 * e / (1 + e) ** 2


def _sigmoid_integral(x):
    # 2 log cosh(x/2) rewritten so that exp never overflows
    ax = np.abs(np.asarray(x, dtype=np.float64))
    return ax + 2 * np.log1p(np.exp(-ax)) - 2 * _LOG2


def link_shifted_sigmoid():
    """``g(x) = (1 - e^-x) / (1 + e^-x)``, odd and increasing, with ``Theta(0) = 0``."""
    return LinkFunction("sigmoid", _sigmoid, _sigmoid_prime, _sigmoid_integral,
                        lower_slope=float(_sigmoid_prime(50.0)), upper_slope=0.5)


def link_identity():
    return LinkFunction(
        "identity",
        lambda x: np.array(x, dtype=np.float64),
        lambda x: np.ones_like(np.asarray(x, dtype=np.float64)),
        lambda x: np.asarray(x, dtype=np.float64) ** 2 / 2,
        lower_slope=1.0, upper_slope=1.0)


LINKS = {"sigmoid": link_shifted_sigmoid, "identity": link_identity}


def get_link(name):
    try:
        return LINKS[name]()
    except KeyError:
        raise InvalidArgument("unknown link %r (expected one of %s)" % (name, sorted(LINKS)))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise InvalidArgument("noise kind must be 'none' or 'gaussian'")
        if not self.sigma >= 0:
            raise InvalidArgument("noise sigma must be non-negative")
        if self.kind == "none" and self.sigma != 0:
            raise InvalidArgument("noise kind 'none' requires sigma = 0")


@dataclass(frozen=True, eq=False)
class DemixingModel:
    """Design ``X``, basis pair ``Gamma``, link ``g`` and observations ``y``."""

    design: LinearMap
    basis: StackedBasis
    link: LinkFunction
    observations: np.ndarray

    def __post_init__(self):
        y = np.array(self.observations, dtype=np.float64)
        if self.design.cols != self.basis.p:
            raise InvalidArgument("design has %d columns but the basis dimension is %d"
                                  % (self.design.cols, self.basis.p))
        if y.shape != (self.design.rows,):
            raise InvalidArgument("expected %d observations, got shape %s"
                                  % (self.design.rows, y.shape))
        y.setflags(write=False)
        object.__setattr__(self, "observations", y)

    @property
    def n(self):
        return self.design.rows

    @property
    def p(self):
        return self.basis.p


def _values(v):
    return np.asarray(getattr(v, "values", v), dtype=np.float64)


def generate_observations(design, basis, theta1, theta2, link, noise, seed):
    """Draw ``y = g(X (Phi theta1 + Psi theta2)) + e``.

    ``e`` is i.i.d. ``N(0, sigma^2)`` for Gaussian noise and zero otherwise;
    the noise draw is determined by ``seed``.
    """
    t1, t2 = _values(theta1), _values(theta2)
    if t1.shape != (basis.p,) or t2.shape != (basis.p,):
        raise InvalidArgument("components must have length p=%d" % basis.p)
    if design.cols != basis.p:
        raise InvalidArgument("design and basis dimensions differ")
    beta = basis.phi.matvec(t1) + basis.psi.matvec(t2)
    y = link.g(design.matvec(beta))
    if noise.kind == "gaussian" and noise.sigma > 0:
        y = y + noise.sigma * np.random.default_rng(seed).standard_normal(y.size)
    return y


def forward(model, t):
    """Linear predictor ``X Gamma t``."""
    return model.design.matvec(apply_stacked(model.basis, t))


def evaluate_loss(model, t):
    z = forward(model, t)
    return float(np.mean(model.link.theta_integral(z) - model.observations * z))


def evaluate_gradient(model, t):
    return loss_and_gradient(model, t)[1]


def loss_and_gradient(model, t):
    """Loss and gradient sharing one forward pass and one residual."""
    z = forward(model, t)
    loss = float(np.mean(model.link.theta_integral(z) - model.observations * z))
    r = model.link.g(z) - model.observations
    grad = adjoint_stacked(model.basis, model.design.rmatvec(r)) / model.n
    return loss, grad


def hessian_apply(model, t, d):
    """``(1/m) Gamma^T X^T diag(g'(X Gamma t)) X Gamma d``."""
    w = model.link.g_prime(forward(model, t))
    return adjoint_stacked(model.basis, model.design.rmatvec(w * forward(model, d))) / model.n
