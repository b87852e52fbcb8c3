"""Potential-outcome models ``y_i = alpha + beta_i z_i + f_i(e_i) + eps_i``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AdaThreshError

F_KINDS = ("linear", "sigmoid", "sine")


def exposure_response(kind: str, gamma, e):
    """``f(e)`` scaled by ``gamma``.

    The sigmoid variant is ``gamma * (1 + exp(-e))`` exactly as used in the
    robustness experiments, not the logistic function.
    """
    e = np.asarray(e, dtype=np.float64)
    if kind == "linear":
        return gamma * e
    if kind == "sigmoid":
        return gamma * (1.0 + np.exp(-e))
    if kind == "sine":
        return gamma * (1.0 - np.sin(np.pi * e))
    raise AdaThreshError(f"unknown exposure response {kind!r}; expected one of {F_KINDS}")


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    """Outcome model with a frozen noise vector.

    ``beta`` and ``gamma`` may be scalars or per-unit arrays.  ``epsilon`` is
    drawn once (see :meth:`with_noise`) and reused for every assignment.
    """

    alpha: float = 10.0
    beta: float | np.ndarray = 10.0
    gamma: float | np.ndarray = 0.0
    f_kind: str = "linear"
    epsilon: np.ndarray | None = None

    def __post_init__(self):
        if self.f_kind not in F_KINDS:
            raise AdaThreshError(f"unknown exposure response {self.f_kind!r}")
        if self.epsilon is not None:
            eps = np.array(self.epsilon, dtype=np.float64)
            eps.flags.writeable = False
            object.__setattr__(self, "epsilon", eps)

    @classmethod
    def with_noise(cls, n: int, sd: float = 1.0, seed: int = 0, **kw) -> "OutcomeModel":
        eps = sd * np.random.default_rng(seed).standard_normal(n) if sd else np.zeros(n)
        return cls(epsilon=eps, **kw)

    def scaled(self, c: float) -> "OutcomeModel":
        eps = None if self.epsilon is None else c * self.epsilon
        return OutcomeModel(c * self.alpha, c * self.beta, c * self.gamma, self.f_kind, eps)

    def f(self, e):
        return exposure_response(self.f_kind, self.gamma, e)

    def potential(self, z, e):
        """Outcomes at arbitrary ``(z, e)`` vectors (broadcasting)."""
        z = np.asarray(z, dtype=np.float64)
        y = self.alpha + self.beta * z + self.f(e)
        if self.epsilon is not None:
            y = y + self.epsilon
        return y


def evaluate(model: OutcomeModel, a, e) -> np.ndarray:
    """Realised outcomes for assignment ``a`` and exposure profile ``e``."""
    z = np.asarray(getattr(a, "z", a))
    frac = getattr(e, "e", e)
    if model.epsilon is not None and len(model.epsilon) != len(z):
        raise AdaThreshError(f"noise vector has length {len(model.epsilon)}, expected {len(z)}")
    return model.potential(z, frac)


def true_ate(model: OutcomeModel) -> float:
    """All-treated minus all-control mean outcome, ``mean(beta + f(1) - f(0))``."""
    per_unit = model.beta + model.f(1.0) - model.f(0.0)
    return float(np.mean(per_unit))
