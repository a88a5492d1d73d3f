"""PI feedback control of the KL weight."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .numerics import NumericError


@dataclass
class PIController:
    """beta = kp / (1 + exp(e)) - ki * sum(e), with e = kl_set - kl.

    The output is clamped to [beta_min, beta_max]. The integral is not
    advanced on a step whose clamped output sits on the bound the error is
    pushing toward (conditional-integration anti-windup).
    """

    kp: float = 0.01
    ki: float = 0.001
    kl_set: float = 1.0
    beta_min: float = 0.0
    beta_max: float = 1.0
    integral: float = 0.0
    beta: float = field(default=None)
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kp <= 0 or self.ki <= 0 or self.kl_set <= 0:
            raise ValueError("kp, ki and kl_set must be positive")
        if self.beta_min > self.beta_max:
            raise ValueError("beta_min must not exceed beta_max")
        if self.beta is None:
            self.beta = self.beta_max

    def _output(self, e, integral):
        # kp / (1 + exp(e)) without overflow for large e
        if e > 0:
            prop = self.kp * math.exp(-e) / (1.0 + math.exp(-e))
        else:
            prop = self.kp / (1.0 + math.exp(e))
        return prop - self.ki * integral

    def update(self, kl: float) -> float:
        if not math.isfinite(kl):
            raise NumericError(f"KL value {kl} is not finite")
        e = self.kl_set - kl
        integral = self.integral + e
        raw = self._output(e, integral)
        beta = min(max(raw, self.beta_min), self.beta_max)
        # positive e lowers beta; negative e raises it. Past a bound in the
        # direction e pushes, the output is clamped and the integral frozen.
        saturated = (raw <= self.beta_min and e > 0) or (raw >= self.beta_max and e < 0)
        if not saturated:
            self.integral = integral
        self.beta = beta
        self.history.append((len(self.history), kl, e, beta))
        return beta

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "kl", "e", "beta"])
            for row in self.history:
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def update_beta(state: PIController, kl: float) -> float:
    return state.update(kl)
