"""Noise schedules for the diffusion process."""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule tables.

    ``beta``/``alpha`` are length-T arrays indexed by t-1 for steps
    t = 1..T. ``alpha_bar`` has length T+1 with ``alpha_bar[0] = 1`` so the
    terminal implicit-sampler step (t_next = 0) falls out of the same
    lookup.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def beta_at(self, t):
        return self.beta[t - 1]

    def alpha_at(self, t):
        return self.alpha[t - 1]

    def alpha_bar_at(self, t):
        return self.alpha_bar[t]


def linear_schedule(T, beta_start=1e-4, beta_end=0.02):
    """Linearly spaced variances, endpoints inclusive.

    The defaults are the standard 0.0001 -> 0.02 range used with T=1000.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        beta = np.array([beta_start])
    else:
        beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def timestep_subsequence(T, S, i):
    """Timestep pair visited at iteration i of the S-step implicit sampler.

    t = (i-1)*T/S + 1 and t_next = (i-2)*T/S + 1 (0 when i == 1), using
    floor division so non-divisible T/S is permitted.
    """
    if not (1 <= i <= S <= T):
        raise ValueError(f"need 1 <= i <= S <= T, got i={i}, S={S}, T={T}")
    t = (i - 1) * T // S + 1
    t_next = (i - 2) * T // S + 1 if i > 1 else 0
    return t, t_next


def dump_schedule(sched, path):
    with open(path, "w") as f:
        json.dump({"T": sched.T, "beta": sched.beta.tolist()}, f)


def load_schedule(path):
    with open(path) as f:
        doc = json.load(f)
    beta = np.asarray(doc["beta"], dtype=np.float64)
    if len(beta) != doc["T"]:
        raise ValueError("schedule file is inconsistent: len(beta) != T")
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return NoiseSchedule(T=doc["T"], beta=beta, alpha=alpha, alpha_bar=alpha_bar)
