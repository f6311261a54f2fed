"""Physical parameters of a nondegenerate OPO and the conventions shared by all engines.

All rates are expressed in units of the signal half-width ``gamma_s``; the
configuration layer always sets ``gamma_s = 1``.  The model after idler
elimination is a two-mode (pump, signal) Raman-type oscillator whose gain per
pump photon is ``big_g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError

__all__ = [
    "NopoParams",
    "NetworkConfig",
    "NoiseIncrement",
    "threshold_epsilon",
    "normalized_pump",
    "pump_schedule",
    "complex_increment",
    "real_increment",
]


@dataclass(frozen=True)
class NopoParams:
    """Rates of one oscillator.

    Parameters
    ----------
    gamma_p : float
        Pump cavity half-width.
    gamma_s : float
        Signal cavity half-width, the unit of time.
    big_g : float
        Gain per pump photon, ``G``.
    epsilon : float
        Coherent pump drive.
    gamma_i, kappa : float, optional
        Idler half-width and three-wave coupling.  Only used by the
        explicit-idler engine; when both are given ``big_g`` must equal
        ``kappa**2 / gamma_i``.
    """

    gamma_p: float
    big_g: float
    epsilon: float = 0.0
    gamma_s: float = 1.0
    gamma_i: Optional[float] = None
    kappa: Optional[float] = None

    def __post_init__(self):
        for name in ("gamma_p", "gamma_s"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a finite positive rate, got {v!r}")
        # zero gain / zero drive are accepted as test hooks
        for name in ("big_g", "epsilon"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v!r}")
        if self.gamma_i is not None and not (self.gamma_i > 0):
            raise ConfigError(f"gamma_i must be positive, got {self.gamma_i!r}")
        if self.kappa is not None and not (self.kappa >= 0):
            raise ConfigError(f"kappa must be >= 0, got {self.kappa!r}")
        if self.gamma_i is not None and self.kappa is not None:
            g_from_kappa = self.kappa**2 / self.gamma_i
            scale = max(abs(self.big_g), abs(g_from_kappa), 1e-300)
            if abs(self.big_g - g_from_kappa) > 1e-12 * scale:
                raise ConfigError(
                    f"big_g={self.big_g!r} inconsistent with kappa^2/gamma_i={g_from_kappa!r}"
                )

    @classmethod
    def from_pump(cls, gamma_p, big_g, p, gamma_s=1.0, gamma_i=None):
        """Build parameters from the normalized pump ``p = epsilon/epsilon_thr``.

        If ``gamma_i`` is given, ``kappa`` is set to ``sqrt(big_g * gamma_i)``.
        """
        eps = p * gamma_p * math.sqrt(gamma_s / big_g)
        kappa = math.sqrt(big_g * gamma_i) if gamma_i is not None else None
        return cls(gamma_p=gamma_p, big_g=big_g, epsilon=eps, gamma_s=gamma_s,
                   gamma_i=gamma_i, kappa=kappa)

    def with_pump(self, p: float) -> "NopoParams":
        return replace(self, epsilon=p * threshold_epsilon(self))

    @property
    def p(self) -> float:
        return normalized_pump(self)


@dataclass(frozen=True)
class NetworkConfig:
    """One or two oscillators joined by a ferromagnetic dissipative channel.

    The shared loss operator is ``sqrt(J) (a_s1 - a_s2)``.
    """

    nodes: tuple
    coupling_j: float = 0.0
    sign: str = "ferromagnetic"

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) not in (1, 2):
            raise ConfigError(f"networks of {len(nodes)} nodes are not supported (1 or 2)")
        if not all(isinstance(n, NopoParams) for n in nodes):
            raise ConfigError("nodes must be NopoParams instances")
        if not (np.isfinite(self.coupling_j) and self.coupling_j >= 0):
            raise ConfigError(f"coupling_j must be >= 0, got {self.coupling_j!r}")
        if self.sign != "ferromagnetic":
            raise ConfigError(f"only ferromagnetic coupling is supported, got {self.sign!r}")
        if len(nodes) == 1 and self.coupling_j != 0:
            raise ConfigError("a solitary oscillator cannot carry a coupling J")

    @classmethod
    def pair(cls, params: NopoParams, coupling_j: float) -> "NetworkConfig":
        return cls(nodes=(params, params), coupling_j=coupling_j)

    @classmethod
    def solitary(cls, params: NopoParams) -> "NetworkConfig":
        return cls(nodes=(params,), coupling_j=0.0)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def identical(self) -> bool:
        return all(n == self.nodes[0] for n in self.nodes)

    def with_pump(self, p: float) -> "NetworkConfig":
        return replace(self, nodes=tuple(n.with_pump(p) for n in self.nodes))


@dataclass(frozen=True)
class NoiseIncrement:
    """One Euler step of the complex and real Wiener processes.

    ``dw_complex`` has independent real and imaginary parts of variance
    ``dt`` each, so ``E|dW|^2 = 2 dt`` and ``E[dW^2] = 0``; ``dw_real`` has
    variance ``dt``.
    """

    dw_complex: complex
    dw_real: float

    @classmethod
    def sample(cls, rng: np.random.Generator, dt: float) -> "NoiseIncrement":
        return cls(complex(complex_increment(rng, dt)), float(real_increment(rng, dt)))


def complex_increment(rng: np.random.Generator, dt: float, size=None):
    s = math.sqrt(dt)
    return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def real_increment(rng: np.random.Generator, dt: float, size=None):
    return math.sqrt(dt) * rng.standard_normal(size)


def threshold_epsilon(params: NopoParams) -> float:
    """Drive at which the pump holds ``gamma_s/G`` photons: ``gamma_p sqrt(gamma_s/G)``."""
    if params.big_g == 0:
        return math.inf
    return params.gamma_p * math.sqrt(params.gamma_s / params.big_g)


def normalized_pump(params: NopoParams) -> float:
    return params.epsilon / threshold_epsilon(params)


def pump_schedule(target_p: float, t, ramp_time: float):
    """Square-root ramp clamped at the target: ``p min(1, sqrt(t/ramp_time))``."""
    if ramp_time <= 0:
        raise ValueError("ramp_time must be positive")
    frac = np.sqrt(np.clip(np.asarray(t, dtype=float) / ramp_time, 0.0, 1.0))
    out = target_p * frac
    return float(out) if np.ndim(out) == 0 else out
