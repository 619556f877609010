"""Scenario configuration and deterministic RNG substreams."""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Raised when a scenario violates a dimensional or identifiability condition."""


def default_irs_split(n):
    """Near-square ``(n1, n2)`` split of ``n`` with ``n1`` a power of two."""
    n1 = 2 ** math.ceil(math.log2(math.sqrt(n))) if n > 1 else 1
    while n1 > 1 and n % n1:
        n1 //= 2
    return n1, n // n1


@dataclass(frozen=True)
class SystemConfig:
    """All scenario constants of the two-stage receiver.

    ``N1``/``N2`` default to the near-square split returned by
    :func:`default_irs_split`. ``T0`` defaults to ``Q * N``.
    """

    M: int = 2
    Q: int = 2
    N: int = 32
    L1: int = 2
    L2: int = 2
    T0: int | None = None
    Tp: int = 16
    Td: int = 48
    I: int = 2
    K: int = 5
    delta: float = 0.75
    lam: float = 0.75
    snr_db: float = 30.0
    seed: int = 0
    N1: int | None = None
    N2: int | None = None
    noiseless: bool = False
    # ALS / BALS controls
    als_tol: float = 1e-6
    als_max_iter: int = 100
    als_restarts: int = 3
    bals_tol: float = 1e-6
    bals_max_iter: int = 50

    def __post_init__(self):
        if self.T0 is None:
            object.__setattr__(self, "T0", self.Q * self.N)
        if self.N1 is None or self.N2 is None:
            n1, n2 = default_irs_split(self.N)
            object.__setattr__(self, "N1", n1)
            object.__setattr__(self, "N2", n2)
        self.validate()

    @property
    def T(self):
        return self.Tp + self.Td

    def validate(self):
        ints = ("M", "Q", "N", "L1", "L2", "T0", "Tp", "Td", "I", "K", "N1", "N2")
        for name in ints:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("delta", "lam"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        M, Q, N, I, K = self.M, self.Q, self.N, self.I, self.K
        R = self.L1 * self.L2
        checks = [
            (self.N1 * self.N2 == N, "N must equal N1*N2"),
            (self.T0 >= Q * N, "T0 >= Q*N is required for the LS step"),
            (Q * N * I >= R, "Q*N*I >= L1*L2 is required"),
            (Q * M * I >= R, "Q*M*I >= L1*L2 is required"),
            (Q * M * N >= R, "Q*M*N >= L1*L2 is required"),
            (M * self.Tp >= R, "M*Tp >= L1*L2 is required"),
            (M * K >= Q, "M*K >= Q is required"),
            (M * self.Td >= R, "M*Td >= L1*L2 is required"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def replace(self, **changes):
        """Copy with ``changes``; derived fields are recomputed unless given."""
        if "N" in changes:
            changes.setdefault("N1", None)
            changes.setdefault("N2", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


_ALIASES = {"lambda": "lam", "snr": "snr_db"}


def _coerce(name, raw):
    kind = {f.name: f.type for f in dataclasses.fields(SystemConfig)}[name]
    raw = raw.strip()
    if "bool" in str(kind):
        return raw.lower() in ("1", "true", "yes", "on")
    if "float" in str(kind):
        return float(raw)
    return int(raw)


def load_config(path, **overrides):
    """Read a flat ``key = value`` file into a :class:`SystemConfig`.

    Keys mirror the field names (``lambda`` is accepted for ``lam``).
    Unknown keys raise :class:`ConfigError`.
    """
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string("[config]\n" + text)
    known = {f.name for f in dataclasses.fields(SystemConfig)}
    values = {}
    for key, raw in parser["config"].items():
        name = _ALIASES.get(key, key)
        if name not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[name] = _coerce(name, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SystemConfig(**values)


# Stream purposes for per-run substreams.
GEOMETRY, FADING, ALS_INIT, STAGE1_NOISE, STAGE2_NOISE, DATA = range(6)


def substream(seed, *key):
    """Independent generator addressed by ``(seed, *key)``.

    The same address always yields the same stream, regardless of which
    process asks for it or in which order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
