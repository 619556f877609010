"""Geometric channels with double-timescale aging, training design and
received-signal synthesis for the IRS-assisted uplink.

Protocol: ``I`` frames, each with ``K + 1`` blocks. Block 1 (length
``T0``) carries Stage-1 pilots while the IRS sweeps the phase matrix
``S``; blocks 2..K+1 (length ``Tp + Td``) carry Stage-2 pilots and data
with the IRS held at ``s_opt``.

Array layout used throughout: block index ``k`` is stored 0-based, so
``H[i, 0]`` is block 1 of frame ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .config import ConfigError
from .tensor import khatri_rao, numerical_rank, vec

__all__ = [
    "Geometry",
    "FadingTrajectory",
    "ChannelRealization",
    "TrainingDesign",
    "ula_steering",
    "ura_steering",
    "crandn",
    "draw_geometry",
    "evolve_fading",
    "realize_channels",
    "design_training",
    "draw_data",
    "bits_to_bpsk",
    "add_noise",
    "synthesize_stage1",
    "synthesize_stage2",
]


def crandn(rng, *shape, var=1.0):
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def ula_steering(mu, size):
    """Half-wavelength ULA response, entry ``m`` equal to ``exp(-1j*m*mu)``."""
    return np.exp(-1j * np.arange(size) * mu)


def ura_steering(mu, psi, n1, n2):
    """Planar-array response ``ula(mu, n1) (x) ula(psi, n2)``."""
    return np.kron(ula_steering(mu, n1), ula_steering(psi, n2))


@dataclass
class Geometry:
    """Path angles (radians) and the steering matrices they induce."""

    phi_bs: np.ndarray      # (L1,) AoA at the BS
    phi_ue: np.ndarray      # (L2,) AoD at the UE
    phi_irs_a: np.ndarray   # (L2,) IRS azimuth AoA
    theta_irs_a: np.ndarray  # (L2,) IRS elevation AoA
    phi_irs_d: np.ndarray   # (L1,) IRS azimuth AoD
    theta_irs_d: np.ndarray  # (L1,) IRS elevation AoD

    @property
    def mu_bs(self):
        return np.pi * np.cos(self.phi_bs)

    @property
    def mu_ue(self):
        return np.pi * np.cos(self.phi_ue)

    @property
    def mu_irs_a(self):
        return np.pi * np.cos(self.phi_irs_a) * np.sin(self.theta_irs_a)

    @property
    def psi_irs_a(self):
        return np.pi * np.cos(self.phi_irs_a)

    @property
    def mu_irs_d(self):
        return np.pi * np.cos(self.phi_irs_d) * np.sin(self.theta_irs_d)

    @property
    def psi_irs_d(self):
        return np.pi * np.cos(self.phi_irs_d)

    def steering(self, config):
        """Return ``(A_rx, A_tx, B_rx, B_tx)``."""
        a_rx = np.stack([ula_steering(mu, config.M) for mu in self.mu_bs], axis=1)
        a_tx = np.stack([ula_steering(mu, config.Q) for mu in self.mu_ue], axis=1)
        b_rx = np.stack(
            [ura_steering(mu, psi, config.N1, config.N2)
             for mu, psi in zip(self.mu_irs_a, self.psi_irs_a)],
            axis=1,
        )
        b_tx = np.stack(
            [ura_steering(mu, psi, config.N1, config.N2)
             for mu, psi in zip(self.mu_irs_d, self.psi_irs_d)],
            axis=1,
        )
        return a_rx, a_tx, b_rx, b_tx


def draw_geometry(config, rng):
    """BS/UE angles uniform on [-pi, pi], IRS angles uniform on [-pi/2, pi/2]."""
    L1, L2 = config.L1, config.L2
    return Geometry(
        phi_bs=rng.uniform(-np.pi, np.pi, L1),
        phi_ue=rng.uniform(-np.pi, np.pi, L2),
        phi_irs_a=rng.uniform(-np.pi / 2, np.pi / 2, L2),
        theta_irs_a=rng.uniform(-np.pi / 2, np.pi / 2, L2),
        phi_irs_d=rng.uniform(-np.pi / 2, np.pi / 2, L1),
        theta_irs_d=rng.uniform(-np.pi / 2, np.pi / 2, L1),
    )


@dataclass
class FadingTrajectory:
    """AR(1) fading coefficients.

    ``alpha[i]`` is the BS-IRS gain vector of frame ``i`` and
    ``beta[i, k]`` the IRS-UE gain vector of block ``k`` of frame ``i``.
    ``alpha0`` and ``beta0`` are the pre-roll states the recursions start
    from.
    """

    alpha: np.ndarray  # (I, L1)
    beta: np.ndarray   # (I, K+1, L2)
    alpha0: np.ndarray  # (L1,)
    beta0: np.ndarray  # (L2,)
    zeta: np.ndarray   # (I, L1) innovations
    xi: np.ndarray     # (I, K+1, L2) innovations


def evolve_fading(config, rng):
    """Run the two AR(1) recursions over all frames and blocks.

    ``alpha_i = delta * alpha_{i-1} + zeta_i`` once per frame;
    ``beta`` advances once per block and carries over frame boundaries
    from the last block of the previous frame. Both start from ``CN(0, 1)``
    states, so every coefficient is marginally ``CN(0, 1)``.
    """
    I, K, L1, L2 = config.I, config.K, config.L1, config.L2
    d, lam = config.delta, config.lam
    alpha0 = crandn(rng, L1)
    beta0 = crandn(rng, L2)
    zeta = crandn(rng, I, L1, var=1.0 - d * d)
    xi = crandn(rng, I, K + 1, L2, var=1.0 - lam * lam)

    alpha = np.empty((I, L1), dtype=complex)
    prev = alpha0
    for i in range(I):
        prev = d * prev + zeta[i]
        alpha[i] = prev

    beta = np.empty((I, K + 1, L2), dtype=complex)
    prev = beta0
    for i in range(I):
        for k in range(K + 1):
            prev = lam * prev + xi[i, k]
            beta[i, k] = prev
    return FadingTrajectory(alpha, beta, alpha0, beta0, zeta, xi)


@dataclass
class ChannelRealization:
    """Steering matrices plus materialized per-frame/per-block channels."""

    A_rx: np.ndarray  # (M, L1)
    A_tx: np.ndarray  # (Q, L2)
    B_rx: np.ndarray  # (N, L2)
    B_tx: np.ndarray  # (N, L1)
    G: np.ndarray     # (I, M, N), constant within a frame
    H: np.ndarray     # (I, K+1, N, Q)
    alpha: np.ndarray
    beta: np.ndarray

    def combined(self, i):
        """Stage-1 combined channel ``H_{i,1}^T kr G_i`` (MQ x N)."""
        return khatri_rao(self.H[i, 0].T, self.G[i])

    def effective(self, i, k, s):
        """Effective MIMO channel ``G_i D(s) H_{i,k}`` (M x Q)."""
        return (self.G[i] * s) @ self.H[i, k]

    @property
    def P_B(self):
        """``B_rx^T kr B_tx^H`` stored as an ``L1*L2 x N`` matrix."""
        return khatri_rao(self.B_rx.T, self.B_tx.conj().T)

    @property
    def F(self):
        """Stage-1 fading matrix, row ``i`` equal to ``beta_{i,1} (x) alpha_i``."""
        return np.stack([np.kron(self.beta[i, 0], self.alpha[i]) for i in range(len(self.alpha))])


def realize_channels(geometry, trajectory, config):
    """Materialize ``G_i = A_rx D(alpha_i) B_tx^H`` and ``H_{i,k} = B_rx D(beta_{i,k}) A_tx^H``."""
    a_rx, a_tx, b_rx, b_tx = geometry.steering(config)
    alpha, beta = trajectory.alpha, trajectory.beta
    G = np.einsum("ml,il,nl->imn", a_rx, alpha, b_tx.conj())
    H = np.einsum("nl,ikl,ql->iknq", b_rx, beta, a_tx.conj())
    return ChannelRealization(a_rx, a_tx, b_rx, b_tx, G, H, alpha, beta)


@dataclass
class TrainingDesign:
    S: np.ndarray   # (N, T0) IRS phase sweep, unit modulus
    Z: np.ndarray   # (Q, T0) Stage-1 pilots (shared by all frames)
    Xp: np.ndarray  # (Q, Tp) Stage-2 pilots
    rows: tuple     # rows of the base matrix used for Z

    @property
    def kr(self):
        """``S kr Z`` (QN x T0); its transpose is the Stage-1 system matrix."""
        return khatri_rao(self.S, self.Z)


def _is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


def _dft(n):
    t = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(t, t) / n)


def _pilot_base(n):
    if _is_pow2(n):
        return scipy.linalg.hadamard(n).astype(complex)
    return _dft(n)


def design_training(config):
    """DFT IRS sweep and Hadamard (or DFT) pilot sequences.

    ``Z`` is assembled greedily from rows of the ``T0 x T0`` base matrix,
    each time taking the lowest-index row that keeps ``S kr Z`` best
    conditioned, so the Stage-1 system matrix is full column rank.

    Raises
    ------
    ConfigError
        If ``S kr Z`` cannot be made full rank.
    """
    return _design(config.N, config.Q, config.T0, config.Tp)


@lru_cache(maxsize=32)
def _design(N, Q, T0, Tp):
    if T0 < Q * N:
        raise ConfigError("T0 >= Q*N is required for the Stage-1 LS step")
    S = _dft(T0)[:N]
    base = _pilot_base(T0)

    rows = []
    for _ in range(Q):
        best, best_cond = None, np.inf
        for r in range(T0):
            if r in rows:
                continue
            s = np.linalg.svd(khatri_rao(S, base[rows + [r]]), compute_uv=False)
            cond = s[0] / s[-1] if s[-1] > 0 else np.inf
            if cond < best_cond * (1 - 1e-9):
                best, best_cond = r, cond
        rows.append(best)
    Z = base[rows]
    if numerical_rank(khatri_rao(S, Z)) < Q * N:
        raise ConfigError("S kr Z is rank deficient; Stage-1 LS is not identifiable")

    xp_base = _pilot_base(max(Tp, Q))
    Xp = xp_base[:Q, :Tp]
    for a in (S, Z, Xp):
        a.flags.writeable = False
    return TrainingDesign(S=S, Z=Z, Xp=Xp, rows=tuple(rows))


def bits_to_bpsk(bits):
    """Bit 0 maps to +1, bit 1 to -1."""
    return 1.0 - 2.0 * np.asarray(bits, dtype=float)


def draw_data(config, rng):
    """Random bits ``(Q, Td)`` and their BPSK symbols for one frame."""
    bits = rng.integers(0, 2, size=(config.Q, config.Td), dtype=np.int8)
    return bits, bits_to_bpsk(bits).astype(complex)


def add_noise(clean, snr_db, rng, noiseless=False):
    """AWGN with variance set from the mean power of ``clean``."""
    if noiseless:
        return clean.copy()
    power = np.mean(np.abs(clean) ** 2)
    var = power / 10.0 ** (snr_db / 10.0)
    return clean + crandn(rng, *clean.shape, var=var)


def synthesize_stage1(channel, design, config, i, rng=None):
    """Stacked Stage-1 observations of frame ``i`` (length ``M*T0``).

    Column ``t`` of the ``M x T0`` signal is
    ``G_i D(s_t) H_{i,1} z_t``; the result is its ``vec``.
    """
    G, H = channel.G[i], channel.H[i, 0]
    clean = G @ (design.S * (H @ design.Z))
    y = add_noise(clean, config.snr_db, rng, noiseless=config.noiseless or rng is None)
    return vec(y)


def synthesize_stage2(channel, design, s_opt, Xd, config, i, rng=None):
    """Received blocks ``k = 2..K+1`` of frame ``i``, shape ``(K, M, Tp + Td)``.

    ``Y_{i,k} = G_i D(s_opt) H_{i,k} [Xp | Xd] + V``. The noise level is set
    from the mean power over all ``K`` blocks of the frame.
    """
    X = np.concatenate([design.Xp, Xd], axis=1)
    clean = np.stack([channel.effective(i, k, s_opt) @ X for k in range(1, config.K + 1)])
    return add_noise(clean, config.snr_db, rng, noiseless=config.noiseless or rng is None)
