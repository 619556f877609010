"""Stage 2: fading tracking and joint symbol detection.

With the IRS fixed at ``s_opt``, block ``k`` of frame ``i`` reads::

    Y_{i,k} = A_rx D(alpha_i) J D(beta_{i,k}) A_tx^H X_i + V,
    J = B_tx^H D(s_opt) B_rx.

Stacking the ``K`` blocks of a frame gives a third-order tensor
``core x_0 A_rx x_1 C x_2 F^T`` whose core has the diagonal mode-2
unfolding ``D(vec(J))``. Pilots give an LS start for ``F``; the data part
is then fitted by bilinear ALS over the symbols and ``F``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .parkron import EstimationError, NumericalError, kron_factorize
from .tensor import pinv, unfold, unvec, vec

__all__ = [
    "CoreTensorJ",
    "TrackingState",
    "build_core_tensor",
    "build_pilot_tensor",
    "build_data_tensor",
    "init_fading",
    "bals_detect",
    "demap_bpsk",
    "bit_error_rate",
    "reconstruct_W",
    "FrameDetection",
    "track_frame",
]


@dataclass
class CoreTensorJ:
    J: np.ndarray         # (L1, L2)
    J_tensor: np.ndarray  # (L1, L2, L1*L2)


def build_core_tensor(B_tx, B_rx, s_opt):
    """Core ``J = B_tx^H D(s_opt) B_rx`` and its ``L1 x L2 x L1L2`` tensor form.

    Entry ``(l1, l2, p)`` of the tensor is ``vec(J)[p]`` when
    ``p == l2 * L1 + l1`` and zero otherwise.
    """
    J = (B_tx.conj().T * s_opt) @ B_rx
    L1, L2 = J.shape
    Jt = np.zeros((L1, L2, L1 * L2), dtype=complex)
    l1, l2 = np.meshgrid(np.arange(L1), np.arange(L2), indexing="ij")
    Jt[l1, l2, l2 * L1 + l1] = J
    return CoreTensorJ(J=J, J_tensor=Jt)


def _stack_blocks(blocks, name):
    blocks = [np.asarray(b) for b in blocks]
    if not blocks:
        raise ValueError(f"no {name} blocks")
    shape = blocks[0].shape
    if any(b.shape != shape for b in blocks):
        raise ValueError(f"{name} blocks must share one shape")
    return np.stack(blocks, axis=2)


def build_pilot_tensor(pilot_blocks):
    """``M x Tp x K`` tensor whose slice ``k`` is the pilot part of block ``k``."""
    return _stack_blocks(pilot_blocks, "pilot")


def build_data_tensor(data_blocks):
    """``M x Td x K`` tensor whose slice ``k`` is the data part of block ``k``."""
    return _stack_blocks(data_blocks, "data")


def init_fading(pilot_tensor, J_tensor, A_rx, C):
    """Pilot-based LS estimate of the combined fading matrix.

    ``C = (A_tx^H Xp)^T`` is ``Tp x L2``. Returns ``F`` of shape
    ``L1*L2 x K``, one column per tracked block.

    Raises
    ------
    EstimationError
        If ``M*Tp < L1*L2`` or the system matrix loses row rank.
    """
    M, Tp, K = pilot_tensor.shape
    R = J_tensor.shape[2]
    if M * Tp < R:
        raise EstimationError(f"M*Tp = {M * Tp} < L1*L2 = {R}")
    system = unfold(J_tensor, 2) @ np.kron(C, A_rx).T
    inv, rank = pinv(system, return_rank=True)
    if rank < R:
        raise EstimationError(f"pilot system matrix has rank {rank} < {R}")
    return (unfold(pilot_tensor, 2) @ inv).T


@dataclass
class TrackingState:
    F: np.ndarray          # (L1*L2, K)
    X: np.ndarray          # (Q, Td), continuous LS symbols
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)       # after each full sweep
    half_residuals: list = field(default_factory=list)  # after every LS step

    @property
    def bits(self):
        return demap_bpsk(self.X)


def _model(J_tensor, A_rx, A_tx, X, F):
    U1 = (A_tx.conj().T @ X).T
    return A_rx @ unfold(J_tensor, 0) @ np.kron(F.T, U1).T


def bals_detect(data_tensor, J_tensor, A_rx, A_tx, F_init, tol=1e-6, max_iter=50):
    """Bilinear ALS over data symbols ``X`` and fading ``F``.

    The symbol update uses the mode-1 unfolding, the fading update the
    mode-2 unfolding; both are exact LS so the residual is non-increasing.
    ``X`` stays continuous; hard decisions are taken afterwards.

    Raises
    ------
    EstimationError
        If ``M*K < Q`` or ``M*Td < L1*L2``.
    NumericalError
        If the data or an iterate is non-finite.
    """
    M, Td, K = data_tensor.shape
    Q = A_tx.shape[0]
    R = J_tensor.shape[2]
    if M * K < Q:
        raise EstimationError(f"M*K = {M * K} < Q = {Q}")
    if M * Td < R:
        raise EstimationError(f"M*Td = {M * Td} < L1*L2 = {R}")

    Y0 = unfold(data_tensor, 0)
    Y1 = unfold(data_tensor, 1)
    Y2 = unfold(data_tensor, 2)
    J1 = unfold(J_tensor, 1)
    J2 = unfold(J_tensor, 2)
    if not np.all(np.isfinite(data_tensor)):
        raise NumericalError("data tensor has non-finite entries")
    norm = np.linalg.norm(data_tensor)
    if norm == 0:
        raise EstimationError("data tensor is zero")
    A_txc = A_tx.conj()

    def residual(X, F):
        return float(np.linalg.norm(Y0 - _model(J_tensor, A_rx, A_tx, X, F)) / norm)

    F = np.array(F_init, dtype=complex)
    X = None
    residuals, half = [], []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        system = A_txc @ J1 @ np.kron(F.T, A_rx).T
        X = (Y1 @ pinv(system)).T
        half.append(residual(X, F))
        U1 = (A_tx.conj().T @ X).T
        F = (Y2 @ pinv(J2 @ np.kron(U1, A_rx).T)).T
        res = residual(X, F)
        half.append(res)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(F)) and np.isfinite(res)):
            raise NumericalError("BALS produced non-finite iterates")
        residuals.append(res)
        if res < 1e-14 or (it > 1 and abs(residuals[-2] - res) <= tol * residuals[-2]):
            converged = True
            break
    return TrackingState(F=F, X=X, iterations=it, converged=converged,
                         residuals=residuals, half_residuals=half)


def demap_bpsk(X):
    """Hard BPSK decisions: bit 0 when ``Re(x) >= 0``, else bit 1."""
    return (np.real(X) < 0).astype(np.int8)


def bit_error_rate(X_hat, bits):
    """Returns ``(errors, total, ber)`` of ``X_hat`` against reference bits."""
    decided = demap_bpsk(X_hat)
    bits = np.asarray(bits)
    errors = int(np.count_nonzero(decided != bits))
    return errors, bits.size, errors / bits.size


def reconstruct_W(A_rx, A_tx, J, f, split=False):
    """Effective channel ``A_rx D(alpha) J D(beta) A_tx^H`` from ``f = beta (x) alpha``.

    By default ``f`` enters through the core tensor directly. With
    ``split=True`` it is first projected onto the nearest Kronecker
    product via :func:`kron_factorize`.
    """
    L1, L2 = J.shape
    if split:
        beta, alpha = kron_factorize(f, L1, L2)
        f = np.kron(beta, alpha)
    core = unvec(vec(J) * f, L1, L2)
    return A_rx @ core @ A_tx.conj().T


@dataclass
class FrameDetection:
    F_init: np.ndarray     # pilot-only LS estimate (L1*L2, K)
    state: TrackingState
    W_hat: np.ndarray      # (K, M, Q)

    @property
    def bits(self):
        return self.state.bits


def track_frame(blocks, Xp, A_rx, A_tx, B_rx, B_tx, s_opt, tol=1e-6, max_iter=50, split=False):
    """Stage 2 for one frame.

    ``blocks`` has shape ``(K, M, Tp + Td)``; the first ``Tp`` columns of
    each block carry the pilots ``Xp``. Returns the detected symbols, the
    tracked fading and the per-block effective channels.
    """
    blocks = np.asarray(blocks)
    Tp = Xp.shape[1]
    core = build_core_tensor(B_tx, B_rx, s_opt)
    pilots = build_pilot_tensor(list(blocks[:, :, :Tp]))
    data = build_data_tensor(list(blocks[:, :, Tp:]))
    C = (A_tx.conj().T @ Xp).T
    F0 = init_fading(pilots, core.J_tensor, A_rx, C)
    state = bals_detect(data, core.J_tensor, A_rx, A_tx, F0, tol=tol, max_iter=max_iter)
    W_hat = np.stack([reconstruct_W(A_rx, A_tx, core.J, f, split=split) for f in state.F.T])
    return FrameDetection(F_init=F0, state=state, W_hat=W_hat)
