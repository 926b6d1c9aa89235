"""COFIG and FRECON round updates.

Both algorithms keep a local shift ``h_i`` per client and the server-side
average ``h``. Each round a client sends compressed differences between its
stochastic gradient and its shift; those messages update the shifts and
build the server's gradient estimator.

Randomness is drawn from :class:`~fedcvr._rng.SeedStreams`, keyed by round,
message role and client id, and client contributions are reduced in
ascending client order. Running clients through a thread pool therefore
produces bit-identical results.
"""
from concurrent.futures import Executor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _rng
from ._rng import SeedStreams
from .compress import CompressedVector, CompressorSpec, compress, decode
from .problems import (
    FederatedProblem,
    batch_gradient,
    local_full_gradient,
    local_stochastic_gradient,
    sample_batch,
)


class ShiftInit(str, Enum):
    ZEROS = "zeros"
    LOCAL_GRAD = "localgrad"


@dataclass(frozen=True)
class HyperParams:
    """Round hyperparameters.

    ``b=None`` means every client uses its exact local gradient.
    ``lam=None`` means FRECON uses ``S / N``.
    ``coupled_sampling`` makes COFIG reuse its first client set as the
    second one.
    """

    eta: float
    alpha: float
    S: int
    lam: Optional[float] = None
    b: Optional[int] = None
    coupled_sampling: bool = False
    seed: int = 0

    def validate(self, N: int) -> None:
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 1 <= self.S <= N:
            raise ValueError(f"need 1 <= S <= N={N}, got S={self.S}")
        if self.lam is not None and not 0 <= self.lam <= 1:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.b is not None and self.b < 1:
            raise ValueError(f"batch size must be >= 1, got {self.b}")

    def lam_for(self, N: int) -> float:
        return self.S / N if self.lam is None else self.lam


@dataclass
class CofigState:
    x: np.ndarray
    h_i: np.ndarray  # (N, d)
    h: np.ndarray
    t: int = 0


@dataclass
class FreconState:
    x: np.ndarray
    g: np.ndarray
    h_i: np.ndarray  # (N, d)
    h: np.ndarray
    t: int = 0


State = Union[CofigState, FreconState]


@dataclass
class RoundOutcome:
    state: State
    uplink_bits: int
    g_used: np.ndarray
    sampled_sets: Tuple[np.ndarray, ...]


def _initial_shifts(fp: FederatedProblem, x0, mode) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x0 = np.array(x0, dtype=np.float64)
    if x0.shape != (fp.dim,):
        raise ValueError(f"x0 must have length {fp.dim}, got shape {x0.shape}")
    mode = ShiftInit(mode)
    if mode is ShiftInit.ZEROS:
        h_i = np.zeros((fp.N, fp.dim))
    else:
        h_i = np.stack([local_full_gradient(c, x0) for c in fp.clients])
    return x0, h_i, h_i.mean(axis=0)


def cofig_init(fp: FederatedProblem, x0, h0_mode: Union[str, ShiftInit] = ShiftInit.ZEROS) -> CofigState:
    x0, h_i, h = _initial_shifts(fp, x0, h0_mode)
    return CofigState(x0, h_i, h, 0)


def frecon_init(fp: FederatedProblem, x0, h0_mode: Union[str, ShiftInit] = ShiftInit.ZEROS) -> FreconState:
    x0, h_i, h = _initial_shifts(fp, x0, h0_mode)
    return FreconState(x0, np.zeros(fp.dim), h_i, h, 0)


def _sample_clients(rng: np.random.Generator, N: int, S: int) -> np.ndarray:
    return np.sort(rng.choice(N, size=S, replace=False))


def _map(pool: Optional[Executor], fn: Callable, items: Sequence) -> List:
    if pool is None:
        return [fn(i) for i in items]
    return list(pool.map(fn, items))


def _sum(vectors: List[np.ndarray]) -> np.ndarray:
    total = np.zeros_like(vectors[0])
    for v in vectors:
        total += v
    return total


def cofig_round(
    state: CofigState,
    fp: FederatedProblem,
    hp: HyperParams,
    spec: CompressorSpec,
    streams: SeedStreams,
    pool: Optional[Executor] = None,
) -> RoundOutcome:
    """One COFIG round: two client sets, shift update from one, estimator from the other."""
    N, t = fp.N, state.t
    rng = streams.sampling(t)
    active = _sample_clients(rng, N, hp.S)
    probe = active if hp.coupled_sampling else _sample_clients(rng, N, hp.S)

    def message(role: int) -> Callable[[int], CompressedVector]:
        def send(i: int) -> CompressedVector:
            crng = streams.client(t, role, i)
            grad = local_stochastic_gradient(fp.clients[i], state.x, hp.b, crng)
            return compress(spec, grad - state.h_i[i], crng)
        return send

    u_msgs = _map(pool, message(_rng.UPLINK_U), active)
    # v uses the pre-update shifts even for clients that are also in `active`
    v_msgs = _map(pool, message(_rng.UPLINK_V), probe)
    u = [decode(m) for m in u_msgs]
    v = [decode(m) for m in v_msgs]

    g = _sum(v) / hp.S + state.h
    h_i = state.h_i.copy()
    for i, ui in zip(active, u):
        h_i[i] += hp.alpha * ui
    h = state.h + (hp.alpha / N) * _sum(u)

    new = CofigState(state.x - hp.eta * g, h_i, h, t + 1)
    bits = sum(m.bit_cost for m in u_msgs) + sum(m.bit_cost for m in v_msgs)
    return RoundOutcome(new, bits, g, (active, probe))


def frecon_round(
    state: FreconState,
    fp: FederatedProblem,
    hp: HyperParams,
    spec: CompressorSpec,
    streams: SeedStreams,
    pool: Optional[Executor] = None,
) -> RoundOutcome:
    """One FRECON round: model step first, then recursive and shift messages."""
    N, t = fp.N, state.t
    lam = hp.lam_for(N)
    x_old = state.x
    x_new = x_old - hp.eta * state.g
    active = _sample_clients(streams.sampling(t), N, hp.S)

    def send_q(i: int) -> CompressedVector:
        crng = streams.client(t, _rng.UPLINK_Q, i)
        c = fp.clients[i]
        # one minibatch shared by both evaluation points
        idx = sample_batch(c, hp.b, crng)
        return compress(spec, batch_gradient(c, x_new, idx) - batch_gradient(c, x_old, idx), crng)

    def send_u(i: int) -> CompressedVector:
        crng = streams.client(t, _rng.UPLINK_U, i)
        grad = local_stochastic_gradient(fp.clients[i], x_old, hp.b, crng)
        return compress(spec, grad - state.h_i[i], crng)

    q_msgs = _map(pool, send_q, active)
    u_msgs = _map(pool, send_u, active)
    q = [decode(m) for m in q_msgs]
    u = [decode(m) for m in u_msgs]

    g_next = _sum(q) / hp.S + (1.0 - lam) * state.g + lam * (_sum(u) / hp.S + state.h)
    h_i = state.h_i.copy()
    for i, ui in zip(active, u):
        h_i[i] += hp.alpha * ui
    h = state.h + (hp.alpha / N) * _sum(u)

    new = FreconState(x_new, g_next, h_i, h, t + 1)
    bits = sum(m.bit_cost for m in q_msgs) + sum(m.bit_cost for m in u_msgs)
    return RoundOutcome(new, bits, state.g, (active,))


def shift_gap(state: State) -> float:
    """||h - mean_i h_i||, zero up to rounding for a consistent state."""
    return float(np.linalg.norm(state.h - state.h_i.mean(axis=0)))

