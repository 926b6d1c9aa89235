"""Experiment driver: build a problem from a config, run rounds, record metrics."""
import csv
import io
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ._rng import INIT, PROBE, SeedStreams
from .algorithms import (
    HyperParams,
    ShiftInit,
    cofig_init,
    cofig_round,
    frecon_init,
    frecon_round,
)
from .compress import CompressorSpec, bit_cost_model, omega, parse_compressor
from .data import load_libsvm, make_synthetic, partition_class_sorted, partition_uniform
from .problems import (
    FederatedProblem,
    estimate_sigma,
    global_full_gradient,
    global_loss,
    logreg_problem,
    random_quadratic,
    smoothness_bound,
)
from . import theory

log = logging.getLogger(__name__)

CSV_HEADER = ("t", "loss", "grad_norm", "cum_bits", "elapsed")
THEORY_MODES = ("theory:convex", "theory:nonconvex")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``smoothness`` overrides the estimated ``L``. ``eta``, ``batch`` and
    ``sigma`` accept either numbers or the strings
    ``"theory:convex"`` / ``"theory:nonconvex"``, ``"theory"`` / ``"full"``
    and ``"estimate"`` respectively. ``alpha`` and ``lam`` default to the
    theoretical ``1/(1+omega)`` and ``S/N``.
    """

    problem: str = "logreg"
    dataset: Optional[str] = None
    samples: int = 500
    dim: int = 20
    reg_alpha: float = 0.0
    partition: str = "uniform"
    clients: int = 10
    participate: int = 2
    algo: str = "cofig"
    compressor: str = "natural"
    eta: Union[float, str] = "theory:nonconvex"
    alpha: Optional[float] = None
    lam: Optional[float] = None
    batch: Union[int, str] = "full"
    eps: float = 1e-2
    smoothness: Optional[float] = None
    sigma: Union[float, str] = 0.0
    rounds: int = 1000
    eval_every: int = 10
    seed: int = 0
    h0: str = "zeros"
    coupled_sampling: bool = False
    workers: int = 1
    stop_early: bool = False
    record_time: bool = False

    def validate(self) -> None:
        if self.problem not in ("logreg", "quadratic"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.partition not in ("uniform", "class_sorted"):
            raise ValueError(f"unknown partition {self.partition!r}")
        if self.algo not in ("cofig", "frecon"):
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.clients < 1:
            raise ValueError("clients must be >= 1")
        if not 1 <= self.participate <= self.clients:
            raise ValueError(f"need 1 <= S <= N, got S={self.participate}, N={self.clients}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.smoothness is not None and not self.smoothness > 0:
            raise ValueError("smoothness must be positive")
        if self.reg_alpha < 0:
            raise ValueError("reg_alpha must be non-negative")
        if self.dim < 1 or self.samples < 1:
            raise ValueError("dim and samples must be positive")
        ShiftInit(self.h0)
        if isinstance(self.eta, str):
            if self.eta not in THEORY_MODES:
                raise ValueError(f"eta must be a number or one of {THEORY_MODES}, got {self.eta!r}")
            if self.algo == "frecon" and self.eta == "theory:convex":
                raise ValueError("FRECON has no convex step-size theory; use theory:nonconvex")
        elif not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if isinstance(self.batch, str):
            if self.batch not in ("full", "theory"):
                raise ValueError(f"batch must be an integer, 'full' or 'theory', got {self.batch!r}")
        elif self.batch < 1:
            raise ValueError("batch must be >= 1")
        if isinstance(self.sigma, str):
            if self.sigma != "estimate":
                raise ValueError(f"sigma must be a number or 'estimate', got {self.sigma!r}")
        elif self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.lam is not None and not 0 <= self.lam <= 1:
            raise ValueError("lambda must lie in [0, 1]")
        if self.coupled_sampling and self.algo != "cofig":
            raise ValueError("coupled sampling only applies to cofig")
        # syntax only; k <= d is checked once d is known
        parse_compressor(self.compressor, 10**9)


@dataclass
class MetricsRow:
    t: int
    loss: float
    grad_norm: float
    cum_bits: int
    elapsed: float


@dataclass
class Setup:
    """A resolved run: problem, compressor, hyperparameters and their provenance."""

    config: ExperimentConfig
    problem: FederatedProblem
    spec: CompressorSpec
    hp: HyperParams
    derived: Dict[str, object] = field(default_factory=dict)


def build_problem(cfg: ExperimentConfig) -> FederatedProblem:
    streams = SeedStreams(cfg.seed)
    if cfg.problem == "quadratic":
        return random_quadratic(cfg.clients, cfg.dim, seed=int(streams.get(INIT, 0).integers(2**31)))
    if cfg.dataset is not None:
        ds = load_libsvm(cfg.dataset)
    else:
        ds = make_synthetic(cfg.samples, cfg.dim, seed=int(streams.get(INIT, 0).integers(2**31)))
    if cfg.partition == "uniform":
        part = partition_uniform(ds, cfg.clients, streams.get(INIT, 1))
    else:
        part = partition_class_sorted(ds, cfg.clients)
    return logreg_problem(ds, part, cfg.reg_alpha)


def _min_rows(fp: FederatedProblem) -> int:
    return min(c.rows for c in fp.clients)


def resolve(cfg: ExperimentConfig, fp: Optional[FederatedProblem] = None) -> Setup:
    """Validate ``cfg``, build its problem and materialize every hyperparameter."""
    cfg.validate()
    fp = build_problem(cfg) if fp is None else fp
    N, S = fp.N, cfg.participate
    if S > N:
        raise ValueError(f"need S <= N, got S={S}, N={N}")
    spec = parse_compressor(cfg.compressor, fp.dim)
    w = omega(spec)
    if cfg.smoothness is None:
        L = smoothness_bound(fp, seed=cfg.seed)
        derived_L = "power iteration"
    else:
        L, derived_L = float(cfg.smoothness), "user"
    derived: Dict[str, object] = {"L": L, "L_source": derived_L, "omega": w, "N": N, "S": S, "dim": fp.dim}

    if isinstance(cfg.sigma, str):
        sigma = estimate_sigma(fp, np.zeros(fp.dim), trials=200, rng=SeedStreams(cfg.seed).get(PROBE), b=1)
        derived["sigma_source"] = "estimated at x0 with b=1, 200 trials"
    else:
        sigma = float(cfg.sigma)
        derived["sigma_source"] = "user"
    derived["sigma"] = sigma

    convex = cfg.eta == "theory:convex"
    b: Optional[int]
    if cfg.batch == "full":
        b = None
    elif cfg.batch == "theory":
        if cfg.algo == "cofig":
            b = theory.minibatch_cofig(sigma, cfg.eps, N, convex=convex)
            derived["batch_source"] = "cofig minibatch bound (" + ("convex" if convex else "nonconvex") + ")"
        else:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                b = theory.minibatch_frecon(sigma, cfg.eps, N, S, w, cap=_min_rows(fp))
            derived["batch_source"] = "frecon minibatch bound, hidden constant taken as 1"
            derived["batch_capped"] = bool(caught)
            for wrn in caught:
                log.warning("%s", wrn.message)
    else:
        b = int(cfg.batch)
    derived["b"] = "full" if b is None else b
    # exact local gradients carry no sampling noise
    sigma_eff, b_eff = (0.0, 1) if b is None else (sigma, b)

    if isinstance(cfg.eta, str):
        if cfg.algo == "frecon":
            eta, alpha = theory.step_size_frecon(L, w, S, N)
            derived["eta_source"] = "frecon nonconvex step size"
        elif convex:
            eta, alpha = theory.step_size_cofig_convex(L, w, S, N, b_eff, sigma_eff, cfg.eps)
            derived["eta_source"] = "cofig convex step size"
        else:
            eta, alpha = theory.step_size_cofig_nonconvex(L, w, S, N, b_eff, sigma_eff, cfg.eps)
            derived["eta_source"] = "cofig nonconvex step size"
    else:
        eta, alpha = float(cfg.eta), 1.0 / (1.0 + w)
        derived["eta_source"] = "user"
    if cfg.alpha is not None:
        alpha = float(cfg.alpha)
        derived["alpha_source"] = "user"
    else:
        derived["alpha_source"] = "1/(1+omega)"

    hp = HyperParams(eta=eta, alpha=alpha, S=S, lam=cfg.lam, b=b,
                     coupled_sampling=cfg.coupled_sampling, seed=cfg.seed)
    hp.validate(N)
    derived.update(eta=eta, alpha=alpha, bits_per_message=bit_cost_model(spec))
    if cfg.algo == "frecon":
        derived["lambda"] = hp.lam_for(N)
        derived["lambda_source"] = "user" if cfg.lam is not None else "S/N"
    if cfg.h0 == ShiftInit.LOCAL_GRAD.value:
        derived["h0_note"] = "local gradients at x0, not counted as uplink"
    return Setup(cfg, fp, spec, hp, derived)


def evaluate(fp: FederatedProblem, x: np.ndarray) -> Tuple[float, float]:
    return global_loss(fp, x), float(np.linalg.norm(global_full_gradient(fp, x)))


def run_setup(setup: Setup) -> List[MetricsRow]:
    cfg, fp, hp, spec = setup.config, setup.problem, setup.hp, setup.spec
    streams = SeedStreams(cfg.seed)
    x0 = np.zeros(fp.dim)
    if cfg.algo == "cofig":
        state, step = cofig_init(fp, x0, cfg.h0), cofig_round
    else:
        state, step = frecon_init(fp, x0, cfg.h0), frecon_round
    if cfg.h0 == ShiftInit.LOCAL_GRAD.value:
        log.warning("h0=localgrad: initial shifts are local gradients at x0 and are not counted as uplink bits")

    start = time.perf_counter()

    def row(t: int, bits: int) -> MetricsRow:
        loss, gnorm = evaluate(fp, state.x)
        elapsed = time.perf_counter() - start if cfg.record_time else 0.0
        return MetricsRow(t, loss, gnorm, bits, elapsed)

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        cum_bits = 0
        rows = [row(0, 0)]
        for t in range(1, cfg.rounds + 1):
            out = step(state, fp, hp, spec, streams, pool)
            state = out.state
            cum_bits += out.uplink_bits
            if t % cfg.eval_every == 0 or t == cfg.rounds:
                rows.append(row(t, cum_bits))
                if cfg.stop_early and _hit(rows[-1], cfg.eps, None):
                    break
            if not np.all(np.isfinite(state.x)):
                log.warning("iterate diverged at round %d", t)
                if rows[-1].t != t:
                    rows.append(row(t, cum_bits))
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def run_experiment(cfg: ExperimentConfig) -> List[MetricsRow]:
    return run_setup(resolve(cfg))


def _hit(r: MetricsRow, eps: float, f_star: Optional[float]) -> bool:
    if f_star is None:
        return r.grad_norm <= eps
    return r.loss - f_star <= eps


def stopping_check(rows: List[MetricsRow], eps: float, f_star: Optional[float] = None) -> Tuple[bool, Optional[int]]:
    """First recorded round meeting the target.

    Without ``f_star`` the target is ``grad_norm <= eps``; with it, the target
    is ``loss - f_star <= eps``.
    """
    if not rows:
        raise ValueError("rows must be non-empty")
    for r in rows:
        if _hit(r, eps, f_star):
            return True, r.t
    return False, None


_FSTAR_CACHE: Dict[Tuple, float] = {}


def reference_optimum(fp: FederatedProblem, steps: int = 100_000, L: Optional[float] = None,
                      key: Optional[Tuple] = None, tol: float = 1e-12) -> float:
    """Estimate f* by full gradient descent with step 1/L.

    Stops early once the gradient norm drops below ``tol``. Results are
    memoized under ``key`` when one is given.
    """
    if key is not None and key in _FSTAR_CACHE:
        return _FSTAR_CACHE[key]
    L = smoothness_bound(fp) if L is None else L
    x = np.zeros(fp.dim)
    for _ in range(steps):
        g = global_full_gradient(fp, x)
        if np.linalg.norm(g) < tol:
            break
        x -= g / L
    f_star = global_loss(fp, x)
    if key is not None:
        _FSTAR_CACHE[key] = f_star
    return f_star


def format_rows(rows: List[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.t, repr(float(r.loss)), repr(float(r.grad_norm)), int(r.cum_bits), repr(float(r.elapsed))])
    return buf.getvalue()


def write_csv(rows: List[MetricsRow], destination) -> None:
    """Write ``rows`` to a path or an open text stream."""
    text = format_rows(rows)
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", newline="") as fh:
            fh.write(text)


def read_csv(source) -> List[MetricsRow]:
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    return [MetricsRow(int(t), float(l), float(g), int(b), float(e)) for t, l, g, b, e in reader]



def config_dict(cfg: ExperimentConfig) -> Dict[str, object]:
    return asdict(cfg)
