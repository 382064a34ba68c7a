"""Preconditioned Crank-Nicolson MCMC and posterior summaries.

The proposal p = sqrt(1 - 2 delta) * state + sqrt(2 delta) * xi, with xi a
fresh prior draw, leaves the Gaussian prior invariant, so the Metropolis
ratio only involves the log-likelihood: accept with probability
min(1, exp(l(p) - l(state))).
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np

from .fem import EllipticityError, SolverError, assemble_mass
from .mesh import NodalField, TriangularMesh
from .model import LogLikelihood
from .priors import LinkFunction, PriorSampler

logger = logging.getLogger(__name__)


class ChainError(RuntimeError):
    pass


@dataclass(frozen=True)
class PcnConfig:
    delta: float
    H: int
    burn_in: int = 1000
    seed: Optional[int] = None
    thin: int = 1
    max_consecutive_failures: int = 50

    def __post_init__(self):
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2)")
        if self.H < 1:
            raise ValueError("H must be at least 1")
        if not 0 <= self.burn_in < self.H:
            raise ValueError("burn_in must lie in [0, H)")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")


class PosteriorTarget:
    """Log-likelihood as a function of a native prior state.

    ``loglik=None`` switches the likelihood off (every state scores 0), which
    turns the chain into a prior sampler.
    """

    def __init__(self, sampler: PriorSampler, loglik: Optional[LogLikelihood],
                 link: Optional[LinkFunction] = None):
        self.sampler = sampler
        self.loglik = loglik
        self.link = link or LinkFunction("exp")
        self.n_failures = 0
        self.last_proposal_loglik = float("nan")

    def diffusivity(self, state: np.ndarray) -> np.ndarray:
        return self.link(self.sampler.to_nodal(state))

    def __call__(self, state: np.ndarray) -> float:
        if self.loglik is None:
            return 0.0
        return self.loglik(self.diffusivity(state))


def pcn_step(state: np.ndarray, current_loglik: float, sampler: PriorSampler,
             target: PosteriorTarget, delta: float,
             rng: np.random.Generator) -> Tuple[np.ndarray, bool, float]:
    """One pCN transition; returns (state, accepted, loglik of the returned state).

    A proposal whose forward solve fails or whose log-likelihood is not
    finite is rejected.
    """
    xi = sampler.draw(rng)
    proposal = np.sqrt(1.0 - 2.0 * delta) * state + np.sqrt(2.0 * delta) * xi
    u = rng.random()
    target.last_proposal_loglik = float("nan")
    try:
        ll = target(proposal)
    except (SolverError, EllipticityError, FloatingPointError) as err:
        target.n_failures += 1
        logger.warning("forward solve failed on proposal, rejecting: %s", err)
        return state, False, current_loglik
    if not np.isfinite(ll):
        target.n_failures += 1
        logger.warning("non-finite log-likelihood on proposal, rejecting")
        return state, False, current_loglik
    target.last_proposal_loglik = ll
    # u in [0, 1): log(u) < 0 <= diff whenever the move is uphill
    if np.log(u) < ll - current_loglik:
        return proposal, True, ll
    return state, False, current_loglik


@dataclass(eq=False)
class ChainRecord:
    """Stored pCN iterates and per-iteration traces.

    ``states[k]`` is the state after iteration ``(k + 1) * thin``;
    ``proposal_trace`` holds the log-likelihood of each proposal (NaN when
    its forward solve failed).
    """

    states: np.ndarray
    accept_flags: np.ndarray
    loglik_trace: np.ndarray
    config: PcnConfig
    initial_state: np.ndarray
    initial_loglik: float
    mesh: TriangularMesh = field(repr=False)
    synthesis: Optional[np.ndarray] = field(default=None, repr=False)
    elapsed: float = 0.0
    n_failures: int = 0
    proposal_trace: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def H(self) -> int:
        return len(self.accept_flags)

    def acceptance_rate(self, burn_in: Optional[int] = None) -> float:
        b = self.config.burn_in if burn_in is None else burn_in
        flags = self.accept_flags[b:]
        return float(flags.mean()) if len(flags) else float("nan")

    def running_acceptance(self) -> np.ndarray:
        """Cumulative acceptance rate after each iteration."""
        return np.cumsum(self.accept_flags) / np.arange(1, self.H + 1)

    def kept_states(self, burn_in: Optional[int] = None) -> np.ndarray:
        """Stored states from iterations after the burn-in."""
        b = self.config.burn_in if burn_in is None else burn_in
        iters = (np.arange(len(self.states)) + 1) * self.config.thin
        return self.states[iters > b]

    def to_nodal(self, states: np.ndarray) -> np.ndarray:
        return states if self.synthesis is None else states @ self.synthesis.T

    def summary(self) -> dict:
        return {
            "H": self.H,
            "acceptance_rate": self.acceptance_rate(),
            "acceptance_rate_all": self.acceptance_rate(0),
            "final_loglik": float(self.loglik_trace[-1]),
            "elapsed_seconds": self.elapsed,
            "failed_proposals": self.n_failures,
            "config": asdict(self.config),
        }


def run_chain(cfg: PcnConfig, sampler: PriorSampler, target: PosteriorTarget,
              init: Optional[np.ndarray] = None, log_every: int = 1000) -> ChainRecord:
    """Run H pCN steps from ``init`` (zeros by default)."""
    rng = np.random.default_rng(cfg.seed)
    state = np.zeros(sampler.dim) if init is None else np.array(init, dtype=float)
    if state.shape != (sampler.dim,):
        raise ValueError(f"initial state has shape {state.shape}, expected ({sampler.dim},)")
    init_state = state.copy()
    ll = target(state)
    if not np.isfinite(ll):
        raise ChainError("initial state has a non-finite log-likelihood")
    init_ll = ll
    n_store = cfg.H // cfg.thin
    states = np.empty((n_store, sampler.dim))
    accepted = np.zeros(cfg.H, dtype=bool)
    trace = np.empty(cfg.H)
    proposed = np.empty(cfg.H)
    failures_before = target.n_failures
    streak = 0
    t0 = time.perf_counter()
    for h in range(cfg.H):
        before = target.n_failures
        state, accepted[h], ll = pcn_step(state, ll, sampler, target, cfg.delta, rng)
        trace[h] = ll
        proposed[h] = target.last_proposal_loglik
        streak = streak + 1 if target.n_failures > before else 0
        if streak > cfg.max_consecutive_failures:
            raise ChainError(f"{streak} consecutive proposals failed at iteration {h + 1}")
        if (h + 1) % cfg.thin == 0:
            states[(h + 1) // cfg.thin - 1] = state
        if log_every and (h + 1) % log_every == 0:
            logger.info("iter %d/%d  accept %.3f  loglik %.2f",
                        h + 1, cfg.H, accepted[: h + 1].mean(), ll)
    return ChainRecord(
        states=states, accept_flags=accepted, loglik_trace=trace, config=cfg,
        initial_state=init_state, initial_loglik=init_ll, mesh=sampler.mesh,
        synthesis=sampler.synthesis, elapsed=time.perf_counter() - t0,
        n_failures=target.n_failures - failures_before, proposal_trace=proposed)


def posterior_mean(rec: ChainRecord, link: LinkFunction, burn_in: Optional[int] = None) -> NodalField:
    """Phi applied to the ergodic average of the post-burn-in latent states."""
    kept = rec.kept_states(burn_in)
    if len(kept) == 0:
        raise ChainError("no stored states after the burn-in")
    F_bar = rec.to_nodal(kept.mean(axis=0))
    return NodalField(link(F_bar), rec.mesh)


def credible_band(rec: ChainRecord, link: LinkFunction, level: float = 0.95,
                  burn_in: Optional[int] = None, min_samples: int = 100) -> Tuple[NodalField, NodalField]:
    """Pointwise empirical quantiles of Phi(state) at the nodes."""
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    kept = rec.kept_states(burn_in)
    if len(kept) < min_samples:
        raise ChainError(f"{len(kept)} post-burn-in states stored, need at least {min_samples}")
    f = link(rec.to_nodal(kept))
    lo, hi = np.quantile(f, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return NodalField(lo, rec.mesh), NodalField(hi, rec.mesh)


def l2_error(f_hat: NodalField, f0: NodalField, mesh: Optional[TriangularMesh] = None) -> float:
    """L2 distance of two P1 functions via the consistent mass matrix."""
    mesh = f_hat.mesh if mesh is None else mesh
    if f_hat.mesh_id != mesh.mesh_id or f0.mesh_id != mesh.mesh_id:
        raise ValueError("fields live on different meshes")
    e = f_hat.values - f0.values
    return float(np.sqrt(max(e @ (assemble_mass(mesh) @ e), 0.0)))


def tune_delta(sampler: PriorSampler, target: PosteriorTarget, delta0: float,
               target_rate: float = 0.3, pilot_length: int = 200, rounds: int = 5,
               seed: Optional[int] = None) -> float:
    """Pilot-run step-size tuning toward a target acceptance rate.

    Each round runs a short chain from the last pilot state and multiplies
    delta by exp(2 * (rate - target_rate)). Not used unless explicitly requested.
    """
    delta = delta0
    state = None
    rng = np.random.SeedSequence(seed)
    for r, child in enumerate(rng.spawn(rounds)):
        cfg = PcnConfig(delta=delta, H=pilot_length, burn_in=0,
                        seed=int(child.generate_state(1)[0]))
        rec = run_chain(cfg, sampler, target, init=state, log_every=0)
        state = rec.states[-1]
        rate = rec.acceptance_rate(0)
        delta = float(np.clip(delta * np.exp(2.0 * (rate - target_rate)), 1e-8, 0.49))
        logger.info("tuning round %d: acceptance %.3f -> delta %.3g", r + 1, rate, delta)
    return delta
