"""End-to-end experiments: data simulation, inference runs, sample-size sweeps.

Configurations are nested dataclasses that round-trip through TOML or JSON::

    [mesh]   nodes = 1981            # or file = "mesh.txt"
    [data]   n = 1000, sigma = 0.001, seed = 7
    [prior]  kind = "matern", alpha = 10.0, ell = 0.125
    [link]   kind = "shifted_exp", f_min = 1.0
    [pcn]    delta = 0.00125, H = 10000, burn_in = 1000, seed = 3
    [sweep]  n = [100, 200, 300, 500, 1000], delta = [...]
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.stats import linregress

from . import __version__
from .eigen import eigen_disk_analytic, eigen_fem
from .fem import ForwardOperator
from .mesh import DISK_RADIUS, NodalField, TriangularMesh, build_disk_mesh, read_mesh
from .model import LogLikelihood, ObservationSet, generate_data, ground_truth_field
from .pcn import (ChainRecord, PcnConfig, PosteriorTarget, credible_band, l2_error,
                  posterior_mean, run_chain)
from .priors import (LinkFunction, MaternConfig, PriorSampler, SeriesPriorConfig,
                     build_matern_sampler, build_series_sampler, prior_scaling)

logger = logging.getLogger(__name__)

TABLE1_N = [100, 200, 300, 500, 1000]
TABLE1_DELTA = [0.005, 0.0045, 0.0035, 0.002, 0.00125]


@dataclass
class MeshSection:
    nodes: int = 1981
    file: Optional[str] = None


@dataclass
class DataSection:
    n: int = 1000
    sigma: float = 0.001
    seed: int = 7
    source: float = 1.0
    truth: str = "four_bumps"
    file: Optional[str] = None
    # sweep arms subsample one realisation instead of redrawing per n
    nested: bool = True


@dataclass
class PriorSection:
    kind: str = "matern"
    alpha: float = 10.0
    ell: float = 0.125
    jitter: float = 1e-10
    J: Optional[int] = None
    lambda_max: float = 1000.0
    method: str = "analytic"
    coefficient_law: str = "variance"
    scaling: bool = False


@dataclass
class LinkSection:
    kind: str = "shifted_exp"
    f_min: float = 1.0


@dataclass
class PcnSection:
    delta: float = 0.00125
    H: int = 10000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 3
    max_consecutive_failures: int = 50


@dataclass
class SweepSection:
    n: List[int] = field(default_factory=lambda: list(TABLE1_N))
    delta: List[float] = field(default_factory=lambda: list(TABLE1_DELTA))
    replications: int = 1
    beta: float = 2.0


@dataclass
class ExperimentConfig:
    mesh: MeshSection = field(default_factory=MeshSection)
    data: DataSection = field(default_factory=DataSection)
    prior: PriorSection = field(default_factory=PriorSection)
    link: LinkSection = field(default_factory=LinkSection)
    pcn: PcnSection = field(default_factory=PcnSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    seed: Optional[int] = None
    out_dir: str = "runs/latest"
    threads: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _from_dict(cls, d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        """Derive data and chain seeds from one global seed."""
        if seed is None:
            return self
        s_data, s_pcn = (int(x) for x in np.random.SeedSequence(seed).generate_state(2))
        return replace(self, seed=seed, data=replace(self.data, seed=s_data),
                       pcn=replace(self.pcn, seed=s_pcn))

    def validate(self) -> None:
        if self.mesh.file and not Path(self.mesh.file).exists():
            raise FileNotFoundError(self.mesh.file)
        if self.data.file and not Path(self.data.file).exists():
            raise FileNotFoundError(self.data.file)
        ns = self.sweep.n
        if any(n <= 0 for n in ns) or list(ns) != sorted(set(ns)):
            raise ValueError("sweep n values must be positive and strictly ascending")
        if self.sweep.delta and len(self.sweep.delta) != len(ns):
            raise ValueError("sweep.delta must be empty or match sweep.n in length")
        if self.sweep.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.prior.kind not in ("matern", "series"):
            raise ValueError(f"unknown prior kind {self.prior.kind!r}")


def _from_dict(cls, d):
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = getattr(cls(), name) if name in known else None
        if is_dataclass(default) and isinstance(value, dict):
            kwargs[name] = _from_dict(type(default), value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(path.read_text())
    cfg = ExperimentConfig.from_dict(data)
    # relative file references are taken relative to the config file
    for section in (cfg.mesh, cfg.data):
        if section.file and not Path(section.file).is_absolute():
            section.file = str(path.parent / section.file)
    return cfg


def preset(name: str) -> ExperimentConfig:
    """Settings of the two reference experiments.

    ``matern``: Matérn prior (alpha 10, length-scale 0.125) on nodal values,
    link 1 + exp, delta 0.00125. ``series``: 69-term Dirichlet-Laplacian
    series (alpha 0.625), exp link, delta 1e-4.
    """
    if name == "matern":
        return ExperimentConfig()
    if name == "series":
        return ExperimentConfig(
            prior=PriorSection(kind="series", alpha=0.625, J=69, lambda_max=1000.0,
                               method="analytic", coefficient_law="std"),
            link=LinkSection(kind="exp"),
            pcn=PcnSection(delta=1e-4),
            sweep=SweepSection(delta=[]),
        )
    raise ValueError(f"unknown preset {name!r}")


# --------------------------------------------------------------------------
# building blocks

@dataclass(eq=False)
class Problem:
    mesh: TriangularMesh
    f0: Optional[NodalField]
    obs: ObservationSet
    source: float


def build_mesh(cfg: ExperimentConfig) -> TriangularMesh:
    return read_mesh(cfg.mesh.file) if cfg.mesh.file else build_disk_mesh(cfg.mesh.nodes)


def build_problem(cfg: ExperimentConfig, n: Optional[int] = None,
                  data_seed: Optional[int] = None) -> Problem:
    mesh = build_mesh(cfg)
    f0 = ground_truth_field(mesh) if cfg.data.truth == "four_bumps" else None
    if cfg.data.file:
        obs = ObservationSet.from_csv(cfg.data.file, cfg.data.sigma)
    else:
        if f0 is None:
            raise ValueError("simulated data needs a ground truth (data.truth = 'four_bumps')")
        seed = cfg.data.seed if data_seed is None else data_seed
        obs = generate_data(mesh, f0, cfg.data.source, n or cfg.data.n, cfg.data.sigma, seed)
    return Problem(mesh, f0, obs, cfg.data.source)


def build_prior(cfg: ExperimentConfig, mesh: TriangularMesh, n: int) -> PriorSampler:
    p = cfg.prior
    scaling = prior_scaling(n, p.alpha) if p.scaling else 1.0
    if p.kind == "matern":
        return build_matern_sampler(mesh, MaternConfig(p.alpha, p.ell, p.jitter), scaling)
    if p.method == "analytic":
        basis = eigen_disk_analytic(DISK_RADIUS, p.lambda_max, mesh)
    elif p.method == "fem":
        basis = eigen_fem(mesh, p.lambda_max)
    else:
        raise ValueError(f"unknown eigen method {p.method!r}")
    if p.J is not None:
        basis = basis.truncate(min(p.J, basis.J))
    return build_series_sampler(SeriesPriorConfig(basis, p.alpha, None, p.coefficient_law), scaling)


def build_link(cfg: ExperimentConfig) -> LinkFunction:
    return LinkFunction(cfg.link.kind, cfg.link.f_min)


@dataclass(eq=False)
class InferenceResult:
    record: ChainRecord
    f_bar: NodalField
    n: int
    delta: float
    seed: int
    acceptance_rate: float
    l2_error: Optional[float]
    prediction_error: Optional[float]
    loglik_truth: Optional[float]

    def summary(self) -> dict:
        return {
            "n": self.n, "delta": self.delta, "seed": self.seed,
            "acceptance_rate": self.acceptance_rate,
            "l2_error": self.l2_error,
            "prediction_error": self.prediction_error,
            "loglik_truth": self.loglik_truth,
            "final_loglik_mean_last20pct": float(
                self.record.loglik_trace[-max(1, self.record.H // 5):].mean()),
            "elapsed_seconds": self.record.elapsed,
        }


def prediction_error(mesh: TriangularMesh, f_hat: NodalField, f0: NodalField, source=1.0) -> float:
    """L2 distance between G(f_hat) and G(f0)."""
    op = ForwardOperator(mesh, source)
    return l2_error(NodalField(op.solve(f_hat.values), mesh), NodalField(op.solve(f0.values), mesh))


def run_inference(cfg: ExperimentConfig, problem: Problem, n: Optional[int] = None,
                  delta: Optional[float] = None, seed: Optional[int] = None,
                  sampler: Optional[PriorSampler] = None) -> InferenceResult:
    """Run one pCN chain on the first ``n`` observations and summarise it."""
    obs = problem.obs if n is None else problem.obs.subset(n)
    delta = cfg.pcn.delta if delta is None else delta
    seed = cfg.pcn.seed if seed is None else seed
    sampler = sampler or build_prior(cfg, problem.mesh, obs.n)
    link = build_link(cfg)
    loglik = LogLikelihood(problem.mesh, obs, problem.source)
    pcn_cfg = PcnConfig(delta=delta, H=cfg.pcn.H, burn_in=cfg.pcn.burn_in, seed=seed,
                        thin=cfg.pcn.thin, max_consecutive_failures=cfg.pcn.max_consecutive_failures)
    rec = run_chain(pcn_cfg, sampler, PosteriorTarget(sampler, loglik, link))
    f_bar = posterior_mean(rec, link)
    l2 = pred = ll0 = None
    if problem.f0 is not None:
        l2 = l2_error(f_bar, problem.f0)
        pred = prediction_error(problem.mesh, f_bar, problem.f0, problem.source)
        ll0 = loglik(problem.f0)
    return InferenceResult(rec, f_bar, obs.n, delta, seed, rec.acceptance_rate(), l2, pred, ll0)


# --------------------------------------------------------------------------
# sweeps

def prediction_rate_exponent(alpha: float, d: int = 2) -> float:
    """Exponent (alpha + 1) / (2 alpha + 2 + d) of the prediction-risk rate."""
    return (alpha + 1.0) / (2.0 * alpha + 2.0 + d)


def inversion_rate_exponent(alpha: float, beta: float, d: int = 2) -> float:
    """Exponent (alpha + 1)(beta - 1) / ((2 alpha + 2 + d)(beta + 1)) of the inversion rate."""
    return (alpha + 1.0) * (beta - 1.0) / ((2.0 * alpha + 2.0 + d) * (beta + 1.0))


@dataclass
class RateStudyResult:
    n_values: List[int]
    l2_errors: List[float]
    prediction_errors: List[float]
    acceptance_rates: List[float]
    arms: List[dict]
    alpha: float
    beta: float
    d: int = 2

    @property
    def prediction_exponent(self) -> float:
        return prediction_rate_exponent(self.alpha, self.d)

    @property
    def inversion_exponent(self) -> float:
        return inversion_rate_exponent(self.alpha, self.beta, self.d)

    @property
    def failures(self) -> List[dict]:
        return [a for a in self.arms if a["status"] != "ok"]

    def _slope(self, errs) -> Optional[float]:
        pts = [(n, e) for n, e in zip(self.n_values, errs) if e is not None and np.isfinite(e)]
        if len(pts) < 2:
            return None
        n, e = np.array(pts).T
        return float(linregress(np.log(n), np.log(e)).slope)

    @property
    def l2_slope(self) -> Optional[float]:
        return self._slope(self.l2_errors)

    @property
    def prediction_slope(self) -> Optional[float]:
        return self._slope(self.prediction_errors)

    def summary(self) -> dict:
        return {
            "n": self.n_values, "l2_error": self.l2_errors,
            "prediction_error": self.prediction_errors,
            "acceptance_rate": self.acceptance_rates,
            "l2_loglog_slope": self.l2_slope,
            "prediction_loglog_slope": self.prediction_slope,
            "theory_prediction_exponent": self.prediction_exponent,
            "theory_inversion_exponent": self.inversion_exponent,
            "alpha": self.alpha, "beta": self.beta, "d": self.d,
            "failed_arms": len(self.failures),
        }

    def write_table(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "l2_error", "prediction_error", "acceptance_rate"])
            for row in zip(self.n_values, self.l2_errors, self.prediction_errors, self.acceptance_rates):
                w.writerow([row[0]] + ["" if v is None else repr(float(v)) for v in row[1:]])


def _arm_seed(base: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence([base, n, rep]).generate_state(1)[0])


def _replication_seed(base: int, rep: int) -> int:
    return base if rep == 0 else int(np.random.SeedSequence([base, rep]).generate_state(1)[0])


def run_rate_study(cfg: ExperimentConfig, n_list: Optional[List[int]] = None,
                   replications: Optional[int] = None, out_dir=None,
                   threads: Optional[int] = None) -> RateStudyResult:
    """Errors versus sample size, averaged over data replications.

    Each (n, replication) arm runs its own chain with a seed derived from
    ``pcn.seed``; with ``data.nested`` all arms of one replication share a
    single data realisation of the largest n. A failing arm is recorded and
    does not stop the others.
    """
    cfg.validate()
    n_list = list(cfg.sweep.n if n_list is None else n_list)
    reps = cfg.sweep.replications if replications is None else replications
    threads = cfg.threads if threads is None else threads
    deltas = dict(zip(cfg.sweep.n, cfg.sweep.delta)) if cfg.sweep.delta else {}
    problems = {}
    for rep in range(reps):
        dseed = _replication_seed(cfg.data.seed, rep)
        if cfg.data.nested or cfg.data.file:
            problems[rep] = {n: p for p in [build_problem(cfg, max(n_list), dseed)] for n in n_list}
        else:
            problems[rep] = {n: build_problem(cfg, n, _arm_seed(dseed, n, rep)) for n in n_list}

    jobs = [(n, rep) for rep in range(reps) for n in n_list]

    def run_arm(job):
        n, rep = job
        delta = deltas.get(n, cfg.pcn.delta)
        seed = _arm_seed(cfg.pcn.seed, n, rep)
        row = {"n": n, "replication": rep, "delta": delta, "seed": seed}
        try:
            res = run_inference(cfg, problems[rep][n], n=n, delta=delta, seed=seed)
        except Exception as err:  # one bad arm must not abort the sweep
            logger.exception("arm n=%d rep=%d failed", n, rep)
            row.update(status="failed", error=f"{type(err).__name__}: {err}")
            return row, None
        row.update(status="ok", **{k: v for k, v in res.summary().items() if k not in row})
        return row, res

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_arm, jobs))
    else:
        outcomes = [run_arm(j) for j in jobs]

    arms = [row for row, _ in outcomes]
    l2, pred, acc = [], [], []
    for n in n_list:
        ok = [r for r in arms if r["n"] == n and r["status"] == "ok"]
        l2.append(float(np.mean([r["l2_error"] for r in ok])) if ok and ok[0]["l2_error"] is not None else None)
        pred.append(float(np.mean([r["prediction_error"] for r in ok]))
                    if ok and ok[0]["prediction_error"] is not None else None)
        acc.append(float(np.mean([r["acceptance_rate"] for r in ok])) if ok else None)
    result = RateStudyResult(n_list, l2, pred, acc, arms, cfg.prior.alpha, cfg.sweep.beta)
    if out_dir is not None:
        write_sweep_outputs(out_dir, cfg, result, outcomes)
    return result


def run_table1_sweep(cfg: ExperimentConfig, out_dir=None, threads: Optional[int] = None) -> RateStudyResult:
    """One chain per sample size in ``cfg.sweep.n`` with the matching step sizes."""
    return run_rate_study(cfg, replications=1, out_dir=out_dir, threads=threads)


# --------------------------------------------------------------------------
# run directories

def input_hash(cfg: ExperimentConfig) -> str:
    h = hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    for p in (cfg.mesh.file, cfg.data.file):
        if p:
            h.update(Path(p).read_bytes())
    return h.hexdigest()


def write_vector(path, values) -> None:
    Path(path).write_text("".join(f"{float(v)!r}\n" for v in values))


def read_vector(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=1)


def write_trace(path, rec: ChainRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "accepted", "loglik"])
        for h, (a, ll) in enumerate(zip(rec.accept_flags, rec.loglik_trace), start=1):
            w.writerow([h, int(a), repr(float(ll))])


def _prepare_dir(out_dir, cfg: ExperimentConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    manifest = {
        "input_sha256": input_hash(cfg),
        "seeds": {"global": cfg.seed, "data": cfg.data.seed, "pcn": cfg.pcn.seed},
        "package_version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def write_inference_outputs(out_dir, cfg: ExperimentConfig, res: InferenceResult,
                            band_level: float = 0.95) -> Path:
    out = _prepare_dir(out_dir, cfg)
    link = build_link(cfg)
    write_trace(out / "trace.csv", res.record)
    write_vector(out / "posterior_mean.csv", res.f_bar.values)
    kept = len(res.record.kept_states())
    if kept >= 100:
        lo, hi = credible_band(res.record, link, band_level)
        write_vector(out / "band_lower.csv", lo.values)
        write_vector(out / "band_upper.csv", hi.values)
    else:
        logger.warning("only %d post-burn-in states; credible bands skipped", kept)
    summary = res.summary()
    summary["band_level"] = band_level
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def write_sweep_outputs(out_dir, cfg: ExperimentConfig, result: RateStudyResult, outcomes) -> Path:
    out = _prepare_dir(out_dir, cfg)
    result.write_table(out / "table.csv")
    for row, res in outcomes:
        if res is None:
            continue
        arm = out / f"arm_n{row['n']}_rep{row['replication']}"
        arm.mkdir(exist_ok=True)
        write_trace(arm / "trace.csv", res.record)
        write_vector(arm / "posterior_mean.csv", res.f_bar.values)
    summary = result.summary()
    summary["arms"] = result.arms
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    return out


def analyze_trace(path, burn_in: int = 1000, window: int = 1000) -> dict:
    """Acceptance and log-likelihood diagnostics from a trace CSV."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    acc = data["accepted"].astype(bool)
    ll = data["loglik"]
    H = len(acc)
    windows = [float(acc[i:i + window].mean()) for i in range(0, H, window)]
    return {
        "H": H,
        "burn_in": burn_in,
        "acceptance_rate": float(acc[burn_in:].mean()) if H > burn_in else None,
        "acceptance_by_window": windows,
        "loglik_mean_last20pct": float(ll[-max(1, H // 5):].mean()),
        "loglik_max": float(ll.max()),
        "accepted_total": int(acc.sum()),
    }
