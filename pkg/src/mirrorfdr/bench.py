"""Monte Carlo harness: empirical FDR and power over scenario grids.

Replication ``rep`` of a scenario draws its data from the substream
``SeedSequence([seed, rep])`` and its method randomness (splits, mirror
noise, CV folds) from ``SeedSequence([seed, rep, 1])``, so every record is
a pure function of ``(scenario, rep)``.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimators as est
from .baselines import benjamini_hochberg, debiased_lasso_pvalues, wald_pvalues_mle
from ._parallel import fan_out
from .core import Dataset, GlmFamily, MirrorConfig, MirrorFdrError, fdp_power
from .datagen import CovarianceSpec, SignalSpec, make_covariance, sample_coefficients, sample_design, sample_response
from .mirror import HighDimRules, ds_high_glm, ds_high_linear, ds_moderate, gm_moderate, mds

METHODS = ("DS", "MDS", "GM", "BHq_mle", "BHq_debiased")
REGIMES = ("moderate", "high")
UNRELIABLE_SKIP_FRACTION = 0.2


@dataclass(frozen=True)
class Scenario:
    n: int
    p: int
    p1: int
    method: str = "DS"
    regime: str = "moderate"
    family: str = "logistic"
    dispersion: float | None = None
    covariance: CovarianceSpec = field(default_factory=CovarianceSpec)
    signal: SignalSpec = field(default_factory=lambda: SignalSpec(0, 0.0))
    # "sqrt_logp_n" multiplies the signal magnitude by sqrt(log p / n)
    signal_units: str = "absolute"
    q: float = 0.1
    f_choice: str = "product"
    m: int = 50
    reps: int = 20
    seed: int = 0
    scale: str | None = None  # design scaling; defaults by regime
    lasso: str = "cv:10"
    nodewise: str = "theory:1"
    label: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.n < 2 or self.p < 1 or not 0 <= self.p1 <= self.p:
            raise ValueError("need n >= 2, p >= 1 and 0 <= p1 <= p")
        if self.signal.p1 != self.p1:
            object.__setattr__(self, "signal", replace(self.signal, p1=self.p1))
        if self.reps < 1 or self.m < 1:
            raise ValueError("reps and m must be positive")
        if self.signal_units not in ("absolute", "sqrt_logp_n"):
            raise ValueError("signal_units must be 'absolute' or 'sqrt_logp_n'")
        if self.method in ("GM", "BHq_mle") and self.regime != "moderate":
            raise ValueError(f"{self.method} is only available in the moderate regime")
        if self.method == "BHq_debiased" and self.regime != "high":
            raise ValueError("BHq_debiased is only available in the high regime")
        if self.regime == "moderate" and self.n <= self.p:
            raise ValueError("the moderate regime needs n > p")
        MirrorConfig(self.q, self.f_choice)
        GlmFamily(self.family, self.dispersion)
        est.parse_lambda_rule(self.lasso)
        est.parse_lambda_rule(self.nodewise)
        if self.scale is None:
            object.__setattr__(self, "scale", "inv_n" if self.regime == "moderate" else "unit")

    @property
    def glm_family(self) -> GlmFamily:
        return GlmFamily(self.family, self.dispersion)

    @property
    def magnitude(self) -> float:
        mag = self.signal.magnitude
        if self.signal_units == "sqrt_logp_n":
            mag *= math.sqrt(math.log(self.p) / self.n)
        return mag

    @property
    def method_label(self) -> str:
        return f"MDS({self.m})" if self.method == "MDS" else self.method

    def columns(self) -> dict:
        cov = self.covariance
        return {
            "label": self.label,
            "regime": self.regime,
            "method": self.method_label,
            "family": str(self.glm_family),
            "n": self.n,
            "p": self.p,
            "p1": self.p1,
            "covariance": cov.kind,
            "r": cov.r,
            "blocks": cov.blocks,
            "signal_mode": self.signal.mode,
            "magnitude": round(self.magnitude, 10),
            "scale": self.scale,
            "q": self.q,
            "f_choice": self.f_choice,
            "reps": self.reps,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class RepRecord:
    rep: int
    fdp: float | None
    power: float | None
    n_selected: int
    runtime: float
    skipped: str | None = None


@dataclass(frozen=True)
class BenchResult:
    scenario: Scenario
    per_rep: tuple[RepRecord, ...]
    fdr: float
    power: float | None
    mc_se_fdr: float
    mc_se_power: float | None
    skipped: int
    unreliable: bool

    @property
    def completed(self) -> int:
        return len(self.per_rep)

    def row(self) -> dict:
        out = self.scenario.columns()
        out.update(
            fdr=self.fdr,
            power=self.power,
            mc_se_fdr=self.mc_se_fdr,
            mc_se_power=self.mc_se_power,
            skipped=self.skipped,
            unreliable=self.unreliable,
        )
        return out


def simulate_replication(sc: Scenario, rep: int):
    """Draw ``(data, beta, s1)`` for replication ``rep``."""
    rng = np.random.default_rng(np.random.SeedSequence([sc.seed, rep]))
    sigma = make_covariance(sc.covariance, sc.p)
    X = sample_design(sc.n, sc.p, sigma, sc.scale, rng)
    beta, s1 = sample_coefficients(sc.p, replace(sc.signal, magnitude=sc.magnitude), rng)
    y = sample_response(X, beta, sc.glm_family, rng)
    return Dataset(X, y, sc.glm_family), beta, s1


def method_seed(sc: Scenario, rep: int) -> int:
    return int(np.random.SeedSequence([sc.seed, rep, 1]).generate_state(1)[0])


def run_method(sc: Scenario, data: Dataset, seed: int, threads: int | None = 1) -> np.ndarray:
    """Selected 0-based indices for the scenario's method on ``data``."""
    cfg = MirrorConfig(sc.q, sc.f_choice, seed)
    rules = HighDimRules(sc.lasso, sc.nodewise)
    high_base = "ds_high_linear" if data.family.is_gaussian else "ds_high_glm"
    if sc.method == "DS":
        if sc.regime == "moderate":
            return ds_moderate(data, cfg).selected
        sel = ds_high_linear if data.family.is_gaussian else ds_high_glm
        return sel(data, cfg, rules).selected
    if sc.method == "MDS":
        if sc.regime == "moderate":
            return mds(data, "ds_moderate", sc.m, cfg, threads=threads)[0].selected
        return mds(data, high_base, sc.m, cfg, threads=threads, rules=rules)[0].selected
    if sc.method == "GM":
        return gm_moderate(data, cfg, threads=threads).selected
    if sc.method == "BHq_mle":
        fit = est.fit_mle(data)
        return benjamini_hochberg(wald_pvalues_mle(data, fit).pvals, sc.q)
    rep = debiased_lasso_pvalues(data, sc.lasso, sc.nodewise, seed)
    return benjamini_hochberg(rep.pvals, sc.q)


def run_replication(sc: Scenario, rep: int, threads: int | None = 1) -> RepRecord:
    """One seeded replication, scored against the planted support.

    Method failures are recorded as a skipped replication with the error
    code as reason.
    """
    data, _, s1 = simulate_replication(sc, rep)
    t0 = time.perf_counter()
    try:
        selected = run_method(sc, data, method_seed(sc, rep), threads)
    except MirrorFdrError as exc:
        return RepRecord(rep, None, None, 0, time.perf_counter() - t0, exc.code)
    fdp, power = fdp_power(selected, s1, sc.p1)
    return RepRecord(rep, fdp, power, int(len(selected)), time.perf_counter() - t0)


def _rep_task(args):
    sc, rep = args
    return run_replication(sc, rep, threads=1)


def _mc_se(values) -> float:
    if len(values) < 2:
        return math.nan
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def aggregate(sc: Scenario, records) -> BenchResult:
    done = tuple(r for r in records if r.skipped is None)
    skipped = len(records) - len(done)
    fdps = [r.fdp for r in done]
    pows = [r.power for r in done if r.power is not None]
    fdr = float(np.mean(fdps)) if fdps else math.nan
    power = float(np.mean(pows)) if pows else None
    return BenchResult(
        scenario=sc,
        per_rep=done,
        fdr=fdr,
        power=power,
        mc_se_fdr=_mc_se(fdps),
        mc_se_power=_mc_se(pows) if pows else None,
        skipped=skipped,
        unreliable=(not done) or skipped > UNRELIABLE_SKIP_FRACTION * len(records),
    )


def run_bench(grid, threads: int | None = None) -> list[BenchResult]:
    """Run every replication of every scenario and aggregate per scenario."""
    grid = list(grid)
    if not grid:
        raise ValueError("the scenario grid is empty")
    tasks = [(sc, rep) for sc in grid for rep in range(sc.reps)]
    records = fan_out(_rep_task, tasks, threads)
    out = []
    pos = 0
    for sc in grid:
        out.append(aggregate(sc, records[pos : pos + sc.reps]))
        pos += sc.reps
    return out


CSV_COLUMNS = (
    *Scenario(2, 1, 0).columns().keys(),
    "fdr",
    "power",
    "mc_se_fdr",
    "mc_se_power",
    "skipped",
    "unreliable",
)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def format_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for res in results:
        row = res.row()
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_csv(results, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(results))


def format_table(results) -> str:
    """Compact fixed-width summary for terminals."""
    head = f"{'label':<14}{'method':<10}{'r':>6}{'fdr':>8}{'power':>8}{'se_fdr':>8}{'skip':>6}"
    lines = [head, "-" * len(head)]
    for res in results:
        sc = res.scenario
        power = "none" if res.power is None else f"{res.power:.3f}"
        flag = " *" if res.unreliable else ""
        lines.append(
            f"{sc.label[:13]:<14}{sc.method_label:<10}{sc.covariance.r:>6.2f}{res.fdr:>8.3f}"
            f"{power:>8}{res.mc_se_fdr:>8.3f}{res.skipped:>6d}{flag}"
        )
    return "\n".join(lines)
