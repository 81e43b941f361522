"""Sequential tuning campaign: screening -> descent -> CCD -> confirmation.

Every transition is a pure function ``state -> new state``; persistence
lives in :mod:`rsmtune.ledger`. Phases never advance on their own: once a
phase's queue is empty its analysis is attached to the state and the
operator (or :func:`autopilot`) picks the next transition.
"""

from __future__ import annotations

import copy
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import doe
from .config import CampaignConfig, config_from_dict
from .doe import CcdSpec, FactorSpec, encode, nint
from .errors import CampaignError, EvaluationError, RankDeficiencyError, RsmError
from .objective import evaluate
from .regress import RegressionFit, fit_design
from .search import DescentStep, StationaryAnalysis, stationary_point, steepest_path

log = logging.getLogger(__name__)

PHASES = ("Screening", "Descent", "Ccd", "Confirmation", "Done")
SCHEMA_VERSION = 1


@dataclass
class RunRecord:
    run_id: int
    phase: str
    role: str
    replicate: int
    coded: dict
    decoded: dict
    loss: float | None = None
    t: float | None = None

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "phase": self.phase, "role": self.role,
                "replicate": self.replicate, "coded": dict(self.coded),
                "decoded": dict(self.decoded), "loss": self.loss, "t": self.t}


@dataclass
class BudgetReport:
    k: int
    p: int
    f: int
    n_c: int
    n_c_prime: int
    n_s: int
    n_01: int
    n_02: int
    n_t: int
    confirmation: int = 0
    total: int = field(init=False)
    gs_counts: dict = field(init=False)

    def __post_init__(self):
        self.total = (2 ** self.k * self.n_c + self.n_01 + self.n_t
                      + 2 ** (self.p - self.f) * self.n_c_prime + 2 * self.p * self.n_s + self.n_02)
        self.gs_counts = {levels: levels ** self.k for levels in (2, 3, 4)}


@dataclass
class CampaignState:
    config: CampaignConfig
    config_digest: str
    phase: str = "Screening"
    dropped: list[str] = field(default_factory=list)
    held: dict = field(default_factory=dict)
    ccd_factors: list[FactorSpec] = field(default_factory=list)
    current_center: dict = field(default_factory=dict)
    runs: list[RunRecord] = field(default_factory=list)
    ledger: list[int] = field(default_factory=list)
    next_run_id: int = 1
    revision: int = 0
    screening_fit: RegressionFit | None = None
    descent_fit: RegressionFit | None = None
    descent_steps: list[DescentStep] = field(default_factory=list)
    ccd_fit: RegressionFit | None = None
    stationary: StationaryAnalysis | None = None
    confirmation: dict | None = None
    n_t: int | None = None
    confirm_replicates: int | None = None
    analysis_error: str | None = None

    # -- views -------------------------------------------------------------
    @property
    def factors(self) -> list[FactorSpec]:
        return self.config.factors

    @property
    def active(self) -> list[FactorSpec]:
        return [f for f in self.factors if f.name not in self.dropped]

    def run(self, run_id: int) -> RunRecord:
        for r in self.runs:
            if r.run_id == run_id:
                return r
        raise CampaignError(f"unknown run_id {run_id}")

    @property
    def pending(self) -> list[RunRecord]:
        return [r for r in self.runs if r.loss is None]

    def phase_runs(self, phase: str) -> list[RunRecord]:
        return [r for r in self.runs if r.phase == phase]

    @property
    def awaiting(self) -> bool:
        """Current phase's queue is empty and an operator command is due."""
        return self.phase != "Done" and not any(r.loss is None for r in self.phase_runs(self.phase))

    def completed(self) -> list[RunRecord]:
        by_id = {r.run_id: r for r in self.runs}
        return [by_id[i] for i in self.ledger]

    def historic_best(self) -> RunRecord | None:
        done = [r for r in self.completed() if r.phase != "Confirmation"]
        if not done:
            return None
        return min(done, key=lambda r: (r.loss, r.run_id))


# -- helpers ---------------------------------------------------------------

def _require(cond: bool, msg: str):
    if not cond:
        raise CampaignError(msg)


def _enqueue(state: CampaignState, phase: str, role: str, replicate: int, decoded: dict,
             coding: Mapping[str, FactorSpec], t: float | None = None) -> RunRecord:
    coded = {f.name: float(encode(coding.get(f.name, f), decoded[f.name])) for f in state.factors}
    rec = RunRecord(state.next_run_id, phase, role, replicate, coded,
                    {f.name: decoded[f.name] for f in state.factors}, t=t)
    state.runs.append(rec)
    state.next_run_id += 1
    return rec


def _coded_matrix(runs: Sequence[RunRecord], names: Sequence[str]) -> np.ndarray:
    return np.array([[r.coded[n] for n in names] for r in runs], dtype=float)


# -- transitions -----------------------------------------------------------

def init(config: CampaignConfig | dict) -> CampaignState:
    """New campaign with the screening design queued: 2**k n_c corners + n_01 centers."""
    if isinstance(config, dict):
        config = config_from_dict(config)
    state = CampaignState(config=config, config_digest=config.digest())
    ph = config.phases
    design = doe.screening_design(len(config.factors), ph.n_c, ph.n_01)
    for pt in design:
        decoded = {f.name: doe.decode(f, c) for f, c in zip(config.factors, pt.coded)}
        _enqueue(state, "Screening", pt.role, pt.replicate, decoded, {})
    return state


def _analyze_phase(state: CampaignState):
    try:
        _fit_phase(state)
    except RankDeficiencyError as exc:
        # losses stay recorded; the operator sees why no fit is available
        state.analysis_error = str(exc)
        log.warning("%s phase analysis failed: %s", state.phase, exc)


def _fit_phase(state: CampaignState):
    names = [f.name for f in state.factors]
    if state.phase == "Screening":
        runs = state.phase_runs("Screening")
        state.screening_fit = fit_design(_coded_matrix(runs, names), [r.loss for r in runs],
                                         "first", names, fit_only=True)
    elif state.phase == "Ccd":
        runs = state.phase_runs("Ccd")
        act = [f.name for f in state.active]
        state.ccd_fit = fit_design(_coded_matrix(runs, act), [r.loss for r in runs],
                                   "second", act, fit_only=True)
    elif state.phase == "Confirmation":
        _finish(state)


def step(state: CampaignState, completed: Iterable[tuple[int, float]]) -> CampaignState:
    """Record losses for pending runs.

    Re-submitting an already recorded ``(run_id, loss)`` pair is a no-op; a
    different loss for a recorded run is an error. Validation happens before
    anything is applied.
    """
    items = sorted({(int(i), float(v)) for i, v in completed})
    fresh = []
    seen = {}
    for rid, loss in items:
        if not math.isfinite(loss):
            raise CampaignError(f"run {rid}: loss must be finite, got {loss}")
        rec = state.run(rid)
        if rid in seen and seen[rid] != loss:
            raise CampaignError(f"run {rid}: conflicting losses in one submission")
        seen[rid] = loss
        if rec.loss is not None:
            if rec.loss != loss:
                raise CampaignError(f"run {rid}: already recorded with loss {rec.loss!r}")
            continue
        if rec.phase != state.phase:
            raise CampaignError(f"run {rid} belongs to phase {rec.phase}, campaign is in {state.phase}")
        fresh.append((rid, loss))
    if not fresh:
        return state

    new = copy.deepcopy(state)
    for rid, loss in fresh:
        new.run(rid).loss = loss
        new.ledger.append(rid)
    if new.awaiting:
        _analyze_phase(new)
    return new


def _p_value_drops(fit: RegressionFit, threshold: float, candidates: Sequence[str]) -> list[str]:
    if not fit.has_inference:
        raise CampaignError("screening fit has no inference (saturated); drop factors by name")
    return [n for n in candidates if fit.p_value(n) > threshold]


def drop_factors(state: CampaignState, names: Sequence[str] | None = None,
                 p_threshold: float | None = None) -> CampaignState:
    """Hold factors at their mid level for the rest of the campaign.

    Either an explicit list of names, or every active factor whose screening
    p-value exceeds ``p_threshold`` (strictly).
    """
    _require(state.phase == "Screening" and state.awaiting and state.screening_fit is not None,
             "drop needs a completed screening phase")
    _require((names is None) != (p_threshold is None), "give either factor names or a p-value threshold")
    active = [f.name for f in state.active]
    if names is None:
        chosen = _p_value_drops(state.screening_fit, p_threshold, active)
    else:
        unknown = [n for n in names if n not in state.config.names]
        _require(not unknown, f"unknown factors {unknown}")
        chosen = [n for n in active if n in set(names)]
    if not chosen:
        return state
    _require(len(chosen) < len(active), "cannot drop every factor")
    new = copy.deepcopy(state)
    for n in chosen:
        new.dropped.append(n)
        new.held[n] = new.config.factor(n).mid
    return new


def begin_descent(state: CampaignState, t_schedule: Sequence[float] | None = None) -> CampaignState:
    """Queue one run per step length along the path of steepest descent."""
    _require(state.phase == "Screening" and state.awaiting and state.screening_fit is not None,
             "descent needs a completed screening phase")
    schedule = list(state.config.phases.schedule() if t_schedule is None else t_schedule)
    _require(bool(schedule), "descent schedule is empty")
    bad = [t for t in schedule if not (math.isfinite(t) and t < 0)]
    _require(not bad, f"descent step lengths must be negative (minimizing), got {bad}")

    new = copy.deepcopy(state)
    act = new.active
    runs = new.phase_runs("Screening")
    names = [f.name for f in act]
    new.descent_fit = fit_design(_coded_matrix(runs, names), [r.loss for r in runs],
                                 "first", names, fit_only=True)
    steps = steepest_path(new.descent_fit, act, [float(t) for t in schedule], new.held)
    new.descent_steps = steps
    for st in steps:
        _enqueue(new, "Descent", "descent", 0, st.decoded, {}, t=st.t)
    new.n_t = len(steps)
    new.phase = "Descent"
    return new


def best_descent_run(state: CampaignState) -> RunRecord:
    runs = [r for r in state.phase_runs("Descent") if r.loss is not None]
    _require(bool(runs), "no descent results recorded")
    return min(runs, key=lambda r: (r.loss, abs(r.t), r.run_id))


def _half_width(f: FactorSpec, override: float | None) -> float:
    if override is None:
        d = f.s / 2
        if f.kind != "continuous":
            d = max(nint(d), 1)
        return d
    _require(override > 0, f"half-width for {f.name} must be > 0, got {override}")
    if f.kind != "continuous":
        _require(float(override).is_integer(), f"half-width for {f.kind} factor {f.name} must be an integer")
        return int(override)
    return float(override)


def recenter_and_ccd(state: CampaignState, half_widths: Mapping[str, float] | None = None) -> CampaignState:
    """Center a central composite design on the best descent run.

    Each active factor gets the domain ``center +/- d``; ``d`` comes from
    ``half_widths``, then the config, then defaults to half the original
    coding half-range.
    """
    _require(state.phase == "Descent" and state.awaiting, "ccd needs a completed descent phase")
    widths = dict(state.config.phases.half_widths)
    widths.update(half_widths or {})
    unknown = [n for n in widths if n not in state.config.names]
    _require(not unknown, f"half-widths for unknown factors {unknown}")

    best = best_descent_run(state)
    new = copy.deepcopy(state)
    specs = []
    for f in new.active:
        d = _half_width(f, widths.get(f.name))
        c = best.decoded[f.name]
        if f.oob_policy == "clamp":
            lo, hi = f.bounds
            _require(lo <= c <= hi, f"center {c} for {f.name} lies outside its domain [{lo}, {hi}]")
        specs.append(f.recentered(c, d))
    new.ccd_factors = specs
    new.current_center = {f.name: best.decoded[f.name] for f in new.factors}

    ph = new.config.phases
    cspec = CcdSpec(p=len(specs), f=len(ph.generators), n_c=ph.n_c_prime, n_s=ph.n_s, n_0=ph.n_02,
                    alpha=ph.alpha, generators=tuple(ph.generators))
    coding = {f.name: f for f in specs}
    for pt in doe.ccd(cspec):
        decoded = dict(new.held)
        for f, c in zip(specs, pt.coded):
            decoded[f.name] = doe.decode(f, c)
        _enqueue(new, "Ccd", pt.role, pt.replicate, decoded, coding)
    new.phase = "Ccd"
    return new


def analyze(state: CampaignState) -> CampaignState:
    """Canonical analysis of the second-order fit over the CCD."""
    _require(state.phase == "Ccd" and state.awaiting and state.ccd_fit is not None,
             "analyze needs a completed CCD phase")
    new = copy.deepcopy(state)
    new.stationary = stationary_point(new.ccd_fit, new.ccd_factors, new.held)
    return new


def confirm(state: CampaignState, replicates: int, use_best: bool = False) -> CampaignState:
    """Queue confirmation runs at the stationary point (or the historic best).

    A degenerate surface has no stationary point; the caller must then opt
    into the historic-best fallback with ``use_best``.
    """
    _require(replicates >= 0, "replicates must be >= 0")
    if state.stationary is None:
        state = analyze(state)
    _require(state.phase == "Ccd", "confirm needs an analyzed CCD phase")
    st = state.stationary
    if st.x_o_decoded is None and not use_best:
        raise CampaignError(f"surface is {st.classification}; no stationary point. "
                            "Confirm the historic best instead (use_best)")
    new = copy.deepcopy(state)
    if use_best:
        best = new.historic_best()
        target, source, predicted = dict(best.decoded), "historic_best", None
    else:
        target, source, predicted = dict(st.x_o_decoded), "stationary", st.predicted_response
    coding = {f.name: f for f in new.ccd_factors}
    for r in range(replicates):
        _enqueue(new, "Confirmation", "confirmation", r, target, coding)
    new.confirm_replicates = replicates
    new.confirmation = {"source": source, "classification": st.classification, "settings": target,
                        "predicted": predicted, "observed_mean": None, "historic_min": None,
                        "historic_best_run": None}
    new.phase = "Confirmation"
    if replicates == 0:
        _finish(new)
    return new


def _finish(state: CampaignState):
    conf = state.phase_runs("Confirmation")
    best = state.historic_best()
    rep = state.confirmation
    rep["observed_mean"] = float(np.mean([r.loss for r in conf])) if conf else None
    rep["historic_min"] = None if best is None else best.loss
    rep["historic_best_run"] = None if best is None else best.run_id
    state.phase = "Done"


def analyze_and_confirm(state: CampaignState, replicates: int, use_best: bool = False) -> CampaignState:
    return confirm(analyze(state), replicates, use_best)


def budget(state: CampaignState) -> BudgetReport:
    ph = state.config.phases
    return BudgetReport(
        k=len(state.factors), p=len(state.active), f=len(ph.generators), n_c=ph.n_c,
        n_c_prime=ph.n_c_prime, n_s=ph.n_s, n_01=ph.n_01, n_02=ph.n_02,
        n_t=state.n_t if state.n_t is not None else len(ph.schedule()),
        confirmation=state.confirm_replicates or 0,
    )


# -- evaluation and autopilot ---------------------------------------------

def evaluate_pending(state: CampaignState, jobs: int = 1,
                     evaluator: Callable[[RunRecord], float] | None = None):
    """Evaluate every pending run of the current phase.

    Returns ``(results, failures)``: results sorted by run_id so the ledger
    does not depend on completion order, failures as ``(run_id, error)``.
    """
    if evaluator is None:
        spec = state.config.objective
        if spec is None:
            raise CampaignError("no objective configured; use design/import for offline evaluation")
        factors = state.factors

        def evaluator(rec):
            return evaluate(spec, rec.decoded, rec.run_id, factors)

    todo = [r for r in state.pending if r.phase == state.phase]

    def one(rec):
        try:
            return rec.run_id, float(evaluator(rec)), None
        except (EvaluationError, RsmError) as exc:
            return rec.run_id, None, exc

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        out = list(pool.map(one, todo))
    results = sorted((rid, v) for rid, v, e in out if e is None)
    failures = sorted(((rid, e) for rid, v, e in out if e is not None), key=lambda x: x[0])
    for rid, e in failures:
        log.warning("run %d failed: %s", rid, e)
    return results, failures


def next_command(state: CampaignState) -> tuple[str, dict] | None:
    """The default transition autopilot takes from an awaiting state."""
    if not state.awaiting:
        return None
    ph = state.config.phases
    if state.phase == "Screening":
        if state.n_t is None and not state.dropped and state.screening_fit.has_inference:
            names = _p_value_drops(state.screening_fit, ph.drop_p_threshold, [f.name for f in state.active])
            if names and len(names) < len(state.active):
                return "drop", {"names": names}
        return "descend", {"t_schedule": ph.schedule()}
    if state.phase == "Descent":
        return "ccd", {"half_widths": {}}
    if state.phase == "Ccd":
        if state.stationary is None:
            return "analyze", {}
        return "confirm", {"replicates": ph.replicates,
                           "use_best": state.stationary.x_o_decoded is None}
    return None


def apply_command(state: CampaignState, op: str, args: Mapping) -> CampaignState:
    if op == "step":
        return step(state, args["results"])
    if op == "drop":
        return drop_factors(state, names=args["names"])
    if op == "descend":
        return begin_descent(state, args["t_schedule"])
    if op == "ccd":
        return recenter_and_ccd(state, args.get("half_widths"))
    if op == "analyze":
        return analyze(state)
    if op == "confirm":
        return confirm(state, args["replicates"], args.get("use_best", False))
    raise CampaignError(f"unknown command {op!r}")


class CampaignPaused(EvaluationError):
    """Some evaluations failed; ``failures`` lists ``(run_id, error)``."""

    def __init__(self, failures):
        rid, exc = failures[0]
        super().__init__(f"{len(failures)} evaluation(s) failed, first run {rid}: {exc}",
                         getattr(exc, "diagnostics", ""))
        self.failures = failures


def autopilot(state: CampaignState, jobs: int = 1, evaluator=None,
              on_command: Callable[[CampaignState, str, dict], None] | None = None) -> CampaignState:
    """Run every phase with the configured defaults until Done.

    ``on_command(new_state, op, args)`` is called after each transition so a
    caller can journal it.
    """
    while state.phase != "Done":
        if not state.awaiting:
            results, failures = evaluate_pending(state, jobs, evaluator)
            if results:
                state = step(state, results)
                if on_command:
                    on_command(state, "step", {"results": results})
            if failures:
                # successes are kept; the caller resumes after fixing the trainer
                raise CampaignPaused(failures)
            continue
        cmd = next_command(state)
        if cmd is None:
            break
        op, args = cmd
        state = apply_command(state, op, args)
        if on_command:
            on_command(state, op, args)
    return state


# -- serialization ---------------------------------------------------------

def state_to_dict(state: CampaignState) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "config": state.config.to_dict(),
        "config_digest": state.config_digest,
        "phase": state.phase,
        "dropped": list(state.dropped),
        "held": dict(state.held),
        "ccd_factors": [f.to_dict() for f in state.ccd_factors],
        "current_center": dict(state.current_center),
        "runs": [r.to_dict() for r in state.runs],
        "ledger": list(state.ledger),
        "next_run_id": state.next_run_id,
        "revision": state.revision,
        "screening_fit": state.screening_fit and state.screening_fit.to_dict(),
        "descent_fit": state.descent_fit and state.descent_fit.to_dict(),
        "descent_steps": [s.to_dict() for s in state.descent_steps],
        "ccd_fit": state.ccd_fit and state.ccd_fit.to_dict(),
        "stationary": state.stationary and state.stationary.to_dict(),
        "confirmation": state.confirmation,
        "n_t": state.n_t,
        "confirm_replicates": state.confirm_replicates,
        "analysis_error": state.analysis_error,
    }


def state_from_dict(d: dict) -> CampaignState:
    if d.get("schema") != SCHEMA_VERSION:
        raise CampaignError(f"unsupported campaign schema {d.get('schema')!r}")
    config = config_from_dict(d["config"])
    if config.digest() != d["config_digest"]:
        raise CampaignError("campaign config digest mismatch; campaign.json was edited by hand")

    def opt(cls, v):
        return None if v is None else cls.from_dict(v)

    return CampaignState(
        config=config, config_digest=d["config_digest"], phase=d["phase"],
        dropped=list(d["dropped"]), held=dict(d["held"]),
        ccd_factors=[FactorSpec.from_dict(f) for f in d["ccd_factors"]],
        current_center=dict(d["current_center"]),
        runs=[RunRecord(**r) for r in d["runs"]], ledger=list(d["ledger"]),
        next_run_id=d["next_run_id"], revision=d["revision"],
        screening_fit=opt(RegressionFit, d["screening_fit"]),
        descent_fit=opt(RegressionFit, d["descent_fit"]),
        descent_steps=[DescentStep.from_dict(s) for s in d["descent_steps"]],
        ccd_fit=opt(RegressionFit, d["ccd_fit"]),
        stationary=opt(StationaryAnalysis, d["stationary"]),
        confirmation=d["confirmation"], n_t=d["n_t"], confirm_replicates=d["confirm_replicates"],
        analysis_error=d.get("analysis_error"),
    )
