"""Batch command-line front end.

Usage::

    gexp --config run.json
    gexp expect --band-low 0.5 --band-high 1 --t 1 --payoff "pow(x1,2)"

One task per invocation.  Configs are JSON; results are JSON records or,
for the ``solve`` and ``simulate`` tasks, CSV tables (``t,x,u`` and
``path,B_T,qv_T``) with a ``<out>.meta.json`` sidecar carrying the
discretization and Monte Carlo settings that produced them.

Exit codes: 1 config, 2 payoff parse, 3 numerical (CFL / non-finite),
4 precondition (order violation, bad band, ...), 5 I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator, model_validator

from . import __version__
from .comparison import check_strict, run_qv_counterexample
from .cylinder import CylinderFunctional, PrefixGrid, evaluate_cylinder
from .errors import ConfigError, GexpError
from .gheat import DEFAULT_CFL, DEFAULT_N_SPACE, GridSpec, VolatilityBand, auto_grid, solve_gheat
from .payoff import parse_event, parse_payoff
from .scenarios import (
    ControlPolicy,
    MCConfig,
    capacity_complement_upper,
    capacity_lower_bound,
    extreme_policies,
    simulate,
)

__all__ = ["RunConfig", "load_config", "run", "emit_report", "main", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1
EXIT_IO = 5


# ---------------------------------------------------------------------------
# config schema


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BandModel(_Model):
    sigma_low: float = Field(ge=0)
    sigma_high: float = Field(gt=0)

    @model_validator(mode="before")
    @classmethod
    def _from_pair(cls, v):
        if isinstance(v, (list, tuple)) and len(v) == 2:
            return {"sigma_low": v[0], "sigma_high": v[1]}
        return v

    @model_validator(mode="after")
    def _ordered(self):
        if self.sigma_low > self.sigma_high:
            raise ValueError("sigma_low must not exceed sigma_high")
        return self

    def build(self) -> VolatilityBand:
        return VolatilityBand(self.sigma_low, self.sigma_high)


class GridModel(_Model):
    n_space: Optional[int] = Field(default=None, ge=3)
    radius: Optional[float] = Field(default=None, ge=0)
    cfl_safety: float = Field(default=DEFAULT_CFL, gt=0, le=1)
    x_min: Optional[float] = None
    x_max: Optional[float] = None
    n_time: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _bounds(self):
        if (self.x_min is None) != (self.x_max is None):
            raise ValueError("x_min and x_max must be given together")
        if self.x_min is not None and not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        return self


class MCModel(_Model):
    n_paths: int = Field(ge=1)
    n_steps: int = Field(default=1000, ge=1)
    seed: int = Field(ge=0)

    def build(self) -> MCConfig:
        return MCConfig(self.n_paths, self.seed, self.n_steps)


class PolicyModel(_Model):
    kind: Literal["constant", "piecewise", "bangbang"]
    sigma: Optional[float] = None
    breakpoints: Optional[list[float]] = None
    sigmas: Optional[list[float]] = None
    predicate: Optional[str] = None
    name: Optional[str] = None

    @model_validator(mode="after")
    def _complete(self):
        need = {"constant": ("sigma",), "piecewise": ("breakpoints", "sigmas"), "bangbang": ("predicate",)}[self.kind]
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"{self.kind} policy needs {', '.join(missing)}")
        return self

    def build(self) -> ControlPolicy:
        return ControlPolicy.from_dict(self.model_dump(exclude_none=True))


class OutputModel(_Model):
    path: Optional[str] = None
    format: Literal["json", "csv"] = "json"


Times = Annotated[list[float], Field(min_length=1)]


class _Task(_Model):
    schema_version: int = SCHEMA_VERSION
    band: BandModel
    output: OutputModel = OutputModel()

    @field_validator("schema_version")
    @classmethod
    def _schema(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v


class SolveTask(_Task):
    task: Literal["solve"]
    payoff: str
    t: float = Field(gt=0)
    grid: GridModel = GridModel()
    snapshots: list[float] = []
    full_history: bool = False


class ExpectTask(_Task):
    task: Literal["expect"]
    payoff: str
    times: Times
    grid: GridModel = GridModel()


class CompareTask(_Task):
    task: Literal["compare"]
    payoff_lo: str
    payoff_hi: str
    times: Times
    grid: GridModel = GridModel()
    tolerance: Optional[float] = Field(default=None, ge=0)


class IntervalModel(_Model):
    a: float
    b: float
    t: float = Field(gt=0)
    epsilon: float = Field(gt=0)


class CapacityTask(_Task):
    task: Literal["capacity"]
    interval: IntervalModel
    mc: MCModel
    policies: Optional[list[PolicyModel]] = None
    grid: GridModel = GridModel()


class SimulateTask(_Task):
    task: Literal["simulate"]
    policy: PolicyModel
    horizon: float = Field(gt=0)
    mc: MCModel


class CounterexampleTask(_Task):
    task: Literal["counterexample"]
    horizon: float = Field(default=1.0, gt=0)
    mc: MCModel


RunConfig = Annotated[
    Union[SolveTask, ExpectTask, CompareTask, CapacityTask, SimulateTask, CounterexampleTask],
    Field(discriminator="task"),
]
_ADAPTER = TypeAdapter(RunConfig)
_CSV_TASKS = ("solve", "simulate")


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def load_config(data: dict | str | Path) -> RunConfig:
    """Validate a config mapping (or a JSON file path)."""
    if isinstance(data, (str, Path)):
        try:
            text = Path(data).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {data}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        cfg = _ADAPTER.validate_python(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc
    if cfg.output.format == "csv" and cfg.task not in _CSV_TASKS:
        raise ConfigError(f"output.format: csv is only available for {', '.join(_CSV_TASKS)}")
    return cfg


# ---------------------------------------------------------------------------
# task dispatch


def _solve_grid(cfg: SolveTask, phi, band: VolatilityBand) -> GridSpec:
    g = cfg.grid
    if g.x_min is not None:
        return GridSpec(g.x_min, g.x_max, g.n_space or DEFAULT_N_SPACE, cfg.t, g.cfl_safety, g.n_time)
    grid = auto_grid(phi, band, cfg.t, g.radius, g.n_space or DEFAULT_N_SPACE, g.cfl_safety)
    return grid if g.n_time is None else GridSpec(grid.x_min, grid.x_max, grid.n_space, grid.t_final, grid.cfl_safety, g.n_time)


def _prefix_grid(g: GridModel, f: CylinderFunctional, band: VolatilityBand, extra=()) -> PrefixGrid:
    if g.x_min is not None:
        m = g.n_space or DEFAULT_N_SPACE
        return PrefixGrid(tuple(GridSpec(g.x_min, g.x_max, m, dt, g.cfl_safety) for dt in f.increments))
    return PrefixGrid.auto(f, band, g.n_space, g.radius, g.cfl_safety, extra)


def _run_solve(cfg: SolveTask, band):
    phi = parse_payoff(cfg.payoff)
    grid = _solve_grid(cfg, phi, band)
    field = solve_gheat(phi, band, grid, cfg.snapshots, cfg.full_history)
    meta = {"grid": grid.to_dict(), "steps": list(field.steps)}
    return {"kind": "field", "field": field}, meta


def _run_expect(cfg: ExpectTask, band):
    f = CylinderFunctional(tuple(cfg.times), parse_payoff(cfg.payoff))
    grid = _prefix_grid(cfg.grid, f, band)
    value = evaluate_cylinder(f, band, grid)
    return {"value": value}, {"grid": grid.to_dict()}


def _run_compare(cfg: CompareTask, band):
    times = tuple(cfg.times)
    lo = CylinderFunctional(times, parse_payoff(cfg.payoff_lo))
    hi = CylinderFunctional(times, parse_payoff(cfg.payoff_hi))
    grid = _prefix_grid(cfg.grid, lo, band, extra=(hi.payoff,))
    res = check_strict(lo, hi, band, grid, cfg.tolerance)
    return res.to_dict(), {"grid": res.grid.to_dict()}


def _interval_event(a: float, b: float) -> str:
    """Event source for ``a <= B_T <= b`` (``x1 = B_T``)."""
    if math.isfinite(a) and math.isfinite(b):
        return f"min(x1 - ({a!r}), ({b!r}) - x1) >= 0"
    if math.isfinite(a):
        return f"x1 >= ({a!r})"
    if math.isfinite(b):
        return f"x1 <= ({b!r})"
    return "0 <= 1"


def _run_capacity(cfg: CapacityTask, band):
    iv = cfg.interval
    mc = cfg.mc.build()
    inf_bound = capacity_complement_upper(iv.a, iv.b, iv.t, band, iv.epsilon)
    policies = [p.build() for p in cfg.policies] if cfg.policies else extreme_policies(band)
    src = _interval_event(iv.a, iv.b)
    sup_bound = capacity_lower_bound(parse_event(src), band, policies, iv.t, mc)
    result = {"inf_lower_bound": inf_bound, "sup_lower_bound": sup_bound, "event": src}
    return result, {"policies": [p.to_dict() for p in policies]}


def _run_simulate(cfg: SimulateTask, band):
    policy = cfg.policy.build()
    mc = cfg.mc.build()
    ens = simulate(policy, band, cfg.horizon, mc.n_paths, mc.n_steps, mc.seed)
    return {"kind": "ensemble", "ensemble": ens}, {}


def _run_counterexample(cfg: CounterexampleTask, band):
    report = run_qv_counterexample(band, cfg.horizon, cfg.mc.build())
    return report.to_dict(), {}


_DISPATCH = {
    "solve": _run_solve,
    "expect": _run_expect,
    "compare": _run_compare,
    "capacity": _run_capacity,
    "simulate": _run_simulate,
    "counterexample": _run_counterexample,
}


def run(cfg: RunConfig) -> tuple[dict, dict]:
    """Execute one task; returns ``(result, metadata)``."""
    band = cfg.band.build()
    result, extra = _DISPATCH[cfg.task](cfg, band)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "generator": f"gexp {__version__}",
        "config": cfg.model_dump(mode="json", exclude={"output"}),
        **extra,
    }
    return result, meta


# ---------------------------------------------------------------------------
# serialization


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _field_csv(field) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "u"])
    x = field.x
    for t, row in zip(field.times, field.values):
        for xi, ui in zip(x, row):
            w.writerow([repr(float(t)), repr(float(xi)), repr(float(ui))])
    return buf.getvalue()


def _ensemble_csv(ens) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "B_T", "qv_T"])
    for i, b, q in ens.summary_rows():
        w.writerow([i, repr(b), repr(q)])
    return buf.getvalue()


def _ensemble_summary(ens) -> dict:
    b, q = ens.terminal_b, ens.terminal_qv
    n = ens.n_paths
    mean_b = math.fsum(b) / n
    return {
        "n_paths": n,
        "mean_B_T": mean_b,
        "var_B_T": math.fsum((b - mean_b) ** 2) / (n - 1) if n > 1 else 0.0,
        "mean_qv_T": math.fsum(q) / n,
        "min_qv_T": float(q.min()),
        "max_qv_T": float(q.max()),
        "policy": ens.policy.to_dict(),
    }


def render(result: dict, meta: dict, fmt: str) -> tuple[str, Optional[str]]:
    """Serialize a result; returns ``(body, sidecar_metadata_or_None)``."""
    kind = result.get("kind")
    if fmt == "csv":
        if kind == "field":
            return _field_csv(result["field"]), _dumps(meta)
        if kind == "ensemble":
            return _ensemble_csv(result["ensemble"]), _dumps(meta)
        raise ConfigError("output.format: csv is only available for solve and simulate")
    if kind == "field":
        f = result["field"]
        payload = {"times": f.times, "x": f.x, "values": f.values}
    elif kind == "ensemble":
        payload = _ensemble_summary(result["ensemble"])
    else:
        payload = result
    return _dumps({"result": payload, "metadata": meta}), None


def emit_report(result: dict, meta: dict, out: Optional[str], fmt: str = "json", stream=None) -> list[str]:
    """Write the rendered result to ``out`` (or ``stream``); returns written paths."""
    body, sidecar = render(result, meta, fmt)
    if out is None:
        (stream or sys.stdout).write(body)
        return []
    path = Path(out)
    path.write_text(body)
    written = [str(path)]
    if sidecar is not None:
        side = path.with_name(path.name + ".meta.json")
        side.write_text(sidecar)
        written.append(str(side))
    return written


# ---------------------------------------------------------------------------
# entry point


def _parse_times(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--t: {exc}") from exc


def _config_from_flags(ns: argparse.Namespace) -> dict:
    if ns.task is None:
        raise ConfigError("task: give a task name or --config")
    d: dict = {"task": ns.task}
    if ns.band_low is not None or ns.band_high is not None:
        d["band"] = {"sigma_low": ns.band_low, "sigma_high": ns.band_high}
    mc = {k: v for k, v in (("n_paths", ns.n_paths), ("n_steps", ns.n_steps), ("seed", ns.seed)) if v is not None}
    times = _parse_times(ns.t) if ns.t is not None else None
    grid = {k: v for k, v in (("n_space", ns.n_space), ("radius", ns.radius)) if v is not None}
    if ns.task == "solve":
        d.update(payoff=ns.payoff, t=times[-1] if times else None, grid=grid)
    elif ns.task == "expect":
        d.update(payoff=ns.payoff, times=times, grid=grid)
    elif ns.task == "compare":
        d.update(payoff_lo=ns.payoff, payoff_hi=ns.payoff_hi, times=times, grid=grid)
        if ns.tolerance is not None:
            d["tolerance"] = ns.tolerance
    elif ns.task == "capacity":
        d.update(interval={"a": ns.a, "b": ns.b, "t": times[-1] if times else None, "epsilon": ns.epsilon}, mc=mc)
    elif ns.task == "simulate":
        sigma = ns.sigma if ns.sigma is not None else ns.band_high
        d.update(policy={"kind": "constant", "sigma": sigma}, horizon=times[-1] if times else None, mc=mc)
    elif ns.task == "counterexample":
        d.update(mc=mc)
        if times:
            d["horizon"] = times[-1]
    return {k: v for k, v in d.items() if v is not None}


class _Parser(argparse.ArgumentParser):
    # usage errors belong to the config class, not argparse's default exit 2
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gexp", description="G-expectation laboratory: PDE and Monte Carlo engines.")
    p.add_argument("task", nargs="?", choices=sorted(_DISPATCH), help="task to run when no --config is given")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--band-low", type=float)
    p.add_argument("--band-high", type=float)
    p.add_argument("--t", help="time or comma-separated times")
    p.add_argument("--payoff", help="payoff source (lower payoff for compare)")
    p.add_argument("--payoff-hi", help="upper payoff for compare")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--n-space", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--a", type=float, help="interval left end for capacity")
    p.add_argument("--b", type=float, help="interval right end for capacity")
    p.add_argument("--epsilon", type=float, help="mollifier width for capacity")
    p.add_argument("--sigma", type=float, help="constant volatility for simulate")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-paths", type=int)
    p.add_argument("--n-steps", type=int)
    p.add_argument("--out", help="output path (stdout if omitted)")
    p.add_argument("--format", choices=["json", "csv"])
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        raw = ns.config if ns.config else _config_from_flags(ns)
        cfg = load_config(raw)
        out = ns.out if ns.out is not None else cfg.output.path
        fmt = ns.format or cfg.output.format
        if fmt == "csv" and cfg.task not in _CSV_TASKS:
            raise ConfigError(f"output.format: csv is only available for {', '.join(_CSV_TASKS)}")
        result, meta = run(cfg)
        emit_report(result, meta, out, fmt)
    except GexpError as exc:
        print(f"gexp: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gexp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
