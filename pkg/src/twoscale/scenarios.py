"""Scenario configuration, reference presets, the run loop and file output.

Config files are sectioned ``key = value`` text::

    [grid]
    L = 50
    W = 50
    nx = 50
    ny = 50

    [time]
    dt = 0.01
    steps = 1500
    frame_stride = 100

    [population "left"]
    kind = discrete
    weight = 1
    positions = 20,25; 22,27
    vdes = 1.34,0
    sigma = 1

    [population "crowd"]
    kind = density
    block = 20,20,30,30
    rho = 2

    [interaction]
    src = crowd        # source population
    dst = left         # observer population
    kind = ar
    F = 0.03
    Rr = 1.5
    Ra = 3

    [flags]
    allow_boundary_loss = false
    entropy_audit = false

Lines starting with ``#`` are comments, as is anything after `` #`` on a
value line.  Documented defaults: ``[grid]`` L = W = 50, nx = ny = 50;
``[time]`` dt = 0.01, steps = 100, frame_stride = 100; population
vdes = 0,0 and sigma = 1; both flags false.  Every other key is required and
unknown keys are rejected.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
import json
import math
from pathlib import Path
import re
from typing import Iterator

import numpy as np

from .diagnostics import ENTROPY_NOISE_RTOL, EntropyAudit, EntropyConfig, entropy_terms, half_step_min_delta
from .grid import Grid, Rect
from .kernels import Anisotropy, InteractionKernel, KernelKind
from .population import (
    DensityField,
    DiscreteMeasure,
    InteractionMatrix,
    Population,
    SimState,
    min_pairwise_distance,
    total_mass,
)
from .transport import BOUNDARY_LOSS_RTOL, BoundaryLossError, StepReport, step

CONFIG_NAME = "scenario.cfg"
DIAGNOSTICS_NAME = "diagnostics.csv"
PARTICLES_NAME = "particles.csv"
AUDIT_NAME = "audit.json"

_ID = re.compile(r"^[A-Za-z0-9_-]+$")
_SECTION = re.compile(r'^\[\s*([a-z]+)(?:\s+"([^"]*)")?\s*\]$')


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    length: float = 50.0
    width: float = 50.0
    n_l: int = 50
    n_w: int = 50

    def build(self) -> Grid:
        return Grid(self.length, self.width, self.n_l, self.n_w)


@dataclass(frozen=True)
class PopulationSpec:
    id: str
    kind: str  # "discrete" or "density"
    weight: float | None = None
    positions: tuple[tuple[float, float], ...] = ()
    block: tuple[float, float, float, float] | None = None
    rho: float | None = None
    vdes: tuple[float, float] = (0.0, 0.0)
    sigma: float = 1.0


@dataclass(frozen=True)
class InteractionSpec:
    src: str  # source population
    dst: str  # observer population
    kind: str
    F: float
    Rr: float
    Ra: float | None = None

    def kernel(self) -> InteractionKernel:
        if self.kind == KernelKind.ATTRACT_REPEL.value:
            return InteractionKernel.attract_repel(self.F, self.Rr, self.Ra)
        return InteractionKernel.repel_only(self.F, self.Rr)


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    dt: float = 0.01
    steps: int = 100
    frame_stride: int = 100
    populations: tuple[PopulationSpec, ...] = ()
    interactions: tuple[InteractionSpec, ...] = ()
    allow_boundary_loss: bool = False
    entropy_audit: bool = False

    def __post_init__(self) -> None:
        validate(self)

    def with_overrides(self, **kw) -> ScenarioConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def validate(cfg: ScenarioConfig) -> None:
    """Check cross-field constraints; raises :class:`ConfigError`."""
    try:
        grid = cfg.grid.build()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"grid: {exc}") from None
    if not (math.isfinite(cfg.dt) and cfg.dt > 0):
        raise ConfigError(f"time.dt must be positive, got {cfg.dt}")
    if cfg.steps < 0:
        raise ConfigError(f"time.steps must be >= 0, got {cfg.steps}")
    if cfg.frame_stride < 1:
        raise ConfigError(f"time.frame_stride must be >= 1, got {cfg.frame_stride}")
    if not cfg.populations:
        raise ConfigError("at least one population is required")
    ids = [p.id for p in cfg.populations]
    for p in cfg.populations:
        where = f"population {p.id!r}"
        if not _ID.match(p.id):
            raise ConfigError(f"{where}: id may only contain letters, digits, '_' and '-'")
        if ids.count(p.id) > 1:
            raise ConfigError(f"{where}: duplicate id")
        if not 0.0 <= p.sigma <= 1.0:
            raise ConfigError(f"{where}: sigma must lie in [0, 1], got {p.sigma}")
        if p.kind == "discrete":
            if p.weight is None or not p.weight > 0:
                raise ConfigError(f"{where}: weight must be positive")
            if not p.positions:
                raise ConfigError(f"{where}: positions are required")
            if p.block is not None or p.rho is not None:
                raise ConfigError(f"{where}: block/rho apply to density populations only")
            for x, y in p.positions:
                if not grid.strictly_inside((x, y)):
                    raise ConfigError(f"{where}: position ({x}, {y}) is not strictly inside the domain")
        elif p.kind == "density":
            if p.block is None or p.rho is None:
                raise ConfigError(f"{where}: block and rho are required")
            if not p.rho >= 0:
                raise ConfigError(f"{where}: rho must be >= 0")
            x0, y0, x1, y1 = p.block
            if not (0 <= x0 < x1 <= grid.length and 0 <= y0 < y1 <= grid.width):
                raise ConfigError(f"{where}: block {p.block} must be a non-empty rectangle inside the domain")
            if p.weight is not None or p.positions:
                raise ConfigError(f"{where}: weight/positions apply to discrete populations only")
        else:
            raise ConfigError(f"{where}: kind must be 'discrete' or 'density', got {p.kind!r}")
    seen = set()
    for i in cfg.interactions:
        for role, name in (("src", i.src), ("dst", i.dst)):
            if name not in ids:
                raise ConfigError(f"interaction {i.src}->{i.dst}: {role} {name!r} is not a declared population")
        if (i.src, i.dst) in seen:
            raise ConfigError(f"interaction {i.src}->{i.dst}: declared twice")
        seen.add((i.src, i.dst))
        if i.kind not in ("ar", "r"):
            raise ConfigError(f"interaction {i.src}->{i.dst}: kind must be 'ar' or 'r'")
        if i.kind == "r" and i.Ra is not None:
            raise ConfigError(f"interaction {i.src}->{i.dst}: Ra applies to 'ar' kernels only")
        try:
            i.kernel()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"interaction {i.src}->{i.dst}: {exc}") from None


# ---------------------------------------------------------------- parsing

_GRID_KEYS = {"L": ("length", float), "W": ("width", float), "nx": ("n_l", int), "ny": ("n_w", int)}
_TIME_KEYS = {"dt": float, "steps": int, "frame_stride": int}
_FLAG_KEYS = ("allow_boundary_loss", "entropy_audit")
_POP_KEYS = ("kind", "weight", "positions", "block", "rho", "vdes", "sigma")
_INT_KEYS = ("src", "dst", "kind", "F", "Rr", "Ra")


def _floats(text: str, n: int | None, what: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",")]
    if n is not None and len(parts) != n:
        raise ValueError(f"{what} needs {n} comma-separated numbers")
    return tuple(_number(p, float) for p in parts)


def _number(text: str, typ):
    if typ is int:
        if not re.fullmatch(r"[+-]?\d+", text.strip()):
            raise ValueError(f"expected an integer, got {text!r}")
        return int(text)
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {text!r}")
    return v


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    """Parse the sectioned config format; errors carry the line number."""
    grid: dict = {}
    time: dict = {}
    flags: dict = {}
    pops: list[tuple[int, str, dict]] = []
    ints: list[tuple[int, dict]] = []
    current = None
    seen_single = set()

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(" #", 1)[0].strip()
        if not line or line.startswith("#"):
            continue

        def fail(msg: str):
            raise ConfigError(f"{source}:{lineno}: {msg}")

        m = _SECTION.match(line)
        if m:
            name, label = m.groups()
            if name in ("grid", "time", "flags"):
                if label is not None:
                    fail(f"section [{name}] takes no label")
                if name in seen_single:
                    fail(f"section [{name}] repeated")
                seen_single.add(name)
                current = {"grid": grid, "time": time, "flags": flags}[name], name
            elif name == "population":
                if not label:
                    fail('population sections need a label: [population "<id>"]')
                entry: dict = {}
                pops.append((lineno, label, entry))
                current = entry, name
            elif name == "interaction":
                if label is not None:
                    fail("section [interaction] takes no label")
                entry = {}
                ints.append((lineno, entry))
                current = entry, name
            else:
                fail(f"unknown section [{name}]")
            continue
        if "=" not in line:
            fail(f"expected 'key = value', got {line!r}")
        if current is None:
            fail("key outside of any section")
        key, value = (s.strip() for s in line.split("=", 1))
        target, sec = current
        allowed = {"grid": _GRID_KEYS, "time": _TIME_KEYS, "flags": _FLAG_KEYS,
                   "population": _POP_KEYS, "interaction": _INT_KEYS}[sec]
        if key not in allowed:
            fail(f"unknown key {key!r} in [{sec}]")
        if f"_line_{key}" in target:
            fail(f"duplicate key {key!r}")
        try:
            if sec == "grid":
                attr, typ = _GRID_KEYS[key]
                target[attr] = _number(value, typ)
            elif sec == "time":
                target[key] = _number(value, _TIME_KEYS[key])
            elif sec == "flags":
                target[key] = _bool(value)
            elif sec == "population":
                if key == "kind":
                    target[key] = value
                elif key in ("weight", "rho", "sigma"):
                    target[key] = _number(value, float)
                elif key == "vdes":
                    target[key] = _floats(value, 2, "vdes")
                elif key == "block":
                    target[key] = _floats(value, 4, "block")
                else:
                    pts = [p for p in (s.strip() for s in value.split(";")) if p]
                    target[key] = tuple(_floats(p, 2, "each position") for p in pts)
            else:
                target[key] = value if key in ("src", "dst", "kind") else _number(value, float)
        except ValueError as exc:
            fail(f"{key}: {exc}")
        target[f"_line_{key}"] = lineno

    def strip(d: dict) -> dict:
        return {k: v for k, v in d.items() if not k.startswith("_line_")}

    pop_specs = []
    for lineno, label, d in pops:
        if "kind" not in d:
            raise ConfigError(f"{source}:{lineno}: population {label!r} needs a kind")
        pop_specs.append(PopulationSpec(id=label, **strip(d)))
    int_specs = []
    for lineno, d in ints:
        missing = [k for k in ("src", "dst", "kind", "F", "Rr") if k not in d]
        if missing:
            raise ConfigError(f"{source}:{lineno}: interaction is missing {', '.join(missing)}")
        int_specs.append(InteractionSpec(**strip(d)))
    try:
        return ScenarioConfig(
            grid=GridSpec(**strip(grid)),
            populations=tuple(pop_specs),
            interactions=tuple(int_specs),
            **strip(time),
            **strip(flags),
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    """Serialise ``cfg`` in the format :func:`parse_config` reads."""
    r = repr
    out = [
        "[grid]", f"L = {r(cfg.grid.length)}", f"W = {r(cfg.grid.width)}",
        f"nx = {cfg.grid.n_l}", f"ny = {cfg.grid.n_w}", "",
        "[time]", f"dt = {r(cfg.dt)}", f"steps = {cfg.steps}", f"frame_stride = {cfg.frame_stride}", "",
    ]
    for p in cfg.populations:
        out += [f'[population "{p.id}"]', f"kind = {p.kind}"]
        if p.kind == "discrete":
            out.append(f"weight = {r(p.weight)}")
            out.append("positions = " + "; ".join(f"{r(x)},{r(y)}" for x, y in p.positions))
        else:
            out.append("block = " + ",".join(r(v) for v in p.block))
            out.append(f"rho = {r(p.rho)}")
        out += [f"vdes = {r(p.vdes[0])},{r(p.vdes[1])}", f"sigma = {r(p.sigma)}", ""]
    for i in cfg.interactions:
        out += ["[interaction]", f"src = {i.src}", f"dst = {i.dst}", f"kind = {i.kind}",
                f"F = {r(i.F)}", f"Rr = {r(i.Rr)}"]
        if i.Ra is not None:
            out.append(f"Ra = {r(i.Ra)}")
        out.append("")
    out += ["[flags]", f"allow_boundary_loss = {str(cfg.allow_boundary_loss).lower()}",
            f"entropy_audit = {str(cfg.entropy_audit).lower()}", ""]
    return "\n".join(out)


# ---------------------------------------------------------------- presets

SPEED = 1.34
F_AR, RR_AR, RA_AR = 0.03, 1.5, 3.0
F_R, RR_R = 0.03, 4.0
M_INTRUDER = 60.0
RHO_CROWD = 2.0


def _ar(src, dst, F=F_AR, Rr=RR_AR, Ra=RA_AR):
    return InteractionSpec(src, dst, "ar", F, Rr, Ra)


def _r(src, dst, F=F_R, Rr=RR_R):
    return InteractionSpec(src, dst, "r", F, Rr)


def _approach() -> ScenarioConfig:
    return ScenarioConfig(
        dt=0.01, steps=1500, frame_stride=100,
        populations=(
            PopulationSpec("left", "discrete", weight=1.0, positions=((20.0, 25.0),), vdes=(SPEED, 0.0)),
            PopulationSpec("right", "discrete", weight=1.0, positions=((30.0, 25.0),), vdes=(-SPEED, 0.0)),
        ),
        interactions=(_r("right", "left", F=1.0), _r("left", "right", F=1.0)),
        entropy_audit=True,
    )


def _blob() -> ScenarioConfig:
    return ScenarioConfig(
        dt=0.01, steps=6000, frame_stride=500,
        populations=(PopulationSpec("crowd", "density", block=(20.0, 20.0, 30.0, 30.0), rho=RHO_CROWD),),
        interactions=(_ar("crowd", "crowd"),),
        entropy_audit=True,
    )


def _intrusion(rr: float = RR_R) -> ScenarioConfig:
    # h = 0.5: a unit cell cannot resolve the narrow empty zone
    return ScenarioConfig(
        grid=GridSpec(50.0, 50.0, 100, 100), dt=0.01, steps=1000, frame_stride=100,
        populations=(
            PopulationSpec("individual", "discrete", weight=M_INTRUDER, positions=((25.0, 25.0),),
                           vdes=(-SPEED, 0.0), sigma=0.5),
            PopulationSpec("crowd", "density", block=(5.0, 20.0, 15.0, 30.0), rho=RHO_CROWD,
                           vdes=(SPEED, 0.0), sigma=0.5),
        ),
        interactions=(_ar("crowd", "crowd"), _r("individual", "crowd", Rr=rr), _r("crowd", "individual", Rr=rr)),
    )


def _two(separation: float) -> ScenarioConfig:
    base = _intrusion()
    y0 = 25.0 - separation / 2.0
    ind = replace(base.populations[0], positions=((25.0, y0), (25.0, y0 + separation)))
    return replace(
        base,
        populations=(ind, base.populations[1]),
        interactions=base.interactions + (_ar("individual", "individual"),),
    )


def _leader(F: float = F_AR, Ra: float = RA_AR, grid: GridSpec = GridSpec()) -> ScenarioConfig:
    return ScenarioConfig(
        grid=grid, dt=0.01, steps=1400, frame_stride=100,
        populations=(
            PopulationSpec("individual", "discrete", weight=M_INTRUDER, positions=((40.0, 25.0),),
                           vdes=(-SPEED, 0.0)),
            PopulationSpec("crowd", "density", block=(20.0, 20.0, 30.0, 30.0), rho=RHO_CROWD),
        ),
        interactions=(_ar("crowd", "crowd"), _ar("individual", "crowd", F=F, Ra=Ra)),
    )


PRESETS = {
    "approach": _approach,
    "blob": _blob,
    "intrusion": _intrusion,
    "intrusion-narrow": lambda: _intrusion(rr=2.0),
    "two-close": lambda: _two(RR_AR),
    "two-apart": lambda: _two(3.25),
    "leader": _leader,
    "leader-strong": lambda: _leader(F=0.3),
    "leader-wide": lambda: _leader(Ra=6.0),
}


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


# ---------------------------------------------------------------- running

def build_state(cfg: ScenarioConfig) -> SimState:
    grid = cfg.grid.build()
    pops = []
    for p in cfg.populations:
        if p.kind == "discrete":
            measure = DiscreteMeasure(p.weight, np.array(p.positions, dtype=np.float64))
        else:
            measure = DensityField.from_block(grid, Rect(*p.block), p.rho)
        pops.append(Population(p.id, measure, p.vdes, Anisotropy(p.sigma)))
    table = InteractionMatrix({(i.dst, i.src): i.kernel() for i in cfg.interactions})
    return SimState(tuple(pops), table, cfg.dt, grid)


def simulate(state: SimState, steps: int, *, allow_boundary_loss: bool = False,
             workers: int = 1) -> Iterator[tuple[SimState, StepReport | None]]:
    """Yield ``(state, report)`` for the initial state and each step.

    Cumulative boundary loss beyond roundoff raises unless allowed.
    """
    initial = {p.name: total_mass(p) for p in state.populations}
    lost = dict.fromkeys(initial, 0.0)
    yield state, None
    for _ in range(steps):
        state, report = step(state, allow_boundary_loss=allow_boundary_loss, workers=workers)
        for name, r in report.populations.items():
            lost[name] += r.boundary_loss
            if not allow_boundary_loss and lost[name] > BOUNDARY_LOSS_RTOL * initial[name]:
                raise BoundaryLossError(
                    f"step {report.step}: population {name!r} has lost {lost[name]:.6g} "
                    f"of {initial[name]:.6g} through the boundary"
                )
        yield state, report


def trace(cfg: ScenarioConfig, workers: int = 1) -> Iterator[SimState]:
    for s, _ in simulate(build_state(cfg), cfg.steps, allow_boundary_loss=cfg.allow_boundary_loss,
                         workers=workers):
        yield s


def density_frame_text(field: DensityField, t: float, pop: str) -> str:
    g = field.grid
    lines = [f"# t={t!r} nx={g.n_l} ny={g.n_w} pop={pop}"]
    for k in range(g.n_w):
        lines.append(" ".join(repr(float(v)) for v in field.values[:, k]))
    return "\n".join(lines) + "\n"


def read_density_frame(path: str | Path) -> tuple[dict, np.ndarray]:
    """Header fields and the ``(n_L, n_W)`` array of a density frame file."""
    text = Path(path).read_text().splitlines()
    head = dict(item.split("=", 1) for item in text[0].lstrip("#").split())
    nx, ny = int(head["nx"]), int(head["ny"])
    rows = [[float(v) for v in line.split()] for line in text[1:] if line.strip()]
    arr = np.array(rows, dtype=np.float64)
    if arr.shape != (ny, nx):
        raise ValueError(f"{path}: expected {ny} rows of {nx} values")
    return head, arr.T.copy()


def pgm_bytes(values: np.ndarray, rho_scale: float) -> bytes:
    """8-bit binary greymap, first row = ``k = 1``."""
    n_l, n_w = values.shape
    scaled = np.rint(255.0 * np.minimum(values / rho_scale, 1.0)) if rho_scale > 0 else np.zeros_like(values)
    return f"P5\n{n_l} {n_w}\n255\n".encode() + scaled.T.astype(np.uint8).tobytes()


def _frame_name(pop: str, n: int, ext: str) -> str:
    return f"density_{pop}_{n:06d}.{ext}"


@dataclass(frozen=True)
class RunResult:
    final: SimState
    frames: tuple[int, ...]
    audit: dict | None


def run(cfg: ScenarioConfig, out_dir: str | Path, *, pgm: bool = False, rho_scale: float | None = None,
        workers: int = 1) -> RunResult:
    """Run ``cfg`` writing frames, particle rows and per-step diagnostics to ``out_dir``.

    Simulation errors propagate after the files written so far are flushed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(dump_config(cfg))
    state = build_state(cfg)
    ecfg = EntropyConfig.from_state(state)
    with_entropy = cfg.entropy_audit and ecfg.valid
    if rho_scale is None:
        dens = [p.measure.values.max() for p in state.populations if not p.is_discrete]
        rho_scale = float(max(dens)) if dens else 1.0

    frames = []
    deltas = []
    prev_s = None
    scale = 0.0
    with open(out / DIAGNOSTICS_NAME, "w", newline="") as fd, open(out / PARTICLES_NAME, "w", newline="") as fp:
        diag = csv.writer(fd, lineterminator="\n")
        parts = csv.writer(fp, lineterminator="\n")
        diag.writerow(["step", "t", "pop", "mass", "max_density", "min_pair_dist", "entropy", "boundary_loss"])
        parts.writerow(["step", "t", "pop", "particle", "x", "y"])
        for s, report in simulate(state, cfg.steps, allow_boundary_loss=cfg.allow_boundary_loss, workers=workers):
            terms = entropy_terms(s, ecfg) if with_entropy else None
            if terms is not None:
                total = math.fsum(terms.values())
                if prev_s is not None:
                    deltas.append(total - prev_s)
                prev_s = total
                scale = max(scale, abs(total))
            dmin = min_pairwise_distance(s)
            for p in s.populations:
                peak = "" if p.is_discrete else repr(float(p.measure.values.max()))
                loss = 0.0 if report is None else report.populations[p.name].boundary_loss
                diag.writerow([s.n, repr(s.t), p.name, repr(total_mass(p)), peak, repr(dmin),
                               "" if terms is None else repr(terms[p.name]), repr(loss)])
            if s.n % cfg.frame_stride == 0:
                frames.append(s.n)
                for p in s.populations:
                    if p.is_discrete:
                        for pid, (x, y) in zip(p.measure.ids, p.measure.centers):
                            parts.writerow([s.n, repr(s.t), p.name, int(pid), repr(float(x)), repr(float(y))])
                    else:
                        (out / _frame_name(p.name, s.n, "txt")).write_text(
                            density_frame_text(p.measure, s.t, p.name))
                        if pgm:
                            (out / _frame_name(p.name, s.n, "pgm")).write_bytes(
                                pgm_bytes(p.measure.values, rho_scale))
            final = s

    audit = None
    if with_entropy and cfg.steps > 0:
        res = EntropyAudit(len(deltas), cfg.dt, min(deltas), half_step_min_delta(state, len(deltas), ecfg),
                           ENTROPY_NOISE_RTOL * max(1.0, scale))
        audit = {
            "steps": res.steps,
            "dt": res.dt,
            "min_delta": res.min_delta,
            "min_delta_half_dt": res.min_delta_half,
            "worst_deficit": res.deficit,
            "worst_deficit_half_dt": res.deficit_half,
            "K": res.k_estimate,
            "noise_floor": res.noise_floor,
            "halving_shrinks_deficit_2x": res.halving_ok,
        }
        (out / AUDIT_NAME).write_text(json.dumps(audit, indent=2) + "\n")
    return RunResult(final, tuple(frames), audit)


# ---------------------------------------------------------------- re-checking output

@dataclass
class AuditReport:
    problems: list[str] = field(default_factory=list)
    checked_frames: int = 0

    @property
    def ok(self) -> bool:
        return not self.problems


def _read_particles(path: Path) -> dict[int, dict[str, list[tuple[int, float, float]]]]:
    rows: dict[int, dict[str, list]] = {}
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.setdefault(int(r["step"]), {}).setdefault(r["pop"], []).append(
                (int(r["particle"]), float(r["x"]), float(r["y"])))
    return rows


def audit_output(out_dir: str | Path, rtol: float = 1e-12) -> AuditReport:
    """Re-check conservation, positivity and entropy from the files of a run."""
    out = Path(out_dir)
    cfg = load_config(out / CONFIG_NAME)
    rep = AuditReport()
    grid = cfg.grid.build()
    with open(out / DIAGNOSTICS_NAME, newline="") as f:
        diag = {(int(r["step"]), r["pop"]): r for r in csv.DictReader(f)}
    particles = _read_particles(out / PARTICLES_NAME)
    init = build_state(cfg)
    mass0 = {p.name: total_mass(p) for p in init.populations}
    steps = sorted({n for n, _ in diag})
    for n in steps:
        for p in cfg.populations:
            row = diag.get((n, p.id))
            if row is None:
                rep.problems.append(f"step {n}: no diagnostics row for {p.id!r}")
                continue
            m = float(row["mass"])
            if abs(m - mass0[p.id]) > rtol * mass0[p.id] and not cfg.allow_boundary_loss:
                rep.problems.append(f"step {n}: mass of {p.id!r} drifted to {m!r} from {mass0[p.id]!r}")

    frame_steps = [n for n in steps if n % cfg.frame_stride == 0]
    base = build_state(cfg)
    ecfg = EntropyConfig.from_state(base)
    for n in frame_steps:
        pops = []
        for p, spec in zip(base.populations, cfg.populations):
            if spec.kind == "density":
                head, values = read_density_frame(out / _frame_name(spec.id, n, "txt"))
                if (values < 0).any():
                    rep.problems.append(f"step {n}: negative density in {spec.id!r}")
                    values = np.maximum(values, 0.0)
                measure = DensityField(grid, values)
            else:
                rows = particles.get(n, {}).get(spec.id, [])
                ids = np.array([r[0] for r in rows], dtype=np.int64)
                centers = np.array([[r[1], r[2]] for r in rows], dtype=np.float64).reshape(-1, 2)
                measure = DiscreteMeasure(spec.weight, centers, ids)
            recorded = float(diag[(n, spec.id)]["mass"])
            m = total_mass(measure)
            if abs(m - recorded) > rtol * max(abs(recorded), 1e-300):
                rep.problems.append(f"step {n}: frame mass {m!r} of {spec.id!r} != diagnostics {recorded!r}")
            pops.append(p.with_measure(measure))
        rep.checked_frames += 1
        if ecfg.valid and diag[(n, cfg.populations[0].id)]["entropy"] != "":
            s = SimState(tuple(pops), base.interactions, base.dt, grid, n)
            terms = entropy_terms(s, ecfg)
            for spec in cfg.populations:
                rec = float(diag[(n, spec.id)]["entropy"])
                if abs(terms[spec.id] - rec) > 1e-9 * max(1.0, abs(rec)):
                    rep.problems.append(f"step {n}: entropy of {spec.id!r} {terms[spec.id]!r} != recorded {rec!r}")
    return rep
