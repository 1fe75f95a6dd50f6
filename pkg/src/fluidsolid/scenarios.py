"""Scenario presets, boundary-condition realization and the text config format.

A config is INI-style text with the sections ``[scenario]``, ``[model]``,
``[strategy]``, ``[newton]`` and ``[run]``.  Only ``[scenario] name`` is
mandatory; the preset it names supplies every other default.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import BoundaryConditions
from .mesh import BOUNDARY_NAMES
from .nonlinear import NewtonConfig
from .physics import ModelParams, ParameterError, tanh_circle_ic

SCENARIO_NAMES = ("cavity_inclusions", "channel_obstacles", "reactive_channel", "custom")
MODES = ("monolithic", "partitioned_direct", "partitioned_iterative")
FIELDS = ("v", "p", "phi", "mu", "c")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` and ``line`` locate the offending entry."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))
        self.key = key
        self.line = line


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Scenario:
    """Geometry, boundary conditions and protocol of one simulation setup.

    ``bc_table[tag][field]`` is ``"neumann"`` or ``"dirichlet:<value>"``
    where ``<value>`` is a number or one of the profile names ``lid``,
    ``inlet`` (velocity) and ``c_b`` (concentration).
    """

    name: str
    Lx: float = 2.0
    Ly: float = 1.0
    circles: tuple = ()
    rectangles: tuple = ()
    bc_table: dict = field(default_factory=dict)
    lid_stop_step: int | None = None
    c_initial: float = 1.0
    c_boundary: float = 1.5
    reactive: bool = False
    nx: int = 32
    ny: int = 16
    levels: int = 4
    refine_threshold: float = 0.1

    def validate(self) -> "Scenario":
        if self.name not in SCENARIO_NAMES:
            raise ConfigError(f"unknown scenario '{self.name}'", "name")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ConfigError("domain extents must be positive", "Lx")
        for (xc, yc), r in self.circles:
            if not (r > 0 and 0 <= xc <= self.Lx and 0 <= yc <= self.Ly):
                raise ConfigError("circle must have positive radius and a centre inside the domain", "circles")
        for (x0, y0), (x1, y1) in self.rectangles:
            if not (0 <= x0 < x1 <= self.Lx and 0 <= y0 < y1 <= self.Ly):
                raise ConfigError("rectangle must lie inside the domain", "rectangles")
        if set(self.bc_table) != set(BOUNDARY_NAMES):
            raise ConfigError("boundary table must cover every boundary tag", "bc_table")
        for tag, row in self.bc_table.items():
            if set(row) != set(FIELDS):
                raise ConfigError(f"boundary '{tag}' needs exactly one condition per field", "bc_table")
        if self.nx < 1 or self.ny < 1 or self.levels < 0:
            raise ConfigError("mesh resolution must be positive", "nx")
        return self

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    def initial_phase(self, params: ModelParams):
        """Diffuse initial profile for circles, sharp indicator for rectangles."""
        if self.rectangles:
            return self.indicator()
        return tanh_circle_ic(self.circles, params)

    def indicator(self):
        """Sharp fluid indicator: 0 inside any obstacle, 1 elsewhere."""
        rects = self.rectangles
        circles = self.circles

        def chi(x, y):
            solid = np.zeros(np.broadcast(x, y).shape, dtype=bool)
            for (x0, y0), (x1, y1) in rects:
                solid |= (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
            for (xc, yc), r in circles:
                solid |= np.hypot(x - xc, y - yc) <= r
            return np.where(solid, 0.0, 1.0)

        return chi

    def sharp_fluid_area(self, n: int = 2000) -> float:
        """Fluid area of the sharp configuration (midpoint sampling)."""
        xs = (np.arange(n) + 0.5) * self.Lx / n
        ys = (np.arange(n // 2) + 0.5) * self.Ly / (n // 2)
        X, Y = np.meshgrid(xs, ys)
        return float(self.indicator()(X, Y).mean() * self.area)


def _table(**per_tag):
    base = {t: {"v": "dirichlet:0", "p": "neumann", "phi": "neumann", "mu": "neumann", "c": "neumann"}
            for t in BOUNDARY_NAMES}
    for tag, upd in per_tag.items():
        base[tag].update(upd)
    return base


CAVITY_BCS = _table(top={"v": "dirichlet:lid"})
CHANNEL_BCS = _table(left={"v": "dirichlet:inlet", "phi": "dirichlet:1", "c": "dirichlet:c_b"},
                     right={"v": "neumann", "p": "dirichlet:0", "phi": "dirichlet:1"})

# Overlapping rectangular obstacles forming a constriction around x = 1.
CHANNEL_RECTANGLES = (
    ((0.6, 0.0), (1.1, 0.4)),
    ((0.8, 0.0), (1.2, 0.25)),
    ((0.9, 0.65), (1.4, 1.0)),
)

CHANNEL_PARAMS = dict(rho=1e3, gamma=1e-3, d0=1e3, d_max=0.9, M=1e-3, sigma=1.0,
              epsilon=6e-3, delta=6e-3, delta_dw=4e-3, gamma_dw=3e-3)


def preset(name: str):
    """Return ``(ModelParams, Scenario)`` defaults for a named scenario."""
    if name in ("cavity_inclusions", "custom"):
        return (ModelParams(tau=0.02),
                Scenario(name, circles=(((0.5, 0.5), 0.2),), bc_table=CAVITY_BCS, lid_stop_step=30))
    if name == "channel_obstacles":
        return (ModelParams(tau=0.002, n_pre=5, M_pre=1e3, **CHANNEL_PARAMS),
                Scenario(name, rectangles=CHANNEL_RECTANGLES, bc_table=CHANNEL_BCS, nx=64, ny=32))
    if name == "reactive_channel":
        return (ModelParams(tau=0.02, D=1.0, c_star=2.0, k_c=0.1),
                Scenario(name, circles=(((0.5, 0.5), 0.2), ((1.35, 0.65), 0.2)), bc_table=CHANNEL_BCS,
                         reactive=True, c_initial=1.0, c_boundary=1.5))
    raise ConfigError(f"unknown scenario '{name}'", "name")


# ---------------------------------------------------------------------------
# boundary conditions
# ---------------------------------------------------------------------------
def lid_profile(x, f_bar):
    return f_bar * (2.0 / 3.0) * x * (2.0 - x) / 2.0


def inlet_profile(y, f_bar):
    return f_bar * (2.0 / 3.0) * y * (1.0 - y) / 4.0


def _dirichlet_tags(table, fld):
    return tuple(t for t in BOUNDARY_NAMES if table[t][fld].startswith("dirichlet"))


def _single_value(scenario, fld, tags):
    vals = {scenario.bc_table[t][fld].split(":", 1)[1] for t in tags}
    if len(vals) > 1:
        raise ConfigError(f"only one Dirichlet value per field is supported for '{fld}'", "bc_table")
    v = vals.pop() if vals else "0"
    if v == "c_b":
        return scenario.c_boundary
    return float(v)


def realize_bcs(scenario: Scenario, params: ModelParams) -> BoundaryConditions:
    """Boundary data for the assembly, including the lid-stop protocol.

    The returned velocity evaluator takes ``(points, t)``; when a lid stop
    step ``k`` is configured the lid is active for ``t <= k * tau``.
    """
    table = scenario.bc_table
    vtags = _dirichlet_tags(table, "v")
    tol = 1e-9 * params.tau
    stop_time = None if scenario.lid_stop_step is None else scenario.lid_stop_step * params.tau
    kinds = {t: table[t]["v"].split(":", 1)[1] for t in vtags}
    f_bar = params.f_bar
    Lx, Ly = scenario.Lx, scenario.Ly

    def velocity(points, t):
        points = np.atleast_2d(points)
        out = np.zeros_like(points, dtype=float)
        x, y = points[:, 0], points[:, 1]
        on = {"left": np.isclose(x, 0.0), "right": np.isclose(x, Lx),
              "bottom": np.isclose(y, 0.0), "top": np.isclose(y, Ly)}
        # corners belong to the wall with the homogeneous value: apply profiles first
        for tag, kind in sorted(kinds.items(), key=lambda kv: kv[1] not in ("lid", "inlet")):
            m = on[tag]
            if kind == "lid":
                active = stop_time is None or t <= stop_time + tol
                out[m, 0] = lid_profile(x[m], f_bar) if active else 0.0
                out[m, 1] = 0.0
            elif kind == "inlet":
                out[m, 0] = inlet_profile(y[m], f_bar)
                out[m, 1] = 0.0
            else:
                out[m] = float(kind)
        return out

    homogeneous = all(k not in ("lid", "inlet") and float(k) == 0.0 for k in kinds.values())
    ptags = _dirichlet_tags(table, "p")
    phitags = _dirichlet_tags(table, "phi")
    ctags = _dirichlet_tags(table, "c")
    for fld in ("mu",):
        if _dirichlet_tags(table, fld):
            raise ConfigError("the chemical potential only supports zero-Neumann conditions", "bc_table")
    return BoundaryConditions(
        velocity_tags=vtags,
        velocity=None if homogeneous else velocity,
        pressure_tags=ptags,
        pressure_value=_single_value(scenario, "p", ptags),
        phi_tags=phitags,
        phi_value=_single_value(scenario, "phi", phitags) if phitags else 1.0,
        c_tags=ctags if scenario.reactive else (),
        c_value=_single_value(scenario, "c", ctags) if ctags else scenario.c_boundary,
    )


def homogeneous_velocity_at(scenario: Scenario, params: ModelParams, t: float) -> bool:
    """True when all prescribed velocities vanish at time ``t``."""
    bcs = realize_bcs(scenario, params)
    if bcs.velocity is None:
        return True
    pts = np.array([[scenario.Lx * s, scenario.Ly * u] for s in np.linspace(0, 1, 11) for u in (0.0, 1.0)]
                   + [[scenario.Lx * u, scenario.Ly * s] for s in np.linspace(0, 1, 11) for u in (0.0, 1.0)])
    return bool(np.all(bcs.velocity(pts, t) == 0.0))


# ---------------------------------------------------------------------------
# config text
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class StrategyConfig:
    """How each time step is solved.

    ``coupling_tol`` overrides the coupled-residual tolerance of the
    partitioned loop; ``None`` uses the monolithic stop tolerance.
    """

    mode: str = "monolithic"
    coupling_tol: float | None = None
    max_coupling: int = 100
    schur_solver: str = "lu"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown strategy mode '{self.mode}'")
        if self.coupling_tol is not None and not self.coupling_tol > 0:
            raise ValueError("coupling tolerance must be positive")
        if self.max_coupling < 1:
            raise ValueError("max_coupling must be at least 1")


@dataclass(frozen=True)
class RunControls:
    steps: int = 200
    adapt: bool = False
    energy_audit: bool = False
    output_stride: int = 0
    out: str = "output"


_SECTIONS = {
    "scenario": ("name", "Lx", "Ly", "circles", "rectangles", "lid_stop_step", "c_initial",
                 "c_boundary", "nx", "ny", "levels", "refine_threshold"),
    "model": tuple(f.name for f in dataclasses.fields(ModelParams)),
    "strategy": tuple(f.name for f in dataclasses.fields(StrategyConfig)),
    "newton": tuple(f.name for f in dataclasses.fields(NewtonConfig)),
    "run": tuple(f.name for f in dataclasses.fields(RunControls)),
}
_BC_KEY_PREFIX = "bc."


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and "=" in s and s.split("=", 1)[0].strip() == key:
            return i
    return None


def _parse_circles(s: str):
    out = []
    for part in filter(None, (p.strip() for p in s.split(";"))):
        x, y, r = (float(v) for v in part.split(","))
        out.append(((x, y), r))
    return tuple(out)


def _parse_rects(s: str):
    out = []
    for part in filter(None, (p.strip() for p in s.split(";"))):
        x0, y0, x1, y1 = (float(v) for v in part.split(","))
        out.append(((x0, y0), (x1, y1)))
    return tuple(out)


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _convert(current, raw: str):
    if isinstance(current, bool):
        return _parse_bool(raw)
    if isinstance(current, int):
        f = float(raw)
        if f != int(f):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(f)
    if isinstance(current, float):
        return float(raw)
    return raw.strip()


def parse_config(text: str):
    """Parse config text into ``(params, scenario, strategy, newton, run)``.

    Raises
    ------
    ConfigError
        Unknown section or key, missing scenario name, malformed value or a
        violated invariant.  The message names the key and line.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", sec, _line_of(text, sec, "") )
        for key in cp[sec]:
            if key not in _SECTIONS[sec] and not (sec == "scenario" and key.startswith(_BC_KEY_PREFIX)):
                raise ConfigError("unknown key", key, _line_of(text, sec, key))
    if not cp.has_section("scenario") or "name" not in cp["scenario"]:
        raise ConfigError("missing mandatory key", "name")
    name = cp["scenario"]["name"].strip()
    if name not in SCENARIO_NAMES:
        raise ConfigError(f"unknown scenario '{name}'", "name", _line_of(text, "scenario", "name"))
    params, scen = preset(name)

    def conv(sec, key, current):
        raw = cp[sec][key]
        try:
            return _convert(current, raw)
        except ValueError as exc:
            raise ConfigError(f"invalid value {raw!r}: {exc}", key, _line_of(text, sec, key)) from exc

    # model
    upd = {}
    if cp.has_section("model"):
        for key in cp["model"]:
            upd[key] = conv("model", key, getattr(params, key))
    params = replace(params, **upd)
    try:
        params.validate()
    except ParameterError as exc:
        bad = next((k for k in upd if k in str(exc)), None)
        raise ConfigError(str(exc), bad, _line_of(text, "model", bad) if bad else None) from exc

    # scenario
    supd = {}
    table = {t: dict(r) for t, r in scen.bc_table.items()}
    for key in cp["scenario"]:
        if key == "name":
            continue
        raw = cp["scenario"][key]
        line = _line_of(text, "scenario", key)
        try:
            if key == "circles":
                supd[key] = _parse_circles(raw)
            elif key == "rectangles":
                supd[key] = _parse_rects(raw)
            elif key == "lid_stop_step":
                supd[key] = None if raw.strip().lower() in ("none", "") else int(raw)
            elif key.startswith(_BC_KEY_PREFIX):
                _, tag, fld = key.split(".")
                if tag not in table or fld not in FIELDS:
                    raise ValueError("boundary keys look like bc.<tag>.<field>")
                val = raw.strip()
                if not (val == "neumann" or val.startswith("dirichlet:")):
                    raise ValueError("condition must be 'neumann' or 'dirichlet:<value>'")
                table[tag][fld] = val
            else:
                supd[key] = _convert(getattr(scen, key), raw)
        except ValueError as exc:
            raise ConfigError(f"invalid value {raw!r}: {exc}", key, line) from exc
    scen = replace(scen, bc_table=table, **supd)
    try:
        scen.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc).split(" (key")[0], exc.key, _line_of(text, "scenario", exc.key or "")) from None

    def build(cls, sec):
        base = cls()
        kw = {}
        if cp.has_section(sec):
            for key in cp[sec]:
                cur = getattr(base, key)
                if key == "coupling_tol":
                    raw = cp[sec][key].strip().lower()
                    kw[key] = None if raw in ("none", "") else conv(sec, key, 0.0)
                else:
                    kw[key] = conv(sec, key, cur)
        try:
            return cls(**kw)
        except ValueError as exc:
            bad = next(iter(kw), None)
            raise ConfigError(str(exc), bad, _line_of(text, sec, bad) if bad else None) from exc

    strategy = build(StrategyConfig, "strategy")
    newton = build(NewtonConfig, "newton")
    run = build(RunControls, "run")
    return params, scen, strategy, newton, run


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def serialize_config(params: ModelParams, scenario: Scenario, strategy: StrategyConfig,
                     newton: NewtonConfig, run: RunControls) -> str:
    """Canonical text form: every key written explicitly, fixed order."""
    lines = ["[scenario]", f"name = {scenario.name}"]
    for key in _SECTIONS["scenario"][1:]:
        v = getattr(scenario, key)
        if key == "circles":
            v = "; ".join(f"{repr(float(x))}, {repr(float(y))}, {repr(float(r))}" for (x, y), r in v)
        elif key == "rectangles":
            v = "; ".join(", ".join(repr(float(c)) for c in (*a, *b)) for a, b in v)
        else:
            v = _fmt(v)
        lines.append(f"{key} = {v}")
    for tag in BOUNDARY_NAMES:
        for fld in FIELDS:
            lines.append(f"bc.{tag}.{fld} = {scenario.bc_table[tag][fld]}")
    for sec, obj in (("model", params), ("strategy", strategy), ("newton", newton), ("run", run)):
        lines.append("")
        lines.append(f"[{sec}]")
        for key in _SECTIONS[sec]:
            lines.append(f"{key} = {_fmt(getattr(obj, key))}")
    return "\n".join(lines) + "\n"
