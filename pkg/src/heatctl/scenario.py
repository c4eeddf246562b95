"""Experiment description shared by the simulators, the ensemble runner and the CLI."""
from __future__ import annotations

import ast
import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certify import PlantSpec

MODES = ("open", "closed", "target", "coupled")
SCHEMES = ("compact", "central")
MAX_DT = 1e-3


class ScenarioError(ValueError):
    pass


def profile(spec: str, m: int) -> np.ndarray:
    """Sample a spatial profile on m uniform nodes of [0, 1].

    Accepted forms: ``const V``, ``zero``, ``cos K [AMP]`` for AMP cos(K pi x),
    or a path to a two-column (x, value) text file, linearly interpolated.
    """
    x = np.linspace(0.0, 1.0, m)
    parts = spec.split()
    if not parts:
        raise ScenarioError("empty profile specification")
    kind = parts[0].lower()
    try:
        if kind == "zero" and len(parts) == 1:
            return np.zeros(m)
        if kind == "const" and len(parts) == 2:
            return np.full(m, float(parts[1]))
        if kind == "cos" and len(parts) in (2, 3):
            amp = float(parts[2]) if len(parts) == 3 else 1.0
            return amp * np.cos(float(parts[1]) * np.pi * x)
    except ValueError as exc:
        raise ScenarioError(f"bad profile {spec!r}: {exc}") from exc
    path = Path(spec.strip())
    if not path.is_file():
        raise ScenarioError(f"profile {spec!r} is neither a known form nor a readable file")
    data = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=2)
    if data.shape[1] != 2:
        raise ScenarioError(f"{path} must have two columns (x, value)")
    order = np.argsort(data[:, 0])
    return np.interp(x, data[order, 0], data[order, 1])


def _tuplify(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return tuple(_tuplify(t) for t in v)
    return float(v)


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    mode: str = "closed"
    a: str = "zero"
    y0: str = "cos 2"
    c: float = 1.02
    sigma: float = 0.1
    A: tuple = ((0.0, 2.0), (-2.0, 0.0))
    C: tuple = (1.0, 0.0)
    L: tuple = (-5.0, -1.0)
    xi0: tuple = (1.0, 0.0)
    theta0: tuple | None = None
    m: int = 129
    dt: float = 1e-4
    T: float = 3.0
    scheme: str = "compact"
    theta_frac: float = 0.9
    record_dt: float = 0.01
    defaults: tuple = field(default=(), compare=False)

    def __post_init__(self):
        for name in ("A", "C", "L", "xi0"):
            object.__setattr__(self, name, _tuplify(getattr(self, name)))
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", _tuplify(self.theta0))

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def record_every(self) -> int:
        return max(1, int(round(self.record_dt / self.dt)))

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m)

    def a_samples(self) -> np.ndarray:
        return profile(self.a, self.m)

    def y0_samples(self) -> np.ndarray:
        return profile(self.y0, self.m)

    def y0_modal(self) -> np.ndarray:
        """Initial field as type-I cosine coefficients, exact for the analytic profiles."""
        from scipy.fft import dct
        m = self.m
        parts = self.y0.split()
        out = np.zeros(m)
        kind = parts[0].lower() if parts else ""
        try:
            if kind == "zero" and len(parts) == 1:
                return out
            if kind == "const" and len(parts) == 2:
                out[0] = 2 * (m - 1) * float(parts[1])
                return out
            if kind == "cos" and len(parts) in (2, 3):
                k = float(parts[1])
                amp = float(parts[2]) if len(parts) == 3 else 1.0
                if k == int(k) and 0 <= k <= m - 1:
                    k = int(k)
                    out[k] = (2 if k in (0, m - 1) else 1) * (m - 1) * amp
                    return out
        except ValueError:
            pass
        return dct(self.y0_samples(), type=1)

    def matrices(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        C = np.array(self.C, dtype=float).reshape(1, -1)
        L = np.array(self.L, dtype=float).reshape(-1, 1)
        return A, C, L

    def theta0_vec(self) -> np.ndarray:
        n = len(self.xi0)
        return np.zeros(n) if self.theta0 is None else np.array(self.theta0, dtype=float)

    def plant(self) -> PlantSpec:
        A, C, L = self.matrices()
        return PlantSpec(c=self.c, sigma=self.sigma, A=A, C=C, L=L, a_samples=self.a_samples())

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.scheme not in SCHEMES:
            raise ScenarioError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.m) != self.m or self.m < 3:
            raise ScenarioError(f"need at least 3 spatial nodes, got {self.m}")
        if not 0 < self.dt <= MAX_DT:
            raise ScenarioError(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        if not self.T > 0:
            raise ScenarioError(f"horizon T must be positive, got {self.T}")
        if abs(self.steps * self.dt - self.T) > 1e-9 * self.T:
            raise ScenarioError(f"T = {self.T} is not a whole number of steps dt = {self.dt}")
        if not self.record_dt > 0:
            raise ScenarioError("record_dt must be positive")
        if not all(np.isfinite([self.c, self.sigma, self.dt, self.T])):
            raise ScenarioError("non-finite numeric parameter")
        n = len(self.xi0)
        A, C, L = self.matrices()
        if A.shape != (n, n) or C.shape[1] != n or L.shape[0] != n:
            raise ScenarioError(f"dimensions disagree: A{A.shape}, C{C.shape}, L{L.shape}, xi0 {n}")
        if self.theta0 is not None and len(self.theta0) != n:
            raise ScenarioError("theta0 has the wrong length")
        for spec in (self.a, self.y0):
            vals = profile(spec, self.m)
            if not np.all(np.isfinite(vals)):
                raise ScenarioError(f"profile {spec!r} has non-finite samples")

    # -- key = value serialization ----------------------------------------

    def to_ini(self, extra: dict | None = None) -> str:
        cp = _config_parser()
        sec = {}
        for f in dataclasses.fields(self):
            if f.name == "defaults":
                continue
            v = getattr(self, f.name)
            if v is None:
                continue
            sec[f.name] = _fmt(v)
        cp["scenario"] = sec
        if self.defaults:
            cp["toolkit_defaults"] = {k: "true" for k in self.defaults}
        for section, values in (extra or {}).items():
            cp[section] = {k: _fmt(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base: "Scenario | None" = None) -> "Scenario":
        cp = _config_parser()
        cp.read_string(text)
        if "scenario" not in cp:
            raise ScenarioError("configuration has no [scenario] section")
        base = base or cls()
        known = {f.name: f for f in dataclasses.fields(cls) if f.name != "defaults"}
        changes = {}
        for key, raw in cp["scenario"].items():
            if key not in known:
                raise ScenarioError(f"unknown scenario key {key!r}")
            changes[key] = _parse_value(key, raw, getattr(cls(), key))
        return dataclasses.replace(base, **changes)


def _config_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # A and a are different keys
    return cp


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return "[" + ", ".join(_fmt(t) for t in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if key in ("name", "mode", "a", "y0", "scheme"):
            return raw
        if key == "m":
            return int(raw)
        if key in ("A", "C", "L", "xi0", "theta0"):
            return _tuplify(ast.literal_eval(raw))
        return float(raw)
    except (ValueError, SyntaxError) as exc:
        raise ScenarioError(f"cannot parse {key} = {raw!r}: {exc}") from exc


def read_config(path) -> tuple[Scenario, dict]:
    """Scenario plus the remaining sections (e.g. ``[run]``) as plain dicts."""
    text = Path(path).read_text(encoding="utf-8")
    cp = _config_parser()
    cp.read_string(text)
    rest = {s: dict(cp[s]) for s in cp.sections() if s not in ("scenario", "toolkit_defaults")}
    base = None
    if "preset" in cp["scenario"]:
        from .experiments import scenario_preset
        base = scenario_preset(cp["scenario"]["preset"])
        cp.remove_option("scenario", "preset")
        buf = io.StringIO()
        cp.write(buf)
        text = buf.getvalue()
    return Scenario.from_ini(text, base=base), rest
