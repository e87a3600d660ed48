"""Flat ``key = value`` configuration files.

Every key belongs to a section (``mesh.nx``, ``time.dt``...).  Unknown keys are
rejected.  Windkessel values may be given once (``wk.rp``) for every outlet or
per outlet (``wk.1.rp``).  Lines starting with ``#`` are comments.
"""

import re
from pathlib import Path

from .errors import ConfigError
from .windkessel import CASE1_PARAMS, CASE1_RADIUS, CASE1_U0, WindkesselParams

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}

# key -> (type, default); the defaults reproduce the desk-scale idealised vessel
SCHEMA = {
    "mesh.nx": (int, 40),
    "mesh.ny": (int, 8),
    "mesh.length": (float, 0.30),
    "mesh.radius": (float, CASE1_RADIUS),
    "mesh.n_outlets": (int, 1),
    "fluid.nu": (float, 0.004),
    "fluid.U": (float, CASE1_U0),
    "fluid.L": (float, 2 * CASE1_RADIUS),
    "time.t0": (float, 0.0),
    "time.T": (float, 1.0),
    "time.dt": (float, 1.0e-3),
    "time.stride": (int, 20),
    "fom.n_piso": (int, 2),
    "fom.lin_tol": (float, 1.0e-10),
    "inlet.u0": (float, CASE1_U0),
    "wk.rp": (float, CASE1_PARAMS.rp),
    "wk.rd": (float, CASE1_PARAMS.rd),
    "wk.c": (float, CASE1_PARAMS.c),
    "wk.pd": (float, CASE1_PARAMS.pd),
    "wk.analytic_decaying_exponential": (bool, False),
    "lifting.outlet_neumann_value": (float, 1.0),
    "pod.delta": (float, 0.9999),
    "rom.n_modes": (int, 0),
    "rom.stabilization": (("sup", "ppe"), "sup"),
    "rom.supremizer": (("exact", "approximate"), "exact"),
    "rom.substeps": (int, 20),
    "rom.newton_tol": (float, 1.0e-12),
    "rom.newton_maxiter": (int, 25),
    "nn.preset": (("desk", "paper"), "desk"),
    "nn.hidden_layers": (int, 2),
    "nn.neurons": (int, 32),
    "nn.epochs": (int, 20000),
    "nn.learning_rate": (float, 2.0e-2),
    "nn.train_fraction": (float, 0.8),
    "nn.seed": (int, 0),
    "nn.per_outlet": (bool, False),
    "paths.fom_dir": (str, "fom_db"),
    "paths.bundle_dir": (str, "rom.bundle"),
    "paths.out_dir": (str, "online"),
}

NN_PRESETS = {
    "desk": {"nn.hidden_layers": 2, "nn.neurons": 32, "nn.epochs": 20000, "nn.learning_rate": 2.0e-2},
    "paper": {"nn.hidden_layers": 2, "nn.neurons": 150, "nn.epochs": 50000, "nn.learning_rate": 5.0e-6},
}

_WK_OUTLET = re.compile(r"^wk\.(\d+)\.(rp|rd|c|pd)$")


def _convert(key, kind, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            return _BOOL[str(raw).lower()]
        if isinstance(kind, tuple):
            if raw not in kind:
                raise ValueError(f"expected one of {', '.join(kind)}")
            return raw
        return kind(raw)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{key}: cannot interpret {raw!r} ({exc})") from None


class Config:
    """Validated pipeline configuration.

    Parameters
    ----------
    values : dict, optional
        Overrides of the defaults, ``{"mesh.nx": 20, ...}``; strings are
        converted to the declared type.
    base_dir : str or Path, optional
        Directory relative paths are resolved against.
    """

    def __init__(self, values=None, base_dir="."):
        self.base_dir = Path(base_dir)
        self._explicit = set()
        self._values = {k: default for k, (_, default) in SCHEMA.items()}
        self._wk_outlet = {}
        values = dict(values or {})
        preset = values.get("nn.preset", self._values["nn.preset"])
        preset = _convert("nn.preset", SCHEMA["nn.preset"][0], preset)
        self._values.update(NN_PRESETS[preset])
        for key, raw in values.items():
            self[key] = raw
        self.validate()

    def __setitem__(self, key, raw):
        m = _WK_OUTLET.match(key)
        if m:
            self._wk_outlet[(int(m.group(1)), m.group(2))] = _convert(key, float, raw)
        elif key in SCHEMA:
            self._values[key] = _convert(key, SCHEMA[key][0], raw)
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
        self._explicit.add(key)

    def __getitem__(self, key):
        m = _WK_OUTLET.match(key)
        if m:
            j, name = int(m.group(1)), m.group(2)
            return self._wk_outlet.get((j, name), self._values[f"wk.{name}"])
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown configuration key {key!r}") from None

    def validate(self):
        v = self._values
        checks = [
            (v["mesh.nx"] >= 1 and v["mesh.ny"] >= 1, "mesh.nx and mesh.ny must be >= 1"),
            (v["mesh.length"] > 0 and v["mesh.radius"] > 0, "mesh sizes must be positive"),
            (1 <= v["mesh.n_outlets"] <= v["mesh.ny"], "mesh.n_outlets must lie in [1, mesh.ny]"),
            (v["fluid.nu"] > 0, "fluid.nu must be positive"),
            (v["time.dt"] > 0, "time.dt must be positive"),
            (v["time.T"] > v["time.t0"], "time.T must exceed time.t0"),
            (v["time.stride"] >= 1, "time.stride must be >= 1"),
            (v["fom.n_piso"] >= 1, "fom.n_piso must be >= 1"),
            (v["fom.lin_tol"] > 0, "fom.lin_tol must be positive"),
            (0 < v["pod.delta"] <= 1, "pod.delta must lie in (0, 1]"),
            (v["rom.n_modes"] >= 0, "rom.n_modes must be >= 0 (0 selects by energy)"),
            (v["rom.substeps"] >= 1, "rom.substeps must be >= 1"),
            (v["rom.newton_maxiter"] >= 1, "rom.newton_maxiter must be >= 1"),
            (v["nn.hidden_layers"] >= 1 and v["nn.neurons"] >= 1, "nn layer counts must be >= 1"),
            (v["nn.epochs"] >= 1, "nn.epochs must be >= 1"),
            (v["nn.learning_rate"] > 0, "nn.learning_rate must be positive"),
            (0 < v["nn.train_fraction"] < 1, "nn.train_fraction must lie in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        n_steps = (v["time.T"] - v["time.t0"]) / v["time.dt"]
        if abs(n_steps - round(n_steps)) > 1e-6 * max(1.0, n_steps):
            raise ConfigError("time.dt must divide (time.T - time.t0) into whole steps")
        for (j, _name) in self._wk_outlet:
            if j >= v["mesh.n_outlets"]:
                raise ConfigError(f"wk.{j}.* given but mesh has {v['mesh.n_outlets']} outlet(s)")
        try:
            self.windkessel()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def n_steps(self):
        return int(round((self["time.T"] - self["time.t0"]) / self["time.dt"]))

    def windkessel(self):
        """Windkessel parameters, one per outlet."""
        return [
            WindkesselParams(
                rp=self[f"wk.{j}.rp"], rd=self[f"wk.{j}.rd"],
                c=self[f"wk.{j}.c"], pd=self[f"wk.{j}.pd"],
            )
            for j in range(self["mesh.n_outlets"])
        ]

    def path(self, key):
        p = Path(self[key])
        return p if p.is_absolute() else self.base_dir / p

    def items(self):
        """All effective values in a stable order (per-outlet overrides last)."""
        out = [(k, self._values[k]) for k in SCHEMA]
        out += [(f"wk.{j}.{n}", val) for (j, n), val in sorted(self._wk_outlet.items())]
        return out

    def dumps(self):
        lines = []
        for key, val in self.items():
            if isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = "%.17g" % val
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


def parse_config(text, base_dir="."):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    return Config(values, base_dir=base_dir)


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)
