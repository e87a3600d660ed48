"""Offline and online phases, bundle persistence and reports.

A bundle is a directory with a ``manifest.txt`` listing every artifact and
its SHA-256 checksum.  While it is being written the directory carries a
``.partial`` marker and a sibling ``<bundle>.lock`` file guards against
concurrent writers.
"""

import csv
import logging
import os
import shutil
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from . import windkessel as wk
from .config import Config, parse_config
from .errors import BundleError, ConfigError, HemoromError, NumericalError
from .fom import SnapshotDatabase, run_fom
from .lifting import Lifting, homogenize
from .mesh import StructuredMesh
from .nn import OutflowRegressor, load_model, save_model
from .rom import (
    ReducedBasis,
    ReducedModel,
    ReducedOperators,
    assemble_operators,
    build_basis,
    build_model,
    fit_pod_bases,
    rom_errors,
    simulate,
)

log = logging.getLogger(__name__)

__all__ = [
    "StageError",
    "Bundle",
    "OnlineResult",
    "run_offline",
    "load_bundle",
    "run_online",
    "train_outflow_nn",
    "write_report",
    "read_errors_csv",
    "parse_times",
]

STABILIZATIONS = ("sup", "ppe")
ERROR_COLUMNS = ("t", "eps_u", "eps_p", "abs_u", "abs_p", "proj_u", "proj_p", "g_p_source")


class StageError(HemoromError):
    """Wraps a failure with the name of the offline stage it happened in."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name, timings=None):
    log.info("offline stage: %s", name)
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # re-raised with the stage name attached
        raise StageError(name, exc) from exc
    if timings is not None:
        timings[name] = time.perf_counter() - start


@contextmanager
def _lock(path):
    lock = Path(str(path) + ".lock")
    lock.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise BundleError(f"{path} is locked by another process ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _prepare_dir(path):
    path = Path(path)
    if path.exists():
        if (path / "manifest.txt").exists() or (path / ".partial").exists():
            shutil.rmtree(path)
        elif any(path.iterdir()):
            raise BundleError(f"refusing to overwrite non-bundle directory {path}")
    path.mkdir(parents=True, exist_ok=True)


# -- bundle ---------------------------------------------------------------------


def _write_ops(directory, ops, model):
    directory.mkdir(exist_ok=True)
    for name in ReducedOperators.NAMES:
        arr = getattr(ops, name)
        if arr.ndim == 3:
            formats.write_tensor(directory / f"{name}.ten", arr)
        else:
            formats.write_matrix(directory / f"{name}.mat", arr)
    formats.write_matrix(directory / "a0.mat", model.a0[None, :])
    formats.write_matrix(directory / "b0.mat", model.b0[None, :])
    (directory / "model.txt").write_text(
        "t0 = %.17g\nscale_a = %.17g\nscale_b = %.17g\nn_sup = %d\n"
        % (model.t0, model.scale_a, model.scale_b, model.basis.n_sup)
    )


def _read_kv(path):
    out = {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise BundleError(f"missing artifact {path}") from exc
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _write_g_known(path, times, g_u, g_p):
    lines = ["# t g_u g_p_0 ..."]
    for t, gu, gp in zip(times, g_u, g_p):
        lines.append(" ".join("%.17g" % v for v in [t, gu, *np.atleast_1d(gp)]))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_g_known(path):
    rows = [ln.split() for ln in Path(path).read_text().splitlines()
            if ln.strip() and not ln.startswith("#")]
    arr = np.array(rows, dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2:]


def _spectrum_csv_rows(lam_u, lam_p):
    cu, cp = np.cumsum(lam_u) / lam_u.sum(), np.cumsum(lam_p) / lam_p.sum()
    n = max(len(lam_u), len(lam_p))

    def get(a, i):
        return "%.17g" % a[i] if i < len(a) else ""

    return [[str(i + 1), get(lam_u, i), get(cu, i), get(lam_p, i), get(cp, i)] for i in range(n)]


def train_outflow_nn(cfg, times, g_p):
    """Fit the outflow regressor with the network settings of ``cfg``."""
    reg = OutflowRegressor(
        hidden_layers=cfg["nn.hidden_layers"], neurons=cfg["nn.neurons"], epochs=cfg["nn.epochs"],
        learning_rate=cfg["nn.learning_rate"], train_fraction=cfg["nn.train_fraction"],
        seed=cfg["nn.seed"], per_outlet=cfg["nn.per_outlet"],
    )
    return reg.fit(times, g_p)


_PHYSICAL = ("mesh.", "fluid.", "time.", "inlet.", "wk.")


def _check_fom_config(cfg, db):
    """The bundle's physical settings must be those the snapshots used."""
    if not db.config_text:
        return
    stored = parse_config(db.config_text)
    diff = [k for k, v in cfg.items() if k.startswith(_PHYSICAL) and stored[k] != v]
    if diff:
        raise ConfigError(f"configuration differs from the FOM database in {', '.join(diff)}")


def run_offline(cfg, with_fom=False, bundle_dir=None):
    """Lifting, homogenization, POD, supremizers, tensors and NN training.

    Returns the path of the written bundle and a dict of stage timings.
    """
    bundle = Path(bundle_dir) if bundle_dir is not None else cfg.path("paths.bundle_dir")
    fom_dir = cfg.path("paths.fom_dir")
    timings = {}
    with _lock(bundle):
        if with_fom:
            with _stage("fom", timings):
                run_fom(cfg, out_dir=fom_dir)
        if not (fom_dir / "manifest.txt").exists():
            raise BundleError(f"no FOM database at {fom_dir}; run 'hemorom fom' or pass --with-fom")
        with _stage("load snapshots", timings):
            db = SnapshotDatabase.load(fom_dir)
        _check_fom_config(cfg, db)
        _prepare_dir(bundle)
        (bundle / ".partial").write_text("incomplete bundle\n")
        n_modes = cfg["rom.n_modes"] or None
        with _stage("lifting", timings):
            lifting = Lifting(cfg["lifting.outlet_neumann_value"]).fit(db.mesh)
        with _stage("homogenize", timings):
            hdb = homogenize(db, lifting)
        with _stage("pod", timings):
            pod_u, pod_p = fit_pod_bases(hdb, n_modes, cfg["pod.delta"])
        models = {}
        for stab in STABILIZATIONS:
            with _stage(f"basis ({stab})", timings):
                basis = build_basis(lifting, pod_u, pod_p, stab, cfg["rom.supremizer"], hdb.p)
            with _stage(f"tensors ({stab})", timings):
                ops = assemble_operators(basis)
                models[stab] = build_model(db, basis, ops, cfg["fluid.nu"], stab)
        known_t = np.r_[db.initial["t"], db.times] if db.initial else db.times
        known_gu = np.r_[db.initial["g_u"], db.g_u] if db.initial else db.g_u
        known_gp = np.vstack([np.atleast_2d(db.initial["g_p"]), db.g_p]) if db.initial else db.g_p
        with _stage("nn", timings):
            reg = train_outflow_nn(cfg, db.times, db.g_p)
        with _stage("write bundle", timings):
            _write_bundle(bundle, cfg, db, lifting, pod_u, pod_p, models, reg,
                          (known_t, known_gu, known_gp))
    return bundle, timings


def _write_bundle(bundle, cfg, db, lifting, pod_u, pod_p, models, reg, known):
    m = db.mesh
    (bundle / "config.txt").write_text(cfg.dumps())
    (bundle / "mesh.txt").write_text(
        "%d %d %.17g %.17g %d\n" % (m.nx, m.ny, m.length, m.radius, m.n_outlets))
    formats.write_field(bundle / "chi_u.fld", lifting.chi_u_, m.nx, m.ny)
    for j, chi in enumerate(lifting.chi_p_):
        formats.write_field(bundle / f"chi_p_{j}.fld", chi, m.nx, m.ny)
    for k, mode in enumerate(pod_u.modes_.reshape(-1, m.n_cells, 2)):
        formats.write_field(bundle / f"u_mode_{k:03d}.fld", mode, m.nx, m.ny)
    for k, mode in enumerate(pod_p.modes_):
        formats.write_field(bundle / f"p_mode_{k:03d}.fld", mode, m.nx, m.ny)
    (bundle / "spectrum_u.txt").write_text(pod_u.spectrum_table())
    (bundle / "spectrum_p.txt").write_text(pod_p.spectrum_table())
    n_pod = pod_u.n_modes_
    for stab, model in models.items():
        sub = bundle / stab
        sub.mkdir(exist_ok=True)
        for k, s in enumerate(model.basis.u_modes[n_pod:]):
            formats.write_field(sub / f"supremizer_{k:03d}.fld", s, m.nx, m.ny)
        _write_ops(sub, model.ops, model)
    save_model(reg, bundle / "outflow_nn.txt")
    _write_g_known(bundle / "g_known.txt", *known)
    (bundle / "fom_timings.txt").write_text("fom_wall_time = %.17g\n" % db.wall_time)

    files = sorted(p for p in bundle.rglob("*") if p.is_file() and p.name != ".partial")
    lines = [
        "# hemorom bundle",
        f"n_snapshots = {len(db.times)}",
        f"n_modes_u = {pod_u.n_modes_}",
        f"n_modes_p = {pod_p.n_modes_}",
        f"n_supremizers = {models['sup'].basis.n_sup}" if "sup" in models else "n_supremizers = 0",
        f"n_outlets = {m.n_outlets}",
    ]
    lines += [f"config {k} = {v}" for k, v in (ln.split(" = ", 1) for ln in cfg.dumps().splitlines())]
    lines += [f"artifact {p.relative_to(bundle).as_posix()} {formats.sha256(p)}" for p in files]
    (bundle / "manifest.txt").write_text("\n".join(lines) + "\n")
    (bundle / ".partial").unlink()


@dataclass
class Bundle:
    """A verified offline bundle."""

    path: Path
    config: Config
    info: dict
    models: dict
    nn: OutflowRegressor
    known_t: np.ndarray
    known_gu: np.ndarray
    known_gp: np.ndarray
    fom_wall_time: float
    spectra: dict = field(default_factory=dict)

    def g_u(self, t):
        cfg = self.config
        return wk.inlet_profile(np.asarray(t, dtype=float), cfg["inlet.u0"], cfg.windkessel()[0])

    def g_p(self, t):
        """Outflow pressure: NN prediction corrected to the known samples.

        At known sample times this returns the stored values exactly; in
        between, the NN residual at the neighbouring samples is interpolated
        linearly and added to the NN prediction.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        pred = self.nn.predict(t)
        resid_known = self.known_gp - self.nn.predict(self.known_t)
        corr = np.column_stack([
            np.interp(t, self.known_t, resid_known[:, j], left=0.0, right=0.0)
            for j in range(resid_known.shape[1])
        ])
        out = pred + corr
        dist = np.abs(t[:, None] - self.known_t[None, :])
        hit = dist.min(axis=1) <= 1e-9
        out[hit] = self.known_gp[dist[hit].argmin(axis=1)]
        return out

    def g_p_source(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        known = np.isclose(t[:, None], self.known_t[None, :], rtol=0, atol=1e-9).any(axis=1)
        lo, hi = self.config["time.t0"], self.config["time.T"]
        src = np.where(known, "manifest", "nn")
        return np.where((t <= lo) | (t > hi), np.char.add(src, "+extrapolated"), src)


def _verify(bundle):
    manifest = bundle / "manifest.txt"
    if (bundle / ".partial").exists():
        raise BundleError(f"{bundle} is a partial bundle (offline run did not finish)")
    if not manifest.exists():
        raise BundleError(f"{bundle} has no manifest")
    info, cfg_values = {}, {}
    listed = 0
    for line in manifest.read_text().splitlines():
        if line.startswith("artifact "):
            _, name, digest = line.split()
            if formats.sha256(bundle / name) != digest:
                raise BundleError(f"checksum mismatch for {bundle / name}")
            listed += 1
        elif line.startswith("config "):
            k, v = line[len("config "):].split(" = ", 1)
            cfg_values[k] = v
        elif "=" in line and not line.startswith("#"):
            k, v = line.split("=", 1)
            info[k.strip()] = v.strip()
    if not listed:
        raise BundleError(f"{manifest} lists no artifacts")
    return info, cfg_values


def _read_ops(directory):
    arrays = {}
    for name in ReducedOperators.NAMES:
        ten = directory / f"{name}.ten"
        arrays[name] = formats.read_tensor(ten) if ten.exists() else formats.read_matrix(directory / f"{name}.mat")
    return arrays


def load_bundle(path):
    """Load and verify a bundle written by :func:`run_offline`."""
    bundle = Path(path)
    info, cfg_values = _verify(bundle)
    try:
        cfg = Config(cfg_values, base_dir=bundle.parent)
    except ConfigError as exc:
        raise BundleError(f"{bundle}: invalid stored configuration ({exc})") from exc
    nx, ny, length, radius, n_out = (bundle / "mesh.txt").read_text().split()
    mesh = StructuredMesh(int(nx), int(ny), float(length), float(radius), int(n_out))
    chi_u = formats.read_field(bundle / "chi_u.fld")[0]
    chi_p = np.array([formats.read_field(bundle / f"chi_p_{j}.fld")[0] for j in range(mesh.n_outlets)])
    n_u, n_p = int(info["n_modes_u"]), int(info["n_modes_p"])
    u_modes = [formats.read_field(bundle / f"u_mode_{k:03d}.fld")[0] for k in range(n_u)]
    p_modes = [formats.read_field(bundle / f"p_mode_{k:03d}.fld")[0] for k in range(n_p)]
    models = {}
    for stab in STABILIZATIONS:
        sub = bundle / stab
        kv = _read_kv(sub / "model.txt")
        n_sup = int(kv["n_sup"])
        sups = [formats.read_field(sub / f"supremizer_{k:03d}.fld")[0] for k in range(n_sup)]
        basis = ReducedBasis(mesh, chi_u, chi_p, np.array(u_modes + sups), np.array(p_modes), n_sup)
        ops = ReducedOperators(**_read_ops(sub), n_lift_u=1, n_lift_p=mesh.n_outlets)
        models[stab] = ReducedModel(
            basis, ops, cfg["fluid.nu"], float(kv["t0"]),
            formats.read_matrix(sub / "a0.mat").ravel(), formats.read_matrix(sub / "b0.mat").ravel(),
            float(kv["scale_a"]), float(kv["scale_b"]), stab,
        )
    known_t, known_gu, known_gp = _read_g_known(bundle / "g_known.txt")
    spectra = {
        v: np.loadtxt(bundle / f"spectrum_{v}.txt", ndmin=2)[:, 1] for v in ("u", "p")
    }
    fom_wall = float(_read_kv(bundle / "fom_timings.txt")["fom_wall_time"])
    return Bundle(bundle, cfg, info, models, load_model(bundle / "outflow_nn.txt"),
                  known_t, known_gu, known_gp, fom_wall, spectra)


# -- online ---------------------------------------------------------------------


@dataclass
class OnlineResult:
    times: np.ndarray
    u: np.ndarray
    p: np.ndarray
    g_p_source: np.ndarray
    trajectory: object
    report: object = None
    online_time: float = 0.0
    fom_wall_time: float = float("nan")
    stabilization: str = "sup"

    @property
    def time_per_point(self):
        return self.online_time / max(len(self.times), 1)

    @property
    def speedup(self):
        return self.fom_wall_time / self.online_time if self.online_time > 0 else float("inf")


def parse_times(source):
    """Times from a comma/space separated list or from a file of numbers."""
    if source is None:
        raise ConfigError("no evaluation times given")
    text = str(source)
    p = Path(text)
    if p.is_file():
        text = p.read_text()
    try:
        vals = [float(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse times {source!r}: {exc}") from None
    if not vals:
        raise ConfigError("empty time list")
    return np.array(vals)


def run_online(bundle, times, stabilization=None, fom_dir=None):
    """Evaluate the reduced model at ``times``; compare with a FOM database
    when ``fom_dir`` is given."""
    if not isinstance(bundle, Bundle):
        bundle = load_bundle(bundle)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise ConfigError("empty time list")
    if np.any(np.diff(times) <= 0):
        raise ConfigError("evaluation times must be strictly increasing")
    stab = stabilization or bundle.config["rom.stabilization"]
    if stab not in bundle.models:
        raise ConfigError(f"unknown stabilization {stab!r}")
    model = bundle.models[stab]
    cfg = bundle.config
    source = bundle.g_p_source(times)
    if np.any(np.char.endswith(source, "extrapolated")):
        log.warning("some requested times lie outside (t0, T]; boundary data is extrapolated")
    start = time.perf_counter()
    traj = simulate(model, times, bundle.g_u, bundle.g_p, substeps=cfg["rom.substeps"],
                    newton_tol=cfg["rom.newton_tol"], newton_maxiter=cfg["rom.newton_maxiter"])
    u, p = model.reconstruct(traj)
    elapsed = time.perf_counter() - start
    result = OnlineResult(times, u, p, source, traj, None, elapsed, bundle.fom_wall_time, stab)
    if fom_dir is not None:
        result.report = compare_with_fom(model, traj, SnapshotDatabase.load(fom_dir))
    return result


def compare_with_fom(model, traj, db, atol=1e-9):
    """Error report at the requested times that exist in the FOM database."""
    idx_rom, idx_fom = [], []
    for i, t in enumerate(traj.times):
        k = np.flatnonzero(np.abs(db.times - t) <= atol * max(1.0, abs(t)))
        if k.size:
            idx_rom.append(i)
            idx_fom.append(k[0])
    sub = traj.at(traj.times[idx_rom]) if idx_rom else None
    if sub is None:
        return None
    return rom_errors(db.times[idx_fom], db.u[idx_fom], db.p[idx_fom], model, sub)


# -- reports --------------------------------------------------------------------


def write_report(out_dir, result, bundle=None):
    """Write ``errors.csv``, ``spectrum.csv`` and ``timings.txt``; return a
    human readable summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = result.report
    src = dict(zip(np.round(result.times, 12), result.g_p_source))
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ERROR_COLUMNS)
        if rep is not None:
            for i, t in enumerate(rep.times):
                vals = [rep.eps_u[i], rep.eps_p[i], rep.abs_u[i], rep.abs_p[i], rep.proj_u[i], rep.proj_p[i]]
                w.writerow(["%.17g" % t] + ["%.17g" % v for v in vals] + [src.get(round(t, 12), "")])
    if bundle is not None:
        with open(out / "spectrum.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "lambda_u", "cumulative_u", "lambda_p", "cumulative_p"])
            w.writerows(_spectrum_csv_rows(bundle.spectra["u"], bundle.spectra["p"]))
    (out / "timings.txt").write_text(
        "fom_wall_time = %.17g\nonline_time = %.17g\nonline_time_per_point = %.17g\n"
        "n_points = %d\nspeedup = %.17g\n"
        % (result.fom_wall_time, result.online_time, result.time_per_point, len(result.times),
           result.speedup)
    )
    return summarize(result)


def summarize(result):
    lines = [
        f"stabilization: {result.stabilization}",
        f"evaluated {len(result.times)} time(s) in {result.online_time:.4g} s "
        f"({result.time_per_point:.3g} s per point)",
        f"FOM wall time {result.fom_wall_time:.4g} s, speedup FOM/online = {result.speedup:.4g}",
    ]
    rep = result.report
    if rep is not None and len(rep.times):
        m = rep.mean()
        lines.append(
            "mean relative error: velocity %.4g, pressure %.4g (projection %.4g, %.4g)"
            % (m["eps_u"], m["eps_p"], m["proj_u"], m["proj_p"])
        )
        lines.append("reconstruction >= projection error at every time: "
                     + ("yes" if rep.projection_ok() else "NO"))
    n_nn = int(np.sum(np.char.startswith(result.g_p_source, "nn")))
    lines.append(f"outflow pressure from NN at {n_nn} of {len(result.times)} time(s)")
    return "\n".join(lines)


def read_errors_csv(path):
    """Parse ``errors.csv`` into a dict of arrays (``g_p_source`` as strings)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ERROR_COLUMNS:
        raise BundleError(f"{path}: unexpected header")
    cols = list(zip(*rows[1:])) if len(rows) > 1 else [()] * len(ERROR_COLUMNS)
    out = {}
    for name, col in zip(ERROR_COLUMNS, cols):
        out[name] = np.array(col, dtype=str if name == "g_p_source" else float)
    return out


def load_config_text(text, base_dir="."):
    return parse_config(text, base_dir)


def check_numerics(result):
    if not (np.all(np.isfinite(result.u)) and np.all(np.isfinite(result.p))):
        raise NumericalError("online reconstruction produced non-finite values")
