import os

import numpy as np
import pytest

from conftest import SMALL_FOM
from hemorom.config import Config
from hemorom.errors import BundleError, ConfigError
from hemorom.pipeline import (
    ERROR_COLUMNS,
    StageError,
    load_bundle,
    parse_times,
    read_errors_csv,
    run_offline,
    run_online,
    write_report,
)


def small_config(tmp, **extra):
    values = dict(SMALL_FOM)
    values.update({"paths.fom_dir": str(tmp / "fom"), "paths.bundle_dir": str(tmp / "rom.bundle"),
                   "paths.out_dir": str(tmp / "out")})
    values.update(extra)
    return Config(values)


@pytest.fixture(scope="module")
def offline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("offline")
    cfg = small_config(tmp)
    bundle, timings = run_offline(cfg, with_fom=True)
    return cfg, bundle, timings


def _manifest(bundle):
    info = {}
    for line in (bundle / "manifest.txt").read_text().splitlines():
        if "=" in line and not line.startswith(("config ", "#")):
            k, v = line.split("=", 1)
            info[k.strip()] = v.strip()
    return info


def test_offline_stages_and_inventory(offline):
    cfg, bundle, timings = offline
    assert list(timings)[:5] == ["fom", "load snapshots", "lifting", "homogenize", "pod"]
    names = {p.relative_to(bundle).as_posix() for p in bundle.rglob("*") if p.is_file()}
    assert {"chi_u.fld", "chi_p_0.fld", "spectrum_u.txt", "spectrum_p.txt", "outflow_nn.txt",
            "manifest.txt", "config.txt"} <= names
    for stab in ("sup", "ppe"):
        for t in ("M.mat", "B.mat", "K.mat", "P.mat", "D.mat", "N.mat", "C.ten", "G.ten"):
            assert f"{stab}/{t}" in names
    info = _manifest(bundle)
    assert int(info["n_supremizers"]) == int(info["n_modes_p"])
    assert not (bundle / ".partial").exists()
    assert not os.path.exists(str(bundle) + ".lock")
    text = (bundle / "manifest.txt").read_text()
    assert "config pod.delta = " in text and "config nn.epochs = 300" in text


def test_offline_rerun_is_byte_identical(offline, tmp_path):
    cfg, bundle, _ = offline
    again, _ = run_offline(cfg, bundle_dir=tmp_path / "again")
    a = sorted(p.relative_to(bundle) for p in bundle.rglob("*") if p.is_file())
    b = sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
    assert a == b
    for rel in a:
        assert (bundle / rel).read_bytes() == (again / rel).read_bytes(), rel


def test_delta_one_keeps_all_snapshots(offline, tmp_path):
    cfg, _, _ = offline
    vals = dict(cfg.items())
    vals["pod.delta"] = 1.0
    bundle, _ = run_offline(Config(vals), bundle_dir=tmp_path / "full")
    info = _manifest(bundle)
    # homogenized snapshots of this short run have numerical rank N_t
    assert int(info["n_modes_u"]) == int(info["n_snapshots"]) == 20


def test_offline_rejects_mismatched_fom(offline, tmp_path):
    cfg, _, _ = offline
    vals = dict(cfg.items())
    vals["fluid.nu"] = 0.005
    with pytest.raises(ConfigError, match="fluid.nu"):
        run_offline(Config(vals), bundle_dir=tmp_path / "x")


def test_missing_fom_database(tmp_path):
    with pytest.raises(BundleError, match="no FOM database"):
        run_offline(small_config(tmp_path))


def test_stage_failure_names_stage_and_leaves_partial(offline, tmp_path):
    cfg, _, _ = offline
    vals = dict(cfg.items())
    vals["rom.n_modes"] = 50
    target = tmp_path / "bad"
    with pytest.raises(StageError) as exc:
        run_offline(Config(vals), bundle_dir=target)
    assert exc.value.stage == "pod"
    assert (target / ".partial").exists()
    with pytest.raises(BundleError, match="partial"):
        load_bundle(target)


def test_lock_blocks_concurrent_writer(offline, tmp_path):
    cfg, _, _ = offline
    target = tmp_path / "locked"
    lock = tmp_path / "locked.lock"
    lock.write_text("1")
    with pytest.raises(BundleError, match="locked"):
        run_offline(cfg, bundle_dir=target)
    assert lock.exists() and not target.exists()


def test_refuses_to_overwrite_foreign_directory(offline, tmp_path):
    cfg, _, _ = offline
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "keep.txt").write_text("x")
    with pytest.raises(BundleError):
        run_offline(cfg, bundle_dir=tmp_path / "data")
    assert (tmp_path / "data" / "keep.txt").exists()


def test_checksum_tamper_detected(offline, tmp_path):
    import shutil

    _, bundle, _ = offline
    copy = tmp_path / "copy"
    shutil.copytree(bundle, copy)
    load_bundle(copy)
    target = copy / "sup" / "K.mat"
    with open(target, "a") as fh:
        fh.write("\n")
    with pytest.raises(BundleError, match="checksum"):
        load_bundle(copy)


def test_online_at_training_times_reaches_projection(offline):
    cfg, bundle, _ = offline
    b = load_bundle(bundle)
    times = b.known_t[1:]
    res = run_online(b, times, "sup", fom_dir=cfg.path("paths.fom_dir"))
    assert res.report is not None and len(res.report.times) == len(times)
    assert res.report.projection_ok()
    assert np.all(res.g_p_source == "manifest")
    # the stored samples are used exactly at training times
    assert np.array_equal(b.g_p(times), b.known_gp[1:])
    assert res.speedup > 0 and res.time_per_point > 0


def test_online_midpoints_use_the_network(offline):
    _, bundle, _ = offline
    b = load_bundle(bundle)
    mids = 0.5 * (b.known_t[1:-1] + b.known_t[2:])
    res = run_online(b, mids, "sup")
    assert np.all(res.g_p_source == "nn")
    assert res.report is None
    late = run_online(b, [0.25], "sup")
    assert late.g_p_source.tolist() == ["nn+extrapolated"]


@pytest.mark.parametrize("bad", [[], [0.1, 0.05]])
def test_online_rejects_bad_times(offline, bad):
    _, bundle, _ = offline
    with pytest.raises(ConfigError):
        run_online(bundle, bad)


def test_parse_times(tmp_path):
    assert parse_times("0.1, 0.2 0.3").tolist() == [0.1, 0.2, 0.3]
    f = tmp_path / "t.txt"
    f.write_text("0.5\n0.6\n")
    assert parse_times(str(f)).tolist() == [0.5, 0.6]
    for bad in ("", "a,b", None):
        with pytest.raises(ConfigError):
            parse_times(bad)


def test_report_round_trip_and_counts(offline, tmp_path):
    cfg, bundle, _ = offline
    b = load_bundle(bundle)
    times = b.known_t[1:]
    res = run_online(b, times, "ppe", fom_dir=cfg.path("paths.fom_dir"))
    summary = write_report(tmp_path, res, b)
    assert "stabilization: ppe" in summary
    data = read_errors_csv(tmp_path / "errors.csv")
    assert len(data["t"]) == len(times)
    rep = res.report
    for col in ("eps_u", "eps_p", "abs_u", "abs_p", "proj_u", "proj_p"):
        assert np.array_equal(data[col], getattr(rep, col))
    assert np.array_equal(data["t"], rep.times)
    assert (tmp_path / "spectrum.csv").read_text().startswith("index,lambda_u")
    assert "speedup" in (tmp_path / "timings.txt").read_text()


def test_empty_report_is_header_only(offline, tmp_path):
    _, bundle, _ = offline
    res = run_online(bundle, [0.105], "sup")
    write_report(tmp_path, res)
    lines = (tmp_path / "errors.csv").read_text().splitlines()
    assert lines == [",".join(ERROR_COLUMNS)]
    data = read_errors_csv(tmp_path / "errors.csv")
    assert all(len(v) == 0 for v in data.values())
