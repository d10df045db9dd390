import io
import json
import shutil
from pathlib import Path

import pytest

from agbdval import __version__
from agbdval.cli import main
from agbdval.config import ConfigError, RunConfig, coerce_override, config_from_dict, edit_distance, parse_config
from agbdval.geom import AlbersSpec, read_zones
from agbdval.pipeline import THREADS_ENV, PipelineError, run_validate, worker_count

TOY = Path(__file__).resolve().parents[1] / "src" / "agbdval" / "data" / "toy"


def _minimal(**extra):
    return {"raster": "a.asc", "zones": "z.geojson", "plots": "p.csv", "output_dir": "out", **extra}


# -- configuration -------------------------------------------------------------------


def test_minimal_config_defaults(tmp_path):
    cfg = config_from_dict(_minimal(), tmp_path, check_paths=False)
    assert cfg.bin_width == 50.0
    assert cfg.subsample_window == 10
    assert cfg.mask_threshold == 0.5
    assert cfg.agreement_c == 2.0
    assert cfg.critical_t == 2.0
    assert cfg.filter_mode == "auto" and cfg.sigma_ddof == 1
    assert cfg.projection == AlbersSpec()
    assert cfg.raster == tmp_path / "a.asc"


def test_negative_bin_width():
    with pytest.raises(ConfigError, match="bin_width must be > 0"):
        config_from_dict(_minimal(bin_width=-1), check_paths=False)


def test_unknown_key_suggestion():
    with pytest.raises(ConfigError, match="did you mean 'bin_width'"):
        config_from_dict(_minimal(binwidth=10), check_paths=False)
    with pytest.raises(ConfigError, match="unknown key 'zzz'$"):
        config_from_dict(_minimal(zzz=1), check_paths=False)


@pytest.mark.parametrize(
    "extra, match",
    [
        ({"seed": "1"}, "seed: expected int"),
        ({"seed": True}, "seed: expected int"),
        ({"filter_mode": "sometimes"}, "filter_mode must be one of"),
        ({"filter_mode": "fixed"}, "filter_threshold is required"),
        ({"filter_threshold": 5}, "only valid"),
        ({"year_window": [2020, 2010]}, "min_year <= max_year"),
        ({"projection": {"lat1": 30}}, "did you mean 'lat_1'"),
        ({"mask_threshold": 1.5}, r"mask_threshold must lie in \[0, 1\]"),
    ],
)
def test_config_errors(extra, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(_minimal(**extra), check_paths=False)


def test_required_and_missing_paths(tmp_path):
    raw = _minimal()
    del raw["plots"]
    with pytest.raises(ConfigError, match="plots: required"):
        config_from_dict(raw, check_paths=False)
    with pytest.raises(ConfigError, match="raster: file not found"):
        config_from_dict(_minimal(), tmp_path)


def test_parse_config_relative_to_file(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "c.json").write_text(json.dumps(_minimal(seed=7)))
    cfg = parse_config(tmp_path / "sub" / "c.json", overrides={"bin_width": 25.0}, check_paths=False)
    assert cfg.plots == tmp_path / "sub" / "p.csv"
    assert (cfg.seed, cfg.bin_width) == (7, 25.0)
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(io.StringIO("{"), check_paths=False)


def test_override_coercion():
    assert coerce_override("bin_width", "25") == 25.0
    assert coerce_override("seed", "3") == 3
    assert coerce_override("year_window", "[2010, 2020]") == [2010, 2020]
    assert coerce_override("inundation", "null") is None
    with pytest.raises(ConfigError, match="seed: expected int"):
        coerce_override("seed", "x")


def test_digest_changes_with_content():
    a = config_from_dict(_minimal(), check_paths=False)
    b = config_from_dict(_minimal(seed=1), check_paths=False)
    assert a.digest() == config_from_dict(_minimal(), check_paths=False).digest()
    assert a.digest() != b.digest()
    assert isinstance(a, RunConfig)


def test_edit_distance():
    assert edit_distance("binwidth", "bin_width") == 1
    assert edit_distance("", "abc") == 3
    assert edit_distance("kitten", "sitting") == 3


def test_thread_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(THREADS_ENV, "0")
    with pytest.raises(PipelineError):
        worker_count()


# -- pipeline ------------------------------------------------------------------------------


@pytest.fixture()
def toy(tmp_path):
    d = tmp_path / "toy"
    shutil.copytree(TOY, d)
    return d


def test_validate_outputs(toy, capsys):
    assert main(["validate", str(toy / "config.json")]) == 0
    out = toy / "out"
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(["report.json", "units.csv", "qq.csv", "histograms.csv", "zonal.csv", "tstat.geojson", "manifest.json"])
    report = json.loads((out / "report.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert report["n_units"] + report["n_filtered"] <= manifest["counts"]["zones_in"]
    assert (out / "units.csv").read_text().splitlines()[0] == "unit_id,pred_mean,ref_mean,pred_var,ref_var,t,significant"
    assert (out / "qq.csv").read_text().splitlines()[0] == "p,q_pred,q_ref"
    hist = (out / "histograms.csv").read_text().splitlines()
    assert hist[0] == "bin_lo,bin_hi,count,source"
    assert {line.split(",")[3] for line in hist[1:]} == {"raster", "plots", "diff"}
    zones = read_zones(out / "tstat.geojson")
    with_t = [z for z in zones if z.properties["t"] is not None]
    assert len(with_t) == report["n_units"]
    assert manifest["config_sha256"] == parse_config(toy / "config.json").digest()
    assert "units=" in capsys.readouterr().out


def test_filter_off(toy):
    assert main(["validate", str(toy / "config.json"), "--filter-mode", "off", "--output-dir", str(toy / "o2")]) == 0
    report = json.loads((toy / "o2" / "report.json").read_text())
    assert report["n_filtered"] == 0


def test_fixed_filter_and_unit_grouping(toy):
    args = ["validate", str(toy / "config.json"), "--filter-mode", "fixed", "--filter-threshold", "1e9",
            "--output-dir", str(toy / "o3")]
    # no zone reaches a billion pixels: nothing left to regress
    assert main(args) == 2
    assert not (toy / "o3" / "report.json").exists()
    args = ["validate", str(toy / "config.json"), "--plot-grouping", "unit_id", "--output-dir", str(toy / "o4")]
    assert main(args) == 0


def test_failed_run_leaves_no_partial_outputs(toy, capsys):
    (toy / "plots.csv").write_text("plot_id,lon,lat,measure_year,agbd_mg_ha,stratum_id,unit_id\na,-100,40,2020,abc,f,u\n")
    assert main(["validate", str(toy / "config.json")]) == 2
    assert "row 2: agbd not numeric" in capsys.readouterr().err
    out = toy / "out"
    assert not out.exists() or list(out.iterdir()) == []


def test_config_error_exit_code(toy, capsys):
    assert main(["validate", str(toy / "config.json"), "--bin-width", "-1"]) == 2
    assert "bin_width must be > 0" in capsys.readouterr().err


def test_worker_count_does_not_change_outputs(toy):
    cfg = parse_config(toy / "config.json")
    from dataclasses import replace

    run_validate(replace(cfg, output_dir=toy / "w1"), workers=1)
    run_validate(replace(cfg, output_dir=toy / "w4"), workers=4)
    for name in ("report.json", "units.csv", "zonal.csv", "tstat.geojson", "histograms.csv", "qq.csv"):
        assert (toy / "w1" / name).read_bytes() == (toy / "w4" / name).read_bytes()


# -- other subcommands -----------------------------------------------------------------


def test_version(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


def test_tessellate(tmp_path, capsys):
    out = tmp_path / "hex.geojson"
    assert main(["tessellate", "--bounds", "0", "0", "100000", "100000", "--out", str(out)]) == 0
    zones = read_zones(out)
    assert len(zones) > 10
    assert "side 15695.1 m" in capsys.readouterr().out
    assert main(["tessellate", "--from-raster", str(TOY / "agbd.asc"), "--out", str(out)]) == 0
    assert main(["tessellate", "--out", str(out)]) == 2


def test_zonal_and_estimate(tmp_path):
    assert main(["zonal", "--raster", str(TOY / "agbd.asc"), "--zones", str(TOY / "zones.geojson"), "--out", str(tmp_path / "z.csv")]) == 0
    lines = (tmp_path / "z.csv").read_text().splitlines()
    assert lines[0] == "zone_id,n_pixels,mean,var_of_mean,sum"
    assert main(
        ["estimate", "--plots", str(TOY / "plots.csv"), "--zones", str(TOY / "zones.geojson"),
         "--weights", str(TOY / "weights.csv"), "--out", str(tmp_path / "e.csv")]
    ) == 0
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "zone_id,mean,var_of_mean,n_plots,method"
    assert len(rows) == len(lines)


def test_synth_then_validate(tmp_path):
    d = tmp_path / "s"
    assert main(["synth", "--out-dir", str(d), "--rows", "120", "--cols", "120", "--cell", "500", "--hex-area-ha", "20000"]) == 0
    (d / "config.json").write_text(
        json.dumps({"raster": "agbd.asc", "zones": "zones.geojson", "plots": "plots.csv", "weights": "weights.csv", "output_dir": "out"})
    )
    assert main(["validate", str(d / "config.json")]) == 0
