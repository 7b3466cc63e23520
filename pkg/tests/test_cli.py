import json
import shutil
from pathlib import Path

import pytest

from wtgplan.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_NO_PATH, EXIT_OK, main
from wtgplan.ml_skimap import load_map
from wtgplan.pointcloud_io import load_point_cloud
from wtgplan.wtg import load_graph

PROFILES = Path(__file__).resolve().parent.parent / "profiles"


@pytest.fixture
def flat_scene(tmp_path):
    cloud = tmp_path / "flat.ply"
    assert main(["scenegen", "flat", "--seed", "1", "--density", "100", "--param", "extent_x=3",
                 "--param", "extent_y=2", "--out", str(cloud), "--truth", str(tmp_path / "t.json")]) == 0
    return cloud


def test_scenegen_writes_cloud_and_truth(tmp_path, flat_scene):
    assert len(load_point_cloud(flat_scene)) == 600
    truth = json.loads((tmp_path / "t.json").read_text())
    assert truth["kind"] == "flat" and truth["params"]["extent_x"] == 3


def test_pipeline_and_plan(tmp_path, flat_scene, capsys):
    m, s, g, p = (tmp_path / n for n in ("m.mlsk", "s.mlsk", "g.wtg", "p.json"))
    assert main(["build", "--input", str(flat_scene), "--output", str(m)]) == EXIT_OK
    assert "levels=" in capsys.readouterr().out
    assert main(["simplify", "--input", str(m), "--output", str(s), "--export-ply", str(tmp_path / "c.ply")]) == 0
    assert main(["analyze", "--input", str(s), "--output", str(g), "--export-ply", str(tmp_path / "g.ply"),
                 "--field-ply", str(tmp_path / "f.ply")]) == 0
    assert (tmp_path / "g.field.json").exists()
    assert load_graph(g).n_nodes == load_map(s).n_levels
    assert main(["plan", "--input", str(g), "--start", "0.65,0.65,0.05", "--goal", "2.35,1.35,0.05",
                 "--output", str(p), "--export-ply", str(tmp_path / "p.ply")]) == EXIT_OK
    doc = json.loads(p.read_text())
    assert doc["start"] == [6, 6, 0] and doc["goal"] == [23, 13, 0]
    assert main(["export", "--input", str(m), "--output", str(tmp_path / "m.ply")]) == 0
    assert main(["export", "--input", str(g), "--output", str(tmp_path / "g.json")]) == 0
    assert load_graph(tmp_path / "g.json").to_bytes() == load_graph(g).to_bytes()


def test_config_precedence(tmp_path, flat_scene):
    ini = tmp_path / "c.ini"
    ini.write_text("[map]\ncell_size = 0.2\nlevel_gap = 0.5\n")
    out = tmp_path / "m.mlsk"
    assert main(["build", "--config", str(ini), "--input", str(flat_scene), "--output", str(out)]) == 0
    assert load_map(out).config.cell_size == 0.2
    assert main(["build", "--config", str(ini), "--cell-size", "0.25", "--input", str(flat_scene),
                 "--output", str(out)]) == 0
    cfg = load_map(out).config
    assert (cfg.cell_size, cfg.level_gap) == (0.25, 0.5)
    assert main(["build", "--input", str(flat_scene), "--output", str(out)]) == 0
    assert load_map(out).config.cell_size == 0.1


def test_example_config_and_profiles(tmp_path, flat_scene):
    for name in ("example.ini", "ugv.txt", "g500.txt"):
        shutil.copy(PROFILES / name, tmp_path / name)
    m, g = tmp_path / "m.mlsk", tmp_path / "g.wtg"
    ini = str(tmp_path / "example.ini")
    assert main(["build", "--config", ini, "--input", str(flat_scene), "--output", str(m)]) == 0
    assert main(["analyze", "--config", ini, "--input", str(m), "--output", str(g)]) == 0
    # the second profile leaves the chassis clearance to the user
    assert main(["analyze", "--vehicle", str(tmp_path / "g500.txt"), "--input", str(m),
                 "--output", str(g)]) == EXIT_CONFIG


def test_exit_codes(tmp_path, flat_scene):
    assert main(["build", "--input", str(tmp_path / "missing.ply"), "--output", str(tmp_path / "m")]) == EXIT_INPUT
    bad = tmp_path / "bad.ply"
    bad.write_text("ply\nformat ascii 1.0\nelement vertex 3\nend_header\n")
    assert main(["build", "--input", str(bad), "--output", str(tmp_path / "m")]) == EXIT_INPUT
    assert main(["build", "--input", str(flat_scene), "--output", str(tmp_path / "m"),
                 "--cell-size", "-1"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["build", "--cell-size", "abc", "--input", "x", "--output", "y"])
    assert exc.value.code == EXIT_CONFIG
    m, g = tmp_path / "m.mlsk", tmp_path / "g.wtg"
    assert main(["build", "--input", str(flat_scene), "--output", str(m)]) == 0
    assert main(["analyze", "--input", str(m), "--output", str(g)]) == 0
    # start inside the blocked border band has no way out
    assert main(["plan", "--input", str(g), "--start", "0.05,0.05,0.05", "--goal", "1.5,1.0,0.05"]) == EXIT_NO_PATH
    assert main(["plan", "--input", str(g), "--start", "9,9,9", "--goal", "1.5,1.0,0.05",
                 "--snap-radius", "0.2"]) == EXIT_INPUT
    assert main(["plan", "--input", str(g), "--start", "1,2", "--goal", "1.5,1.0,0.05"]) == EXIT_CONFIG


def test_build_reports_levels_and_simplify_fraction(tmp_path, capsys):
    cloud, m, s = tmp_path / "p.ply", tmp_path / "p.mlsk", tmp_path / "s.mlsk"
    assert main(["scenegen", "plateau", "--density", "400", "--out", str(cloud)]) == 0
    capsys.readouterr()
    assert main(["build", "--input", str(cloud), "--output", str(m), "--level-gap", "0.3"]) == 0
    out = capsys.readouterr().out
    fields = dict(kv.split("=") for kv in out.split())
    assert int(fields["points"]) == len(load_point_cloud(cloud))
    assert int(fields["multi_level_columns"]) > 0
    assert main(["simplify", "--input", str(m), "--output", str(s), "--c", "1e9"]) == 0
    assert "fraction=1" in capsys.readouterr().out
    assert s.read_bytes() == m.read_bytes()
    a, b = tmp_path / "a.mlsk", tmp_path / "b.mlsk"
    for dst in (a, b):
        assert main(["simplify", "--input", str(m), "--output", str(dst), "--seed", "9"]) == 0
    assert a.read_bytes() == b.read_bytes()
    bad = tmp_path / "bad.mlsk"
    data = bytearray(m.read_bytes())
    data[4] = 7
    bad.write_bytes(bytes(data))
    assert main(["simplify", "--input", str(bad), "--output", str(s)]) == EXIT_INPUT
