import numpy as np
import pytest
import yaml

from subbem.cli import main
from subbem.config import ConfigError, RunConfig, known_from_spec, parse_config, parse_levels, patch_conditions
from subbem.geometry import circle, curve_to_dict, square
from subbem.harness import CSV_COLUMNS
from subbem.kernels import Material

HEADER = ",".join(CSV_COLUMNS)


def test_defaults():
    cfg = parse_config()
    assert (cfg.eps_q, cfg.eps_h, cfg.eta, cfg.n_min, cfg.backend) == (1e-9, 1e-6, 1.0, 8, "hmatrix")
    assert parse_config({}) == RunConfig()


@pytest.mark.parametrize("field, value, needle", [
    ("eta", 1.5, "eta"),
    ("eps_h", 0.0, "eps_h"),
    ("eps_q", 1.0, "eps_q"),
    ("order", 0, "order"),
    ("levels", [0, 1], "levels"),
    ("backend", "sparse", "backend"),
    ("colour", "red", "colour"),
])
def test_validation_names_field(field, value, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config({field: value})


def test_unknown_geometry_lists_builtins():
    with pytest.raises(ConfigError, match="circle, tunnel"):
        parse_config(geometry="moon")


def test_levels_forms():
    assert parse_levels(3) == (1, 2, 3)
    assert parse_levels("2,4") == (2, 4)
    assert parse_levels("2-4") == (2, 3, 4)
    with pytest.raises(ConfigError):
        parse_levels("two")


def test_yaml_file_and_flag_override(tmp_path):
    f = tmp_path / "run.yaml"
    f.write_text("geometry: tunnel\norder: 3\neps-h: 1.0e-4\nlevels: 2-3\n")
    cfg = parse_config(f, order=2)
    assert (cfg.geometry, cfg.order, cfg.eps_h, cfg.levels) == ("tunnel", 2, 1e-4, (2, 3))
    bad = tmp_path / "bad.yaml"
    bad.write_text("order: [1\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        parse_config(bad)


def test_known_specs():
    mat = Material(1.0, 0.3)
    x = np.array([[1.0, 2.0], [0.0, -1.0]])
    n = np.array([[1.0, 0.0], [0.0, 1.0]])
    g, cplx = known_from_spec({"type": "constant", "value": [1, 2]}, "neumann", mat)
    assert not cplx and np.array_equal(g(x, n), [[1, 2], [1, 2]])
    g, _ = known_from_spec({"type": "linear", "value": [0, 1], "gradient": [[1, 0], [0, 2]]}, "dirichlet", mat)
    assert np.allclose(g(x, n), [[1, 5], [0, -1]])
    g, cplx = known_from_spec({"type": "fundamental", "source": [0, 0]}, "dirichlet", mat)
    assert cplx and g(x, n).shape == (2, 2)
    with pytest.raises(ConfigError, match=r"known\.value"):
        known_from_spec({"type": "constant"}, "neumann", mat)
    with pytest.raises(ConfigError, match="type"):
        known_from_spec({"type": "quadratic"}, "neumann", mat)


def test_patch_conditions_paths():
    mat = Material(1.0, 0.3)
    assert patch_conditions([{}, {}], mat) is None
    with pytest.raises(ConfigError, match=r"patches\[1\]\.bc_type"):
        patch_conditions([{"bc_type": "neumann"}, {"bc_type": "robin"}], mat)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_ops_count_matches_closed_forms(capsys):
    code, out, _ = run(capsys, "ops-count")
    rows = [r.split(",") for r in out.strip().splitlines()[1:]]
    assert code == 0 and len(rows) == 20
    assert all(r[2] == r[3] for r in rows)


def test_converge_dense_circle(capsys):
    code, out, _ = run(capsys, "converge", "--geometry", "circle", "--order", "2", "--levels", "4",
                       "--backend", "dense")
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == HEADER and len(lines) == 5
    h = [float(l.split(",")[1]) for l in lines[1:]]
    assert all(0.45 < b / a < 0.55 for a, b in zip(h, h[1:]))


def test_converge_deterministic(capsys):
    args = ("converge", "--geometry", "circle", "--levels", "1,2", "--backend", "dense")
    assert run(capsys, *args)[1] == run(capsys, *args)[1]


def test_compress_tunnel(tmp_path, capsys):
    out = tmp_path / "c.csv"
    code, _, _ = run(capsys, "compress", "--geometry", "tunnel", "--levels", "3,4", "--out", str(out))
    lines = out.read_text().strip().splitlines()
    assert code == 0 and lines[0] == HEADER
    c_H = [float(l.split(",")[6]) for l in lines[1:]]
    assert c_H[1] > c_H[0]


def test_error_exit(capsys):
    code, out, err = run(capsys, "converge", "--eta", "1.5")
    assert code == 1 and out == "" and "eta" in err


def test_solve_with_file_conditions(tmp_path, capsys):
    doc = {"patches": [dict(curve_to_dict(c), bc_type="neumann",
                            known={"type": "constant", "value": [0.0, 1.0]}) for c in square()]}
    geo = tmp_path / "sq.yaml"
    geo.write_text(yaml.safe_dump(doc))
    code, out, err = run(capsys, "solve", "--geometry", str(geo), "--levels", "2", "--backend", "dense")
    assert code == 0, err
    lines = out.strip().splitlines()
    assert lines[0] == "patch,u,x,y,ux,uy,tx,ty"
    t = np.array([[float(v) for v in l.split(",")[6:]] for l in lines[1:]])
    assert np.allclose(t, [0.0, 1.0])
