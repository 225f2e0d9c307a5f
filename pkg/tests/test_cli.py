import csv
import json
import math

import numpy as np
import pytest

from factories import random_energies
from nlbal.cli import main
from nlbal.energy import EnergyCoeffs, save_energy
from nlbal.reduction import PolySystem


def write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture
def scalar_system(tmp_path):
    return write(tmp_path / "sys.json", PolySystem([[-1.0]], [[1.0]], [[1.0]]).to_json())


@pytest.fixture
def small_system(tmp_path):
    rng = np.random.default_rng(0)
    A = -np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    N2 = 0.1 * rng.standard_normal((3, 9))
    sys = PolySystem(A, rng.standard_normal((3, 1)), rng.standard_normal((1, 3)), N2)
    return write(tmp_path / "sys.json", sys.to_json())


def test_are_scalar(tmp_path, scalar_system):
    out = tmp_path / "e.json"
    assert main(["are", "--system", scalar_system, "--gamma", str(math.sqrt(2)), "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert 1 / data["v"]["2"][0] == pytest.approx(math.sqrt(6) - 2, abs=1e-12)
    assert "e.json" in json.loads((tmp_path / "manifest.json").read_text())["runs"]


def test_are_open_loop_and_gamma_one(tmp_path, scalar_system, capsys):
    out = str(tmp_path / "e.json")
    assert main(["are", "--system", scalar_system, "--open-loop", "--out", out]) == 0
    assert json.loads((tmp_path / "e.json").read_text())["w"]["2"][0] == pytest.approx(0.5)
    assert main(["are", "--system", scalar_system, "--gamma", "1", "--out", out]) == 2
    assert "gamma must differ from 1" in capsys.readouterr().err


def test_balance_linear_energies(tmp_path):
    rng = np.random.default_rng(1)
    v, w = random_energies(rng, 3, 2)
    save_energy(v, tmp_path / "e.json", w)
    full, red = tmp_path / "full.json", tmp_path / "red.json"
    assert main(["balance", "--v", str(tmp_path / "e.json"), "--degree", "3", "--out", str(full)]) == 0
    assert main(["balance", "--v", str(tmp_path / "e.json"), "--degree", "3", "--reduce", "3", "--out", str(red)]) == 0
    a, b = json.loads(full.read_text()), json.loads(red.read_text())
    assert np.max(np.abs(a["T"]["2"])) <= 1e-12 and np.max(np.abs(a["T"]["3"])) <= 1e-12
    np.testing.assert_allclose(a["T"]["1"], b["T"]["1"], atol=1e-10)


def test_balance_rejects_indefinite(tmp_path):
    path = write(tmp_path / "e.json", {"n": 1, "v": {"2": [-1.0]}, "w": {"2": [1.0]}})
    assert main(["balance", "--v", path, "--degree", "1", "--out", str(tmp_path / "t.json")]) == 2


def test_balance_numerical_failure(tmp_path):
    path = write(tmp_path / "e.json", {"n": 2, "v": {"2": [1, 0, 0, 1]}, "w": {"2": [1, 0, 0, 0]}})
    assert main(["balance", "--v", path, "--degree", "1", "--out", str(tmp_path / "t.json")]) == 3


def test_svf_constant_case(tmp_path):
    rng = np.random.default_rng(2)
    v, w = random_energies(rng, 2, 2)
    save_energy(v, tmp_path / "e.json", w)
    e, t, s = str(tmp_path / "e.json"), str(tmp_path / "t.json"), tmp_path / "s.csv"
    assert main(["balance", "--v", e, "--degree", "3", "--out", t]) == 0
    assert main(["svf", "--w", e, "--trafo", t, "--ell", "2", "--range", "0.5", "--samples", "5",
                 "--out", str(s)]) == 0
    rows = list(csv.reader(s.open()))
    assert rows[0] == ["z", "xi_1", "xi_2"]
    values = np.array(rows[1:], dtype=float)[:, 1:]
    np.testing.assert_allclose(values, values[[0]].repeat(5, axis=0))
    assert main(["svf", "--w", e, "--trafo", t, "--ell", "3", "--range", "0.5", "--out", str(s)]) == 2


def test_rom_full_order_matches_fom(tmp_path, small_system):
    e, t, r = (str(tmp_path / f) for f in ("e.json", "t.json", "rom.json"))
    assert main(["are", "--system", small_system, "--gamma", "3", "--out", e]) == 0
    assert main(["balance", "--v", e, "--degree", "1", "--out", t]) == 0
    assert main(["rom", "--system", small_system, "--trafo", t, "--out", r]) == 0
    fom, rom = str(tmp_path / "fom.csv"), str(tmp_path / "rom.csv")
    assert main(["simulate", "--system", small_system, "--t1", "2", "--out", fom]) == 0
    assert main(["simulate", "--rom", r, "--t1", "2", "--reference", fom, "--out", rom]) == 0
    from nlbal.simulate import Trajectory, relative_output_error

    assert relative_output_error(Trajectory.from_csv(fom), Trajectory.from_csv(rom))[0] <= 1e-6


def test_zero_input_gives_zero_output(tmp_path, small_system):
    out = tmp_path / "z.csv"
    assert main(["simulate", "--system", small_system, "--t1", "1", "--input", "zero", "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.all(data[:, 1:] == 0)


def test_simulate_needs_one_model(tmp_path, small_system):
    assert main(["simulate", "--out", str(tmp_path / "x.csv")]) == 2


def test_table_usage_errors(tmp_path):
    cfg = write(tmp_path / "c.json", {"degrees": []})
    assert main(["table", "--config", cfg, "--out", str(tmp_path / "t.csv")]) == 2
    cfg = write(tmp_path / "c.json", {"bogus": 1})
    assert main(["table", "--config", cfg, "--out", str(tmp_path / "t.csv")]) == 2


def test_table_k1_column_only(tmp_path, caplog):
    cfg = write(tmp_path / "c.json", {"n": 6, "orders": [1, 2], "degrees": [1, 3], "t1": 1.0, "dt": 0.01})
    out = tmp_path / "t.csv"
    assert main(["table", "--config", cfg, "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["r", "output", "k=1"]
    assert [row[0] for row in rows[1:]] == ["1", "2"]
    assert "k = 1 column only" in caplog.text


def test_table_needs_higher_degree_energy(tmp_path):
    e = tmp_path / "e.json"
    save_energy(EnergyCoeffs.quadratic_only(np.eye(6)), e, EnergyCoeffs.quadratic_only(np.eye(6)))
    cfg = write(tmp_path / "c.json", {"n": 6, "orders": [1], "degrees": [1, 3], "energy": str(e), "t1": 0.1,
                                      "dt": 0.01})
    assert main(["table", "--config", cfg, "--out", str(tmp_path / "t.csv")]) == 2


def test_burgers_export(tmp_path):
    out = tmp_path / "b.json"
    assert main(["burgers", "--n", "5", "--p", "2", "--out", str(out)]) == 0
    sys = PolySystem.from_json(json.loads(out.read_text()))
    assert (sys.n, sys.m, sys.p) == (5, 4, 2)
    assert main(["example2d", "--out", str(tmp_path / "x.json")]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["runs"]) == {"b.json", "x.json"}
