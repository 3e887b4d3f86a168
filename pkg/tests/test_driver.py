"""Script parsing, style registry, and end-to-end driver runs."""

import numpy as np
import pytest

from mdkk.driver.bench import BenchResult, bench_saturation
from mdkk.driver.cli import main
from mdkk.driver.registry import RegistryError, StyleRegistry, resolve_style
from mdkk.driver.script import Command, ParseError, parse_script, serialize
from mdkk.driver.simulation import (
    LJStyle,
    RunConfig,
    RunError,
    Simulation,
    SnapStyle,
    default_registry,
    lattice_positions,
    run_script,
    seeded_velocities,
)

SILENT = lambda *_: None  # noqa: E731

MINI = """\
units lj
boundary p p p
lattice fcc 0.8
create_box 3 3 3
create_atoms
mass 1.0
velocity 0.1 1234
pair_style lj/cut 1.5
pair_coeff 1.0 1.0
timestep 0.004
thermo 10
run 20
"""


# ----------------------------------------------------------------- parser
def test_parse_basic_tokenization():
    text = (
        "# leading comment\n"
        "units lj\n"
        "\n"
        "lattice fcc 0.85   # trailing comment\n"
        "create_box 2 2 2\n")
    script = parse_script(text)
    assert len(script) == 3
    names = [c.name for c in script]
    assert names == ["units", "lattice", "create_box"]
    lat = script.commands[1]
    assert lat.args == ["fcc", "0.85"]
    assert lat.line_no == 4
    assert script.token_stream()[2] == ["create_box", "2", "2", "2"]


def test_parse_continuation_spans_blank_and_comment_lines():
    text = (
        "torsion on 1.4 1.4 &\n"
        "  # spacer comment inside the logical line\n"
        "\n"
        "  4.0 0.3 0.1 &\n"
        "  0.02 0.02\n"
        "run 0\n")
    script = parse_script(text)
    assert len(script) == 2
    cmd = script.commands[0]
    assert cmd.name == "torsion"
    assert cmd.args == ["on", "1.4", "1.4", "4.0", "0.3", "0.1", "0.02", "0.02"]
    assert cmd.line_no == 1          # logical line starts where tokens start
    assert script.commands[1].line_no == 6


def test_parse_continuation_at_end_of_file():
    script = parse_script("run &\n  5")
    assert script.token_stream() == [["run", "5"]]


def test_parse_unknown_command_suggests_near_match():
    with pytest.raises(ParseError) as exc:
        parse_script("units lj\npair_stylee lj/cut 1.5\n")
    assert exc.value.line_no == 2
    assert "did you mean" in str(exc.value)
    assert "pair_style" in str(exc.value)


def test_parse_arity_and_number_validation():
    with pytest.raises(ParseError, match="expects 2"):
        parse_script("velocity 0.1\n")
    with pytest.raises(ParseError, match="malformed number"):
        parse_script("timestep fast\n")
    with pytest.raises(ParseError, match="malformed integer"):
        parse_script("run 1.5\n")
    with pytest.raises(ParseError, match="expected one of"):
        parse_script("lattice bcc 0.8\n")
    with pytest.raises(ParseError, match="expected one of"):
        parse_script("boundary p p f\n")


def test_parse_onoff_commands():
    assert parse_script("qeq off\n").commands[0].args == ["off"]
    with pytest.raises(ParseError, match="off takes no parameters"):
        parse_script("qeq off 1.0\n")
    with pytest.raises(ParseError, match="expected 'on' or 'off'"):
        parse_script("torsion maybe\n")
    with pytest.raises(ParseError, match="expects 4 parameter"):
        parse_script("qeq on 0.8 15.0 -0.3\n")
    with pytest.raises(ParseError, match="expects 7 parameter"):
        parse_script("torsion on 1.0 1.0 4.0 0.3 0.1 0.02\n")


def test_parse_pair_style_shapes():
    ok = parse_script("pair_style snap 1.6 scripts/snap_jmax1.coeff\n")
    assert ok.commands[0].args[0] == "snap"
    with pytest.raises(ParseError, match="cutoff coeff_file"):
        parse_script("pair_style snap 1.6\n")
    with pytest.raises(ParseError, match="expects: cutoff"):
        parse_script("pair_style lj/cut 1.5 extra\n")
    with pytest.raises(ParseError, match="style name"):
        parse_script("pair_style\n")


def test_parse_bench_command():
    cmd = parse_script("bench lj 10,20,40 2 out.csv\n").commands[0]
    assert cmd.args == ["lj", "10,20,40", "2", "out.csv"]
    with pytest.raises(ParseError, match="bench sizes"):
        parse_script("bench lj 10,x 2 out.csv\n")
    with pytest.raises(ParseError, match="bench expects"):
        parse_script("bench lj 10\n")


def test_serialize_round_trip():
    script = parse_script(MINI)
    text = serialize(script)
    again = parse_script(text)
    assert again.token_stream() == script.token_stream()
    assert serialize(again) == text


@pytest.mark.parametrize("path", ["scripts/melt.in", "scripts/snap.in",
                                  "scripts/qeq_torsion.in"])
def test_bundled_scripts_round_trip(path):
    with open(path) as fh:
        text = fh.read()
    script = parse_script(text)
    assert len(script) > 0
    again = parse_script(serialize(script))
    assert again.token_stream() == script.token_stream()
    assert [c == d for c, d in zip(again, script)]


# ---------------------------------------------------------------- registry
def test_registry_resolution_order():
    reg = StyleRegistry()
    reg.register("alpha", "base")
    reg.register("alpha/opt", "fast")
    reg.register("beta", "beta-base")
    # exact name, no suffix
    assert reg.resolve("alpha") == "base"
    # suffix prefers the suffixed variant
    assert reg.resolve("alpha", "opt") == "fast"
    # missing variant falls back to the base registration
    assert reg.resolve("beta", "opt") == "beta-base"
    # explicitly suffixed names resolve to themselves even with a suffix active
    assert reg.resolve("alpha/opt", "opt") == "fast"
    assert resolve_style(reg, "alpha", "opt") == "fast"
    assert "alpha" in reg and "gamma" not in reg
    assert reg.names() == ["alpha", "alpha/opt", "beta"]


def test_registry_errors():
    reg = StyleRegistry()
    reg.register("alpha", object())
    with pytest.raises(RegistryError, match="already registered"):
        reg.register("alpha", object())
    with pytest.raises(RegistryError) as exc:
        reg.resolve("alpah")
    assert "unknown style" in str(exc.value)
    assert "alpha" in str(exc.value)  # near-match hint


def test_default_registry_styles():
    reg = default_registry()
    assert set(reg.names()) >= {"lj/cut", "lj/cut/opt", "snap", "snap/opt"}
    base = reg.resolve("lj/cut")(["1.5"])
    assert isinstance(base, LJStyle)
    assert base.name == "lj/cut" and base.default_mode == "atom"
    fast = reg.resolve("lj/cut", "opt")(["1.5"])
    assert fast.name == "lj/cut/opt" and fast.default_mode == "neighbor"
    snap = reg.resolve("snap", "nope")(["1.6", "scripts/snap_jmax1.coeff"])
    assert isinstance(snap, SnapStyle) and snap.name == "snap"


# -------------------------------------------------------------- primitives
def test_lattice_positions_fcc_and_sc():
    pos, box = lattice_positions("fcc", 0.5, (1, 1, 1))
    a = (4.0 / 0.5) ** (1.0 / 3.0)
    assert pos.shape == (4, 3)
    assert np.allclose(pos, np.array([[0, 0, 0], [0.5, 0.5, 0],
                                      [0.5, 0, 0.5], [0, 0.5, 0.5]]) * a)
    assert np.allclose(box.lengths, a)
    pos2, _ = lattice_positions("fcc", 0.5, (2, 1, 1))
    assert pos2.shape == (8, 3)
    assert np.allclose(pos2[4], [a, 0, 0])  # second cell shifts along x
    pos3, box3 = lattice_positions("sc", 0.125, (3, 2, 1))
    assert pos3.shape == (6, 3)
    assert np.allclose(box3.lengths, [6.0, 4.0, 2.0])
    # density comes out exactly as requested
    assert len(pos3) / box3.volume == pytest.approx(0.125, rel=1e-12)
    with pytest.raises(RunError):
        lattice_positions("bcc", 0.5, (1, 1, 1))
    with pytest.raises(RunError):
        lattice_positions("sc", -0.1, (1, 1, 1))
    with pytest.raises(RunError):
        lattice_positions("sc", 0.5, (0, 1, 1))


def test_seeded_velocities_momentum_and_temperature():
    v = seeded_velocities(50, 0.75, 2.0, seed=99)
    assert np.abs(v.mean(axis=0)).max() < 1e-13
    t = 2.0 * float(np.sum(v * v)) / (3.0 * 50)
    assert t == pytest.approx(0.75, rel=1e-12)
    assert np.array_equal(v, seeded_velocities(50, 0.75, 2.0, seed=99))
    assert not np.allclose(v, seeded_velocities(50, 0.75, 2.0, seed=100))
    assert np.array_equal(seeded_velocities(10, 0.0, 1.0, 1), np.zeros((10, 3)))
    with pytest.raises(RunError):
        seeded_velocities(10, -0.5, 1.0, 1)


# -------------------------------------------------------------- simulation
def test_minimal_run_logs_and_conserves_roughly():
    sim = run_script(MINI, RunConfig(), log=SILENT)
    result = sim.results[-1]
    assert [r[0] for r in result.rows] == [0, 10, 20]
    assert set(result.snapshots) == {0, 10, 20}
    e0 = result.rows[0][3]
    e_end = result.rows[-1][3]
    assert abs(e_end - e0) / abs(e0) < 1e-3
    for line in result.lines:
        assert len(line.split()) == 5
    # snapshots carry every atom, gathered across ranks
    assert result.snapshots[0].shape == (108, 3)


def test_run_zero_steps_logs_initial_state():
    sim = run_script(MINI.replace("run 20", "run 0"), log=SILENT)
    rows = sim.results[-1].rows
    assert len(rows) == 1 and rows[0][0] == 0


def test_rank_count_does_not_change_physics():
    base = run_script(MINI, RunConfig(n_ranks=1), log=SILENT).results[-1]
    for n_ranks in (2, 4):
        other = run_script(MINI, RunConfig(n_ranks=n_ranks), log=SILENT).results[-1]
        for (s0, *r0), (s1, *r1) in zip(base.rows, other.rows):
            assert s0 == s1
            assert np.allclose(r0, r1, rtol=1e-12, atol=1e-12)
        for step, snap in base.snapshots.items():
            assert np.allclose(other.snapshots[step], snap, rtol=1e-12, atol=1e-12)


def test_strategy_and_mode_agree_through_driver():
    base = run_script(MINI, RunConfig(), log=SILENT).results[-1]
    variants = [
        RunConfig(strategy="duplicate", mode="neighbor", workers=3),
        RunConfig(strategy="atomic", mode="neighbor", workers=2),
        RunConfig(list_style="full", newton=False),
    ]
    for config in variants:
        other = run_script(MINI, config, log=SILENT).results[-1]
        for (s0, *r0), (s1, *r1) in zip(base.rows, other.rows):
            assert s0 == s1
            assert np.allclose(r0, r1, rtol=1e-12, atol=1e-12)


def test_same_config_is_exactly_reproducible():
    a = run_script(MINI, RunConfig(n_ranks=2), log=SILENT).results[-1]
    b = run_script(MINI, RunConfig(n_ranks=2), log=SILENT).results[-1]
    assert a.lines == b.lines


def test_seed_override_changes_velocities():
    sim_a = run_script(MINI, RunConfig(), log=SILENT)
    sim_b = run_script(MINI, RunConfig(rng_seed=777), log=SILENT)
    assert not np.allclose(sim_a._velocities, sim_b._velocities)
    # step-0 energies agree regardless (same positions, same temperature)
    assert sim_a.results[-1].rows[0][1] == pytest.approx(
        sim_b.results[-1].rows[0][1], rel=1e-12)


def test_suffix_switches_style_variant():
    text = MINI.replace("pair_style lj/cut 1.5",
                        "suffix opt\npair_style lj/cut 1.5")
    sim = run_script(text, log=SILENT)
    assert sim.style.name == "lj/cut/opt"
    off = MINI.replace("pair_style lj/cut 1.5",
                       "suffix opt\nsuffix off\npair_style lj/cut 1.5")
    assert run_script(off, log=SILENT).style.name == "lj/cut"


def test_bundled_snap_script_runs_with_suffix():
    with open("scripts/snap.in") as fh:
        text = fh.read()
    sim = run_script(text, log=SILENT)
    assert sim.style.name == "snap/opt"
    result = sim.results[-1]
    assert [r[0] for r in result.rows] == [0, 10, 20]
    assert all(np.isfinite(r[3]) for r in result.rows)


def test_bundled_qeq_torsion_script_runs():
    with open("scripts/qeq_torsion.in") as fh:
        text = fh.read()
    sim = run_script(text, log=SILENT)
    result = sim.results[-1]
    assert [r[0] for r in result.rows] == [0, 20, 40]
    assert len(result.qeq_log) == len(result.rows)
    for step, it_s, it_t, sum_q, energy in result.qeq_log:
        assert it_s >= 1 and it_t >= 1
        assert abs(sum_q) < 1e-8
        assert np.isfinite(energy)
    assert sim.torsion is not None


def test_run_command_ordering_errors():
    with pytest.raises(RunError, match="lattice must be set"):
        run_script("units lj\ncreate_box 2 2 2\n", log=SILENT)
    with pytest.raises(RunError, match="create_atoms must run"):
        run_script("velocity 0.1 1\n", log=SILENT)
    with pytest.raises(RunError, match="pair_style must be set"):
        run_script("pair_coeff 1.0 1.0\n", log=SILENT)
    with pytest.raises(RunError, match="pair_style must be set"):
        run_script(MINI.replace("pair_style lj/cut 1.5\n", "")
                       .replace("pair_coeff 1.0 1.0\n", ""), log=SILENT)
    with pytest.raises(ParseError, match="expected one of"):
        parse_script("units si\n")  # rejected before execution even starts


def test_more_run_errors():
    with pytest.raises(RunError, match="timestep must be positive"):
        run_script("timestep -0.1\n", log=SILENT)
    with pytest.raises(RegistryError, match="unknown style"):
        run_script("pair_style bogus 1.0\n", log=SILENT)
    snap_coeff = MINI.replace("pair_style lj/cut 1.5",
                              "pair_style snap 1.6 scripts/snap_jmax1.coeff")
    with pytest.raises(RunError, match="pair_coeff does not apply"):
        run_script(snap_coeff, log=SILENT)
    torsion_text = MINI.replace(
        "timestep 0.004", "torsion on 1.2 1.2 4.0 0.3 0.05 0.1 0.1\ntimestep 0.004")
    with pytest.raises(RunError, match="single rank"):
        run_script(torsion_text, RunConfig(n_ranks=2), log=SILENT)
    too_long = torsion_text.replace("torsion on 1.2", "torsion on 1.9")
    with pytest.raises(RunError, match="must not exceed the pair cutoff"):
        run_script(too_long, log=SILENT)


def test_list_style_conflict_is_rejected():
    text = MINI.replace("pair_style lj/cut 1.5\npair_coeff 1.0 1.0",
                        "pair_style snap 1.6 scripts/snap_jmax1.coeff")
    with pytest.raises(RunError, match="requires full lists"):
        run_script(text, RunConfig(list_style="half"), log=SILENT)


# --------------------------------------------------------------------- cli
def test_cli_run_success(tmp_path, capsys):
    path = tmp_path / "mini.in"
    path.write_text(MINI.replace("run 20", "run 4").replace("thermo 10", "thermo 2"))
    assert main(["run", str(path)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 3  # steps 0, 2, 4
    assert out[0].startswith("0 ")


def test_cli_run_with_flags(tmp_path, capsys):
    path = tmp_path / "mini.in"
    path.write_text(MINI.replace("run 20", "run 2"))
    code = main(["run", str(path), "--ranks", "2", "--strategy", "atomic",
                 "--mode", "neighbor", "--skin", "0.25", "--seed", "5"])
    assert code == 0
    assert capsys.readouterr().out.strip()


def test_cli_missing_script(capsys):
    assert main(["run", "/no/such/script.in"]) == 1
    assert capsys.readouterr().err.startswith("mdkk: ")


def test_cli_reports_parse_errors(tmp_path, capsys):
    path = tmp_path / "bad.in"
    path.write_text("units lj\nbogus_command 1\n")
    assert main(["run", str(path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("mdkk: line 2")


def test_cli_reports_run_errors(tmp_path, capsys):
    path = tmp_path / "bad.in"
    path.write_text("create_box 2 2 2\n")
    assert main(["run", str(path)]) == 1
    assert "lattice must be set" in capsys.readouterr().err


def test_cli_bench_writes_csv(tmp_path, capsys):
    csv_path = tmp_path / "rates.csv"
    code = main(["bench", "lj", "--sizes", "64,125", "--reps", "1",
                 "--out", str(csv_path)])
    assert code == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "n_atoms,atom_steps_per_second"
    assert len(out) == 3
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "n_atoms,atom_steps_per_second"
    sizes = [int(l.split(",")[0]) for l in lines[1:]]
    rates = [float(l.split(",")[1]) for l in lines[1:]]
    assert sizes == [64, 125]
    assert all(r > 0 for r in rates)
    # a size whose cube cannot host the halo is refused cleanly
    assert main(["bench", "lj", "--sizes", "8"]) == 1
    assert capsys.readouterr().err.startswith("mdkk: bench size 8 too small")


# ------------------------------------------------------------------- bench
def test_bench_saturation_rows_and_validation(tmp_path):
    res = bench_saturation("lj", [64, 125], reps=1, target_time=0.02,
                           csv_path=str(tmp_path / "b.csv"))
    assert isinstance(res, BenchResult)
    assert list(res.sizes) == [64, 125]
    assert np.all(res.rates > 0)
    assert (tmp_path / "b.csv").exists()
    with pytest.raises(RunError, match="unknown bench potential"):
        bench_saturation("bogus", [64])
    with pytest.raises(RunError, match="reps"):
        bench_saturation("lj", [64], reps=0)
    with pytest.raises(RunError, match="too small"):
        bench_saturation("lj", [8], reps=1)


def test_bench_script_command(tmp_path):
    csv_path = tmp_path / "script_bench.csv"
    sim = run_script(f"bench lj 64,125 1 {csv_path}\n", log=SILENT)
    assert len(sim.bench_rows) == 1
    assert csv_path.exists()
    assert [n for n, _ in sim.bench_rows[0].rows] == [64, 125]
