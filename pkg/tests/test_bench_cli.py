import io
import subprocess
import sys

import pytest

from kdforest.bench import (
    CSV_HEADER,
    BenchRecord,
    BenchSpec,
    Distribution,
    Scenario,
    bench_build,
    bench_forest,
    bench_knn,
    emit_csv,
    generate_dataset,
    read_csv,
    strip_wall,
)
from kdforest.cli import main


def test_dataset_deterministic():
    assert generate_dataset(1, 3, 2) == generate_dataset(1, 3, 2)
    assert generate_dataset(1, 3, 2) != generate_dataset(2, 3, 2)


def test_dataset_ranges():
    pts = generate_dataset(4, 500, 3)
    assert all(0.0 <= c < 1.0 for p in pts for c in p.coords)
    assert [p.seq for p in pts] == list(range(500))
    drift = generate_dataset(4, 500, 3, Distribution.DRIFT)
    assert sum(drift[-1].coords) > sum(drift[0].coords) - 3
    with pytest.raises(ValueError):
        generate_dataset(4, 0, 3)


def test_orthant_points_sit_in_one_orthant():
    pts = generate_dataset(9, 64, 2, Distribution.ORTHANT)
    order = sorted(pts, key=lambda p: p.coords[0])
    assert order == sorted(pts, key=lambda p: p.coords[1])


def test_spec_validation():
    with pytest.raises(ValueError):
        BenchSpec(Scenario.BUILD, [])
    with pytest.raises(ValueError):
        BenchSpec(Scenario.BUILD, [200, 100])


def test_emit_one_record(tmp_path):
    path = tmp_path / "one.csv"
    emit_csv([BenchRecord("build", 10, 2.0, "node-split", "none", 0, 123, 0, 3, 7, 10)], path)
    lines = path.read_text().splitlines()
    assert lines == [CSV_HEADER, "build,10,2,node-split,none,0,123,0,3,7,10"]
    assert path.read_text().endswith("\n")


def test_emit_empty_rejected():
    with pytest.raises(ValueError):
        emit_csv([], io.StringIO())


def test_csv_round_trip(tmp_path):
    spec = BenchSpec(Scenario.KNN, [100, 200], k=5, repetitions=4, rebuild="both")
    records = bench_knn(spec)
    path = tmp_path / "knn.csv"
    emit_csv(records, path)
    assert read_csv(path) == records


def test_build_rows_and_rebuild_law():
    spec = BenchSpec(Scenario.BUILD, [1000, 4096], threshold=2.0, repetitions=2)
    rows = bench_build(spec)
    means = [r for r in rows if r.rep == "mean"]
    assert [r.n for r in means] == [1000, 4096]
    assert means[1].rebuild_count == 11
    assert sum(r.rep == "median" for r in rows) == 2


def test_build_twelve_size_sweep():
    spec = BenchSpec(Scenario.BUILD, list(range(1000, 12001, 1000)), threshold=3.0, repetitions=1)
    means = [r for r in bench_build(spec) if r.rep == "mean"]
    assert len(means) == 12


def test_knn_norebuild_small_tree():
    spec = BenchSpec(Scenario.KNN, [125], k=30, repetitions=5, rebuild="off")
    rows = [r for r in bench_knn(spec) if isinstance(r.rep, int)]
    assert all(r.scenario == "knn-norebuild" and r.rebuild_count == 0 for r in rows)
    assert all(r.node_visits >= 30 for r in rows)


def test_forest_bench_rows():
    spec = BenchSpec(Scenario.FOREST, [4096], repetitions=10)
    rows = {(r.scenario, r.mode): r for r in bench_forest(spec)}
    plan = rows[("forest-plan", "none")]
    assert (plan.rebuild_count, plan.peak_pool_used) == (10, 410)
    assert rows[("forest-maxwork", "none")].rebuild_node_work <= 410
    assert rows[("single-maxwork", "none")].rebuild_node_work >= 2048
    assert rows[("forest", "none")].rebuild_node_work < rows[("single", "exact")].rebuild_node_work


def test_strip_wall():
    text = CSV_HEADER + "\nbuild,10,2,node-split,none,0,999,0,3,7,10\n"
    assert strip_wall(text).splitlines()[1] == "build,10,2,node-split,none,0,,0,3,7,10"


# -- cli ---------------------------------------------------------------------

def test_cli_empty_sizes_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--sizes", ""])
    assert exc.value.code == 2
    assert "sizes" in capsys.readouterr().err


def test_cli_rejects_forest_mode_for_knn():
    with pytest.raises(SystemExit):
        main(["knn-bench", "--mode", "single-tree", "--sizes", "100"])


def test_cli_knn_bench_deterministic(tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        assert main(["knn-bench", "--sizes", "200,400", "--reps", "5", "--k", "4",
                     "--dist", "drift", "--seed", "9", "--out", str(path)]) == 0
        outs.append(strip_wall(path.read_text()))
    assert outs[0] == outs[1]


def test_cli_stdout(capsys):
    assert main(["build-bench", "--sizes", "50", "--reps", "1"]) == 0
    out = capsys.readouterr().out
    assert out.startswith(CSV_HEADER + "\n")


def test_verify_small_passes(tmp_path, capsys):
    path = tmp_path / "verify.csv"
    assert main(["verify", "--sizes", "300", "--reps", "20", "--dims", "3", "--k", "5",
                 "--out", str(path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert read_csv(path)


def test_verify_path_descent_reports_witness(capsys):
    assert main(["verify", "--sizes", "300", "--reps", "20", "--dims", "2", "--k", "5",
                 "--mode", "path-descent"]) == 1
    out = capsys.readouterr().out
    fail = next(line for line in out.splitlines() if line.startswith("FAIL"))
    assert "seed=42" in fail and "query#" in fail and "expected=" in fail and "actual=" in fail


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "kdforest", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "forest-bench" in res.stdout
