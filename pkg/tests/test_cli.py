import json

import numpy as np
import pytest

from cassiclust import io
from cassiclust.cli import main


def test_module_subcommands_end_to_end(tmp_path):
    c, t = tmp_path / "c.scube", tmp_path / "t.csv"
    assert main(["synth", "--rows", "8", "--cols", "8", "--bands", "16", "--k", "2",
                 "--out", str(c), "--labels", str(t)]) == 0
    p = tmp_path / "p.csv"
    assert main(["codegen", "--mode", "gp", "--snapshots", "6", "--bands", "16",
                 "--bandwidth", "4", "--seed", "3", "--out", str(p)]) == 0
    assert io.load_pattern(p).snapshots == 6
    m = tmp_path / "m.smeas"
    assert main(["sense", "--cube", str(c), "--pattern", str(p), "--sigma", "0.01",
                 "--out", str(m)]) == 0
    out = tmp_path / "cl"
    assert main(["cluster", "--input", str(m), "--k", "2", "--out-dir", str(out)]) == 0
    solver = json.loads((out / "solver.json").read_text())
    assert solver["converged"] and solver["config"]["k"] == 2
    met = tmp_path / "metrics.json"
    assert main(["eval", "--pred", str(out / "labels.csv"), "--truth", str(t),
                 "--out", str(met), "--map", str(tmp_path / "map")]) == 0
    assert set(json.loads(met.read_text())) >= {"oa", "aa", "kappa"}
    assert (tmp_path / "map.ppm").exists()


def test_cluster_accepts_full_cube(tmp_path):
    c = tmp_path / "c.scube"
    main(["synth", "--rows", "6", "--cols", "6", "--bands", "8", "--k", "2", "--out", str(c)])
    assert main(["cluster", "--input", str(c), "--k", "2", "--alpha", "0",
                 "--out-dir", str(tmp_path / "o")]) == 0
    assert io.load_labels(tmp_path / "o" / "labels.csv").rows == 6


def test_pipeline_and_compare(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["pipeline", "--rows", "10", "--cols", "10", "--bands", "16", "--synth-k", "2",
            "--snapshots", "6", "--bandwidth", "4"]
    assert main(base + ["--out-dir", str(a)]) == 0
    assert main(["--serial", "pipeline", "--from-run", str(a / "run.json"),
                 "--out-dir", str(b)]) == 0
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    capsys.readouterr()
    assert main(["compare", str(a), str(b)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["delta"] == {"oa": 0.0, "aa": 0.0, "kappa": 0.0}



def test_config_file_and_flags_echoed(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 0.0, "tol": 1e-3, "code_mode": "random",
                               "config": {"kmeans_restarts": 5}}))
    out = tmp_path / "r"
    rc = main(["pipeline", "--rows", "8", "--cols", "8", "--bands", "12", "--synth-k", "2",
               "--config", str(cfg), "--tol", "5e-4", "--out-dir", str(out)])
    assert rc == 0
    run = json.loads((out / "run.json").read_text())["spec"]
    assert run["code_mode"] == "random"          # from the file
    assert run["config"]["alpha"] == 0.0         # from the file
    assert run["config"]["tol"] == 5e-4          # flag beats file
    assert run["config"]["kmeans_restarts"] == 5
    assert run["config"]["max_iter"] == 500      # default


def test_exit_codes(tmp_path, capsys):
    # missing file -> I/O
    assert main(["sense", "--cube", str(tmp_path / "no.scube"), "--pattern",
                 str(tmp_path / "no.csv"), "--out", str(tmp_path / "m")]) == 4
    # malformed file -> validation
    bad = tmp_path / "bad.scube"
    bad.write_bytes(b"JUNKJUNKJUNK")
    assert main(["cluster", "--input", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    # class-count mismatch inside the pipeline -> validation
    assert main(["pipeline", "--rows", "6", "--cols", "6", "--bands", "8", "--synth-k", "2",
                 "--k", "3", "--out-dir", str(tmp_path / "p")]) == 2
    # max_iter reached -> flagged, outputs written
    c = tmp_path / "c.scube"
    main(["synth", "--rows", "6", "--cols", "6", "--bands", "8", "--k", "2", "--sigma", "0.3",
          "--out", str(c)])
    assert main(["cluster", "--input", str(c), "--k", "2", "--alpha", "0", "--max-iter", "2",
                 "--out-dir", str(tmp_path / "nc")]) == 3
    assert (tmp_path / "nc" / "labels.csv").exists()
    err = capsys.readouterr().err
    assert "stage 'load'" in err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["codegen", "--mode", "nope"])
    assert e.value.code == 2


def test_eval_class_subset(tmp_path, capsys):
    truth = np.array([[2, 2, 7, 7], [2, 2, 7, 7], [5, 5, 0, 0]])
    pred = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [1, 2, 1, 2]])
    io.save_labels(io.LabelMap(3, 4, truth), tmp_path / "t.csv")
    io.save_labels(io.LabelMap(3, 4, pred), tmp_path / "p.csv")
    assert main(["eval", "--pred", str(tmp_path / "p.csv"), "--truth", str(tmp_path / "t.csv"),
                 "--classes", "2,7"]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["oa"] == 100.0 and sum(map(sum, m["confusion"])) == 8
