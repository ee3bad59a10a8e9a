import csv
import json
import re
import shutil
import subprocess
import sys

import pytest

from justrl.checkpoint import save_policy
from justrl.cli import main
from justrl.policy import ToyPolicy
from justrl.tasks import generate, save_jsonl

SMOKE_CONFIG = """\
# ten quick steps
train_batch_size = 4
mini_batch_size = 2
rollout_n = 4
max_response_len = 12
task_count = 20
warm_start_steps = 30
total_steps = 10
checkpoint_every = 4
"""


@pytest.fixture
def smoke_config(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text(SMOKE_CONFIG)
    return path


def test_train_smoke_and_reproducible(tmp_path, smoke_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(smoke_config), "--out", str(a)]) == 0
    assert main(["train", "--config", str(smoke_config), "--out", str(b)]) == 0
    rows = list(csv.reader((a / "telemetry.csv").open()))
    assert len(rows) == 11
    assert (a / "telemetry.csv").read_bytes() == (b / "telemetry.csv").read_bytes()
    ckpts = sorted(p.name for p in (a / "checkpoints").glob("step_*.bin"))
    assert ckpts == ["step_000004.bin", "step_000008.bin", "step_000010.bin"]
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["config"]["total_steps"] == 10
    for rel in manifest["artifacts"]:
        assert (a / rel).exists(), rel
    status = json.loads((a / "status.json").read_text())
    assert status["final_step"] == 10

    # resume from step 8 reproduces the last two telemetry rows
    c = tmp_path / "c"
    (c / "checkpoints").mkdir(parents=True)
    shutil.copy(a / "checkpoints" / "step_000008.bin", c / "checkpoints")
    shutil.copy(a / "checkpoints" / "step_000008.json", c / "checkpoints")
    lines = (a / "telemetry.csv").read_text().splitlines(keepends=True)
    (c / "telemetry.csv").write_text("".join(lines[:9]))
    argv = ["train", "--config", str(smoke_config), "--out", str(c), "--resume", str(c / "checkpoints" / "step_000008.bin")]
    assert main(argv) == 0
    assert (c / "telemetry.csv").read_bytes() == (a / "telemetry.csv").read_bytes()


def test_train_usage_errors(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path / "o")]) == 2
    assert "none.cfg" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text("total_steps = 10\nlearning_rate = fast\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bad.cfg:2:" in capsys.readouterr().err
    zero = tmp_path / "zero.cfg"
    zero.write_text("\n\ntotal_steps = 0\n")
    assert main(["train", "--config", str(zero), "--out", str(tmp_path / "o")]) == 2
    assert "zero.cfg:3:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_train_corrupt_resume_exits_1(tmp_path, smoke_config):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    assert main(["train", "--config", str(smoke_config), "--out", str(tmp_path / "o"), "--resume", str(bad)]) == 1


@pytest.fixture
def bench(tmp_path):
    path = tmp_path / "aime24.jsonl"
    save_jsonl(generate("add", 1, 6, seed=0), path)
    return path


def test_eval_oracle_scores_100_and_files_agree(tmp_path, bench, capsys):
    out = tmp_path / "ev"
    assert main(["eval", "--oracle", "--benchmark", str(bench), "--out", str(out)]) == 0
    report = json.loads((out / "eval.json").read_text())
    assert report["benchmarks"]["aime24"]["pass_at_1"] == 100.0
    assert report["benchmarks"]["aime24"]["n_samples"] == 32  # default N for non-listed benchmarks
    assert "100.00" in capsys.readouterr().out


def test_eval_checkpoint_json_matches_csv(tmp_path, bench):
    ckpt = save_policy(ToyPolicy.random(seed=1, scale=1.0), tmp_path / "p.bin")
    out = tmp_path / "ev"
    argv = ["eval", "--checkpoint", str(ckpt), "--benchmark", str(bench), "--out", str(out), "--n-samples", "3"]
    assert main(argv) == 0
    report = json.loads((out / "eval.json").read_text())
    rows = list(csv.DictReader((out / "eval_problems.csv").open()))
    recount = 100 * sum(int(r["n_correct"]) / int(r["n_samples"]) for r in rows) / len(rows)
    assert report["benchmarks"]["aime24"]["pass_at_1"] == pytest.approx(recount, abs=1e-9)
    assert all(r["n_samples"] == "3" for r in rows)


def test_eval_empty_benchmark(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    ckpt = save_policy(ToyPolicy.zeros(), tmp_path / "p.bin")
    assert main(["eval", "--checkpoint", str(ckpt), "--benchmark", str(empty), "--out", str(tmp_path / "ev")]) == 0
    report = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert report == {"macro_average": None, "benchmarks": {}}


def test_eval_failures(tmp_path, bench, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"JUSTRLPL" + b"\0" * 4)
    assert main(["eval", "--checkpoint", str(bad), "--benchmark", str(bench), "--out", str(tmp_path / "e")]) == 1
    assert "corrupt" in capsys.readouterr().err
    assert main(["eval", "--benchmark", str(bench), "--out", str(tmp_path / "e")]) == 2
    ckpt = save_policy(ToyPolicy.zeros(), tmp_path / "p.bin")
    missing = tmp_path / "missing.jsonl"
    assert main(["eval", "--checkpoint", str(ckpt), "--benchmark", str(missing), "--out", str(tmp_path / "e")]) == 1


def test_verify_command(tmp_path, capsys):
    inp = tmp_path / "in.jsonl"
    inp.write_text(
        "\n".join(
            [
                json.dumps({"id": 1, "output": "\\boxed{\\frac{1}{2}}", "gold": "0.5"}),
                json.dumps({"id": 2, "output": "\\boxed{x=5}", "gold": "5"}),
                "{oops",
                json.dumps({"id": 4, "output": 7, "gold": "7"}),
            ]
        )
        + "\n"
    )
    assert main(["verify", "--input", str(inp)]) == 0
    out = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [o["status"] for o in out] == ["correct", "incorrect", "extraction_failed", "extraction_failed"]
    assert "line 3" in out[2]["error"] and out[3]["id"] == 4
    dest = tmp_path / "out.jsonl"
    assert main(["verify", "--input", str(inp), "--out", str(dest), "--profile", "lenient"]) == 0
    assert json.loads(dest.read_text().splitlines()[1])["status"] == "correct"
    assert main(["verify", "--input", str(tmp_path / "nope")]) == 1


def test_budget_command(capsys):
    assert main(["budget", "--steps", "4380", "--batch-size", "256", "--rollout-n", "8", "--max-context", "16k"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["k_tokens_2sf"] == 1.4e8
    argv = ["budget", "--steps", "2000", "--batch-size", "128", "--rollout-n", "16", "--max-context", "32000", "--dynamic-sampling"]
    assert main(argv) == 0
    assert json.loads(capsys.readouterr().out)["k_tokens_2sf"] == 2.6e8
    assert main(["budget", "--table"]) == 0
    table = capsys.readouterr().out
    assert "JustRL-Nemotron" in table and "QuestA" in table
    assert main(["budget", "--steps", "1"]) == 2
    assert main(["budget", "--steps", "1", "--batch-size", "1", "--rollout-n", "1", "--max-context", "lots"]) == 2


def write_telemetry(path, rows):
    lines = ["step,mean_reward,mean_entropy,mean_response_len,clip_fraction,wall_ms"]
    lines += [f"{s},{r},{e},{n},0.0,0" for s, r, e, n in rows]
    path.write_text("\n".join(lines) + "\n")


def panel_attrs(svg, column):
    m = re.search(rf'<g class="panel" data-column="{column}" ([^>]*)>', svg)
    return {k: float(v) for k, v in re.findall(r'data-(\w+)="([^"]+)"', m.group(1))}


def test_plot_command(tmp_path):
    tel = tmp_path / "t.csv"
    rows = [(1, -0.8, 1.2, 5.0), (2, -0.5, 1.0, 6.0), (3, 0.1, 0.7, 4.5)]
    write_telemetry(tel, rows)
    out = tmp_path / "fig.svg"
    assert main(["plot", "--telemetry", str(tel), "--out", str(out)]) == 0
    svg = out.read_text()
    assert svg.count('class="panel"') == 3
    for column, idx in [("mean_reward", 1), ("mean_entropy", 2), ("mean_response_len", 3)]:
        a = panel_attrs(svg, column)
        values = [r[idx] for r in rows]
        assert a["ymin"] <= min(values) and a["ymax"] >= max(values)
        assert a["xmin"] <= 1 and a["xmax"] >= 3


def test_plot_single_row_and_bad_inputs(tmp_path):
    tel = tmp_path / "one.csv"
    write_telemetry(tel, [(1, -1.0, 2.0, 3.0)])
    out = tmp_path / "one.svg"
    assert main(["plot", "--telemetry", str(tel), "--out", str(out)]) == 0
    svg = out.read_text()
    assert svg.count('class="point"') == 3 and "polyline" not in svg
    a = panel_attrs(svg, "mean_reward")
    assert a["ymin"] < -1.0 < a["ymax"]
    head = tmp_path / "head.csv"
    write_telemetry(head, [])
    assert main(["plot", "--telemetry", str(head), "--out", str(out)]) == 2
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n1,2\n")
    assert main(["plot", "--telemetry", str(junk), "--out", str(out)]) == 2
    assert main(["plot", "--telemetry", str(tmp_path / "nope.csv"), "--out", str(out)]) == 2


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--instances", "5"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "justrl.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().startswith("justrl ")
