import json

import pytest

from fentropy.cli import main

AUDIT = "schema = 1\nkind = audit\nmodel = cat\nmeasure = atomic\natomic_point = 0.3 0.6\n"


def _write(tmp_path, text, name="c.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_pass_exit_zero(tmp_path, capsys):
    code = main(["run", _write(tmp_path, AUDIT), "--out", str(tmp_path / "o")])
    out = json.loads(capsys.readouterr().out)
    assert code == 0 and out["passed"] is True and out["kind"] == "audit"
    assert (tmp_path / "o" / "manifest.json").exists()


def test_run_failure_exit_two(tmp_path):
    code = main(["run", _write(tmp_path, AUDIT + "bad_partition = true\n"), "--out", str(tmp_path / "o")])
    assert code == 2


def test_run_invalid_exit_one(tmp_path, capsys):
    out_dir = tmp_path / "o"
    code = main(["run", _write(tmp_path, AUDIT + f"lambda = 0.9\nout_dir = {out_dir}\n")])
    assert code == 1 and "lambda" in capsys.readouterr().err
    assert not out_dir.exists()
    assert main(["run", str(tmp_path / "missing.txt")]) == 1


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_list(capsys):
    assert main(["list"]) == 0
    text = capsys.readouterr().out
    assert text.index("entropy") < text.index("sweep") < text.index("audit")
    assert main(["list", "--json"]) == 0
    cat = json.loads(capsys.readouterr().out)
    assert [e["name"] for e in cat] == ["entropy", "gibbs", "sweep", "certificate", "basin", "audit"]


def test_audit_command(tmp_path, capsys):
    good = tmp_path / "good"
    bad = tmp_path / "bad"
    main(["run", _write(tmp_path, AUDIT), "--out", str(good)])
    main(["run", _write(tmp_path, AUDIT + "bad_partition = true\n", "b.txt"), "--out", str(bad)])
    capsys.readouterr()
    assert main(["audit", str(good / "partition.json"), str(good / "samples.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "i,width,mass,bound,ok" and len(lines) == 10
    assert main(["audit", str(bad / "partition.json"), str(bad / "samples.csv"), "--i-max", "3"]) == 2
    assert main(["audit", str(good / "partition.json"), str(good / "samples.csv"), "--slot", "99"]) == 1
    assert main(["audit", str(tmp_path / "nope.json"), str(good / "samples.csv")]) == 1
