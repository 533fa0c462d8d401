import json
import subprocess
import sys
import threading
import time

import pytest

from elwe.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_engel_expand_example(capsys):
    assert run(capsys, "engel", "expand", "--seed", "0.3", "--terms", "10") == (0, "4\n5\n", "")


def test_engel_stream(capsys):
    code, out, _ = run(capsys, "engel", "stream", "--seed", "0.3", "--count", "2", "--no-shuffle")
    assert code == 0 and out == "4\n5\n"


def test_usage_errors(capsys):
    assert run(capsys, )[0] == 2
    assert run(capsys, "lwe")[0] == 2
    code, _, err = run(capsys, "engel", "expand")
    assert code == 2 and "error:usage" in err


def test_domain_error_tag(capsys):
    code, _, err = run(capsys, "engel", "expand", "--seed", "1.5")
    assert code == 1 and err.startswith("error:domain-error:")


def test_keygen_params_invalid(tmp_path, capsys):
    code, _, err = run(capsys, "lwe", "keygen", "--params", "16,7,13,3.2", "--seed", "0.5",
                       "--out", str(tmp_path / "k"))
    assert code == 1 and err.startswith("error:params-invalid:")
    assert not (tmp_path / "k").exists()


@pytest.mark.parametrize("record", ["seed", "public"])
def test_lwe_roundtrip_files(tmp_path, capsys, record):
    key = tmp_path / "key"
    assert main(["lwe", "keygen", "--params", "32,4096,13,3.2", "--seed", "0.5",
                 "--record", record, "--out", str(key)]) == 0
    sk = tmp_path / "sk"
    assert main(["lwe", "keygen", "--params", "32,4096,13,3.2", "--seed", "0.5",
                 "--record", "secret", "--out", str(sk)]) == 0
    (tmp_path / "m").write_bytes(b"agile")
    assert main(["lwe", "encrypt", "--key", str(key), "--seed", "0.7",
                 "--in", str(tmp_path / "m"), "--out", str(tmp_path / "c")]) == 0
    assert main(["lwe", "decrypt", "--key", str(sk), "--in", str(tmp_path / "c"),
                 "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d").read_bytes() == b"agile"
    assert main(["lwe", "decrypt", "--params", "32,4096,13,3.2", "--key-seed", "0.5",
                 "--in", str(tmp_path / "c"), "--out", str(tmp_path / "d2")]) == 0
    assert (tmp_path / "d2").read_bytes() == b"agile"


def test_lwe_decrypt_mismatch_and_bad_file(tmp_path, capsys):
    (tmp_path / "m").write_bytes(b"x")
    main(["lwe", "encrypt", "--params", "32,4096,13,3.2", "--key-seed", "0.5", "--seed", "0.7",
          "--in", str(tmp_path / "m"), "--out", str(tmp_path / "c")])
    code, _, err = run(capsys, "lwe", "decrypt", "--params", "16,4096,13,3.2", "--key-seed",
                       "0.5", "--in", str(tmp_path / "c"), "--out", str(tmp_path / "d"))
    assert code == 1 and "format-invalid" in err
    (tmp_path / "junk").write_bytes(b"nonsense")
    code, _, err = run(capsys, "lwe", "decrypt", "--key", str(tmp_path / "junk"),
                       "--in", str(tmp_path / "c"), "--out", str(tmp_path / "d"))
    assert code == 1 and err.startswith("error:format-invalid:")
    code, _, err = run(capsys, "lwe", "encrypt", "--seed", "0.1", "--in", str(tmp_path / "m"),
                       "--out", str(tmp_path / "c"))
    assert code == 1


def test_agility_check_and_score(capsys):
    code, out, _ = run(capsys, "agility", "check", "--from", "256,4096,3.2", "--to", "512,8192,3.2")
    assert code == 0 and json.loads(out)["valid"]
    code, _, err = run(capsys, "agility", "check", "--from", "256,8192,3.2", "--to", "256,4096,3.2")
    assert code == 1 and err.startswith("error:morphism-invalid:")
    code, out, _ = run(capsys, "agility", "score", "--from", "16,4096,3.2", "--to", "32,8192,3.2",
                       "--trials", "100")
    doc = json.loads(out)
    assert code == 0 and doc["messages_tested"] == 100 and doc["error_rate"] == 0


def test_agility_transition_state(tmp_path, capsys):
    st = str(tmp_path / "state")
    code, out, _ = run(capsys, "agility", "transition", "--from", "lwe-256-4096",
                       "--to", "lwe-512-8192", "--state", st, "--items", "10")
    assert code == 0 and json.loads(out)["path_counts"] == {"transport": 10, "re-encrypt": 0}
    code, out, _ = run(capsys, "agility", "transition", "--from", "lwe-512-8192",
                       "--to", "toy-xor", "--state", st)
    assert code == 0 and json.loads(out)["path_counts"] == {"transport": 0, "re-encrypt": 10}
    state = json.loads((tmp_path / "state" / "state.json").read_text())
    assert state["active"] == "toy-xor" and len(state["inflight"]) == 10
    code, _, err = run(capsys, "agility", "transition", "--from", "lwe-256-4096",
                       "--to", "toy-xor", "--state", st)
    assert code == 1
    code, _, err = run(capsys, "agility", "transition", "--from", "toy-xor", "--to", "rsa",
                       "--state", st)
    assert code == 1 and "unknown-scheme" in err


def test_noise_commands(tmp_path, capsys):
    out_file = tmp_path / "sweep.csv"
    assert main(["noise", "sweep", "--n", "16", "--q", "1024", "--sigma", "2,4",
                 "--per-cell", "30", "--out", str(out_file)]) == 0
    lines = out_file.read_text().splitlines()
    assert lines[0].startswith("n,q,sigma") and len(lines) == 3
    code, out, _ = run(capsys, "noise", "compare", "--count", "2000", "--sigma", "3")
    doc = json.loads(out)
    assert code == 0 and doc["ks_b"] < 0.02 and doc["wasserstein"] > 0


def test_wiretap_commands(capsys):
    code, out, _ = run(capsys, "wiretap", "region", "--main", "10", "--eve", "5", "--delta", "0")
    assert code == 0 and out.splitlines()[1] == "10,5,0,0.701029205"
    code, out, _ = run(capsys, "wiretap", "its-sim", "--n", "16", "--trials", "50")
    assert code == 0 and json.loads(out)["trials"] == 50


def test_ztnet_attack_and_report(tmp_path, capsys):
    led = tmp_path / "ledger.json"
    assert main(["ztnet", "attack", "--mix", "3,4,2", "--legit", "1", "--timings",
                 "--out", str(led)]) == 0
    doc = json.loads(led.read_text())
    assert doc["rejected"] == 9 and doc["accepted"] == 1
    code, out, _ = run(capsys, "ztnet", "report", "--in", str(led))
    assert code == 0 and json.loads(out)["omitted"] == ["encrypt", "decrypt", "network",
                                                        "model", "total"]
    comp = tmp_path / "c.json"
    comp.write_text(json.dumps({"components": {"total": list(range(1, 101))}}))
    code, out, _ = run(capsys, "ztnet", "report", "--in", str(comp))
    assert json.loads(out)["components"]["total"]["p50"] == 50.5


def test_ztnet_report_counts_only_ledger(tmp_path, capsys):
    led = tmp_path / "ledger.json"
    assert main(["ztnet", "attack", "--mix", "3,4,2", "--out", str(led)]) == 0
    code, out, _ = run(capsys, "ztnet", "report", "--in", str(led))
    assert code == 0 and json.loads(out) == {
        "components": {}, "omitted": ["encrypt", "decrypt", "network", "model", "total"]}
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"components": {"total": "fast"}}))
    code, _, err = run(capsys, "ztnet", "report", "--in", str(bad))
    assert code == 1 and err.startswith("error:format-invalid")


def test_ztnet_attack_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for f in (a, b):
        assert main(["ztnet", "attack", "--now", "1700000000000", "--out", str(f)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_broker_client_subprocess(tmp_path):
    cfg = tmp_path / "policy.json"
    cfg.write_text(json.dumps({
        "whitelist": ["127.0.0.0/8"], "models": ["gpt", "bert"],
        "tokens": [{"id": "t1", "secret_hex": "11" * 32, "scope": ["gpt"],
                    "issued_at": 0, "expires_at": 10**14}],
        "lwe": {"params": "32,4096,13,3.2"}, "latency_ms": {}}))
    ready = tmp_path / "addr"
    broker = subprocess.Popen([sys.executable, "-m", "elwe", "ztnet", "broker", "--config",
                               str(cfg), "--ready-file", str(ready), "--max-requests", "2"],
                              stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    try:
        deadline = time.time() + 20
        while not ready.exists() and time.time() < deadline:
            time.sleep(0.05)
        addr = ready.read_text().strip()
        ok = subprocess.run([sys.executable, "-m", "elwe", "ztnet", "client", "--send", "hi",
                             "--connect", addr, "--config", str(cfg), "--token-id", "t1"],
                            capture_output=True, text=True, timeout=30)
        assert ok.returncode == 0 and json.loads(ok.stdout)["body"] == "gpt:hi"
        denied = subprocess.run([sys.executable, "-m", "elwe", "ztnet", "client", "--send", "hi",
                                 "--connect", addr, "--config", str(cfg), "--token-id", "t1",
                                 "--model", "bert"], capture_output=True, text=True, timeout=30)
        assert denied.returncode == 1
        assert json.loads(denied.stdout)["reason"] == "scope_violation"
        assert broker.wait(timeout=10) == 0
    finally:
        if broker.poll() is None:
            broker.kill()
