import json
import subprocess
import sys

import numpy as np
import pytest

from wmlab import Permutation, ToyLM, Transcript, generate, random_keys
from wmlab.cli import main


@pytest.fixture
def workspace(tmp_path):
    model = ToyLM(vocab_size=16, seed=5)
    rng = np.random.default_rng(1)
    perm = Permutation.random(16, rng)
    keys = random_keys(4, rng)
    (tmp_path / "model.json").write_text(json.dumps(model.to_dict()))
    (tmp_path / "perm.json").write_text(perm.to_json())
    (tmp_path / "key.json").write_text(json.dumps(keys.tolist()))
    return tmp_path, model, perm, keys


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_generate_then_detect(workspace, capsys):
    ws, model, perm, keys = workspace
    out = ws / "tr.json"
    assert run_cli("generate", "--model", ws / "model.json",
                   "--key", ws / "key.json", "--perm", ws / "perm.json",
                   "--prompt", "1,2", "-m", "30", "--out", out) == 0
    tr = Transcript.from_json(out.read_text())
    assert len(tr.tokens) == 30
    assert tr.text.origin.value == "watermarked"

    assert run_cli("detect", "--model", ws / "model.json",
                   "--key", ws / "key.json", "--perm", ws / "perm.json",
                   "--input", out, "-T", "199", "--seed", "3") == 0
    p_right = float(capsys.readouterr().out.strip())
    assert p_right == 1.0 / 200

    # detection against an unrelated key reads like noise
    other = ws / "other_key.json"
    other.write_text(json.dumps(random_keys(4, np.random.default_rng(9)).tolist()))
    assert run_cli("detect", "--model", ws / "model.json",
                   "--key", other, "--perm", ws / "perm.json",
                   "--input", out, "-T", "199", "--seed", "3") == 0
    assert float(capsys.readouterr().out.strip()) > p_right


def test_detect_json_output(workspace, capsys):
    ws, model, perm, keys = workspace
    out = ws / "tr.json"
    run_cli("generate", "--model", ws / "model.json", "--key", ws / "key.json",
            "--perm", ws / "perm.json", "-m", "12", "--out", out)
    assert run_cli("detect", "--model", ws / "model.json",
                   "--key", ws / "key.json", "--perm", ws / "perm.json",
                   "--input", out, "-T", "49", "--json") == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload) == {"alignment_cost", "p_value", "resamples",
                            "null_costs_summary"}
    assert payload["resamples"] == 49


def test_attack_perm_recovers_order(workspace, capsys, tmp_path):
    ws, model, perm, keys = workspace
    csv_path = tmp_path / "pairs.csv"
    assert run_cli("attack-perm", "--model", ws / "model.json",
                   "--perm", ws / "perm.json", "-N", "3200", "--seed", "2",
                   "--save-dataset", csv_path) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["ordered_tokens"] == perm.forward.tolist()
    assert not payload["inconsistent"]
    assert csv_path.read_text().startswith("xi,token")


def test_attack_key_estimates(workspace, capsys):
    ws, model, perm, keys = workspace
    transcripts = []
    for j in range(40):
        prompt = tuple(int(t) for t in
                       np.random.default_rng(j).integers(0, 16, 2))
        transcripts.append(Transcript(
            prompt=prompt, text=generate(model, prompt, 30, keys, perm)).to_dict())
    inputs = ws / "outputs.json"
    inputs.write_text(json.dumps(transcripts))
    assert run_cli("attack-key", "--model", ws / "model.json",
                   "--perm", ws / "perm.json", "--inputs", inputs,
                   "-n", "4") == 0
    payload = json.loads(capsys.readouterr().out)
    est = np.array(payload["est_keys"])
    assert np.all(np.array(payload["lb"]) <= keys)
    assert np.all(keys <= np.array(payload["ub"]))
    assert np.abs(est - keys).max() < 0.05


def test_attack_key_wrong_perm_exits_3(workspace, capsys):
    ws, model, perm, keys = workspace
    transcripts = []
    for j in range(10):
        prompt = tuple(int(t) for t in
                       np.random.default_rng(50 + j).integers(0, 16, 2))
        transcripts.append(Transcript(
            prompt=prompt, text=generate(model, prompt, 30, keys, perm)).to_dict())
    inputs = ws / "outputs.json"
    inputs.write_text(json.dumps(transcripts))
    wrong = ws / "wrong_perm.json"
    wrong.write_text(Permutation(np.roll(perm.forward, 5)).to_json())
    assert run_cli("attack-key", "--model", ws / "model.json",
                   "--perm", wrong, "--inputs", inputs, "-n", "4") == 3


def test_attack_full_then_spoof(workspace, capsys, tmp_path):
    ws, model, perm, keys = workspace
    assert run_cli("attack-full", "--model", ws / "model.json",
                   "--key", ws / "key.json", "--perm", ws / "perm.json",
                   "--attack-samples", "40", "-m", "30", "--seed", "4") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["ordered_tokens"] in (perm.forward.tolist(),
                                         perm.forward.tolist()[::-1])
    adopted = payload["adopted_forward"]
    est = np.array(payload["est_keys"])
    ref = keys if adopted == perm.forward.tolist() else 1.0 - keys
    assert np.abs(est - ref).max() < 0.1

    order_file = tmp_path / "order.json"
    order_file.write_text(json.dumps(payload))
    bounds_file = tmp_path / "bounds.json"
    bounds_file.write_text(json.dumps(payload["bounds"]))
    spoof_out = tmp_path / "spoofs.json"
    assert run_cli("spoof", "--model", ws / "model.json",
                   "--order", order_file, "--bounds", bounds_file,
                   "-m", "30", "--count", "2", "--seed", "6",
                   "--out", spoof_out) == 0
    spoofs = json.loads(spoof_out.read_text())
    assert len(spoofs) == 2
    assert all(s["origin"] == "spoofed" for s in spoofs)

    # the spoof passes the true detector
    one = tmp_path / "one.json"
    one.write_text(json.dumps(spoofs[0]))
    assert run_cli("detect", "--model", ws / "model.json",
                   "--key", ws / "key.json", "--perm", ws / "perm.json",
                   "--input", one, "-T", "199") == 0
    assert float(capsys.readouterr().out.strip()) <= 0.05


def test_experiment_reports_and_determinism(tmp_path, capsys):
    cfg = dict(vocab_size=16, key_length=4, num_samples=5,
               tokens_per_sample=10, detection_T=19,
               known_fractions=[1.0], master_seed=7, attack_samples=10,
               prompt_tokens=2)
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(cfg))
    d1, d2 = tmp_path / "run1", tmp_path / "run2"
    assert run_cli("experiment", "--config", cfg_file, "--out-dir", d1) == 0
    capsys.readouterr()
    assert run_cli("experiment", "--config", cfg_file, "--out-dir", d2) == 0
    capsys.readouterr()
    assert (d1 / "report.json").read_bytes() == (d2 / "report.json").read_bytes()
    assert (d1 / "report.csv").read_bytes() == (d2 / "report.csv").read_bytes()


def test_experiment_bad_config_exits_2(tmp_path, capsys):
    cfg_file = tmp_path / "bad.json"
    cfg_file.write_text(json.dumps({"vocab_size": 1}))
    assert run_cli("experiment", "--config", cfg_file,
                   "--out-dir", tmp_path / "x") == 2
    assert "vocab_size" in capsys.readouterr().err


def test_unknown_arguments_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["detect", "--no-such-flag"])
    assert exc.value.code == 2


def test_console_entrypoint_runs():
    proc = subprocess.run([sys.executable, "-m", "wmlab.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "experiment" in proc.stdout


def test_config_document_supplies_material(workspace, capsys, tmp_path):
    ws, model, perm, keys = workspace
    cfg = tmp_path / "material.json"
    cfg.write_text(json.dumps({"model": model.to_dict(),
                               "key": keys.tolist(),
                               "perm": perm.forward.tolist()}))
    out = tmp_path / "tr.json"
    assert run_cli("generate", "--config", cfg, "-m", "20", "--out", out) == 0
    assert run_cli("detect", "--config", cfg, "--input", out, "-T", "99") == 0
    assert float(capsys.readouterr().out.strip()) == 0.01


def test_perm_file_alias(workspace, capsys):
    ws, model, perm, keys = workspace
    out = ws / "tr.json"
    run_cli("generate", "--model", ws / "model.json", "--key-file",
            ws / "key.json", "--perm-file", ws / "perm.json",
            "-m", "10", "--out", out)
    assert Transcript.from_json(out.read_text()).tokens


def test_spoof_accepts_partial_order(workspace, capsys, tmp_path):
    ws, model, perm, keys = workspace
    order_file = tmp_path / "partial.json"
    order_file.write_text(json.dumps(perm.forward[:4].tolist()))
    bounds_file = tmp_path / "bounds.json"
    from wmlab import KeyBounds
    bounds_file.write_text(KeyBounds.fresh(4).to_json())
    assert run_cli("spoof", "--model", ws / "model.json",
                   "--order", order_file, "--bounds", bounds_file,
                   "-m", "8", "--count", "1") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload[0]["known_fraction"] == 0.25
