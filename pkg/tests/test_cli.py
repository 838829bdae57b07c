import json

from bifurcmc.cli import main


def run(argv):
    return main([str(a) for a in argv])


def test_spectral_two_state_critical(tmp_path):
    out = tmp_path / "spec"
    code = run(["spectral", "--kernel", "two_state", "--p", "0.85355339059",
                "--out", out])
    assert code == 0
    payload = json.loads(out.with_suffix(".json").read_text())
    assert abs(payload["alpha"] - 0.7071068) < 1e-6
    assert abs(sum(payload["mu"]) - 1.0) < 1e-12
    assert payload["m_estimate"] is not None


def test_variance_beta_mixture(tmp_path):
    out = tmp_path / "var"
    code = run(["variance", "--kernel", "beta_mixture", "--f", "x", "--out", out])
    assert code == 0
    payload = json.loads(out.with_suffix(".json").read_text())
    assert abs(payload["sigma"] - 0.0521739) < 1e-4
    assert payload["regime"] == "subcritical"


def test_simulate_csv_schema(tmp_path):
    out = tmp_path / "sim"
    code = run(["simulate", "--kernel", "two_state", "--p", "0.6", "--f", "x",
                "--n", 5, "--B", 16, "--seed", 3, "--threads", 1, "--out", out])
    assert code == 0
    lines = out.with_suffix(".csv").read_text().splitlines()
    assert lines[0] == "replica,value"
    assert len(lines) == 17
    assert lines[1].split(",")[0] == "0"


def test_rate_csv_schema_and_roundtrip(tmp_path):
    out1 = tmp_path / "rate1"
    argv = ["rate", "--kernel", "beta_mixture", "--grid-size", 128, "--f", "x",
            "--n", 8, "--B", 500, "--seed", 11, "--beta", "0.4",
            "--threads", 1, "--out", out1]
    assert run(argv) == 0
    csv1 = out1.with_suffix(".csv").read_bytes()
    header = csv1.splitlines()[0].decode()
    assert header == "delta,count,empirical_rate,exact_rate"
    meta = json.loads(out1.with_suffix(".json").read_text())
    assert "sigma" in meta and "b_n" in meta

    # feeding the emitted config back reproduces the bytes
    out2 = tmp_path / "rate2"
    assert run(["rate", "--config", out1.with_suffix(".json"), "--out", out2]) == 0
    assert out2.with_suffix(".csv").read_bytes() == csv1


def test_rate_missing_empirical_blank_fields(tmp_path):
    # two-state chain with few replicas leaves the far tail uncounted
    out = tmp_path / "rate3"
    assert run(["rate", "--kernel", "two_state", "--p", "0.6", "--f", "x",
                "--n", 6, "--B", 50, "--seed", 5, "--beta", "0.4",
                "--threads", 1, "--out", out]) == 0
    rows = out.with_suffix(".csv").read_text().splitlines()[1:]
    zero_rows = [r for r in rows if r.split(",")[1] == "0"]
    assert zero_rows, "expected at least one zero-count threshold"
    for r in zero_rows:
        assert r.split(",")[2] == ""  # missing, not infinite


def test_decompose_csv_schema(tmp_path):
    out = tmp_path / "dec"
    assert run(["decompose", "--kernel", "beta_mixture", "--grid-size", 128,
                "--f", "x", "--n", 8, "--B", 6, "--seed", 2, "--threads", 1,
                "--out", out]) == 0
    lines = out.with_suffix(".csv").read_text().splitlines()
    assert lines[0] == "replica,N,delta,r0,r1,r2,bracket,residual"
    assert len(lines) == 7
    for line in lines[1:]:
        assert float(line.split(",")[-1]) < 1e-10  # reconstruction residual


def test_verify_moments_schema_and_zscores(tmp_path):
    out = tmp_path / "vm"
    assert run(["verify-moments", "--kernel", "beta_mixture", "--grid-size", 128,
                "--f", "x", "--n", 5, "--B", 4000, "--x", "0.3", "--seed", 9,
                "--threads", 1, "--out", out]) == 0
    lines = out.with_suffix(".csv").read_text().splitlines()
    assert lines[0] == "quantity,n,x,oracle,mc_estimate,mc_se,z_score"
    zs = [abs(float(line.split(",")[-1])) for line in lines[1:]]
    assert len(zs) == 2
    assert all(z < 4.0 for z in zs)


def test_exit_code_config_error(tmp_path, capsys):
    code = run(["variance", "--kernel", "grid_custom", "--density", "x^",
                "--out", tmp_path / "bad"])
    assert code == 1
    assert "config error" in capsys.readouterr().err


def test_exit_code_numerical_error(tmp_path, capsys):
    # stay probability 0.95 puts the chain beyond the critical line
    code = run(["variance", "--kernel", "two_state", "--p", "0.95", "--f", "x",
                "--out", tmp_path / "super"])
    assert code == 2
    assert "numerical failure" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    code = run(["variance", "--config", cfg, "--out", tmp_path / "x"])
    assert code == 1


def test_float_formatting_17g(tmp_path):
    out = tmp_path / "sim17"
    assert run(["simulate", "--kernel", "beta_mixture", "--grid-size", 128,
                "--f", "x", "--n", 4, "--B", 3, "--seed", 1, "--threads", 1,
                "--out", out]) == 0
    for line in out.with_suffix(".csv").read_text().splitlines()[1:]:
        text = line.split(",")[1]
        assert float(format(float(text), ".17g")) == float(text)
