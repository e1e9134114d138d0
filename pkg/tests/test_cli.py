import json
import socket
import threading

import numpy as np
import pytest

from sgsynth.cli import main
from sgsynth.data import ingest


def test_version_runs():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_calibrate_subcommand(capsys):
    assert main(["calibrate", "--genes", "2", "--epsilon", "1.0",
                 "--delta", "1e-5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["sigma"] == pytest.approx(10.83, abs=0.01)


def test_calibrate_rejects_bad_epsilon(capsys):
    assert main(["calibrate", "--genes", "5", "--epsilon", "-1"]) == 2


def test_make_cohort_and_evaluate(tmp_path, capsys):
    cohort = tmp_path / "c.csv"
    assert main(["make-cohort", "--demo-n", "60", "--demo-d", "6",
                 "--demo-classes", "2", "--seed", "4", "--out", str(cohort)]) == 0
    table = ingest(cohort)
    assert table.n == 60 and table.d == 6
    out = tmp_path / "eval"
    assert main(["evaluate", "--real", str(cohort), "--synthetic", str(cohort),
                 "--outdir", str(out), "--figures", "false"]) == 0
    report = json.loads((out / "metrics.json").read_text())
    assert report["wasserstein_mean"] == 0.0
    assert report["dcr_mean"] == 0.0
    assert report["detpr"] == 1.0


def test_evaluate_missing_file_is_ingestion_error(tmp_path):
    missing = tmp_path / "nope.csv"
    code = main(["evaluate", "--real", str(missing), "--synthetic", str(missing)])
    assert code == 3


def test_run_local_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["run-local", "--demo-n", "50", "--demo-d", "5",
                 "--demo-classes", "2", "--seed", "8", "--epsilon", "8",
                 "--outdir", str(out)]) == 0
    assert (out / "synthetic.csv").exists()
    assert (out / "released.json").exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["epsilon"] == 8.0
    figures = sorted(p.name for p in (out / "figures").glob("*.png"))
    assert figures == ["label_distribution.png", "marginals_overlay.png",
                       "wasserstein_per_gene.png"]


def test_generate_from_released(tmp_path):
    out = tmp_path / "run"
    main(["run-local", "--demo-n", "40", "--demo-d", "4", "--demo-classes", "2",
          "--seed", "3", "--sigma", "0", "--outdir", str(out),
          "--figures", "false"])
    syn2 = tmp_path / "syn2.csv"
    assert main(["generate", "--released", str(out / "released.json"),
                 "--out", str(syn2)]) == 0
    first = ingest(out / "synthetic.csv")
    second = ingest(syn2)
    # same released tables and seed: identical synthetic output
    np.testing.assert_array_equal(first.values, second.values)
    np.testing.assert_array_equal(first.labels, second.labels)


def test_server_unreachable_peers_is_protocol_error(tmp_path):
    cohort = tmp_path / "c.csv"
    main(["make-cohort", "--demo-n", "10", "--demo-d", "2", "--demo-classes", "2",
          "--seed", "1", "--out", str(cohort)])
    main(["share", "--input", str(cohort), "--outdir", str(tmp_path / "s"),
          "--seeded", "--classes", "2"])
    # party 2 dials party 1, which is not listening anywhere
    code = main(["server", "--party", "2", "--shares", str(tmp_path / "s"),
                 "--timeout", "0.5", "--classes", "2",
                 "--party1", "127.0.0.1:1", "--party2", "127.0.0.1:1",
                 "--party3", "127.0.0.1:1"])
    assert code == 4


def _free_ports(n):
    socks = []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def test_share_then_tcp_servers_end_to_end(tmp_path):
    # two data holders share offline; three servers run the protocol over TCP
    cohort = tmp_path / "c.csv"
    main(["make-cohort", "--demo-n", "30", "--demo-d", "4", "--demo-classes", "2",
          "--seed", "6", "--out", str(cohort)])
    table = ingest(cohort)
    half = tmp_path / "h1.csv"
    rest = tmp_path / "h2.csv"
    from sgsynth.data import write_csv
    write_csv(table.rows(slice(0, 15)), half)
    write_csv(table.rows(slice(15, 30)), rest)

    for name, path, offset in (("s1", half, 0), ("s2", rest, 15)):
        assert main(["share", "--input", str(path), "--outdir", str(tmp_path / name),
                     "--seed", "6", "--seeded", "--offset", str(offset),
                     "--classes", "2"]) == 0
        assert (tmp_path / name / "meta.json").exists()

    ports = _free_ports(3)
    args_common = [
        "--shares", str(tmp_path / "s1"), str(tmp_path / "s2"),
        "--sigma", "0", "--seed", "6", "--classes", "2",
        "--party1", f"127.0.0.1:{ports[0]}",
        "--party2", f"127.0.0.1:{ports[1]}",
        "--party3", f"127.0.0.1:{ports[2]}",
        "--outdir", str(tmp_path / "server-out"),
    ]
    codes = [None, None, None]

    def runner(party):
        codes[party - 1] = main(["server", "--party", str(party)] + args_common)

    threads = [threading.Thread(target=runner, args=(p,)) for p in (1, 2, 3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(120)
    assert codes == [0, 0, 0]
    released = json.loads((tmp_path / "server-out" / "released.json").read_text())
    # exact tables at sigma=0: label marginal counts every shared row
    assert sum(released["mu_label"]) == 30
    syn = ingest(tmp_path / "server-out" / "synthetic.csv")
    assert syn.n == 30 and syn.d == 4
