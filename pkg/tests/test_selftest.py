import time

from uacanet.cli import main
from uacanet.selftest import format_table, run_selftest


def test_selftest_passes_quickly():
    t0 = time.perf_counter()
    results = run_selftest()
    assert time.perf_counter() - t0 < 60
    assert all(r.passed for r in results), format_table(results)
    assert {r.name for r in results} >= {"area-map identities", "model gradients", "checkpoint round-trip"}


def test_selftest_subcommand_prints_table(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
