"""Tests for the verification-suite runner.

These exercise the orchestration layer, not the mathematics: suite
lookup, deterministic reruns, crash containment, report ordering,
and the artifact files with their hash manifest.  The individual
inequality checks have their own test modules; here we only run the
cheap suites (spectral decay, the modulus certificate, the blow-up
proxy) to keep the wall time down.
"""

import hashlib
import json
import math

import pytest

from sqg_lab.config import ScenarioConfig, SuiteEntry
from sqg_lab.suites import (
    SuiteResult,
    _worker_count,
    available_suites,
    default_suite,
    run_suite,
    write_artifacts,
)


def _cfg(entries, n=64, seed=5):
    return ScenarioConfig(seed=seed, n=n, L=16 * math.pi, suite=tuple(entries))


CHEAP = (SuiteEntry("decay"), SuiteEntry("moc", {"points": 60}))


@pytest.fixture(scope="module")
def cheap_result():
    return run_suite(_cfg(CHEAP))


class TestRegistry:
    def test_available_sorted(self):
        names = available_suites()
        assert list(names) == sorted(names)
        for expected in ("picard", "transport", "smoothing", "blowup", "decay",
                         "besov", "maxprinciple", "commutator", "vishik",
                         "flowcomm", "moc"):
            assert expected in names

    def test_default_covers_everything(self):
        assert tuple(e.name for e in default_suite()) == tuple(
            sorted(available_suites())) or set(
            e.name for e in default_suite()) == set(available_suites())

    def test_unknown_name_rejected_before_any_work(self):
        with pytest.raises(ValueError, match="unknown suite 'nope'"):
            run_suite(_cfg([SuiteEntry("nope")]))

    def test_rejection_lists_available(self):
        with pytest.raises(ValueError, match="decay"):
            run_suite(_cfg([SuiteEntry("nope")]))


class TestRunner:
    def test_empty_suite_is_ok(self):
        result = run_suite(_cfg([]))
        assert result.reports == []
        assert result.failures == {}
        assert result.ok

    def test_cheap_suites_pass(self, cheap_result):
        assert cheap_result.ok
        assert all(r.passed for r in cheap_result.reports)
        names = [r.name for r in cheap_result.reports]
        assert any(n.startswith("decay") for n in names)
        assert any(n.startswith("moc") for n in names)

    def test_report_order_follows_entry_order(self, cheap_result):
        # threaded execution must not scramble the report list
        names = [r.name for r in cheap_result.reports]
        first_moc = names.index("moc-negativity")
        assert all(n.startswith("decay") for n in names[:first_moc])

    def test_rerun_is_bit_identical(self, cheap_result):
        again = run_suite(_cfg(CHEAP))
        assert len(again.reports) == len(cheap_result.reports)
        for a, b in zip(again.reports, cheap_result.reports):
            assert a.name == b.name
            assert a.lhs == b.lhs
            assert a.rhs == b.rhs
            assert a.passed == b.passed

    def test_single_worker_matches_threaded(self, cheap_result, monkeypatch):
        monkeypatch.setenv("SQG_THREADS", "1")
        serial = run_suite(_cfg(CHEAP))
        assert [(r.name, r.lhs, r.rhs) for r in serial.reports] == [
            (r.name, r.lhs, r.rhs) for r in cheap_result.reports]

    def test_crash_recorded_with_partial_reports(self):
        # gamma >= delta is rejected by the modulus constructor, so the
        # moc suite raises; the decay suite must still report
        result = run_suite(_cfg([SuiteEntry("decay"),
                                 SuiteEntry("moc", {"delta": 0.9, "gamma": 0.9})]))
        assert not result.ok
        assert list(result.failures) == ["moc[1]"]
        assert "Traceback" in result.failures["moc[1]"]
        assert any(r.name.startswith("decay") for r in result.reports)

    def test_failed_report_flips_ok(self):
        # an absurd prefactor pushes the negativity margin positive
        result = run_suite(_cfg([SuiteEntry("moc", {"points": 60, "C": 1e6})]))
        assert result.failures == {}
        assert not result.ok
        assert not result.reports[0].passed


class TestWorkerCount:
    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("SQG_THREADS", "3")
        assert _worker_count() == 3

    def test_floor_of_one(self, monkeypatch):
        monkeypatch.setenv("SQG_THREADS", "0")
        assert _worker_count() == 1

    def test_default_positive(self, monkeypatch):
        monkeypatch.delenv("SQG_THREADS", raising=False)
        assert _worker_count() >= 1


class TestArtifacts:
    @pytest.fixture()
    def written(self, cheap_result, tmp_path):
        paths = write_artifacts(cheap_result, tmp_path)
        return cheap_result, tmp_path, paths

    def test_three_files(self, written):
        _, out, _ = written
        for name in ("reports.json", "summary.txt", "manifest.json"):
            assert (out / name).is_file()

    def test_reports_json_content(self, written):
        result, out, _ = written
        payload = json.loads((out / "reports.json").read_text())
        assert payload["ok"] is True
        assert payload["failures"] == {}
        assert len(payload["reports"]) == len(result.reports)
        for rec, rep in zip(payload["reports"], result.reports):
            assert rec["name"] == rep.name
            assert rec["lhs"] == rep.lhs
            assert rec["pass"] == rep.passed

    def test_summary_verdict_line(self, written):
        _, out, _ = written
        text = (out / "summary.txt").read_text()
        assert text.rstrip().endswith("ALL PASS")
        for rep in written[0].reports:
            assert rep.name in text

    def test_manifest_hashes_match(self, written):
        _, out, _ = written
        manifest = json.loads((out / "manifest.json").read_text())
        for name in ("reports.json", "summary.txt"):
            digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
            assert manifest["files"][name] == digest

    def test_two_runs_byte_identical(self, tmp_path):
        cfg = _cfg(CHEAP)
        a, b = tmp_path / "a", tmp_path / "b"
        run_suite(cfg, out_dir=a)
        run_suite(cfg, out_dir=b)
        for name in ("reports.json", "summary.txt", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_run_suite_writes_when_given_dir(self, tmp_path):
        out = tmp_path / "artifacts"
        run_suite(_cfg([]), out_dir=out)
        assert (out / "reports.json").is_file()
        payload = json.loads((out / "reports.json").read_text())
        assert payload["reports"] == []
        assert payload["ok"] is True

    def test_failure_recorded_in_json(self, tmp_path):
        result = run_suite(_cfg([SuiteEntry("moc", {"delta": 0.9, "gamma": 0.9})]),
                           out_dir=tmp_path)
        payload = json.loads((tmp_path / "reports.json").read_text())
        assert payload["ok"] is False
        assert "moc[0]" in payload["failures"]
        text = (tmp_path / "summary.txt").read_text()
        assert "FAILURES PRESENT" in text


class TestSuiteResult:
    def test_ok_requires_no_failures(self):
        assert SuiteResult(reports=[], failures={}).ok
        assert not SuiteResult(reports=[], failures={"x[0]": "boom"}).ok
