import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learnphy.autodiff import InputError
from learnphy.metrics import (
    LOG_FIELDS,
    CerCurve,
    CerPoint,
    MetricsLog,
    aggregate_seeds,
    cer_stderr,
    convergence_epoch,
    convexity_score,
    epoch_variance,
)

traces = st.lists(st.floats(0, 1), min_size=1, max_size=60)


def brute(trace, threshold, sustain=5):
    for i in range(len(trace) - sustain + 1):
        if all(v >= threshold for v in trace[i : i + sustain]):
            return i
    return None


def log_from(trace, directions=("A->B", "B->A")):
    rows = []
    for e, v in enumerate(trace):
        for d in directions:
            rows.append(
                dict(epoch=e, direction=d, class_success=v, loss_rx=1.0, loss_tx=0.5, loss_crit=0.7, critic_accuracy=0.5, measured_snr_db=10.0)
            )
    return MetricsLog(rows)


class TestConvergence:
    def test_never(self):
        assert convergence_epoch([0.1] * 50, 0.9) is None

    def test_monotone_crossing(self):
        trace = np.minimum(np.arange(100) / 46.0, 1.0)
        trace[42:] = np.maximum(trace[42:], 0.9)
        trace[:42] = np.minimum(trace[:42], 0.89)
        assert convergence_epoch(trace, 0.9) == 42

    def test_brief_spike_ignored(self):
        trace = [0.1] * 10 + [0.95] * 3 + [0.2] * 5 + [0.95] * 6
        assert convergence_epoch(trace, 0.9) == 18

    def test_run_at_end_shorter_than_sustain(self):
        assert convergence_epoch([0.0] * 10 + [1.0] * 4, 0.9) is None

    @given(traces, st.floats(0.01, 1.0))
    def test_matches_brute_scan(self, trace, thr):
        assert convergence_epoch(trace, thr) == brute(trace, thr)

    def test_jagged_trace(self):
        rng = np.random.default_rng(0)
        trace = np.clip(np.linspace(0, 1.1, 200) + rng.normal(scale=0.08, size=200), 0, 1)
        assert convergence_epoch(trace, 0.9) == brute(list(trace), 0.9)

    @given(traces, st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_monotone_in_threshold(self, trace, t1, t2):
        lo, hi = sorted((t1, t2))
        a, b = convergence_epoch(trace, lo), convergence_epoch(trace, hi)
        if b is not None:
            assert a is not None and a <= b

    def test_log_uses_direction_mean(self):
        rows = log_from([0.5] * 10).rows
        for r in rows:
            if r["direction"] == "A->B":
                r["class_success"] = 1.0
        log = MetricsLog(rows)
        assert convergence_epoch(log, 0.9, direction="A->B") == 0
        assert convergence_epoch(log, 0.9) is None
        assert convergence_epoch(log, 0.75) == 0

    def test_errors(self):
        with pytest.raises(InputError):
            convergence_epoch([], 0.9)
        with pytest.raises(InputError):
            convergence_epoch(MetricsLog([]), 0.9)
        for bad in (0.0, 1.5):
            with pytest.raises(InputError):
                convergence_epoch([0.5], bad)


class TestLog:
    def test_csv_round_trip(self, tmp_path):
        log = log_from([0.1, 0.25, 0.5])
        log.write_csv(tmp_path / "m.csv")
        header = (tmp_path / "m.csv").read_text().splitlines()[0]
        assert header == ",".join(LOG_FIELDS)
        assert MetricsLog.read_csv(tmp_path / "m.csv").rows == log.rows

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("a,b\n1,2\n")
        with pytest.raises(InputError):
            MetricsLog.read_csv(tmp_path / "m.csv")

    def test_fraction_range(self):
        rows = log_from([0.5]).rows
        rows[0]["class_success"] = 1.2
        with pytest.raises(InputError):
            MetricsLog(rows)

    def test_epochs_increase(self):
        rows = log_from([0.5, 0.6]).rows
        with pytest.raises(InputError):
            MetricsLog(rows[2:] + rows[:2])


class TestCer:
    def test_stderr(self):
        assert cer_stderr(0.1, 100) == pytest.approx(0.03)
        assert cer_stderr(0.0, 10) == 0.0
        with pytest.raises(InputError):
            cer_stderr(0.1, 0)

    def test_sorted_and_csv(self, tmp_path):
        curve = CerCurve([CerPoint(10, 0.01, 1000), CerPoint(-5, 0.5, 1000)])
        assert [p.test_snr_db for p in curve.points] == [-5, 10]
        curve.write_csv(tmp_path / "c.csv")
        back = CerCurve.read_csv(tmp_path / "c.csv")
        assert back.points == curve.points
        assert (tmp_path / "c.csv").read_text().splitlines()[0] == "test_snr_db,cer,trials,stderr"

    def test_range(self):
        with pytest.raises(InputError):
            CerCurve([CerPoint(0, 1.5, 10)])


class TestConvexity:
    def test_u_shape(self):
        r = convexity_score([(0, 0.3), (5, 0.1), (10, 0.05), (15, 0.2)])
        assert r.interior_minimum and r.argmin == 10

    def test_decreasing(self):
        r = convexity_score([(0, 0.3), (5, 0.2), (10, 0.1)])
        assert not r.interior_minimum and r.argmin == 10

    def test_unsorted_input(self):
        assert convexity_score([(10, 0.5), (0, 0.4), (5, 0.1)]).argmin == 5

    def test_too_few(self):
        with pytest.raises(InputError):
            convexity_score([(0, 0.1), (1, 0.2)])


class TestAggregate:
    def test_single_run_identity(self):
        trace = [0.1, 0.4, 0.9]
        agg = aggregate_seeds([log_from(trace)])
        np.testing.assert_allclose(agg.median, trace)
        np.testing.assert_allclose(agg.iqr, 0)

    def test_median(self):
        agg = aggregate_seeds([log_from([v]) for v in (0.2, 0.4, 0.6)])
        assert agg.median[0] == pytest.approx(0.4)

    @settings(max_examples=30)
    @given(st.lists(st.lists(st.floats(0, 1), min_size=4, max_size=4), min_size=1, max_size=6), st.randoms())
    def test_order_independent_and_iqr_nonnegative(self, runs, rnd):
        logs = [log_from(r) for r in runs]
        a = aggregate_seeds(logs)
        shuffled = logs[:]
        rnd.shuffle(shuffled)
        b = aggregate_seeds(shuffled)
        np.testing.assert_array_equal(a.median, b.median)
        assert np.all(a.iqr >= 0)

    def test_misaligned(self):
        with pytest.raises(InputError):
            aggregate_seeds([log_from([0.1, 0.2]), log_from([0.1])])
        with pytest.raises(InputError):
            aggregate_seeds([])


class TestVariance:
    def test_flat_is_zero(self):
        assert epoch_variance([0.5] * 10) == 0.0

    def test_jagged_exceeds_smooth(self):
        smooth = np.linspace(0, 1, 50)
        jagged = smooth + 0.05 * (-1) ** np.arange(50)
        assert epoch_variance(jagged) > epoch_variance(smooth)
