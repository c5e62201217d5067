"""State machine tests: thresholds, debounce, countdown, motion rules."""

import itertools
import json

import pytest

from vigil.engine import (
    BpmClass,
    Cancelled,
    Cause,
    Countdown,
    DetectionEngine,
    Monitoring,
    MotionSample,
    OrderingError,
    StateError,
    Suspected,
    Thresholds,
    Triggered,
    VitalSample,
    classify_bpm,
    state_from_dict,
    state_to_dict,
)

TH = Thresholds()


def feed_bpms(engine, bpms, start_ms=0, step_ms=1000):
    transitions = []
    for i, bpm in enumerate(bpms):
        transitions.extend(engine.ingest_vital(VitalSample(start_ms + i * step_ms, bpm)))
    return transitions


class TestClassify:
    @pytest.mark.parametrize(
        "bpm,expected",
        [
            (74, BpmClass.NORMAL),
            (125, BpmClass.HIGH),
            (60, BpmClass.NORMAL),
            (59, BpmClass.LOW),
            (120, BpmClass.NORMAL),
            (121, BpmClass.HIGH),
            (0, BpmClass.LOW),
            (255, BpmClass.HIGH),
        ],
    )
    def test_examples(self, bpm, expected):
        assert classify_bpm(bpm, TH) is expected

    def test_partitions_whole_range(self):
        for bpm in range(256):
            cls = classify_bpm(bpm, TH)
            matches = [
                bpm < TH.hr_low and cls is BpmClass.LOW,
                bpm > TH.hr_high and cls is BpmClass.HIGH,
                TH.hr_low <= bpm <= TH.hr_high and cls is BpmClass.NORMAL,
            ]
            assert sum(matches) == 1


class TestVitalDebounce:
    def test_five_high_samples_trigger_on_fifth(self):
        e = DetectionEngine()
        feed_bpms(e, [125] * 5)
        assert e.state == Triggered(Cause.TACHYCARDIA, 4000)

    def test_normal_sample_resets(self):
        e = DetectionEngine()
        feed_bpms(e, [125, 125, 74])
        assert e.state == Monitoring()

    def test_five_low_samples_trigger_bradycardia(self):
        e = DetectionEngine()
        feed_bpms(e, [55] * 5)
        assert e.state == Triggered(Cause.BRADYCARDIA, 4000)

    def test_cause_switch_restarts_count(self):
        e = DetectionEngine()
        feed_bpms(e, [55, 55, 125, 125, 125, 125])
        assert isinstance(e.state, Suspected)
        assert e.state == Suspected(Cause.TACHYCARDIA, 4, 2000)

    def test_four_abnormal_never_trigger(self):
        e = DetectionEngine()
        feed_bpms(e, [125] * 4)
        assert isinstance(e.state, Suspected)

    def test_exhaustive_against_reference(self):
        # Brute-force debounce evaluator, independent of the engine.
        def reference(classes, need):
            count, cause = 0, None
            for i, cls in enumerate(classes):
                if cls == "N":
                    count, cause = 0, None
                    continue
                if cause == cls:
                    count += 1
                else:
                    cause, count = cls, 1
                if count == need:
                    return i, cause
            return None, None

        bpm_for = {"N": 75, "L": 55, "H": 125}
        cause_for = {"L": Cause.BRADYCARDIA, "H": Cause.TACHYCARDIA}
        for classes in itertools.product("NLH", repeat=6):
            idx, cause = reference(classes, TH.consecutive_abnormal)
            e = DetectionEngine()
            feed_bpms(e, [bpm_for[c] for c in classes])
            if idx is None:
                assert not isinstance(e.state, Triggered), classes
            else:
                assert e.state == Triggered(cause_for[cause], idx * 1000), classes

    def test_non_monotonic_vital_rejected(self):
        e = DetectionEngine()
        e.ingest_vital(VitalSample(1000, 74))
        with pytest.raises(OrderingError):
            e.ingest_vital(VitalSample(999, 74))

    def test_vitals_ignored_during_countdown(self):
        e = DetectionEngine()
        e.press_panic(0)
        feed_bpms(e, [125] * 10, start_ms=1000)
        assert e.state == Countdown(Cause.PANIC, 14000)


def feed_rest(engine, start_ms, duration_ms, vec=(0.0, 0.0, 1.0), step_ms=20):
    for t in range(start_ms, start_ms + duration_ms, step_ms):
        engine.ingest_motion(MotionSample(t, *vec))
    return start_ms + duration_ms


class TestMotionRules:
    def test_resting_gravity_never_triggers(self):
        e = DetectionEngine()
        feed_rest(e, 0, 2000)
        assert e.state == Monitoring()

    @pytest.mark.parametrize("vec", [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)])
    def test_axis_permutations_at_rest(self, vec):
        e = DetectionEngine()
        feed_rest(e, 0, 2000, vec=vec)
        assert e.state == Monitoring()

    def test_sustained_free_fall_starts_countdown(self):
        e = DetectionEngine()
        t = feed_rest(e, 0, 1000)
        for dt in range(0, 320, 20):
            e.ingest_motion(MotionSample(t + dt, 0.0, 0.0, 0.1))
        # 0.1 g < 0.35 g held for >= 200 ms; countdown entered at t + 200.
        assert e.state == Countdown(Cause.CRASH, t + 200 + TH.countdown_ms)

    def test_brief_free_fall_does_not_trigger(self):
        e = DetectionEngine()
        t = feed_rest(e, 0, 1000)
        for dt in range(0, 180, 20):
            e.ingest_motion(MotionSample(t + dt, 0.0, 0.0, 0.1))
        feed_rest(e, t + 180, 500)
        assert e.state == Monitoring()

    def test_single_impact_sample_starts_countdown(self):
        e = DetectionEngine()
        t = feed_rest(e, 0, 1000)
        e.ingest_motion(MotionSample(t, 0.0, 0.0, 3.0))
        assert e.state == Countdown(Cause.CRASH, t + TH.countdown_ms)

    def test_tilt_against_trailing_mean(self):
        e = DetectionEngine()
        t = feed_rest(e, 0, 1000)
        e.ingest_motion(MotionSample(t, 1.0, 0.0, 0.0))  # 90 deg off gravity
        assert e.state == Countdown(Cause.CRASH, t + TH.countdown_ms)

    def test_crash_overrides_pending_debounce(self):
        e = DetectionEngine()
        feed_bpms(e, [125, 125])
        assert isinstance(e.state, Suspected)
        e.ingest_motion(MotionSample(2500, 0.0, 0.0, 3.0))
        assert e.state == Countdown(Cause.CRASH, 2500 + TH.countdown_ms)

    def test_motion_sample_validation(self):
        with pytest.raises(ValueError):
            MotionSample(0, 17.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            MotionSample(0, float("nan"), 0.0, 0.0)

    def test_non_monotonic_motion_rejected(self):
        e = DetectionEngine()
        e.ingest_motion(MotionSample(100, 0.0, 0.0, 1.0))
        with pytest.raises(OrderingError):
            e.ingest_motion(MotionSample(99, 0.0, 0.0, 1.0))


class TestPanicCountdown:
    def test_panic_from_monitoring(self):
        e = DetectionEngine()
        tr = e.press_panic(0)
        assert tr is not None
        assert e.state == Countdown(Cause.PANIC, 14000)

    def test_panic_during_crash_countdown_is_noop(self):
        e = DetectionEngine()
        feed_rest(e, 0, 500)
        e.ingest_motion(MotionSample(500, 0.0, 0.0, 3.0))
        before = e.state
        assert e.press_panic(600) is None
        assert e.state == before

    def test_panic_overrides_suspected(self):
        e = DetectionEngine()
        feed_bpms(e, [125, 125])
        tr = e.press_panic(2500)
        assert tr is not None
        assert e.state == Countdown(Cause.PANIC, 2500 + 14000)

    def test_cancel_during_countdown(self):
        e = DetectionEngine()
        e.press_panic(0)
        e.cancel(5000)
        assert e.state == Cancelled(5000)

    def test_cancel_without_countdown_is_state_error(self):
        e = DetectionEngine()
        with pytest.raises(StateError):
            e.cancel(0)

    def test_cancel_one_ms_before_deadline(self):
        e = DetectionEngine()
        e.press_panic(0)
        e.cancel(13999)
        assert e.state == Cancelled(13999)

    def test_send_now_fires_immediately(self):
        e = DetectionEngine()
        e.press_panic(0)
        e.send_now(3000)
        assert e.state == Triggered(Cause.PANIC, 3000)

    def test_send_now_preserves_crash_cause(self):
        e = DetectionEngine()
        e.ingest_motion(MotionSample(0, 0.0, 0.0, 3.0))
        e.send_now(100)
        assert e.state == Triggered(Cause.CRASH, 100)

    def test_send_after_trigger_is_state_error(self):
        e = DetectionEngine()
        e.press_panic(0)
        e.send_now(3000)
        with pytest.raises(StateError):
            e.send_now(4000)


class TestTick:
    def test_tick_before_deadline_is_noop(self):
        e = DetectionEngine()
        e.press_panic(0)
        assert e.tick(13999) == []
        assert e.state == Countdown(Cause.PANIC, 14000)

    def test_tick_at_deadline_triggers_at_deadline(self):
        e = DetectionEngine()
        e.press_panic(0)
        trs = e.tick(14000)
        assert len(trs) == 1
        assert e.state == Triggered(Cause.PANIC, 14000)

    def test_late_tick_still_records_deadline_time(self):
        e = DetectionEngine()
        e.press_panic(0)
        e.tick(19999)
        assert e.state == Triggered(Cause.PANIC, 14000)

    def test_tick_in_monitoring_is_noop(self):
        e = DetectionEngine()
        assert e.tick(123456) == []

    def test_liveness_any_countdown_eventually_fires(self):
        for start in (0, 123, 99999):
            e = DetectionEngine()
            e.press_panic(start)
            assert e.tick(start + TH.countdown_ms - 1) == []
            assert e.tick(start + TH.countdown_ms) != []
            assert e.state == Triggered(Cause.PANIC, start + TH.countdown_ms)


class TestReset:
    def test_reset_from_cancelled(self):
        e = DetectionEngine()
        e.press_panic(0)
        e.cancel(5000)
        e.reset(5001)
        assert e.state == Monitoring()

    def test_reset_from_triggered(self):
        e = DetectionEngine()
        feed_bpms(e, [125] * 5)
        e.reset(6000)
        assert e.state == Monitoring()

    def test_reset_during_countdown_is_state_error(self):
        e = DetectionEngine()
        e.press_panic(0)
        with pytest.raises(StateError):
            e.reset(1)

    def test_fresh_debounce_after_reset(self):
        e = DetectionEngine()
        feed_bpms(e, [125] * 5)
        e.reset(6000)
        feed_bpms(e, [125] * 4, start_ms=7000)
        assert isinstance(e.state, Suspected)
        assert e.state.count == 4


class TestDeterminism:
    def run_scenario(self):
        e = DetectionEngine()
        out = []
        out += feed_bpms(e, [74, 125, 125, 74], start_ms=0)
        for t in range(4000, 5000, 20):
            out += e.ingest_motion(MotionSample(t, 0.0, 0.0, 1.0))
        tr = e.press_panic(5000)
        out += [tr] if tr else []
        out += e.tick(12000)
        out += [e.cancel(13000)]
        out += [e.reset(13500)]
        out += feed_bpms(e, [55] * 5, start_ms=14000)
        return json.dumps([t.to_dict() for t in out], sort_keys=True)

    def test_identical_runs_serialize_identically(self):
        assert self.run_scenario() == self.run_scenario()


def test_state_dict_round_trip():
    states = [
        Monitoring(),
        Suspected(Cause.TACHYCARDIA, 3, 1000),
        Countdown(Cause.CRASH, 14200),
        Triggered(Cause.PANIC, 9000),
        Cancelled(500),
    ]
    for s in states:
        assert state_from_dict(state_to_dict(s)) == s


def test_thresholds_validation():
    with pytest.raises(ValueError):
        Thresholds(hr_low=120, hr_high=60)
    with pytest.raises(ValueError):
        Thresholds(countdown_ms=0)
    with pytest.raises(ValueError):
        Thresholds(consecutive_abnormal=0)
