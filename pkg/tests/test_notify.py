"""Fan-out tests: message template, retries, idempotence, controller emulator."""

import time as wall
from datetime import datetime, time, timezone

import pytest

from vigil.engine import Cause
from vigil.geo import GeoFix, Place, default_city_table, reverse_geocode
from vigil.notify import (
    ALERT_SENTENCE,
    ControllerEmulator,
    ControllerEmulatorServer,
    Dispatcher,
    LogicalClock,
    SinkConfig,
    compose_message,
    send_controller_alert,
)
from vigil.protocol import PipeChannel, TcpChannel

from .fakes import FakeHttpGateway, FakeSmtpServer, free_port

AT = datetime(2024, 5, 1, 12, 0, 0, tzinfo=timezone.utc)


def fix_at(lat, lon, quality=1):
    return GeoFix(lat, lon, time(12, 0, 0), quality, 8)


class TestCompose:
    def test_golden_body(self):
        msg = compose_message(
            Cause.PANIC, fix_at(48.1173, 11.516667), Place("Munich", "Germany"), AT
        )
        assert msg.body == (
            "This person is under emergency take necessary action. "
            "Cause: Panic. Location: Munich, Germany "
            "(+48.11730, +11.51667) at 2024-05-01T12:00:00Z."
        )

    def test_origin_formatting(self):
        msg = compose_message(Cause.CRASH, fix_at(0.0, 0.0), Place("Accra", "Ghana"), AT)
        assert "(+0.00000, +0.00000)" in msg.body

    def test_always_starts_with_fixed_sentence(self):
        for cause in Cause:
            msg = compose_message(cause, fix_at(-33.9, 18.4), Place("Cape Town", "South Africa"), AT)
            assert msg.body.startswith(ALERT_SENTENCE)

    def test_place_comes_from_geocode(self):
        table = default_city_table()
        fix = fix_at(48.11730, 11.51667)
        place = reverse_geocode(fix, table)
        msg = compose_message(Cause.PANIC, fix, place, AT)
        assert f"{place.city}, {place.country}" in msg.body

    def test_rejects_no_fix(self):
        with pytest.raises(ValueError):
            compose_message(Cause.PANIC, fix_at(0, 0, quality=0), Place("A", "B"), AT)

    def test_rejects_unresolved_place(self):
        with pytest.raises(ValueError):
            compose_message(Cause.PANIC, fix_at(0, 0), Place("", "B"), AT)


def make_msg():
    return compose_message(Cause.TACHYCARDIA, fix_at(56.16, 15.59), Place("Karlskrona", "Sweden"), AT)


class TestDispatch:
    def test_all_sinks_succeed(self):
        gw = FakeHttpGateway()
        smtp = FakeSmtpServer()
        try:
            sinks = [
                SinkConfig("sms", gw.url, "+46700000000"),
                SinkConfig("email", smtp.endpoint, "a@b.se"),
                SinkConfig("social", f"{gw.url}/wall", "wall-1"),
            ]
            records = Dispatcher(LogicalClock(5000)).dispatch("ep-1", make_msg(), sinks)
            assert [r.sink_kind for r in records] == ["sms", "email", "social"]
            assert all(r.status == "delivered" and r.attempts == 1 for r in records)
            assert all(r.first_at == 5000 and r.last_at == 5000 for r in records)
            assert all(r.last_error == "" for r in records)
        finally:
            gw.close()
            smtp.close()

    def test_unreachable_sink_does_not_block_others(self):
        gw = FakeHttpGateway()
        try:
            sinks = [
                SinkConfig("sms", f"http://127.0.0.1:{free_port()}", "+46700000000"),
                SinkConfig("social", f"{gw.url}/wall", "wall-1"),
            ]
            records = Dispatcher(LogicalClock(0)).dispatch("ep-2", make_msg(), sinks)
            by_kind = {r.sink_kind: r for r in records}
            assert by_kind["sms"].status == "exhausted"
            assert by_kind["sms"].attempts == 3
            assert by_kind["sms"].last_at == 3000  # 1 s + 2 s backoff
            assert by_kind["sms"].last_error != ""
            assert by_kind["social"].status == "delivered"
        finally:
            gw.close()

    def test_retry_then_success(self):
        gw = FakeHttpGateway()
        try:
            gw.fail_times = 1
            sinks = [SinkConfig("social", gw.url, "w")]
            records = Dispatcher(LogicalClock(100)).dispatch("ep-3", make_msg(), sinks)
            assert records[0].status == "delivered"
            assert records[0].attempts == 2
            assert records[0].first_at == 100
            assert records[0].last_at == 1100
        finally:
            gw.close()

    def test_idempotent_by_event_id(self):
        gw = FakeHttpGateway()
        try:
            sinks = [SinkConfig("social", gw.url, "w")]
            d = Dispatcher(LogicalClock(0))
            first = d.dispatch("ep-4", make_msg(), sinks)
            again = d.dispatch("ep-4", make_msg(), sinks)
            assert again is first
            assert len(gw.requests) == 1
        finally:
            gw.close()

    def test_record_count_matches_enabled_sinks(self):
        gw = FakeHttpGateway()
        try:
            sinks = [
                SinkConfig("social", gw.url, "a"),
                SinkConfig("sms", gw.url, "+46700000000", enabled=False),
                SinkConfig("social", f"{gw.url}/other", "b"),
            ]
            records = Dispatcher(LogicalClock(0)).dispatch("ep-5", make_msg(), sinks)
            assert len(records) == 2
        finally:
            gw.close()

    def test_email_content(self):
        smtp = FakeSmtpServer()
        try:
            sinks = [SinkConfig("email", smtp.endpoint, "contact@example.se")]
            records = Dispatcher(LogicalClock(0)).dispatch("ep-6", make_msg(), sinks)
            assert records[0].status == "delivered"
            deadline = wall.time() + 2
            while not smtp.messages and wall.time() < deadline:
                wall.sleep(0.01)
            (m,) = smtp.messages
            assert m["to"] == ["contact@example.se"]
            assert "Subject: EMERGENCY ALERT" in m["data"]
            assert ALERT_SENTENCE in m["data"]
        finally:
            smtp.close()

    def test_sms_payload_shape(self):
        gw = FakeHttpGateway()
        try:
            msg = make_msg()
            sinks = [SinkConfig("sms", gw.url, "+46700000000")]
            Dispatcher(LogicalClock(0)).dispatch("ep-7", msg, sinks)
            path, body = gw.requests[0]
            assert path == "/send"
            assert body == {"to": "+46700000000", "body": msg.body}
        finally:
            gw.close()


class TestSinkConfig:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            SinkConfig("pager", "http://x")

    def test_rejects_enabled_without_endpoint(self):
        with pytest.raises(ValueError):
            SinkConfig("sms", "")

    def test_disabled_without_endpoint_is_fine(self):
        SinkConfig("sms", "", enabled=False)

    def test_rejects_bad_phone(self):
        for bad in ("12345", "+123", "+123456789012345678", "+46a00000000"):
            with pytest.raises(ValueError):
                SinkConfig("sms", "http://x", bad)


class TestControllerEmulator:
    def test_blink_schedule(self):
        emu = ControllerEmulator()
        ch = PipeChannel()
        send_controller_alert(ch)
        emu.receive(ch.read(), now_ms=0)
        assert emu.blink_until_ms == 10_000
        for t, expect in [(0, True), (249, True), (250, False), (499, False), (500, True), (9_999, False)]:
            assert emu.led(t) is expect, t
        assert emu.led(10_000) is False

    def test_second_alert_extends_window(self):
        emu = ControllerEmulator()
        emu.receive(b"\x45", now_ms=0)
        emu.receive(b"\x45", now_ms=1000)
        assert emu.blink_until_ms == 11_000

    def test_unknown_bytes_counted_not_acted_on(self):
        emu = ControllerEmulator()
        emu.receive(b"\x00\x41\x45\x42", now_ms=0)
        assert emu.bad_bytes == 3
        assert emu.alerts == 1

    def test_led_pin_is_13(self):
        assert ControllerEmulator().led_pin == 13

    def test_tcp_alert_path(self):
        clock = LogicalClock(0)
        emu = ControllerEmulator()
        server = ControllerEmulatorServer(emu, clock.now_ms)
        try:
            ch = TcpChannel("127.0.0.1", server.port)
            send_controller_alert(ch)
            ch.close()
            deadline = wall.time() + 2
            while emu.alerts == 0 and wall.time() < deadline:
                wall.sleep(0.01)
            assert emu.alerts == 1
            assert emu.blink_until_ms == 10_000
        finally:
            server.close()

    def test_controller_sink_through_dispatcher(self):
        clock = LogicalClock(0)
        emu = ControllerEmulator()
        server = ControllerEmulatorServer(emu, clock.now_ms)
        try:
            sinks = [SinkConfig("controller", f"127.0.0.1:{server.port}")]
            records = Dispatcher(clock).dispatch("ep-8", make_msg(), sinks)
            assert records[0].status == "delivered"
            deadline = wall.time() + 2
            while emu.alerts == 0 and wall.time() < deadline:
                wall.sleep(0.01)
            assert emu.alerts == 1
        finally:
            server.close()

    def test_controller_sink_unreachable_is_retried(self):
        sinks = [SinkConfig("controller", f"127.0.0.1:{free_port()}")]
        records = Dispatcher(LogicalClock(0)).dispatch("ep-9", make_msg(), sinks)
        assert records[0].status == "exhausted"
        assert records[0].attempts == 3
