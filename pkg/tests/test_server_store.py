import json

import pytest

from loratrack import frames, udp_protocol
from loratrack.frames import UplinkPayload, build_frame, encode_payload
from loratrack.geo import point_in_polygon
from loratrack.server import NetworkServer, adr_decide
from loratrack.store import (DeviceRecord, FencePolygon, StepBucket, Store,
                             TrackPoint)
from loratrack.udp_protocol import Rxpk, decode_datagram, encode_push_data

KEY = bytes(range(16))
ADDR_HEX = "01020304"
ADDR = 0x01020304
EUI = bytes.fromhex("aabbccddeeff0011")


def make_server(tmp_path=None, **kwargs):
    store = Store(tmp_path / "store.jsonl" if tmp_path else None)
    return NetworkServer(store, {ADDR_HEX: KEY}, **kwargs), store


def uplink_datagram(fcnt, tmst=3_600_000_000, lat=39.9042, lon=116.4074,
                    windows=(80, 80, 80, 80, 80, 80), sf=12, rssi=-95.1,
                    snr=21.9, token=b"\x11\x22", key=KEY, battery=98):
    payload = UplinkPayload.build(lat, lon, list(windows), battery)
    frame = build_frame(encode_payload(payload), fcnt, ADDR, key)
    rxpk = Rxpk.from_reception(frame, tmst=tmst, freq_hz=433e6, sf=sf,
                               bw_hz=125_000, cr_denominator=5,
                               rssi_dbm=rssi, snr_db=snr)
    return encode_push_data(token, EUI, [rxpk])


class TestProtocolTransfer:
    def test_accepts_fresh_fcnt(self, tmp_path):
        server, store = make_server(tmp_path)
        responses = server.handle_datagram(uplink_datagram(fcnt=6))
        assert len(responses) == 1
        ack = decode_datagram(responses[0])
        assert ack.identifier == udp_protocol.PUSH_ACK
        assert ack.token == b"\x11\x22"
        assert store.devices[ADDR_HEX].last_fcnt == 6
        assert server.counters.accepted == 1

    def test_gateway_retry_is_replay_rejected(self, tmp_path):
        server, store = make_server(tmp_path)
        datagram = uplink_datagram(fcnt=5)
        server.handle_datagram(datagram)
        server.handle_datagram(datagram)
        assert server.counters.accepted == 1
        assert server.counters.replay_rejected == 1
        assert len(store.tracks[ADDR_HEX]) == 1

    def test_each_duplicate_rejected_once(self, tmp_path):
        server, _ = make_server(tmp_path)
        datagram = uplink_datagram(fcnt=5)
        for _ in range(4):
            server.handle_datagram(datagram)
        assert server.counters.accepted == 1
        assert server.counters.replay_rejected == 3

    def test_old_fcnt_rejected(self, tmp_path):
        server, _ = make_server(tmp_path)
        server.handle_datagram(uplink_datagram(fcnt=5))
        server.handle_datagram(uplink_datagram(fcnt=4))
        assert server.counters.replay_rejected == 1

    def test_corrupt_base64_still_acked(self, tmp_path):
        server, _ = make_server(tmp_path)
        rxpk = {"tmst": 1, "freq": 433.0, "datr": "SF12BW125", "codr": "4/5",
                "rssi": -95, "lsnr": 21.9, "size": 29, "data": "!!!not-base64"}
        body = json.dumps({"rxpk": [rxpk]}, sort_keys=True).encode()
        datagram = b"\x02\xaa\xbb\x00" + EUI + body
        responses = server.handle_datagram(datagram)
        assert decode_datagram(responses[0]).identifier == udp_protocol.PUSH_ACK
        assert server.counters.transport_errors == 1

    def test_malformed_json_still_acked(self, tmp_path):
        server, _ = make_server(tmp_path)
        datagram = b"\x02\xaa\xbb\x00" + EUI + b"{broken"
        responses = server.handle_datagram(datagram)
        assert decode_datagram(responses[0]).identifier == udp_protocol.PUSH_ACK
        assert server.counters.transport_errors == 1

    def test_bad_mic_counted(self, tmp_path):
        server, _ = make_server(tmp_path)
        server.handle_datagram(uplink_datagram(fcnt=1, key=bytes(16)))
        assert server.counters.mic_failures == 1
        assert server.counters.accepted == 0

    def test_unknown_device_counted(self, tmp_path):
        store = Store(tmp_path / "s.jsonl")
        server = NetworkServer(store, {})   # empty registry
        server.handle_datagram(uplink_datagram(fcnt=1))
        assert server.counters.unknown_device == 1


class TestIngest:
    def test_bucket_backdating(self, tmp_path):
        server, store = make_server(tmp_path)
        server.handle_datagram(uplink_datagram(fcnt=1, tmst=3_600_000_000))
        starts = [b.window_start_ms for b in store.steps[ADDR_HEX]]
        assert starts == [0.0, 600_000.0, 1_200_000.0, 1_800_000.0,
                          2_400_000.0, 3_000_000.0]

    def test_steps_decode_times_eight(self, tmp_path):
        server, store = make_server(tmp_path)
        server.handle_datagram(uplink_datagram(fcnt=1, windows=(1200, 0, 0, 0, 0, 0)))
        assert [b.steps for b in store.steps[ADDR_HEX]] == [1200, 0, 0, 0, 0, 0]

    def test_track_point_fields(self, tmp_path):
        server, store = make_server(tmp_path)
        server.handle_datagram(uplink_datagram(fcnt=1, rssi=-95.1, snr=21.94))
        point = store.tracks[ADDR_HEX][0]
        assert point.t_ms == 3_600_000.0
        assert point.rssi_dbm == -95.0    # rxpk integer rounding
        assert point.snr_db == 21.9
        assert point.sf == 12
        assert point.lat_deg == pytest.approx(39.9042, abs=1e-5)

    def test_device_record_updates(self, tmp_path):
        server, store = make_server(tmp_path)
        server.handle_datagram(uplink_datagram(fcnt=1, battery=97, sf=11))
        record = store.devices[ADDR_HEX]
        assert record.battery_pct == 97
        assert record.current_sf == 11
        assert record.snr_history == [21.9]


class TestAdr:
    def test_worked_example_sf12_clamps_to_sf7(self):
        record = DeviceRecord(dev_addr=ADDR_HEX, current_sf=12,
                              snr_history=[21.9] * 4)
        # margin 21.9 - (-20) - 10 = 31.9 -> 12 steps -> clamp at 7
        assert adr_decide(record) == 7

    def test_sf7_never_lowered(self):
        record = DeviceRecord(dev_addr=ADDR_HEX, current_sf=7,
                              snr_history=[30.0] * 8)
        assert adr_decide(record) is None

    def test_zero_margin_no_command(self):
        record = DeviceRecord(dev_addr=ADDR_HEX, current_sf=12,
                              snr_history=[-20.0 + 10.0] * 4)
        assert adr_decide(record) is None

    def test_needs_four_samples(self):
        record = DeviceRecord(dev_addr=ADDR_HEX, current_sf=12,
                              snr_history=[21.9] * 3)
        assert adr_decide(record) is None

    def test_small_positive_margin_below_one_step(self):
        record = DeviceRecord(dev_addr=ADDR_HEX, current_sf=12,
                              snr_history=[-8.0] * 4)   # margin 2.0 -> 0 steps
        assert adr_decide(record) is None

    def test_downlink_queued_and_flushed_on_pull(self, tmp_path):
        server, _ = make_server(tmp_path)
        for fcnt in range(1, 5):
            server.handle_datagram(uplink_datagram(fcnt=fcnt,
                                                   tmst=fcnt * 3_600_000_000))
        assert len(server.pending_downlinks) == 1
        txpk = server.pending_downlinks[0]
        assert txpk.tmst == 4 * 3_600_000_000 + 1_000_000   # RX1 target
        responses = server.handle_datagram(
            udp_protocol.encode_pull_data(b"\x77\x88", EUI))
        kinds = [decode_datagram(r).identifier for r in responses]
        assert kinds == [udp_protocol.PULL_RESP, udp_protocol.PULL_ACK]
        assert decode_datagram(responses[-1]).token == b"\x77\x88"
        # queue drained
        again = server.handle_datagram(udp_protocol.encode_pull_data(b"\x79\x88", EUI))
        assert len(again) == 1

    def test_downlink_frame_parses_for_device(self, tmp_path):
        server, _ = make_server(tmp_path)
        for fcnt in range(1, 5):
            server.handle_datagram(uplink_datagram(fcnt=fcnt,
                                                   tmst=fcnt * 3_600_000_000))
        txpk = server.pending_downlinks[0]
        frame = frames.parse_frame(txpk.frame_bytes(), KEY)
        assert frame.mhdr == frames.MHDR_DOWNLINK
        assert frames.parse_adr_command(frame.frm_payload) == 7


class TestFence:
    SQUARE = [(39.9, 116.4), (39.9, 116.5), (40.0, 116.5), (40.0, 116.4)]

    def test_point_in_polygon_basics(self):
        square = [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]
        assert point_in_polygon(0.5, 0.5, square)
        assert not point_in_polygon(2.0, 2.0, square)
        assert point_in_polygon(1.0, 0.5, square)   # on edge counts as inside
        assert point_in_polygon(0.0, 0.0, square)   # vertex
        with pytest.raises(ValueError):
            point_in_polygon(0.0, 0.0, [(0.0, 0.0), (1.0, 1.0)])

    def test_exit_event_on_leaving(self, tmp_path):
        server, store = make_server(tmp_path)
        server.put_fence(ADDR_HEX, self.SQUARE)
        server.handle_datagram(uplink_datagram(fcnt=1, lat=39.95, lon=116.45,
                                               tmst=1_000_000))
        server.handle_datagram(uplink_datagram(fcnt=2, lat=39.95, lon=116.60,
                                               tmst=2_000_000))
        events = store.fence_events[ADDR_HEX]
        assert [e.event for e in events] == ["entered", "exited"]
        assert events[1].t_ms == 2_000.0

    def test_events_alternate(self, tmp_path):
        server, store = make_server(tmp_path)
        server.put_fence(ADDR_HEX, self.SQUARE)
        inside = (39.95, 116.45)
        outside = (39.95, 116.60)
        positions = [inside, inside, outside, outside, inside, outside, inside]
        for i, (lat, lon) in enumerate(positions, start=1):
            server.handle_datagram(uplink_datagram(fcnt=i, lat=lat, lon=lon,
                                                   tmst=i * 1_000_000))
        kinds = [e.event for e in store.fence_events[ADDR_HEX]]
        assert kinds == ["entered", "exited", "entered", "exited", "entered"]
        assert all(a != b for a, b in zip(kinds, kinds[1:]))

    def test_degenerate_polygon_rejected(self):
        with pytest.raises(ValueError):
            FencePolygon(dev_addr=ADDR_HEX, vertices=((0.0, 0.0), (1.0, 1.0)))


class TestStorePersistence:
    def test_restart_rebuilds_identical_state(self, tmp_path):
        server, store = make_server(tmp_path)
        server.put_fence(ADDR_HEX, TestFence.SQUARE)
        for fcnt in range(1, 4):
            server.handle_datagram(uplink_datagram(
                fcnt=fcnt, tmst=fcnt * 3_600_000_000, lat=39.95, lon=116.45))
        reopened = Store(tmp_path / "store.jsonl")
        assert reopened.tracks == store.tracks
        assert reopened.steps == store.steps
        assert reopened.devices == store.devices
        assert reopened.fences == store.fences
        assert reopened.fence_events == store.fence_events

    def test_duplicate_keys_skipped(self, tmp_path):
        store = Store(tmp_path / "s.jsonl")
        point = TrackPoint(ADDR_HEX, 1, 1.0, 0.0, 0.0, -90.0, 10.0, 12)
        assert store.add_track(point)
        assert not store.add_track(point)
        assert len(store.tracks[ADDR_HEX]) == 1

    def test_write_failure_queues_and_retries(self, tmp_path, monkeypatch):
        store = Store(tmp_path / "s.jsonl")
        original = Store._write_line
        fail_next = {"on": True}

        def flaky(self, row):
            if fail_next["on"]:
                fail_next["on"] = False
                raise OSError("disk hiccup")
            return original(self, row)

        monkeypatch.setattr(Store, "_write_line", flaky)
        b1 = StepBucket(ADDR_HEX, 1, 0.0, 10)
        b2 = StepBucket(ADDR_HEX, 1, 600_000.0, 20)
        store.add_steps(b1)           # file write fails, stays queued
        assert len(store.steps[ADDR_HEX]) == 1
        store.add_steps(b2)           # retries the queued row first
        assert store.flush_pending() == 0
        monkeypatch.undo()
        reopened = Store(tmp_path / "s.jsonl")
        assert [b.steps for b in reopened.steps[ADDR_HEX]] == [10, 20]

    def test_memory_only_store(self):
        store = Store(None)
        store.add_track(TrackPoint(ADDR_HEX, 1, 1.0, 0.0, 0.0, -90.0, 10.0, 12))
        assert len(store.tracks[ADDR_HEX]) == 1
