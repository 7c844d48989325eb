import threading
import time

import pytest

from tilewire import transport
from tilewire.transport import LineScheduler, LocalChannel, ThrottleSpec


class TestThrottleModel:
    def test_16mib_at_100mbit_deadline(self):
        chan = LocalChannel(ThrottleSpec(bandwidth_bps=1e8))
        t0 = time.monotonic()
        deadline = chan.send_bytes(b"\0" * (16 * 2**20))
        assert deadline - t0 >= 1.342
        assert deadline - t0 < 1.60

    def test_zero_bytes_costs_latency_only(self):
        chan = LocalChannel(ThrottleSpec(bandwidth_bps=1e8, latency_s=0.25))
        t0 = time.monotonic()
        deadline = chan.send_bytes(b"")
        assert 0.25 <= deadline - t0 < 0.26

    def test_paper_transfer_time_via_effective_bandwidth(self):
        # a 16 MiB payload observed to take 1.75 s corresponds to ~76.7 Mbit/s
        eff = 16 * 2**20 * 8 / 1.75
        assert abs(eff - 76.7e6) / 76.7e6 < 0.01
        chan = LocalChannel(ThrottleSpec(bandwidth_bps=eff))
        t0 = time.monotonic()
        deadline = chan.send_bytes(b"\0" * (16 * 2**20))
        assert abs((deadline - t0) - 1.75) < 0.01

    def test_measured_delivery_within_10pct(self):
        payload = b"\x5a" * (2**20)
        chan = LocalChannel(ThrottleSpec(bandwidth_bps=5e7))
        expected = 8 * len(payload) / 5e7
        t0 = time.monotonic()
        chan.send_bytes(payload)
        got = chan.recv_bytes()
        elapsed = time.monotonic() - t0
        assert got == payload
        assert abs(elapsed - expected) / expected < 0.10

    def test_fifo_order_preserved(self):
        chan = LocalChannel(ThrottleSpec(bandwidth_bps=1e9))
        for i in range(20):
            chan.send_bytes(bytes([i]) * 10)
        for i in range(20):
            assert chan.recv_bytes() == bytes([i]) * 10

    def test_shared_line_serializes(self):
        line = LineScheduler()
        spec = ThrottleSpec(bandwidth_bps=1e8)
        a = LocalChannel(spec, line)
        b = LocalChannel(spec, line)
        t0 = time.monotonic()
        da = a.send_bytes(b"\0" * 10**6)
        db = b.send_bytes(b"\0" * 10**6)
        assert da - t0 >= 0.08
        assert db - da >= 0.079  # second transfer waits for the line

    def test_send_after_close_errors(self):
        chan = LocalChannel(ThrottleSpec(bandwidth_bps=1e8))
        chan.close()
        with pytest.raises(transport.ChannelClosed):
            chan.send_bytes(b"x")

    def test_recv_sees_eof_after_close(self):
        chan = LocalChannel()
        chan.send_bytes(b"last")
        chan.close()
        assert chan.recv_bytes() == b"last"
        assert chan.recv_bytes() is None
        assert chan.recv_bytes() is None

    def test_recv_timeout(self):
        chan = LocalChannel()
        with pytest.raises(TimeoutError):
            chan.recv_bytes(timeout=0.05)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            ThrottleSpec(bandwidth_bps=0)
        with pytest.raises(ValueError):
            ThrottleSpec(bandwidth_bps=1, latency_s=-1)


class TestSockets:
    def test_loopback_round_trip(self):
        srv = transport.listen("127.0.0.1", 0)
        port = srv.getsockname()[1]
        results = {}

        def server():
            conn, _ = srv.accept()
            chan = transport.SocketChannel(conn)
            buf = b""
            while len(buf) < 12:
                chunk = chan.recv_bytes()
                if chunk is None:
                    break
                buf += chunk
            results["got"] = buf
            chan.send_bytes(b"pong")
            chan.close()

        th = threading.Thread(target=server)
        th.start()
        cli = transport.SocketChannel(transport.connect("127.0.0.1", port))
        cli.send_bytes(b"hello world!")
        assert cli.recv_bytes() == b"pong"
        th.join()
        assert results["got"] == b"hello world!"
        assert cli.bytes_sent == 12
        srv.close()
        cli.close()
