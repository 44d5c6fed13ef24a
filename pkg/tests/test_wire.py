"""Wire protocol framing plus the socket deployment of hub and wallet."""

import json
import threading
import time

import pytest

from hubpay import cli
from hubpay.errors import EncodingError
from hubpay.server import HubServer, build_hub_config, build_ledgers
from hubpay.wire import (
    KINDS,
    WireMessage,
    decode_frames,
    encode_frame,
    error_message,
)


# -- framing ------------------------------------------------------------------------

def test_frame_round_trip():
    msg = WireMessage("PROMISE", {"payment_id": "p1", "promise": {"amount": 5}})
    frames, rest = decode_frames(encode_frame(msg))
    assert rest == b""
    assert frames == [msg]


def test_partial_frames_wait_for_more_bytes():
    msg = WireMessage("SECRET", {"secret": {"hashlock": "ab" * 32}})
    blob = encode_frame(msg)
    frames, rest = decode_frames(blob[:7])
    assert frames == [] and rest == blob[:7]
    frames, rest = decode_frames(blob + blob[:3])
    assert len(frames) == 1 and rest == blob[:3]


def test_multiple_frames_in_one_buffer():
    one = encode_frame(WireMessage("OK", {"client_id": "alice"}))
    two = encode_frame(error_message("NoRoute", "x"))
    frames, rest = decode_frames(one + two)
    assert [f.kind for f in frames] == ["OK", "ERROR"]
    assert rest == b""


def test_unknown_kind_rejected():
    with pytest.raises(EncodingError):
        WireMessage("GOSSIP", {}).to_bytes()
    blob = encode_frame(WireMessage("OK", {}))
    tampered = blob.replace(b'"kind":"OK"', b'"kind":"NO"')
    with pytest.raises(EncodingError):
        decode_frames(tampered)


def test_spec_protocol_kinds_all_present():
    required = {"REGISTER", "PROPOSAL_RELAY", "PROMISE", "SECRET", "RECEIPT",
                "CLOSE_REQUEST", "ERROR"}
    assert required <= KINDS


def test_oversize_frame_rejected():
    import struct

    with pytest.raises(EncodingError):
        decode_frames(struct.pack(">I", 1 << 25) + b"x")


# -- socket deployment -------------------------------------------------------------------

@pytest.fixture()
def live_hub():
    config = {
        "ledgers": [{"ledger_id": "L1", "scheme": "SCHEME_A",
                     "genesis": {"alice": 1000, "bob": 1000, "hub": 100_000}}],
        "fee_bps": 0, "claim_margin_delta": 40, "dispute_window": 60,
        "channel_float": 5000,
    }
    server = HubServer(build_hub_config(config), build_ledgers(config),
                       port=0, tick_seconds=0.01)
    server.start_background()
    yield server, f"127.0.0.1:{server.address[1]}"
    server.shutdown()


def test_wallet_cli_full_lifecycle(live_hub, tmp_path, capsys):
    _, addr = live_hub
    a_state = str(tmp_path / "alice.json")
    b_state = str(tmp_path / "bob.json")

    assert cli.wallet_main(["--hub", addr, "--state", a_state, "register",
                            "--id", "alice", "--ledger", "L1"]) == 0
    assert cli.wallet_main(["--hub", addr, "--state", b_state, "register",
                            "--id", "bob", "--ledger", "L1"]) == 0
    assert cli.wallet_main(["--hub", addr, "--state", a_state,
                            "deposit", "500"]) == 0

    results = {}

    def run_invoice():
        results["rc"] = cli.wallet_main(["--hub", addr, "--state", b_state,
                                         "invoice", "75", "--timeout", "20"])

    listener = threading.Thread(target=run_invoice)
    listener.start()
    time.sleep(0.3)
    assert cli.wallet_main(["--hub", addr, "--state", a_state, "pay", "bob",
                            "75", "--timeout", "20"]) == 0
    listener.join(timeout=25)
    assert results["rc"] == 0

    capsys.readouterr()
    assert cli.wallet_main(["--hub", addr, "--state", a_state, "balance"]) == 0
    balance = json.loads(capsys.readouterr().out)
    assert balance["credit_sent"] == 75 and balance["available"] == 425

    assert cli.wallet_main(["--hub", addr, "--state", a_state,
                            "log", "--json"]) == 0
    log = json.loads(capsys.readouterr().out)
    assert log["payments"][0]["outcome"] == "PAID"

    assert cli.wallet_main(["--hub", addr, "--state", a_state, "close",
                            "--timeout", "30"]) == 0
    close = json.loads(capsys.readouterr().out)
    assert close["settlement"] == {"alice": 425, "hub": 5075}


def test_wallet_pay_without_listener_fails_nonzero(live_hub, tmp_path, capsys):
    _, addr = live_hub
    a_state = str(tmp_path / "a.json")
    assert cli.wallet_main(["--hub", addr, "--state", a_state, "register",
                            "--id", "alice", "--ledger", "L1"]) == 0
    assert cli.wallet_main(["--hub", addr, "--state", a_state,
                            "deposit", "100"]) == 0
    capsys.readouterr()
    rc = cli.wallet_main(["--hub", addr, "--state", a_state, "pay", "ghost",
                          "10", "--timeout", "3"])
    assert rc == 1
    out = json.loads(capsys.readouterr().out)
    assert out["outcome"] == "FAILED"


def test_admin_channels_and_snapshot(live_hub, tmp_path, capsys):
    server, addr = live_hub
    a_state = str(tmp_path / "a.json")
    assert cli.wallet_main(["--hub", addr, "--state", a_state, "register",
                            "--id", "alice", "--ledger", "L1"]) == 0
    capsys.readouterr()
    assert cli.hub_main(["channels", "list", "--addr", addr]) == 0
    listing = json.loads(capsys.readouterr().out)
    assert listing["channels"][0]["client"] == "alice"

    assert cli.hub_main(["snapshot", "--addr", addr]) == 0
    snap = json.loads(capsys.readouterr().out)
    assert "hub" in snap["snapshot"] and "ledgers" in snap["snapshot"]


def test_admin_close_forces_dispute(live_hub, tmp_path, capsys):
    server, addr = live_hub
    a_state = str(tmp_path / "a.json")
    assert cli.wallet_main(["--hub", addr, "--state", a_state, "register",
                            "--id", "alice", "--ledger", "L1"]) == 0
    with open(a_state, "r", encoding="utf-8") as fh:
        channel_id = json.load(fh)["channel_id"]
    capsys.readouterr()
    assert cli.hub_main(["close", channel_id, "--addr", addr]) == 0
    deadline = time.monotonic() + 2
    while time.monotonic() < deadline:
        with server.lock:
            status = server.ledgers["L1"].contracts[channel_id].status
        if status == "CLOSING":
            break
        time.sleep(0.02)
    assert status == "CLOSING"


def test_simnet_cli_run_and_bench(tmp_path, capsys):
    from hubpay.scenarios import happy_path

    scenario_path = tmp_path / "happy.json"
    scenario_path.write_text(json.dumps(happy_path()))
    trace_path = tmp_path / "trace.jsonl"
    report_path = tmp_path / "report.json"
    rc = cli.simnet_main(["run", str(scenario_path), "--trace", str(trace_path),
                          "--report", str(report_path)])
    assert rc == 0
    capsys.readouterr()
    assert trace_path.exists() and report_path.exists()
    lines = trace_path.read_text().splitlines()
    assert all(json.loads(line) for line in lines)

    rc = cli.simnet_main(["bench", "--n", "25", "--mode", "concurrent"])
    out = json.loads(capsys.readouterr().out)
    assert rc == 0 and out["payments_paid"] == 25


def test_simnet_cli_fails_on_unmet_expectation(tmp_path, capsys):
    from hubpay.scenarios import happy_path

    scenario = happy_path()
    scenario["expectations"] = [{"kind": "exact-balance", "actor": "alice",
                                 "value": 1}]
    path = tmp_path / "fail.json"
    path.write_text(json.dumps(scenario))
    assert cli.simnet_main(["run", str(path)]) == 1
    capsys.readouterr()
