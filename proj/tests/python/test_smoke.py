import pathlib

import pytest

import hiddenflow as hf

MODELS = pathlib.Path(__file__).resolve().parents[2] / "models"


def model(name):
    return MODELS / f"{name}.json"


def test_canonicalize_puts_the_device_first():
    observed = {
        "initiator": "phone",
        "responder": "device",
        "initiator_port": None,
        "responder_port": 9999,
        "transport": "tcp",
        "direction": "bi",
        "app": None,
    }
    c = hf.canonicalize(observed)
    assert c["initiator"] == "device"
    assert c["initiator_port"] == 9999
    assert list(c) == ["initiator", "responder", "initiator_port", "responder_port", "transport", "direction", "app"]


def test_profile_matches_oracle_and_reports_hidden_flows():
    tree = hf.profile(model("hs110_toggle"))
    assert tree == hf.oracle_tree(model("hs110_toggle"))
    r = hf.report(tree, "toggle")
    assert r["first_level_flows"] == 7
    assert r["robustness_score"] == 4
    assert {"n-wap.tplinkcloud.com", "n-devs.tplinkcloud.com"} <= set(r["dns"]["domains_hidden"])
    assert "digraph" in hf.tree_dot(tree)
    csv = hf.render_csv([("toggle", tree)])
    assert csv.splitlines()[1].startswith("toggle,")


def test_rules_round_trip():
    flows = [
        {
            "initiator": "device",
            "responder": "dom:use1-api.tplinkra.com",
            "initiator_port": None,
            "responder_port": 443,
            "transport": "tcp",
            "direction": "bi",
            "app": None,
        }
    ]
    text = hf.compile_rules(flows)
    assert text == "block tcp init device resp dom:use1-api.tplinkra.com:443 dir bi\n"
    assert hf.parse_rules(text) == text
    assert hf.decompile_rules(text) == flows
    with pytest.raises(hf.RuleSyntaxError):
        hf.parse_rules("allow tcp init device resp phone dir bi\n")


def test_signature_threshold():
    a = {"initiator": "device", "responder": "phone", "initiator_port": 9999, "responder_port": None,
         "transport": "udp", "direction": "bi", "app": None}
    sig = hf.extract_signature([[a], [a]], 4)
    assert sig["m_plus"] == 2 and sig["accepted"]
    assert not hf.extract_signature([[a]], 4)["accepted"]


def test_cli_and_pcap(tmp_path):
    code, _, err = hf.run_cli("simulate", "--model", model("appendix_c"), "--m", "2", "--out-dir", tmp_path)
    assert code == 0, err
    packets = hf.read_pcap(tmp_path / "capture-000.pcap")
    assert packets and all("ts" in p and "src" in p for p in packets)
    code, _, err = hf.run_cli("extract", "--dir", tmp_path, "--m", "2", "--out-dir", tmp_path)
    assert code == 0, err
    code, _, err = hf.run_cli("profile", "--model", tmp_path / "missing.json")
    assert code == 1 and err.startswith("hiddenflow: error:")


def test_errors_are_typed(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": 1}')
    with pytest.raises(hf.SchemaError):
        hf.load_model(bad)
    assert issubclass(hf.RootFailed, hf.HiddenflowError)
