#include "doctest.h"

#include <algorithm>

#include "hiddenflow/errors.hpp"
#include "hiddenflow/simnet.hpp"
#include "support.hpp"

using namespace hiddenflow;
using namespace hf_test;

namespace {

const char* kMinimal = R"({
  "schema": 1,
  "topology": {"device": "192.168.0.100", "phone": "192.168.0.101", "gateway": "192.168.0.1",
               "local_prefixes": ["192.168.0.0/24"]},
  "dns_records": [["cloud.example.com", "52.1.2.3"]],
  "flows": [
    {"id": "a", "flow": {"initiator": "device", "responder": "dom:cloud.example.com", "initiator_port": null,
                         "responder_port": 443, "transport": "tcp", "direction": "bi", "app": null}},
    {"id": "b", "flow": {"initiator": "device", "responder": "phone", "initiator_port": 9999,
                         "responder_port": null, "transport": "udp", "direction": "bi", "app": null},
     "guard": [["a"]]}
  ],
  "success": {"or": [{"flow": "a"}, {"flow": "b"}]}
})";

Json minimal() { return Json::parse(kMinimal); }

template <class E>
void expect_load_error(const Json& doc, const std::string& fragment) {
    try {
        load_model(doc);
        FAIL("expected an error mentioning " << fragment);
    } catch (const E& e) {
        CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
}

RuleSet block(const DeviceModel& m, std::initializer_list<const char*> ids) {
    FlowSet flows;
    for (const char* id : ids) flows.insert(m.find(id)->flow);
    return compile(flows);
}

FlowSet flows_of(const DeviceModel& m, const std::set<std::string>& ids) {
    FlowSet out;
    for (const auto& id : ids) out.insert(m.find(id)->flow);
    return out;
}

}  // namespace

TEST_CASE("load_model validates references, cycles and domains") {
    CHECK_NOTHROW(load_model(minimal()));

    auto doc = minimal();
    doc["flows"][1]["guard"] = Json::parse(R"([["zzz"]])");
    expect_load_error<UnknownFlowRef>(doc, "zzz");

    doc = minimal();
    doc["flows"][0]["guard"] = Json::parse(R"([["b"]])");
    expect_load_error<GuardCycle>(doc, "guard cycle");

    doc = minimal();
    doc["flows"][0]["guard"] = Json::parse(R"([["a"]])");
    expect_load_error<GuardCycle>(doc, "'a'");

    doc = minimal();
    doc["dns_records"] = Json::array();
    expect_load_error<UnresolvedDomain>(doc, "cloud.example.com");

    doc = minimal();
    doc["success"] = Json::parse(R"({"and": [{"flow": "a"}, {"flow": "nope"}]})");
    expect_load_error<UnknownFlowRef>(doc, "nope");

    doc = minimal();
    doc["flows"][1]["id"] = "a";
    expect_load_error<SchemaError>(doc, "duplicate");

    doc = minimal();
    doc["schema"] = 2;
    expect_load_error<SchemaError>(doc, "schema");

    doc = minimal();
    doc["flows"][1]["packets"] = Json::parse(R"({"count": 9})");
    expect_load_error<SchemaError>(doc, "2-8");

    doc = minimal();
    doc["flows"][1]["flow"]["responder"] = "broadcast";
    expect_load_error<SchemaError>(doc, "unidirectional");

    doc = minimal();
    doc["flows"][1]["flow"]["responder"] = "ip:52.1.2.3";
    expect_load_error<SchemaError>(doc, "dom:cloud.example.com");

    doc = minimal();
    doc["dns_records"].push_back(Json::array({"other.example.com", "52.1.2.3"}));
    expect_load_error<SchemaError>(doc, "listed twice");

    doc = minimal();
    doc["noise"] = Json::parse(R"([{"id": "n", "flow": {"initiator": "phone", "responder": "broadcast",
        "initiator_port": null, "responder_port": 9999, "transport": "udp", "direction": "uni", "app": null},
        "p": 1.5}])");
    expect_load_error<SchemaError>(doc, "[0, 1]");
}

TEST_CASE("loading canonicalizes flows") {
    auto doc = minimal();
    doc["flows"][1]["flow"] = Json::parse(R"({"initiator": "phone", "responder": "device", "initiator_port": null,
        "responder_port": 9999, "transport": "udp", "direction": "bi", "app": null})");
    auto m = load_model(doc);
    CHECK(m.find("b")->flow == flow("device", 9999, "phone", std::nullopt, Transport::Udp));
    CHECK(load_model(m.to_json()).to_json() == m.to_json());
}

TEST_CASE("bundled models load") {
    for (const auto& name : bundled_names()) {
        CAPTURE(name);
        auto m = bundled(name);
        CHECK(m.name == name);
        CHECK(load_model(m.to_json()).to_json() == m.to_json());
    }
    auto hs = bundled("hs110_toggle");
    auto defaults = std::count_if(hs.flows.begin(), hs.flows.end(), [](const FlowSpec& f) { return f.guard.empty(); });
    CHECK(defaults == 7);
    CHECK(hs.flows.size() - static_cast<std::size_t>(defaults) == 4);
}

TEST_CASE("active_flows on the plug model") {
    auto m = bundled("hs110_toggle");
    std::set<std::string> defaults{"A", "B", "C", "D", "E", "F", "G"};
    CHECK(active_flows(m, {}) == defaults);

    auto with_a = defaults;
    with_a.insert({"H1", "H2"});
    CHECK(active_flows(m, block(m, {"A"})) == with_a);

    RuleSet everything;
    for (const auto& f : m.flows) everything.add(Rule::from_flow(f.flow));
    auto active = active_flows(m, everything);
    CHECK(active.size() == m.flows.size());
    CHECK(delivered_flows(m, everything).empty());
    CHECK_FALSE(event_succeeds(m, everything));
}

TEST_CASE("run_capture emits what the model says") {
    auto m = bundled("hs110_toggle");
    auto table = m.seed_table();
    for (std::uint64_t seed : {0u, 5u, 99u}) {
        auto cap = run_capture(m, {}, seed);
        CHECK(cap.success);
        CHECK(cap.seed == seed);
        CHECK(cap.emitted == active_flows(m, {}));
        for (std::size_t i = 1; i < cap.trace.packets.size(); ++i)
            CHECK(cap.trace.packets[i - 1].timestamp < cap.trace.packets[i].timestamp);
    }
    // Two captures are needed for ephemeral ports to drop out.
    auto caps = run_experiment(m, {}, 2, 0);
    std::vector<Trace> traces;
    for (const auto& c : caps) traces.push_back(filter_control_plane(c.trace));
    auto sets = aggregate_flows(traces, m.topology, table);
    for (const auto& s : sets) CHECK(s == flows_of(m, {"A", "B", "C", "D", "E", "F", "G"}));
}

TEST_CASE("blocking every control path makes the event fail") {
    auto m = bundled("hs110_toggle");
    // A and B (local control), their cloud fallbacks H1/H2, and the cloud
    // relay E; by hand: A,B false; H2,E false so the conjunction is false.
    auto rules = block(m, {"A", "B", "E", "H1", "H2"});
    CHECK_FALSE(event_succeeds(m, rules));
    auto cap = run_capture(m, rules, 3);
    CHECK_FALSE(cap.success);
    for (const auto& id : {"A", "B", "E", "H1", "H2"}) CHECK(cap.emitted.count(id));

    // dropping E from the deny list restores success through E and G
    CHECK(event_succeeds(m, block(m, {"A", "B", "H1", "H2"})));
}

TEST_CASE("blocked flows leave no packets") {
    auto m = bundled("hs110_toggle");
    auto rules = block(m, {"A", "F", "G"});
    auto cap = run_capture(m, rules, 11);
    auto table = m.seed_table();
    for (const auto& p : cap.trace.packets) {
        update_table(table, p, m.topology);
        CHECK_FALSE(matches_packet(rules, p, table, m.topology));
    }
}

TEST_CASE("noise probability endpoints") {
    auto doc = Json::parse(kMinimal);
    auto noise_flow = Json::parse(R"({"initiator": "phone", "responder": "broadcast", "initiator_port": null,
        "responder_port": 9999, "transport": "udp", "direction": "uni", "app": null})");
    doc["noise"] = Json::array({Json{{"id", "never"}, {"flow", noise_flow}, {"p", 0.0}}});
    auto never = load_model(doc);
    doc["noise"][0]["id"] = "always";
    doc["noise"][0]["p"] = 1.0;
    auto always = load_model(doc);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        CHECK_FALSE(run_capture(never, {}, seed).emitted.count("never"));
        CHECK(run_capture(always, {}, seed).emitted.count("always"));
    }
}

TEST_CASE("experiments are deterministic") {
    auto m = bundled("protocol_switch");
    auto rules = block(m, {"tcp_ctrl"});
    auto a = run_experiment(m, rules, 3, 40);
    auto b = run_experiment(m, rules, 3, 40);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].seed == 40 + i);
        CHECK(write_pcap(a[i].trace) == write_pcap(b[i].trace));
        CHECK(a[i].emitted == b[i].emitted);
    }
    CHECK(write_pcap(a[0].trace) != write_pcap(a[1].trace));
    CHECK_THROWS_AS(run_experiment(m, rules, 0, 0), std::invalid_argument);
}

TEST_CASE("oracle trees for the bundled replicas") {
    SUBCASE("plug toggle") {
        auto tree = oracle_tree(bundled("hs110_toggle"), true);
        auto s = tree.stats();
        CHECK(s.first_level_flows == 7);
        CHECK(s.hidden_flows == 4);
        auto m = bundled("hs110_toggle");
        CHECK(s.hidden == flows_of(m, {"H1", "H2", "H3", "H4"}));
        CHECK(s.first_level == flows_of(m, {"A", "B", "C", "D", "E", "F", "G"}));
    }
    SUBCASE("reduced plug model") {
        auto full = oracle_tree(bundled("appendix_c"), false);
        CHECK(full.stats().node_count == 75);
        CHECK(full.stats().unique_flows == 5);
        auto pruned = oracle_tree(bundled("appendix_c"), true);
        std::size_t expanded = 0;
        for (NodeId id = 1; id < pruned.size(); ++id) expanded += pruned.node(id).status == NodeStatus::Expanded;
        CHECK(expanded == 5);
        CHECK(pruned.stats().unique_flows == 5);
    }
    SUBCASE("no fallback") {
        auto tree = oracle_tree(bundled("essential_no_fallback"), true);
        CHECK(tree.stats().hidden_flows == 0);
        for (NodeId id = 1; id < tree.size(); ++id) {
            const auto& n = tree.node(id);
            if (n.depth == 2) CHECK((n.status == NodeStatus::Failed || n.status == NodeStatus::Pruned));
        }
    }
    SUBCASE("depth cap") {
        auto tree = oracle_tree(bundled("alt_domain_chain"), true, 1);
        std::size_t capped = 0;
        for (NodeId id = 1; id < tree.size(); ++id) {
            const auto& n = tree.node(id);
            if (n.depth == 1) CHECK(n.status == NodeStatus::Expanded);
            if (n.depth == 2) CHECK(n.status == NodeStatus::Pruned);
            capped += n.reason == PruneReason::DepthCapped;
        }
        CHECK(capped > 0);
    }
}

TEST_CASE("oracle aborts when the event cannot succeed") {
    auto doc = minimal();
    doc["success"] = Json::parse(R"({"flow": "b"})");
    CHECK_THROWS_AS(oracle_tree(load_model(doc), true), RootFailed);
}
