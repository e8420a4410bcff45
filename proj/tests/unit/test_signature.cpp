#include "doctest.h"

#include <algorithm>
#include <random>

#include "hiddenflow/errors.hpp"
#include "hiddenflow/signature.hpp"
#include "support.hpp"

using namespace hiddenflow;
using namespace hf_test;

namespace {

const char* kDevice = "192.168.1.10";
const char* kPhone = "192.168.1.20";
const char* kGateway = "192.168.1.1";

Trace trace_of(std::vector<ParsedPacket> packets) {
    Trace t;
    t.packets = std::move(packets);
    return t;
}

}  // namespace

TEST_CASE("update_table learns DNS answers and SNI for remote addresses only") {
    auto topo = home_topology();
    DnsTable table;
    update_table(table, dns_response(1, kGateway, kDevice, 40000, "use1-api.tplinkra.com", "52.1.2.3"), topo);
    REQUIRE(table.lookup(ip("52.1.2.3")));
    CHECK(*table.lookup(ip("52.1.2.3")) == "use1-api.tplinkra.com");

    DnsTable local;
    update_table(local, dns_response(1, kGateway, kDevice, 40000, "nas.home.lan", "192.168.1.50"), topo);
    CHECK(local.entries.empty());

    auto hello = tcp(2, kPhone, 50000, "34.9.9.9", 443);
    hello.sni = "n-wap.tplinkcloud.com";
    update_table(table, hello, topo);
    CHECK(*table.lookup(ip("34.9.9.9")) == "n-wap.tplinkcloud.com");

    // latest observation wins
    update_table(table, dns_response(3, kGateway, kDevice, 40001, "other.example.com", "52.1.2.3"), topo);
    CHECK(*table.lookup(ip("52.1.2.3")) == "other.example.com");
}

TEST_CASE("name_endpoints") {
    auto topo = home_topology();
    DnsTable table;
    table.learn(ip("52.1.2.3"), "use1-api.tplinkra.com", topo);

    auto named = name_endpoints(tcp(1, kDevice, 40000, "52.1.2.3", 443), table, topo);
    REQUIRE(named);
    CHECK(named->first == HostRef::device());
    CHECK(named->second == HostRef::domain("use1-api.tplinkra.com"));

    auto literal = name_endpoints(tcp(1, kDevice, 40000, "79.125.56.92", 443), table, topo);
    CHECK(literal->second == HostRef::address(ip("79.125.56.92")));

    auto mdns = name_endpoints(udp(1, kPhone, 5353, "224.0.0.251", 5353), table, topo);
    CHECK(mdns->second == HostRef::multicast(ip("224.0.0.251")));

    auto bcast = name_endpoints(udp(1, kPhone, 40000, "255.255.255.255", 9999), table, topo);
    CHECK(bcast->second == HostRef::broadcast());
    CHECK(name_endpoints(udp(1, kGateway, 1, "192.168.1.77", 2), table, topo)->second ==
          HostRef::address(ip("192.168.1.77")));
}

TEST_CASE("aggregate_flows drops client ports that change between traces") {
    auto topo = home_topology();
    std::vector<Trace> traces{
        trace_of({tcp(1.0, kPhone, 41002, kDevice, 9999), tcp(1.1, kDevice, 9999, kPhone, 41002)}),
        trace_of({tcp(9.0, kPhone, 41377, kDevice, 9999), tcp(9.1, kDevice, 9999, kPhone, 41377)}),
    };
    auto sets = aggregate_flows(traces, topo, DnsTable{});
    REQUIRE(sets.size() == 2);
    auto expected = flow("device", 9999, "phone", std::nullopt);
    for (const auto& s : sets) {
        REQUIRE(s.size() == 1);
        CHECK(*s.begin() == expected);
    }
}

TEST_CASE("aggregate_flows keeps non-well-known ports that recur in every trace") {
    auto topo = home_topology();
    std::vector<Trace> traces{
        trace_of({udp(1.0, kDevice, 49152, "8.8.4.4", 3478), udp(1.1, "8.8.4.4", 3478, kDevice, 49152)}),
        trace_of({udp(5.0, kDevice, 49152, "8.8.4.4", 3478), udp(5.1, "8.8.4.4", 3478, kDevice, 49152)}),
    };
    auto sets = aggregate_flows(traces, topo, DnsTable{});
    CHECK(*sets[0].begin() == flow("device", 49152, "ip:8.8.4.4", 3478, Transport::Udp));
    CHECK(sets[0] == sets[1]);
}

TEST_CASE("aggregate_flows groups a DNS response with its query") {
    auto topo = home_topology();
    std::vector<Trace> traces{trace_of({
        dns_query(1.0, kDevice, 40000, kGateway, "use1-api.tplinkra.com"),
        dns_response(1.01, kGateway, kDevice, 40000, "use1-api.tplinkra.com", "52.1.2.3"),
        tcp(1.2, kDevice, 40001, "52.1.2.3", 443),
        tcp(1.3, "52.1.2.3", 443, kDevice, 40001),
    })};
    auto sets = aggregate_flows(traces, topo, DnsTable{});
    REQUIRE(sets[0].size() == 2);
    // a single-trace set keeps every port (each recurs in all 1 traces)
    auto dns = flow("device", 40000, "gateway", 53, Transport::Udp, Direction::Bidirectional,
                    DnsSelector{"A", "use1-api.tplinkra.com"});
    auto https = flow("device", 40001, "dom:use1-api.tplinkra.com", 443);
    CHECK(sets[0].count(dns) == 1);
    CHECK(sets[0].count(https) == 1);
}

TEST_CASE("aggregate_flows marks one-way groups unidirectional") {
    auto topo = home_topology();
    std::vector<Trace> traces{
        trace_of({udp(1.0, kPhone, 50001, "255.255.255.255", 9999), udp(1.5, kPhone, 50001, "255.255.255.255", 9999)}),
        trace_of({udp(3.0, kPhone, 50002, "255.255.255.255", 9999)}),
    };
    auto sets = aggregate_flows(traces, topo, DnsTable{});
    auto expected = flow("phone", std::nullopt, "broadcast", 9999, Transport::Udp, Direction::Unidirectional);
    CHECK(*sets[0].begin() == expected);
    CHECK(*sets[1].begin() == expected);
}

TEST_CASE("aggregate_flows pairs HTTP and CoAP responses with their requests") {
    auto topo = home_topology();
    auto req = tcp(1.0, kPhone, 50000, kDevice, 80);
    req.app = HttpSelector{"GET", "/status"};
    auto resp = tcp(1.1, kDevice, 80, kPhone, 50000);
    resp.app = HttpSelector{};
    resp.is_response = true;
    auto body = tcp(1.2, kDevice, 80, kPhone, 50000);
    auto creq = udp(2.0, kPhone, 50001, kDevice, 5683);
    creq.app = CoapSelector{"CON", "PUT", "/light"};
    auto cresp = udp(2.1, kDevice, 5683, kPhone, 50001);
    cresp.app = CoapSelector{"ACK", "2.04", ""};
    cresp.is_response = true;
    std::vector<Trace> traces{trace_of({req, resp, body, creq, cresp})};
    auto sets = aggregate_flows(traces, topo, DnsTable{});
    REQUIRE(sets[0].size() == 2);
    for (const auto& f : sets[0]) {
        CHECK(f.direction == Direction::Bidirectional);
        CHECK(has_app(f.app));
    }
}

TEST_CASE("aggregate_flows rejects an empty trace set") {
    CHECK_THROWS_AS(aggregate_flows({}, home_topology(), DnsTable{}), EmptyTraceSet);
}

TEST_CASE("aggregate_flows does not depend on trace order") {
    auto topo = home_topology();
    std::mt19937_64 rng(3);
    for (int round = 0; round < 50; ++round) {
        std::vector<Trace> traces;
        for (int t = 0; t < 5; ++t) {
            std::vector<ParsedPacket> pkts;
            double base = 100.0 * t;
            Port eph = static_cast<Port>(40000 + rng() % 1000);
            pkts.push_back(dns_query(base + 0.1, kDevice, eph, kGateway, "use1-api.tplinkra.com"));
            pkts.push_back(dns_response(base + 0.2, kGateway, kDevice, eph, "use1-api.tplinkra.com",
                                        rng() % 2 ? "52.1.2.3" : "52.1.2.4"));
            pkts.push_back(tcp(base + 0.3, kDevice, static_cast<Port>(eph + 1), "52.1.2.3", 443));
            if (rng() % 2) pkts.push_back(tcp(base + 0.4, kPhone, static_cast<Port>(50000 + rng() % 3), kDevice, 9999));
            traces.push_back(trace_of(std::move(pkts)));
        }
        auto reference = aggregate_flows(traces, topo, DnsTable{});
        std::vector<std::size_t> idx{0, 1, 2, 3, 4};
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<Trace> permuted;
        for (auto i : idx) permuted.push_back(traces[i]);
        auto sets = aggregate_flows(permuted, topo, DnsTable{});
        for (std::size_t k = 0; k < idx.size(); ++k) CHECK(sets[k] == reference[idx[k]]);
    }
}

TEST_CASE("extract_signature intersects") {
    auto A = flow("device", 9999, "phone", std::nullopt);
    auto B = flow("device", 9999, "phone", std::nullopt, Transport::Udp);
    auto C = flow("phone", std::nullopt, "broadcast", 9999, Transport::Udp, Direction::Unidirectional);
    auto N = flow("device", std::nullopt, "ip:1.1.1.1", 123, Transport::Udp);
    auto sig = extract_signature({FlowSet{A, B, C}, FlowSet{A, B}, FlowSet{A, B, N}}, 3);
    CHECK(sig.flows == FlowSet{A, B});
    CHECK(sig.m_plus == 3);

    auto single = extract_signature({FlowSet{A}}, 1);
    CHECK(single.flows == FlowSet{A});
    CHECK_THROWS_AS(extract_signature({}, 20), EmptyTraceSet);

    auto round_trip = EventSignature::from_json(sig.to_json());
    CHECK(round_trip.flows == sig.flows);
    CHECK(round_trip.m == 3);
}

TEST_CASE("accept_signature threshold") {
    CHECK(accept_signature(EventSignature{{}, 20, 20}));
    CHECK_FALSE(accept_signature(EventSignature{{}, 20, 0}));
    CHECK(accept_signature(EventSignature{{}, 20, 10}));
    CHECK_FALSE(accept_signature(EventSignature{{}, 20, 9}));
    CHECK_FALSE(accept_signature(EventSignature{{}, 3, 1}));
    CHECK(accept_signature(EventSignature{{}, 3, 2}));
}
