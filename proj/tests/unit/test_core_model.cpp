#include "doctest.h"

#include <random>

#include "hiddenflow/core_model.hpp"
#include "hiddenflow/errors.hpp"
#include "support.hpp"

using namespace hiddenflow;
using namespace hf_test;

TEST_CASE("host tokens round-trip and reject malformed input") {
    for (const char* token : {"device", "phone", "gateway", "broadcast", "multicast:224.0.0.251",
                              "ip:79.125.56.92", "ip:2001:db8::1", "dom:use1-api.tplinkra.com"}) {
        auto h = HostRef::parse(token);
        REQUIRE(h);
        CHECK(h->token() == token);
    }
    CHECK_FALSE(HostRef::parse("dom:Upper.Case.com"));
    CHECK_FALSE(HostRef::parse("dom:bad..name"));
    CHECK_FALSE(HostRef::parse("ip:300.1.1.1"));
    CHECK_FALSE(HostRef::parse("multicast:10.0.0.1"));
    CHECK_FALSE(HostRef::parse("plug"));
    CHECK_THROWS_AS(HostRef::domain("Not-Lower.com"), std::invalid_argument);
}

TEST_CASE("topology validation") {
    auto t = home_topology();
    CHECK_NOTHROW(t.validate());
    CHECK(t.role_of(ip("192.168.1.20")) == Role::Phone);
    CHECK_FALSE(t.role_of(ip("192.168.1.99")));
    CHECK(t.is_local(ip("192.168.1.99")));
    CHECK_FALSE(t.is_local(ip("8.8.8.8")));

    auto dup = t;
    dup.phone_addr = dup.device_addr;
    CHECK_THROWS_AS(dup.validate(), SchemaError);
    auto outside = t;
    outside.gateway_addr = ip("10.0.0.1");
    CHECK_THROWS_AS(outside.validate(), SchemaError);

    auto overlapping = t;
    overlapping.local_prefixes.push_back(*Cidr::parse("192.168.0.0/16"));
    CHECK_NOTHROW(overlapping.validate());
    CHECK(overlapping.warnings().size() == 1);

    CHECK(Topology::from_json(t.to_json()).to_json() == t.to_json());
}

TEST_CASE("canonical FlowId JSON has a fixed field order") {
    auto f = flow("device", std::nullopt, "gateway", 53, Transport::Udp, Direction::Bidirectional,
             DnsSelector{"A", "use1-api.tplinkra.com"});
    CHECK(f.key() ==
          R"({"initiator":"device","responder":"gateway","initiator_port":null,"responder_port":53,)"
          R"("transport":"udp","direction":"bi","app":{"proto":"dns","qtype":"A","qname":"use1-api.tplinkra.com"}})");
    CHECK(FlowId::from_json(f.to_json()) == f);
}

TEST_CASE("FlowId invariants") {
    auto dns_tcp = flow("device", std::nullopt, "gateway", 53, Transport::Tcp, Direction::Bidirectional,
                        DnsSelector{"A", "example.com"});
    CHECK_THROWS_AS(dns_tcp.validate(), std::invalid_argument);
    auto dns_port = flow("device", std::nullopt, "gateway", 80, Transport::Udp, Direction::Bidirectional,
                         DnsSelector{"A", "example.com"});
    CHECK_THROWS_AS(dns_port.validate(), std::invalid_argument);
    auto bad_uri = flow("device", std::nullopt, "gateway", 80, Transport::Tcp, Direction::Bidirectional,
                        HttpSelector{"GET", "index"});
    CHECK_THROWS_AS(bad_uri.validate(), std::invalid_argument);
    Json j = flow("device", 9999, "phone", std::nullopt).to_json();
    j["initiator_port"] = 0;
    CHECK_THROWS_AS(FlowId::from_json(j), SchemaError);
}

TEST_CASE("canonicalize examples") {
    // phone observed first on the device's TCP 9999 service
    auto observed = flow("phone", std::nullopt, "device", 9999);
    auto c = canonicalize(observed, home_topology());
    CHECK(c == flow("device", 9999, "phone", std::nullopt));

    auto broadcast = flow("phone", std::nullopt, "broadcast", 9999, Transport::Udp, Direction::Unidirectional);
    CHECK(canonicalize(broadcast) == broadcast);

    auto servers = flow("dom:server-b.example.com", 443, "dom:server-a.example.com", std::nullopt);
    CHECK(canonicalize(servers) == flow("dom:server-a.example.com", std::nullopt, "dom:server-b.example.com", 443));
}

TEST_CASE("canonicalize is idempotent and preserves the endpoint pair") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 2000; ++i) {
        auto f = random_flow(rng);
        auto c = canonicalize(f);
        CHECK(canonicalize(c) == c);
        CHECK(c.transport == f.transport);
        CHECK(c.direction == f.direction);
        CHECK(c.app == f.app);
        bool same = c.initiator == f.initiator && c.initiator_port == f.initiator_port &&
                    c.responder == f.responder && c.responder_port == f.responder_port;
        bool swapped = c.initiator == f.responder && c.initiator_port == f.responder_port &&
                       c.responder == f.initiator && c.responder_port == f.initiator_port;
        CHECK((same || swapped));
        if (f.direction == Direction::Bidirectional) {
            FlowId reversed = f;
            std::swap(reversed.initiator, reversed.responder);
            std::swap(reversed.initiator_port, reversed.responder_port);
            CHECK(canonicalize(reversed) == c);
        } else {
            CHECK(c == f);
        }
    }
}

TEST_CASE("well-known port set") {
    for (Port p : {Port{1}, Port{53}, Port{443}, Port{1023}, Port{5353}, Port{5683}, Port{8883}, Port{9999}})
        CHECK(is_well_known_port(p));
    for (Port p : {Port{1024}, Port{8080}, Port{41002}, Port{65535}}) CHECK_FALSE(is_well_known_port(p));
}
