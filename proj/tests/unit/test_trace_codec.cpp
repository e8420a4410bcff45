#include "doctest.h"

#include <random>

#include "hiddenflow/errors.hpp"
#include "hiddenflow/trace_codec.hpp"
#include "support.hpp"
#include "../src/protocols.hpp"

using namespace hiddenflow;
using namespace hf_test;

namespace {

std::vector<std::uint8_t> ethernet(std::uint16_t type, std::vector<std::uint8_t> body) {
    std::vector<std::uint8_t> f{0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 2, 0, 0, 0, 0, 1,
                                static_cast<std::uint8_t>(type >> 8), static_cast<std::uint8_t>(type)};
    f.insert(f.end(), body.begin(), body.end());
    return f;
}

}  // namespace

TEST_CASE("empty trace writes a bare 24-byte global header") {
    auto bytes = write_pcap(Trace{});
    REQUIRE(bytes.size() == 24);
    const std::vector<std::uint8_t> expected{0xd4, 0xc3, 0xb2, 0xa1, 2, 0, 4, 0, 0, 0, 0, 0,
                                             0, 0, 0, 0, 0xff, 0xff, 0, 0, 1, 0, 0, 0};
    CHECK(bytes == expected);
    CHECK(read_pcap(bytes).packets.empty());
}

TEST_CASE("pcap header and record errors") {
    std::vector<std::uint8_t> pcapng{0x0a, 0x0d, 0x0d, 0x0a};
    pcapng.resize(28, 0);
    CHECK_THROWS_AS(read_pcap(pcapng), MalformedHeader);
    CHECK_THROWS_AS(read_pcap(std::vector<std::uint8_t>(10, 0)), MalformedHeader);

    auto bytes = write_pcap(Trace{});
    bytes[20] = 105;  // 802.11
    CHECK_THROWS_AS(read_pcap(bytes), MalformedHeader);

    Trace t;
    t.packets.push_back(dns_query(1.0, "192.168.1.10", 40000, "192.168.1.1", "example.com"));
    auto full = write_pcap(t);
    auto cut = full;
    cut.resize(full.size() - 3);
    CHECK_THROWS_AS(read_pcap(cut), TruncatedRecord);
    cut.resize(24 + 10);
    CHECK_THROWS_AS(read_pcap(cut), TruncatedRecord);
}

TEST_CASE("byte-swapped pcap files are read") {
    Trace t;
    t.packets.push_back(dns_query(7.25, "192.168.1.10", 40000, "192.168.1.1", "example.com"));
    auto le = write_pcap(t);
    std::vector<std::uint8_t> be = le;
    auto swap32 = [&](std::size_t off) { std::reverse(be.begin() + off, be.begin() + off + 4); };
    auto swap16 = [&](std::size_t off) { std::reverse(be.begin() + off, be.begin() + off + 2); };
    swap32(0);
    swap16(4);
    swap16(6);
    for (std::size_t off : {8, 12, 16, 20}) swap32(off);
    for (std::size_t off : {24, 28, 32, 36}) swap32(off);
    auto a = read_pcap(le);
    auto b = read_pcap(be);
    REQUIRE(b.packets.size() == 1);
    CHECK(a.packets[0] == b.packets[0]);
    CHECK(b.packets[0].timestamp == Timestamp{7, 250000});
}

TEST_CASE("dissect: ARP is control plane") {
    std::vector<std::uint8_t> arp{0, 1, 8, 0, 6, 4, 0, 1, 2, 0, 0, 0, 0, 1, 192, 168, 1, 10,
                                  0, 0, 0, 0, 0, 0, 192, 168, 1, 1};
    auto p = dissect(ethernet(0x0806, arp), {});
    CHECK(p.control_plane);
    CHECK(p.other_token == "arp");
    CHECK(p.src_addr == ip("192.168.1.10"));
}

TEST_CASE("dissect: DNS query selects qname and qtype") {
    auto q = normalized(dns_query(1.0, "192.168.1.10", 40000, "192.168.1.1", "use1-api.tplinkra.com"));
    CHECK(q.transport == PacketTransport::Udp);
    CHECK(q.app == AppSelector{DnsSelector{"A", "use1-api.tplinkra.com"}});
    CHECK_FALSE(q.is_response);
    CHECK_FALSE(q.control_plane);

    auto r = normalized(dns_response(1.1, "192.168.1.1", "192.168.1.10", 40000, "use1-api.tplinkra.com", "52.1.2.3"));
    CHECK(r.is_response);
    REQUIRE(r.dns_answers.size() == 1);
    CHECK(r.dns_answers[0].second == ip("52.1.2.3"));
}

TEST_CASE("dissect: DNS name compression") {
    using namespace hiddenflow::detail;
    Bytes msg{0x12, 0x34, 0x81, 0x80, 0, 1, 0, 1, 0, 0, 0, 0};
    for (auto label : {std::string("api"), std::string("example"), std::string("com")}) {
        msg.push_back(static_cast<std::uint8_t>(label.size()));
        msg.insert(msg.end(), label.begin(), label.end());
    }
    msg.insert(msg.end(), {0, 0, 1, 0, 1});
    msg.insert(msg.end(), {0xC0, 12, 0, 1, 0, 1, 0, 0, 0, 60, 0, 4, 1, 2, 3, 4});
    auto parsed = parse_dns(msg);
    REQUIRE(parsed);
    CHECK(parsed->qname == "api.example.com");
    REQUIRE(parsed->answers.size() == 1);
    CHECK(parsed->answers[0].first == "api.example.com");
    CHECK(parsed->answers[0].second == ip("1.2.3.4"));
}

TEST_CASE("dissect: HTTP request line") {
    auto p = tcp(1.0, "192.168.1.20", 50000, "192.168.1.10", 80);
    p.app = HttpSelector{"GET", "/index"};
    p.payload_len = 0;
    auto d = normalized(p);
    CHECK(d.app == AppSelector{HttpSelector{"GET", "/index"}});
    CHECK_FALSE(d.is_response);

    auto resp = tcp(1.1, "192.168.1.10", 80, "192.168.1.20", 50000);
    resp.app = HttpSelector{};
    resp.is_response = true;
    resp.payload_len = 0;
    auto dr = normalized(resp);
    CHECK(dr.is_response);
    CHECK(std::holds_alternative<HttpSelector>(dr.app));
}

TEST_CASE("dissect: CoAP on any UDP port with a valid header") {
    for (Port port : {Port{5683}, Port{40123}}) {
        auto p = udp(1.0, "192.168.1.20", 50000, "192.168.1.10", port);
        p.app = CoapSelector{"CON", "PUT", "/light/state"};
        p.payload_len = 0;
        auto d = normalized(p);
        CHECK(d.app == AppSelector{CoapSelector{"CON", "PUT", "/light/state"}});
    }
    auto zeros = normalized(udp(1.0, "192.168.1.20", 50000, "192.168.1.10", 5683));
    CHECK_FALSE(has_app(zeros.app));
}

TEST_CASE("dissect: TLS ClientHello with SNI survives the filter, other handshakes do not") {
    Trace t;
    auto syn = tcp(1.00, "192.168.1.20", 50000, "34.9.9.9", 443, 0);
    syn.tcp_flags = tcp_flag::Syn;
    auto synack = tcp(1.01, "34.9.9.9", 443, "192.168.1.20", 50000, 0);
    synack.tcp_flags = tcp_flag::Syn | tcp_flag::Ack;
    auto ack = tcp(1.02, "192.168.1.20", 50000, "34.9.9.9", 443, 0);
    auto hello = tcp(1.03, "192.168.1.20", 50000, "34.9.9.9", 443, 0);
    hello.sni = "n-wap.tplinkcloud.com";
    hello.tls = TlsRecord::ClientHello;
    auto server_hello = tcp(1.04, "34.9.9.9", 443, "192.168.1.20", 50000, 0);
    server_hello.tls = TlsRecord::Handshake;
    auto data = tcp(1.05, "192.168.1.20", 50000, "34.9.9.9", 443, 120);
    data.tls = TlsRecord::AppData;
    for (auto* p : {&syn, &synack, &ack, &hello, &server_hello, &data}) t.packets.push_back(*p);
    auto read = read_pcap(write_pcap(t));
    REQUIRE(read.packets.size() == 6);
    CHECK(read.packets[3].sni == std::optional<std::string>("n-wap.tplinkcloud.com"));
    CHECK_FALSE(read.packets[3].control_plane);
    CHECK(read.packets[4].control_plane);

    auto filtered = filter_control_plane(read);
    REQUIRE(filtered.packets.size() == 2);
    CHECK(filtered.packets[0].sni);
    CHECK(filtered.packets[1].tls == TlsRecord::AppData);

    Trace handshake_only;
    handshake_only.packets = {read.packets[0], read.packets[1], read.packets[2]};
    CHECK(filter_control_plane(handshake_only).packets.empty());
    CHECK(filter_control_plane(filtered).packets.size() == filtered.packets.size());
}

TEST_CASE("write_pcap: packets without addresses cannot be encoded") {
    Trace t;
    auto p = udp(1.0, "192.168.1.10", 1000, "192.168.1.1", 53);
    p.dst_addr.reset();
    t.packets.push_back(p);
    CHECK_THROWS_AS(write_pcap(t), UnresolvedHost);
}

TEST_CASE("dissect never throws on short random frames") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 5000; ++i) {
        std::vector<std::uint8_t> frame(14 + rng() % 200);
        for (auto& b : frame) b = static_cast<std::uint8_t>(rng());
        if (i % 3 == 0) {
            frame[12] = 0x08;
            frame[13] = 0x00;
            frame[14] = 0x45;
        }
        CHECK_NOTHROW(dissect(frame, {}));
    }
}
