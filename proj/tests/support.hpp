#pragma once

// Shared fixtures for the test suites.

#include <cstdint>
#include <random>
#include <string>

#include "hiddenflow/core_model.hpp"
#include "hiddenflow/simnet.hpp"
#include "hiddenflow/trace_codec.hpp"

namespace hf_test {

using namespace hiddenflow;

inline IpAddress ip(const char* text) { return *IpAddress::parse(text); }

inline Topology home_topology() {
    Topology t;
    t.device_addr = ip("192.168.1.10");
    t.phone_addr = ip("192.168.1.20");
    t.gateway_addr = ip("192.168.1.1");
    t.local_prefixes = {*Cidr::parse("192.168.1.0/24")};
    return t;
}

inline ParsedPacket udp(double t, const char* src, Port sport, const char* dst, Port dport) {
    ParsedPacket p;
    p.timestamp = {static_cast<std::int64_t>(t), static_cast<std::int32_t>((t - static_cast<std::int64_t>(t)) * 1e6)};
    p.src_addr = ip(src);
    p.dst_addr = ip(dst);
    p.src_port = sport;
    p.dst_port = dport;
    p.transport = PacketTransport::Udp;
    p.payload_len = 24;
    return p;
}

inline ParsedPacket tcp(double t, const char* src, Port sport, const char* dst, Port dport,
                        std::uint32_t payload = 48) {
    ParsedPacket p = udp(t, src, sport, dst, dport);
    p.transport = PacketTransport::Tcp;
    p.payload_len = payload;
    p.tcp_flags = payload ? (tcp_flag::Psh | tcp_flag::Ack) : tcp_flag::Ack;
    p.control_plane = payload == 0;
    return p;
}

inline ParsedPacket dns_query(double t, const char* src, Port sport, const char* dst, const char* qname,
                              const char* qtype = "A") {
    ParsedPacket p = udp(t, src, sport, dst, 53);
    p.app = DnsSelector{qtype, qname};
    p.payload_len = 0;
    return p;
}

inline ParsedPacket dns_response(double t, const char* src, const char* dst, Port dport, const char* qname,
                                 const char* answer) {
    ParsedPacket p = udp(t, src, 53, dst, dport);
    p.app = DnsSelector{"A", qname};
    p.is_response = true;
    p.dns_answers.emplace_back(qname, ip(answer));
    p.payload_len = 0;
    return p;
}

/// Round-trips a packet through the frame encoder so that derived fields
/// (payload_len, flags) take their dissected values.
inline ParsedPacket normalized(const ParsedPacket& p) {
    auto frame = encode_frame(p);
    auto out = dissect(frame, p.timestamp);
    return out;
}

inline FlowId flow(const char* init, std::optional<Port> iport, const char* resp, std::optional<Port> rport,
                   Transport t = Transport::Tcp, Direction d = Direction::Bidirectional, AppSelector app = {}) {
    FlowId f;
    f.initiator = *HostRef::parse(init);
    f.responder = *HostRef::parse(resp);
    f.initiator_port = iport;
    f.responder_port = rport;
    f.transport = t;
    f.direction = d;
    f.app = std::move(app);
    return f;
}

/// Random FlowId over a small host pool; not canonicalized.
inline FlowId random_flow(std::mt19937_64& rng) {
    static const char* hosts[] = {"device", "phone", "gateway", "broadcast", "multicast:224.0.0.251",
                                  "ip:79.125.56.92", "ip:34.240.186.173", "dom:a.example.com",
                                  "dom:b.example.com", "ip:2001:db8::7"};
    constexpr std::size_t n_hosts = sizeof(hosts) / sizeof(hosts[0]);
    auto port = [&]() -> std::optional<Port> {
        if (rng() % 2) return std::nullopt;
        return static_cast<Port>(1 + rng() % 65535);
    };
    FlowId f;
    f.initiator = *HostRef::parse(hosts[rng() % n_hosts]);
    f.responder = *HostRef::parse(hosts[rng() % n_hosts]);
    f.initiator_port = port();
    f.responder_port = port();
    f.transport = rng() % 2 ? Transport::Tcp : Transport::Udp;
    f.direction = rng() % 3 ? Direction::Bidirectional : Direction::Unidirectional;
    switch (rng() % 3) {
        case 0: break;
        case 1: f.app = HttpSelector{"GET", "/x" + std::to_string(rng() % 4)}; break;
        default: f.app = CoapSelector{"CON", "PUT", "/light"}; break;
    }
    return f;
}

#ifdef HIDDENFLOW_MODELS_DIR
inline std::string model_path(const std::string& name) { return std::string(HIDDENFLOW_MODELS_DIR) + "/" + name + ".json"; }
inline DeviceModel bundled(const std::string& name) { return load_model_file(model_path(name)); }
inline const std::vector<std::string>& bundled_names() {
    static const std::vector<std::string> names{"hs110_toggle",      "appendix_c",        "protocol_switch",
                                                "alt_domain_chain",  "resolver_fallback", "essential_no_fallback"};
    return names;
}
#endif

}  // namespace hf_test
