#include "hiddenflow/trace_codec.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "hiddenflow/errors.hpp"
#include "protocols.hpp"

namespace hiddenflow {

using detail::Bytes;
using detail::ByteView;
using detail::load16;
using detail::put16;
using detail::put32;

double Trace::span_seconds() const noexcept {
    if (packets.empty()) return 0.0;
    return packets.back().timestamp.seconds() - packets.front().timestamp.seconds();
}

// --- dissection -------------------------------------------------------------

namespace {

constexpr std::uint16_t kEtherIpv4 = 0x0800;
constexpr std::uint16_t kEtherArp = 0x0806;
constexpr std::uint16_t kEtherIpv6 = 0x86DD;

std::optional<Port> nonzero(std::uint16_t p) {
    if (p == 0) return std::nullopt;
    return p;
}

bool is_dhcp_port(std::optional<Port> p) {
    return p && (*p == 67 || *p == 68 || *p == 546 || *p == 547);
}

bool either_port(const ParsedPacket& pkt, Port port) {
    return pkt.src_port == port || pkt.dst_port == port;
}

void dissect_tcp(ParsedPacket& pkt, ByteView seg) {
    if (seg.size() < 20) {
        pkt.transport = PacketTransport::Other;
        pkt.other_token = "malformed";
        pkt.control_plane = false;
        return;
    }
    pkt.transport = PacketTransport::Tcp;
    pkt.src_port = nonzero(load16(seg, 0));
    pkt.dst_port = nonzero(load16(seg, 2));
    std::size_t data_off = std::size_t{static_cast<std::uint8_t>(seg[12] >> 4)} * 4;
    pkt.tcp_flags = seg[13] & 0x3F;
    if (data_off < 20 || data_off > seg.size()) data_off = std::min<std::size_t>(seg.size(), 20);
    auto payload = seg.subspan(data_off);
    pkt.payload_len = static_cast<std::uint32_t>(payload.size());
    if (payload.empty()) {
        // SYN/SYN-ACK/FIN/RST and bare ACKs carry no application semantics.
        pkt.control_plane = true;
        return;
    }
    auto tls = detail::parse_tls(payload);
    if (tls.record != TlsRecord::None) {
        pkt.tls = tls.record;
        pkt.sni = std::move(tls.sni);
        pkt.control_plane = tls.record == TlsRecord::Handshake;
        return;
    }
    if (auto http = detail::parse_http(payload)) {
        pkt.app = http->selector;
        pkt.is_response = http->response;
    }
}

void dissect_udp(ParsedPacket& pkt, ByteView dgram) {
    if (dgram.size() < 8) {
        pkt.transport = PacketTransport::Other;
        pkt.other_token = "malformed";
        return;
    }
    pkt.transport = PacketTransport::Udp;
    pkt.src_port = nonzero(load16(dgram, 0));
    pkt.dst_port = nonzero(load16(dgram, 2));
    std::size_t len = load16(dgram, 4);
    if (len < 8 || len > dgram.size()) len = dgram.size();
    auto payload = dgram.subspan(8, len - 8);
    pkt.payload_len = static_cast<std::uint32_t>(payload.size());
    if (is_dhcp_port(pkt.src_port) || is_dhcp_port(pkt.dst_port)) {
        pkt.control_plane = true;
        return;
    }
    if (either_port(pkt, 53) || either_port(pkt, 5353)) {
        if (auto dns = detail::parse_dns(payload)) {
            pkt.app = DnsSelector{dns->qtype, dns->qname};
            pkt.is_response = dns->response;
            pkt.dns_answers = std::move(dns->answers);
        }
        return;
    }
    if (auto coap = detail::parse_coap(payload)) {
        pkt.app = coap->selector;
        pkt.is_response = coap->response;
    }
}

void dissect_transport(ParsedPacket& pkt, std::uint8_t proto, ByteView payload) {
    switch (proto) {
        case 6: dissect_tcp(pkt, payload); return;
        case 17: dissect_udp(pkt, payload); return;
        case 1:
            pkt.other_token = "icmp";
            pkt.control_plane = true;
            break;
        case 58:
            pkt.other_token = "icmpv6";
            pkt.control_plane = true;
            break;
        default:
            pkt.other_token = "ip:" + std::to_string(proto);
            break;
    }
    pkt.payload_len = static_cast<std::uint32_t>(payload.size());
}

void dissect_ipv4(ParsedPacket& pkt, ByteView ip) {
    if (ip.size() < 20 || (ip[0] >> 4) != 4) {
        pkt.other_token = "malformed";
        return;
    }
    std::size_t ihl = std::size_t{static_cast<std::uint8_t>(ip[0] & 0x0F)} * 4;
    std::size_t total = load16(ip, 2);
    if (ihl < 20 || ihl > ip.size() || total < ihl) {
        pkt.other_token = "malformed";
        return;
    }
    total = std::min(total, ip.size());
    pkt.src_addr = IpAddress::v4(std::span<const std::uint8_t, 4>(ip.data() + 12, 4));
    pkt.dst_addr = IpAddress::v4(std::span<const std::uint8_t, 4>(ip.data() + 16, 4));
    dissect_transport(pkt, ip[9], ip.subspan(ihl, total - ihl));
}

void dissect_ipv6(ParsedPacket& pkt, ByteView ip) {
    if (ip.size() < 40 || (ip[0] >> 4) != 6) {
        pkt.other_token = "malformed";
        return;
    }
    pkt.src_addr = IpAddress::v6(std::span<const std::uint8_t, 16>(ip.data() + 8, 16));
    pkt.dst_addr = IpAddress::v6(std::span<const std::uint8_t, 16>(ip.data() + 24, 16));
    std::size_t end = std::min<std::size_t>(ip.size(), 40 + load16(ip, 4));
    std::uint8_t next = ip[6];
    std::size_t off = 40;
    // Hop-by-hop, routing and destination options are skipped.
    while ((next == 0 || next == 43 || next == 60) && off + 8 <= end) {
        std::uint8_t following = ip[off];
        off += (std::size_t{ip[off + 1]} + 1) * 8;
        next = following;
    }
    if (off > end) {
        pkt.other_token = "malformed";
        return;
    }
    dissect_transport(pkt, next, ip.subspan(off, end - off));
}

}  // namespace

ParsedPacket dissect(std::span<const std::uint8_t> frame, Timestamp ts) {
    ParsedPacket pkt;
    pkt.timestamp = ts;
    pkt.wire_len = static_cast<std::uint32_t>(frame.size());
    if (frame.size() < 14) {
        pkt.other_token = "malformed";
        return pkt;
    }
    std::uint16_t ether = load16(frame, 12);
    auto body = frame.subspan(14);
    switch (ether) {
        case kEtherIpv4: dissect_ipv4(pkt, body); break;
        case kEtherIpv6: dissect_ipv6(pkt, body); break;
        case kEtherArp:
            pkt.other_token = "arp";
            pkt.control_plane = true;
            if (body.size() >= 28 && load16(body, 2) == kEtherIpv4 && body[5] == 4) {
                pkt.src_addr = IpAddress::v4(std::span<const std::uint8_t, 4>(body.data() + 14, 4));
                pkt.dst_addr = IpAddress::v4(std::span<const std::uint8_t, 4>(body.data() + 24, 4));
                pkt.is_response = load16(body, 6) == 2;
            }
            break;
        default: {
            char hex[8];
            std::snprintf(hex, sizeof hex, "%04x", ether);
            pkt.other_token = std::string("ether:") + hex;
            pkt.payload_len = static_cast<std::uint32_t>(body.size());
            break;
        }
    }
    if (pkt.transport == PacketTransport::Other && pkt.other_token.empty()) pkt.other_token = "malformed";
    return pkt;
}

// --- frame synthesis ---------------------------------------------------------

namespace {

std::array<std::uint8_t, 6> mac_for(const std::optional<IpAddress>& addr, bool destination) {
    if (!addr) return {0x02, 0x00, 0x00, 0x00, 0x00, 0x01};
    if (addr->is_broadcast()) return {0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF};
    auto b = addr->bytes();
    if (destination && addr->is_multicast()) {
        if (addr->is_v4()) return {0x01, 0x00, 0x5E, static_cast<std::uint8_t>(b[1] & 0x7F), b[2], b[3]};
        return {0x33, 0x33, b[12], b[13], b[14], b[15]};
    }
    auto n = b.size();
    return {0x02, 0x00, b[n - 4], b[n - 3], b[n - 2], b[n - 1]};
}

void pad_to(Bytes& payload, std::size_t size) {
    if (payload.size() < size) payload.resize(size, 0);
}

Bytes tcp_payload(const ParsedPacket& pkt) {
    Bytes payload;
    if (pkt.sni) payload = detail::build_client_hello(*pkt.sni);
    else if (pkt.tls == TlsRecord::ClientHello) payload = detail::build_client_hello(std::nullopt);
    else if (pkt.tls == TlsRecord::Handshake) payload = detail::build_server_hello();
    else if (pkt.tls == TlsRecord::AppData) payload = detail::build_app_data(pkt.payload_len > 5 ? pkt.payload_len - 5 : 16);
    else if (auto* http = std::get_if<HttpSelector>(&pkt.app)) payload = detail::build_http(*http, pkt.is_response);
    // Opaque data is zero-filled so it never parses as TLS or HTTP.
    pad_to(payload, pkt.payload_len);
    if (payload.empty() && !pkt.control_plane) payload.resize(32, 0);
    return payload;
}

Bytes udp_payload(const ParsedPacket& pkt) {
    Bytes payload;
    if (auto* dns = std::get_if<DnsSelector>(&pkt.app)) {
        detail::DnsMessage msg{pkt.is_response, dns->qname, dns->qtype, pkt.dns_answers};
        payload = detail::build_dns(msg);
        pad_to(payload, pkt.payload_len);
    } else if (auto* coap = std::get_if<CoapSelector>(&pkt.app)) {
        payload = detail::build_coap(*coap);
        if (pkt.payload_len > payload.size() + 1) {
            payload.push_back(0xFF);
            pad_to(payload, pkt.payload_len);
        }
    } else {
        pad_to(payload, pkt.payload_len);
    }
    return payload;
}

std::uint16_t ipv4_checksum(ByteView header) {
    std::uint32_t sum = 0;
    for (std::size_t i = 0; i + 1 < header.size(); i += 2) sum += load16(header, i);
    while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
    return static_cast<std::uint16_t>(~sum);
}

void append_ip(Bytes& frame, const ParsedPacket& pkt, std::uint8_t proto, const Bytes& l4) {
    const auto& src = *pkt.src_addr;
    const auto& dst = *pkt.dst_addr;
    if (src.is_v4()) {
        Bytes ip;
        ip.push_back(0x45);
        ip.push_back(0);
        put16(ip, static_cast<std::uint16_t>(20 + l4.size()));
        put16(ip, 0);
        put16(ip, 0x4000);
        ip.push_back(64);
        ip.push_back(proto);
        put16(ip, 0);
        auto s = src.bytes();
        auto d = dst.bytes();
        ip.insert(ip.end(), s.begin(), s.end());
        ip.insert(ip.end(), d.begin(), d.end());
        auto sum = ipv4_checksum(ip);
        ip[10] = static_cast<std::uint8_t>(sum >> 8);
        ip[11] = static_cast<std::uint8_t>(sum);
        frame.insert(frame.end(), ip.begin(), ip.end());
    } else {
        put32(frame, 0x60000000);
        put16(frame, static_cast<std::uint16_t>(l4.size()));
        frame.push_back(proto);
        frame.push_back(64);
        auto s = src.bytes();
        auto d = dst.bytes();
        frame.insert(frame.end(), s.begin(), s.end());
        frame.insert(frame.end(), d.begin(), d.end());
    }
    frame.insert(frame.end(), l4.begin(), l4.end());
}

void require_addresses(const ParsedPacket& pkt) {
    if (!pkt.src_addr || !pkt.dst_addr)
        throw UnresolvedHost("packet at " + std::to_string(pkt.timestamp.seconds()) +
                             "s has an endpoint with no address binding");
    if (pkt.src_addr->family() != pkt.dst_addr->family())
        throw UnresolvedHost("packet mixes IPv4 and IPv6 endpoints");
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const ParsedPacket& pkt) {
    Bytes frame;
    auto dst_mac = mac_for(pkt.dst_addr, true);
    auto src_mac = mac_for(pkt.src_addr, false);
    frame.insert(frame.end(), dst_mac.begin(), dst_mac.end());
    frame.insert(frame.end(), src_mac.begin(), src_mac.end());

    const std::string& token = pkt.other_token;
    if (pkt.transport == PacketTransport::Other && token == "arp") {
        put16(frame, kEtherArp);
        put16(frame, 1);
        put16(frame, kEtherIpv4);
        frame.push_back(6);
        frame.push_back(4);
        put16(frame, pkt.is_response ? 2 : 1);
        auto zero = IpAddress::v4(0u);
        frame.insert(frame.end(), src_mac.begin(), src_mac.end());
        auto s = (pkt.src_addr ? *pkt.src_addr : zero).bytes();
        frame.insert(frame.end(), s.begin(), s.begin() + 4);
        auto target_mac = pkt.is_response ? dst_mac : std::array<std::uint8_t, 6>{};
        frame.insert(frame.end(), target_mac.begin(), target_mac.end());
        auto d = (pkt.dst_addr ? *pkt.dst_addr : zero).bytes();
        frame.insert(frame.end(), d.begin(), d.begin() + 4);
    } else if (pkt.transport == PacketTransport::Other &&
               (token.rfind("ether:", 0) == 0 || token == "malformed")) {
        std::uint16_t type = kEtherIpv4;
        if (token != "malformed") type = static_cast<std::uint16_t>(std::stoul(token.substr(6), nullptr, 16));
        put16(frame, type);
        frame.insert(frame.end(), std::min<std::size_t>(pkt.payload_len, token == "malformed" ? 19 : 65000), 0);
    } else {
        require_addresses(pkt);
        put16(frame, pkt.src_addr->is_v4() ? kEtherIpv4 : kEtherIpv6);
        Bytes l4;
        std::uint8_t proto = 0;
        if (pkt.transport == PacketTransport::Tcp) {
            proto = 6;
            auto payload = tcp_payload(pkt);
            put16(l4, pkt.src_port.value_or(0));
            put16(l4, pkt.dst_port.value_or(0));
            put32(l4, 0);
            put32(l4, 0);
            l4.push_back(0x50);
            std::uint8_t flags = pkt.tcp_flags;
            if (flags == 0) flags = payload.empty() ? tcp_flag::Ack : (tcp_flag::Psh | tcp_flag::Ack);
            l4.push_back(flags);
            put16(l4, 65535);
            put16(l4, 0);
            put16(l4, 0);
            l4.insert(l4.end(), payload.begin(), payload.end());
        } else if (pkt.transport == PacketTransport::Udp) {
            proto = 17;
            auto payload = udp_payload(pkt);
            put16(l4, pkt.src_port.value_or(0));
            put16(l4, pkt.dst_port.value_or(0));
            put16(l4, static_cast<std::uint16_t>(8 + payload.size()));
            put16(l4, 0);
            l4.insert(l4.end(), payload.begin(), payload.end());
        } else if (token == "icmp" || token == "icmpv6") {
            proto = token == "icmp" ? 1 : 58;
            l4.assign(std::max<std::size_t>(pkt.payload_len, 8), 0);
            l4[0] = token == "icmp" ? 8 : 128;  // echo request
        } else if (token.rfind("ip:", 0) == 0) {
            proto = static_cast<std::uint8_t>(std::stoul(token.substr(3)));
            l4.assign(pkt.payload_len, 0);
        } else {
            throw Error("cannot encode packet with transport '" + token + "'");
        }
        append_ip(frame, pkt, proto, l4);
    }
    // Ethernet trailer padding; the IP length fields keep dissection exact.
    if (pkt.wire_len > frame.size() && pkt.transport != PacketTransport::Other) frame.resize(pkt.wire_len, 0);
    return frame;
}

// --- pcap files --------------------------------------------------------------

namespace {

constexpr std::uint32_t kMagicMicro = 0xA1B2C3D4;
constexpr std::uint32_t kMagicSwapped = 0xD4C3B2A1;

std::uint32_t read_u32(ByteView b, std::size_t off, bool swapped) {
    std::uint32_t le = std::uint32_t{b[off]} | (std::uint32_t{b[off + 1]} << 8) |
                       (std::uint32_t{b[off + 2]} << 16) | (std::uint32_t{b[off + 3]} << 24);
    if (!swapped) return le;
    return ((le & 0xFF) << 24) | ((le & 0xFF00) << 8) | ((le >> 8) & 0xFF00) | (le >> 24);
}

void put_le32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_le16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

Trace read_pcap(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 24) throw MalformedHeader("pcap: file shorter than the 24-byte global header");
    std::uint32_t magic = read_u32(bytes, 0, false);
    bool swapped;
    if (magic == kMagicMicro) swapped = false;
    else if (magic == kMagicSwapped) swapped = true;
    else if (magic == 0x0A0D0D0A) throw MalformedHeader("pcap: pcapng files are not supported");
    else throw MalformedHeader("pcap: unrecognised magic number");
    std::uint32_t linktype = read_u32(bytes, 20, swapped);
    if (linktype != 1) throw MalformedHeader("pcap: link type " + std::to_string(linktype) + " is not Ethernet");

    Trace trace;
    std::size_t off = 24;
    while (off < bytes.size()) {
        if (bytes.size() - off < 16) throw TruncatedRecord("pcap: truncated record header at offset " + std::to_string(off));
        Timestamp ts{read_u32(bytes, off, swapped), static_cast<std::int32_t>(read_u32(bytes, off + 4, swapped))};
        std::uint32_t incl = read_u32(bytes, off + 8, swapped);
        std::uint32_t orig = read_u32(bytes, off + 12, swapped);
        off += 16;
        if (incl > bytes.size() - off)
            throw TruncatedRecord("pcap: record at offset " + std::to_string(off - 16) + " exceeds the file");
        auto pkt = dissect(bytes.subspan(off, incl), ts);
        pkt.wire_len = std::max(orig, incl);
        trace.packets.push_back(std::move(pkt));
        off += incl;
    }
    trace.capture_duration = trace.span_seconds();
    return trace;
}

std::vector<std::uint8_t> write_pcap(const Trace& trace) {
    Bytes out;
    put_le32(out, kMagicMicro);
    put_le16(out, 2);
    put_le16(out, 4);
    put_le32(out, 0);
    put_le32(out, 0);
    put_le32(out, 65535);
    put_le32(out, 1);
    for (const auto& pkt : trace.packets) {
        auto frame = encode_frame(pkt);
        put_le32(out, static_cast<std::uint32_t>(pkt.timestamp.sec));
        put_le32(out, static_cast<std::uint32_t>(pkt.timestamp.usec));
        put_le32(out, static_cast<std::uint32_t>(frame.size()));
        put_le32(out, static_cast<std::uint32_t>(frame.size()));
        out.insert(out.end(), frame.begin(), frame.end());
    }
    return out;
}

Trace filter_control_plane(const Trace& trace) {
    Trace out;
    out.capture_duration = trace.capture_duration;
    out.label = trace.label;
    std::copy_if(trace.packets.begin(), trace.packets.end(), std::back_inserter(out.packets),
                 [](const ParsedPacket& p) { return !p.control_plane; });
    return out;
}

// --- files -------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

void write_file_atomic(const std::string& path, const std::string& text) {
    write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace hiddenflow
