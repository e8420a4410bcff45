#pragma once

// Application-layer parsers and builders shared by the dissector and the
// pcap writer. Internal to the library.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hiddenflow/core_model.hpp"

namespace hiddenflow::detail {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline std::uint16_t load16(ByteView b, std::size_t off) {
    return static_cast<std::uint16_t>((b[off] << 8) | b[off + 1]);
}

inline std::uint32_t load32(ByteView b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
           (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void put16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void put32(Bytes& out, std::uint32_t v) {
    put16(out, static_cast<std::uint16_t>(v >> 16));
    put16(out, static_cast<std::uint16_t>(v));
}

// --- DNS -------------------------------------------------------------------

struct DnsMessage {
    bool response = false;
    std::string qname;
    std::string qtype;
    std::vector<std::pair<std::string, IpAddress>> answers;
};

std::string dns_type_token(std::uint16_t type);
std::optional<std::uint16_t> dns_type_code(std::string_view token);

/// Parses the header, first question and A/AAAA answers. Returns nothing
/// when the message has no well-formed question.
std::optional<DnsMessage> parse_dns(ByteView payload);
Bytes build_dns(const DnsMessage& msg);

// --- CoAP ------------------------------------------------------------------

struct CoapMessage {
    CoapSelector selector;
    bool response = false;
};

std::optional<CoapMessage> parse_coap(ByteView payload);
/// Throws std::invalid_argument on an unknown type or code token.
Bytes build_coap(const CoapSelector& selector);

// --- HTTP ------------------------------------------------------------------

struct HttpLine {
    HttpSelector selector;
    bool response = false;
};

std::optional<HttpLine> parse_http(ByteView payload);
Bytes build_http(const HttpSelector& selector, bool response);

// --- TLS -------------------------------------------------------------------

struct TlsInfo {
    TlsRecord record = TlsRecord::None;
    std::optional<std::string> sni;
};

TlsInfo parse_tls(ByteView payload);
Bytes build_client_hello(std::optional<std::string_view> sni);
Bytes build_server_hello();
Bytes build_app_data(std::size_t body_len);

}  // namespace hiddenflow::detail
