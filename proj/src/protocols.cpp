#include "protocols.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <stdexcept>

namespace hiddenflow::detail {

namespace {

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

// --- DNS -------------------------------------------------------------------

namespace {

constexpr std::array<std::pair<std::uint16_t, std::string_view>, 12> kDnsTypes{{
    {1, "A"}, {2, "NS"}, {5, "CNAME"}, {6, "SOA"}, {12, "PTR"}, {15, "MX"},
    {16, "TXT"}, {28, "AAAA"}, {33, "SRV"}, {47, "NSEC"}, {65, "HTTPS"}, {255, "ANY"},
}};

// Reads a possibly-compressed name starting at `off`. On success `off` is
// left just past the name in the original position.
std::optional<std::string> read_name(ByteView msg, std::size_t& off) {
    std::string name;
    std::size_t pos = off;
    bool jumped = false;
    int jumps = 0;
    while (true) {
        if (pos >= msg.size()) return std::nullopt;
        std::uint8_t len = msg[pos];
        if ((len & 0xC0) == 0xC0) {
            if (pos + 1 >= msg.size() || ++jumps > 16) return std::nullopt;
            std::size_t target = ((len & 0x3F) << 8) | msg[pos + 1];
            if (!jumped) off = pos + 2;
            jumped = true;
            pos = target;
            continue;
        }
        if ((len & 0xC0) != 0) return std::nullopt;
        ++pos;
        if (len == 0) break;
        if (pos + len > msg.size()) return std::nullopt;
        if (!name.empty()) name.push_back('.');
        name.append(reinterpret_cast<const char*>(msg.data() + pos), len);
        pos += len;
        if (name.size() > 255) return std::nullopt;
    }
    if (!jumped) off = pos;
    return lowercase(std::move(name));
}

void write_name(Bytes& out, std::string_view name) {
    std::size_t start = 0;
    while (start < name.size()) {
        auto dot = name.find('.', start);
        if (dot == std::string_view::npos) dot = name.size();
        auto label = name.substr(start, dot - start);
        out.push_back(static_cast<std::uint8_t>(label.size()));
        out.insert(out.end(), label.begin(), label.end());
        start = dot + 1;
    }
    out.push_back(0);
}

}  // namespace

std::string dns_type_token(std::uint16_t type) {
    for (auto [code, token] : kDnsTypes)
        if (code == type) return std::string(token);
    return "TYPE" + std::to_string(type);
}

std::optional<std::uint16_t> dns_type_code(std::string_view token) {
    for (auto [code, t] : kDnsTypes)
        if (t == token) return code;
    if (token.size() > 4 && token.substr(0, 4) == "TYPE") {
        unsigned v = 0;
        auto digits = token.substr(4);
        auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
        if (ec == std::errc{} && p == digits.data() + digits.size() && v <= 0xFFFF)
            return static_cast<std::uint16_t>(v);
    }
    return std::nullopt;
}

std::optional<DnsMessage> parse_dns(ByteView msg) {
    if (msg.size() < 12) return std::nullopt;
    DnsMessage out;
    std::uint16_t flags = load16(msg, 2);
    out.response = (flags & 0x8000) != 0;
    std::uint16_t qdcount = load16(msg, 4);
    std::uint16_t ancount = load16(msg, 6);
    if (qdcount == 0) return std::nullopt;
    std::size_t off = 12;
    auto qname = read_name(msg, off);
    if (!qname || off + 4 > msg.size()) return std::nullopt;
    if (!is_valid_domain(*qname)) return std::nullopt;
    out.qname = *qname;
    out.qtype = dns_type_token(load16(msg, off));
    off += 4;
    // Remaining questions are skipped; only the first one selects the flow.
    for (std::uint16_t i = 1; i < qdcount; ++i) {
        if (!read_name(msg, off) || off + 4 > msg.size()) return out;
        off += 4;
    }
    if (!out.response) return out;
    for (std::uint16_t i = 0; i < ancount; ++i) {
        auto owner = read_name(msg, off);
        if (!owner || off + 10 > msg.size()) break;
        std::uint16_t type = load16(msg, off);
        std::uint16_t rdlen = load16(msg, off + 8);
        off += 10;
        if (off + rdlen > msg.size()) break;
        if (type == 1 && rdlen == 4 && is_valid_domain(*owner)) {
            out.answers.emplace_back(*owner, IpAddress::v4(std::span<const std::uint8_t, 4>(msg.data() + off, 4)));
        } else if (type == 28 && rdlen == 16 && is_valid_domain(*owner)) {
            out.answers.emplace_back(*owner,
                                     IpAddress::v6(std::span<const std::uint8_t, 16>(msg.data() + off, 16)));
        }
        off += rdlen;
    }
    return out;
}

Bytes build_dns(const DnsMessage& msg) {
    auto qtype = dns_type_code(msg.qtype);
    if (!qtype) throw std::invalid_argument("unknown DNS type '" + msg.qtype + "'");
    Bytes out;
    put16(out, 0x1234);
    put16(out, msg.response ? 0x8180 : 0x0100);
    put16(out, 1);
    put16(out, msg.response ? static_cast<std::uint16_t>(msg.answers.size()) : 0);
    put16(out, 0);
    put16(out, 0);
    write_name(out, msg.qname);
    put16(out, *qtype);
    put16(out, 1);
    if (!msg.response) return out;
    for (const auto& [name, addr] : msg.answers) {
        write_name(out, name);
        put16(out, addr.is_v4() ? 1 : 28);
        put16(out, 1);
        put32(out, 300);
        auto bytes = addr.bytes();
        put16(out, static_cast<std::uint16_t>(bytes.size()));
        out.insert(out.end(), bytes.begin(), bytes.end());
    }
    return out;
}

// --- CoAP ------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 4> kCoapTypes{"CON", "NON", "ACK", "RST"};

constexpr std::array<std::pair<std::uint8_t, std::string_view>, 8> kCoapMethods{{
    {0x00, "EMPTY"}, {0x01, "GET"}, {0x02, "POST"}, {0x03, "PUT"},
    {0x04, "DELETE"}, {0x05, "FETCH"}, {0x06, "PATCH"}, {0x07, "IPATCH"},
}};

std::string coap_code_token(std::uint8_t code) {
    for (auto [c, t] : kCoapMethods)
        if (c == code) return std::string(t);
    std::string detail = std::to_string(code & 0x1F);
    if (detail.size() < 2) detail.insert(0, "0");
    return std::to_string(code >> 5) + "." + detail;
}

std::optional<std::uint8_t> coap_code_value(std::string_view token) {
    for (auto [c, t] : kCoapMethods)
        if (t == token) return c;
    if (token.size() == 4 && token[1] == '.' && std::isdigit(static_cast<unsigned char>(token[0])) &&
        std::isdigit(static_cast<unsigned char>(token[2])) && std::isdigit(static_cast<unsigned char>(token[3]))) {
        int cls = token[0] - '0';
        int detail = (token[2] - '0') * 10 + (token[3] - '0');
        if (cls <= 7 && detail <= 31) return static_cast<std::uint8_t>((cls << 5) | detail);
    }
    return std::nullopt;
}

}  // namespace

std::optional<CoapMessage> parse_coap(ByteView msg) {
    if (msg.size() < 4) return std::nullopt;
    std::uint8_t version = msg[0] >> 6;
    std::uint8_t type = (msg[0] >> 4) & 0x3;
    std::uint8_t tkl = msg[0] & 0x0F;
    std::uint8_t code = msg[1];
    if (version != 1 || tkl > 8) return std::nullopt;
    std::uint8_t cls = code >> 5;
    if (cls != 0 && cls != 2 && cls != 4 && cls != 5) return std::nullopt;
    if (code == 0 && (tkl != 0 || msg.size() != 4)) return std::nullopt;
    std::size_t off = 4 + tkl;
    if (off > msg.size()) return std::nullopt;

    std::vector<std::string> segments;
    unsigned option = 0;
    while (off < msg.size()) {
        std::uint8_t head = msg[off++];
        if (head == 0xFF) break;  // payload marker
        unsigned delta = head >> 4;
        unsigned len = head & 0x0F;
        auto extend = [&](unsigned& v) {
            if (v == 13) {
                if (off >= msg.size()) return false;
                v = 13u + msg[off++];
            } else if (v == 14) {
                if (off + 1 >= msg.size()) return false;
                v = 269u + load16(msg, off);
                off += 2;
            } else if (v == 15) {
                return false;
            }
            return true;
        };
        if (!extend(delta) || !extend(len)) return std::nullopt;
        if (off + len > msg.size()) return std::nullopt;
        option += delta;
        if (option == 11)
            segments.emplace_back(reinterpret_cast<const char*>(msg.data() + off), len);
        off += len;
    }

    CoapMessage out;
    out.selector.type = std::string(kCoapTypes[type]);
    out.selector.code = coap_code_token(code);
    for (const auto& s : segments) {
        if (s.find_first_of(" \t\r\n/") != std::string::npos) return std::nullopt;
        out.selector.uri_path += "/" + s;
    }
    out.response = cls >= 2;
    return out;
}

Bytes build_coap(const CoapSelector& selector) {
    auto type = std::find(kCoapTypes.begin(), kCoapTypes.end(), selector.type);
    if (type == kCoapTypes.end()) throw std::invalid_argument("unknown CoAP type '" + selector.type + "'");
    auto code = coap_code_value(selector.code);
    if (!code) throw std::invalid_argument("unknown CoAP code '" + selector.code + "'");
    Bytes out;
    out.push_back(static_cast<std::uint8_t>(0x40 | (static_cast<int>(type - kCoapTypes.begin()) << 4)));
    out.push_back(*code);
    put16(out, 0x0001);
    std::vector<std::string_view> segments;
    std::string_view path = selector.uri_path;
    if (!path.empty()) {
        std::size_t start = 1;
        while (true) {
            auto slash = path.find('/', start);
            if (slash == std::string_view::npos) {
                segments.push_back(path.substr(start));
                break;
            }
            segments.push_back(path.substr(start, slash - start));
            start = slash + 1;
        }
    }
    auto nibble = [](std::size_t v) { return v < 13 ? unsigned(v) : (v < 269 ? 13u : 14u); };
    unsigned prev = 0;
    for (auto seg : segments) {
        unsigned delta = 11 - prev;
        prev = 11;
        out.push_back(static_cast<std::uint8_t>((nibble(delta) << 4) | nibble(seg.size())));
        if (seg.size() >= 269) put16(out, static_cast<std::uint16_t>(seg.size() - 269));
        else if (seg.size() >= 13) out.push_back(static_cast<std::uint8_t>(seg.size() - 13));
        out.insert(out.end(), seg.begin(), seg.end());
    }
    return out;
}

// --- HTTP ------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 9> kHttpMethods{"GET", "POST", "PUT", "DELETE", "HEAD",
                                                       "OPTIONS", "PATCH", "CONNECT", "TRACE"};

}  // namespace

std::optional<HttpLine> parse_http(ByteView payload) {
    auto limit = std::min<std::size_t>(payload.size(), 2048);
    std::string_view text(reinterpret_cast<const char*>(payload.data()), limit);
    auto eol = text.find("\r\n");
    if (eol == std::string_view::npos) return std::nullopt;
    auto line = text.substr(0, eol);
    if (line.substr(0, 7) == "HTTP/1." && line.size() >= 12 && line[8] == ' ') {
        return HttpLine{HttpSelector{}, true};
    }
    auto sp1 = line.find(' ');
    if (sp1 == std::string_view::npos) return std::nullopt;
    auto method = line.substr(0, sp1);
    if (std::find(kHttpMethods.begin(), kHttpMethods.end(), method) == kHttpMethods.end()) return std::nullopt;
    auto sp2 = line.find(' ', sp1 + 1);
    if (sp2 == std::string_view::npos || line.substr(sp2 + 1, 5) != "HTTP/") return std::nullopt;
    std::string uri(line.substr(sp1 + 1, sp2 - sp1 - 1));
    if (uri.find("://") != std::string::npos) {
        auto path = uri.find('/', uri.find("://") + 3);
        uri = path == std::string::npos ? "/" : uri.substr(path);
    }
    if (!uri.empty() && uri.front() != '/') {
        if (method != "CONNECT" && uri != "*") return std::nullopt;
        uri.clear();
    }
    if (uri.find_first_of(" \t") != std::string::npos) return std::nullopt;
    return HttpLine{HttpSelector{std::string(method), uri}, false};
}

Bytes build_http(const HttpSelector& selector, bool response) {
    std::string text = response ? std::string("HTTP/1.1 200 OK\r\nContent-Length: 0\r\n\r\n")
                                : selector.method + " " + (selector.uri.empty() ? "/" : selector.uri) +
                                      " HTTP/1.1\r\nConnection: keep-alive\r\n\r\n";
    return Bytes(text.begin(), text.end());
}

// --- TLS -------------------------------------------------------------------

namespace {

std::optional<std::string> client_hello_sni(ByteView b) {
    // b starts at the handshake body of a ClientHello.
    std::size_t off = 2 + 32;  // version + random
    if (off >= b.size()) return std::nullopt;
    off += 1 + b[off];  // session id
    if (off + 2 > b.size()) return std::nullopt;
    off += 2 + load16(b, off);  // cipher suites
    if (off >= b.size()) return std::nullopt;
    off += 1 + b[off];  // compression methods
    if (off + 2 > b.size()) return std::nullopt;
    std::size_t ext_end = std::min(b.size(), off + 2 + load16(b, off));
    off += 2;
    while (off + 4 <= ext_end) {
        std::uint16_t type = load16(b, off);
        std::uint16_t len = load16(b, off + 2);
        off += 4;
        if (off + len > ext_end) return std::nullopt;
        if (type == 0 && len >= 5) {
            std::size_t p = off + 2;
            if (b[p] != 0) return std::nullopt;
            std::uint16_t name_len = load16(b, p + 1);
            if (p + 3 + name_len > off + len) return std::nullopt;
            auto name = lowercase(std::string(reinterpret_cast<const char*>(b.data() + p + 3), name_len));
            if (!is_valid_domain(name)) return std::nullopt;
            return name;
        }
        off += len;
    }
    return std::nullopt;
}

}  // namespace

TlsInfo parse_tls(ByteView p) {
    TlsInfo info;
    if (p.size() < 5 || p[1] != 0x03 || p[0] < 0x14 || p[0] > 0x17) return info;
    switch (p[0]) {
        case 0x14:
            info.record = TlsRecord::Handshake;
            return info;
        case 0x15:
        case 0x17:
            info.record = TlsRecord::AppData;
            return info;
        default:
            break;
    }
    info.record = TlsRecord::Handshake;
    if (p.size() >= 9 && p[5] == 0x01) {
        std::size_t body_len = (std::size_t{p[6]} << 16) | (std::size_t{p[7]} << 8) | p[8];
        auto body = p.subspan(9, std::min(body_len, p.size() - 9));
        if (auto sni = client_hello_sni(body)) {
            info.record = TlsRecord::ClientHello;
            info.sni = std::move(sni);
        }
    }
    return info;
}

namespace {

Bytes wrap_handshake(std::uint8_t msg_type, const Bytes& body) {
    Bytes out{0x16, 0x03, 0x01};
    put16(out, static_cast<std::uint16_t>(body.size() + 4));
    out.push_back(msg_type);
    out.push_back(static_cast<std::uint8_t>(body.size() >> 16));
    put16(out, static_cast<std::uint16_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

}  // namespace

Bytes build_client_hello(std::optional<std::string_view> sni) {
    Bytes body{0x03, 0x03};
    body.insert(body.end(), 32, 0x11);  // random
    body.push_back(0);                  // session id
    put16(body, 2);
    put16(body, 0x1301);  // TLS_AES_128_GCM_SHA256
    body.push_back(1);
    body.push_back(0);
    Bytes ext;
    if (sni) {
        put16(ext, 0x0000);
        put16(ext, static_cast<std::uint16_t>(sni->size() + 5));
        put16(ext, static_cast<std::uint16_t>(sni->size() + 3));
        ext.push_back(0);
        put16(ext, static_cast<std::uint16_t>(sni->size()));
        ext.insert(ext.end(), sni->begin(), sni->end());
    }
    put16(body, static_cast<std::uint16_t>(ext.size()));
    body.insert(body.end(), ext.begin(), ext.end());
    return wrap_handshake(0x01, body);
}

Bytes build_server_hello() {
    Bytes body{0x03, 0x03};
    body.insert(body.end(), 32, 0x22);
    body.push_back(0);
    put16(body, 0x1301);
    body.push_back(0);
    put16(body, 0);
    return wrap_handshake(0x02, body);
}

Bytes build_app_data(std::size_t body_len) {
    Bytes out{0x17, 0x03, 0x03};
    put16(out, static_cast<std::uint16_t>(body_len));
    out.insert(out.end(), body_len, 0xA5);
    return out;
}

}  // namespace hiddenflow::detail
