#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "hiddenflow/ip.hpp"

namespace hiddenflow {

/// Insertion-ordered JSON; every serialization in this library relies on a
/// stable field order.
using Json = nlohmann::ordered_json;

using Port = std::uint16_t;

// ---------------------------------------------------------------------------
// Hosts
// ---------------------------------------------------------------------------

enum class Role : std::uint8_t { Device, Phone, Gateway };

std::string_view to_string(Role role) noexcept;

/// Lowercase, non-empty, dot-separated labels. Underscores are accepted so
/// DNS-SD service names ("_services._dns-sd._udp.local") qualify.
bool is_valid_domain(std::string_view name) noexcept;

/// One end of a flow, after local addresses were mapped to roles and remote
/// addresses to domain names where possible.
class HostRef {
public:
    struct RoleRef {
        Role role;
        friend bool operator==(const RoleRef&, const RoleRef&) = default;
    };
    struct Domain {
        std::string name;
        friend bool operator==(const Domain&, const Domain&) = default;
    };
    struct Address {
        IpAddress addr;
        friend bool operator==(const Address&, const Address&) = default;
    };
    struct Broadcast {
        friend bool operator==(const Broadcast&, const Broadcast&) = default;
    };
    struct Multicast {
        IpAddress group;
        friend bool operator==(const Multicast&, const Multicast&) = default;
    };

    using Value = std::variant<RoleRef, Domain, Address, Broadcast, Multicast>;

    HostRef() : value_(RoleRef{Role::Device}) {}

    static HostRef role(Role r) { return HostRef(RoleRef{r}); }
    static HostRef device() { return role(Role::Device); }
    static HostRef phone() { return role(Role::Phone); }
    static HostRef gateway() { return role(Role::Gateway); }
    /// Throws std::invalid_argument unless `name` is a valid lowercase domain.
    static HostRef domain(std::string name);
    static HostRef address(IpAddress addr) { return HostRef(Address{addr}); }
    static HostRef broadcast() { return HostRef(Broadcast{}); }
    /// Throws std::invalid_argument unless `group` is a multicast address.
    static HostRef multicast(IpAddress group);

    /// Parses the token form produced by `token()`. Returns nothing when the
    /// text is not a recognised host token.
    static std::optional<HostRef> parse(std::string_view token);

    const Value& value() const noexcept { return value_; }

    bool is_role() const noexcept { return std::holds_alternative<RoleRef>(value_); }
    bool is_role(Role r) const noexcept {
        auto* p = std::get_if<RoleRef>(&value_);
        return p && p->role == r;
    }
    bool is_domain() const noexcept { return std::holds_alternative<Domain>(value_); }
    bool is_address() const noexcept { return std::holds_alternative<Address>(value_); }
    std::optional<Role> role_value() const noexcept;
    const std::string* domain_name() const noexcept;

    /// `device`, `phone`, `gateway`, `broadcast`, `multicast:<addr>`,
    /// `ip:<addr>` or `dom:<name>`. Shared by the JSON form and the rule
    /// grammar, and the basis of every ordering between hosts.
    std::string token() const;

    /// Human label: role name, domain, or the bare address.
    std::string display() const;

    friend bool operator==(const HostRef&, const HostRef&) = default;

private:
    explicit HostRef(Value v) : value_(std::move(v)) {}
    Value value_;
};

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

struct Topology {
    IpAddress device_addr;
    IpAddress phone_addr;
    IpAddress gateway_addr;
    std::vector<Cidr> local_prefixes;

    /// Throws SchemaError when role addresses collide or fall outside every
    /// local prefix.
    void validate() const;

    /// Human-readable warnings (overlapping prefixes). Never fatal.
    std::vector<std::string> warnings() const;

    IpAddress address_of(Role role) const noexcept;
    std::optional<Role> role_of(const IpAddress& addr) const noexcept;
    bool is_local(const IpAddress& addr) const noexcept;

    Json to_json() const;
    /// Throws SchemaError.
    static Topology from_json(const Json& j);
};

// ---------------------------------------------------------------------------
// Application selectors
// ---------------------------------------------------------------------------

struct DnsSelector {
    std::string qtype;
    std::string qname;
    friend bool operator==(const DnsSelector&, const DnsSelector&) = default;
};

struct HttpSelector {
    std::string method;
    std::string uri;
    friend bool operator==(const HttpSelector&, const HttpSelector&) = default;
};

struct CoapSelector {
    std::string type;
    std::string code;
    std::string uri_path;
    friend bool operator==(const CoapSelector&, const CoapSelector&) = default;
};

using AppSelector = std::variant<std::monostate, DnsSelector, HttpSelector, CoapSelector>;

inline bool has_app(const AppSelector& app) noexcept {
    return !std::holds_alternative<std::monostate>(app);
}

Json app_to_json(const AppSelector& app);
/// Throws SchemaError.
AppSelector app_from_json(const Json& j);
std::string app_display(const AppSelector& app);

// ---------------------------------------------------------------------------
// Flow identifiers
// ---------------------------------------------------------------------------

enum class Transport : std::uint8_t { Tcp, Udp };
enum class Direction : std::uint8_t { Bidirectional, Unidirectional };

std::string_view to_string(Transport t) noexcept;
std::string_view to_string(Direction d) noexcept;

/// Multi-layer flow descriptor: the unit of signatures, tree nodes and rules.
struct FlowId {
    HostRef initiator;
    HostRef responder;
    std::optional<Port> initiator_port;
    std::optional<Port> responder_port;
    Transport transport = Transport::Tcp;
    Direction direction = Direction::Bidirectional;
    AppSelector app;

    /// Throws std::invalid_argument on a broken invariant (port 0, DNS over
    /// TCP, DNS responder port other than 53/5353, malformed selector).
    void validate() const;

    /// Canonical JSON with field order initiator, responder, initiator_port,
    /// responder_port, transport, direction, app.
    Json to_json() const;
    /// Throws SchemaError.
    static FlowId from_json(const Json& j);

    /// Compact dump of `to_json()`; the total order and tie-break key.
    std::string key() const;

    /// Short label in the style "device:9999 <-> phone [tcp]".
    std::string display() const;

    friend bool operator==(const FlowId&, const FlowId&) = default;
};

/// Orders flows by their canonical serialization.
struct FlowKeyLess {
    bool operator()(const FlowId& a, const FlowId& b) const { return a.key() < b.key(); }
};

/// Deterministic orientation. Bidirectional flows put the endpoint with the
/// lower rank first (device < phone < gateway < everything else) and fall
/// back to the lexicographic order of host tokens, then ports. Unidirectional
/// flows are returned unchanged.
FlowId canonicalize(const FlowId& flow);

/// Same as above; throws UnresolvedHost if a role endpoint has no binding.
/// Every role is bound in a valid Topology, so this only rejects topologies
/// that failed validation.
FlowId canonicalize(const FlowId& flow, const Topology& topo);

/// Well-known service ports kept in Flow IDs regardless of cross-trace
/// recurrence: 1-1023 plus 5353, 5683, 8883 and 9999.
bool is_well_known_port(Port port) noexcept;

// ---------------------------------------------------------------------------
// Dissected packets
// ---------------------------------------------------------------------------

struct Timestamp {
    std::int64_t sec = 0;
    std::int32_t usec = 0;

    double seconds() const noexcept { return static_cast<double>(sec) + usec * 1e-6; }
    friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

enum class PacketTransport : std::uint8_t { Tcp, Udp, Other };

/// Classification of the first TLS record in a TCP payload.
enum class TlsRecord : std::uint8_t { None, ClientHello, Handshake, AppData };

namespace tcp_flag {
inline constexpr std::uint8_t Fin = 0x01;
inline constexpr std::uint8_t Syn = 0x02;
inline constexpr std::uint8_t Rst = 0x04;
inline constexpr std::uint8_t Psh = 0x08;
inline constexpr std::uint8_t Ack = 0x10;
}  // namespace tcp_flag

struct ParsedPacket {
    Timestamp timestamp;
    std::optional<IpAddress> src_addr;
    std::optional<IpAddress> dst_addr;
    std::optional<Port> src_port;
    std::optional<Port> dst_port;
    PacketTransport transport = PacketTransport::Other;
    /// For Other: "arp", "icmp", "icmpv6", "ip:<proto>", "ether:<hex type>"
    /// or "malformed".
    std::string other_token;
    AppSelector app;
    /// DNS QR bit, HTTP status line, or CoAP response-class code.
    bool is_response = false;
    std::vector<std::pair<std::string, IpAddress>> dns_answers;
    std::optional<std::string> sni;
    std::uint8_t tcp_flags = 0;
    TlsRecord tls = TlsRecord::None;
    /// Transport payload length in bytes.
    std::uint32_t payload_len = 0;
    std::uint32_t wire_len = 0;
    bool control_plane = false;

    /// Field-for-field comparison that ignores wire_len.
    bool same_fields(const ParsedPacket& other) const;

    Json to_json() const;

    friend bool operator==(const ParsedPacket&, const ParsedPacket&) = default;
};

}  // namespace hiddenflow
