#include "hiddenflow/core_model.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

#include "hiddenflow/errors.hpp"

namespace hiddenflow {

std::string_view to_string(Role role) noexcept {
    switch (role) {
        case Role::Device: return "device";
        case Role::Phone: return "phone";
        case Role::Gateway: return "gateway";
    }
    return "device";
}

bool is_valid_domain(std::string_view name) noexcept {
    if (name.empty() || name.size() > 253) return false;
    std::size_t label_len = 0;
    for (char c : name) {
        if (c == '.') {
            if (label_len == 0) return false;
            label_len = 0;
            continue;
        }
        bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
        if (!ok || ++label_len > 63) return false;
    }
    return label_len != 0;
}

// --- HostRef ---------------------------------------------------------------

HostRef HostRef::domain(std::string name) {
    if (!is_valid_domain(name)) throw std::invalid_argument("invalid domain name '" + name + "'");
    return HostRef(Domain{std::move(name)});
}

HostRef HostRef::multicast(IpAddress group) {
    if (!group.is_multicast())
        throw std::invalid_argument(group.to_string() + " is not a multicast group");
    return HostRef(Multicast{group});
}

std::optional<HostRef> HostRef::parse(std::string_view token) {
    if (token == "device") return device();
    if (token == "phone") return phone();
    if (token == "gateway") return gateway();
    if (token == "broadcast") return broadcast();
    auto colon = token.find(':');
    if (colon == std::string_view::npos) return std::nullopt;
    auto kind = token.substr(0, colon);
    auto rest = token.substr(colon + 1);
    if (kind == "dom") {
        if (!is_valid_domain(rest)) return std::nullopt;
        return HostRef(Domain{std::string(rest)});
    }
    auto addr = IpAddress::parse(rest);
    if (!addr) return std::nullopt;
    if (kind == "ip") {
        if (addr->is_broadcast() || addr->is_multicast()) return std::nullopt;
        return address(*addr);
    }
    if (kind == "multicast") {
        if (!addr->is_multicast()) return std::nullopt;
        return HostRef(Multicast{*addr});
    }
    return std::nullopt;
}

std::optional<Role> HostRef::role_value() const noexcept {
    if (auto* r = std::get_if<RoleRef>(&value_)) return r->role;
    return std::nullopt;
}

const std::string* HostRef::domain_name() const noexcept {
    if (auto* d = std::get_if<Domain>(&value_)) return &d->name;
    return nullptr;
}

std::string HostRef::token() const {
    struct Visitor {
        std::string operator()(const RoleRef& r) const { return std::string(to_string(r.role)); }
        std::string operator()(const Domain& d) const { return "dom:" + d.name; }
        std::string operator()(const Address& a) const { return "ip:" + a.addr.to_string(); }
        std::string operator()(const Broadcast&) const { return "broadcast"; }
        std::string operator()(const Multicast& m) const { return "multicast:" + m.group.to_string(); }
    };
    return std::visit(Visitor{}, value_);
}

std::string HostRef::display() const {
    struct Visitor {
        std::string operator()(const RoleRef& r) const { return std::string(to_string(r.role)); }
        std::string operator()(const Domain& d) const { return d.name; }
        std::string operator()(const Address& a) const { return a.addr.to_string(); }
        std::string operator()(const Broadcast&) const { return "broadcast(255.255.255.255)"; }
        std::string operator()(const Multicast& m) const { return "multicast(" + m.group.to_string() + ")"; }
    };
    return std::visit(Visitor{}, value_);
}

// --- Topology --------------------------------------------------------------

void Topology::validate() const {
    if (device_addr == phone_addr || device_addr == gateway_addr || phone_addr == gateway_addr)
        throw SchemaError("topology: device, phone and gateway addresses must be distinct");
    for (auto [name, addr] : {std::pair{"device", device_addr}, std::pair{"phone", phone_addr},
                              std::pair{"gateway", gateway_addr}}) {
        if (!is_local(addr))
            throw SchemaError(std::string("topology: ") + name + " address " + addr.to_string() +
                              " is outside every local prefix");
    }
}

std::vector<std::string> Topology::warnings() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < local_prefixes.size(); ++i)
        for (std::size_t j = i + 1; j < local_prefixes.size(); ++j)
            if (local_prefixes[i].overlaps(local_prefixes[j]))
                out.push_back("local prefixes " + local_prefixes[i].to_string() + " and " +
                              local_prefixes[j].to_string() + " overlap");
    return out;
}

IpAddress Topology::address_of(Role role) const noexcept {
    switch (role) {
        case Role::Device: return device_addr;
        case Role::Phone: return phone_addr;
        case Role::Gateway: return gateway_addr;
    }
    return device_addr;
}

std::optional<Role> Topology::role_of(const IpAddress& addr) const noexcept {
    if (addr == device_addr) return Role::Device;
    if (addr == phone_addr) return Role::Phone;
    if (addr == gateway_addr) return Role::Gateway;
    return std::nullopt;
}

bool Topology::is_local(const IpAddress& addr) const noexcept {
    return std::any_of(local_prefixes.begin(), local_prefixes.end(),
                       [&](const Cidr& c) { return c.contains(addr); });
}

Json Topology::to_json() const {
    Json prefixes = Json::array();
    for (const auto& p : local_prefixes) prefixes.push_back(p.to_string());
    return Json{{"device", device_addr.to_string()},
                {"phone", phone_addr.to_string()},
                {"gateway", gateway_addr.to_string()},
                {"local_prefixes", std::move(prefixes)}};
}

namespace {

IpAddress json_address(const Json& j, const char* field, const char* ctx) {
    if (!j.contains(field) || !j[field].is_string())
        throw SchemaError(std::string(ctx) + ": missing string field '" + field + "'");
    auto a = IpAddress::parse(j[field].get<std::string>());
    if (!a) throw SchemaError(std::string(ctx) + ": invalid address in '" + field + "'");
    return *a;
}

}  // namespace

Topology Topology::from_json(const Json& j) {
    if (!j.is_object()) throw SchemaError("topology: expected an object");
    Topology t;
    t.device_addr = json_address(j, "device", "topology");
    t.phone_addr = json_address(j, "phone", "topology");
    t.gateway_addr = json_address(j, "gateway", "topology");
    if (!j.contains("local_prefixes") || !j["local_prefixes"].is_array())
        throw SchemaError("topology: missing array 'local_prefixes'");
    for (const auto& p : j["local_prefixes"]) {
        if (!p.is_string()) throw SchemaError("topology: local prefix must be a string");
        auto c = Cidr::parse(p.get<std::string>());
        if (!c) throw SchemaError("topology: invalid prefix '" + p.get<std::string>() + "'");
        t.local_prefixes.push_back(*c);
    }
    t.validate();
    return t;
}

// --- AppSelector -----------------------------------------------------------

Json app_to_json(const AppSelector& app) {
    struct Visitor {
        Json operator()(std::monostate) const { return nullptr; }
        Json operator()(const DnsSelector& d) const {
            return Json{{"proto", "dns"}, {"qtype", d.qtype}, {"qname", d.qname}};
        }
        Json operator()(const HttpSelector& h) const {
            return Json{{"proto", "http"}, {"method", h.method}, {"uri", h.uri}};
        }
        Json operator()(const CoapSelector& c) const {
            return Json{{"proto", "coap"}, {"type", c.type}, {"code", c.code}, {"uri_path", c.uri_path}};
        }
    };
    return std::visit(Visitor{}, app);
}

namespace {

std::string json_string(const Json& j, const char* field, const char* ctx) {
    if (!j.contains(field) || !j[field].is_string())
        throw SchemaError(std::string(ctx) + ": missing string field '" + field + "'");
    return j[field].get<std::string>();
}

}  // namespace

AppSelector app_from_json(const Json& j) {
    if (j.is_null()) return std::monostate{};
    if (!j.is_object()) throw SchemaError("app: expected null or an object");
    auto proto = json_string(j, "proto", "app");
    if (proto == "dns") return DnsSelector{json_string(j, "qtype", "app"), json_string(j, "qname", "app")};
    if (proto == "http") return HttpSelector{json_string(j, "method", "app"), json_string(j, "uri", "app")};
    if (proto == "coap")
        return CoapSelector{json_string(j, "type", "app"), json_string(j, "code", "app"),
                            json_string(j, "uri_path", "app")};
    throw SchemaError("app: unknown proto '" + proto + "'");
}

std::string app_display(const AppSelector& app) {
    struct Visitor {
        std::string operator()(std::monostate) const { return {}; }
        std::string operator()(const DnsSelector& d) const { return "dns " + d.qtype + " " + d.qname; }
        std::string operator()(const HttpSelector& h) const { return "http " + h.method + " " + h.uri; }
        std::string operator()(const CoapSelector& c) const {
            return "coap " + c.type + " " + c.code + " " + c.uri_path;
        }
    };
    return std::visit(Visitor{}, app);
}

// --- FlowId ----------------------------------------------------------------

std::string_view to_string(Transport t) noexcept { return t == Transport::Tcp ? "tcp" : "udp"; }

std::string_view to_string(Direction d) noexcept {
    return d == Direction::Bidirectional ? "bi" : "uni";
}

namespace {

bool valid_uri(const std::string& uri) { return uri.empty() || uri.front() == '/'; }

bool valid_token(const std::string& s) {
    return !s.empty() && std::none_of(s.begin(), s.end(), [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '=';
    });
}

}  // namespace

void FlowId::validate() const {
    if ((initiator_port && *initiator_port == 0) || (responder_port && *responder_port == 0))
        throw std::invalid_argument("flow port must be in 1-65535");
    if (auto* d = std::get_if<DnsSelector>(&app)) {
        if (transport != Transport::Udp) throw std::invalid_argument("DNS flows must use UDP");
        auto dns_port = [](std::optional<Port> p) { return p && (*p == 53 || *p == 5353); };
        // Canonical orientation may put a local DNS server in the initiator
        // slot; its port then carries the service.
        if (responder_port && !dns_port(responder_port) && !dns_port(initiator_port))
            throw std::invalid_argument("DNS responder port must be 53 or 5353");
        if (!valid_token(d->qtype) || !is_valid_domain(d->qname))
            throw std::invalid_argument("invalid DNS selector");
    } else if (auto* h = std::get_if<HttpSelector>(&app)) {
        if (!valid_token(h->method) || !valid_uri(h->uri) ||
            h->uri.find_first_of(" \t\r\n") != std::string::npos)
            throw std::invalid_argument("invalid HTTP selector");
    } else if (auto* c = std::get_if<CoapSelector>(&app)) {
        if (!valid_token(c->type) || !valid_token(c->code) || !valid_uri(c->uri_path) ||
            c->uri_path.find_first_of(" \t\r\n") != std::string::npos)
            throw std::invalid_argument("invalid CoAP selector");
    }
}

Json FlowId::to_json() const {
    auto port = [](const std::optional<Port>& p) -> Json {
        if (p) return *p;
        return nullptr;
    };
    return Json{{"initiator", initiator.token()},
                {"responder", responder.token()},
                {"initiator_port", port(initiator_port)},
                {"responder_port", port(responder_port)},
                {"transport", std::string(to_string(transport))},
                {"direction", std::string(to_string(direction))},
                {"app", app_to_json(app)}};
}

FlowId FlowId::from_json(const Json& j) {
    if (!j.is_object()) throw SchemaError("flow: expected an object");
    auto host = [&](const char* field) {
        auto text = json_string(j, field, "flow");
        auto h = HostRef::parse(text);
        if (!h) throw SchemaError("flow: invalid host '" + text + "'");
        return *h;
    };
    auto port = [&](const char* field) -> std::optional<Port> {
        if (!j.contains(field) || j[field].is_null()) return std::nullopt;
        if (!j[field].is_number_integer()) throw SchemaError(std::string("flow: '") + field + "' must be an integer");
        auto v = j[field].get<long long>();
        if (v < 1 || v > 65535) throw SchemaError(std::string("flow: '") + field + "' out of range");
        return static_cast<Port>(v);
    };
    FlowId f;
    f.initiator = host("initiator");
    f.responder = host("responder");
    f.initiator_port = port("initiator_port");
    f.responder_port = port("responder_port");
    auto transport = json_string(j, "transport", "flow");
    if (transport == "tcp") f.transport = Transport::Tcp;
    else if (transport == "udp") f.transport = Transport::Udp;
    else throw SchemaError("flow: transport must be tcp or udp");
    auto direction = json_string(j, "direction", "flow");
    if (direction == "bi") f.direction = Direction::Bidirectional;
    else if (direction == "uni") f.direction = Direction::Unidirectional;
    else throw SchemaError("flow: direction must be bi or uni");
    f.app = app_from_json(j.contains("app") ? j["app"] : Json(nullptr));
    try {
        f.validate();
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("flow: ") + e.what());
    }
    return f;
}

std::string FlowId::key() const { return to_json().dump(); }

std::string FlowId::display() const {
    auto end = [](const HostRef& h, const std::optional<Port>& p) {
        auto s = h.display();
        if (p) s += ":" + std::to_string(*p);
        return s;
    };
    std::string out = end(initiator, initiator_port);
    out += direction == Direction::Bidirectional ? " <-> " : " -> ";
    out += end(responder, responder_port);
    out += " [" + std::string(to_string(transport));
    if (has_app(app)) out += " / " + app_display(app);
    out += "]";
    return out;
}

namespace {

int host_rank(const HostRef& h) {
    if (auto r = h.role_value()) {
        switch (*r) {
            case Role::Device: return 0;
            case Role::Phone: return 1;
            case Role::Gateway: return 2;
        }
    }
    return 3;
}

}  // namespace

FlowId canonicalize(const FlowId& flow) {
    if (flow.direction == Direction::Unidirectional) return flow;
    auto init_key = std::make_tuple(host_rank(flow.initiator), flow.initiator.token(), flow.initiator_port);
    auto resp_key = std::make_tuple(host_rank(flow.responder), flow.responder.token(), flow.responder_port);
    if (resp_key < init_key) {
        FlowId out = flow;
        std::swap(out.initiator, out.responder);
        std::swap(out.initiator_port, out.responder_port);
        return out;
    }
    return flow;
}

FlowId canonicalize(const FlowId& flow, const Topology& topo) {
    // Role bindings exist for every valid topology; validate() reports the
    // broken cases (colliding or non-local role addresses).
    try {
        topo.validate();
    } catch (const SchemaError& e) {
        if (flow.initiator.is_role() || flow.responder.is_role()) throw UnresolvedHost(e.what());
    }
    return canonicalize(flow);
}

bool is_well_known_port(Port port) noexcept {
    return (port >= 1 && port <= 1023) || port == 5353 || port == 5683 || port == 8883 || port == 9999;
}

// --- ParsedPacket ----------------------------------------------------------

bool ParsedPacket::same_fields(const ParsedPacket& other) const {
    ParsedPacket a = *this;
    ParsedPacket b = other;
    a.wire_len = b.wire_len = 0;
    return a == b;
}

Json ParsedPacket::to_json() const {
    auto addr = [](const std::optional<IpAddress>& a) -> Json {
        if (a) return a->to_string();
        return nullptr;
    };
    auto port = [](const std::optional<Port>& p) -> Json {
        if (p) return *p;
        return nullptr;
    };
    std::string transport_name = transport == PacketTransport::Tcp   ? "tcp"
                                 : transport == PacketTransport::Udp ? "udp"
                                                                     : other_token;
    Json answers = Json::array();
    for (const auto& [name, ip] : dns_answers) answers.push_back(Json::array({name, ip.to_string()}));
    return Json{{"ts", timestamp.seconds()},
                {"src", addr(src_addr)},
                {"dst", addr(dst_addr)},
                {"sport", port(src_port)},
                {"dport", port(dst_port)},
                {"transport", transport_name},
                {"app", app_to_json(app)},
                {"is_response", is_response},
                {"dns_answers", std::move(answers)},
                {"sni", sni ? Json(*sni) : Json(nullptr)},
                {"wire_len", wire_len},
                {"control_plane", control_plane}};
}

}  // namespace hiddenflow
