#include "hiddenflow/signature.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>
#include <unordered_map>

#include "hiddenflow/errors.hpp"

namespace hiddenflow {

// --- DNS table ---------------------------------------------------------------

const std::string* DnsTable::lookup(const IpAddress& addr) const {
    auto it = entries.find(addr);
    return it == entries.end() ? nullptr : &it->second;
}

void DnsTable::learn(const IpAddress& addr, const std::string& name, const Topology& topo) {
    if (topo.is_local(addr) || addr.is_broadcast() || addr.is_multicast()) return;
    if (!is_valid_domain(name)) return;
    entries[addr] = name;
}

void update_table(DnsTable& table, const ParsedPacket& packet, const Topology& topo) {
    for (const auto& [name, addr] : packet.dns_answers) table.learn(addr, name, topo);
    if (packet.sni) {
        if (packet.dst_addr && !topo.is_local(*packet.dst_addr)) table.learn(*packet.dst_addr, *packet.sni, topo);
        else if (packet.src_addr && !topo.is_local(*packet.src_addr)) table.learn(*packet.src_addr, *packet.sni, topo);
    }
}

HostRef name_host(const IpAddress& addr, const DnsTable& table, const Topology& topo) {
    if (addr.is_broadcast()) return HostRef::broadcast();
    if (addr.is_multicast()) return HostRef::multicast(addr);
    if (auto role = topo.role_of(addr)) return HostRef::role(*role);
    if (topo.is_local(addr)) return HostRef::address(addr);
    if (const auto* name = table.lookup(addr)) return HostRef::domain(*name);
    return HostRef::address(addr);
}

std::optional<std::pair<HostRef, HostRef>> name_endpoints(const ParsedPacket& packet, const DnsTable& table,
                                                          const Topology& topo) {
    if (!packet.src_addr || !packet.dst_addr) return std::nullopt;
    return std::pair{name_host(*packet.src_addr, table, topo), name_host(*packet.dst_addr, table, topo)};
}

// --- aggregation ---------------------------------------------------------------

namespace {

struct Endpoint {
    HostRef host;
    std::string token;
    std::optional<Port> port;

    auto order_key() const { return std::tie(token, port); }
};

// One exchange between two concrete endpoints within a single trace.
struct Conversation {
    Transport transport;
    Endpoint a;  // a.order_key() <= b.order_key()
    Endpoint b;
    AppSelector app;
    std::string app_key;
    bool a_sent = false;
    bool b_sent = false;
};

std::string port_text(const std::optional<Port>& p) { return p ? std::to_string(*p) : "-"; }

std::string connection_key(Transport t, const Endpoint& a, const Endpoint& b) {
    return std::string(to_string(t)) + "|" + a.token + "|" + port_text(a.port) + "|" + b.token + "|" +
           port_text(b.port);
}

bool is_response_selector(const ParsedPacket& p) {
    return p.is_response && (std::holds_alternative<HttpSelector>(p.app) || std::holds_alternative<CoapSelector>(p.app));
}

bool is_request_selector(const ParsedPacket& p) {
    return !p.is_response && (std::holds_alternative<HttpSelector>(p.app) || std::holds_alternative<CoapSelector>(p.app));
}

using ConversationMap = std::map<std::string, Conversation>;

ConversationMap collect_conversations(const Trace& trace, const Topology& topo, DnsTable& table) {
    ConversationMap conversations;
    // Last request selector per connection; responses and bare payload
    // segments inherit it, so a request and its answer form one flow.
    std::unordered_map<std::string, AppSelector> last_request;
    for (const auto& pkt : trace.packets) {
        update_table(table, pkt, topo);
        if (pkt.transport == PacketTransport::Other) continue;
        auto names = name_endpoints(pkt, table, topo);
        if (!names) continue;
        Transport transport = pkt.transport == PacketTransport::Tcp ? Transport::Tcp : Transport::Udp;
        Endpoint src{names->first, names->first.token(), pkt.src_port};
        Endpoint dst{names->second, names->second.token(), pkt.dst_port};
        bool src_is_a = src.order_key() <= dst.order_key();
        const Endpoint& a = src_is_a ? src : dst;
        const Endpoint& b = src_is_a ? dst : src;
        auto conn = connection_key(transport, a, b);

        AppSelector app = pkt.app;
        if (is_request_selector(pkt)) {
            last_request[conn] = app;
        } else if (is_response_selector(pkt) || !has_app(app)) {
            auto it = last_request.find(conn);
            if (it != last_request.end()) app = it->second;
            else app = std::monostate{};
        }

        auto app_key = app_to_json(app).dump();
        auto key = conn + "|" + app_key;
        auto [it, inserted] = conversations.try_emplace(key);
        auto& c = it->second;
        if (inserted) {
            c.transport = transport;
            c.a = a;
            c.b = b;
            c.app = app;
            c.app_key = app_key;
        }
        (src_is_a ? c.a_sent : c.b_sent) = true;
    }
    return conversations;
}

// Flow attributes other than ports, with the two hosts in token order.
std::string port_free_key(const Conversation& c) {
    return std::string(to_string(c.transport)) + "|" + c.a.token + "|" + c.b.token + "|" + c.app_key;
}

struct Reduced {
    Transport transport;
    Endpoint a;
    Endpoint b;
    AppSelector app;
    bool a_sent = false;
    bool b_sent = false;
};

}  // namespace

std::vector<FlowSet> aggregate_flows(const std::vector<Trace>& traces, const Topology& topo, DnsTable& table) {
    if (traces.empty()) throw EmptyTraceSet("aggregate_flows: no successful traces");

    // Fold the DNS table in capture (timestamp) order so the result does not
    // depend on the order the traces were passed in.
    std::vector<std::size_t> order(traces.size());
    std::iota(order.begin(), order.end(), 0);
    auto first_ts = [&](std::size_t i) {
        return traces[i].packets.empty() ? Timestamp{} : traces[i].packets.front().timestamp;
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return first_ts(x) < first_ts(y); });

    std::vector<ConversationMap> per_trace(traces.size());
    for (auto i : order) per_trace[i] = collect_conversations(traces[i], topo, table);

    // Ports seen per (port-free key, side) in each trace.
    std::map<std::string, std::vector<std::set<Port>>> side_ports;
    auto side_key = [](const std::string& base, bool side_a) { return base + (side_a ? "|A" : "|B"); };
    for (std::size_t i = 0; i < per_trace.size(); ++i) {
        for (const auto& [_, c] : per_trace[i]) {
            auto base = port_free_key(c);
            for (bool side_a : {true, false}) {
                const auto& ep = side_a ? c.a : c.b;
                auto& slots = side_ports[side_key(base, side_a)];
                slots.resize(traces.size());
                if (ep.port) slots[i].insert(*ep.port);
            }
        }
    }
    auto retain = [&](const std::string& base, bool side_a, std::optional<Port> port) -> std::optional<Port> {
        if (!port) return std::nullopt;
        if (is_well_known_port(*port)) return port;
        const auto& slots = side_ports.at(side_key(base, side_a));
        bool everywhere = std::all_of(slots.begin(), slots.end(), [&](const std::set<Port>& s) { return s.count(*port) > 0; });
        return everywhere ? port : std::nullopt;
    };

    std::vector<FlowSet> result(traces.size());
    for (std::size_t i = 0; i < per_trace.size(); ++i) {
        std::map<std::string, Reduced> merged;
        for (const auto& [_, c] : per_trace[i]) {
            auto base = port_free_key(c);
            Endpoint a = c.a;
            Endpoint b = c.b;
            a.port = retain(base, true, a.port);
            b.port = retain(base, false, b.port);
            auto key = connection_key(c.transport, a, b) + "|" + c.app_key;
            auto [it, inserted] = merged.try_emplace(key);
            auto& r = it->second;
            if (inserted) r = Reduced{c.transport, a, b, c.app};
            r.a_sent = r.a_sent || c.a_sent;
            r.b_sent = r.b_sent || c.b_sent;
        }
        for (const auto& [_, r] : merged) {
            FlowId f;
            f.transport = r.transport;
            f.app = r.app;
            if (r.a_sent && r.b_sent) {
                f.direction = Direction::Bidirectional;
                f.initiator = r.a.host;
                f.initiator_port = r.a.port;
                f.responder = r.b.host;
                f.responder_port = r.b.port;
                f = canonicalize(f);
            } else {
                const auto& sender = r.a_sent ? r.a : r.b;
                const auto& receiver = r.a_sent ? r.b : r.a;
                f.direction = Direction::Unidirectional;
                f.initiator = sender.host;
                f.initiator_port = sender.port;
                f.responder = receiver.host;
                f.responder_port = receiver.port;
            }
            result[i].insert(std::move(f));
        }
    }
    return result;
}

std::vector<FlowSet> aggregate_flows(const std::vector<Trace>& traces, const Topology& topo,
                                     const DnsTable& seed_table) {
    DnsTable table = seed_table;
    return aggregate_flows(traces, topo, table);
}

// --- signatures ----------------------------------------------------------------

Json EventSignature::to_json() const {
    Json flows_json = Json::array();
    for (const auto& f : flows) flows_json.push_back(f.to_json());
    return Json{{"m", m}, {"m_plus", m_plus}, {"flows", std::move(flows_json)}};
}

EventSignature EventSignature::from_json(const Json& j) {
    if (!j.is_object() || !j.contains("flows") || !j["flows"].is_array())
        throw SchemaError("signature: expected an object with a 'flows' array");
    EventSignature sig;
    sig.m = j.value("m", 0);
    sig.m_plus = j.value("m_plus", 0);
    for (const auto& f : j["flows"]) sig.flows.insert(FlowId::from_json(f));
    return sig;
}

EventSignature extract_signature(const std::vector<FlowSet>& flow_sets, int m) {
    if (flow_sets.empty()) throw EmptyTraceSet("extract_signature: no successful captures");
    EventSignature sig;
    sig.m = m;
    sig.m_plus = static_cast<int>(flow_sets.size());
    sig.flows = flow_sets.front();
    for (std::size_t i = 1; i < flow_sets.size(); ++i) {
        FlowSet kept;
        std::set_intersection(sig.flows.begin(), sig.flows.end(), flow_sets[i].begin(), flow_sets[i].end(),
                              std::inserter(kept, kept.end()), FlowKeyLess{});
        sig.flows = std::move(kept);
    }
    return sig;
}

bool accept_signature(const EventSignature& sig) noexcept { return 2 * sig.m_plus >= sig.m && sig.m_plus > 0; }

}  // namespace hiddenflow
