#include "hiddenflow/simnet.hpp"

#include <algorithm>
#include <map>
#include <random>

#include "hiddenflow/errors.hpp"

namespace hiddenflow {

// --- JSON helpers ------------------------------------------------------------

Json PacketShape::to_json() const { return Json{{"count", count}, {"sizes", sizes}}; }

bool SuccessFormula::evaluate(const std::function<bool(const std::string&)>& delivered) const {
    switch (kind) {
        case Kind::Flow: return delivered(flow_id);
        case Kind::And:
            return std::all_of(terms.begin(), terms.end(), [&](const auto& t) { return t.evaluate(delivered); });
        case Kind::Or:
            return std::any_of(terms.begin(), terms.end(), [&](const auto& t) { return t.evaluate(delivered); });
    }
    return false;
}

Json SuccessFormula::to_json() const {
    if (kind == Kind::Flow) return Json{{"flow", flow_id}};
    Json arr = Json::array();
    for (const auto& t : terms) arr.push_back(t.to_json());
    return Json{{kind == Kind::And ? "and" : "or", std::move(arr)}};
}

SuccessFormula SuccessFormula::from_json(const Json& j) {
    if (!j.is_object() || j.size() != 1) throw SchemaError("success: each term must be an object with one key");
    SuccessFormula f;
    const auto& [key, value] = *j.items().begin();
    if (key == "flow") {
        if (!value.is_string()) throw SchemaError("success: 'flow' must name a flow id");
        f.kind = Kind::Flow;
        f.flow_id = value.get<std::string>();
        return f;
    }
    if (key != "and" && key != "or") throw SchemaError("success: unknown operator '" + key + "'");
    if (!value.is_array() || value.empty()) throw SchemaError("success: '" + key + "' needs a non-empty list");
    f.kind = key == "and" ? Kind::And : Kind::Or;
    for (const auto& t : value) f.terms.push_back(from_json(t));
    return f;
}

namespace {

std::string require_string(const Json& j, const char* field, const std::string& ctx) {
    if (!j.contains(field) || !j[field].is_string())
        throw SchemaError(ctx + ": missing string field '" + field + "'");
    return j[field].get<std::string>();
}

PacketShape shape_from_json(const Json& j, const std::string& ctx) {
    PacketShape s;
    if (j.is_null()) return s;
    if (!j.is_object()) throw SchemaError(ctx + ": 'packets' must be an object");
    if (j.contains("count")) {
        if (!j["count"].is_number_integer()) throw SchemaError(ctx + ": packet count must be an integer");
        s.count = j["count"].get<int>();
    }
    if (s.count < 2 || s.count > 8) throw SchemaError(ctx + ": packet count must be within 2-8");
    if (j.contains("sizes")) {
        if (!j["sizes"].is_array() || j["sizes"].empty()) throw SchemaError(ctx + ": 'sizes' must be a non-empty list");
        s.sizes.clear();
        for (const auto& v : j["sizes"]) {
            if (!v.is_number_integer() || v.get<long long>() < 16 || v.get<long long>() > 1400)
                throw SchemaError(ctx + ": payload sizes must be integers within 16-1400");
            s.sizes.push_back(v.get<std::uint32_t>());
        }
    }
    return s;
}

void collect_refs(const SuccessFormula& f, std::vector<std::string>& out) {
    if (f.kind == SuccessFormula::Kind::Flow) out.push_back(f.flow_id);
    for (const auto& t : f.terms) collect_refs(t, out);
}

bool is_group(const HostRef& h) {
    return std::holds_alternative<HostRef::Broadcast>(h.value()) || std::holds_alternative<HostRef::Multicast>(h.value());
}

}  // namespace

// --- DeviceModel -------------------------------------------------------------

const FlowSpec* DeviceModel::find(const std::string& id) const {
    for (const auto& f : flows)
        if (f.id == id) return &f;
    return nullptr;
}

std::optional<IpAddress> DeviceModel::resolve(const std::string& name) const {
    std::optional<IpAddress> v6;
    for (const auto& [n, addr] : dns_records) {
        if (n != name) continue;
        if (addr.is_v4()) return addr;
        if (!v6) v6 = addr;
    }
    return v6;
}

DnsTable DeviceModel::seed_table() const {
    DnsTable t;
    t.seed_source = DnsTable::SeedSource::ModelRecords;
    for (const auto& [name, addr] : dns_records) t.learn(addr, name, topology);
    return t;
}

Json DeviceModel::to_json() const {
    Json j = Json::object();
    j["schema"] = 1;
    if (!name.empty()) j["name"] = name;
    if (!description.empty()) j["description"] = description;
    j["topology"] = topology.to_json();
    Json records = Json::array();
    for (const auto& [n, a] : dns_records) records.push_back(Json::array({n, a.to_string()}));
    j["dns_records"] = std::move(records);
    Json flows_j = Json::array();
    for (const auto& f : flows) {
        Json guard = Json::array();
        for (const auto& conj : f.guard) guard.push_back(conj);
        flows_j.push_back(Json{{"id", f.id}, {"flow", f.flow.to_json()}, {"guard", guard}, {"packets", f.packets.to_json()}});
    }
    j["flows"] = std::move(flows_j);
    j["success"] = success.to_json();
    Json noise_j = Json::array();
    for (const auto& n : noise)
        noise_j.push_back(Json{{"id", n.id}, {"flow", n.flow.to_json()}, {"packets", n.packets.to_json()}, {"p", n.p}});
    j["noise"] = std::move(noise_j);
    return j;
}

namespace {

std::optional<IpAddress> host_address(const DeviceModel& m, const HostRef& h) {
    struct Visitor {
        const DeviceModel& m;
        std::optional<IpAddress> operator()(const HostRef::RoleRef& r) const { return m.topology.address_of(r.role); }
        std::optional<IpAddress> operator()(const HostRef::Broadcast&) const { return IpAddress::v4(0xFFFFFFFFu); }
        std::optional<IpAddress> operator()(const HostRef::Multicast& g) const { return g.group; }
        std::optional<IpAddress> operator()(const HostRef::Address& a) const { return a.addr; }
        std::optional<IpAddress> operator()(const HostRef::Domain& d) const { return m.resolve(d.name); }
    };
    return std::visit(Visitor{m}, h.value());
}

void check_flow(const DeviceModel& m, FlowId& flow, const std::string& ctx, std::set<std::string>& keys) {
    flow = canonicalize(flow, m.topology);
    if (flow.direction == Direction::Bidirectional && (is_group(flow.initiator) || is_group(flow.responder)))
        throw SchemaError(ctx + ": broadcast and multicast endpoints need a unidirectional flow");
    if (flow.direction == Direction::Unidirectional && is_group(flow.initiator))
        throw SchemaError(ctx + ": a broadcast or multicast group cannot initiate");
    if (std::holds_alternative<HttpSelector>(flow.app) && flow.transport != Transport::Tcp)
        throw SchemaError(ctx + ": HTTP flows must use TCP");
    if (std::holds_alternative<CoapSelector>(flow.app) && flow.transport != Transport::Udp)
        throw SchemaError(ctx + ": CoAP flows must use UDP");
    if (auto* c = std::get_if<CoapSelector>(&flow.app)) {
        if (c->code.find('.') != std::string::npos) throw SchemaError(ctx + ": CoAP flows are keyed by request codes");
    }
    if (auto* h = std::get_if<HttpSelector>(&flow.app); h && h->method.empty())
        throw SchemaError(ctx + ": HTTP flows are keyed by the request line");
    std::optional<bool> v4;
    for (const auto* h : {&flow.initiator, &flow.responder}) {
        if (auto* d = std::get_if<HostRef::Domain>(&h->value()); d && !m.resolve(d->name))
            throw UnresolvedDomain(ctx + ": domain '" + d->name + "' has no dns_records entry");
        if (auto* a = std::get_if<HostRef::Address>(&h->value())) {
            for (const auto& [n, addr] : m.dns_records)
                if (addr == a->addr)
                    throw SchemaError(ctx + ": literal address " + addr.to_string() + " is also the record of '" + n +
                                      "'; use dom:" + n);
        }
        auto addr = host_address(m, *h);
        if (v4 && *v4 != addr->is_v4()) throw SchemaError(ctx + ": endpoints mix IPv4 and IPv6");
        v4 = addr->is_v4();
    }
    if (!keys.insert(flow.key()).second) throw SchemaError(ctx + ": duplicate flow " + flow.display());
}

}  // namespace

DeviceModel load_model(const Json& doc) {
    if (!doc.is_object()) throw SchemaError("model: expected a JSON object");
    if (!doc.contains("schema") || doc["schema"] != 1) throw SchemaError("model: unsupported or missing 'schema' (expected 1)");
    DeviceModel m;
    if (doc.contains("name")) m.name = require_string(doc, "name", "model");
    if (doc.contains("description")) m.description = require_string(doc, "description", "model");
    if (!doc.contains("topology")) throw SchemaError("model: missing 'topology'");
    m.topology = Topology::from_json(doc["topology"]);

    std::set<IpAddress> record_addrs;
    if (doc.contains("dns_records")) {
        if (!doc["dns_records"].is_array()) throw SchemaError("dns_records: expected a list");
        for (const auto& r : doc["dns_records"]) {
            if (!r.is_array() || r.size() != 2 || !r[0].is_string() || !r[1].is_string())
                throw SchemaError("dns_records: each record is [name, address]");
            auto name = r[0].get<std::string>();
            auto addr = IpAddress::parse(r[1].get<std::string>());
            if (!is_valid_domain(name)) throw SchemaError("dns_records: invalid name '" + name + "'");
            if (!addr) throw SchemaError("dns_records: invalid address '" + r[1].get<std::string>() + "'");
            if (m.topology.is_local(*addr) || addr->is_broadcast() || addr->is_multicast())
                throw SchemaError("dns_records: " + addr->to_string() + " is not a remote unicast address");
            if (!record_addrs.insert(*addr).second)
                throw SchemaError("dns_records: address " + addr->to_string() + " listed twice");
            m.dns_records.emplace_back(name, *addr);
        }
    }

    std::set<std::string> ids;
    std::set<std::string> keys;
    if (!doc.contains("flows") || !doc["flows"].is_array() || doc["flows"].empty())
        throw SchemaError("model: 'flows' must be a non-empty list");
    for (const auto& fj : doc["flows"]) {
        if (!fj.is_object()) throw SchemaError("flows: each entry must be an object");
        FlowSpec spec;
        spec.id = require_string(fj, "id", "flow");
        if (spec.id.empty() || !ids.insert(spec.id).second) throw SchemaError("flow '" + spec.id + "': duplicate or empty id");
        std::string ctx = "flow '" + spec.id + "'";
        if (!fj.contains("flow")) throw SchemaError(ctx + ": missing 'flow'");
        spec.flow = FlowId::from_json(fj["flow"]);
        if (fj.contains("guard")) {
            if (!fj["guard"].is_array()) throw SchemaError(ctx + ": 'guard' must be a list of lists");
            for (const auto& conj : fj["guard"]) {
                if (!conj.is_array() || conj.empty()) throw SchemaError(ctx + ": guard terms must be non-empty lists");
                std::vector<std::string> c;
                for (const auto& ref : conj) {
                    if (!ref.is_string()) throw SchemaError(ctx + ": guard entries are flow ids");
                    c.push_back(ref.get<std::string>());
                }
                spec.guard.push_back(std::move(c));
            }
        }
        spec.packets = shape_from_json(fj.contains("packets") ? fj["packets"] : Json(nullptr), ctx);
        check_flow(m, spec.flow, ctx, keys);
        m.flows.push_back(std::move(spec));
    }

    for (const auto& f : m.flows)
        for (const auto& conj : f.guard)
            for (const auto& ref : conj)
                if (!m.find(ref)) throw UnknownFlowRef("flow '" + f.id + "': guard references unknown flow '" + ref + "'");

    // Guard graph must be acyclic.
    std::map<std::string, int> state;  // 1 visiting, 2 done
    std::function<void(const FlowSpec&)> visit = [&](const FlowSpec& f) {
        state[f.id] = 1;
        for (const auto& conj : f.guard)
            for (const auto& ref : conj) {
                if (state[ref] == 1) throw GuardCycle("guard cycle through flows '" + f.id + "' and '" + ref + "'");
                if (state[ref] == 0) visit(*m.find(ref));
            }
        state[f.id] = 2;
    };
    for (const auto& f : m.flows)
        if (state[f.id] == 0) visit(f);

    if (!doc.contains("success")) throw SchemaError("model: missing 'success'");
    m.success = SuccessFormula::from_json(doc["success"]);
    std::vector<std::string> refs;
    collect_refs(m.success, refs);
    for (const auto& r : refs)
        if (!m.find(r)) throw UnknownFlowRef("success formula references unknown flow '" + r + "'");

    if (doc.contains("noise")) {
        if (!doc["noise"].is_array()) throw SchemaError("noise: expected a list");
        for (const auto& nj : doc["noise"]) {
            if (!nj.is_object()) throw SchemaError("noise: each entry must be an object");
            NoiseSpec n;
            n.id = require_string(nj, "id", "noise");
            if (n.id.empty() || !ids.insert(n.id).second) throw SchemaError("noise '" + n.id + "': duplicate or empty id");
            std::string ctx = "noise '" + n.id + "'";
            if (!nj.contains("flow")) throw SchemaError(ctx + ": missing 'flow'");
            n.flow = FlowId::from_json(nj["flow"]);
            n.packets = shape_from_json(nj.contains("packets") ? nj["packets"] : Json(nullptr), ctx);
            if (!nj.contains("p") || !nj["p"].is_number()) throw SchemaError(ctx + ": missing probability 'p'");
            n.p = nj["p"].get<double>();
            if (!(n.p >= 0.0 && n.p <= 1.0)) throw SchemaError(ctx + ": 'p' must be within [0, 1]");
            check_flow(m, n.flow, ctx, keys);
            m.noise.push_back(std::move(n));
        }
    }
    return m;
}

DeviceModel load_model_file(const std::string& path) {
    auto bytes = read_file(path);
    Json doc;
    try {
        doc = Json::parse(bytes.begin(), bytes.end());
    } catch (const Json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
    return load_model(doc);
}

// --- behaviour ---------------------------------------------------------------

std::set<std::string> active_flows(const DeviceModel& model, const RuleSet& rules) {
    std::map<std::string, bool> blocked;
    for (const auto& f : model.flows) blocked[f.id] = matches_flow(rules, f.flow);
    std::set<std::string> out;
    for (const auto& f : model.flows) {
        bool active = f.guard.empty() || std::any_of(f.guard.begin(), f.guard.end(), [&](const auto& conj) {
                          return std::all_of(conj.begin(), conj.end(), [&](const auto& id) { return blocked[id]; });
                      });
        if (active) out.insert(f.id);
    }
    return out;
}

std::set<std::string> delivered_flows(const DeviceModel& model, const RuleSet& rules) {
    std::set<std::string> out;
    for (const auto& id : active_flows(model, rules))
        if (!matches_flow(rules, model.find(id)->flow)) out.insert(id);
    return out;
}

bool event_succeeds(const DeviceModel& model, const RuleSet& rules) {
    auto delivered = delivered_flows(model, rules);
    return model.success.evaluate([&](const std::string& id) { return delivered.count(id) > 0; });
}

// --- packet synthesis --------------------------------------------------------

namespace {

Port ephemeral_port(std::uint64_t seed, std::uint64_t index) {
    constexpr std::uint64_t span = 28232;
    return static_cast<Port>(32768 + ((seed % span) * 7919 + (index % span) * 104729) % span);
}

struct Emitter {
    const DeviceModel& model;
    std::uint64_t seed;

    std::vector<ParsedPacket> flow_packets(const FlowId& flow, const PacketShape& shape, std::size_t index) const {
        // The side with the unspecified port opens the conversation.
        bool initiator_is_client = flow.direction == Direction::Unidirectional || !flow.initiator_port.has_value() ||
                                   flow.responder_port.has_value();
        const HostRef& client_host = initiator_is_client ? flow.initiator : flow.responder;
        const HostRef& server_host = initiator_is_client ? flow.responder : flow.initiator;
        auto client_spec = initiator_is_client ? flow.initiator_port : flow.responder_port;
        auto server_spec = initiator_is_client ? flow.responder_port : flow.initiator_port;
        IpAddress c_addr = *host_address(model, client_host);
        IpAddress s_addr = *host_address(model, server_host);
        Port c_port = client_spec.value_or(ephemeral_port(seed, 2 * index));
        Port s_port = server_spec.value_or(ephemeral_port(seed, 2 * index + 1));
        bool bi = flow.direction == Direction::Bidirectional;

        std::vector<ParsedPacket> out;
        auto packet = [&](bool from_client) -> ParsedPacket& {
            ParsedPacket p;
            p.src_addr = from_client ? c_addr : s_addr;
            p.dst_addr = from_client ? s_addr : c_addr;
            p.src_port = from_client ? c_port : s_port;
            p.dst_port = from_client ? s_port : c_port;
            p.transport = flow.transport == Transport::Tcp ? PacketTransport::Tcp : PacketTransport::Udp;
            out.push_back(std::move(p));
            return out.back();
        };
        auto size_at = [&](int i) { return shape.sizes[static_cast<std::size_t>(i) % shape.sizes.size()]; };
        auto from_client_at = [&](int i) { return !bi || i % 2 == 0; };

        if (flow.transport == Transport::Tcp) {
            bool tls = !has_app(flow.app) && (s_port == 443 || s_port == 8883);
            auto dressing = [&](bool from_client, std::uint8_t flags) {
                auto& p = packet(from_client);
                p.tcp_flags = flags;
                p.control_plane = true;
            };
            if (bi) {
                dressing(true, tcp_flag::Syn);
                dressing(false, tcp_flag::Syn | tcp_flag::Ack);
                dressing(true, tcp_flag::Ack);
            }
            if (tls) {
                auto& hello = packet(true);
                hello.tls = TlsRecord::ClientHello;
                if (auto* d = std::get_if<HostRef::Domain>(&server_host.value())) hello.sni = d->name;
                if (bi && s_port == 443) packet(false).tls = TlsRecord::Handshake;
            }
            for (int i = 0; i < shape.count; ++i) {
                bool fc = from_client_at(i);
                auto& p = packet(fc);
                p.payload_len = size_at(i);
                if (tls) {
                    p.tls = TlsRecord::AppData;
                } else if (auto* h = std::get_if<HttpSelector>(&flow.app)) {
                    p.app = fc ? AppSelector{*h} : AppSelector{HttpSelector{"", ""}};
                    p.is_response = !fc;
                }
            }
            if (bi) {
                dressing(true, tcp_flag::Fin | tcp_flag::Ack);
                dressing(false, tcp_flag::Fin | tcp_flag::Ack);
                dressing(true, tcp_flag::Ack);
            }
        } else {
            for (int i = 0; i < shape.count; ++i) {
                bool fc = from_client_at(i);
                auto& p = packet(fc);
                if (auto* d = std::get_if<DnsSelector>(&flow.app)) {
                    p.app = *d;
                    p.is_response = !fc;
                    if (!fc) {
                        for (const auto& [name, addr] : model.dns_records) {
                            if (name != d->qname) continue;
                            if ((d->qtype == "A" && addr.is_v4()) || (d->qtype == "AAAA" && !addr.is_v4()))
                                p.dns_answers.emplace_back(name, addr);
                        }
                    }
                } else if (auto* c = std::get_if<CoapSelector>(&flow.app)) {
                    p.app = fc ? *c : CoapSelector{"ACK", "2.05", ""};
                    p.is_response = !fc;
                } else {
                    p.payload_len = size_at(i);
                }
            }
        }
        return out;
    }
};

ParsedPacket arp(const IpAddress& from, const IpAddress& to, bool reply) {
    ParsedPacket p;
    p.transport = PacketTransport::Other;
    p.other_token = "arp";
    p.src_addr = from;
    p.dst_addr = to;
    p.is_response = reply;
    return p;
}

double unit_interval(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

CaptureResult run_capture(const DeviceModel& model, const RuleSet& rules, std::uint64_t seed) {
    CaptureResult result;
    result.seed = seed;
    std::mt19937_64 rng(seed);
    Emitter emit{model, seed};

    auto active = active_flows(model, rules);
    std::set<std::string> delivered;
    std::vector<std::vector<ParsedPacket>> queues;
    for (std::size_t i = 0; i < model.flows.size(); ++i) {
        const auto& f = model.flows[i];
        if (!active.count(f.id)) continue;
        result.emitted.insert(f.id);
        if (matches_flow(rules, f.flow)) continue;
        delivered.insert(f.id);
        queues.push_back(emit.flow_packets(f.flow, f.packets, i));
    }
    for (std::size_t i = 0; i < model.noise.size(); ++i) {
        const auto& n = model.noise[i];
        bool fires = unit_interval(rng) < n.p;
        if (!fires) continue;
        result.emitted.insert(n.id);
        if (matches_flow(rules, n.flow)) continue;
        queues.push_back(emit.flow_packets(n.flow, n.packets, model.flows.size() + i));
    }
    result.success = model.success.evaluate([&](const std::string& id) { return delivered.count(id) > 0; });

    std::vector<ParsedPacket> packets;
    const auto& topo = model.topology;
    if (topo.gateway_addr.is_v4() && topo.device_addr.is_v4()) {
        packets.push_back(arp(topo.device_addr, topo.gateway_addr, false));
        packets.push_back(arp(topo.gateway_addr, topo.device_addr, true));
    }
    std::vector<std::size_t> cursor(queues.size(), 0);
    std::vector<std::size_t> open;
    for (std::size_t q = 0; q < queues.size(); ++q)
        if (!queues[q].empty()) open.push_back(q);
    while (!open.empty()) {
        auto pick = static_cast<std::size_t>(rng() % open.size());
        auto q = open[pick];
        packets.push_back(queues[q][cursor[q]++]);
        if (cursor[q] == queues[q].size()) open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
    }

    Timestamp ts{1'600'000'000 + static_cast<std::int64_t>(seed % 1'000'000) * 60, 0};
    result.trace.packets.reserve(packets.size());
    for (const auto& p : packets) {
        auto step = 500 + static_cast<std::int64_t>(rng() % 20000);
        std::int64_t usec = ts.usec + step;
        ts.sec += usec / 1'000'000;
        ts.usec = static_cast<std::int32_t>(usec % 1'000'000);
        // Round-trip through the wire format so every field is what a
        // dissector would report.
        result.trace.packets.push_back(dissect(encode_frame(p), ts));
    }
    result.trace.label = "capture-" + std::to_string(seed);
    result.trace.capture_duration = result.trace.span_seconds();
    return result;
}

std::vector<CaptureResult> run_experiment(const DeviceModel& model, const RuleSet& rules, int m, std::uint64_t seed) {
    if (m < 1) throw std::invalid_argument("run_experiment: m must be at least 1");
    std::vector<CaptureResult> out;
    out.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) out.push_back(run_capture(model, rules, seed + static_cast<std::uint64_t>(i)));
    return out;
}

SigTree oracle_tree(const DeviceModel& model, bool pruning, std::optional<int> max_depth) {
    SigTree tree(pruning);
    while (auto id = tree.next_node()) {
        const auto& node = tree.node(*id);
        if (max_depth && node.depth > *max_depth) {
            tree.mark_pruned(*id, PruneReason::DepthCapped);
            continue;
        }
        auto rules = compile(tree.blocking_set(*id));
        if (!event_succeeds(model, rules)) {
            if (*id == SigTree::kRoot) throw RootFailed("the event fails with nothing blocked");
            tree.mark_failed(*id);
            continue;
        }
        EventSignature sig;
        for (const auto& fid : delivered_flows(model, rules)) sig.flows.insert(model.find(fid)->flow);
        for (const auto& n : model.noise)
            if (n.p >= 1.0 && !matches_flow(rules, n.flow)) sig.flows.insert(n.flow);
        sig.m = sig.m_plus = 1;
        tree.add_children(*id, sig);
    }
    return tree;
}

}  // namespace hiddenflow
