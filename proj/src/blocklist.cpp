#include "hiddenflow/blocklist.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include "hiddenflow/errors.hpp"

namespace hiddenflow {

bool is_matcher_key(std::string_view key) noexcept {
    return std::any_of(std::begin(kMatcherKeys), std::end(kMatcherKeys), [&](const char* k) { return key == k; });
}

namespace {

std::vector<std::pair<std::string, std::string>> matchers_for(const AppSelector& app) {
    struct Visitor {
        std::vector<std::pair<std::string, std::string>> operator()(std::monostate) const { return {}; }
        std::vector<std::pair<std::string, std::string>> operator()(const DnsSelector& d) const {
            return {{"dns.qtype", d.qtype}, {"dns.qname", d.qname}};
        }
        std::vector<std::pair<std::string, std::string>> operator()(const HttpSelector& h) const {
            return {{"http.method", h.method}, {"http.uri", h.uri}};
        }
        std::vector<std::pair<std::string, std::string>> operator()(const CoapSelector& c) const {
            return {{"coap.type", c.type}, {"coap.code", c.code}, {"coap.uri_path", c.uri_path}};
        }
    };
    return std::visit(Visitor{}, app);
}

std::string host_text(const HostRef& host, const std::optional<Port>& port) {
    std::string text;
    auto ipv6 = [](const IpAddress& a) { return !a.is_v4(); };
    if (auto* a = std::get_if<HostRef::Address>(&host.value()); a && ipv6(a->addr))
        text = "ip:[" + a->addr.to_string() + "]";
    else if (auto* m = std::get_if<HostRef::Multicast>(&host.value()); m && ipv6(m->group))
        text = "multicast:[" + m->group.to_string() + "]";
    else
        text = host.token();
    if (port) text += ":" + std::to_string(*port);
    return text;
}

std::optional<std::pair<HostRef, std::optional<Port>>> parse_host_text(std::string_view text) {
    std::optional<Port> port;
    std::string host;
    auto bracket = text.find('[');
    if (bracket != std::string_view::npos) {
        auto close = text.find(']', bracket);
        if (close == std::string_view::npos) return std::nullopt;
        host = std::string(text.substr(0, bracket)) + std::string(text.substr(bracket + 1, close - bracket - 1));
        auto rest = text.substr(close + 1);
        if (!rest.empty()) {
            if (rest.front() != ':') return std::nullopt;
            rest.remove_prefix(1);
            unsigned v = 0;
            auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), v);
            if (ec != std::errc{} || p != rest.data() + rest.size() || v < 1 || v > 65535) return std::nullopt;
            port = static_cast<Port>(v);
        }
    } else {
        host = std::string(text);
        auto colon = text.rfind(':');
        if (colon != std::string_view::npos) {
            auto digits = text.substr(colon + 1);
            bool numeric = !digits.empty() &&
                           std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; });
            if (numeric && HostRef::parse(text.substr(0, colon))) {
                unsigned v = 0;
                std::from_chars(digits.data(), digits.data() + digits.size(), v);
                if (v < 1 || v > 65535) return std::nullopt;
                port = static_cast<Port>(v);
                host = std::string(text.substr(0, colon));
            }
        }
    }
    auto h = HostRef::parse(host);
    if (!h) return std::nullopt;
    return std::pair{*h, port};
}

}  // namespace

Rule Rule::from_flow(const FlowId& flow) {
    Rule r;
    r.transport = flow.transport;
    r.init_host = flow.initiator;
    r.resp_host = flow.responder;
    r.init_port = flow.initiator_port;
    r.resp_port = flow.responder_port;
    r.direction = flow.direction;
    r.matchers = matchers_for(flow.app);
    return r;
}

std::optional<FlowId> Rule::to_flow() const {
    FlowId f;
    f.transport = transport;
    f.initiator = init_host;
    f.responder = resp_host;
    f.initiator_port = init_port;
    f.responder_port = resp_port;
    f.direction = direction;
    if (!matchers.empty()) {
        const auto& first = matchers.front().first;
        auto value_of = [&](const char* key) -> std::optional<std::string> {
            for (const auto& [k, v] : matchers)
                if (k == key) return v;
            return std::nullopt;
        };
        if (first.rfind("dns.", 0) == 0 && matchers.size() == 2 && value_of("dns.qtype") && value_of("dns.qname"))
            f.app = DnsSelector{*value_of("dns.qtype"), *value_of("dns.qname")};
        else if (first.rfind("http.", 0) == 0 && matchers.size() == 2 && value_of("http.method") && value_of("http.uri"))
            f.app = HttpSelector{*value_of("http.method"), *value_of("http.uri")};
        else if (first.rfind("coap.", 0) == 0 && matchers.size() == 3 && value_of("coap.type") &&
                 value_of("coap.code") && value_of("coap.uri_path"))
            f.app = CoapSelector{*value_of("coap.type"), *value_of("coap.code"), *value_of("coap.uri_path")};
        else
            return std::nullopt;
        if (matchers_for(f.app) != matchers) return std::nullopt;
    }
    try {
        f.validate();
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
    return f;
}

std::string Rule::render() const {
    std::string out = "block ";
    out += to_string(transport);
    out += " init " + host_text(init_host, init_port);
    out += " resp " + host_text(resp_host, resp_port);
    out += " dir ";
    out += to_string(direction);
    for (const auto& [k, v] : matchers) out += " match " + k + "=" + v;
    return out;
}

bool RuleSet::add(Rule rule) {
    if (std::find(rules_.begin(), rules_.end(), rule) != rules_.end()) return false;
    rules_.push_back(std::move(rule));
    return true;
}

bool operator==(const RuleSet& a, const RuleSet& b) {
    if (a.size() != b.size()) return false;
    std::set<std::string> lines;
    for (const auto& r : a.rules_) lines.insert(r.render());
    return std::all_of(b.rules_.begin(), b.rules_.end(), [&](const Rule& r) { return lines.count(r.render()) > 0; });
}

RuleSet compile(const FlowSet& flows) {
    RuleSet out;
    for (const auto& f : flows) out.add(Rule::from_flow(f));
    return out;
}

FlowSet decompile(const RuleSet& rules) {
    FlowSet out;
    for (const auto& r : rules.rules())
        if (auto f = r.to_flow()) out.insert(*f);
    return out;
}

std::string render(const RuleSet& rules) {
    std::string out;
    for (const auto& r : rules.rules()) out += r.render() + "\n";
    return out;
}

RuleSet parse_rules(std::string_view text) {
    RuleSet out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        auto first = line.find_first_not_of(" \t");
        if (first == std::string_view::npos || line[first] == '#') continue;

        std::vector<std::string> tok;
        {
            std::istringstream in{std::string(line)};
            std::string t;
            while (in >> t) tok.push_back(t);
        }
        auto fail = [&](const std::string& what) { throw SyntaxError(line_no, what); };
        if (tok.size() < 8) fail("expected 'block <tcp|udp> init <host> resp <host> dir <uni|bi>'");
        if (tok[0] != "block") fail("rule must start with 'block'");
        Rule r;
        if (tok[1] == "tcp") r.transport = Transport::Tcp;
        else if (tok[1] == "udp") r.transport = Transport::Udp;
        else fail("transport '" + tok[1] + "' is not tcp or udp");
        if (tok[2] != "init") fail("expected 'init'");
        auto init = parse_host_text(tok[3]);
        if (!init) fail("invalid host '" + tok[3] + "'");
        if (tok[4] != "resp") fail("expected 'resp'");
        auto resp = parse_host_text(tok[5]);
        if (!resp) fail("invalid host '" + tok[5] + "'");
        if (tok[6] != "dir") fail("expected 'dir'");
        if (tok[7] == "bi") r.direction = Direction::Bidirectional;
        else if (tok[7] == "uni") r.direction = Direction::Unidirectional;
        else fail("direction '" + tok[7] + "' is not uni or bi");
        r.init_host = init->first;
        r.init_port = init->second;
        r.resp_host = resp->first;
        r.resp_port = resp->second;
        for (std::size_t i = 8; i < tok.size(); ++i) {
            if (tok[i] != "match") fail("expected 'match', found '" + tok[i] + "'");
            if (++i >= tok.size()) fail("'match' without <key>=<value>");
            auto eq = tok[i].find('=');
            if (eq == std::string::npos) fail("matcher '" + tok[i] + "' lacks '='");
            auto key = tok[i].substr(0, eq);
            if (!is_matcher_key(key)) fail("unknown matcher key '" + key + "'");
            r.matchers.emplace_back(key, tok[i].substr(eq + 1));
        }
        out.add(std::move(r));
    }
    return out;
}

// --- matching ---------------------------------------------------------------

namespace {

bool port_ok(const std::optional<Port>& rule_port, const std::optional<Port>& actual) {
    return !rule_port || rule_port == actual;
}

std::optional<std::string> packet_field(const std::string& key, const AppSelector& app, bool is_response) {
    if (auto* d = std::get_if<DnsSelector>(&app)) {
        if (key == "dns.qtype") return d->qtype;
        if (key == "dns.qname") return d->qname;
    } else if (auto* h = std::get_if<HttpSelector>(&app)) {
        if (key == "http.method") return h->method;
        if (key == "http.uri") return h->uri;
        if (key == "http.is_response") return is_response ? "true" : "false";
    } else if (auto* c = std::get_if<CoapSelector>(&app)) {
        if (key == "coap.type") return c->type;
        if (key == "coap.code") return c->code;
        if (key == "coap.uri_path") return c->uri_path;
    }
    return std::nullopt;
}

bool matchers_ok(const Rule& rule, const AppSelector& app, bool is_response) {
    return std::all_of(rule.matchers.begin(), rule.matchers.end(), [&](const auto& kv) {
        auto v = packet_field(kv.first, app, is_response);
        return v && *v == kv.second;
    });
}

bool rule_matches_packet(const Rule& rule, Transport transport, const HostRef& src, std::optional<Port> sport,
                         const HostRef& dst, std::optional<Port> dport, const AppSelector& app, bool is_response) {
    if (rule.transport != transport) return false;
    if (!matchers_ok(rule, app, is_response)) return false;
    bool forward = rule.init_host == src && port_ok(rule.init_port, sport) && rule.resp_host == dst &&
                   port_ok(rule.resp_port, dport);
    if (forward) return true;
    if (rule.direction == Direction::Unidirectional) return false;
    return rule.init_host == dst && port_ok(rule.init_port, dport) && rule.resp_host == src &&
           port_ok(rule.resp_port, sport);
}

struct NamedPacket {
    Transport transport;
    HostRef src;
    HostRef dst;
};

std::optional<NamedPacket> name_packet(const ParsedPacket& pkt, const DnsTable& table, const Topology& topo) {
    if (pkt.transport == PacketTransport::Other) return std::nullopt;
    auto names = name_endpoints(pkt, table, topo);
    if (!names) return std::nullopt;
    return NamedPacket{pkt.transport == PacketTransport::Tcp ? Transport::Tcp : Transport::Udp, names->first,
                       names->second};
}

bool any_rule(const RuleSet& rules, const NamedPacket& n, const ParsedPacket& pkt, const AppSelector& app,
              bool is_response) {
    return std::any_of(rules.rules().begin(), rules.rules().end(), [&](const Rule& r) {
        return rule_matches_packet(r, n.transport, n.src, pkt.src_port, n.dst, pkt.dst_port, app, is_response);
    });
}

}  // namespace

bool matches_packet(const RuleSet& rules, const ParsedPacket& pkt, const DnsTable& table, const Topology& topo) {
    auto n = name_packet(pkt, table, topo);
    if (!n) return false;
    return any_rule(rules, *n, pkt, pkt.app, pkt.is_response);
}

bool matches_flow(const RuleSet& rules, const FlowId& flow) {
    return std::any_of(rules.rules().begin(), rules.rules().end(), [&](const Rule& r) {
        if (r.transport != flow.transport || r.direction != flow.direction) return false;
        for (const auto& [k, v] : r.matchers) {
            if (k == "http.is_response") continue;  // not a Flow ID attribute
            auto actual = packet_field(k, flow.app, false);
            if (!actual || *actual != v) return false;
        }
        bool forward = r.init_host == flow.initiator && port_ok(r.init_port, flow.initiator_port) &&
                       r.resp_host == flow.responder && port_ok(r.resp_port, flow.responder_port);
        if (forward) return true;
        if (r.direction == Direction::Unidirectional) return false;
        return r.init_host == flow.responder && port_ok(r.init_port, flow.responder_port) &&
               r.resp_host == flow.initiator && port_ok(r.resp_port, flow.initiator_port);
    });
}

Firewall::Firewall(RuleSet rules, Topology topo) : rules_(std::move(rules)), topo_(std::move(topo)) {}

bool Firewall::inspect(const ParsedPacket& pkt, const DnsTable& table) {
    auto n = name_packet(pkt, table, topo_);
    if (!n) return false;
    std::string a = n->src.token() + ":" + (pkt.src_port ? std::to_string(*pkt.src_port) : "-");
    std::string b = n->dst.token() + ":" + (pkt.dst_port ? std::to_string(*pkt.dst_port) : "-");
    if (b < a) std::swap(a, b);
    auto conn = std::string(to_string(n->transport)) + "|" + a + "|" + b;

    bool request = !pkt.is_response &&
                   (std::holds_alternative<HttpSelector>(pkt.app) || std::holds_alternative<CoapSelector>(pkt.app));
    bool follower = !std::holds_alternative<DnsSelector>(pkt.app) && !request;
    if (request) {
        last_request_[conn] = {pkt.app, false};
    } else if (follower) {
        auto it = last_request_.find(conn);
        if (it != last_request_.end()) return any_rule(rules_, *n, pkt, it->second.first, pkt.is_response);
        if (pkt.is_response) return any_rule(rules_, *n, pkt, std::monostate{}, true);
    }
    return any_rule(rules_, *n, pkt, pkt.app, pkt.is_response);
}

}  // namespace hiddenflow
