#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hiddenflow/core_model.hpp"
#include "hiddenflow/signature.hpp"

namespace hiddenflow {

/// Matcher keys accepted by the rule grammar.
inline constexpr const char* kMatcherKeys[] = {"dns.qtype",      "dns.qname", "http.method",
                                              "http.uri",       "http.is_response",
                                              "coap.type",      "coap.code", "coap.uri_path"};

bool is_matcher_key(std::string_view key) noexcept;

/// One deny rule:
/// `block <tcp|udp> init <host>[:<port>] resp <host>[:<port>] dir <uni|bi> [match <key>=<value>]*`
struct Rule {
    Transport transport = Transport::Tcp;
    HostRef init_host;
    HostRef resp_host;
    std::optional<Port> init_port;
    std::optional<Port> resp_port;
    Direction direction = Direction::Bidirectional;
    std::vector<std::pair<std::string, std::string>> matchers;

    static Rule from_flow(const FlowId& flow);
    /// The Flow ID this rule was compiled from; nothing when the matchers do
    /// not spell out exactly one application selector.
    std::optional<FlowId> to_flow() const;

    std::string render() const;

    friend bool operator==(const Rule&, const Rule&) = default;
};

/// Duplicate-free list of rules. Order is cosmetic: equality is set equality.
class RuleSet {
public:
    RuleSet() = default;

    /// Appends unless an equal rule is present. Returns whether it was added.
    bool add(Rule rule);

    const std::vector<Rule>& rules() const noexcept { return rules_; }
    std::size_t size() const noexcept { return rules_.size(); }
    bool empty() const noexcept { return rules_.empty(); }

    friend bool operator==(const RuleSet& a, const RuleSet& b);

private:
    std::vector<Rule> rules_;
};

/// One rule per flow, in canonical flow order.
RuleSet compile(const FlowSet& flows);

/// Inverse of compile. Rules without a Flow-ID image are skipped.
FlowSet decompile(const RuleSet& rules);

/// One rule per line, `\n` terminated.
std::string render(const RuleSet& rules);

/// Throws SyntaxError with a 1-based line number.
RuleSet parse_rules(std::string_view text);

/// Stateless per-packet verdict.
bool matches_packet(const RuleSet& rules, const ParsedPacket& pkt, const DnsTable& table, const Topology& topo);

/// Flow-level verdict: unspecified rule ports and a rule without matchers
/// act as wildcards; `bi` rules match either orientation.
bool matches_flow(const RuleSet& rules, const FlowId& flow);

/// Deny-list enforcement point with connection tracking: HTTP and CoAP
/// responses, and payload segments without their own selector, are judged
/// with the selector of the latest request on the same connection.
class Firewall {
public:
    Firewall(RuleSet rules, Topology topo);

    /// True when the packet is dropped.
    bool inspect(const ParsedPacket& pkt, const DnsTable& table);

    const RuleSet& rules() const noexcept { return rules_; }

private:
    RuleSet rules_;
    Topology topo_;
    std::unordered_map<std::string, std::pair<AppSelector, bool>> last_request_;
};

}  // namespace hiddenflow
