#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hiddenflow/core_model.hpp"
#include "hiddenflow/trace_codec.hpp"

namespace hiddenflow {

using FlowSet = std::set<FlowId, FlowKeyLess>;

/// Remote address -> most recently learned domain name.
struct DnsTable {
    enum class SeedSource { GatewayCache, ModelRecords, Empty };

    std::map<IpAddress, std::string> entries;
    SeedSource seed_source = SeedSource::Empty;

    const std::string* lookup(const IpAddress& addr) const;

    /// Inserts unless `addr` is local, broadcast or multicast. Later inserts
    /// overwrite earlier ones.
    void learn(const IpAddress& addr, const std::string& name, const Topology& topo);
};

/// Learns from DNS answers and from the SNI of a TLS ClientHello.
void update_table(DnsTable& table, const ParsedPacket& packet, const Topology& topo);

HostRef name_host(const IpAddress& addr, const DnsTable& table, const Topology& topo);

/// (source, destination) host references. Nothing for packets that carry no
/// IP addresses.
std::optional<std::pair<HostRef, HostRef>> name_endpoints(const ParsedPacket& packet, const DnsTable& table,
                                                          const Topology& topo);

/// Groups each (control-plane filtered) trace into canonical Flow IDs.
/// Ports survive only when well-known or recurring in every trace. `table`
/// is updated in place, traces being folded in order of their first
/// timestamp. Throws EmptyTraceSet for an empty trace list.
std::vector<FlowSet> aggregate_flows(const std::vector<Trace>& traces, const Topology& topo, DnsTable& table);

/// Convenience overload that leaves the seed table untouched.
std::vector<FlowSet> aggregate_flows(const std::vector<Trace>& traces, const Topology& topo,
                                     const DnsTable& seed_table);

struct EventSignature {
    FlowSet flows;
    int m = 0;
    int m_plus = 0;

    /// {m, m_plus, flows:[...]}, flows in canonical order.
    Json to_json() const;
    static EventSignature from_json(const Json& j);
};

/// Intersection of the per-capture flow sets. Throws EmptyTraceSet when
/// `flow_sets` is empty.
EventSignature extract_signature(const std::vector<FlowSet>& flow_sets, int m);

/// True iff at least half of the captures succeeded (2 * m_plus >= m).
bool accept_signature(const EventSignature& sig) noexcept;

}  // namespace hiddenflow
