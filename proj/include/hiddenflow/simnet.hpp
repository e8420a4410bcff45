#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hiddenflow/blocklist.hpp"
#include "hiddenflow/core_model.hpp"
#include "hiddenflow/sigtree.hpp"
#include "hiddenflow/signature.hpp"
#include "hiddenflow/trace_codec.hpp"

namespace hiddenflow {

/// Payload sizes of the data packets a flow emits. `sizes` is cycled.
struct PacketShape {
    int count = 2;
    std::vector<std::uint32_t> sizes{64};

    Json to_json() const;
};

struct FlowSpec {
    std::string id;
    FlowId flow;
    /// Disjunction of conjunctions of "this other flow is blocked".
    /// Empty: always active.
    std::vector<std::vector<std::string>> guard;
    PacketShape packets;
};

struct NoiseSpec {
    std::string id;
    FlowId flow;
    PacketShape packets;
    double p = 0.0;
};

/// Monotone AND/OR formula over "flow delivered" literals.
struct SuccessFormula {
    enum class Kind : std::uint8_t { Flow, And, Or };
    Kind kind = Kind::Flow;
    std::string flow_id;
    std::vector<SuccessFormula> terms;

    bool evaluate(const std::function<bool(const std::string&)>& delivered) const;
    Json to_json() const;
    static SuccessFormula from_json(const Json& j);
};

struct DeviceModel {
    std::string name;
    std::string description;
    Topology topology;
    std::vector<std::pair<std::string, IpAddress>> dns_records;
    std::vector<FlowSpec> flows;
    SuccessFormula success;
    std::vector<NoiseSpec> noise;

    const FlowSpec* find(const std::string& id) const;
    /// First record for `name`, IPv4 preferred.
    std::optional<IpAddress> resolve(const std::string& name) const;
    /// DnsTable holding every record, as a resolver cache would.
    DnsTable seed_table() const;
    Json to_json() const;
};

/// Validates and canonicalizes. Throws SchemaError, GuardCycle,
/// UnknownFlowRef or UnresolvedDomain.
DeviceModel load_model(const Json& document);
DeviceModel load_model_file(const std::string& path);

/// Flows whose guard holds under `rules`, blocked or not.
std::set<std::string> active_flows(const DeviceModel& model, const RuleSet& rules);

/// Active flows that `rules` does not block.
std::set<std::string> delivered_flows(const DeviceModel& model, const RuleSet& rules);

bool event_succeeds(const DeviceModel& model, const RuleSet& rules);

struct CaptureResult {
    Trace trace;
    bool success = false;
    std::set<std::string> emitted;
    std::uint64_t seed = 0;
};

CaptureResult run_capture(const DeviceModel& model, const RuleSet& rules, std::uint64_t seed);

/// `m` captures with seeds seed, seed+1, ...
std::vector<CaptureResult> run_experiment(const DeviceModel& model, const RuleSet& rules, int m, std::uint64_t seed);

/// The tree profiling must produce, computed from the model alone. Throws
/// RootFailed when the event fails with nothing blocked.
SigTree oracle_tree(const DeviceModel& model, bool pruning, std::optional<int> max_depth = std::nullopt);

}  // namespace hiddenflow
