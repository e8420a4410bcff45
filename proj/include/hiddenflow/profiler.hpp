#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hiddenflow/blocklist.hpp"
#include "hiddenflow/sigtree.hpp"
#include "hiddenflow/signature.hpp"
#include "hiddenflow/simnet.hpp"

namespace hiddenflow {

/// Runs `m` repetitions of the event under a deny list. Implementations
/// must be deterministic for a given seed and return raw (unfiltered)
/// traces; their success flags are taken as given.
class ExperimentDriver {
public:
    virtual ~ExperimentDriver() = default;
    virtual std::vector<CaptureResult> run(const RuleSet& rules, int m, std::uint64_t seed) = 0;
    virtual const Topology& topology() const = 0;
    /// Name cache available before the first capture.
    virtual DnsTable seed_table() const { return {}; }
};

/// Simulated testbed. With `through_pcap`, each trace is written to the
/// libpcap format and read back before being returned.
class SimDriver : public ExperimentDriver {
public:
    explicit SimDriver(DeviceModel model, bool through_pcap = true);

    std::vector<CaptureResult> run(const RuleSet& rules, int m, std::uint64_t seed) override;
    const Topology& topology() const override { return model_.topology; }
    DnsTable seed_table() const override { return model_.seed_table(); }
    const DeviceModel& model() const noexcept { return model_; }

private:
    DeviceModel model_;
    bool through_pcap_;
};

struct ProfileConfig {
    int m = 20;
    std::optional<int> max_depth;
    bool pruning = true;
    std::uint64_t seed = 0;
    /// Seconds per capture. Informational for simulated drivers.
    double capture_duration = 20.0;

    /// Throws std::invalid_argument.
    void validate() const;
};

/// Called after every experiment with the node, the rules in force and the
/// raw captures.
using IterationHook = std::function<void(NodeId, const RuleSet&, const std::vector<CaptureResult>&)>;

/// Capture, extract, block, repeat until the frontier is empty. Experiment
/// `i` (0-based) uses seed `config.seed + i * config.m`. Throws RootFailed
/// when the unblocked event is rejected, and DriverError when the driver
/// returns the wrong number of captures.
SigTree profile_event(ExperimentDriver& driver, const ProfileConfig& config, const IterationHook& hook = {});

struct DnsReport {
    std::set<std::string> domains_first_level;
    std::set<std::string> domains_hidden;
    std::set<std::string> resolvers_first_level;
    std::set<std::string> resolvers_hidden;
};

/// Domain names and DNS resolvers over the tree's nodes. A name is hidden
/// when it never occurs at depth 1. Multicast and broadcast responders
/// (mDNS and the like) are not counted as resolvers.
DnsReport dns_stats(const SigTree& tree);

struct EventReport {
    std::string label;
    TreeStats stats;
    std::size_t robustness_score = 0;
    DnsReport dns;
    std::size_t experiment_count = 0;
    std::size_t capture_count = 0;
    /// Grouping keys from the event manifest (category, app, manufacturer).
    std::map<std::string, std::string> group;

    std::size_t pruned_at_depth_2() const;
    std::size_t pruned_below_depth_2() const;
};

/// `m` is only used for capture_count.
EventReport build_report(const SigTree& tree, std::string label, int m = 0);

/// Header, one row per report in the given order, then `#` summary lines.
std::string render_csv(const std::vector<EventReport>& reports);

}  // namespace hiddenflow
