#include "hiddenflow/profiler.hpp"

#include <cstdio>
#include <sstream>

#include "hiddenflow/errors.hpp"

namespace hiddenflow {

SimDriver::SimDriver(DeviceModel model, bool through_pcap) : model_(std::move(model)), through_pcap_(through_pcap) {}

std::vector<CaptureResult> SimDriver::run(const RuleSet& rules, int m, std::uint64_t seed) {
    auto captures = run_experiment(model_, rules, m, seed);
    if (through_pcap_) {
        for (auto& c : captures) {
            auto label = c.trace.label;
            auto duration = c.trace.capture_duration;
            c.trace = read_pcap(write_pcap(c.trace));
            c.trace.label = label;
            c.trace.capture_duration = duration;
        }
    }
    return captures;
}

void ProfileConfig::validate() const {
    if (m < 1) throw std::invalid_argument("m must be at least 1");
    if (max_depth && *max_depth < 1) throw std::invalid_argument("max depth must be at least 1");
    if (!(capture_duration > 0.0)) throw std::invalid_argument("capture duration must be positive");
}

SigTree profile_event(ExperimentDriver& driver, const ProfileConfig& config, const IterationHook& hook) {
    config.validate();
    SigTree tree(config.pruning);
    DnsTable table = driver.seed_table();
    std::uint64_t iteration = 0;
    while (auto id = tree.next_node()) {
        if (config.max_depth && tree.node(*id).depth > *config.max_depth) {
            tree.mark_pruned(*id, PruneReason::DepthCapped);
            continue;
        }
        auto rules = compile(tree.blocking_set(*id));
        auto seed = config.seed + iteration++ * static_cast<std::uint64_t>(config.m);
        auto captures = driver.run(rules, config.m, seed);
        if (captures.size() != static_cast<std::size_t>(config.m))
            throw DriverError("driver returned " + std::to_string(captures.size()) + " captures, expected " +
                              std::to_string(config.m));
        if (hook) hook(*id, rules, captures);

        std::vector<Trace> successful;
        for (const auto& c : captures)
            if (c.success) successful.push_back(filter_control_plane(c.trace));
        EventSignature sig;
        sig.m = config.m;
        if (!successful.empty()) sig = extract_signature(aggregate_flows(successful, driver.topology(), table), config.m);

        if (accept_signature(sig)) {
            tree.add_children(*id, sig);
        } else if (*id == SigTree::kRoot) {
            throw RootFailed("event rejected with nothing blocked: " + std::to_string(sig.m_plus) + " of " +
                             std::to_string(sig.m) + " captures succeeded");
        } else {
            tree.mark_failed(*id);
        }
    }
    return tree;
}

DnsReport dns_stats(const SigTree& tree) {
    std::set<std::string> domains_l1, domains_all, resolvers_l1, resolvers_all;
    for (NodeId id = 1; id < tree.size(); ++id) {
        const auto& n = tree.node(id);
        const FlowId& f = *n.flow;
        for (const auto* h : {&f.initiator, &f.responder}) {
            if (const auto* name = h->domain_name()) {
                domains_all.insert(*name);
                if (n.depth == 1) domains_l1.insert(*name);
            }
        }
        if (std::holds_alternative<DnsSelector>(f.app)) {
            const auto& r = f.responder.value();
            if (std::holds_alternative<HostRef::Multicast>(r) || std::holds_alternative<HostRef::Broadcast>(r)) continue;
            auto name = f.responder.display();
            resolvers_all.insert(name);
            if (n.depth == 1) resolvers_l1.insert(name);
        }
    }
    DnsReport out;
    out.domains_first_level = domains_l1;
    out.resolvers_first_level = resolvers_l1;
    for (const auto& d : domains_all)
        if (!domains_l1.count(d)) out.domains_hidden.insert(d);
    for (const auto& r : resolvers_all)
        if (!resolvers_l1.count(r)) out.resolvers_hidden.insert(r);
    return out;
}

std::size_t EventReport::pruned_at_depth_2() const {
    auto it = stats.pruned_per_depth.find(2);
    return it == stats.pruned_per_depth.end() ? 0 : it->second;
}

std::size_t EventReport::pruned_below_depth_2() const {
    std::size_t n = 0;
    for (const auto& [depth, count] : stats.pruned_per_depth)
        if (depth >= 3) n += count;
    return n;
}

EventReport build_report(const SigTree& tree, std::string label, int m) {
    EventReport r;
    r.label = std::move(label);
    r.stats = tree.stats();
    r.robustness_score = r.stats.robustness_score();
    r.dns = dns_stats(tree);
    for (NodeId id = 0; id < tree.size(); ++id) {
        auto s = tree.node(id).status;
        if (s == NodeStatus::Expanded || s == NodeStatus::Failed) ++r.experiment_count;
    }
    r.capture_count = r.experiment_count * static_cast<std::size_t>(std::max(m, 0));
    return r;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string render_csv(const std::vector<EventReport>& reports) {
    std::ostringstream out;
    out << "event,first_level,hidden,robustness_score,pruned_d2,pruned_d3plus,failed,domains_fl,domains_hidden,"
           "resolvers_fl,resolvers_hidden\n";
    for (const auto& r : reports) {
        out << csv_field(r.label) << ',' << r.stats.first_level_flows << ',' << r.stats.hidden_flows << ','
            << r.robustness_score << ',' << r.pruned_at_depth_2() << ',' << r.pruned_below_depth_2() << ','
            << r.stats.failed_count << ',' << r.dns.domains_first_level.size() << ',' << r.dns.domains_hidden.size()
            << ',' << r.dns.resolvers_first_level.size() << ',' << r.dns.resolvers_hidden.size() << '\n';
    }

    std::size_t unique = 0, hidden = 0, robust_events = 0, robust_sum = 0;
    for (const auto& r : reports) {
        unique += r.stats.unique_flows;
        hidden += r.stats.hidden_flows;
        if (r.robustness_score >= 1) {
            ++robust_events;
            robust_sum += r.robustness_score;
        }
    }
    out << "# events: " << reports.size() << "\n";
    out << "# unique flows: " << unique << ", hidden: " << hidden;
    if (unique) out << " (" << fixed2(100.0 * static_cast<double>(hidden) / static_cast<double>(unique)) << "%)";
    out << "\n";
    out << "# events with robustness score >= 1: " << robust_events;
    if (robust_events)
        out << ", mean score " << fixed2(static_cast<double>(robust_sum) / static_cast<double>(robust_events));
    out << "\n";

    // Mean score per grouping key, keys and values in sorted order.
    std::map<std::string, std::map<std::string, std::pair<std::size_t, std::size_t>>> groups;
    for (const auto& r : reports)
        for (const auto& [key, value] : r.group) {
            auto& acc = groups[key][value];
            acc.first += r.robustness_score;
            ++acc.second;
        }
    for (const auto& [key, values] : groups)
        for (const auto& [value, acc] : values)
            out << "# mean robustness by " << key << " " << value << ": "
                << fixed2(static_cast<double>(acc.first) / static_cast<double>(acc.second)) << " (" << acc.second
                << " events)\n";
    return out.str();
}

}  // namespace hiddenflow
