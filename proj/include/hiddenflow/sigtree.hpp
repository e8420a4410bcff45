#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hiddenflow/core_model.hpp"
#include "hiddenflow/signature.hpp"

namespace hiddenflow {

using NodeId = std::size_t;

enum class NodeStatus : std::uint8_t { Unexplored, Expanded, Pruned, Failed };
enum class PruneReason : std::uint8_t { None, Duplicate, DepthCapped };

std::string_view to_string(NodeStatus s) noexcept;
std::string_view to_string(PruneReason r) noexcept;

struct SigNode {
    std::optional<FlowId> flow;  ///< empty for the root only
    NodeId parent = 0;
    int depth = 0;
    NodeStatus status = NodeStatus::Unexplored;
    PruneReason reason = PruneReason::None;
    std::vector<NodeId> children;
    std::string label;  ///< free-form note kept in exports
};

struct TreeStats {
    std::size_t unique_flows = 0;
    std::size_t first_level_flows = 0;
    std::size_t hidden_flows = 0;
    std::map<int, std::size_t> pruned_per_depth;
    std::size_t failed_count = 0;
    std::size_t node_count = 0;  ///< excluding the root
    FlowSet first_level;
    FlowSet hidden;

    /// Robustness score: the number of hidden flows.
    std::size_t robustness_score() const noexcept { return hidden_flows; }
};

/// Signature tree explored breadth-first. Nodes live in an arena; handle 0
/// is the synthetic root.
class SigTree {
public:
    static constexpr NodeId kRoot = 0;

    explicit SigTree(bool pruning = true);

    bool pruning() const noexcept { return pruning_; }
    const SigNode& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t frontier_size() const noexcept { return frontier_.size(); }

    /// Adds one child per flow of `sig` that is not on the path to `id`,
    /// in canonical order, and marks `id` Expanded. Throws
    /// NodeAlreadyVisited unless `id` is Unexplored.
    std::vector<NodeId> add_children(NodeId id, const EventSignature& sig);

    /// Throws NodeAlreadyVisited unless `id` is Unexplored, and
    /// std::invalid_argument for the root.
    void mark_failed(NodeId id);

    /// Marks an Unexplored node Pruned for a reason other than duplication
    /// (the depth cap).
    void mark_pruned(NodeId id, PruneReason reason);

    void set_label(NodeId id, std::string label) { nodes_.at(id).label = std::move(label); }

    /// Next node to explore. With pruning on, popped nodes whose flow is
    /// already Expanded or Failed elsewhere become Pruned and are skipped.
    std::optional<NodeId> next_node();

    /// Flows on the root-to-node path, node inclusive.
    FlowSet blocking_set(NodeId id) const;

    TreeStats stats() const;

    /// {"pruning":..,"root":{"status":..,"children":[...]}}; nodes carry
    /// flow, status, depth, children and, when set, reason and label.
    Json to_json() const;
    /// Throws SchemaError.
    static SigTree from_json(const Json& j);

    /// Graphviz rendering. Pruned nodes are dashed, Failed nodes annotated.
    std::string to_dot(bool hide_failed = false) const;

private:
    void resolve(NodeId id, NodeStatus status);
    Json node_json(NodeId id) const;

    bool pruning_;
    std::vector<SigNode> nodes_;
    std::deque<NodeId> frontier_;
    std::set<std::string> resolved_;  // keys of Expanded or Failed flows
};

}  // namespace hiddenflow
