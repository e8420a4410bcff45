#include "hiddenflow/sigtree.hpp"

#include <algorithm>
#include <sstream>

#include "hiddenflow/errors.hpp"

namespace hiddenflow {

std::string_view to_string(NodeStatus s) noexcept {
    switch (s) {
        case NodeStatus::Unexplored: return "unexplored";
        case NodeStatus::Expanded: return "expanded";
        case NodeStatus::Pruned: return "pruned";
        case NodeStatus::Failed: return "failed";
    }
    return "unexplored";
}

std::string_view to_string(PruneReason r) noexcept {
    switch (r) {
        case PruneReason::None: return "none";
        case PruneReason::Duplicate: return "duplicate";
        case PruneReason::DepthCapped: return "depth-capped";
    }
    return "none";
}

namespace {

NodeStatus status_from(const std::string& s) {
    for (auto st : {NodeStatus::Unexplored, NodeStatus::Expanded, NodeStatus::Pruned, NodeStatus::Failed})
        if (to_string(st) == s) return st;
    throw SchemaError("unknown node status '" + s + "'");
}

PruneReason reason_from(const std::string& s) {
    for (auto r : {PruneReason::None, PruneReason::Duplicate, PruneReason::DepthCapped})
        if (to_string(r) == s) return r;
    throw SchemaError("unknown prune reason '" + s + "'");
}

}  // namespace

SigTree::SigTree(bool pruning) : pruning_(pruning) {
    nodes_.push_back(SigNode{});
    frontier_.push_back(kRoot);
}

void SigTree::resolve(NodeId id, NodeStatus status) {
    auto& n = nodes_.at(id);
    if (n.status != NodeStatus::Unexplored)
        throw NodeAlreadyVisited("node " + std::to_string(id) + " is already " + std::string(to_string(n.status)));
    n.status = status;
    if (auto it = std::find(frontier_.begin(), frontier_.end(), id); it != frontier_.end()) frontier_.erase(it);
    if (n.flow && (status == NodeStatus::Expanded || status == NodeStatus::Failed)) resolved_.insert(n.flow->key());
}

std::vector<NodeId> SigTree::add_children(NodeId id, const EventSignature& sig) {
    auto path = blocking_set(id);
    resolve(id, NodeStatus::Expanded);
    std::vector<NodeId> added;
    for (const auto& f : sig.flows) {
        if (path.count(f)) continue;
        SigNode child;
        child.flow = f;
        child.parent = id;
        child.depth = nodes_[id].depth + 1;
        nodes_.push_back(std::move(child));
        NodeId cid = nodes_.size() - 1;
        nodes_[id].children.push_back(cid);
        frontier_.push_back(cid);
        added.push_back(cid);
    }
    return added;
}

void SigTree::mark_failed(NodeId id) {
    if (id == kRoot) throw std::invalid_argument("the root node cannot fail");
    resolve(id, NodeStatus::Failed);
}

void SigTree::mark_pruned(NodeId id, PruneReason reason) {
    resolve(id, NodeStatus::Pruned);
    nodes_[id].reason = reason;
}

std::optional<NodeId> SigTree::next_node() {
    while (!frontier_.empty()) {
        NodeId id = frontier_.front();
        auto& n = nodes_[id];
        if (pruning_ && n.flow && resolved_.count(n.flow->key())) {
            frontier_.pop_front();
            n.status = NodeStatus::Pruned;
            n.reason = PruneReason::Duplicate;
            continue;
        }
        // The node stays Unexplored (and at the head of the frontier) until
        // the caller expands, fails or prunes it.
        return id;
    }
    return std::nullopt;
}

FlowSet SigTree::blocking_set(NodeId id) const {
    FlowSet out;
    for (NodeId cur = id; cur != kRoot; cur = nodes_.at(cur).parent) out.insert(*nodes_.at(cur).flow);
    return out;
}

TreeStats SigTree::stats() const {
    TreeStats s;
    FlowSet unique;
    for (NodeId id = 1; id < nodes_.size(); ++id) {
        const auto& n = nodes_[id];
        ++s.node_count;
        unique.insert(*n.flow);
        if (n.depth == 1) s.first_level.insert(*n.flow);
        if (n.status == NodeStatus::Pruned) ++s.pruned_per_depth[n.depth];
        if (n.status == NodeStatus::Failed) ++s.failed_count;
    }
    for (const auto& f : unique)
        if (!s.first_level.count(f)) s.hidden.insert(f);
    s.unique_flows = unique.size();
    s.first_level_flows = s.first_level.size();
    s.hidden_flows = s.hidden.size();
    return s;
}

Json SigTree::node_json(NodeId id) const {
    const auto& n = nodes_[id];
    Json j = Json::object();
    if (n.flow) j["flow"] = n.flow->to_json();
    j["status"] = to_string(n.status);
    j["depth"] = n.depth;
    if (n.reason != PruneReason::None) j["reason"] = to_string(n.reason);
    if (!n.label.empty()) j["label"] = n.label;
    Json children = Json::array();
    for (auto c : n.children) children.push_back(node_json(c));
    j["children"] = std::move(children);
    return j;
}

Json SigTree::to_json() const {
    Json j = Json::object();
    j["pruning"] = pruning_;
    j["root"] = node_json(kRoot);
    j["root"].erase("depth");
    return j;
}

SigTree SigTree::from_json(const Json& j) {
    try {
        SigTree tree(j.value("pruning", true));
        tree.frontier_.clear();
        const Json& root = j.at("root");
        auto& r = tree.nodes_[kRoot];
        r.status = status_from(root.value("status", std::string("expanded")));
        if (r.status == NodeStatus::Pruned || r.status == NodeStatus::Failed)
            throw SchemaError("root cannot be " + std::string(to_string(r.status)));
        r.label = root.value("label", std::string());

        // Breadth-first rebuild reproduces creation order, hence handles.
        std::deque<std::pair<NodeId, const Json*>> queue{{kRoot, &root}};
        while (!queue.empty()) {
            auto [pid, pj] = queue.front();
            queue.pop_front();
            if (tree.nodes_[pid].status == NodeStatus::Unexplored) tree.frontier_.push_back(pid);
            const auto& kids = pj->at("children");
            if (!kids.is_array()) throw SchemaError("children must be an array");
            if (!kids.empty() && tree.nodes_[pid].status != NodeStatus::Expanded)
                throw SchemaError("only expanded nodes have children");
            for (const auto& cj : kids) {
                SigNode n;
                n.flow = FlowId::from_json(cj.at("flow"));
                n.parent = pid;
                n.depth = tree.nodes_[pid].depth + 1;
                if (cj.at("depth").get<int>() != n.depth) throw SchemaError("node depth does not match its position");
                n.status = status_from(cj.at("status").get<std::string>());
                n.reason = reason_from(cj.value("reason", std::string("none")));
                if ((n.status == NodeStatus::Pruned) != (n.reason != PruneReason::None))
                    throw SchemaError("prune reason given for a node that is not pruned, or missing");
                n.label = cj.value("label", std::string());
                tree.nodes_.push_back(std::move(n));
                NodeId cid = tree.nodes_.size() - 1;
                tree.nodes_[pid].children.push_back(cid);
                auto& added = tree.nodes_[cid];
                if (added.status == NodeStatus::Expanded || added.status == NodeStatus::Failed)
                    tree.resolved_.insert(added.flow->key());
                queue.emplace_back(cid, &cj);
            }
        }
        return tree;
    } catch (const Json::exception& e) {
        throw SchemaError(std::string("malformed tree document: ") + e.what());
    }
}

namespace {

std::string dot_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

}  // namespace

std::string SigTree::to_dot(bool hide_failed) const {
    std::ostringstream out;
    out << "digraph signature_tree {\n";
    out << "  node [shape=box, fontname=\"Helvetica\"];\n";
    out << "  n0 [label=\"root\", shape=circle];\n";
    std::deque<NodeId> queue{kRoot};
    while (!queue.empty()) {
        NodeId id = queue.front();
        queue.pop_front();
        for (NodeId c : nodes_[id].children) {
            const auto& n = nodes_[c];
            if (hide_failed && n.status == NodeStatus::Failed) continue;
            out << "  n" << c << " [label=\"" << dot_escape(n.flow->display());
            if (n.status == NodeStatus::Failed) out << "\\n[failed]";
            if (n.status == NodeStatus::Pruned && n.reason == PruneReason::DepthCapped) out << "\\n[depth cap]";
            out << "\"";
            if (n.status == NodeStatus::Pruned) out << ", style=dashed";
            if (n.status == NodeStatus::Failed) out << ", color=red";
            out << "];\n";
            out << "  n" << id << " -> n" << c;
            if (n.status == NodeStatus::Pruned) out << " [style=dashed]";
            out << ";\n";
            queue.push_back(c);
        }
    }
    out << "}\n";
    return out.str();
}

}  // namespace hiddenflow
