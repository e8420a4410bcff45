#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hiddenflow/blocklist.hpp"
#include "hiddenflow/cli.hpp"
#include "hiddenflow/errors.hpp"
#include "hiddenflow/profiler.hpp"
#include "hiddenflow/signature.hpp"
#include "hiddenflow/sigtree.hpp"
#include "hiddenflow/simnet.hpp"
#include "hiddenflow/trace_codec.hpp"

namespace py = pybind11;
using namespace hiddenflow;

namespace {

FlowSet parse_flows(const std::string& text) {
    auto doc = Json::parse(text);
    if (doc.is_object() && doc.contains("flows")) doc = doc["flows"];
    if (!doc.is_array()) throw SchemaError("expected a list of flows");
    FlowSet out;
    for (const auto& f : doc) out.insert(FlowId::from_json(f));
    return out;
}

std::string flows_json(const FlowSet& flows) {
    Json out = Json::array();
    for (const auto& f : flows) out.push_back(f.to_json());
    return out.dump();
}

SigTree tree_of(const std::string& text) { return SigTree::from_json(Json::parse(text)); }

std::string report_json(const EventReport& r) {
    auto set_json = [](const auto& items) {
        Json a = Json::array();
        for (const auto& s : items) a.push_back(s);
        return a;
    };
    Json pruned = Json::object();
    for (const auto& [depth, n] : r.stats.pruned_per_depth) pruned[std::to_string(depth)] = n;
    Json first = Json::array(), hidden = Json::array();
    for (const auto& f : r.stats.first_level) first.push_back(f.to_json());
    for (const auto& f : r.stats.hidden) hidden.push_back(f.to_json());
    Json j{{"label", r.label},
           {"unique_flows", r.stats.unique_flows},
           {"first_level_flows", r.stats.first_level_flows},
           {"hidden_flows", r.stats.hidden_flows},
           {"robustness_score", r.robustness_score},
           {"node_count", r.stats.node_count},
           {"failed_count", r.stats.failed_count},
           {"pruned_per_depth", pruned},
           {"first_level", first},
           {"hidden", hidden},
           {"dns",
            {{"domains_first_level", set_json(r.dns.domains_first_level)},
             {"domains_hidden", set_json(r.dns.domains_hidden)},
             {"resolvers_first_level", set_json(r.dns.resolvers_first_level)},
             {"resolvers_hidden", set_json(r.dns.resolvers_hidden)}}}};
    return j.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of hiddenflow. Structured values cross as JSON text.";

    auto base = py::register_exception<Error>(m, "HiddenflowError", PyExc_RuntimeError);
    py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
    py::register_exception<RootFailed>(m, "RootFailed", base.ptr());
    py::register_exception<SyntaxError>(m, "RuleSyntaxError", base.ptr());

    m.def("canonicalize", [](const std::string& flow) { return canonicalize(FlowId::from_json(Json::parse(flow))).to_json().dump(); },
          py::arg("flow"));
    m.def("flow_key", [](const std::string& flow) { return FlowId::from_json(Json::parse(flow)).key(); }, py::arg("flow"));

    m.def(
        "read_pcap",
        [](const std::string& path) {
            auto trace = read_pcap(read_file(path));
            Json out = Json::array();
            for (const auto& p : trace.packets) out.push_back(p.to_json());
            return out.dump();
        },
        py::arg("path"), "Packets of a capture file as a JSON list.");

    m.def(
        "extract_signature",
        [](const std::vector<std::string>& flow_sets, int m_total) {
            std::vector<FlowSet> sets;
            for (const auto& s : flow_sets) sets.push_back(parse_flows(s));
            auto sig = extract_signature(sets, m_total);
            auto j = sig.to_json();
            j["accepted"] = accept_signature(sig);
            return j.dump();
        },
        py::arg("flow_sets"), py::arg("m"));

    m.def("compile_rules", [](const std::string& flows) { return render(compile(parse_flows(flows))); }, py::arg("flows"),
          "Deny-list text for a JSON list of flows.");
    m.def("parse_rules", [](const std::string& text) { return render(parse_rules(text)); }, py::arg("text"),
          "Validates rule text and returns it normalized.");
    m.def("decompile_rules", [](const std::string& text) { return flows_json(decompile(parse_rules(text))); },
          py::arg("text"));

    m.def("load_model", [](const std::string& path) { return load_model_file(path).to_json().dump(); }, py::arg("path"));

    m.def(
        "profile",
        [](const std::string& model_path, int m_total, std::uint64_t seed, bool pruning, std::optional<int> max_depth) {
            SimDriver driver(load_model_file(model_path));
            ProfileConfig config;
            config.m = m_total;
            config.seed = seed;
            config.pruning = pruning;
            config.max_depth = max_depth;
            config.validate();
            py::gil_scoped_release release;
            return profile_event(driver, config).to_json().dump();
        },
        py::arg("model_path"), py::arg("m") = 20, py::arg("seed") = 0, py::arg("pruning") = true,
        py::arg("max_depth") = py::none(), "Profiles a simulated event and returns the tree JSON.");

    m.def(
        "oracle_tree",
        [](const std::string& model_path, bool pruning, std::optional<int> max_depth) {
            return oracle_tree(load_model_file(model_path), pruning, max_depth).to_json().dump();
        },
        py::arg("model_path"), py::arg("pruning") = true, py::arg("max_depth") = py::none());

    m.def(
        "report",
        [](const std::string& tree, const std::string& label) { return report_json(build_report(tree_of(tree), label)); },
        py::arg("tree"), py::arg("label") = "");

    m.def(
        "render_csv",
        [](const std::vector<std::pair<std::string, std::string>>& labelled_trees) {
            std::vector<EventReport> reports;
            for (const auto& [label, tree] : labelled_trees) reports.push_back(build_report(tree_of(tree), label));
            return render_csv(reports);
        },
        py::arg("labelled_trees"));

    m.def("tree_dot", [](const std::string& tree, bool hide_failed) { return tree_of(tree).to_dot(hide_failed); },
          py::arg("tree"), py::arg("hide_failed") = false);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = run_cli(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process. Returns (exit_code, stdout, stderr).");
}
