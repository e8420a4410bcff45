#include "hiddenflow/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "hiddenflow/errors.hpp"
#include "hiddenflow/profiler.hpp"

namespace hiddenflow {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string model;
    std::string manifest;
    std::string dir;
    std::string rules_file;
    std::string out_dir = ".";
    std::vector<std::string> inputs;
    int m = 20;
    std::uint64_t seed = 0;
    bool no_pruning = false;
    std::optional<int> max_depth;
    bool hide_failed = false;
};

Json read_json(const std::string& path) {
    auto bytes = read_file(path);
    try {
        return Json::parse(bytes.begin(), bytes.end());
    } catch (const Json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
}

std::string pretty(const Json& j) { return j.dump(2) + "\n"; }

void write_outputs(const std::string& dir, const std::vector<std::pair<std::string, std::string>>& files) {
    fs::create_directories(dir);
    for (const auto& [name, content] : files) write_file_atomic((fs::path(dir) / name).string(), content);
}

ProfileConfig profile_config(const Options& o) {
    ProfileConfig c;
    c.m = o.m;
    c.seed = o.seed;
    c.pruning = !o.no_pruning;
    c.max_depth = o.max_depth;
    c.validate();
    return c;
}

std::string model_label(const DeviceModel& model, const std::string& path) {
    return model.name.empty() ? fs::path(path).stem().string() : model.name;
}

// --- commands ----------------------------------------------------------------

struct ManifestEntry {
    std::string label;
    std::string model_path;
    std::map<std::string, std::string> group;
};

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    auto doc = read_json(path);
    if (!doc.is_array() || doc.empty()) throw SchemaError(path + ": manifest must be a non-empty list");
    std::vector<ManifestEntry> out;
    std::set<std::string> labels;
    auto base = fs::path(path).parent_path();
    for (const auto& e : doc) {
        if (!e.is_object() || !e.contains("label") || !e["label"].is_string() || !e.contains("model_path") ||
            !e["model_path"].is_string())
            throw SchemaError(path + ": each entry needs string 'label' and 'model_path'");
        ManifestEntry m;
        m.label = e["label"].get<std::string>();
        if (m.label.empty() || m.label.find_first_of("/\\") != std::string::npos || m.label == "." || m.label == "..")
            throw SchemaError(path + ": label '" + m.label + "' cannot name a directory");
        if (!labels.insert(m.label).second) throw SchemaError(path + ": duplicate label '" + m.label + "'");
        fs::path mp = e["model_path"].get<std::string>();
        m.model_path = (mp.is_absolute() ? mp : base / mp).string();
        if (e.contains("group")) {
            if (!e["group"].is_object()) throw SchemaError(path + ": 'group' must be an object");
            for (const auto& [k, v] : e["group"].items()) {
                if (!v.is_string()) throw SchemaError(path + ": group values must be strings");
                m.group[k] = v.get<std::string>();
            }
        }
        out.push_back(std::move(m));
    }
    return out;
}

struct ProfiledEvent {
    std::string label;
    SigTree tree;
    EventReport report;
};

ProfiledEvent profile_one(const std::string& label, const std::string& model_path, const ProfileConfig& config) {
    SimDriver driver(load_model_file(model_path));
    try {
        auto tree = profile_event(driver, config);
        auto report = build_report(tree, label, config.m);
        return {label, std::move(tree), std::move(report)};
    } catch (const RootFailed& e) {
        throw RootFailed(label + ": " + e.what());
    }
}

std::vector<std::pair<std::string, std::string>> tree_files(const SigTree& tree, bool hide_failed) {
    return {{"tree.json", pretty(tree.to_json())}, {"tree.dot", tree.to_dot(hide_failed)}};
}

void cmd_profile(const Options& o) {
    if (o.model.empty() == o.manifest.empty()) throw std::invalid_argument("profile needs exactly one of --model or --manifest");
    auto config = profile_config(o);
    if (!o.model.empty()) {
        auto model = load_model_file(o.model);
        auto ev = profile_one(model_label(model, o.model), o.model, config);
        auto files = tree_files(ev.tree, o.hide_failed);
        files.emplace_back("report.csv", render_csv({ev.report}));
        write_outputs(o.out_dir, files);
        return;
    }
    auto entries = load_manifest(o.manifest);
    for (const auto& e : entries) load_model_file(e.model_path);  // validate everything first
    std::vector<ProfiledEvent> events;
    for (const auto& e : entries) {
        events.push_back(profile_one(e.label, e.model_path, config));
        events.back().report.group = e.group;
    }
    std::vector<EventReport> reports;
    for (const auto& ev : events) {
        auto files = tree_files(ev.tree, o.hide_failed);
        files.emplace_back("report.csv", render_csv({ev.report}));
        write_outputs((fs::path(o.out_dir) / ev.label).string(), files);
        reports.push_back(ev.report);
    }
    write_outputs(o.out_dir, {{"report.csv", render_csv(reports)}});
}

void cmd_oracle(const Options& o) {
    if (o.model.empty()) throw std::invalid_argument("oracle needs --model");
    auto model = load_model_file(o.model);
    if (o.max_depth && *o.max_depth < 1) throw std::invalid_argument("max depth must be at least 1");
    auto tree = oracle_tree(model, !o.no_pruning, o.max_depth);
    write_outputs(o.out_dir, tree_files(tree, o.hide_failed));
}

void cmd_simulate(const Options& o) {
    if (o.model.empty()) throw std::invalid_argument("simulate needs --model");
    if (o.m < 1) throw std::invalid_argument("m must be at least 1");
    auto model = load_model_file(o.model);
    RuleSet rules;
    if (!o.rules_file.empty()) {
        auto bytes = read_file(o.rules_file);
        rules = parse_rules(std::string(bytes.begin(), bytes.end()));
    }
    auto captures = run_experiment(model, rules, o.m, o.seed);
    fs::create_directories(o.out_dir);
    std::string success;
    for (std::size_t i = 0; i < captures.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "capture-%03zu.pcap", i);
        write_file_atomic((fs::path(o.out_dir) / name).string(), write_pcap(captures[i].trace));
        success += captures[i].success ? "1\n" : "0\n";
    }
    Json context = model.topology.to_json();
    Json records = Json::array();
    for (const auto& [n, a] : model.dns_records) records.push_back(Json::array({n, a.to_string()}));
    context["dns_records"] = std::move(records);
    write_outputs(o.out_dir, {{"success.txt", success}, {"topology.json", pretty(context)}});
}

void cmd_extract(const Options& o) {
    if (o.dir.empty()) throw std::invalid_argument("extract needs --dir");
    if (o.m < 1) throw std::invalid_argument("m must be at least 1");
    if (!fs::is_directory(o.dir)) throw Error("'" + o.dir + "' is not a directory");
    std::vector<fs::path> pcaps;
    for (const auto& entry : fs::directory_iterator(o.dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pcap") pcaps.push_back(entry.path());
    std::sort(pcaps.begin(), pcaps.end());
    if (pcaps.size() != static_cast<std::size_t>(o.m))
        throw Error("expected " + std::to_string(o.m) + " captures in '" + o.dir + "', found " +
                    std::to_string(pcaps.size()));

    auto flag_bytes = read_file((fs::path(o.dir) / "success.txt").string());
    std::vector<bool> flags;
    std::string line;
    for (char c : std::string(flag_bytes.begin(), flag_bytes.end()) + "\n") {
        if (c != '\n') {
            if (c != '\r') line += c;
            continue;
        }
        if (line == "0" || line == "1") flags.push_back(line == "1");
        else if (!line.empty()) throw Error("success.txt: expected 0 or 1, found '" + line + "'");
        line.clear();
    }
    if (flags.size() != pcaps.size())
        throw Error("success.txt lists " + std::to_string(flags.size()) + " flags for " + std::to_string(pcaps.size()) +
                    " captures");

    Topology topo;
    DnsTable seed;
    if (!o.model.empty()) {
        auto model = load_model_file(o.model);
        topo = model.topology;
        seed = model.seed_table();
    } else {
        auto ctx = read_json((fs::path(o.dir) / "topology.json").string());
        topo = Topology::from_json(ctx);
        if (ctx.contains("dns_records")) {
            for (const auto& r : ctx["dns_records"]) {
                auto addr = r.size() == 2 && r[1].is_string() ? IpAddress::parse(r[1].get<std::string>()) : std::nullopt;
                if (!addr || !r[0].is_string()) throw SchemaError("topology.json: malformed dns_records entry");
                seed.learn(*addr, r[0].get<std::string>(), topo);
            }
        }
    }

    std::vector<Trace> successful;
    for (std::size_t i = 0; i < pcaps.size(); ++i) {
        auto trace = read_pcap(read_file(pcaps[i].string()));
        if (flags[i]) successful.push_back(filter_control_plane(trace));
    }
    EventSignature sig;
    sig.m = o.m;
    if (!successful.empty()) sig = extract_signature(aggregate_flows(successful, topo, seed), o.m);
    Json out = sig.to_json();
    out["accepted"] = accept_signature(sig);
    write_outputs(o.out_dir, {{"signature.json", pretty(out)}});
}

std::string report_label(const fs::path& p) {
    auto stem = p.stem().string();
    if (stem == "tree" && p.has_parent_path() && !p.parent_path().filename().empty())
        return p.parent_path().filename().string();
    return stem;
}

void cmd_analyze(const Options& o) {
    if (o.inputs.empty()) throw std::invalid_argument("analyze needs at least one tree JSON file");
    std::vector<EventReport> reports;
    for (const auto& path : o.inputs) reports.push_back(build_report(SigTree::from_json(read_json(path)), report_label(path)));
    write_outputs(o.out_dir, {{"report.csv", render_csv(reports)}});
}

void cmd_rules(const Options& o) {
    if (o.inputs.size() != 1) throw std::invalid_argument("rules needs exactly one FlowId JSON file");
    auto doc = read_json(o.inputs.front());
    const Json& list = doc.is_object() && doc.contains("flows") ? doc["flows"] : doc;
    if (!list.is_array()) throw SchemaError(o.inputs.front() + ": expected a list of flows");
    FlowSet flows;
    for (const auto& f : list) flows.insert(FlowId::from_json(f));
    write_outputs(o.out_dir, {{"rules.txt", render(compile(flows))}});
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Event signature profiling for smart-home device traffic", "hiddenflow"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* cmd) { cmd->add_option("--out-dir", o.out_dir, "Directory for output files"); };
    auto add_tree_flags = [&](CLI::App* cmd) {
        cmd->add_flag("--no-pruning", o.no_pruning, "Expand every node, duplicates included");
        cmd->add_option("--max-depth", o.max_depth, "Stop expanding below this depth");
        cmd->add_flag("--hide-failed", o.hide_failed, "Leave failed nodes out of the DOT graph");
    };

    auto* extract = app.add_subcommand("extract", "Signature from a directory of captures and success.txt");
    extract->add_option("--dir", o.dir, "Capture directory")->required();
    extract->add_option("--m", o.m, "Expected number of captures");
    extract->add_option("--model", o.model, "Device model supplying topology and DNS records");
    add_common(extract);

    auto* profile = app.add_subcommand("profile", "Profile a simulated event (or every event of a manifest)");
    profile->add_option("--model", o.model, "Device model JSON");
    profile->add_option("--manifest", o.manifest, "Event manifest JSON");
    profile->add_option("--m", o.m, "Captures per experiment");
    profile->add_option("--seed", o.seed, "Base seed");
    add_tree_flags(profile);
    add_common(profile);

    auto* analyze = app.add_subcommand("analyze", "CSV report from tree JSON files");
    analyze->add_option("trees", o.inputs, "Tree JSON files")->required();
    add_common(analyze);

    auto* rules = app.add_subcommand("rules", "Deny-list rules from a FlowId JSON list");
    rules->add_option("flows", o.inputs, "FlowId list or signature JSON")->required();
    add_common(rules);

    auto* simulate = app.add_subcommand("simulate", "Write simulated captures and success.txt");
    simulate->add_option("--model", o.model, "Device model JSON")->required();
    simulate->add_option("--rules", o.rules_file, "Deny-list rule file");
    simulate->add_option("--m", o.m, "Number of captures");
    simulate->add_option("--seed", o.seed, "Seed of the first capture");
    add_common(simulate);

    auto* oracle = app.add_subcommand("oracle", "Expected tree computed from the model alone");
    oracle->add_option("--model", o.model, "Device model JSON")->required();
    add_tree_flags(oracle);
    add_common(oracle);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "hiddenflow: error: " << one_line(e.what()) << "\n";
        return 1;
    }

    try {
        if (*extract) cmd_extract(o);
        else if (*profile) cmd_profile(o);
        else if (*analyze) cmd_analyze(o);
        else if (*rules) cmd_rules(o);
        else if (*simulate) cmd_simulate(o);
        else if (*oracle) cmd_oracle(o);
    } catch (const RootFailed& e) {
        err << "hiddenflow: event cannot succeed: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "hiddenflow: error: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}

}  // namespace hiddenflow
