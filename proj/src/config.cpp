#include "difformer/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "difformer/error.hpp"
#include "difformer/seed.hpp"

namespace difformer {

namespace {

using nlohmann::json;

struct Binding {
    const char* key;
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
T as(const json& v, const char* key) {
    try {
        if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
                throw ConfigError(std::string("config: '") + key + "' must be a non-negative integer");
            }
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw ConfigError(std::string("config: '") + key + "' must be a number");
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(std::string("config: '") + key + "' must be a boolean");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(std::string("config: '") + key + "' must be a string");
        } else {
            if (!v.is_array()) throw ConfigError(std::string("config: '") + key + "' must be an array");
        }
        return v.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: '") + key + "': " + e.what());
    }
}

#define DF_FIELD(key, type, member) \
    Binding{key, [](const RunConfig& c) { return json(c.member); }, \
            [](RunConfig& c, const json& v) { c.member = as<type>(v, key); }}

std::string variant_name(SimpleVariant v) { return v == SimpleVariant::eq9 ? "eq9" : "alg2"; }

SimpleVariant parse_variant(const std::string& s) {
    if (s == "eq9") return SimpleVariant::eq9;
    if (s == "alg2") return SimpleVariant::alg2;
    throw ConfigError("config: variant must be 'eq9' or 'alg2', got '" + s + "'");
}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table{
        DF_FIELD("lr", double, train.lr),
        DF_FIELD("weight_decay", double, train.weight_decay),
        DF_FIELD("epochs", std::size_t, train.epochs),
        DF_FIELD("patience", std::size_t, train.patience),
        DF_FIELD("batch_size", std::size_t, train.batch_size),
        DF_FIELD("seed", std::uint64_t, train.seed),
        DF_FIELD("hidden", std::size_t, train.net.hidden),
        DF_FIELD("depth", std::size_t, train.net.depth),
        DF_FIELD("heads", std::size_t, train.net.heads),
        DF_FIELD("tau", double, train.net.tau),
        Binding{"kernel", [](const RunConfig& c) { return json(kernel_name(c.train.net.kernel)); },
                [](RunConfig& c, const json& v) {
                    try {
                        c.train.net.kernel = parse_kernel(as<std::string>(v, "kernel"));
                    } catch (const ParameterError& e) {
                        throw ConfigError(std::string("config: ") + e.what());
                    }
                }},
        Binding{"variant", [](const RunConfig& c) { return json(variant_name(c.train.net.variant)); },
                [](RunConfig& c, const json& v) { c.train.net.variant = parse_variant(as<std::string>(v, "variant")); }},
        DF_FIELD("use_graph", bool, train.net.use_graph),
        DF_FIELD("use_weight", bool, train.net.use_weight),
        DF_FIELD("use_activation", bool, train.net.use_activation),
        DF_FIELD("dropout", double, train.net.dropout),
        DF_FIELD("bandwidth", double, train.net.bandwidth),
        DF_FIELD("runs", std::size_t, runs),

        DF_FIELD("features", std::string, data.features),
        DF_FIELD("labels", std::string, data.labels),
        DF_FIELD("edges", std::string, data.edges),
        DF_FIELD("splits", std::string, data.splits),
        DF_FIELD("split", std::string, data.split),
        DF_FIELD("split_seed", std::uint64_t, data.split_seed),
        DF_FIELD("per_class", std::size_t, data.per_class),
        DF_FIELD("n_valid", std::size_t, data.n_valid),
        DF_FIELD("n_test", std::size_t, data.n_test),
        DF_FIELD("train_frac", double, data.train_frac),
        DF_FIELD("valid_frac", double, data.valid_frac),
        DF_FIELD("knn_k", std::size_t, data.knn_k),
        DF_FIELD("knn_metric", std::string, data.knn_metric),
        DF_FIELD("synthetic_n_per_class", std::size_t, data.synthetic.n_per_class),
        DF_FIELD("synthetic_classes", std::size_t, data.synthetic.num_classes),
        DF_FIELD("synthetic_dim", std::size_t, data.synthetic.dim),
        DF_FIELD("synthetic_separation", double, data.synthetic.separation),
        DF_FIELD("synthetic_noise", double, data.synthetic.noise),
        DF_FIELD("synthetic_p_intra", double, data.synthetic.p_intra),
        DF_FIELD("synthetic_p_inter", double, data.synthetic.p_inter),

        DF_FIELD("verify_seeds", std::size_t, verify_seeds),
        DF_FIELD("tau_grid", std::vector<double>, tau_grid),
        DF_FIELD("verify_n", std::size_t, verify_n),
        DF_FIELD("verify_d", std::size_t, verify_d),
        DF_FIELD("verify_depth", std::size_t, verify_depth),
        DF_FIELD("lambda", double, lambda),

        DF_FIELD("bench_n", std::vector<std::size_t>, bench_n),
        DF_FIELD("bench_d", std::size_t, bench_d),
        DF_FIELD("bench_kernel", std::string, bench_kernel),
        DF_FIELD("warmup", std::size_t, warmup),
        DF_FIELD("repetitions", std::size_t, repetitions),

        DF_FIELD("ablate_kernels", std::vector<std::string>, ablate_kernels),
        DF_FIELD("sweep_depths", std::vector<std::size_t>, sweep_depths),
        DF_FIELD("sweep_taus", std::vector<double>, sweep_taus),
    };
    return table;
}

#undef DF_FIELD

}  // namespace

json to_json(const RunConfig& cfg) {
    json j = json::object();
    for (const auto& b : bindings()) j[b.key] = b.get(cfg);
    return j;
}

RunConfig apply_json(RunConfig base, const json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        const Binding* hit = nullptr;
        for (const auto& b : bindings()) {
            if (key == b.key) hit = &b;
        }
        if (!hit) throw ConfigError("config: unknown key '" + key + "'");
        hit->set(base, value);
    }
    return base;
}

json read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    // Emitted CSV files carry their manifest on a leading comment line.
    const std::string tag = "# manifest: ";
    if (text.rfind(tag, 0) == 0) text = text.substr(tag.size(), text.find('\n') - tag.size());
    // Whole-file JSON first; JSON-lines files fall back to their first record.
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) j = json::parse(text.substr(0, text.find('\n')), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config: '" + path + "' is not valid JSON");
    if (j.is_object() && j.contains("manifest")) j = j["manifest"];
    if (j.is_object() && j.contains("config") && j.contains("command")) j = j["config"];
    if (!j.is_object()) throw ConfigError("config: '" + path + "' does not hold a JSON object");
    return j;
}

json DatasetFingerprint::to_json() const {
    std::ostringstream hex;
    hex << std::hex << hash;
    return {{"N", n}, {"D", d}, {"C", c}, {"E", e}, {"hash", hex.str()}};
}

DatasetFingerprint fingerprint_of(const Dataset& ds) {
    return {ds.n(), ds.dim(), ds.num_classes, ds.edge_lines, fingerprint(ds)};
}

json RunManifest::to_json() const {
    json j{{"command", command}, {"config", config}, {"seed", seed}, {"version", version}};
    j["dataset"] = dataset ? dataset->to_json() : json(nullptr);
    return j;
}

Dataset prepare_dataset(const DataConfig& cfg) {
    Dataset ds;
    std::string split = cfg.split;
    if (cfg.features.empty()) {
        ds = make_synthetic(cfg.synthetic, cfg.split_seed);
        if (split == "auto") split = "keep";
    } else {
        if (cfg.labels.empty()) throw ConfigError("config: 'features' given without 'labels'");
        ds = load_dataset(cfg.features, cfg.labels,
                          cfg.edges.empty() ? std::nullopt : std::optional<std::string>(cfg.edges),
                          cfg.splits.empty() ? std::nullopt : std::optional<std::string>(cfg.splits));
        if (split == "auto") split = cfg.splits.empty() ? "planetoid" : "file";
    }

    if (split == "file") {
        if (cfg.splits.empty()) throw ConfigError("config: split 'file' needs a 'splits' path");
    } else if (split == "planetoid") {
        ds.splits = planetoid_split(ds.labels, ds.num_classes, cfg.per_class, cfg.n_valid, cfg.n_test,
                                    derive_seed(cfg.split_seed, {0x5F}));
    } else if (split == "stratified") {
        ds.splits = stratified_split(ds.labels, ds.num_classes, cfg.train_frac, cfg.valid_frac,
                                     derive_seed(cfg.split_seed, {0x5F}));
    } else if (split != "keep") {
        throw ConfigError("config: unknown split protocol '" + split + "'");
    }

    if (!ds.graph && cfg.knn_k > 0) {
        ds.graph = build_knn_graph(ds.features, cfg.knn_k, parse_metric(cfg.knn_metric));
        ds.edge_lines = ds.graph->edge_count();
    }
    ds.validate();
    return ds;
}

}  // namespace difformer
