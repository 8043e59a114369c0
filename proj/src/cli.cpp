#include "difformer/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "difformer/bench.hpp"
#include "difformer/energy.hpp"
#include "difformer/error.hpp"
#include "difformer/propagation.hpp"
#include "difformer/seed.hpp"
#include "difformer/training.hpp"

namespace difformer::cli {

namespace {

using nlohmann::json;

// Raised for malformed overrides; maps to the usage exit code.
struct UsageError : Error {
    using Error::Error;
};

std::string num(double x) { return json(x).dump(); }

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// Converts a command-line string into JSON shaped like the default value of `key`.
json coerce(const std::string& key, const std::string& text) {
    static const json defaults = to_json(RunConfig{});
    if (!defaults.contains(key)) throw UsageError("unknown configuration key '" + key + "'");
    const json& like = defaults[key];
    auto scalar = [&](const json& proto, const std::string& s) -> json {
        try {
            std::size_t used = 0;
            if (proto.is_boolean()) {
                if (s == "true" || s == "1") return true;
                if (s == "false" || s == "0") return false;
                throw UsageError("");
            }
            if (proto.is_number_unsigned() || proto.is_number_integer()) {
                if (s.empty() || s[0] == '-') throw UsageError("");
                const unsigned long long v = std::stoull(s, &used);
                if (used != s.size()) throw UsageError("");
                return v;
            }
            if (proto.is_number()) {
                const double v = std::stod(s, &used);
                if (used != s.size()) throw UsageError("");
                return v;
            }
            return s;
        } catch (const std::exception&) {
            throw UsageError("invalid value '" + s + "' for '" + key + "'");
        }
    };
    if (like.is_array()) {
        json arr = json::array();
        for (const auto& item : split_list(text)) arr.push_back(scalar(like.at(0), item));
        if (arr.empty()) throw UsageError("empty list for '" + key + "'");
        return arr;
    }
    return scalar(like, text);
}

struct Flag {
    const char* name;
    const char* key;
    const char* help;
    bool is_bool = false;
};

const std::vector<Flag> kTrainFlags{
    {"--lr", "lr", "Adam learning rate"},
    {"--weight-decay", "weight_decay", "L2 coefficient added to gradients"},
    {"--epochs", "epochs", "maximum epochs"},
    {"--patience", "patience", "epochs without validation improvement before stopping"},
    {"--batch-size", "batch_size", "mini-batch size (0 = full batch)"},
    {"--hidden", "hidden", "hidden width"},
    {"--depth", "depth", "number of propagation layers K"},
    {"--heads", "heads", "attention heads"},
    {"--tau", "tau", "step size in (0, 1)"},
    {"--kernel", "kernel", "diffusivity: simple|advanced|identity|constant|full_attention|gaussian|gcn"},
    {"--variant", "variant", "simple-kernel numerator: eq9|alg2"},
    {"--dropout", "dropout", "dropout probability"},
    {"--bandwidth", "bandwidth", "gaussian bandwidth (0 = median heuristic)"},
    {"--use-graph", "use_graph", "add the observed-graph term", true},
    {"--use-weight", "use_weight", "value projection per layer", true},
    {"--use-activation", "use_activation", "ReLU after each layer", true},
    {"--runs", "runs", "number of seeds (seed, seed+1, ...)"},
    {"--features", "features", "feature CSV (empty: synthetic data)"},
    {"--labels", "labels", "label file"},
    {"--edges", "edges", "edge list"},
    {"--splits", "splits", "split file"},
    {"--split", "split", "auto|file|planetoid|stratified"},
    {"--split-seed", "split_seed", "seed of the split and the synthetic generator"},
    {"--per-class", "per_class", "planetoid training nodes per class"},
    {"--knn-k", "knn_k", "kNN graph degree when no edges are given"},
    {"--knn-metric", "knn_metric", "cosine|euclidean"},
};

const std::vector<Flag> kVerifyFlags{
    {"--seeds", "verify_seeds", "random instances per suite"},
    {"--tau-grid", "tau_grid", "comma-separated step sizes"},
    {"--n", "verify_n", "instances per state"},
    {"--d", "verify_d", "state width"},
    {"--depth", "verify_depth", "chain length K"},
    {"--lambda", "lambda", "energy weight on the pairwise term"},
};

const std::vector<Flag> kBenchFlags{
    {"--n", "bench_n", "comma-separated problem sizes"},
    {"--d", "bench_d", "feature width"},
    {"--kernel", "bench_kernel", "simple|advanced|both"},
    {"--warmup", "warmup", "untimed calls per size"},
    {"--repetitions", "repetitions", "timed calls per size"},
};

struct Command {
    CLI::App* app = nullptr;
    std::map<std::string, std::string> values;  // key -> raw text
    std::string config_path;
    std::vector<std::string> sets;
    std::string seed;
};

void add_flags(Command& c, const std::vector<Flag>& flags) {
    for (const auto& f : flags) {
        std::string& slot = c.values[f.key];
        if (f.is_bool) {
            c.app->add_flag(std::string(f.name) + "{true}", slot, f.help);
        } else {
            c.app->add_option(f.name, slot, f.help);
        }
    }
}

RunConfig resolve(const Command& c) {
    RunConfig cfg;
    try {
        if (!c.config_path.empty()) cfg = apply_json(cfg, read_config_file(c.config_path));
        json over = json::object();
        for (const auto& s : c.sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
            over[s.substr(0, eq)] = coerce(s.substr(0, eq), s.substr(eq + 1));
        }
        if (!c.seed.empty()) over["seed"] = coerce("seed", c.seed);
        for (const auto& [key, text] : c.values) {
            if (!text.empty()) over[key] = coerce(key, text);
        }
        return apply_json(cfg, over);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
}

// Range checks that do not need the dataset; input_dim and num_classes come from it later.
void validate_training(TrainConfig t) {
    if (t.net.input_dim == 0) t.net.input_dim = 1;
    if (t.net.num_classes == 0) t.net.num_classes = 1;
    try {
        t.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream f(p);
    if (!f) throw Error("cannot write '" + p.string() + "'");
    f << std::setprecision(17);
    return f;
}

void write_json(const std::filesystem::path& p, const json& j) {
    auto f = open_out(p);
    f << j.dump(2) << '\n';
}

std::ofstream open_csv(const std::filesystem::path& p, const RunManifest& m, const std::string& header) {
    auto f = open_out(p);
    f << "# manifest: " << m.to_json().dump() << '\n' << header << '\n';
    return f;
}

struct Stats {
    double mean = 0.0;
    double std = 0.0;
};

Stats stats_of(const std::vector<double>& v) {
    Stats s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

struct RunSet {
    std::vector<Metrics> metrics;
    Stats test, valid;
    double mean_best_epoch = 0.0;
};

RunSet train_runs(const Dataset& ds, const RunConfig& cfg, const std::function<void(std::size_t, const EpochRecord&)>& on_epoch) {
    if (cfg.runs == 0) throw ConfigError("runs must be positive");
    RunSet rs;
    std::vector<double> test, valid;
    for (std::size_t r = 0; r < cfg.runs; ++r) {
        TrainConfig tc = cfg.train;
        tc.seed = cfg.train.seed + r;
        EpochCallback cb;
        if (on_epoch) cb = [&, r](const EpochRecord& e) { on_epoch(r, e); };
        rs.metrics.push_back(train(ds, tc, nullptr, cb));
        test.push_back(rs.metrics.back().test_acc);
        valid.push_back(rs.metrics.back().best_valid_acc);
        rs.mean_best_epoch += static_cast<double>(rs.metrics.back().best_epoch) / static_cast<double>(cfg.runs);
    }
    rs.test = stats_of(test);
    rs.valid = stats_of(valid);
    return rs;
}

int cmd_train(const RunConfig& cfg, RunManifest& manifest, std::ostream& out) {
    const Dataset ds = prepare_dataset(cfg.data);
    manifest.dataset = fingerprint_of(ds);
    const auto dir = output_dir();
    auto lines = open_out(dir / "metrics.jsonl");
    lines << json{{"manifest", manifest.to_json()}}.dump() << '\n';
    const RunSet rs = train_runs(ds, cfg, [&](std::size_t r, const EpochRecord& e) {
        json j = Metrics{}.epoch_json(e);
        j["run"] = r;
        j["seed"] = cfg.train.seed + r;
        lines << j.dump() << '\n';
    });
    json runs = json::array();
    for (std::size_t r = 0; r < rs.metrics.size(); ++r) {
        json s = rs.metrics[r].summary_json();
        s["seed"] = cfg.train.seed + r;
        runs.push_back(s);
    }
    json summary{{"manifest", manifest.to_json()},
                 {"runs", runs},
                 {"test_acc", rs.test.mean},
                 {"test_acc_std", rs.test.std},
                 {"best_valid_acc", rs.valid.mean}};
    write_json(dir / "summary.json", summary);
    out << "train: test_acc " << rs.test.mean << " +/- " << rs.test.std << " over " << cfg.runs
        << " run(s); wrote " << (dir / "summary.json").string() << '\n';
    return kOk;
}

int cmd_ablate(const RunConfig& cfg, RunManifest& manifest, std::ostream& out) {
    const Dataset ds = prepare_dataset(cfg.data);
    manifest.dataset = fingerprint_of(ds);
    std::vector<KernelKind> kinds;
    try {
        for (const auto& name : cfg.ablate_kernels) kinds.push_back(parse_kernel(name));
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    auto csv = open_csv(output_dir() / "ablation.csv", manifest,
                        "kernel,runs,test_acc,test_acc_std,valid_acc,best_epoch");
    for (KernelKind k : kinds) {
        RunConfig c = cfg;
        c.train.net.kernel = k;
        const RunSet rs = train_runs(ds, c, nullptr);
        csv << kernel_name(k) << ',' << cfg.runs << ',' << num(rs.test.mean) << ',' << num(rs.test.std) << ','
            << num(rs.valid.mean) << ',' << num(rs.mean_best_epoch) << '\n';
        out << "ablate: " << kernel_name(k) << " test_acc " << rs.test.mean << '\n';
    }
    return kOk;
}

int cmd_sweep(const RunConfig& cfg, RunManifest& manifest, std::ostream& out) {
    const Dataset ds = prepare_dataset(cfg.data);
    manifest.dataset = fingerprint_of(ds);
    auto csv = open_csv(output_dir() / "sweep.csv", manifest, "depth,tau,runs,test_acc,test_acc_std,valid_acc");
    for (std::size_t depth : cfg.sweep_depths) {
        for (double tau : cfg.sweep_taus) {
            RunConfig c = cfg;
            c.train.net.depth = depth;
            c.train.net.tau = tau;
            const RunSet rs = train_runs(ds, c, nullptr);
            csv << depth << ',' << num(tau) << ',' << cfg.runs << ',' << num(rs.test.mean) << ','
                << num(rs.test.std) << ',' << num(rs.valid.mean) << '\n';
            out << "sweep: K=" << depth << " tau=" << tau << " test_acc " << rs.test.mean << '\n';
        }
    }
    return kOk;
}

int cmd_bench(const RunConfig& cfg, RunManifest& manifest, std::ostream& out) {
    BenchOptions opts;
    opts.n = cfg.bench_n;
    opts.d = cfg.bench_d;
    opts.warmup = cfg.warmup;
    opts.repetitions = cfg.repetitions;
    opts.seed = cfg.train.seed;
    if (cfg.bench_kernel == "simple") {
        opts.kernels = {KernelKind::simple_linear};
    } else if (cfg.bench_kernel == "advanced") {
        opts.kernels = {KernelKind::advanced_sigmoid};
    } else if (cfg.bench_kernel != "both") {
        throw ConfigError("bench_kernel must be simple, advanced or both");
    }
    const auto dir = output_dir();
    auto csv = open_csv(dir / "bench.csv", manifest, "n,kernel,seconds,bytes");
    const BenchResult res = run_bench(opts, [&](const BenchRow& r) {
        csv << r.n << ',' << kernel_name(r.kernel) << ',' << num(r.seconds) << ',' << r.bytes << '\n';
        csv.flush();
        out << "bench: " << kernel_name(r.kernel) << " N=" << r.n << " " << r.seconds << " s\n";
    });
    write_json(dir / "bench_slopes.json", {{"manifest", manifest.to_json()}, {"slopes", res.fits_json()}});
    for (const auto& [k, f] : res.fits) out << "bench: " << kernel_name(k) << " slope " << f.slope << '\n';
    return kOk;
}

int cmd_verify(const RunConfig& cfg, RunManifest& manifest, std::ostream& out) {
    VerifyOutcome v = run_verify(cfg);
    v.report["manifest"] = manifest.to_json();
    write_json(output_dir() / "energy_report.json", v.report);
    out << "verify: " << (v.passed ? "all suites pass" : "FAILED") << '\n';
    return v.passed ? kOk : kFailure;
}

}  // namespace

std::filesystem::path output_dir() {
    const char* env = std::getenv(kOutDirEnv);
    if (!env || !*env) return std::filesystem::current_path();
    std::filesystem::path p(env);
    std::filesystem::create_directories(p);
    return p;
}

VerifyOutcome run_verify(const RunConfig& cfg) {
    if (cfg.verify_seeds == 0) throw ConfigError("verify_seeds must be positive");
    if (cfg.tau_grid.empty()) throw ConfigError("tau_grid must not be empty");
    const std::size_t n = cfg.verify_n, d = cfg.verify_d;
    std::vector<std::uint64_t> seeds;
    for (std::size_t s = 0; s < cfg.verify_seeds; ++s) seeds.push_back(derive_seed(cfg.train.seed, {0x7E, s}));
    const double tau_min = *std::min_element(cfg.tau_grid.begin(), cfg.tau_grid.end());

    VerifyOutcome res;
    json& rep = res.report;
    rep["suites"] = json::object();
    const std::vector<KernelKind> kinds{KernelKind::simple_linear, KernelKind::advanced_sigmoid};

    for (KernelKind kind : kinds) {
        const std::string kname = kernel_name(kind);
        EnergyConfig ecfg;
        ecfg.lambda = cfg.lambda;
        ecfg.kernel = kind;

        // Tangency at the optimal weights.
        double max_gap = 0.0;
        for (std::uint64_t s : seeds) {
            const Matrix z = audit_initial_state(n, d, derive_seed(s, {1}));
            const Matrix zk = audit_initial_state(n, d, derive_seed(s, {2}));
            const double gap = std::abs(variational_bound(z, zk, optimal_weights(z, kind), ecfg) - energy(z, zk, ecfg));
            max_gap = std::max(max_gap, gap);
        }
        const bool tangency_ok = max_gap <= 1e-8;
        rep["suites"]["tangency"][kname] = {{"max_gap", max_gap}, {"tolerance", 1e-8}, {"passed", tangency_ok}};

        // Upper bound for arbitrary in-range weights.
        const auto [lo, hi] = conjugate_domain(kind);
        double min_slack = std::numeric_limits<double>::infinity();
        constexpr std::size_t kOmegas = 100;
        for (std::size_t t = 0; t < kOmegas; ++t) {
            const std::uint64_t s = seeds[t % seeds.size()];
            const Matrix z = audit_initial_state(n, d, derive_seed(s, {1}));
            const Matrix zk = audit_initial_state(n, d, derive_seed(s, {2}));
            std::mt19937_64 rng(derive_seed(s, {3, t}));
            std::uniform_real_distribution<double> u(lo, hi);
            Matrix omega(n, n);
            for (std::size_t i = 0; i < omega.size(); ++i) omega.data()[i] = u(rng);
            min_slack = std::min(min_slack, variational_bound(z, zk, omega, ecfg) - energy(z, zk, ecfg));
        }
        const bool bound_ok = min_slack >= -1e-10;
        rep["suites"]["bound"][kname] = {
            {"omegas", kOmegas}, {"min_slack", min_slack}, {"tolerance", 1e-10}, {"passed", bound_ok}};

        // Preconditioned unfolding step against the diffusion iteration.
        double max_err = 0.0;
        for (std::uint64_t s : seeds) {
            const Matrix z = audit_initial_state(n, d, derive_seed(s, {4}));
            const Matrix sn = row_normalize(optimal_weights(z, kind));
            for (double tau : cfg.tau_grid) {
                max_err = std::max(max_err, max_abs_diff(unfolding_step(z, tau, kind), euler_step(z, sn, tau)));
            }
        }
        const bool oracle_ok = max_err <= 1e-9;
        rep["suites"]["oracle"][kname] = {{"max_abs_error", max_err}, {"tolerance", 1e-9}, {"passed", oracle_ok}};

        // Descent over the tau grid; the plain chain at the smallest tau gates the verdict.
        bool descent_ok = false;
        for (ChainKind chain : {ChainKind::plain, ChainKind::layer_norm, ChainKind::graph}) {
            DescentOptions o;
            o.kernel = kind;
            o.chain = chain;
            o.n = n;
            o.d = d;
            o.depth = cfg.verify_depth;
            o.seeds = seeds;
            o.taus = cfg.tau_grid;
            o.lambda = cfg.lambda;
            json entry;
            try {
                const EnergyReport er = verify_descent(o);
                entry = er.to_json();
                if (chain == ChainKind::plain) descent_ok = er.descends_at(tau_min);
            } catch (const Error& e) {
                entry = {{"error", e.what()}};
                if (chain == ChainKind::plain) throw;
            }
            rep["suites"]["descent"][kname][chain_name(chain)] = entry;
        }
        rep["suites"]["descent"][kname]["gate_tau"] = tau_min;
        rep["suites"]["descent"][kname]["passed"] = descent_ok;
        res.passed = res.passed && tangency_ok && bound_ok && oracle_ok && descent_ok;
    }
    rep["passed"] = res.passed;
    return res;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app("Energy-constrained diffusion Transformer experiments", "difformer");
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::map<std::string, Command> cmds;
    auto make = [&](const char* name, const char* help, const std::vector<Flag>& flags) -> Command& {
        Command& c = cmds[name];
        c.app = app.add_subcommand(name, help);
        c.app->add_option("--config", c.config_path, "JSON config or any emitted output file");
        c.app->add_option("--set", c.sets, "key=value override (repeatable)");
        c.app->add_option("--seed", c.seed, "base seed");
        add_flags(c, flags);
        return c;
    };
    make("train", "fit one configuration", kTrainFlags);
    make("verify", "run the energy suites", kVerifyFlags);
    make("bench", "time the two propagation kernels over an N grid", kBenchFlags);
    Command& ablate = make("ablate", "compare diffusivities under one configuration", kTrainFlags);
    ablate.app->add_option("--kernels", ablate.values["ablate_kernels"], "comma-separated kernel names");
    Command& sweep = make("sweep", "grid over depth and tau", kTrainFlags);
    sweep.app->add_option("--depths", sweep.values["sweep_depths"], "comma-separated K values");
    sweep.app->add_option("--taus", sweep.values["sweep_taus"], "comma-separated tau values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    std::string name;
    for (auto& [n, c] : cmds) {
        if (c.app->parsed()) name = n;
    }
    Command& cmd = cmds.at(name);

    RunConfig cfg;
    try {
        cfg = resolve(cmd);
        if (name == "train" || name == "ablate") validate_training(cfg.train);
    } catch (const UsageError& e) {
        err << "difformer " << name << ": " << e.what() << '\n';
        return kUsage;
    }

    RunManifest manifest;
    manifest.command = name;
    manifest.config = to_json(cfg);
    manifest.seed = cfg.train.seed;
    try {
        if (name == "train") return cmd_train(cfg, manifest, out);
        if (name == "verify") return cmd_verify(cfg, manifest, out);
        if (name == "bench") return cmd_bench(cfg, manifest, out);
        if (name == "ablate") return cmd_ablate(cfg, manifest, out);
        return cmd_sweep(cfg, manifest, out);
    } catch (const std::exception& e) {
        err << "difformer " << name << ": " << e.what() << '\n';
        try {
            write_json(output_dir() / "error.json", {{"manifest", manifest.to_json()}, {"error", e.what()}});
        } catch (const std::exception& e2) {
            err << "difformer " << name << ": " << e2.what() << '\n';
        }
        return kFailure;
    }
}

}  // namespace difformer::cli
