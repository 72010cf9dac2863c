#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "streamrak/bench.hpp"
#include "streamrak/benchmark.hpp"
#include "streamrak/config.hpp"
#include "streamrak/dataset_io.hpp"
#include "streamrak/dct.hpp"
#include "streamrak/orchestrator.hpp"
#include "streamrak/pyramid.hpp"

using namespace streamrak;
using json = nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kUsage = 2, kFormat = 3, kNumerical = 4 };

std::ofstream open_out(const std::string& path, bool binary = false) {
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw FormatError("cannot create " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return in;
}

// ---------------------------------------------------------------- datagen

struct DatagenArgs {
    std::string kind = "varsinus";
    long long n = 1000;
    std::uint64_t seed = 1;
    std::string out;
    int steps = 500;
    std::vector<double> state_deg;
};

int run_datagen(const DatagenArgs& a) {
    if (a.n < 1) throw UsageError("--n must be >= 1");
    VectorDataset d;
    const std::string kind = a.kind;
    if (kind == "varsinus") {
        d = to_vector_dataset(varsinus_generate(a.n, a.seed));
    } else if (kind == "dumbbell") {
        d = to_vector_dataset(dumbbell_generate(a.n, a.seed));
    } else {
        PendulumState base = kind == "pendulum-low" ? pendulum_low_energy() : pendulum_high_energy();
        if (!a.state_deg.empty()) {
            if (a.state_deg.size() != 4) throw UsageError("--state needs 4 values in degrees");
            base = {deg2rad(a.state_deg[0]), deg2rad(a.state_deg[1]), deg2rad(a.state_deg[2]), deg2rad(a.state_deg[3])};
        }
        if (a.n > std::numeric_limits<int>::max()) throw UsageError("--n too large for pendulum runs");
        d = pendulum_dataset(base, static_cast<int>(a.n), kTrainingPerturbation, a.steps, 1, a.seed);
    }
    write_dataset_file(a.out, d);
    std::printf("wrote %lld rows, %lld inputs, %lld outputs, target range [%.6g, %.6g] to %s\n",
                static_cast<long long>(d.size()), static_cast<long long>(d.points.cols()),
                static_cast<long long>(d.targets.cols()), d.targets.minCoeff(), d.targets.maxCoeff(), a.out.c_str());
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string input = "-";
    std::string config;
    std::vector<std::string> set;
    std::string model;
    std::string mode = "sequential";
    std::string events;
    std::string tree;
    bool quiet = false;
};

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig c;
    if (!path.empty()) c = RunConfig::load(path);
    if (!overrides.empty()) {
        std::string text;
        for (const auto& s : overrides) text += s + "\n";
        c = RunConfig::parse(text, c);
    }
    return c;
}

json event_json(const LifecycleEvent& e) {
    json j;
    j["event"] = to_string(e.kind);
    j["level"] = e.level;
    j["samples_seen"] = e.samples_seen;
    j["level_samples"] = e.level_samples;
    j["landmarks"] = e.landmarks;
    j["tree_nodes"] = e.tree_nodes;
    j["r0"] = e.r0;
    j["seconds"] = e.seconds;
    if (e.kind == EventKind::LevelSufficient) {
        j["gram_diff"] = e.gram_diff;
        j["rhs_diff"] = e.rhs_diff;
    }
    if (e.kind == EventKind::LevelTrained) {
        j["cg_iterations"] = e.cg_iterations;
        j["cg_residual"] = e.cg_residual;
    }
    return j;
}

int worker_cap() {
    const char* env = std::getenv("STREAMRAK_THREADS");
    if (!env || !*env) return 2;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw UsageError(std::string("STREAMRAK_THREADS must be a positive integer, got `") + env + "`");
    return static_cast<int>(v);
}

int run_train(const TrainArgs& a) {
    const RunConfig cfg = load_config(a.config, a.set);
    std::ifstream file;
    std::istream* in = &std::cin;
    if (a.input != "-") {
        file = open_in(a.input);
        in = &file;
    }
    SampleReader reader(*in);
    if (reader.outputs() == 0) throw FormatError("training data needs at least one y column");
    const std::size_t dim = reader.dim(), k = reader.outputs();

    std::ofstream events_file;
    std::ostream* events = nullptr;
    if (a.events == "-") {
        events = &std::cout;
    } else if (!a.events.empty()) {
        events_file = open_out(a.events);
        events = &events_file;
    }
    auto log = [&](const LifecycleEvent& e) {
        if (events) *events << event_json(e).dump() << '\n';
        if (!a.quiet && e.kind == EventKind::LevelTrained) {
            std::fprintf(stderr, "level %d trained: %zu landmarks, %llu samples, %.1f s\n", e.level, e.landmarks,
                         static_cast<unsigned long long>(e.level_samples), e.seconds);
        }
    };

    bool concurrent = a.mode == "concurrent";
    if (concurrent && worker_cap() < 2) {
        if (!a.quiet) std::fprintf(stderr, "STREAMRAK_THREADS < 2: running the sequential pipeline\n");
        concurrent = false;
    }
    if (concurrent && !a.tree.empty()) throw UsageError("--tree is only available in sequential mode");

    std::vector<double> row;
    ModelSet models;
    std::uint64_t seen = 0;
    if (concurrent) {
        ConcurrentPipeline p(cfg, dim, k);
        p.on_event = log;
        while (reader.next(row)) {
            p.consume(Point(row.data(), dim), std::span<const double>(row.data() + dim, k));
        }
        p.finish();
        seen = p.samples_seen();
        if (auto m = p.snapshot_model()) {
            models = *m;
        } else {
            for (std::size_t j = 0; j < k; ++j) models.emplace_back(dim, Bandwidth(p.r0() > 0 ? p.r0() : 1.0));
        }
    } else {
        Pipeline p(cfg, dim, k);
        p.on_event = log;
        while (reader.next(row)) {
            p.consume(Point(row.data(), dim), std::span<const double>(row.data() + dim, k));
        }
        p.finish();
        seen = p.samples_seen();
        models = p.model_or_empty();
        if (!a.tree.empty() && p.tree()) {
            auto out = open_out(a.tree, true);
            p.tree()->write(out);
        }
    }
    if (seen == 0) throw FormatError("no samples: the input has a header but no rows");
    auto out = open_out(a.model, true);
    write_models(out, models);
    out.flush();
    if (!out) throw FormatError("write failed: " + a.model);
    if (!a.quiet) {
        std::fprintf(stderr, "%llu samples, %zu levels, model written to %s\n", static_cast<unsigned long long>(seen),
                     models.front().level_count(), a.model.c_str());
    }
    return kOk;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
    std::string model;
    std::string input = "-";
    std::string out = "-";
    bool per_level = false;
    std::optional<int> up_to;
};

int run_predict(const PredictArgs& a) {
    auto min = open_in(a.model);
    ModelSet models;
    try {
        models = read_models(min);
    } catch (const FormatError& e) {
        throw FormatError(a.model + ": " + e.what());
    }
    std::ifstream file;
    std::istream* in = &std::cin;
    if (a.input != "-") {
        file = open_in(a.input);
        in = &file;
    }
    SampleReader reader(*in);
    const std::size_t dim = models.front().dim();
    if (reader.dim() != dim) {
        throw UsageError("dimension mismatch: model has " + std::to_string(dim) + " inputs, data has " +
                         std::to_string(reader.dim()));
    }
    for (const auto& m : models) {
        if (m.empty()) throw StateError("model has no trained levels");
        if (a.up_to && (*a.up_to < m.first_level() || *a.up_to > m.deepest_level())) {
            throw UsageError("--up-to " + std::to_string(*a.up_to) + " is outside the trained levels " +
                             std::to_string(m.first_level()) + ".." + std::to_string(m.deepest_level()));
        }
    }
    std::ofstream ofile;
    std::ostream* out = &std::cout;
    if (a.out != "-") {
        ofile = open_out(a.out);
        out = &ofile;
    }
    *out << std::setprecision(17);
    const std::size_t k = models.size();
    std::vector<std::string> header;
    for (std::size_t j = 0; j < k; ++j) {
        const std::string name = "yhat" + std::to_string(j + 1);
        if (a.per_level) {
            for (std::size_t i = 0; i < models[j].level_count(); ++i) {
                const int l = models[j].level_at(i).level;
                if (a.up_to && l > *a.up_to) break;
                header.push_back(name + "_level" + std::to_string(l));
            }
        } else {
            header.push_back(name);
        }
    }
    for (std::size_t i = 0; i < header.size(); ++i) *out << (i ? "," : "") << header[i];
    *out << '\n';
    std::vector<double> row;
    while (reader.next(row)) {
        const Point x(row.data(), dim);
        bool first = true;
        for (const auto& m : models) {
            if (a.per_level) {
                const auto cum = m.predict_levels(x);
                for (std::size_t i = 0; i < cum.size(); ++i) {
                    if (a.up_to && m.level_at(i).level > *a.up_to) break;
                    *out << (first ? "" : ",") << cum[i];
                    first = false;
                }
            } else {
                *out << (first ? "" : ",") << m.predict(x, a.up_to);
                first = false;
            }
        }
        *out << '\n';
    }
    return kOk;
}

// ---------------------------------------------------------------- benchmark

struct BenchmarkArgs {
    std::string kind = "varsinus";
    double scale = 0.1;
    std::string out = "benchmark_out";
    bool no_baselines = false;
    std::uint64_t seed = 1;
    bool quiet = false;
};

int run_benchmark_cmd(const BenchmarkArgs& a) {
    const BenchmarkKind kind = parse_benchmark_kind(a.kind);
    BenchmarkOptions opt = default_benchmark_options(kind, a.scale);
    opt.seed = a.seed;
    opt.baselines = !a.no_baselines;
    const BenchmarkReport rep = run_benchmark(kind, opt, [&](const std::string& s) {
        if (!a.quiet) std::fprintf(stderr, "%s\n", s.c_str());
    });
    std::filesystem::create_directories(a.out);
    const auto files = write_report(rep, a.out);
    std::printf("%-9s %5s %9s %9s %12s %9s\n", "method", "level", "landmarks", "samples", "mse", "seconds");
    for (const auto& r : rep.table) {
        std::printf("%-9s %5d %9zu %9llu %12.4e %9.2f\n", r.method.c_str(), r.level, r.landmarks,
                    static_cast<unsigned long long>(r.samples), r.mse, r.seconds);
    }
    for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    return kOk;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
    std::string model;
    std::string tree;
    std::string knn_csv;
    std::optional<int> k;
    std::size_t max_knn_points = 5000;
};

int run_inspect(const InspectArgs& a) {
    if (a.model.empty() == a.tree.empty()) throw UsageError("give exactly one of --model and --tree");
    std::ofstream csv;
    if (!a.knn_csv.empty()) {
        csv = open_out(a.knn_csv);
        csv << "output,level,points,radius,median_knn,mean_knn\n" << std::setprecision(17);
    }
    auto knn_stats = [&](const PointBlock& p, int k) -> std::pair<double, double> {
        if (p.rows() < 2 || static_cast<std::size_t>(p.rows()) > a.max_knn_points) return {NAN, NAN};
        const auto d = knn_mean_distances(p, k);
        double mean = 0.0;
        for (double v : d) mean += v / static_cast<double>(d.size());
        return {median(d), mean};
    };
    if (!a.model.empty()) {
        auto in = open_in(a.model);
        ModelSet models;
        try {
            models = read_models(in);
        } catch (const FormatError& e) {
            throw FormatError(a.model + ": " + e.what());
        }
        const int k = a.k.value_or(default_knn(models.front().dim()));
        std::printf("model %s: %zu output(s), dimension %zu, r0 %.6g, k = %d\n", a.model.c_str(), models.size(),
                    models.front().dim(), models.front().r0().value(), k);
        std::printf("%6s %5s %9s %12s %12s %12s\n", "output", "level", "landmarks", "bandwidth", "median_knn", "mean_knn");
        for (std::size_t j = 0; j < models.size(); ++j) {
            for (std::size_t i = 0; i < models[j].level_count(); ++i) {
                const LevelModel& lm = models[j].level_at(i);
                const auto [med, mean] = knn_stats(lm.landmarks, k);
                std::printf("%6zu %5d %9lld %12.6g %12.6g %12.6g\n", j + 1, lm.level,
                            static_cast<long long>(lm.landmarks.rows()), lm.bandwidth.value(), med, mean);
                if (csv.is_open()) {
                    csv << j + 1 << ',' << lm.level << ',' << lm.landmarks.rows() << ',' << lm.bandwidth.value() << ','
                        << med << ',' << mean << '\n';
                }
            }
        }
        return kOk;
    }
    auto in = open_in(a.tree);
    const DampedCoverTree t = [&] {
        try {
            return DampedCoverTree::read(in);
        } catch (const FormatError& e) {
            throw FormatError(a.tree + ": " + e.what());
        }
    }();
    const int k = a.k.value_or(default_knn(t.dim()));
    const TreeStats s = t.stats();
    std::printf("tree %s: %zu nodes, depth %d, dimension %zu, r0 %.6g, k = %d\n", a.tree.c_str(), s.total_nodes,
                s.depth, t.dim(), t.r0().value(), k);
    std::printf("samples %llu, damped %llu, duplicates %llu, root overflow %llu, bypassed %llu\n",
                static_cast<unsigned long long>(s.samples_seen), static_cast<unsigned long long>(s.discarded_damped),
                static_cast<unsigned long long>(s.discarded_duplicate), static_cast<unsigned long long>(s.root_overflow),
                static_cast<unsigned long long>(s.bypassed));
    std::printf("%5s %9s %9s %9s %12s %12s %12s\n", "level", "nodes", "eligible", "level_cf", "radius", "median_knn",
                "mean_knn");
    for (std::size_t l = 0; l < s.levels.size(); ++l) {
        const int level = static_cast<int>(l);
        const auto [med, mean] = knn_stats(t.level_points(level), k);
        std::printf("%5d %9zu %9zu %9.4f %12.6g %12.6g %12.6g\n", level, s.levels[l].nodes, s.levels[l].eligible,
                    s.levels[l].level_cover_fraction, t.radius(level).value(), med, mean);
        if (csv.is_open()) {
            csv << 0 << ',' << level << ',' << s.levels[l].nodes << ',' << t.radius(level).value() << ',' << med << ','
                << mean << '\n';
        }
    }
    if (s.levels.size() > 0) {
        bool skipped = false;
        for (const auto& lv : s.levels) skipped = skipped || lv.nodes > a.max_knn_points;
        if (skipped) std::printf("k-NN columns are NaN for levels above %zu nodes\n", a.max_knn_points);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming multi-resolution kernel ridge regression"};
    app.require_subcommand(0, 1);
    bool print_defaults = false;
    app.add_flag("--print-defaults", print_defaults, "Print every configuration key with its default and exit");

    DatagenArgs dg;
    auto* datagen = app.add_subcommand("datagen", "Generate a benchmark dataset");
    datagen->add_option("--kind", dg.kind, "Dataset kind")
        ->check(CLI::IsMember({"varsinus", "dumbbell", "pendulum-low", "pendulum-high"}));
    datagen->add_option("--n", dg.n, "Rows (pendulum kinds: number of pendulums)");
    datagen->add_option("--seed", dg.seed, "Random seed");
    datagen->add_option("--out", dg.out, "Output file (.smrd for binary, CSV otherwise)")->required();
    datagen->add_option("--steps", dg.steps, "Recorded steps per pendulum");
    datagen->add_option("--state", dg.state_deg, "Pendulum base state th1,th2,w1,w2 in degrees")->delimiter(',');

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Stream a dataset into a model");
    train->add_option("--input", tr.input, "Dataset file, or - for stdin");
    train->add_option("--config", tr.config, "Configuration file (key = value lines)");
    train->add_option("--set", tr.set, "Override one key, e.g. --set lambda=1e-5");
    train->add_option("--model", tr.model, "Model output file")->required();
    train->add_option("--mode", tr.mode, "Pipeline mode")->check(CLI::IsMember({"sequential", "concurrent"}));
    train->add_option("--events", tr.events, "JSON-lines event log file, or - for stdout");
    train->add_option("--tree", tr.tree, "Write the cover tree to this file (sequential mode)");
    train->add_flag("--quiet", tr.quiet, "No progress on stderr");

    PredictArgs pr;
    auto* predict = app.add_subcommand("predict", "Evaluate a model on a dataset");
    predict->add_option("--model", pr.model, "Model file")->required();
    predict->add_option("--input", pr.input, "Dataset file, or - for stdin");
    predict->add_option("--out", pr.out, "Prediction CSV, or - for stdout");
    predict->add_flag("--per-level", pr.per_level, "One cumulative column per level");
    predict->add_option("--up-to", pr.up_to, "Deepest level to include");

    BenchmarkArgs bm;
    auto* benchmark = app.add_subcommand("benchmark", "Run a benchmark and write its tables");
    benchmark->add_option("--kind", bm.kind, "Benchmark")
        ->check(CLI::IsMember({"varsinus", "dumbbell", "pendulum-low", "pendulum-high"}));
    benchmark->add_option("--scale", bm.scale, "Fraction of the full sample counts, in (0, 1]");
    benchmark->add_option("--out", bm.out, "Output directory");
    benchmark->add_option("--seed", bm.seed, "Random seed");
    benchmark->add_flag("--no-baselines", bm.no_baselines, "Skip LP-KRR and FALKON");
    benchmark->add_flag("--quiet", bm.quiet, "No progress on stderr");

    InspectArgs ins;
    auto* inspect = app.add_subcommand("inspect", "Summarise a model or tree file");
    auto* model_opt = inspect->add_option("--model", ins.model, "Model file");
    auto* tree_opt = inspect->add_option("--tree", ins.tree, "Tree file");
    model_opt->excludes(tree_opt);
    inspect->add_option("--knn-csv", ins.knn_csv, "Write per-level k-NN statistics to this CSV");
    inspect->add_option("--k", ins.k, "Neighbours for the k-NN statistics (default 2 in 1-D, 7 otherwise)")
        ->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }
    try {
        if (print_defaults) {
            std::cout << RunConfig{}.to_text();
            return kOk;
        }
        if (*datagen) return run_datagen(dg);
        if (*train) return run_train(tr);
        if (*predict) return run_predict(pr);
        if (*benchmark) return run_benchmark_cmd(bm);
        if (*inspect) return run_inspect(ins);
        std::cerr << app.help();
        return kUsage;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFormat;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNumerical;
    } catch (const StateError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kOther;
    }
}
