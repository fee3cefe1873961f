// Command-line surface over the oodmap library: scoring exported network
// tensors, fitting Mahalanobis statistics, threshold-sweep evaluation,
// ODIN temperature tuning, synthetic data generation, and report merging.
//
// Exit codes: 0 success, 1 usage, 2 I/O failure, 3 data-contract violation.

#include <CLI11.hpp>
#include <json.hpp>

#include "oodmap/oodmap.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oodmap;

namespace {

std::string fnv1a64(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for digest: " + path.string());
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const auto n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << hash;
    return out.str();
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_json_atomic(const json& j, const fs::path& path) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot write: " + tmp.string());
        out << j.dump(2) << '\n';
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

void write_text_atomic(const std::string& text, const fs::path& path) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot write: " + tmp.string());
        out << text;
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

json optional_metric(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}

// ---------------------------------------------------------------- score ----

struct ScoreArgs {
    std::vector<std::string> inputs;
    std::string method;
    double temperature = 1.0;
    int radius = 0;
    std::string stats_dir;
    std::string out;
    std::uint32_t out_height = 0;  // 0: keep the input resolution
    std::uint32_t out_width = 0;
};

LabelMap stack_prediction(const PredictionStack& s) {
    // predicted class of a dropout model: argmax of the mean softmax
    LogitMap mean(s.height, s.width, s.classes);
    std::vector<double> p(s.classes);
    for (std::size_t i = 0; i < s.pixels(); ++i) {
        std::vector<double> acc(s.classes, 0.0);
        for (std::uint32_t t = 0; t < s.runs; ++t) {
            softmax(s.pixel(t, i), p);
            for (std::uint32_t k = 0; k < s.classes; ++k) acc[k] += p[k];
        }
        for (std::uint32_t k = 0; k < s.classes; ++k)
            mean.pixel(i)[k] = static_cast<float>(acc[k]);
    }
    return argmax_labels(mean);
}

int run_score(const ScoreArgs& args) {
    const auto method = method_from_string(args.method);
    if (!method) throw ContractError("unknown method: " + args.method);
    std::optional<ClassStats> stats;
    if (*method == Method::Mahalanobis) {
        if (args.stats_dir.empty())
            throw ContractError("mahalanobis scoring needs --stats-dir");
        stats = load_stats(args.stats_dir);
    }
    fs::create_directories(args.out);
    for (const auto& input : args.inputs) {
        const Tensor t = load_tensor(input);
        ScoreMap scores;
        std::optional<LabelMap> predicted;
        switch (*method) {
        case Method::MaxSoftmax:
        case Method::Odin:
        case Method::Entropy: {
            if (t.rank() != 3)
                throw ContractError(args.method + " expects a [H,W,K] logit tensor, got rank " +
                                    std::to_string(t.rank()) + ": " + input);
            const auto logits = LogitMap::from_tensor(t);
            if (*method == Method::MaxSoftmax) scores = score_max_softmax(logits);
            else if (*method == Method::Odin) scores = score_odin(logits, args.temperature);
            else scores = score_entropy(logits);
            if (args.radius > 0) predicted = argmax_labels(logits);
            break;
        }
        case Method::VarSum:
        case Method::MutualInformation: {
            if (t.rank() != 4)
                throw ContractError(args.method +
                                    " expects a [T,H,W,K] prediction stack, got rank " +
                                    std::to_string(t.rank()) + ": " + input);
            const auto stack = PredictionStack::from_tensor(t);
            scores = *method == Method::VarSum ? score_varsum(stack)
                                               : score_mutual_information(stack);
            if (args.radius > 0) predicted = stack_prediction(stack);
            break;
        }
        case Method::Confidence: {
            if (t.rank() != 2)
                throw ContractError("confidence expects a [H,W] tensor, got rank " +
                                    std::to_string(t.rank()) + ": " + input);
            if (args.radius > 0)
                throw ContractError("boundary suppression needs logits; "
                                    "confidence inputs carry none");
            scores = score_confidence(ConfidenceMap::from_tensor(t));
            break;
        }
        case Method::Mahalanobis: {
            if (t.rank() != 3)
                throw ContractError("mahalanobis expects a [H,W,D] feature tensor, got rank " +
                                    std::to_string(t.rank()) + ": " + input);
            if (args.radius > 0)
                throw ContractError("boundary suppression needs logits; "
                                    "feature inputs carry none");
            const auto features = FeatureMap::from_tensor(t);
            const auto oh = args.out_height ? args.out_height : features.height;
            const auto ow = args.out_width ? args.out_width : features.width;
            scores = score(features, *stats, oh, ow);
            break;
        }
        }
        if (args.radius > 0 && predicted)
            scores = boundary_suppress(scores, *predicted, args.radius);

        const fs::path in_path(input);
        const fs::path out_path =
            fs::path(args.out) / (in_path.stem().string() + "." + args.method + ".tnsr");
        save_tensor(scores.to_tensor(), out_path);

        json sidecar;
        sidecar["method"] = args.method;
        if (*method == Method::Odin) sidecar["temperature"] = args.temperature;
        if (args.radius > 0) sidecar["radius"] = args.radius;
        if (*method == Method::Mahalanobis) sidecar["stats_dir"] = args.stats_dir;
        sidecar["inputs"] = json::array({{{"path", input}, {"fnv1a64", fnv1a64(input)}}});
        sidecar["output"] = out_path.string();
        sidecar["output_fnv1a64"] = fnv1a64(out_path);
        sidecar["created_utc"] = utc_now();
        write_json_atomic(sidecar, out_path.string() + ".json");
        std::cout << out_path.string() << '\n';
    }
    return 0;
}

// ------------------------------------------------------- fit-mahalanobis ----

struct FitArgs {
    std::string manifest;
    std::uint32_t classes = 0;
    std::string out;
};

int run_fit(const FitArgs& args) {
    const auto manifest = MixManifest::load(args.manifest);
    const fs::path base = fs::path(args.manifest).parent_path();
    std::vector<FeatureMap> features;
    std::vector<LabelMap> labels;
    for (const auto& e : manifest.entries) {
        if (e.features.empty() || e.labels.empty())
            throw ContractError("fit manifest entries need features and labels paths");
        features.push_back(FeatureMap::from_tensor(load_tensor(base / e.features)));
        labels.push_back(LabelMap::from_tensor(load_tensor(base / e.labels)));
    }
    auto stats = fit(features, labels, args.classes);
    save_stats(stats, args.out);
    for (std::uint32_t c = 0; c < stats.classes; ++c)
        std::cout << "class " << c << ": " << stats.counts[c] << " pixels\n";
    const auto dropped = stats.dropped_classes();
    if (!dropped.empty()) {
        std::cout << "dropped (no training pixels):";
        for (auto c : dropped) std::cout << ' ' << c;
        std::cout << '\n';
    }
    std::cout << "norm_mu " << stats.norm_mu << " norm_s " << stats.norm_s << '\n';
    return 0;
}

// ------------------------------------------------------------- evaluate ----

struct EvaluateArgs {
    std::string manifest;
    std::string out;
    std::string split = "all";
    std::string method = "unspecified";
    std::string dataset = "unspecified";
    std::uint32_t classes = 0;
    bool per_image = false;
};

std::vector<std::size_t> select_entries(const MixManifest& m, const std::string& split) {
    std::vector<std::size_t> all(m.entries.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    if (split == "all") return all;
    auto s = split_dataset(m.entries.size(), m.tune_fraction, m.seed);
    if (split == "tune") return s.tune;
    if (split == "eval") return s.eval;
    throw ContractError("unknown split: " + split + " (expected all, tune, or eval)");
}

json report_json(const MetricsReport& r, const std::string& method, const std::string& dataset) {
    json j;
    j["method"] = method;
    j["dataset"] = dataset;
    j["positives"] = r.positives;
    j["negatives"] = r.negatives;
    j["metrics"] = {{"auroc", optional_metric(r.auroc)},
                    {"auprc", optional_metric(r.auprc)},
                    {"fpr_at_tpr", optional_metric(r.fpr_at_tpr)},
                    {"max_iou", optional_metric(r.max_iou)}};
    j["thresholds"] = {{"max_iou", optional_metric(r.max_iou_threshold)},
                       {"youden", optional_metric(r.youden_threshold)},
                       {"gap", optional_metric(r.threshold_gap)}};
    j["warnings"] = r.warnings;
    return j;
}

int run_evaluate(const EvaluateArgs& args) {
    const auto manifest = MixManifest::load(args.manifest);
    const fs::path base = fs::path(args.manifest).parent_path();
    const auto selected = select_entries(manifest, args.split);
    fs::create_directories(args.out);

    ThresholdSweep total;
    std::vector<std::string> warnings;
    std::vector<ScoreMap> all_scores;
    std::vector<LabelMap> all_labels;
    for (std::size_t idx : selected) {
        const auto& e = manifest.entries[idx];
        if (e.scores.empty() || e.labels.empty())
            throw ContractError("evaluate manifest entries need scores and labels paths");
        const fs::path score_path = base / e.scores;
        // stale-pairing check against the scoring sidecar, when one exists
        const fs::path sidecar = score_path.string() + ".json";
        if (fs::exists(sidecar)) {
            std::ifstream in(sidecar);
            json sj;
            in >> sj;
            if (sj.contains("output_fnv1a64") &&
                sj["output_fnv1a64"].get<std::string>() != fnv1a64(score_path))
                warnings.push_back("score file changed since scoring: " + score_path.string());
        }
        auto scores = ScoreMap::from_tensor(load_tensor(score_path));
        auto labels = LabelMap::from_tensor(load_tensor(base / e.labels));
        ThresholdSweep per_image;
        accumulate(per_image, scores, labels);
        if (args.per_image) {
            auto r = compute_report(per_image);
            write_json_atomic(report_json(r, args.method, args.dataset),
                              fs::path(args.out) / (fs::path(e.scores).stem().string() +
                                                    ".report.json"));
        }
        total = merge(total, per_image);
        if (args.classes > 0) {
            all_scores.push_back(std::move(scores));
            all_labels.push_back(std::move(labels));
        }
    }

    auto report = compute_report(total);
    report.warnings.insert(report.warnings.end(), warnings.begin(), warnings.end());
    auto j = report_json(report, args.method, args.dataset);
    if (args.classes > 0) {
        json table = json::object();
        for (auto& [label, mean] : per_class_average(all_scores, all_labels, args.classes))
            table[std::to_string(label)] = mean;
        j["per_class_average"] = table;
    }
    write_json_atomic(j, fs::path(args.out) / "report.json");

    std::ostringstream csv;
    write_sweep_csv(total, csv);
    write_text_atomic(csv.str(), fs::path(args.out) / "sweep.csv");

    for (const auto& w : j["warnings"]) std::cerr << "warning: " << w.get<std::string>() << '\n';
    std::cout << (fs::path(args.out) / "report.json").string() << '\n';
    return 0;
}

// ------------------------------------------------------------- tune-odin ----

struct TuneArgs {
    std::string manifest;
    std::string split = "tune";
    std::string out;
};

int run_tune(const TuneArgs& args) {
    const auto manifest = MixManifest::load(args.manifest);
    const fs::path base = fs::path(args.manifest).parent_path();
    const auto selected = select_entries(manifest, args.split);
    if (selected.empty()) throw ContractError("selected split is empty");
    std::vector<LogitMap> logits;
    std::vector<LabelMap> labels;
    for (std::size_t idx : selected) {
        const auto& e = manifest.entries[idx];
        if (e.logits.empty() || e.labels.empty())
            throw ContractError("tune manifest entries need logits and labels paths");
        logits.push_back(LogitMap::from_tensor(load_tensor(base / e.logits)));
        labels.push_back(LabelMap::from_tensor(load_tensor(base / e.labels)));
    }
    const auto tuned = tune_odin(logits, labels);
    json j;
    j["best_temperature"] = tuned.best_temperature;
    json by_t = json::object();
    for (std::size_t i = 0; i < kOdinTemperatureGrid.size(); ++i) {
        std::ostringstream key;
        key << kOdinTemperatureGrid[i];
        by_t[key.str()] = tuned.auroc_by_temperature[i];
    }
    j["auroc_by_temperature"] = by_t;
    if (!args.out.empty()) write_json_atomic(j, args.out);
    std::cout << j.dump(2) << '\n';
    return 0;
}

// ------------------------------------------------------------------ gen ----

struct GenArgs {
    std::string kind;
    std::uint32_t height = 1024;
    std::uint32_t width = 2048;
    std::uint32_t channels = 3;
    std::uint32_t cell = 64;
    std::uint64_t seed = 0;
    std::uint32_t count = 1;
    std::string out;
};

int run_gen(const GenArgs& args) {
    if (args.kind != "gaussian" && args.kind != "perlin")
        throw ContractError("unknown noise kind: " + args.kind);
    fs::create_directories(args.out);
    MixManifest manifest;
    manifest.seed = args.seed;
    for (std::uint32_t i = 0; i < args.count; ++i) {
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "%04u", i);
        const std::string image_name = args.kind + "_" + suffix + ".tnsr";
        const std::string label_name = std::string("labels_") + suffix + ".tnsr";
        const std::uint64_t seed = args.seed + i;
        NoiseImage noise = args.kind == "gaussian"
                               ? gen_gaussian_noise(args.height, args.width, args.channels, seed)
                               : gen_perlin_noise(args.height, args.width, args.cell,
                                                  args.channels, seed);
        save_tensor(noise.image, fs::path(args.out) / image_name);
        save_tensor(noise.labels.to_tensor(), fs::path(args.out) / label_name);
        MixEntry entry;
        entry.labels = label_name;
        entry.tag = "OOD-synthetic";
        manifest.entries.push_back(entry);
        std::cout << (fs::path(args.out) / image_name).string() << '\n';
    }
    manifest.save(fs::path(args.out) / "manifest.json");
    return 0;
}

// ---------------------------------------------------------- synth-model ----

struct SynthArgs {
    double delta = 1.0;
    std::uint64_t seed = 0;
    std::uint32_t height = 128;
    std::uint32_t width = 128;
    std::uint32_t classes = 8;
    std::uint32_t feature_depth = 4;
    std::string out;
};

int run_synth(const SynthArgs& args) {
    SynthConfig cfg;
    cfg.height = args.height;
    cfg.width = args.width;
    cfg.classes = args.classes;
    cfg.feature_depth = args.feature_depth;
    cfg.delta = args.delta;
    cfg.seed = args.seed;
    const auto sample = synthesize(cfg);
    fs::create_directories(args.out);
    save_tensor(sample.truth.to_tensor(), fs::path(args.out) / "labels.tnsr");
    {
        Tensor t = Tensor::f32({cfg.height, cfg.width, cfg.classes});
        std::copy(sample.logits.logits.begin(), sample.logits.logits.end(), t.f32().begin());
        save_tensor(t, fs::path(args.out) / "logits.tnsr");
    }
    {
        Tensor t = Tensor::f32({cfg.height, cfg.width, cfg.feature_depth});
        std::copy(sample.features.values.begin(), sample.features.values.end(), t.f32().begin());
        save_tensor(t, fs::path(args.out) / "features.tnsr");
    }
    json sidecar;
    sidecar["delta"] = cfg.delta;
    sidecar["seed"] = cfg.seed;
    sidecar["height"] = cfg.height;
    sidecar["width"] = cfg.width;
    sidecar["classes"] = cfg.classes;
    sidecar["feature_depth"] = cfg.feature_depth;
    sidecar["created_utc"] = utc_now();
    write_json_atomic(sidecar, fs::path(args.out) / "synth.json");
    std::cout << args.out << '\n';
    return 0;
}

// --------------------------------------------------------------- report ----

struct ReportArgs {
    std::string in;
    std::string out;
};

int run_report(const ReportArgs& args) {
    std::vector<json> reports;
    if (fs::exists(args.in)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(args.in))
            if (entry.is_regular_file() && entry.path().extension() == ".json")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& path : files) {
            std::ifstream in(path);
            json j;
            try {
                in >> j;
            } catch (const json::exception&) {
                std::cerr << "warning: skipping malformed report " << path << '\n';
                continue;
            }
            if (!j.contains("metrics")) continue;
            reports.push_back(std::move(j));
        }
    } else {
        std::cerr << "warning: report directory does not exist: " << args.in << '\n';
    }
    if (reports.empty()) std::cerr << "warning: no evaluation reports found\n";

    auto cell = [](const json& v) -> std::string {
        if (v.is_null()) return "";
        std::ostringstream s;
        s << std::setprecision(10) << v.get<double>();
        return s.str();
    };
    std::ostringstream csv;
    csv << "method,dataset,auroc,auprc,fpr_at_tpr,max_iou\n";
    std::ostringstream per_class;
    per_class << "method,dataset,class,mean_score\n";
    bool have_per_class = false;
    for (const auto& r : reports) {
        const auto& m = r.at("metrics");
        csv << r.value("method", "?") << ',' << r.value("dataset", "?") << ','
            << cell(m.at("auroc")) << ',' << cell(m.at("auprc")) << ','
            << cell(m.at("fpr_at_tpr")) << ',' << cell(m.at("max_iou")) << '\n';
        if (r.contains("per_class_average")) {
            have_per_class = true;
            for (auto& [cls, mean] : r.at("per_class_average").items())
                per_class << r.value("method", "?") << ',' << r.value("dataset", "?") << ','
                          << cls << ',' << mean.get<double>() << '\n';
        }
    }
    if (args.out.empty()) {
        std::cout << csv.str();
        if (have_per_class) std::cout << per_class.str();
    } else {
        write_text_atomic(csv.str(), args.out);
        if (have_per_class)
            write_text_atomic(per_class.str(), fs::path(args.out).string() + ".per_class.csv");
        std::cout << args.out << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------- remap ----

struct RemapArgs {
    std::vector<std::string> inputs;
    std::string mapping;
    std::string out;
};

int run_remap(const RemapArgs& args) {
    const auto mapping = LabelMapping::load(args.mapping);
    fs::create_directories(args.out);
    for (const auto& input : args.inputs) {
        auto labels = LabelMap::from_tensor(load_tensor(input));
        auto remapped = remap_labels(labels, mapping);
        const fs::path out_path = fs::path(args.out) / fs::path(input).filename();
        save_tensor(remapped.to_tensor(), out_path);
        std::cout << out_path.string() << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"per-pixel out-of-distribution scoring and threshold-sweep evaluation"};
    app.require_subcommand(1);

    ScoreArgs score_args;
    auto* score_cmd = app.add_subcommand("score", "score exported tensors with one method");
    score_cmd->add_option("inputs", score_args.inputs, "input TNSR files")->required();
    score_cmd->add_option("--method", score_args.method,
                          "max_softmax | odin | entropy | varsum | mutual_information | "
                          "confidence | mahalanobis")
        ->required();
    score_cmd->add_option("--temperature", score_args.temperature, "ODIN temperature");
    score_cmd->add_option("--radius", score_args.radius, "boundary suppression radius (pixels)");
    score_cmd->add_option("--stats-dir", score_args.stats_dir, "fitted Mahalanobis statistics");
    score_cmd->add_option("--out", score_args.out, "output directory")->required();
    score_cmd->add_option("--out-height", score_args.out_height, "resize Mahalanobis scores");
    score_cmd->add_option("--out-width", score_args.out_width, "resize Mahalanobis scores");

    FitArgs fit_args;
    auto* fit_cmd = app.add_subcommand("fit-mahalanobis", "fit class statistics over features");
    fit_cmd->add_option("--manifest", fit_args.manifest, "entries with features+labels paths")
        ->required();
    fit_cmd->add_option("--classes", fit_args.classes, "number of in-distribution classes")
        ->required();
    fit_cmd->add_option("--out", fit_args.out, "statistics output directory")->required();

    EvaluateArgs eval_args;
    auto* eval_cmd = app.add_subcommand("evaluate", "accumulate sweeps and extract metrics");
    eval_cmd->add_option("--manifest", eval_args.manifest, "entries with scores+labels paths")
        ->required();
    eval_cmd->add_option("--out", eval_args.out, "report output directory")->required();
    eval_cmd->add_option("--split", eval_args.split, "all | tune | eval");
    eval_cmd->add_option("--method", eval_args.method, "method label for the report");
    eval_cmd->add_option("--dataset", eval_args.dataset, "dataset label for the report");
    eval_cmd->add_option("--classes", eval_args.classes,
                         "when set, adds the per-class average score table");
    eval_cmd->add_flag("--per-image", eval_args.per_image, "also write per-image reports");

    TuneArgs tune_args;
    auto* tune_cmd = app.add_subcommand("tune-odin", "pick the AUROC-best ODIN temperature");
    tune_cmd->add_option("--manifest", tune_args.manifest, "entries with logits+labels paths")
        ->required();
    tune_cmd->add_option("--split", tune_args.split, "all | tune | eval");
    tune_cmd->add_option("--out", tune_args.out, "optional JSON output path");

    GenArgs gen_args;
    auto* gen_cmd = app.add_subcommand("gen", "generate synthetic noise datasets");
    gen_cmd->add_option("--kind", gen_args.kind, "gaussian | perlin")->required();
    gen_cmd->add_option("--height", gen_args.height, "image height");
    gen_cmd->add_option("--width", gen_args.width, "image width");
    gen_cmd->add_option("--channels", gen_args.channels, "image channels");
    gen_cmd->add_option("--cell", gen_args.cell, "perlin lattice spacing in pixels");
    gen_cmd->add_option("--seed", gen_args.seed, "base seed");
    gen_cmd->add_option("--count", gen_args.count, "number of images");
    gen_cmd->add_option("--out", gen_args.out, "output directory")->required();

    SynthArgs synth_args;
    auto* synth_cmd =
        app.add_subcommand("synth-model", "emit a synthetic logits/features/labels triple");
    synth_cmd->add_option("--delta", synth_args.delta, "separability (0 = chance)");
    synth_cmd->add_option("--seed", synth_args.seed, "seed");
    synth_cmd->add_option("--height", synth_args.height, "image height");
    synth_cmd->add_option("--width", synth_args.width, "image width");
    synth_cmd->add_option("--classes", synth_args.classes, "class count");
    synth_cmd->add_option("--feature-depth", synth_args.feature_depth, "feature depth");
    synth_cmd->add_option("--out", synth_args.out, "output directory")->required();

    ReportArgs report_args;
    auto* report_cmd = app.add_subcommand("report", "merge evaluation reports into CSV");
    report_cmd->add_option("--in", report_args.in, "directory of report JSON files")->required();
    report_cmd->add_option("--out", report_args.out, "CSV output path (stdout when omitted)");

    RemapArgs remap_args;
    auto* remap_cmd = app.add_subcommand("remap", "apply a label mapping to label tensors");
    remap_cmd->add_option("inputs", remap_args.inputs, "u16 label TNSR files")->required();
    remap_cmd->add_option("--mapping", remap_args.mapping, "mapping JSON file")->required();
    remap_cmd->add_option("--out", remap_args.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (score_cmd->parsed()) return run_score(score_args);
        if (fit_cmd->parsed()) return run_fit(fit_args);
        if (eval_cmd->parsed()) return run_evaluate(eval_args);
        if (tune_cmd->parsed()) return run_tune(tune_args);
        if (gen_cmd->parsed()) return run_gen(gen_args);
        if (synth_cmd->parsed()) return run_synth(synth_args);
        if (report_cmd->parsed()) return run_report(report_args);
        if (remap_cmd->parsed()) return run_remap(remap_args);
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
