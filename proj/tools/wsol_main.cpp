// wsol: train a small GAP classifier on the synthetic marker dataset and
// project it into localization maps (CAM, GradCAM, GradCAM++, PCS, BagCAMs),
// with the WSOL evaluation suite and timing harness.
//
// Subcommands: gen, train, localize, eval, compare, bench. Every command
// validates its configuration before doing work, echoes the effective
// configuration into its output directory, and is byte-reproducible for a
// fixed seed (timing files aside).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wsol/cam.hpp"
#include "wsol/image_io.hpp"
#include "wsol/metrics.hpp"
#include "wsol/model.hpp"
#include "wsol/rng.hpp"
#include "wsol/synth.hpp"
#include "wsol/tensor.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace wsol;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Flat-JSON config files for CLI11 (flags win over file values).

class JsonConfig : public CLI::Config {
  public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        ordered_json j;
        for (const CLI::Option* opt : app->get_options({})) {
            if (!opt->get_lnames().empty() && opt->get_configurable()) {
                const std::string name = opt->get_lnames()[0];
                if (name == "config") continue;
                if (opt->count() > 0) {
                    j[name] = opt->results().size() == 1 ? opt->results()[0] : "";
                } else if (default_also) {
                    j[name] = opt->get_default_str();
                }
            }
        }
        return j.dump(2) + "\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        ordered_json j;
        try {
            j = ordered_json::parse(input);
        } catch (const std::exception& e) {
            throw CLI::FileError(std::string("config is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::FileError("config root must be a JSON object");
        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, value] : j.items()) {
            CLI::ConfigItem item;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) {
                    item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
                }
            } else if (value.is_string()) {
                item.inputs.push_back(value.get<std::string>());
            } else {
                item.inputs.push_back(value.dump());
            }
            items.push_back(item);
        }
        return items;
    }
};

void attach_config(CLI::App* cmd) {
    cmd->set_config("--config", "", "JSON config file; explicit flags win");
    cmd->config_formatter(std::make_shared<JsonConfig>());
}

std::string resolve_out_dir(std::string out, const std::string& command) {
    if (out.empty()) {
        const char* root = std::getenv("WSOL_OUT_ROOT");
        if (!root || !*root) {
            throw UsageError("--out is required (or set WSOL_OUT_ROOT)");
        }
        out = std::string(root) + "/" + command;
    }
    fs::create_directories(out);
    return out;
}

void echo_config(const std::string& out_dir, const ordered_json& cfg) {
    write_file(out_dir + "/effective_config.json", cfg.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Method table

enum class Method { cam, gradcam, gradcampp, pcs, bagcams_closed, bagcams_exact };

const std::vector<std::pair<std::string, Method>>& method_table() {
    static const std::vector<std::pair<std::string, Method>> table{
        {"cam", Method::cam},
        {"gradcam", Method::gradcam},
        {"gradcampp", Method::gradcampp},
        {"pcs", Method::pcs},
        {"bagcams-closed", Method::bagcams_closed},
        {"bagcams-exact", Method::bagcams_exact},
    };
    return table;
}

Method parse_method(const std::string& name) {
    for (const auto& [n, m] : method_table()) {
        if (n == name) return m;
    }
    std::string valid;
    for (const auto& [n, m] : method_table()) valid += " " + n;
    throw UsageError("unknown method \"" + name + "\"; valid methods:" + valid);
}

ScoreTransform default_transform(Method m) {
    switch (m) {
        case Method::bagcams_closed:
        case Method::bagcams_exact:
            return ScoreTransform::log_softmax;
        default:
            return ScoreTransform::identity;
    }
}

ScoreTransform parse_transform(const std::string& name, Method m) {
    if (name == "default") return default_transform(m);
    if (name == "identity") return ScoreTransform::identity;
    if (name == "log-softmax") return ScoreTransform::log_softmax;
    if (name == "log-raw") return ScoreTransform::log_raw;
    throw UsageError("unknown transform \"" + name +
                     "\" (default, identity, log-softmax, log-raw)");
}

SchemeKind parse_scheme(const std::string& name) {
    if (name == "avg") return SchemeKind::uniform_average;
    if (name == "alpha") return SchemeKind::spatial_alpha;
    if (name == "group") return SchemeKind::grouping;
    throw UsageError("unknown scheme \"" + name + "\" (avg, alpha, group)");
}

// ---------------------------------------------------------------------------
// Shared localization pipeline

struct LocalizeSpec {
    std::string method = "cam";
    std::string layer = "final";
    std::string transform = "default";
    std::string scheme = "group";
    std::string class_mode = "argmax";  // argmax | gt
    std::string norm = "minmax";        // minmax | relu-minmax
    int limit = -1;
    int jobs = 1;

    Method method_kind() const { return parse_method(method); }
};

void validate_localize_spec(const Network& net, const LocalizeSpec& spec, bool scheme_explicit,
                            bool transform_explicit) {
    const Method m = spec.method_kind();
    net.spec.resolve_capture(spec.layer);  // raises with the valid names
    if (spec.class_mode != "argmax" && spec.class_mode != "gt") {
        throw UsageError("unknown class mode \"" + spec.class_mode + "\" (argmax, gt)");
    }
    if (spec.norm != "minmax" && spec.norm != "relu-minmax") {
        throw UsageError("unknown normalization \"" + spec.norm + "\" (minmax, relu-minmax)");
    }
    parse_transform(spec.transform, m);
    parse_scheme(spec.scheme);
    if (m == Method::cam) {
        const int layer_idx = net.spec.capture_layer(spec.layer);
        int channels = net.spec.in_channels;
        for (int i = 0; i <= layer_idx; ++i) {
            if (net.spec.layers[static_cast<size_t>(i)].kind == LayerSpec::Kind::conv) {
                channels = net.spec.layers[static_cast<size_t>(i)].conv.out_ch;
            }
        }
        if (channels != net.spec.head_in_channels()) {
            throw UsageError("cam applies to the final capture only; layer \"" + spec.layer +
                             "\" has " + std::to_string(channels) + " channels, the head expects " +
                             std::to_string(net.spec.head_in_channels()));
        }
        if (transform_explicit && spec.transform != "default") {
            throw UsageError("cam takes no score transform");
        }
    }
    if (scheme_explicit && m != Method::bagcams_exact) {
        throw UsageError("--scheme applies to bagcams-exact only");
    }
}

struct MapResult {
    LocalizationMap map;  // normalized, upsampled to image size
    int class_used = 0;
    int predicted = 0;
    std::string transform;
};

MapResult compute_map(const Network& net, const Tensor& image, const LocalizeSpec& spec,
                      int gt_label) {
    const Method m = spec.method_kind();
    const ScoreTransform transform = parse_transform(spec.transform, m);
    const NormalizeMode norm =
        spec.norm == "minmax" ? NormalizeMode::minmax : NormalizeMode::relu_minmax;

    ForwardPass fp = forward_capture(net, image, spec.layer);
    MapResult out;
    out.predicted = fp.argmax_class();
    out.class_used = spec.class_mode == "gt" ? gt_label : out.predicted;
    out.transform = m == Method::cam ? "none" : transform_name(transform);

    LocalizationMap raw;
    switch (m) {
        case Method::cam: {
            LocalizationMap all = cam_project(net.head_w, fp.feature.detached());
            raw.rows = 1;
            raw.height = all.height;
            raw.width = all.width;
            raw.class_ids = {out.class_used};
            raw.values.assign(all.row(out.class_used),
                              all.row(out.class_used) + all.height * all.width);
            break;
        }
        case Method::gradcam: {
            FeatureCapture cap = make_capture(fp, out.class_used, transform);
            raw = gradcam(cap);
            break;
        }
        case Method::gradcampp: {
            FeatureCapture cap = make_capture(fp, out.class_used, transform);
            raw = gradcam_pp(cap);
            break;
        }
        case Method::pcs: {
            FeatureCapture cap = make_capture(fp, out.class_used, transform);
            raw = pcs(cap);
            break;
        }
        case Method::bagcams_closed: {
            FeatureCapture cap = make_capture(fp, out.class_used, transform);
            raw = bagcams_closed(cap);
            break;
        }
        case Method::bagcams_exact: {
            raw = bagcams_scheme(net, image, spec.layer, out.class_used,
                                 parse_scheme(spec.scheme), transform);
            break;
        }
    }
    const int target_h = image.shape()[1], target_w = image.shape()[2];
    out.map = upsample(normalize_map(raw, norm), target_h, target_w);
    return out;
}

struct TimingStats {
    int images = 0;
    double mean = 0.0;
    double cov = 0.0;
};

TimingStats timing_stats(const std::vector<double>& seconds) {
    TimingStats st;
    st.images = static_cast<int>(seconds.size());
    if (seconds.empty()) return st;
    for (double s : seconds) st.mean += s;
    st.mean /= static_cast<double>(seconds.size());
    double var = 0.0;
    for (double s : seconds) var += (s - st.mean) * (s - st.mean);
    var /= static_cast<double>(seconds.size());
    st.cov = st.mean > 0 ? std::sqrt(var) / st.mean : 0.0;
    return st;
}

// Runs f(i) for i in [0, n) on `jobs` threads; the first exception wins.
void parallel_for(int n, int jobs, const std::function<void(int)>& f) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::string first_error;
    auto worker = [&]() {
        while (true) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                f(i);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (first_error.empty()) first_error = e.what();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (!first_error.empty()) throw std::runtime_error(first_error);
}

std::vector<const SampleRecord*> select_records(const Dataset& ds, const std::string& split,
                                                int limit) {
    std::vector<const SampleRecord*> recs;
    for (const auto& rec : ds.split(split)) recs.push_back(&rec);
    if (limit >= 0 && static_cast<size_t>(limit) < recs.size()) recs.resize(static_cast<size_t>(limit));
    if (recs.empty()) throw UsageError("split \"" + split + "\" is empty");
    return recs;
}

TimingStats run_localize(const Network& net, const Dataset& ds, const std::string& split,
                         const LocalizeSpec& spec, const std::string& out_dir) {
    const auto recs = select_records(ds, split, spec.limit);
    std::vector<double> seconds(recs.size(), 0.0);
    parallel_for(static_cast<int>(recs.size()), spec.jobs, [&](int i) {
        const SampleRecord& rec = *recs[static_cast<size_t>(i)];
        Tensor image = ds.load_image(rec);
        const auto t0 = std::chrono::steady_clock::now();
        MapResult result = compute_map(net, image, spec, rec.label);
        const auto t1 = std::chrono::steady_clock::now();
        seconds[static_cast<size_t>(i)] = std::chrono::duration<double>(t1 - t0).count();

        MapSidecar side;
        side.id = rec.id;
        side.method = spec.method;
        side.layer = net.spec.resolve_capture(spec.layer);
        side.classes = net.spec.classes;
        side.class_index = result.class_used;
        side.predicted_class = result.predicted;
        side.transform = result.transform;
        export_map(result.map, 0, side, out_dir + "/" + rec.id);
    });
    return timing_stats(seconds);
}

void write_timings(const std::string& out_dir, const std::string& method,
                   const std::string& layer, const TimingStats& st) {
    ordered_json j{{"method", method},
                   {"layer", layer},
                   {"images", st.images},
                   {"mean_seconds_per_image", st.mean},
                   {"cov", st.cov}};
    write_file(out_dir + "/timings.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Evaluation from exported maps

EvalReport evaluate_maps_dir(const std::string& maps_dir, const Dataset& ds,
                             const std::string& split) {
    std::set<std::string> ids;
    for (const auto& entry : fs::directory_iterator(maps_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 4 && name.substr(name.size() - 4) == ".f64") {
            ids.insert(name.substr(0, name.size() - 4));
        }
    }
    if (ids.empty()) throw std::runtime_error("no .f64 maps found in \"" + maps_dir + "\"");

    std::vector<ScoreMap> maps;
    std::vector<GroundTruth> gts;
    std::vector<int> predicted;
    std::string method, layer;
    std::set<std::string> seen;
    for (const auto& rec : ds.split(split)) {
        if (!ids.count(rec.id)) continue;
        seen.insert(rec.id);
        MapSidecar side = read_map_sidecar(maps_dir + "/" + rec.id + ".json");
        if (method.empty()) {
            method = side.method;
            layer = side.layer;
        } else if (method != side.method || layer != side.layer) {
            throw std::runtime_error("maps in \"" + maps_dir + "\" mix methods or layers");
        }
        ScoreMap map;
        map.h = side.height;
        map.w = side.width;
        map.values = read_f64(maps_dir + "/" + rec.id + ".f64",
                              static_cast<size_t>(side.height) * side.width);
        GroundTruth gt;
        gt.label = rec.label;
        gt.boxes = {rec.box};
        gt.mask = ds.load_mask(rec);
        maps.push_back(std::move(map));
        gts.push_back(std::move(gt));
        predicted.push_back(side.predicted_class);
    }
    for (const auto& id : ids) {
        if (!seen.count(id)) {
            throw std::runtime_error("map \"" + id + "\" does not belong to split \"" + split +
                                     "\"");
        }
    }

    EvalReport report;
    report.method = method;
    report.layer = layer;
    report.t_loc = top1_loc(maps, gts, predicted);
    report.g_loc = gt_known_loc(maps, gts);
    report.b_loc = max_box_acc_v2(maps, gts);
    report.piou = peak_iou(maps, gts);
    report.pxap = pixel_average_precision(maps, gts);
    return report;
}

// ---------------------------------------------------------------------------
// Commands

struct GenArgs {
    SynthConfig cfg;
    std::string out;
};

int cmd_gen(const GenArgs& args) {
    const std::string out = resolve_out_dir(args.out, "gen");
    Dataset ds = generate(args.cfg, out);
    echo_config(out, ordered_json{{"command", "gen"},
                                  {"out", out},
                                  {"classes", args.cfg.classes},
                                  {"train", args.cfg.n_train},
                                  {"test", args.cfg.n_test},
                                  {"seed", args.cfg.seed},
                                  {"height", args.cfg.height},
                                  {"width", args.cfg.width}});
    std::printf("gen: wrote %zu train + %zu test samples to %s\n", ds.train.size(),
                ds.test.size(), out.c_str());
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string out;
    TrainConfig cfg;
};

int cmd_train(const TrainArgs& args) {
    Dataset ds = load_dataset(args.data + "/manifest.json");
    TrainDataset train_data;
    for (const auto& rec : ds.train) {
        train_data.images.push_back(ds.load_image(rec));
        train_data.labels.push_back(rec.label);
    }
    Network net = Network::init(NetworkSpec::default_spec(ds.config.classes), args.cfg.seed);
    TrainResult result = train(net, train_data, args.cfg);
    const double train_acc = accuracy(net, train_data);

    fs::create_directories(fs::path(args.out).parent_path().empty()
                               ? "."
                               : fs::path(args.out).parent_path().string());
    CheckpointMeta meta{args.cfg.epochs, args.cfg.seed, result.epoch_loss.back()};
    save_checkpoint(net, meta, args.out);

    ordered_json log{{"command", "train"},
                     {"data", args.data},
                     {"out", args.out},
                     {"epochs", args.cfg.epochs},
                     {"lr", args.cfg.lr},
                     {"momentum", args.cfg.momentum},
                     {"weight_decay", args.cfg.weight_decay},
                     {"batch", args.cfg.batch},
                     {"seed", args.cfg.seed},
                     {"train_accuracy", train_acc},
                     {"epoch_loss", result.epoch_loss}};
    write_file(args.out + ".train.json", log.dump(2) + "\n");
    std::printf("train: %d epochs, final loss %.6f, train accuracy %.3f -> %s\n",
                args.cfg.epochs, result.epoch_loss.back(), train_acc, args.out.c_str());
    return 0;
}

struct LocalizeArgs {
    std::string ckpt;
    std::string data;
    std::string split = "test";
    std::string out;
    LocalizeSpec spec;
    bool scheme_explicit = false;
    bool transform_explicit = false;
};

int cmd_localize(const LocalizeArgs& args) {
    Network net = load_checkpoint(args.ckpt);
    validate_localize_spec(net, args.spec, args.scheme_explicit, args.transform_explicit);
    Dataset ds = load_dataset(args.data + "/manifest.json");
    const std::string out = resolve_out_dir(args.out, "localize");

    TimingStats st = run_localize(net, ds, args.split, args.spec, out);
    write_timings(out, args.spec.method, net.spec.resolve_capture(args.spec.layer), st);
    echo_config(out, ordered_json{{"command", "localize"},
                                  {"ckpt", args.ckpt},
                                  {"data", args.data},
                                  {"split", args.split},
                                  {"method", args.spec.method},
                                  {"layer", args.spec.layer},
                                  {"transform", args.spec.transform},
                                  {"scheme", args.spec.scheme},
                                  {"class_mode", args.spec.class_mode},
                                  {"norm", args.spec.norm},
                                  {"limit", args.spec.limit},
                                  {"jobs", args.spec.jobs},
                                  {"out", out}});
    std::printf("localize: %s/%s over %d images -> %s (%.4f s/image)\n",
                args.spec.method.c_str(), args.spec.layer.c_str(), st.images, out.c_str(),
                st.mean);
    return 0;
}

struct EvalArgs {
    std::string maps;
    std::string data;
    std::string split = "test";
    std::string out;
};

int cmd_eval(const EvalArgs& args) {
    Dataset ds = load_dataset(args.data + "/manifest.json");
    EvalReport report = evaluate_maps_dir(args.maps, ds, args.split);
    const std::string out = resolve_out_dir(args.out, "eval");
    write_file(out + "/report.json", reports_to_json({report}, false));
    write_file(out + "/report.csv", reports_to_csv({report}, false));
    echo_config(out, ordered_json{{"command", "eval"},
                                  {"maps", args.maps},
                                  {"data", args.data},
                                  {"split", args.split},
                                  {"out", out}});
    std::printf("eval: %s/%s T-Loc %.2f G-Loc %.2f B-Loc %.2f pIoU %.2f PxAP %.2f -> %s\n",
                report.method.c_str(), report.layer.c_str(), report.t_loc * 100,
                report.g_loc * 100, report.b_loc * 100, report.piou * 100, report.pxap * 100,
                out.c_str());
    return 0;
}

struct CompareArgs {
    std::string ckpt;
    std::string data;
    std::string split = "test";
    std::string out;
    std::vector<std::string> methods;
    std::vector<std::string> layers;
    LocalizeSpec base_spec;  // transform/scheme/class-mode/norm/limit/jobs shared
    bool scheme_explicit = false;
    bool transform_explicit = false;
};

int cmd_compare(const CompareArgs& args) {
    Network net = load_checkpoint(args.ckpt);
    if (args.methods.empty() || args.layers.empty()) {
        throw UsageError("compare needs --methods and --layers");
    }
    std::vector<LocalizeSpec> specs;
    for (const auto& method : args.methods) {
        for (const auto& layer : args.layers) {
            LocalizeSpec spec = args.base_spec;
            spec.method = method;
            spec.layer = layer;
            validate_localize_spec(net, spec, args.scheme_explicit, args.transform_explicit);
            specs.push_back(spec);
        }
    }
    Dataset ds = load_dataset(args.data + "/manifest.json");
    const std::string out = resolve_out_dir(args.out, "compare");

    std::vector<EvalReport> reports;
    for (const auto& spec : specs) {
        const std::string maps_dir = out + "/maps/" + spec.method + "_" + spec.layer;
        fs::create_directories(maps_dir);
        TimingStats st = run_localize(net, ds, args.split, spec, maps_dir);
        EvalReport report = evaluate_maps_dir(maps_dir, ds, args.split);
        report.seconds_per_image = st.mean;
        reports.push_back(report);
        std::printf("compare: %s/%s PxAP %.2f pIoU %.2f (%.4f s/image)\n", report.method.c_str(),
                    report.layer.c_str(), report.pxap * 100, report.piou * 100, st.mean);
    }
    write_file(out + "/compare.json", reports_to_json(reports, true));
    write_file(out + "/compare.csv", reports_to_csv(reports, true));

    // PxAP matrix, methods x layers
    std::string matrix = "method";
    for (const auto& layer : args.layers) matrix += "," + net.spec.resolve_capture(layer);
    matrix += "\n";
    size_t at = 0;
    char buf[32];
    for (const auto& method : args.methods) {
        matrix += method;
        for (size_t l = 0; l < args.layers.size(); ++l) {
            std::snprintf(buf, sizeof(buf), ",%.2f", reports[at++].pxap * 100);
            matrix += buf;
        }
        matrix += "\n";
    }
    write_file(out + "/compare_pxap.csv", matrix);

    ordered_json cfg{{"command", "compare"}, {"ckpt", args.ckpt},
                     {"data", args.data},    {"split", args.split},
                     {"methods", args.methods}, {"layers", args.layers},
                     {"transform", args.base_spec.transform},
                     {"scheme", args.base_spec.scheme},
                     {"class_mode", args.base_spec.class_mode},
                     {"norm", args.base_spec.norm},
                     {"limit", args.base_spec.limit},
                     {"jobs", args.base_spec.jobs},
                     {"out", out}};
    echo_config(out, cfg);
    return 0;
}

struct BenchArgs {
    std::string ckpt;
    std::string data;
    std::string split = "test";
    std::string out;
    std::vector<std::string> methods;
    std::string layer = "final";
    int images = 100;
    int repeats = 1;
    uint64_t seed = 1;
    LocalizeSpec base_spec;
};

int cmd_bench(const BenchArgs& args) {
    Network net = load_checkpoint(args.ckpt);
    if (args.methods.empty()) throw UsageError("bench needs --methods");
    std::vector<LocalizeSpec> specs;
    for (const auto& method : args.methods) {
        LocalizeSpec spec = args.base_spec;
        spec.method = method;
        spec.layer = args.layer;
        validate_localize_spec(net, spec, false, false);
        specs.push_back(spec);
    }
    Dataset ds = load_dataset(args.data + "/manifest.json");
    const auto recs = select_records(ds, args.split, args.images);

    // Preload images so timing sees map computation only; methods run on
    // identical images in randomized interleaved order.
    std::vector<Tensor> images;
    images.reserve(recs.size());
    for (const auto* rec : recs) images.push_back(ds.load_image(*rec));

    struct Unit {
        int method;
        int image;
    };
    std::vector<Unit> units;
    for (int r = 0; r < args.repeats; ++r) {
        for (int m = 0; m < static_cast<int>(specs.size()); ++m) {
            for (int i = 0; i < static_cast<int>(images.size()); ++i) units.push_back({m, i});
        }
    }
    SplitMix64 rng(SplitMix64::mix(args.seed, 0xbe9c4));
    deterministic_shuffle(units, rng);

    std::vector<std::vector<double>> seconds(specs.size());
    for (const Unit& u : units) {
        const auto t0 = std::chrono::steady_clock::now();
        MapResult result = compute_map(net, images[static_cast<size_t>(u.image)],
                                       specs[static_cast<size_t>(u.method)],
                                       recs[static_cast<size_t>(u.image)]->label);
        const auto t1 = std::chrono::steady_clock::now();
        (void)result;
        seconds[static_cast<size_t>(u.method)].push_back(
            std::chrono::duration<double>(t1 - t0).count());
    }

    const std::string out = resolve_out_dir(args.out, "bench");
    ordered_json rows = ordered_json::array();
    std::string csv = "method,layer,images,repeats,mean_seconds_per_image,cov\n";
    for (size_t m = 0; m < specs.size(); ++m) {
        TimingStats st = timing_stats(seconds[m]);
        rows.push_back(ordered_json{{"method", specs[m].method},
                                    {"layer", net.spec.resolve_capture(args.layer)},
                                    {"images", static_cast<int>(images.size())},
                                    {"repeats", args.repeats},
                                    {"mean_seconds_per_image", st.mean},
                                    {"cov", st.cov}});
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%d,%.6f,%.4f\n", specs[m].method.c_str(),
                      net.spec.resolve_capture(args.layer).c_str(),
                      static_cast<int>(images.size()), args.repeats, st.mean, st.cov);
        csv += buf;
        std::printf("bench: %s %.6f s/image (cov %.3f, n=%zu)\n", specs[m].method.c_str(), st.mean,
                    st.cov, seconds[m].size());
    }
    write_file(out + "/bench.json", ordered_json{{"bench", rows}}.dump(2) + "\n");
    write_file(out + "/bench.csv", csv);
    echo_config(out, ordered_json{{"command", "bench"},
                                  {"ckpt", args.ckpt},
                                  {"data", args.data},
                                  {"split", args.split},
                                  {"methods", args.methods},
                                  {"layer", args.layer},
                                  {"images", args.images},
                                  {"repeats", args.repeats},
                                  {"seed", args.seed},
                                  {"out", out}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wsol: tiny-classifier localization maps and WSOL evaluation"};
    app.require_subcommand(1);

    GenArgs gen_args;
    CLI::App* gen = app.add_subcommand("gen", "generate the synthetic marker dataset");
    attach_config(gen);
    gen->add_option("--out", gen_args.out, "output dataset directory");
    gen->add_option("--classes", gen_args.cfg.classes, "number of classes (2..8)");
    gen->add_option("--train", gen_args.cfg.n_train, "training split size");
    gen->add_option("--test", gen_args.cfg.n_test, "test split size");
    gen->add_option("--seed", gen_args.cfg.seed, "generator seed");

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "train the classifier");
    attach_config(train_cmd);
    train_cmd->add_option("--data", train_args.data, "dataset directory")->required();
    train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
    train_cmd->add_option("--epochs", train_args.cfg.epochs, "training epochs");
    train_cmd->add_option("--lr", train_args.cfg.lr, "learning rate");
    train_cmd->add_option("--momentum", train_args.cfg.momentum, "SGD momentum");
    train_cmd->add_option("--weight-decay", train_args.cfg.weight_decay, "weight decay");
    train_cmd->add_option("--batch", train_args.cfg.batch, "batch size");
    train_cmd->add_option("--seed", train_args.cfg.seed, "training seed");

    LocalizeArgs loc_args;
    CLI::App* loc = app.add_subcommand("localize", "write localization heatmaps");
    attach_config(loc);
    loc->add_option("--ckpt", loc_args.ckpt, "checkpoint path")->required();
    loc->add_option("--data", loc_args.data, "dataset directory")->required();
    loc->add_option("--split", loc_args.split, "dataset split (train, test)");
    loc->add_option("--out", loc_args.out, "output directory");
    loc->add_option("--method", loc_args.spec.method,
                    "cam, gradcam, gradcampp, pcs, bagcams-closed, bagcams-exact");
    loc->add_option("--layer", loc_args.spec.layer, "capture layer name or \"final\"");
    CLI::Option* loc_transform =
        loc->add_option("--transform", loc_args.spec.transform,
                        "score transform: default, identity, log-softmax, log-raw");
    CLI::Option* loc_scheme = loc->add_option(
        "--scheme", loc_args.spec.scheme, "bagcams-exact weighting: avg, alpha, group");
    loc->add_option("--class-mode", loc_args.spec.class_mode, "argmax or gt");
    loc->add_option("--norm", loc_args.spec.norm, "minmax or relu-minmax");
    loc->add_option("--limit", loc_args.spec.limit, "only the first N images");
    loc->add_option("--jobs", loc_args.spec.jobs, "worker threads");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate exported heatmaps");
    attach_config(eval_cmd);
    eval_cmd->add_option("--maps", eval_args.maps, "directory of exported maps")->required();
    eval_cmd->add_option("--data", eval_args.data, "dataset directory")->required();
    eval_cmd->add_option("--split", eval_args.split, "dataset split");
    eval_cmd->add_option("--out", eval_args.out, "output directory");

    CompareArgs cmp_args;
    CLI::App* cmp = app.add_subcommand("compare", "methods x layers metric table");
    attach_config(cmp);
    cmp->add_option("--ckpt", cmp_args.ckpt, "checkpoint path")->required();
    cmp->add_option("--data", cmp_args.data, "dataset directory")->required();
    cmp->add_option("--split", cmp_args.split, "dataset split");
    cmp->add_option("--out", cmp_args.out, "output directory");
    cmp->add_option("--methods", cmp_args.methods, "comma-separated methods")
        ->delimiter(',')
        ->required();
    cmp->add_option("--layers", cmp_args.layers, "comma-separated layers")
        ->delimiter(',')
        ->required();
    CLI::Option* cmp_transform =
        cmp->add_option("--transform", cmp_args.base_spec.transform, "score transform");
    CLI::Option* cmp_scheme =
        cmp->add_option("--scheme", cmp_args.base_spec.scheme, "bagcams-exact weighting");
    cmp->add_option("--class-mode", cmp_args.base_spec.class_mode, "argmax or gt");
    cmp->add_option("--limit", cmp_args.base_spec.limit, "only the first N images");
    cmp->add_option("--jobs", cmp_args.base_spec.jobs, "worker threads");

    BenchArgs bench_args;
    CLI::App* bench = app.add_subcommand("bench", "per-method seconds/image");
    attach_config(bench);
    bench->add_option("--ckpt", bench_args.ckpt, "checkpoint path")->required();
    bench->add_option("--data", bench_args.data, "dataset directory")->required();
    bench->add_option("--split", bench_args.split, "dataset split");
    bench->add_option("--out", bench_args.out, "output directory");
    bench->add_option("--methods", bench_args.methods, "comma-separated methods")
        ->delimiter(',')
        ->required();
    bench->add_option("--layer", bench_args.layer, "capture layer");
    bench->add_option("--images", bench_args.images, "images per method");
    bench->add_option("--repeats", bench_args.repeats, "passes over the image set");
    bench->add_option("--seed", bench_args.seed, "interleaving seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_args);
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (loc->parsed()) {
            loc_args.scheme_explicit = loc_scheme->count() > 0;
            loc_args.transform_explicit = loc_transform->count() > 0;
            return cmd_localize(loc_args);
        }
        if (eval_cmd->parsed()) return cmd_eval(eval_args);
        if (cmp->parsed()) {
            cmp_args.scheme_explicit = cmp_scheme->count() > 0;
            cmp_args.transform_explicit = cmp_transform->count() > 0;
            return cmd_compare(cmp_args);
        }
        if (bench->parsed()) return cmd_bench(bench_args);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: runtime: %s\n", e.what());
        return 1;
    }
    return 2;
}
