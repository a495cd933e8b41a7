#include "wsol/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "wsol/rng.hpp"

namespace wsol {

using ordered_json = nlohmann::ordered_json;

LayerSpec LayerSpec::make_conv(int in_ch, int out_ch, int kernel, int stride, int pad) {
    LayerSpec l;
    l.kind = Kind::conv;
    l.conv = {in_ch, out_ch, kernel, stride, pad};
    return l;
}

LayerSpec LayerSpec::make_relu(const std::string& capture) {
    LayerSpec l;
    l.kind = Kind::relu;
    l.capture = capture;
    return l;
}

LayerSpec LayerSpec::make_maxpool(int window) {
    LayerSpec l;
    l.kind = Kind::maxpool;
    l.pool_window = window;
    return l;
}

NetworkSpec NetworkSpec::default_spec(int classes) {
    NetworkSpec s;
    s.classes = classes;
    s.layers = {
        LayerSpec::make_conv(3, 8, 3, 1, 1),   LayerSpec::make_relu("block1"),
        LayerSpec::make_conv(8, 16, 3, 2, 1),  LayerSpec::make_relu("block2"),
        LayerSpec::make_conv(16, 32, 3, 2, 1), LayerSpec::make_relu("block3"),
    };
    return s;
}

void NetworkSpec::validate() const {
    if (layers.empty()) throw std::invalid_argument("network spec: no layers");
    if (classes < 2) throw std::invalid_argument("network spec: needs at least 2 classes");
    int ch = in_channels;
    int captures = 0;
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.kind == LayerSpec::Kind::conv) {
            if (l.conv.in_ch != ch) {
                throw std::invalid_argument("network spec: layer " + std::to_string(i) +
                                            " expects " + std::to_string(l.conv.in_ch) +
                                            " channels, gets " + std::to_string(ch));
            }
            ch = l.conv.out_ch;
        }
        if (!l.capture.empty()) ++captures;
    }
    if (captures == 0) throw std::invalid_argument("network spec: no capture points");
    const auto names = capture_names();
    for (size_t i = 0; i < names.size(); ++i) {
        for (size_t j = i + 1; j < names.size(); ++j) {
            if (names[i] == names[j]) {
                throw std::invalid_argument("network spec: duplicate capture name " + names[i]);
            }
        }
        if (names[i] == "final") {
            throw std::invalid_argument("network spec: \"final\" is reserved as an alias");
        }
    }
    if (head_in_channels() != ch) {
        throw std::invalid_argument("network spec: head expects " +
                                    std::to_string(head_in_channels()) +
                                    " channels but the extractor ends with " + std::to_string(ch));
    }
}

std::vector<std::string> NetworkSpec::capture_names() const {
    std::vector<std::string> names;
    for (const auto& l : layers) {
        if (!l.capture.empty()) names.push_back(l.capture);
    }
    return names;
}

std::string NetworkSpec::resolve_capture(const std::string& name) const {
    const auto names = capture_names();
    if (name == "final") return names.back();
    for (const auto& n : names) {
        if (n == name) return n;
    }
    std::ostringstream os;
    os << "unknown capture layer \"" << name << "\"; valid names:";
    for (const auto& n : names) os << ' ' << n;
    os << " final";
    throw std::invalid_argument(os.str());
}

int NetworkSpec::capture_layer(const std::string& name) const {
    const std::string resolved = resolve_capture(name);
    for (size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].capture == resolved) return static_cast<int>(i);
    }
    throw std::invalid_argument("unknown capture layer \"" + name + "\"");
}

int NetworkSpec::head_in_channels() const {
    int ch = in_channels;
    for (const auto& l : layers) {
        if (l.kind == LayerSpec::Kind::conv) ch = l.conv.out_ch;
    }
    return ch;
}

Network Network::init(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    Network net;
    net.spec = spec;
    net.conv_w.resize(spec.layers.size());
    net.conv_b.resize(spec.layers.size());
    SplitMix64 rng(SplitMix64::mix(seed, 0x494e4954));
    auto fill = [&rng](Tensor& t, int fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        for (double& v : t.data()) v = rng.uniform(-bound, bound);
    };
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (l.kind != LayerSpec::Kind::conv) continue;
        net.conv_w[i] = Tensor::zeros({l.conv.out_ch, l.conv.in_ch, l.conv.kernel, l.conv.kernel});
        net.conv_b[i] = Tensor::zeros({l.conv.out_ch});
        fill(net.conv_w[i], l.conv.in_ch * l.conv.kernel * l.conv.kernel);
        fill(net.conv_b[i], l.conv.in_ch * l.conv.kernel * l.conv.kernel);
    }
    net.head_w = Tensor::zeros({spec.classes, spec.head_in_channels()});
    fill(net.head_w, spec.head_in_channels());
    return net;
}

int ForwardPass::argmax_class() const {
    int best = 0;
    for (int i = 1; i < scores.numel(); ++i) {
        if (scores.data()[static_cast<size_t>(i)] > scores.data()[static_cast<size_t>(best)]) {
            best = i;
        }
    }
    return best;
}

namespace {

struct RunState {
    Tensor current;
    Tensor capture;
    int capture_layer = -1;
};

// Runs layers [from+1, end) on `current`; from = -1 runs everything.
void run_layers(ComputationRecord& rec, const Network& net, RunState& st, int from) {
    for (size_t i = static_cast<size_t>(from + 1); i < net.spec.layers.size(); ++i) {
        const auto& l = net.spec.layers[i];
        switch (l.kind) {
            case LayerSpec::Kind::conv: {
                Tensor w = rec.leaf(net.conv_w[i]);
                Tensor b = rec.leaf(net.conv_b[i]);
                st.current = rec.conv2d(st.current, w, b, l.conv.stride, l.conv.pad);
                break;
            }
            case LayerSpec::Kind::relu:
                st.current = rec.relu(st.current);
                break;
            case LayerSpec::Kind::maxpool:
                st.current = rec.maxpool2d(st.current, l.pool_window);
                break;
        }
        if (static_cast<int>(i) == st.capture_layer) st.capture = st.current;
    }
}

ForwardPass finish_pass(const Network& net, std::unique_ptr<ComputationRecord> rec, RunState st,
                        const std::string& layer) {
    ForwardPass fp;
    fp.layer = layer;
    fp.feature = st.capture;
    if (fp.feature.shape().size() != 3) {
        throw std::logic_error("forward: capture is not a (C,H,W) activation");
    }
    fp.channels = fp.feature.shape()[0];
    fp.height = fp.feature.shape()[1];
    fp.width = fp.feature.shape()[2];
    fp.pooled = rec->global_average_pool(st.current);
    Tensor w = rec->leaf(net.head_w);
    fp.scores = rec->linear(w, fp.pooled);
    fp.record = std::move(rec);
    return fp;
}

}  // namespace

ForwardPass forward_capture(const Network& net, const Tensor& image, const std::string& layer) {
    const std::string resolved = net.spec.resolve_capture(layer);
    if (image.shape() != std::vector<int>{net.spec.in_channels, net.spec.in_h, net.spec.in_w}) {
        throw std::invalid_argument(
            "forward: image shape " + shape_str(image.shape()) + " does not match spec input " +
            shape_str({net.spec.in_channels, net.spec.in_h, net.spec.in_w}));
    }
    auto rec = std::make_unique<ComputationRecord>();
    RunState st;
    st.capture_layer = net.spec.capture_layer(resolved);
    st.current = rec->leaf(image);
    Tensor input = st.current;
    run_layers(*rec, net, st, -1);
    ForwardPass fp = finish_pass(net, std::move(rec), std::move(st), resolved);
    fp.input = input;
    return fp;
}

ForwardPass forward_tail(const Network& net, const std::string& layer, const Tensor& activation) {
    const std::string resolved = net.spec.resolve_capture(layer);
    if (activation.shape().size() != 3) {
        throw std::invalid_argument("forward_tail: activation must be (C,H,W), got " +
                                    shape_str(activation.shape()));
    }
    auto rec = std::make_unique<ComputationRecord>();
    RunState st;
    st.capture_layer = net.spec.capture_layer(resolved);
    st.current = rec->leaf(activation);
    st.capture = st.current;
    Tensor input = st.current;
    run_layers(*rec, net, st, st.capture_layer);
    ForwardPass fp = finish_pass(net, std::move(rec), std::move(st), resolved);
    fp.input = input;
    return fp;
}

Tensor forward_logits(const Network& net, const Tensor& image) {
    return forward_capture(net, image, "final").scores.detached();
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct ParamRef {
    Tensor* value;
    std::vector<double> velocity;
    std::vector<double> grad;
};

std::vector<ParamRef> collect_params(Network& net) {
    std::vector<ParamRef> params;
    for (size_t i = 0; i < net.spec.layers.size(); ++i) {
        if (net.spec.layers[i].kind != LayerSpec::Kind::conv) continue;
        params.push_back({&net.conv_w[i], {}, {}});
        params.push_back({&net.conv_b[i], {}, {}});
    }
    params.push_back({&net.head_w, {}, {}});
    for (auto& p : params) {
        p.velocity.assign(p.value->data().size(), 0.0);
        p.grad.assign(p.value->data().size(), 0.0);
    }
    return params;
}

}  // namespace

TrainResult train(Network& net, const TrainDataset& data, const TrainConfig& cfg) {
    net.spec.validate();
    if (data.images.empty()) throw std::invalid_argument("train: empty dataset");
    if (data.images.size() != data.labels.size()) {
        throw std::invalid_argument("train: images/labels size mismatch");
    }
    for (int label : data.labels) {
        if (label < 0 || label >= net.spec.classes) {
            throw std::invalid_argument("train: label " + std::to_string(label) + " outside [0," +
                                        std::to_string(net.spec.classes) + ")");
        }
    }

    auto params = collect_params(net);
    SplitMix64 rng(SplitMix64::mix(cfg.seed, 0x545241494e));
    std::vector<size_t> order(data.images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        deterministic_shuffle(order, rng);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0);

            for (size_t s = start; s < end; ++s) {
                const size_t idx = order[s];
                ComputationRecord rec;
                // The per-op validity sweep is debug machinery; the loss is
                // checked for divergence below on every sample.
                rec.set_finite_checks(false);
                std::vector<Tensor> leaves(params.size());
                // Leaves are registered in collect_params order so gradient
                // slots line up with the update loop below.
                Tensor current = rec.leaf(data.images[idx]);
                size_t pi = 0;
                for (size_t li = 0; li < net.spec.layers.size(); ++li) {
                    const auto& l = net.spec.layers[li];
                    switch (l.kind) {
                        case LayerSpec::Kind::conv: {
                            leaves[pi] = rec.leaf(net.conv_w[li]);
                            leaves[pi + 1] = rec.leaf(net.conv_b[li]);
                            current = rec.conv2d(current, leaves[pi], leaves[pi + 1],
                                                 l.conv.stride, l.conv.pad);
                            pi += 2;
                            break;
                        }
                        case LayerSpec::Kind::relu:
                            current = rec.relu(current);
                            break;
                        case LayerSpec::Kind::maxpool:
                            current = rec.maxpool2d(current, l.pool_window);
                            break;
                    }
                }
                Tensor pooled = rec.global_average_pool(current);
                leaves[pi] = rec.leaf(net.head_w);
                Tensor scores = rec.linear(leaves[pi], pooled);
                Tensor loss = rec.cross_entropy(scores, data.labels[idx]);
                const double lv = loss.value();
                if (!std::isfinite(lv)) {
                    throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                             std::to_string(epoch));
                }
                epoch_loss += lv;
                GradientTable grads = rec.backward(loss);
                for (size_t p = 0; p < params.size(); ++p) {
                    const auto& slot = grads.slot(leaves[p].node());
                    if (slot.empty()) continue;
                    for (size_t j = 0; j < slot.size(); ++j) params[p].grad[j] += slot[j] * inv;
                }
            }

            for (auto& p : params) {
                auto& w = p.value->data();
                for (size_t j = 0; j < w.size(); ++j) {
                    const double g = p.grad[j] + cfg.weight_decay * w[j];
                    p.velocity[j] = cfg.momentum * p.velocity[j] + g;
                    w[j] -= cfg.lr * p.velocity[j];
                }
            }
        }
        epoch_loss /= static_cast<double>(order.size());
        if (!std::isfinite(epoch_loss)) {
            throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                     std::to_string(epoch));
        }
        result.epoch_loss.push_back(epoch_loss);
    }
    return result;
}

double accuracy(const Network& net, const TrainDataset& data) {
    if (data.images.empty()) throw std::invalid_argument("accuracy: empty dataset");
    int hits = 0;
    for (size_t i = 0; i < data.images.size(); ++i) {
        Tensor s = forward_logits(net, data.images[i]);
        int best = 0;
        for (int k = 1; k < s.numel(); ++k) {
            if (s.data()[static_cast<size_t>(k)] > s.data()[static_cast<size_t>(best)]) best = k;
        }
        if (best == data.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.images.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'W', 'S', 'O', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

ordered_json spec_to_json(const NetworkSpec& spec) {
    ordered_json layers = ordered_json::array();
    for (const auto& l : spec.layers) {
        ordered_json j;
        switch (l.kind) {
            case LayerSpec::Kind::conv:
                j["kind"] = "conv";
                j["in_ch"] = l.conv.in_ch;
                j["out_ch"] = l.conv.out_ch;
                j["kernel"] = l.conv.kernel;
                j["stride"] = l.conv.stride;
                j["pad"] = l.conv.pad;
                break;
            case LayerSpec::Kind::relu:
                j["kind"] = "relu";
                break;
            case LayerSpec::Kind::maxpool:
                j["kind"] = "maxpool";
                j["window"] = l.pool_window;
                break;
        }
        if (!l.capture.empty()) j["capture"] = l.capture;
        layers.push_back(j);
    }
    return ordered_json{{"layers", layers},
                        {"classes", spec.classes},
                        {"in_channels", spec.in_channels},
                        {"in_h", spec.in_h},
                        {"in_w", spec.in_w}};
}

NetworkSpec spec_from_json(const ordered_json& j) {
    NetworkSpec spec;
    spec.classes = j.at("classes").get<int>();
    spec.in_channels = j.at("in_channels").get<int>();
    spec.in_h = j.at("in_h").get<int>();
    spec.in_w = j.at("in_w").get<int>();
    for (const auto& lj : j.at("layers")) {
        const std::string kind = lj.at("kind").get<std::string>();
        LayerSpec l;
        if (kind == "conv") {
            l = LayerSpec::make_conv(lj.at("in_ch").get<int>(), lj.at("out_ch").get<int>(),
                                     lj.at("kernel").get<int>(), lj.at("stride").get<int>(),
                                     lj.at("pad").get<int>());
        } else if (kind == "relu") {
            l = LayerSpec::make_relu();
        } else if (kind == "maxpool") {
            l = LayerSpec::make_maxpool(lj.at("window").get<int>());
        } else {
            throw std::runtime_error("checkpoint: unknown layer kind \"" + kind + "\"");
        }
        if (lj.contains("capture")) l.capture = lj.at("capture").get<std::string>();
        spec.layers.push_back(l);
    }
    return spec;
}

void append_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32(const std::string& in, size_t at) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(in[at + i])) << (8 * i);
    return v;
}

void append_doubles(std::string& out, const std::vector<double>& v) {
    // Little-endian IEEE754; byte order fixed explicitly so files are portable.
    for (double d : v) {
        uint64_t bits;
        std::memcpy(&bits, &d, 8);
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

void read_doubles(const std::string& in, size_t at, std::vector<double>& v) {
    for (size_t k = 0; k < v.size(); ++k) {
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<uint64_t>(static_cast<uint8_t>(in[at + 8 * k + i])) << (8 * i);
        }
        double d;
        std::memcpy(&d, &bits, 8);
        v[k] = d;
    }
}

}  // namespace

void save_checkpoint(const Network& net, const CheckpointMeta& meta, const std::string& path) {
    net.spec.validate();
    ordered_json tensors = ordered_json::array();
    std::vector<const Tensor*> blocks;
    for (size_t i = 0; i < net.spec.layers.size(); ++i) {
        if (net.spec.layers[i].kind != LayerSpec::Kind::conv) continue;
        ordered_json w{{"name", "conv" + std::to_string(i) + ".weight"},
                       {"shape", net.conv_w[i].shape()}};
        ordered_json b{{"name", "conv" + std::to_string(i) + ".bias"},
                       {"shape", net.conv_b[i].shape()}};
        tensors.push_back(w);
        tensors.push_back(b);
        blocks.push_back(&net.conv_w[i]);
        blocks.push_back(&net.conv_b[i]);
    }
    tensors.push_back(ordered_json{{"name", "head.weight"}, {"shape", net.head_w.shape()}});
    blocks.push_back(&net.head_w);

    ordered_json header{{"version", kVersion},
                        {"spec", spec_to_json(net.spec)},
                        {"meta", ordered_json{{"epochs", meta.epochs},
                                              {"seed", meta.seed},
                                              {"final_loss", meta.final_loss}}},
                        {"tensors", tensors}};
    const std::string header_str = header.dump();

    std::string out;
    out.append(kMagic, 8);
    append_u32(out, kVersion);
    append_u32(out, static_cast<uint32_t>(header_str.size()));
    out += header_str;
    for (const Tensor* t : blocks) append_doubles(out, t->data());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open \"" + path + "\" for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for \"" + path + "\"");
}

Network load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open \"" + path + "\"");
    std::ostringstream buf;
    buf << f.rdbuf();
    const std::string in = buf.str();

    if (in.size() < 16 || std::memcmp(in.data(), kMagic, 8) != 0) {
        throw std::runtime_error("checkpoint: \"" + path + "\" is not a checkpoint file");
    }
    const uint32_t version = read_u32(in, 8);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: version " + std::to_string(version) +
                                 " unsupported (this build reads version " +
                                 std::to_string(kVersion) + ")");
    }
    const uint32_t header_len = read_u32(in, 12);
    if (in.size() < 16 + static_cast<size_t>(header_len)) {
        throw std::runtime_error("checkpoint: truncated header in \"" + path + "\"");
    }
    ordered_json header;
    try {
        header = ordered_json::parse(in.substr(16, header_len));
    } catch (const std::exception& e) {
        throw std::runtime_error("checkpoint: corrupt header in \"" + path + "\": " + e.what());
    }

    Network net;
    net.spec = spec_from_json(header.at("spec"));
    net.spec.validate();
    net.conv_w.resize(net.spec.layers.size());
    net.conv_b.resize(net.spec.layers.size());

    size_t expect = 0;
    for (const auto& tj : header.at("tensors")) {
        size_t n = 1;
        for (int d : tj.at("shape").get<std::vector<int>>()) n *= static_cast<size_t>(d);
        expect += n * 8;
    }
    if (in.size() != 16 + header_len + expect) {
        throw std::runtime_error("checkpoint: truncated or oversized payload in \"" + path +
                                 "\" (expected " + std::to_string(16 + header_len + expect) +
                                 " bytes, file has " + std::to_string(in.size()) + ")");
    }

    size_t at = 16 + header_len;
    for (const auto& tj : header.at("tensors")) {
        const std::string name = tj.at("name").get<std::string>();
        const auto shape = tj.at("shape").get<std::vector<int>>();
        Tensor t = Tensor::zeros(shape);
        read_doubles(in, at, t.data());
        at += t.data().size() * 8;
        if (name == "head.weight") {
            net.head_w = std::move(t);
        } else if (name.rfind("conv", 0) == 0) {
            const size_t dot = name.find('.');
            const int layer = std::stoi(name.substr(4, dot - 4));
            if (layer < 0 || layer >= static_cast<int>(net.spec.layers.size())) {
                throw std::runtime_error("checkpoint: tensor \"" + name + "\" has no layer");
            }
            if (name.substr(dot + 1) == "weight") {
                net.conv_w[static_cast<size_t>(layer)] = std::move(t);
            } else {
                net.conv_b[static_cast<size_t>(layer)] = std::move(t);
            }
        } else {
            throw std::runtime_error("checkpoint: unknown tensor \"" + name + "\"");
        }
    }

    if (meta) {
        const auto& mj = header.at("meta");
        meta->epochs = mj.at("epochs").get<int>();
        meta->seed = mj.at("seed").get<uint64_t>();
        meta->final_loss = mj.at("final_loss").get<double>();
    }
    return net;
}

}  // namespace wsol
