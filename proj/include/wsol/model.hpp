#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "wsol/tensor.hpp"

namespace wsol {

struct ConvSpec {
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
};

struct LayerSpec {
    enum class Kind { conv, relu, maxpool };
    Kind kind = Kind::conv;
    ConvSpec conv;
    int pool_window = 2;
    std::string capture;  // non-empty marks a named capture point after this layer

    static LayerSpec make_conv(int in_ch, int out_ch, int kernel, int stride, int pad);
    static LayerSpec make_relu(const std::string& capture = "");
    static LayerSpec make_maxpool(int window);
};

// Feature extractor layers + global average pooling + bias-free linear head.
// The channel count at the last capture must equal the head input width.
struct NetworkSpec {
    std::vector<LayerSpec> layers;
    int classes = 4;
    int in_channels = 3;
    int in_h = 64;
    int in_w = 64;

    // conv(3->8,3x3,p1)+relu -> conv(8->16,3x3,s2,p1)+relu ->
    // conv(16->32,3x3,s2,p1)+relu -> gap -> linear(32->classes),
    // captures block1/block2/block3 after each relu.
    static NetworkSpec default_spec(int classes);

    void validate() const;
    std::vector<std::string> capture_names() const;
    // Resolves a capture name ("final" is an alias for the last capture) to a
    // layer index; unknown names raise an error listing the valid names.
    int capture_layer(const std::string& name) const;
    std::string resolve_capture(const std::string& name) const;
    int head_in_channels() const;
};

struct Network {
    NetworkSpec spec;
    std::vector<Tensor> conv_w;  // parallel to spec.layers, empty for non-conv
    std::vector<Tensor> conv_b;
    Tensor head_w;  // (classes, C)

    // Uniform +-sqrt(1/fan_in) init, seeded.
    static Network init(const NetworkSpec& spec, uint64_t seed);
};

// One recorded forward run. Owns the record so gradient passes can be taken
// against any tensor it produced; confined to the thread that built it.
struct ForwardPass {
    std::unique_ptr<ComputationRecord> record;
    Tensor input;
    Tensor feature;  // capture layer output (C,H,W)
    Tensor pooled;   // (C)
    Tensor scores;   // (classes) pre-softmax logits
    std::string layer;
    int channels = 0;
    int height = 0;
    int width = 0;

    int argmax_class() const;  // lowest index wins ties
};

// Full forward from an image, capturing the named layer.
ForwardPass forward_capture(const Network& net, const Tensor& image, const std::string& layer);

// Forward of the tail only: a record whose leaf is a provided activation for
// the named capture, run through the remaining layers, GAP and the head.
ForwardPass forward_tail(const Network& net, const std::string& layer, const Tensor& activation);

// Plain forward to logits (no captures kept).
Tensor forward_logits(const Network& net, const Tensor& image);

struct TrainConfig {
    int epochs = 30;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch = 16;
    uint64_t seed = 1;
};

struct TrainDataset {
    std::vector<Tensor> images;
    std::vector<int> labels;
};

struct TrainResult {
    std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

// SGD with momentum and weight decay, deterministic given the seed.
// Raises if the loss goes non-finite, naming the epoch.
TrainResult train(Network& net, const TrainDataset& data, const TrainConfig& cfg);

double accuracy(const Network& net, const TrainDataset& data);

struct CheckpointMeta {
    int epochs = 0;
    uint64_t seed = 0;
    double final_loss = 0.0;
};

// Self-describing container: magic + format version + JSON header (spec,
// metadata, tensor directory) + raw little-endian float64 blocks. Round-trips
// bitwise.
void save_checkpoint(const Network& net, const CheckpointMeta& meta, const std::string& path);
Network load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace wsol
