#include "wsol/cam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "wsol/image_io.hpp"

namespace wsol {

using ordered_json = nlohmann::ordered_json;

const char* transform_name(ScoreTransform t) {
    switch (t) {
        case ScoreTransform::identity: return "identity";
        case ScoreTransform::log_softmax: return "log-softmax";
        case ScoreTransform::log_raw: return "log-raw";
    }
    return "?";
}

const char* scheme_name(SchemeKind k) {
    switch (k) {
        case SchemeKind::uniform_average: return "avg";
        case SchemeKind::spatial_alpha: return "alpha";
        case SchemeKind::grouping: return "group";
        case SchemeKind::custom: return "custom";
    }
    return "?";
}

CoefficientScheme CoefficientScheme::uniform_average() {
    return CoefficientScheme{SchemeKind::uniform_average, 0, {}};
}
CoefficientScheme CoefficientScheme::spatial_alpha() {
    return CoefficientScheme{SchemeKind::spatial_alpha, 0, {}};
}
CoefficientScheme CoefficientScheme::grouping() {
    return CoefficientScheme{SchemeKind::grouping, 0, {}};
}
CoefficientScheme CoefficientScheme::custom(int positions, std::vector<double> weights) {
    if (positions <= 0 ||
        weights.size() != static_cast<size_t>(positions) * positions * positions) {
        throw std::invalid_argument("coefficient scheme: custom table must hold positions^3 = " +
                                    std::to_string(static_cast<long long>(positions) * positions *
                                                   positions) +
                                    " weights, got " + std::to_string(weights.size()));
    }
    return CoefficientScheme{SchemeKind::custom, positions, std::move(weights)};
}

// ---------------------------------------------------------------------------
// Captures

FeatureCapture make_capture(ForwardPass& fp, int class_index, ScoreTransform transform) {
    const int K = fp.scores.numel();
    const int k = class_index < 0 ? fp.argmax_class() : class_index;
    if (k < 0 || k >= K) {
        throw std::invalid_argument("capture: class " + std::to_string(k) + " outside [0," +
                                    std::to_string(K) + ")");
    }
    ComputationRecord& rec = *fp.record;
    Tensor pick = Tensor::zeros({1, K});
    pick.data()[static_cast<size_t>(k)] = 1.0;
    Tensor pick_leaf = rec.leaf(pick);

    FeatureCapture cap;
    cap.channels = fp.channels;
    cap.height = fp.height;
    cap.width = fp.width;
    cap.feature = fp.feature.data();
    cap.class_index = k;
    cap.transform = transform;

    Tensor scalar;
    switch (transform) {
        case ScoreTransform::identity: {
            scalar = rec.matmul(pick_leaf, fp.scores);
            cap.score = scalar.value();
            break;
        }
        case ScoreTransform::log_softmax: {
            Tensor prob = rec.softmax(fp.scores);
            Tensor logp = rec.log(prob);
            scalar = rec.matmul(pick_leaf, logp);
            cap.score = prob.data()[static_cast<size_t>(k)];
            break;
        }
        case ScoreTransform::log_raw: {
            Tensor sk = rec.matmul(pick_leaf, fp.scores);
            if (sk.value() <= 0.0) {
                throw std::runtime_error(
                    "capture: log of a non-positive raw score (" + std::to_string(sk.value()) +
                    ") is undefined; use the log-softmax transform");
            }
            scalar = rec.log(sk);
            cap.score = sk.value();
            break;
        }
    }
    GradientTable grads = rec.backward(scalar);
    cap.grad = grads.grad_of(fp.feature).data();
    return cap;
}

// ---------------------------------------------------------------------------
// Projections

namespace {

LocalizationMap single_row_map(const FeatureCapture& cap, std::vector<double> values) {
    LocalizationMap map;
    map.rows = 1;
    map.height = cap.height;
    map.width = cap.width;
    map.class_ids = {cap.class_index};
    map.values = std::move(values);
    return map;
}

void check_capture(const FeatureCapture& cap, const char* who) {
    if (cap.feature.size() != static_cast<size_t>(cap.channels) * cap.positions() ||
        cap.grad.size() != cap.feature.size()) {
        throw std::invalid_argument(std::string(who) + ": capture feature/grad shapes disagree");
    }
}

}  // namespace

LocalizationMap cam_project(const Tensor& head_w, const Tensor& feature) {
    if (head_w.shape().size() != 2) {
        throw std::invalid_argument("cam_project: head weights must be (K,C), got " +
                                    shape_str(head_w.shape()));
    }
    if (feature.shape().size() != 2 && feature.shape().size() != 3) {
        throw std::invalid_argument("cam_project: feature must be (C,N) or (C,H,W), got " +
                                    shape_str(feature.shape()));
    }
    const int K = head_w.shape()[0], C = head_w.shape()[1];
    const int Cf = feature.shape()[0];
    if (C != Cf) {
        throw std::invalid_argument(
            "cam_project: head expects " + std::to_string(C) + " channels but the feature has " +
            std::to_string(Cf) +
            "; CAM is defined for the final capture only (use a gradient method for "
            "intermediate layers)");
    }
    const int H = feature.shape().size() == 3 ? feature.shape()[1] : 1;
    const int W = feature.shape().size() == 3 ? feature.shape()[2] : feature.shape()[1];
    const int N = H * W;

    LocalizationMap map;
    map.rows = K;
    map.height = H;
    map.width = W;
    map.values.assign(static_cast<size_t>(K) * N, 0.0);
    for (int k = 0; k < K; ++k) {
        map.class_ids.push_back(k);
        double* out = map.row(k);
        for (int c = 0; c < C; ++c) {
            const double wkc = head_w.data()[static_cast<size_t>(k) * C + c];
            const double* z = feature.data().data() + static_cast<size_t>(c) * N;
            for (int i = 0; i < N; ++i) out[i] += wkc * z[i];
        }
    }
    return map;
}

LocalizationMap gradcam(const FeatureCapture& cap) {
    check_capture(cap, "gradcam");
    const int C = cap.channels, N = cap.positions();
    std::vector<double> out(static_cast<size_t>(N), 0.0);
    for (int c = 0; c < C; ++c) {
        const double* g = cap.grad.data() + static_cast<size_t>(c) * N;
        double w = 0.0;
        for (int n = 0; n < N; ++n) w += g[n];
        w /= N;
        const double* z = cap.feature.data() + static_cast<size_t>(c) * N;
        for (int i = 0; i < N; ++i) out[static_cast<size_t>(i)] += w * z[i];
    }
    return single_row_map(cap, std::move(out));
}

std::vector<double> gradcam_pp_alpha(const FeatureCapture& cap) {
    check_capture(cap, "gradcam_pp");
    const int C = cap.channels, N = cap.positions();
    bool any = false;
    for (double g : cap.grad) {
        if (g != 0.0) {
            any = true;
            break;
        }
    }
    std::vector<double> alpha(static_cast<size_t>(N), 0.0);
    if (!any) {
        std::fill(alpha.begin(), alpha.end(), 1.0 / N);
        return alpha;
    }
    for (int c = 0; c < C; ++c) {
        const double* g = cap.grad.data() + static_cast<size_t>(c) * N;
        const double* z = cap.feature.data() + static_cast<size_t>(c) * N;
        double cubes = 0.0;
        for (int m = 0; m < N; ++m) cubes += z[m] * g[m] * g[m] * g[m];
        for (int n = 0; n < N; ++n) {
            const double denom = 2.0 * g[n] * g[n] + cubes;
            if (denom != 0.0) alpha[static_cast<size_t>(n)] += (g[n] * g[n]) / denom;
        }
    }
    for (double& a : alpha) a /= C;
    return alpha;
}

LocalizationMap gradcam_pp(const FeatureCapture& cap) {
    const int C = cap.channels, N = cap.positions();
    const std::vector<double> alpha = gradcam_pp_alpha(cap);
    std::vector<double> out(static_cast<size_t>(N), 0.0);
    for (int c = 0; c < C; ++c) {
        const double* g = cap.grad.data() + static_cast<size_t>(c) * N;
        const double* z = cap.feature.data() + static_cast<size_t>(c) * N;
        double w = 0.0;
        for (int n = 0; n < N; ++n) w += alpha[static_cast<size_t>(n)] * g[n];
        if (w < 0.0) w = 0.0;
        for (int i = 0; i < N; ++i) out[static_cast<size_t>(i)] += w * z[i];
    }
    return single_row_map(cap, std::move(out));
}

LocalizationMap pcs(const FeatureCapture& cap) {
    check_capture(cap, "pcs");
    const int C = cap.channels, N = cap.positions();
    std::vector<double> out(static_cast<size_t>(N), 0.0);
    for (int c = 0; c < C; ++c) {
        const double* g = cap.grad.data() + static_cast<size_t>(c) * N;
        const double* z = cap.feature.data() + static_cast<size_t>(c) * N;
        for (int i = 0; i < N; ++i) out[static_cast<size_t>(i)] += g[i] * z[i];
    }
    return single_row_map(cap, std::move(out));
}

CoarseMap coarse_map(const FeatureCapture& cap) { return coarse_map(std::vector<FeatureCapture>{cap}); }

CoarseMap coarse_map(const std::vector<FeatureCapture>& captures) {
    if (captures.empty()) throw std::invalid_argument("coarse_map: no captures");
    CoarseMap cm;
    cm.rows = static_cast<int>(captures.size());
    cm.positions = captures[0].positions();
    cm.values.assign(static_cast<size_t>(cm.rows) * cm.positions, 0.0);
    for (int r = 0; r < cm.rows; ++r) {
        const auto& cap = captures[static_cast<size_t>(r)];
        check_capture(cap, "coarse_map");
        if (cap.positions() != cm.positions) {
            throw std::invalid_argument("coarse_map: captures disagree on positions");
        }
        cm.class_ids.push_back(cap.class_index);
        LocalizationMap row = pcs(cap);
        std::copy(row.values.begin(), row.values.end(),
                  cm.values.begin() + static_cast<size_t>(r) * cm.positions);
    }
    return cm;
}

// ---------------------------------------------------------------------------
// Regional localizers

namespace {

void check_budget(long long n, long long c, const RlgOptions& opts, const char* who) {
    if (!opts.force && n * c > opts.budget) {
        throw std::invalid_argument(
            std::string(who) + ": N*C = " + std::to_string(n * c) + " exceeds the budget of " +
            std::to_string(opts.budget) +
            " re-evaluations; use bagcams_closed (closed form) or pass force");
    }
}

std::vector<int> resolve_classes(const ForwardPass& fp, const std::vector<int>& classes) {
    if (classes.empty()) return {fp.argmax_class()};
    for (int k : classes) {
        if (k < 0 || k >= fp.scores.numel()) {
            throw std::invalid_argument("rlg: class " + std::to_string(k) + " outside [0," +
                                        std::to_string(fp.scores.numel()) + ")");
        }
    }
    return classes;
}

// Coarse-map rows for every requested class of one tail evaluation.
std::vector<std::vector<double>> tail_coarse_rows(const Network& net, const std::string& layer,
                                                  const Tensor& activation,
                                                  const std::vector<int>& classes,
                                                  ScoreTransform transform) {
    ForwardPass tail = forward_tail(net, layer, activation);
    std::vector<std::vector<double>> rows;
    rows.reserve(classes.size());
    for (int k : classes) {
        FeatureCapture cap = make_capture(tail, k, transform);
        rows.push_back(pcs(cap).values);
    }
    return rows;
}

}  // namespace

RegionalLocalizerSet rlg_localizers(const Network& net, const Tensor& image,
                                    const std::string& layer, const std::vector<int>& classes,
                                    ScoreTransform transform, const RlgOptions& opts) {
    ForwardPass fp = forward_capture(net, image, layer);
    const int C = fp.channels, N = fp.height * fp.width;
    check_budget(N, C, opts, "rlg_localizers");

    RegionalLocalizerSet set;
    set.positions = N;
    set.channels = C;
    set.class_ids = resolve_classes(fp, classes);
    const int K = static_cast<int>(set.class_ids.size());
    for (int k : set.class_ids) set.bases.push_back(make_capture(fp, k, transform));
    set.entries.assign(static_cast<size_t>(N) * N * K * C, 0.0);

    Tensor z0 = fp.feature.detached();
    for (int c = 0; c < C; ++c) {
        for (int n = 0; n < N; ++n) {
            const size_t zi = static_cast<size_t>(c) * N + n;
            const double keep = z0.data()[zi];
            const double h = opts.fd_step * std::max(1.0, std::abs(keep));
            z0.data()[zi] = keep + h;
            const auto hi = tail_coarse_rows(net, layer, z0, set.class_ids, transform);
            z0.data()[zi] = keep - h;
            const auto lo = tail_coarse_rows(net, layer, z0, set.class_ids, transform);
            z0.data()[zi] = keep;
            for (int k = 0; k < K; ++k) {
                for (int m = 0; m < N; ++m) {
                    set.entries[((static_cast<size_t>(m) * N + n) * K + k) * C + c] =
                        (hi[static_cast<size_t>(k)][static_cast<size_t>(m)] -
                         lo[static_cast<size_t>(k)][static_cast<size_t>(m)]) /
                        (2.0 * h);
                }
            }
        }
    }
    return set;
}

LocalizationMap bag_combine(const RegionalLocalizerSet& set, const std::vector<double>& feature,
                            const CoefficientScheme& scheme) {
    const int N = set.positions, C = set.channels;
    const int K = static_cast<int>(set.class_ids.size());
    if (feature.size() != static_cast<size_t>(C) * N) {
        throw std::invalid_argument("bag_combine: feature must be C*N = " +
                                    std::to_string(static_cast<long long>(C) * N) + " values, got " +
                                    std::to_string(feature.size()));
    }
    if (scheme.kind == SchemeKind::custom && scheme.positions != N) {
        throw std::invalid_argument("bag_combine: custom table built for " +
                                    std::to_string(scheme.positions) + " positions, set has " +
                                    std::to_string(N));
    }

    LocalizationMap map;
    map.rows = K;
    map.height = set.bases.empty() ? 1 : set.bases[0].height;
    map.width = set.bases.empty() ? N : set.bases[0].width;
    map.class_ids = set.class_ids;
    map.values.assign(static_cast<size_t>(K) * N, 0.0);

    for (int k = 0; k < K; ++k) {
        double* out = map.row(k);
        switch (scheme.kind) {
            case SchemeKind::uniform_average: {
                for (int i = 0; i < N; ++i) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) {
                        for (int c = 0; c < C; ++c) {
                            acc += set.at(n, n, k, c) * feature[static_cast<size_t>(c) * N + i];
                        }
                    }
                    out[i] = acc / N;
                }
                break;
            }
            case SchemeKind::spatial_alpha: {
                const std::vector<double> alpha = gradcam_pp_alpha(set.bases[static_cast<size_t>(k)]);
                for (int i = 0; i < N; ++i) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) {
                        for (int c = 0; c < C; ++c) {
                            acc += alpha[static_cast<size_t>(n)] * set.at(n, n, k, c) *
                                   feature[static_cast<size_t>(c) * N + i];
                        }
                    }
                    out[i] = acc;
                }
                break;
            }
            case SchemeKind::grouping: {
                for (int i = 0; i < N; ++i) {
                    double acc = 0.0;
                    for (int m = 0; m < N; ++m) {
                        for (int c = 0; c < C; ++c) {
                            acc += set.at(m, i, k, c) * feature[static_cast<size_t>(c) * N + i];
                        }
                    }
                    out[i] = acc;
                }
                break;
            }
            case SchemeKind::custom: {
                for (int i = 0; i < N; ++i) {
                    double acc = 0.0;
                    for (int m = 0; m < N; ++m) {
                        for (int n = 0; n < N; ++n) {
                            const double lam =
                                scheme.weights[(static_cast<size_t>(i) * N + m) * N + n];
                            if (lam == 0.0) continue;
                            double inner = 0.0;
                            for (int c = 0; c < C; ++c) {
                                inner += set.at(m, n, k, c) * feature[static_cast<size_t>(c) * N + i];
                            }
                            acc += lam * inner;
                        }
                    }
                    out[i] = acc;
                }
                break;
            }
        }
    }
    return map;
}

LocalizationMap bagcams_closed(const FeatureCapture& cap) {
    check_capture(cap, "bagcams_closed");
    if (cap.transform == ScoreTransform::identity) {
        throw std::invalid_argument(
            "bagcams_closed: the closed form is defined on log-domain gradients; capture with "
            "log-softmax (or log-raw for positive scores)");
    }
    const int C = cap.channels, N = cap.positions();
    const double s = cap.score;
    std::vector<double> inner(static_cast<size_t>(N), 0.0);
    for (int c = 0; c < C; ++c) {
        const double* g = cap.grad.data() + static_cast<size_t>(c) * N;
        const double* z = cap.feature.data() + static_cast<size_t>(c) * N;
        for (int i = 0; i < N; ++i) inner[static_cast<size_t>(i)] += g[i] * z[i];
    }
    std::vector<double> out(static_cast<size_t>(N), 0.0);
    for (int i = 0; i < N; ++i) {
        double acc = 0.0;
        for (int m = 0; m < N; ++m) {
            for (int c = 0; c < C; ++c) {
                acc += s *
                       (1.0 + cap.grad[static_cast<size_t>(c) * N + m] *
                                  cap.feature[static_cast<size_t>(c) * N + m]) *
                       inner[static_cast<size_t>(i)];
            }
        }
        out[static_cast<size_t>(i)] = acc;
    }
    return single_row_map(cap, std::move(out));
}

double bagcams_closed_scale(const FeatureCapture& cap) {
    check_capture(cap, "bagcams_closed_scale");
    const int C = cap.channels, N = cap.positions();
    double dot = 0.0;
    for (size_t i = 0; i < cap.grad.size(); ++i) dot += cap.grad[i] * cap.feature[i];
    return cap.score * (static_cast<double>(N) * C + dot);
}

namespace {

LocalizationMap bagcams_exact_pass(const Network& net, const std::string& layer, ForwardPass fp,
                                   int class_index, ScoreTransform transform,
                                   const RlgOptions& opts) {
    const int C = fp.channels, N = fp.height * fp.width;
    check_budget(N, C, opts, "bagcams_exact");
    FeatureCapture cap = make_capture(fp, class_index, transform);

    // Central difference of the tail gradient along Z itself gives the
    // Hessian-vector product (H Z) without touching single positions.
    const double h = opts.fd_step;
    Tensor z_hi = fp.feature.detached();
    Tensor z_lo = fp.feature.detached();
    for (size_t i = 0; i < z_hi.data().size(); ++i) {
        z_hi.data()[i] *= (1.0 + h);
        z_lo.data()[i] *= (1.0 - h);
    }
    ForwardPass tail_hi = forward_tail(net, layer, z_hi);
    FeatureCapture cap_hi = make_capture(tail_hi, cap.class_index, transform);
    ForwardPass tail_lo = forward_tail(net, layer, z_lo);
    FeatureCapture cap_lo = make_capture(tail_lo, cap.class_index, transform);

    std::vector<double> out(static_cast<size_t>(N), 0.0);
    for (int c = 0; c < C; ++c) {
        const double* g = cap.grad.data() + static_cast<size_t>(c) * N;
        const double* ghi = cap_hi.grad.data() + static_cast<size_t>(c) * N;
        const double* glo = cap_lo.grad.data() + static_cast<size_t>(c) * N;
        const double* z = cap.feature.data() + static_cast<size_t>(c) * N;
        for (int i = 0; i < N; ++i) {
            const double hz = (ghi[i] - glo[i]) / (2.0 * h);
            out[static_cast<size_t>(i)] += z[i] * (g[i] + hz);
        }
    }
    return single_row_map(cap, std::move(out));
}

}  // namespace

LocalizationMap bagcams_exact(const Network& net, const Tensor& image, const std::string& layer,
                              int class_index, ScoreTransform transform, const RlgOptions& opts) {
    return bagcams_exact_pass(net, layer, forward_capture(net, image, layer), class_index,
                              transform, opts);
}

LocalizationMap bagcams_exact_from_activation(const Network& net, const std::string& layer,
                                              const Tensor& activation, int class_index,
                                              ScoreTransform transform, const RlgOptions& opts) {
    return bagcams_exact_pass(net, layer, forward_tail(net, layer, activation), class_index,
                              transform, opts);
}

LocalizationMap bagcams_scheme(const Network& net, const Tensor& image, const std::string& layer,
                               int class_index, SchemeKind scheme, ScoreTransform transform,
                               const RlgOptions& opts) {
    if (scheme == SchemeKind::grouping) {
        return bagcams_exact(net, image, layer, class_index, transform, opts);
    }
    if (scheme == SchemeKind::custom) {
        throw std::invalid_argument("bagcams_scheme: custom tables go through bag_combine");
    }
    ForwardPass fp = forward_capture(net, image, layer);
    const int C = fp.channels, N = fp.height * fp.width;
    check_budget(N, C, opts, "bagcams_scheme");
    FeatureCapture cap = make_capture(fp, class_index, transform);
    const std::vector<int> classes{cap.class_index};

    // Diagonal localizers d coarse[n] / d Z[c][n] by per-position central
    // differences of the coarse-map pipeline.
    std::vector<double> diag(static_cast<size_t>(N) * C, 0.0);  // [n][c]
    Tensor z0 = fp.feature.detached();
    for (int c = 0; c < C; ++c) {
        for (int n = 0; n < N; ++n) {
            const size_t zi = static_cast<size_t>(c) * N + n;
            const double keep = z0.data()[zi];
            const double h = opts.fd_step * std::max(1.0, std::abs(keep));
            z0.data()[zi] = keep + h;
            const double hi = tail_coarse_rows(net, layer, z0, classes, transform)[0][static_cast<size_t>(n)];
            z0.data()[zi] = keep - h;
            const double lo = tail_coarse_rows(net, layer, z0, classes, transform)[0][static_cast<size_t>(n)];
            z0.data()[zi] = keep;
            diag[static_cast<size_t>(n) * C + c] = (hi - lo) / (2.0 * h);
        }
    }

    std::vector<double> channel_w(static_cast<size_t>(C), 0.0);
    if (scheme == SchemeKind::uniform_average) {
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) channel_w[static_cast<size_t>(c)] += diag[static_cast<size_t>(n) * C + c];
        }
        for (double& w : channel_w) w /= N;
    } else {  // spatial_alpha
        const std::vector<double> alpha = gradcam_pp_alpha(cap);
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                channel_w[static_cast<size_t>(c)] += alpha[static_cast<size_t>(n)] * diag[static_cast<size_t>(n) * C + c];
            }
        }
    }

    std::vector<double> out(static_cast<size_t>(N), 0.0);
    for (int c = 0; c < C; ++c) {
        const double* z = cap.feature.data() + static_cast<size_t>(c) * N;
        for (int i = 0; i < N; ++i) out[static_cast<size_t>(i)] += channel_w[static_cast<size_t>(c)] * z[i];
    }
    return single_row_map(cap, std::move(out));
}

// ---------------------------------------------------------------------------
// Post-processing

LocalizationMap normalize_map(const LocalizationMap& map, NormalizeMode mode) {
    LocalizationMap out = map;
    const int N = map.height * map.width;
    for (int r = 0; r < map.rows; ++r) {
        double* row = out.row(r);
        if (mode == NormalizeMode::relu_minmax) {
            for (int i = 0; i < N; ++i) row[i] = std::max(row[i], 0.0);
        }
        double lo = row[0], hi = row[0];
        for (int i = 1; i < N; ++i) {
            lo = std::min(lo, row[i]);
            hi = std::max(hi, row[i]);
        }
        if (hi == lo) {
            for (int i = 0; i < N; ++i) row[i] = 0.5;
        } else {
            const double inv = 1.0 / (hi - lo);
            for (int i = 0; i < N; ++i) row[i] = (row[i] - lo) * inv;
        }
    }
    out.normalized = true;
    return out;
}

LocalizationMap upsample(const LocalizationMap& map, int h_out, int w_out) {
    if (h_out <= 0 || w_out <= 0) {
        throw std::invalid_argument("upsample: target size must be positive");
    }
    if (h_out < map.height || w_out < map.width) {
        throw std::invalid_argument("upsample: target " + shape_str({h_out, w_out}) +
                                    " smaller than source " + shape_str({map.height, map.width}));
    }
    LocalizationMap out;
    out.rows = map.rows;
    out.height = h_out;
    out.width = w_out;
    out.class_ids = map.class_ids;
    out.normalized = map.normalized;
    out.values.assign(static_cast<size_t>(map.rows) * h_out * w_out, 0.0);

    const double sy = h_out > 1 && map.height > 1
                          ? static_cast<double>(map.height - 1) / (h_out - 1)
                          : 0.0;
    const double sx = w_out > 1 && map.width > 1
                          ? static_cast<double>(map.width - 1) / (w_out - 1)
                          : 0.0;
    for (int r = 0; r < map.rows; ++r) {
        const double* src = map.row(r);
        double* dst = out.row(r);
        for (int y = 0; y < h_out; ++y) {
            const double fy = y * sy;
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, map.height - 1);
            const double wy = fy - y0;
            for (int x = 0; x < w_out; ++x) {
                const double fx = x * sx;
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, map.width - 1);
                const double wx = fx - x0;
                const double top = src[y0 * map.width + x0] * (1.0 - wx) + src[y0 * map.width + x1] * wx;
                const double bot = src[y1 * map.width + x0] * (1.0 - wx) + src[y1 * map.width + x1] * wx;
                dst[static_cast<size_t>(y) * w_out + x] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

void export_map(const LocalizationMap& map, int row, const MapSidecar& sidecar,
                const std::string& base_path) {
    if (row < 0 || row >= map.rows) {
        throw std::invalid_argument("export_map: row " + std::to_string(row) + " outside [0," +
                                    std::to_string(map.rows) + ")");
    }
    if (!map.normalized) {
        throw std::invalid_argument("export_map: map must be normalized before export");
    }
    const int N = map.height * map.width;
    const double* v = map.row(row);

    std::vector<uint8_t> bytes(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) {
        bytes[static_cast<size_t>(i)] =
            static_cast<uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
    }
    write_p5(base_path + ".pgm", map.height, map.width, bytes);
    write_f64(base_path + ".f64", std::vector<double>(v, v + N));

    ordered_json j{{"id", sidecar.id},
                   {"method", sidecar.method},
                   {"layer", sidecar.layer},
                   {"H", map.height},
                   {"W", map.width},
                   {"K", sidecar.classes},
                   {"class_index", sidecar.class_index},
                   {"predicted_class", sidecar.predicted_class},
                   {"transform", sidecar.transform}};
    write_file(base_path + ".json", j.dump(2) + "\n");
}

MapSidecar read_map_sidecar(const std::string& json_path) {
    ordered_json j;
    try {
        j = ordered_json::parse(read_file(json_path));
    } catch (const std::exception& e) {
        throw std::runtime_error("sidecar: cannot parse \"" + json_path + "\": " + e.what());
    }
    MapSidecar s;
    s.id = j.at("id").get<std::string>();
    s.method = j.at("method").get<std::string>();
    s.layer = j.at("layer").get<std::string>();
    s.height = j.at("H").get<int>();
    s.width = j.at("W").get<int>();
    s.classes = j.at("K").get<int>();
    s.class_index = j.at("class_index").get<int>();
    s.predicted_class = j.at("predicted_class").get<int>();
    s.transform = j.at("transform").get<std::string>();
    return s;
}

}  // namespace wsol
