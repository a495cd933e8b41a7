#pragma once

#include <string>
#include <vector>

#include "wsol/model.hpp"
#include "wsol/tensor.hpp"

namespace wsol {

// Which scalar the feature gradient is taken against.
//   identity     d s_k / dZ, the raw logit
//   log_softmax  d log(softmax(s)_k) / dZ
//   log_raw      d log(s_k) / dZ; only defined for positive raw scores
enum class ScoreTransform { identity, log_softmax, log_raw };

const char* transform_name(ScoreTransform t);

// An intermediate activation together with the gradient of the (transformed)
// class score with respect to it: the raw material of every projection method.
struct FeatureCapture {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> feature;  // C x N, position n = y*width + x
    std::vector<double> grad;     // same layout
    int class_index = 0;
    double score = 0.0;  // s_k for identity/log_raw, softmax(s)_k for log_softmax
    ScoreTransform transform = ScoreTransform::identity;

    int positions() const { return height * width; }
};

// Gradient pass against the capture of a forward run. class_index -1 selects
// argmax(s) with the lowest index winning ties.
FeatureCapture make_capture(ForwardPass& fp, int class_index, ScoreTransform transform);

// Per-class, per-position localization scores.
struct LocalizationMap {
    std::vector<double> values;  // rows x (height*width)
    int rows = 0;
    int height = 0;
    int width = 0;
    std::vector<int> class_ids;
    bool normalized = false;

    double* row(int r) { return values.data() + static_cast<size_t>(r) * height * width; }
    const double* row(int r) const {
        return values.data() + static_cast<size_t>(r) * height * width;
    }
};

// Initial (coarse) localization scores, one value per class and position.
struct CoarseMap {
    std::vector<double> values;  // rows x positions
    int rows = 0;
    int positions = 0;
    std::vector<int> class_ids;
};

enum class SchemeKind { uniform_average, spatial_alpha, grouping, custom };

// Weighting of the N*N regional localizers. grouping applies localizer column
// n to position i==n; uniform_average folds the diagonal with weight 1/N;
// spatial_alpha weights the diagonal by the alpha of the seeding capture;
// custom supplies the full positions^3 table indexed [i][m][n].
struct CoefficientScheme {
    SchemeKind kind = SchemeKind::grouping;
    int positions = 0;             // custom only
    std::vector<double> weights;   // custom only

    static CoefficientScheme uniform_average();
    static CoefficientScheme spatial_alpha();
    static CoefficientScheme grouping();
    static CoefficientScheme custom(int positions, std::vector<double> weights);
};

const char* scheme_name(SchemeKind k);

// entries[m][n][k][c] = d coarse[k][m] / d Z[c][n]: regional localizer (m,n)
// applied to a feature vector is the inner product over c.
struct RegionalLocalizerSet {
    int positions = 0;
    int channels = 0;
    std::vector<int> class_ids;
    std::vector<double> entries;
    std::vector<FeatureCapture> bases;  // seeding captures, one per class id

    double at(int m, int n, int k, int c) const {
        return entries[((static_cast<size_t>(m) * positions + n) * class_ids.size() + k) *
                           channels +
                       c];
    }
};

struct RlgOptions {
    double fd_step = 1e-5;
    long long budget = 65536;  // max N*C re-evaluations unless forced
    bool force = false;
};

// ---------------------------------------------------------------------------
// Projection methods

// P[k][i] = sum_c W[k][c] Z[c][i]. Defined for the final capture only; a
// channel mismatch means an intermediate layer was passed.
LocalizationMap cam_project(const Tensor& head_w, const Tensor& feature);

// P[i] = (1/N) sum_{n,c} grad[c][n] Z[c][i].
LocalizationMap gradcam(const FeatureCapture& capture);

// Spatial-alpha weighting from powers of the first gradient; per-channel
// alpha is averaged over channels, channel weights are clamped at zero before
// projection, and an all-zero gradient falls back to alpha = 1/N.
LocalizationMap gradcam_pp(const FeatureCapture& capture);
std::vector<double> gradcam_pp_alpha(const FeatureCapture& capture);

// P[i] = sum_c grad[c][i] Z[c][i]: the diagonal of the coarse map.
LocalizationMap pcs(const FeatureCapture& capture);

CoarseMap coarse_map(const FeatureCapture& capture);
CoarseMap coarse_map(const std::vector<FeatureCapture>& captures);

// The exact N*N regional localizer set: central differences over Z of the
// coarse-map pipeline, with the score gradient re-derived at every perturbed
// activation so second-order terms are captured. Budget-guarded: refuses
// N*C above opts.budget unless forced (bagcams_closed or bagcams_exact avoid
// materializing the set).
RegionalLocalizerSet rlg_localizers(const Network& net, const Tensor& image,
                                    const std::string& layer, const std::vector<int>& classes,
                                    ScoreTransform transform, const RlgOptions& opts = {});

// P[k][i] = sum_m sum_n scheme[i][m][n] sum_c entries[m][n][k][c] Z[c][i].
LocalizationMap bag_combine(const RegionalLocalizerSet& set, const std::vector<double>& feature,
                            const CoefficientScheme& scheme);

// Closed-form map: P[i] = sum_m sum_c1 s(1 + g[c1][m] Z[c1][m]) *
// (sum_c2 g[c2][i] Z[c2][i]), evaluated as written. Requires log-domain
// gradients.
LocalizationMap bagcams_closed(const FeatureCapture& capture);

// The i-independent factor of the closed form:
// s * (N*C + sum_{m,c} g[c][m] Z[c][m]).
double bagcams_closed_scale(const FeatureCapture& capture);

// Grouped bag of the exact regional localizers. Equal to
// bag_combine(rlg_localizers(...), Z, grouping); evaluated through the
// grouping collapse P[i] = coarse[i] + sum_c Z[c][i] * (H Z)[c][i], where the
// Hessian-vector product is one central difference of the tail gradient in
// direction Z.
LocalizationMap bagcams_exact(const Network& net, const Tensor& image, const std::string& layer,
                              int class_index, ScoreTransform transform = ScoreTransform::log_softmax,
                              const RlgOptions& opts = {});

// Same computation starting from a given activation of the capture layer.
LocalizationMap bagcams_exact_from_activation(const Network& net, const std::string& layer,
                                              const Tensor& activation, int class_index,
                                              ScoreTransform transform = ScoreTransform::log_softmax,
                                              const RlgOptions& opts = {});

// Scheme-selected bag over the exact localizers without materializing the
// full set (grouping via bagcams_exact, the diagonal schemes via per-position
// central differences of the coarse map).
LocalizationMap bagcams_scheme(const Network& net, const Tensor& image, const std::string& layer,
                               int class_index, SchemeKind scheme,
                               ScoreTransform transform = ScoreTransform::log_softmax,
                               const RlgOptions& opts = {});

// ---------------------------------------------------------------------------
// Map post-processing and export

enum class NormalizeMode { minmax, relu_minmax };

// Per-row min-max to [0,1]; a constant row maps to all 0.5. relu_minmax
// clamps negatives first.
LocalizationMap normalize_map(const LocalizationMap& map, NormalizeMode mode);

// Corner-aligned bilinear upsample; the target may not shrink either extent.
LocalizationMap upsample(const LocalizationMap& map, int h_out, int w_out);

struct MapSidecar {
    std::string id;
    std::string method;
    std::string layer;
    int height = 0;
    int width = 0;
    int classes = 0;
    int class_index = 0;
    int predicted_class = 0;
    std::string transform;
};

// base_path + ".pgm" (rounded to 8-bit, requires a normalized map),
// base_path + ".f64" (raw little-endian doubles) and base_path + ".json".
void export_map(const LocalizationMap& map, int row, const MapSidecar& sidecar,
                const std::string& base_path);
MapSidecar read_map_sidecar(const std::string& json_path);

}  // namespace wsol
