#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wsol/box.hpp"

namespace wsol {

// A per-image localization score map, normalized to [0,1].
struct ScoreMap {
    std::vector<double> values;  // h*w row-major
    int h = 0;
    int w = 0;
};

struct GroundTruth {
    std::vector<uint8_t> mask;  // h*w in {0,1}; empty when unavailable
    std::vector<Box> boxes;    // empty when unavailable
    int label = 0;
};

// Binarize at threshold (foreground = value > threshold), keep the largest
// 4-connected component (ties: the component appearing first in row-major
// scan order), return its tight bounding box. An empty foreground degenerates
// to a one-pixel box at the argmax, lowest flat index winning ties.
//
// All metric sweeps below share this strict > rule with thresholds in
// [0, inf): the achievable foregrounds are {value >= v} for every distinct
// positive map value v, plus the empty set. Enumerating those exactly makes
// every metric a function of the score ordering alone.
Box extract_box(const ScoreMap& map, double threshold);

// The box of {value >= v} for every distinct map value v, descending. The
// v <= 0 entries are not reachable by any threshold in [0, inf); metric
// sweeps skip them.
std::vector<std::pair<double, Box>> box_threshold_sweep(const ScoreMap& map);

// Fraction of images whose best thresholded box reaches IoU >= iou_thresh
// against the best ground-truth box.
double gt_known_loc(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts,
                    double iou_thresh = 0.5);

// gt_known_loc with the additional requirement predicted[i] == gts[i].label.
double top1_loc(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts,
                const std::vector<int>& predicted, double iou_thresh = 0.5);

// Max over shared thresholds of box accuracy averaged over IoU levels
// {0.3, 0.5, 0.7}.
double max_box_acc_v2(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts);

// Peak over thresholds of the dataset-pooled mask IoU (intersection and union
// pooled over all pixels of all images).
double peak_iou(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts);

// Area under the dataset-pooled pixel precision/recall curve (rectangular
// summation over recall increments, descending threshold).
double pixel_average_precision(const std::vector<ScoreMap>& maps,
                               const std::vector<GroundTruth>& gts);

struct EvalReport {
    std::string method;
    std::string layer;
    double t_loc = 0.0;
    double g_loc = 0.0;
    double b_loc = 0.0;
    double piou = 0.0;
    double pxap = 0.0;
    double seconds_per_image = 0.0;  // 0 when not measured
};

// JSON keeps raw [0,1] values; the CSV mirrors the usual table layout
// (T-Loc, G-Loc, B-Loc, pIoU, PxAP scaled x100, two decimals).
std::string reports_to_json(const std::vector<EvalReport>& reports, bool include_timing);
std::string reports_to_csv(const std::vector<EvalReport>& reports, bool include_timing);
std::vector<EvalReport> reports_from_json(const std::string& json_text);

}  // namespace wsol
