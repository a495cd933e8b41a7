#include "wsol/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace wsol {

using ordered_json = nlohmann::ordered_json;

// Thresholding rule, shared by every metric here: foreground is value > tau
// with tau swept over [0, inf). The sweeps below enumerate the achievable
// foregrounds exactly (one per distinct map value, plus the empty set), so
// every metric depends only on the ordering of map scores, never on a grid.

double box_iou(const Box& a, const Box& b) {
    const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
    const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
    if (ix0 > ix1 || iy0 > iy1) return 0.0;
    const double inter = static_cast<double>(ix1 - ix0 + 1) * (iy1 - iy0 + 1);
    const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
    return inter / uni;
}

namespace {

void check_map(const ScoreMap& map, const char* who) {
    if (map.h <= 0 || map.w <= 0 ||
        map.values.size() != static_cast<size_t>(map.h) * map.w) {
        throw std::invalid_argument(std::string(who) + ": malformed score map");
    }
}

Box argmax_box(const ScoreMap& map) {
    size_t best = 0;
    for (size_t i = 1; i < map.values.size(); ++i) {
        if (map.values[i] > map.values[best]) best = i;
    }
    const int y = static_cast<int>(best) / map.w;
    const int x = static_cast<int>(best) % map.w;
    return Box{x, y, x, y};
}

}  // namespace

Box extract_box(const ScoreMap& map, double threshold) {
    check_map(map, "extract_box");
    const int h = map.h, w = map.w;
    std::vector<uint8_t> fg(map.values.size());
    bool any = false;
    for (size_t i = 0; i < fg.size(); ++i) {
        fg[i] = map.values[i] > threshold ? 1 : 0;
        any |= fg[i] != 0;
    }
    if (!any) return argmax_box(map);

    std::vector<uint8_t> seen(fg.size(), 0);
    std::vector<int> stack;
    Box best;
    long long best_size = 0;
    for (int start = 0; start < h * w; ++start) {
        if (!fg[static_cast<size_t>(start)] || seen[static_cast<size_t>(start)]) continue;
        stack.assign(1, start);
        seen[static_cast<size_t>(start)] = 1;
        Box box{start % w, start / w, start % w, start / w};
        long long size = 0;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            ++size;
            const int y = p / w, x = p % w;
            box.x0 = std::min(box.x0, x);
            box.x1 = std::max(box.x1, x);
            box.y0 = std::min(box.y0, y);
            box.y1 = std::max(box.y1, y);
            const int nb[4] = {p - w, p + w, p - 1, p + 1};
            const bool ok[4] = {y > 0, y < h - 1, x > 0, x < w - 1};
            for (int d = 0; d < 4; ++d) {
                if (!ok[d]) continue;
                const int q = nb[d];
                if (fg[static_cast<size_t>(q)] && !seen[static_cast<size_t>(q)]) {
                    seen[static_cast<size_t>(q)] = 1;
                    stack.push_back(q);
                }
            }
        }
        if (size > best_size) {  // first component in scan order wins ties
            best_size = size;
            best = box;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Box sweep: pixels join the foreground in descending value order; a
// union-find tracks component sizes, bounding boxes and first-scan-order
// pixels. One pass yields the box of {value >= v} for every distinct v.

namespace {

struct BoxSweeper {
    int h, w;
    std::vector<int> parent, rank_;
    std::vector<long long> size;
    std::vector<int> min_pix;
    std::vector<Box> bbox;
    std::vector<uint8_t> active;
    long long best_size = 0;
    int best_min_pix = 0;
    Box best_box;

    BoxSweeper(int h_, int w_) : h(h_), w(w_) {
        const size_t n = static_cast<size_t>(h) * w;
        parent.resize(n);
        rank_.assign(n, 0);
        size.assign(n, 0);
        min_pix.resize(n);
        bbox.resize(n);
        active.assign(n, 0);
    }

    int find(int p) {
        while (parent[static_cast<size_t>(p)] != p) {
            parent[static_cast<size_t>(p)] =
                parent[static_cast<size_t>(parent[static_cast<size_t>(p)])];
            p = parent[static_cast<size_t>(p)];
        }
        return p;
    }

    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (rank_[static_cast<size_t>(a)] < rank_[static_cast<size_t>(b)]) std::swap(a, b);
        if (rank_[static_cast<size_t>(a)] == rank_[static_cast<size_t>(b)]) {
            ++rank_[static_cast<size_t>(a)];
        }
        parent[static_cast<size_t>(b)] = a;
        size[static_cast<size_t>(a)] += size[static_cast<size_t>(b)];
        min_pix[static_cast<size_t>(a)] =
            std::min(min_pix[static_cast<size_t>(a)], min_pix[static_cast<size_t>(b)]);
        auto& ba = bbox[static_cast<size_t>(a)];
        const auto& bb = bbox[static_cast<size_t>(b)];
        ba.x0 = std::min(ba.x0, bb.x0);
        ba.y0 = std::min(ba.y0, bb.y0);
        ba.x1 = std::max(ba.x1, bb.x1);
        ba.y1 = std::max(ba.y1, bb.y1);
    }

    void activate(int p) {
        parent[static_cast<size_t>(p)] = p;
        size[static_cast<size_t>(p)] = 1;
        min_pix[static_cast<size_t>(p)] = p;
        const int y = p / w, x = p % w;
        bbox[static_cast<size_t>(p)] = Box{x, y, x, y};
        active[static_cast<size_t>(p)] = 1;
        const int nb[4] = {p - w, p + w, p - 1, p + 1};
        const bool ok[4] = {y > 0, y < h - 1, x > 0, x < w - 1};
        for (int d = 0; d < 4; ++d) {
            if (ok[d] && active[static_cast<size_t>(nb[d])]) unite(p, nb[d]);
        }
    }

    void consider(int p) {
        const int r = find(p);
        const long long s = size[static_cast<size_t>(r)];
        if (s > best_size ||
            (s == best_size && min_pix[static_cast<size_t>(r)] < best_min_pix)) {
            best_size = s;
            best_min_pix = min_pix[static_cast<size_t>(r)];
            best_box = bbox[static_cast<size_t>(r)];
        }
    }
};

}  // namespace

std::vector<std::pair<double, Box>> box_threshold_sweep(const ScoreMap& map) {
    check_map(map, "box_threshold_sweep");
    const size_t n = map.values.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (map.values[static_cast<size_t>(a)] != map.values[static_cast<size_t>(b)]) {
            return map.values[static_cast<size_t>(a)] > map.values[static_cast<size_t>(b)];
        }
        return a < b;
    });

    BoxSweeper sweep(map.h, map.w);
    std::vector<std::pair<double, Box>> out;
    size_t at = 0;
    while (at < n) {
        const double v = map.values[static_cast<size_t>(order[at])];
        size_t end = at;
        while (end < n && map.values[static_cast<size_t>(order[end])] == v) ++end;
        for (size_t i = at; i < end; ++i) sweep.activate(order[i]);
        for (size_t i = at; i < end; ++i) sweep.consider(order[i]);
        out.emplace_back(v, sweep.best_box);
        at = end;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Box metrics

namespace {

double best_gt_iou(const Box& box, const GroundTruth& gt) {
    double best = 0.0;
    for (const Box& b : gt.boxes) best = std::max(best, box_iou(box, b));
    return best;
}

void require_boxes(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts,
                   const char* who) {
    if (maps.empty() || maps.size() != gts.size()) {
        throw std::invalid_argument(std::string(who) + ": need one ground truth per map");
    }
    for (size_t i = 0; i < gts.size(); ++i) {
        if (gts[i].boxes.empty()) {
            throw std::invalid_argument(std::string(who) + ": image " + std::to_string(i) +
                                        " has no ground-truth boxes");
        }
    }
}

// Best achievable IoU over foregrounds {value >= v} for positive v, plus the
// empty-foreground fallback box.
double best_sweep_iou(const ScoreMap& map, const GroundTruth& gt) {
    double best = best_gt_iou(argmax_box(map), gt);
    for (const auto& [v, box] : box_threshold_sweep(map)) {
        if (v <= 0.0) break;  // descending; not achievable with tau >= 0
        best = std::max(best, best_gt_iou(box, gt));
    }
    return best;
}

}  // namespace

double gt_known_loc(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts,
                    double iou_thresh) {
    require_boxes(maps, gts, "gt_known_loc");
    int hits = 0;
    for (size_t i = 0; i < maps.size(); ++i) {
        if (best_sweep_iou(maps[i], gts[i]) >= iou_thresh) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(maps.size());
}

double top1_loc(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts,
                const std::vector<int>& predicted, double iou_thresh) {
    require_boxes(maps, gts, "top1_loc");
    if (predicted.size() != maps.size()) {
        throw std::invalid_argument("top1_loc: need one prediction per map");
    }
    int hits = 0;
    for (size_t i = 0; i < maps.size(); ++i) {
        if (predicted[i] != gts[i].label) continue;
        if (best_sweep_iou(maps[i], gts[i]) >= iou_thresh) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(maps.size());
}

double max_box_acc_v2(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts) {
    require_boxes(maps, gts, "max_box_acc_v2");
    static constexpr double kLevels[3] = {0.3, 0.5, 0.7};
    const size_t m = maps.size();

    // Per image: IoU of the box of {value >= v_j} against the best
    // ground-truth box, descending v_j, plus the empty-foreground fallback.
    std::vector<std::vector<std::pair<double, double>>> steps(m);  // (value, iou)
    std::vector<double> empty_iou(m);
    std::vector<double> pooled{0.0};
    for (size_t i = 0; i < m; ++i) {
        for (const auto& [v, box] : box_threshold_sweep(maps[i])) {
            steps[i].emplace_back(v, best_gt_iou(box, gts[i]));
            if (v > 0.0) pooled.push_back(v);
        }
        empty_iou[i] = best_gt_iou(argmax_box(maps[i]), gts[i]);
    }
    std::sort(pooled.begin(), pooled.end());
    pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

    // Shared threshold ascending through every candidate; the foreground of
    // image i at tau is its last step with value > tau.
    std::vector<int> at(m);
    auto iou_of = [&](size_t i) {
        return at[i] >= 0 ? steps[i][static_cast<size_t>(at[i])].second : empty_iou[i];
    };
    int counts[3] = {0, 0, 0};
    for (size_t i = 0; i < m; ++i) {
        at[i] = static_cast<int>(steps[i].size()) - 1;
        for (int l = 0; l < 3; ++l) counts[l] += iou_of(i) >= kLevels[l];
    }

    double best = 0.0;
    for (double tau : pooled) {
        for (size_t i = 0; i < m; ++i) {
            while (at[i] >= 0 && steps[i][static_cast<size_t>(at[i])].first <= tau) {
                const double old_iou = iou_of(i);
                --at[i];
                const double new_iou = iou_of(i);
                for (int l = 0; l < 3; ++l) {
                    counts[l] += (new_iou >= kLevels[l]) - (old_iou >= kLevels[l]);
                }
            }
        }
        double acc = 0.0;
        for (int l = 0; l < 3; ++l) acc += static_cast<double>(counts[l]) / static_cast<double>(m);
        best = std::max(best, acc / 3.0);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Pixel metrics

namespace {

struct PooledPixels {
    std::vector<std::pair<double, uint8_t>> pixels;  // (value, is_positive) descending
    long long positives = 0;
};

PooledPixels pool_pixels(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts,
                         const char* who) {
    if (maps.empty() || maps.size() != gts.size()) {
        throw std::invalid_argument(std::string(who) + ": need one ground truth per map");
    }
    PooledPixels pool;
    for (size_t i = 0; i < maps.size(); ++i) {
        check_map(maps[i], who);
        if (gts[i].mask.size() != maps[i].values.size()) {
            throw std::invalid_argument(std::string(who) + ": image " + std::to_string(i) +
                                        " has no pixel mask of matching size");
        }
        for (size_t p = 0; p < maps[i].values.size(); ++p) {
            pool.pixels.emplace_back(maps[i].values[p], gts[i].mask[p] ? 1 : 0);
            pool.positives += gts[i].mask[p] ? 1 : 0;
        }
    }
    std::sort(pool.pixels.begin(), pool.pixels.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    return pool;
}

}  // namespace

double peak_iou(const std::vector<ScoreMap>& maps, const std::vector<GroundTruth>& gts) {
    PooledPixels pool = pool_pixels(maps, gts, "peak_iou");
    double best = 0.0;
    long long tp = 0, pred = 0;
    size_t at = 0;
    const size_t n = pool.pixels.size();
    while (at < n) {
        const double v = pool.pixels[at].first;
        if (v <= 0.0) break;  // {value >= v} not achievable with tau >= 0
        while (at < n && pool.pixels[at].first == v) {
            ++pred;
            tp += pool.pixels[at].second;
            ++at;
        }
        const long long uni = pred + pool.positives - tp;
        if (uni > 0) best = std::max(best, static_cast<double>(tp) / static_cast<double>(uni));
    }
    return best;
}

double pixel_average_precision(const std::vector<ScoreMap>& maps,
                               const std::vector<GroundTruth>& gts) {
    PooledPixels pool = pool_pixels(maps, gts, "pixel_average_precision");
    if (pool.positives == 0) {
        throw std::invalid_argument("pixel_average_precision: dataset has no positive pixels");
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    long long tp = 0, pred = 0;
    size_t at = 0;
    const size_t n = pool.pixels.size();
    while (at < n) {
        const double v = pool.pixels[at].first;
        if (v <= 0.0) break;
        while (at < n && pool.pixels[at].first == v) {
            ++pred;
            tp += pool.pixels[at].second;
            ++at;
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(pred);
        const double recall = static_cast<double>(tp) / static_cast<double>(pool.positives);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

// ---------------------------------------------------------------------------
// Reports

std::string reports_to_json(const std::vector<EvalReport>& reports, bool include_timing) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : reports) {
        ordered_json j{{"method", r.method}, {"layer", r.layer}, {"t_loc", r.t_loc},
                       {"g_loc", r.g_loc},   {"b_loc", r.b_loc}, {"piou", r.piou},
                       {"pxap", r.pxap}};
        if (include_timing) j["seconds_per_image"] = r.seconds_per_image;
        arr.push_back(j);
    }
    return ordered_json{{"reports", arr}}.dump(2) + "\n";
}

std::string reports_to_csv(const std::vector<EvalReport>& reports, bool include_timing) {
    std::string out = "method,layer,t_loc,g_loc,b_loc,piou,pxap";
    if (include_timing) out += ",seconds_per_image";
    out += "\n";
    char buf[64];
    for (const auto& r : reports) {
        out += r.method + "," + r.layer;
        for (double v : {r.t_loc, r.g_loc, r.b_loc, r.piou, r.pxap}) {
            std::snprintf(buf, sizeof(buf), ",%.2f", v * 100.0);
            out += buf;
        }
        if (include_timing) {
            std::snprintf(buf, sizeof(buf), ",%.6f", r.seconds_per_image);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

std::vector<EvalReport> reports_from_json(const std::string& json_text) {
    ordered_json j = ordered_json::parse(json_text);
    std::vector<EvalReport> out;
    for (const auto& rj : j.at("reports")) {
        EvalReport r;
        r.method = rj.at("method").get<std::string>();
        r.layer = rj.at("layer").get<std::string>();
        r.t_loc = rj.at("t_loc").get<double>();
        r.g_loc = rj.at("g_loc").get<double>();
        r.b_loc = rj.at("b_loc").get<double>();
        r.piou = rj.at("piou").get<double>();
        r.pxap = rj.at("pxap").get<double>();
        if (rj.contains("seconds_per_image")) {
            r.seconds_per_image = rj.at("seconds_per_image").get<double>();
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace wsol
