#pragma once

namespace wsol {

// Inclusive pixel-coordinate box: covers columns x0..x1 and rows y0..y1.
struct Box {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    long long area() const {
        return static_cast<long long>(x1 - x0 + 1) * static_cast<long long>(y1 - y0 + 1);
    }
    bool operator==(const Box&) const = default;
};

double box_iou(const Box& a, const Box& b);

}  // namespace wsol
