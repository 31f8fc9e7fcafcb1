#pragma once

#include <cstdint>

#include "sslam/camera.hpp"
#include "sslam/pose.hpp"
#include "sslam/types.hpp"

namespace sslam {

/// One RGB-D observation. Depth is in meters with 0 marking missing data; the
/// color channels and gray image are in [0, 1].
struct Frame {
    std::int64_t id = 0;
    double timestamp = 0.0;
    DepthImage depth;
    ColorImage color;
    GrayImage gray;
    Intrinsics intrinsics;
    Pose pose;  // world from camera

    /// Throws PreconditionError on mismatched image sizes or negative depth.
    void validate() const;
};

/// Rec. 601 luma.
GrayImage to_gray(const ColorImage& color);

}  // namespace sslam
