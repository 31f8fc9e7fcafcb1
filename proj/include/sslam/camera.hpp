#pragma once

#include <Eigen/Core>

#include "sslam/types.hpp"

namespace sslam {

/// Pinhole intrinsics in pixels.
struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (!(fx > 0 && fy > 0)) throw PreconditionError("intrinsics: focal lengths must be positive");
        if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
            throw PreconditionError("intrinsics: principal point outside the image");
        }
    }

    /// Camera-frame point at pixel (u, v) with depth z.
    Vec3 backproject(double u, double v, double z) const {
        return Vec3((u - cx) * z / fx, (v - cy) * z / fy, z);
    }

    /// Continuous pixel coordinates of a camera-frame point (z must be positive).
    Eigen::Vector2d project(const Vec3& p) const {
        return Eigen::Vector2d(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
    }

    bool contains(long u, long v) const { return u >= 0 && v >= 0 && u < width && v < height; }

    bool operator==(const Intrinsics&) const = default;
};

}  // namespace sslam
