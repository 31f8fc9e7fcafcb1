#include "sslam/frame.hpp"

namespace sslam {

void Frame::validate() const {
    const auto h = intrinsics.height, w = intrinsics.width;
    if (depth.rows() != h || depth.cols() != w) throw PreconditionError("frame: depth size differs from intrinsics");
    if ((depth.array() < 0.0f).any()) throw PreconditionError("frame: negative depth");
    if (gray.size() != 0 && (gray.rows() != h || gray.cols() != w)) {
        throw PreconditionError("frame: gray size differs from intrinsics");
    }
    if (!color.empty() && (color.r.rows() != h || color.r.cols() != w)) {
        throw PreconditionError("frame: color size differs from intrinsics");
    }
}

GrayImage to_gray(const ColorImage& color) {
    return 0.299f * color.r + 0.587f * color.g + 0.114f * color.b;
}

}  // namespace sslam
