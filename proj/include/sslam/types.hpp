#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <vector>

namespace sslam {

using Scalar = double;

using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
using Vec6 = Eigen::Matrix<Scalar, 6, 1>;
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
using Mat6 = Eigen::Matrix<Scalar, 6, 6>;
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vec3i = Eigen::Vector3i;

// Row-major float raster, indexed (row, col) = (v, u).
using ImageF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using DepthImage = ImageF;
using GrayImage = ImageF;

struct ColorImage {
    ImageF r, g, b;
    bool empty() const { return r.size() == 0; }
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Too few inputs for a well-posed estimate.
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace sslam
