#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "sslam/types.hpp"

namespace sslam {

/// Sparse L1-normalized word histogram, sorted by word id.
struct BowVector {
    std::vector<std::pair<int, double>> words;
    bool degenerate = false;  // fewer keypoints than the describer's minimum

    bool empty() const { return words.empty(); }
    bool operator==(const BowVector&) const = default;
};

struct Keypoint {
    int u = 0, v = 0;
    float score = 0.0f;
    float angle = 0.0f;  // radians
};

using BinaryDescriptor = std::bitset<256>;

/// FAST-9 corners (intensity threshold on a [0, 1] image) after 3x3 non-maximum
/// suppression, strongest first, at least `border` pixels from the image edge.
std::vector<Keypoint> detect_corners(const GrayImage& image, float threshold, int max_points, int border);

struct BowParams {
    float fast_threshold = 0.08f;
    int max_keypoints = 500;
    int min_keypoints = 10;
    int vocabulary_bits = 12;  // 4096 words
    int idf_frames = 50;
    std::uint64_t seed = 0x5eed;
};

/// Turns images into BoW vectors with oriented binary descriptors and a fixed
/// random-hyperplane quantizer. Document frequencies are collected from the first
/// `idf_frames` described images and then frozen; vectors described before the
/// freeze use unit IDF.
class BowDescriber {
public:
    explicit BowDescriber(const BowParams& params = {});

    BowVector describe(const GrayImage& image);

    /// Keypoints and descriptors without touching IDF state.
    void extract(const GrayImage& image, std::vector<Keypoint>& keypoints,
                 std::vector<BinaryDescriptor>& descriptors) const;
    int word_of(const BinaryDescriptor& d) const;

    bool idf_frozen() const { return frozen_; }
    int vocabulary_size() const { return 1 << params_.vocabulary_bits; }
    const BowParams& params() const { return params_; }

private:
    BowParams params_;
    std::vector<std::array<std::int8_t, 4>> pattern_;  // (x1, y1, x2, y2) per bit
    Eigen::MatrixXf hyperplanes_;                      // bits x 256
    std::vector<int> doc_freq_;
    int described_ = 0;
    bool frozen_ = false;
    std::vector<double> idf_;
};

/// 1 - 0.5 * sum |a_w - b_w|.
double similarity(const BowVector& a, const BowVector& b);

/// Minimum similarity between a keyframe and the frames of its submap.
double dynamic_threshold(const BowVector& keyframe, std::span<const BowVector> submap_frames);

struct LoopCandidate {
    int keyframe_id = -1;
    int submap_id = -1;
    double score = 0.0;
};

class KeyframeDatabase {
public:
    void add(int keyframe_id, int submap_id, BowVector v);

    /// Top-k keyframes whose submap is at least `min_distance` away from `submap_id`
    /// and whose score exceeds `s_min`, best first.
    std::vector<LoopCandidate> query(const BowVector& v, int submap_id, int k, double s_min,
                                     int min_distance) const;

    std::size_t size() const { return entries_.size(); }
    const BowVector& vector(std::size_t i) const { return entries_[i].vec; }

    void save(const std::filesystem::path& path) const;
    static KeyframeDatabase load(const std::filesystem::path& path);

private:
    struct Entry {
        int keyframe_id;
        int submap_id;
        BowVector vec;
    };
    std::vector<Entry> entries_;
    std::vector<std::vector<std::pair<int, double>>> inverted_;  // word -> (entry, weight)
};

}  // namespace sslam
