#include "sslam/place_recognition.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

namespace sslam {

namespace {

constexpr int kCircle[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0},  {3, 1},  {2, 2},   {1, 3},
                                {0, 3},  {-1, 3}, {-2, 2}, {-3, 1}, {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};
constexpr int kArc = 9;
constexpr int kPatchRadius = 15;
constexpr int kDescriptorBorder = 20;

GrayImage smooth(const GrayImage& img) {
    constexpr int r = 4;
    constexpr float sigma = 2.0f;
    float k[2 * r + 1];
    float sum = 0.0f;
    for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5f * i * i / (sigma * sigma));
    for (float& x : k) x /= sum;
    const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
    GrayImage tmp(h, w), out(h, w);
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            float acc = 0.0f;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * img(v, std::clamp(u + i, 0, w - 1));
            tmp(v, u) = acc;
        }
    }
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            float acc = 0.0f;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp(std::clamp(v + i, 0, h - 1), u);
            out(v, u) = acc;
        }
    }
    return out;
}

// Nonzero when at least kArc contiguous circle pixels are all brighter or all darker.
float fast_score(const GrayImage& img, int u, int v, float t) {
    const float c = img(v, u);
    int cls[16];
    float diff[16];
    for (int i = 0; i < 16; ++i) {
        diff[i] = img(v + kCircle[i][1], u + kCircle[i][0]) - c;
        cls[i] = diff[i] > t ? 1 : (diff[i] < -t ? -1 : 0);
    }
    bool corner = false;
    for (int sign : {1, -1}) {
        int run = 0;
        for (int i = 0; i < 16 + kArc && !corner; ++i) {
            run = cls[i % 16] == sign ? run + 1 : 0;
            corner = run >= kArc;
        }
    }
    if (!corner) return 0.0f;
    float bright = 0.0f, dark = 0.0f;
    for (int i = 0; i < 16; ++i) {
        if (cls[i] > 0) bright += diff[i] - t;
        if (cls[i] < 0) dark += -diff[i] - t;
    }
    return std::max(bright, dark);
}

template <typename T>
void put(std::ostream& os, const T& x) {
    os.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T x;
    if (!is.read(reinterpret_cast<char*>(&x), sizeof(T))) throw FormatError("bow database: truncated file");
    return x;
}

constexpr char kMagic[4] = {'S', 'B', 'O', 'W'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<Keypoint> detect_corners(const GrayImage& image, float threshold, int max_points, int border) {
    const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    border = std::max(border, 3);
    GrayImage score = GrayImage::Zero(h, w);
    for (int v = border; v < h - border; ++v) {
        for (int u = border; u < w - border; ++u) score(v, u) = fast_score(image, u, v, threshold);
    }
    std::vector<Keypoint> kps;
    for (int v = border; v < h - border; ++v) {
        for (int u = border; u < w - border; ++u) {
            const float s = score(v, u);
            if (s <= 0.0f) continue;
            bool is_max = true;
            for (int dv = -1; dv <= 1 && is_max; ++dv) {
                for (int du = -1; du <= 1 && is_max; ++du) {
                    if (du == 0 && dv == 0) continue;
                    const float n = score(v + dv, u + du);
                    // Ties go to the earlier pixel in raster order.
                    is_max = n < s || (n == s && (dv > 0 || (dv == 0 && du > 0)));
                }
            }
            if (is_max) kps.push_back({u, v, s, 0.0f});
        }
    }
    std::stable_sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
    if (static_cast<int>(kps.size()) > max_points) kps.resize(static_cast<std::size_t>(max_points));
    return kps;
}

BowDescriber::BowDescriber(const BowParams& params) : params_(params) {
    if (params.vocabulary_bits < 1 || params.vocabulary_bits > 24) {
        throw PreconditionError("bow: vocabulary_bits must be in [1, 24]");
    }
    std::mt19937_64 rng(params.seed);
    std::normal_distribution<double> pos(0.0, 31.0 / 5.0);
    auto coord = [&] { return static_cast<std::int8_t>(std::clamp(std::lround(pos(rng)), -13L, 13L)); };
    pattern_.resize(256);
    for (auto& p : pattern_) p = {coord(), coord(), coord(), coord()};
    std::normal_distribution<float> g(0.0f, 1.0f);
    hyperplanes_.resize(params.vocabulary_bits, 256);
    for (int i = 0; i < hyperplanes_.rows(); ++i) {
        for (int j = 0; j < 256; ++j) hyperplanes_(i, j) = g(rng);
    }
    doc_freq_.assign(static_cast<std::size_t>(vocabulary_size()), 0);
}

void BowDescriber::extract(const GrayImage& image, std::vector<Keypoint>& keypoints,
                           std::vector<BinaryDescriptor>& descriptors) const {
    if (image.size() == 0) throw PreconditionError("describe_frame: empty image");
    keypoints = detect_corners(image, params_.fast_threshold, params_.max_keypoints, kDescriptorBorder);
    descriptors.clear();
    const GrayImage s = smooth(image);
    for (auto& kp : keypoints) {
        double m01 = 0.0, m10 = 0.0;
        for (int dv = -kPatchRadius; dv <= kPatchRadius; ++dv) {
            for (int du = -kPatchRadius; du <= kPatchRadius; ++du) {
                if (du * du + dv * dv > kPatchRadius * kPatchRadius) continue;
                const float I = s(kp.v + dv, kp.u + du);
                m10 += du * I;
                m01 += dv * I;
            }
        }
        kp.angle = static_cast<float>(std::atan2(m01, m10));
        const double c = std::cos(kp.angle), sn = std::sin(kp.angle);
        auto sample = [&](int x, int y) {
            const long du = std::lround(c * x - sn * y), dv = std::lround(sn * x + c * y);
            return s(kp.v + dv, kp.u + du);
        };
        BinaryDescriptor d;
        for (int b = 0; b < 256; ++b) {
            const auto& p = pattern_[b];
            d[b] = sample(p[0], p[1]) < sample(p[2], p[3]);
        }
        descriptors.push_back(d);
    }
}

int BowDescriber::word_of(const BinaryDescriptor& d) const {
    Eigen::VectorXf x(256);
    for (int b = 0; b < 256; ++b) x[b] = d[b] ? 1.0f : -1.0f;
    const Eigen::VectorXf proj = hyperplanes_ * x;
    int word = 0;
    for (int i = 0; i < proj.size(); ++i) word |= (proj[i] > 0.0f ? 1 : 0) << i;
    return word;
}

BowVector BowDescriber::describe(const GrayImage& image) {
    std::vector<Keypoint> kps;
    std::vector<BinaryDescriptor> desc;
    extract(image, kps, desc);
    std::map<int, double> tf;
    for (const auto& d : desc) tf[word_of(d)] += 1.0;

    BowVector out;
    out.degenerate = static_cast<int>(kps.size()) < params_.min_keypoints;
    const bool use_idf = frozen_;
    if (!frozen_) {
        for (const auto& [w, _] : tf) ++doc_freq_[w];
        if (++described_ >= params_.idf_frames) {
            // Smoothed IDF, strictly positive for every word.
            idf_.resize(doc_freq_.size());
            for (std::size_t w = 0; w < doc_freq_.size(); ++w) {
                idf_[w] = std::log((1.0 + described_) / (1.0 + doc_freq_[w])) + 1.0;
            }
            frozen_ = true;
        }
    }
    double total = 0.0;
    for (auto& [w, x] : tf) {
        if (use_idf) x *= idf_[w];
        total += x;
    }
    for (const auto& [w, x] : tf) out.words.emplace_back(w, x / total);
    return out;
}

double similarity(const BowVector& a, const BowVector& b) {
    if (a.empty() && b.empty()) return 1.0;
    double diff = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.words.size() || j < b.words.size()) {
        if (j == b.words.size() || (i < a.words.size() && a.words[i].first < b.words[j].first)) {
            diff += a.words[i++].second;
        } else if (i == a.words.size() || b.words[j].first < a.words[i].first) {
            diff += b.words[j++].second;
        } else {
            diff += std::abs(a.words[i++].second - b.words[j++].second);
        }
    }
    return std::clamp(1.0 - 0.5 * diff, 0.0, 1.0);
}

double dynamic_threshold(const BowVector& keyframe, std::span<const BowVector> submap_frames) {
    if (submap_frames.empty()) throw PreconditionError("dynamic_threshold: no submap frames");
    double s = 1.0;
    for (const auto& f : submap_frames) s = std::min(s, similarity(keyframe, f));
    return s;
}

void KeyframeDatabase::add(int keyframe_id, int submap_id, BowVector v) {
    const int idx = static_cast<int>(entries_.size());
    for (const auto& [w, x] : v.words) {
        if (w >= static_cast<int>(inverted_.size())) inverted_.resize(static_cast<std::size_t>(w) + 1);
        inverted_[w].emplace_back(idx, x);
    }
    entries_.push_back({keyframe_id, submap_id, std::move(v)});
}

std::vector<LoopCandidate> KeyframeDatabase::query(const BowVector& v, int submap_id, int k, double s_min,
                                                   int min_distance) const {
    std::vector<char> overlaps(entries_.size(), 0);
    for (const auto& [w, _] : v.words) {
        if (w >= static_cast<int>(inverted_.size())) continue;
        for (const auto& [e, x] : inverted_[w]) overlaps[e] = 1;
    }
    std::vector<LoopCandidate> out;
    for (std::size_t e = 0; e < entries_.size(); ++e) {
        const Entry& en = entries_[e];
        if (std::abs(en.submap_id - submap_id) < min_distance) continue;
        // Vectors without a shared word score exactly 0.
        const double s = overlaps[e] ? similarity(v, en.vec) : (v.empty() && en.vec.empty() ? 1.0 : 0.0);
        if (s > s_min) out.push_back({en.keyframe_id, en.submap_id, s});
    }
    std::stable_sort(out.begin(), out.end(), [](const LoopCandidate& a, const LoopCandidate& b) { return a.score > b.score; });
    if (static_cast<int>(out.size()) > k) out.resize(static_cast<std::size_t>(std::max(k, 0)));
    return out;
}

void KeyframeDatabase::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("bow database: cannot write " + path.string());
    os.write(kMagic, 4);
    put(os, kVersion);
    put(os, static_cast<std::uint64_t>(entries_.size()));
    for (const auto& e : entries_) {
        put(os, static_cast<std::int32_t>(e.keyframe_id));
        put(os, static_cast<std::int32_t>(e.submap_id));
        put(os, static_cast<std::uint8_t>(e.vec.degenerate));
        put(os, static_cast<std::uint32_t>(e.vec.words.size()));
        for (const auto& [w, x] : e.vec.words) {
            put(os, static_cast<std::int32_t>(w));
            put(os, x);
        }
    }
}

KeyframeDatabase KeyframeDatabase::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("bow database: cannot read " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bow database: bad magic");
    if (get<std::uint32_t>(is) != kVersion) throw FormatError("bow database: unsupported version");
    KeyframeDatabase db;
    const auto n = get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n; ++i) {
        const int kf = get<std::int32_t>(is);
        const int sm = get<std::int32_t>(is);
        BowVector v;
        v.degenerate = get<std::uint8_t>(is) != 0;
        const auto m = get<std::uint32_t>(is);
        for (std::uint32_t j = 0; j < m; ++j) {
            const int w = get<std::int32_t>(is);
            v.words.emplace_back(w, get<double>(is));
        }
        db.add(kf, sm, std::move(v));
    }
    return db;
}

}  // namespace sslam
