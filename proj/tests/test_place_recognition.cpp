#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "sslam/place_recognition.hpp"

using namespace sslam;

namespace {

// Random-gray checkerboard with 12 px cells, each holding an inverted disc at a random spot.
GrayImage checker(std::uint64_t seed, int w = 320, int h = 240) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    const int cw = (w + 11) / 12 + 1, ch = (h + 11) / 12 + 1;
    std::vector<Eigen::Vector3f> cells(static_cast<std::size_t>(cw * ch));
    for (auto& c : cells) c = Eigen::Vector3f(u(rng), u(rng), u(rng));
    GrayImage img(h, w);
    for (int v = 0; v < h; ++v) {
        for (int x = 0; x < w; ++x) {
            const Eigen::Vector3f& c = cells[(v / 12) * cw + x / 12];
            const float dx = (x % 12) / 12.0f - c[1], dy = (v % 12) / 12.0f - c[2];
            img(v, x) = dx * dx + dy * dy < 0.06f ? 1.0f - c[0] : c[0];
        }
    }
    return img;
}

BowVector sparse(std::initializer_list<std::pair<int, double>> w) {
    BowVector v;
    v.words = w;
    return v;
}

BowVector random_vector(std::mt19937_64& rng, int vocab, int nwords) {
    std::uniform_int_distribution<int> word(0, vocab - 1);
    std::uniform_real_distribution<double> weight(0.1, 1.0);
    std::map<int, double> m;
    for (int i = 0; i < nwords; ++i) m[word(rng)] += weight(rng);
    double total = 0.0;
    for (const auto& [w, x] : m) total += x;
    BowVector v;
    for (const auto& [w, x] : m) v.words.emplace_back(w, x / total);
    return v;
}

}  // namespace

TEST(Describe, IdenticalImagesGiveIdenticalVectors) {
    BowDescriber d;
    const GrayImage img = checker(1);
    const BowVector a = d.describe(img), b = d.describe(img);
    EXPECT_EQ(a, b);
    EXPECT_FALSE(a.degenerate);
    double sum = 0.0;
    for (const auto& [w, x] : a.words) {
        EXPECT_GT(x, 0.0);
        EXPECT_LT(w, d.vocabulary_size());
        sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
}

TEST(Describe, UniformImageIsDegenerate) {
    BowDescriber d;
    const BowVector v = d.describe(GrayImage::Constant(240, 320, 0.5f));
    EXPECT_TRUE(v.degenerate);
}

TEST(Describe, EmptyImageThrows) {
    BowDescriber d;
    EXPECT_THROW(d.describe(GrayImage()), PreconditionError);
}

TEST(Describe, OnePixelTranslationStaysSimilar) {
    BowDescriber d;
    for (std::uint64_t seed = 2; seed < 7; ++seed) {
        const GrayImage img = checker(seed, 322, 240);
        const GrayImage a = img.leftCols(320), b = img.middleCols(1, 320);
        EXPECT_GE(similarity(d.describe(a), d.describe(b)), 0.8) << "seed " << seed;
    }
}

TEST(Describe, DifferentTexturesAreDissimilar) {
    BowDescriber d;
    EXPECT_LT(similarity(d.describe(checker(10)), d.describe(checker(11))), 0.5);
}

TEST(Describe, IdfFreezesAfterConfiguredFrames) {
    BowParams p;
    p.idf_frames = 3;
    BowDescriber d(p);
    for (int i = 0; i < 3; ++i) {
        EXPECT_FALSE(d.idf_frozen());
        d.describe(checker(20 + i));
    }
    EXPECT_TRUE(d.idf_frozen());
    const GrayImage img = checker(30);
    EXPECT_EQ(d.describe(img), d.describe(img));
}

TEST(Corners, CheckerCornersFound) {
    // Four cells meeting at (40, 40) with distinct grays.
    GrayImage img(80, 80);
    for (int v = 0; v < 80; ++v) {
        for (int u = 0; u < 80; ++u) img(v, u) = (u < 40 ? 0.1f : 0.9f) * (v < 40 ? 1.0f : 0.4f) + (v < 40 ? 0.0f : 0.05f);
    }
    const auto kps = detect_corners(img, 0.08f, 50, 5);
    ASSERT_FALSE(kps.empty());
    EXPECT_LE(std::abs(kps[0].u - 40) + std::abs(kps[0].v - 40), 2);
}

TEST(Similarity, HandCases) {
    const BowVector a = sparse({{1, 1.0}});
    const BowVector b = sparse({{1, 0.5}, {2, 0.5}});
    EXPECT_DOUBLE_EQ(similarity(a, b), 0.5);
    EXPECT_DOUBLE_EQ(similarity(a, a), 1.0);
    EXPECT_DOUBLE_EQ(similarity(a, sparse({{3, 1.0}})), 0.0);
}

TEST(Similarity, SymmetricAndBounded) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const BowVector a = random_vector(rng, 64, 10), b = random_vector(rng, 64, 10);
        const double s = similarity(a, b);
        EXPECT_DOUBLE_EQ(s, similarity(b, a));
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
        if (a != b) {
            EXPECT_LT(s, 1.0);
        }
    }
}

TEST(DynamicThreshold, Cases) {
    const BowVector k = sparse({{1, 0.5}, {2, 0.5}});
    const std::vector<BowVector> same{k, k};
    EXPECT_DOUBLE_EQ(dynamic_threshold(k, same), 1.0);
    const std::vector<BowVector> with_disjoint{k, sparse({{9, 1.0}})};
    EXPECT_DOUBLE_EQ(dynamic_threshold(k, with_disjoint), 0.0);
    // Scores 0.9, 0.6, 0.75 against k = (1: 1.0).
    const BowVector k1 = sparse({{1, 1.0}});
    const std::vector<BowVector> frames{sparse({{1, 0.9}, {2, 0.1}}), sparse({{1, 0.6}, {2, 0.4}}), sparse({{1, 0.75}, {3, 0.25}})};
    EXPECT_NEAR(dynamic_threshold(k1, frames), 0.6, 1e-12);
    EXPECT_THROW(dynamic_threshold(k1, {}), PreconditionError);
}

TEST(Database, EmptyQuery) {
    const KeyframeDatabase db;
    EXPECT_TRUE(db.query(sparse({{1, 1.0}}), 5, 4, 0.0, 2).empty());
}

TEST(Database, SelfRanksFirst) {
    std::mt19937_64 rng(4);
    KeyframeDatabase db;
    const BowVector v = random_vector(rng, 128, 20);
    db.add(0, 0, random_vector(rng, 128, 20));
    db.add(10, 1, v);
    db.add(20, 2, random_vector(rng, 128, 20));
    const auto res = db.query(v, 5, 4, 0.0, 2);
    ASSERT_FALSE(res.empty());
    EXPECT_EQ(res[0].keyframe_id, 10);
    EXPECT_NEAR(res[0].score, 1.0, 1e-12);
}

TEST(Database, TopKAndThreshold) {
    // Candidates scoring 0.7 and 0.4 with s_min 0.5 and K 1.
    KeyframeDatabase db;
    db.add(0, 0, sparse({{1, 0.7}, {2, 0.3}}));
    db.add(1, 1, sparse({{1, 0.4}, {3, 0.6}}));
    const auto res = db.query(sparse({{1, 1.0}}), 5, 1, 0.5, 2);
    ASSERT_EQ(res.size(), 1u);
    EXPECT_EQ(res[0].keyframe_id, 0);
    EXPECT_NEAR(res[0].score, 0.7, 1e-12);
}

TEST(Database, MinimumDistanceRespected) {
    KeyframeDatabase db;
    const BowVector v = sparse({{1, 1.0}});
    db.add(0, 3, v);
    db.add(1, 4, v);
    db.add(2, 2, v);
    db.add(3, 6, v);
    const auto res = db.query(v, 4, 10, 0.0, 2);
    std::vector<int> ids;
    for (const auto& c : res) ids.push_back(c.submap_id);
    std::sort(ids.begin(), ids.end());
    EXPECT_EQ(ids, (std::vector<int>{2, 6}));
}

TEST(Database, InvertedIndexMatchesBruteForce) {
    std::mt19937_64 rng(5);
    KeyframeDatabase db;
    std::vector<BowVector> stored;
    for (int i = 0; i < 100; ++i) {
        stored.push_back(random_vector(rng, 256, 25));
        db.add(i, i, stored.back());
    }
    for (int q = 0; q < 20; ++q) {
        const BowVector v = random_vector(rng, 256, 25);
        const auto res = db.query(v, 200, 100, -1.0, 0);
        ASSERT_EQ(res.size(), 100u);
        for (const auto& c : res) EXPECT_NEAR(c.score, similarity(v, stored[c.keyframe_id]), 1e-12);
        for (std::size_t i = 1; i < res.size(); ++i) EXPECT_GE(res[i - 1].score, res[i].score);
    }
}

TEST(Database, AddingKeyframesKeepsEarlierScores) {
    std::mt19937_64 rng(6);
    KeyframeDatabase db;
    for (int i = 0; i < 10; ++i) db.add(i, i, random_vector(rng, 64, 10));
    const BowVector q = random_vector(rng, 64, 10);
    const auto before = db.query(q, 100, 10, -1.0, 0);
    for (int i = 10; i < 20; ++i) db.add(i, i, random_vector(rng, 64, 10));
    const auto after = db.query(q, 100, 20, -1.0, 0);
    for (const auto& b : before) {
        const auto it = std::find_if(after.begin(), after.end(), [&](const auto& a) { return a.keyframe_id == b.keyframe_id; });
        ASSERT_NE(it, after.end());
        EXPECT_EQ(it->score, b.score);
    }
}

TEST(Database, SnapshotRoundTrip) {
    std::mt19937_64 rng(7);
    KeyframeDatabase db;
    for (int i = 0; i < 15; ++i) db.add(i * 10, i, random_vector(rng, 4096, 30));
    const auto path = std::filesystem::temp_directory_path() / "sslam_bow.db";
    db.save(path);
    const KeyframeDatabase back = KeyframeDatabase::load(path);
    ASSERT_EQ(back.size(), db.size());
    const BowVector q = random_vector(rng, 4096, 30);
    const auto a = db.query(q, 50, 15, -1.0, 0), b = back.query(q, 50, 15, -1.0, 0);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].keyframe_id, b[i].keyframe_id);
        EXPECT_EQ(a[i].score, b[i].score);
    }
}

TEST(Database, CorruptSnapshotThrows) {
    const auto path = std::filesystem::temp_directory_path() / "sslam_bow_bad.db";
    {
        std::ofstream os(path, std::ios::binary);
        os << "nope";
    }
    EXPECT_THROW(KeyframeDatabase::load(path), FormatError);
}
