#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace sslam {

/// Static kd-tree over fixed-dimension points. Queries are exact.
template <typename S, int Dim>
class KdTree {
public:
    using Point = Eigen::Matrix<S, Dim, 1>;
    using Matrix = Eigen::Matrix<S, Dim, Eigen::Dynamic>;

    KdTree() = default;

    template <typename Vec>
    explicit KdTree(std::span<const Vec> points, int leaf_size = 12) : leaf_size_(leaf_size) {
        data_.resize(Dim, static_cast<Eigen::Index>(points.size()));
        for (std::size_t i = 0; i < points.size(); ++i) {
            data_.col(static_cast<Eigen::Index>(i)) = points[i].template cast<S>();
        }
        build();
    }

    explicit KdTree(Matrix points, int leaf_size = 12) : data_(std::move(points)), leaf_size_(leaf_size) {
        build();
    }

    std::size_t size() const { return static_cast<std::size_t>(data_.cols()); }
    bool empty() const { return data_.cols() == 0; }
    auto point(std::size_t i) const { return data_.col(static_cast<Eigen::Index>(i)); }

    /// Indices (ascending) of points within `radius` of q, with squared distances.
    void radius_search(const Point& q, S radius, std::vector<int>& indices,
                       std::vector<S>* sq_dists = nullptr) const {
        indices.clear();
        if (sq_dists) sq_dists->clear();
        if (nodes_.empty()) return;
        const S r2 = radius * radius;
        radius_recurse(0, q, r2, indices, sq_dists);
        if (indices.size() > 1) {
            std::vector<int> order(indices.size());
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) { return indices[a] < indices[b]; });
            std::vector<int> idx(indices.size());
            std::vector<S> d;
            for (std::size_t i = 0; i < order.size(); ++i) idx[i] = indices[order[i]];
            if (sq_dists) {
                d.resize(order.size());
                for (std::size_t i = 0; i < order.size(); ++i) d[i] = (*sq_dists)[order[i]];
                *sq_dists = std::move(d);
            }
            indices = std::move(idx);
        }
    }

    std::vector<int> radius_search(const Point& q, S radius) const {
        std::vector<int> out;
        radius_search(q, radius, out);
        return out;
    }

    /// k nearest neighbors sorted by distance (ties by index).
    void knn_search(const Point& q, int k, std::vector<int>& indices, std::vector<S>& sq_dists) const {
        indices.clear();
        sq_dists.clear();
        if (nodes_.empty() || k <= 0) return;
        Heap heap;
        heap.k = std::min<std::size_t>(static_cast<std::size_t>(k), size());
        knn_recurse(0, q, heap);
        std::sort(heap.items.begin(), heap.items.end());
        for (const auto& [d, i] : heap.items) {
            indices.push_back(i);
            sq_dists.push_back(d);
        }
    }

    /// Nearest neighbor index, or -1 for an empty tree.
    int nearest(const Point& q, S* sq_dist = nullptr) const {
        if (nodes_.empty()) return -1;
        Heap heap;
        heap.k = 1;
        knn_recurse(0, q, heap);
        if (sq_dist) *sq_dist = heap.items.front().first;
        return heap.items.front().second;
    }

private:
    struct Node {
        int begin = 0, end = 0;  // range into perm_ for leaves
        int split_dim = -1;      // -1 marks a leaf
        S split = S(0);
        int left = -1, right = -1;
    };

    struct Heap {
        std::size_t k = 1;
        std::vector<std::pair<S, int>> items;  // max-heap on distance
        S worst() const {
            return items.size() < k ? std::numeric_limits<S>::infinity() : items.front().first;
        }
        void push(S d, int i) {
            if (items.size() < k) {
                items.emplace_back(d, i);
                std::push_heap(items.begin(), items.end());
            } else if (std::make_pair(d, i) < items.front()) {
                std::pop_heap(items.begin(), items.end());
                items.back() = {d, i};
                std::push_heap(items.begin(), items.end());
            }
        }
    };

    void build() {
        nodes_.clear();
        perm_.resize(size());
        std::iota(perm_.begin(), perm_.end(), 0);
        if (!perm_.empty()) build_node(0, static_cast<int>(perm_.size()));
    }

    int build_node(int begin, int end) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{begin, end});
        if (end - begin <= leaf_size_) return id;

        Point lo = data_.col(perm_[begin]);
        Point hi = lo;
        for (int i = begin + 1; i < end; ++i) {
            lo = lo.cwiseMin(data_.col(perm_[i]));
            hi = hi.cwiseMax(data_.col(perm_[i]));
        }
        int dim;
        const S extent = (hi - lo).maxCoeff(&dim);
        if (extent <= S(0)) return id;  // all coincident

        const int mid = (begin + end) / 2;
        std::nth_element(perm_.begin() + begin, perm_.begin() + mid, perm_.begin() + end,
                         [&](int a, int b) { return data_(dim, a) < data_(dim, b); });
        const S split = data_(dim, perm_[mid]);
        nodes_[id].split_dim = dim;
        nodes_[id].split = split;
        const int l = build_node(begin, mid);
        const int r = build_node(mid, end);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    void radius_recurse(int id, const Point& q, S r2, std::vector<int>& out, std::vector<S>* d2) const {
        const Node& n = nodes_[id];
        if (n.split_dim < 0) {
            for (int i = n.begin; i < n.end; ++i) {
                const int p = perm_[i];
                const S d = (data_.col(p) - q).squaredNorm();
                if (d <= r2) {
                    out.push_back(p);
                    if (d2) d2->push_back(d);
                }
            }
            return;
        }
        const S diff = q(n.split_dim) - n.split;
        const int near = diff < S(0) ? n.left : n.right;
        const int far = diff < S(0) ? n.right : n.left;
        radius_recurse(near, q, r2, out, d2);
        if (diff * diff <= r2) radius_recurse(far, q, r2, out, d2);
    }

    void knn_recurse(int id, const Point& q, Heap& heap) const {
        const Node& n = nodes_[id];
        if (n.split_dim < 0) {
            for (int i = n.begin; i < n.end; ++i) {
                const int p = perm_[i];
                heap.push((data_.col(p) - q).squaredNorm(), p);
            }
            return;
        }
        const S diff = q(n.split_dim) - n.split;
        const int near = diff < S(0) ? n.left : n.right;
        const int far = diff < S(0) ? n.right : n.left;
        knn_recurse(near, q, heap);
        if (diff * diff <= heap.worst()) knn_recurse(far, q, heap);
    }

    Matrix data_;
    int leaf_size_ = 12;
    std::vector<int> perm_;
    std::vector<Node> nodes_;
};

/// Spatial index over 3-D positions.
using SpatialIndex = KdTree<double, 3>;

}  // namespace sslam
