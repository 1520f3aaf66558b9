#pragma once

#include "cadrec/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace cadrec {

// Exact nearest-neighbor index over a fixed 3D point set.
// Ties (equal squared distances) are broken by the lowest point index,
// so results match a brute-force argmin scan exactly.
class KdIndex {
public:
    KdIndex() = default;

    explicit KdIndex(std::vector<Vec3> points) : points_(std::move(points)) {
        if (points_.empty()) return;
        order_.resize(points_.size());
        std::iota(order_.begin(), order_.end(), std::uint32_t{0});
        nodes_.reserve(2 * points_.size());
        root_ = build(0, static_cast<std::uint32_t>(order_.size()));
    }

    std::size_t size() const { return points_.size(); }
    const std::vector<Vec3>& points() const { return points_; }

    struct Hit {
        std::uint32_t index = 0;
        double dist2 = std::numeric_limits<double>::infinity();
    };

    Hit nearest(const Vec3& q) const {
        Hit best;
        if (!points_.empty()) search(root_, q, best);
        return best;
    }

    // k nearest hits, sorted by (dist2, index).
    std::vector<Hit> knn(const Vec3& q, std::size_t k) const {
        std::vector<Hit> heap;
        if (k == 0 || points_.empty()) return heap;
        search_knn(root_, q, k, heap);
        std::sort(heap.begin(), heap.end(), [](const Hit& a, const Hit& b) {
            return a.dist2 != b.dist2 ? a.dist2 < b.dist2 : a.index < b.index;
        });
        return heap;
    }

    // All indices with |p - q| <= radius.
    std::vector<std::uint32_t> radius(const Vec3& q, double r) const {
        std::vector<std::uint32_t> out;
        if (!points_.empty()) search_radius(root_, q, r * r, out);
        return out;
    }

private:
    static constexpr std::uint32_t kLeafSize = 12;
    static constexpr std::uint32_t kNil = 0xffffffffu;

    struct Node {
        double split = 0.0;
        std::uint32_t axis = 0;
        std::uint32_t left = kNil, right = kNil;
        std::uint32_t begin = 0, end = 0;  // leaf range into order_
        bool leaf = false;
    };

    std::uint32_t build(std::uint32_t begin, std::uint32_t end) {
        Node node;
        if (end - begin <= kLeafSize) {
            node.leaf = true;
            node.begin = begin;
            node.end = end;
            nodes_.push_back(node);
            return static_cast<std::uint32_t>(nodes_.size() - 1);
        }
        Vec3 lo = points_[order_[begin]], hi = lo;
        for (std::uint32_t i = begin + 1; i < end; ++i) {
            lo = lo.cwiseMin(points_[order_[i]]);
            hi = hi.cwiseMax(points_[order_[i]]);
        }
        Vec3 extent = hi - lo;
        std::uint32_t axis = 0;
        if (extent[1] > extent[axis]) axis = 1;
        if (extent[2] > extent[axis]) axis = 2;
        const std::uint32_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) {
                             double pa = points_[a][axis], pb = points_[b][axis];
                             return pa != pb ? pa < pb : a < b;
                         });
        node.axis = axis;
        node.split = points_[order_[mid]][axis];
        nodes_.push_back(node);
        const std::uint32_t self = static_cast<std::uint32_t>(nodes_.size() - 1);
        const std::uint32_t left = build(begin, mid);
        const std::uint32_t right = build(mid, end);
        nodes_[self].left = left;
        nodes_[self].right = right;
        return self;
    }

    static bool better(double d2, std::uint32_t idx, const Hit& best) {
        return d2 < best.dist2 || (d2 == best.dist2 && idx < best.index);
    }

    void search(std::uint32_t ni, const Vec3& q, Hit& best) const {
        const Node& node = nodes_[ni];
        if (node.leaf) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const std::uint32_t idx = order_[i];
                const double d2 = (points_[idx] - q).squaredNorm();
                if (better(d2, idx, best)) best = {idx, d2};
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const std::uint32_t first = delta < 0.0 ? node.left : node.right;
        const std::uint32_t second = delta < 0.0 ? node.right : node.left;
        search(first, q, best);
        // <= keeps equal-distance candidates reachable for the tie rule
        if (delta * delta <= best.dist2) search(second, q, best);
    }

    void search_knn(std::uint32_t ni, const Vec3& q, std::size_t k, std::vector<Hit>& heap) const {
        auto cmp = [](const Hit& a, const Hit& b) {
            return a.dist2 != b.dist2 ? a.dist2 < b.dist2 : a.index < b.index;
        };
        const Node& node = nodes_[ni];
        if (node.leaf) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const std::uint32_t idx = order_[i];
                const double d2 = (points_[idx] - q).squaredNorm();
                const Hit h{idx, d2};
                if (heap.size() < k) {
                    heap.push_back(h);
                    std::push_heap(heap.begin(), heap.end(), cmp);
                } else if (cmp(h, heap.front())) {
                    std::pop_heap(heap.begin(), heap.end(), cmp);
                    heap.back() = h;
                    std::push_heap(heap.begin(), heap.end(), cmp);
                }
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const std::uint32_t first = delta < 0.0 ? node.left : node.right;
        const std::uint32_t second = delta < 0.0 ? node.right : node.left;
        search_knn(first, q, k, heap);
        const double worst =
            heap.size() < k ? std::numeric_limits<double>::infinity() : heap.front().dist2;
        if (delta * delta <= worst) search_knn(second, q, k, heap);
    }

    void search_radius(std::uint32_t ni, const Vec3& q, double r2,
                       std::vector<std::uint32_t>& out) const {
        const Node& node = nodes_[ni];
        if (node.leaf) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const std::uint32_t idx = order_[i];
                if ((points_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const std::uint32_t first = delta < 0.0 ? node.left : node.right;
        const std::uint32_t second = delta < 0.0 ? node.right : node.left;
        search_radius(first, q, r2, out);
        if (delta * delta <= r2) search_radius(second, q, r2, out);
    }

    std::vector<Vec3> points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
    std::uint32_t root_ = 0;
};

}  // namespace cadrec
