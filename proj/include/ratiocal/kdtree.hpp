#pragma once

// Exact k-nearest-neighbor search over a static point set (Euclidean).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "ratiocal/error.hpp"

namespace ratiocal {

struct Neighbor {
  double distance;
  std::size_t index;
};

class KdTree {
 public:
  static constexpr std::size_t kLeafSize = 16;

  KdTree() = default;

  // `points` is row-major, n x dims. The tree keeps its own copy.
  KdTree(std::vector<double> points, std::size_t dims)
      : points_(std::move(points)), dims_(dims) {
    if (dims_ == 0) throw InvalidInput("kd-tree needs at least one dimension");
    if (points_.size() % dims_ != 0)
      throw InvalidInput("point block is not a multiple of the dimension");
    order_.resize(points_.size() / dims_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!order_.empty()) {
      nodes_.reserve(2 * order_.size() / kLeafSize + 1);
      build(0, order_.size());
    }
  }

  std::size_t size() const { return order_.size(); }
  std::size_t dims() const { return dims_; }
  std::span<const double> point(std::size_t i) const {
    return {points_.data() + i * dims_, dims_};
  }
  const std::vector<double>& points() const { return points_; }

  // The k stored points closest to `query`, nearest first. Duplicate points
  // are returned individually. Safe to call concurrently.
  std::vector<Neighbor> nearest(std::span<const double> query,
                                std::size_t k) const {
    if (query.size() != dims_)
      throw InvalidInput("query dimension does not match the tree");
    k = std::min(k, size());
    std::vector<Neighbor> out;
    if (k == 0) return out;

    Heap heap;
    heap.reserve(k);
    search(0, query, k, heap);

    out.reserve(heap.size());
    std::sort_heap(heap.begin(), heap.end(), HeapLess{});
    for (const auto& [d2, idx] : heap) out.push_back({std::sqrt(d2), idx});
    return out;
  }

 private:
  struct Node {
    std::size_t begin, end;  // range into order_
    std::size_t left = 0, right = 0;  // 0 = leaf (root is never a child)
    std::size_t axis = 0;
    double split = 0.0;
  };

  using Entry = std::pair<double, std::size_t>;  // squared distance, index
  using Heap = std::vector<Entry>;
  struct HeapLess {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.first < b.first || (a.first == b.first && a.second < b.second);
    }
  };

  double coord(std::size_t i, std::size_t axis) const {
    return points_[i * dims_ + axis];
  }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    // Split on the widest dimension at the median.
    std::size_t axis = 0;
    double widest = -1.0;
    for (std::size_t a = 0; a < dims_; ++a) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t i = begin; i < end; ++i) {
        lo = std::min(lo, coord(order_[i], a));
        hi = std::max(hi, coord(order_[i], a));
      }
      if (hi - lo > widest) {
        widest = hi - lo;
        axis = a;
      }
    }
    if (widest <= 0.0) return id;  // all points coincide

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](std::size_t a, std::size_t b) {
                       return coord(a, axis) < coord(b, axis);
                     });
    const double split = coord(order_[mid], axis);
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    return id;
  }

  void offer(Heap& heap, std::size_t k, double d2, std::size_t idx) const {
    if (heap.size() < k) {
      heap.emplace_back(d2, idx);
      std::push_heap(heap.begin(), heap.end(), HeapLess{});
    } else if (HeapLess{}(Entry{d2, idx}, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), HeapLess{});
      heap.back() = {d2, idx};
      std::push_heap(heap.begin(), heap.end(), HeapLess{});
    }
  }

  void search(std::size_t id, std::span<const double> q, std::size_t k,
              Heap& heap) const {
    const Node& node = nodes_[id];
    if (node.left == 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const double* p = points_.data() + idx * dims_;
        double d2 = 0.0;
        for (std::size_t a = 0; a < dims_; ++a) {
          const double diff = p[a] - q[a];
          d2 += diff * diff;
        }
        offer(heap, k, d2, idx);
      }
      return;
    }
    // Points equal to the split value can sit on either side, so the plane
    // test below is inclusive.
    const double delta = q[node.axis] - node.split;
    const std::size_t near = delta < 0.0 ? node.left : node.right;
    const std::size_t far = delta < 0.0 ? node.right : node.left;
    search(near, q, k, heap);
    if (heap.size() < k || delta * delta <= heap.front().first)
      search(far, q, k, heap);
  }

  std::vector<double> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t dims_ = 0;
};

}  // namespace ratiocal
