#ifndef VTOPO_NEIGHBOR_INDEX_HPP
#define VTOPO_NEIGHBOR_INDEX_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "types.hpp"

namespace vtopo {

/// k-d tree over site positions answering exact k-nearest queries in the
/// Euclidean metric. Ties at equal distance go to the lower site index, and
/// results come back sorted by site index.
///
/// Immutable after construction; concurrent queries are safe.
template <int Dim>
class NeighborIndex
{
public:
  NeighborIndex() = default;

  explicit NeighborIndex(std::span<const Vec<Dim>> points, std::uint64_t generation = 0)
      : points_(points.begin(), points.end()), generation_{generation}
  {
    if (points_.empty()) throw std::invalid_argument("NeighborIndex: no sites");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.size() / leaf_size + 2);
    build_node(0, order_.size(), 0);
  }

  std::size_t size() const noexcept { return points_.size(); }
  std::uint64_t build_generation() const noexcept { return generation_; }

  /// min(k, size()) nearest site indices, ascending by index.
  std::vector<int> query(const Vec<Dim>& p, int k) const
  {
    std::vector<int> out;
    query(p, k, out);
    return out;
  }

  void query(const Vec<Dim>& p, int k, std::vector<int>& out) const
  {
    if (k < 1) throw std::invalid_argument("NeighborIndex: k must be >= 1");
    out.clear();
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), points_.size());
    if (kk == points_.size()) {
      out.resize(kk);
      std::iota(out.begin(), out.end(), 0);
      return;
    }
    std::vector<Candidate> heap;
    heap.reserve(kk + 1);
    search(0, p, kk, heap);
    out.reserve(heap.size());
    for (const auto& c : heap) out.push_back(c.index);
    std::sort(out.begin(), out.end());
  }

private:
  static constexpr std::size_t leaf_size = 8;

  struct Node
  {
    std::size_t begin, end;  // range into order_
    int axis = -1;           // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  struct Candidate
  {
    double dist2;
    int index;
    bool operator<(const Candidate& o) const noexcept
    {
      return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
  };

  std::size_t build_node(std::size_t begin, std::size_t end, int depth)
  {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= leaf_size) return id;

    // split along the axis of largest extent
    Vec<Dim> lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (std::size_t i = begin; i < end; ++i)
      for (int a = 0; a < Dim; ++a) {
        lo[a] = std::min(lo[a], points_[order_[i]][a]);
        hi[a] = std::max(hi[a], points_[order_[i]][a]);
      }
    int axis = depth % Dim;
    for (int a = 0; a < Dim; ++a)
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];

    const std::size_t left = build_node(begin, mid, depth + 1);
    const std::size_t right = build_node(mid, end, depth + 1);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(std::size_t id, const Vec<Dim>& p, std::size_t k, std::vector<Candidate>& heap) const
  {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const int idx = order_[i];
        const Candidate c{squared_norm<Dim>(points_[idx] - p), idx};
        if (heap.size() < k) {
          heap.push_back(c);
          std::push_heap(heap.begin(), heap.end());
        } else if (c < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = c;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double diff = p[node.axis] - node.split;
    const std::size_t near = diff < 0.0 ? node.left : node.right;
    const std::size_t far = diff < 0.0 ? node.right : node.left;
    search(near, p, k, heap);
    // prune only when strictly farther: an equal-distance site may carry a lower index
    if (heap.size() < k || diff * diff <= heap.front().dist2) search(far, p, k, heap);
  }

  std::vector<Vec<Dim>> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  std::uint64_t generation_ = 0;
};

template <int Dim>
NeighborIndex<Dim> build_index(const SiteSet<Dim>& sites, std::uint64_t generation = 0)
{
  sites.validate();
  return NeighborIndex<Dim>(std::span<const Vec<Dim>>(sites.positions), generation);
}

} // namespace vtopo

#endif // VTOPO_NEIGHBOR_INDEX_HPP
