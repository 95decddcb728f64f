#pragma once

// Dependency-tree algorithms over 0-based token indices.

#include <span>
#include <vector>

#include "relprobe/corpus.hpp"

namespace relprobe {

struct DepTree {
  int root = 0;
  std::vector<int> parent;                 // -1 for the root
  std::vector<std::vector<int>> children;  // ascending

  int size() const { return static_cast<int>(parent.size()); }
};

// Builds a tree from 1-based parent indices (0 marks the root).
// Throws Error on missing/multiple roots, out-of-range parents or cycles.
DepTree build_tree(std::span<const int> dep_head);

// Inverse of build_tree.
std::vector<int> to_dep_head(const DepTree& tree);

// Edges from the root to every node.
std::vector<int> node_depths(const DepTree& tree);

// Maximum number of edges on a root-to-leaf path; 0 for a single node.
int tree_depth(const DepTree& tree);

// The token of `span` whose parent lies outside the span. With several such
// tokens the leftmost wins; with none, span.end.
int span_root(const DepTree& tree, Span span);
// Same rule evaluated directly on 1-based dep_head values.
int span_root(std::span<const int> dep_head, Span span);

struct SdpResult {
  std::vector<int> path;  // from the head span root to the tail span root
  int lca = 0;
  int depth = 0;          // max edges from lca to either endpoint
};

SdpResult sdp(const DepTree& tree, Span head, Span tail);
SdpResult sdp_between(const DepTree& tree, int from, int to);

inline constexpr int kUnboundedK = -1;

// Undirected tree distance from the nearest of `sources` to every node.
std::vector<int> tree_distances(const DepTree& tree, std::span<const int> sources);

// Ascending token indices within distance k of the path; k = kUnboundedK keeps all.
std::vector<int> prune(const DepTree& tree, const SdpResult& path, int k);

}  // namespace relprobe
