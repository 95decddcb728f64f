#include "relprobe/deptree.hpp"

#include <algorithm>
#include <deque>
#include <string>

#include "relprobe/error.hpp"

namespace relprobe {

DepTree build_tree(std::span<const int> dep_head) {
  const int n = static_cast<int>(dep_head.size());
  if (n == 0) throw Error("cannot build a dependency tree over zero tokens");

  DepTree tree;
  tree.parent.assign(n, -1);
  tree.children.assign(n, {});
  std::vector<int> roots;
  for (int i = 0; i < n; ++i) {
    int h = dep_head[i];
    if (h < 0 || h > n) {
      throw Error("dep_head out of range at token " + std::to_string(i) + ": " + std::to_string(h));
    }
    if (h == 0) {
      roots.push_back(i);
    } else {
      tree.parent[i] = h - 1;
      tree.children[h - 1].push_back(i);
    }
  }
  if (roots.empty()) throw Error("dependency tree has no root token");
  if (roots.size() > 1) {
    std::string which;
    for (int r : roots) which += (which.empty() ? "" : ",") + std::to_string(r);
    throw Error("dependency tree has multiple roots at tokens " + which);
  }
  tree.root = roots.front();

  // Every node must reach the root; otherwise it sits on a cycle or hangs off one.
  std::vector<char> reaches(n, 0);
  reaches[tree.root] = 1;
  for (int i = 0; i < n; ++i) {
    std::vector<int> walk;
    int cur = i;
    while (!reaches[cur]) {
      if (std::find(walk.begin(), walk.end(), cur) != walk.end() ||
          static_cast<int>(walk.size()) > n) {
        throw Error("dependency cycle through token " + std::to_string(cur));
      }
      walk.push_back(cur);
      cur = tree.parent[cur];
    }
    for (int w : walk) reaches[w] = 1;
  }
  return tree;
}

std::vector<int> to_dep_head(const DepTree& tree) {
  std::vector<int> heads(tree.parent.size());
  for (size_t i = 0; i < heads.size(); ++i) heads[i] = tree.parent[i] + 1;
  return heads;
}

std::vector<int> node_depths(const DepTree& tree) {
  std::vector<int> depth(tree.size(), 0);
  std::deque<int> queue{tree.root};
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    for (int c : tree.children[u]) {
      depth[c] = depth[u] + 1;
      queue.push_back(c);
    }
  }
  return depth;
}

int tree_depth(const DepTree& tree) {
  auto depth = node_depths(tree);
  return *std::max_element(depth.begin(), depth.end());
}

int span_root(const DepTree& tree, Span span) {
  for (int i = span.start; i <= span.end; ++i) {
    int p = tree.parent[i];
    if (p < 0 || !span.contains(p)) return i;
  }
  return span.end;
}

int span_root(std::span<const int> dep_head, Span span) {
  for (int i = span.start; i <= span.end; ++i) {
    int p = dep_head[i] - 1;
    if (p < 0 || !span.contains(p)) return i;
  }
  return span.end;
}

SdpResult sdp_between(const DepTree& tree, int from, int to) {
  auto depth = node_depths(tree);
  std::vector<int> up_from{from};
  std::vector<int> up_to{to};
  int a = from;
  int b = to;
  while (depth[a] > depth[b]) up_from.push_back(a = tree.parent[a]);
  while (depth[b] > depth[a]) up_to.push_back(b = tree.parent[b]);
  while (a != b) {
    up_from.push_back(a = tree.parent[a]);
    up_to.push_back(b = tree.parent[b]);
  }

  SdpResult result;
  result.lca = a;
  const int edges_from = static_cast<int>(up_from.size()) - 1;
  const int edges_to = static_cast<int>(up_to.size()) - 1;
  result.depth = std::max(edges_from, edges_to);
  result.path = std::move(up_from);
  for (int i = edges_to - 1; i >= 0; --i) result.path.push_back(up_to[i]);
  return result;
}

SdpResult sdp(const DepTree& tree, Span head, Span tail) {
  return sdp_between(tree, span_root(tree, head), span_root(tree, tail));
}

std::vector<int> tree_distances(const DepTree& tree, std::span<const int> sources) {
  const int n = tree.size();
  std::vector<int> dist(n, -1);
  std::deque<int> queue;
  for (int s : sources) {
    if (dist[s] < 0) {
      dist[s] = 0;
      queue.push_back(s);
    }
  }
  auto visit = [&](int from, int v) {
    if (v >= 0 && dist[v] < 0) {
      dist[v] = dist[from] + 1;
      queue.push_back(v);
    }
  };
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    visit(u, tree.parent[u]);
    for (int c : tree.children[u]) visit(u, c);
  }
  return dist;
}

std::vector<int> prune(const DepTree& tree, const SdpResult& path, int k) {
  std::vector<int> kept;
  if (k == kUnboundedK) {
    kept.resize(tree.size());
    for (int i = 0; i < tree.size(); ++i) kept[i] = i;
    return kept;
  }
  if (k < 0) throw Error("pruning distance must be >= 0");
  auto dist = tree_distances(tree, path.path);
  for (int i = 0; i < tree.size(); ++i) {
    if (dist[i] >= 0 && dist[i] <= k) kept.push_back(i);
  }
  return kept;
}

}  // namespace relprobe
