#include <gtest/gtest.h>

#include <algorithm>
#include <queue>
#include <random>

#include "fixtures.hpp"
#include "relprobe/deptree.hpp"
#include "relprobe/error.hpp"

using namespace relprobe;

namespace {

constexpr int kInf = 1 << 20;

// All-pairs undirected distances by Floyd-Warshall.
std::vector<std::vector<int>> floyd(const std::vector<int>& dep_head) {
  const int n = static_cast<int>(dep_head.size());
  std::vector<std::vector<int>> d(n, std::vector<int>(n, kInf));
  for (int i = 0; i < n; ++i) {
    d[i][i] = 0;
    if (dep_head[i] > 0) d[i][dep_head[i] - 1] = d[dep_head[i] - 1][i] = 1;
  }
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

std::vector<int> bfs_from(const std::vector<int>& dep_head, int src) {
  const int n = static_cast<int>(dep_head.size());
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < n; ++i) {
    if (dep_head[i] > 0) {
      adj[i].push_back(dep_head[i] - 1);
      adj[dep_head[i] - 1].push_back(i);
    }
  }
  std::vector<int> dist(n, kInf);
  std::queue<int> q;
  dist[src] = 0;
  q.push(src);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (dist[v] == kInf) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
    }
  }
  return dist;
}

int root_of(const std::vector<int>& dep_head) {
  return static_cast<int>(std::find(dep_head.begin(), dep_head.end(), 0) - dep_head.begin());
}

}  // namespace

TEST(DepTree, BuildSmall) {
  const std::vector<int> h{2, 0, 2};
  DepTree t = build_tree(h);
  EXPECT_EQ(t.root, 1);
  EXPECT_EQ(t.children[1], (std::vector<int>{0, 2}));
  EXPECT_EQ(to_dep_head(t), h);

  const std::vector<int> one{0};
  EXPECT_EQ(build_tree(one).size(), 1);
  EXPECT_EQ(tree_depth(build_tree(one)), 0);
}

TEST(DepTree, BuildErrors) {
  const std::vector<int> no_root{2, 1};
  try {
    build_tree(no_root);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no root"), std::string::npos) << e.what();
  }
  const std::vector<int> two_roots{0, 0, 1};
  EXPECT_THROW(build_tree(two_roots), Error);
  const std::vector<int> cycle{0, 3, 2};
  EXPECT_THROW(build_tree(cycle), Error);
  const std::vector<int> range{0, 5};
  EXPECT_THROW(build_tree(range), Error);
}

TEST(DepTree, DepthChain) {
  const std::vector<int> chain{0, 1, 2};
  EXPECT_EQ(tree_depth(build_tree(chain)), 2);
}

TEST(DepTree, DepthMatchesBfsOracle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    auto h = fixtures::random_dep_head(rng, 12);
    auto dist = bfs_from(h, root_of(h));
    EXPECT_EQ(tree_depth(build_tree(h)), *std::max_element(dist.begin(), dist.end()));
    EXPECT_EQ(node_depths(build_tree(h)), dist);
  }
}

TEST(DepTree, SpanRoot) {
  const std::vector<int> h{2, 3, 0, 3};  // Larry <- Page <- founded -> Google
  DepTree t = build_tree(h);
  EXPECT_EQ(span_root(t, {0, 0}), 0);
  EXPECT_EQ(span_root(t, {0, 1}), 1);
  EXPECT_EQ(span_root(std::span<const int>(h), Span{0, 1}), 1);
  EXPECT_EQ(span_root(t, {0, 3}), 2);
  // Two tokens with outside parents: leftmost wins.
  const std::vector<int> flat{0, 1, 1, 1};
  EXPECT_EQ(span_root(build_tree(flat), {1, 3}), 1);
}

TEST(DepTree, SpanRootDegenerateFallsBackToEnd) {
  const std::vector<int> cyc{2, 1, 0};  // not a tree: evaluated on raw heads
  EXPECT_EQ(span_root(std::span<const int>(cyc), Span{0, 1}), 1);
}

TEST(DepTree, SdpBayer) {
  const std::vector<int> h{2, 0, 2};
  auto r = sdp(build_tree(h), {0, 0}, {2, 2});
  EXPECT_EQ(r.path, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(r.lca, 1);
  EXPECT_EQ(r.depth, 1);
}

TEST(DepTree, SdpAncestor) {
  const std::vector<int> chain{0, 1, 2, 3, 4};
  auto r = sdp(build_tree(chain), {1, 1}, {4, 4});
  EXPECT_EQ(r.lca, 1);
  EXPECT_EQ(r.depth, 3);
  EXPECT_EQ(r.path, (std::vector<int>{1, 2, 3, 4}));
}

TEST(DepTree, SdpMatchesFloydWarshall) {
  std::mt19937_64 rng(500);
  for (int trial = 0; trial < 500; ++trial) {
    std::uniform_int_distribution<int> size(2, 30);
    const int n = size(rng);
    auto h = fixtures::random_dep_head(rng, n);
    DepTree t = build_tree(h);
    auto d = floyd(h);
    std::uniform_int_distribution<int> pick(0, n - 1);
    int a = pick(rng), b = pick(rng);
    auto r = sdp_between(t, a, b);
    ASSERT_EQ(static_cast<int>(r.path.size()), d[a][b] + 1);
    EXPECT_EQ(r.path.front(), a);
    EXPECT_EQ(r.path.back(), b);
    for (size_t i = 0; i < r.path.size(); ++i) {
      EXPECT_EQ(d[a][r.path[i]], static_cast<int>(i));
      EXPECT_EQ(d[r.path[i]][b], d[a][b] - static_cast<int>(i));
    }
    auto depths = node_depths(t);
    EXPECT_EQ(r.depth, std::max(d[r.lca][a], d[r.lca][b]));
    EXPECT_EQ(d[r.lca][a] + d[r.lca][b], d[a][b]);
    for (int v : r.path) EXPECT_GE(depths[v], depths[r.lca]);
    EXPECT_LE(r.depth, tree_depth(t));
    auto back = sdp_between(t, b, a);
    std::reverse(back.path.begin(), back.path.end());
    EXPECT_EQ(back.path, r.path);
  }
}

TEST(DepTree, PruneMatchesBruteForce) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    std::uniform_int_distribution<int> size(2, 25);
    const int n = size(rng);
    auto h = fixtures::random_dep_head(rng, n);
    DepTree t = build_tree(h);
    std::uniform_int_distribution<int> pick(0, n - 1);
    auto r = sdp_between(t, pick(rng), pick(rng));
    std::vector<std::vector<int>> from_path;
    for (int v : r.path) from_path.push_back(bfs_from(h, v));
    std::vector<int> prev;
    for (int k : {0, 1, 2, 3}) {
      std::vector<int> expect;
      for (int v = 0; v < n; ++v) {
        int best = kInf;
        for (const auto& dist : from_path) best = std::min(best, dist[v]);
        if (best <= k) expect.push_back(v);
      }
      auto got = prune(t, r, k);
      EXPECT_EQ(got, expect) << "K=" << k;
      EXPECT_TRUE(std::includes(got.begin(), got.end(), prev.begin(), prev.end()));
      prev = got;
    }
    EXPECT_EQ(static_cast<int>(prune(t, r, kUnboundedK).size()), n);
  }
}

TEST(DepTree, PruneZeroIsPath) {
  const std::vector<int> h{2, 0, 2, 3, 2};
  DepTree t = build_tree(h);
  auto r = sdp(t, {0, 0}, {3, 3});
  auto p = prune(t, r, 0);
  auto path = r.path;
  std::sort(path.begin(), path.end());
  EXPECT_EQ(p, path);
}
