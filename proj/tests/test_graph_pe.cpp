#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "mmgl/graph_pe.hpp"
#include "mmgl/rng.hpp"

using namespace mmgl;
using namespace mmgl::graph_pe;

namespace {

ContextGraph graph_from_edges(std::size_t n,
                              const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  ContextGraph g;
  g.n = n;
  g.adj.assign(n * n, 0);
  for (auto [a, b] : edges) {
    g.adj[a * n + b] = 1;
    g.adj[b * n + a] = 1;
  }
  return g;
}

ContextGraph random_graph(Rng& rng, std::size_t n, double p) {
  ContextGraph g;
  g.n = n;
  g.adj.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < p) {
        g.adj[i * n + j] = 1;
        g.adj[j * n + i] = 1;
      }
  return g;
}

ContextGraph random_tree(Rng& rng, std::size_t n) {
  ContextGraph g;
  g.n = n;
  g.adj.assign(n * n, 0);
  for (std::size_t i = 1; i < n; ++i) {
    std::size_t p = rng.uniform_int(i);
    g.adj[i * n + p] = 1;
    g.adj[p * n + i] = 1;
  }
  return g;
}

double recon_err(const std::vector<double>& m, const EigenResult& e, std::size_t n) {
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t)
        s += e.vectors[i * n + t] * e.values[t] * e.vectors[j * n + t];
      worst = std::max(worst, std::abs(s - m[i * n + j]));
    }
  return worst;
}

double ortho_err(const EigenResult& e, std::size_t n) {
  double worst = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += e.vectors[i * n + a] * e.vectors[i * n + b];
      worst = std::max(worst, std::abs(s - (a == b ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace

TEST_CASE("two-node path laplacian") {
  ContextGraph g = graph_from_edges(2, {{0, 1}});
  auto lap = normalized_laplacian(g);
  CHECK(lap == std::vector<double>{1.0, -1.0, -1.0, 1.0});
}

TEST_CASE("isolated node laplacian is all zero") {
  ContextGraph g = graph_from_edges(1, {});
  CHECK(normalized_laplacian(g) == std::vector<double>{0.0});
  ContextGraph g3 = graph_from_edges(3, {{0, 1}});
  auto lap = normalized_laplacian(g3);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(lap[2 * 3 + j] == 0.0);
    CHECK(lap[j * 3 + 2] == 0.0);
  }
}

TEST_CASE("three-node path laplacian and spectrum") {
  ContextGraph g = graph_from_edges(3, {{0, 1}, {1, 2}});
  auto lap = normalized_laplacian(g);
  double r = -1.0 / std::sqrt(2.0);
  CHECK(std::abs(lap[0 * 3 + 1] - r) < 1e-15);
  CHECK(std::abs(lap[1 * 3 + 2] - r) < 1e-15);
  CHECK(lap[0 * 3 + 2] == 0.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(lap[i * 3 + i] == 1.0);

  EigenResult e = sym_eigendecomp(lap, 3);
  CHECK(std::abs(e.values[0] - 0.0) < 1e-10);
  CHECK(std::abs(e.values[1] - 1.0) < 1e-10);
  CHECK(std::abs(e.values[2] - 2.0) < 1e-10);
}

TEST_CASE("complete graph on three nodes has eigenvalues 0, 1.5, 1.5") {
  ContextGraph g = graph_from_edges(3, {{0, 1}, {1, 2}, {0, 2}});
  auto lap = normalized_laplacian(g);
  EigenResult e = sym_eigendecomp(lap, 3);
  CHECK(std::abs(e.values[0] - 0.0) < 1e-10);
  CHECK(std::abs(e.values[1] - 1.5) < 1e-10);
  CHECK(std::abs(e.values[2] - 1.5) < 1e-10);
  CHECK(recon_err(lap, e, 3) < 1e-10);
  CHECK(ortho_err(e, 3) < 1e-10);
}

TEST_CASE("diagonal input sorts its diagonal with axis eigenvectors") {
  std::vector<double> m = {3, 0, 0, 0, 1, 0, 0, 0, 2};
  EigenResult e = sym_eigendecomp(m, 3);
  CHECK(e.values == std::vector<double>{1, 2, 3});
  for (std::size_t j = 0; j < 3; ++j) {
    int big = 0;
    for (std::size_t i = 0; i < 3; ++i)
      if (std::abs(std::abs(e.vectors[i * 3 + j]) - 1.0) < 1e-10) ++big;
    CHECK(big == 1);
  }
}

TEST_CASE("random symmetric matrices reconstruct with orthonormal eigenvectors") {
  Rng rng(100);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 2 + rng.uniform_int(63);
    std::vector<double> m(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        double x = rng.normal();
        m[i * n + j] = x;
        m[j * n + i] = x;
      }
    EigenResult e = sym_eigendecomp(m, n);
    CHECK(recon_err(m, e, n) < 1e-10);
    CHECK(ortho_err(e, n) < 1e-10);
    CHECK(std::is_sorted(e.values.begin(), e.values.end()));
  }
}

TEST_CASE("asymmetric input is rejected") {
  std::vector<double> m = {1, 2, 2.5, 1};
  CHECK_THROWS_AS(sym_eigendecomp(m, 2), std::invalid_argument);
  CHECK_THROWS_AS(sym_eigendecomp(m, 3), std::invalid_argument);
}

TEST_CASE("laplacian spectra stay in [0,2], connected graphs touch 0 once") {
  Rng rng(101);
  for (int trial = 0; trial < 15; ++trial) {
    std::size_t n = 2 + rng.uniform_int(20);
    ContextGraph g = trial % 2 ? random_tree(rng, n) : random_graph(rng, n, 0.4);
    auto lap = normalized_laplacian(g);
    EigenResult e = sym_eigendecomp(lap, g.n);
    for (double v : e.values) {
      CHECK(v > -1e-10);
      CHECK(v < 2.0 + 1e-10);
    }
    if (trial % 2) {  // trees are connected
      int zeros = 0;
      for (double v : e.values)
        if (std::abs(v) < 1e-10) ++zeros;
      CHECK(zeros == 1);
    }
  }
}

TEST_CASE("two-node path k=1 eigenvector is sign-fixed to [+, -]/sqrt(2)") {
  ContextGraph g = graph_from_edges(2, {{0, 1}});
  auto kv = lpe_kvectors(g, 1);
  double r = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(kv[0] - r) < 1e-10);
  CHECK(std::abs(kv[1] + r) < 1e-10);
}

TEST_CASE("single node gets a zero k-vector at any k") {
  ContextGraph g = graph_from_edges(1, {});
  auto kv = lpe_kvectors(g, 3);
  CHECK(kv == std::vector<double>(3, 0.0));
}

TEST_CASE("small graphs zero-pad the missing eigenvector columns") {
  ContextGraph g = graph_from_edges(2, {{0, 1}});
  auto kv = lpe_kvectors(g, 3);  // only one non-trivial eigenvector exists
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(kv[i * 3 + 0] != 0.0);
    CHECK(kv[i * 3 + 1] == 0.0);
    CHECK(kv[i * 3 + 2] == 0.0);
  }
}

TEST_CASE("relabeling permutes k-vector rows up to per-column sign") {
  // The smallest asymmetric tree: branches of lengths 1, 2, 3 from node 0.
  std::size_t n = 7;
  ContextGraph g =
      graph_from_edges(n, {{0, 1}, {0, 2}, {2, 3}, {0, 4}, {4, 5}, {5, 6}});

  // The test only makes sense on a simple spectrum; guard against ties.
  EigenResult eig = sym_eigendecomp(normalized_laplacian(g), n);
  for (std::size_t i = 1; i < n; ++i) REQUIRE(eig.values[i] - eig.values[i - 1] > 1e-8);

  std::size_t k = 3;
  auto kv = lpe_kvectors(g, k);

  std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};  // new index of old node i
  ContextGraph pg;
  pg.n = n;
  pg.adj.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) pg.adj[perm[i] * n + perm[j]] = g.adj[i * n + j];
  auto pkv = lpe_kvectors(pg, k);

  for (std::size_t col = 0; col < k; ++col) {
    double direct = 0.0, flipped = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double want = kv[i * k + col];
      double got = pkv[perm[i] * k + col];
      direct = std::max(direct, std::abs(got - want));
      flipped = std::max(flipped, std::abs(got + want));
    }
    CHECK(std::min(direct, flipped) < 1e-10);
  }
}

TEST_CASE("lpe mapper output and gradients") {
  ContextGraph g = graph_from_edges(3, {{0, 1}, {1, 2}});
  Rng rng(102);
  encoders::Mapper m = encoders::Mapper::init(rng, 2, 4, 0.3);
  Tensor pe = lpe_pe(g, 2, m, nullptr);
  CHECK(pe.rows() == 3);
  CHECK(pe.cols() == 4);

  Tensor probe = Tensor::randn({4, 1}, rng);
  auto f = [&](Tape* t) { return sum_all(matmul(lpe_pe(g, 2, m, t), probe, t), t); };
  CHECK(max_rel_grad_err({m.weight, m.bias}, f) < 1e-7);
}

TEST_CASE("gnn with identity weights on an isolated node is ReLU of itself") {
  ContextGraph g = graph_from_edges(1, {});
  PEParams p;
  Tensor ident = Tensor::zeros({2, 2});
  ident.at(0, 0) = 1.0;
  ident.at(1, 1) = 1.0;
  p.gnn_w = {ident};
  p.gnn_b = {Tensor::zeros({2})};
  Tensor h = Tensor::from({1, 2}, {0.5, -0.3});
  Tensor out = gnn_pe(h, g, p, 1, nullptr);
  CHECK(out.at(0, 0) == 0.5);
  CHECK(out.at(0, 1) == 0.0);
}

TEST_CASE("gnn star center averages every node") {
  ContextGraph g = graph_from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
  PEParams p;
  Tensor ident = Tensor::zeros({2, 2});
  ident.at(0, 0) = 1.0;
  ident.at(1, 1) = 1.0;
  p.gnn_w = {ident};
  p.gnn_b = {Tensor::zeros({2})};
  Tensor h = Tensor::from({4, 2}, {4, -4, 8, 0, 0, 8, -4, 4});
  Tensor out = gnn_pe(h, g, p, 1, nullptr);
  CHECK(out.at(0, 0) == 2.0);  // mean(4,8,0,-4)
  CHECK(out.at(0, 1) == 2.0);  // ReLU(mean(-4,0,8,4))
  CHECK(out.at(1, 0) == 6.0);  // leaf: mean with the center
  CHECK(out.at(1, 1) == 0.0);  // ReLU(-2)
}

TEST_CASE("gnn is permutation-equivariant") {
  Rng rng(103);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 3 + rng.uniform_int(10);
    std::size_t d = 4;
    ContextGraph g = random_graph(rng, n, 0.5);
    Tensor h = Tensor::randn({n, d}, rng);

    PEConfig cfg{.kind = PEKind::GNN, .gnn_layers = 2};
    Rng prng(55);
    PEParams p = PEParams::init(cfg, d, prng, 0.3);
    Tensor out = gnn_pe(h, g, p, 2, nullptr);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);

    ContextGraph pg;
    pg.n = n;
    pg.adj.assign(n * n, 0);
    Tensor ph = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) pg.adj[perm[i] * n + perm[j]] = g.adj[i * n + j];
      for (std::size_t c = 0; c < d; ++c) ph.at(perm[i], c) = h.at(i, c);
    }
    Tensor pout = gnn_pe(ph, pg, p, 2, nullptr);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c)
        CHECK(std::abs(pout.at(perm[i], c) - out.at(i, c)) < 1e-12);
  }
}

TEST_CASE("gnn gradients reach the embeddings and every layer") {
  Rng rng(104);
  ContextGraph g = graph_from_edges(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  Tensor h = Tensor::randn({4, 3}, rng);
  PEConfig cfg{.kind = PEKind::GNN, .gnn_layers = 2};
  Rng prng(56);
  PEParams p = PEParams::init(cfg, 3, prng, 0.4);
  Tensor probe = Tensor::randn({3, 1}, rng);
  auto f = [&](Tape* t) { return sum_all(matmul(gnn_pe(h, g, p, 2, t), probe, t), t); };
  CHECK(max_rel_grad_err({h, p.gnn_w[0], p.gnn_b[0], p.gnn_w[1], p.gnn_b[1]}, f) < 1e-6);
}

TEST_CASE("sequence_pe returns table prefix rows and trains the table") {
  Rng rng(105);
  Tensor table = Tensor::randn({6, 3}, rng);
  Tensor pe = sequence_pe(4, table, nullptr);
  CHECK(pe.rows() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(pe.at(i, c) == table.at(i, c));

  CHECK(sequence_pe(0, table, nullptr).rows() == 0);
  CHECK_THROWS_AS(sequence_pe(7, table, nullptr), std::out_of_range);

  table.set_requires_grad(true);
  table.zero_grad();
  Tape tape;
  backward_all(sum_all(sequence_pe(2, table, &tape), &tape), tape);
  CHECK(table.grad()[0] == 1.0);
  CHECK(table.grad()[5 * 3] == 0.0);  // untouched row
}

TEST_CASE("context graph from the page neighborhood") {
  using namespace mmgl::graphdoc;
  Vocab v = Vocab::from_tokens({"<oov>", "<pad>", "<bos>", "<eos>", "<sep>", "a", "b"});
  PageGraph page;
  page.page_id = "p";
  page.title_tokens = v.encode("a");
  Node s1{.id = "s1", .kind = NodeKind::Section, .order = 0, .parent_id = "",
          .text_tokens = v.encode("a b")};
  Node s2{.id = "s2", .kind = NodeKind::Section, .order = 1, .parent_id = "",
          .text_tokens = v.encode("b"), .has_summary = true, .summary_tokens = v.encode("a")};
  Node s3{.id = "s3", .kind = NodeKind::Section, .order = 0, .parent_id = "s1",
          .text_tokens = v.encode("a")};
  Node img{.id = "i1", .kind = NodeKind::Image, .order = 0, .parent_id = "s1",
           .text_tokens = v.encode("b"), .image_feature = {1.0}};
  page.nodes = {s1, img, s3, s2};
  page.validate();

  SUBCASE("target only") {
    auto ctx = select_context(page, "s2", ContextRegime::SectionText);
    ContextGraph g = build_context_graph(ctx);
    CHECK(g.n == 1);
    CHECK(g.adj == std::vector<uint8_t>{0});
  }

  SUBCASE("full page wiring") {
    auto ctx = select_context(page, "s2", ContextRegime::PageAll);
    // neighbors: title, s1, i1, s3; target s2 last
    ContextGraph g = build_context_graph(ctx);
    REQUIRE(g.n == 5);
    CHECK(g.edge(0, 1));   // title - root s1
    CHECK(g.edge(0, 4));   // title - root target
    CHECK(g.edge(1, 2));   // s1 - its image
    CHECK(g.edge(1, 3));   // s1 - child s3
    CHECK(!g.edge(2, 3));
    CHECK(!g.edge(1, 4));
    int edges = 0;
    for (uint8_t x : g.adj) edges += x;
    CHECK(edges == 8);  // 4 undirected edges
  }

  SUBCASE("title with two roots forms a star") {
    auto ctx = select_context(page, "s2", ContextRegime::PageText);
    // neighbors: title, s1, s3; target s2
    ContextGraph g = build_context_graph(ctx);
    REQUIRE(g.n == 4);
    CHECK(g.edge(0, 1));
    CHECK(g.edge(0, 3));
    CHECK(g.edge(1, 2));  // s3 keeps its parent edge
    CHECK(!g.edge(0, 2));
  }

  SUBCASE("section with one image is a single edge") {
    auto ctx = select_context(page, "s2", ContextRegime::SectionAll);
    ContextGraph g = build_context_graph(ctx);
    REQUIRE(g.n == 1);  // target has no images of its own here
  }
}

TEST_CASE("pe params init validates and forks deterministically") {
  Rng a(1), b(1);
  PEConfig seq{.kind = PEKind::Sequence, .table_size = 8};
  PEParams p1 = PEParams::init(seq, 4, a, 0.08);
  PEParams p2 = PEParams::init(seq, 4, b, 0.08);
  CHECK(p1.table.data_vec() == p2.table.data_vec());

  PEConfig bad{.kind = PEKind::Sequence, .table_size = 0};
  CHECK_THROWS_AS(PEParams::init(bad, 4, a, 0.08), std::invalid_argument);
  PEConfig badk{.kind = PEKind::LPE, .k = 0};
  CHECK_THROWS_AS(PEParams::init(badk, 4, a, 0.08), std::invalid_argument);
  PEConfig badg{.kind = PEKind::GNN, .gnn_layers = 0};
  CHECK_THROWS_AS(PEParams::init(badg, 4, a, 0.08), std::invalid_argument);
}

TEST_CASE("pe names round-trip") {
  for (PEKind k : {PEKind::Sequence, PEKind::LPE, PEKind::GNN})
    CHECK(pe_from_name(pe_name(k)) == k);
  CHECK_THROWS_AS(pe_from_name("fourier"), std::invalid_argument);
}
