#include "mmgl/graph_pe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace mmgl::graph_pe {

using graphdoc::ContextItem;
using graphdoc::Node;
using graphdoc::NodeKind;
using graphdoc::SelectedContext;

ContextGraph build_context_graph(const SelectedContext& ctx) {
  ContextGraph g;
  g.n = ctx.neighbors.size() + 1;
  g.adj.assign(g.n * g.n, 0);

  std::map<std::string, std::size_t> index_of;
  long title_index = -1;
  std::vector<const Node*> node_of(g.n, nullptr);
  for (std::size_t i = 0; i < ctx.neighbors.size(); ++i) {
    const ContextItem& item = ctx.neighbors[i];
    if (item.is_title) {
      title_index = static_cast<long>(i);
    } else {
      index_of[item.node->id] = i;
      node_of[i] = item.node;
    }
  }
  std::size_t target_index = g.n - 1;
  index_of[ctx.target->id] = target_index;
  node_of[target_index] = ctx.target;

  auto connect = [&](std::size_t a, std::size_t b) {
    g.adj[a * g.n + b] = 1;
    g.adj[b * g.n + a] = 1;
  };
  for (std::size_t i = 0; i < g.n; ++i) {
    const Node* n = node_of[i];
    if (!n) continue;  // the title node has no parent of its own
    if (n->kind == NodeKind::Section && n->parent_id.empty()) {
      if (title_index >= 0) connect(static_cast<std::size_t>(title_index), i);
    } else {
      auto it = index_of.find(n->parent_id);
      if (it != index_of.end()) connect(it->second, i);
    }
  }
  return g;
}

std::vector<double> normalized_laplacian(const ContextGraph& g) {
  std::size_t n = g.n;
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += g.adj[i * n + j];
  std::vector<double> lap(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (deg[i] == 0.0) continue;  // isolated: whole row stays zero
    lap[i * n + i] = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (g.adj[i * n + j]) lap[i * n + j] = -1.0 / std::sqrt(deg[i] * deg[j]);
    }
  }
  return lap;
}

EigenResult sym_eigendecomp(const std::vector<double>& m, std::size_t n, double sym_tol) {
  if (m.size() != n * n)
    throw std::invalid_argument("sym_eigendecomp: matrix size " + std::to_string(m.size()) +
                                " does not match n=" + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m[i * n + j] - m[j * n + i]) > sym_tol)
        throw std::invalid_argument("sym_eigendecomp: input is not symmetric at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");

  std::vector<double> a = m;
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  // Cyclic Jacobi sweeps until the off-diagonal mass is negligible.
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-26) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;

        for (std::size_t i = 0; i < n; ++i) {
          double aip = a[i * n + p], aiq = a[i * n + q];
          a[i * n + p] = c * aip - s * aiq;
          a[i * n + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          double api = a[p * n + i], aqi = a[q * n + i];
          a[p * n + i] = c * api - s * aqi;
          a[q * n + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          double vip = v[i * n + p], viq = v[i * n + q];
          v[i * n + p] = c * vip - s * viq;
          v[i * n + q] = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a[i * n + i];
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return diag[x] < diag[y]; });

  EigenResult out;
  out.values.resize(n);
  out.vectors.assign(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = diag[order[j]];
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + j] = v[i * n + order[j]];
  }
  return out;
}

std::string pe_name(PEKind k) {
  switch (k) {
    case PEKind::Sequence: return "sequence";
    case PEKind::LPE: return "lpe";
    case PEKind::GNN: return "gnn";
  }
  throw std::logic_error("pe_name: bad value");
}

PEKind pe_from_name(const std::string& name) {
  if (name == "sequence") return PEKind::Sequence;
  if (name == "lpe") return PEKind::LPE;
  if (name == "gnn") return PEKind::GNN;
  throw std::invalid_argument("unknown position encoding '" + name + "'");
}

PEParams PEParams::init(const PEConfig& cfg, std::size_t d_model, Rng& rng, double stddev) {
  if (cfg.k < 1) throw std::invalid_argument("position encoding: k must be at least 1");
  if (cfg.gnn_layers < 1)
    throw std::invalid_argument("position encoding: gnn_layers must be at least 1");
  PEParams p;
  switch (cfg.kind) {
    case PEKind::Sequence: {
      if (cfg.table_size == 0)
        throw std::invalid_argument("position encoding: table_size must be set for sequence");
      Rng r = rng.fork("pe.table");
      p.table = Tensor::randn({cfg.table_size, d_model}, r, stddev);
      break;
    }
    case PEKind::LPE: {
      Rng r = rng.fork("pe.lpe");
      p.lpe_mapper = encoders::Mapper::init(r, cfg.k, d_model, stddev);
      break;
    }
    case PEKind::GNN: {
      for (std::size_t l = 0; l < cfg.gnn_layers; ++l) {
        Rng r = rng.fork("pe.gnn" + std::to_string(l));
        p.gnn_w.push_back(Tensor::randn({d_model, d_model}, r, stddev));
        p.gnn_b.push_back(Tensor::zeros({d_model}));
      }
      break;
    }
  }
  return p;
}

std::vector<Tensor> PEParams::tensors(PEKind kind) const {
  switch (kind) {
    case PEKind::Sequence: return {table};
    case PEKind::LPE: return {lpe_mapper.weight, lpe_mapper.bias};
    case PEKind::GNN: {
      std::vector<Tensor> out;
      for (std::size_t l = 0; l < gnn_w.size(); ++l) {
        out.push_back(gnn_w[l]);
        out.push_back(gnn_b[l]);
      }
      return out;
    }
  }
  throw std::logic_error("PEParams::tensors: bad kind");
}

Tensor sequence_pe(std::size_t n, const Tensor& table, Tape* tape) {
  if (n > table.rows())
    throw std::out_of_range("sequence_pe: " + std::to_string(n) +
                            " elements overflow the position table of " +
                            std::to_string(table.rows()));
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return take_rows(table, rows, tape);
}

std::vector<double> lpe_kvectors(const ContextGraph& g, std::size_t k) {
  std::size_t n = g.n;
  std::vector<double> out(n * k, 0.0);
  if (n < 2) return out;  // nothing beyond the trivial eigenvector: all zero

  EigenResult eig = sym_eigendecomp(normalized_laplacian(g), n);
  std::size_t keep = std::min(k, n - 1);
  for (std::size_t j = 0; j < keep; ++j) {
    std::size_t col = j + 1;  // skip the first (trivial) eigenvector
    // Sign rule: the entry of largest magnitude ends up positive; ties pick
    // the lowest index.
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mag = std::abs(eig.vectors[i * n + col]);
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    double flip = eig.vectors[arg * n + col] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out[i * k + j] = flip * eig.vectors[i * n + col];
  }
  return out;
}

Tensor lpe_pe(const ContextGraph& g, std::size_t k, const encoders::Mapper& mapper,
              Tape* tape) {
  Tensor x = Tensor::from({g.n, k}, lpe_kvectors(g, k));
  return add_bias(matmul(x, mapper.weight, tape), mapper.bias, tape);
}

Tensor gnn_pe(const Tensor& embeddings, const ContextGraph& g, const PEParams& params,
              std::size_t gnn_layers, Tape* tape) {
  std::size_t n = g.n;
  if (embeddings.rows() != n)
    throw std::invalid_argument("gnn_pe: " + std::to_string(embeddings.rows()) +
                                " embedding rows for " + std::to_string(n) + " nodes");
  if (params.gnn_w.size() < gnn_layers)
    throw std::invalid_argument("gnn_pe: " + std::to_string(gnn_layers) + " layers but " +
                                std::to_string(params.gnn_w.size()) + " parameter sets");

  // Mean over the closed neighborhood as one constant matrix.
  Tensor agg = Tensor::zeros({n, n});
  for (std::size_t v = 0; v < n; ++v) {
    double count = 1.0;
    for (std::size_t u = 0; u < n; ++u) count += g.adj[v * n + u];
    double w = 1.0 / count;
    agg.at(v, v) = w;
    for (std::size_t u = 0; u < n; ++u)
      if (g.adj[v * n + u]) agg.at(v, u) = w;
  }

  Tensor h = embeddings;
  for (std::size_t l = 0; l < gnn_layers; ++l) {
    Tensor mixed = matmul(agg, h, tape);
    h = relu(add_bias(matmul(mixed, params.gnn_w[l], tape), params.gnn_b[l], tape), tape);
  }
  return h;
}

}  // namespace mmgl::graph_pe
