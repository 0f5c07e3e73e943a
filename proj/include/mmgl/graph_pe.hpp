#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmgl/autodiff.hpp"
#include "mmgl/encoders.hpp"
#include "mmgl/graphdoc.hpp"
#include "mmgl/rng.hpp"
#include "mmgl/tensor.hpp"

namespace mmgl::graph_pe {

// Undirected context graph over the assembled elements. Node order equals
// the assembly order: neighbors first (document order), target last.
struct ContextGraph {
  std::size_t n = 0;
  std::vector<uint8_t> adj;  // [n x n], symmetric, zero diagonal

  bool edge(std::size_t a, std::size_t b) const { return adj[a * n + b] != 0; }
};

// Edges: section <-> parent section, image <-> owning section, title <-> root
// sections. Only elements present in the context become nodes.
ContextGraph build_context_graph(const graphdoc::SelectedContext& ctx);

// L = I - D^(-1/2) A D^(-1/2), with the rows and columns of isolated nodes
// (including their diagonal) left at zero. Row-major [n x n].
std::vector<double> normalized_laplacian(const ContextGraph& g);

struct EigenResult {
  std::vector<double> values;   // ascending
  std::vector<double> vectors;  // [n x n] row-major; column j pairs with values[j]
};

// Cyclic Jacobi rotations; dense, meant for n up to a few hundred.
EigenResult sym_eigendecomp(const std::vector<double>& m, std::size_t n,
                            double sym_tol = 1e-12);

enum class PEKind { Sequence, LPE, GNN };

std::string pe_name(PEKind k);
PEKind pe_from_name(const std::string& name);

struct PEConfig {
  PEKind kind = PEKind::Sequence;
  std::size_t k = 4;           // LPE: eigenvectors kept
  std::size_t gnn_layers = 2;  // GNN rounds
  std::size_t table_size = 0;  // Sequence: max element count
};

// Trainable state for the active PE kind; the other fields stay undefined.
struct PEParams {
  Tensor table;                // Sequence: [table_size x d_model]
  encoders::Mapper lpe_mapper;  // LPE: k -> d_model
  std::vector<Tensor> gnn_w;   // GNN: [d_model x d_model] per layer
  std::vector<Tensor> gnn_b;   // GNN: [d_model] per layer

  static PEParams init(const PEConfig& cfg, std::size_t d_model, Rng& rng, double stddev);
  std::vector<Tensor> tensors(PEKind kind) const;
};

// Rows 0..n-1 of the trainable position table.
Tensor sequence_pe(std::size_t n, const Tensor& table, Tape* tape);

// Sign-fixed eigenvectors 2..k+1 of the normalized Laplacian as per-node
// k-vectors, zero-padded when the graph is too small. Plain data.
std::vector<double> lpe_kvectors(const ContextGraph& g, std::size_t k);

// The k-vectors pushed through the trainable mapper: [n x d_model].
Tensor lpe_pe(const ContextGraph& g, std::size_t k, const encoders::Mapper& mapper, Tape* tape);

// gnn_layers rounds of h <- ReLU(mean over N(v) and v itself, then linear).
// Gradients flow into both the layer parameters and the input embeddings.
Tensor gnn_pe(const Tensor& embeddings, const ContextGraph& g, const PEParams& params,
              std::size_t gnn_layers, Tape* tape);

}  // namespace mmgl::graph_pe
