#pragma once

#include <string>
#include <vector>

#include "mmgl/graphdoc.hpp"

namespace mmgl::assembly {

// How neighbor content enters the model: raw tokens plus embeddings in the
// self-attention sequence, one embedding row per neighbor in the sequence,
// or embedding rows on the cross-attention side only.
enum class NeighborEncoding { SA_TE, SA_E, CA_E };

std::string encoding_name(NeighborEncoding e);
NeighborEncoding encoding_from_name(const std::string& name);

struct AssemblyCaps {
  std::size_t max_seq_len = 512;
  // Generation prompts reserve this many rows for tokens yet to be written.
  std::size_t max_new_tokens = 0;
  bool for_generation = false;
};

// One training (or generation) instance laid out as model rows.
//
// Sequence rows r carry either a vocabulary token (token_ids[r], embed_slot
// [r] = -1) or an injected embedding (token_ids[r] = pad, embed_slot[r]
// indexing embed_elements). pe_select[r] names the context element whose
// position encoding is added to the row, -1 for separator rows.
//
// Context elements are numbered 0..n_elements-1 in assembly order: kept
// neighbors in document order, the target last.
struct AssembledInput {
  NeighborEncoding encoding = NeighborEncoding::SA_TE;
  const graphdoc::PageGraph* page = nullptr;
  std::vector<graphdoc::ContextItem> neighbors;  // kept after truncation
  const graphdoc::Node* target = nullptr;
  std::vector<int> target_text;  // clipped only in the no-neighbor fallback

  std::vector<int> token_ids;
  std::vector<int> embed_slot;
  std::vector<int> pe_select;
  std::vector<std::size_t> embed_elements;   // element index per embedding row
  std::vector<std::size_t> memory_elements;  // CA_E: element index per memory row

  // Rows whose next-token prediction is scored, with their target ids.
  std::vector<std::size_t> loss_rows;
  std::vector<int> loss_targets;

  std::size_t summary_begin = 0;  // row carrying the BOS that opens the summary
  std::size_t n_elements = 0;

  std::size_t seq_len() const { return token_ids.size(); }
};

// Lays out one example. Neighbors that do not fit the cap are dropped whole
// from the end of the document order; the target text is clipped only when it
// alone exceeds the budget. An impossible budget is an error naming the
// example.
AssembledInput assemble(const graphdoc::PageGraph& page, const graphdoc::SelectedContext& ctx,
                        NeighborEncoding enc, const AssemblyCaps& caps,
                        const std::string& example_name);

// What a context element contributes content-wise.
struct ElementView {
  bool is_image = false;
  const std::vector<int>* tokens = nullptr;
  const std::vector<double>* feature = nullptr;
};

ElementView element_view(const AssembledInput& in, std::size_t element);

// The kept neighbors + target as a context for graph building.
graphdoc::SelectedContext as_context(const AssembledInput& in);

}  // namespace mmgl::assembly
