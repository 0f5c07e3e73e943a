#include "mmgl/assembly.hpp"

#include <stdexcept>

namespace mmgl::assembly {

using graphdoc::ContextItem;
using graphdoc::Node;
using graphdoc::NodeKind;

std::string encoding_name(NeighborEncoding e) {
  switch (e) {
    case NeighborEncoding::SA_TE: return "sa_te";
    case NeighborEncoding::SA_E: return "sa_e";
    case NeighborEncoding::CA_E: return "ca_e";
  }
  throw std::logic_error("unknown encoding");
}

NeighborEncoding encoding_from_name(const std::string& name) {
  if (name == "sa_te") return NeighborEncoding::SA_TE;
  if (name == "sa_e") return NeighborEncoding::SA_E;
  if (name == "ca_e") return NeighborEncoding::CA_E;
  throw std::invalid_argument("unknown neighbor encoding '" + name +
                              "' (expected sa_te, sa_e or ca_e)");
}

namespace {

bool item_is_image(const ContextItem& it) {
  return !it.is_title && it.node->kind == NodeKind::Image;
}

const std::vector<int>& item_tokens(const graphdoc::PageGraph& page, const ContextItem& it) {
  return it.is_title ? page.title_tokens : it.node->text_tokens;
}

// Sequence rows contributed by the first k neighbors.
std::size_t neighbor_rows(const graphdoc::PageGraph& page,
                          const std::vector<ContextItem>& neighbors, std::size_t k,
                          NeighborEncoding enc) {
  switch (enc) {
    case NeighborEncoding::SA_TE: {
      std::size_t rows = 0;
      for (std::size_t i = 0; i < k; ++i)
        rows += item_is_image(neighbors[i]) ? 1 : item_tokens(page, neighbors[i]).size();
      if (k > 1) rows += k - 1;  // one separator between consecutive elements
      return rows;
    }
    case NeighborEncoding::SA_E: return k;
    case NeighborEncoding::CA_E: return 0;
  }
  throw std::logic_error("unknown encoding");
}

}  // namespace

AssembledInput assemble(const graphdoc::PageGraph& page, const graphdoc::SelectedContext& ctx,
                        NeighborEncoding enc, const AssemblyCaps& caps,
                        const std::string& example_name) {
  if (ctx.target == nullptr) throw std::invalid_argument(example_name + ": context has no target");
  if (!caps.for_generation && !ctx.target->has_summary)
    throw std::invalid_argument(example_name + ": target has no summary to train on");

  const std::vector<int>& target_text = ctx.target->text_tokens;
  // Rows after the neighbors: target text, BOS, then either the summary+EOS
  // (training) or the reserved room for generated tokens.
  std::size_t tail = 1 + (caps.for_generation ? caps.max_new_tokens
                                              : ctx.target->summary_tokens.size() + 1);

  std::size_t keep = ctx.neighbors.size();
  while (keep > 0 &&
         neighbor_rows(page, ctx.neighbors, keep, enc) + target_text.size() + tail >
             caps.max_seq_len)
    --keep;

  AssembledInput out;
  out.encoding = enc;
  out.page = &page;
  out.neighbors.assign(ctx.neighbors.begin(), ctx.neighbors.begin() + (std::ptrdiff_t)keep);
  out.target = ctx.target;
  out.target_text = target_text;
  out.n_elements = keep + 1;

  if (keep == 0 && target_text.size() + tail > caps.max_seq_len) {
    if (tail > caps.max_seq_len)
      throw std::invalid_argument(example_name + ": summary region of " + std::to_string(tail) +
                                  " rows exceeds the sequence cap of " +
                                  std::to_string(caps.max_seq_len));
    out.target_text.resize(caps.max_seq_len - tail);
  }

  const int target_element = (int)keep;
  auto push_token = [&](int id, int pe) {
    out.token_ids.push_back(id);
    out.embed_slot.push_back(-1);
    out.pe_select.push_back(pe);
  };
  auto push_embed = [&](std::size_t element) {
    out.token_ids.push_back(graphdoc::kPad);
    out.embed_slot.push_back((int)out.embed_elements.size());
    out.pe_select.push_back((int)element);
    out.embed_elements.push_back(element);
  };

  for (std::size_t i = 0; i < keep; ++i) {
    const ContextItem& it = out.neighbors[i];
    switch (enc) {
      case NeighborEncoding::SA_TE:
        if (i > 0) push_token(graphdoc::kSep, -1);
        if (item_is_image(it)) {
          push_embed(i);
        } else {
          for (int id : item_tokens(page, it)) push_token(id, (int)i);
        }
        break;
      case NeighborEncoding::SA_E:
        push_embed(i);
        break;
      case NeighborEncoding::CA_E:
        out.memory_elements.push_back(i);
        break;
    }
  }

  for (int id : out.target_text) push_token(id, target_element);
  out.summary_begin = out.token_ids.size();
  push_token(graphdoc::kBos, target_element);

  if (!caps.for_generation) {
    const std::vector<int>& summary = ctx.target->summary_tokens;
    for (std::size_t i = 0; i < summary.size(); ++i) {
      out.loss_rows.push_back(out.token_ids.size() - 1);
      out.loss_targets.push_back(summary[i]);
      push_token(summary[i], target_element);
    }
    out.loss_rows.push_back(out.token_ids.size() - 1);
    out.loss_targets.push_back(graphdoc::kEos);
    push_token(graphdoc::kEos, target_element);
  }

  if (out.token_ids.size() + (caps.for_generation ? caps.max_new_tokens : 0) > caps.max_seq_len)
    throw std::invalid_argument(example_name + ": assembled sequence of " +
                                std::to_string(out.token_ids.size()) +
                                " rows exceeds the cap of " + std::to_string(caps.max_seq_len));
  return out;
}

ElementView element_view(const AssembledInput& in, std::size_t element) {
  if (element >= in.n_elements) throw std::out_of_range("element index out of range");
  ElementView v;
  if (element + 1 == in.n_elements) {
    v.tokens = &in.target_text;
    return v;
  }
  const ContextItem& it = in.neighbors[element];
  if (item_is_image(it)) {
    v.is_image = true;
    v.feature = &it.node->image_feature;
  } else {
    v.tokens = &item_tokens(*in.page, it);
  }
  return v;
}

graphdoc::SelectedContext as_context(const AssembledInput& in) {
  graphdoc::SelectedContext ctx;
  ctx.neighbors = in.neighbors;
  ctx.target = in.target;
  return ctx;
}

}  // namespace mmgl::assembly
