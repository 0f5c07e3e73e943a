#include "mmgl/lm_core.hpp"

#include <algorithm>
#include <stdexcept>

namespace mmgl::lm {

namespace {
constexpr double kInitStd = 0.08;
constexpr double kLnEps = 1e-5;
}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 6) throw std::invalid_argument("vocab_size must cover the special tokens");
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                " is not divisible by n_heads " + std::to_string(n_heads));
  if (cross_stride == 0) throw std::invalid_argument("cross_stride must be positive");
}

Model Model::init(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng root(cfg.seed);

  Rng er = root.fork("embed");
  m.embed = Tensor::randn({cfg.vocab_size, cfg.d_model}, er, kInitStd);

  // Base layers draw from their own streams so enabling cross-attention
  // leaves them bit-identical.
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    Rng lr = root.fork("layer" + std::to_string(i));
    DecoderLayer l;
    l.ln1_g = Tensor::full({cfg.d_model}, 1.0);
    l.ln1_b = Tensor::zeros({cfg.d_model});
    l.wq = Tensor::randn({cfg.d_model, cfg.d_model}, lr, kInitStd);
    l.wk = Tensor::randn({cfg.d_model, cfg.d_model}, lr, kInitStd);
    l.wv = Tensor::randn({cfg.d_model, cfg.d_model}, lr, kInitStd);
    l.wo = Tensor::randn({cfg.d_model, cfg.d_model}, lr, kInitStd);
    l.ln2_g = Tensor::full({cfg.d_model}, 1.0);
    l.ln2_b = Tensor::zeros({cfg.d_model});
    l.w1 = Tensor::randn({cfg.d_model, cfg.d_ff}, lr, kInitStd);
    l.b1 = Tensor::zeros({cfg.d_ff});
    l.w2 = Tensor::randn({cfg.d_ff, cfg.d_model}, lr, kInitStd);
    l.b2 = Tensor::zeros({cfg.d_model});
    m.layers.push_back(std::move(l));
  }

  m.cross_at.assign(cfg.n_layers, -1);
  if (cfg.cross_attention) {
    for (std::size_t i = 0; i < cfg.n_layers; i += cfg.cross_stride) {
      Rng cr = root.fork("cross" + std::to_string(i));
      GatedCrossAttnBlock c;
      c.wq = Tensor::randn({cfg.d_model, cfg.d_model}, cr, kInitStd);
      c.wk = Tensor::randn({cfg.d_model, cfg.d_model}, cr, kInitStd);
      c.wv = Tensor::randn({cfg.d_model, cfg.d_model}, cr, kInitStd);
      c.wo = Tensor::randn({cfg.d_model, cfg.d_model}, cr, kInitStd);
      c.w1 = Tensor::randn({cfg.d_model, cfg.d_ff}, cr, kInitStd);
      c.b1 = Tensor::zeros({cfg.d_ff});
      c.w2 = Tensor::randn({cfg.d_ff, cfg.d_model}, cr, kInitStd);
      c.b2 = Tensor::zeros({cfg.d_model});
      c.g_attn = Tensor::zeros({1});
      c.g_ff = Tensor::zeros({1});
      m.cross_at[i] = (int)m.cross.size();
      m.cross.push_back(std::move(c));
    }
  }

  m.final_g = Tensor::full({cfg.d_model}, 1.0);
  m.final_b = Tensor::zeros({cfg.d_model});
  return m;
}

std::vector<ckpt::NamedTensor> Model::named_params() const {
  std::vector<ckpt::NamedTensor> out;
  out.push_back({"embed", embed});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const DecoderLayer& l = layers[i];
    std::string p = "layer" + std::to_string(i) + ".";
    out.push_back({p + "ln1.g", l.ln1_g});
    out.push_back({p + "ln1.b", l.ln1_b});
    out.push_back({p + "attn.wq", l.wq});
    out.push_back({p + "attn.wk", l.wk});
    out.push_back({p + "attn.wv", l.wv});
    out.push_back({p + "attn.wo", l.wo});
    out.push_back({p + "ln2.g", l.ln2_g});
    out.push_back({p + "ln2.b", l.ln2_b});
    out.push_back({p + "ff.w1", l.w1});
    out.push_back({p + "ff.b1", l.b1});
    out.push_back({p + "ff.w2", l.w2});
    out.push_back({p + "ff.b2", l.b2});
  }
  for (std::size_t i = 0; i < cross_at.size(); ++i) {
    if (cross_at[i] < 0) continue;
    const GatedCrossAttnBlock& c = cross[(std::size_t)cross_at[i]];
    std::string p = "cross" + std::to_string(i) + ".";
    out.push_back({p + "attn.wq", c.wq});
    out.push_back({p + "attn.wk", c.wk});
    out.push_back({p + "attn.wv", c.wv});
    out.push_back({p + "attn.wo", c.wo});
    out.push_back({p + "ff.w1", c.w1});
    out.push_back({p + "ff.b1", c.b1});
    out.push_back({p + "ff.w2", c.w2});
    out.push_back({p + "ff.b2", c.b2});
    out.push_back({p + "gate.attn", c.g_attn});
    out.push_back({p + "gate.ff", c.g_ff});
  }
  out.push_back({"final_norm.g", final_g});
  out.push_back({"final_norm.b", final_b});
  return out;
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const ckpt::NamedTensor& nt : named_params()) n += nt.tensor.size();
  return n;
}

namespace {

// Multi-head scaled dot attention over already-projected q/k/v.
Tensor heads_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                       const std::vector<uint8_t>* mask, Tape* tape) {
  std::size_t d = q.cols(), dh = d / n_heads;
  std::vector<Tensor> outs;
  outs.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh, tape);
    Tensor kh = slice_cols(k, h * dh, dh, tape);
    Tensor vh = slice_cols(v, h * dh, dh, tape);
    outs.push_back(scaled_dot_attention(qh, kh, vh, mask, tape));
  }
  return concat_cols(outs, tape);
}

// Queries see every prefix row plus the causal part of the real sequence.
std::vector<uint8_t> causal_mask(std::size_t t, std::size_t prefix) {
  std::vector<uint8_t> mask(t * (prefix + t), 0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= prefix + i; ++j) mask[i * (prefix + t) + j] = 1;
  return mask;
}

Tensor project(const Tensor& x, const Tensor& w, const LayerHooks::LowRank& lr, Tape* tape) {
  Tensor out = matmul(x, w, tape);
  if (!lr.active) return out;
  Tensor delta = matmul(matmul(x, lr.a, tape), lr.b, tape);
  return add(out, scale(delta, lr.scale, tape), tape);
}

}  // namespace

Tensor Model::forward_hidden(const ForwardInput& in, const PeftHooks* hooks, Tape* tape) const {
  std::size_t t = in.token_ids.size();
  if (t == 0) throw std::invalid_argument("forward on an empty sequence");
  if (t > cfg.max_seq_len)
    throw std::invalid_argument("sequence of " + std::to_string(t) + " rows exceeds max_seq_len " +
                                std::to_string(cfg.max_seq_len));
  if (in.memory.defined() && in.memory.rows() > 0 && !cfg.cross_attention)
    throw std::invalid_argument("memory rows supplied but cross-attention is disabled");
  if (!hooks || hooks->layers.empty()) {
    static const PeftHooks none;
    hooks = &none;
  } else if (hooks->layers.size() != cfg.n_layers) {
    throw std::invalid_argument("hooks cover " + std::to_string(hooks->layers.size()) +
                                " layers, model has " + std::to_string(cfg.n_layers));
  }

  Tensor x = embedding_rows(embed, in.token_ids, tape);
  if (in.embeds.defined() && in.embeds.rows() > 0) {
    if (in.embed_slot.size() != t)
      throw std::invalid_argument("embed_slot does not cover every row");
    for (std::size_t r = 0; r < t; ++r)
      if (in.embed_slot[r] >= 0)
        x = row_scatter(x, r, take_rows(in.embeds, {(std::size_t)in.embed_slot[r]}, tape), tape);
  }
  if (in.pe.defined() && in.pe.rows() > 0) {
    if (in.pe_select.size() != t) throw std::invalid_argument("pe_select does not cover every row");
    x = add_row_select(x, in.pe_select, in.pe, tape);
  }

  bool use_memory = cfg.cross_attention && in.memory.defined() && in.memory.rows() > 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (use_memory && cross_at[i] >= 0) {
      const GatedCrossAttnBlock& c = cross[(std::size_t)cross_at[i]];
      Tensor q = matmul(x, c.wq, tape);
      Tensor k = matmul(in.memory, c.wk, tape);
      Tensor v = matmul(in.memory, c.wv, tape);
      Tensor att = matmul(heads_attention(q, k, v, cfg.n_heads, nullptr, tape), c.wo, tape);
      x = add(x, scale_by(att, tanh_t(c.g_attn, tape), tape), tape);
      Tensor f = add_bias(matmul(relu(add_bias(matmul(x, c.w1, tape), c.b1, tape), tape), c.w2,
                                 tape),
                          c.b2, tape);
      x = add(x, scale_by(f, tanh_t(c.g_ff, tape), tape), tape);
    }

    const DecoderLayer& l = layers[i];
    const LayerHooks* h = hooks->layers.empty() ? nullptr : &hooks->layers[i];
    static const LayerHooks bare;
    if (!h) h = &bare;

    Tensor n1 = layer_norm(x, l.ln1_g, l.ln1_b, kLnEps, tape);
    Tensor q = project(n1, l.wq, h->lora_q, tape);
    Tensor k = matmul(n1, l.wk, tape);
    Tensor v = project(n1, l.wv, h->lora_v, tape);
    std::size_t prefix = 0;
    if (h->prefix_k.defined() && h->prefix_k.rows() > 0) {
      prefix = h->prefix_k.rows();
      k = concat_rows({h->prefix_k, k}, tape);
      v = concat_rows({h->prefix_v, v}, tape);
    }
    std::vector<uint8_t> mask = causal_mask(t, prefix);
    Tensor att = matmul(heads_attention(q, k, v, cfg.n_heads, &mask, tape), l.wo, tape);
    x = add(x, att, tape);

    Tensor n2 = layer_norm(x, l.ln2_g, l.ln2_b, kLnEps, tape);
    Tensor f = add_bias(
        matmul(relu(add_bias(matmul(n2, l.w1, tape), l.b1, tape), tape), l.w2, tape), l.b2, tape);
    x = add(x, f, tape);
  }

  return layer_norm(x, final_g, final_b, kLnEps, tape);
}

Tensor Model::forward(const ForwardInput& in, const PeftHooks* hooks, Tape* tape) const {
  return matmul(forward_hidden(in, hooks, tape), embed, tape, false, true);
}

Tensor Model::summary_loss(const ForwardInput& in, const std::vector<std::size_t>& loss_rows,
                           const std::vector<int>& targets, const PeftHooks* hooks,
                           Tape* tape) const {
  if (loss_rows.empty()) throw std::invalid_argument("loss mask selects no rows");
  if (loss_rows.size() != targets.size())
    throw std::invalid_argument("loss rows and targets differ in length");
  Tensor hidden = forward_hidden(in, hooks, tape);
  Tensor picked = take_rows(hidden, loss_rows, tape);
  Tensor logits = matmul(picked, embed, tape, false, true);
  return mean_cross_entropy(logits, targets, tape);
}

std::vector<int> Model::generate_greedy(const ForwardInput& prompt, std::size_t max_new,
                                        int eos_id, const PeftHooks* hooks) const {
  if (prompt.token_ids.size() + max_new > cfg.max_seq_len)
    throw std::invalid_argument("prompt of " + std::to_string(prompt.token_ids.size()) +
                                " rows cannot grow by " + std::to_string(max_new) +
                                " within max_seq_len " + std::to_string(cfg.max_seq_len));
  ForwardInput cur = prompt;
  int pe_tail = cur.pe_select.empty() ? -1 : cur.pe_select.back();
  std::vector<int> out;
  for (std::size_t step = 0; step < max_new; ++step) {
    Tensor logits = forward(cur, hooks, nullptr);
    const double* last = logits.data() + (logits.rows() - 1) * logits.cols();
    int next = (int)(std::max_element(last, last + logits.cols()) - last);
    if (next == eos_id) break;
    out.push_back(next);
    cur.token_ids.push_back(next);
    if (!cur.embed_slot.empty() || cur.embeds.defined()) cur.embed_slot.push_back(-1);
    if (!cur.pe_select.empty()) cur.pe_select.push_back(pe_tail);
  }
  return out;
}

}  // namespace mmgl::lm
