#include "mmgl/peft.hpp"

#include <algorithm>
#include <stdexcept>

namespace mmgl::peft {

namespace {
constexpr double kInitStd = 0.08;

const char* kPairingRule =
    "prefix tuning and lora pair with the self-attention encodings (sa_te, sa_e); "
    "flamingo pairs with the cross-attention encoding (ca_e)";
}  // namespace

std::string mode_name(PeftKind k) {
  switch (k) {
    case PeftKind::Full: return "full";
    case PeftKind::Prefix: return "prefix";
    case PeftKind::LoRA: return "lora";
    case PeftKind::Flamingo: return "flamingo";
  }
  throw std::logic_error("unknown peft kind");
}

PeftKind mode_from_name(const std::string& name) {
  if (name == "full") return PeftKind::Full;
  if (name == "prefix") return PeftKind::Prefix;
  if (name == "lora") return PeftKind::LoRA;
  if (name == "flamingo") return PeftKind::Flamingo;
  throw std::invalid_argument("unknown peft mode '" + name +
                              "' (expected full, prefix, lora or flamingo)");
}

LoraAdapter lora_wrap(const std::string& host, std::size_t d_in, std::size_t d_out,
                      std::size_t r, double alpha, Rng& rng) {
  if (r < 1) throw std::invalid_argument("lora rank must be at least 1");
  if (r > std::min(d_in, d_out))
    throw std::invalid_argument("lora rank " + std::to_string(r) + " exceeds projection dims " +
                                std::to_string(d_in) + "x" + std::to_string(d_out));
  LoraAdapter ad;
  ad.host = host;
  ad.a = Tensor::randn({d_in, r}, rng, kInitStd);
  ad.b = Tensor::zeros({r, d_out});
  ad.scaling = alpha / (double)r;
  return ad;
}

void BundleConfig::validate() const {
  model.validate();
  if (d_enc == 0) throw std::invalid_argument("d_enc must be positive");
  if (image_feature_width == 0) throw std::invalid_argument("image_feature_width must be positive");
  bool is_ca = encoding == assembly::NeighborEncoding::CA_E;
  if (model.cross_attention != is_ca)
    throw std::invalid_argument(
        "cross_attention must be enabled exactly for the ca_e encoding (memory rows exist "
        "only there)");
  switch (mode.kind) {
    case PeftKind::Full:
      break;  // legal with every encoding
    case PeftKind::Prefix:
    case PeftKind::LoRA:
      if (is_ca)
        throw std::invalid_argument("peft mode '" + mode_name(mode.kind) +
                                    "' cannot pair with ca_e: " + kPairingRule);
      break;
    case PeftKind::Flamingo:
      if (!is_ca || !model.cross_attention)
        throw std::invalid_argument("peft mode 'flamingo' requires the ca_e encoding with "
                                    "cross-attention enabled: " +
                                    std::string(kPairingRule));
      break;
  }
  if (mode.kind == PeftKind::LoRA) {
    if (mode.rank < 1) throw std::invalid_argument("lora rank must be at least 1");
    if (mode.rank > model.d_model)
      throw std::invalid_argument("lora rank " + std::to_string(mode.rank) +
                                  " exceeds d_model " + std::to_string(model.d_model));
  }
  if (pe.kind == graph_pe::PEKind::Sequence && pe.table_size == 0)
    throw std::invalid_argument("sequence position encoding needs a positive table_size");
}

ModelBundle make_bundle(const BundleConfig& cfg) {
  cfg.validate();
  ModelBundle b;
  b.cfg = cfg;
  b.model = lm::Model::init(cfg.model);
  b.text_enc = encoders::FrozenEncoder::make_text(cfg.encoder_seed, cfg.model.vocab_size,
                                                  cfg.d_enc);
  b.image_enc = encoders::FrozenEncoder::make_image(cfg.encoder_seed + 1,
                                                    cfg.image_feature_width, cfg.d_enc);

  Rng root(cfg.model.seed);
  Rng tm = root.fork("mapper.text");
  b.text_map = encoders::Mapper::init(tm, cfg.d_enc, cfg.model.d_model, kInitStd);
  Rng im = root.fork("mapper.image");
  b.image_map = encoders::Mapper::init(im, cfg.d_enc, cfg.model.d_model, kInitStd);
  Rng pr = root.fork("pe");
  b.pe = graph_pe::PEParams::init(cfg.pe, cfg.model.d_model, pr, kInitStd);

  if (cfg.mode.kind == PeftKind::Prefix) {
    for (std::size_t i = 0; i < cfg.model.n_layers; ++i) {
      Rng kr = root.fork("peft.prefix.k" + std::to_string(i));
      Rng vr = root.fork("peft.prefix.v" + std::to_string(i));
      b.prefix.k.push_back(Tensor::randn({cfg.mode.prefix_len, cfg.model.d_model}, kr, kInitStd));
      b.prefix.v.push_back(Tensor::randn({cfg.mode.prefix_len, cfg.model.d_model}, vr, kInitStd));
    }
  }
  if (cfg.mode.kind == PeftKind::LoRA) {
    for (std::size_t i = 0; i < cfg.model.n_layers; ++i) {
      for (const char* which : {"wq", "wv"}) {
        std::string host = "layer" + std::to_string(i) + ".attn." + which;
        Rng ar = root.fork("peft.lora." + host);
        b.loras.push_back(lora_wrap(host, cfg.model.d_model, cfg.model.d_model, cfg.mode.rank,
                                    cfg.mode.alpha, ar));
      }
    }
  }
  return b;
}

lm::PeftHooks ModelBundle::hooks() const {
  lm::PeftHooks h;
  if (cfg.mode.kind == PeftKind::Prefix && cfg.mode.prefix_len > 0) {
    h.layers.resize(cfg.model.n_layers);
    for (std::size_t i = 0; i < cfg.model.n_layers; ++i) {
      h.layers[i].prefix_k = prefix.k[i];
      h.layers[i].prefix_v = prefix.v[i];
    }
  }
  if (cfg.mode.kind == PeftKind::LoRA) {
    h.layers.resize(cfg.model.n_layers);
    for (std::size_t i = 0; i < cfg.model.n_layers; ++i) {
      const LoraAdapter& q = loras[i * 2];
      const LoraAdapter& v = loras[i * 2 + 1];
      h.layers[i].lora_q = {true, q.a, q.b, q.scaling};
      h.layers[i].lora_v = {true, v.a, v.b, v.scaling};
    }
  }
  return h;
}

std::vector<ckpt::NamedTensor> ModelBundle::named_params() const {
  std::vector<ckpt::NamedTensor> out = model.named_params();
  out.push_back({"mapper.text.weight", text_map.weight});
  out.push_back({"mapper.text.bias", text_map.bias});
  out.push_back({"mapper.image.weight", image_map.weight});
  out.push_back({"mapper.image.bias", image_map.bias});
  switch (cfg.pe.kind) {
    case graph_pe::PEKind::Sequence:
      out.push_back({"pe.table", pe.table});
      break;
    case graph_pe::PEKind::LPE:
      out.push_back({"pe.lpe.weight", pe.lpe_mapper.weight});
      out.push_back({"pe.lpe.bias", pe.lpe_mapper.bias});
      break;
    case graph_pe::PEKind::GNN:
      for (std::size_t l = 0; l < pe.gnn_w.size(); ++l) {
        out.push_back({"pe.gnn.w" + std::to_string(l), pe.gnn_w[l]});
        out.push_back({"pe.gnn.b" + std::to_string(l), pe.gnn_b[l]});
      }
      break;
  }
  for (std::size_t i = 0; i < prefix.k.size(); ++i) {
    out.push_back({"prefix.k" + std::to_string(i), prefix.k[i]});
    out.push_back({"prefix.v" + std::to_string(i), prefix.v[i]});
  }
  for (const LoraAdapter& ad : loras) {
    out.push_back({"lora." + ad.host + ".a", ad.a});
    out.push_back({"lora." + ad.host + ".b", ad.b});
  }
  return out;
}

std::vector<Tensor> configure_trainables(ModelBundle& b) {
  b.cfg.validate();
  for (ckpt::NamedTensor& nt : b.named_params()) nt.tensor.set_requires_grad(false);

  std::vector<Tensor> train;
  auto arm = [&](const Tensor& t) {
    Tensor h = t;
    h.set_requires_grad(true);
    train.push_back(h);
  };

  switch (b.cfg.mode.kind) {
    case PeftKind::Full:
      for (ckpt::NamedTensor& nt : b.model.named_params()) arm(nt.tensor);
      break;
    case PeftKind::Prefix:
      for (const Tensor& t : b.prefix.k) arm(t);
      for (const Tensor& t : b.prefix.v) arm(t);
      break;
    case PeftKind::LoRA:
      for (const LoraAdapter& ad : b.loras) {
        arm(ad.a);
        arm(ad.b);
      }
      break;
    case PeftKind::Flamingo:
      for (ckpt::NamedTensor& nt : b.model.named_params())
        if (nt.name.rfind("cross", 0) == 0) arm(nt.tensor);
      break;
  }

  arm(b.text_map.weight);
  arm(b.text_map.bias);
  arm(b.image_map.weight);
  arm(b.image_map.bias);
  for (const Tensor& t : b.pe.tensors(b.cfg.pe.kind)) arm(t);
  return train;
}

ParamCounts count_params(const ModelBundle& b) {
  ParamCounts c;
  for (const ckpt::NamedTensor& nt : b.named_params()) {
    c.total += nt.tensor.size();
    if (nt.tensor.requires_grad()) c.trainable += nt.tensor.size();
  }
  c.fraction = c.total == 0 ? 0.0 : (double)c.trainable / (double)c.total;
  return c;
}

namespace {

// Encoded-then-mapped rows for every context element, [n_elements x d_model].
Tensor element_embeddings(const ModelBundle& b, const assembly::AssembledInput& in, Tape* tape) {
  std::vector<Tensor> rows;
  rows.reserve(in.n_elements);
  for (std::size_t e = 0; e < in.n_elements; ++e) {
    assembly::ElementView v = assembly::element_view(in, e);
    if (v.is_image)
      rows.push_back(encoders::map_to_lm(encoders::encode_image(*v.feature, b.image_enc),
                                         b.image_map, tape));
    else
      rows.push_back(encoders::map_to_lm(encoders::encode_text(*v.tokens, b.text_enc),
                                         b.text_map, tape));
  }
  return concat_rows(rows, tape);
}

Tensor position_rows(const ModelBundle& b, const assembly::AssembledInput& in,
                     const Tensor& elements, Tape* tape) {
  switch (b.cfg.pe.kind) {
    case graph_pe::PEKind::Sequence:
      return graph_pe::sequence_pe(in.n_elements, b.pe.table, tape);
    case graph_pe::PEKind::LPE: {
      graph_pe::ContextGraph g = graph_pe::build_context_graph(assembly::as_context(in));
      return graph_pe::lpe_pe(g, b.cfg.pe.k, b.pe.lpe_mapper, tape);
    }
    case graph_pe::PEKind::GNN: {
      graph_pe::ContextGraph g = graph_pe::build_context_graph(assembly::as_context(in));
      return graph_pe::gnn_pe(elements, g, b.pe, b.cfg.pe.gnn_layers, tape);
    }
  }
  throw std::logic_error("unknown pe kind");
}

}  // namespace

lm::ForwardInput materialize(const ModelBundle& b, const assembly::AssembledInput& in,
                             Tape* tape) {
  if (in.encoding != b.cfg.encoding)
    throw std::invalid_argument("example assembled as " + assembly::encoding_name(in.encoding) +
                                " fed to a " + assembly::encoding_name(b.cfg.encoding) +
                                " bundle");
  lm::ForwardInput f;
  f.token_ids = in.token_ids;
  f.embed_slot = in.embed_slot;
  f.pe_select = in.pe_select;

  Tensor elements = element_embeddings(b, in, tape);
  f.pe = position_rows(b, in, elements, tape);
  if (!in.embed_elements.empty()) f.embeds = take_rows(elements, in.embed_elements, tape);
  if (!in.memory_elements.empty())
    f.memory = add(take_rows(elements, in.memory_elements, tape),
                   take_rows(f.pe, in.memory_elements, tape), tape);
  return f;
}

Tensor example_loss(const ModelBundle& b, const assembly::AssembledInput& in, Tape* tape) {
  lm::ForwardInput f = materialize(b, in, tape);
  lm::PeftHooks h = b.hooks();
  return b.model.summary_loss(f, in.loss_rows, in.loss_targets, &h, tape);
}

std::vector<int> generate(const ModelBundle& b, const assembly::AssembledInput& prompt,
                          std::size_t max_new) {
  lm::ForwardInput f = materialize(b, prompt, nullptr);
  lm::PeftHooks h = b.hooks();
  return b.model.generate_greedy(f, max_new, graphdoc::kEos, &h);
}

}  // namespace mmgl::peft
