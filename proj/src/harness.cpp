#include "mmgl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "mmgl/adam.hpp"
#include "mmgl/checkpoint.hpp"
#include "mmgl/metrics.hpp"
#include "mmgl/rng.hpp"

namespace mmgl::harness {

namespace fs = std::filesystem;
namespace gd = mmgl::graphdoc;
using json = nlohmann::ordered_json;

namespace {

std::string fmt(const char* pattern, ...) {
  va_list args;
  va_start(args, pattern);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

double now_seconds() {
  auto t = std::chrono::steady_clock::now().time_since_epoch();
  return std::chrono::duration<double>(t).count();
}

std::string mode_slug(const peft::PeftMode& m) {
  switch (m.kind) {
    case peft::PeftKind::Full:
      return "full";
    case peft::PeftKind::Prefix:
      return "prefix" + std::to_string(m.prefix_len);
    case peft::PeftKind::LoRA:
      return "lora" + std::to_string(m.rank) + "x" + fmt("%g", m.alpha);
    case peft::PeftKind::Flamingo:
      return "flamingo";
  }
  return "full";
}

std::string pe_slug(const graph_pe::PEConfig& pe) {
  switch (pe.kind) {
    case graph_pe::PEKind::Sequence:
      return "sequence";
    case graph_pe::PEKind::LPE:
      return "lpe" + std::to_string(pe.k);
    case graph_pe::PEKind::GNN:
      return "gnn" + std::to_string(pe.gnn_layers);
  }
  return "sequence";
}

}  // namespace

std::size_t expected_max_seq_len(assembly::NeighborEncoding enc, gd::ContextRegime regime) {
  bool page_scope =
      regime == gd::ContextRegime::PageText || regime == gd::ContextRegime::PageAll;
  if (enc == assembly::NeighborEncoding::SA_TE && page_scope) return 1024;
  return 512;
}

void RunConfig::finalize() {
  model.max_seq_len = expected_max_seq_len(encoding, regime);
  model.cross_attention = encoding == assembly::NeighborEncoding::CA_E;
  model.seed = seed;
}

void RunConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning_rate must be positive and finite");
  if (out_dir.empty()) throw std::invalid_argument("output dir must not be empty");
  if (model.max_seq_len != expected_max_seq_len(encoding, regime))
    throw std::invalid_argument(
        fmt("max_seq_len %zu inconsistent with encoding/regime (expected %zu); call finalize()",
            model.max_seq_len, expected_max_seq_len(encoding, regime)));
  if (model.seed != seed)
    throw std::invalid_argument("model seed must follow the run seed; call finalize()");

  // Pairing and dimension rules, with a placeholder vocab when it is still to
  // be taken from the vocab file.
  peft::BundleConfig probe;
  probe.model = model;
  if (probe.model.vocab_size == 0) probe.model.vocab_size = gd::kNumSpecials + 1;
  probe.pe = pe;
  if (probe.pe.kind == graph_pe::PEKind::Sequence && probe.pe.table_size == 0)
    probe.pe.table_size = 1;  // the real size is taken from the datasets
  probe.encoding = encoding;
  probe.mode = mode;
  probe.d_enc = d_enc;
  probe.encoder_seed = encoder_seed;
  probe.validate();
}

std::string RunConfig::to_json() const {
  json j;
  j["train"] = train_path;
  j["val"] = val_path;
  j["vocab"] = vocab_path;
  j["regime"] = gd::regime_name(regime);
  j["encoding"] = assembly::encoding_name(encoding);
  j["pe"] = graph_pe::pe_name(pe.kind);
  j["pe_k"] = pe.k;
  j["gnn_layers"] = pe.gnn_layers;
  j["peft"] = peft::mode_name(mode.kind);
  j["prefix_len"] = mode.prefix_len;
  j["rank"] = mode.rank;
  j["alpha"] = mode.alpha;
  j["vocab_size"] = model.vocab_size;
  j["d_model"] = model.d_model;
  j["n_layers"] = model.n_layers;
  j["n_heads"] = model.n_heads;
  j["d_ff"] = model.d_ff;
  j["cross_stride"] = model.cross_stride;
  j["steps"] = steps;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["seed"] = seed;
  j["out"] = out_dir;
  j["d_enc"] = d_enc;
  j["encoder_seed"] = encoder_seed;
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");

  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "train")
      cfg.train_path = value.get<std::string>();
    else if (key == "val")
      cfg.val_path = value.get<std::string>();
    else if (key == "vocab")
      cfg.vocab_path = value.get<std::string>();
    else if (key == "regime")
      cfg.regime = gd::regime_from_name(value.get<std::string>());
    else if (key == "encoding")
      cfg.encoding = assembly::encoding_from_name(value.get<std::string>());
    else if (key == "pe")
      cfg.pe.kind = graph_pe::pe_from_name(value.get<std::string>());
    else if (key == "pe_k")
      cfg.pe.k = value.get<std::size_t>();
    else if (key == "gnn_layers")
      cfg.pe.gnn_layers = value.get<std::size_t>();
    else if (key == "peft")
      cfg.mode.kind = peft::mode_from_name(value.get<std::string>());
    else if (key == "prefix_len")
      cfg.mode.prefix_len = value.get<std::size_t>();
    else if (key == "rank")
      cfg.mode.rank = value.get<std::size_t>();
    else if (key == "alpha")
      cfg.mode.alpha = value.get<double>();
    else if (key == "vocab_size")
      cfg.model.vocab_size = value.get<std::size_t>();
    else if (key == "d_model")
      cfg.model.d_model = value.get<std::size_t>();
    else if (key == "n_layers")
      cfg.model.n_layers = value.get<std::size_t>();
    else if (key == "n_heads")
      cfg.model.n_heads = value.get<std::size_t>();
    else if (key == "d_ff")
      cfg.model.d_ff = value.get<std::size_t>();
    else if (key == "cross_stride")
      cfg.model.cross_stride = value.get<std::size_t>();
    else if (key == "steps")
      cfg.steps = value.get<std::size_t>();
    else if (key == "batch_size")
      cfg.batch_size = value.get<std::size_t>();
    else if (key == "learning_rate")
      cfg.learning_rate = value.get<double>();
    else if (key == "seed")
      cfg.seed = value.get<uint64_t>();
    else if (key == "out")
      cfg.out_dir = value.get<std::string>();
    else if (key == "d_enc")
      cfg.d_enc = value.get<std::size_t>();
    else if (key == "encoder_seed")
      cfg.encoder_seed = value.get<uint64_t>();
    else
      throw std::invalid_argument("unknown config key '" + key + "'");
  }
  cfg.finalize();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string RunConfig::config_id() const {
  json j = json::parse(to_json());
  j.erase("out");  // the id names the experiment, not where it lands
  uint64_t h = fnv1a64(j.dump());
  auto folded = static_cast<uint32_t>(h ^ (h >> 32));
  return gd::regime_name(regime) + "_" + assembly::encoding_name(encoding) + "_" + pe_slug(pe) +
         "_" + mode_slug(mode) + "_s" + std::to_string(seed) + "_" + fmt("%08x", folded);
}

std::string RunConfig::run_dir() const { return out_dir + "/" + config_id(); }

std::string RunConfig::checkpoint_path() const { return run_dir() + "/checkpoint.mmgl"; }

Dataset load_split(const std::string& path, const gd::Vocab& vocab, gd::ContextRegime regime) {
  Dataset d;
  d.pages = gd::load_pages(path, vocab);
  d.examples = gd::make_examples(d.pages, regime);
  return d;
}

namespace {

std::size_t detect_feature_width(const Dataset& train, const Dataset& val) {
  for (const auto* split : {&train, &val})
    for (const auto& page : split->pages)
      for (const auto& node : page.nodes)
        if (node.kind == gd::NodeKind::Image) return node.image_feature.size();
  return 16;  // no images anywhere; the width is never exercised
}

std::size_t max_context_elements(const Dataset& d) {
  std::size_t worst = 1;
  for (const auto& ex : d.examples) {
    auto ctx = gd::select_context(d.pages[ex.page_index], ex.target_id, ex.regime);
    worst = std::max(worst, ctx.neighbors.size() + 1);
  }
  return worst;
}

peft::BundleConfig bundle_config(const RunConfig& cfg, std::size_t vocab_size,
                                 std::size_t feature_width, std::size_t table_size) {
  if (cfg.model.vocab_size != 0 && cfg.model.vocab_size != vocab_size)
    throw std::invalid_argument(fmt("vocab mismatch: config pins vocab_size %zu, vocab file has "
                                    "%zu tokens",
                                    cfg.model.vocab_size, vocab_size));
  peft::BundleConfig b;
  b.model = cfg.model;
  b.model.vocab_size = vocab_size;
  b.pe = cfg.pe;
  if (b.pe.kind == graph_pe::PEKind::Sequence) b.pe.table_size = table_size;
  b.encoding = cfg.encoding;
  b.mode = cfg.mode;
  b.d_enc = cfg.d_enc;
  b.image_feature_width = feature_width;
  b.encoder_seed = cfg.encoder_seed;
  return b;
}

std::string example_name(const Dataset& d, const gd::Example& ex) {
  return d.pages[ex.page_index].page_id + "/" + ex.target_id;
}

std::vector<assembly::AssembledInput> assemble_all(const Dataset& d,
                                                   assembly::NeighborEncoding enc,
                                                   const assembly::AssemblyCaps& caps) {
  std::vector<assembly::AssembledInput> out;
  out.reserve(d.examples.size());
  for (const auto& ex : d.examples) {
    const auto& page = d.pages[ex.page_index];
    auto ctx = gd::select_context(page, ex.target_id, ex.regime);
    out.push_back(assembly::assemble(page, ctx, enc, caps, example_name(d, ex)));
  }
  return out;
}

double mean_example_loss(const peft::ModelBundle& bundle,
                         const std::vector<assembly::AssembledInput>& inputs) {
  if (inputs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& a : inputs) total += peft::example_loss(bundle, a, nullptr).item();
  return total / static_cast<double>(inputs.size());
}

}  // namespace

TrainResult train(const RunConfig& cfg, std::ostream* console) {
  cfg.validate();
  double t0 = now_seconds();

  gd::Vocab vocab = gd::Vocab::load(cfg.vocab_path);
  Dataset train_d = load_split(cfg.train_path, vocab, cfg.regime);
  Dataset val_d = load_split(cfg.val_path, vocab, cfg.regime);
  if (train_d.examples.empty())
    throw std::runtime_error("training split " + cfg.train_path + " has no summary examples");

  std::size_t table = std::max(max_context_elements(train_d), max_context_elements(val_d));
  peft::BundleConfig bcfg =
      bundle_config(cfg, vocab.size(), detect_feature_width(train_d, val_d), table);
  peft::ModelBundle bundle = peft::make_bundle(bcfg);
  std::vector<Tensor> trainables = peft::configure_trainables(bundle);
  AdamState adam = adam_init(trainables, cfg.learning_rate);

  assembly::AssemblyCaps caps{cfg.model.max_seq_len, 0, false};
  auto train_in = assemble_all(train_d, cfg.encoding, caps);
  auto val_in = assemble_all(val_d, cfg.encoding, caps);

  TrainResult result;
  result.run_dir = cfg.run_dir();
  result.checkpoint_path = cfg.checkpoint_path();
  fs::create_directories(result.run_dir);
  {
    std::ofstream cf(result.run_dir + "/config.json");
    cf << cfg.to_json();
  }
  std::ofstream log_file(result.run_dir + "/train.log");
  auto log = [&](const std::string& line) {
    result.log.push_back(line);
    log_file << line << std::endl;  // flushed so the log is tailable mid-run
    if (console) *console << line << "\n";
  };

  log("config " + cfg.config_id());
  log(fmt("examples train %zu val %zu, params trainable %zu / total %zu", train_in.size(),
          val_in.size(), peft::count_params(bundle).trainable, peft::count_params(bundle).total));
  result.final_val_loss = mean_example_loss(bundle, val_in);
  log(fmt("step 0 val_loss %.6f", result.final_val_loss));

  Rng data_rng = Rng(cfg.seed).fork("data");
  std::vector<std::size_t> order(train_in.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces a shuffle before the first draw
  auto next_index = [&]() {
    if (cursor == order.size()) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[data_rng.uniform_int(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  std::size_t eval_every = std::max<std::size_t>(1, cfg.steps / 10);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    // Anything that blows up mid-step is a numeric explosion (structural
    // problems already surfaced during setup); report it with the step.
    try {
      for (auto& p : trainables) p.zero_grad();
      Tape tape;
      Tensor batch_sum;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        Tensor li = peft::example_loss(bundle, train_in[next_index()], &tape);
        batch_sum = b == 0 ? li : add(batch_sum, li, &tape);
      }
      Tensor loss = scale(batch_sum, 1.0 / static_cast<double>(cfg.batch_size), &tape);
      result.final_train_loss = loss.item();
      if (!std::isfinite(result.final_train_loss))
        throw std::runtime_error(fmt("loss %g is not finite", result.final_train_loss));
      backward_all(loss, tape);
      adam_step(trainables, adam);
      if (step % eval_every == 0 || step == cfg.steps) {
        result.final_val_loss = mean_example_loss(bundle, val_in);
        if (!std::isfinite(result.final_val_loss))
          throw std::runtime_error(fmt("val loss %g is not finite", result.final_val_loss));
        log(fmt("step %zu train_loss %.6f val_loss %.6f", step, result.final_train_loss,
                result.final_val_loss));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt("%s: training diverged at step %zu: %s",
                                   cfg.config_id().c_str(), step, e.what()));
    }
  }

  auto named = bundle.named_params();
  ckpt::save_checkpoint(result.checkpoint_path, named);
  log("saved checkpoint " + result.checkpoint_path);
  result.seconds = now_seconds() - t0;
  return result;
}

const char* const kCsvHeader =
    "config_id,regime,encoding,pe,peft,eval_loss,bleu4,rougeL,cider,trainable_params,"
    "total_params,fraction,seconds";

std::string ResultRow::csv_line() const {
  return fmt("%s,%s,%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%zu,%zu,%.6f,%.3f", config_id.c_str(),
             regime.c_str(), encoding.c_str(), pe.c_str(), peft.c_str(), eval_loss, bleu4, rougeL,
             cider, trainable_params, total_params, fraction, seconds);
}

void append_result(const std::string& csv_path, const ResultRow& row) {
  fs::path p(csv_path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  bool fresh = !fs::exists(p) || fs::file_size(p) == 0;
  std::ofstream out(csv_path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open results file " + csv_path);
  if (fresh) out << kCsvHeader << "\n";
  out << row.csv_line() << "\n";
}

std::size_t eval_threads() {
  if (const char* env = std::getenv("MMGL_THREADS")) {
    long n = std::strtol(env, nullptr, 10);
    return n >= 1 ? static_cast<std::size_t>(n) : 1;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw >= 1 ? hw : 1;
}

Scores score_generations(const std::vector<std::vector<int>>& hyps,
                         const std::vector<std::vector<int>>& refs, const gd::Vocab& vocab) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument("hypothesis and reference counts differ");
  std::vector<metrics::Sentence> h, r;
  h.reserve(hyps.size());
  r.reserve(refs.size());
  for (const auto& ids : hyps) h.push_back(vocab.words(ids));
  for (const auto& ids : refs) r.push_back(vocab.words(ids));

  Scores s;
  s.bleu4 = metrics::corpus_bleu4(h, r);
  double rouge_sum = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) rouge_sum += metrics::rouge_l(h[i], r[i]);
  s.rougeL = h.empty() ? 0.0 : rouge_sum / static_cast<double>(h.size());
  s.cider = metrics::cider(h, r, metrics::corpus_stats(r));
  return s;
}

ResultRow evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                   std::ostream* console) {
  cfg.validate();
  double t0 = now_seconds();

  gd::Vocab vocab = gd::Vocab::load(cfg.vocab_path);
  Dataset train_d = load_split(cfg.train_path, vocab, cfg.regime);
  Dataset val_d = load_split(cfg.val_path, vocab, cfg.regime);
  if (val_d.examples.empty())
    throw std::runtime_error("validation split " + cfg.val_path + " has no summary examples");

  std::size_t table = std::max(max_context_elements(train_d), max_context_elements(val_d));
  peft::BundleConfig bcfg =
      bundle_config(cfg, vocab.size(), detect_feature_width(train_d, val_d), table);
  peft::ModelBundle bundle = peft::make_bundle(bcfg);
  peft::configure_trainables(bundle);

  auto loaded = ckpt::load_checkpoint(checkpoint_path);
  for (const auto& t : loaded)
    if (t.name == "embed" && !t.shape.empty() && t.shape[0] != vocab.size())
      throw std::runtime_error(fmt("vocab mismatch: checkpoint embeds %zu tokens, vocab file has "
                                   "%zu",
                                   t.shape[0], vocab.size()));
  auto named = bundle.named_params();
  ckpt::restore_into(loaded, named);

  assembly::AssemblyCaps loss_caps{cfg.model.max_seq_len, 0, false};
  auto val_loss_in = assemble_all(val_d, cfg.encoding, loss_caps);
  double eval_loss = mean_example_loss(bundle, val_loss_in);

  assembly::AssemblyCaps gen_caps{cfg.model.max_seq_len, kEvalMaxNew, true};
  auto val_gen_in = assemble_all(val_d, cfg.encoding, gen_caps);

  std::size_t n = val_gen_in.size();
  std::vector<std::vector<int>> hyps(n), refs(n);
  for (std::size_t i = 0; i < n; ++i) refs[i] = val_gen_in[i].target->summary_tokens;

  std::size_t workers = std::min(eval_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      hyps[i] = peft::generate(bundle, val_gen_in[i], kEvalMaxNew);
  } else {
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
        hyps[i] = peft::generate(bundle, val_gen_in[i], kEvalMaxNew);
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  Scores scores = score_generations(hyps, refs, vocab);
  peft::ParamCounts counts = peft::count_params(bundle);

  ResultRow row;
  row.config_id = cfg.config_id();
  row.regime = gd::regime_name(cfg.regime);
  row.encoding = assembly::encoding_name(cfg.encoding);
  row.pe = pe_slug(cfg.pe);
  row.peft = mode_slug(cfg.mode);
  row.eval_loss = eval_loss;
  row.bleu4 = scores.bleu4;
  row.rougeL = scores.rougeL;
  row.cider = scores.cider;
  row.trainable_params = counts.trainable;
  row.total_params = counts.total;
  row.fraction = counts.fraction;
  row.seconds = now_seconds() - t0;
  if (console)
    *console << fmt("eval %s: loss %.6f bleu4 %.4f rougeL %.4f cider %.4f",
                    row.config_id.c_str(), row.eval_loss, row.bleu4, row.rougeL, row.cider)
             << "\n";
  return row;
}

std::vector<ResultRow> ablate(const GridSpec& grid, std::ostream* console) {
  auto regimes = grid.regimes.empty() ? std::vector<gd::ContextRegime>{grid.base.regime}
                                      : grid.regimes;
  auto encodings = grid.encodings.empty()
                       ? std::vector<assembly::NeighborEncoding>{grid.base.encoding}
                       : grid.encodings;
  auto pes = grid.pes.empty() ? std::vector<graph_pe::PEKind>{grid.base.pe.kind} : grid.pes;
  auto modes = grid.modes.empty() ? std::vector<peft::PeftMode>{grid.base.mode} : grid.modes;

  std::vector<ResultRow> rows;
  for (auto regime : regimes)
    for (auto encoding : encodings)
      for (auto pe : pes)
        for (const auto& mode : modes) {
          RunConfig cfg = grid.base;
          cfg.regime = regime;
          cfg.encoding = encoding;
          cfg.pe.kind = pe;
          cfg.mode = mode;
          cfg.finalize();
          std::string cell = gd::regime_name(regime) + " " + assembly::encoding_name(encoding) +
                             " " + pe_slug(cfg.pe) + " " + mode_slug(mode);
          try {
            cfg.validate();
          } catch (const std::exception& e) {
            if (console) *console << "skip " << cell << ": " << e.what() << "\n";
            continue;
          }
          if (console) *console << "cell " << cell << "\n";
          TrainResult tr = train(cfg, console);
          ResultRow row = evaluate(cfg, tr.checkpoint_path, console);
          row.seconds = tr.seconds + row.seconds;
          append_result(cfg.out_dir + "/results.csv", row);
          rows.push_back(row);
        }
  if (console) print_tables(rows, *console);
  return rows;
}

namespace {

void print_axis_table(const std::vector<ResultRow>& rows, const std::string& axis,
                      std::string ResultRow::* field, bool show_params, std::ostream& os) {
  os << "-- results by " << axis << " --\n";
  os << fmt("%-14s %-10s %-8s %-8s %-8s", axis.c_str(), "eval_loss", "bleu4", "rougeL", "cider");
  if (show_params) os << fmt(" %-16s %-10s", "trainable", "fraction");
  os << "  config\n";
  std::vector<const ResultRow*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [&](const ResultRow* a, const ResultRow* b) { return a->*field < b->*field; });
  for (const ResultRow* r : sorted) {
    os << fmt("%-14s %-10.6f %-8.4f %-8.4f %-8.4f", (r->*field).c_str(), r->eval_loss, r->bleu4,
              r->rougeL, r->cider);
    if (show_params) os << fmt(" %-16zu %-10.6f", r->trainable_params, r->fraction);
    os << "  " << r->config_id << "\n";
  }
  os << "\n";
}

}  // namespace

void print_tables(const std::vector<ResultRow>& rows, std::ostream& os) {
  print_axis_table(rows, "regime", &ResultRow::regime, false, os);
  print_axis_table(rows, "encoding", &ResultRow::encoding, false, os);
  print_axis_table(rows, "position encoding", &ResultRow::pe, false, os);
  print_axis_table(rows, "adaptation", &ResultRow::peft, true, os);
}

std::vector<std::string> GradcheckReport::failing_tensors() const {
  std::vector<std::string> out;
  for (const auto& combo : combos)
    for (const auto& t : combo.tensors)
      if (t.max_rel_err >= tolerance) out.push_back(combo.name + ": " + t.name);
  return out;
}

GradcheckReport gradcheck(uint64_t seed, double tolerance, double h, std::ostream* console) {
  gd::SynthParams sp;
  sp.n_pages = 4;
  sp.sections_per_page = 2;
  sp.tokens_per_section = 4;
  sp.vocab_size = 64;
  sp.leak_count = 1;
  sp.topic_pool = 6;
  sp.summary_copy_len = 2;
  sp.image_feature_width = 6;
  gd::SynthData data = gd::synth_dataset(seed, sp);
  auto examples = gd::make_examples(data.pages, gd::ContextRegime::PageAll);
  Dataset d{data.pages, examples};
  std::size_t table = max_context_elements(d);

  lm::ModelConfig model;
  model.vocab_size = data.vocab.size();
  model.d_model = 8;
  model.n_layers = 2;
  model.n_heads = 2;
  model.d_ff = 16;
  model.max_seq_len = 128;
  model.seed = seed;

  GradcheckReport report;
  report.tolerance = tolerance;
  report.pass = true;

  using assembly::NeighborEncoding;
  using graph_pe::PEKind;
  std::size_t combo_count = 0;
  for (auto enc : {NeighborEncoding::SA_TE, NeighborEncoding::SA_E, NeighborEncoding::CA_E}) {
    std::vector<peft::PeftMode> modes;
    if (enc == NeighborEncoding::CA_E)
      modes = {peft::PeftMode::full(), peft::PeftMode::flamingo()};
    else
      modes = {peft::PeftMode::full(), peft::PeftMode::prefix(2), peft::PeftMode::lora(2, 4.0)};
    for (auto pe : {PEKind::Sequence, PEKind::LPE, PEKind::GNN})
      for (const auto& mode : modes) {
        peft::BundleConfig bcfg;
        bcfg.model = model;
        bcfg.model.cross_attention = enc == NeighborEncoding::CA_E;
        bcfg.pe.kind = pe;
        bcfg.pe.k = 3;
        bcfg.pe.gnn_layers = 2;
        bcfg.pe.table_size = table;
        bcfg.encoding = enc;
        bcfg.mode = mode;
        bcfg.d_enc = 10;
        bcfg.image_feature_width = sp.image_feature_width;
        bcfg.encoder_seed = seed + 1;
        bcfg.validate();

        peft::ModelBundle bundle = peft::make_bundle(bcfg);
        std::vector<Tensor> trainables = peft::configure_trainables(bundle);
        // At exactly zero the gates cut every gradient path through the
        // cross blocks, so those checks would pass without testing anything.
        for (auto& block : bundle.model.cross) {
          block.g_attn.data()[0] = 0.1;
          block.g_ff.data()[0] = 0.1;
        }

        std::unordered_map<const double*, std::string> names;
        for (const auto& nt : bundle.named_params()) names[nt.tensor.data()] = nt.name;

        const auto& page = d.pages[d.examples[0].page_index];
        auto ctx = gd::select_context(page, d.examples[0].target_id, d.examples[0].regime);
        assembly::AssemblyCaps caps{model.max_seq_len, 0, false};
        auto input = assembly::assemble(page, ctx, enc, caps, "gradcheck");

        for (auto& p : trainables) p.zero_grad();
        Tape tape;
        Tensor loss = peft::example_loss(bundle, input, &tape);
        backward_all(loss, tape);

        ComboReport combo;
        combo.name = assembly::encoding_name(enc) + " " + graph_pe::pe_name(pe) + " " +
                     mode_slug(mode);
        for (auto& p : trainables) {
          TensorCheck check;
          auto it = names.find(p.data());
          check.name = it != names.end() ? it->second : "unnamed";
          for (std::size_t i = 0; i < p.size(); ++i) {
            double keep = p.data()[i];
            p.data()[i] = keep + h;
            double up = peft::example_loss(bundle, input, nullptr).item();
            p.data()[i] = keep - h;
            double down = peft::example_loss(bundle, input, nullptr).item();
            p.data()[i] = keep;
            double numeric = (up - down) / (2.0 * h);
            double analytic = p.grad()[i];
            double err = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
            check.max_rel_err = std::max(check.max_rel_err, err);
          }
          combo.max_rel_err = std::max(combo.max_rel_err, check.max_rel_err);
          combo.tensors.push_back(std::move(check));
        }
        combo.pass = combo.max_rel_err < tolerance;
        report.pass = report.pass && combo.pass;
        ++combo_count;
        if (console)
          *console << fmt("[%2zu] %-28s max rel err %.3e over %zu tensors  %s", combo_count,
                          combo.name.c_str(), combo.max_rel_err, combo.tensors.size(),
                          combo.pass ? "ok" : "FAIL")
                   << "\n";
        report.combos.push_back(std::move(combo));
      }
  }
  if (console) {
    std::size_t ok = 0;
    for (const auto& c : report.combos) ok += c.pass ? 1 : 0;
    *console << fmt("gradcheck: %zu/%zu combos within %.1e", ok, report.combos.size(), tolerance)
             << "\n";
    for (const auto& name : report.failing_tensors()) *console << "  over tolerance: " << name
                                                               << "\n";
  }
  return report;
}

}  // namespace mmgl::harness
