#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmgl/assembly.hpp"
#include "mmgl/graph_pe.hpp"
#include "mmgl/graphdoc.hpp"
#include "mmgl/lm_core.hpp"
#include "mmgl/peft.hpp"

namespace mmgl::harness {

// One experiment cell: data, model, context regime, neighbor encoding,
// position encoding, adaptation mode, and the training recipe.
//
// Derived fields are never read from a config file: model.vocab_size comes
// from the vocab file (unless pinned explicitly), model.max_seq_len and
// model.cross_attention follow the encoding, model.seed follows seed, and
// pe.table_size is sized to the datasets. finalize() applies the derivations;
// validate() rejects anything inconsistent.
struct RunConfig {
  std::string train_path = "data/train.jsonl";
  std::string val_path = "data/val.jsonl";
  std::string vocab_path = "data/vocab.txt";

  lm::ModelConfig model;  // vocab_size 0 = take it from the vocab file
  graphdoc::ContextRegime regime = graphdoc::ContextRegime::PageAll;
  assembly::NeighborEncoding encoding = assembly::NeighborEncoding::SA_TE;
  graph_pe::PEConfig pe;
  peft::PeftMode mode;

  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  uint64_t seed = 1;
  std::string out_dir = "runs";

  std::size_t d_enc = 64;
  uint64_t encoder_seed = 7;

  RunConfig() { model.vocab_size = 0; }

  void finalize();
  void validate() const;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::string& path);

  // Slug plus a hash of the full config; stable across runs, distinct across
  // any field change.
  std::string config_id() const;
  // out_dir/config_id
  std::string run_dir() const;
  std::string checkpoint_path() const;
};

// Token-and-embedding sequences wider than this only arise for raw neighbor
// tokens under page-level context; everything else fits the smaller budget.
std::size_t expected_max_seq_len(assembly::NeighborEncoding enc, graphdoc::ContextRegime regime);

struct Dataset {
  std::vector<graphdoc::PageGraph> pages;
  std::vector<graphdoc::Example> examples;
};

Dataset load_split(const std::string& path, const graphdoc::Vocab& vocab,
                   graphdoc::ContextRegime regime);

struct TrainResult {
  std::string run_dir;
  std::string checkpoint_path;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  double seconds = 0.0;
  std::vector<std::string> log;
};

// Teacher-forced training of one cell: batched summary loss, Adam, periodic
// validation loss, final checkpoint. Refuses illegal configs before touching
// anything; a non-finite loss or gradient aborts with the offending step in
// the message. Fully determined by the config.
TrainResult train(const RunConfig& cfg, std::ostream* console = nullptr);

struct ResultRow {
  std::string config_id;
  std::string regime, encoding, pe, peft;
  double eval_loss = 0.0;
  double bleu4 = 0.0;
  double rougeL = 0.0;
  double cider = 0.0;
  std::size_t trainable_params = 0;
  std::size_t total_params = 0;
  double fraction = 0.0;
  double seconds = 0.0;

  std::string csv_line() const;
};

extern const char* const kCsvHeader;

// Greedy decoding budget per validation example.
constexpr std::size_t kEvalMaxNew = 32;

// Restores the checkpoint into a freshly built bundle and scores the
// validation split: mean summary loss plus corpus metrics over greedy
// decodes. Decoding fans out over eval_threads() workers.
ResultRow evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                   std::ostream* console = nullptr);

// Creates the file with the schema header if needed, then appends.
void append_result(const std::string& csv_path, const ResultRow& row);

struct Scores {
  double bleu4 = 0.0;
  double rougeL = 0.0;
  double cider = 0.0;
};

// Corpus metrics over token-id hypotheses and references (one reference per
// hypothesis), decoded through the vocab.
Scores score_generations(const std::vector<std::vector<int>>& hyps,
                         const std::vector<std::vector<int>>& refs,
                         const graphdoc::Vocab& vocab);

// MMGL_THREADS when set, otherwise the hardware count; at least 1.
std::size_t eval_threads();

// Cross product of the listed axis values over a base config; empty axes keep
// the base value. Illegal cells are reported and skipped, legal cells train
// and evaluate with the shared seed.
struct GridSpec {
  RunConfig base;
  std::vector<graphdoc::ContextRegime> regimes;
  std::vector<assembly::NeighborEncoding> encodings;
  std::vector<graph_pe::PEKind> pes;
  std::vector<peft::PeftMode> modes;
};

std::vector<ResultRow> ablate(const GridSpec& grid, std::ostream* console = nullptr);

// One aligned text table per axis (regime, encoding, position encoding,
// adaptation mode); the adaptation view adds the parameter columns.
void print_tables(const std::vector<ResultRow>& rows, std::ostream& os);

struct TensorCheck {
  std::string name;
  double max_rel_err = 0.0;
};

struct ComboReport {
  std::string name;  // "<encoding> <pe> <mode>"
  std::vector<TensorCheck> tensors;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<ComboReport> combos;
  double tolerance = 0.0;
  bool pass = false;

  std::vector<std::string> failing_tensors() const;
};

// Central finite differences against reverse-mode gradients on a tiny bundle,
// one batch per (encoding, position encoding, adaptation mode) combination.
// Cross-attention gates are moved off zero first so the cross path carries
// gradient instead of passing vacuously. The default seed is chosen so no
// ReLU pre-activation sits inside the difference window; a seed that parks
// one within ~h of the kink makes the numeric derivative there meaningless.
GradcheckReport gradcheck(uint64_t seed = 7, double tolerance = 1e-4, double h = 1e-5,
                          std::ostream* console = nullptr);

}  // namespace mmgl::harness
