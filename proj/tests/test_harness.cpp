#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mmgl/graphdoc.hpp"
#include "mmgl/harness.hpp"

using namespace mmgl;
namespace gd = mmgl::graphdoc;
namespace hn = mmgl::harness;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mmgl_harness_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

// Small corpus on disk: returns the data dir.
std::string write_corpus(const TempDir& dir, uint64_t seed, std::size_t pages,
                         std::size_t val_pages) {
  gd::SynthParams sp;
  sp.n_pages = pages;
  sp.sections_per_page = 2;
  sp.tokens_per_section = 5;
  sp.vocab_size = 96;
  sp.leak_count = 1;
  sp.topic_pool = 8;
  sp.summary_copy_len = 2;
  sp.image_feature_width = 6;
  gd::SynthData data = gd::synth_dataset(seed, sp);
  std::string out = dir / "data";
  fs::create_directories(out);
  data.vocab.save(out + "/vocab.txt");
  std::vector<gd::PageGraph> train(data.pages.begin(), data.pages.end() - val_pages);
  std::vector<gd::PageGraph> val(data.pages.end() - val_pages, data.pages.end());
  gd::save_pages(out + "/train.jsonl", train, data.vocab);
  gd::save_pages(out + "/val.jsonl", val, data.vocab);
  return out;
}

hn::RunConfig small_config(const std::string& data_dir, const std::string& out_dir) {
  hn::RunConfig cfg;
  cfg.train_path = data_dir + "/train.jsonl";
  cfg.val_path = data_dir + "/val.jsonl";
  cfg.vocab_path = data_dir + "/vocab.txt";
  cfg.model.d_model = 16;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 32;
  cfg.regime = gd::ContextRegime::PageAll;
  cfg.encoding = assembly::NeighborEncoding::SA_TE;
  cfg.pe.kind = graph_pe::PEKind::Sequence;
  cfg.mode = peft::PeftMode::full();
  cfg.steps = 4;
  cfg.batch_size = 3;
  cfg.learning_rate = 1e-3;
  cfg.seed = 5;
  cfg.d_enc = 12;
  cfg.out_dir = out_dir;
  cfg.finalize();
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string drop_seconds(const std::string& csv_line) {
  return csv_line.substr(0, csv_line.rfind(','));
}

}  // namespace

TEST_CASE("config json round trip preserves every field") {
  hn::RunConfig cfg;
  cfg.train_path = "a/train.jsonl";
  cfg.val_path = "a/val.jsonl";
  cfg.vocab_path = "a/vocab.txt";
  cfg.regime = gd::ContextRegime::PageText;
  cfg.encoding = assembly::NeighborEncoding::SA_E;
  cfg.pe.kind = graph_pe::PEKind::LPE;
  cfg.pe.k = 6;
  cfg.pe.gnn_layers = 3;
  cfg.mode = peft::PeftMode::lora(4, 8.0);
  cfg.model.d_model = 64;
  cfg.model.n_layers = 3;
  cfg.model.n_heads = 4;
  cfg.model.d_ff = 96;
  cfg.steps = 17;
  cfg.batch_size = 5;
  cfg.learning_rate = 3e-4;
  cfg.seed = 99;
  cfg.out_dir = "some/out";
  cfg.d_enc = 24;
  cfg.encoder_seed = 13;
  cfg.finalize();

  hn::RunConfig back = hn::RunConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.train_path == cfg.train_path);
  CHECK(back.regime == cfg.regime);
  CHECK(back.encoding == cfg.encoding);
  CHECK(back.pe.kind == cfg.pe.kind);
  CHECK(back.pe.k == 6);
  CHECK(back.mode.kind == peft::PeftKind::LoRA);
  CHECK(back.mode.rank == 4);
  CHECK(back.mode.alpha == 8.0);
  CHECK(back.steps == 17);
  CHECK(back.seed == 99);
  CHECK(back.model.max_seq_len == 512);  // derived, sa_e never widens
  CHECK(back.config_id() == cfg.config_id());

  SUBCASE("file round trip") {
    TempDir dir("cfgfile");
    std::ofstream(dir / "run.json") << cfg.to_json();
    hn::RunConfig loaded = hn::RunConfig::load(dir / "run.json");
    CHECK(loaded.to_json() == cfg.to_json());
  }

  SUBCASE("unknown keys are rejected") {
    CHECK_THROWS_AS((void)hn::RunConfig::from_json("{\"stepz\": 3}"), std::invalid_argument);
    CHECK_THROWS_AS((void)hn::RunConfig::from_json("{\"max_seq_len\": 64}"),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)hn::RunConfig::from_json("not json"), std::invalid_argument);
  }
}

TEST_CASE("config id tracks the experiment, not the output dir") {
  hn::RunConfig a;
  a.finalize();
  hn::RunConfig b = a;
  b.out_dir = "elsewhere";
  CHECK(a.config_id() == b.config_id());

  hn::RunConfig c = a;
  c.seed = a.seed + 1;
  c.finalize();
  CHECK(a.config_id() != c.config_id());

  hn::RunConfig d = a;
  d.learning_rate = 2e-4;
  CHECK(a.config_id() != d.config_id());

  CHECK(a.config_id().find("page_all_sa_te_sequence_full_s1_") == 0);
}

TEST_CASE("sequence caps follow encoding and regime") {
  using assembly::NeighborEncoding;
  using gd::ContextRegime;
  CHECK(hn::expected_max_seq_len(NeighborEncoding::SA_TE, ContextRegime::PageText) == 1024);
  CHECK(hn::expected_max_seq_len(NeighborEncoding::SA_TE, ContextRegime::PageAll) == 1024);
  CHECK(hn::expected_max_seq_len(NeighborEncoding::SA_TE, ContextRegime::SectionText) == 512);
  CHECK(hn::expected_max_seq_len(NeighborEncoding::SA_TE, ContextRegime::SectionAll) == 512);
  CHECK(hn::expected_max_seq_len(NeighborEncoding::SA_E, ContextRegime::PageAll) == 512);
  CHECK(hn::expected_max_seq_len(NeighborEncoding::CA_E, ContextRegime::PageAll) == 512);

  hn::RunConfig cfg;
  cfg.encoding = assembly::NeighborEncoding::SA_TE;
  cfg.regime = gd::ContextRegime::PageAll;
  cfg.finalize();
  CHECK(cfg.model.max_seq_len == 1024);
  CHECK_NOTHROW(cfg.validate());
  cfg.model.max_seq_len = 512;  // tampered after finalize
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("illegal pairings are refused before training touches anything") {
  TempDir dir("refuse");
  std::string data = write_corpus(dir, 3, 6, 2);
  hn::RunConfig cfg = small_config(data, dir / "runs");
  cfg.encoding = assembly::NeighborEncoding::CA_E;
  cfg.mode = peft::PeftMode::prefix(4);
  cfg.finalize();

  bool threw = false;
  try {
    hn::train(cfg);
  } catch (const std::invalid_argument& e) {
    threw = true;
    CHECK(std::string(e.what()).find("pair") != std::string::npos);
  }
  CHECK(threw);
  CHECK_FALSE(fs::exists(cfg.run_dir()));

  SUBCASE("flamingo without cross-attention is caught the same way") {
    hn::RunConfig bad = small_config(data, dir / "runs2");
    bad.encoding = assembly::NeighborEncoding::SA_TE;
    bad.mode = peft::PeftMode::flamingo();
    bad.finalize();
    CHECK_THROWS_AS(hn::train(bad), std::invalid_argument);
    CHECK_FALSE(fs::exists(bad.run_dir()));
  }
}

TEST_CASE("zero steps leaves the checkpoint at initialization") {
  TempDir dir("init");
  std::string data = write_corpus(dir, 7, 6, 2);
  hn::RunConfig cfg = small_config(data, dir / "runs");
  cfg.steps = 0;
  hn::TrainResult r0 = hn::train(cfg);

  // A second zero-step run writes the identical file: both are the untouched
  // seeded initialization.
  hn::RunConfig again = cfg;
  again.out_dir = dir / "runs_b";
  hn::TrainResult r1 = hn::train(again);
  CHECK(slurp(r0.checkpoint_path) == slurp(r1.checkpoint_path));

  // And a trained run moves away from it.
  hn::RunConfig moved = cfg;
  moved.steps = 2;
  moved.out_dir = dir / "runs_c";
  hn::TrainResult r2 = hn::train(moved);
  CHECK(slurp(r0.checkpoint_path) != slurp(r2.checkpoint_path));
}

TEST_CASE("training and evaluation are reproducible bit for bit") {
  TempDir dir("repro");
  std::string data = write_corpus(dir, 11, 8, 3);
  hn::RunConfig cfg = small_config(data, dir / "runs");
  cfg.steps = 3;

  hn::TrainResult a = hn::train(cfg);
  std::string ckpt_a = slurp(a.checkpoint_path);
  hn::ResultRow row_a = hn::evaluate(cfg, a.checkpoint_path);

  hn::TrainResult b = hn::train(cfg);  // same out dir, same everything
  CHECK(slurp(b.checkpoint_path) == ckpt_a);
  CHECK(a.log == b.log);
  hn::ResultRow row_b = hn::evaluate(cfg, b.checkpoint_path);

  CHECK(drop_seconds(row_a.csv_line()) == drop_seconds(row_b.csv_line()));
  CHECK(row_a.eval_loss == row_b.eval_loss);
  CHECK(row_a.bleu4 == row_b.bleu4);
  CHECK(row_a.cider == row_b.cider);

  SUBCASE("a different seed changes the checkpoint") {
    hn::RunConfig other = cfg;
    other.seed = cfg.seed + 1;
    other.finalize();
    other.out_dir = dir / "runs_seed";
    hn::TrainResult c = hn::train(other);
    CHECK(slurp(c.checkpoint_path) != ckpt_a);
  }
}

TEST_CASE("five examples overfit below 0.05 within 500 steps at full width") {
  TempDir dir("overfit");
  gd::SynthParams sp;  // full-size pages and vocab, five of them
  sp.n_pages = 6;
  gd::SynthData data = gd::synth_dataset(21, sp);
  std::string out = dir / "data";
  fs::create_directories(out);
  data.vocab.save(out + "/vocab.txt");
  std::vector<gd::PageGraph> train(data.pages.begin(), data.pages.end() - 1);
  std::vector<gd::PageGraph> val(data.pages.end() - 1, data.pages.end());
  gd::save_pages(out + "/train.jsonl", train, data.vocab);
  gd::save_pages(out + "/val.jsonl", val, data.vocab);

  hn::RunConfig cfg;
  cfg.train_path = out + "/train.jsonl";
  cfg.val_path = out + "/val.jsonl";
  cfg.vocab_path = out + "/vocab.txt";
  cfg.regime = gd::ContextRegime::SectionText;
  cfg.encoding = assembly::NeighborEncoding::SA_TE;
  cfg.pe.kind = graph_pe::PEKind::Sequence;
  cfg.mode = peft::PeftMode::full();
  cfg.steps = 500;
  cfg.seed = 9;
  cfg.out_dir = dir / "runs";
  cfg.finalize();

  hn::TrainResult r = hn::train(cfg);
  CHECK(r.final_train_loss < 0.05);
}

TEST_CASE("divergent training aborts with the offending step") {
  TempDir dir("nan");
  std::string data = write_corpus(dir, 13, 6, 2);
  hn::RunConfig cfg = small_config(data, dir / "runs");
  cfg.steps = 6;
  cfg.learning_rate = 1e150;

  bool threw = false;
  try {
    hn::train(cfg);
  } catch (const std::runtime_error& e) {
    threw = true;
    std::string msg = e.what();
    CHECK(msg.find("diverged at step") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("gold hypotheses score perfectly, empty ones score zero") {
  gd::SynthParams sp;
  sp.n_pages = 4;
  sp.vocab_size = 96;
  sp.topic_pool = 8;
  sp.image_feature_width = 6;
  gd::SynthData data = gd::synth_dataset(31, sp);
  std::vector<std::vector<int>> refs;
  for (const auto& page : data.pages)
    for (const auto& node : page.nodes)
      if (node.has_summary) refs.push_back(node.summary_tokens);
  REQUIRE(refs.size() == 4);

  hn::Scores gold = hn::score_generations(refs, refs, data.vocab);
  CHECK(gold.bleu4 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(gold.rougeL == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(gold.cider > 0.0);

  std::vector<std::vector<int>> empty(refs.size());
  hn::Scores none = hn::score_generations(empty, refs, data.vocab);
  CHECK(none.bleu4 == 0.0);
  CHECK(none.rougeL == 0.0);
  CHECK(none.cider == 0.0);

  CHECK_THROWS_AS((void)hn::score_generations(empty, {}, data.vocab), std::exception);
}

TEST_CASE("evaluation rejects a vocab that disagrees with the config") {
  TempDir dir("vocabmm");
  std::string data = write_corpus(dir, 17, 6, 2);
  hn::RunConfig cfg = small_config(data, dir / "runs");
  cfg.steps = 1;
  hn::TrainResult r = hn::train(cfg);

  hn::RunConfig pinned = cfg;
  pinned.model.vocab_size = 4096;  // dataset vocab is far smaller
  bool threw = false;
  try {
    hn::evaluate(pinned, r.checkpoint_path);
  } catch (const std::exception& e) {
    threw = true;
    CHECK(std::string(e.what()).find("vocab") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("results csv gets one schema header and appends") {
  TempDir dir("csv");
  hn::ResultRow row;
  row.config_id = "cell_a";
  row.regime = "page_all";
  row.encoding = "sa_te";
  row.pe = "sequence";
  row.peft = "full";
  row.eval_loss = 1.25;
  row.bleu4 = 0.5;
  row.rougeL = 0.75;
  row.cider = 2.5;
  row.trainable_params = 10;
  row.total_params = 20;
  row.fraction = 0.5;
  row.seconds = 1.5;

  std::string csv = dir / "results.csv";
  hn::append_result(csv, row);
  row.config_id = "cell_b";
  hn::append_result(csv, row);

  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == hn::kCsvHeader);
  std::getline(in, line);
  CHECK(line == "cell_a,page_all,sa_te,sequence,full,1.250000,0.500000,0.750000,2.500000,10,20,"
                "0.500000,1.500");
  std::getline(in, line);
  CHECK(line.find("cell_b,") == 0);
  CHECK_FALSE(std::getline(in, line));

  // 13 columns in every line, matching the header.
  std::size_t commas = 0;
  for (char ch : std::string(hn::kCsvHeader)) commas += ch == ',';
  CHECK(commas == 12);
}

TEST_CASE("ablation skips illegal cells and reports the legal ones") {
  TempDir dir("grid");
  std::string data = write_corpus(dir, 19, 6, 2);
  hn::GridSpec grid;
  grid.base = small_config(data, dir / "runs");
  grid.base.steps = 2;
  grid.encodings = {assembly::NeighborEncoding::SA_TE, assembly::NeighborEncoding::CA_E};
  grid.modes = {peft::PeftMode::prefix(2), peft::PeftMode::flamingo()};

  std::ostringstream console;
  std::vector<hn::ResultRow> rows = hn::ablate(grid, &console);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].encoding == "sa_te");
  CHECK(rows[0].peft == "prefix2");
  CHECK(rows[1].encoding == "ca_e");
  CHECK(rows[1].peft == "flamingo");
  CHECK(console.str().find("skip") != std::string::npos);
  CHECK(console.str().find("pair") != std::string::npos);

  std::ifstream csv(dir / std::string("runs/results.csv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 3);  // header plus the two legal cells

  std::ostringstream tables;
  hn::print_tables(rows, tables);
  CHECK(tables.str().find("results by regime") != std::string::npos);
  CHECK(tables.str().find("results by encoding") != std::string::npos);
  CHECK(tables.str().find("results by position encoding") != std::string::npos);
  CHECK(tables.str().find("results by adaptation") != std::string::npos);
  CHECK(tables.str().find("flamingo") != std::string::npos);
}

TEST_CASE("thread count changes nothing but the wall clock") {
  TempDir dir("threads");
  std::string data = write_corpus(dir, 23, 8, 4);
  hn::RunConfig cfg = small_config(data, dir / "runs");
  cfg.steps = 2;
  hn::TrainResult r = hn::train(cfg);

  setenv("MMGL_THREADS", "1", 1);
  CHECK(hn::eval_threads() == 1);
  hn::ResultRow serial = hn::evaluate(cfg, r.checkpoint_path);
  setenv("MMGL_THREADS", "3", 1);
  CHECK(hn::eval_threads() == 3);
  hn::ResultRow threaded = hn::evaluate(cfg, r.checkpoint_path);
  unsetenv("MMGL_THREADS");

  CHECK(drop_seconds(serial.csv_line()) == drop_seconds(threaded.csv_line()));
}

TEST_CASE("gradient check clears every legal combination") {
  hn::GradcheckReport report = hn::gradcheck();
  CHECK(report.combos.size() == 24);
  CHECK(report.pass);
  CHECK(report.failing_tensors().empty());
  for (const auto& combo : report.combos) {
    CHECK(combo.pass);
    CHECK(combo.max_rel_err < report.tolerance);
    CHECK_FALSE(combo.tensors.empty());
  }

  SUBCASE("a hopeless tolerance names the offenders") {
    hn::GradcheckReport strict = hn::gradcheck(7, 1e-18, 1e-5);
    CHECK_FALSE(strict.pass);
    CHECK_FALSE(strict.failing_tensors().empty());
  }
}

TEST_CASE("splits load back with their regime applied") {
  TempDir dir("load");
  std::string data = write_corpus(dir, 29, 6, 2);
  gd::Vocab vocab = gd::Vocab::load(data + "/vocab.txt");

  hn::Dataset train = hn::load_split(data + "/train.jsonl", vocab, gd::ContextRegime::PageAll);
  CHECK(train.pages.size() == 4);
  CHECK(train.examples.size() == 4);  // one summary target per page
  for (const auto& ex : train.examples) CHECK(ex.regime == gd::ContextRegime::PageAll);

  hn::Dataset val = hn::load_split(data + "/val.jsonl", vocab, gd::ContextRegime::SectionText);
  CHECK(val.pages.size() == 2);
  for (const auto& ex : val.examples) CHECK(ex.regime == gd::ContextRegime::SectionText);
}
