#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmgl/graphdoc.hpp"
#include "mmgl/harness.hpp"

namespace gd = mmgl::graphdoc;
namespace hn = mmgl::harness;

namespace {

int run_generate_data(uint64_t seed, const std::string& out_dir, const gd::SynthParams& params,
                      std::size_t val_pages) {
  if (val_pages >= params.n_pages)
    throw std::invalid_argument("generate-data: val pages must leave at least one train page");
  std::filesystem::create_directories(out_dir);
  gd::SynthData data = gd::synth_dataset(seed, params);
  std::vector<gd::PageGraph> train(data.pages.begin(), data.pages.end() - val_pages);
  std::vector<gd::PageGraph> val(data.pages.end() - val_pages, data.pages.end());
  data.vocab.save(out_dir + "/vocab.txt");
  gd::save_pages(out_dir + "/train.jsonl", train, data.vocab);
  gd::save_pages(out_dir + "/val.jsonl", val, data.vocab);
  std::cout << "wrote " << train.size() << " train pages, " << val.size() << " val pages, vocab "
            << data.vocab.size() << " to " << out_dir << "\n";
  return 0;
}

// Config file first, then any flag given on the command line on top.
struct RunFlags {
  std::string config_path;
  hn::RunConfig values;

  CLI::Option* train = nullptr;
  CLI::Option* val = nullptr;
  CLI::Option* vocab = nullptr;
  CLI::Option* regime = nullptr;
  CLI::Option* encoding = nullptr;
  CLI::Option* pe = nullptr;
  CLI::Option* pe_k = nullptr;
  CLI::Option* gnn_layers = nullptr;
  CLI::Option* peft = nullptr;
  CLI::Option* prefix_len = nullptr;
  CLI::Option* rank = nullptr;
  CLI::Option* alpha = nullptr;
  CLI::Option* d_model = nullptr;
  CLI::Option* n_layers = nullptr;
  CLI::Option* n_heads = nullptr;
  CLI::Option* d_ff = nullptr;
  CLI::Option* steps = nullptr;
  CLI::Option* batch = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* out = nullptr;

  std::string regime_s, encoding_s, pe_s, peft_s;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override it");
    train = cmd->add_option("--train", values.train_path, "training pages (jsonl)");
    val = cmd->add_option("--val", values.val_path, "validation pages (jsonl)");
    vocab = cmd->add_option("--vocab", values.vocab_path, "vocab file");
    regime = cmd->add_option("--regime", regime_s,
                             "context regime: section_text|section_all|page_text|page_all");
    encoding = cmd->add_option("--encoding", encoding_s, "neighbor encoding: sa_te|sa_e|ca_e");
    pe = cmd->add_option("--pe", pe_s, "position encoding: sequence|lpe|gnn");
    pe_k = cmd->add_option("--pe-k", values.pe.k, "eigenvectors kept by lpe");
    gnn_layers = cmd->add_option("--gnn-layers", values.pe.gnn_layers, "gnn rounds");
    peft = cmd->add_option("--peft", peft_s, "adaptation: full|prefix|lora|flamingo");
    prefix_len = cmd->add_option("--prefix-len", values.mode.prefix_len, "prefix rows per layer");
    rank = cmd->add_option("--rank", values.mode.rank, "lora rank");
    alpha = cmd->add_option("--alpha", values.mode.alpha, "lora alpha");
    d_model = cmd->add_option("--d-model", values.model.d_model, "model width");
    n_layers = cmd->add_option("--layers", values.model.n_layers, "decoder layers");
    n_heads = cmd->add_option("--heads", values.model.n_heads, "attention heads");
    d_ff = cmd->add_option("--d-ff", values.model.d_ff, "feed-forward width");
    steps = cmd->add_option("--steps", values.steps, "training steps");
    batch = cmd->add_option("--batch", values.batch_size, "batch size");
    lr = cmd->add_option("--lr", values.learning_rate, "learning rate");
    seed = cmd->add_option("--seed", values.seed, "rng seed");
    out = cmd->add_option("--out", values.out_dir, "output directory");
  }

  hn::RunConfig resolve() const {
    hn::RunConfig cfg;
    if (!config_path.empty()) cfg = hn::RunConfig::load(config_path);
    if (train->count()) cfg.train_path = values.train_path;
    if (val->count()) cfg.val_path = values.val_path;
    if (vocab->count()) cfg.vocab_path = values.vocab_path;
    if (regime->count()) cfg.regime = gd::regime_from_name(regime_s);
    if (encoding->count()) cfg.encoding = mmgl::assembly::encoding_from_name(encoding_s);
    if (pe->count()) cfg.pe.kind = mmgl::graph_pe::pe_from_name(pe_s);
    if (pe_k->count()) cfg.pe.k = values.pe.k;
    if (gnn_layers->count()) cfg.pe.gnn_layers = values.pe.gnn_layers;
    if (peft->count()) cfg.mode.kind = mmgl::peft::mode_from_name(peft_s);
    if (prefix_len->count()) cfg.mode.prefix_len = values.mode.prefix_len;
    if (rank->count()) cfg.mode.rank = values.mode.rank;
    if (alpha->count()) cfg.mode.alpha = values.mode.alpha;
    if (d_model->count()) cfg.model.d_model = values.model.d_model;
    if (n_layers->count()) cfg.model.n_layers = values.model.n_layers;
    if (n_heads->count()) cfg.model.n_heads = values.model.n_heads;
    if (d_ff->count()) cfg.model.d_ff = values.model.d_ff;
    if (steps->count()) cfg.steps = values.steps;
    if (batch->count()) cfg.batch_size = values.batch_size;
    if (lr->count()) cfg.learning_rate = values.learning_rate;
    if (seed->count()) cfg.seed = values.seed;
    if (out->count()) cfg.out_dir = values.out_dir;
    cfg.finalize();
    return cfg;
  }
};

template <typename Enum>
std::vector<Enum> parse_list(const std::string& csv, Enum (*from_name)(const std::string&)) {
  std::vector<Enum> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    std::string item = csv.substr(pos, comma - pos);
    if (!item.empty()) out.push_back(from_name(item));
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal graph-to-text toolkit"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  std::string out_dir = "out";

  auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset");
  gd::SynthParams params;
  std::size_t val_pages = 128;
  gen->add_option("--seed", seed, "rng seed");
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--pages", params.n_pages, "total pages");
  gen->add_option("--val-pages", val_pages, "pages held out for validation");
  gen->add_option("--sections", params.sections_per_page, "sections per page");
  gen->add_option("--section-tokens", params.tokens_per_section, "body tokens per section");
  gen->add_option("--vocab-size", params.vocab_size, "vocabulary size");
  gen->add_option("--leak-count", params.leak_count, "topic tokens per page");
  gen->add_option("--topic-pool", params.topic_pool, "size of the topic token pool");
  gen->add_option("--summary-copy", params.summary_copy_len, "target tokens copied into summary");
  gen->add_option("--image-width", params.image_feature_width, "image feature width");

  auto* train_cmd = app.add_subcommand("train", "train one experiment cell");
  RunFlags train_flags;
  train_flags.attach(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the validation split");
  RunFlags eval_flags;
  eval_flags.attach(eval_cmd);
  std::string checkpoint;
  eval_cmd->add_option("--checkpoint", checkpoint,
                       "checkpoint file (default: the config's own run dir)");

  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate a grid of cells");
  RunFlags ablate_flags;
  ablate_flags.attach(ablate_cmd);
  std::string regimes_csv, encodings_csv, pes_csv, pefts_csv;
  ablate_cmd->add_option("--regimes", regimes_csv, "comma list of context regimes");
  ablate_cmd->add_option("--encodings", encodings_csv, "comma list of neighbor encodings");
  ablate_cmd->add_option("--pes", pes_csv, "comma list of position encodings");
  ablate_cmd->add_option("--pefts", pefts_csv, "comma list of adaptation modes");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite differences vs reverse mode");
  uint64_t grad_seed = 7;
  double tolerance = 1e-4;
  double step_h = 1e-5;
  grad_cmd->add_option("--seed", grad_seed, "rng seed");
  grad_cmd->add_option("--tolerance", tolerance, "max relative error accepted");
  grad_cmd->add_option("--step", step_h, "finite-difference step");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_generate_data(seed, out_dir, params, val_pages);
    if (train_cmd->parsed()) {
      hn::RunConfig cfg = train_flags.resolve();
      hn::TrainResult result = hn::train(cfg, &std::cout);
      std::cout << "done in " << result.seconds << "s, final val loss " << result.final_val_loss
                << "\n";
      return 0;
    }
    if (eval_cmd->parsed()) {
      hn::RunConfig cfg = eval_flags.resolve();
      std::string path = checkpoint.empty() ? cfg.checkpoint_path() : checkpoint;
      hn::ResultRow row = hn::evaluate(cfg, path, &std::cout);
      hn::append_result(cfg.out_dir + "/results.csv", row);
      std::cout << "appended to " << cfg.out_dir << "/results.csv\n";
      return 0;
    }
    if (ablate_cmd->parsed()) {
      hn::GridSpec grid;
      grid.base = ablate_flags.resolve();
      grid.regimes = parse_list(regimes_csv, gd::regime_from_name);
      grid.encodings = parse_list(encodings_csv, mmgl::assembly::encoding_from_name);
      grid.pes = parse_list(pes_csv, mmgl::graph_pe::pe_from_name);
      for (const auto& name : parse_list<std::string>(
               pefts_csv, +[](const std::string& s) { return s; })) {
        mmgl::peft::PeftMode mode = grid.base.mode;
        mode.kind = mmgl::peft::mode_from_name(name);
        grid.modes.push_back(mode);
      }
      hn::ablate(grid, &std::cout);
      return 0;
    }
    if (grad_cmd->parsed()) {
      hn::GradcheckReport report = hn::gradcheck(grad_seed, tolerance, step_h, &std::cout);
      return report.pass ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
