#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmgl {
class Rng;
}

namespace mmgl::graphdoc {

// Reserved token ids. The vocab file stores one token per line and the line
// number is the id, so these are simply its first five lines.
constexpr int kOov = 0;
constexpr int kPad = 1;
constexpr int kBos = 2;  // also marks the start of the summary region
constexpr int kEos = 3;
constexpr int kSep = 4;
constexpr std::size_t kNumSpecials = 5;

struct Vocab {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  static Vocab from_tokens(std::vector<std::string> tokens);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const { return tokens.size(); }
  int id(const std::string& token) const;  // kOov when unknown
  // Lowercased whitespace tokenization.
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;
  std::vector<std::string> words(const std::vector<int>& ids) const;
};

enum class NodeKind { Section, Image };

struct Node {
  std::string id;
  NodeKind kind = NodeKind::Section;
  int order = 0;             // position among siblings
  std::string parent_id;     // sections: parent section ("" = root); images: owning section
  std::vector<int> text_tokens;       // section title+text, or image caption
  std::vector<double> image_feature;  // images only
  bool has_summary = false;
  std::vector<int> summary_tokens;

  bool operator==(const Node&) const = default;
};

struct PageGraph {
  std::string page_id;
  std::vector<int> title_tokens;
  std::vector<Node> nodes;

  bool operator==(const PageGraph&) const = default;

  const Node* find(const std::string& id) const;
  // Sections depth-first (siblings by order), each section's images directly
  // after it, the page title implicit at the front.
  std::vector<const Node*> canonical_order() const;
  void validate(std::size_t expected_feature_width = 0) const;
};

enum class ContextRegime { SectionText, SectionAll, PageText, PageAll };

std::string regime_name(ContextRegime r);
ContextRegime regime_from_name(const std::string& name);

struct Example {
  std::size_t page_index = 0;
  std::string target_id;
  ContextRegime regime = ContextRegime::SectionText;
};

// One context element: the page title or a node of the page.
struct ContextItem {
  bool is_title = false;
  const Node* node = nullptr;  // null iff is_title
};

struct SelectedContext {
  std::vector<ContextItem> neighbors;
  const Node* target = nullptr;
};

// Neighbor sets grow monotonically along SectionText < SectionAll and
// SectionText < PageText < PageAll. Order is the page's canonical order.
SelectedContext select_context(const PageGraph& page, const std::string& target_id,
                               ContextRegime regime);

// ---- storage ----------------------------------------------------------

std::vector<PageGraph> load_pages(const std::string& path, const Vocab& vocab,
                                  std::size_t expected_feature_width = 0);
std::string serialize_pages(const std::vector<PageGraph>& pages, const Vocab& vocab);
void save_pages(const std::string& path, const std::vector<PageGraph>& pages,
                const Vocab& vocab);

// ---- synthetic corpus --------------------------------------------------

// Defaults are sized so context-sensitive prediction is learnable in a
// couple thousand steps: enough distinct pages that memorizing summaries
// cannot beat reading the context, a vocabulary small enough that every
// word's embedding gets trained, and a leaked prefix long enough to carry
// a full 4-gram for generation scoring.
struct SynthParams {
  std::size_t n_pages = 2048;
  std::size_t sections_per_page = 4;
  std::size_t tokens_per_section = 8;
  std::size_t vocab_size = 256;
  std::size_t leak_count = 4;       // topic tokens leaked to neighbors only
  std::size_t topic_pool = 16;      // tokens reserved as leak candidates
  std::size_t summary_copy_len = 2; // summary tail copied from the target text
  std::size_t image_feature_width = 16;
};

struct SynthData {
  Vocab vocab;
  std::vector<PageGraph> pages;
};

// Every page carries one summary-bearing target section. The summary is the
// page's leaked topic tokens (in page reading order) followed by the first
// summary_copy_len tokens of the target text. Topic tokens appear in
// neighbor section text and in image features, never in the target's own
// text, so context regimes that see neighbors carry signal the target alone
// does not.
SynthData synth_dataset(uint64_t seed, const SynthParams& params);

std::vector<Example> make_examples(const std::vector<PageGraph>& pages, ContextRegime regime);

}  // namespace mmgl::graphdoc
