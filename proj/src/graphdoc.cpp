#include "mmgl/graphdoc.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mmgl/rng.hpp"

namespace mmgl::graphdoc {

using nlohmann::json;

// ---- Vocab -------------------------------------------------------------

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumSpecials)
    throw std::invalid_argument("vocab: needs at least " + std::to_string(kNumSpecials) +
                                " entries, got " + std::to_string(tokens.size()));
  Vocab v;
  v.tokens = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens.size(); ++i) {
    const std::string& t = v.tokens[i];
    if (t.empty()) throw std::invalid_argument("vocab: empty token at line " + std::to_string(i));
    for (char c : t) {
      if (std::isspace(static_cast<unsigned char>(c)))
        throw std::invalid_argument("vocab: token at line " + std::to_string(i) +
                                    " contains whitespace");
      if (std::isupper(static_cast<unsigned char>(c)))
        throw std::invalid_argument("vocab: token at line " + std::to_string(i) +
                                    " is not lowercase");
    }
    if (!v.index.emplace(t, static_cast<int>(i)).second)
      throw std::invalid_argument("vocab: duplicate token '" + t + "'");
  }
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("vocab: cannot open " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

void Vocab::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("vocab: cannot open " + path + " for writing");
  for (const std::string& t : tokens) os << t << "\n";
  if (!os) throw std::runtime_error("vocab: write to " + path + " failed");
}

int Vocab::id(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? kOov : it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> out;
  std::string word;
  auto flush = [&]() {
    if (!word.empty()) {
      out.push_back(id(word));
      word.clear();
    }
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tokens.size())
      throw std::out_of_range("vocab: id " + std::to_string(ids[i]) + " outside vocabulary");
    out += tokens[static_cast<std::size_t>(ids[i])];
  }
  return out;
}

std::vector<std::string> Vocab::words(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens.size())
      throw std::out_of_range("vocab: id " + std::to_string(id) + " outside vocabulary");
    out.push_back(tokens[static_cast<std::size_t>(id)]);
  }
  return out;
}

// ---- PageGraph ----------------------------------------------------------

const Node* PageGraph::find(const std::string& id) const {
  for (const Node& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

std::vector<const Node*> PageGraph::canonical_order() const {
  std::map<std::string, std::vector<const Node*>> child_sections;
  std::map<std::string, std::vector<const Node*>> images_of;
  std::vector<const Node*> roots;
  for (const Node& n : nodes) {
    if (n.kind == NodeKind::Section) {
      if (n.parent_id.empty())
        roots.push_back(&n);
      else
        child_sections[n.parent_id].push_back(&n);
    } else {
      images_of[n.parent_id].push_back(&n);
    }
  }
  auto by_order = [](const Node* a, const Node* b) { return a->order < b->order; };
  std::sort(roots.begin(), roots.end(), by_order);
  for (auto& [k, v] : child_sections) std::sort(v.begin(), v.end(), by_order);
  for (auto& [k, v] : images_of) std::sort(v.begin(), v.end(), by_order);

  std::vector<const Node*> out;
  auto visit = [&](auto&& self, const Node* s) -> void {
    out.push_back(s);
    for (const Node* img : images_of[s->id]) out.push_back(img);
    for (const Node* c : child_sections[s->id]) self(self, c);
  };
  for (const Node* r : roots) visit(visit, r);
  return out;
}

void PageGraph::validate(std::size_t expected_feature_width) const {
  auto fail = [this](const std::string& rule) {
    throw std::runtime_error("page " + page_id + ": " + rule);
  };
  std::map<std::string, const Node*> by_id;
  for (const Node& n : nodes) {
    if (n.id.empty()) fail("node with empty id");
    if (!by_id.emplace(n.id, &n).second) fail("duplicate node id '" + n.id + "'");
  }
  std::size_t feature_width = expected_feature_width;
  for (const Node& n : nodes) {
    if (n.kind == NodeKind::Section) {
      if (!n.image_feature.empty()) fail("section '" + n.id + "' carries an image feature");
      if (!n.parent_id.empty()) {
        auto it = by_id.find(n.parent_id);
        if (it == by_id.end())
          fail("section '" + n.id + "' references missing parent '" + n.parent_id + "'");
        if (it->second->kind != NodeKind::Section)
          fail("section '" + n.id + "' has non-section parent '" + n.parent_id + "'");
      }
    } else {
      if (n.parent_id.empty()) fail("image '" + n.id + "' has no owning section");
      auto it = by_id.find(n.parent_id);
      if (it == by_id.end())
        fail("image '" + n.id + "' references missing section '" + n.parent_id + "'");
      if (it->second->kind != NodeKind::Section)
        fail("image '" + n.id + "' is owned by non-section '" + n.parent_id + "'");
      if (n.image_feature.empty()) fail("image '" + n.id + "' has no feature vector");
      if (feature_width == 0) feature_width = n.image_feature.size();
      if (n.image_feature.size() != feature_width)
        fail("image '" + n.id + "' feature width " + std::to_string(n.image_feature.size()) +
             " != expected " + std::to_string(feature_width));
      if (n.has_summary) fail("image '" + n.id + "' carries a summary");
    }
  }
  // Parent chains terminate (no cycles).
  for (const Node& n : nodes) {
    if (n.kind != NodeKind::Section) continue;
    const Node* cur = &n;
    std::size_t steps = 0;
    while (!cur->parent_id.empty()) {
      cur = by_id.at(cur->parent_id);
      if (++steps > nodes.size()) fail("parent cycle through section '" + n.id + "'");
    }
  }
  // Sibling orders are unique.
  std::map<std::pair<std::string, int>, std::set<int>> sibling_orders;
  for (const Node& n : nodes) {
    auto key = std::make_pair(n.parent_id, n.kind == NodeKind::Section ? 0 : 1);
    if (!sibling_orders[key].insert(n.order).second)
      fail("duplicate sibling order " + std::to_string(n.order) + " under '" +
           (n.parent_id.empty() ? std::string("<root>") : n.parent_id) + "'");
  }
}

std::string regime_name(ContextRegime r) {
  switch (r) {
    case ContextRegime::SectionText: return "section_text";
    case ContextRegime::SectionAll: return "section_all";
    case ContextRegime::PageText: return "page_text";
    case ContextRegime::PageAll: return "page_all";
  }
  throw std::logic_error("regime_name: bad value");
}

ContextRegime regime_from_name(const std::string& name) {
  if (name == "section_text") return ContextRegime::SectionText;
  if (name == "section_all") return ContextRegime::SectionAll;
  if (name == "page_text") return ContextRegime::PageText;
  if (name == "page_all") return ContextRegime::PageAll;
  throw std::invalid_argument("unknown context regime '" + name + "'");
}

SelectedContext select_context(const PageGraph& page, const std::string& target_id,
                               ContextRegime regime) {
  const Node* target = page.find(target_id);
  if (!target || target->kind != NodeKind::Section)
    throw std::runtime_error("page " + page.page_id + ": target section '" + target_id +
                             "' not found");
  if (!target->has_summary)
    throw std::runtime_error("page " + page.page_id + ": target section '" + target_id +
                             "' has no summary");
  SelectedContext out;
  out.target = target;
  switch (regime) {
    case ContextRegime::SectionText:
      break;
    case ContextRegime::SectionAll: {
      for (const Node* n : page.canonical_order())
        if (n->kind == NodeKind::Image && n->parent_id == target->id)
          out.neighbors.push_back({false, n});
      break;
    }
    case ContextRegime::PageText: {
      out.neighbors.push_back({true, nullptr});
      for (const Node* n : page.canonical_order())
        if (n->kind == NodeKind::Section && n != target)
          out.neighbors.push_back({false, n});
      break;
    }
    case ContextRegime::PageAll: {
      out.neighbors.push_back({true, nullptr});
      for (const Node* n : page.canonical_order())
        if (n != target) out.neighbors.push_back({false, n});
      break;
    }
  }
  return out;
}

// ---- storage -------------------------------------------------------------

namespace {

PageGraph page_from_json(const json& j, const Vocab& vocab) {
  PageGraph page;
  page.page_id = j.at("page_id").get<std::string>();
  page.title_tokens = vocab.encode(j.at("title").get<std::string>());
  for (const json& js : j.at("sections")) {
    Node s;
    s.kind = NodeKind::Section;
    s.id = js.at("id").get<std::string>();
    if (!js.at("parent_id").is_null()) s.parent_id = js.at("parent_id").get<std::string>();
    s.order = js.at("order").get<int>();
    std::string text = js.at("title").get<std::string>();
    std::string body = js.at("text").get<std::string>();
    if (!text.empty() && !body.empty()) text += " ";
    text += body;
    s.text_tokens = vocab.encode(text);
    if (!js.at("summary").is_null()) {
      s.has_summary = true;
      s.summary_tokens = vocab.encode(js.at("summary").get<std::string>());
    }
    page.nodes.push_back(std::move(s));
    int image_order = 0;
    for (const json& ji : js.at("images")) {
      Node img;
      img.kind = NodeKind::Image;
      img.id = ji.at("id").get<std::string>();
      img.parent_id = page.nodes.back().id;
      img.order = image_order++;
      img.text_tokens = vocab.encode(ji.at("caption").get<std::string>());
      img.image_feature = ji.at("feature").get<std::vector<double>>();
      page.nodes.push_back(std::move(img));
    }
  }
  return page;
}

}  // namespace

std::vector<PageGraph> load_pages(const std::string& path, const Vocab& vocab,
                                  std::size_t expected_feature_width) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("pages: cannot open " + path);
  std::vector<PageGraph> pages;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
      pages.push_back(page_from_json(j, vocab));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    pages.back().validate(expected_feature_width);
  }
  return pages;
}

std::string serialize_pages(const std::vector<PageGraph>& pages, const Vocab& vocab) {
  std::ostringstream os;
  for (const PageGraph& page : pages) {
    json j;
    j["page_id"] = page.page_id;
    j["title"] = vocab.decode(page.title_tokens);
    j["sections"] = json::array();
    for (const Node& n : page.nodes) {
      if (n.kind != NodeKind::Section) continue;
      json js;
      js["id"] = n.id;
      js["parent_id"] = n.parent_id.empty() ? json() : json(n.parent_id);
      js["order"] = n.order;
      js["title"] = "";
      js["text"] = vocab.decode(n.text_tokens);
      js["summary"] = n.has_summary ? json(vocab.decode(n.summary_tokens)) : json();
      js["images"] = json::array();
      for (const Node& img : page.nodes) {
        if (img.kind != NodeKind::Image || img.parent_id != n.id) continue;
        json ji;
        ji["id"] = img.id;
        ji["caption"] = vocab.decode(img.text_tokens);
        ji["feature"] = img.image_feature;
        js["images"].push_back(std::move(ji));
      }
      j["sections"].push_back(std::move(js));
    }
    os << j.dump() << "\n";
  }
  return os.str();
}

void save_pages(const std::string& path, const std::vector<PageGraph>& pages,
                const Vocab& vocab) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("pages: cannot open " + path + " for writing");
  os << serialize_pages(pages, vocab);
  if (!os) throw std::runtime_error("pages: write to " + path + " failed");
}

// ---- synthetic corpus ------------------------------------------------------

namespace {

std::string num_name(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", stem, i);
  return buf;
}

}  // namespace

SynthData synth_dataset(uint64_t seed, const SynthParams& p) {
  if (p.vocab_size <= p.leak_count)
    throw std::invalid_argument("synth: vocab_size must exceed leak_count");
  if (p.leak_count > p.topic_pool)
    throw std::invalid_argument("synth: leak_count " + std::to_string(p.leak_count) +
                                " exceeds topic_pool " + std::to_string(p.topic_pool));
  if (p.vocab_size <= kNumSpecials + p.topic_pool)
    throw std::invalid_argument("synth: vocab_size " + std::to_string(p.vocab_size) +
                                " leaves no content tokens after specials and topic pool");
  if (p.sections_per_page < 1) throw std::invalid_argument("synth: needs at least one section");
  if (p.leak_count > 0 && p.sections_per_page < 2)
    throw std::invalid_argument("synth: leaking needs at least one non-target section");
  if (p.tokens_per_section < 1) throw std::invalid_argument("synth: empty sections");
  if (p.summary_copy_len > p.tokens_per_section + 1)
    throw std::invalid_argument("synth: summary_copy_len exceeds section length");
  if (p.leak_count > 0 &&
      p.leak_count > (p.sections_per_page - 1) * p.tokens_per_section)
    throw std::invalid_argument("synth: not enough neighbor text positions for the leak");
  if (p.image_feature_width < 1) throw std::invalid_argument("synth: empty image features");

  SynthData out;
  std::vector<std::string> tokens = {"<oov>", "<pad>", "<bos>", "<eos>", "<sep>"};
  for (std::size_t i = 0; i < p.topic_pool; ++i) tokens.push_back(num_name("topic", i));
  for (std::size_t i = kNumSpecials + p.topic_pool; i < p.vocab_size; ++i)
    tokens.push_back(num_name("word", i));
  out.vocab = Vocab::from_tokens(std::move(tokens));

  Rng root(seed);
  // One fixed feature pattern per topic token, shared by the whole corpus.
  Rng pattern_rng = root.fork("topic-patterns");
  std::vector<std::vector<double>> patterns(p.topic_pool);
  for (auto& pat : patterns) {
    pat.resize(p.image_feature_width);
    for (double& x : pat) x = pattern_rng.normal();
  }

  int first_topic = static_cast<int>(kNumSpecials);
  int first_content = static_cast<int>(kNumSpecials + p.topic_pool);
  std::size_t n_content = p.vocab_size - kNumSpecials - p.topic_pool;

  for (std::size_t pi = 0; pi < p.n_pages; ++pi) {
    Rng rng = root.fork("page" + std::to_string(pi));
    auto content_tok = [&]() {
      return first_content + static_cast<int>(rng.uniform_int(n_content));
    };
    PageGraph page;
    page.page_id = num_name("page", pi);
    page.title_tokens = {content_tok(), content_tok()};

    // Distinct topic tokens for this page.
    std::vector<int> pool(p.topic_pool);
    for (std::size_t i = 0; i < p.topic_pool; ++i) pool[i] = first_topic + static_cast<int>(i);
    for (std::size_t i = 0; i < p.leak_count; ++i) {
      std::size_t j = i + rng.uniform_int(p.topic_pool - i);
      std::swap(pool[i], pool[j]);
    }
    std::vector<int> leaks(pool.begin(), pool.begin() + static_cast<long>(p.leak_count));

    std::size_t target_idx = rng.uniform_int(p.sections_per_page);
    std::vector<double> leak_feature(p.image_feature_width, 0.0);
    for (int leak : leaks)
      for (std::size_t d = 0; d < p.image_feature_width; ++d)
        leak_feature[d] += patterns[static_cast<std::size_t>(leak - first_topic)][d];

    std::map<std::string, int> sibling_count;
    std::vector<std::string> section_ids;
    for (std::size_t si = 0; si < p.sections_per_page; ++si) {
      Node s;
      s.kind = NodeKind::Section;
      s.id = page.page_id + "_s" + std::to_string(si);
      section_ids.push_back(s.id);
      // Nesting under the immediately preceding section keeps document order
      // equal to index order.
      if (si > 0 && rng.uniform_int(3) == 0) s.parent_id = section_ids[si - 1];
      s.order = sibling_count[s.parent_id]++;
      s.text_tokens.push_back(content_tok());  // section title word
      for (std::size_t t = 0; t < p.tokens_per_section; ++t)
        s.text_tokens.push_back(content_tok());
      page.nodes.push_back(std::move(s));

      Node img;
      img.kind = NodeKind::Image;
      img.id = page.page_id + "_s" + std::to_string(si) + "_img";
      img.parent_id = section_ids[si];
      img.order = 0;
      img.text_tokens = {content_tok(), content_tok()};
      img.image_feature = leak_feature;
      page.nodes.push_back(std::move(img));
    }

    // Fill leak tokens into non-target section bodies sequentially, so the
    // reading order of the leaks equals their order in the summary.
    std::vector<std::size_t> others;
    for (std::size_t si = 0; si < p.sections_per_page; ++si)
      if (si != target_idx) others.push_back(si);
    for (std::size_t li = 0; li < leaks.size(); ++li) {
      std::size_t si = others[li / p.tokens_per_section];
      std::size_t slot = 1 + li % p.tokens_per_section;  // skip the title word
      for (Node& n : page.nodes)
        if (n.id == section_ids[si]) n.text_tokens[slot] = leaks[li];
    }

    for (Node& n : page.nodes) {
      if (n.id != section_ids[target_idx]) continue;
      n.has_summary = true;
      n.summary_tokens = leaks;
      for (std::size_t t = 0; t < p.summary_copy_len; ++t)
        n.summary_tokens.push_back(n.text_tokens[t]);
    }

    page.validate(p.image_feature_width);
    out.pages.push_back(std::move(page));
  }
  return out;
}

std::vector<Example> make_examples(const std::vector<PageGraph>& pages, ContextRegime regime) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < pages.size(); ++i)
    for (const Node& n : pages[i].nodes)
      if (n.kind == NodeKind::Section && n.has_summary)
        out.push_back({i, n.id, regime});
  return out;
}

}  // namespace mmgl::graphdoc
