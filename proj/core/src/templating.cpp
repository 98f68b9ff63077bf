#include "compass/templating.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "compass/error.hpp"
#include "compass/util.hpp"
#include "json.hpp"

namespace compass {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) ++n;
  return n;
}

std::optional<TemplateScope> parse_scope(std::string_view text) {
  if (text == "color") return TemplateScope::color;
  if (text == "shape") return TemplateScope::shape;
  if (text == "material") return TemplateScope::material;
  if (text == "any") return TemplateScope::any;
  return std::nullopt;
}

std::vector<Template> make_rows(TemplateScope scope, std::string_view prefix,
                                std::initializer_list<std::pair<const char*, const char*>> rows) {
  std::vector<Template> out;
  int n = 0;
  for (const auto& [anchor, candidate] : rows) {
    char id[32];
    std::snprintf(id, sizeof id, "%.*s-%02d", static_cast<int>(prefix.size()), prefix.data(), ++n);
    out.push_back(Template{id, anchor, candidate, scope, TemplateForm::sentence});
  }
  return out;
}

}  // namespace

bool Template::covers(const Property& property) const {
  switch (scope) {
    case TemplateScope::any: return true;
    case TemplateScope::color: return property.kind == Property::Kind::color;
    case TemplateScope::shape: return property.kind == Property::Kind::shape;
    case TemplateScope::material: return property.kind == Property::Kind::material;
  }
  return false;
}

std::string_view to_string(TemplateScope scope) {
  switch (scope) {
    case TemplateScope::color: return "color";
    case TemplateScope::shape: return "shape";
    case TemplateScope::material: return "material";
    case TemplateScope::any: return "any";
  }
  return "any";
}

std::string_view to_string(TemplateForm form) { return form == TemplateForm::sentence ? "sentence" : "collocation"; }

std::vector<std::string> validate_template(const Template& t) {
  std::vector<std::string> out;
  const std::string tag = "template '" + t.id + "': ";
  if (t.id.empty()) out.emplace_back("template with empty id");
  if (count_occurrences(t.anchor_text, kObjectSlot) != 1) out.push_back(tag + "anchor_text must contain [o] exactly once");
  if (count_occurrences(t.anchor_text, kCandidateSlot) != 0) out.push_back(tag + "anchor_text must not contain [c]");
  if (count_occurrences(t.candidate_text, kObjectSlot) != 1) {
    out.push_back(tag + "candidate_text must contain [o] exactly once");
  }
  if (count_occurrences(t.candidate_text, kCandidateSlot) != 1) {
    out.push_back(tag + "candidate_text must contain [c] exactly once");
  }
  return out;
}

TemplateBank::TemplateBank(std::vector<Template> templates) : templates_(std::move(templates)) {
  if (templates_.empty()) throw ConfigError("empty bank");
  std::set<std::string> ids;
  for (const auto& t : templates_) {
    if (auto problems = validate_template(t); !problems.empty()) throw ConfigError(problems.front());
    if (!ids.insert(t.id).second) throw ConfigError("duplicate template id '" + t.id + "'");
  }
}

const Template& TemplateBank::at(std::string_view id) const {
  if (auto i = index_of(id)) return templates_[*i];
  throw ConfigError("unknown template id '" + std::string(id) + "'");
}

std::optional<std::size_t> TemplateBank::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < templates_.size(); ++i) {
    if (templates_[i].id == id) return i;
  }
  return std::nullopt;
}

std::vector<const Template*> TemplateBank::in_scope(const Property& property) const {
  std::vector<const Template*> out;
  for (const auto& t : templates_) {
    if (t.covers(property)) out.push_back(&t);
  }
  return out;
}

const Template& TemplateBank::default_for(const Property& property) const {
  for (const auto& t : templates_) {
    if (t.covers(property)) return t;
  }
  throw ConfigError("no template covers property '" + property.name + "'");
}

const TemplateBank& builtin_bank() {
  static const TemplateBank bank = [] {
    std::vector<Template> all;
    auto append = [&all](std::vector<Template> rows) { all.insert(all.end(), rows.begin(), rows.end()); };
    append(make_rows(TemplateScope::color, "color",
                     {
                         {"A photo of a [o].", "A photo of a [c] [o]."},
                         {"A picture of a [o].", "A picture of a [c] [o]."},
                         {"An image of a [o].", "An image of a [c] [o]."},
                         {"An image of a [o].", "An image of a [o] which is [c]."},
                         {"There is an image of a [o].", "There is an image of a [c] [o]."},
                         {"There is a photo of a [o].", "There is a photo of a [c] [o]."},
                         {"There is a picture of a [o].", "There is a picture of a [c] [o]."},
                         {"There is an image of a [o].", "There is an image of a [o] which is [c]."},
                         {"There is a photo of a [o].", "There is a photo of a [o] which is [c]."},
                         {"It is an image of a [o].", "It is an image of a [o] which is [c]."},
                         {"It is a photo of a [o].", "It is a photo of a [o] which is [c]."},
                         {"There is a [o].", "There is a [o] in [c]."},
                         {"There is a [o].", "There is a [o] which is [c]."},
                         {"Everyone knows [o].", "Everyone knows that [o] is [c]."},
                         {"Everyone knows [o].", "Everyone knows that [o] is [c]."},
                     }));
    append(make_rows(TemplateScope::shape, "shape",
                     {
                         {"This is a [o].", "This is a [o] with [c] shape."},
                         {"There is a [o].", "There is a [c] [o]."},
                         {"There is a [o].", "There is a [o] which shape is [c]."},
                         {"It is an image of a [o].", "It is an image of a [o] which shape is [c]."},
                         {"There is an image of a [o].", "It is an image of a [o] which shape is [c]."},
                         {"There is an image of a [o].", "There is an image of a [c] [o]."},
                         {"There is a picture of a [o].", "There is a picture of a [c] [o]."},
                         {"There is a picture of a [o].", "There is an picture of a [o] which shape is [c]."},
                         {"There is a picture of a [o].", "There is an picture of a [c] [o]."},
                         {"This is a picture of a [o].", "This is a picture of a [o] has [c] shape."},
                         {"A picture of a [o].", "A picture of a [o] has [c] shape."},
                         {"An image of a [o].", "An image of a [c] [o]."},
                         {"A photo of a [o].", "A photo of a [c] [o]."},
                         {"A picture of a [o].", "A picture of a [c] [o]."},
                         {"[o] is of shape .", "[o] is of shape [c]."},
                         {"The shape of [o].", "The shape of [o] can be [c]."},
                         {"The shape of the [o].", "The shape of the [o] is [c]."},
                     }));
    append(make_rows(TemplateScope::material, "material",
                     {
                         {"This is an image of a [o].", "This is an image of a [o] made of [c]."},
                         {"This is an image of a [o].", "This is an image of a [o] which made from [c]."},
                         {"This is an image of a [o].", "This is an image of a [o] which made of [c]."},
                         {"This is a photo of a [o].", "This is a photo of a [o] made of [c]."},
                         {"This is a picture of a [o].", "This is a picture of a [o] made of [c]."},
                         {"This is a picture of a [o].", "This is a picture of a [o] which made of [c]."},
                         {"It is a picture of a [o].", "It is a picture of a [o] made of [c]."},
                         {"A picture of a [o].", "A picture of a [o] which made from [c]."},
                         {"A picture of a [o].", "A picture of a [o] which made of [c]."},
                         {"A picture of a [o].", "A picture of a [c] [o]."},
                         {"There is an image of a [o].", "There is an image of a [c] [o]."},
                         {"There is a photo of a [o].", "There is an photo of a [c] [o]."},
                         {"There is a picture of a [o].", "There is an picture of a [c] [o]."},
                         {"An image of a [o].", "An image of a [c] [o]."},
                         {"A photo of a [o].", "A photo of a [c] [o]."},
                         {"A picture of a [o].", "A picture of a [c] [o]."},
                     }));
    return TemplateBank(std::move(all));
  }();
  return bank;
}

const TemplateBank& builtin_collocation_bank() {
  static const TemplateBank bank(
      std::vector<Template>{Template{"collocation", "[o]", "[c] [o]", TemplateScope::any, TemplateForm::collocation}});
  return bank;
}

TemplateBank parse_template_bank(std::string_view text, const std::string& source) {
  std::vector<Template> templates;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw ParseError(source, line_no, "malformed JSON");
    auto str = [&](const char* key, const char* fallback) -> std::string {
      if (!rec.contains(key)) {
        if (fallback) return fallback;
        throw ParseError(source, line_no, std::string("missing field '") + key + "'");
      }
      if (!rec.at(key).is_string()) throw ParseError(source, line_no, std::string("field '") + key + "' must be a string");
      return rec.at(key).get<std::string>();
    };

    Template t;
    t.id = str("id", nullptr);
    t.anchor_text = str("anchor_text", nullptr);
    t.candidate_text = str("candidate_text", nullptr);
    const auto scope = str("property_scope", "any");
    auto parsed_scope = parse_scope(scope);
    if (!parsed_scope) throw ParseError(source, line_no, "template '" + t.id + "': unknown property_scope '" + scope + "'");
    t.scope = *parsed_scope;
    const auto form = str("form", "sentence");
    if (form == "sentence") {
      t.form = TemplateForm::sentence;
    } else if (form == "collocation") {
      t.form = TemplateForm::collocation;
    } else {
      throw ParseError(source, line_no, "template '" + t.id + "': unknown form '" + form + "'");
    }
    if (auto problems = validate_template(t); !problems.empty()) throw ParseError(source, line_no, problems.front());
    templates.push_back(std::move(t));
  }
  if (templates.empty()) throw ConfigError(source + ": empty bank");
  return TemplateBank(std::move(templates));
}

TemplateBank load_template_bank(const std::filesystem::path& path) {
  return parse_template_bank(read_file(path), path.string());
}

std::string to_template_record(const Template& t) {
  ordered_json rec;
  rec["id"] = t.id;
  rec["anchor_text"] = t.anchor_text;
  rec["candidate_text"] = t.candidate_text;
  rec["property_scope"] = to_string(t.scope);
  rec["form"] = to_string(t.form);
  return rec.dump();
}

std::string render_template(std::string_view text, const Bindings& bindings, std::vector<std::string>* warnings) {
  std::string out;
  out.reserve(text.size() + 32);
  bool used_object = false;
  bool used_candidate = false;

  auto bind = [](const std::optional<std::string>& value, std::string_view slot) -> const std::string& {
    if (!value) throw DataError("missing binding for " + std::string(slot));
    if (value->empty()) throw DataError("empty binding for " + std::string(slot));
    return *value;
  };

  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text.compare(pos, kObjectSlot.size(), kObjectSlot) == 0) {
      out += bind(bindings.object, kObjectSlot);
      used_object = true;
      pos += kObjectSlot.size();
    } else if (text.compare(pos, kCandidateSlot.size(), kCandidateSlot) == 0) {
      out += bind(bindings.candidate, kCandidateSlot);
      used_candidate = true;
      pos += kCandidateSlot.size();
    } else {
      out.push_back(text[pos++]);
    }
  }

  if (warnings) {
    if (bindings.object && !used_object) warnings->emplace_back("unused binding for [o]");
    if (bindings.candidate && !used_candidate) warnings->emplace_back("unused binding for [c]");
  }
  return out;
}

SentencePair construct_triplet_pair(const Context& context, std::string_view candidate, const Template& tmpl,
                                    std::string instance_id, std::size_t candidate_index) {
  if (!tmpl.covers(context.property)) {
    throw ConfigError("template '" + tmpl.id + "' (scope " + std::string(to_string(tmpl.scope)) +
                      ") does not cover property '" + context.property.name + "'");
  }
  SentencePair pair;
  pair.anchor = render_template(tmpl.anchor_text, Bindings{context.object, std::nullopt});
  pair.candidate = render_template(tmpl.candidate_text, Bindings{context.object, std::string(candidate)});
  pair.template_id = tmpl.id;
  pair.instance_id = std::move(instance_id);
  pair.candidate_index = candidate_index;
  return pair;
}

// ---------------------------------------------------------------------------

std::string TransformPrompt::render_input(std::string_view question, std::string_view answer) const {
  std::string out;
  out.append("Question: ").append(question).append("\nAnswer: ").append(answer).append("\nStatement:");
  return out;
}

ChatRequest TransformPrompt::build_request(std::string_view question, std::string_view answer) const {
  ChatRequest req;
  req.system = instruction;
  for (const auto& ex : examples) {
    req.messages.push_back({"user", render_input(ex.question, ex.answer)});
    req.messages.push_back({"assistant", ex.statement});
  }
  req.messages.push_back({"user", render_input(question, answer)});
  req.temperature = 0.0;
  return req;
}

std::string TransformPrompt::hash() const {
  ordered_json doc;
  doc["instruction"] = instruction;
  doc["examples"] = ordered_json::array();
  for (const auto& ex : examples) doc["examples"].push_back({ex.question, ex.answer, ex.statement});
  doc["input"] = render_input("{question}", "{answer}");
  return sha256_hex(doc.dump());
}

const TransformPrompt& default_transform_prompt() {
  static const TransformPrompt prompt{
      "Rewrite the question and its answer as one declarative sentence. Keep the wording of the question where "
      "possible, include the answer verbatim, and output only the sentence on a single line.",
      {
          {"What do people use to cut paper?", "scissors", "People use scissors to cut paper."},
          {"Where would you usually find a pillow?", "bed", "You would usually find a pillow on a bed."},
          {"What might a child bring to the beach?", "bucket", "A child might bring a bucket to the beach."},
      }};
  return prompt;
}

TransformCache::TransformCache(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(*path_)) return;
  const auto text = read_file(*path_);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) throw ParseError(path_->string(), line_no, "malformed transform cache entry");
    try {
      entries_[rec.at("key_hash").get<std::string>()] =
          Entry{rec.at("question").get<std::string>(), rec.at("answer").get<std::string>(),
                rec.at("statement").get<std::string>()};
    } catch (const json::exception& e) {
      throw ParseError(path_->string(), line_no, e.what());
    }
  }
}

std::string TransformCache::key_hash(std::string_view prompt_hash, std::string_view question, std::string_view answer) {
  std::string material;
  material.append(prompt_hash).push_back('\0');
  material.append(question).push_back('\0');
  material.append(answer);
  return sha256_hex(material);
}

std::optional<std::string> TransformCache::lookup(const std::string& key) const {
  std::lock_guard lock(mutex_);
  if (auto it = entries_.find(key); it != entries_.end()) return it->second.statement;
  return std::nullopt;
}

std::size_t TransformCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void TransformCache::store_locked(const std::string& key, Entry entry) {
  entries_[key] = std::move(entry);
  if (!path_) return;
  std::string body;
  for (const auto& [k, e] : entries_) {
    ordered_json rec;
    rec["key_hash"] = k;
    rec["question"] = e.question;
    rec["answer"] = e.answer;
    rec["statement"] = e.statement;
    body += rec.dump();
    body += '\n';
  }
  write_file_atomic(*path_, body);
}

std::string transform_qa(std::string_view question, std::string_view answer, ChatClient& llm,
                         const TransformPrompt& prompt, TransformCache* cache) {
  auto produce = [&]() -> std::string {
    std::string text = llm.complete(prompt.build_request(question, answer));
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) throw BackendError("chat client returned an empty completion");
    const auto last = text.find_last_not_of(" \t\r\n");
    text = text.substr(first, last - first + 1);
    if (text.find('\n') != std::string::npos) throw BackendError("chat client returned a multi-line completion");
    return text;
  };
  if (!cache) return produce();
  return cache->get_or_produce(TransformCache::key_hash(prompt.hash(), question, answer), question, answer, produce);
}

std::string blank_answer(std::string_view sentence, std::string_view answer) {
  if (answer.empty()) throw DataError("empty answer cannot be blanked");
  auto lower = [](std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
  };
  const auto hay = lower(sentence);
  const auto needle = lower(answer);
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };

  std::optional<std::size_t> first_any;
  std::optional<std::size_t> first_token;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    if (!first_any) first_any = pos;
    const bool left_ok = pos == 0 || !is_word(hay[pos - 1]);
    const auto after = pos + needle.size();
    const bool right_ok = after >= hay.size() || !is_word(hay[after]);
    if (left_ok && right_ok) {
      first_token = pos;
      break;
    }
  }
  const auto at = first_token ? first_token : first_any;
  if (!at) throw DataError("answer '" + std::string(answer) + "' not found in sentence '" + std::string(sentence) + "'");

  std::string out(sentence.substr(0, *at));
  out.append(kBlankToken);
  out.append(sentence.substr(*at + answer.size()));
  return out;
}

SentencePair construct_qa_pair(const EvaluationInstance& instance, std::size_t candidate_index,
                               const QaTransform& transform) {
  if (candidate_index >= instance.candidates.size()) {
    throw DataError("instance '" + instance.id + "': candidate index " + std::to_string(candidate_index) + " out of range");
  }
  const auto& answer = instance.candidates[candidate_index];
  SentencePair pair;
  if (auto it = instance.pretransformed.find(candidate_index); it != instance.pretransformed.end()) {
    pair.candidate = it->second;
  } else {
    if (!transform.client) {
      throw ConfigError("instance '" + instance.id + "': candidate " + std::to_string(candidate_index) +
                        " has no pretransformed statement and no chat client is configured");
    }
    pair.candidate = transform_qa(instance.context.question, answer, *transform.client,
                                  transform.prompt ? *transform.prompt : default_transform_prompt(), transform.cache);
  }
  pair.anchor = blank_answer(pair.candidate, answer);
  pair.instance_id = instance.id;
  pair.candidate_index = candidate_index;
  return pair;
}

}  // namespace compass
