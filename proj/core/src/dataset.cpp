#include "compass/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "compass/error.hpp"
#include "json.hpp"

namespace compass {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

Property Property::parse(std::string_view text) {
  if (text == "color") return {Kind::color, "color"};
  if (text == "shape") return {Kind::shape, "shape"};
  if (text == "material") return {Kind::material, "material"};
  return {Kind::other, std::string(text)};
}

std::string_view to_string(TaskKind kind) { return kind == TaskKind::attribute ? "attribute" : "frame"; }

std::string_view to_string(Group group) {
  switch (group) {
    case Group::single: return "single";
    case Group::multi: return "multi";
    case Group::any: return "any";
  }
  return "any";
}

std::string_view to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::canonical: return "canonical";
    case DatasetFormat::coda: return "coda";
    case DatasetFormat::vicomte: return "vicomte";
    case DatasetFormat::cfc: return "cfc";
  }
  return "canonical";
}

std::optional<Group> parse_group(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "single") return Group::single;
  if (lower == "multi") return Group::multi;
  if (lower == "any") return Group::any;
  return std::nullopt;
}

DatasetFormat parse_dataset_format(std::string_view text) {
  if (text == "canonical") return DatasetFormat::canonical;
  if (text == "coda") return DatasetFormat::coda;
  if (text == "vicomte") return DatasetFormat::vicomte;
  if (text == "cfc") return DatasetFormat::cfc;
  throw ConfigError("unknown dataset format '" + std::string(text) + "'");
}

const std::vector<std::string>& coda_colors() {
  static const std::vector<std::string> colors{"black",  "blue",   "brown", "gray",  "green", "orange",
                                               "pink",   "purple", "red",   "white", "yellow"};
  return colors;
}

std::vector<std::string> validate_instance(const EvaluationInstance& instance) {
  std::vector<std::string> out;
  const auto k = instance.candidates.size();

  if (instance.id.empty()) out.emplace_back("empty instance id");
  if (instance.task == TaskKind::attribute) {
    if (instance.context.object.empty()) out.emplace_back("attribute task requires a non-empty object");
    if (instance.context.property.name.empty()) out.emplace_back("attribute task requires a non-empty property");
  } else if (instance.context.question.empty()) {
    out.emplace_back("frame task requires a non-empty question");
  }

  if (k < 2) out.push_back("need at least 2 candidates, got " + std::to_string(k));
  if (k != instance.ground_truth.size()) {
    out.push_back("candidates/ground_truth length mismatch (" + std::to_string(k) + " vs " +
                  std::to_string(instance.ground_truth.size()) + ")");
  }

  for (std::size_t i = 0; i < k; ++i) {
    if (instance.candidates[i].empty()) out.push_back("empty candidate at index " + std::to_string(i));
    for (std::size_t j = i + 1; j < k; ++j) {
      if (!instance.candidates[i].empty() && instance.candidates[i] == instance.candidates[j]) {
        out.push_back("duplicate candidate at indices " + std::to_string(i) + "," + std::to_string(j));
      }
    }
  }

  for (std::size_t i = 0; i < instance.ground_truth.size(); ++i) {
    const double g = instance.ground_truth[i];
    if (!std::isfinite(g)) {
      out.push_back("ground truth at index " + std::to_string(i) + " is not finite");
    } else if (g < 0.0) {
      out.push_back("ground truth at index " + std::to_string(i) + " is negative");
    }
  }

  if (instance.pairs) {
    for (const auto& [a, b] : *instance.pairs) {
      const std::string tag = "pair (" + std::to_string(a) + "," + std::to_string(b) + ")";
      if (a >= k || b >= k) {
        out.push_back(tag + " index out of range");
        continue;
      }
      if (a == b) {
        out.emplace_back("pair references identical candidate");
        continue;
      }
      if (a < instance.ground_truth.size() && b < instance.ground_truth.size() &&
          instance.ground_truth[a] == instance.ground_truth[b]) {
        out.push_back(tag + " has equal ground truth");
      }
    }
  }

  for (const auto& [index, text] : instance.pretransformed) {
    if (index >= k) out.push_back("pretransformed index " + std::to_string(index) + " out of range");
    if (text.empty()) out.push_back("pretransformed text at index " + std::to_string(index) + " is empty");
  }
  return out;
}

std::vector<IndexPair> derive_pairs(const EvaluationInstance& instance) {
  if (instance.pairs) return *instance.pairs;
  std::vector<IndexPair> out;
  const auto k = instance.ground_truth.size();
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      if (instance.ground_truth[i] != instance.ground_truth[j]) out.emplace_back(i, j);
    }
  }
  return out;
}

Group classify_group(const EvaluationInstance& instance, const GroupThresholds& thresholds) {
  if (instance.group) return *instance.group;
  const double total = std::accumulate(instance.ground_truth.begin(), instance.ground_truth.end(), 0.0);
  if (!(total > 0.0)) throw DataError("instance '" + instance.id + "': ground truth sums to zero, cannot classify");

  std::vector<double> normalized(instance.ground_truth.size());
  std::transform(instance.ground_truth.begin(), instance.ground_truth.end(), normalized.begin(),
                 [total](double g) { return g / total; });
  std::sort(normalized.begin(), normalized.end(), std::greater<>());

  if (normalized.front() >= thresholds.single_min_top1) return Group::single;
  const auto top = std::min<std::size_t>(4, normalized.size());
  const double top4 = std::accumulate(normalized.begin(), normalized.begin() + static_cast<std::ptrdiff_t>(top), 0.0);
  if (top4 >= thresholds.multi_min_top4) return Group::multi;
  return Group::any;
}

namespace {

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& what) {
  throw ParseError(source, line, what);
}

std::string require_string(const json& obj, const char* key, const std::string& source, std::size_t line) {
  if (!obj.contains(key) || !obj.at(key).is_string()) fail(source, line, std::string("missing string field '") + key + "'");
  return obj.at(key).get<std::string>();
}

double require_number(const json& value, const std::string& what, const std::string& source, std::size_t line) {
  if (!value.is_number()) fail(source, line, what + " must be a number");
  return value.get<double>();
}

std::size_t require_index(const json& value, const std::string& source, std::size_t line) {
  if (!value.is_number_integer() || value.get<long long>() < 0) fail(source, line, "pair index must be a non-negative integer");
  return value.get<std::size_t>();
}

json parse_json_line(std::string_view text, const std::string& source, std::size_t line) {
  json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded()) fail(source, line, "malformed JSON");
  if (!parsed.is_object()) fail(source, line, "record is not a JSON object");
  return parsed;
}

EvaluationInstance canonical_from_json(const json& rec, const std::string& source, std::size_t line) {
  EvaluationInstance inst;
  inst.id = require_string(rec, "id", source, line);

  const auto task = require_string(rec, "task", source, line);
  if (task == "attribute") {
    inst.task = TaskKind::attribute;
  } else if (task == "frame") {
    inst.task = TaskKind::frame;
  } else {
    fail(source, line, "unknown task '" + task + "'");
  }

  if (!rec.contains("context") || !rec.at("context").is_object()) fail(source, line, "missing object field 'context'");
  const auto& ctx = rec.at("context");
  if (inst.task == TaskKind::attribute) {
    inst.context.object = require_string(ctx, "object", source, line);
    inst.context.property = Property::parse(require_string(ctx, "property", source, line));
  } else {
    inst.context.question = require_string(ctx, "question", source, line);
  }

  if (!rec.contains("candidates") || !rec.at("candidates").is_array()) fail(source, line, "missing array field 'candidates'");
  for (const auto& c : rec.at("candidates")) {
    if (!c.is_string()) fail(source, line, "candidates must be strings");
    inst.candidates.push_back(c.get<std::string>());
  }
  if (!rec.contains("ground_truth") || !rec.at("ground_truth").is_array()) {
    fail(source, line, "missing array field 'ground_truth'");
  }
  for (const auto& g : rec.at("ground_truth")) inst.ground_truth.push_back(require_number(g, "ground_truth entry", source, line));

  if (rec.contains("group") && !rec.at("group").is_null()) {
    if (!rec.at("group").is_string()) fail(source, line, "group must be a string");
    auto group = parse_group(rec.at("group").get<std::string>());
    if (!group) fail(source, line, "unknown group '" + rec.at("group").get<std::string>() + "'");
    inst.group = group;
  }

  if (rec.contains("pairs") && !rec.at("pairs").is_null()) {
    std::vector<IndexPair> pairs;
    for (const auto& p : rec.at("pairs")) {
      if (!p.is_array() || p.size() != 2) fail(source, line, "each pair must be a 2-element array");
      pairs.emplace_back(require_index(p[0], source, line), require_index(p[1], source, line));
    }
    inst.pairs = std::move(pairs);
  }

  if (rec.contains("pretransformed") && !rec.at("pretransformed").is_null()) {
    if (!rec.at("pretransformed").is_object()) fail(source, line, "pretransformed must be an object");
    for (const auto& [key, value] : rec.at("pretransformed").items()) {
      std::size_t index = 0;
      try {
        std::size_t used = 0;
        index = std::stoul(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        fail(source, line, "pretransformed key '" + key + "' is not an index");
      }
      if (!value.is_string()) fail(source, line, "pretransformed values must be strings");
      inst.pretransformed[index] = value.get<std::string>();
    }
  }
  return inst;
}

EvaluationInstance coda_from_json(const json& rec, const std::string& source, std::size_t line) {
  EvaluationInstance inst;
  std::string object;
  for (const char* key : {"ngram", "display_name", "object"}) {
    if (rec.contains(key) && rec.at(key).is_string()) {
      object = rec.at(key).get<std::string>();
      break;
    }
  }
  if (object.empty()) fail(source, line, "CoDa record needs one of 'ngram', 'display_name', 'object'");
  inst.id = rec.contains("class_id") && rec.at("class_id").is_string() ? rec.at("class_id").get<std::string>() : object;
  inst.task = TaskKind::attribute;
  inst.context.object = object;
  inst.context.property = Property::parse("color");
  inst.candidates = coda_colors();

  if (!rec.contains("label") || !rec.at("label").is_array()) fail(source, line, "CoDa record needs array field 'label'");
  for (const auto& g : rec.at("label")) inst.ground_truth.push_back(require_number(g, "label entry", source, line));

  if (rec.contains("object_group") && !rec.at("object_group").is_null()) {
    const auto& g = rec.at("object_group");
    if (g.is_number_integer()) {
      switch (g.get<int>()) {
        case 0: inst.group = Group::single; break;
        case 1: inst.group = Group::multi; break;
        case 2: inst.group = Group::any; break;
        default: fail(source, line, "object_group must be 0, 1 or 2");
      }
    } else if (g.is_string()) {
      inst.group = parse_group(g.get<std::string>());
      if (!inst.group) fail(source, line, "unknown object_group '" + g.get<std::string>() + "'");
    } else {
      fail(source, line, "object_group must be an integer or string");
    }
  }
  return inst;
}

EvaluationInstance vicomte_from_json(std::string_view text, const std::string& source, std::size_t line) {
  // Parsed as ordered_json so the distribution keeps its source order as candidate order.
  ordered_json rec = ordered_json::parse(text, nullptr, false);
  if (rec.is_discarded() || !rec.is_object()) fail(source, line, "malformed JSON");

  EvaluationInstance inst;
  std::string object;
  for (const char* key : {"object", "sub"}) {
    if (rec.contains(key) && rec.at(key).is_string()) {
      object = rec.at(key).get<std::string>();
      break;
    }
  }
  if (object.empty()) fail(source, line, "ViComTe record needs 'object' or 'sub'");
  if (!rec.contains("property") || !rec.at("property").is_string()) fail(source, line, "missing string field 'property'");
  const auto property = rec.at("property").get<std::string>();

  inst.id = rec.contains("id") && rec.at("id").is_string() ? rec.at("id").get<std::string>() : object + "/" + property;
  inst.task = TaskKind::attribute;
  inst.context.object = object;
  inst.context.property = Property::parse(property);

  if (!rec.contains("distribution") || !rec.at("distribution").is_object()) {
    fail(source, line, "ViComTe record needs object field 'distribution'");
  }
  for (const auto& [value, score] : rec.at("distribution").items()) {
    if (!score.is_number()) fail(source, line, "distribution values must be numbers");
    inst.candidates.push_back(value);
    inst.ground_truth.push_back(score.get<double>());
  }
  if (rec.contains("group") && rec.at("group").is_string()) {
    inst.group = parse_group(rec.at("group").get<std::string>());
    if (!inst.group) fail(source, line, "unknown group '" + rec.at("group").get<std::string>() + "'");
  }
  return inst;
}

EvaluationInstance cfc_from_json(const json& rec, const std::string& source, std::size_t line) {
  EvaluationInstance inst;
  inst.id = rec.contains("id") && rec.at("id").is_string() ? rec.at("id").get<std::string>() : "cfc-" + std::to_string(line);
  inst.task = TaskKind::frame;
  inst.context.question = require_string(rec, "question", source, line);
  if (!rec.contains("answers") || !rec.at("answers").is_array()) fail(source, line, "CFC record needs array field 'answers'");
  for (const auto& a : rec.at("answers")) {
    if (!a.is_object()) fail(source, line, "each answer must be an object");
    const auto index = inst.candidates.size();
    inst.candidates.push_back(require_string(a, "answer", source, line));
    if (!a.contains("score")) fail(source, line, "answer missing 'score'");
    inst.ground_truth.push_back(require_number(a.at("score"), "answer score", source, line));
    if (a.contains("statement") && a.at("statement").is_string()) inst.pretransformed[index] = a.at("statement").get<std::string>();
  }
  return inst;
}

}  // namespace

EvaluationInstance parse_canonical_record(std::string_view json_line, const std::string& source, std::size_t line) {
  return canonical_from_json(parse_json_line(json_line, source, line), source, line);
}

std::string to_canonical_record(const EvaluationInstance& instance) {
  ordered_json rec;
  rec["id"] = instance.id;
  rec["task"] = to_string(instance.task);
  ordered_json ctx = ordered_json::object();
  if (instance.task == TaskKind::attribute) {
    ctx["object"] = instance.context.object;
    ctx["property"] = instance.context.property.name;
  } else {
    ctx["question"] = instance.context.question;
  }
  rec["context"] = std::move(ctx);
  rec["candidates"] = instance.candidates;
  rec["ground_truth"] = instance.ground_truth;
  if (instance.group) rec["group"] = to_string(*instance.group);
  if (instance.pairs) {
    ordered_json pairs = ordered_json::array();
    for (const auto& [a, b] : *instance.pairs) pairs.push_back({a, b});
    rec["pairs"] = std::move(pairs);
  }
  if (!instance.pretransformed.empty()) {
    ordered_json pre = ordered_json::object();
    for (const auto& [index, text] : instance.pretransformed) pre[std::to_string(index)] = text;
    rec["pretransformed"] = std::move(pre);
  }
  return rec.dump();
}

std::vector<EvaluationInstance> parse_dataset(std::string_view text, DatasetFormat format, const std::string& source) {
  std::vector<EvaluationInstance> out;
  std::set<std::string> seen_coda;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    EvaluationInstance inst;
    switch (format) {
      case DatasetFormat::canonical: inst = parse_canonical_record(line, source, line_no); break;
      case DatasetFormat::coda: {
        inst = coda_from_json(parse_json_line(line, source, line_no), source, line_no);
        // CoDa repeats each object once per template; keep the first occurrence.
        if (!seen_coda.insert(inst.id).second) continue;
        break;
      }
      case DatasetFormat::vicomte: inst = vicomte_from_json(line, source, line_no); break;
      case DatasetFormat::cfc: inst = cfc_from_json(parse_json_line(line, source, line_no), source, line_no); break;
    }

    const auto violations = validate_instance(inst);
    if (!violations.empty()) {
      std::ostringstream msg;
      msg << source << ":" << line_no << ": record '" << inst.id << "' is invalid: ";
      for (std::size_t i = 0; i < violations.size(); ++i) msg << (i ? "; " : "") << violations[i];
      throw DataError(msg.str());
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<EvaluationInstance> load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), format, path.string());
}

void write_canonical(const std::filesystem::path& path, const std::vector<EvaluationInstance>& instances) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& inst : instances) out << to_canonical_record(inst) << '\n';
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace compass
