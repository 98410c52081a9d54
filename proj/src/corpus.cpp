#include "toolqp/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "toolqp/strings.hpp"

namespace toolqp {

namespace {

using ordered_json = nlohmann::ordered_json;

const char* const kCanonicalKeys[] = {"id", "name", "description", "parameters"};

bool is_canonical_key(const std::string& key) {
  for (const char* k : kCanonicalKeys) {
    if (key == k) return true;
  }
  return false;
}

ToolParameter parse_parameter(const ordered_json& node, const std::string& param_name,
                              std::size_t line_number) {
  if (!node.is_object()) {
    throw Error(ErrorCode::kParse, "parameter '" + param_name + "' is not an object (line " +
                                       std::to_string(line_number) + ")");
  }
  ToolParameter param;
  for (const auto& [key, value] : node.items()) {
    if (key == "description" && value.is_string()) {
      param.description = value.get<std::string>();
    } else if (key == "type" && value.is_string()) {
      param.type = value.get<std::string>();
    } else if (key == "required" && value.is_boolean()) {
      param.required = value.get<bool>();
    } else {
      param.extra[key] = value;
    }
  }
  return param;
}

ordered_json parameter_to_json(const ToolParameter& param) {
  ordered_json node = ordered_json::object();
  node["description"] = param.description;
  node["type"] = param.type;
  if (param.required) node["required"] = true;
  for (const auto& [key, value] : param.extra.items()) node[key] = value;
  return node;
}

ordered_json tool_to_json(const ToolDoc& tool, bool include_id) {
  ordered_json node = ordered_json::object();
  if (include_id) node["id"] = tool.id;
  node["name"] = tool.name;
  node["description"] = tool.description;
  ordered_json params = ordered_json::object();
  for (const auto& [pname, param] : tool.parameters) params[pname] = parameter_to_json(param);
  node["parameters"] = params;
  for (const auto& [key, value] : tool.extra.items()) node[key] = value;
  return node;
}

}  // namespace

bool canonical_equal(const ToolDoc& a, const ToolDoc& b) {
  return a.id == b.id && a.name == b.name && a.description == b.description &&
         a.parameters == b.parameters;
}

RenderStyle render_style_from_string(std::string_view name) {
  if (name == "schema_json") return RenderStyle::kSchemaJson;
  if (name == "name_desc") return RenderStyle::kNameDesc;
  if (name == "feedback_line") return RenderStyle::kFeedbackLine;
  throw Error(ErrorCode::kInvalidArgument, "unknown render style: " + std::string(name));
}

std::string to_string(RenderStyle style) {
  switch (style) {
    case RenderStyle::kSchemaJson: return "schema_json";
    case RenderStyle::kNameDesc: return "name_desc";
    case RenderStyle::kFeedbackLine: return "feedback_line";
  }
  return "schema_json";
}

std::string render_tool_doc(const ToolDoc& tool, RenderStyle style) {
  switch (style) {
    case RenderStyle::kSchemaJson:
      return tool_to_json(tool, /*include_id=*/false).dump();
    case RenderStyle::kNameDesc:
      return tool.name + ": " + tool.description;
    case RenderStyle::kFeedbackLine: {
      std::string out = tool.name + "(";
      for (std::size_t i = 0; i < tool.parameters.size(); ++i) {
        if (i > 0) out += ", ";
        out += tool.parameters[i].first;
      }
      out += ")";
      return out;
    }
  }
  return {};
}

ToolDoc parse_tool_doc(const std::string& line, std::size_t line_number) {
  ordered_json node;
  try {
    node = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kParse,
                "malformed JSON on line " + std::to_string(line_number) + ": " + e.what());
  }
  if (!node.is_object()) {
    throw Error(ErrorCode::kParse, "line " + std::to_string(line_number) + " is not an object");
  }

  ToolDoc tool;
  if (node.contains("name") && node["name"].is_string()) {
    tool.name = node["name"].get<std::string>();
  }
  if (tool.name.empty()) {
    throw Error(ErrorCode::kParse,
                "missing or empty 'name' on line " + std::to_string(line_number));
  }
  if (node.contains("id") && node["id"].is_string() && !node["id"].get<std::string>().empty()) {
    tool.id = node["id"].get<std::string>();
  } else {
    tool.id = tool.name;  // tool identity falls back to the name
  }
  if (node.contains("description") && node["description"].is_string()) {
    tool.description = node["description"].get<std::string>();
  }
  if (node.contains("parameters")) {
    const auto& params = node["parameters"];
    if (!params.is_object()) {
      throw Error(ErrorCode::kParse,
                  "'parameters' is not an object on line " + std::to_string(line_number));
    }
    for (const auto& [pname, pnode] : params.items()) {
      tool.parameters.emplace_back(pname, parse_parameter(pnode, pname, line_number));
    }
  }
  for (const auto& [key, value] : node.items()) {
    if (!is_canonical_key(key)) tool.extra[key] = value;
  }
  return tool;
}

std::string serialize_tool_doc(const ToolDoc& tool) {
  return tool_to_json(tool, /*include_id=*/true).dump();
}

ToolCorpus::ToolCorpus(std::vector<ToolDoc> tools) : tools_(std::move(tools)) {
  id_index_.reserve(tools_.size());
  std::uint64_t hash = fnv1a64("");
  for (std::size_t pos = 0; pos < tools_.size(); ++pos) {
    const ToolDoc& tool = tools_[pos];
    if (tool.id.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "tool at position " + std::to_string(pos) +
                                                   " has an empty id");
    }
    id_index_.emplace_back(tool.id, pos);
    hash = fnv1a64(serialize_tool_doc(tool), hash);
    hash = fnv1a64("\n", hash);
  }
  std::sort(id_index_.begin(), id_index_.end());
  for (std::size_t i = 1; i < id_index_.size(); ++i) {
    if (id_index_[i].first == id_index_[i - 1].first) {
      throw Error(ErrorCode::kParse, "duplicate tool id '" + id_index_[i].first + "'");
    }
  }
  content_hash_ = hash;
}

ToolCorpus ToolCorpus::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open corpus file: " + path);

  std::vector<ToolDoc> tools;
  std::unordered_map<std::string, std::size_t> seen;  // id -> first line number
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ToolDoc tool = parse_tool_doc(line, line_number);
    auto [it, inserted] = seen.emplace(tool.id, line_number);
    if (!inserted) {
      throw Error(ErrorCode::kParse, "duplicate tool id '" + tool.id + "' on line " +
                                         std::to_string(line_number));
    }
    tools.push_back(std::move(tool));
  }
  return ToolCorpus(std::move(tools));
}

void ToolCorpus::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write corpus file: " + path);
  for (const ToolDoc& tool : tools_) {
    out << serialize_tool_doc(tool) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

const ToolDoc* ToolCorpus::find(std::string_view id) const {
  auto pos = position(id);
  return pos ? &tools_[*pos] : nullptr;
}

std::optional<std::size_t> ToolCorpus::position(std::string_view id) const {
  auto it = std::lower_bound(id_index_.begin(), id_index_.end(), id,
                             [](const auto& entry, std::string_view key) {
                               return std::string_view(entry.first) < key;
                             });
  if (it == id_index_.end() || std::string_view(it->first) != id) return std::nullopt;
  return it->second;
}

}  // namespace toolqp
