#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "toolqp/error.hpp"

namespace toolqp {

struct ToolParameter {
  std::string description;
  std::string type;
  bool required = false;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  bool operator==(const ToolParameter& other) const {
    return description == other.description && type == other.type && required == other.required;
  }
};

// One tool's documentation. `parameters` keeps the file order; `extra` holds
// unknown top-level keys verbatim so heterogeneous corpora survive round trips.
struct ToolDoc {
  std::string id;
  std::string name;
  std::string description;
  std::vector<std::pair<std::string, ToolParameter>> parameters;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

// Equality on the canonical fields (id, name, description, parameters).
bool canonical_equal(const ToolDoc& a, const ToolDoc& b);

enum class RenderStyle { kSchemaJson, kNameDesc, kFeedbackLine };

RenderStyle render_style_from_string(std::string_view name);
std::string to_string(RenderStyle style);

std::string render_tool_doc(const ToolDoc& tool, RenderStyle style);

// Parses one corpus JSONL record. `line_number` is used in error messages.
ToolDoc parse_tool_doc(const std::string& line, std::size_t line_number = 0);

// Canonical single-line serialization; inverse of parse_tool_doc on canonical fields.
std::string serialize_tool_doc(const ToolDoc& tool);

// Immutable after load; safe to share across threads.
class ToolCorpus {
 public:
  ToolCorpus() = default;
  explicit ToolCorpus(std::vector<ToolDoc> tools);

  static ToolCorpus load(const std::string& path);
  void save(const std::string& path) const;

  const std::vector<ToolDoc>& tools() const { return tools_; }
  std::size_t size() const { return tools_.size(); }
  bool empty() const { return tools_.empty(); }

  const ToolDoc& at(std::size_t pos) const { return tools_.at(pos); }
  const ToolDoc* find(std::string_view id) const;
  std::optional<std::size_t> position(std::string_view id) const;

  // Provenance hash over the canonical serialization of every tool.
  std::uint64_t content_hash() const { return content_hash_; }

 private:
  std::vector<ToolDoc> tools_;
  std::vector<std::pair<std::string, std::size_t>> id_index_;  // sorted by id
  std::uint64_t content_hash_ = 0;
};

}  // namespace toolqp
