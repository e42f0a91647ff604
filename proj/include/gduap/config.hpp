#pragma once

// Run configuration: the published JSON schema, a validator for the schema
// subset it uses, and source positions for error messages.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gduap/errors.hpp"

namespace gduap::config {

inline constexpr const char* kSchema = R"json({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "gduap run configuration",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "command": {"enum": ["train-victim", "craft", "eval", "defend", "analyze", "compare"]},
    "seed": {"type": "integer", "minimum": 0, "description": "default for every seed not given explicitly"},
    "paths": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "dataset_root": {"type": "string"},
        "substitute_root": {"type": "string"},
        "substitute_split": {"type": "string"},
        "output_dir": {"type": "string"},
        "weights": {"type": "string"},
        "perturbations": {"type": "array", "items": {"type": "string"}},
        "runs": {"type": "array", "items": {"type": "string"}}
      }
    },
    "victim": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "architecture": {"enum": ["small_conv_a", "small_conv_b", "toy_fcn"]},
        "num_classes": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "train_limit": {"type": "integer", "minimum": 1}
      }
    },
    "craft": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "xi": {"type": "number", "exclusiveMinimum": 0},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "theta": {"type": "number", "exclusiveMinimum": 0},
        "patience_H": {"type": "integer", "minimum": 1},
        "val_every_saturating": {"type": "integer", "minimum": 1},
        "val_every_quiet": {"type": "integer", "minimum": 1},
        "max_iterations": {"type": "integer", "minimum": 1},
        "prior_mode": {"enum": ["none", "range", "data"]},
        "aggregation": {"enum": ["log_product", "mean"]},
        "seed": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 0, "description": "0 selects the prior-dependent default"},
        "data_limit": {"type": "integer", "minimum": 1},
        "substitute_limit": {"type": "integer", "minimum": 1},
        "less_background": {"type": "boolean"},
        "augment": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "enabled": {"type": "boolean"},
            "crop": {"type": "boolean"},
            "blur_sigma_range": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2},
            "rotation_degrees_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
          }
        }
      }
    },
    "eval": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "baseline": {"type": "boolean"},
        "test_limit": {"type": "integer", "minimum": 1}
      }
    },
    "defense": {
      "type": "array",
      "items": {
        "type": "object",
        "additionalProperties": false,
        "required": ["kind"],
        "properties": {
          "kind": {"enum": ["none", "ten_crop", "gaussian_smooth", "median_smooth", "bilateral", "bit_reduce", "jpeg"]},
          "sigma": {"type": "number", "minimum": 0},
          "window": {"type": "integer", "minimum": 1},
          "sigma_spatial": {"type": "number", "exclusiveMinimum": 0},
          "sigma_range": {"type": "number", "exclusiveMinimum": 0},
          "bits": {"type": "integer", "minimum": 1, "maximum": 7},
          "quality": {"type": "integer", "minimum": 1, "maximum": 100},
          "crop_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
        }
      }
    },
    "analysis": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "n_samples": {"type": "integer", "minimum": 1},
        "layers": {"type": "array", "items": {"type": "string"}},
        "correlation": {"type": "boolean"}
      }
    }
  }
}
)json";

inline const nlohmann::json& schema() {
  static const nlohmann::json s = nlohmann::json::parse(kSchema);
  return s;
}

struct Position {
  int line = 1;
  int column = 1;
};

// Maps every JSON pointer in a document to the position where its value
// starts. Assumes the text already parsed successfully.
class Locator {
 public:
  explicit Locator(const std::string& text) : s_(text) {
    skip_ws();
    value("");
  }

  Position at(const std::string& pointer) const {
    std::string p = pointer;
    while (true) {
      auto it = pos_.find(p);
      if (it != pos_.end()) return it->second;
      const auto slash = p.rfind('/');
      if (slash == std::string::npos) return {};
      p = p.substr(0, slash);
    }
  }

 private:
  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~')
        out += "~0";
      else if (c == '/')
        out += "~1";
      else
        out += c;
    }
    return out;
  }

  char peek() const { return i_ < s_.size() ? s_[i_] : '\0'; }
  void advance() {
    if (s_[i_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++i_;
  }
  void skip_ws() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t' || s_[i_] == '\n' || s_[i_] == '\r')) advance();
  }
  std::string string() {
    std::string out;
    advance();  // opening quote
    while (i_ < s_.size() && s_[i_] != '"') {
      if (s_[i_] == '\\') {
        advance();
        const char e = peek();
        if (e == 'u') {
          for (int k = 0; k < 5 && i_ < s_.size(); ++k) advance();
          out += '?';
          continue;
        }
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
        advance();
        continue;
      }
      out += s_[i_];
      advance();
    }
    if (i_ < s_.size()) advance();
    return out;
  }
  void value(const std::string& ptr) {
    pos_[ptr] = {line_, col_};
    const char c = peek();
    if (c == '{') {
      advance();
      skip_ws();
      while (peek() != '}' && i_ < s_.size()) {
        const std::string key = string();
        skip_ws();
        advance();  // ':'
        skip_ws();
        value(ptr + "/" + escape(key));
        skip_ws();
        if (peek() == ',') {
          advance();
          skip_ws();
        }
      }
      if (i_ < s_.size()) advance();
    } else if (c == '[') {
      advance();
      skip_ws();
      int idx = 0;
      while (peek() != ']' && i_ < s_.size()) {
        value(ptr + "/" + std::to_string(idx++));
        skip_ws();
        if (peek() == ',') {
          advance();
          skip_ws();
        }
      }
      if (i_ < s_.size()) advance();
    } else if (c == '"') {
      string();
    } else {
      while (i_ < s_.size() && std::string_view(",]} \t\r\n").find(s_[i_]) == std::string_view::npos) advance();
    }
  }

  const std::string& s_;
  std::size_t i_ = 0;
  int line_ = 1, col_ = 1;
  std::map<std::string, Position> pos_;
};

struct Issue {
  std::string pointer;
  std::string message;
};

namespace detail {

inline bool has_type(const nlohmann::json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "integer") return v.is_number_integer();
  if (t == "number") return v.is_number();
  if (t == "null") return v.is_null();
  return false;
}

inline void check(const nlohmann::json& v, const nlohmann::json& s, const std::string& ptr, std::vector<Issue>& out) {
  if (s.contains("type")) {
    const auto& t = s["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = has_type(v, t.get<std::string>());
    } else {
      for (const auto& alt : t) ok |= has_type(v, alt.get<std::string>());
    }
    if (!ok) {
      out.push_back({ptr, "expected " + (t.is_string() ? t.get<std::string>() : t.dump()) + ", got " + v.type_name()});
      return;
    }
  }
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s["enum"]) found |= e == v;
    if (!found) out.push_back({ptr, "value " + v.dump() + " is not one of " + s["enum"].dump()});
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>())
      out.push_back({ptr, "value " + v.dump() + " is below the minimum " + s["minimum"].dump()});
    if (s.contains("maximum") && x > s["maximum"].get<double>())
      out.push_back({ptr, "value " + v.dump() + " is above the maximum " + s["maximum"].dump()});
    if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>())
      out.push_back({ptr, "value " + v.dump() + " must be greater than " + s["exclusiveMinimum"].dump()});
  }
  if (v.is_object()) {
    const auto props = s.value("properties", nlohmann::json::object());
    for (const auto& r : s.value("required", nlohmann::json::array()))
      if (!v.contains(r.get<std::string>())) out.push_back({ptr, "missing required key '" + r.get<std::string>() + "'"});
    for (const auto& [k, child] : v.items()) {
      if (props.contains(k))
        check(child, props[k], ptr + "/" + k, out);
      else if (!s.value("additionalProperties", true))
        out.push_back({ptr + "/" + k, "unknown key '" + k + "'"});
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>())
      out.push_back({ptr, "expected at least " + s["minItems"].dump() + " items"});
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>())
      out.push_back({ptr, "expected at most " + s["maxItems"].dump() + " items"});
    if (s.contains("items"))
      for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], ptr + "/" + std::to_string(i), out);
  }
}

}  // namespace detail

inline std::vector<Issue> validate(const nlohmann::json& doc, const nlohmann::json& sch = schema()) {
  std::vector<Issue> out;
  detail::check(doc, sch, "", out);
  return out;
}

// Parses and schema-checks config text. Throws ConfigError whose message
// lists "<source>:<line>:<column>: <pointer>: <problem>" entries.
inline nlohmann::json parse_and_validate(const std::string& text, const std::string& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": malformed JSON");
  }
  const auto issues = validate(doc);
  if (!issues.empty()) {
    const Locator loc(text);
    std::string msg;
    for (const auto& is : issues) {
      const auto p = loc.at(is.pointer);
      if (!msg.empty()) msg += "\n";
      msg += source + ":" + std::to_string(p.line) + ":" + std::to_string(p.column) + ": " +
             (is.pointer.empty() ? "/" : is.pointer) + ": " + is.message;
    }
    throw ConfigError(msg);
  }
  return doc;
}

}  // namespace gduap::config
