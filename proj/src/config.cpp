#include "hyperadapt/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace hyperadapt {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_bare_key(std::string_view key) {
  if (key.empty()) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

// Cuts a trailing '#' comment that is not inside a string.
std::string_view strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string && c == '\\') {
      ++i;
    } else if (c == '"') {
      in_string = !in_string;
    } else if (c == '#' && !in_string) {
      return line.substr(0, i);
    }
  }
  return line;
}

class ValueParser {
 public:
  ValueParser(std::string_view text, const std::string& where) : text_(text), where_(where) {}

  ConfigValue parse_top() {
    ConfigValue v = parse_value(true);
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing text '" + std::string(text_.substr(pos_)) + "'");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(where_, what); }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
  }

  ConfigValue parse_value(bool allow_array) {
    skip_ws();
    if (pos_ >= text_.size()) fail("missing value");
    const char c = text_[pos_];
    if (c == '"') return {parse_string()};
    if (c == '[') {
      if (!allow_array) fail("nested arrays are not supported");
      return {parse_array()};
    }
    return parse_scalar();
  }

  std::string parse_string() {
    ++pos_;
    std::string out;
    while (pos_ < text_.size()) {
      const char c = text_[pos_++];
      if (c == '"') return out;
      if (c == '\\') {
        if (pos_ >= text_.size()) break;
        const char e = text_[pos_++];
        switch (e) {
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          default: fail(std::string("unknown escape '\\") + e + "'");
        }
      } else {
        out += c;
      }
    }
    fail("unterminated string");
  }

  ConfigArray parse_array() {
    ++pos_;
    ConfigArray items;
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == ']') {
      ++pos_;
      return items;
    }
    while (true) {
      items.push_back(parse_value(false));
      skip_ws();
      if (pos_ >= text_.size()) fail("unterminated array");
      if (text_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ']') {
          ++pos_;
          return items;
        }
        continue;
      }
      if (text_[pos_] == ']') {
        ++pos_;
        return items;
      }
      fail("expected ',' or ']' in array");
    }
  }

  ConfigValue parse_scalar() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != ',' && text_[pos_] != ']' && text_[pos_] != ' ' &&
           text_[pos_] != '\t') {
      ++pos_;
    }
    const std::string_view token = text_.substr(start, pos_ - start);
    if (token == "true") return {true};
    if (token == "false") return {false};
    const bool floating = token.find_first_of(".eE") != std::string_view::npos || token == "inf" ||
                          token == "-inf" || token == "nan";
    if (!floating) {
      std::int64_t v = 0;
      auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      if (ec == std::errc() && ptr == token.data() + token.size()) return {v};
    } else {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      if (ec == std::errc() && ptr == token.data() + token.size()) return {v};
    }
    fail("cannot parse value '" + std::string(token) + "' (strings need double quotes)");
  }

  std::string_view text_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string type_name(const ConfigValue& v) {
  switch (v.data.index()) {
    case 0: return "string";
    case 1: return "integer";
    case 2: return "float";
    case 3: return "bool";
    default: return "array";
  }
}

// Typed access to one table; reports unknown keys after reading.
class TableReader {
 public:
  explicit TableReader(const ConfigTable* table) : table_(table) {}

  const ConfigEntry* find(std::string_view key) {
    if (table_ == nullptr) return nullptr;
    for (const auto& e : table_->entries) {
      if (e.key == key) {
        used_.insert(e.key);
        return &e;
      }
    }
    return nullptr;
  }

  template <typename T, typename F>
  void read(std::string_view key, T& out, F convert) {
    if (const ConfigEntry* e = find(key)) {
      try {
        out = convert(e->value, *e);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& ex) {
        throw ConfigError(e->where, std::string(key) + ": " + ex.what());
      }
    }
  }

  void finish() const {
    if (table_ == nullptr) return;
    for (const auto& e : table_->entries) {
      if (!used_.contains(e.key)) throw ConfigError(e.where, "unknown key '" + e.key + "' in [" + table_->name + "]");
    }
  }

 private:
  const ConfigTable* table_;
  std::set<std::string> used_;
};

[[noreturn]] void type_error(const ConfigEntry& e, const std::string& expected) {
  throw ConfigError(e.where, "'" + e.key + "' expects " + expected + ", got " + type_name(e.value));
}

std::int64_t as_int(const ConfigValue& v, const ConfigEntry& e) {
  if (const auto* i = std::get_if<std::int64_t>(&v.data)) return *i;
  type_error(e, "an integer");
}

std::size_t as_size(const ConfigValue& v, const ConfigEntry& e) {
  const std::int64_t i = as_int(v, e);
  if (i < 0) throw ConfigError(e.where, "'" + e.key + "' must be non-negative");
  return static_cast<std::size_t>(i);
}

std::size_t as_positive(const ConfigValue& v, const ConfigEntry& e) {
  const std::size_t n = as_size(v, e);
  if (n == 0) throw ConfigError(e.where, "'" + e.key + "' must be positive");
  return n;
}

double as_double(const ConfigValue& v, const ConfigEntry& e) {
  if (const auto* d = std::get_if<double>(&v.data)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v.data)) return static_cast<double>(*i);
  type_error(e, "a number");
}

double as_finite(const ConfigValue& v, const ConfigEntry& e) {
  const double d = as_double(v, e);
  if (!std::isfinite(d)) throw ConfigError(e.where, "'" + e.key + "' must be finite");
  return d;
}

bool as_bool(const ConfigValue& v, const ConfigEntry& e) {
  if (const auto* b = std::get_if<bool>(&v.data)) return *b;
  type_error(e, "true or false");
}

std::string as_string(const ConfigValue& v, const ConfigEntry& e) {
  if (const auto* s = std::get_if<std::string>(&v.data)) return *s;
  type_error(e, "a quoted string");
}

template <typename F>
auto as_list(F item) {
  return [item](const ConfigValue& v, const ConfigEntry& e) {
    const auto* arr = std::get_if<ConfigArray>(&v.data);
    if (arr == nullptr) type_error(e, "an array");
    std::vector<decltype(item(v, e))> out;
    for (const auto& x : *arr) out.push_back(item(x, e));
    return out;
  };
}

template <typename Parse>
auto as_enum(Parse parse) {
  return [parse](const ConfigValue& v, const ConfigEntry& e) { return parse(as_string(v, e)); };
}

const auto kVariant = as_enum([](const std::string& s) { return parse_variant(s); });
const auto kPreset = as_enum([](const std::string& s) { return parse_placement(s); });

void read_stage(TableReader& r, StageSettings& s) {
  r.read("enabled", s.enabled, as_bool);
  r.read("steps", s.steps, as_size);
  r.read("batch_size", s.batch_size, as_positive);
  r.read("learning_rate", s.learning_rate, as_finite);
  r.read("beta1", s.optimizer.beta1, as_finite);
  r.read("beta2", s.optimizer.beta2, as_finite);
  r.read("eps", s.optimizer.eps, as_finite);
  r.read("weight_decay", s.optimizer.weight_decay, as_finite);
  r.read("clip_norm", s.clip_norm, as_finite);
  r.read("cosine_schedule", s.cosine_schedule, as_bool);
  r.read("freeze_visual_expert", s.freeze_visual_expert, as_bool);
  r.read("final_window", s.final_window, as_positive);
  if (s.learning_rate < 0.0) throw ConfigError(r.find("learning_rate")->where, "learning_rate must be >= 0");
  if (s.clip_norm < 0.0) throw ConfigError(r.find("clip_norm")->where, "clip_norm must be >= 0");
}

std::optional<PlacementPreset> matching_preset(const std::optional<ExpertPlacement>& p, std::size_t n_blocks) {
  for (auto preset : {PlacementPreset::none, PlacementPreset::anterior_half, PlacementPreset::posterior_half,
                      PlacementPreset::all}) {
    if (ExpertPlacement::preset(preset, n_blocks) == p) return preset;
  }
  return std::nullopt;
}

template <typename T, typename F>
std::string emit_list(const std::vector<T>& items, F fmt) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + fmt(items[i]);
  return out + "]";
}

std::string quoted(std::string_view s) { return emit_config_value(ConfigValue{std::string(s)}); }

void emit_stage(std::ostringstream& out, const char* name, const StageSettings& s) {
  out << "\n[" << name << "]\n";
  out << "enabled = " << (s.enabled ? "true" : "false") << "\n";
  out << "steps = " << s.steps << "\n";
  out << "batch_size = " << s.batch_size << "\n";
  out << "learning_rate = " << format_double(s.learning_rate) << "\n";
  out << "beta1 = " << format_double(s.optimizer.beta1) << "\n";
  out << "beta2 = " << format_double(s.optimizer.beta2) << "\n";
  out << "eps = " << format_double(s.optimizer.eps) << "\n";
  out << "weight_decay = " << format_double(s.optimizer.weight_decay) << "\n";
  out << "clip_norm = " << format_double(s.clip_norm) << "\n";
  out << "cosine_schedule = " << (s.cosine_schedule ? "true" : "false") << "\n";
  out << "freeze_visual_expert = " << (s.freeze_visual_expert ? "true" : "false") << "\n";
  out << "final_window = " << s.final_window << "\n";
}

}  // namespace

ConfigTable& ConfigDocument::table(const std::string& name) {
  for (auto& t : tables) {
    if (t.name == name) return t;
  }
  tables.push_back({name, "<generated>", {}});
  return tables.back();
}

ConfigValue parse_config_value(std::string_view text, const std::string& where) {
  return ValueParser(trim(text), where).parse_top();
}

ConfigDocument parse_config_document(std::string_view text, const std::string& source) {
  ConfigDocument doc;
  ConfigTable* current = nullptr;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view raw = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    const std::string_view line = trim(strip_comment(raw));
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where, "malformed table header");
      const std::string name(trim(line.substr(1, line.size() - 2)));
      if (!is_bare_key(name)) throw ConfigError(where, "invalid table name '" + name + "'");
      for (const auto& t : doc.tables) {
        if (t.name == name) throw ConfigError(where, "table [" + name + "] defined twice (first at " + t.where + ")");
      }
      doc.tables.push_back({name, where, {}});
      current = &doc.tables.back();
    } else {
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError(where, "expected 'key = value'");
      const std::string key(trim(line.substr(0, eq)));
      if (!is_bare_key(key)) throw ConfigError(where, "invalid key '" + key + "'");
      if (current == nullptr) throw ConfigError(where, "key '" + key + "' appears before any [table]");
      for (const auto& e : current->entries) {
        if (e.key == key) throw ConfigError(where, "duplicate key '" + key + "' (first at " + e.where + ")");
      }
      current->entries.push_back({key, parse_config_value(line.substr(eq + 1), where), where});
    }
    if (end == text.size()) break;
  }
  return doc;
}

std::string emit_config_value(const ConfigValue& value) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::string>) {
          std::string out = "\"";
          for (char c : v) {
            if (c == '"') out += "\\\"";
            else if (c == '\\') out += "\\\\";
            else if (c == '\n') out += "\\n";
            else if (c == '\t') out += "\\t";
            else out += c;
          }
          return out + "\"";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          return format_double(v);
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else {
          std::string out = "[";
          for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + emit_config_value(v[i]);
          return out + "]";
        }
      },
      value.data);
}

StageSettings StageSettings::align_defaults() {
  StageSettings s;
  s.steps = 300;
  s.batch_size = 32;
  s.learning_rate = 1e-3;
  return s;
}

StageSettings StageSettings::instruct_defaults() {
  StageSettings s;
  s.steps = 300;
  s.batch_size = 16;
  s.learning_rate = 2e-5;
  s.clip_norm = 1.0;
  return s;
}

ExperimentConfig config_from_document(const ConfigDocument& doc) {
  static const std::set<std::string> known{"experiment", "model", "task", "align", "instruct", "sweep"};
  for (const auto& t : doc.tables) {
    if (!known.contains(t.name)) throw ConfigError(t.where, "unknown table [" + t.name + "]");
  }
  auto find_table = [&](const char* name) -> const ConfigTable* {
    for (const auto& t : doc.tables) {
      if (t.name == name) return &t;
    }
    return nullptr;
  };

  ExperimentConfig c;
  {
    TableReader r(find_table("experiment"));
    r.read("name", c.name, as_string);
    r.read("seeds", c.seeds, as_list([](const ConfigValue& v, const ConfigEntry& e) {
             return static_cast<std::uint64_t>(as_size(v, e));
           }));
    r.read("output_dir", c.output_dir, as_string);
    r.read("threads", c.threads, as_positive);
    r.read("param_match", c.param_match, as_bool);
    r.read("match_variant", c.match_variant, kVariant);
    r.read("match_placement", c.match_placement, kPreset);
    if (c.seeds.empty()) throw ConfigError(r.find("seeds")->where, "seeds must not be empty");
    if (c.name.empty() || !is_bare_key(c.name)) {
      const ConfigEntry* e = r.find("name");
      throw ConfigError(e ? e->where : "[experiment]", "name must be non-empty and use [A-Za-z0-9_-]");
    }
    r.finish();
  }
  {
    const ConfigTable* table = find_table("model");
    TableReader r(table);
    ModelSpec& m = c.model;
    r.read("d_v", m.d_v, as_positive);
    r.read("d", m.d, as_positive);
    r.read("n_blocks", m.n_blocks, as_positive);
    r.read("n_heads", m.n_heads, as_positive);
    r.read("vocab_size", m.vocab_size, as_positive);
    r.read("max_seq", m.max_seq, as_positive);
    r.read("ffn_hidden", m.ffn_hidden, as_positive);
    r.read("projector_variant", m.projector_variant, kVariant);
    r.read("guidance_dim", m.guidance_dim, as_positive);
    r.read("bottleneck", m.bottleneck, as_positive);
    r.read("generator_hidden", m.generator_hidden, as_positive);
    r.read("adapter_act", m.adapter_act, as_enum([](const std::string& s) { return parse_activation(s); }));
    r.read("structure", m.structure, as_enum([](const std::string& s) { return parse_structure(s); }));
    r.read("latent_guidance", m.latent_guidance, as_bool);
    r.read("shared_trunk", m.shared_trunk, as_bool);
    r.read("up_gain", m.up_gain, as_finite);

    std::string placement = "none";
    r.read("placement", placement, as_string);
    std::vector<std::int64_t> blocks;
    std::int64_t tap = -1;
    r.read("expert_blocks", blocks, as_list(as_int));
    r.read("guidance_tap", tap, as_int);
    const ConfigEntry* pe = r.find("placement");
    const std::string pwhere = pe ? pe->where : (table ? table->where : "[model]");
    try {
      if (placement == "custom") {
        std::vector<int> ids(blocks.begin(), blocks.end());
        m.placement = ExpertPlacement::make(std::move(ids), static_cast<int>(tap), m.n_blocks);
      } else {
        if (r.find("expert_blocks") || r.find("guidance_tap")) {
          throw ConfigError(pwhere, "expert_blocks/guidance_tap need placement = \"custom\"");
        }
        m.placement = ExpertPlacement::preset(parse_placement(placement), m.n_blocks);
      }
      m.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(pwhere, e.what());
    }
    r.finish();
  }
  {
    TableReader r(find_table("task"));
    TaskConfig& t = c.task;
    r.read("n_clusters", t.n_clusters, as_positive);
    r.read("n_visual_tokens", t.n_visual_tokens, as_positive);
    r.read("prompt_len", t.prompt_len, as_positive);
    r.read("content_tokens", t.content_tokens, as_positive);
    r.read("label_noise", t.label_noise, as_finite);
    r.read("feature_noise", t.feature_noise, as_finite);
    r.read("separation", t.separation, as_finite);
    r.finish();
  }
  {
    TableReader r(find_table("align"));
    read_stage(r, c.align);
    r.finish();
  }
  {
    TableReader r(find_table("instruct"));
    read_stage(r, c.instruct);
    r.finish();
  }
  {
    TableReader r(find_table("sweep"));
    r.read("variants", c.sweep.variants, as_list(kVariant));
    r.read("placements", c.sweep.placements, as_list(kPreset));
    r.read("guidance_dims", c.sweep.guidance_dims, as_list(as_positive));
    r.read("bottlenecks", c.sweep.bottlenecks, as_list(as_positive));
    r.finish();
  }
  return c;
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  return config_from_document(parse_config_document(text, source));
}

ExperimentConfig parse_config_with_overrides(std::string_view text, const std::string& source,
                                             const std::vector<std::string>& overrides) {
  ConfigDocument doc = parse_config_document(text, source);
  for (const auto& item : overrides) {
    const std::string where = "override '" + item + "'";
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError(where, "expected table.key=value");
    const std::string path(trim(std::string_view(item).substr(0, eq)));
    const std::size_t dot = path.find('.');
    if (dot == std::string::npos) throw ConfigError(where, "key must be qualified as table.key");
    const std::string table = path.substr(0, dot);
    const std::string key = path.substr(dot + 1);
    if (!is_bare_key(table) || !is_bare_key(key)) throw ConfigError(where, "invalid key '" + path + "'");
    const std::string_view raw = trim(std::string_view(item).substr(eq + 1));
    ConfigValue value;
    try {
      value = parse_config_value(raw, where);
    } catch (const ConfigError&) {
      // Bare words are accepted as strings on the command line.
      if (raw.empty() || raw.front() == '"' || raw.front() == '[') throw;
      value = ConfigValue{std::string(raw)};
    }
    ConfigTable& t = doc.table(table);
    if (t.where == "<generated>") t.where = where;
    auto it = std::find_if(t.entries.begin(), t.entries.end(), [&](const ConfigEntry& e) { return e.key == key; });
    if (it != t.entries.end()) {
      it->value = std::move(value);
      it->where = where;
    } else {
      t.entries.push_back({key, std::move(value), where});
    }
  }
  return config_from_document(doc);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot read config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string emit_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "name = " << quoted(c.name) << "\n";
  out << "seeds = " << emit_list(c.seeds, [](std::uint64_t s) { return std::to_string(s); }) << "\n";
  out << "output_dir = " << quoted(c.output_dir) << "\n";
  out << "threads = " << c.threads << "\n";
  out << "param_match = " << (c.param_match ? "true" : "false") << "\n";
  out << "match_variant = " << quoted(to_string(c.match_variant)) << "\n";
  out << "match_placement = " << quoted(to_string(c.match_placement)) << "\n";

  const ModelSpec& m = c.model;
  out << "\n[model]\n";
  out << "d_v = " << m.d_v << "\n";
  out << "d = " << m.d << "\n";
  out << "n_blocks = " << m.n_blocks << "\n";
  out << "n_heads = " << m.n_heads << "\n";
  out << "vocab_size = " << m.vocab_size << "\n";
  out << "max_seq = " << m.max_seq << "\n";
  out << "ffn_hidden = " << m.ffn_hidden << "\n";
  out << "projector_variant = " << quoted(to_string(m.projector_variant)) << "\n";
  if (auto preset = matching_preset(m.placement, m.n_blocks)) {
    out << "placement = " << quoted(to_string(*preset)) << "\n";
  } else {
    out << "placement = \"custom\"\n";
    out << "expert_blocks = " << emit_list(m.placement->block_ids, [](int b) { return std::to_string(b); }) << "\n";
    out << "guidance_tap = " << m.placement->guidance_tap << "\n";
  }
  out << "guidance_dim = " << m.guidance_dim << "\n";
  out << "bottleneck = " << m.bottleneck << "\n";
  out << "generator_hidden = " << m.generator_hidden << "\n";
  out << "adapter_act = " << quoted(to_string(m.adapter_act)) << "\n";
  out << "structure = " << quoted(to_string(m.structure)) << "\n";
  out << "latent_guidance = " << (m.latent_guidance ? "true" : "false") << "\n";
  out << "shared_trunk = " << (m.shared_trunk ? "true" : "false") << "\n";
  out << "up_gain = " << format_double(m.up_gain) << "\n";

  const TaskConfig& t = c.task;
  out << "\n[task]\n";
  out << "n_clusters = " << t.n_clusters << "\n";
  out << "n_visual_tokens = " << t.n_visual_tokens << "\n";
  out << "prompt_len = " << t.prompt_len << "\n";
  out << "content_tokens = " << t.content_tokens << "\n";
  out << "label_noise = " << format_double(t.label_noise) << "\n";
  out << "feature_noise = " << format_double(t.feature_noise) << "\n";
  out << "separation = " << format_double(t.separation) << "\n";

  emit_stage(out, "align", c.align);
  emit_stage(out, "instruct", c.instruct);

  auto str = [](auto v) { return quoted(to_string(v)); };
  auto num = [](std::size_t v) { return std::to_string(v); };
  out << "\n[sweep]\n";
  out << "variants = " << emit_list(c.sweep.variants, str) << "\n";
  out << "placements = " << emit_list(c.sweep.placements, str) << "\n";
  out << "guidance_dims = " << emit_list(c.sweep.guidance_dims, num) << "\n";
  out << "bottlenecks = " << emit_list(c.sweep.bottlenecks, num) << "\n";
  return out.str();
}

TrainPlan make_plan(Stage stage, const StageSettings& s) {
  TrainPlan plan = stage == Stage::align ? TrainPlan::align_defaults() : TrainPlan::instruct_defaults();
  plan.steps = s.steps;
  plan.batch_size = s.batch_size;
  plan.learning_rate = s.learning_rate;
  plan.optimizer = s.optimizer;
  plan.clip_norm = s.clip_norm;
  plan.cosine_schedule = s.cosine_schedule;
  plan.freeze_visual_expert = s.freeze_visual_expert;
  plan.final_window = s.final_window;
  return plan;
}

}  // namespace hyperadapt
