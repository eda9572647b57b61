#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gpht/error.hpp"

namespace gpht::cli {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_value(const std::string& where, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(where + ": cannot parse '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where + ": expected a boolean, got '" + v + "'");
}

SplitRatios parse_ratios(const std::string& text) {
  auto parts = split_list(text);
  if (parts.size() != 3) throw ConfigError("data.split: expected three ratios, got '" + text + "'");
  return {parse_value<double>("data.split", parts[0]), parse_value<double>("data.split", parts[1]),
          parse_value<double>("data.split", parts[2])};
}

void apply_synth(SynthSection& s, const std::string& section, const std::string& key,
                 const std::string& value) {
  const std::string where = section + "." + key;
  if (key == "length") s.spec.length = parse_value<std::size_t>(where, value);
  else if (key == "channels") s.spec.channels = parse_value<std::size_t>(where, value);
  else if (key == "seed") s.seed = parse_value<std::uint64_t>(where, value);
  else if (key == "random_phase") s.spec.random_phase = parse_bool(where, value);
  else if (key == "components") {
    s.spec.components.clear();
    for (const auto& c : split_list(value)) s.spec.components.push_back(parse_synth_component(c));
  } else {
    throw ConfigError("unknown key '" + key + "' in [" + section + "]");
  }
}

std::string synth_text(const std::string& section, const SynthSection& s) {
  std::string out = "[" + section + "]\n";
  out += "length = " + std::to_string(s.spec.length) + "\n";
  out += "channels = " + std::to_string(s.spec.channels) + "\n";
  std::string comps;
  for (std::size_t i = 0; i < s.spec.components.size(); ++i) {
    if (i) comps += ", ";
    comps += format_synth_component(s.spec.components[i]);
  }
  out += "components = " + comps + "\n";
  out += std::string("random_phase = ") + (s.spec.random_phase ? "true" : "false") + "\n";
  out += "seed = " + std::to_string(s.seed) + "\n\n";
  return out;
}

}  // namespace

SplitRatios DataSection::ratios_for(const std::string& dataset) const {
  if (split) return *split;
  return dataset.rfind("ETT", 0) == 0 ? kEttRatios : kDefaultRatios;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                           const ConfigOverrides& overrides) {
  RunConfig cfg;
  if (overrides.preset == Preset::paper) cfg.model = ModelConfig::paper(0);
  bool width_given = false;
  std::vector<std::string> source_specs;

  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section == "synth") cfg.synth.emplace();
      else if (section.rfind("synth.", 0) == 0) cfg.named_synth[section.substr(6)];
      else if (section != "model" && section != "train" && section != "data" && section != "eval") {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside a section");

    if (section == "model") {
      if (key == "width") width_given = true;
      cfg.model.apply_entry(key, value);
    } else if (section == "train") {
      if (key == "scope") cfg.train_scope_given = true;
      cfg.train.apply_entry(key, value);
    } else if (section == "data") {
      if (key == "sources") source_specs = split_list(value);
      else if (key == "split") {
        if (value == "auto") cfg.data.split.reset();
        else cfg.data.split = parse_ratios(value);
      } else {
        throw ConfigError("unknown key '" + key + "' in [data]");
      }
    } else if (section == "eval") {
      if (key == "protocol") {
        if (value == "standard") cfg.eval.protocol = Protocol::standard;
        else if (value == "zero-shot") cfg.eval.protocol = Protocol::zero_shot;
        else if (value == "few-shot") cfg.eval.protocol = Protocol::few_shot;
        else throw ConfigError("eval.protocol must be standard, zero-shot or few-shot");
      } else if (key == "fraction") {
        cfg.eval.fraction = parse_value<double>("eval.fraction", value);
      } else if (key == "horizons") {
        cfg.eval.horizons.clear();
        for (const auto& h : split_list(value)) cfg.eval.horizons.push_back(parse_value<std::size_t>("eval.horizons", h));
      } else if (key == "lookback") {
        cfg.eval.lookback = parse_value<std::size_t>("eval.lookback", value);
      } else if (key == "stride") {
        cfg.eval.stride = parse_value<std::size_t>("eval.stride", value);
      } else {
        throw ConfigError("unknown key '" + key + "' in [eval]");
      }
    } else if (section == "synth") {
      apply_synth(*cfg.synth, section, key, value);
    } else {
      apply_synth(cfg.named_synth[section.substr(6)], section, key, value);
    }
  }

  if (overrides.preset == Preset::paper) {
    if (!width_given) throw ConfigError("--preset paper requires an explicit [model] width");
    if (cfg.model.ff_width == 0) cfg.model.ff_width = 4 * cfg.model.width;
  }
  if (overrides.seed) {
    cfg.model.seed = *overrides.seed;
    cfg.train.seed = *overrides.seed;
    if (cfg.synth) cfg.synth->seed = *overrides.seed;
  }

  for (const auto& spec : source_specs) {
    SourceRef ref;
    if (spec.rfind("synth:", 0) == 0) {
      ref.kind = SourceRef::Kind::synth;
      ref.name = spec.substr(6);
      if (!cfg.named_synth.contains(ref.name)) {
        throw ConfigError("data source '" + spec + "' has no [synth." + ref.name + "] section");
      }
    } else {
      ref.kind = SourceRef::Kind::csv;
      std::filesystem::path p = spec.rfind("csv:", 0) == 0 ? spec.substr(4) : spec;
      ref.path = p.is_absolute() ? p : base_dir / p;
      ref.name = p.stem().string();
    }
    for (const auto& other : cfg.data.sources) {
      if (other.name == ref.name) throw ConfigError("duplicate data source name '" + ref.name + "'");
    }
    cfg.data.sources.push_back(std::move(ref));
  }
  if (cfg.eval.fraction && (!(*cfg.eval.fraction > 0.0) || *cfg.eval.fraction > 1.0)) {
    throw ConfigError("eval.fraction must lie in (0, 1]");
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path(), overrides);
}

std::string RunConfig::resolved_text() const {
  std::string out = "[model]\n";
  for (const auto& [k, v] : model.to_entries()) out += k + " = " + v + "\n";
  out += "\n[train]\n";
  for (const auto& [k, v] : train.to_entries()) out += k + " = " + v + "\n";
  out += "\n[data]\nsources = ";
  for (std::size_t i = 0; i < data.sources.size(); ++i) {
    if (i) out += ", ";
    const auto& s = data.sources[i];
    out += s.kind == SourceRef::Kind::synth ? "synth:" + s.name : "csv:" + s.path.string();
  }
  out += "\nsplit = ";
  if (data.split) {
    out += fmt_double(data.split->train) + "," + fmt_double(data.split->validation) + "," +
           fmt_double(data.split->test);
  } else {
    out += "auto";
  }
  out += "\n\n[eval]\nprotocol = ";
  switch (eval.protocol) {
    case Protocol::standard: out += "standard"; break;
    case Protocol::zero_shot: out += "zero-shot"; break;
    case Protocol::few_shot: out += "few-shot"; break;
  }
  out += "\n";
  if (eval.fraction) out += "fraction = " + fmt_double(*eval.fraction) + "\n";
  out += "horizons = ";
  for (std::size_t i = 0; i < eval.horizons.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(eval.horizons[i]);
  }
  out += "\nlookback = " + std::to_string(eval.lookback) + "\n";
  out += "stride = " + std::to_string(eval.stride) + "\n\n";
  if (synth) out += synth_text("synth", *synth);
  for (const auto& [name, s] : named_synth) out += synth_text("synth." + name, s);
  return out;
}

std::vector<MultivariateSeries> load_sources(const RunConfig& config) {
  if (config.data.sources.empty()) throw ConfigError("[data] lists no sources");
  std::vector<MultivariateSeries> out;
  for (const auto& ref : config.data.sources) {
    if (ref.kind == SourceRef::Kind::synth) {
      const auto& s = config.named_synth.at(ref.name);
      out.push_back(synth_generate(s.spec, s.seed, ref.name));
    } else {
      out.push_back(load_csv_dataset(ref.path, ref.name));
    }
  }
  return out;
}

}  // namespace gpht::cli
