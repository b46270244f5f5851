// Copyright 2026 The SCPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <fstream>

#include "app.hpp"
#include "scpl/error.hpp"

namespace scpl::cli {

namespace {

nlohmann::json default_model() {
  return {{"kind", "mlp"},
          {"dims", {16, 64, 64, 3}},
          {"activation", "relu"},
          {"channels", {3, 16, 16}},
          {"image_size", 8},
          {"classes", 10},
          {"head", {{"kind", "mlp"}, {"hidden", 512}, {"out", 1024}}}};
}

nlohmann::json default_data() {
  return {{"source", "blobs"},      {"classes", 3},       {"dim", 16},
          {"per_class", 450},       {"spread", 1.0},      {"seed", 0},
          {"path", ""},             {"label_column", "label"}, {"images", ""},
          {"labels", ""},           {"test_fraction", 1.0 / 3.0}, {"split_seed", 0}};
}

// Every key of `given` must exist in `known`; nested objects are checked
// recursively.
void check_known(const nlohmann::json& known, const nlohmann::json& given, const std::string& where) {
  if (!given.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (known[key].is_object() && !known[key].empty()) check_known(known[key], value, path);
  }
}

nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

}  // namespace

void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + item + "' is not of the form key=value");
    const std::string key = item.substr(0, eq);
    const nlohmann::json value = parse_value(item.substr(eq + 1));

    nlohmann::json::json_pointer ptr;
    if (key.find('.') != std::string::npos) {
      std::string path = "/" + key;
      for (auto& ch : path)
        if (ch == '.') ch = '/';
      ptr = nlohmann::json::json_pointer(path);
    } else if (config.contains(key) && !config[key].is_object()) {
      ptr = nlohmann::json::json_pointer("/" + key);
    } else {
      std::vector<std::string> hits;
      for (const auto& [section, body] : config.items())
        if (body.is_object() && body.contains(key)) hits.push_back(section);
      if (hits.empty()) throw ConfigError("override '" + key + "' matches no config key");
      if (hits.size() > 1)
        throw ConfigError("override '" + key + "' is ambiguous; prefix it with one of: " +
                          hits.front() + ", " + hits.back());
      ptr = nlohmann::json::json_pointer("/" + hits.front() + "/" + key);
    }
    if (!config.contains(ptr)) throw ConfigError("override '" + key + "' matches no config key");
    // Keep integers integral and floats floating where the target says so.
    const auto& current = config[ptr];
    if (current.is_number_float() && value.is_number()) config[ptr] = value.get<double>();
    else config[ptr] = value;
  }
}

nlohmann::json resolve_train_config(const nlohmann::json& file) {
  nlohmann::json defaults = {
      {"train", TrainConfig{}.to_json()}, {"model", default_model()}, {"data", default_data()}};
  check_known(defaults, file, "");
  nlohmann::json resolved = defaults;
  for (const auto& [section, body] : file.items()) {
    check_known(defaults[section], body, section);
    for (const auto& [key, value] : body.items()) {
      if (value.is_object()) {
        for (const auto& [k2, v2] : value.items()) resolved[section][key][k2] = v2;
      } else {
        resolved[section][key] = value;
      }
    }
  }
  return resolved;
}

NetworkTemplate template_from_config(const nlohmann::json& m) {
  try {
    const auto& h = m.at("head");
    const HeadSpec head{parse_head_kind(h.at("kind").get<std::string>()), h.at("hidden").get<std::size_t>(),
                        h.at("out").get<std::size_t>()};
    const std::string kind = m.at("kind").get<std::string>();
    if (kind == "mlp")
      return NetworkTemplate::mlp(m.at("dims").get<std::vector<std::size_t>>(),
                                  parse_activation(m.at("activation").get<std::string>()), head);
    if (kind == "convnet")
      return NetworkTemplate::convnet(m.at("channels").get<std::vector<std::size_t>>(),
                                      m.at("image_size").get<std::size_t>(), m.at("classes").get<std::size_t>(),
                                      head);
    if (kind == "vanilla_convnet") {
      auto t = NetworkTemplate::vanilla_convnet();
      t.head = head;
      return t;
    }
    throw ConfigError("unknown model kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

Dataset dataset_from_config(const nlohmann::json& d) {
  try {
    const std::string source = d.at("source").get<std::string>();
    if (source == "blobs") {
      const auto classes = d.at("classes").get<std::int64_t>();
      const auto dim = d.at("dim").get<std::int64_t>();
      const auto per_class = d.at("per_class").get<std::int64_t>();
      if (classes < 0 || dim < 0 || per_class < 0)
        throw DataError(DataError::Kind::kInvalidParams, "blob parameters must be non-negative");
      return gen_blobs(BlobParams{static_cast<std::size_t>(classes), static_cast<std::size_t>(dim),
                                  static_cast<std::size_t>(per_class), d.at("spread").get<double>(),
                                  d.at("seed").get<std::uint64_t>()});
    }
    Dataset data;
    if (source == "csv")
      data = load_csv(d.at("path").get<std::string>(), d.at("label_column").get<std::string>());
    else if (source == "idx")
      data = load_idx(d.at("images").get<std::string>(), d.at("labels").get<std::string>());
    else
      throw ConfigError("unknown data source '" + source + "'");
    split_dataset(data, d.at("test_fraction").get<double>(), d.at("split_seed").get<std::uint64_t>());
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("data config: ") + e.what());
  }
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  try {
    return nlohmann::json::parse(is, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path);
}

}  // namespace scpl::cli
