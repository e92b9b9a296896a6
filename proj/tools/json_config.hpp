#pragma once

// Config-file adapters for CLI11. JsonConfig reads a JSON object (nested
// objects name subcommands, arrays become repeated values). SubcommandConfig
// files top-level keys under the subcommand being run, so a flat file written
// for `train` configures `train` even though --config belongs to the root app.

#include <istream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace foreranker::cli {

class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool write_description,
                        std::string prefix) const override {
    return CLI::ConfigTOML().to_config(app, default_also, write_description, std::move(prefix));
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError("JSON config", e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("JSON config", "top level must be an object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const nlohmann::json& obj, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto next = parents;
        next.push_back(key);
        flatten(value, next, items);
        continue;
      }
      CLI::ConfigItem item{parents, key, {}};
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

class SubcommandConfig : public CLI::Config {
 public:
  SubcommandConfig(std::shared_ptr<CLI::Config> inner, std::string section)
      : inner_(std::move(inner)), section_(std::move(section)) {}

  std::string to_config(const CLI::App* app, bool default_also, bool write_description,
                        std::string prefix) const override {
    return inner_->to_config(app, default_also, write_description, std::move(prefix));
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = inner_->from_config(input);
    if (section_.empty()) return items;
    for (auto& item : items) {
      if (item.parents.empty() || item.parents.front() != section_) item.parents.insert(item.parents.begin(), section_);
    }
    return items;
  }

 private:
  std::shared_ptr<CLI::Config> inner_;
  std::string section_;
};

}  // namespace foreranker::cli
