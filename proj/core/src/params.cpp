// SPDX-License-Identifier: Apache-2.0
#include "seaformer/params.hpp"

#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "seaformer/errors.hpp"
#include "seaformer/stn_io.hpp"

namespace seaformer {

namespace {

struct RoleEntry {
  ParamRole role;
  std::string_view name;
};

constexpr RoleEntry kRoles[] = {
    {ParamRole::kWeight, "weight"},
    {ParamRole::kBias, "bias"},
    {ParamRole::kBnGamma, "bn_gamma"},
    {ParamRole::kBnBeta, "bn_beta"},
    {ParamRole::kBnRunningMean, "bn_running_mean"},
    {ParamRole::kBnRunningVar, "bn_running_var"},
    {ParamRole::kPosEmbed, "pos_embed"},
};

}  // namespace

std::string_view role_name(ParamRole role) {
  for (const auto& e : kRoles) {
    if (e.role == role) return e.name;
  }
  return "unknown";
}

ParamRole role_from_name(std::string_view name) {
  for (const auto& e : kRoles) {
    if (e.name == name) return e.role;
  }
  throw ConfigError("unknown parameter role '" + std::string(name) + "'");
}

std::string join_name(std::string_view prefix, std::string_view name) {
  if (prefix.empty()) return std::string(name);
  std::string out(prefix);
  out += '.';
  out += name;
  return out;
}

template <typename T>
void save_bundle(const std::filesystem::path& dir,
                 const std::function<void(const ParamVisitor<T>&)>& visit_all) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  visit_all([&](const std::string& name, ParamRole role, Tensor<T>& t) {
    write_stn(dir / (name + ".stn"), t.template cast<float>());
    manifest.push_back({{"name", name}, {"role", role_name(role)}, {"shape", t.shape()}});
  });
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

template <typename T>
void load_bundle(const std::filesystem::path& dir,
                 const std::function<void(const ParamVisitor<T>&)>& visit_all) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest.json: ") + e.what(), e.byte);
  }
  std::map<std::string, std::pair<std::string, Shape>> entries;
  for (const auto& e : manifest) {
    entries[e.at("name").get<std::string>()] = {e.at("role").get<std::string>(),
                                                 e.at("shape").get<Shape>()};
  }
  visit_all([&](const std::string& name, ParamRole role, Tensor<T>& t) {
    auto it = entries.find(name);
    if (it == entries.end()) throw ConfigError("bundle has no entry for '" + name + "'");
    if (role_from_name(it->second.first) != role) {
      throw ConfigError("bundle role mismatch for '" + name + "'");
    }
    if (it->second.second != t.shape()) {
      throw ConfigError("bundle shape " + shape_to_string(it->second.second) + " for '" + name +
                        "' does not match model shape " + shape_to_string(t.shape()));
    }
    Tensor<float> loaded = read_stn(dir / (name + ".stn"));
    if (loaded.shape() != t.shape()) {
      throw ConfigError("tensor file shape mismatch for '" + name + "'");
    }
    t = loaded.cast<T>();
  });
}

template void save_bundle<float>(const std::filesystem::path&,
                                 const std::function<void(const ParamVisitor<float>&)>&);
template void save_bundle<double>(const std::filesystem::path&,
                                  const std::function<void(const ParamVisitor<double>&)>&);
template void load_bundle<float>(const std::filesystem::path&,
                                 const std::function<void(const ParamVisitor<float>&)>&);
template void load_bundle<double>(const std::filesystem::path&,
                                  const std::function<void(const ParamVisitor<double>&)>&);

}  // namespace seaformer
