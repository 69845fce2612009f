// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <nlohmann/json.hpp>

#include "seaformer/backbone.hpp"
#include "seaformer/errors.hpp"

namespace seaformer {

LayerEntry LayerEntry::conv(std::size_t k, std::size_t c_out, std::size_t s) {
  LayerEntry e;
  e.kind = Kind::kConv;
  e.kernel = k;
  e.out_channels = c_out;
  e.stride = s;
  return e;
}

LayerEntry LayerEntry::mb(std::size_t k, double ex, std::size_t c_out, std::size_t s) {
  LayerEntry e;
  e.kind = Kind::kMB;
  e.kernel = k;
  e.expansion = ex;
  e.out_channels = c_out;
  e.stride = s;
  return e;
}

LayerEntry LayerEntry::sea(std::size_t n, std::size_t heads, std::size_t ffn_ratio) {
  LayerEntry e;
  e.kind = Kind::kSea;
  e.layers = n;
  e.heads = heads;
  e.ffn_ratio = ffn_ratio;
  e.stride = 1;
  return e;
}

bool operator==(const LayerEntry& a, const LayerEntry& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case LayerEntry::Kind::kConv:
      return a.kernel == b.kernel && a.out_channels == b.out_channels && a.stride == b.stride;
    case LayerEntry::Kind::kMB:
      return a.kernel == b.kernel && a.expansion == b.expansion &&
             a.out_channels == b.out_channels && a.stride == b.stride;
    case LayerEntry::Kind::kSea:
      return a.layers == b.layers && a.heads == b.heads && a.ffn_ratio == b.ffn_ratio;
  }
  return false;
}

std::size_t default_ffn_ratio(std::size_t stage_index) { return stage_index == 5 ? 4 : 2; }

std::size_t VariantSpec::stage_channels(std::size_t i) const {
  std::size_t c = 3;
  for (std::size_t s = 0; s <= i && s < stages.size(); ++s) {
    for (const auto& e : stages[s]) {
      if (e.kind != LayerEntry::Kind::kSea) c = e.out_channels;
    }
  }
  return c;
}

void VariantSpec::validate() const {
  static constexpr std::size_t kStride[6] = {2, 2, 2, 2, 2, 2};
  if (stages[0].empty() || stages[0].front().kind != LayerEntry::Kind::kConv) {
    throw ConfigError("variant " + name + ": stage 1 must start with a Conv entry");
  }
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].empty()) throw ConfigError("variant " + name + ": empty stage");
    std::size_t stride = 1;
    bool seen_conv = false;
    for (const auto& e : stages[s]) {
      if (e.kind == LayerEntry::Kind::kConv) {
        if (s != 0 || seen_conv) {
          throw ConfigError("variant " + name + ": Conv entries are only allowed first in stage 1");
        }
        seen_conv = true;
      }
      if (e.kind == LayerEntry::Kind::kSea) {
        if (s < 3) throw ConfigError("variant " + name + ": Sea entries belong to stages 4-6");
        if (e.layers == 0 || e.heads == 0) {
          throw ConfigError("variant " + name + ": Sea entry needs layers and heads >= 1");
        }
        continue;
      }
      if (e.out_channels == 0 || (e.stride != 1 && e.stride != 2) || e.kernel % 2 == 0) {
        throw ConfigError("variant " + name + ": invalid Conv/MB entry");
      }
      stride *= e.stride;
    }
    if (stride != kStride[s]) {
      throw ConfigError("variant " + name + ": stage " + std::to_string(s + 1) +
                        " must downsample by exactly 2");
    }
  }
  if (fusion_dims[0] == 0 || fusion_dims[1] == 0) {
    throw ConfigError("variant " + name + ": fusion dims must be >= 1");
  }
}

bool operator==(const VariantSpec& a, const VariantSpec& b) {
  return a.name == b.name && a.stages == b.stages && a.fusion_dims == b.fusion_dims;
}

namespace {

using E = LayerEntry;

std::size_t round8(double v) { return static_cast<std::size_t>(std::llround(v / 8.0)) * 8; }

VariantSpec make_spec(std::string name, std::array<std::vector<LayerEntry>, 6> stages) {
  VariantSpec spec{std::move(name), std::move(stages), {}};
  // Base uses (128, 160); other variants scale with their stage 5/6 widths.
  spec.fusion_dims = {round8(128.0 * static_cast<double>(spec.stage_channels(4)) / 192.0),
                      round8(160.0 * static_cast<double>(spec.stage_channels(5)) / 256.0)};
  return spec;
}

VariantSpec tiny() {
  return make_spec("T", {{
                            {E::conv(3, 16, 2), E::mb(3, 1, 16, 1)},
                            {E::mb(3, 4, 16, 2), E::mb(3, 3, 16, 1)},
                            {E::mb(5, 3, 32, 2), E::mb(5, 3, 32, 1)},
                            {E::mb(3, 3, 64, 2), E::mb(3, 3, 64, 1)},
                            {E::mb(5, 3, 128, 2), E::sea(2, 4)},
                            {E::mb(3, 6, 160, 2), E::sea(2, 4)},
                        }});
}

VariantSpec small() {
  return make_spec("S", {{
                            {E::conv(3, 16, 2), E::mb(3, 1, 16, 1)},
                            {E::mb(3, 4, 24, 2), E::mb(3, 3, 24, 1)},
                            {E::mb(5, 3, 48, 2), E::mb(5, 3, 48, 1)},
                            {E::mb(3, 3, 96, 2), E::mb(3, 3, 96, 1)},
                            {E::mb(5, 4, 160, 2), E::sea(3, 6)},
                            {E::mb(3, 6, 192, 2), E::sea(3, 6)},
                        }});
}

VariantSpec base() {
  return make_spec("B", {{
                            {E::conv(3, 16, 2), E::mb(3, 1, 16, 1)},
                            {E::mb(3, 4, 32, 2), E::mb(3, 3, 32, 1)},
                            {E::mb(5, 3, 64, 2), E::mb(5, 3, 64, 1)},
                            {E::mb(3, 3, 128, 2), E::mb(3, 3, 128, 1)},
                            {E::mb(5, 4, 192, 2), E::sea(4, 8)},
                            {E::mb(3, 6, 256, 2), E::sea(4, 8)},
                        }});
}

VariantSpec large() {
  return make_spec("L", {{
                            {E::conv(3, 32, 2), E::mb(3, 3, 32, 1)},
                            {E::mb(3, 4, 64, 2), E::mb(3, 4, 64, 1)},
                            {E::mb(5, 4, 128, 2), E::mb(5, 4, 128, 1)},
                            {E::mb(3, 4, 192, 2), E::mb(3, 4, 192, 1), E::sea(3, 8)},
                            {E::mb(5, 4, 256, 2), E::sea(3, 8)},
                            {E::mb(3, 6, 320, 2), E::sea(3, 8)},
                        }});
}

LayerEntry entry_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_string()) {
    throw ConfigError("variant entry must be an array starting with its kind: " + j.dump());
  }
  const std::string kind = j[0].get<std::string>();
  auto num = [&](std::size_t i) {
    if (i >= j.size() || !j[i].is_number()) {
      throw ConfigError("variant entry " + j.dump() + ": expected a number at position " +
                        std::to_string(i));
    }
    return j[i];
  };
  if (kind == "Conv") {
    if (j.size() != 4) throw ConfigError("Conv entry needs [\"Conv\", k, c_out, s]: " + j.dump());
    return LayerEntry::conv(num(1).get<std::size_t>(), num(2).get<std::size_t>(),
                            num(3).get<std::size_t>());
  }
  if (kind == "MB") {
    if (j.size() != 5) throw ConfigError("MB entry needs [\"MB\", k, e, c_out, s]: " + j.dump());
    return LayerEntry::mb(num(1).get<std::size_t>(), num(2).get<double>(),
                          num(3).get<std::size_t>(), num(4).get<std::size_t>());
  }
  if (kind == "Sea") {
    if (j.size() != 3 && j.size() != 4) {
      throw ConfigError("Sea entry needs [\"Sea\", n, heads] or [\"Sea\", n, heads, ffn]: " +
                        j.dump());
    }
    return LayerEntry::sea(num(1).get<std::size_t>(), num(2).get<std::size_t>(),
                           j.size() == 4 ? num(3).get<std::size_t>() : 0);
  }
  throw ConfigError("unknown variant entry kind '" + kind + "' (valid: Conv, MB, Sea)");
}

nlohmann::json entry_to_json(const LayerEntry& e) {
  switch (e.kind) {
    case LayerEntry::Kind::kConv:
      return {"Conv", e.kernel, e.out_channels, e.stride};
    case LayerEntry::Kind::kMB: {
      nlohmann::json ex = e.expansion;
      if (e.expansion == std::floor(e.expansion)) ex = static_cast<std::int64_t>(e.expansion);
      return {"MB", e.kernel, ex, e.out_channels, e.stride};
    }
    case LayerEntry::Kind::kSea:
      if (e.ffn_ratio == 0) return {"Sea", e.layers, e.heads};
      return {"Sea", e.layers, e.heads, e.ffn_ratio};
  }
  return nullptr;
}

}  // namespace

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"T", "S", "B", "L"};
  return names;
}

VariantSpec variant_spec(std::string_view name) {
  if (name == "T") return tiny();
  if (name == "S") return small();
  if (name == "B") return base();
  if (name == "L") return large();
  throw ConfigError("unknown variant '" + std::string(name) + "' (valid: T, S, B, L)");
}

void to_json(nlohmann::json& j, const VariantSpec& spec) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& stage : spec.stages) {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& e : stage) s.push_back(entry_to_json(e));
    stages.push_back(std::move(s));
  }
  j = nlohmann::json{{"name", spec.name},
                     {"stages", std::move(stages)},
                     {"fusion_dims", {spec.fusion_dims[0], spec.fusion_dims[1]}}};
}

void from_json(const nlohmann::json& j, VariantSpec& spec) {
  if (!j.is_object() || !j.contains("name") || !j.contains("stages") ||
      !j.contains("fusion_dims")) {
    throw ConfigError("variant.json needs name, stages and fusion_dims");
  }
  spec.name = j.at("name").get<std::string>();
  const auto& stages = j.at("stages");
  if (!stages.is_array() || stages.size() != 6) {
    throw ConfigError("variant.json: stages must be an array of 6 stage lists");
  }
  for (std::size_t s = 0; s < 6; ++s) {
    spec.stages[s].clear();
    for (const auto& e : stages[s]) spec.stages[s].push_back(entry_from_json(e));
  }
  const auto& fd = j.at("fusion_dims");
  if (!fd.is_array() || fd.size() != 2) throw ConfigError("variant.json: fusion_dims needs 2 values");
  spec.fusion_dims = {fd[0].get<std::size_t>(), fd[1].get<std::size_t>()};
  spec.validate();
}

}  // namespace seaformer
