// SPDX-License-Identifier: Apache-2.0
#include "bipete/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bipete/errors.hpp"
#include "json.hpp"

namespace bipete::model {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kFormat = "bipete-checkpoint-1";

void put_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

float get_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& manifest_path, const ModelConfig& cfg, std::uint64_t seed,
                     const ParameterStore<float>& params) {
  auto payload_path = manifest_path;
  payload_path.replace_extension(".bin");
  json m;
  m["format"] = kFormat;
  m["config"] = json::parse(to_json(cfg));
  m["seed"] = seed;
  m["payload"] = payload_path.filename().string();
  m["tensors"] = json::array();
  std::string payload;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensor(i);
    m["tensors"].push_back(
        json{{"name", params.name(i)}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", payload.size()}});
    for (float v : t.data()) put_le(payload, v);
  }
  std::ofstream bin(payload_path, std::ios::binary);
  bin.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  std::ofstream man(manifest_path);
  man << m.dump(2) << '\n';
  if (!bin || !man) throw InputError("cannot write checkpoint " + manifest_path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream man(manifest_path);
  if (!man) throw InputError("cannot open checkpoint " + manifest_path.string());
  std::stringstream ss;
  ss << man.rdbuf();
  try {
    const json m = json::parse(ss.str());
    if (m.at("format").get<std::string>() != kFormat) throw InputError("unknown checkpoint format");
    Checkpoint ck;
    ck.config = model_config_from_json(m.at("config").dump());
    ck.seed = m.at("seed").get<std::uint64_t>();
    const auto payload_path = manifest_path.parent_path() / m.at("payload").get<std::string>();
    std::ifstream bin(payload_path, std::ios::binary);
    if (!bin) throw InputError("cannot open checkpoint payload " + payload_path.string());
    const std::string payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    for (const auto& jt : m.at("tensors")) {
      if (jt.at("dtype").get<std::string>() != "f32") throw InputError("unsupported dtype");
      const auto shape = jt.at("shape").get<num::Shape>();
      const auto offset = jt.at("offset").get<std::size_t>();
      const std::size_t n = num::shape_numel(shape);
      if (offset + 4 * n > payload.size()) throw InputError("checkpoint payload truncated");
      std::vector<float> v(n);
      const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
      for (std::size_t i = 0; i < n; ++i) v[i] = get_le(p + 4 * i);
      ck.params.add(jt.at("name").get<std::string>(), num::Tensor<float>(shape, std::move(v)));
    }
    // Every expected parameter must be present with the expected shape.
    const auto ref = init_parameters<float>(ck.config, 0);
    if (ref.size() != ck.params.size()) throw InputError("checkpoint parameter count does not match its config");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (ref.tensor(i).shape() != ck.params.get(ref.name(i)).shape()) {
        throw InputError("checkpoint tensor '" + ref.name(i) + "' has the wrong shape");
      }
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw InputError(std::string("bad checkpoint: ") + e.what());
  }
}

}  // namespace bipete::model
