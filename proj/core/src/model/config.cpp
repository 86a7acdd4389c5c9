// SPDX-License-Identifier: Apache-2.0
#include "bipete/model/config.hpp"

#include <string>

#include "bipete/errors.hpp"
#include "json.hpp"

namespace bipete::model {

std::string_view to_string(PositionalMode m) {
  switch (m) {
    case PositionalMode::both: return "both";
    case PositionalMode::rope_only: return "rope_only";
    case PositionalMode::spe_only: return "spe_only";
    case PositionalMode::none: return "none";
  }
  return "none";
}

PositionalMode positional_mode_from_string(std::string_view s) {
  if (s == "both") return PositionalMode::both;
  if (s == "rope_only") return PositionalMode::rope_only;
  if (s == "spe_only") return PositionalMode::spe_only;
  if (s == "none") return PositionalMode::none;
  throw ConfigError("unknown positional mode '" + std::string(s) + "'");
}

std::string_view to_string(ModelKind k) { return k == ModelKind::bigru ? "bigru" : "bipete"; }

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "bipete") return ModelKind::bipete;
  if (s == "bigru") return ModelKind::bigru;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (d_model == 0 || gru_hidden == 0) fail("d_model and gru_hidden must be positive");
  if (vocab_size < 3) fail("vocab_size must cover the 3 reserved tokens");
  if (max_seq_len == 0) fail("max_seq_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (kind == ModelKind::bipete) {
    if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
    if (head_dim() % 2 != 0) fail("per-head dimension must be even for rotary pairing");
    if (d_model % 2 != 0) fail("d_model must be even for sinusoidal encoding");
    if (n_layers < 1) fail("n_layers must be >= 1");
    if (d_ff == 0) fail("d_ff must be positive");
  }
}

std::string to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(cfg.kind));
  j["positional_mode"] = std::string(to_string(cfg.positional_mode));
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["n_layers"] = cfg.n_layers;
  j["d_ff"] = cfg.d_ff;
  j["gru_hidden"] = cfg.gru_hidden;
  j["dropout"] = cfg.dropout;
  j["max_seq_len"] = cfg.max_seq_len;
  j["vocab_size"] = cfg.vocab_size;
  j["rope_base"] = cfg.rope_base;
  j["spe_base"] = cfg.spe_base;
  j["max_visits"] = cfg.max_visits;
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  ModelConfig cfg;
  try {
    if (j.contains("kind")) cfg.kind = model_kind_from_string(j["kind"].get<std::string>());
    if (j.contains("positional_mode")) {
      cfg.positional_mode = positional_mode_from_string(j["positional_mode"].get<std::string>());
    }
    cfg.d_model = j.value("d_model", cfg.d_model);
    cfg.n_heads = j.value("n_heads", cfg.n_heads);
    cfg.n_layers = j.value("n_layers", cfg.n_layers);
    cfg.d_ff = j.value("d_ff", cfg.d_ff);
    cfg.gru_hidden = j.value("gru_hidden", cfg.gru_hidden);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
    cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
    cfg.rope_base = j.value("rope_base", cfg.rope_base);
    cfg.spe_base = j.value("spe_base", cfg.spe_base);
    cfg.max_visits = j.value("max_visits", cfg.max_visits);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace bipete::model
