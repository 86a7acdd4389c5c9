// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace bipete::model {

enum class PositionalMode { both, rope_only, spe_only, none };

/// bipete: encoder stack + BiGRU head. bigru: token embeddings straight into
/// the BiGRU head, no positional signal.
enum class ModelKind { bipete, bigru };

std::string_view to_string(PositionalMode m);
PositionalMode positional_mode_from_string(std::string_view s);
std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);

struct ModelConfig {
  std::size_t d_model = 72;
  std::size_t n_heads = 9;
  std::size_t n_layers = 6;
  std::size_t d_ff = 288;
  std::size_t gru_hidden = 72;
  double dropout = 0.1;
  std::size_t max_seq_len = 256;
  std::size_t vocab_size = 3;
  PositionalMode positional_mode = PositionalMode::both;
  ModelKind kind = ModelKind::bipete;
  double rope_base = 10000.0;
  double spe_base = 10000.0;
  std::size_t max_visits = 512;

  std::size_t head_dim() const { return d_model / n_heads; }
  bool uses_rope() const {
    return kind == ModelKind::bipete &&
           (positional_mode == PositionalMode::both || positional_mode == PositionalMode::rope_only);
  }
  bool uses_spe() const {
    return kind == ModelKind::bipete &&
           (positional_mode == PositionalMode::both || positional_mode == PositionalMode::spe_only);
  }

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Serialized as a JSON object string.
std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view json);

}  // namespace bipete::model
