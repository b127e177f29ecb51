#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbemt/tensor.hpp"

namespace gbemt {

struct ModelConfig {
  std::size_t num_layers = 6;
  std::size_t d_model = 512;
  std::size_t d_ff = 2048;
  std::size_t num_heads = 8;
  std::size_t max_seq_len = 150;
  std::size_t src_vocab = 10000;
  std::size_t tgt_vocab = 4000;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  bool tie_output_embedding = true;

  /// Throws ConfigError on a violated invariant.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
/// Rejects unknown keys; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

using ParameterSet = std::map<std::string, Tensor>;

/// Every parameter name and shape the config generates, sorted by name.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

/// Xavier-uniform matrices, zero biases, unit layer-norm gains. Each tensor draws
/// from SplitMix64(derive_seed(seed, name)).
ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Sinusoidal encoding: sin(pos / 10000^(2i/d)) at dim 2i, cos at dim 2i+1.
double positional_encoding(std::size_t pos, std::size_t dim_index, std::size_t d_model);

inline constexpr double kMaskPenalty = -1e9;
inline constexpr double kLayerNormEps = 1e-6;

/// softmax(Q·Kᵀ/√d_k + penalty)·V with mask (t×s, non-zero = attend).
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::span<const std::uint8_t> mask);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// Row-major masks, one vector per batch item.
struct AttentionMasks {
  std::size_t max_s = 0;
  std::size_t max_t = 0;
  std::vector<std::vector<std::uint8_t>> src_pad;         // S per item
  std::vector<std::vector<std::uint8_t>> tgt_causal_pad;  // T×T per item
  std::vector<std::vector<std::uint8_t>> cross;           // T×S per item
};

AttentionMasks make_masks(std::span<const std::size_t> src_lengths,
                          std::span<const std::size_t> tgt_lengths,
                          std::size_t max_s, std::size_t max_t);

/// Padded id matrix: rows × cols ids plus the unpadded length of each row.
struct IdBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lengths;

  std::span<const int> row(std::size_t r) const { return {ids.data() + r * cols, cols}; }
};

/// Pads each sequence with `pad_id` to the longest one.
IdBatch pad_batch(const std::vector<std::vector<int>>& sequences, int pad_id);

struct RunMode {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

/// Parameters registered on a tape, addressed by name.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad);
  Var operator[](const std::string& name) const;
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

/// Encoder output for one padded source row: (S × d_model).
Var encode_sequence(const ModelConfig& config, const BoundParameters& params,
                    std::span<const int> src_ids, std::size_t src_len, const RunMode& mode);

/// Decoder logits for one padded target-input row: (T × tgt_vocab).
Var decode_sequence(const ModelConfig& config, const BoundParameters& params, Var memory,
                    std::size_t src_len, std::span<const int> tgt_in_ids, std::size_t tgt_len,
                    const RunMode& mode);

/// Full batched forward: logits of shape B × T × tgt_vocab.
Tensor forward(const ModelConfig& config, const ParameterSet& params, const IdBatch& src,
               const IdBatch& tgt_in, const RunMode& mode = {});

struct Checkpoint {
  ModelConfig config;
  ParameterSet parameters;
  std::size_t epoch = 0;
  double validation_loss = 0.0;
};

/// Binary little-endian layout: "GBE1", u32 json length, json, u32 tensor count, then per
/// tensor (sorted by name) u16 name length, name, u8 rank, rank × u64 dims, f32 values.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ConfigError unless names and shapes match exactly what config generates.
void check_parameters(const ModelConfig& config, const ParameterSet& params);

}  // namespace gbemt
