#include "gbemt/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gbemt/errors.hpp"
#include "gbemt/rng.hpp"
#include "gbemt/tokenizer.hpp"
#include "json_util.hpp"

namespace gbemt {
namespace {

std::string layer_prefix(const char* stack, std::size_t layer) {
  return std::string(stack) + "." + std::to_string(layer) + ".";
}

void add_attention_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                          std::size_t d) {
  for (const char* proj : {"q", "k", "v", "o"}) {
    out.push_back({prefix + proj + ".weight", {d, d}});
    out.push_back({prefix + proj + ".bias", {d}});
  }
}

void add_norm_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + "gain", {d}});
  out.push_back({prefix + "bias", {d}});
}

void add_ffn_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::size_t d,
                    std::size_t ff) {
  out.push_back({prefix + "1.weight", {d, ff}});
  out.push_back({prefix + "1.bias", {ff}});
  out.push_back({prefix + "2.weight", {ff, d}});
  out.push_back({prefix + "2.bias", {d}});
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Dropout sites draw independent streams from the run seed.
class DropoutStream {
 public:
  explicit DropoutStream(const RunMode& mode) : mode_(mode) {}
  Var apply(Var x, double rate) {
    if (!mode_.training || rate <= 0.0) return x;
    const std::uint64_t site_seed = derive_seed(mode_.dropout_seed, "dropout/" + std::to_string(site_++));
    return dropout(x, rate, site_seed);
  }

 private:
  RunMode mode_;
  std::size_t site_ = 0;
};

Var embed(const ModelConfig& cfg, Var table, std::span<const int> ids) {
  Var e = scale(embedding(table, ids), std::sqrt(static_cast<double>(cfg.d_model)));
  Tensor pe({ids.size(), cfg.d_model});
  for (std::size_t p = 0; p < ids.size(); ++p)
    for (std::size_t i = 0; i < cfg.d_model; ++i) pe.at(p, i) = positional_encoding(p, i, cfg.d_model);
  return add_constant(e, pe);
}

Var linear(const BoundParameters& p, const std::string& prefix, Var x) {
  return add_bias(matmul(x, p[prefix + "weight"]), p[prefix + "bias"]);
}

Var norm(const BoundParameters& p, const std::string& prefix, Var x) {
  return layer_norm(x, p[prefix + "gain"], p[prefix + "bias"], kLayerNormEps);
}

Var attend(Var q, Var k, Var v, std::span<const std::uint8_t> mask) {
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.value().dim(1)));
  Var scores = scale(matmul_transposed(q, k), inv_sqrt_dk);
  return matmul(masked_softmax(scores, mask, kMaskPenalty), v);
}

Var multi_head(const ModelConfig& cfg, const BoundParameters& p, const std::string& prefix, Var query_in,
               Var kv_in, std::span<const std::uint8_t> mask) {
  Var q = linear(p, prefix + "q.", query_in);
  Var k = linear(p, prefix + "k.", kv_in);
  Var v = linear(p, prefix + "v.", kv_in);
  const std::size_t dk = cfg.d_model / cfg.num_heads;
  std::vector<Var> heads;
  heads.reserve(cfg.num_heads);
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    heads.push_back(attend(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk), slice_cols(v, h * dk, dk), mask));
  }
  Var joined = cfg.num_heads == 1 ? heads.front() : concat_cols(heads);
  return linear(p, prefix + "o.", joined);
}

Var feed_forward(const BoundParameters& p, const std::string& prefix, Var x) {
  return linear(p, prefix + "2.", relu(linear(p, prefix + "1.", x)));
}

void check_ids(std::span<const int> ids, std::size_t vocab, const char* side) {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw VocabError(std::string(side) + " id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
}

void check_length(std::size_t len, const ModelConfig& cfg, const char* side) {
  if (len > cfg.max_seq_len) {
    throw LengthError(std::string(side) + " sequence of " + std::to_string(len) + " tokens exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  }
}

// Little-endian byte writers/readers.
template <typename T>
void put(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                               std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                  std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                                 std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                    std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void ModelConfig::validate() const {
  if (num_layers == 0) throw ConfigError("num_layers must be >= 1");
  if (d_model == 0 || num_heads == 0) throw ConfigError("d_model and num_heads must be positive");
  if (d_model % num_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
  if (src_vocab <= kNumSpecials || tgt_vocab <= kNumSpecials) {
    throw ConfigError("vocabularies must be larger than the " + std::to_string(kNumSpecials) + " special tokens");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"num_layers", c.num_layers},
                        {"d_model", c.d_model},
                        {"d_ff", c.d_ff},
                        {"num_heads", c.num_heads},
                        {"max_seq_len", c.max_seq_len},
                        {"src_vocab", c.src_vocab},
                        {"tgt_vocab", c.tgt_vocab},
                        {"dropout", c.dropout},
                        {"label_smoothing", c.label_smoothing},
                        {"tie_output_embedding", c.tie_output_embedding}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "model config";
  detail::check_keys(j,
                     {"num_layers", "d_model", "d_ff", "num_heads", "max_seq_len", "src_vocab", "tgt_vocab",
                      "dropout", "label_smoothing", "tie_output_embedding"},
                     ctx);
  ModelConfig c;
  detail::read_key(j, "num_layers", c.num_layers, ctx);
  detail::read_key(j, "d_model", c.d_model, ctx);
  detail::read_key(j, "d_ff", c.d_ff, ctx);
  detail::read_key(j, "num_heads", c.num_heads, ctx);
  detail::read_key(j, "max_seq_len", c.max_seq_len, ctx);
  detail::read_key(j, "src_vocab", c.src_vocab, ctx);
  detail::read_key(j, "tgt_vocab", c.tgt_vocab, ctx);
  detail::read_key(j, "dropout", c.dropout, ctx);
  detail::read_key(j, "label_smoothing", c.label_smoothing, ctx);
  detail::read_key(j, "tie_output_embedding", c.tie_output_embedding, ctx);
  return c;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"src_embedding", {cfg.src_vocab, d}});
  out.push_back({"tgt_embedding", {cfg.tgt_vocab, d}});
  if (!cfg.tie_output_embedding) out.push_back({"output_projection", {d, cfg.tgt_vocab}});
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto p = layer_prefix("encoder", l);
    add_attention_shapes(out, p + "self_attn.", d);
    add_norm_shapes(out, p + "norm1.", d);
    add_ffn_shapes(out, p + "ffn.", d, cfg.d_ff);
    add_norm_shapes(out, p + "norm2.", d);
  }
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto p = layer_prefix("decoder", l);
    add_attention_shapes(out, p + "self_attn.", d);
    add_norm_shapes(out, p + "norm1.", d);
    add_attention_shapes(out, p + "cross_attn.", d);
    add_norm_shapes(out, p + "norm2.", d);
    add_ffn_shapes(out, p + "ffn.", d, cfg.d_ff);
    add_norm_shapes(out, p + "norm3.", d);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [_, shape] : parameter_shapes(cfg)) n += shape_size(shape);
  return n;
}

ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterSet params;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Tensor t(shape);
    if (shape.size() == 2) {
      SplitMix64 rng(derive_seed(seed, name));
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (auto& v : t.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
    } else if (ends_with(name, ".gain")) {
      for (auto& v : t.data()) v = 1.0;
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

double positional_encoding(std::size_t pos, std::size_t dim_index, std::size_t d_model) {
  const std::size_t i = dim_index / 2;
  const double angle = static_cast<double>(pos) /
                       std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
  return dim_index % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::span<const std::uint8_t> mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw ShapeError("scaled_dot_attention: incompatible shapes Q" + shape_string(q.shape()) + " K" +
                     shape_string(k.shape()) + " V" + shape_string(v.shape()));
  }
  Tape tape;
  return attend(tape.constant(q), tape.constant(k), tape.constant(v), mask).value();
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Tape tape;
  return layer_norm(tape.constant(x), tape.constant(gain), tape.constant(bias), eps).value();
}

AttentionMasks make_masks(std::span<const std::size_t> src_lengths, std::span<const std::size_t> tgt_lengths,
                          std::size_t max_s, std::size_t max_t) {
  if (src_lengths.size() != tgt_lengths.size()) throw ShapeError("make_masks: batch sizes differ");
  AttentionMasks m;
  m.max_s = max_s;
  m.max_t = max_t;
  for (std::size_t b = 0; b < src_lengths.size(); ++b) {
    const std::size_t sl = src_lengths[b], tl = tgt_lengths[b];
    if (sl > max_s || tl > max_t) throw LengthError("make_masks: length exceeds maximum");
    std::vector<std::uint8_t> pad(max_s), causal(max_t * max_t), cross(max_t * max_s);
    for (std::size_t s = 0; s < max_s; ++s) pad[s] = s < sl;
    for (std::size_t t = 0; t < max_t; ++t) {
      for (std::size_t u = 0; u < max_t; ++u) causal[t * max_t + u] = t < tl && u < tl && u <= t;
      for (std::size_t s = 0; s < max_s; ++s) cross[t * max_s + s] = t < tl && s < sl;
    }
    m.src_pad.push_back(std::move(pad));
    m.tgt_causal_pad.push_back(std::move(causal));
    m.cross.push_back(std::move(cross));
  }
  return m;
}

IdBatch pad_batch(const std::vector<std::vector<int>>& sequences, int pad_id) {
  IdBatch b;
  b.rows = sequences.size();
  for (const auto& s : sequences) b.cols = std::max(b.cols, s.size());
  b.ids.assign(b.rows * b.cols, pad_id);
  for (std::size_t r = 0; r < b.rows; ++r) {
    std::copy(sequences[r].begin(), sequences[r].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.cols));
    b.lengths.push_back(sequences[r].size());
  }
  return b;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad) {
  for (const auto& [name, tensor] : params) vars_.emplace(name, tape.bind(tensor, requires_grad));
}

Var BoundParameters::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("missing model parameter '" + name + "'");
  return it->second;
}

Var encode_sequence(const ModelConfig& cfg, const BoundParameters& p, std::span<const int> src_ids,
                    std::size_t src_len, const RunMode& mode) {
  check_length(src_ids.size(), cfg, "source");
  check_ids(src_ids, cfg.src_vocab, "source");
  const std::size_t s = src_ids.size();
  std::vector<std::uint8_t> mask(s * s);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) mask[i * s + j] = j < src_len;

  DropoutStream drop(RunMode{mode.training, derive_seed(mode.dropout_seed, "encoder")});
  Var x = drop.apply(embed(cfg, p["src_embedding"], src_ids), cfg.dropout);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto pre = layer_prefix("encoder", l);
    Var a = drop.apply(multi_head(cfg, p, pre + "self_attn.", x, x, mask), cfg.dropout);
    x = norm(p, pre + "norm1.", add(x, a));
    Var f = drop.apply(feed_forward(p, pre + "ffn.", x), cfg.dropout);
    x = norm(p, pre + "norm2.", add(x, f));
  }
  return x;
}

Var decode_sequence(const ModelConfig& cfg, const BoundParameters& p, Var memory, std::size_t src_len,
                    std::span<const int> tgt_in_ids, std::size_t tgt_len, const RunMode& mode) {
  check_length(tgt_in_ids.size(), cfg, "target");
  check_ids(tgt_in_ids, cfg.tgt_vocab, "target");
  const std::size_t t = tgt_in_ids.size();
  const std::size_t s = memory.value().dim(0);
  std::vector<std::uint8_t> self_mask(t * t), cross_mask(t * s);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) self_mask[i * t + j] = i < tgt_len && j < tgt_len && j <= i;
    for (std::size_t j = 0; j < s; ++j) cross_mask[i * s + j] = i < tgt_len && j < src_len;
  }

  DropoutStream drop(RunMode{mode.training, derive_seed(mode.dropout_seed, "decoder")});
  Var x = drop.apply(embed(cfg, p["tgt_embedding"], tgt_in_ids), cfg.dropout);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto pre = layer_prefix("decoder", l);
    Var a = drop.apply(multi_head(cfg, p, pre + "self_attn.", x, x, self_mask), cfg.dropout);
    x = norm(p, pre + "norm1.", add(x, a));
    Var c = drop.apply(multi_head(cfg, p, pre + "cross_attn.", x, memory, cross_mask), cfg.dropout);
    x = norm(p, pre + "norm2.", add(x, c));
    Var f = drop.apply(feed_forward(p, pre + "ffn.", x), cfg.dropout);
    x = norm(p, pre + "norm3.", add(x, f));
  }
  if (cfg.tie_output_embedding) return matmul_transposed(x, p["tgt_embedding"]);
  return matmul(x, p["output_projection"]);
}

Tensor forward(const ModelConfig& cfg, const ParameterSet& params, const IdBatch& src, const IdBatch& tgt_in,
               const RunMode& mode) {
  if (src.rows != tgt_in.rows) {
    throw ShapeError("forward: batch sizes differ (" + std::to_string(src.rows) + " vs " +
                     std::to_string(tgt_in.rows) + ")");
  }
  check_length(src.cols, cfg, "source");
  check_length(tgt_in.cols, cfg, "target");
  Tensor logits({src.rows, tgt_in.cols, cfg.tgt_vocab});
  const std::size_t row_size = tgt_in.cols * cfg.tgt_vocab;
  for (std::size_t b = 0; b < src.rows; ++b) {
    Tape tape;
    BoundParameters p(tape, params, false);
    const RunMode item_mode{mode.training, derive_seed(mode.dropout_seed, "item/" + std::to_string(b))};
    Var memory = encode_sequence(cfg, p, src.row(b), src.lengths[b], item_mode);
    Var out = decode_sequence(cfg, p, memory, src.lengths[b], tgt_in.row(b), tgt_in.lengths[b], item_mode);
    std::copy(out.value().data().begin(), out.value().data().end(),
              logits.data().begin() + static_cast<std::ptrdiff_t>(b * row_size));
  }
  return logits;
}

void check_parameters(const ModelConfig& cfg, const ParameterSet& params) {
  const auto shapes = parameter_shapes(cfg);
  if (shapes.size() != params.size()) {
    throw ConfigError("expected " + std::to_string(shapes.size()) + " parameter tensors, found " +
                      std::to_string(params.size()));
  }
  for (const auto& [name, shape] : shapes) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ConfigError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                        shape_string(shape));
    }
  }
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out = "GBE1";
  nlohmann::json meta{{"config", to_json(ck.config)}, {"epoch", ck.epoch}, {"validation_loss", ck.validation_loss}};
  const std::string json = meta.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(json.size()));
  out += json;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.parameters.size()));
  for (const auto& [name, t] : ck.parameters) {  // std::map: sorted by name
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<float>(out, static_cast<float>(v));
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != "GBE1") throw FormatError("checkpoint: bad magic");
  Checkpoint ck;
  const auto json_len = in.get<std::uint32_t>();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in.take(json_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  detail::check_keys(meta, {"config", "epoch", "validation_loss"}, "checkpoint metadata");
  ck.config = model_config_from_json(meta.at("config"));
  ck.epoch = meta.at("epoch").get<std::size_t>();
  ck.validation_loss = meta.at("validation_loss").get<double>();
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint16_t>();
    std::string name(in.take(name_len));
    const auto rank = in.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint64_t>();
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = static_cast<double>(in.get<float>());
    ck.parameters.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes");
  check_parameters(ck.config, ck.parameters);
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_checkpoint(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

}  // namespace gbemt
