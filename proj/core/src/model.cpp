#include "pinncast/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <nlohmann/json.hpp>

#include "pinncast/config.hpp"
#include "pinncast/errors.hpp"
#include "pinncast/init.hpp"

namespace pinncast::model {

void ModelConfig::validate() const {
  if (variables == 0 || height == 0 || width == 0 || patch_size == 0) {
    throw ConfigError("model grid extents must be positive");
  }
  if (height % patch_size != 0 || width % patch_size != 0) {
    throw ConfigError("grid " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (depth == 0 || mlp_ratio == 0) throw ConfigError("depth and mlp_ratio must be positive");
  attention().validate();
  ode.validate();
}

Tensor patchify(const Tensor& x, std::size_t p) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("patchify: expected (B, V, H, W), got " + shape_str(s));
  const std::size_t b = s[0], v = s[1], h = s[2], w = s[3];
  if (h % p != 0 || w % p != 0) {
    throw ConfigError("patchify: grid " + shape_str(s) + " not divisible by patch size " +
                      std::to_string(p));
  }
  const std::size_t hp = h / p, wp = w / p;
  Tensor t = reshape(x, {b, v, hp, p, wp, p});
  t = permute(t, {0, 2, 4, 1, 3, 5});  // (B, Hp, Wp, V, p, p)
  return reshape(t, {b, hp * wp, v * p * p});
}

Tensor unpatchify(const Tensor& tokens, std::size_t v, std::size_t h, std::size_t w,
                  std::size_t p) {
  const Shape& s = tokens.shape();
  const std::size_t hp = h / p, wp = w / p;
  if (s.size() != 3 || s[1] != hp * wp || s[2] != v * p * p) {
    throw DimensionError("unpatchify: tokens " + shape_str(s) + " do not match grid");
  }
  const std::size_t b = s[0];
  Tensor t = reshape(tokens, {b, hp, wp, v, p, p});
  t = permute(t, {0, 3, 1, 4, 2, 5});  // (B, V, Hp, p, Wp, p)
  return reshape(t, {b, v, h, w});
}

PatchEmbedding PatchEmbedding::init(const ModelConfig& cfg, std::mt19937_64& rng) {
  const std::size_t c = cfg.embed_dim;
  PatchEmbedding e;
  e.w_patch = trunc_normal({cfg.patch_dim(), c}, 0.02, rng);
  e.b_patch = parameter({c}, 0.0);
  e.pos = trunc_normal({cfg.num_patches(), c}, 0.02, rng);
  e.w_lead = trunc_normal({c}, 0.02, rng);
  e.b_lead = parameter({c}, 0.0);
  return e;
}

Tensor PatchEmbedding::operator()(const Tensor& x, double lead_hours,
                                  const ModelConfig& cfg) const {
  if (!(lead_hours > 0.0)) throw ConfigError("lead time must be positive");
  Tensor tokens = linear(patchify(x, cfg.patch_size), w_patch, b_patch);
  tokens = add_trailing(tokens, pos);
  return add_trailing(tokens, add(scale(w_lead, lead_hours / 24.0), b_lead));
}

OdeTransformerBlock OdeTransformerBlock::init(const ModelConfig& cfg, std::mt19937_64& rng) {
  const std::size_t c = cfg.embed_dim, hidden = cfg.mlp_ratio * cfg.embed_dim;
  OdeTransformerBlock b;
  b.attn = attention::AttentionWeights::init(cfg.attention(), cfg.use_two_branch, rng);
  b.ln1_gain = parameter({c}, 1.0);
  b.ln1_bias = parameter({c}, 0.0);
  b.ln2_gain = parameter({c}, 1.0);
  b.ln2_bias = parameter({c}, 0.0);
  b.fc1_w = trunc_normal({c, hidden}, 0.02, rng);
  b.fc1_b = parameter({hidden}, 0.0);
  b.fc2_w = trunc_normal({hidden, c}, 0.02, rng);
  b.fc2_b = parameter({c}, 0.0);
  if (cfg.use_node) {
    b.attn_field = ode::VectorField::init(c, rng, true, cfg.time_dependent_field);
    b.mlp_field = ode::VectorField::init(c, rng, true, cfg.time_dependent_field);
  }
  return b;
}

Tensor block_forward(const Tensor& h, const OdeTransformerBlock& block, const ModelConfig& cfg,
                     const RunMode& mode, attention::AttentionTrace* trace) {
  const auto acfg = cfg.attention();
  Tensor a = cfg.use_two_branch
                 ? attention::two_branch_attention(h, block.attn, acfg, mode, trace)
                 : attention::single_branch_attention(h, block.attn, acfg, mode, trace);
  a = layer_norm(a, block.ln1_gain, block.ln1_bias);
  if (cfg.use_node) a = ode::ode_solve(block.attn_field, a, 0.0, 1.0, cfg.ode);
  Tensor x = add(h, a);

  Tensor m = relu(linear(x, block.fc1_w, block.fc1_b));
  m = linear(maybe_dropout(m, cfg.dropout, mode), block.fc2_w, block.fc2_b);
  m = layer_norm(m, block.ln2_gain, block.ln2_bias);
  if (cfg.use_node) m = ode::ode_solve(block.mlp_field, m, 0.0, 1.0, cfg.ode);
  return add(x, m);
}

Forecaster::Forecaster(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  embed_ = PatchEmbedding::init(cfg_, rng);
  for (std::size_t d = 0; d < cfg_.depth; ++d) blocks_.push_back(OdeTransformerBlock::init(cfg_, rng));
  norm_gain_ = parameter({cfg_.embed_dim}, 1.0);
  norm_bias_ = parameter({cfg_.embed_dim}, 0.0);
  head_w_ = trunc_normal({cfg_.embed_dim, cfg_.patch_dim()}, 0.02, rng);
  head_b_ = parameter({cfg_.patch_dim()}, 0.0);
}

Tensor Forecaster::forward(const Tensor& x, double lead_hours, const RunMode& mode) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg_.variables || s[2] != cfg_.height || s[3] != cfg_.width) {
    throw DimensionError("forecaster expects (B, " + std::to_string(cfg_.variables) + ", " +
                         std::to_string(cfg_.height) + ", " + std::to_string(cfg_.width) +
                         "), got " + shape_str(s));
  }
  Tensor h = embed_(x, lead_hours, cfg_);
  for (const auto& block : blocks_) h = block_forward(h, block, cfg_, mode);
  h = layer_norm(h, norm_gain_, norm_bias_);
  return unpatchify(linear(h, head_w_, head_b_), cfg_.variables, cfg_.height, cfg_.width,
                    cfg_.patch_size);
}

data::GridField Forecaster::forecast(const data::GridField& x, double lead_hours) const {
  GradTape::Pause no_grad;
  return x.with_values(forward(x.to_tensor(), lead_hours));
}

std::vector<NamedTensor> Forecaster::named_parameters() const {
  std::vector<NamedTensor> out{{"embed.w_patch", embed_.w_patch}, {"embed.b_patch", embed_.b_patch},
                               {"embed.pos", embed_.pos},         {"embed.w_lead", embed_.w_lead},
                               {"embed.b_lead", embed_.b_lead}};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.insert(out.end(), {{p + "attn.w_qkv", b.attn.w_qkv},
                           {p + "attn.b_qkv", b.attn.b_qkv},
                           {p + "attn.w_o", b.attn.w_o},
                           {p + "attn.b_o", b.attn.b_o},
                           {p + "ln1.gain", b.ln1_gain},
                           {p + "ln1.bias", b.ln1_bias},
                           {p + "ln2.gain", b.ln2_gain},
                           {p + "ln2.bias", b.ln2_bias},
                           {p + "mlp.fc1_w", b.fc1_w},
                           {p + "mlp.fc1_b", b.fc1_b},
                           {p + "mlp.fc2_w", b.fc2_w},
                           {p + "mlp.fc2_b", b.fc2_b}});
    if (cfg_.use_node) {
      for (const auto& [tag, field] : {std::pair{"attn_field.", &b.attn_field},
                                       std::pair{"mlp_field.", &b.mlp_field}}) {
        out.emplace_back(p + tag + "w1", field->w1);
        out.emplace_back(p + tag + "b1", field->b1);
        out.emplace_back(p + tag + "w2", field->w2);
        out.emplace_back(p + tag + "b2", field->b2);
        if (field->time_dependent) out.emplace_back(p + tag + "w_time", field->w_time);
      }
    }
  }
  out.insert(out.end(), {{"norm.gain", norm_gain_},
                         {"norm.bias", norm_bias_},
                         {"head.w", head_w_},
                         {"head.b", head_b_}});
  return out;
}

std::vector<Tensor> Forecaster::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Forecaster::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::size_t Forecaster::vector_field_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) {
    if (name.find("_field.") != std::string::npos) n += t.numel();
  }
  return n;
}

Forecaster Forecaster::clone() const {
  Forecaster copy(cfg_, 0);
  auto dst = copy.named_parameters();
  auto src = named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto out = dst[i].second.data_mut();
    const auto in = src[i].second.data();
    std::copy(in.begin(), in.end(), out.begin());
  }
  return copy;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::vanilla_vit: return "vanilla_vit";
    case Variant::two_branch: return "two_branch";
    case Variant::neural_ode: return "neural_ode";
    case Variant::full: return "full";
  }
  return "?";
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown ablation variant '" + name + "'");
}

VariantSpec ablation_variant(const ModelConfig& base, Variant v) {
  VariantSpec s{base, false};
  s.model.use_two_branch = v == Variant::two_branch || v == Variant::full;
  s.model.use_node = v == Variant::neural_ode || v == Variant::full;
  s.physics_loss = v == Variant::full;
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[] = "PINNCAST1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return v;
}

}  // namespace

void save_checkpoint(const Forecaster& model, const std::filesystem::path& path,
                     const std::string& extra_json) {
  nlohmann::json header;
  header["format"] = "PINNCAST1";
  header["config"] = to_json(model.config());
  header["extra"] = nlohmann::json::parse(extra_json);
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  const auto params = model.named_parameters();
  for (const auto& [name, t] : params) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.numel()}});
    offset += t.numel();
  }
  header["params"] = table;
  const std::string text = header.dump();

  std::string blob(kMagic, kMagicLen);
  put_u64(blob, text.size());
  blob += text;
  blob.reserve(blob.size() + offset * 4);
  for (const auto& [name, t] : params) {
    for (double v : t.data()) {
      const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Forecaster load_checkpoint(const std::filesystem::path& path, std::string* extra_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < kMagicLen + 8 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw FormatError("not a PINNCAST1 checkpoint: " + path.string());
  }
  const std::uint64_t header_len = get_u64(bytes.data() + kMagicLen);
  const std::size_t data_start = kMagicLen + 8 + header_len;
  if (data_start > bytes.size()) throw LengthError("checkpoint header truncated: " + path.string());

  nlohmann::json header;
  ModelConfig cfg;
  try {
    header = nlohmann::json::parse(bytes.begin() + kMagicLen + 8, bytes.begin() + static_cast<std::ptrdiff_t>(data_start));
    cfg = model_config_from_json(header.at("config"));
    if (extra_json) *extra_json = header.value("extra", nlohmann::json::object()).dump();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }

  Forecaster model(cfg, 0);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : model.named_parameters()) by_name.emplace(name, t);

  std::size_t total = 0;
  std::size_t loaded = 0;
  for (const auto& entry : header.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second.shape() != shape || count != shape_numel(shape)) {
      throw FormatError("checkpoint parameter '" + name + "' does not match the model config");
    }
    if (data_start + (offset + count) * 4 > bytes.size()) {
      throw LengthError("checkpoint payload truncated at parameter '" + name + "'");
    }
    auto dst = it->second.data_mut();
    const unsigned char* p = bytes.data() + data_start + offset * 4;
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[i * 4 + b]) << (8 * b);
      dst[i] = static_cast<double>(std::bit_cast<float>(u));
    }
    total += count;
    ++loaded;
  }
  if (loaded != by_name.size()) throw FormatError("checkpoint is missing parameters");
  if (data_start + total * 4 != bytes.size()) {
    throw LengthError("checkpoint payload size does not match its parameter table");
  }
  return model;
}

}  // namespace pinncast::model
