#include "nash/checkpoint.hpp"

#include <bit>
#include <fstream>

#include <json.hpp>

namespace nash::io {

static_assert(std::endian::native == std::endian::little,
              "weights.bin is little-endian; big-endian hosts are unsupported");

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kSchemaVersion = 1;

json model_config_json(const model::Seq2SeqModel& m) {
  const auto& c = m.config;
  json layers_enc = json::array();
  for (const auto& l : m.encoder)
    layers_enc.push_back({{"self_heads", l.self_attn.heads.size()},
                          {"self_enabled", l.self_attn.enabled},
                          {"d_ff", l.ffn.w1.defined() ? l.ffn.w1.dim(1) : 0},
                          {"ffn_enabled", l.ffn.enabled}});
  json layers_dec = json::array();
  for (const auto& l : m.decoder)
    layers_dec.push_back({{"self_heads", l.self_attn.heads.size()},
                          {"self_enabled", l.self_attn.enabled},
                          {"cross_heads", l.cross_attn.heads.size()},
                          {"cross_enabled", l.cross_attn.enabled},
                          {"d_ff", l.ffn.w1.defined() ? l.ffn.w1.dim(1) : 0},
                          {"ffn_enabled", l.ffn.enabled}});
  return json{{"schema_version", kSchemaVersion},
              {"model",
               {{"l_enc", c.l_enc},
                {"l_dec", c.l_dec},
                {"n_heads", c.n_heads},
                {"d_model", c.d_model},
                {"d_head", c.d_head},
                {"d_ff", c.d_ff},
                {"vocab_size", c.vocab_size},
                {"max_len", c.max_len},
                {"dropout_p", c.dropout_p},
                {"tie_embeddings", c.tie_embeddings}}},
              {"enc_layers", layers_enc},
              {"dec_layers", layers_dec}};
}

model::AttentionBlock empty_attention(int64_t n_heads, int64_t d, int64_t d_head,
                                      bool enabled) {
  model::AttentionBlock blk;
  for (int64_t j = 0; j < n_heads; ++j)
    blk.heads.push_back(model::HeadWeights{
        num::Tensor::zeros({d, d_head}, true), num::Tensor::zeros({d, d_head}, true),
        num::Tensor::zeros({d, d_head}, true), num::Tensor::zeros({d_head, d}, true)});
  blk.ln_gain = num::Tensor::zeros({d}, true);
  blk.ln_bias = num::Tensor::zeros({d}, true);
  blk.enabled = enabled;
  return blk;
}

model::FfnBlock empty_ffn(int64_t d, int64_t d_ff, bool enabled) {
  model::FfnBlock blk;
  blk.w1 = num::Tensor::zeros({d, std::max<int64_t>(d_ff, 1)}, true);
  blk.w2 = num::Tensor::zeros({std::max<int64_t>(d_ff, 1), d}, true);
  blk.ln_gain = num::Tensor::zeros({d}, true);
  blk.ln_bias = num::Tensor::zeros({d}, true);
  blk.enabled = enabled && d_ff > 0;
  return blk;
}

void require_schema(const json& j, const fs::path& p) {
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != kSchemaVersion)
    throw std::runtime_error("unsupported schema version in " + p.string());
}

}  // namespace

void save_checkpoint(const fs::path& dir, const model::Seq2SeqModel& m,
                     const gates::GateSet* gates) {
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "config.json");
    if (!f) throw std::runtime_error("cannot write " + (dir / "config.json").string());
    f << model_config_json(m).dump(2) << "\n";
  }
  {
    std::ofstream wf(dir / "weights.bin", std::ios::binary);
    json manifest{{"schema_version", kSchemaVersion}, {"dtype", "f64le"}};
    json tensors = json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : m.named_parameters()) {
      wf.write(reinterpret_cast<const char*>(t.values().data()),
               static_cast<std::streamsize>(t.values().size() * sizeof(double)));
      tensors.push_back({{"name", name}, {"offset_bytes", offset}, {"shape", t.shape()}});
      offset += t.numel() * static_cast<int64_t>(sizeof(double));
    }
    manifest["tensors"] = tensors;
    std::ofstream mf(dir / "manifest.json");
    mf << manifest.dump(2) << "\n";
  }
  if (gates) {
    const auto& dims = gates->dims();
    json structures = json::array();
    num::NoGradGuard ng;
    for (const auto& [name, alpha] : gates->named_alphas()) {
      num::Tensor z = num::hard_concrete_deterministic(alpha, gates->config().hc.l,
                                                       gates->config().hc.r);
      for (int64_t i = 0; i < alpha.numel(); ++i)
        structures.push_back({{"name", name + "." + std::to_string(i)},
                              {"alpha", alpha.values()[static_cast<size_t>(i)]},
                              {"deterministic_z", z.values()[static_cast<size_t>(i)]}});
    }
    json g{{"schema_version", kSchemaVersion},
           {"scope", gates->config().scope == gates::GateConfig::Scope::encoder ? "encoder"
                                                                                : "decoder"},
           {"width_gates", gates->config().width_gates},
           {"layer_gates", gates->config().layer_gates},
           {"l", gates->config().hc.l},
           {"r", gates->config().hc.r},
           {"dims",
            {{"layers", dims.layers},
             {"n_heads", dims.n_heads},
             {"d_ff", dims.d_ff},
             {"d_model", dims.d_model},
             {"d_head", dims.d_head},
             {"has_cross", dims.has_cross}}},
           {"structures", structures}};
    std::ofstream f(dir / "gates.json");
    f << g.dump(2) << "\n";
  }
}

model::Seq2SeqModel load_checkpoint(const fs::path& dir) {
  json cfg_j;
  {
    std::ifstream f(dir / "config.json");
    if (!f) throw std::runtime_error("cannot read " + (dir / "config.json").string());
    f >> cfg_j;
  }
  require_schema(cfg_j, dir / "config.json");
  const json& mj = cfg_j["model"];
  model::ModelConfig cfg;
  cfg.l_enc = mj["l_enc"];
  cfg.l_dec = mj["l_dec"];
  cfg.n_heads = mj["n_heads"];
  cfg.d_model = mj["d_model"];
  cfg.d_head = mj["d_head"];
  cfg.d_ff = mj["d_ff"];
  cfg.vocab_size = mj["vocab_size"];
  cfg.max_len = mj["max_len"];
  cfg.dropout_p = mj["dropout_p"];
  cfg.tie_embeddings = mj["tie_embeddings"];

  model::Seq2SeqModel m;
  m.config = cfg;
  m.tok_embed = num::Tensor::zeros({cfg.vocab_size, cfg.d_model}, true);
  m.pos_embed = num::Tensor::zeros({cfg.max_len, cfg.d_model}, true);
  for (const json& lj : cfg_j["enc_layers"]) {
    model::EncoderLayer l;
    l.self_attn = empty_attention(lj["self_heads"], cfg.d_model, cfg.d_head,
                                  lj["self_enabled"]);
    l.ffn = empty_ffn(cfg.d_model, lj["d_ff"], lj["ffn_enabled"]);
    m.encoder.push_back(std::move(l));
  }
  for (const json& lj : cfg_j["dec_layers"]) {
    model::DecoderLayer l;
    l.self_attn = empty_attention(lj["self_heads"], cfg.d_model, cfg.d_head,
                                  lj["self_enabled"]);
    l.cross_attn = empty_attention(lj["cross_heads"], cfg.d_model, cfg.d_head,
                                   lj["cross_enabled"]);
    l.ffn = empty_ffn(cfg.d_model, lj["d_ff"], lj["ffn_enabled"]);
    m.decoder.push_back(std::move(l));
  }
  m.enc_final_ln_gain = num::Tensor::zeros({cfg.d_model}, true);
  m.enc_final_ln_bias = num::Tensor::zeros({cfg.d_model}, true);
  m.dec_final_ln_gain = num::Tensor::zeros({cfg.d_model}, true);
  m.dec_final_ln_bias = num::Tensor::zeros({cfg.d_model}, true);
  if (!cfg.tie_embeddings)
    m.out_proj = num::Tensor::zeros({cfg.vocab_size, cfg.d_model}, true);

  json manifest;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
    f >> manifest;
  }
  require_schema(manifest, dir / "manifest.json");
  std::ifstream wf(dir / "weights.bin", std::ios::binary);
  if (!wf) throw std::runtime_error("cannot read " + (dir / "weights.bin").string());

  std::map<std::string, num::Tensor> by_name;
  for (auto& [name, t] : m.named_parameters()) by_name.emplace(name, t);
  for (const json& tj : manifest["tensors"]) {
    const std::string name = tj["name"];
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("manifest tensor has no home: " + name);
    num::Shape shape = tj["shape"].get<num::Shape>();
    if (shape != it->second.shape())
      throw std::runtime_error("manifest shape mismatch for " + name);
    wf.seekg(tj["offset_bytes"].get<int64_t>());
    wf.read(reinterpret_cast<char*>(it->second.values().data()),
            static_cast<std::streamsize>(it->second.values().size() * sizeof(double)));
    if (!wf) throw std::runtime_error("weights.bin truncated at " + name);
  }
  return m;
}

std::optional<gates::GateSet> load_gates(const fs::path& dir) {
  if (!fs::exists(dir / "gates.json")) return std::nullopt;
  json j;
  {
    std::ifstream f(dir / "gates.json");
    f >> j;
  }
  require_schema(j, dir / "gates.json");
  gates::GateConfig cfg;
  cfg.scope = j["scope"] == "encoder" ? gates::GateConfig::Scope::encoder
                                      : gates::GateConfig::Scope::decoder;
  cfg.width_gates = j["width_gates"];
  cfg.layer_gates = j["layer_gates"];
  cfg.hc.l = j["l"];
  cfg.hc.r = j["r"];
  gates::GateDims dims;
  dims.layers = j["dims"]["layers"];
  dims.n_heads = j["dims"]["n_heads"];
  dims.d_ff = j["dims"]["d_ff"];
  dims.d_model = j["dims"]["d_model"];
  dims.d_head = j["dims"]["d_head"];
  dims.has_cross = j["dims"]["has_cross"];
  gates::GateSet gs = gates::GateSet::make(cfg, dims);

  std::map<std::string, num::Tensor> by_name;
  for (const auto& [name, t] : gs.named_alphas()) by_name.emplace(name, t);
  for (const json& sj : j["structures"]) {
    std::string full = sj["name"];
    auto dot = full.rfind('.');
    std::string base = full.substr(0, dot);
    size_t idx = std::stoul(full.substr(dot + 1));
    auto it = by_name.find(base);
    if (it == by_name.end()) throw std::runtime_error("gates.json structure has no home: " + full);
    it->second.values().at(idx) = sj["alpha"].get<double>();
  }
  return gs;
}

bool checkpoint_exists(const fs::path& dir) {
  return fs::exists(dir / "config.json") && fs::exists(dir / "weights.bin") &&
         fs::exists(dir / "manifest.json");
}

}  // namespace nash::io
