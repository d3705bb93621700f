#include "declab/decoder.hpp"

namespace declab {

std::map<std::string, std::string> decoder_config_to_kv(const DecoderConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["depth"] = std::to_string(cfg.depth);
  kv["model_dim"] = std::to_string(cfg.model_dim);
  kv["heads"] = std::to_string(cfg.heads);
  kv["mlp_dim"] = std::to_string(cfg.mlp_dim);
  kv["vocab_size"] = std::to_string(cfg.vocab_size);
  kv["max_len"] = std::to_string(cfg.max_len);
  kv["dropout_rate"] = std::to_string(cfg.dropout_rate);
  kv["enc_dim"] = std::to_string(cfg.enc_dim);
  kv["num_pos_tables"] = std::to_string(cfg.num_pos_tables);
  kv["tie_embeddings"] = cfg.tie_embeddings ? "true" : "false";
  return kv;
}

DecoderConfig decoder_config_from_kv(const std::map<std::string, std::string>& kv) {
  DecoderConfig cfg;
  auto need = [&kv](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("manifest missing '") + key + "'");
    return it->second;
  };
  cfg.depth = std::stoi(need("depth"));
  cfg.model_dim = std::stoi(need("model_dim"));
  cfg.heads = std::stoi(need("heads"));
  cfg.mlp_dim = std::stoi(need("mlp_dim"));
  cfg.vocab_size = std::stoi(need("vocab_size"));
  cfg.max_len = std::stoi(need("max_len"));
  cfg.dropout_rate = std::stod(need("dropout_rate"));
  cfg.enc_dim = std::stoi(need("enc_dim"));
  cfg.num_pos_tables = std::stoi(need("num_pos_tables"));
  cfg.tie_embeddings = need("tie_embeddings") == "true";
  cfg.validate();
  return cfg;
}

}  // namespace declab
