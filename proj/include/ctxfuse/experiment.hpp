#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "ctxfuse/config.hpp"
#include "ctxfuse/data.hpp"
#include "ctxfuse/decode.hpp"
#include "ctxfuse/model.hpp"
#include "ctxfuse/provider.hpp"
#include "ctxfuse/train.hpp"

namespace ctxfuse {

// Every key any subcommand understands; keys outside this set are refused.
const std::set<std::string>& config_schema();

// config -> typed settings (validating values as they are read)
TaskSpec task_spec_from(const Config& cfg, std::uint64_t seed);
ProviderConfig provider_config_from(const Config& cfg);
MlmPretrainConfig mlm_config_from(const Config& cfg);
ModelConfig model_config_from(const Config& cfg, std::size_t src_vocab, std::size_t tgt_vocab,
                              std::size_t d_provider);
TrainConfig train_config_from(const Config& cfg, std::uint64_t seed);
DecodeConfig decode_config_from(const Config& cfg);

// loads "param." sections into the model, refusing checkpoints whose stored
// model fingerprint differs from the model's own
void load_model_checkpoint(const std::string& path, FusedModel& model);

// Dispatches one subcommand: gen-data, pretrain-provider, train, decode,
// score, ablate, dropnet-sweep, bench-inference. Writes the resolved config
// snapshot plus the subcommand's artifacts into out_dir. Returns 0;
// problems are reported by throwing (ConfigError for usage/config issues).
int run_subcommand(const std::string& name, Config cfg, const std::string& out_dir);

}  // namespace ctxfuse
