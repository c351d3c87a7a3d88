#include "ctxfuse/experiment.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "ctxfuse/rng.hpp"
#include "ctxfuse/serialize.hpp"

namespace ctxfuse {

namespace fs = std::filesystem;

namespace {

bool quiet_logging() {
  const char* v = std::getenv("CTXFUSE_LOG");
  return v != nullptr && std::string(v) == "quiet";
}

void log_info(const std::string& msg) {
  if (!quiet_logging()) std::cerr << "[ctxfuse] " << msg << '\n';
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

std::string path_join(const std::string& a, const std::string& b) {
  return (fs::path(a) / b).string();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

using Metrics = std::vector<std::pair<std::string, std::string>>;

void emit_metrics(const Metrics& m, const std::string& out_dir) {
  std::ostringstream os;
  for (const auto& [k, v] : m) os << k << '=' << v << '\n';
  write_text_file(path_join(out_dir, "metrics.txt"), os.str());
  std::cout << os.str();
}

// translate config-value problems into usage errors (exit code 1)
template <typename F>
auto config_section(const char* what, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(what) + " config: " + e.what());
  }
}

ParallelCorpus read_split(const std::string& dir, const std::string& split) {
  ParallelCorpus cp;
  cp.src = read_lines(path_join(dir, split + ".src"));
  cp.tgt = read_lines(path_join(dir, split + ".tgt"));
  const std::string prev_path = path_join(dir, split + ".prev");
  if (fs::exists(prev_path)) cp.prev = read_lines(prev_path);
  if (cp.tgt.size() != cp.src.size() || (!cp.prev.empty() && cp.prev.size() != cp.src.size()))
    throw std::runtime_error("corpus size mismatch under " + dir + " for split " + split);
  if (cp.src.empty()) throw std::runtime_error("empty corpus split: " + split);
  return cp;
}

void write_split(const std::string& dir, const std::string& split, const ParallelCorpus& cp) {
  write_lines(path_join(dir, split + ".src"), cp.src);
  write_lines(path_join(dir, split + ".tgt"), cp.tgt);
  if (cp.has_context()) write_lines(path_join(dir, split + ".prev"), cp.prev);
}

std::vector<std::string> provider_corpus(const ParallelCorpus& train) {
  std::vector<std::string> lines = train.src;
  lines.insert(lines.end(), train.prev.begin(), train.prev.end());
  return lines;
}

TrainResult run_training(FusedModel& model, const Provider* provider, const ParallelCorpus& tr,
                         const ParallelCorpus& va, const Vocab& vs, const Vocab& vt,
                         const TrainConfig& tc, const std::string& out_dir) {
  ensure_dir(out_dir);
  Trainer trainer(model, provider, tr, va, vs, vt, tc);
  TrainRunLog log;
  const TrainResult res = trainer.run(log);
  log.write_csv(path_join(out_dir, "log.csv"));
  trainer.save_checkpoint(path_join(out_dir, "checkpoint.bin"));
  Metrics m{{"final_step", std::to_string(res.final_step)},
            {"last_train_loss", fmt(res.last_train_loss)},
            {"best_val_loss", fmt(res.best_val_loss)},
            {"last_val_loss", fmt(res.last_val_loss)},
            {"last_val_bleu", fmt(res.last_val_bleu)},
            {"last_val_seq_acc", fmt(res.last_val_seq_acc)},
            {"early_stopped", res.early_stopped ? "true" : "false"}};
  std::ostringstream os;
  for (const auto& [k, v] : m) os << k << '=' << v << '\n';
  write_text_file(path_join(out_dir, "metrics.txt"), os.str());
  return res;
}

Provider pretrain_provider_on(const std::vector<std::string>& lines, const Config& cfg,
                              std::uint64_t seed, double* accuracy_out) {
  const PieceTokenizer tok = PieceTokenizer::char_level(lines);
  Provider provider(provider_config_from(cfg), tok, seed);
  const double acc = provider.pretrain(lines, mlm_config_from(cfg), seed);
  provider.freeze();
  if (accuracy_out != nullptr) *accuracy_out = acc;
  return provider;
}

// ---- subcommands -----------------------------------------------------------

int cmd_gen_data(const Config& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const TaskSpec spec = task_spec_from(cfg, seed);
  log_info("generating " + to_string(spec.task) + " corpora");
  const GeneratedData gd = generate(spec);
  write_split(out_dir, "train", gd.train);
  write_split(out_dir, "valid", gd.valid);
  write_split(out_dir, "test", gd.test);
  write_lines(path_join(out_dir, "lexicon.txt"), gd.pool);
  Metrics m{{"task", to_string(spec.task)},
            {"train_n", std::to_string(gd.train.size())},
            {"valid_n", std::to_string(gd.valid.size())},
            {"test_n", std::to_string(gd.test.size())},
            {"lexicon_words", std::to_string(gd.pool.size())},
            {"has_context", gd.train.has_context() ? "true" : "false"}};
  emit_metrics(m, out_dir);
  return 0;
}

int cmd_pretrain_provider(const Config& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const std::string data_dir = cfg.require_str("data.dir");
  const ParallelCorpus train = read_split(data_dir, "train");
  const auto lines = provider_corpus(train);
  log_info("pretraining provider on " + std::to_string(lines.size()) + " lines");
  double acc = 0.0;
  Provider provider = pretrain_provider_on(lines, cfg, seed, &acc);
  provider.save(path_join(out_dir, "provider.bin"));
  Metrics m{{"mlm_accuracy", fmt(acc)},
            {"pieces", std::to_string(provider.tokenizer().vocab_size())},
            {"lines", std::to_string(lines.size())}};
  emit_metrics(m, out_dir);
  return 0;
}

int cmd_train(const Config& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const std::string data_dir = cfg.require_str("data.dir");
  const std::string stage = cfg.get_str("train.stage", "joint");
  if (stage != "stage1" && stage != "stage2" && stage != "joint")
    throw ConfigError("train.stage must be stage1, stage2 or joint (got '" + stage + "')");

  const ParallelCorpus train = read_split(data_dir, "train");
  const ParallelCorpus valid = read_split(data_dir, "valid");
  const Vocab vsrc = Vocab::from_corpus(train.src);
  const Vocab vtgt = Vocab::from_corpus(train.tgt);
  TrainConfig tc = train_config_from(cfg, seed);

  TrainResult res;
  if (stage == "stage1") {
    if (cfg.has("train.stage1_max_steps"))
      tc.max_steps = cfg.get_u64("train.stage1_max_steps", tc.max_steps);
    ModelConfig mc =
        model_config_from(cfg, vsrc.size(), vtgt.size(), cfg.get_size("provider.d_model", 32));
    mc.variant = Variant::no_provider_baseline;
    FusedModel model(mc, seed);
    log_info("stage 1: training the plain baseline");
    res = run_training(model, nullptr, train, valid, vsrc, vtgt, tc, out_dir);
  } else if (stage == "stage2") {
    Provider provider = Provider::load(cfg.require_str("provider.path"));
    const std::string ckpt = cfg.require_str("train.stage1_checkpoint");

    ModelConfig base_mc = model_config_from(cfg, vsrc.size(), vtgt.size(), provider.d_model());
    base_mc.variant = Variant::no_provider_baseline;
    FusedModel base(base_mc, seed);
    load_model_checkpoint(ckpt, base);
    if (cfg.get_bool("train.continue_schedule", false))
      tc.lr_step_offset = read_archive(ckpt).scalars.at("train.step");

    ModelConfig mc = model_config_from(cfg, vsrc.size(), vtgt.size(), provider.d_model());
    if (mc.variant == Variant::no_provider_baseline)
      throw ConfigError("stage 2 trains a provider-fused variant; set model.variant");
    FusedModel model(mc, seed);
    const auto copied = warm_start_copy(base.named_params(), model);
    log_info("stage 2: warm start copied " + std::to_string(copied.size()) + " tensors");
    res = run_training(model, needs_provider(mc) ? &provider : nullptr, train, valid, vsrc, vtgt,
                       tc, out_dir);
  } else {  // joint: fresh initialization of the configured variant
    std::optional<Provider> provider;
    std::size_t d_provider = cfg.get_size("provider.d_model", 32);
    ModelConfig mc = model_config_from(cfg, vsrc.size(), vtgt.size(), d_provider);
    if (needs_provider(mc)) {
      provider.emplace(Provider::load(cfg.require_str("provider.path")));
      mc = model_config_from(cfg, vsrc.size(), vtgt.size(), provider->d_model());
    }
    FusedModel model(mc, seed);
    log_info("joint: training " + to_string(mc.variant) + " from random initialization");
    res = run_training(model, provider ? &*provider : nullptr, train, valid, vsrc, vtgt, tc,
                       out_dir);
  }

  Metrics m{{"stage", stage},
            {"final_step", std::to_string(res.final_step)},
            {"best_val_loss", fmt(res.best_val_loss)},
            {"last_val_loss", fmt(res.last_val_loss)},
            {"last_val_bleu", fmt(res.last_val_bleu)},
            {"last_val_seq_acc", fmt(res.last_val_seq_acc)},
            {"early_stopped", res.early_stopped ? "true" : "false"}};
  emit_metrics(m, out_dir);
  return 0;
}

int cmd_decode(const Config& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const std::string data_dir = cfg.require_str("data.dir");
  const std::string split = cfg.get_str("decode.split", "test");
  const ParallelCorpus train = read_split(data_dir, "train");
  const ParallelCorpus corpus = read_split(data_dir, split);
  const Vocab vsrc = Vocab::from_corpus(train.src);
  const Vocab vtgt = Vocab::from_corpus(train.tgt);

  std::optional<Provider> provider;
  std::size_t d_provider = cfg.get_size("provider.d_model", 32);
  ModelConfig mc = model_config_from(cfg, vsrc.size(), vtgt.size(), d_provider);
  if (needs_provider(mc)) {
    provider.emplace(Provider::load(cfg.require_str("provider.path")));
    mc = model_config_from(cfg, vsrc.size(), vtgt.size(), provider->d_model());
  }
  FusedModel model(mc, seed);
  load_model_checkpoint(cfg.require_str("decode.checkpoint"), model);

  const DecodeConfig dc = decode_config_from(cfg);
  log_info("decoding " + std::to_string(corpus.size()) + " sentences from " + split);
  const auto hyps = translate_corpus(model, provider ? &*provider : nullptr, corpus.src,
                                     corpus.prev, vsrc, vtgt, dc);
  write_lines(path_join(out_dir, "hyps.txt"), hyps);

  Metrics m{{"split", split},
            {"bleu", fmt(corpus_bleu(hyps, corpus.tgt))},
            {"seq_acc", fmt(sequence_accuracy(hyps, corpus.tgt))},
            {"beam", std::to_string(dc.beam)},
            {"alpha", fmt(dc.alpha)},
            {"max_len", std::to_string(dc.max_len)}};
  if (corpus.has_context()) {
    try {
      m.emplace_back("amb_acc", fmt(ambiguous_position_accuracy(corpus.src, corpus.tgt, hyps)));
    } catch (const std::invalid_argument&) {
      // corpus carries context but no source/reference divergence to score
    }
  }
  emit_metrics(m, out_dir);
  return 0;
}

int cmd_score(const Config& cfg, const std::string& out_dir) {
  const auto hyps = read_lines(cfg.require_str("score.hyps"));
  const auto refs = read_lines(cfg.require_str("score.refs"));
  Metrics m{{"bleu", fmt(corpus_bleu(hyps, refs))},
            {"seq_acc", fmt(sequence_accuracy(hyps, refs))}};
  if (cfg.has("score.src")) {
    const auto src = read_lines(cfg.require_str("score.src"));
    m.emplace_back("amb_acc", fmt(ambiguous_position_accuracy(src, refs, hyps)));
  }
  emit_metrics(m, out_dir);
  return 0;
}

struct PreparedPipeline {
  GeneratedData gd;
  Vocab vsrc;
  Vocab vtgt;
  Provider provider;
  double mlm_accuracy = 0.0;
};

PreparedPipeline prepare_pipeline(const Config& cfg, std::uint64_t seed) {
  const TaskSpec spec = task_spec_from(cfg, seed);
  log_info("generating " + to_string(spec.task) + " corpora in memory");
  GeneratedData gd = generate(spec);
  Vocab vsrc = Vocab::from_corpus(gd.train.src);
  Vocab vtgt = Vocab::from_corpus(gd.train.tgt);
  double acc = 0.0;
  log_info("pretraining provider");
  Provider provider = pretrain_provider_on(provider_corpus(gd.train), cfg, seed, &acc);
  return PreparedPipeline{std::move(gd), std::move(vsrc), std::move(vtgt), std::move(provider),
                          acc};
}

int cmd_ablate(const Config& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  PreparedPipeline pp = prepare_pipeline(cfg, seed);
  const std::size_t d_provider = pp.provider.d_model();
  TrainConfig tc = train_config_from(cfg, seed);
  TrainConfig tc1 = tc;
  if (cfg.has("train.stage1_max_steps"))
    tc1.max_steps = cfg.get_u64("train.stage1_max_steps", tc.max_steps);

  // stage 1 doubles as the no_provider_baseline row
  ModelConfig base_mc = model_config_from(cfg, pp.vsrc.size(), pp.vtgt.size(), d_provider);
  base_mc.variant = Variant::no_provider_baseline;
  FusedModel base(base_mc, seed);
  log_info("ablate: stage 1 baseline");
  const TrainResult base_res = run_training(base, nullptr, pp.gd.train, pp.gd.valid, pp.vsrc,
                                            pp.vtgt, tc1, path_join(out_dir, "no_provider_baseline"));

  struct Row {
    std::string name;
    Variant variant;
    bool warm_start;
    TrainResult res;
  };
  std::vector<Row> rows{{"full", Variant::full, true, {}},
                        {"random_init", Variant::full, false, {}},
                        {"linear_feed", Variant::linear_feed, true, {}},
                        {"drop_enc_attnB", Variant::drop_enc_attnB, true, {}},
                        {"drop_dec_attnB", Variant::drop_dec_attnB, true, {}},
                        {"embedding_feed", Variant::embedding_feed, true, {}},
                        {"stacked_decoder", Variant::stacked_decoder, true, {}}};

  for (auto& row : rows) {
    ModelConfig mc = model_config_from(cfg, pp.vsrc.size(), pp.vtgt.size(), d_provider);
    mc.variant = row.variant;
    FusedModel model(mc, seed);
    if (row.warm_start) warm_start_copy(base.named_params(), model);
    log_info("ablate: " + row.name);
    row.res = run_training(model, needs_provider(mc) ? &pp.provider : nullptr, pp.gd.train,
                           pp.gd.valid, pp.vsrc, pp.vtgt, tc, path_join(out_dir, row.name));
  }

  std::ostringstream sum;
  sum << "variant,val_loss,val_bleu,val_seq_acc\n";
  for (const auto& row : rows)
    sum << row.name << ',' << fmt(row.res.last_val_loss) << ',' << fmt(row.res.last_val_bleu)
        << ',' << fmt(row.res.last_val_seq_acc) << '\n';
  sum << "no_provider_baseline," << fmt(base_res.last_val_loss) << ','
      << fmt(base_res.last_val_bleu) << ',' << fmt(base_res.last_val_seq_acc) << '\n';
  write_text_file(path_join(out_dir, "summary.csv"), sum.str());

  Metrics m{{"rows", std::to_string(rows.size() + 1)}, {"mlm_accuracy", fmt(pp.mlm_accuracy)}};
  emit_metrics(m, out_dir);
  return 0;
}

int cmd_dropnet_sweep(const Config& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  PreparedPipeline pp = prepare_pipeline(cfg, seed);
  const std::size_t d_provider = pp.provider.d_model();
  TrainConfig tc = train_config_from(cfg, seed);
  TrainConfig tc1 = tc;
  if (cfg.has("train.stage1_max_steps"))
    tc1.max_steps = cfg.get_u64("train.stage1_max_steps", tc.max_steps);

  ModelConfig base_mc = model_config_from(cfg, pp.vsrc.size(), pp.vtgt.size(), d_provider);
  base_mc.variant = Variant::no_provider_baseline;
  FusedModel base(base_mc, seed);
  log_info("sweep: shared stage 1 baseline");
  run_training(base, nullptr, pp.gd.train, pp.gd.valid, pp.vsrc, pp.vtgt, tc1,
               path_join(out_dir, "stage1"));

  const std::vector<std::string> p_values{"0.0", "0.2", "0.4", "0.6", "0.8", "1.0"};
  std::ostringstream merged;
  merged << "p_net,step,metric,value\n";
  for (const auto& ps : p_values) {
    ModelConfig mc = model_config_from(cfg, pp.vsrc.size(), pp.vtgt.size(), d_provider);
    if (mc.variant == Variant::no_provider_baseline)
      throw ConfigError("dropnet-sweep trains a provider-fused variant; set model.variant");
    mc.p_net = std::stod(ps);
    FusedModel model(mc, seed);
    warm_start_copy(base.named_params(), model);
    const std::string run_dir = path_join(out_dir, "pnet_" + ps);
    ensure_dir(run_dir);
    log_info("sweep: p_net=" + ps);
    Trainer trainer(model, needs_provider(mc) ? &pp.provider : nullptr, pp.gd.train, pp.gd.valid,
                    pp.vsrc, pp.vtgt, tc);
    TrainRunLog log;
    trainer.run(log);
    log.write_csv(path_join(run_dir, "log.csv"));
    trainer.save_checkpoint(path_join(run_dir, "checkpoint.bin"));
    for (const auto& r : log.rows()) {
      std::ostringstream v;
      v.precision(17);
      v << r.value;
      merged << ps << ',' << r.step << ',' << r.split << '_' << r.metric << ',' << v.str()
             << '\n';
    }
  }
  write_text_file(path_join(out_dir, "sweep.csv"), merged.str());
  Metrics m{{"runs", std::to_string(p_values.size())}, {"mlm_accuracy", fmt(pp.mlm_accuracy)}};
  emit_metrics(m, out_dir);
  return 0;
}

int cmd_bench_inference(const Config& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const TaskSpec spec = task_spec_from(cfg, seed);
  GeneratedData gd = generate(spec);
  const Vocab vsrc = Vocab::from_corpus(gd.train.src);
  const Vocab vtgt = Vocab::from_corpus(gd.train.tgt);

  const std::size_t n = std::min(cfg.get_size("bench.sentences", 20), gd.test.size());
  std::vector<std::string> src(gd.test.src.begin(), gd.test.src.begin() + static_cast<long>(n));
  std::vector<std::string> prev;
  if (gd.test.has_context())
    prev.assign(gd.test.prev.begin(), gd.test.prev.begin() + static_cast<long>(n));

  // timing compares architectures, so the provider is frozen untrained
  const PieceTokenizer tok = PieceTokenizer::char_level(provider_corpus(gd.train));
  Provider provider(provider_config_from(cfg), tok, seed);
  provider.freeze();

  ModelConfig base_mc = model_config_from(cfg, vsrc.size(), vtgt.size(), provider.d_model());
  base_mc.variant = Variant::no_provider_baseline;
  FusedModel baseline(base_mc, seed);
  ModelConfig fused_mc = model_config_from(cfg, vsrc.size(), vtgt.size(), provider.d_model());
  if (fused_mc.variant == Variant::no_provider_baseline)
    throw ConfigError("bench-inference compares against a provider-fused variant; set model.variant");
  FusedModel fused(fused_mc, seed);

  const DecodeConfig dc = decode_config_from(cfg);
  const std::size_t reps = cfg.get_size("bench.repetitions", 3);
  log_info("benchmarking inference on " + std::to_string(n) + " sentences");
  const TimingReport tr =
      timing_harness(baseline, nullptr, fused, needs_provider(fused_mc) ? &provider : nullptr,
                     src, prev, vsrc, vtgt, dc, reps);

  std::ostringstream csv;
  csv << "baseline_seconds,fused_seconds,ratio\n"
      << fmt(tr.baseline_seconds) << ',' << fmt(tr.fused_seconds) << ',' << fmt(tr.ratio) << '\n';
  write_text_file(path_join(out_dir, "timing.csv"), csv.str());

  Metrics m{{"baseline_seconds", fmt(tr.baseline_seconds)},
            {"fused_seconds", fmt(tr.fused_seconds)},
            {"ratio", fmt(tr.ratio)},
            {"sentences", std::to_string(n)},
            {"repetitions", std::to_string(reps)},
            {"beam", std::to_string(dc.beam)}};
  emit_metrics(m, out_dir);
  return 0;
}

}  // namespace

const std::set<std::string>& config_schema() {
  static const std::set<std::string> schema{
      "seed",
      "data.dir",
      "task.name",
      "task.vocab_words",
      "task.min_len",
      "task.max_len",
      "task.train_n",
      "task.valid_n",
      "task.test_n",
      "provider.layers",
      "provider.d_model",
      "provider.d_ff",
      "provider.heads",
      "provider.steps",
      "provider.batch",
      "provider.lr",
      "provider.mask_rate",
      "provider.holdout",
      "provider.path",
      "model.layers",
      "model.d_model",
      "model.d_ff",
      "model.heads",
      "model.p_net",
      "model.variant",
      "model.attention_scaling",
      "model.dropout",
      "model.tie_output",
      "model.linear_feed_literal",
      "model.dropnet_shared_draws",
      "train.max_steps",
      "train.batch_tokens",
      "train.accum_steps",
      "train.label_smoothing",
      "train.warmup_init",
      "train.peak_lr",
      "train.warmup_steps",
      "train.beta1",
      "train.beta2",
      "train.adam_eps",
      "train.weight_decay",
      "train.eval_every",
      "train.patience",
      "train.val_decode_limit",
      "train.val_max_len",
      "train.stage",
      "train.stage1_checkpoint",
      "train.stage1_max_steps",
      "train.continue_schedule",
      "decode.beam",
      "decode.alpha",
      "decode.max_len",
      "decode.checkpoint",
      "decode.split",
      "score.hyps",
      "score.refs",
      "score.src",
      "bench.sentences",
      "bench.repetitions",
  };
  return schema;
}

TaskSpec task_spec_from(const Config& cfg, std::uint64_t seed) {
  return config_section("task", [&] {
    TaskSpec spec;
    spec.task = task_from_string(cfg.get_str("task.name", "copy"));
    spec.vocab_words = cfg.get_size("task.vocab_words", 64);
    spec.min_len = cfg.get_size("task.min_len", 3);
    spec.max_len = cfg.get_size("task.max_len", 12);
    spec.train_n = cfg.get_size("task.train_n", 10000);
    spec.valid_n = cfg.get_size("task.valid_n", 1000);
    spec.test_n = cfg.get_size("task.test_n", 1000);
    spec.seed = derive_seed(seed, "data");
    spec.validate();
    return spec;
  });
}

ProviderConfig provider_config_from(const Config& cfg) {
  return config_section("provider", [&] {
    ProviderConfig pc;
    pc.layers = cfg.get_size("provider.layers", 4);
    pc.d_model = cfg.get_size("provider.d_model", 32);
    pc.d_ff = cfg.get_size("provider.d_ff", 64);
    pc.heads = cfg.get_size("provider.heads", 4);
    return pc;
  });
}

MlmPretrainConfig mlm_config_from(const Config& cfg) {
  return config_section("provider", [&] {
    MlmPretrainConfig mc;
    mc.steps = cfg.get_u64("provider.steps", 400);
    mc.batch_sentences = cfg.get_size("provider.batch", 8);
    mc.lr = cfg.get_double("provider.lr", 1e-3);
    mc.mask_rate = cfg.get_double("provider.mask_rate", 0.15);
    mc.holdout_fraction = cfg.get_double("provider.holdout", 0.1);
    return mc;
  });
}

ModelConfig model_config_from(const Config& cfg, std::size_t src_vocab, std::size_t tgt_vocab,
                              std::size_t d_provider) {
  return config_section("model", [&] {
    ModelConfig mc;
    mc.layers = cfg.get_size("model.layers", 2);
    mc.d_model = cfg.get_size("model.d_model", 32);
    mc.d_ff = cfg.get_size("model.d_ff", 64);
    mc.heads = cfg.get_size("model.heads", 4);
    mc.src_vocab = src_vocab;
    mc.tgt_vocab = tgt_vocab;
    mc.d_provider = d_provider;
    mc.p_net = cfg.get_double("model.p_net", 1.0);
    mc.variant = variant_from_string(cfg.get_str("model.variant", "full"));
    mc.attention_scaling = cfg.get_bool("model.attention_scaling", true);
    mc.dropout = cfg.get_double("model.dropout", 0.3);
    mc.tie_output = cfg.get_bool("model.tie_output", false);
    mc.linear_feed_literal = cfg.get_bool("model.linear_feed_literal", false);
    mc.dropnet_shared_draws = cfg.get_bool("model.dropnet_shared_draws", false);
    mc.validate();
    return mc;
  });
}

TrainConfig train_config_from(const Config& cfg, std::uint64_t seed) {
  return config_section("train", [&] {
    TrainConfig tc;
    tc.max_steps = cfg.get_u64("train.max_steps", 2000);
    tc.batch_tokens = cfg.get_size("train.batch_tokens", 256);
    tc.accum_steps = cfg.get_size("train.accum_steps", 1);
    tc.label_smoothing = cfg.get_double("train.label_smoothing", 0.1);
    tc.schedule.warmup_init = cfg.get_double("train.warmup_init", 1e-7);
    tc.schedule.peak = cfg.get_double("train.peak_lr", 5e-4);
    tc.schedule.warmup_steps = cfg.get_u64("train.warmup_steps", 4000);
    tc.adam.beta1 = cfg.get_double("train.beta1", 0.9);
    tc.adam.beta2 = cfg.get_double("train.beta2", 0.98);
    tc.adam.eps = cfg.get_double("train.adam_eps", 1e-8);
    tc.adam.weight_decay = cfg.get_double("train.weight_decay", 1e-4);
    tc.eval_every = cfg.get_u64("train.eval_every", 100);
    tc.patience = cfg.get_size("train.patience", 5);
    tc.val_decode_limit = cfg.get_size("train.val_decode_limit", 200);
    tc.val_max_len = cfg.get_size("train.val_max_len", 32);
    tc.seed = seed;
    tc.validate();
    return tc;
  });
}

DecodeConfig decode_config_from(const Config& cfg) {
  return config_section("decode", [&] {
    DecodeConfig dc;
    dc.beam = cfg.get_size("decode.beam", 5);
    dc.alpha = cfg.get_double("decode.alpha", 1.0);
    dc.max_len = cfg.get_size("decode.max_len", 32);
    dc.validate();
    return dc;
  });
}

void load_model_checkpoint(const std::string& path, FusedModel& model) {
  const Archive a = read_archive(path);
  const std::string want = config_fingerprint(model.config());
  auto it = a.texts.find("config.model");
  if (it == a.texts.end()) throw std::runtime_error("checkpoint missing config.model: " + path);
  if (it->second != want)
    throw std::runtime_error("checkpoint model config mismatch:\n  stored:  " + it->second +
                             "\n  current: " + want);
  NamedParams params = model.named_params();
  unpack_params(a, params, "param.");
}

int run_subcommand(const std::string& name, Config cfg, const std::string& out_dir) {
  cfg.check_known(config_schema());
  if (!cfg.has("seed")) cfg.set("seed", "1");
  ensure_dir(out_dir);
  write_text_file(path_join(out_dir, "config.txt"), cfg.render());

  if (name == "gen-data") return cmd_gen_data(cfg, out_dir);
  if (name == "pretrain-provider") return cmd_pretrain_provider(cfg, out_dir);
  if (name == "train") return cmd_train(cfg, out_dir);
  if (name == "decode") return cmd_decode(cfg, out_dir);
  if (name == "score") return cmd_score(cfg, out_dir);
  if (name == "ablate") return cmd_ablate(cfg, out_dir);
  if (name == "dropnet-sweep") return cmd_dropnet_sweep(cfg, out_dir);
  if (name == "bench-inference") return cmd_bench_inference(cfg, out_dir);
  throw ConfigError("unknown subcommand: " + name);
}

}  // namespace ctxfuse
