#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "compbind/contrib/contrib.hpp"
#include "compbind/correct/projection.hpp"
#include "compbind/diffusion/sampler.hpp"
#include "compbind/encoder/pretrain.hpp"
#include "compbind/errors.hpp"
#include "compbind/evalkit/experiments.hpp"
#include "compbind/evalkit/score.hpp"
#include "compbind/io/png.hpp"
#include "compbind/synthworld/corpus.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace compbind;

namespace {

struct CommonFlags {
  std::optional<std::uint64_t> seed;
  std::vector<std::string> configs;
  std::string out;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--seed", flags.seed, "Main seed of the command (overrides the config)");
  cmd->add_option("--config", flags.configs, "key=value config file; may repeat, later files win");
  cmd->add_option("--out", flags.out, "Output directory (must not exist or be empty)")->required();
  cmd->add_option("--threads", flags.threads, "Worker threads for sampling")->check(CLI::Range(1, 256));
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ValidationError(what + " path is required");
  if (!fs::is_regular_file(path)) throw ValidationError(what + " not found: " + path);
}

// One command invocation: effective config, output directory and manifest.
class Run {
 public:
  Run(std::string command, const CommonFlags& flags, const std::string& seed_key, const std::vector<std::string>& inputs)
      : out_(flags.out), threads_(flags.threads) {
    for (const auto& c : flags.configs) {
      require_file(c, "config file");
      cfg.merge_file(c);
    }
    if (flags.seed) cfg.set(seed_key, std::to_string(*flags.seed));
    manifest.command = std::move(command);
    manifest.seed = cfg.u64(seed_key);
    for (const auto& in : inputs) manifest.add_input(in);
    if (fs::exists(out_) && !(fs::is_directory(out_) && fs::is_empty(out_))) {
      throw ValidationError("output directory " + out_.string() + " already exists and is not empty");
    }
  }

  // Called once inputs are loaded, so a failed load leaves nothing behind.
  void open() {
    manifest.config_hash = cfg.hash();
    fs::create_directories(out_);
    write_text("config.txt", cfg.effective());
  }

  fs::path output(const std::string& name) {
    manifest.outputs.push_back(name);
    const fs::path p = out_ / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
  }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream f(output(name), std::ios::trunc);
    if (!f) throw RuntimeFailure("cannot write " + (out_ / name).string());
    f << text;
  }

  void finish() {
    manifest.outputs.push_back("manifest.txt");
    std::ofstream f(out_ / "manifest.txt", std::ios::trunc);
    if (!f) throw RuntimeFailure("cannot write manifest");
    f << manifest.text();
  }

  const fs::path& dir() const { return out_; }

  evalkit::EvalOptions eval_options() const {
    evalkit::EvalOptions o;
    o.seeds_per_prompt = static_cast<int>(cfg.integer("eval.seeds"));
    o.base_seed = cfg.u64("eval.base_seed");
    o.threads = threads_;
    return o;
  }

  cli::RunConfig cfg;
  cli::Manifest manifest;

 private:
  fs::path out_;
  int threads_;
};

synth::CorpusConfig corpus_config(const cli::RunConfig& cfg) {
  synth::CorpusConfig c;
  c.n_samples = cfg.integer("corpus.n_samples");
  c.corruption_prob = cfg.real("corpus.p_corrupt");
  c.single_object_fraction = cfg.real("corpus.single_fraction");
  c.holdout_count = static_cast<int>(cfg.integer("corpus.holdout"));
  c.holdout_seed = cfg.u64("corpus.holdout_seed");
  c.seed = cfg.u64("corpus.seed");
  synth::validate(c);
  return c;
}

std::vector<synth::SceneSpec> heldout_specs(const cli::RunConfig& cfg) {
  const int count = static_cast<int>(cfg.integer("corpus.holdout"));
  if (count <= 0) throw ValidationError("corpus.holdout must be positive for evaluation");
  return synth::split_two_object_specs(count, cfg.u64("corpus.holdout_seed")).heldout;
}

TrainConfig train_config(const cli::RunConfig& cfg, const std::string& ns, const std::string& steps_key) {
  TrainConfig t;
  t.steps = cfg.integer(ns + steps_key);
  t.batch = static_cast<int>(cfg.integer(ns + "batch"));
  t.lr = cfg.real(ns + "lr");
  t.seed = cfg.u64(ns + "seed");
  t.validate();
  return t;
}

struct Model {
  encoder::EncoderConfig ecfg;
  encoder::EncoderParams<float> enc;
  diffusion::DenoiserConfig dcfg;
  diffusion::DenoiserParams<float> den;
  diffusion::NoiseSchedule schedule;

  evalkit::Pipeline pipeline() const {
    evalkit::Pipeline p;
    p.ecfg = &ecfg;
    p.enc = &enc;
    p.dcfg = &dcfg;
    p.den = &den;
    p.schedule = &schedule;
    return p;
  }
};

Model load_model(const std::string& path) {
  const auto ck = io::Checkpoint::load(path);
  Model m;
  m.enc = encoder::load_encoder(ck, m.ecfg);
  m.den = diffusion::load_denoiser(ck, m.dcfg);
  m.schedule = diffusion::load_schedule(ck);
  return m;
}

correct::ProjectionParams<float> load_projection_file(const std::string& path) {
  return correct::load_projection(io::Checkpoint::load(path));
}

reweight::ReweightParams reweight_params(const cli::RunConfig& cfg) {
  reweight::ReweightParams p;
  p.neg_big = cfg.real("reweight.neg_big");
  p.pos = cfg.real("reweight.pos");
  p.neg_small = cfg.real("reweight.neg_small");
  p.layers = cfg.integers("reweight.layers");
  p.validate();
  return p;
}

void write_image(const fs::path& path, const MatF& image) {
  io::write_png(path, 16, 16, std::vector<float>(image.data(), image.data() + image.size()));
}

void write_losses(Run& run, const std::string& name, const std::vector<LossRecord>& losses) {
  std::ostringstream s;
  s << std::setprecision(9) << "step,loss,lr\n";
  for (const auto& l : losses) s << l.step << ',' << l.loss << ',' << l.lr << '\n';
  run.write_text(name, s.str());
}

std::function<void(const LossRecord&)> progress(const std::string& what, std::int64_t steps) {
  const std::int64_t every = std::max<std::int64_t>(1, steps / 10);
  return [what, every, sum = 0.0, count = 0](const LossRecord& r) mutable {
    sum += r.loss;
    ++count;
    if ((r.step + 1) % every == 0) {
      std::cerr << what << " step " << r.step + 1 << " loss " << sum / count << "\n";
      sum = 0.0;
      count = 0;
    }
  };
}

synth::PromptTemplate parse_prompt_text(const std::string& text) {
  return synth::make_prompt(synth::parse_prompt(synth::tokenize(text)));
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

// ---------------------------------------------------------------- commands

void cmd_gen_data(const CommonFlags& flags) {
  Run run("gen-data", flags, "corpus.seed", {});
  const auto config = corpus_config(run.cfg);
  run.open();
  const auto corpus = synth::gen_corpus(config);
  synth::write_corpus(corpus, run.output("corpus.cbd"));
  run.write_text("corpus.txt", synth::corpus_manifest(config, corpus));
  run.finish();
}

void cmd_pretrain(const CommonFlags& flags, const std::string& data) {
  require_file(data, "corpus");
  Run run("pretrain", flags, "diffusion.seed", {data});
  const auto& cfg = run.cfg;
  encoder::EncoderConfig ecfg;
  ecfg.width = static_cast<int>(cfg.integer("encoder.width"));
  ecfg.heads = static_cast<int>(cfg.integer("encoder.heads"));
  ecfg.layers = static_cast<int>(cfg.integer("encoder.layers"));
  ecfg.max_len = static_cast<int>(cfg.integer("encoder.max_len"));
  ecfg.causal = cfg.flag("encoder.causal");
  ecfg.validate();
  diffusion::DenoiserConfig dcfg;
  dcfg.width = static_cast<int>(cfg.integer("diffusion.width"));
  dcfg.heads = static_cast<int>(cfg.integer("diffusion.heads"));
  dcfg.blocks = static_cast<int>(cfg.integer("diffusion.blocks"));
  dcfg.text_width = ecfg.width;
  dcfg.validate();
  io::Checkpoint schedule_ck;
  diffusion::save_schedule(schedule_ck, diffusion::NoiseSchedule(static_cast<int>(cfg.integer("diffusion.steps")),
                                                                 cfg.real("diffusion.beta_start"),
                                                                 cfg.real("diffusion.beta_end")));
  // Train with exactly the schedule later commands will load.
  const auto schedule = diffusion::load_schedule(schedule_ck);
  const auto tc = train_config(cfg, "diffusion.", "train_steps");
  const auto corpus = synth::read_corpus(data);
  run.open();

  auto result = encoder::train_encoder_jointly(corpus, ecfg, encoder::init_encoder(ecfg, cfg.u64("encoder.init_seed")),
                                               dcfg, diffusion::init_denoiser(dcfg, cfg.u64("diffusion.init_seed")),
                                               schedule, tc, progress("pretrain", tc.steps));
  io::Checkpoint ck = schedule_ck;
  encoder::save_encoder(ck, ecfg, result.encoder);
  diffusion::save_denoiser(ck, dcfg, result.denoiser);
  ck.save(run.output("model.ckpt"));
  write_losses(run, "loss.csv", result.losses);
  run.finish();
}

void cmd_analyze_attn(const CommonFlags& flags, const std::vector<std::string>& models, std::vector<std::string> tags) {
  if (models.size() != 2) throw ValidationError("analyze-attn compares exactly two --model checkpoints");
  for (const auto& m : models) require_file(m, "model checkpoint");
  if (tags.empty()) tags = {"model_a", "model_b"};
  if (tags.size() != 2 || tags[0] == tags[1]) throw ValidationError("analyze-attn needs two distinct --tag values");
  Run run("analyze-attn", flags, "eval.base_seed", models);
  const auto a = load_model(models[0]);
  const auto b = load_model(models[1]);
  std::vector<synth::PromptTemplate> prompts;
  for (const auto& s : heldout_specs(run.cfg)) prompts.push_back(synth::make_prompt(s));
  run.open();

  contrib::CompareOptions opts;
  opts.out_dir = run.dir();
  opts.heatmap_prompts = static_cast<int>(run.cfg.integer("eval.heatmap_prompts"));
  const auto out = contrib::compare_encoders({tags[0], a.ecfg, a.enc}, {tags[1], b.ecfg, b.enc}, prompts, opts);
  run.manifest.outputs.push_back("unintended.csv");
  run.manifest.outputs.push_back("histogram.png");
  run.manifest.outputs.push_back("heatmaps/");
  run.write_text("summary.txt", "mean_unintended." + tags[0] + "=" + fmt(out.a.mean()) + "\n" +
                                    "mean_unintended." + tags[1] + "=" + fmt(out.b.mean()) + "\n" +
                                    "prompts=" + std::to_string(prompts.size()) + "\n");
  run.finish();
}

// Evenly spaced two-object specs outside the held-out set.
std::vector<synth::SceneSpec> tuning_specs(const cli::RunConfig& cfg) {
  const auto rest = synth::split_two_object_specs(static_cast<int>(cfg.integer("corpus.holdout")),
                                                  cfg.u64("corpus.holdout_seed"))
                        .rest;
  const auto count = static_cast<std::size_t>(cfg.integer("reweight.tuning_prompts"));
  if (count == 0 || count > rest.size()) throw ValidationError("reweight.tuning_prompts out of range");
  std::vector<synth::SceneSpec> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(rest[i * rest.size() / count]);
  return out;
}

void cmd_reweight_search(const CommonFlags& flags, const std::string& model_path) {
  require_file(model_path, "model checkpoint");
  Run run("reweight-search", flags, "eval.base_seed", {model_path});
  const auto model = load_model(model_path);
  const auto layers = run.cfg.integers("reweight.layers");
  const auto tuning = tuning_specs(run.cfg);
  const auto heldout = heldout_specs(run.cfg);
  const auto options = run.eval_options();
  run.open();

  const auto pipeline = model.pipeline();
  const auto grid = evalkit::search_reweighting(pipeline, reweight::default_grid(layers), tuning, options);
  std::ostringstream table;
  table << std::setprecision(9) << "neg_big,pos,neg_small,mean_score,n_images\n";
  for (const auto& r : grid.table) {
    table << r.params.neg_big << ',' << r.params.pos << ',' << r.params.neg_small << ',' << r.mean_score << ','
          << r.n_images << '\n';
  }
  run.write_text("grid.csv", table.str());
  std::string layer_list;
  for (std::size_t i = 0; i < layers.size(); ++i) layer_list += (i ? "," : "") + std::to_string(layers[i]);
  run.write_text("reweight.txt", "reweight.layers=" + layer_list + "\nreweight.neg_big=" + fmt(grid.best.neg_big) +
                                     "\nreweight.pos=" + fmt(grid.best.pos) +
                                     "\nreweight.neg_small=" + fmt(grid.best.neg_small) + "\n");
  const auto delta = evalkit::evaluate_reweighting(grid.best, heldout, pipeline, options);
  run.write_text("summary.txt", "tuning_score=" + fmt(grid.best_score) + "\nheldout_baseline=" + fmt(delta.baseline) +
                                    "\nheldout_reweighted=" + fmt(delta.variant) + "\nheldout_delta=" +
                                    fmt(delta.delta) + "\nn=" + std::to_string(delta.n) + "\n");
  run.finish();
}

void cmd_optimize_embed(const CommonFlags& flags, const std::string& model_path, const std::string& prompt_text) {
  require_file(model_path, "model checkpoint");
  Run run("optimize-embed", flags, "embed.seed", {model_path});
  const auto model = load_model(model_path);
  const auto prompt = parse_prompt_text(prompt_text);
  const auto spec = synth::parse_prompt(prompt.tokens);
  const auto mask = correct::make_mask(prompt, correct::parse_preset(run.cfg.str("embed.mask")));
  correct::EmbeddingOptConfig oc;
  oc.steps = static_cast<int>(run.cfg.integer("embed.steps"));
  oc.batch = static_cast<int>(run.cfg.integer("embed.batch"));
  oc.lr = run.cfg.real("embed.lr");
  oc.seed = run.cfg.u64("embed.seed");
  const auto options = run.eval_options();
  run.open();

  const auto pipeline = model.pipeline();
  const MatF initial = evalkit::text_embedding(pipeline, prompt);
  const std::vector<MatF> images = {synth::image_to_matrix(synth::render_scene(spec))};
  const auto result = correct::optimize_embedding(initial, images, model.dcfg, model.den, model.schedule, mask, oc);
  io::Checkpoint ck;
  ck.put_matrix("embedding", result.embedding);
  ck.save(run.output("embedding.ckpt"));
  write_losses(run, "loss.csv", result.losses);

  double before = 0.0, after = 0.0;
  for (int k = 0; k < options.seeds_per_prompt; ++k) {
    const auto seed = evalkit::sample_seed(options.base_seed, 0, k);
    const auto a = diffusion::sample(model.dcfg, model.den, model.schedule, diffusion::constant_embedding(initial), seed);
    const auto b =
        diffusion::sample(model.dcfg, model.den, model.schedule, diffusion::constant_embedding(result.embedding), seed);
    before += evalkit::composition_score(a.image, spec).value;
    after += evalkit::composition_score(b.image, spec).value;
    write_image(run.output("before_" + std::to_string(k) + ".png"), a.image);
    write_image(run.output("after_" + std::to_string(k) + ".png"), b.image);
  }
  const double n = options.seeds_per_prompt;
  const double loss_before = correct::embedding_probe_loss(initial, images, model.dcfg, model.den, model.schedule, 64, oc.seed);
  const double loss_after =
      correct::embedding_probe_loss(result.embedding, images, model.dcfg, model.den, model.schedule, 64, oc.seed);
  run.write_text("summary.txt", "prompt=" + prompt_text + "\nscore_before=" + fmt(before / n) + "\nscore_after=" +
                                    fmt(after / n) + "\nprobe_loss_before=" + fmt(loss_before) +
                                    "\nprobe_loss_after=" + fmt(loss_after) + "\n");
  run.finish();
}

void cmd_train_projection(const CommonFlags& flags, correct::ProjectionKind kind, const std::string& model_path,
                          const std::string& data) {
  require_file(model_path, "pretrained model checkpoint");
  require_file(data, "corpus");
  const std::string name = kind == correct::ProjectionKind::Clp ? "train-clp" : "train-wiclp";
  Run run(name, flags, "proj.seed", {model_path, data});
  const auto model = load_model(model_path);
  const auto corpus = synth::read_corpus(data);
  const int radius = kind == correct::ProjectionKind::Clp ? 0 : static_cast<int>(run.cfg.integer("proj.radius"));
  if (radius < 0) throw ValidationError("proj.radius must be non-negative");
  const auto tc = train_config(run.cfg, "proj.", "steps");
  run.open();

  const correct::FrozenStack stack{model.ecfg, model.enc, model.dcfg, model.den, model.schedule};
  const auto result = correct::train_projection(kind, radius, corpus, stack, tc, progress(name, tc.steps));
  io::Checkpoint ck;
  correct::save_projection(ck, result.params);
  ck.save(run.output("proj.ckpt"));
  write_losses(run, "loss.csv", result.losses);
  const auto probe = correct::probe_batch(corpus, model.schedule, 64, tc.seed + 1);
  const double before = correct::projection_loss(correct::zero_projection(kind, radius, model.ecfg.width), stack, probe);
  const double after = correct::projection_loss(result.params, stack, probe);
  run.write_text("summary.txt", "probe_loss_before=" + fmt(before) + "\nprobe_loss_after=" + fmt(after) + "\n");
  run.finish();
}

struct VariantFlags {
  std::string model;
  std::string proj;
  bool reweight = false;
  bool switch_off = false;
};

void add_variant(CLI::App* cmd, VariantFlags& v) {
  cmd->add_option("--model", v.model, "Pretrained model checkpoint")->required();
  cmd->add_option("--proj", v.proj, "Projection checkpoint (CLP or WiCLP)");
  cmd->add_flag("--reweight", v.reweight, "Apply the reweight.* attention bias");
  cmd->add_flag("--switch-off", v.switch_off, "Use the projection only for t >= eval.tau * (T + 1)");
}

struct LoadedVariant {
  Model model;
  std::optional<correct::ProjectionParams<float>> proj;
  evalkit::Pipeline pipeline;
};

std::vector<std::string> variant_inputs(const VariantFlags& v) {
  require_file(v.model, "model checkpoint");
  std::vector<std::string> in{v.model};
  if (!v.proj.empty()) {
    require_file(v.proj, "projection checkpoint");
    in.push_back(v.proj);
  }
  if (v.switch_off && v.proj.empty()) throw ValidationError("--switch-off needs --proj");
  return in;
}

// Pointers inside the pipeline refer to `out`, which must not move afterwards.
void load_variant(const VariantFlags& v, const cli::RunConfig& cfg, LoadedVariant& out) {
  out.model = load_model(v.model);
  out.pipeline = out.model.pipeline();
  if (!v.proj.empty()) {
    out.proj = load_projection_file(v.proj);
    out.pipeline.projection = &*out.proj;
  }
  if (v.reweight) out.pipeline.reweight = reweight_params(cfg);
  if (v.switch_off) {
    out.pipeline.switch_off = diffusion::SwitchOffPolicy::from_fraction(cfg.real("eval.tau"), out.model.schedule.steps());
  }
  out.pipeline.validate();
}

void cmd_sample(const CommonFlags& flags, const VariantFlags& v, const std::string& prompt_text, int count,
                const std::vector<int>& map_steps) {
  Run run("sample", flags, "eval.base_seed", variant_inputs(v));
  LoadedVariant lv;
  load_variant(v, run.cfg, lv);
  const auto prompt = parse_prompt_text(prompt_text);
  for (int t : map_steps) {
    if (t < 1 || t > lv.model.schedule.steps()) throw ValidationError("--maps timestep out of range");
  }
  run.open();

  diffusion::SampleOptions so;
  so.map_timesteps = map_steps;
  const auto base = run.cfg.u64("eval.base_seed");
  const auto spec = synth::parse_prompt(prompt.tokens);
  std::ostringstream scores;
  scores << "sample,score\n";
  for (int k = 0; k < count; ++k) {
    const auto r = evalkit::generate(lv.pipeline, prompt, evalkit::sample_seed(base, 0, k), so);
    write_image(run.output("sample_" + std::to_string(k) + ".png"), r.image);
    scores << k << ',' << fmt(evalkit::composition_score(r.image, spec).value) << '\n';
    for (const auto& [t, maps] : r.maps) {
      for (std::size_t b = 0; b < maps.per_block.size(); ++b) {
        const auto& m = maps.per_block[b];
        std::ostringstream csv;
        csv << std::setprecision(9) << "patch";
        for (std::size_t j = 0; j < prompt.tokens.size(); ++j) csv << ',' << synth::token_text(prompt.tokens[j]);
        csv << '\n';
        for (Eigen::Index p = 0; p < m.rows(); ++p) {
          csv << p;
          for (Eigen::Index j = 0; j < m.cols(); ++j) csv << ',' << m(p, j);
          csv << '\n';
        }
        run.write_text("maps/sample" + std::to_string(k) + "_block" + std::to_string(b) + "_t" + std::to_string(t) +
                           ".csv",
                       csv.str());
      }
    }
  }
  run.write_text("scores.csv", scores.str());
  run.finish();
}

void cmd_eval(const CommonFlags& flags, const VariantFlags& v, bool save_images) {
  Run run("eval", flags, "eval.base_seed", variant_inputs(v));
  LoadedVariant lv;
  load_variant(v, run.cfg, lv);
  const auto specs = heldout_specs(run.cfg);
  auto options = run.eval_options();
  options.keep_images = save_images;
  run.open();

  const auto r = evalkit::evaluate(lv.pipeline, specs, options);
  std::ostringstream csv;
  csv << "prompt_id,prompt,seed_index,score\n";
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    const std::size_t p = i / options.seeds_per_prompt;
    const std::size_t k = i % options.seeds_per_prompt;
    csv << p << ',' << synth::prompt_text(specs[p]) << ',' << k << ',' << fmt(r.scores[i]) << '\n';
    if (save_images) {
      write_image(run.output("images/p" + std::to_string(p) + "_s" + std::to_string(k) + ".png"), r.images[i]);
    }
  }
  run.write_text("scores.csv", csv.str());
  run.write_text("summary.txt", "mean_score=" + fmt(r.mean) + "\nn=" + std::to_string(r.n) + "\n");
  run.finish();
}

void cmd_tradeoff(const CommonFlags& flags, const VariantFlags& v, const std::string& taus) {
  if (v.proj.empty()) throw ValidationError("tradeoff needs --proj");
  Run run("tradeoff", flags, "eval.base_seed", variant_inputs(v));
  if (!taus.empty()) run.cfg.set("eval.taus", taus);
  const auto fractions = run.cfg.reals("eval.taus");
  if (fractions.empty()) throw ValidationError("tradeoff needs at least one tau fraction");
  LoadedVariant lv;
  load_variant(v, run.cfg, lv);
  const auto specs = heldout_specs(run.cfg);
  const auto clean = synth::all_single_object_specs();
  const auto reference = evalkit::render_all(clean);
  const auto options = run.eval_options();
  run.open();

  const auto result = evalkit::tradeoff_curve(lv.pipeline, fractions, specs, clean, reference, options);
  evalkit::write_tradeoff_csv(run.output("tradeoff.csv"), result);
  evalkit::write_tradeoff_png(run.output("tradeoff.png"), result);
  run.write_text("summary.txt", "baseline_score=" + fmt(result.baseline_score) + "\nbaseline_fid_proxy=" +
                                    fmt(result.baseline_fid) + "\n");
  run.finish();
}

void cmd_table(const CommonFlags& flags, const std::string& model_path, const std::string& clp_path,
               const std::string& wiclp_path) {
  require_file(model_path, "model checkpoint");
  require_file(clp_path, "CLP checkpoint");
  require_file(wiclp_path, "WiCLP checkpoint");
  Run run("table", flags, "eval.base_seed", {model_path, clp_path, wiclp_path});
  const auto model = load_model(model_path);
  const auto clp = load_projection_file(clp_path);
  const auto wiclp = load_projection_file(wiclp_path);
  if (clp.kind != correct::ProjectionKind::Clp) throw ValidationError(clp_path + " is not a CLP checkpoint");
  if (wiclp.kind != correct::ProjectionKind::Wiclp) throw ValidationError(wiclp_path + " is not a WiCLP checkpoint");
  const auto rw = reweight_params(run.cfg);
  const auto specs = heldout_specs(run.cfg);
  const auto options = run.eval_options();
  const auto switch_off = diffusion::SwitchOffPolicy::from_fraction(run.cfg.real("eval.tau"), model.schedule.steps());
  run.open();

  std::vector<evalkit::ModelVariant> rows;
  rows.push_back({"baseline", model.pipeline()});
  rows.push_back({"+reweight", model.pipeline()});
  rows.back().pipeline.reweight = rw;
  rows.push_back({"+CLP", model.pipeline()});
  rows.back().pipeline.projection = &clp;
  rows.push_back({"+WiCLP", model.pipeline()});
  rows.back().pipeline.projection = &wiclp;
  rows.push_back({"+WiCLP+SwitchOff", model.pipeline()});
  rows.back().pipeline.projection = &wiclp;
  rows.back().pipeline.switch_off = switch_off;
  auto categories = evalkit::categorize(specs);
  categories.insert(categories.begin(), {"all", specs});
  evalkit::write_table_csv(run.output("table.csv"), evalkit::comparison_table(rows, categories, options));
  run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compositional binding laboratory on a toy text-to-image stack"};
  app.require_subcommand(1);
  CommonFlags common;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic caption/image corpus");
  add_common(gen, common);

  std::string data;
  auto* pre = app.add_subcommand("pretrain", "Jointly pretrain the text encoder and denoiser");
  add_common(pre, common);
  pre->add_option("--data", data, "Corpus file (CBD1)")->required();

  std::vector<std::string> models, tags;
  auto* attn = app.add_subcommand("analyze-attn", "Attention-contribution analysis of two encoders");
  add_common(attn, common);
  attn->add_option("--model", models, "Model checkpoint (give two)")->required();
  attn->add_option("--tag", tags, "Encoder tags, one per model");

  std::string model;
  auto* rws = app.add_subcommand("reweight-search", "Grid-search the attention bias on tuning prompts");
  add_common(rws, common);
  rws->add_option("--model", model, "Model checkpoint")->required();

  std::string prompt;
  auto* opt = app.add_subcommand("optimize-embed", "Optimize one prompt's text embedding");
  add_common(opt, common);
  opt->add_option("--model", model, "Model checkpoint")->required();
  opt->add_option("--prompt", prompt, "Caption, e.g. \"a red square and a blue circle\"")->required();

  auto* clp = app.add_subcommand("train-clp", "Train a token-wise linear projection");
  add_common(clp, common);
  clp->add_option("--model", model, "Pretrained model checkpoint")->required();
  clp->add_option("--data", data, "Clean corpus file (CBD1)")->required();

  auto* wiclp = app.add_subcommand("train-wiclp", "Train a window-based linear projection");
  add_common(wiclp, common);
  wiclp->add_option("--model", model, "Pretrained model checkpoint")->required();
  wiclp->add_option("--data", data, "Clean corpus file (CBD1)")->required();

  VariantFlags variant;
  int count = 4;
  std::vector<int> map_steps;
  auto* smp = app.add_subcommand("sample", "Generate images for one prompt");
  add_common(smp, common);
  add_variant(smp, variant);
  smp->add_option("--prompt", prompt, "Caption")->required();
  smp->add_option("--count", count, "Images to generate")->check(CLI::Range(1, 10000));
  smp->add_option("--maps", map_steps, "Timesteps at which to export cross-attention maps")->delimiter(',');

  bool save_images = false;
  auto* ev = app.add_subcommand("eval", "Composition score on the held-out prompts");
  add_common(ev, common);
  add_variant(ev, variant);
  ev->add_flag("--save-images", save_images, "Also write every generated image");

  std::string taus;
  auto* tr = app.add_subcommand("tradeoff", "Score and FID-proxy against the Switch-Off fraction");
  add_common(tr, common);
  add_variant(tr, variant);
  tr->add_option("--taus", taus, "Comma-separated tau fractions (overrides eval.taus)");

  std::string clp_path, wiclp_path;
  auto* tab = app.add_subcommand("table", "Comparison table of all variants by prompt category");
  add_common(tab, common);
  tab->add_option("--model", model, "Model checkpoint")->required();
  tab->add_option("--clp", clp_path, "CLP checkpoint")->required();
  tab->add_option("--wiclp", wiclp_path, "WiCLP checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) cmd_gen_data(common);
    else if (*pre) cmd_pretrain(common, data);
    else if (*attn) cmd_analyze_attn(common, models, tags);
    else if (*rws) cmd_reweight_search(common, model);
    else if (*opt) cmd_optimize_embed(common, model, prompt);
    else if (*clp) cmd_train_projection(common, correct::ProjectionKind::Clp, model, data);
    else if (*wiclp) cmd_train_projection(common, correct::ProjectionKind::Wiclp, model, data);
    else if (*smp) cmd_sample(common, variant, prompt, count, map_steps);
    else if (*ev) cmd_eval(common, variant, save_images);
    else if (*tr) cmd_tradeoff(common, variant, taus);
    else if (*tab) cmd_table(common, model, clp_path, wiclp_path);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
