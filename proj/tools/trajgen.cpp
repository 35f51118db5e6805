// trajgen command line: world synthesis, pretraining, fine-tuning, generation
// and evaluation. Every stage reads and writes plain files in one directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "trajgen/checkpoint.hpp"
#include "trajgen/connectivity.hpp"
#include "trajgen/corpus.hpp"
#include "trajgen/eval.hpp"
#include "trajgen/generate.hpp"
#include "trajgen/hash.hpp"
#include "trajgen/pretrain.hpp"
#include "trajgen/region.hpp"
#include "trajgen/rltf.hpp"
#include "trajgen/synthworld.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace trajgen;

namespace {

// Every key the config file may carry, with its default. Unknown keys are
// rejected so that typos do not silently fall back to defaults.
json default_config() {
  const WorldConfig w;
  const ModelConfig m = desk_model_config(2);
  const TrainConfig t;
  const PreferenceConfig p;
  const RewardConfig r;
  const PPOConfig o;
  const SFTConfig s;
  const GenerateOptions g;
  const EvalConfig e;
  return json{
      {"seed", 1},
      {"world",
       {{"width", w.width},
        {"height", w.height},
        {"link_length", w.link_length},
        {"num_trajectories", w.num_trajectories},
        {"gravity_exponent", w.gravity_exponent},
        {"detour_prob", w.detour_prob},
        {"min_links", w.min_links},
        {"train_frac", 0.8}}},
      {"model",
       {{"n_layers", m.n_layers},
        {"n_heads", m.n_heads},
        {"d_model", m.d_model},
        {"block_size", m.block_size},
        {"dropout", m.dropout},
        {"mode", "eot_only"}}},
      {"regions", {{"grid_width", e.grid_width}, {"grid_height", e.grid_height}}},
      {"pretrain",
       {{"steps", t.steps},
        {"batch_size", t.batch_size},
        {"eval_interval", t.eval_interval},
        {"eval_trajectories", t.eval_trajectories},
        {"gravity_sampling", t.gravity_sampling},
        {"rcm_masking", t.rcm_masking},
        {"lr", t.optim.lr},
        {"weight_decay", t.optim.weight_decay},
        {"grad_clip", t.optim.grad_clip}}},
      {"prefs",
       {{"m_frac", p.m_frac},
        {"n_pairs", p.n_pairs},
        {"temperature", p.temperature},
        {"max_len", p.max_len},
        {"max_attempts_factor", p.max_attempts_factor}}},
      {"reward", {{"epochs", r.epochs}, {"batch_size", r.batch_size}, {"val_frac", r.val_frac}, {"lr", r.optim.lr}}},
      {"ppo",
       {{"iterations", o.iterations},
        {"rollouts", o.rollouts},
        {"epochs", o.epochs},
        {"beta", o.beta},
        {"clip_eps", o.clip_eps},
        {"temperature", o.temperature},
        {"m_frac", o.m_frac},
        {"max_len", o.max_len},
        {"gravity_prompts", o.gravity_prompts},
        {"kl_ceiling", o.kl_ceiling},
        {"lr", o.optim.lr}}},
      {"sft", {{"steps", s.steps}, {"batch_size", s.batch_size}, {"lr", s.optim.lr}}},
      {"generate", {{"n", 0}, {"temperature", g.temperature}, {"max_len", g.max_len}, {"max_retries", 16}}},
      {"eval", {{"bins", e.bins}, {"n_queries", e.n_queries}, {"smoothing", e.smoothing}}},
  };
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

void merge_into(json& base, const json& over, const std::string& prefix) {
  if (!over.is_object()) throw ConfigError("config " + (prefix.empty() ? std::string("root") : prefix) + " must be an object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string name = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config field " + name);
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), name);
    } else {
      if (!same_kind(slot, it.value())) throw ConfigError("config field " + name + " has the wrong type");
      slot = it.value();
    }
  }
}

// "section.key=value"; value parsed as JSON, falling back to a bare string.
void apply_override(json& cfg, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + text + "' is not key=value");
  const std::string path = text.substr(0, eq);
  json value = json::parse(text.substr(eq + 1), nullptr, false);
  if (value.is_discarded()) value = text.substr(eq + 1);
  json patch = value;
  std::string rest = path;
  std::vector<std::string> parts;
  for (std::size_t p; (p = rest.find('.')) != std::string::npos; rest = rest.substr(p + 1)) parts.push_back(rest.substr(0, p));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_into(cfg, patch, "");
}

struct Settings {
  json cfg;
  std::uint64_t seed = 1;
  std::string hash;
  fs::path out_dir;
  int threads = 1;

  template <typename T>
  T get(const std::string& section, const std::string& key) const {
    return cfg.at(section).at(key).get<T>();
  }

  WorldConfig world() const {
    WorldConfig w;
    w.width = get<int>("world", "width");
    w.height = get<int>("world", "height");
    w.link_length = get<double>("world", "link_length");
    w.num_trajectories = get<int>("world", "num_trajectories");
    w.gravity_exponent = get<double>("world", "gravity_exponent");
    w.detour_prob = get<double>("world", "detour_prob");
    w.min_links = get<int>("world", "min_links");
    w.seed = seed;
    w.validate();
    return w;
  }

  BoundaryMode mode() const {
    try {
      return parse_boundary_mode(get<std::string>("model", "mode"));
    } catch (const std::invalid_argument&) {
      throw ConfigError("model.mode must be eot_only or bot_and_eot");
    }
  }

  ModelConfig model(int vocab_size) const {
    ModelConfig m = desk_model_config(vocab_size);
    m.n_layers = get<int>("model", "n_layers");
    m.n_heads = get<int>("model", "n_heads");
    m.d_model = get<int>("model", "d_model");
    m.block_size = get<int>("model", "block_size");
    m.dropout = get<double>("model", "dropout");
    m.seed = seed;
    m.validate();
    return m;
  }

  bool rcm_masking() const { return get<bool>("pretrain", "rcm_masking"); }

  TrainConfig train() const {
    TrainConfig t;
    t.steps = get<int>("pretrain", "steps");
    t.batch_size = get<int>("pretrain", "batch_size");
    t.eval_interval = get<int>("pretrain", "eval_interval");
    t.eval_trajectories = get<int>("pretrain", "eval_trajectories");
    t.gravity_sampling = get<bool>("pretrain", "gravity_sampling");
    t.rcm_masking = rcm_masking();
    t.optim.lr = get<double>("pretrain", "lr");
    t.optim.weight_decay = get<double>("pretrain", "weight_decay");
    t.optim.grad_clip = get<double>("pretrain", "grad_clip");
    t.seed = seed;
    t.validate();
    return t;
  }

  PreferenceConfig prefs() const {
    PreferenceConfig p;
    p.m_frac = get<double>("prefs", "m_frac");
    p.n_pairs = get<int>("prefs", "n_pairs");
    p.temperature = get<double>("prefs", "temperature");
    p.max_len = get<int>("prefs", "max_len");
    p.max_attempts_factor = get<int>("prefs", "max_attempts_factor");
    p.seed = seed;
    p.validate();
    return p;
  }

  RewardConfig reward() const {
    RewardConfig r;
    r.epochs = get<int>("reward", "epochs");
    r.batch_size = get<int>("reward", "batch_size");
    r.val_frac = get<double>("reward", "val_frac");
    r.optim.lr = get<double>("reward", "lr");
    r.seed = seed;
    r.validate();
    return r;
  }

  PPOConfig ppo() const {
    PPOConfig o;
    o.iterations = get<int>("ppo", "iterations");
    o.rollouts = get<int>("ppo", "rollouts");
    o.epochs = get<int>("ppo", "epochs");
    o.beta = get<double>("ppo", "beta");
    o.clip_eps = get<double>("ppo", "clip_eps");
    o.temperature = get<double>("ppo", "temperature");
    o.m_frac = get<double>("ppo", "m_frac");
    o.max_len = get<int>("ppo", "max_len");
    o.gravity_prompts = get<bool>("ppo", "gravity_prompts");
    o.kl_ceiling = get<double>("ppo", "kl_ceiling");
    o.optim.lr = get<double>("ppo", "lr");
    o.rcm_masking = rcm_masking();
    o.seed = seed;
    o.validate();
    return o;
  }

  SFTConfig sft() const {
    SFTConfig s;
    s.steps = get<int>("sft", "steps");
    s.batch_size = get<int>("sft", "batch_size");
    s.optim.lr = get<double>("sft", "lr");
    s.rcm_masking = rcm_masking();
    s.seed = seed;
    s.validate();
    return s;
  }

  GenerateOptions generate(BoundaryMode mode) const {
    GenerateOptions g;
    g.temperature = get<double>("generate", "temperature");
    g.max_len = get<int>("generate", "max_len");
    g.rcm_masking = rcm_masking();
    g.mode = mode;
    if (!(g.temperature >= 0.0) || !std::isfinite(g.temperature)) throw ConfigError("generate.temperature must be >= 0");
    if (g.max_len < 1) throw ConfigError("generate.max_len must be >= 1");
    if (get<int>("generate", "n") < 0) throw ConfigError("generate.n must be >= 0");
    if (get<int>("generate", "max_retries") < 0) throw ConfigError("generate.max_retries must be >= 0");
    return g;
  }

  EvalConfig eval() const {
    EvalConfig e;
    e.grid_width = get<int>("regions", "grid_width");
    e.grid_height = get<int>("regions", "grid_height");
    e.bins = get<int>("eval", "bins");
    e.n_queries = get<int>("eval", "n_queries");
    e.smoothing = get<double>("eval", "smoothing");
    e.seed = seed;
    e.validate();
    return e;
  }

  fs::path path(const std::string& given, const std::string& fallback) const {
    return given.empty() ? out_dir / fallback : fs::path(given);
  }

  std::string stamp() const { return "config_hash=" + hash + " seed=" + std::to_string(seed); }

  std::vector<std::string> comments(const std::string& what) const {
    return {"trajgen " + what, stamp()};
  }

  Metadata metadata(const std::string& what) const {
    return {{"config_hash", hash}, {"seed", std::to_string(seed)}, {"content", what}};
  }

  std::string checkpoint_metadata(const std::string& stage, BoundaryMode mode) const {
    return json{{"config_hash", hash}, {"seed", seed}, {"stage", stage}, {"mode", to_string(mode)}}.dump();
  }
};

// ---- shared loading ----

struct World {
  RoadNetwork net;
  Corpus train;
};

RoadNetwork load_network(const fs::path& p) { return read_network_file(p.string()); }

Corpus load_corpus(const fs::path& p, const RoadNetwork& net) {
  Corpus c = read_corpus_file(p.string());
  validate_corpus(c, static_cast<int>(net.num_links()), p.string());
  const auto meta_path = metadata_path(p.string());
  if (fs::exists(meta_path)) {
    const Metadata meta = read_metadata_file(meta_path);
    const auto it = meta.find("network_hash");
    if (it != meta.end() && it->second != hex64(net.content_hash())) {
      throw FormatError(p.string() + " was written for a different road network");
    }
  }
  if (c.empty()) throw FormatError(p.string() + " holds no trajectories");
  return c;
}

void save_corpus(const Settings& s, const fs::path& p, const Corpus& c, const RoadNetwork& net, const std::string& what,
                 Metadata extra = {}) {
  write_corpus_file(p.string(), c, s.comments(what));
  Metadata meta = s.metadata(what);
  meta["network_hash"] = hex64(net.content_hash());
  meta["trajectories"] = std::to_string(c.size());
  meta.merge(extra);
  write_metadata_file(metadata_path(p.string()), meta);
}

BoundaryMode checkpoint_mode(const TransformerModel& m, const RoadNetwork& net) {
  const int v = m.config().vocab_size, l = static_cast<int>(net.num_links());
  if (v == l + 1) return BoundaryMode::eot_only;
  if (v == l + 2) return BoundaryMode::bot_and_eot;
  throw FormatError("checkpoint vocabulary does not match the road network");
}

ConnectivityMatrix corpus_rcm(const Corpus& train, const RoadNetwork& net, BoundaryMode mode) {
  RcmOptions o;
  o.bot_token = mode == BoundaryMode::bot_and_eot;
  return build_rcm(train, static_cast<int>(net.num_links()), o);
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.precision(17);
  return out;
}

void say(const std::string& msg) { std::cerr << msg << "\n"; }

// ---- subcommands ----

void cmd_synth_world(const Settings& s) {
  const WorldConfig w = s.world();
  const double train_frac = s.get<double>("world", "train_frac");
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("world.train_frac must be in (0, 1)");
  const RoadNetwork net = generate_grid_network(w);
  const Corpus corpus = simulate_corpus(net, w);
  const auto [train, test] = split(corpus, train_frac, derive_seed(s.seed, "world.split"));
  fs::create_directories(s.out_dir);
  write_network_file((s.out_dir / "network.txt").string(), net, s.comments("road network"));
  save_corpus(s, s.out_dir / "corpus.txt", corpus, net, "simulated corpus");
  save_corpus(s, s.out_dir / "train.txt", train, net, "training split");
  save_corpus(s, s.out_dir / "test.txt", test, net, "held-out split");
  say("world: " + std::to_string(net.num_links()) + " links, " + std::to_string(train.size()) + " train / " +
      std::to_string(test.size()) + " held-out trajectories");
}

struct Paths {
  std::string network, train, heldout, checkpoint, reward, prefs, out, real, syn;
};

void cmd_pretrain(const Settings& s, const Paths& p) {
  const RoadNetwork net = load_network(s.path(p.network, "network.txt"));
  const Corpus train = load_corpus(s.path(p.train, "train.txt"), net);
  const Corpus heldout = load_corpus(s.path(p.heldout, "test.txt"), net);
  const BoundaryMode mode = s.mode();
  const TrainConfig tc = s.train();
  const Vocab vocab(static_cast<int>(net.num_links()), mode);
  const EvalConfig ec = s.eval();
  const RegionMap rmap = build_region_map(net, ec.grid_width, ec.grid_height);
  const GravityTable table = build_gravity_table(train, rmap);
  const GravitySampler sampler(train, rmap, table, tc.gravity_sampling);
  const ConnectivityMatrix rcm = corpus_rcm(train, net, mode);

  TransformerModel model(s.model(vocab.size()));
  AdamW opt(tc.optim, model.parameters());
  const PretrainResult res = pretrain(model, opt, train, heldout, vocab, &rcm, sampler, tc);

  const fs::path out = s.path(p.out, "pretrain.ckpt");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out.string(), model, &opt, s.checkpoint_metadata("pretrain", mode));
  fs::path csv = out;
  csv.replace_extension(".loss.csv");
  auto f = open_out(csv);
  f << "# " << s.stamp() << "\nstep,train_loss,eval_loss\n";
  for (const auto& r : res.trace) f << r.step << "," << r.train_loss << "," << r.eval_loss << "\n";
  if (!res.trace.empty()) {
    say("pretrain: final train loss " + std::to_string(res.trace.back().train_loss) + ", held-out " +
        std::to_string(res.trace.back().eval_loss));
  }
  if (res.truncated > 0) say("pretrain: " + std::to_string(res.truncated) + " trajectories clipped to the block size");
}

void cmd_build_prefs(const Settings& s, const Paths& p) {
  const RoadNetwork net = load_network(s.path(p.network, "network.txt"));
  const Corpus train = load_corpus(s.path(p.train, "train.txt"), net);
  const Checkpoint ck = load_checkpoint(s.path(p.checkpoint, "pretrain.ckpt").string());
  const BoundaryMode mode = checkpoint_mode(ck.model, net);
  const ConnectivityMatrix rcm = corpus_rcm(train, net, mode);
  const PreferenceDataset ds =
      build_preference_dataset(ck.model, s.rcm_masking() ? &rcm : nullptr, train, net, mode, s.prefs());
  // Records carry the provenance stamp alongside the pair fields.
  std::stringstream raw;
  write_preferences(raw, ds.pairs);
  auto out = open_out(s.path(p.out, "prefs.jsonl"));
  for (std::string line; std::getline(raw, line);) {
    json j = json::parse(line);
    j["config_hash"] = s.hash;
    j["seed"] = s.seed;
    out << j.dump() << "\n";
  }
  say("prefs: " + std::to_string(ds.pairs.size()) + " pairs, " + std::to_string(ds.ties) + " ties, " +
      std::to_string(ds.identical_skipped) + " identical skipped");
}

void cmd_train_reward(const Settings& s, const Paths& p) {
  const RoadNetwork net = load_network(s.path(p.network, "network.txt"));
  const Checkpoint ck = load_checkpoint(s.path(p.checkpoint, "pretrain.ckpt").string());
  const BoundaryMode mode = checkpoint_mode(ck.model, net);
  const Vocab vocab(static_cast<int>(net.num_links()), mode);
  const auto pairs = read_preferences_file(s.path(p.prefs, "prefs.jsonl").string());
  for (const auto& pair : pairs) {
    for (const auto* t : {&pair.prompt, &pair.chosen, &pair.rejected}) {
      for (LinkId l : *t) {
        if (!vocab.is_link(l)) throw FormatError("preference pair from source " + std::to_string(pair.source) + " names an unknown link");
      }
    }
  }
  TransformerModel rm = make_reward_model(ck.model, s.seed);
  const RewardResult res = train_reward_model(rm, pairs, vocab, s.reward());
  const fs::path out = s.path(p.out, "reward.ckpt");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out.string(), rm, nullptr, s.checkpoint_metadata("reward", mode));
  fs::path csv = out;
  csv.replace_extension(".trace.csv");
  auto f = open_out(csv);
  f << "# " << s.stamp() << "\nepoch,train_loss,val_loss,val_accuracy\n";
  for (const auto& r : res.trace) f << r.epoch << "," << r.train_loss << "," << r.val_loss << "," << r.val_accuracy << "\n";
  say("reward: validation accuracy " + std::to_string(res.val_accuracy) + " on " + std::to_string(res.val_pairs) +
      " pairs");
}

void cmd_finetune(const Settings& s, const Paths& p, const std::string& how) {
  const RoadNetwork net = load_network(s.path(p.network, "network.txt"));
  const Corpus train = load_corpus(s.path(p.train, "train.txt"), net);
  const Checkpoint ck = load_checkpoint(s.path(p.checkpoint, "pretrain.ckpt").string());
  const BoundaryMode mode = checkpoint_mode(ck.model, net);
  const Vocab vocab(static_cast<int>(net.num_links()), mode);
  const ConnectivityMatrix rcm = corpus_rcm(train, net, mode);
  TransformerModel policy = ck.model;
  const fs::path out = s.path(p.out, how + ".ckpt");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  fs::path csv = out;
  csv.replace_extension(".trace.csv");

  if (how == "rltf") {
    const Checkpoint rm = load_checkpoint(s.path(p.reward, "reward.ckpt").string());
    if (rm.model.config().head != HeadKind::scalar) throw FormatError("reward checkpoint has no scalar head");
    const PPOConfig cfg = s.ppo();
    const EvalConfig ec = s.eval();
    const RegionMap rmap = build_region_map(net, ec.grid_width, ec.grid_height);
    const GravitySampler sampler(train, rmap, build_gravity_table(train, rmap), true);
    const PPOResult res = ppo_finetune(policy, ck.model, rm.model, &rcm, train, vocab, cfg,
                                       cfg.gravity_prompts ? &sampler : nullptr);
    auto f = open_out(csv);
    f << "# " << s.stamp() << "\niteration,mean_reward,mean_score,mean_kl,mean_length\n";
    for (const auto& r : res.trace) {
      f << r.iteration << "," << r.mean_reward << "," << r.mean_score << "," << r.mean_kl << "," << r.mean_length << "\n";
    }
  } else if (how == "sft") {
    const auto pairs = read_preferences_file(s.path(p.prefs, "prefs.jsonl").string());
    const auto trace = sft_finetune(policy, pairs, &rcm, vocab, s.sft());
    auto f = open_out(csv);
    f << "# " << s.stamp() << "\nstep,loss\n";
    for (const auto& r : trace) f << r.step << "," << r.loss << "\n";
  } else {
    throw ConfigError("finetune --mode must be rltf or sft");
  }
  save_checkpoint(out.string(), policy, nullptr, s.checkpoint_metadata(how, mode));
  say("finetune: wrote " + out.string());
}

std::string temperature_tag(double t) {
  std::ostringstream o;
  o << t;
  return o.str();
}

void cmd_generate(const Settings& s, const Paths& p, const std::vector<double>& sweep) {
  const RoadNetwork net = load_network(s.path(p.network, "network.txt"));
  const Corpus train = load_corpus(s.path(p.train, "train.txt"), net);
  const fs::path ckp = s.path(p.checkpoint, "pretrain.ckpt");
  const Checkpoint ck = load_checkpoint(ckp.string());
  const BoundaryMode mode = checkpoint_mode(ck.model, net);
  const ConnectivityMatrix rcm = corpus_rcm(train, net, mode);
  GenerateOptions opts = s.generate(mode);
  int n = s.get<int>("generate", "n");
  if (n == 0) n = static_cast<int>(train.size());
  const int retries = s.get<int>("generate", "max_retries");

  const fs::path out = s.path(p.out, "generated.txt");
  std::vector<double> temps = sweep;
  if (temps.empty()) temps.push_back(opts.temperature);
  for (double t : temps) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw ConfigError("generate.temperature must be >= 0");
    opts.temperature = t;
    const CorpusGeneration g =
        generate_corpus(ck.model, opts.rcm_masking ? &rcm : nullptr, n, opts, s.seed, s.threads, retries);
    fs::path target = out;
    if (!sweep.empty()) target.replace_filename(out.stem().string() + "_T" + temperature_tag(t) + out.extension().string());
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    save_corpus(s, target, g.corpus, net, "generated corpus",
                {{"checkpoint_hash", file_hash(ckp.string())},
                 {"temperature", temperature_tag(t)},
                 {"empty_redraws", std::to_string(g.empty_redraws)},
                 {"shortfall", std::to_string(g.shortfall)},
                 {"window_truncations", std::to_string(g.window_truncations)}});
    say("generate: " + std::to_string(g.corpus.size()) + " trajectories at T=" + temperature_tag(t) + " -> " +
        target.string());
  }
}

void cmd_evaluate(const Settings& s, const Paths& p, bool baselines) {
  const RoadNetwork net = load_network(s.path(p.network, "network.txt"));
  const Corpus real = load_corpus(s.path(p.real, "train.txt"), net);
  const Corpus syn = load_corpus(s.path(p.syn, "generated.txt"), net);
  const EvalConfig ec = s.eval();
  const RegionMap rmap = build_region_map(net, ec.grid_width, ec.grid_height);
  const ConnectivityMatrix rcm = build_rcm(real, static_cast<int>(net.num_links()));
  MetricsReport rep = report(real, syn, net, rmap, rcm, ec, baselines);
  rep.config_hash = s.hash;
  rep.seed = s.seed;
  for (const auto& row : rep.rows) {
    for (double v : {row.query_error, row.jsd_od, row.jsd_trip_length, row.jsd_radius, row.jsd_gravity, row.connectivity}) {
      if (!std::isfinite(v)) throw NumericalError("evaluate: non-finite metric in row " + row.name);
    }
  }
  const fs::path out = s.path(p.out, "metrics.json");
  {
    auto f = open_out(out);
    write_report_json(f, rep);
  }
  fs::path csv = out;
  csv.replace_extension(".plot.csv");
  auto f = open_out(csv);
  f << "# " << s.stamp() << "\n";
  std::vector<Corpus> extra;
  std::vector<std::pair<std::string, const Corpus*>> corpora{{"real", &real}, {"synthetic", &syn}};
  if (baselines) {
    extra.push_back(random_walk_baseline(net, real, static_cast<int>(syn.size()), ec.seed));
    extra.push_back(mmc_baseline(real, static_cast<int>(net.num_links()), static_cast<int>(syn.size()), ec.seed));
    corpora.emplace_back("random_walk", &extra[0]);
    corpora.emplace_back("mmc", &extra[1]);
  }
  write_plot_csv(f, corpora, net);
  for (const auto& row : rep.rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%-12s QE %.4f OD %.4f LEN %.4f RAD %.4f GRAV %.4f CONN %.4f", row.name.c_str(),
                  row.query_error, row.jsd_od, row.jsd_trip_length, row.jsd_radius, row.jsd_gravity, row.connectivity);
    say(line);
  }
}

int env_int(const char* name, int fallback) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return fallback;
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw ConfigError(std::string(name) + " must be an integer");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Road-link trajectory generator"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("-o,--out-dir", out_dir, "Output directory (default $TRAJGEN_OUT_DIR or .)");
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--threads", threads, "Worker threads (default $TRAJGEN_THREADS or 1)");
  app.add_option("--set", overrides, "Override a config field, section.key=value");

  Paths paths;
  auto* synth = app.add_subcommand("synth-world", "Write a grid road network and a simulated corpus");

  auto* pre = app.add_subcommand("pretrain", "Pretrain the link-sequence model");
  bool no_gravity = false, no_rcm = false;
  std::string mode;
  std::optional<int> steps;
  pre->add_flag("--no-gravity", no_gravity, "Uniform trajectory sampling");
  pre->add_flag("--no-rcm", no_rcm, "Disable connectivity masking");
  pre->add_option("--mode", mode, "Boundary tokens: eot_only or bot_and_eot");
  pre->add_option("--steps", steps, "Optimizer steps");
  pre->add_option("--heldout", paths.heldout, "Held-out corpus");

  auto* prefs = app.add_subcommand("build-prefs", "Sample preference pairs from a checkpoint");
  auto* reward = app.add_subcommand("train-reward", "Train the reward model on preference pairs");
  reward->add_option("--prefs", paths.prefs, "Preference file");

  auto* fine = app.add_subcommand("finetune", "Fine-tune a checkpoint with PPO or supervised pairs");
  std::string how = "rltf";
  fine->add_option("--mode", how, "rltf or sft")->check(CLI::IsMember({"rltf", "sft"}));
  fine->add_option("--reward", paths.reward, "Reward checkpoint");
  fine->add_option("--prefs", paths.prefs, "Preference file");

  auto* gen = app.add_subcommand("generate", "Generate a synthetic corpus");
  std::optional<int> n;
  std::optional<double> temperature;
  std::vector<double> sweep;
  gen->add_option("-n,--count", n, "Trajectories to generate (0 = training corpus size)");
  gen->add_option("-t,--temperature", temperature, "Sampling temperature");
  gen->add_option("--temperature-sweep", sweep, "One corpus per temperature")->delimiter(',');

  auto* ev = app.add_subcommand("evaluate", "Compare a synthetic corpus with the real one");
  bool with_baselines = false;
  ev->add_flag("--with-baselines", with_baselines, "Add random-walk and Markov-chain rows");
  ev->add_option("--real", paths.real, "Real corpus");
  ev->add_option("--syn", paths.syn, "Synthetic corpus");

  for (auto* sub : {pre, prefs, reward, fine, gen}) {
    sub->add_option("--network", paths.network, "Road network file");
    sub->add_option("--train", paths.train, "Training corpus");
  }
  ev->add_option("--network", paths.network, "Road network file");
  for (auto* sub : {prefs, reward, fine, gen}) sub->add_option("--checkpoint", paths.checkpoint, "Policy checkpoint");
  for (auto* sub : {pre, prefs, reward, fine, gen, ev}) sub->add_option("--out", paths.out, "Output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  try {
    Settings s;
    s.cfg = default_config();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      const json file = json::parse(in, nullptr, false);
      if (file.is_discarded()) throw ConfigError("config " + config_path + " is not valid JSON");
      merge_into(s.cfg, file, "");
    }
    for (const auto& o : overrides) apply_override(s.cfg, o);
    if (seed) s.cfg["seed"] = *seed;
    if (no_gravity) s.cfg["pretrain"]["gravity_sampling"] = false;
    if (no_rcm) s.cfg["pretrain"]["rcm_masking"] = false;
    if (!mode.empty()) s.cfg["model"]["mode"] = mode;
    if (steps) s.cfg["pretrain"]["steps"] = *steps;
    if (n) s.cfg["generate"]["n"] = *n;
    if (temperature) s.cfg["generate"]["temperature"] = *temperature;
    if (!s.cfg["seed"].is_number_integer() || s.cfg["seed"].get<std::int64_t>() < 0) throw ConfigError("seed must be a non-negative integer");
    s.seed = s.cfg["seed"].get<std::uint64_t>();
    s.hash = hex64(fnv1a(s.cfg.dump()));

    const char* env_out = std::getenv("TRAJGEN_OUT_DIR");
    s.out_dir = !out_dir.empty() ? fs::path(out_dir) : (env_out && *env_out ? fs::path(env_out) : fs::path("."));
    s.threads = threads ? *threads : env_int("TRAJGEN_THREADS", 1);
    if (s.threads < 1) throw ConfigError("threads must be >= 1");

    // Validate every section up front so a bad field fails before any work.
    s.world();
    s.model(2);
    s.train();
    s.prefs();
    s.reward();
    s.ppo();
    s.sft();
    s.generate(s.mode());
    s.eval();

    if (*synth) cmd_synth_world(s);
    if (*pre) cmd_pretrain(s, paths);
    if (*prefs) cmd_build_prefs(s, paths);
    if (*reward) cmd_train_reward(s, paths);
    if (*fine) cmd_finetune(s, paths, how);
    if (*gen) cmd_generate(s, paths, sweep);
    if (*ev) cmd_evaluate(s, paths, with_baselines);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data_format);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
