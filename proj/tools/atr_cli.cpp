// Copyright 2026 The atr Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// Command-line front end: synth, train, evaluate, retrieve, gradcheck.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "atr/atr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::string kebab(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

/// Flags mirroring the keys of a JSON config. Values resolve as
/// defaults < --config file < explicit flags.
class ConfigFlags {
 public:
  ConfigFlags(CLI::App& app, json defaults) : app_(&app), defaults_(std::move(defaults)) {
    app.add_option("--config", config_path_, "JSON config file with snake_case keys");
  }

  template <class T>
  ConfigFlags& add(const std::string& key, const std::string& help) {
    auto store = std::make_shared<T>();
    CLI::Option* opt = app_->add_option("--" + kebab(key), *store, help);
    entries_.push_back({key, opt, [store] { return json(*store); }});
    return *this;
  }

  json resolve() const {
    json cfg = defaults_;
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw atr::DataError("cannot open config '" + config_path_ + "'");
      json file;
      try {
        in >> file;
      } catch (const json::exception& e) {
        throw atr::ConfigError("config '" + config_path_ + "' is not valid JSON: " + e.what());
      }
      if (!file.is_object()) throw atr::ConfigError("config '" + config_path_ + "' must hold a JSON object");
      for (const auto& [k, v] : file.items()) {
        if (!cfg.contains(k)) throw atr::ConfigError("unknown config key '" + k + "' in " + config_path_);
        cfg[k] = v;
      }
    }
    for (const auto& e : entries_)
      if (e.option->count()) cfg[e.key] = e.value();
    return cfg;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* option;
    std::function<json()> value;
  };
  CLI::App* app_;
  json defaults_;
  std::string config_path_;
  std::vector<Entry> entries_;
};

template <class T>
T get(const json& cfg, const std::string& key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw atr::ConfigError("config key '" + key + "' has the wrong type: " + cfg.at(key).dump());
  }
}

std::string require_path(const json& cfg, const std::string& key) {
  auto v = get<std::string>(cfg, key);
  if (v.empty()) throw atr::ConfigError("--" + kebab(key) + " is required");
  return v;
}

fs::path manifest_path(const std::string& dataset) {
  fs::path p(dataset);
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw atr::DataError("cannot write '" + path.string() + "'");
}

void write_config(const fs::path& dir, const json& cfg) { write_text(dir / "config.json", cfg.dump(2) + "\n"); }

// --- synth -------------------------------------------------------------------

json synth_defaults() {
  const atr::SynthConfig d;
  return {{"n_items", d.n_items},       {"n_val", d.n_val},
          {"n_test", d.n_test},         {"latent_dim", d.latent_dim},
          {"audio_dim", d.audio_dim},   {"text_dim", d.text_dim},
          {"frames_min", d.frames_min}, {"frames_max", d.frames_max},
          {"words_min", d.words_min},   {"words_max", d.words_max},
          {"captions_per_item", d.captions_per_item},
          {"noise_sigma", d.noise_sigma},
          {"seed", d.seed},             {"out", ""}};
}

void add_synth_flags(ConfigFlags& f) {
  f.add<std::size_t>("n_items", "number of items")
      .add<std::size_t>("n_val", "items in the val split")
      .add<std::size_t>("n_test", "items in the test split")
      .add<std::size_t>("latent_dim", "shared latent dimension")
      .add<std::size_t>("audio_dim", "audio frame dimension")
      .add<std::size_t>("text_dim", "word vector dimension")
      .add<std::size_t>("frames_min", "minimum frames per clip")
      .add<std::size_t>("frames_max", "maximum frames per clip")
      .add<std::size_t>("words_min", "minimum words per caption")
      .add<std::size_t>("words_max", "maximum words per caption")
      .add<std::size_t>("captions_per_item", "captions per item")
      .add<double>("noise_sigma", "per-entry Gaussian noise")
      .add<std::uint64_t>("seed", "random seed")
      .add<std::string>("out", "output directory");
}

int cmd_synth(const json& cfg) {
  atr::SynthConfig sc;
  sc.n_items = get<std::size_t>(cfg, "n_items");
  sc.n_val = get<std::size_t>(cfg, "n_val");
  sc.n_test = get<std::size_t>(cfg, "n_test");
  sc.latent_dim = get<std::size_t>(cfg, "latent_dim");
  sc.audio_dim = get<std::size_t>(cfg, "audio_dim");
  sc.text_dim = get<std::size_t>(cfg, "text_dim");
  sc.frames_min = get<std::size_t>(cfg, "frames_min");
  sc.frames_max = get<std::size_t>(cfg, "frames_max");
  sc.words_min = get<std::size_t>(cfg, "words_min");
  sc.words_max = get<std::size_t>(cfg, "words_max");
  sc.captions_per_item = get<std::size_t>(cfg, "captions_per_item");
  sc.noise_sigma = get<double>(cfg, "noise_sigma");
  sc.seed = get<std::uint64_t>(cfg, "seed");
  const fs::path out = require_path(cfg, "out");
  const auto ds = atr::synth_dataset(sc);
  const auto manifest = atr::save_dataset(ds, out);
  write_config(out, cfg);
  const auto c = ds.counts();
  std::cout << "wrote " << manifest.string() << ": " << c.train << " train, " << c.val << " val, " << c.test
            << " test items, " << c.captions << " captions\n";
  return kOk;
}

// --- train -------------------------------------------------------------------

json train_defaults() {
  const atr::TrainConfig d;
  return {{"dataset", ""},
          {"pooling", atr::pooling_name(d.model.pooling)},
          {"dim", d.model.dim},
          {"clusters_text", d.model.clusters_text},
          {"clusters_audio", d.model.clusters_audio},
          {"margin", d.loss.margin},
          {"batch_size", d.loss.batch_size},
          {"lr", d.sgd.learning_rate},
          {"weight_decay", d.sgd.weight_decay},
          {"max_grad_norm", nullptr},
          {"epochs", d.epochs},
          {"patience", d.patience},
          {"caption_choice", "sample"},
          {"seed", d.seed},
          {"out", ""}};
}

void add_train_flags(ConfigFlags& f) {
  f.add<std::string>("dataset", "manifest.json or its directory")
      .add<std::string>("pooling", "mean | max | lstm | netvlad | netrvlad")
      .add<std::size_t>("dim", "shared embedding dimension")
      .add<std::size_t>("clusters_text", "VLAD clusters, text branch")
      .add<std::size_t>("clusters_audio", "VLAD clusters, audio branch")
      .add<double>("margin", "ranking loss margin")
      .add<std::size_t>("batch_size", "mini-batch size")
      .add<double>("lr", "learning rate")
      .add<double>("weight_decay", "L2 weight decay")
      .add<double>("max_grad_norm", "global gradient-norm clip")
      .add<std::size_t>("epochs", "maximum epochs")
      .add<std::size_t>("patience", "early-stopping patience in epochs, 0 disables")
      .add<std::string>("caption_choice", "sample | first")
      .add<std::uint64_t>("seed", "random seed")
      .add<std::string>("out", "output directory");
}

atr::TrainConfig train_config(const json& cfg, const atr::RetrievalDataset& ds) {
  atr::TrainConfig tc;
  tc.model.pooling = atr::parse_pooling(get<std::string>(cfg, "pooling"));
  tc.model.audio_dim = ds.audio_dim;
  tc.model.text_dim = ds.text_dim;
  tc.model.dim = get<std::size_t>(cfg, "dim");
  tc.model.clusters_text = get<std::size_t>(cfg, "clusters_text");
  tc.model.clusters_audio = get<std::size_t>(cfg, "clusters_audio");
  tc.loss.margin = get<double>(cfg, "margin");
  tc.loss.batch_size = get<std::size_t>(cfg, "batch_size");
  tc.sgd.learning_rate = get<double>(cfg, "lr");
  tc.sgd.weight_decay = get<double>(cfg, "weight_decay");
  if (!cfg.at("max_grad_norm").is_null()) tc.sgd.max_grad_norm = get<double>(cfg, "max_grad_norm");
  tc.epochs = get<std::size_t>(cfg, "epochs");
  tc.patience = get<std::size_t>(cfg, "patience");
  const auto choice = get<std::string>(cfg, "caption_choice");
  if (choice == "sample") {
    tc.caption_choice = atr::CaptionChoice::sample;
  } else if (choice == "first") {
    tc.caption_choice = atr::CaptionChoice::first;
  } else {
    throw atr::ConfigError("unknown caption choice '" + choice + "' (expected sample or first)");
  }
  tc.seed = get<std::uint64_t>(cfg, "seed");
  return tc;
}

int cmd_train(const json& cfg) {
  const fs::path out = require_path(cfg, "out");
  const auto ds = atr::load_dataset(manifest_path(require_path(cfg, "dataset")));
  const auto tc = train_config(cfg, ds);
  fs::create_directories(out);
  write_config(out, cfg);
  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
  json run_config = cfg;
  run_config.erase("out");
  const auto result = atr::train(ds, tc, run_config, [&](const atr::EpochLog& e) {
    log << atr::to_json(e).dump() << '\n';
    std::printf("epoch %4zu  loss %-10s  val R@1 t2a %5.1f  a2t %5.1f%s\n", e.epoch,
                e.loss ? std::to_string(*e.loss).c_str() : "-", e.validation.text_to_audio.r1,
                e.validation.audio_to_text.r1, e.improved ? "  *" : "");
  });
  log.close();
  atr::save_checkpoint(result.best, out / "checkpoint.ckpt");
  std::printf("best epoch %zu, checkpoint %s\n", result.best.epoch, (out / "checkpoint.ckpt").string().c_str());
  return kOk;
}

// --- evaluate ----------------------------------------------------------------

json evaluate_defaults() { return {{"checkpoint", ""}, {"dataset", ""}, {"split", "test"}, {"out", ""}}; }

void add_evaluate_flags(ConfigFlags& f) {
  f.add<std::string>("checkpoint", "checkpoint file")
      .add<std::string>("dataset", "manifest.json or its directory")
      .add<std::string>("split", "train | val | test")
      .add<std::string>("out", "directory for metrics.json and metrics.txt");
}

int cmd_evaluate(const json& cfg) {
  const auto split = atr::parse_split(get<std::string>(cfg, "split"));
  const auto ck = atr::load_checkpoint(require_path(cfg, "checkpoint"));
  const auto ds = atr::load_dataset(manifest_path(require_path(cfg, "dataset")));
  auto report = atr::evaluate_split(ck.params, ck.model, ds, split);
  report.config["checkpoint"] = cfg.at("checkpoint");
  report.config["dataset"] = cfg.at("dataset");
  const std::string table = atr::to_table(report);
  std::cout << table;
  const auto out = get<std::string>(cfg, "out");
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(fs::path(out) / "metrics.json", atr::to_json(report).dump(2) + "\n");
    write_text(fs::path(out) / "metrics.txt", table);
    write_config(out, cfg);
  }
  return kOk;
}

// --- retrieve ----------------------------------------------------------------

json retrieve_defaults() {
  return {{"checkpoint", ""}, {"dataset", ""}, {"split", "test"}, {"query", ""}, {"direction", "t2a"}, {"top_k", 10}};
}

void add_retrieve_flags(ConfigFlags& f) {
  f.add<std::string>("checkpoint", "checkpoint file")
      .add<std::string>("dataset", "manifest.json or its directory")
      .add<std::string>("split", "split holding the candidates")
      .add<std::string>("query", "item id (caption k as id#k) or an .emb file")
      .add<std::string>("direction", "t2a | a2t")
      .add<std::size_t>("top_k", "number of results");
}

const atr::EmbeddingSequence& find_query(const atr::RetrievalDataset& ds, const std::string& query,
                                         atr::Direction dir, atr::EmbeddingSequence& storage) {
  if (fs::path(query).extension() == ".emb" && fs::exists(query)) {
    storage = atr::read_embedding_file(query);
    return storage;
  }
  std::string id = query;
  std::size_t caption = 0;
  if (auto hash = query.find('#'); hash != std::string::npos) {
    id = query.substr(0, hash);
    try {
      caption = std::stoul(query.substr(hash + 1));
    } catch (const std::exception&) {
      throw atr::ConfigError("bad caption index in query '" + query + "'");
    }
  }
  for (const auto& it : ds.items) {
    if (it.id != id) continue;
    if (dir == atr::Direction::audio_to_text) return it.audio;
    if (caption >= it.captions.size()) {
      throw atr::DataError("item '" + id + "' has " + std::to_string(it.captions.size()) + " captions");
    }
    return it.captions[caption];
  }
  throw atr::DataError("query '" + query + "' is neither an .emb file nor an item id");
}

int cmd_retrieve(const json& cfg) {
  const auto dir = atr::parse_direction(get<std::string>(cfg, "direction"));
  const auto split = atr::parse_split(get<std::string>(cfg, "split"));
  const auto top_k = get<std::size_t>(cfg, "top_k");
  if (top_k == 0) throw atr::ConfigError("--top-k must be >= 1");
  const auto ck = atr::load_checkpoint(require_path(cfg, "checkpoint"));
  const auto ds = atr::load_dataset(manifest_path(require_path(cfg, "dataset")));
  atr::EmbeddingSequence storage;
  const auto& query = find_query(ds, require_path(cfg, "query"), dir, storage);

  std::vector<atr::Candidate> candidates;
  for (auto i : ds.indices(split)) {
    const auto& it = ds.items[i];
    if (dir == atr::Direction::text_to_audio) {
      candidates.push_back({it.id, &it.audio});
    } else {
      for (std::size_t k = 0; k < it.captions.size(); ++k)
        candidates.push_back({it.id + "#" + std::to_string(k), &it.captions[k]});
    }
  }
  const auto result = atr::retrieve(ck.params, ck.model, query, candidates, top_k, dir);
  if (result.truncated) {
    atr::warn("top-k " + std::to_string(top_k) + " exceeds " + std::to_string(candidates.size()) +
              " candidates; returning all");
  }
  for (std::size_t r = 0; r < result.hits.size(); ++r)
    std::printf("%4zu  %-24s %+.6f\n", r + 1, result.hits[r].id.c_str(), result.hits[r].score);
  return kOk;
}

// --- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(double tolerance, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  auto cases = atr::op_gradcheck_cases(seed);
  for (auto& c : atr::head_gradcheck_cases(seed + 4)) cases.push_back(std::move(c));
  bool ok = true;
  for (const auto& c : cases) {
    const auto o = atr::run_gradcheck_case(c, tolerance);
    ok = ok && o.passed;
    std::printf("%-20s max rel %.3e  max abs %.3e  %s\n", o.name.c_str(), o.result.max_rel_error,
                o.result.max_abs_error, o.passed ? "ok" : "FAIL");
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%zu cases, tolerance %.1e, %.2f s: %s\n", cases.size(), tolerance, secs, ok ? "ok" : "FAIL");
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-text retrieval: synthesize data, train, evaluate, retrieve"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  ConfigFlags synth_flags(*synth, synth_defaults());
  add_synth_flags(synth_flags);

  auto* train = app.add_subcommand("train", "train a model and save the best checkpoint");
  ConfigFlags train_flags(*train, train_defaults());
  add_train_flags(train_flags);

  auto* evaluate = app.add_subcommand("evaluate", "compute R@K, MedR and MnR on a split");
  ConfigFlags evaluate_flags(*evaluate, evaluate_defaults());
  add_evaluate_flags(evaluate_flags);

  auto* retrieve = app.add_subcommand("retrieve", "rank candidates for one query");
  ConfigFlags retrieve_flags(*retrieve, retrieve_defaults());
  add_retrieve_flags(retrieve_flags);

  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  double tolerance = 1e-4;
  std::uint64_t gc_seed = 7;
  gradcheck->add_option("--tolerance", tolerance, "maximum relative error")->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "input seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  atr::set_warning_sink([](const std::string& m) { std::cerr << "warning: " << m << '\n'; });
  try {
    if (*synth) return cmd_synth(synth_flags.resolve());
    if (*train) return cmd_train(train_flags.resolve());
    if (*evaluate) return cmd_evaluate(evaluate_flags.resolve());
    if (*retrieve) return cmd_retrieve(retrieve_flags.resolve());
    if (*gradcheck) return cmd_gradcheck(tolerance, gc_seed);
  } catch (const atr::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const atr::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const atr::DomainError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
