// Copyright 2026 The compt2i Authors.
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

// compt2i: command-line front end for the experiment pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "compt2i/io/png.hpp"
#include "compt2i/pipeline.hpp"

namespace {

using namespace compt2i;

struct CommonOptions {
  std::string config_path;
  std::string run_dir;
  std::vector<std::string> overrides;
  std::vector<std::string> flags;
  std::optional<std::uint64_t> seed;
  std::string theta_mode;
};

void AddCommon(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config_path, "experiment config (JSON)");
  app->add_option("-r,--run-dir", o.run_dir, "run directory (default: config out_dir)");
  app->add_option("--set", o.overrides, "override a config value, e.g. a2d.iterations=200");
  app->add_option("--flag", o.flags, "enable an ablation flag, e.g. no-caa");
  app->add_option("--seed", o.seed, "run seed");
  app->add_option("--theta-mode", o.theta_mode, "fixed | floor-min | min | mean | max");
}

ExperimentConfig BuildConfig(const CommonOptions& o) {
  std::vector<std::string> ov = o.overrides;
  for (const auto& f : o.flags) {
    std::string name = f;
    std::replace(name.begin(), name.end(), '-', '_');
    ov.push_back("flags." + name + "=true");
  }
  if (o.seed) ov.push_back("seed=" + std::to_string(*o.seed));
  if (!o.theta_mode.empty()) ov.push_back("theta.mode=\"" + o.theta_mode + "\"");
  return LoadExperimentConfig(o.config_path, ov);
}

fs::path RunDir(const CommonOptions& o, const ExperimentConfig& c) {
  return o.run_dir.empty() ? fs::path(c.out_dir) : fs::path(o.run_dir);
}

void PngSink(const fs::path& p, const Image& img) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  WritePng(p.string(), img);
}

std::vector<std::uint64_t> ParseSeeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(std::stoull(part));
  return out;
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

int Run(int argc, char** argv) {
  CLI::App app{"Compositional text-to-image synthesis on a synthetic attribute world"};
  app.require_subcommand(1);

  CommonOptions common;
  std::map<std::string, CLI::App*> stage_cmds;
  for (const auto& [name, help] :
       std::vector<std::pair<std::string, std::string>>{
           {"make-data", "build the dataset and the train/test split"},
           {"build-generator", "build the latent generator"},
           {"train-encoder", "train the train-role and eval-role dual encoders"},
           {"train-t2d", "train the text-to-direction module"},
           {"train-a2d", "train the attribute-to-direction module"},
           {"eval", "evaluate a run and write report.json plus figures"},
           {"run-all", "run every stage, resuming completed ones"}}) {
    auto* sub = app.add_subcommand(name, help);
    AddCommon(sub, common);
    stage_cmds[name] = sub;
  }
  int dump_png = 0;
  stage_cmds["make-data"]->add_option("--dump-png", dump_png,
                                      "also write this many real images as PNG");

  auto* synth = app.add_subcommand("synth", "synthesize the test split, or one caption");
  AddCommon(synth, common);
  std::string caption, out_png, report_path;
  std::uint64_t z_seed = 0;
  bool no_caa = false;
  synth->add_option("--caption", caption, "caption to synthesize");
  synth->add_option("--z-seed", z_seed, "seed of the latent draw for --caption");
  synth->add_flag("--no-caa", no_caa, "skip compositional attribute adjustment");
  synth->add_option("--out", out_png, "output PNG for --caption");
  synth->add_option("--report", report_path, "adjustment report JSON for --caption");

  auto* ablate = app.add_subcommand("ablate", "run variants over seeds and compare");
  AddCommon(ablate, common);
  std::string variants = "full,no-caa,no-contrastive,no-norm-penalty";
  std::string seeds_arg;
  ablate->add_option("--variants", variants, "comma-separated variants; flags joined by '+'");
  ablate->add_option("--seeds", seeds_arg, "comma-separated seeds (default: config seeds)");

  auto* extract = app.add_subcommand("extract", "print the attribute phrases of a caption");
  std::string extract_caption, schema_name = "faces-lite";
  extract->add_option("caption", extract_caption, "caption text")->required();
  extract->add_option("--schema", schema_name, "schema name");

  auto* norm_stats = app.add_subcommand("norm-stats", "latent distance statistics");
  AddCommon(norm_stats, common);
  std::size_t n_codes = 10000;
  norm_stats->add_option("--n-codes", n_codes, "number of latent draws");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (extract->parsed()) {
    const auto vocab = BuildVocabulary(SchemaByName(schema_name));
    Json out = Json::array();
    for (const auto& p : ExtractAttributes(Tokenize(extract_caption), vocab))
      out.push_back({{"phrase", p.text()}, {"slot", p.slot}, {"value", p.value}});
    std::cout << out.dump(2) << "\n";
    return 0;
  }

  const ExperimentConfig config = BuildConfig(common);

  if (norm_stats->parsed()) {
    const Generator g = BuildExperimentGenerator(config);
    const NormStats st = LatentNormStats(g, n_codes, config.seed);
    std::cout << Json({{"min", st.min},
                       {"mean", st.mean},
                       {"max", st.max},
                       {"n_distances", st.n_distances},
                       {"floor_min", std::floor(st.min)}})
                     .dump(2)
              << "\n";
    return 0;
  }

  if (ablate->parsed()) {
    const auto seeds = seeds_arg.empty() ? config.seeds : ParseSeeds(seeds_arg);
    const auto names = SplitList(variants);
    if (names.empty() || seeds.empty()) throw ConfigError("ablate needs variants and seeds");
    const fs::path root = RunDir(common, config);
    Json table = Json::object();
    std::vector<ExperimentReport> means;
    for (const auto& v : names) {
      Json runs = Json::array();
      ExperimentReport mean;
      for (auto s : seeds) {
        ExperimentConfig c = config;
        c.seed = s;
        c.flags = FlagsFromVariant(v);
        Pipeline p(c, root / v / ("seed-" + std::to_string(s)), &std::cerr, PngSink);
        const ExperimentReport r = p.RunAll();
        runs.push_back(ToJson(r));
        // Pooled counts across seeds.
        auto pool = [](Rate& into, const Rate& add) {
          into.correct += add.correct;
          into.total += add.total;
        };
        pool(mean.metrics.r_precision, r.metrics.r_precision);
        pool(mean.metrics.composition_accuracy, r.metrics.composition_accuracy);
        pool(mean.metrics.text_upper_bound, r.metrics.text_upper_bound);
        pool(mean.metrics.attribute_accuracy, r.metrics.attribute_accuracy);
        mean.metrics.frechet.value += r.metrics.frechet.value / seeds.size();
      }
      table[v] = runs;
      means.push_back(mean);
    }
    WriteTextFile(root / "comparison.json", table.dump(2));
    EmitComparisonChart(names, means, root / "comparison_chart.png", PngSink);
    std::cout << "wrote " << (root / "comparison.json").string() << "\n";
    return 0;
  }

  Pipeline p(config, RunDir(common, config), &std::cerr, PngSink);
  if (synth->parsed()) {
    if (caption.empty()) {
      p.SynthStage();
      return 0;
    }
    const Generator& g = p.BuildGeneratorStage();
    const Vocabulary vocab = BuildVocabulary(g.schema);
    Synthesizer syn{&g, p.generator_hash(), &p.TrainT2DStage(), &p.TrainA2DStage(), &vocab,
                    config.caa_magnitude};
    Rng rng(MixSeed(z_seed, "cli-synth"));
    const auto r = syn.Run(Tokenize(caption), SampleLatent(g, rng), !no_caa);
    if (!out_png.empty()) WritePng(out_png, r.image);
    Json report = r.report ? ToJson(*r.report) : Json({{"attributes", Json::array()}});
    report["read_attributes"] = AssignmentNames(g.schema, ReadAttributes(g, r.image));
    if (!report_path.empty()) WriteTextFile(report_path, report.dump(2));
    else std::cout << report.dump(2) << "\n";
    return 0;
  }
  if (stage_cmds["make-data"]->parsed()) {
    p.MakeData();
    if (dump_png > 0) {
      const auto& reals = p.reals();
      for (int i = 0; i < dump_png && i < static_cast<int>(reals.size()); ++i)
        PngSink(p.root() / "data" / "images" / (p.MakeData().dataset.records[i].id + ".png"),
                reals[i]);
    }
  } else if (stage_cmds["build-generator"]->parsed()) {
    p.BuildGeneratorStage();
  } else if (stage_cmds["train-encoder"]->parsed()) {
    p.TrainEncoderStage();
  } else if (stage_cmds["train-t2d"]->parsed()) {
    p.TrainT2DStage();
  } else if (stage_cmds["train-a2d"]->parsed()) {
    p.TrainA2DStage();
  } else if (stage_cmds["eval"]->parsed()) {
    std::cout << ToJson(p.EvalStage()).dump(2) << "\n";
  } else if (stage_cmds["run-all"]->parsed()) {
    std::cout << ToJson(p.RunAll()).dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return Run(argc, argv);
  } catch (const compt2i::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return compt2i::ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
