// Command-line driver: dataset generation, filtering, training, evaluation,
// coefficient sweeps and the curriculum/mode ablation table.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bips/trainer.hpp"

namespace fs = std::filesystem;
using namespace bips;

namespace {

TrainConfig load_train_config(const std::string& path) {
  return path.empty() ? TrainConfig{} : TrainConfig::from_map(read_key_values(path));
}

struct Data {
  std::vector<TrainItem> train, heldout;
};

// Uses existing corpora when given, otherwise builds them under out/data.
Data prepare_data(const TrainConfig& cfg, std::uint64_t seed, const std::string& train_dir,
                  const std::string& heldout_dir, const fs::path& out, bool random_mask) {
  fs::path tdir = train_dir, hdir = heldout_dir;
  if (train_dir.empty() != heldout_dir.empty())
    throw ConfigError("--train and --heldout must be given together");
  if (train_dir.empty()) {
    std::cerr << "building corpora under " << (out / "data").string() << "\n";
    auto [t, h] = build_corpora(cfg, seed, out / "data");
    tdir = t.dir;
    hdir = h.dir;
  }
  const auto fc = feature_config(cfg);
  Data d;
  d.train = load_items(read_manifest(tdir), tdir, fc, random_mask, cfg);
  d.heldout = load_items(read_manifest(hdir), hdir, fc, false, cfg);
  return d;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const auto item = trim(text.substr(start, end - start));
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw ConfigError("");
    } catch (const std::exception&) {
      throw ConfigError("bad grid value '" + item + "'");
    }
    start = end + 1;
  }
  return out;
}

// Accepts a dataset directory or its manifest file.
fs::path data_root(const std::string& path) {
  return fs::is_directory(path) ? fs::path(path) : fs::path(path).parent_path();
}

void copy_record_files(const ManifestRecord& r, const fs::path& from, const fs::path& to) {
  std::vector<std::string> files = {r.dsl_path, r.image, r.abl_image};
  if (r.pres_image) files.push_back(*r.pres_image);
  for (const auto& f : files) {
    fs::create_directories((to / f).parent_path());
    fs::copy_file(from / f, to / f, fs::copy_options::overwrite_existing);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bips: perceptual-shaping training harness on synthetic charts"};
  app.require_subcommand(1);

  std::string config_path, out, data_dir, train_dir, heldout_dir, ckpt, policy, mode = "bips";
  std::string coef = "alpha", grid = "0,0.01,0.08", dsl;
  std::uint64_t seed = 1;
  int k = 8;
  double temperature = 0.85;

  auto* gen = app.add_subcommand("gen", "generate a dataset");
  gen->add_option("--config", config_path, "key=value dataset config");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out, "output directory")->required();

  auto* filter = app.add_subcommand("filter", "re-run difficulty filtering with a policy");
  filter->add_option("--policy", policy, "checkpoint; omit for the seeded base policy");
  filter->add_option("--k", k);
  filter->add_option("--temperature", temperature);
  filter->add_option("--seed", seed, "base policy seed when --policy is omitted");
  filter->add_option("--data", data_dir, "dataset directory or manifest")->required();
  filter->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train one mode");
  train->add_option("--config", config_path, "key=value training config");
  train->add_option("--mode", mode, "bips|grpo_only|joint|reversed|random_mask");
  train->add_option("--seed", seed);
  train->add_option("--train", train_dir, "training corpus directory");
  train->add_option("--heldout", heldout_dir, "held-out corpus directory");
  train->add_option("--out", out, "run directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", data_dir, "dataset directory or manifest")->required();

  auto* sweep = app.add_subcommand("sweep", "vary one constraint coefficient");
  sweep->add_option("--coef", coef, "alpha or beta");
  sweep->add_option("--grid", grid, "comma-separated values");
  sweep->add_option("--config", config_path);
  sweep->add_option("--seed", seed);
  sweep->add_option("--train", train_dir);
  sweep->add_option("--heldout", heldout_dir);
  sweep->add_option("--out", out)->required();

  auto* ablate = app.add_subcommand("ablate", "run every mode on shared corpora");
  bool all = false;
  ablate->add_flag("--all", all, "include the consistency-only and separation-only variants");
  ablate->add_option("--config", config_path);
  ablate->add_option("--seed", seed);
  ablate->add_option("--train", train_dir);
  ablate->add_option("--heldout", heldout_dir);
  ablate->add_option("--out", out)->required();

  auto* render = app.add_subcommand("render", "rasterize a chart file to PGM");
  render->add_option("--dsl", dsl)->required();
  render->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = config_path.empty() ? GenConfig{} : GenConfig::from_map(read_key_values(config_path));
      const auto m = build_dataset(cfg, seed, out);
      const auto& c = m.counters;
      std::printf("records=%zu generated=%zu validated=%zu filtered=%zu edited=%zu with_pres=%zu\n",
                  m.records.size(), c.generated, c.validated, c.filtered, c.edited, c.with_pres);
    } else if (*filter) {
      const auto m = read_manifest(data_dir);
      const auto root = data_root(data_dir);
      std::optional<MlpPolicy> p;
      if (policy.empty()) {
        p.emplace(base_policy(GenConfig{}, seed));
      } else {
        const auto c = load_checkpoint(policy);
        p.emplace(c.state.params, feature_config(c.cfg));
      }
      const auto kept = filter_manifest(m, root, *p, k, temperature);
      fs::create_directories(out);
      for (const auto& r : kept.records) copy_record_files(r, root, out);
      write_manifest(kept, out);
      std::printf("kept %zu of %zu\n", kept.records.size(), m.records.size());
    } else if (*train) {
      const auto cfg = load_train_config(config_path);
      const auto md = parse_mode(mode);
      fs::create_directories(out);
      const auto d = prepare_data(cfg, seed, train_dir, heldout_dir, out, md == Mode::random_mask);
      const auto res = run_curriculum(cfg, md, seed, d.train, d.heldout, fs::path(out));
      for (std::size_t i = 0; i < res.stage_reports.size(); ++i)
        std::printf("after plan entry %zu: accuracy=%.4f kl_to_abl=%.6f\n", i + 1,
                    res.stage_reports[i].accuracy, res.stage_reports[i].kl_to_abl);
      std::cout << res.report.to_json().dump(2) << "\n";
    } else if (*eval) {
      const auto c = load_checkpoint(ckpt);
      const auto items = load_items(read_manifest(data_dir), data_root(data_dir), feature_config(c.cfg), false, c.cfg);
      std::cout << evaluate(c.state.params, items).to_json().dump(2) << "\n";
    } else if (*sweep) {
      const auto cfg = load_train_config(config_path);
      fs::create_directories(out);
      const auto d = prepare_data(cfg, seed, train_dir, heldout_dir, out, false);
      const auto pts = sweep_coefficients(cfg, coef, parse_grid(grid), seed, d.train, d.heldout);
      const auto csv = sweep_csv(coef, pts);
      write_text(fs::path(out) / ("sweep_" + coef + ".csv"), csv);
      std::cout << csv;
    } else if (*ablate) {
      const auto cfg = load_train_config(config_path);
      fs::create_directories(out);
      if (train_dir.empty() && heldout_dir.empty()) {
        auto [t, h] = build_corpora(cfg, seed, fs::path(out) / "data");
        train_dir = t.dir.string();
        heldout_dir = h.dir.string();
      }
      const auto d = prepare_data(cfg, seed, train_dir, heldout_dir, out, false);
      const auto masked = prepare_data(cfg, seed, train_dir, heldout_dir, out, true);
      std::vector<std::pair<std::string, CurriculumResult>> rows;
      for (auto m : {Mode::bips, Mode::grpo_only, Mode::joint, Mode::reversed, Mode::random_mask}) {
        const auto& items = m == Mode::random_mask ? masked.train : d.train;
        rows.push_back({std::string(to_string(m)), run_curriculum(cfg, m, seed, items, d.heldout)});
      }
      if (all) {
        TrainConfig cons_only = cfg, sep_only = cfg;
        cons_only.beta = 0;
        sep_only.alpha = 0;
        rows.push_back({"cons_only", run_curriculum(cons_only, Mode::bips, seed, d.train, d.heldout)});
        rows.push_back({"sep_only", run_curriculum(sep_only, Mode::bips, seed, d.train, d.heldout)});
      }
      std::string csv = "variant,accuracy,kl_to_pres,kl_to_abl,shortcut_score\n";
      for (const auto& [name, res] : rows) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g\n", name.c_str(), res.report.accuracy,
                      res.report.kl_to_pres, res.report.kl_to_abl, res.report.shortcut_score);
        csv += buf;
      }
      write_text(fs::path(out) / "ablation.csv", csv);
      std::cout << csv;
    } else if (*render) {
      write_pgm(rasterize(parse_chart(read_text(dsl))), out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
