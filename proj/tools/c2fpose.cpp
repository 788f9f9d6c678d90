#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "c2fpose/harness.hpp"

namespace fs = std::filesystem;

namespace {

std::string out_root() {
  const char* env = std::getenv("C2FPOSE_OUT_ROOT");
  return env && *env ? std::string(env) : std::string(".");
}

std::string resolve_out(const std::string& flag_value, const std::string& leaf) {
  if (!flag_value.empty()) return flag_value;
  return (fs::path(out_root()) / leaf).string();
}

void require_flag(const std::string& value, const std::string& flag) {
  if (value.empty()) throw c2fpose::ConfigError("missing " + flag);
}

std::string strip_wrapping(std::string v, char open, char close) {
  if (v.size() >= 2 && v.front() == open && v.back() == close) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

/// Turns key=value lines into --key=value tokens. Unknown keys surface later
/// as unrecognized flags.
std::vector<std::string> load_config_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw c2fpose::IoError("cannot open config file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = CLI::detail::trim_copy(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw c2fpose::ParseError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = CLI::detail::trim_copy(t.substr(0, eq));
    std::string value = CLI::detail::trim_copy(t.substr(eq + 1));
    if (key == "config") {
      throw c2fpose::ConfigError(path + ":" + std::to_string(lineno) +
                                 ": config files cannot nest --config");
    }
    value = strip_wrapping(std::move(value), '"', '"');
    value = strip_wrapping(std::move(value), '\'', '\'');
    value = strip_wrapping(std::move(value), '[', ']');  // serialized lists
    tokens.push_back("--" + key + "=" + value);
  }
  return tokens;
}

/// Splices --config file contents in right after the subcommand so that
/// explicitly passed flags land later and win under the take-last policy.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i < args.size();) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      args.erase(args.begin() + i, args.begin() + i + 2);
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + i);
    } else {
      ++i;
    }
  }
  if (config_path.empty()) return args;
  const std::vector<std::string> tokens = load_config_tokens(config_path);
  const std::size_t at = (!args.empty() && args[0][0] != '-') ? 1 : 0;
  args.insert(args.begin() + at, tokens.begin(), tokens.end());
  return args;
}

/// Every run records the resolved settings next to its outputs; the file is
/// itself a valid --config input, so a run can be reproduced from it.
void write_snapshot(CLI::App& sub, const std::string& snapshot_dir,
                    const std::string& resolved_out) {
  fs::create_directories(snapshot_dir);
  if (auto* out_opt = sub.get_option_no_throw("--out");
      out_opt && out_opt->empty() && !resolved_out.empty()) {
    out_opt->add_result(resolved_out);  // record the defaulted output location
  }
  const std::string path = (fs::path(snapshot_dir) / (sub.get_name() + "_config.txt")).string();
  std::ofstream out(path);
  if (!out) throw c2fpose::IoError("cannot write config snapshot: " + path);
  std::istringstream body(sub.config_to_str(true, false));
  std::string line;
  while (std::getline(body, line)) {
    if (line.rfind("config=", 0) == 0 || line.rfind("help=", 0) == 0) continue;
    out << line << "\n";
  }
}

void attach_config_support(CLI::App& sub, std::string& config_path) {
  sub.option_defaults()->always_capture_default(true)->multi_option_policy(
      CLI::MultiOptionPolicy::TakeLast);
  // Consumed before CLI11 ever parses; registered so it shows up in help.
  sub.add_option("--config", config_path, "key=value config file (flags win)");
}

struct ModelFlags {
  int token_dim = 256;
  int layers = 6;
  int heads = 4;
  int mlp_hidden = 256;
  double dropout = 0.1;
  int head_hidden = 1024;
  std::string backbone = "full";
  std::uint64_t model_seed = 1;

  void attach(CLI::App& sub) {
    sub.add_option("--token-dim", token_dim, "transformer token width");
    sub.add_option("--layers", layers, "encoder/decoder layers per branch");
    sub.add_option("--heads", heads, "attention heads");
    sub.add_option("--mlp-hidden", mlp_hidden, "transformer MLP hidden width");
    sub.add_option("--dropout", dropout, "training dropout probability");
    sub.add_option("--head-hidden", head_hidden, "regressor head hidden width");
    sub.add_option("--backbone", backbone, "backbone preset (tiny|desk|full)");
    sub.add_option("--model-seed", model_seed, "parameter initialization seed");
  }

  c2fpose::ModelConfig to_config(int num_scenes, int k_x, int k_q) const {
    c2fpose::ModelConfig mc;
    mc.num_scenes = num_scenes;
    mc.token_dim = token_dim;
    mc.layers = layers;
    mc.heads = heads;
    mc.mlp_hidden = mlp_hidden;
    mc.dropout = dropout;
    mc.k_x = k_x;
    mc.k_q = k_q;
    mc.head_hidden = head_hidden;
    mc.backbone = backbone;
    mc.validate();
    return mc;
  }
};

struct LoadedRun {
  c2fpose::LoadedCheckpoint<double> checkpoint;
  std::map<int, c2fpose::CentroidSet<double>> sets;
};

LoadedRun load_run(const std::string& checkpoint, const std::string& centroids) {
  require_flag(checkpoint, "--checkpoint");
  require_flag(centroids, "--centroids");
  LoadedRun run;
  run.checkpoint = c2fpose::load_checkpoint<double>(checkpoint);
  run.sets = c2fpose::load_centroid_sets<double>(centroids);
  const std::uint64_t hash = c2fpose::fnv1a64(c2fpose::format_centroid_sets(run.sets));
  if (hash != run.checkpoint.meta.centroid_hash) {
    throw c2fpose::ConfigError("--centroids file does not match the checkpoint (hash " +
                               std::to_string(hash) + " vs " +
                               std::to_string(run.checkpoint.meta.centroid_hash) + ")");
  }
  return run;
}

c2fpose::AugmentationConfig eval_augment(int input_size, int resize) {
  c2fpose::AugmentationConfig aug;
  aug.crop = input_size;
  aug.resize_short = resize > 0 ? resize : input_size;
  return aug;
}

int run(int argc, char** argv) {
  CLI::App app{"coarse-to-fine multi-scene camera pose regression"};
  app.require_subcommand(1);
  std::string config_path;  // shared display-only slot; consumed pre-parse

  // --- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
  attach_config_support(*synth, config_path);
  int sy_scenes = 3, sy_per_scene = 64, sy_size = 64;
  std::uint64_t sy_seed = 1;
  std::string sy_out;
  synth->add_option("--scenes", sy_scenes, "number of scenes");
  synth->add_option("--per-scene", sy_per_scene, "images per scene");
  synth->add_option("--size", sy_size, "square image size in pixels");
  synth->add_option("--seed", sy_seed, "generator seed");
  synth->add_option("--out", sy_out, "output directory");
  synth->callback([&] {
    const std::string out = resolve_out(sy_out, "synth");
    write_snapshot(*synth, out, out);
    const c2fpose::Dataset ds = c2fpose::generate_synthetic(sy_scenes, sy_per_scene, sy_size,
                                                            sy_seed, out);
    std::cout << "wrote " << ds.samples.size() << " samples across " << ds.num_scenes()
              << " scenes to " << out << "\n";
  });

  // --- cluster -------------------------------------------------------------
  auto* cluster = app.add_subcommand("cluster", "build per-scene pose centroids");
  attach_config_support(*cluster, config_path);
  std::string cl_manifest, cl_out;
  int cl_kx = 4, cl_kq = 4;
  std::uint64_t cl_seed = 0;
  cluster->add_option("--manifest", cl_manifest, "dataset manifest");
  cluster->add_option("--kx", cl_kx, "position clusters per scene");
  cluster->add_option("--kq", cl_kq, "orientation clusters per scene");
  cluster->add_option("--seed", cl_seed, "k-means seed");
  cluster->add_option("--out", cl_out, "centroid file path");
  cluster->callback([&] {
    require_flag(cl_manifest, "--manifest");
    const std::string out =
        cl_out.empty() ? (fs::path(out_root()) / "centroids.txt").string() : cl_out;
    const fs::path dir = fs::path(out).parent_path();
    write_snapshot(*cluster, dir.empty() ? "." : dir.string(), out);
    const c2fpose::Dataset ds = c2fpose::load_dataset(cl_manifest);
    std::vector<int> ids;
    std::vector<c2fpose::Pose<double>> poses;
    for (const auto& s : ds.samples) {
      ids.push_back(s.scene_id);
      poses.push_back(s.pose);
    }
    const auto sets = c2fpose::build_centroid_sets(ids, poses, cl_kx, cl_kq, cl_seed);
    c2fpose::save_centroid_sets(sets, out);
    std::cout << "wrote centroids for " << sets.size() << " scenes to " << out << "\n";
  });

  // --- train ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a multi-scene pose regressor");
  attach_config_support(*train_cmd, config_path);
  ModelFlags tr_model;
  tr_model.attach(*train_cmd);
  std::string tr_manifest, tr_centroids, tr_out;
  c2fpose::TrainConfig tr;
  tr.epochs = 10;
  int tr_resize = 0;
  train_cmd->add_option("--manifest", tr_manifest, "dataset manifest");
  train_cmd->add_option("--centroids", tr_centroids, "centroid file from `cluster`");
  train_cmd->add_option("--out", tr_out, "output directory");
  train_cmd->add_option("--epochs", tr.epochs, "training epochs");
  train_cmd->add_option("--batch", tr.batch_size, "batch size");
  train_cmd->add_option("--lr", tr.lr, "initial learning rate");
  train_cmd->add_option("--halve-every", tr.halve_every,
                        "halve the learning rate every this many epochs (0 disables)");
  train_cmd->add_option("--seed", tr.seed, "shuffle/augmentation/dropout seed");
  train_cmd->add_option("--checkpoint-interval", tr.checkpoint_interval,
                        "epochs between checkpoints (0 = final only)");
  train_cmd->add_option("--grad-clip", tr.grad_clip, "global gradient-norm limit (0 disables)");
  train_cmd->add_option("--resize", tr_resize, "resize short edge before crop (0 = crop size)");
  train_cmd->add_option("--brightness", tr.augment.brightness, "brightness jitter range");
  train_cmd->add_option("--contrast", tr.augment.contrast, "contrast jitter range");
  train_cmd->add_option("--saturation", tr.augment.saturation, "saturation jitter range");
  train_cmd->callback([&] {
    require_flag(tr_manifest, "--manifest");
    require_flag(tr_centroids, "--centroids");
    const std::string out = resolve_out(tr_out, "train");
    write_snapshot(*train_cmd, out, out);
    const c2fpose::Dataset ds = c2fpose::load_dataset(tr_manifest);
    const auto sets = c2fpose::load_centroid_sets<double>(tr_centroids);
    if (sets.empty()) throw c2fpose::EmptyInputError("centroid file has no scenes");
    const auto& first = sets.begin()->second;
    const c2fpose::ModelConfig mc =
        tr_model.to_config(static_cast<int>(sets.size()), first.kx(), first.kq());
    c2fpose::PoseModel<double> model(mc, tr_model.model_seed);
    c2fpose::LossParams<double> loss_params;
    tr.k_x = mc.k_x;
    tr.k_q = mc.k_q;
    const int input = model.backbone().spec().input_h;
    tr.augment.crop = input;
    tr.augment.resize_short = tr_resize > 0 ? tr_resize : input;
    tr.out_dir = out;
    const std::string log_path = (fs::path(out) / "train_log.txt").string();
    std::ofstream log(log_path);
    if (!log) throw c2fpose::IoError("cannot write training log: " + log_path);
    const c2fpose::TrainResult result = c2fpose::train(model, loss_params, ds, sets, tr, log);
    std::cout << "trained " << result.steps << " steps over " << result.epochs_run
              << " epochs; final checkpoint " << result.final_checkpoint << "\n";
  });

  // --- eval ----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  attach_config_support(*eval_cmd, config_path);
  std::string ev_manifest, ev_centroids, ev_checkpoint, ev_out;
  int ev_resize = 0;
  eval_cmd->add_option("--manifest", ev_manifest, "dataset manifest");
  eval_cmd->add_option("--centroids", ev_centroids, "centroid file from `cluster`");
  eval_cmd->add_option("--checkpoint", ev_checkpoint, "trained checkpoint");
  eval_cmd->add_option("--resize", ev_resize, "resize short edge before crop (0 = crop size)");
  eval_cmd->add_option("--out", ev_out, "output directory");
  eval_cmd->callback([&] {
    require_flag(ev_checkpoint, "--checkpoint");
    require_flag(ev_manifest, "--manifest");
    const std::string out = resolve_out(ev_out, "eval");
    write_snapshot(*eval_cmd, out, out);
    LoadedRun run = load_run(ev_checkpoint, ev_centroids);
    const c2fpose::Dataset ds = c2fpose::load_dataset(ev_manifest);
    const int input = run.checkpoint.model->backbone().spec().input_h;
    const c2fpose::EvalReport report =
        c2fpose::evaluate(*run.checkpoint.model, ds, run.sets, eval_augment(input, ev_resize));
    const std::string report_path = (fs::path(out) / "eval_report.txt").string();
    std::ofstream file(report_path);
    if (!file) throw c2fpose::IoError("cannot write report: " + report_path);
    file << report.to_text();
    std::cout << report.to_text();
  });

  // --- attend --------------------------------------------------------------
  auto* attend = app.add_subcommand("attend", "export attention heatmaps and scene ranking");
  attach_config_support(*attend, config_path);
  std::string at_manifest, at_centroids, at_checkpoint, at_out;
  int at_limit = 4, at_resize = 0;
  attend->add_option("--manifest", at_manifest, "dataset manifest");
  attend->add_option("--centroids", at_centroids, "centroid file from `cluster`");
  attend->add_option("--checkpoint", at_checkpoint, "trained checkpoint");
  attend->add_option("--limit", at_limit, "number of images to export");
  attend->add_option("--resize", at_resize, "resize short edge before crop (0 = crop size)");
  attend->add_option("--out", at_out, "output directory");
  attend->callback([&] {
    require_flag(at_checkpoint, "--checkpoint");
    require_flag(at_manifest, "--manifest");
    if (at_limit < 1) throw c2fpose::ConfigError("--limit must be >= 1");
    const std::string out = resolve_out(at_out, "attention");
    write_snapshot(*attend, out, out);
    LoadedRun run = load_run(at_checkpoint, at_centroids);
    const c2fpose::Dataset ds = c2fpose::load_dataset(at_manifest);
    std::vector<c2fpose::Image<double>> images;
    for (const auto& s : ds.samples) {
      if (static_cast<int>(images.size()) >= at_limit) break;
      images.push_back(c2fpose::read_ppm<double>(s.image_path));
    }
    const auto table =
        c2fpose::make_centroid_table<double>(run.sets, run.checkpoint.model->config());
    const int input = run.checkpoint.model->backbone().spec().input_h;
    const auto written = c2fpose::export_attention(*run.checkpoint.model, table, images,
                                                   eval_augment(input, at_resize), out);
    std::cout << "wrote " << written.size() << " files to " << out << "\n";
  });

  // --- bench ---------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "measure forward runtime vs scene count");
  attach_config_support(*bench, config_path);
  ModelFlags be_model;
  be_model.attach(*bench);
  std::vector<int> be_counts = {4, 10, 100, 1000};
  int be_trials = 5;
  std::string be_out;
  bench->add_option("--scene-counts", be_counts, "scene counts to benchmark")->delimiter(',');
  bench->add_option("--trials", be_trials, "timed forwards per configuration");
  bench->add_option("--out", be_out, "output directory");
  bench->callback([&] {
    const std::string out = resolve_out(be_out, "bench");
    write_snapshot(*bench, out, out);
    const c2fpose::ModelConfig base = be_model.to_config(1, 1, 1);
    const auto rows = c2fpose::bench_scaling<double>(base, be_counts, be_trials);
    const std::string table = c2fpose::bench_table(rows);
    const std::string path = (fs::path(out) / "bench.txt").string();
    std::ofstream file(path);
    if (!file) throw c2fpose::IoError("cannot write bench table: " + path);
    file << table;
    std::cout << table;
  });

  try {
    const std::vector<std::string> args = expand_config(argc, argv);
    std::vector<const char*> cargs;
    cargs.push_back(argv[0]);
    for (const std::string& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage errors
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;  // validation/runtime failures
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
