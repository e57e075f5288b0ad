// Command-line front end: synth, upsample, upsample-oracle, train, eval, ablate.

#include "pcup/pcup.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
using namespace pcup;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumeric = 4 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return kUsage;
    case ErrorKind::data: return kData;
    case ErrorKind::numeric: return kNumeric;
  }
  return kInternal;
}

std::string option_key(const CLI::Option* o) {
  std::string n = o->get_name(false, false);
  if (!o->get_lnames().empty()) n = o->get_lnames().front();
  return n;
}

/// Options that name output files; echoed but left out of the provenance hash
/// so that the same computation written to different paths hashes equally.
const std::set<std::string> kOutputKeys = {"output", "trace", "log", "checkpoint-out", "mesh-out", "report"};

/// Applies config-file entries to options the command line left unset.
void apply_config(CLI::App* cmd, const config::Entries& entries) {
  for (const auto& [key, value] : entries) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt || key == "config" || key == "help") {
      throw Error(ErrorKind::usage, "config", "unknown key '" + key + "' for command '" + cmd->get_name() + "'");
    }
    if (opt->count() > 0) continue;  // flags override the file
    opt->clear();
    std::string v = value;
    if (opt->get_type_size() == 0) {  // flag
      if (v == "1" || v == "yes" || v == "on") v = "true";
      if (v == "0" || v == "no" || v == "off") v = "false";
    }
    opt->add_result(v);
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw Error(ErrorKind::usage, "config", "key '" + key + "': " + e.what());
    }
  }
}

/// The effective configuration of a parsed command, in declaration order.
config::Entries effective(CLI::App* cmd, bool for_hash) {
  config::Entries out;
  out.emplace_back("command", cmd->get_name());
  for (const CLI::Option* o : cmd->get_options()) {
    const std::string key = option_key(o);
    if (key == "help" || key == "config") continue;
    if (for_hash && kOutputKeys.count(key)) continue;
    std::string value;
    if (o->count() > 0) {
      const auto& r = o->results();
      for (std::size_t i = 0; i < r.size(); ++i) value += (i ? "," : "") + r[i];
    } else {
      value = o->get_default_str();
      if (value.empty() && o->get_type_size() == 0) value = "false";
    }
    out.emplace_back(key, value);
  }
  return out;
}

struct Provenance {
  config::Entries entries;
  std::string hash;
  std::string comment() const { return "pcup " + entries.front().second + " config_hash=" + hash; }
};

Provenance echo(CLI::App* cmd) {
  Provenance p;
  p.entries = effective(cmd, false);
  p.hash = config::hash(effective(cmd, true));
  std::cout << "# effective config\n";
  for (const auto& [k, v] : p.entries) std::cout << "# " << k << "=" << v << '\n';
  std::cout << "# config_hash=" << p.hash << '\n';
  return p;
}

void write_text(const std::string& path, const std::string& text, const char* module) {
  std::ofstream out(path);
  if (!out) throw IoError(module, "cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError(module, "failed writing '" + path + "'");
}

// -- shared option groups ----------------------------------------------------------

struct PipelineFlags {
  double rate = 4.0;
  std::size_t k = 16;
  double step = 0.02;
  std::size_t iters = 10;
  std::string strategy = "grad-descent";
  std::size_t patch_size = 256;
  double overlap = 3.0;
  bool drop_original = false;
  bool no_refresh = false;
  std::size_t fps_seed = 0;
  double noise_tau = 0;
  std::uint64_t seed = 0;

  void add(CLI::App* c) {
    c->add_option("--rate", rate, "upsampling rate R (>= 1, non-integer allowed)")->check(CLI::Range(1.0, 1e6));
    c->add_option("--k", k, "neighbors for midpoint interpolation")->check(CLI::PositiveNumber);
    c->add_option("--step", step, "refinement step size in normalized patch units")->check(CLI::PositiveNumber);
    c->add_option("--iters", iters, "refinement iterations (0 returns the interpolated cloud)");
    c->add_option("--strategy", strategy, "grad-descent | normalized-projection | auto-offset");
    c->add_option("--patch-size", patch_size, "low-res points per patch")->check(CLI::PositiveNumber);
    c->add_option("--overlap", overlap, "patch overlap factor (>= 1)")->check(CLI::Range(1.0, 1e6));
    c->add_flag("--drop-original", drop_original, "keep only midpoints in the interpolated cloud");
    c->add_flag("--no-refresh", no_refresh, "do not re-interpolate features as points move");
    c->add_option("--fps-seed", fps_seed, "index of the first farthest-point sample");
    c->add_option("--noise-tau", noise_tau, "Gaussian noise level added to the input first")->check(CLI::NonNegativeNumber);
    c->add_option("--seed", seed, "random seed");
  }

  UpsampleConfig config() const {
    UpsampleConfig u;
    u.interpolation.rate = rate;
    u.interpolation.k_neighbors = k;
    u.interpolation.fps_seed = fps_seed;
    u.interpolation.keep_original = !drop_original;
    u.patch.patch_size = patch_size;
    u.patch.overlap_factor = overlap;
    u.refine.strategy = parse_strategy(strategy);
    u.refine.step = static_cast<real>(step);
    u.refine.iterations = iters;
    u.refine.refresh_features = !no_refresh;
    return u;
  }

  PointCloud noisy(const PointCloud& input) const {
    if (noise_tau == 0) return input;
    std::mt19937_64 rng(seed);
    return add_noise(input, static_cast<real>(noise_tau), rng);
  }
};

void write_trace(const RefineTrace& trace, const std::string& path, const Provenance& prov) {
  std::ostringstream s;
  s << "# " << prov.comment() << '\n';
  trace.write_csv(s);
  write_text(path, s.str(), "cli");
}

void report_warnings(const RefineTrace& trace) {
  for (const auto& w : trace.warnings) std::cerr << "warning: refinement: " << w << '\n';
}

nlohmann::ordered_json metrics_json(const MetricsReport& r, const ChamferOptions& opt, bool one_sided) {
  nlohmann::ordered_json j;
  j["cd"] = r.cd;
  j["hd"] = r.hd;
  if (r.p2f) j["p2f"] = *r.p2f;
  j["n_points"] = r.n_points;
  j["units"] = "model";
  nlohmann::ordered_json s;
  s["cd"] = 1e3 * static_cast<double>(r.cd);
  s["hd"] = 1e3 * static_cast<double>(r.hd);
  if (r.p2f) s["p2f"] = 1e3 * static_cast<double>(*r.p2f);
  j["scaled_1e3"] = s;
  j["conventions"] = {{"squared", opt.squared}, {"mean_of_directions", opt.mean_of_directions}, {"one_sided_hd", one_sided}};
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcup: arbitrary-rate point cloud upsampling by descending a learned point-to-point distance"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string config_path;

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", config_path, "flat key=value file; command-line flags override it")
        ->check(CLI::ExistingFile);
  };

  // synth
  auto* synth = app.add_subcommand("synth", "sample an analytic surface (and write its mesh)");
  std::string shape_name = "sphere", synth_out, mesh_out;
  std::size_t synth_n = 2048;
  std::uint64_t synth_seed = 0;
  bool no_mesh = false;
  add_config(synth);
  synth->add_option("--shape", shape_name, "sphere | torus | box | line");
  synth->add_option("--n", synth_n, "number of points")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("-o,--output", synth_out, "output cloud (.xyz or .ply)")->required();
  synth->add_option("--mesh-out", mesh_out, "output mesh (.off); defaults to the cloud path with .off");
  synth->add_flag("--no-mesh", no_mesh, "do not write the mesh");

  // upsample
  auto* up = app.add_subcommand("upsample", "upsample a cloud with a trained network");
  PipelineFlags up_flags;
  std::string up_in, up_out, up_ckpt, up_trace;
  add_config(up);
  up->add_option("-i,--input", up_in, "low-res cloud")->required();
  up->add_option("-o,--output", up_out, "output cloud")->required();
  up->add_option("--checkpoint", up_ckpt, "trained network")->required();
  up->add_option("--trace", up_trace, "write the refinement trace CSV here");
  up_flags.add(up);

  // upsample-oracle
  auto* upo = app.add_subcommand("upsample-oracle", "upsample guided by the exact distance to a ground-truth cloud");
  PipelineFlags upo_flags;
  std::string upo_in, upo_gt, upo_out, upo_trace;
  add_config(upo);
  upo->add_option("-i,--input", upo_in, "low-res cloud")->required();
  upo->add_option("--gt", upo_gt, "ground-truth cloud")->required();
  upo->add_option("-o,--output", upo_out, "output cloud")->required();
  upo->add_option("--trace", upo_trace, "write the refinement trace CSV here");
  upo_flags.add(upo);

  // train
  auto* tr = app.add_subcommand("train", "train the distance network");
  TrainConfig tc;
  std::string synthetic, dataset, tr_ckpt, tr_log, head = "distance", reg_input = "full", augment_list;
  std::size_t tr_patches = 1, tr_low_patch = 256;
  double jitter = tc.jitter_sigma, lr = tc.lr, lr_decay = tc.lr_decay;
  add_config(tr);
  tr->add_option("--synthetic", synthetic, "train on a synthetic shape: sphere | torus | box | line");
  tr->add_option("--dataset", dataset, "directory with low/*.xyz paired to high/*.xyz by file name");
  tr->add_option("--patches", tr_patches, "synthetic patch count")->check(CLI::PositiveNumber);
  tr->add_option("--low-patch-size", tr_low_patch, "low-res points per training patch")->check(CLI::PositiveNumber);
  tr->add_option("--epochs", tc.epochs)->check(CLI::PositiveNumber);
  tr->add_option("--batch-size", tc.batch_size)->check(CLI::PositiveNumber);
  tr->add_option("--lr", lr)->check(CLI::PositiveNumber);
  tr->add_option("--lr-decay", lr_decay)->check(CLI::Range(1e-12, 1.0));
  tr->add_option("--decay-every", tc.decay_every)->check(CLI::PositiveNumber);
  tr->add_option("--k", tc.k, "network neighborhood size")->check(CLI::PositiveNumber);
  tr->add_option("--d", tc.d, "feature width")->check(CLI::PositiveNumber);
  tr->add_option("--jitter", jitter, "query jitter sigma")->check(CLI::NonNegativeNumber);
  tr->add_option("--rate", tc.rate, "interpolation rate during training")->check(CLI::Range(1.0, 1e6));
  tr->add_option("--interp-k", tc.interp_k, "neighbors for midpoint interpolation")->check(CLI::PositiveNumber);
  tr->add_option("--head", head, "distance | offset");
  tr->add_option("--regressor-input", reg_input, "full | local-only | global-only");
  tr->add_option("--augment", augment_list, "comma list of perturb, rotate, scale");
  tr->add_option("--seed", tc.rng_seed, "random seed");
  tr->add_option("--checkpoint", tr_ckpt, "output checkpoint")->required();
  tr->add_option("--log", tr_log, "per-epoch CSV log");

  // eval
  auto* ev = app.add_subcommand("eval", "compute CD / HD / P2F");
  PipelineFlags ev_flags;
  std::string ev_pred, ev_gt, ev_mesh, ev_report, ev_input, ev_ckpt;
  bool squared = false, mean_dirs = false, one_sided = false;
  add_config(ev);
  ev->add_option("--pred", ev_pred, "predicted cloud (written here in pipe mode)");
  ev->add_option("--gt", ev_gt, "ground-truth cloud")->required();
  ev->add_option("--mesh", ev_mesh, "ground-truth mesh (.off) for P2F");
  ev->add_option("--report", ev_report, "also write the JSON report here");
  ev->add_flag("--squared", squared, "squared Chamfer distances");
  ev->add_flag("--mean-of-directions", mean_dirs, "average instead of sum the two Chamfer directions");
  ev->add_flag("--one-sided", one_sided, "Hausdorff from prediction to ground truth only");
  ev->add_option("--input", ev_input, "pipe mode: low-res cloud to upsample before evaluating");
  ev->add_option("--checkpoint", ev_ckpt, "pipe mode: trained network");
  ev_flags.add(ev);

  // ablate
  auto* ab = app.add_subcommand("ablate", "run a directional ablation study on synthetic data");
  ablation::Options ab_opt;
  std::string study = "refine-strategy", ab_out, shapes = "sphere,torus,box";
  double ab_step = ab_opt.refine.step;
  add_config(ab);
  ab->add_option("--study", study,
                 "prediction-content | network-input | refine-strategy | regressor-input | train-noise | all");
  ab->add_option("--shapes", shapes, "comma list of fixture shapes");
  ab->add_option("--train-patches", ab_opt.fixture.train_patches_per_shape, "training patches per shape")
      ->check(CLI::PositiveNumber);
  ab->add_option("--test-patches", ab_opt.fixture.test_patches_per_shape, "evaluation patches per shape")
      ->check(CLI::PositiveNumber);
  ab->add_option("--patch-size", ab_opt.fixture.low_patch_size, "low-res points per patch")->check(CLI::PositiveNumber);
  ab->add_option("--shape-points", ab_opt.fixture.low_points_per_shape, "low-res points sampled per shape")
      ->check(CLI::PositiveNumber);
  ab->add_option("--epochs", ab_opt.train.epochs)->check(CLI::PositiveNumber);
  ab->add_option("--batch-size", ab_opt.train.batch_size)->check(CLI::PositiveNumber);
  ab->add_option("--decay-every", ab_opt.train.decay_every)->check(CLI::PositiveNumber);
  ab->add_option("--k", ab_opt.train.k, "network neighborhood size")->check(CLI::PositiveNumber);
  ab->add_option("--d", ab_opt.train.d, "feature width")->check(CLI::PositiveNumber);
  ab->add_option("--step", ab_step, "refinement step size")->check(CLI::PositiveNumber);
  ab->add_option("--iters", ab_opt.refine.iterations, "refinement iterations")->check(CLI::PositiveNumber);
  ab->add_option("--seed", ab_opt.fixture.seed, "fixture and training seed");
  ab->add_flag("--reference", ab_opt.reference_row, "append an interpolation-only row");
  ab->add_option("-o,--output", ab_out, "CSV output (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    if (!config_path.empty()) apply_config(cmd, config::load(config_path));
    const Provenance prov = echo(cmd);

    if (cmd == synth) {
      const auto shape = fixtures::parse_shape(shape_name);
      const PointCloud cloud = fixtures::sample(shape, synth_n, synth_seed);
      io::write_cloud(cloud, synth_out, prov.comment());
      std::cout << "wrote " << cloud.size() << " points to " << synth_out << '\n';
      if (auto m = fixtures::mesh(shape); m && !no_mesh) {
        const std::string path = mesh_out.empty() ? fs::path(synth_out).replace_extension(".off").string() : mesh_out;
        io::write_mesh(*m, path);
        std::cout << "wrote mesh (" << m->faces.size() << " triangles) to " << path << '\n';
      }
      return kOk;
    }

    if (cmd == up) {
      auto params = std::make_shared<const NetworkParams>(load_params(up_ckpt));
      const PointCloud input = up_flags.noisy(io::read_cloud(up_in));
      const auto res = upsample_learned(input, params, up_flags.config());
      report_warnings(res.trace);
      io::write_cloud(res.output, up_out, prov.comment());
      if (!up_trace.empty()) write_trace(res.trace, up_trace, prov);
      std::cout << "wrote " << res.output.size() << " points to " << up_out << '\n';
      return kOk;
    }

    if (cmd == upo) {
      const PointCloud input = upo_flags.noisy(io::read_cloud(upo_in));
      const PointCloud gt = io::read_cloud(upo_gt);
      const auto res = upsample_oracle(input, gt, upo_flags.config());
      report_warnings(res.trace);
      io::write_cloud(res.output, upo_out, prov.comment());
      if (!upo_trace.empty()) write_trace(res.trace, upo_trace, prov);
      std::cout << "wrote " << res.output.size() << " points to " << upo_out << '\n';
      std::cout << "cd(interpolated, gt)=" << chamfer(res.interpolated, gt) << " cd(output, gt)=" << chamfer(res.output, gt)
                << '\n';
      return kOk;
    }

    if (cmd == tr) {
      if (synthetic.empty() == dataset.empty()) {
        throw Error(ErrorKind::usage, "train", "give exactly one of --synthetic or --dataset");
      }
      tc.jitter_sigma = static_cast<real>(jitter);
      tc.lr = static_cast<real>(lr);
      tc.lr_decay = static_cast<real>(lr_decay);
      tc.head = parse_head(head);
      tc.regressor_input = parse_regressor_input(reg_input);
      std::stringstream al(augment_list);
      for (std::string a; std::getline(al, a, ',');) {
        if (a == "perturb") {
          tc.augment.perturb = true;
        } else if (a == "rotate") {
          tc.augment.rotate = true;
        } else if (a == "scale") {
          tc.augment.scale = true;
        } else if (!a.empty()) {
          throw Error(ErrorKind::usage, "train", "unknown augmentation '" + a + "' (valid: perturb, rotate, scale)");
        }
      }
      const std::size_t rate = static_cast<std::size_t>(std::llround(tc.rate));
      std::vector<TrainSample> data;
      if (!synthetic.empty()) {
        data = fixtures::synthetic_dataset(fixtures::parse_shape(synthetic), tr_patches, tc.rng_seed, tr_low_patch, rate);
      } else {
        data = fixtures::load_dataset(dataset, tr_low_patch, rate);
      }
      std::cout << "training on " << data.size() << " patches\n";
      auto [params, log] = train(data, tc);
      for (const auto& e : log.epochs) {
        if (e.epoch == 0 || (e.epoch + 1) % 10 == 0 || e.epoch + 1 == log.epochs.size()) {
          std::cout << "epoch " << e.epoch << " loss " << e.mean_loss << " lr " << e.lr << '\n';
        }
      }
      save_params(params, tr_ckpt);
      write_text(tr_ckpt + ".cfg", "# " + prov.comment() + "\n" + config::render(prov.entries), "train");
      if (!tr_log.empty()) {
        std::ostringstream s;
        log.write_csv(s, prov.comment());
        write_text(tr_log, s.str(), "train");
      }
      std::cout << "wrote checkpoint " << tr_ckpt << '\n';
      return kOk;
    }

    if (cmd == ev) {
      const PointCloud gt = io::read_cloud(ev_gt);
      PointCloud pred;
      std::optional<real> tau;
      if (!ev_input.empty()) {
        if (ev_ckpt.empty()) throw Error(ErrorKind::usage, "eval", "pipe mode (--input) needs --checkpoint");
        auto params = std::make_shared<const NetworkParams>(load_params(ev_ckpt));
        const PointCloud input = ev_flags.noisy(io::read_cloud(ev_input));
        const auto res = upsample_learned(input, params, ev_flags.config());
        report_warnings(res.trace);
        pred = res.output;
        tau = static_cast<real>(ev_flags.noise_tau);
        if (!ev_pred.empty()) io::write_cloud(pred, ev_pred, prov.comment());
      } else {
        if (ev_pred.empty()) throw Error(ErrorKind::usage, "eval", "give --pred, or --input with --checkpoint");
        pred = io::read_cloud(ev_pred);
      }
      std::optional<TriMesh> mesh;
      if (!ev_mesh.empty()) mesh = io::read_mesh(ev_mesh);
      ChamferOptions co;
      co.squared = squared;
      co.mean_of_directions = mean_dirs;
      const auto report = evaluate_metrics(pred, gt, mesh ? &*mesh : nullptr, co, one_sided);
      auto j = metrics_json(report, co, one_sided);
      if (tau) j["noise_tau"] = *tau;
      j["config_hash"] = prov.hash;
      const std::string text = j.dump(2) + "\n";
      std::cout << text;
      if (!ev_report.empty()) write_text(ev_report, text, "eval");
      return kOk;
    }

    if (cmd == ab) {
      std::vector<ablation::Study> studies;
      if (study == "all") {
        studies.assign(ablation::kAllStudies.begin(), ablation::kAllStudies.end());
      } else {
        studies.push_back(ablation::parse_study(study));
      }
      ab_opt.fixture.shapes.clear();
      std::stringstream sl(shapes);
      for (std::string s; std::getline(sl, s, ',');) {
        if (!s.empty()) ab_opt.fixture.shapes.push_back(fixtures::parse_shape(s));
      }
      ab_opt.refine.step = static_cast<real>(ab_step);
      ab_opt.train.rng_seed = ab_opt.fixture.seed;
      ablation::Runner runner(ab_opt);
      std::ostringstream csv;
      for (std::size_t i = 0; i < studies.size(); ++i) {
        const auto table = runner.run(studies[i]);
        table.write_csv(csv, i == 0 ? prov.comment() : std::string{}, i == 0);
      }
      if (ab_out.empty()) {
        std::cout << csv.str();
      } else {
        write_text(ab_out, csv.str(), "ablate");
        std::cout << csv.str();
      }
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
