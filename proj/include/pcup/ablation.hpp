// Directional ablation studies on a synthetic fixture: each study trains the
// variants it compares on the same training patches and seed, then evaluates
// them on held-out patches cut from independent samplings.
#pragma once

#include "pcup/fixtures.hpp"
#include "pcup/metrics.hpp"
#include "pcup/pipeline.hpp"
#include "pcup/training.hpp"

#include <map>
#include <ostream>

namespace pcup::ablation {

enum class Study { prediction_content, network_input, refine_strategy, regressor_input, train_noise };

inline constexpr std::array<Study, 5> kAllStudies = {Study::prediction_content, Study::network_input,
                                                     Study::refine_strategy, Study::regressor_input,
                                                     Study::train_noise};

inline const char* to_string(Study s) {
  switch (s) {
    case Study::prediction_content: return "prediction-content";
    case Study::network_input: return "network-input";
    case Study::refine_strategy: return "refine-strategy";
    case Study::regressor_input: return "regressor-input";
    case Study::train_noise: return "train-noise";
  }
  return "?";
}

inline Study parse_study(const std::string& s) {
  for (Study st : kAllStudies) {
    if (s == to_string(st)) return st;
  }
  throw Error(ErrorKind::usage, "ablate",
              "unknown study '" + s +
                  "' (valid: prediction-content, network-input, refine-strategy, regressor-input, train-noise)");
}

struct FixtureConfig {
  std::vector<fixtures::Shape> shapes{fixtures::Shape::sphere, fixtures::Shape::torus, fixtures::Shape::box};
  std::size_t train_patches_per_shape = 4;
  std::size_t test_patches_per_shape = 2;
  std::size_t low_patch_size = 256;
  std::size_t rate = 4;
  /// Low-res points sampled per shape; patches are cut from this sampling.
  std::size_t low_points_per_shape = 1024;
  std::uint64_t seed = 0;
};

struct EvalPatch {
  TrainSample sample;
  std::optional<TriMesh> mesh;  // ground-truth surface in the patch frame
};

struct Fixture {
  std::vector<TrainSample> train;
  std::vector<EvalPatch> test;
};

inline Fixture make_fixture(const FixtureConfig& cfg) {
  if (cfg.shapes.empty()) throw ValidationError("ablate", "fixture needs at least one shape");
  Fixture fx;
  const std::size_t n_low = cfg.low_points_per_shape, n_high = cfg.low_points_per_shape * cfg.rate;
  for (std::size_t s = 0; s < cfg.shapes.size(); ++s) {
    const auto shape = cfg.shapes[s];
    // Four independent samplings per shape: train low/high, test low/high.
    const std::uint64_t base = cfg.seed * 1000 + s * 10;
    const auto train_pairs = fixtures::make_patch_pairs(fixtures::sample(shape, n_low, base + 1),
                                                        fixtures::sample(shape, n_high, base + 2),
                                                        cfg.train_patches_per_shape, cfg.low_patch_size, cfg.rate);
    for (const auto& fp : train_pairs) fx.train.push_back(fp.sample);
    const auto surface = fixtures::mesh(shape);
    const auto test_pairs = fixtures::make_patch_pairs(fixtures::sample(shape, n_low, base + 3),
                                                       fixtures::sample(shape, n_high, base + 4),
                                                       cfg.test_patches_per_shape, cfg.low_patch_size, cfg.rate);
    for (const auto& fp : test_pairs) {
      EvalPatch ep;
      ep.sample = fp.sample;
      if (surface) ep.mesh = fp.transform.apply(*surface);
      fx.test.push_back(std::move(ep));
    }
  }
  return fx;
}

struct Options {
  FixtureConfig fixture;
  /// Base schedule shared by every trained variant; studies override single fields.
  TrainConfig train;
  RefineConfig refine;
  /// Step sizes tried for the auto-regressive offset baseline (best one reported).
  std::vector<real> offset_steps{real(0.1), real(0.25), real(0.5)};
  /// Append an unrefined interpolation row to every table.
  bool reference_row = false;

  Options() {
    train.batch_size = 1;
    train.epochs = 30;
    train.decay_every = 10;
  }
};

struct Row {
  std::string variant;
  real cd = 0;
  real hd = 0;
  std::optional<real> p2f;
  std::string note;
};

struct Table {
  Study study;
  std::vector<Row> rows;

  const Row& row(const std::string& variant) const {
    for (const auto& r : rows) {
      if (r.variant == variant) return r;
    }
    throw ValidationError("ablate", "no row '" + variant + "' in study " + to_string(study));
  }

  /// CSV with metrics in model units and scaled by 1e3.
  void write_csv(std::ostream& out, const std::string& comment = {}, bool header = true) const {
    if (!comment.empty()) out << "# " << comment << '\n';
    if (header) out << "study,variant,cd,hd,p2f,cd_1e3,hd_1e3,p2f_1e3,note\n";
    char buf[256];
    for (const auto& r : rows) {
      const double p = r.p2f ? static_cast<double>(*r.p2f) : -1.0;
      std::snprintf(buf, sizeof buf, "%s,%s,%.9g,%.9g,", to_string(study), r.variant.c_str(), static_cast<double>(r.cd),
                    static_cast<double>(r.hd));
      out << buf;
      if (r.p2f) {
        std::snprintf(buf, sizeof buf, "%.9g", p);
        out << buf;
      }
      std::snprintf(buf, sizeof buf, ",%.6f,%.6f,", 1e3 * static_cast<double>(r.cd), 1e3 * static_cast<double>(r.hd));
      out << buf;
      if (r.p2f) {
        std::snprintf(buf, sizeof buf, "%.6f", 1e3 * p);
        out << buf;
      }
      out << ',' << r.note << '\n';
    }
  }
};

/// Builds the per-patch refinement model from the interpolated cloud and the
/// low-res input of one evaluation patch.
using VariantModel = std::function<PatchModel(const PointCloud& interpolated, const PointCloud& low)>;

class Runner {
 public:
  explicit Runner(Options opt) : opt_(std::move(opt)), fixture_(make_fixture(opt_.fixture)) {}

  const Fixture& fixture() const { return fixture_; }
  const Options& options() const { return opt_; }

  /// Trains (once) and caches the variant named `key`.
  std::shared_ptr<const NetworkParams> model(const std::string& key, const TrainConfig& cfg) {
    auto it = models_.find(key);
    if (it != models_.end()) return it->second;
    auto [params, log] = train(fixture_.train, cfg);
    logs_[key] = std::move(log);
    return models_[key] = std::make_shared<const NetworkParams>(std::move(params));
  }

  const std::map<std::string, TrainLog>& logs() const { return logs_; }

  /// Mean metrics over the evaluation patches after refining with `model`.
  Row evaluate(const std::string& variant, const VariantModel& model, const RefineConfig& refine) const {
    Row row;
    row.variant = variant;
    double cd = 0, hd = 0, p2f = 0;
    std::size_t with_mesh = 0;
    for (const auto& ep : fixture_.test) {
      const PointCloud interp = interpolate(ep.sample.low);
      const PointCloud out = refine.iterations == 0 ? interp : refine_patch(interp, model(interp, ep.sample.low), refine);
      cd += static_cast<double>(chamfer(out, ep.sample.gt));
      hd += static_cast<double>(hausdorff(out, ep.sample.gt));
      if (ep.mesh) {
        p2f += static_cast<double>(pcup::p2f(out, *ep.mesh));
        ++with_mesh;
      }
    }
    const auto n = static_cast<double>(fixture_.test.size());
    row.cd = static_cast<real>(cd / n);
    row.hd = static_cast<real>(hd / n);
    if (with_mesh == fixture_.test.size()) row.p2f = static_cast<real>(p2f / n);
    return row;
  }

  PointCloud interpolate(const PointCloud& low) const {
    InterpolationConfig ic;
    ic.k_neighbors = opt_.train.interp_k;
    ic.rate = static_cast<double>(opt_.fixture.rate);
    return midpoint_interpolate(low, ic);
  }

  /// Learned model whose features come from the interpolated or low-res patch.
  static VariantModel learned(std::shared_ptr<const NetworkParams> params, NetworkInput input) {
    return [params, input](const PointCloud& interp, const PointCloud& low) {
      const auto anchor = Anchor::make(input == NetworkInput::interpolated ? interp : low, params->config.k);
      auto feats = std::make_shared<ExtractedFeatures>(extract_features(anchor, *params));
      PatchModel m;
      if (params->config.head == Head::offset) {
        m.offset = std::make_unique<LearnedOffsetModel>(params, std::move(feats));
      } else {
        m.field = std::make_unique<LearnedField>(params, std::move(feats));
      }
      return m;
    };
  }

  Row interpolation_only() const {
    RefineConfig none = opt_.refine;
    none.iterations = 0;
    Row r = evaluate("interpolation-only", {}, none);
    r.note = "reference: no refinement";
    return r;
  }

  Table run(Study study) {
    Table t{study, {}};
    const TrainConfig base = opt_.train;
    RefineConfig gd = opt_.refine;
    gd.strategy = RefineStrategy::grad_descent;
    auto distance_model = [&] { return model("distance", base); };

    switch (study) {
      case Study::prediction_content: {
        t.rows.push_back(evaluate("distance", learned(distance_model(), NetworkInput::interpolated), gd));
        TrainConfig oc = base;
        oc.head = Head::offset;
        const auto offset = model("offset", oc);
        RefineConfig e2e;
        e2e.strategy = RefineStrategy::auto_offset;
        e2e.step = 1;
        e2e.iterations = 1;
        Row r = evaluate("offset-end-to-end", learned(offset, NetworkInput::interpolated), e2e);
        r.note = "T=1 step=1";
        t.rows.push_back(r);
        std::optional<Row> best;
        for (real step : opt_.offset_steps) {
          RefineConfig ar = gd;
          ar.strategy = RefineStrategy::auto_offset;
          ar.step = step;
          Row cand = evaluate("offset-auto-regression", learned(offset, NetworkInput::interpolated), ar);
          char note[64];
          std::snprintf(note, sizeof note, "best of step grid: step=%g T=%zu", static_cast<double>(step),
                        ar.iterations);
          cand.note = note;
          if (!best || cand.cd < best->cd) best = cand;
        }
        t.rows.push_back(*best);
        break;
      }
      case Study::network_input: {
        t.rows.push_back(evaluate("interpolated", learned(distance_model(), NetworkInput::interpolated), gd));
        TrainConfig lc = base;
        lc.network_input = NetworkInput::low_res;
        t.rows.push_back(evaluate("low-res", learned(model("low-res-input", lc), NetworkInput::low_res), gd));
        break;
      }
      case Study::refine_strategy: {
        const auto m = distance_model();
        t.rows.push_back(evaluate("grad-descent", learned(m, NetworkInput::interpolated), gd));
        RefineConfig proj = gd;
        proj.strategy = RefineStrategy::normalized_projection;
        t.rows.push_back(evaluate("normalized-projection", learned(m, NetworkInput::interpolated), proj));
        break;
      }
      case Study::regressor_input: {
        t.rows.push_back(evaluate("local+global", learned(distance_model(), NetworkInput::interpolated), gd));
        TrainConfig lc = base;
        lc.regressor_input = RegressorInput::local_only;
        t.rows.push_back(evaluate("local-only", learned(model("local-only", lc), NetworkInput::interpolated), gd));
        TrainConfig gc = base;
        gc.regressor_input = RegressorInput::global_only;
        t.rows.push_back(evaluate("global-only", learned(model("global-only", gc), NetworkInput::interpolated), gd));
        break;
      }
      case Study::train_noise: {
        t.rows.push_back(evaluate("with-jitter", learned(distance_model(), NetworkInput::interpolated), gd));
        TrainConfig nc = base;
        nc.jitter_sigma = 0;
        t.rows.push_back(evaluate("without-jitter", learned(model("no-jitter", nc), NetworkInput::interpolated), gd));
        break;
      }
    }
    if (opt_.reference_row) t.rows.push_back(interpolation_only());
    return t;
  }

 private:
  Options opt_;
  Fixture fixture_;
  std::map<std::string, std::shared_ptr<const NetworkParams>> models_;
  std::map<std::string, TrainLog> logs_;
};

}  // namespace pcup::ablation
