#include "ordcast/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ordcast/attribution.hpp"
#include "ordcast/error.hpp"
#include "ordcast/probcast.hpp"
#include "ordcast/raster.hpp"

namespace ordcast {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* where) {
  if (!j.is_object()) throw FormatError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; }))
      throw FormatError(std::string(where) + ": unknown key '" + key + "'");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word.
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw MissingArtifact(p);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw FormatError("cannot write " + p.string());
  os << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifact(p);
}

struct Context {
  RunConfig cfg;
  RunOptions opt;
  std::string hash;
  BinSet bins;

  fs::path data_dir() const { return opt.out / "data"; }
  fs::path manifest() const { return data_dir() / "manifest.json"; }
  fs::path splits() const { return opt.out / "splits.json"; }
  fs::path model_dir() const { return opt.out / "model"; }
  fs::path checkpoint() const { return model_dir() / "checkpoint"; }
  fs::path thresholds() const { return model_dir() / "thresholds.json"; }
  fs::path pred_dir(const std::string& m) const { return opt.out / "pred" / m; }
  fs::path eval_dir(const std::string& m) const { return opt.out / "eval" / m; }

  void log(const std::string& s) const {
    if (opt.log) *opt.log << s << '\n';
  }

  void check_hash(const json& artifact, const fs::path& where) const {
    const std::string h = artifact.value("config_hash", std::string());
    if (h != hash && !opt.force)
      throw HashMismatch(where.string() + " was produced by config " + h + ", current is " + hash +
                         " (use --force to override)");
  }

  std::vector<double> lead_min() const {
    std::vector<double> l;
    for (std::size_t t = 0; t < cfg.model.t_out; ++t)
      l.push_back(static_cast<double>(t + 1) * cfg.data.step_min);
    return l;
  }
};

struct Window {
  std::size_t seq;
  std::size_t start;
  Sample sample;
};

Context make_context(const RunOptions& opt) {
  require_file(opt.config);
  RunConfig cfg = RunConfig::load(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  Context ctx{cfg, opt, cfg.hash(), cfg.bins()};
  if (ctx.bins.k() != cfg.model.k)
    throw FormatError("config: model.k = " + std::to_string(cfg.model.k) + " but bins have " +
                      std::to_string(ctx.bins.k()) + " edges");
  return ctx;
}

std::string seq_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%05zu", i);
  return buf;
}

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", i);
  return buf;
}

Tensor load_sequence(const Context& ctx, std::size_t i) {
  const SourceStack s = read_stack(ctx.data_dir() / seq_name(i));
  return s.data.reshaped({s.t(), s.h(), s.w()});
}

std::vector<Split> load_splits(const Context& ctx) {
  const json j = read_json(ctx.splits());
  ctx.check_hash(j, ctx.splits());
  std::vector<Split> out;
  for (const auto& s : j.at("labels")) out.push_back(parse_split(s.get<std::string>()));
  return out;
}

std::vector<Window> windows_for(const Context& ctx, Split which, std::size_t limit) {
  const json man = read_json(ctx.manifest());
  ctx.check_hash(man, ctx.manifest());
  const auto labels = load_splits(ctx);
  const std::size_t n = man.at("sequences").size();
  if (labels.size() != n) throw FormatError("splits do not match the manifest");
  std::vector<Window> out;
  for (std::size_t i = 0; i < n && out.size() < limit; ++i) {
    if (labels[i] != which) continue;
    const Tensor seq = load_sequence(ctx, i);
    auto ws = window_samples(seq, ctx.cfg.model.t_in, ctx.cfg.model.t_out);
    for (std::size_t k = 0; k < ws.size() && out.size() < limit; ++k)
      out.push_back({i, k, std::move(ws[k])});
  }
  return out;
}

Tensor fill_missing(Tensor t) {
  for (double& v : t.data())
    if (is_missing(v)) v = 0.0;
  return t;
}

Tensor frames_to_tensor(const std::vector<Raster>& frames) {
  const std::size_t H = frames.front().h, W = frames.front().w;
  Tensor out({frames.size(), H, W});
  for (std::size_t t = 0; t < frames.size(); ++t)
    std::copy(frames[t].values.begin(), frames[t].values.end(),
              out.vec().begin() + static_cast<std::ptrdiff_t>(t * H * W));
  return out;
}

std::vector<Raster> tensor_to_frames(const Tensor& thw, double res_km) {
  std::vector<Raster> out;
  const std::size_t HW = thw.dim(1) * thw.dim(2);
  for (std::size_t t = 0; t < thw.dim(0); ++t) {
    Raster r(thw.dim(1), thw.dim(2), res_km);
    std::copy_n(thw.vec().begin() + static_cast<std::ptrdiff_t>(t * HW), HW, r.values.begin());
    out.push_back(std::move(r));
  }
  return out;
}

void write_rates(const fs::path& base, const Tensor& thw, const Context& ctx) {
  SourceStack s(thw.reshaped({thw.dim(0), 1, thw.dim(1), thw.dim(2)}), ctx.cfg.scene.res_km, {},
                ctx.lead_min());
  write_stack(base, s);
}

Tensor read_rates(const fs::path& base) {
  const SourceStack s = read_stack(base);
  return s.data.reshaped({s.t(), s.h(), s.w()});
}

void stage_gen(const Context& ctx) {
  const auto& c = ctx.cfg;
  const std::size_t n = static_cast<std::size_t>(c.data.days * 24.0 / c.data.interval_h);
  if (n == 0) throw FormatError("config: data.days too small for one sequence");
  const std::size_t len = c.model.t_in + c.model.t_out + c.data.extra_frames;
  fs::create_directories(ctx.data_dir());
  std::vector<double> stamps;
  json seqs = json::array();
  std::vector<double> ts;
  for (std::size_t k = 0; k < len; ++k) ts.push_back(static_cast<double>(k) * c.data.step_min);
  for (std::size_t i = 0; i < n; ++i) {
    SceneConfig sc = c.scene;
    sc.seed = mix_seed(c.seed, i);
    const Tensor seq = gen_sequence(sc, len);
    SourceStack stack(seq.reshaped({len, 1, sc.h, sc.w}), sc.res_km, {}, ts);
    write_stack(ctx.data_dir() / seq_name(i), stack);
    const double stamp = static_cast<double>(i) * c.data.interval_h * 60.0;
    stamps.push_back(stamp);
    seqs.push_back({{"id", i}, {"file", seq_name(i)}, {"timestamp_min", stamp}, {"seed", sc.seed}});
  }
  const auto labels = make_splits(stamps, c.split);
  for (std::size_t i = 0; i < n; ++i) seqs[i]["split"] = split_name(labels[i]);
  json man{{"config_hash", ctx.hash}, {"scene", c.scene.to_json()}, {"frames", len},
           {"step_min", c.data.step_min}, {"sequences", seqs}};
  write_json(ctx.manifest(), man);
  ctx.log("gen: wrote " + std::to_string(n) + " sequences");
}

void stage_split(const Context& ctx) {
  const json man = read_json(ctx.manifest());
  ctx.check_hash(man, ctx.manifest());
  std::vector<double> stamps;
  for (const auto& s : man.at("sequences")) stamps.push_back(s.at("timestamp_min").get<double>());
  const auto labels = make_splits(stamps, ctx.cfg.split);
  json j{{"config_hash", ctx.hash}, {"labels", json::array()}, {"counts", json::object()}};
  std::map<std::string, std::size_t> counts;
  for (auto l : labels) {
    j["labels"].push_back(split_name(l));
    ++counts[split_name(l)];
  }
  j["counts"] = counts;
  write_json(ctx.splits(), j);
  ctx.log("split: " + j["counts"].dump());
}

void stage_train(const Context& ctx) {
  auto windows = windows_for(ctx, Split::Train, std::numeric_limits<std::size_t>::max());
  if (windows.empty()) throw FormatError("train: no training windows");
  std::vector<Sample> data;
  for (auto& w : windows) data.push_back(std::move(w.sample));
  MicroModel model(ctx.cfg.model);
  const auto res = train(model, data, ctx.bins, [&](std::size_t step, double loss) {
    if (step % 200 == 0) ctx.log("train: step " + std::to_string(step) + " loss " + format_number(loss));
  });
  fs::create_directories(ctx.model_dir());
  save_checkpoint(ctx.checkpoint(), model, json{{"config_hash", ctx.hash}});
  std::ostringstream os;
  os << "step,loss\n";
  for (std::size_t i = 0; i < res.loss_curve.size(); ++i)
    os << i << ',' << format_number(res.loss_curve[i]) << '\n';
  write_text(ctx.model_dir() / "loss_curve.csv", os.str());
  ctx.log("train: " + std::to_string(data.size()) + " windows, final loss " +
          format_number(res.loss_curve.back()));
}

MicroModel load_model(const Context& ctx) {
  auto cp = ctx.checkpoint();
  cp += ".json";
  require_file(cp);
  json extra;
  MicroModel m = load_checkpoint(ctx.checkpoint(), &extra);
  ctx.check_hash(extra, cp);
  return m;
}

ThresholdTable load_thresholds(const Context& ctx) {
  const json j = read_json(ctx.thresholds());
  ctx.check_hash(j, ctx.thresholds());
  ThresholdTable t = ThresholdTable::from_json(j.at("table"));
  t.check_compatible(ctx.bins, ctx.lead_min());
  return t;
}

void stage_calibrate(const Context& ctx) {
  const MicroModel model = load_model(ctx);
  const auto windows = windows_for(ctx, Split::Val, ctx.cfg.data.max_val_windows);
  if (windows.empty()) throw FormatError("calibrate: no validation windows");
  std::vector<Tensor> cubes;
  std::vector<ClassMasks> masks;
  for (const auto& w : windows) {
    cubes.push_back(model.predict(w.sample.input, ctx.cfg.model.use_ema));
    masks.push_back(exceedance_masks(w.sample.target, ctx.bins));
  }
  const auto table = calibrate_thresholds(cubes, masks, ctx.bins, ctx.lead_min());
  write_json(ctx.thresholds(), json{{"config_hash", ctx.hash}, {"table", table.to_json()}});
  ctx.log("calibrate: " + std::to_string(windows.size()) + " validation windows");
}

void stage_predict(const Context& ctx) {
  const std::string& name = ctx.opt.model;
  if (name != "micromodel" && name != "persistence" && name != "advection")
    throw FormatError("unknown model '" + name + "'");
  const auto windows = windows_for(ctx, Split::Test, ctx.cfg.data.max_test_windows);
  if (windows.empty()) throw FormatError("predict: no test windows");
  std::optional<MicroModel> model;
  std::optional<ThresholdTable> thr;
  if (name == "micromodel") {
    model = load_model(ctx);
    thr = load_thresholds(ctx);
  }
  const fs::path dir = ctx.pred_dir(name);
  fs::create_directories(dir);
  json index{{"config_hash", ctx.hash}, {"model", name}, {"samples", json::array()}};
  const std::size_t T = ctx.cfg.model.t_out;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Sample& s = windows[i].sample;
    Tensor rates;
    json entry{{"seq", windows[i].seq}, {"start", windows[i].start}, {"file", sample_name(i)}};
    if (model) {
      const Tensor prob = model->predict(s.input, ctx.cfg.model.use_ema);
      rates = extract_intensity(prob, *thr, ctx.bins);
      SourceStack ps(prob, ctx.cfg.scene.res_km, {}, ctx.lead_min());
      write_stack(dir / (sample_name(i) + ".prob"), ps);
      entry["prob"] = sample_name(i) + ".prob";
    } else {
      const auto frames = tensor_to_frames(s.input, ctx.cfg.scene.res_km);
      std::vector<Raster> out;
      if (name == "persistence") {
        out = persistence(frames.back(), T);
      } else {
        const MotionField v = estimate_motion(frames, ctx.cfg.motion);
        out = advect(frames.back(), v, T);
        entry["motion"] = {v.vx, v.vy};
        entry["low_confidence"] = v.low_confidence;
      }
      rates = fill_missing(frames_to_tensor(out));
    }
    write_rates(dir / sample_name(i), rates, ctx);
    index["samples"].push_back(entry);
  }
  write_json(dir / "index.json", index);
  ctx.log("predict: " + name + " on " + std::to_string(windows.size()) + " test windows");
}

ReportConfig report_config(const Context& ctx) {
  ReportConfig rc;
  rc.thresholds = ctx.cfg.eval.thresholds;
  rc.windows.clear();
  for (double km : ctx.cfg.eval.neighbourhoods_km)
    rc.windows.push_back(window_for_neighbourhood(km, ctx.cfg.scene.res_km));
  rc.pools = ctx.cfg.eval.pools;
  rc.lead_min = ctx.lead_min();
  rc.with_ssim = ctx.cfg.eval.ssim;
  return rc;
}

void stage_eval(const Context& ctx) {
  const std::string& name = ctx.opt.model;
  const fs::path dir = ctx.pred_dir(name);
  const json index = read_json(dir / "index.json");
  ctx.check_hash(index, dir / "index.json");
  const auto windows = windows_for(ctx, Split::Test, ctx.cfg.data.max_test_windows);
  const auto& samples = index.at("samples");
  if (samples.size() != windows.size())
    throw FormatError("eval: predictions do not match the test windows");
  ReportBuilder builder(report_config(ctx), ctx.bins);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& e = samples[i];
    if (e.at("seq").get<std::size_t>() != windows[i].seq ||
        e.at("start").get<std::size_t>() != windows[i].start)
      throw FormatError("eval: prediction index out of order");
    EvalSample s;
    s.pred = read_rates(dir / e.at("file").get<std::string>());
    s.obs = windows[i].sample.target;
    if (e.contains("prob")) s.prob = read_stack(dir / e.at("prob").get<std::string>()).data;
    builder.add(s);
  }
  SkillReport rep = builder.finish();
  const fs::path out = ctx.eval_dir(name);
  write_text(out / "report.csv", rep.to_csv());
  json j = rep.to_json();
  j["config_hash"] = ctx.hash;
  j["model"] = name;
  write_json(out / "report.json", j);
  if (ctx.opt.plot_data) write_text(out / "plot_data.csv", rep.plot_data_csv());
  const auto* csi = rep.find("csi", "all", "all");
  ctx.log("eval: " + name + " macro CSI " +
          (csi && csi->value ? format_number(*csi->value) : std::string("undefined")));
}

std::vector<std::string> channel_names(const ModelConfig& cfg) {
  std::vector<std::string> n;
  for (std::size_t t = 0; t < cfg.t_in; ++t) n.push_back("rate_t-" + std::to_string(cfg.t_in - 1 - t));
  for (std::size_t t = 0; t < cfg.t_in; ++t) n.push_back("valid_t-" + std::to_string(cfg.t_in - 1 - t));
  if (cfg.mode == OutputMode::LeadConditioned)
    for (std::size_t t = 0; t < cfg.t_out; ++t) n.push_back("lead_" + std::to_string(t));
  return n;
}

void stage_attribute(const Context& ctx) {
  const MicroModel model = load_model(ctx);
  const auto windows = windows_for(ctx, Split::Test, ctx.cfg.attribution.samples);
  if (windows.empty()) throw FormatError("attribute: no test windows");
  const auto& mc = ctx.cfg.model;
  const auto names = channel_names(mc);
  const auto leads = ctx.lead_min();
  json out{{"config_hash", ctx.hash}, {"steps", ctx.cfg.attribution.steps},
           {"class", ctx.cfg.attribution.cls}, {"samples", windows.size()}, {"leads", json::array()}};
  for (std::size_t t = 0; t < mc.t_out; ++t) {
    std::vector<double> per_channel(names.size(), 0.0);
    double gap = 0.0, delta = 0.0;
    for (const auto& w : windows) {
      const auto a = attribute(model, w.sample.input, {t, ctx.cfg.attribution.cls, {}},
                               ctx.cfg.attribution.steps, mc.use_ema);
      for (std::size_t c = 0; c < names.size(); ++c) per_channel[c] += a.per_channel[c];
      gap += std::abs(a.total - (a.f_input - a.f_baseline));
      delta += std::abs(a.f_input - a.f_baseline);
    }
    json ch = json::object();
    for (std::size_t c = 0; c < names.size(); ++c) ch[names[c]] = per_channel[c];
    out["leads"].push_back({{"lead_min", leads[t]}, {"channels", ch},
                            {"completeness_gap", gap}, {"output_delta", delta}});
  }
  write_json(ctx.opt.out / "attribution" / "attribution.json", out);
  ctx.log("attribute: " + std::to_string(windows.size()) + " samples x " + std::to_string(mc.t_out) +
          " leads");
}

void stage_report(const Context& ctx) {
  const fs::path root = ctx.opt.out / "eval";
  if (!fs::exists(root)) throw MissingArtifact(root);
  std::vector<std::string> models;
  for (const auto& e : fs::directory_iterator(root))
    if (fs::exists(e.path() / "report.json")) models.push_back(e.path().filename().string());
  if (models.empty()) throw MissingArtifact(root / "<model>" / "report.json");
  std::sort(models.begin(), models.end());

  std::ostringstream cmp, summary;
  cmp << "model,metric,threshold,lead_min,value\n";
  const std::size_t mid = ctx.cfg.eval.neighbourhoods_km.empty()
                              ? 0
                              : window_for_neighbourhood(
                                    ctx.cfg.eval.neighbourhoods_km[ctx.cfg.eval.neighbourhoods_km.size() / 2],
                                    ctx.cfg.scene.res_km);
  const std::string fss_metric = "fss_w" + std::to_string(mid);
  summary << "model,csi," << fss_metric << ",fbi,mae,mse,crps\n";
  std::map<std::string, std::map<std::string, std::string>> plot;  // lead -> column -> value
  std::vector<std::string> plot_cols, plot_leads;
  for (const auto& m : models) {
    const json rep = read_json(root / m / "report.json");
    ctx.check_hash(rep, root / m / "report.json");
    std::map<std::pair<std::string, std::string>, std::string> macro;
    for (const auto& r : rep.at("rows")) {
      const std::string metric = r.at("metric"), thr = r.at("threshold"), lead = r.at("lead_min");
      const std::string v = r.at("value").is_null() ? "" : format_number(r.at("value").get<double>());
      cmp << m << ',' << metric << ',' << thr << ',' << lead << ',' << v << '\n';
      if (lead == "all") macro[{metric, thr}] = v;
      if (lead != "all" && (metric == "csi" || metric == fss_metric || metric == "crps")) {
        const std::string col = m + ":" + metric + (thr.empty() ? "" : "@" + thr);
        if (std::find(plot_cols.begin(), plot_cols.end(), col) == plot_cols.end()) plot_cols.push_back(col);
        if (std::find(plot_leads.begin(), plot_leads.end(), lead) == plot_leads.end())
          plot_leads.push_back(lead);
        plot[lead][col] = v;
      }
    }
    summary << m << ',' << macro[{"csi", "all"}] << ',' << macro[{fss_metric, "all"}] << ','
            << macro[{"fbi", "all"}] << ',' << macro[{"mae", ""}] << ',' << macro[{"mse", ""}] << ','
            << macro[{"crps", ""}] << '\n';
  }
  const fs::path out = ctx.opt.out / "report";
  write_text(out / "comparison.csv", cmp.str());
  write_text(out / "summary.csv", summary.str());
  write_json(out / "report.json", json{{"config_hash", ctx.hash}, {"models", models},
                                       {"config", ctx.cfg.to_json()}});
  if (ctx.opt.plot_data) {
    std::ostringstream pd;
    pd << "lead_min";
    for (const auto& c : plot_cols) pd << ',' << c;
    pd << '\n';
    for (const auto& l : plot_leads) {
      pd << l;
      for (const auto& c : plot_cols) pd << ',' << plot[l][c];
      pd << '\n';
    }
    write_text(out / "plot_data.csv", pd.str());
  }
  ctx.log("report: " + std::to_string(models.size()) + " models");
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["bins"] = bins_json;
  j["data"] = {{"days", data.days},
               {"interval_h", data.interval_h},
               {"step_min", data.step_min},
               {"extra_frames", data.extra_frames},
               {"max_val_windows", data.max_val_windows},
               {"max_test_windows", data.max_test_windows}};
  j["split"] = {{"train_days", split.train_days},
                {"val_days", split.val_days},
                {"test_days", split.test_days},
                {"blackout_h", split.blackout_h}};
  j["scene"] = scene.to_json();
  j["model"] = model.to_json();
  j["eval"] = {{"thresholds", eval.thresholds},
               {"neighbourhoods_km", eval.neighbourhoods_km},
               {"pools", eval.pools},
               {"ssim", eval.ssim}};
  j["motion"] = {{"radius", motion.radius},
                 {"min_overlap", motion.min_overlap},
                 {"min_peak", motion.min_peak},
                 {"block", motion.block}};
  j["attribution"] = {{"steps", attribution.steps},
                      {"samples", attribution.samples},
                      {"class", attribution.cls}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, {"seed", "bins", "data", "split", "scene", "model", "eval", "motion", "attribution"},
                 "config");
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("bins")) c.bins_json = j["bins"];
    (void)c.bins();
    if (j.contains("data")) {
      const auto& d = j["data"];
      reject_unknown(d, {"days", "interval_h", "step_min", "extra_frames", "max_val_windows",
                         "max_test_windows"},
                     "config.data");
      c.data.days = d.value("days", c.data.days);
      c.data.interval_h = d.value("interval_h", c.data.interval_h);
      c.data.step_min = d.value("step_min", c.data.step_min);
      c.data.extra_frames = d.value("extra_frames", c.data.extra_frames);
      c.data.max_val_windows = d.value("max_val_windows", c.data.max_val_windows);
      c.data.max_test_windows = d.value("max_test_windows", c.data.max_test_windows);
      if (!(c.data.interval_h > 0) || !(c.data.step_min > 0) || !(c.data.days > 0))
        throw FormatError("config.data: durations must be positive");
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      reject_unknown(s, {"train_days", "val_days", "test_days", "blackout_h"}, "config.split");
      c.split.train_days = s.value("train_days", c.split.train_days);
      c.split.val_days = s.value("val_days", c.split.val_days);
      c.split.test_days = s.value("test_days", c.split.test_days);
      c.split.blackout_h = s.value("blackout_h", c.split.blackout_h);
    }
    if (j.contains("scene")) c.scene = SceneConfig::from_json(j["scene"]);
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      reject_unknown(e, {"thresholds", "neighbourhoods_km", "pools", "ssim"}, "config.eval");
      c.eval.thresholds = e.value("thresholds", c.eval.thresholds);
      c.eval.neighbourhoods_km = e.value("neighbourhoods_km", c.eval.neighbourhoods_km);
      c.eval.pools = e.value("pools", c.eval.pools);
      c.eval.ssim = e.value("ssim", c.eval.ssim);
    }
    if (j.contains("motion")) {
      const auto& m = j["motion"];
      reject_unknown(m, {"radius", "min_overlap", "min_peak", "block"}, "config.motion");
      c.motion.radius = m.value("radius", c.motion.radius);
      c.motion.min_overlap = m.value("min_overlap", c.motion.min_overlap);
      c.motion.min_peak = m.value("min_peak", c.motion.min_peak);
      c.motion.block = m.value("block", c.motion.block);
    }
    if (j.contains("attribution")) {
      const auto& a = j["attribution"];
      reject_unknown(a, {"steps", "samples", "class"}, "config.attribution");
      c.attribution.steps = a.value("steps", c.attribution.steps);
      c.attribution.samples = a.value("samples", c.attribution.samples);
      c.attribution.cls = a.value("class", c.attribution.cls);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) { return from_json(read_json(path)); }

std::string RunConfig::hash() const {
  const std::string s = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void run_stage(const std::string& stage, const RunOptions& opt) {
  const Context ctx = make_context(opt);
  // The model seed follows the run seed so one number fixes every stage.
  Context c = ctx;
  c.cfg.model.seed = mix_seed(ctx.cfg.seed, 0xabcdefULL);
  if (stage == "gen")
    stage_gen(c);
  else if (stage == "split")
    stage_split(c);
  else if (stage == "train")
    stage_train(c);
  else if (stage == "calibrate")
    stage_calibrate(c);
  else if (stage == "predict")
    stage_predict(c);
  else if (stage == "eval")
    stage_eval(c);
  else if (stage == "attribute")
    stage_attribute(c);
  else if (stage == "report")
    stage_report(c);
  else
    throw FormatError("unknown stage '" + stage + "'");
}

int run_stage_status(const std::string& stage, const RunOptions& opt) {
  try {
    run_stage(stage, opt);
    return kExitOk;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingArtifact;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const HashMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace ordcast
