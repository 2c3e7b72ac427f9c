// selfcolor experiment runner: synth-data | pretrain | transfer | analyze |
// eval | report. Every command takes --config and honors --seed / --out
// overrides; all outputs land under the configured directory.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "selfcolor/analysis.hpp"
#include "selfcolor/checkpoint.hpp"
#include "selfcolor/config.hpp"
#include "selfcolor/dataset.hpp"
#include "selfcolor/pretrain.hpp"
#include "selfcolor/report.hpp"
#include "selfcolor/transfer.hpp"

namespace fs = std::filesystem;
using namespace selfcolor;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_override;
  int64_t seed_override = -1;
  std::string init_override;
};

ExperimentConfig load_config(const CommonArgs& args) {
  check(!args.config_path.empty(), "--config is required");
  ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
  if (!args.out_override.empty()) cfg.out_dir = args.out_override;
  if (args.seed_override >= 0) cfg.seed = static_cast<uint64_t>(args.seed_override);
  return cfg;
}

std::string dataset_dir(const ExperimentConfig& cfg) {
  const std::string p = cfg.dataset_path();
  return p.empty() ? (fs::path(cfg.out_dir) / "dataset").string() : p;
}

Dataset load_config_dataset(const ExperimentConfig& cfg) {
  return load_dataset(dataset_dir(cfg));
}

void append_results_row(const std::string& out_dir, const std::string& run_id,
                        const std::string& init, const std::string& task,
                        const std::string& metric, double value, uint64_t seed,
                        const std::vector<double>& drops) {
  fs::create_directories(out_dir);
  const fs::path path = fs::path(out_dir) / "results.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream f(path, std::ios::app);
  check(static_cast<bool>(f), "cannot write " + path.string());
  if (fresh) f << "run_id,init,task,metric,value,seed,drop_epochs\n";
  std::string drop_str;
  for (size_t i = 0; i < drops.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", drops[i]);
    drop_str += (i ? ";" : "") + std::string(buf);
  }
  char val[32];
  std::snprintf(val, sizeof(val), "%.6f", value);
  f << run_id << "," << init << "," << task << "," << metric << "," << val << "," << seed
    << "," << drop_str << "\n";
}

int cmd_synth_data(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  Dataset ds = generate_colored_shapes(cfg.shapes_spec(), cfg.seed);
  save_dataset(ds, dataset_dir(cfg));
  int64_t total = 0;
  for (const auto& [name, samples] : ds.splits) total += samples.size();
  std::cout << "wrote " << total << " images across " << ds.splits.size()
            << " splits to " << dataset_dir(cfg) << "\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  Dataset ds = load_config_dataset(cfg);
  PretrainConfig pc = cfg.pretrain_config();
  pc.seed = cfg.seed;
  pc.out_dir = (fs::path(cfg.out_dir) / "pretrain").string();
  PretrainResult result = train_colorization(ds, cfg.pretrain_split(), pc);
  std::cout << "pretrained " << pc.loss << " model: " << result.checkpoints.size()
            << " checkpoints, final scaled loss "
            << (result.loss_trace.empty() ? 0.0 : result.loss_trace.back()) << "\n";
  return 0;
}

int cmd_transfer(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  Dataset ds = load_config_dataset(cfg);
  ds = apply_label_transforms(ds, cfg.train_split(), cfg.label_transforms());
  TransferConfig tc = cfg.transfer_config();
  tc.seed = cfg.seed;
  tc.out_dir = (fs::path(cfg.out_dir) / "transfer").string();

  const std::string init =
      args.init_override.empty() ? cfg.transfer_init() : args.init_override;
  Checkpoint<float> ckpt;
  const Checkpoint<float>* init_ptr = nullptr;
  if (init != "random") {
    ckpt = load_checkpoint<float>(init);
    check(spec_hash(ckpt.net.spec) == spec_hash(cfg.network_spec()),
          "transfer: checkpoint network spec does not match the configured network");
    init_ptr = &ckpt;
  }
  TransferResult result =
      train_downstream(ds, cfg.train_split(), cfg.eval_split(), init_ptr,
                       cfg.network_spec(), tc);

  fs::create_directories(tc.out_dir);
  Checkpoint<float> out_ckpt;
  out_ckpt.net = result.model.net;
  out_ckpt.head = result.model.head;
  out_ckpt.head_kind = tc.task == "classification" ? "classifier" : "segmentation";
  out_ckpt.epoch = result.stop_epoch;
  out_ckpt.rng_state = Rng(cfg.seed).serialize_state();
  out_ckpt.drop_epochs = result.drop_epochs;
  save_checkpoint(out_ckpt, (fs::path(tc.out_dir) / "model.cprx").string());

  const std::string metric = tc.task == "classification" ? "top1" : "miu";
  append_results_row(cfg.out_dir, cfg.run_id, init == "random" ? "random" : "checkpoint",
                     tc.task, metric, result.final_metric, cfg.seed, result.drop_epochs);
  std::cout << metric << " " << result.final_metric << " (stopped at epoch "
            << result.stop_epoch << ", " << result.drop_epochs.size() << " drops)\n";
  return 0;
}

DownstreamModel<float> model_from_checkpoint(const std::string& path, int crop) {
  Checkpoint<float> ckpt = load_checkpoint<float>(path);
  check(ckpt.head_kind == "classifier" || ckpt.head_kind == "segmentation",
        "eval: checkpoint does not hold a downstream model");
  DownstreamModel<float> m;
  m.task = ckpt.head_kind == "classifier" ? "classification" : "segmentation";
  m.net = ckpt.net;
  m.head = ckpt.head;
  m.num_outputs = ckpt.head.out_dim;
  m.crop = crop;
  m.color_input = ckpt.net.spec.input_channels == 3;
  return m;
}

int cmd_eval(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  check(cfg.has("eval"), "config has no eval section");
  const auto& e = cfg.raw.at("eval");
  Dataset ds = load_config_dataset(cfg);
  const std::string split = e.value("split", "test");
  const int topk = e.value("topk", 1);
  const int crop = e.value("crop", 32);
  std::string ckpt_path =
      args.init_override.empty() ? e.at("checkpoint").get<std::string>() : args.init_override;

  DownstreamModel<float> model = model_from_checkpoint(ckpt_path, crop);
  double value;
  std::string metric;
  if (model.task == "classification") {
    value = evaluate_classification(model, ds.split(split), topk);
    metric = "top" + std::to_string(topk);
  } else {
    value = evaluate_segmentation(model, ds.split(split));
    metric = "miu";
  }
  append_results_row(cfg.out_dir, cfg.run_id, "checkpoint", model.task, metric, value,
                     cfg.seed, {});
  std::cout << metric << " " << value << "\n";
  return 0;
}

int cmd_analyze(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  check(cfg.has("analysis"), "config has no analysis section");
  const auto& a = cfg.raw.at("analysis");
  Dataset ds = load_config_dataset(cfg);
  const std::string probe_split = a.value("probe_split", "test");
  const int stride = a.value("pixel_stride", 4);
  const int crop = a.value("crop", 32);

  Checkpoint<float> ca = load_checkpoint<float>(a.at("checkpoint_a").get<std::string>());
  Checkpoint<float> cb = load_checkpoint<float>(a.at("checkpoint_b").get<std::string>());
  CorrelationReport report =
      feature_correlation(ca.net, cb.net, ds.split(probe_split), stride, crop);
  const std::string analysis_dir = (fs::path(cfg.out_dir) / "analysis").string();
  emit_report(report, analysis_dir);

  if (a.contains("top_layer")) {
    TopActivationSet tops =
        top_activations(ca.net, a.at("top_layer").get<std::string>(),
                        ds.split(probe_split), a.value("top_m", 8), crop);
    write_top_activations_csv(tops,
                              (fs::path(analysis_dir) / "top_activations.csv").string());
  }
  std::cout << "analysis written to " << analysis_dir << "\n";
  return 0;
}

int cmd_report(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  const fs::path metrics = fs::path(cfg.out_dir) / "pretrain" / "metrics.csv";
  check(fs::exists(metrics), "report: missing " + metrics.string() + " (run pretrain first)");
  std::ifstream f(metrics);
  std::string line;
  std::getline(f, line);  // header
  std::vector<std::array<double, 2>> points;
  while (std::getline(f, line)) {
    double step, epoch, lr, loss;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &step, &epoch, &lr, &loss) == 4)
      points.push_back({epoch, loss});
  }
  const fs::path report_dir = fs::path(cfg.out_dir) / "report";
  fs::create_directories(report_dir);
  write_loss_curve_svg(points, cfg.pretrain_config().schedule.drop_epochs,
                       (report_dir / "loss_curve.svg").string());

  // Re-render the correlation chart when an analysis has been run.
  const fs::path corr_csv = fs::path(cfg.out_dir) / "analysis" / "correlation.csv";
  if (fs::exists(corr_csv)) {
    std::ifstream cf(corr_csv);
    std::getline(cf, line);
    CorrelationReport report;
    std::map<std::string, std::vector<double>> by_layer;
    std::vector<std::string> order;
    while (std::getline(cf, line)) {
      const auto c1 = line.find(','), c2 = line.rfind(',');
      if (c1 == std::string::npos || c2 <= c1) continue;
      const std::string layer = line.substr(0, c1);
      const std::string val = line.substr(c2 + 1);
      if (!by_layer.count(layer)) order.push_back(layer);
      by_layer[layer].push_back(val == "nan" ? std::nan("") : std::stod(val));
    }
    for (const auto& lname : order) {
      LayerCorrelation lc;
      lc.layer = lname;
      lc.corr = by_layer[lname];
      std::vector<double> defined;
      for (double v : lc.corr)
        if (!std::isnan(v)) defined.push_back(v);
      lc.defined = static_cast<int>(defined.size());
      if (!defined.empty()) {
        std::sort(defined.begin(), defined.end());
        lc.median = defined[defined.size() / 2];
        lc.iqr_lo = defined[defined.size() / 4];
        lc.iqr_hi = defined[(defined.size() * 3) / 4];
      }
      report.layers.push_back(std::move(lc));
    }
    write_correlation_svg(report, (report_dir / "correlation.svg").string());
  }
  std::cout << "report written to " << report_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised colorization pretraining lab"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* cmd, bool with_init = false) {
    cmd->add_option("--config", args.config_path, "experiment config (JSON)");
    cmd->add_option("--out", args.out_override, "override output directory");
    cmd->add_option("--seed", args.seed_override, "override seed");
    if (with_init)
      cmd->add_option("--init", args.init_override, "checkpoint path (or 'random')");
  };

  auto* synth = app.add_subcommand("synth-data", "generate the colored-shapes dataset");
  add_common(synth);
  auto* pretrain = app.add_subcommand("pretrain", "train the colorization network");
  add_common(pretrain);
  auto* transfer = app.add_subcommand("transfer", "fine-tune on the downstream task");
  add_common(transfer, true);
  auto* analyze = app.add_subcommand("analyze", "feature correlation and top activations");
  add_common(analyze);
  auto* eval = app.add_subcommand("eval", "evaluate a saved model");
  add_common(eval, true);
  auto* report = app.add_subcommand("report", "render SVG charts from run outputs");
  add_common(report);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth_data(args);
    if (pretrain->parsed()) return cmd_pretrain(args);
    if (transfer->parsed()) return cmd_transfer(args);
    if (analyze->parsed()) return cmd_analyze(args);
    if (eval->parsed()) return cmd_eval(args);
    if (report->parsed()) return cmd_report(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
