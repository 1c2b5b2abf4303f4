#include "vitlab/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "vitlab/carbon.hpp"
#include "vitlab/checkpoint.hpp"
#include "vitlab/train.hpp"

namespace vitlab {

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string checksum_of(const std::string& path) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(std::span<const unsigned char>(read_file(path)))));
  return buf;
}

// Collects inputs/outputs during a subcommand and lands the manifest
// atomically at the end of the run.
struct RunManifest {
  std::string subcommand;
  uint64_t seed = 42;
  std::string config_text;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::pair<std::string, std::string>> outputs;

  void add_input(const std::string& label, const std::string& path) {
    inputs.emplace_back(label, path);
  }
  void add_output(const std::string& label, const std::string& path) {
    outputs.emplace_back(label, path);
  }

  void write(const std::string& path) const {
    std::ostringstream out;
    out << "subcommand = " << subcommand << "\n";
    out << "timestamp = " << utc_timestamp() << "\n";
    out << "seed = " << seed << "\n";
    for (const auto& [label, p] : inputs) {
      out << "input." << label << " = " << p << " fnv1a64=" << checksum_of(p) << "\n";
    }
    for (const auto& [label, p] : outputs) {
      out << "output." << label << " = " << p << " fnv1a64=" << checksum_of(p) << "\n";
    }
    std::istringstream cfg(config_text);
    std::string line;
    while (std::getline(cfg, line)) {
      if (!line.empty()) out << "config." << line << "\n";
    }
    write_file_atomic(path, out.str());
  }
};

RunConfig load_config_or_default(const std::optional<std::string>& path) {
  if (!path) return RunConfig{};
  return load_run_config(*path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir + ": " + ec.message());
}

Dataset dataset_from_flag(const std::string& data, const DataConfig& cfg) {
  if (data == "synthetic" || data.empty()) return make_synthetic_train(cfg);
  return load_manifest(data);
}

std::vector<std::vector<double>> per_image_cosines(const ViTModel& model, const Dataset& dataset,
                                                   const TokenStats& stats, bool include_edges) {
  std::vector<std::vector<double>> out;
  for (size_t idx : stats.sampled_items) {
    NoGradGuard guard;
    Tensor emb = embed_patches(dataset.image(idx), model);
    out.push_back(neighbor_cosines(emb, model.config.grid(), nullptr, include_edges));
  }
  return out;
}

// stats.txt style key-value summary block.
void write_kv_file(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  write_file_atomic(path, out.str());
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"vitlab: a desk-scale vision-transformer register & artifact laboratory"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<uint64_t> seed_flag;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file");
    cmd->add_option("--seed", seed_flag, "seed override (default 42)");
  };

  try {
    // ---- carbon ----
    auto* carbon = app.add_subcommand("carbon", "CO2 estimate: CI * PUE * P * t");
    CarbonParams cp;
    carbon->add_option("--ci", cp.carbon_intensity, "carbon intensity, kg CO2 per kWh")->required();
    carbon->add_option("--pue", cp.pue, "power usage effectiveness (>= 1)")->required();
    carbon->add_option("--power", cp.power_kw, "power draw, kW")->required();
    carbon->add_option("--hours", cp.hours, "compute time, hours")->required();
    carbon->callback([&] {
      std::printf("%.2f\n", carbon_estimate(cp));
    });

    // ---- train-toy ----
    auto* train_toy = app.add_subcommand("train-toy", "train the micro-ViT on synthetic data");
    std::string tt_out = "model.vtrl";
    std::string tt_metrics;
    train_toy->add_option("--out", tt_out, "output model archive");
    train_toy->add_option("--metrics", tt_metrics, "per-epoch metrics CSV");
    add_common(train_toy);
    train_toy->callback([&] {
      RunConfig cfg = load_config_or_default(config_path);
      if (seed_flag) {
        cfg.train.seed = *seed_flag;
        cfg.data.seed = *seed_flag;
      }
      cfg.validate();
      Dataset train_set = make_synthetic_train(cfg.data);
      Dataset val_set = make_synthetic_val(cfg.data);
      ViTModel model = init_vit(cfg.model, cfg.train.seed);
      ToyResult result = train_vit(model, train_set, val_set, cfg.train);
      save_model(model, tt_out);
      RunManifest man;
      man.subcommand = "train-toy";
      man.seed = cfg.train.seed;
      man.config_text = serialize_run_config(cfg);
      man.add_output("model", tt_out);
      if (!tt_metrics.empty()) {
        write_file_atomic(tt_metrics, toy_history_csv(result));
        man.add_output("metrics", tt_metrics);
      }
      man.write(tt_out + ".manifest.txt");
      std::printf("val_accuracy = %.4f\n", result.final_val_accuracy);
    });

    // ---- analyze-maps ----
    auto* analyze = app.add_subcommand("analyze-maps", "feature/attention maps for one image");
    std::string am_model, am_image, am_out = "maps";
    int64_t am_resolution = 0, am_px = 0;
    bool am_qkv = false;
    analyze->add_option("--model", am_model, "model archive")->required();
    analyze->add_option("--image", am_image, "input image (PPM P6)")->required();
    analyze->add_option("--out", am_out, "output directory");
    analyze->add_option("--resolution", am_resolution,
                        "resize input to this side before inference (high-res maps)");
    analyze->add_option("--px", am_px, "rendered map side in pixels (default 16x grid)");
    analyze->add_flag("--qkv", am_qkv, "also write per-block Q/K/V/output norm maps");
    add_common(analyze);
    analyze->callback([&] {
      RunConfig cfg = load_config_or_default(config_path);
      ViTModel model = load_model(am_model);
      Image img = decode_ppm(read_file(am_image));
      if (am_resolution > 0) img = resize_bilinear(img, am_resolution, am_resolution);
      ForwardOptions opts;
      opts.attention = ForwardOptions::AttentionCapture::final_block;
      opts.capture_qkv = am_qkv;
      opts.capture_block_outputs = am_qkv;
      NoGradGuard guard;
      Activations acts = forward(model, img, opts);
      const int64_t px = am_px > 0 ? am_px : acts.grid * 16;
      ensure_dir(am_out);

      RunManifest man;
      man.subcommand = "analyze-maps";
      man.seed = seed_flag.value_or(42);
      man.config_text = serialize_vit_config(model.config);
      man.add_input("model", am_model);
      man.add_input("image", am_image);

      auto emit = [&](const std::string& name, const std::vector<unsigned char>& bytes) {
        const std::string path = (std::filesystem::path(am_out) / name).string();
        write_file_atomic(path, std::span<const unsigned char>(bytes));
        man.add_output(name, path);
      };

      emit("feature.pgm", render_map(feature_map(acts), px));
      if (model.config.use_cls) {
        emit("attention.pgm", render_map(attention_map_cls(acts).grid, px));
      } else {
        emit("attention.pgm", render_map(attention_map_pooled(acts), px));
      }
      if (am_qkv) {
        for (int64_t b = 0; b < model.config.depth; ++b) {
          emit("qkv_b" + std::to_string(b) + "_q.pgm",
               render_map(qkv_block_maps(acts, b, QkvMap::query), px));
          emit("qkv_b" + std::to_string(b) + "_k.pgm",
               render_map(qkv_block_maps(acts, b, QkvMap::key), px));
          emit("qkv_b" + std::to_string(b) + "_v.pgm",
               render_map(qkv_block_maps(acts, b, QkvMap::value), px));
          emit("qkv_b" + std::to_string(b) + "_out.pgm",
               render_map(qkv_block_maps(acts, b, QkvMap::output), px));
        }
      }

      // Single-image token stats; the outlier cut here is per-image.
      MapGrid fmap = feature_map(acts);
      TokenStats stats;
      stats.percentile_q = cfg.analysis.percentile;
      stats.sampled_items = {0};
      stats.norms = {fmap.values};
      ThresholdResult th = outlier_threshold(fmap.values, cfg.analysis.percentile);
      stats.threshold = th.tau;
      stats.outlier = {th.mask};
      Tensor emb = embed_patches(img, model);
      std::vector<std::vector<double>> cosines = {neighbor_cosines(emb, acts.grid)};
      const std::string csv_path = (std::filesystem::path(am_out) / "tokens.csv").string();
      write_file_atomic(csv_path, token_stats_csv(stats, cosines));
      man.add_output("tokens.csv", csv_path);
      man.write((std::filesystem::path(am_out) / "run_manifest.txt").string());
    });

    // ---- norms ----
    auto* norms_cmd = app.add_subcommand("norms", "pooled L2-norm distribution and outlier stats");
    std::string no_model, no_data = "synthetic", no_out = "norms_out";
    norms_cmd->add_option("--model", no_model, "model archive")->required();
    norms_cmd->add_option("--data", no_data, "'synthetic' or a manifest CSV path");
    norms_cmd->add_option("--out", no_out, "output directory");
    add_common(norms_cmd);
    norms_cmd->callback([&] {
      RunConfig cfg = load_config_or_default(config_path);
      if (seed_flag) cfg.analysis.seed = *seed_flag;
      ViTModel model = load_model(no_model);
      Dataset data = dataset_from_flag(no_data, cfg.data);
      TokenStats stats = norm_distribution(model, data, cfg.analysis.sample_n, cfg.analysis.seed,
                                           cfg.analysis.percentile);
      const std::vector<double> pooled = stats.pooled();
      const double bc = bimodality_coefficient(pooled);
      ensure_dir(no_out);
      const std::string norms_path = (std::filesystem::path(no_out) / "norms.csv").string();
      const std::string hist_path = (std::filesystem::path(no_out) / "histogram.csv").string();
      const std::string stats_path = (std::filesystem::path(no_out) / "stats.txt").string();
      write_file_atomic(norms_path, token_stats_csv(stats));
      write_file_atomic(hist_path, histogram_csv(stats));
      write_kv_file(stats_path, {{"images", std::to_string(stats.norms.size())},
                                 {"tokens", std::to_string(stats.total_tokens())},
                                 {"percentile", fmt(stats.percentile_q)},
                                 {"tau", fmt(stats.threshold)},
                                 {"outliers", std::to_string(stats.total_outliers())},
                                 {"bimodality", fmt(bc)},
                                 {"bimodal", is_bimodal(bc) ? "true" : "false"}});
      RunManifest man;
      man.subcommand = "norms";
      man.seed = cfg.analysis.seed;
      man.config_text = serialize_run_config(cfg);
      man.add_input("model", no_model);
      man.add_output("norms.csv", norms_path);
      man.add_output("histogram.csv", hist_path);
      man.add_output("stats.txt", stats_path);
      man.write((std::filesystem::path(no_out) / "run_manifest.txt").string());
      std::printf("tau = %.6f, outliers = %zu / %zu, bimodality = %.4f\n", stats.threshold,
                  stats.total_outliers(), stats.total_tokens(), bc);
    });

    // ---- cosine ----
    auto* cosine_cmd = app.add_subcommand("cosine", "neighbor cosine split by outlier mask");
    std::string co_model, co_data = "synthetic", co_out = "cosine_out";
    bool co_interior = false;
    cosine_cmd->add_option("--model", co_model, "model archive")->required();
    cosine_cmd->add_option("--data", co_data, "'synthetic' or a manifest CSV path");
    cosine_cmd->add_option("--out", co_out, "output directory");
    cosine_cmd->add_flag("--interior-only", co_interior, "drop edge patches from the split");
    add_common(cosine_cmd);
    cosine_cmd->callback([&] {
      RunConfig cfg = load_config_or_default(config_path);
      if (seed_flag) cfg.analysis.seed = *seed_flag;
      ViTModel model = load_model(co_model);
      Dataset data = dataset_from_flag(co_data, cfg.data);
      TokenStats stats = norm_distribution(model, data, cfg.analysis.sample_n, cfg.analysis.seed,
                                           cfg.analysis.percentile);
      std::vector<std::vector<double>> cosines = per_image_cosines(model, data, stats, !co_interior);
      CosineSplit split;
      for (size_t i = 0; i < cosines.size(); ++i) {
        CosineSplit one = split_by_mask(cosines[i], stats.outlier[i]);
        split.outlier.insert(split.outlier.end(), one.outlier.begin(), one.outlier.end());
        split.normal.insert(split.normal.end(), one.normal.begin(), one.normal.end());
      }
      ensure_dir(co_out);
      std::ostringstream csv;
      csv << "category,mean_neighbor_cos\n";
      csv.precision(17);
      for (double v : split.normal) csv << "normal," << v << "\n";
      for (double v : split.outlier) csv << "outlier," << v << "\n";
      const std::string csv_path = (std::filesystem::path(co_out) / "cosine.csv").string();
      const std::string tokens_path = (std::filesystem::path(co_out) / "tokens.csv").string();
      const std::string stats_path = (std::filesystem::path(co_out) / "stats.txt").string();
      write_file_atomic(csv_path, csv.str());
      write_file_atomic(tokens_path, token_stats_csv(stats, cosines));
      write_kv_file(stats_path,
                    {{"tau", fmt(stats.threshold)},
                     {"mean_cos_normal", fmt(split.mean_normal())},
                     {"mean_cos_outlier", fmt(split.mean_outlier())},
                     {"normal_tokens", std::to_string(split.normal.size())},
                     {"outlier_tokens", std::to_string(split.outlier.size())}});
      RunManifest man;
      man.subcommand = "cosine";
      man.seed = cfg.analysis.seed;
      man.config_text = serialize_run_config(cfg);
      man.add_input("model", co_model);
      man.add_output("cosine.csv", csv_path);
      man.add_output("tokens.csv", tokens_path);
      man.add_output("stats.txt", stats_path);
      man.write((std::filesystem::path(co_out) / "run_manifest.txt").string());
    });

    // ---- probe-extract ----
    auto* pex = app.add_subcommand("probe-extract", "extract frozen-feature probe rows");
    std::string px_model, px_data = "synthetic", px_task = "position", px_out = "probe.vtrl";
    pex->add_option("--model", px_model, "model archive")->required();
    pex->add_option("--data", px_data, "'synthetic' or a manifest CSV path");
    pex->add_option("--task", px_task, "position | reconstruction | classification");
    pex->add_option("--out", px_out, "output probe archive");
    add_common(pex);
    pex->callback([&] {
      RunConfig cfg = load_config_or_default(config_path);
      const uint64_t seed = seed_flag.value_or(cfg.analysis.seed);
      ViTModel model = load_model(px_model);
      Dataset data = dataset_from_flag(px_data, cfg.data);
      TokenStats stats = norm_distribution(model, data, cfg.analysis.sample_n, cfg.analysis.seed,
                                           cfg.analysis.percentile);
      ProbeDataset probe =
          extract_probe_dataset(model, data, probe_task_from_string(px_task), stats, seed);
      save_probe_dataset(probe, px_out);
      RunManifest man;
      man.subcommand = "probe-extract";
      man.seed = seed;
      man.config_text = serialize_run_config(cfg);
      man.add_input("model", px_model);
      man.add_output("probe", px_out);
      man.write(px_out + ".manifest.txt");
      std::printf("rows = %zu, tau = %.6f\n", probe.size(), stats.threshold);
    });

    // ---- probe-train ----
    auto* ptr = app.add_subcommand("probe-train", "train a linear probe on extracted rows");
    std::string pt_probe, pt_out = "head.vtrl", pt_metrics;
    ptr->add_option("--probe", pt_probe, "probe archive")->required();
    ptr->add_option("--out", pt_out, "output head archive");
    ptr->add_option("--metrics", pt_metrics, "per-epoch metrics CSV");
    add_common(ptr);
    ptr->callback([&] {
      RunConfig cfg = load_config_or_default(config_path);
      if (seed_flag) cfg.probe.seed = *seed_flag;
      ProbeDataset data = load_probe_dataset(pt_probe);
      cfg.probe.task = data.task;
      auto [head, history] = train_linear_probe(data, cfg.probe);
      save_probe_head(head, pt_out);
      RunManifest man;
      man.subcommand = "probe-train";
      man.seed = cfg.probe.seed;
      man.config_text = serialize_run_config(cfg);
      man.add_input("probe", pt_probe);
      man.add_output("head", pt_out);
      if (!pt_metrics.empty()) {
        write_file_atomic(pt_metrics, history_csv(history));
        man.add_output("metrics", pt_metrics);
      }
      man.write(pt_out + ".manifest.txt");
      std::printf("best_epoch = %lld, epochs_run = %zu, early_stopped = %s\n",
                  static_cast<long long>(history.best_epoch), history.epochs.size(),
                  history.early_stopped ? "true" : "false");
    });

    // ---- probe-eval ----
    auto* pev = app.add_subcommand("probe-eval", "evaluate a trained probe head");
    std::string pe_probe, pe_head, pe_out;
    pev->add_option("--probe", pe_probe, "probe archive")->required();
    pev->add_option("--head", pe_head, "head archive")->required();
    pev->add_option("--out", pe_out, "optional eval CSV");
    add_common(pev);
    pev->callback([&] {
      ProbeDataset data = load_probe_dataset(pe_probe);
      ProbeHead head = load_probe_head(pe_head);
      std::ostringstream csv;
      csv << "category,metric,value\n";
      csv.precision(17);
      switch (data.task) {
        case ProbeTask::position: {
          PositionEval all = eval_position(head, data);
          std::printf("all: top1 = %.4f, distance = %.4f (baseline %.4f)\n", all.top1,
                      all.mean_distance, center_baseline(data.grid));
          csv << "all,top1," << all.top1 << "\nall,distance," << all.mean_distance << "\n";
          csv << "all,baseline," << center_baseline(data.grid) << "\n";
          for (TokenCategory cat : {TokenCategory::normal, TokenCategory::outlier}) {
            ProbeDataset slice = filter_by_category(data, cat);
            if (slice.size() == 0) {
              std::printf("%s: empty category\n", to_string(cat).c_str());
              csv << to_string(cat) << ",top1,\n";
              continue;
            }
            PositionEval ev = eval_position(head, slice);
            std::printf("%s: top1 = %.4f, distance = %.4f\n", to_string(cat).c_str(), ev.top1,
                        ev.mean_distance);
            csv << to_string(cat) << ",top1," << ev.top1 << "\n";
            csv << to_string(cat) << ",distance," << ev.mean_distance << "\n";
          }
          break;
        }
        case ProbeTask::reconstruction: {
          std::printf("all: l2_error = %.6f\n", eval_reconstruction(head, data));
          csv << "all,l2_error," << eval_reconstruction(head, data) << "\n";
          for (TokenCategory cat : {TokenCategory::normal, TokenCategory::outlier}) {
            ProbeDataset slice = filter_by_category(data, cat);
            if (slice.size() == 0) {
              std::printf("%s: empty category\n", to_string(cat).c_str());
              csv << to_string(cat) << ",l2_error,\n";
              continue;
            }
            std::printf("%s: l2_error = %.6f\n", to_string(cat).c_str(),
                        eval_reconstruction(head, slice));
            csv << to_string(cat) << ",l2_error," << eval_reconstruction(head, slice) << "\n";
          }
          break;
        }
        case ProbeTask::classification: {
          for (TokenCategory cat :
               {TokenCategory::cls, TokenCategory::normal, TokenCategory::outlier}) {
            ProbeDataset slice = filter_by_category(data, cat);
            if (slice.size() == 0) {
              // Degenerate masks surface as an explicit empty category.
              std::printf("%s: empty category\n", to_string(cat).c_str());
              csv << to_string(cat) << ",top1,\n";
              continue;
            }
            const double top1 = eval_classification(head, data, cat);
            std::printf("%s: top1 = %.4f\n", to_string(cat).c_str(), top1);
            csv << to_string(cat) << ",top1," << top1 << "\n";
          }
          break;
        }
      }
      if (!pe_out.empty()) {
        write_file_atomic(pe_out, csv.str());
        RunManifest man;
        man.subcommand = "probe-eval";
        man.seed = seed_flag.value_or(42);
        man.add_input("probe", pe_probe);
        man.add_input("head", pe_head);
        man.add_output("eval", pe_out);
        man.write(pe_out + ".manifest.txt");
      }
    });

    // ---- sweep ----
    auto* sweep_cmd = app.add_subcommand("sweep", "position top-1 at several outlier thresholds");
    std::string sw_probe, sw_head, sw_norms, sw_out = "sweep.csv";
    std::vector<double> sw_thresholds;
    sweep_cmd->add_option("--probe", sw_probe, "position probe archive")->required();
    sweep_cmd->add_option("--head", sw_head, "head archive")->required();
    sweep_cmd->add_option("--norms", sw_norms, "norms.csv from the norms subcommand")->required();
    sweep_cmd->add_option("--thresholds", sw_thresholds, "percentiles, e.g. 98 95 90 50")
        ->required()
        ->delimiter(',');
    sweep_cmd->add_option("--out", sw_out, "output CSV");
    add_common(sweep_cmd);
    sweep_cmd->callback([&] {
      ProbeDataset data = load_probe_dataset(sw_probe);
      ProbeHead head = load_probe_head(sw_head);
      // Rebuild the pooled calibration sample from the norms CSV.
      std::istringstream in(read_text_file(sw_norms));
      std::string line;
      TokenStats stats;
      std::vector<double> pooled;
      std::getline(in, line);  // header
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::getline(row, field, ',');
        std::getline(row, field, ',');
        std::getline(row, field, ',');
        pooled.push_back(std::stod(field));
      }
      if (pooled.empty()) throw ParseError("sweep: no norms in " + sw_norms);
      stats.norms = {pooled};
      std::vector<SweepPoint> points = percentile_sweep(head, data, stats, sw_thresholds);
      std::ostringstream csv;
      csv << "q,tau,rows,top1\n";
      csv.precision(17);
      for (const SweepPoint& p : points) {
        csv << p.q << ',' << p.tau << ',' << p.rows << ',';
        if (p.top1) csv << *p.top1;
        csv << '\n';
        std::printf("q = %.2f: rows = %zu, top1 = %s\n", p.q, p.rows,
                    p.top1 ? fmt(*p.top1).c_str() : "empty");
      }
      write_file_atomic(sw_out, csv.str());
      RunManifest man;
      man.subcommand = "sweep";
      man.seed = seed_flag.value_or(42);
      man.add_input("probe", sw_probe);
      man.add_input("head", sw_head);
      man.add_input("norms", sw_norms);
      man.add_output("sweep", sw_out);
      man.write(sw_out + ".manifest.txt");
    });

    // ---- repr-train ----
    auto* rep = app.add_subcommand("repr-train", "train a classifier on image representations");
    std::string rp_model, rp_kind = "CLS+PM", rp_out = "repr_head.vtrl", rp_metrics;
    rep->add_option("--model", rp_model, "model archive")->required();
    rep->add_option("--kind", rp_kind, "CLS+PM | CLS+PM+REG | PM+REG");
    rep->add_option("--out", rp_out, "output head archive");
    rep->add_option("--metrics", rp_metrics, "lr schedule CSV");
    add_common(rep);
    rep->callback([&] {
      RunConfig cfg = load_config_or_default(config_path);
      if (seed_flag) cfg.repr.seed = *seed_flag;
      cfg.repr.kind = repr_kind_from_string(rp_kind);
      ViTModel model = load_model(rp_model);
      Dataset train_set = make_synthetic_train(cfg.data);
      Dataset val_set = make_synthetic_val(cfg.data);
      ReprResult result = train_representation_classifier(model, train_set, val_set, cfg.repr);
      save_probe_head(result.head, rp_out);
      RunManifest man;
      man.subcommand = "repr-train";
      man.seed = cfg.repr.seed;
      man.config_text = serialize_run_config(cfg);
      man.add_input("model", rp_model);
      man.add_output("head", rp_out);
      if (!rp_metrics.empty()) {
        std::ostringstream csv;
        csv << "epoch,lr\n";
        csv.precision(17);
        for (size_t e = 0; e < result.lr_by_epoch.size(); ++e) {
          csv << e << ',' << result.lr_by_epoch[e] << '\n';
        }
        write_file_atomic(rp_metrics, csv.str());
        man.add_output("metrics", rp_metrics);
      }
      man.write(rp_out + ".manifest.txt");
      std::printf("kind = %s, val_top1 = %.4f\n", to_string(cfg.repr.kind).c_str(),
                  result.val_top1);
    });

    // ---- render ----
    auto* render = app.add_subcommand("render", "render a CSV grid to a PGM map");
    std::string rd_grid, rd_out = "map.pgm";
    int64_t rd_px = 0;
    render->add_option("--grid", rd_grid, "CSV of grid rows")->required();
    render->add_option("--px", rd_px, "output side in pixels");
    render->add_option("--out", rd_out, "output PGM");
    add_common(render);
    render->callback([&] {
      std::istringstream in(read_text_file(rd_grid));
      std::string line;
      MapGrid grid;
      std::vector<std::vector<double>> rows;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream fields(line);
        std::string field;
        while (std::getline(fields, field, ',')) row.push_back(std::stod(field));
        rows.push_back(std::move(row));
      }
      if (rows.empty()) throw ParseError("render: empty grid file " + rd_grid);
      grid.grid = static_cast<int64_t>(rows.size());
      for (const auto& row : rows) {
        if (static_cast<int64_t>(row.size()) != grid.grid) {
          throw ParseError("render: grid must be square");
        }
        grid.values.insert(grid.values.end(), row.begin(), row.end());
      }
      const int64_t px = rd_px > 0 ? rd_px : grid.grid;
      write_file_atomic(rd_out, std::span<const unsigned char>(render_map(grid, px)));
      RunManifest man;
      man.subcommand = "render";
      man.seed = seed_flag.value_or(42);
      man.add_input("grid", rd_grid);
      man.add_output("map", rd_out);
      man.write(rd_out + ".manifest.txt");
    });

    // CLI11 wants argv-style reversed arguments.
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace vitlab
