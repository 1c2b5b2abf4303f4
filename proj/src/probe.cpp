#include "vitlab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "vitlab/rng.hpp"

namespace vitlab {

std::string to_string(ProbeTask task) {
  switch (task) {
    case ProbeTask::position: return "position";
    case ProbeTask::reconstruction: return "reconstruction";
    case ProbeTask::classification: return "classification";
  }
  return "?";
}

ProbeTask probe_task_from_string(const std::string& s) {
  if (s == "position") return ProbeTask::position;
  if (s == "reconstruction") return ProbeTask::reconstruction;
  if (s == "classification") return ProbeTask::classification;
  throw ParseError("unknown probe task: " + s);
}

std::string to_string(TokenCategory cat) {
  switch (cat) {
    case TokenCategory::cls: return "cls";
    case TokenCategory::normal: return "normal";
    case TokenCategory::outlier: return "outlier";
  }
  return "?";
}

int64_t ProbeDataset::output_width() const {
  switch (task) {
    case ProbeTask::position: return grid * grid;
    case ProbeTask::reconstruction: return patch_size * patch_size * 3;
    case ProbeTask::classification: return num_classes;
  }
  return 0;
}

namespace {

// Flattened (row, col, channel) pixels of one patch, matching the embedding
// layer's layout.
std::vector<double> patch_pixels(const Image& img, int64_t grid, int64_t patch, int64_t token) {
  const int64_t pr = token / grid, pc = token % grid;
  std::vector<double> out(static_cast<size_t>(patch * patch * 3));
  for (int64_t y = 0; y < patch; ++y) {
    for (int64_t x = 0; x < patch; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        out[static_cast<size_t>((y * patch + x) * 3 + c)] =
            img.at(pr * patch + y, pc * patch + x, c);
      }
    }
  }
  return out;
}

struct RowBuffer {
  std::vector<double> features;
  std::vector<double> targets;
  std::vector<TokenCategory> category;
  std::vector<double> norms;
  std::vector<int64_t> image_ids;
  int64_t feature_width = 0;
  int64_t target_width = 0;

  void push(std::span<const double> f, std::span<const double> t, TokenCategory cat, double norm,
            int64_t image_id) {
    features.insert(features.end(), f.begin(), f.end());
    targets.insert(targets.end(), t.begin(), t.end());
    category.push_back(cat);
    norms.push_back(norm);
    image_ids.push_back(image_id);
  }
};

}  // namespace

ProbeDataset extract_probe_dataset(const ViTModel& model, const Dataset& dataset, ProbeTask task,
                                   const TokenStats& stats, uint64_t seed) {
  if (dataset.size() == 0) throw ContractError("extract_probe_dataset: empty dataset");
  const ViTConfig& c = model.config;
  const int64_t g = c.grid();
  const int64_t n = c.num_patches();
  const int64_t d = c.embed_dim;
  Rng rng(seed);

  RowBuffer rows;
  rows.feature_width = d;
  rows.target_width = task == ProbeTask::reconstruction ? c.patch_dim() : 1;

  for (size_t item = 0; item < dataset.size(); ++item) {
    const Image img = dataset.image(item);
    Activations acts = forward(model, img);
    if (acts.grid != g) {
      throw ContractError("extract_probe_dataset: image grid " + std::to_string(acts.grid) +
                          " does not match model grid " + std::to_string(g));
    }
    const int64_t patch0 = acts.patch_row_begin();
    auto pre = acts.tokens_pre_ln.data();
    auto fin = acts.tokens_final.data();

    std::vector<double> token_norms(static_cast<size_t>(n));
    for (int64_t t = 0; t < n; ++t) {
      double acc = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const double v = pre[static_cast<size_t>((patch0 + t) * d + k)];
        acc += v * v;
      }
      token_norms[static_cast<size_t>(t)] = std::sqrt(acc);
    }

    auto token_feature = [&](int64_t t) {
      return std::span<const double>(&fin[static_cast<size_t>((patch0 + t) * d)],
                                     static_cast<size_t>(d));
    };
    auto is_outlier = [&](int64_t t) {
      return token_norms[static_cast<size_t>(t)] > stats.threshold;
    };

    switch (task) {
      case ProbeTask::position: {
        for (int64_t t = 0; t < n; ++t) {
          const double target = static_cast<double>(t);
          rows.push(token_feature(t), {&target, 1},
                    is_outlier(t) ? TokenCategory::outlier : TokenCategory::normal,
                    token_norms[static_cast<size_t>(t)], static_cast<int64_t>(item));
        }
        break;
      }
      case ProbeTask::reconstruction: {
        for (int64_t t = 0; t < n; ++t) {
          const std::vector<double> target = patch_pixels(img, g, c.patch_size, t);
          rows.push(token_feature(t), target,
                    is_outlier(t) ? TokenCategory::outlier : TokenCategory::normal,
                    token_norms[static_cast<size_t>(t)], static_cast<int64_t>(item));
        }
        break;
      }
      case ProbeTask::classification: {
        const double label = static_cast<double>(dataset.items[item].label);
        rows.push(acts.representation.data(), {&label, 1}, TokenCategory::cls, 0.0,
                  static_cast<int64_t>(item));
        std::vector<int64_t> normal_idx, outlier_idx;
        for (int64_t t = 0; t < n; ++t) (is_outlier(t) ? outlier_idx : normal_idx).push_back(t);
        if (!normal_idx.empty()) {
          const int64_t t = normal_idx[static_cast<size_t>(
              rng.uniform_int(static_cast<int64_t>(normal_idx.size())))];
          rows.push(token_feature(t), {&label, 1}, TokenCategory::normal,
                    token_norms[static_cast<size_t>(t)], static_cast<int64_t>(item));
        }
        // Images without any outlier token contribute no outlier row.
        if (!outlier_idx.empty()) {
          const int64_t t = outlier_idx[static_cast<size_t>(
              rng.uniform_int(static_cast<int64_t>(outlier_idx.size())))];
          rows.push(token_feature(t), {&label, 1}, TokenCategory::outlier,
                    token_norms[static_cast<size_t>(t)], static_cast<int64_t>(item));
        }
        break;
      }
    }
  }

  ProbeDataset out;
  out.task = task;
  out.grid = g;
  out.num_classes = dataset.num_classes;
  out.patch_size = c.patch_size;
  const int64_t count = static_cast<int64_t>(rows.category.size());
  out.features = Tensor({count, rows.feature_width}, std::move(rows.features));
  out.targets = Tensor({count, rows.target_width}, std::move(rows.targets));
  out.category = std::move(rows.category);
  out.norms = std::move(rows.norms);
  out.image_ids = std::move(rows.image_ids);
  return out;
}

ProbeDataset filter_by_category(const ProbeDataset& data, TokenCategory cat) {
  ProbeDataset out;
  out.task = data.task;
  out.grid = data.grid;
  out.num_classes = data.num_classes;
  out.patch_size = data.patch_size;
  const int64_t fw = data.feature_width(), tw = data.target_width();
  std::vector<double> features, targets;
  for (size_t i = 0; i < data.size(); ++i) {
    if (data.category[i] != cat) continue;
    auto f = data.features.data().subspan(i * static_cast<size_t>(fw), static_cast<size_t>(fw));
    auto t = data.targets.data().subspan(i * static_cast<size_t>(tw), static_cast<size_t>(tw));
    features.insert(features.end(), f.begin(), f.end());
    targets.insert(targets.end(), t.begin(), t.end());
    out.category.push_back(cat);
    out.norms.push_back(data.norms[i]);
    out.image_ids.push_back(data.image_ids[i]);
  }
  const int64_t count = static_cast<int64_t>(out.category.size());
  if (count > 0) {
    out.features = Tensor({count, fw}, std::move(features));
    out.targets = Tensor({count, tw}, std::move(targets));
  }
  return out;
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ContractError("probe: max_epochs must be >= 1");
  if (patience < 1) throw ContractError("probe: patience must be >= 1");
  if (batch_size < 1) throw ContractError("probe: batch_size must be >= 1");
  if (lr <= 0.0) throw ContractError("probe: lr must be positive");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ContractError("probe: val_fraction must be in [0, 1)");
  }
}

namespace {

Tensor gather_rows(const Tensor& source, std::span<const size_t> indices) {
  const int64_t w = source.dim(1);
  Tensor out({static_cast<int64_t>(indices.size()), w});
  auto o = out.data();
  auto s = source.data();
  for (size_t i = 0; i < indices.size(); ++i) {
    std::copy(&s[indices[i] * static_cast<size_t>(w)], &s[(indices[i] + 1) * static_cast<size_t>(w)],
              &o[i * static_cast<size_t>(w)]);
  }
  return out;
}

std::vector<int64_t> gather_labels(const Tensor& targets, std::span<const size_t> indices) {
  std::vector<int64_t> out(indices.size());
  auto t = targets.data();
  for (size_t i = 0; i < indices.size(); ++i) {
    out[i] = static_cast<int64_t>(t[indices[i]]);
  }
  return out;
}

// Grid-cell coordinates (row, col) for every class index.
Tensor coordinate_table(int64_t grid) {
  Tensor coords({grid * grid, 2});
  for (int64_t t = 0; t < grid * grid; ++t) {
    coords.at(t, 0) = static_cast<double>(t / grid);
    coords.at(t, 1) = static_cast<double>(t % grid);
  }
  return coords;
}

Tensor coordinates_for(const Tensor& targets, std::span<const size_t> indices, int64_t grid) {
  Tensor out({static_cast<int64_t>(indices.size()), 2});
  auto t = targets.data();
  for (size_t i = 0; i < indices.size(); ++i) {
    const int64_t idx = static_cast<int64_t>(t[indices[i]]);
    out.at(static_cast<int64_t>(i), 0) = static_cast<double>(idx / grid);
    out.at(static_cast<int64_t>(i), 1) = static_cast<double>(idx % grid);
  }
  return out;
}

struct EvalOutcome {
  double loss = 0.0;
  double metric = 0.0;
};

int64_t argmax_row(std::span<const double> row) {
  int64_t best = 0;
  for (size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
  }
  return best;
}

// Forward the whole slice (no tape) and compute loss + monitored metric.
EvalOutcome evaluate_slice(const ProbeDataset& data, const Tensor& weight, const Tensor& bias,
                           std::span<const size_t> indices, const Tensor& coords) {
  NoGradGuard guard;
  EvalOutcome out;
  if (indices.empty()) return out;
  Tensor x = gather_rows(data.features, indices);
  Tensor logits = add_bias(matmul(x, weight), bias);
  switch (data.task) {
    case ProbeTask::position: {
      std::vector<int64_t> labels = gather_labels(data.targets, indices);
      Tensor ce = cross_entropy_logits(logits, labels);
      Tensor expected = matmul(softmax(logits, 1), coords);
      Tensor mse = mse_loss(expected, coordinates_for(data.targets, indices, data.grid));
      out.loss = ce.item() + 0.5 * mse.item();
      size_t hits = 0;
      for (size_t i = 0; i < indices.size(); ++i) {
        auto row = logits.data().subspan(i * static_cast<size_t>(logits.dim(1)),
                                         static_cast<size_t>(logits.dim(1)));
        if (argmax_row(row) == labels[i]) ++hits;
      }
      out.metric = static_cast<double>(hits) / static_cast<double>(indices.size());
      break;
    }
    case ProbeTask::reconstruction: {
      Tensor target = gather_rows(data.targets, indices);
      out.loss = mse_loss(logits, target).item();
      out.metric = out.loss;
      break;
    }
    case ProbeTask::classification: {
      std::vector<int64_t> labels = gather_labels(data.targets, indices);
      out.loss = cross_entropy_logits(logits, labels).item();
      size_t hits = 0;
      for (size_t i = 0; i < indices.size(); ++i) {
        auto row = logits.data().subspan(i * static_cast<size_t>(logits.dim(1)),
                                         static_cast<size_t>(logits.dim(1)));
        if (argmax_row(row) == labels[i]) ++hits;
      }
      out.metric = static_cast<double>(hits) / static_cast<double>(indices.size());
      break;
    }
  }
  return out;
}

}  // namespace

std::pair<ProbeHead, TrainHistory> train_linear_probe(const ProbeDataset& data,
                                                      const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw ContractError("train_linear_probe: empty dataset");
  if (cfg.task != data.task) {
    throw ContractError("train_linear_probe: config task " + to_string(cfg.task) +
                        " does not match dataset task " + to_string(data.task));
  }
  const int64_t w = data.feature_width();
  const int64_t k = data.output_width();
  if (data.task == ProbeTask::classification && k < 1) {
    throw ContractError("train_linear_probe: dataset has no classes");
  }

  ProbeHead head;
  head.weight = Tensor({w, k}, 0.0, true);  // zero init: deterministic, fine for a linear probe
  head.bias = Tensor({k}, 0.0, true);

  Rng rng(cfg.seed);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  rng.shuffle(order);
  size_t val_count = static_cast<size_t>(static_cast<double>(data.size()) * cfg.val_fraction);
  if (val_count == 0 && data.size() >= 2) val_count = 1;
  std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(val_count));
  std::vector<size_t> train_idx(order.begin() + static_cast<long>(val_count), order.end());
  if (train_idx.empty()) train_idx = val_idx;  // degenerate single-row dataset
  if (val_idx.empty()) val_idx = train_idx;

  Tensor coords = data.task == ProbeTask::position ? coordinate_table(data.grid) : Tensor({1, 1});

  OptimizerConfig ocfg;
  ocfg.kind = cfg.optimizer;
  ocfg.lr = cfg.lr;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.momentum = cfg.momentum;
  ocfg.weight_decay = cfg.weight_decay;
  Optimizer opt({head.weight, head.bias}, ocfg);

  const bool maximize = data.task != ProbeTask::reconstruction;
  TrainHistory history;
  double best_score = maximize ? -std::numeric_limits<double>::infinity()
                               : std::numeric_limits<double>::infinity();
  std::vector<double> best_weight(head.weight.data().begin(), head.weight.data().end());
  std::vector<double> best_bias(head.bias.data().begin(), head.bias.data().end());
  int64_t epochs_since_best = 0;

  for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr, epoch, cfg.max_epochs);
    opt.set_lr(lr);
    rng.shuffle(train_idx);
    double train_loss_sum = 0.0;
    for (size_t start = 0; start < train_idx.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(train_idx.size(), start + static_cast<size_t>(cfg.batch_size));
      std::span<const size_t> batch(train_idx.data() + start, end - start);
      Tape tape;
      Tensor x = gather_rows(data.features, batch);
      Tensor logits = add_bias(matmul(x, head.weight), head.bias);
      Tensor loss;
      switch (data.task) {
        case ProbeTask::position: {
          Tensor ce = cross_entropy_logits(logits, gather_labels(data.targets, batch));
          Tensor expected = matmul(softmax(logits, 1), coords);
          Tensor mse = mse_loss(expected, coordinates_for(data.targets, batch, data.grid));
          loss = add(ce, scale(mse, 0.5));
          break;
        }
        case ProbeTask::reconstruction:
          loss = mse_loss(logits, gather_rows(data.targets, batch));
          break;
        case ProbeTask::classification:
          loss = cross_entropy_logits(logits, gather_labels(data.targets, batch));
          break;
      }
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw ContractError("train_linear_probe: non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch offset " + std::to_string(start));
      }
      train_loss_sum += loss_value * static_cast<double>(batch.size());
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
    }

    EvalOutcome val = evaluate_slice(data, head.weight, head.bias, val_idx, coords);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_loss_sum / static_cast<double>(train_idx.size());
    rec.val_loss = val.loss;
    rec.val_metric = val.metric;
    history.epochs.push_back(rec);

    const bool improved = maximize ? val.metric > best_score : val.metric < best_score;
    if (improved) {
      best_score = val.metric;
      history.best_epoch = epoch;
      best_weight.assign(head.weight.data().begin(), head.weight.data().end());
      best_bias.assign(head.bias.data().begin(), head.bias.data().end());
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) {
        history.early_stopped = true;
        break;
      }
    }
  }

  // Restore the best validation epoch exactly.
  std::copy(best_weight.begin(), best_weight.end(), head.weight.data().begin());
  std::copy(best_bias.begin(), best_bias.end(), head.bias.data().begin());
  return {std::move(head), std::move(history)};
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream out;
  out << "epoch,split,loss,metric\n";
  out.precision(17);
  for (const EpochRecord& r : history.epochs) {
    out << r.epoch << ",train," << r.train_loss << ",\n";
    out << r.epoch << ",val," << r.val_loss << ',' << r.val_metric << '\n';
  }
  return out.str();
}

namespace {

Tensor head_logits(const ProbeHead& head, const Tensor& features) {
  NoGradGuard guard;
  return add_bias(matmul(features, head.weight), head.bias);
}

}  // namespace

PositionEval eval_position(const ProbeHead& head, const ProbeDataset& data) {
  if (data.task != ProbeTask::position) throw ContractError("eval_position: wrong task");
  if (data.size() == 0) throw ContractError("eval_position: empty dataset");
  Tensor logits = head_logits(head, data.features);
  const int64_t k = logits.dim(1);
  PositionEval out;
  out.rows = data.size();
  auto t = data.targets.data();
  for (size_t i = 0; i < data.size(); ++i) {
    auto row = logits.data().subspan(i * static_cast<size_t>(k), static_cast<size_t>(k));
    const int64_t pred = argmax_row(row);
    const int64_t truth = static_cast<int64_t>(t[i]);
    if (pred == truth) out.top1 += 1.0;
    const double dr = static_cast<double>(pred / data.grid - truth / data.grid);
    const double dc = static_cast<double>(pred % data.grid - truth % data.grid);
    out.mean_distance += std::sqrt(dr * dr + dc * dc);
  }
  out.top1 /= static_cast<double>(data.size());
  out.mean_distance /= static_cast<double>(data.size());
  return out;
}

double center_baseline(int64_t grid) {
  if (grid < 1) throw ContractError("center_baseline: grid must be >= 1");
  const double cy = static_cast<double>(grid - 1) / 2.0;
  double acc = 0.0;
  for (int64_t r = 0; r < grid; ++r) {
    for (int64_t c = 0; c < grid; ++c) {
      const double dr = static_cast<double>(r) - cy;
      const double dc = static_cast<double>(c) - cy;
      acc += std::sqrt(dr * dr + dc * dc);
    }
  }
  return acc / static_cast<double>(grid * grid);
}

double eval_reconstruction(const ProbeHead& head, const ProbeDataset& data) {
  if (data.task != ProbeTask::reconstruction) throw ContractError("eval_reconstruction: wrong task");
  if (data.size() == 0) throw ContractError("eval_reconstruction: empty dataset");
  Tensor logits = head_logits(head, data.features);
  const int64_t k = logits.dim(1);
  auto p = logits.data();
  auto t = data.targets.data();
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    acc += d * d;
  }
  return acc * static_cast<double>(k) / static_cast<double>(p.size());  // mean ||pred-true||^2
}

double eval_classification(const ProbeHead& head, const ProbeDataset& data, TokenCategory cat) {
  if (data.task != ProbeTask::classification) throw ContractError("eval_classification: wrong task");
  ProbeDataset slice = filter_by_category(data, cat);
  if (slice.size() == 0) {
    throw ContractError("eval_classification: empty category " + to_string(cat));
  }
  Tensor logits = head_logits(head, slice.features);
  const int64_t k = logits.dim(1);
  auto t = slice.targets.data();
  size_t hits = 0;
  for (size_t i = 0; i < slice.size(); ++i) {
    auto row = logits.data().subspan(i * static_cast<size_t>(k), static_cast<size_t>(k));
    if (argmax_row(row) == static_cast<int64_t>(t[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(slice.size());
}

std::vector<SweepPoint> percentile_sweep(const ProbeHead& head, const ProbeDataset& data,
                                         const TokenStats& stats, std::span<const double> qs) {
  if (data.task != ProbeTask::position) throw ContractError("percentile_sweep: position task only");
  const std::vector<double> pooled = stats.pooled();
  Tensor logits = head_logits(head, data.features);
  const int64_t k = logits.dim(1);
  std::vector<int64_t> preds(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    preds[i] = argmax_row(logits.data().subspan(i * static_cast<size_t>(k), static_cast<size_t>(k)));
  }
  auto targets = data.targets.data();

  std::vector<SweepPoint> out;
  for (double q : qs) {
    SweepPoint point;
    point.q = q;
    // q = 0 is the "all tokens are outliers" limit.
    point.tau = q <= 0.0 ? -std::numeric_limits<double>::infinity() : percentile_linear(pooled, q);
    size_t hits = 0;
    for (size_t i = 0; i < data.size(); ++i) {
      if (!(data.norms[i] > point.tau)) continue;
      ++point.rows;
      if (preds[i] == static_cast<int64_t>(targets[i])) ++hits;
    }
    if (point.rows > 0) point.top1 = static_cast<double>(hits) / static_cast<double>(point.rows);
    out.push_back(point);
  }
  return out;
}

std::string to_string(ReprKind kind) {
  switch (kind) {
    case ReprKind::cls_pm: return "CLS+PM";
    case ReprKind::cls_pm_reg: return "CLS+PM+REG";
    case ReprKind::pm_reg: return "PM+REG";
  }
  return "?";
}

ReprKind repr_kind_from_string(const std::string& s) {
  if (s == "CLS+PM") return ReprKind::cls_pm;
  if (s == "CLS+PM+REG") return ReprKind::cls_pm_reg;
  if (s == "PM+REG") return ReprKind::pm_reg;
  throw ParseError("unknown representation kind: " + s);
}

Tensor build_representation(const Activations& acts, ReprKind kind) {
  const int64_t r = acts.config.num_registers;
  if ((kind == ReprKind::cls_pm_reg || kind == ReprKind::pm_reg) && r < 1) {
    throw ContractError("build_representation: " + to_string(kind) +
                        " requires a model with registers");
  }
  NoGradGuard guard;
  const int64_t d = acts.config.embed_dim;
  Tensor pm = pooled_representation(acts);
  // In pooled mode the patch mean stands in for the [CLS] token.
  Tensor cls = acts.config.use_cls ? slice_rows(acts.tokens_final, 0, 1) : pm;
  Tensor regs_flat;
  if (r > 0) {
    regs_flat = Tensor({1, r * d}, std::vector<double>(acts.register_out.data().begin(),
                                                       acts.register_out.data().end()));
  }
  switch (kind) {
    case ReprKind::cls_pm: return concat_cols({cls, pm});
    case ReprKind::cls_pm_reg: return concat_cols({cls, pm, regs_flat});
    case ReprKind::pm_reg: return concat_cols({pm, regs_flat});
  }
  throw ContractError("build_representation: bad kind");
}

void ReprConfig::validate() const {
  if (epochs < 1) throw ContractError("repr: epochs must be >= 1");
  if (lr <= 0.0) throw ContractError("repr: lr must be positive");
  if (batch_size < 1) throw ContractError("repr: batch_size must be >= 1");
}

namespace {

std::pair<Tensor, std::vector<int64_t>> extract_representations(const ViTModel& model,
                                                                const Dataset& dataset,
                                                                ReprKind kind) {
  if (dataset.size() == 0) throw ContractError("extract_representations: empty dataset");
  std::vector<double> rows;
  std::vector<int64_t> labels;
  int64_t width = 0;
  for (size_t i = 0; i < dataset.size(); ++i) {
    Activations acts = forward(model, dataset.image(i));
    Tensor rep = build_representation(acts, kind);
    width = rep.dim(1);
    rows.insert(rows.end(), rep.data().begin(), rep.data().end());
    labels.push_back(dataset.items[i].label);
  }
  Tensor features({static_cast<int64_t>(labels.size()), width}, std::move(rows));
  return {std::move(features), std::move(labels)};
}

}  // namespace

ReprResult train_representation_classifier(const ViTModel& model, const Dataset& train,
                                           const Dataset& val, const ReprConfig& cfg) {
  cfg.validate();
  auto [train_x, train_y] = extract_representations(model, train, cfg.kind);
  auto [val_x, val_y] = extract_representations(model, val, cfg.kind);
  const int64_t w = train_x.dim(1);
  const int64_t classes = train.num_classes;

  ReprResult result;
  result.head.weight = Tensor({w, classes}, 0.0, true);
  result.head.bias = Tensor({classes}, 0.0, true);

  OptimizerConfig ocfg;
  ocfg.kind = OptimizerKind::sgd;
  ocfg.lr = cfg.lr;
  Optimizer opt({result.head.weight, result.head.bias}, ocfg);

  Rng rng(cfg.seed);
  std::vector<size_t> order(static_cast<size_t>(train_x.dim(0)));
  std::iota(order.begin(), order.end(), size_t{0});

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
    result.lr_by_epoch.push_back(lr);
    opt.set_lr(lr);
    rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::span<const size_t> batch(order.data() + start, end - start);
      Tape tape;
      Tensor x = gather_rows(train_x, batch);
      std::vector<int64_t> labels;
      for (size_t i : batch) labels.push_back(train_y[i]);
      Tensor loss = cross_entropy_logits(add_bias(matmul(x, result.head.weight), result.head.bias),
                                         labels);
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
    }
  }

  Tensor logits = head_logits(result.head, val_x);
  size_t hits = 0;
  for (size_t i = 0; i < val_y.size(); ++i) {
    auto row = logits.data().subspan(i * static_cast<size_t>(classes), static_cast<size_t>(classes));
    if (argmax_row(row) == val_y[i]) ++hits;
  }
  result.val_top1 = static_cast<double>(hits) / static_cast<double>(val_y.size());
  return result;
}

}  // namespace vitlab
