#include "protoalign/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "protoalign/autodiff.hpp"
#include "protoalign/optim.hpp"
#include "protoalign/rng.hpp"

namespace protoalign {

namespace {

struct Prediction {
  std::vector<Label> labels;
  std::vector<double> max_probs;
};

Prediction argmax_rows(const Tensor& probs) {
  Prediction p;
  const std::size_t n = probs.rows();
  const std::size_t c = probs.cols();
  p.labels.resize(n);
  p.max_probs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (probs.at(i, k) > probs.at(i, best)) best = k;
    p.labels[i] = static_cast<Label>(best);
    p.max_probs[i] = probs.at(i, best);
  }
  return p;
}

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

Var sum_terms(const std::vector<Var>& terms) {
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

/// Relative change between the means of the last two windows of `values`.
std::optional<double> plateau_change(const std::vector<double>& values, std::size_t window) {
  if (values.size() < 2 * window) return std::nullopt;
  const auto end = values.end();
  const double recent = std::accumulate(end - static_cast<std::ptrdiff_t>(window), end, 0.0) / window;
  const double before = std::accumulate(end - static_cast<std::ptrdiff_t>(2 * window),
                                        end - static_cast<std::ptrdiff_t>(window), 0.0) /
                        window;
  return std::abs(recent - before) / std::max(std::abs(before), 1e-12);
}

}  // namespace

SeedPlan SeedPlan::from(std::uint64_t seed) {
  return {Rng::derive(seed, 1), Rng::derive(seed, 2), Rng::derive(seed, 3), Rng::derive(seed, 4),
          Rng::derive(seed, 5)};
}

DomainPair make_data(const TrainConfig& config) {
  if (config.data.kind == "two_moons") return gen_two_moons_shift(config.data.moons, SeedPlan::from(config.seed).data);
  DomainPair pair{load_features_csv(config.data.source_csv, Domain::Source, config.model.classes),
                  load_features_csv(config.data.target_csv, Domain::Target, config.model.classes)};
  if (!pair.source.labeled()) throw std::invalid_argument("source CSV has no label column");
  return pair;
}

nlohmann::json to_json(const IterationRecord& r) {
  return {{"iteration", r.iteration},
          {"ce", r.losses.ce},
          {"ce_gcn", r.losses.ce_gcn},
          {"bce", r.losses.bce},
          {"mi", r.losses.mi},
          {"pronce", r.losses.pronce},
          {"total", r.losses.total},
          {"gamma", r.losses.gamma},
          {"delta", r.delta},
          {"lr", r.lr},
          {"progress", r.progress},
          {"trusted_targets", r.trusted_targets},
          {"bce_empty", r.bce_empty},
          {"align_skipped", r.align_skipped}};
}

nlohmann::json to_json(const EvalResult& r) { return {{"accuracy", r.accuracy}, {"confusion", r.confusion}}; }

Tensor extract(const ModelParams& params, const Tensor& x) {
  Tape tape;
  const ModelVars m = bind_frozen(tape, params);
  return extract_features(m, tape.constant(x)).value();
}

std::vector<Label> predict(const ModelParams& params, const Tensor& x, Classifier which, const EvalOptions& options) {
  if (which == Classifier::Auto) throw std::invalid_argument("predict: classifier must be C or G_C");
  const std::size_t n = x.rows();
  if (which == Classifier::Source) {
    Tape tape;
    const ModelVars m = bind_frozen(tape, params);
    return argmax_rows(softmax(classify_source(m, extract_features(m, tape.constant(x)))).value()).labels;
  }
  if (options.batch == 0) throw std::invalid_argument("predict: batch size must be positive");
  Rng rng(options.seed);
  const std::vector<std::size_t> order = rng.permutation(n);
  std::vector<Label> out(n);
  for (std::size_t start = 0; start < n; start += options.batch) {
    const std::size_t stop = std::min(n, start + options.batch);
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(stop));
    Tape tape;
    const ModelVars m = bind_frozen(tape, params);
    const Var f = extract_features(m, tape.constant(gather(x, idx)));
    const Var a_norm = normalize_affinity(affinity_scores(m, f, options.keep_self_scores));
    const Prediction p = argmax_rows(softmax(classify_graph(m, node_update(m, f, a_norm))).value());
    for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = p.labels[i];
  }
  return out;
}

EvalResult evaluate(const ModelParams& params, const Dataset& data, Classifier which, const EvalOptions& options) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (!data.labeled()) throw std::invalid_argument("evaluate: dataset has no labels");
  const std::size_t classes = params.dims.classes;
  const std::vector<Label> pred = predict(params, data.x, which, options);
  EvalResult r;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Label y = (*data.y)[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::out_of_range("evaluate: label out of range");
    ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(pred[i])];
    if (pred[i] == y) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  return r;
}

double a_distance_from_error(double error) { return 2.0 * (1.0 - 2.0 * error); }

double a_distance(const Tensor& source_features, const Tensor& target_features, std::uint64_t seed) {
  const std::size_t ns = source_features.rows();
  const std::size_t nt = target_features.rows();
  if (ns < 4 || nt < 4) throw std::invalid_argument("a_distance: need at least 4 samples per domain");
  const std::size_t d = source_features.cols();
  if (target_features.cols() != d) throw shape_error("a_distance", source_features.shape(), target_features.shape());

  Rng rng(seed);
  std::vector<std::size_t> train_rows, test_rows;  // indices into the stacked [source; target] matrix
  for (const auto& [offset, count] : {std::pair{std::size_t{0}, ns}, std::pair{ns, nt}}) {
    std::vector<std::size_t> perm = rng.permutation(count);
    for (std::size_t i = 0; i < count; ++i) (i < count / 2 ? train_rows : test_rows).push_back(offset + perm[i]);
  }
  auto row_of = [&](std::size_t r) {
    return r < ns ? source_features.values().subspan(r * d, d) : target_features.values().subspan((r - ns) * d, d);
  };
  auto label_of = [&](std::size_t r) { return r < ns ? 0.0 : 1.0; };

  std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
  for (std::size_t r : train_rows)
    for (std::size_t k = 0; k < d; ++k) mean[k] += row_of(r)[k];
  for (double& m : mean) m /= static_cast<double>(train_rows.size());
  for (std::size_t r : train_rows)
    for (std::size_t k = 0; k < d; ++k) inv_std[k] += std::pow(row_of(r)[k] - mean[k], 2);
  for (double& s : inv_std) {
    s = std::sqrt(s / static_cast<double>(train_rows.size()));
    s = s > 1e-12 ? 1.0 / s : 0.0;
  }
  auto standardized = [&](std::size_t r) {
    std::vector<double> z(d);
    for (std::size_t k = 0; k < d; ++k) z[k] = (row_of(r)[k] - mean[k]) * inv_std[k];
    return z;
  };
  std::vector<std::vector<double>> train_x, test_x;
  for (std::size_t r : train_rows) train_x.push_back(standardized(r));
  for (std::size_t r : test_rows) test_x.push_back(standardized(r));

  std::vector<double> w(d + 1, 0.0), velocity(d + 1, 0.0);
  for (std::size_t k = 0; k < d; ++k) w[k] = 0.01 * rng.normal();
  auto logit = [&](const std::vector<double>& z) {
    double s = w[d];
    for (std::size_t k = 0; k < d; ++k) s += w[k] * z[k];
    return s;
  };
  constexpr int kEpochs = 300;
  constexpr double kRate = 0.5;
  constexpr double kMomentum = 0.9;
  constexpr double kWeightDecay = 1e-4;
  const double m = static_cast<double>(train_x.size());
  for (int epoch = 0; epoch < kEpochs; ++epoch) {
    std::vector<double> g(d + 1, 0.0);
    for (std::size_t i = 0; i < train_x.size(); ++i) {
      const double s = logit(train_x[i]);
      const double p = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
      const double err = p - label_of(train_rows[i]);
      for (std::size_t k = 0; k < d; ++k) g[k] += err * train_x[i][k];
      g[d] += err;
    }
    for (std::size_t k = 0; k <= d; ++k) {
      g[k] = g[k] / m + (k < d ? kWeightDecay * w[k] : 0.0);
      velocity[k] = kMomentum * velocity[k] + g[k];
      w[k] -= kRate * velocity[k];
    }
  }
  std::size_t errors = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    const double predicted = logit(test_x[i]) >= 0 ? 1.0 : 0.0;
    if (predicted != label_of(test_rows[i])) ++errors;
  }
  return a_distance_from_error(static_cast<double>(errors) / static_cast<double>(test_x.size()));
}

double RunSummary::target_accuracy() const {
  const auto& r = reported == Classifier::Graph ? target_gc : target_c;
  if (!r) throw std::logic_error("target accuracy unavailable: target set has no labels");
  return r->accuracy;
}

nlohmann::json to_json(const RunSummary& s) {
  nlohmann::json j{{"iterations_run", s.iterations_run},
                   {"early_stopped", s.early_stopped},
                   {"diverged", s.diverged},
                   {"reported_classifier", to_string(s.reported)},
                   {"source_accuracy", s.source_accuracy},
                   {"wall_seconds", s.wall_seconds}};
  if (s.diverged) j["divergence"] = s.divergence;
  if (s.target_c) j["target_C"] = to_json(*s.target_c);
  if (s.target_gc) j["target_G_C"] = to_json(*s.target_gc);
  if (s.target_c || s.target_gc) {
    const auto& r = s.reported == Classifier::Graph ? s.target_gc : s.target_c;
    if (r) {
      j["target_accuracy"] = r->accuracy;
      j["confusion"] = r->confusion;
    }
  }
  j["a_distance"] = s.a_distance ? nlohmann::json(*s.a_distance) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json checkpoint_to_json(const ModelParams& params, const PrototypeBank& bank, std::size_t iteration) {
  return {{"iteration", iteration}, {"model", to_json(params)}, {"prototypes", to_json(bank)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("model") || !j.contains("prototypes") || !j.contains("iteration")) {
    throw std::invalid_argument("checkpoint: expected keys iteration, model, prototypes");
  }
  return {model_from_json(j.at("model")), prototype_bank_from_json(j.at("prototypes")),
          j.at("iteration").get<std::size_t>()};
}

RunResult train(const TrainConfig& config, const DomainPair& data, const TrainObserver& observer) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::size_t classes = config.model.classes;
  if (!data.source.labeled()) throw std::invalid_argument("train: source data must be labeled");
  data.source.validate(classes);
  data.target.validate(classes);
  if (data.source.dim() != config.model.input_dim || data.target.dim() != config.model.input_dim) {
    throw std::invalid_argument("train: data width does not match model.input_dim");
  }
  if (data.source.size() < config.batch_size || data.target.size() < config.batch_size) {
    throw std::invalid_argument("train: each domain needs at least batch_size samples");
  }

  const SeedPlan seeds = SeedPlan::from(config.seed);
  RunResult run{ModelParams::init(config.model, seeds.init),
                PrototypeBank(classes, config.model.feat_dim, config.rho),
                ThresholdState{config.threshold_mode, config.threshold_momentum, 0.0, std::nullopt, {}},
                {},
                {}};
  run.summary.reported = config.reported_classifier();
  ModelParams& params = run.params;
  PrototypeBank& bank = run.bank;

  OptimizerState opt;
  opt.lr0 = config.lr;
  opt.momentum = config.momentum;
  opt.anneal = config.anneal;

  BatchSampler sampler(data.source.size(), data.target.size(), config.batch_size, seeds.sampler);
  const std::size_t b = config.batch_size;
  const std::vector<std::size_t> source_rows = iota_range(0, b);
  const std::vector<std::size_t> target_rows = iota_range(b, 2 * b);
  const bool graph = config.needs_graph();
  const ContrastOptions contrast{config.weights.tau, config.negatives, config.differentiate_weights};
  std::vector<double> totals;
  Tape tape;
  // Parameters and prototypes at the start of the last iteration whose loss
  // was finite.
  ModelParams good_params = params;
  PrototypeBank good_bank = bank;
  std::size_t good_iteration = 0;
  auto diverge = [&](std::size_t it, const std::string& what) {
    run.summary.diverged = true;
    run.summary.divergence = "iteration " + std::to_string(it) + ": " + what;
    if (observer.on_divergence) observer.on_divergence(good_iteration, good_params, good_bank);
  };

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const double progress = static_cast<double>(it) / static_cast<double>(config.iterations);
    const BatchSampler::Batch batch = sampler.next();
    const std::vector<Label> ys = gather(*data.source.y, batch.source);

    tape.clear();
    const ModelVars m = bind(tape, params);
    const Var x = concat_rows(tape.constant(gather(data.source.x, batch.source)),
                              tape.constant(gather(data.target.x, batch.target)));
    const Var f = extract_features(m, x);
    if (!f.value().all_finite()) {
      diverge(it, "non-finite features");
      break;
    }
    const Var logits_c = classify_source(m, f);
    const Var probs_c_target = gather_rows(softmax(logits_c), target_rows);

    LossComponents parts;
    std::vector<Var> terms;
    IterationRecord rec;
    rec.iteration = it;
    rec.progress = progress;
    const double gamma = gamma_schedule(progress, config.weights.alpha);

    if (config.losses.ce) {
      const Var ce = cross_entropy(gather_rows(logits_c, source_rows), ys);
      parts.ce = ce.item();
      terms.push_back(ce);
    }
    if (config.losses.mi) {
      Var mi = mi_loss(probs_c_target);
      parts.mi = mi.item();
      terms.push_back(scale(mi, config.weights.lambda_mi));
    }

    Prediction pseudo = argmax_rows(probs_c_target.value());
    Var proto_features = f;
    GroundTruth gt;
    if (graph) {
      const Var a_hat = affinity_scores(m, f, config.keep_self_scores);
      const Var f_gcn = node_update(m, f, normalize_affinity(a_hat));
      const Var logits_g = classify_graph(m, f_gcn);
      const Var probs_g_target = gather_rows(softmax(logits_g), target_rows);
      if (config.prototypes == PrototypeFeatures::DomainBiased) proto_features = f_gcn;
      if (config.pseudo_labels == PseudoLabelSource::GraphClassifier) pseudo = argmax_rows(probs_g_target.value());
      if (config.losses.ce_gcn) {
        const Var ce_gcn = cross_entropy(gather_rows(logits_g, source_rows), ys);
        parts.ce_gcn = ce_gcn.item();
        terms.push_back(scale(ce_gcn, config.weights.lambda_gcn));
      }
      if (config.mi_on_graph) {
        const Var mi_g = mi_loss(probs_g_target);
        parts.mi += mi_g.item();
        terms.push_back(scale(mi_g, config.weights.lambda_mi));
      }
      rec.delta = adaptive_threshold(pseudo.max_probs, run.threshold);
      gt = build_ground_truth(ys, pseudo.labels, pseudo.max_probs, rec.delta, classes);
      if (config.losses.bce) {
        const BceResult bce = bce_affinity(a_hat, gt.t, gt.pair_indices);
        rec.bce_empty = bce.empty;
        parts.bce = bce.loss.item();
        if (!bce.empty) terms.push_back(scale(bce.loss, config.weights.lambda_bce));
      }
      if (observer.on_graph && config.debug_graph) observer.on_graph(it, graph_debug_record(a_hat.value(), gt));
    } else {
      rec.delta = adaptive_threshold(pseudo.max_probs, run.threshold);
      gt = build_ground_truth(ys, pseudo.labels, pseudo.max_probs, rec.delta, classes);
    }
    rec.trusted_targets = gt.trusted_targets(b);

    const std::vector<bool> target_trust =
        config.target_trust_filter ? std::vector<bool>(gt.mask.begin() + static_cast<std::ptrdiff_t>(b), gt.mask.end())
                                   : std::vector<bool>{};
    const Var proto_source = gather_rows(proto_features, source_rows);
    const Var proto_target = gather_rows(proto_features, target_rows);
    if (config.losses.align) {
      const PrototypeVars ps = blend_prototypes(bank, Domain::Source, proto_source, ys, {});
      const PrototypeVars pt = blend_prototypes(bank, Domain::Target, proto_target, pseudo.labels, target_trust);
      ContrastResult align;
      switch (config.align) {
        case AlignLoss::ProNCE: align = pronce(ps, pt, contrast); break;
        case AlignLoss::InfoNCE: align = infonce(ps, pt, contrast); break;
        case AlignLoss::SemanticMatching: align = sm_loss(ps, pt); break;
      }
      rec.align_skipped = align.skipped;
      parts.pronce = align.loss.item();
      if (!align.skipped) terms.push_back(scale(align.loss, gamma));
    }

    try {
      rec.losses = total_loss(parts, config.weights, progress);
    } catch (const std::domain_error& e) {
      diverge(it, e.what());
      break;
    }
    good_params = params;
    good_bank = bank;
    good_iteration = it;

    params.zero_grad();
    if (!terms.empty()) tape.backward(sum_terms(terms));
    opt.progress = progress;
    rec.lr = opt.learning_rate();
    sgd_step(params.named_parameters(), opt);

    ema_update(bank, Domain::Source, batch_class_means(proto_source.value(), ys, {}, classes));
    ema_update(bank, Domain::Target, batch_class_means(proto_target.value(), pseudo.labels, target_trust, classes));

    run.records.push_back(rec);
    if (observer.on_iteration) observer.on_iteration(rec);
    run.summary.iterations_run = it + 1;
    totals.push_back(rec.losses.total);

    if (observer.on_checkpoint && config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 &&
        it + 1 < config.iterations) {
      observer.on_checkpoint(it + 1, params, bank);
    }
    if (config.early_stop.enabled && (it + 1) % config.early_stop.window == 0) {
      const auto change = plateau_change(totals, config.early_stop.window);
      if (change && *change < config.early_stop.rel_tol) {
        run.summary.early_stopped = true;
        break;
      }
    }
  }
  if (run.summary.diverged) {
    run.summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return run;
  }
  if (observer.on_checkpoint) observer.on_checkpoint(run.summary.iterations_run, params, bank);

  const EvalOptions eval{config.eval_batch, seeds.eval, config.keep_self_scores};
  run.summary.source_accuracy = evaluate(params, data.source, Classifier::Source, eval).accuracy;
  if (data.target.labeled()) {
    run.summary.target_c = evaluate(params, data.target, Classifier::Source, eval);
    run.summary.target_gc = evaluate(params, data.target, Classifier::Graph, eval);
  }
  if (config.eval_a_distance) {
    run.summary.a_distance = a_distance(extract(params, data.source.x), extract(params, data.target.x), seeds.probe);
  }
  run.summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return run;
}

}  // namespace protoalign
