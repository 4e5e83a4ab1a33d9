#include "protoalign/ablation.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace protoalign {

TrainConfig AblationRow::apply(const TrainConfig& base) const {
  TrainConfig c = base;
  c.losses = losses;
  if (align) c.align = *align;
  if (prototypes) c.prototypes = *prototypes;
  if (pseudo_labels) c.pseudo_labels = *pseudo_labels;
  if (report) c.report = *report;
  if (!c.losses.mi) c.mi_on_graph = false;
  return c;
}

std::vector<AblationRow> loss_subset_rows() {
  //                 ce     mi     ce_gcn bce    align
  return {
      {"ce", {true, false, false, false, false}, {}, {}, {}, {}},
      {"ce+mi", {true, true, false, false, false}, {}, {}, {}, {}},
      {"ce+mi+bce", {true, true, false, true, false}, {}, {}, {}, {}},
      {"ce+mi+pronce", {true, true, false, false, true}, {}, {}, {}, {}},
      {"ce+mi+ce_gcn", {true, true, true, false, false}, {}, {}, {}, {}},
      {"ce+mi+ce_gcn+bce", {true, true, true, true, false}, {}, {}, {}, {}},
      {"ce+mi+ce_gcn+pronce", {true, true, true, false, true}, {}, {}, {}, {}},
      {"mi+ce_gcn+bce+pronce/gc_pseudo", {false, true, true, true, true}, {}, {}, PseudoLabelSource::GraphClassifier, {}},
      {"full/C", {true, true, true, true, true}, {}, {}, {}, Classifier::Source},
      {"full/G_C", {true, true, true, true, true}, {}, {}, {}, Classifier::Graph},
  };
}

std::vector<AblationRow> alignment_rows() {
  std::vector<AblationRow> rows;
  for (AlignLoss loss : {AlignLoss::SemanticMatching, AlignLoss::InfoNCE, AlignLoss::ProNCE})
    for (PrototypeFeatures p : {PrototypeFeatures::Raw, PrototypeFeatures::DomainBiased})
      rows.push_back({to_string(loss) + "/" + to_string(p), LossFlags{}, loss, p, {}, {}});
  return rows;
}

std::vector<AblationRow> preset_rows(const std::string& name) {
  if (name == "loss-subsets") return loss_subset_rows();
  if (name == "alignment") return alignment_rows();
  throw std::invalid_argument("unknown ablation preset '" + name + "' (expected loss-subsets or alignment)");
}

AblationCell summarize(const std::vector<double>& values) {
  AblationCell cell;
  if (values.empty()) return cell;
  double total = 0.0;
  for (double v : values) total += v;
  cell.mean = total / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - cell.mean) * (v - cell.mean);
    cell.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return cell;
}

std::vector<AblationResult> run_ablation(const TrainConfig& base, const DomainPair* data,
                                         const std::vector<AblationRow>& rows, const AblationOptions& options) {
  if (rows.empty()) throw std::invalid_argument("run_ablation: no rows");
  if (options.seeds == 0) throw std::invalid_argument("run_ablation: need at least one seed");

  std::vector<AblationResult> results;
  for (const AblationRow& row : rows) {
    TrainConfig c = row.apply(base);
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("ablation row '" + row.name + "': " + e.what());
    }
    results.push_back({row, c, {}, {}, {}, {}, {}});
  }

  // Distinct training configurations; the reported classifier only affects
  // the summary, so it is excluded from the key.
  std::map<std::string, std::size_t> unique;
  std::vector<std::size_t> job_of_row(rows.size());
  std::vector<TrainConfig> configs;
  for (std::size_t r = 0; r < results.size(); ++r) {
    TrainConfig key_config = results[r].config;
    key_config.report = Classifier::Auto;
    const auto [it, inserted] = unique.emplace(to_json(key_config).dump(), configs.size());
    if (inserted) configs.push_back(key_config);
    job_of_row[r] = it->second;
  }

  const std::size_t n_jobs = configs.size() * options.seeds;
  std::vector<RunSummary> summaries(n_jobs);
  std::vector<std::exception_ptr> errors(n_jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < n_jobs; j = next++) {
      try {
        TrainConfig c = configs[j / options.seeds];
        c.seed = base.seed + j % options.seeds;
        summaries[j] = train(c, data ? *data : make_data(c)).summary;
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, n_jobs));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t r = 0; r < results.size(); ++r) {
    AblationResult& res = results[r];
    const Classifier reported = res.config.reported_classifier();
    std::vector<double> acc, acc_c, acc_gc, dist;
    for (std::size_t s = 0; s < options.seeds; ++s) {
      RunSummary run = summaries[job_of_row[r] * options.seeds + s];
      run.reported = reported;
      if (run.target_c) acc_c.push_back(run.target_c->accuracy);
      if (run.target_gc) acc_gc.push_back(run.target_gc->accuracy);
      if (run.target_c || run.target_gc) acc.push_back(run.target_accuracy());
      if (run.a_distance) dist.push_back(*run.a_distance);
      res.runs.push_back(std::move(run));
    }
    res.accuracy = summarize(acc);
    res.target_c = summarize(acc_c);
    res.target_gc = summarize(acc_gc);
    if (!dist.empty()) res.a_distance = summarize(dist);
  }
  return results;
}

std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::ostringstream out;
  out << "row,name,ce,mi,ce_gcn,bce,align,align_loss,prototypes,pseudo_labels,classifier,seeds,"
         "accuracy_mean,accuracy_std,C_mean,C_std,G_C_mean,G_C_std,a_distance_mean,a_distance_std\n";
  out << std::setprecision(6) << std::fixed;
  for (std::size_t r = 0; r < results.size(); ++r) {
    const AblationResult& res = results[r];
    const TrainConfig& c = res.config;
    const LossFlags& f = c.losses;
    out << r + 1 << ',' << res.row.name << ',' << f.ce << ',' << f.mi << ',' << f.ce_gcn << ',' << f.bce << ','
        << f.align << ',' << to_string(c.align) << ',' << to_string(c.prototypes) << ','
        << to_string(c.pseudo_labels) << ',' << to_string(c.reported_classifier()) << ',' << res.runs.size() << ','
        << res.accuracy.mean << ',' << res.accuracy.std << ',' << res.target_c.mean << ',' << res.target_c.std << ','
        << res.target_gc.mean << ',' << res.target_gc.std << ',';
    if (res.a_distance) {
      out << res.a_distance->mean << ',' << res.a_distance->std;
    } else {
      out << ',';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace protoalign
