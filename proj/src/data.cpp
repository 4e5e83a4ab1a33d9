#include "protoalign/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace protoalign {

void Dataset::validate(std::size_t classes) const {
  if (!x.all_finite()) throw std::domain_error("dataset '" + provenance + "': non-finite feature values");
  if (!y) return;
  if (y->size() != x.rows()) {
    throw std::invalid_argument("dataset '" + provenance + "': " + std::to_string(y->size()) +
                                " labels for " + std::to_string(x.rows()) + " rows");
  }
  for (Label l : *y)
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw std::out_of_range("dataset '" + provenance + "': label " + std::to_string(l) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
}

std::vector<std::size_t> stratified_counts(std::size_t n, const std::vector<double>& fractions) {
  if (fractions.empty()) throw std::invalid_argument("stratified_counts: no classes");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw std::invalid_argument("stratified_counts: negative class fraction");
    total += f;
  }
  if (!(total > 0.0)) throw std::invalid_argument("stratified_counts: fractions sum to zero");
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double exact = static_cast<double>(n) * fractions[k] / total;
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
  return counts;
}

namespace {

struct Sample {
  double x0, x1;
  Label y;
};

std::vector<Sample> draw_moons(const TwoMoonsSpec& spec, Rng& rng) {
  const auto counts = stratified_counts(spec.n_per_domain, {spec.class0_fraction, 1.0 - spec.class0_fraction});
  std::vector<Sample> out;
  out.reserve(spec.n_per_domain);
  for (Label k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < counts[static_cast<std::size_t>(k)]; ++i) {
      const double t = rng.uniform(0.0, std::numbers::pi);
      double x0 = k == 0 ? std::cos(t) : 1.0 - std::cos(t);
      double x1 = k == 0 ? std::sin(t) : 0.5 - std::sin(t);
      x0 += spec.noise * rng.normal();
      x1 += spec.noise * rng.normal();
      out.push_back({x0, x1, k});
    }
  rng.shuffle(std::span<Sample>(out));
  return out;
}

Dataset to_dataset(const std::vector<Sample>& samples, Domain domain, std::string provenance) {
  Dataset d;
  d.x = Tensor::zeros({samples.size(), 2});
  d.y.emplace();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    d.x.at(i, 0) = samples[i].x0;
    d.x.at(i, 1) = samples[i].x1;
    d.y->push_back(samples[i].y);
  }
  d.domain = domain;
  d.provenance = std::move(provenance);
  return d;
}

}  // namespace

DomainPair gen_two_moons_shift(const TwoMoonsSpec& spec, std::uint64_t seed) {
  if (spec.n_per_domain < 2) throw std::invalid_argument("gen_two_moons_shift: need at least one sample per class");
  if (!(spec.noise >= 0.0)) throw std::invalid_argument("gen_two_moons_shift: noise must be non-negative");
  if (!(spec.class0_fraction > 0.0 && spec.class0_fraction < 1.0)) {
    throw std::invalid_argument("gen_two_moons_shift: class0_fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  auto source = draw_moons(spec, rng);
  auto target = draw_moons(spec, rng);
  const double theta = spec.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  constexpr double cx = 0.5, cy = 0.25;
  for (auto& p : target) {
    const double dx = p.x0 - cx, dy = p.x1 - cy;
    p.x0 = cx + c * dx - s * dy + spec.translation_x;
    p.x1 = cy + s * dx + c * dy + spec.translation_y;
  }
  std::ostringstream prov;
  prov << "two_moons(n=" << spec.n_per_domain << ", noise=" << spec.noise << ", rotation_deg=" << spec.rotation_deg
       << ", translation=(" << spec.translation_x << ", " << spec.translation_y << "), seed=" << seed << ")";
  return {to_dataset(source, Domain::Source, prov.str() + "/source"),
          to_dataset(target, Domain::Target, prov.str() + "/target")};
}

namespace {

/// Lower-triangular L with L L^T = cov; tolerates semi-definite input.
std::vector<double> cholesky_psd(const std::vector<std::vector<double>>& cov, std::size_t d) {
  constexpr double tol = 1e-12;
  if (cov.size() != d) throw std::invalid_argument("covariance: expected " + std::to_string(d) + " rows");
  for (std::size_t i = 0; i < d; ++i) {
    if (cov[i].size() != d) throw std::invalid_argument("covariance: ragged matrix");
    for (std::size_t j = 0; j < i; ++j)
      if (std::fabs(cov[i][j] - cov[j][i]) > tol) throw std::invalid_argument("covariance: not symmetric");
  }
  std::vector<double> L(d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double diag = cov[j][j];
    for (std::size_t k = 0; k < j; ++k) diag -= L[j * d + k] * L[j * d + k];
    if (diag < -tol) throw std::invalid_argument("covariance: not positive semi-definite");
    const double ljj = diag > tol ? std::sqrt(diag) : 0.0;
    L[j * d + j] = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double v = cov[i][j];
      for (std::size_t k = 0; k < j; ++k) v -= L[i * d + k] * L[j * d + k];
      if (ljj == 0.0) {
        if (std::fabs(v) > tol) throw std::invalid_argument("covariance: not positive semi-definite");
        L[i * d + j] = 0.0;
      } else {
        L[i * d + j] = v / ljj;
      }
    }
  }
  return L;
}

}  // namespace

DomainPair gen_gaussian_blobs_shift(const BlobsSpec& spec, std::uint64_t seed) {
  const std::size_t classes = spec.means.size();
  if (classes < 2) throw std::invalid_argument("gen_gaussian_blobs_shift: need at least two classes");
  if (spec.n_per_domain < classes) {
    throw std::invalid_argument("gen_gaussian_blobs_shift: fewer samples than classes");
  }
  if (spec.covariances.size() != classes) throw std::invalid_argument("gen_gaussian_blobs_shift: one covariance per class");
  if (!spec.shifts.empty() && spec.shifts.size() != classes) {
    throw std::invalid_argument("gen_gaussian_blobs_shift: one shift per class");
  }
  if (!(spec.target_cov_scale >= 0.0)) throw std::invalid_argument("gen_gaussian_blobs_shift: negative covariance scale");
  const std::size_t d = spec.means.front().size();
  std::vector<std::vector<double>> chol;
  for (std::size_t k = 0; k < classes; ++k) {
    if (spec.means[k].size() != d) throw std::invalid_argument("gen_gaussian_blobs_shift: ragged means");
    if (!spec.shifts.empty() && spec.shifts[k].size() != d) throw std::invalid_argument("gen_gaussian_blobs_shift: ragged shifts");
    chol.push_back(cholesky_psd(spec.covariances[k], d));
  }
  const auto fractions = spec.class_fractions.empty() ? std::vector<double>(classes, 1.0) : spec.class_fractions;
  if (fractions.size() != classes) throw std::invalid_argument("gen_gaussian_blobs_shift: one fraction per class");
  const auto counts = stratified_counts(spec.n_per_domain, fractions);

  Rng rng(seed);
  auto draw = [&](bool target) {
    std::vector<std::pair<std::vector<double>, Label>> rows;
    const double sd_scale = target ? std::sqrt(spec.target_cov_scale) : 1.0;
    std::vector<double> z(d);
    for (std::size_t k = 0; k < classes; ++k)
      for (std::size_t i = 0; i < counts[k]; ++i) {
        for (double& v : z) v = rng.normal();
        std::vector<double> x(d);
        for (std::size_t r = 0; r < d; ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c <= r; ++c) acc += chol[k][r * d + c] * z[c];
          x[r] = spec.means[k][r] + sd_scale * acc + (target && !spec.shifts.empty() ? spec.shifts[k][r] : 0.0);
        }
        rows.emplace_back(std::move(x), static_cast<Label>(k));
      }
    rng.shuffle(std::span(rows));
    Dataset ds;
    ds.x = Tensor::zeros({rows.size(), d});
    ds.y.emplace();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t r = 0; r < d; ++r) ds.x.at(i, r) = rows[i].first[r];
      ds.y->push_back(rows[i].second);
    }
    ds.domain = target ? Domain::Target : Domain::Source;
    ds.provenance = "gaussian_blobs(classes=" + std::to_string(classes) + ", seed=" + std::to_string(seed) + ")" +
                    (target ? "/target" : "/source");
    return ds;
  };
  Dataset source = draw(false);
  Dataset target = draw(true);
  return {std::move(source), std::move(target)};
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

std::runtime_error csv_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  return std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Dataset load_features_csv(const std::filesystem::path& path, Domain domain, std::size_t classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw csv_error(path, 1, "missing header row");
  auto header = split_csv_line(trim(line));
  for (auto& h : header) h = trim(h);
  bool has_label = !header.empty() && header.back() == "label";
  const std::size_t d = header.size() - (has_label ? 1 : 0);
  if (d == 0) throw csv_error(path, 1, "header has no feature columns");
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "f" + std::to_string(j)) {
      throw csv_error(path, 1, "expected column 'f" + std::to_string(j) + "', found '" + header[j] + "'");
    }

  std::vector<double> values;
  std::vector<Label> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw csv_error(path, lineno, "expected " + std::to_string(header.size()) + " cells, found " +
                                        std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      const std::string cell = trim(cells[j]);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw csv_error(path, lineno, "non-numeric cell '" + cell + "' in column f" + std::to_string(j));
      }
      if (!std::isfinite(v)) throw csv_error(path, lineno, "non-finite value in column f" + std::to_string(j));
      values.push_back(v);
    }
    if (has_label) {
      const std::string cell = trim(cells[d]);
      long long l = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), l);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw csv_error(path, lineno, "non-integer label '" + cell + "'");
      }
      if (l < 0 || static_cast<unsigned long long>(l) >= classes) {
        throw csv_error(path, lineno, "label " + cell + " outside [0, " + std::to_string(classes) + ")");
      }
      labels.push_back(static_cast<Label>(l));
    }
  }
  Dataset ds;
  const std::size_t n = values.size() / d;
  ds.x = Tensor({n, d}, std::move(values));
  if (has_label) ds.y = std::move(labels);
  ds.domain = domain;
  ds.provenance = path.string();
  return ds;
}

void save_features_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t d = data.dim();
  for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << 'f' << j;
  if (data.labeled()) out << ",label";
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, data.x.at(i, j));
      if (j) out << ',';
      out.write(buf, end - buf);
    }
    if (data.labeled()) out << ',' << (*data.y)[i];
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Sampling

BatchSampler::BatchSampler(std::size_t n_source, std::size_t n_target, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed), source_{n_source, {}}, target_{n_target, {}} {
  if (batch_size == 0) throw std::invalid_argument("BatchSampler: batch size must be positive");
  if (n_source < batch_size || n_target < batch_size) {
    throw std::invalid_argument("BatchSampler: each domain needs at least " + std::to_string(batch_size) +
                                " samples (source " + std::to_string(n_source) + ", target " +
                                std::to_string(n_target) + ")");
  }
  source_.order = rng_.permutation(n_source);
  target_.order = rng_.permutation(n_target);
}

std::vector<std::size_t> BatchSampler::take(Cursor& c) {
  if (c.pos + batch_size_ > c.n) {
    c.order = rng_.permutation(c.n);
    c.pos = 0;
    ++c.epoch;
  }
  std::vector<std::size_t> out(c.order.begin() + static_cast<std::ptrdiff_t>(c.pos),
                               c.order.begin() + static_cast<std::ptrdiff_t>(c.pos + batch_size_));
  c.pos += batch_size_;
  return out;
}

BatchSampler::Batch BatchSampler::next() {
  Batch b;
  b.source = take(source_);
  b.target = take(target_);
  return b;
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices) {
  const std::size_t d = x.cols();
  Tensor out = Tensor::zeros({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = x.at(indices[r], j);
  return out;
}

std::vector<Label> gather(const std::vector<Label>& y, const std::vector<std::size_t>& indices) {
  std::vector<Label> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(y.at(i));
  return out;
}

}  // namespace protoalign
