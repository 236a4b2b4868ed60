#include "normaug/diagnostics.hpp"

#include <cmath>
#include <stdexcept>

#include "normaug/inference.hpp"
#include "normaug/io.hpp"

namespace naug {

namespace {

std::vector<double> column_sums(const Tensor &x) {
  std::vector<double> out(x.dim(1), 0.0);
  const auto v = x.data();
  for (std::size_t r = 0; r < x.dim(0); ++r)
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += v[r * out.size() + c];
  return out;
}

std::vector<double> scaled(std::vector<double> v, double factor) {
  for (auto &x : v) x *= factor;
  return v;
}

double distance(const std::vector<double> &a, const std::vector<double> &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

void require_features(const Tensor &x, const std::string &what) {
  if (!x.defined() || x.rank() != 2 || x.dim(0) == 0) {
    throw std::invalid_argument("divergence: empty " + what + " set");
  }
}

}  // namespace

DivergenceReport divergence_from_features(const std::vector<Tensor> &sources, const Tensor &target) {
  if (sources.empty()) throw std::invalid_argument("divergence: no source sets");
  for (const auto &s : sources) require_features(s, "source");
  require_features(target, "target");
  const std::size_t f = target.dim(1);
  for (const auto &s : sources)
    if (s.dim(1) != f) throw ShapeError("divergence", s.shape(), target.shape());

  DivergenceReport report;
  std::vector<double> total(f, 0.0);
  std::size_t rows = 0;
  for (const auto &s : sources) {
    const auto sums = column_sums(s);
    for (std::size_t c = 0; c < f; ++c) total[c] += sums[c];
    rows += s.dim(0);
    report.domain_means.push_back(scaled(sums, 1.0 / static_cast<double>(s.dim(0))));
  }
  report.source_mean = scaled(total, 1.0 / static_cast<double>(rows));
  report.target_mean = scaled(column_sums(target), 1.0 / static_cast<double>(target.dim(0)));
  for (const auto &m : report.domain_means) report.d_s2s += distance(report.source_mean, m);
  report.d_s2s /= static_cast<double>(sources.size());
  report.d_s2t = distance(report.source_mean, report.target_mean);
  return report;
}

Tensor extract_features(Model &model, const Dataset &data, std::size_t chunk_size) {
  if (data.size() == 0) throw std::invalid_argument("divergence: empty dataset");
  NoGradGuard no_grad;
  std::vector<double> values;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk_size) {
    const std::size_t end = std::min(data.size(), begin + chunk_size);
    const Tensor f = model.forward_main(rows_tensor(data, begin, end), NormMode::eval).features;
    values.insert(values.end(), f.data().begin(), f.data().end());
  }
  return Tensor({data.size(), model.config().feature_dim()}, std::move(values));
}

DivergenceReport divergence(Model &model, const Dataset &source, const Dataset &target) {
  std::vector<Tensor> sources;
  for (auto d : source.present_domains()) {
    const auto rows = source.rows_of_domain(d);
    sources.push_back(extract_features(model, source.subset(rows)));
  }
  return divergence_from_features(sources, extract_features(model, target));
}

std::vector<double> perturbation_probe(Model &model, const Tensor &probe, const std::vector<Tensor> &companions) {
  if (companions.empty()) throw std::invalid_argument("perturbation_probe: empty companion set");
  NoGradGuard no_grad;
  const std::size_t n = probe.dim(0);
  const std::size_t d = probe.dim(1);
  const Tensor alone = model.forward_main(probe, NormMode::batch_stats).features;
  const std::size_t f = alone.dim(1);
  std::vector<double> out;
  for (const auto &companion : companions) {
    if (companion.rank() != 2 || companion.dim(1) != d) {
      throw ShapeError("perturbation_probe", probe.shape(), companion.shape());
    }
    std::vector<double> merged(probe.data().begin(), probe.data().end());
    merged.insert(merged.end(), companion.data().begin(), companion.data().end());
    const Tensor joint =
        model.forward_main(Tensor({n + companion.dim(0), d}, std::move(merged)), NormMode::batch_stats).features;
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < f; ++c) {
        const double diff = joint.data()[r * f + c] - alone.data()[r * f + c];
        s += diff * diff;
      }
      total += std::sqrt(s);
    }
    out.push_back(total / static_cast<double>(n));
  }
  return out;
}

std::string divergence_csv(const DivergenceReport &report) {
  return "quantity,value\nd_s2s," + format_double(report.d_s2s) + "\nd_s2t," + format_double(report.d_s2t) + "\n";
}

}  // namespace naug
