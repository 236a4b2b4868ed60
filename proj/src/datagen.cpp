#include "normaug/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "normaug/io.hpp"

namespace naug {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

std::vector<std::size_t> Dataset::present_domains() const {
  std::set<std::size_t> ids(domains.begin(), domains.end());
  return {ids.begin(), ids.end()};
}

std::vector<std::size_t> Dataset::rows_of_domain(std::size_t domain) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < domains.size(); ++i)
    if (domains[i] == domain) rows.push_back(i);
  return rows;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.dim = dim;
  out.num_classes = num_classes;
  out.num_domains = num_domains;
  out.features.reserve(rows.size() * dim);
  for (auto r : rows) {
    if (r >= size()) throw std::out_of_range("dataset subset: row " + std::to_string(r) + " out of range");
    auto x = row(r);
    out.features.insert(out.features.end(), x.begin(), x.end());
    out.labels.push_back(labels[r]);
    out.domains.push_back(domains[r]);
  }
  return out;
}

void Dataset::validate() const {
  if (dim == 0) throw std::invalid_argument("dataset: zero feature dimension");
  if (labels.size() != domains.size() || features.size() != labels.size() * dim) {
    throw std::invalid_argument("dataset: inconsistent sizes");
  }
  std::set<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] >= num_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " >= class count " +
                                  std::to_string(num_classes));
    }
    if (domains[i] >= num_domains) {
      throw std::invalid_argument("dataset: domain " + std::to_string(domains[i]) + " >= domain count " +
                                  std::to_string(num_domains));
    }
    cells.emplace(domains[i], labels[i]);
  }
  for (auto d : present_domains())
    for (std::size_t c = 0; c < num_classes; ++c)
      if (!cells.count({d, c})) {
        throw std::invalid_argument("dataset: empty cell (domain " + std::to_string(d) + ", class " +
                                    std::to_string(c) + ")");
      }
}

std::vector<double> DomainSpec::apply(std::span<const double> x) const {
  if (x.size() != scale.size()) throw std::invalid_argument("domain spec: dimension mismatch");
  std::vector<double> y(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) y[j] = scale[j] * x[j];
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  const double a = y[plane_a];
  const double b = y[plane_b];
  y[plane_a] = c * a - s * b;
  y[plane_b] = s * a + c * b;
  for (std::size_t j = 0; j < x.size(); ++j) y[j] += shift[j];
  return y;
}

DomainSpec draw_domain_spec(std::size_t id, std::size_t dim, double kappa, double noise, std::uint64_t seed,
                            bool extreme, const StyleMagnitudes &style) {
  if (dim < 2) throw std::invalid_argument("domain spec: need at least 2 features");
  auto rng = stream(seed, 1000 + id);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // extreme styles sit at the edge of the source range, then kappa pushes
  // them past it
  const double level = extreme ? (unit(rng) < 0.0 ? -1.0 : 1.0) : unit(rng);
  DomainSpec spec;
  spec.id = id;
  spec.noise = noise;
  spec.scale.resize(dim);
  spec.shift.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    spec.scale[j] = std::exp(kappa * style.log_scale * (level + style.scale_jitter * gauss(rng)));
  }
  // common axis: drawn from the seed alone
  auto axis_rng = stream(seed, 999);
  const double own = std::sqrt(1.0 - style.shift_coherence * style.shift_coherence);
  for (std::size_t j = 0; j < dim; ++j) {
    const double common = gauss(axis_rng);
    spec.shift[j] = kappa * style.shift * (style.shift_coherence * level * common + own * gauss(rng));
  }
  const double turn = extreme ? (unit(rng) < 0.0 ? -1.0 : 1.0) : unit(rng);
  spec.rotation = kappa * style.rotation * turn;
  spec.plane_a = static_cast<std::size_t>(rng() % dim);
  spec.plane_b = (spec.plane_a + 1 + static_cast<std::size_t>(rng() % (dim - 1))) % dim;
  return spec;
}

Dataset sample_domain(const DomainSpec &spec, const std::vector<std::vector<double>> &prototypes,
                      std::size_t per_cell, std::size_t num_domains, std::uint64_t seed) {
  auto rng = stream(seed, 2000 + spec.id);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset out;
  out.dim = spec.scale.size();
  out.num_classes = prototypes.size();
  out.num_domains = num_domains;
  for (std::size_t c = 0; c < prototypes.size(); ++c) {
    const std::vector<double> center = spec.apply(prototypes[c]);
    for (std::size_t i = 0; i < per_cell; ++i) {
      for (std::size_t j = 0; j < out.dim; ++j) out.features.push_back(center[j] + spec.noise * gauss(rng));
      out.labels.push_back(c);
      out.domains.push_back(spec.id);
    }
  }
  return out;
}

GeneratedData generate(const GeneratorConfig &config) {
  if (config.per_cell < 4) throw std::invalid_argument("generate: per_cell must be >= 4");
  if (config.dim < 4) throw std::invalid_argument("generate: dim must be >= 4");
  if (config.classes < 2) throw std::invalid_argument("generate: classes must be >= 2");
  if (config.source_domains < 2) throw std::invalid_argument("generate: source_domains must be >= 2");
  if (!(config.separation > 0.0) || config.noise < 0.0 || config.shift < 0.0 || config.target_shift < 0.0) {
    throw std::invalid_argument("generate: separation must be positive, noise and shifts nonnegative");
  }
  if (config.style.shift_coherence < 0.0 || config.style.shift_coherence > 1.0) {
    throw std::invalid_argument("generate: shift_coherence must be in [0,1]");
  }
  GeneratedData out;
  auto rng = stream(config.seed, 7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t c = 0; c < config.classes; ++c) {
    std::vector<double> p(config.dim);
    double norm = 0.0;
    while (norm < 1e-12) {
      for (auto &v : p) v = gauss(rng);
      norm = 0.0;
      for (double v : p) norm += v * v;
      norm = std::sqrt(norm);
    }
    for (auto &v : p) v *= config.separation / norm;
    out.prototypes.push_back(std::move(p));
  }

  const std::size_t total_domains = config.source_domains + 1;
  Dataset &data = out.data;
  data.dim = config.dim;
  data.num_classes = config.classes;
  data.num_domains = total_domains;
  for (std::size_t d = 0; d < total_domains; ++d) {
    const bool held_out = d == config.source_domains;
    const double kappa = held_out ? config.target_shift : config.shift;
    DomainSpec spec = draw_domain_spec(d, config.dim, kappa, config.noise, config.seed, held_out, config.style);
    Dataset part = sample_domain(spec, out.prototypes, config.per_cell, total_domains, config.seed);
    data.features.insert(data.features.end(), part.features.begin(), part.features.end());
    data.labels.insert(data.labels.end(), part.labels.begin(), part.labels.end());
    data.domains.insert(data.domains.end(), part.domains.begin(), part.domains.end());
    out.specs.push_back(std::move(spec));
  }
  return out;
}

std::string to_csv(const Dataset &data) {
  std::string out = "domain,label";
  for (std::size_t j = 0; j < data.dim; ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out += std::to_string(data.domains[i]);
    out += ',';
    out += std::to_string(data.labels[i]);
    for (double v : data.row(i)) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

Dataset parse_csv(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw std::invalid_argument("dataset csv: empty file");
  if (line.back() == '\r') line.pop_back();
  auto header = split(line, ',');
  Dataset data;
  data.dim = header.size() >= 2 ? header.size() - 2 : 0;
  std::string expected = "domain,label";
  for (std::size_t j = 0; j < data.dim; ++j) expected += ",f" + std::to_string(j);
  if (data.dim == 0 || line != expected) {
    throw std::invalid_argument("dataset csv: bad header, expected '" +
                                (data.dim ? expected : std::string("domain,label,f0,...")) + "'");
  }
  std::size_t line_no = 1;
  auto parse_index = [&](const std::string &field) {
    if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("dataset csv: line " + std::to_string(line_no) + ": bad index '" + field + "'");
    }
    return static_cast<std::size_t>(std::stoull(field));
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (fields.size() != header.size()) {
      throw std::invalid_argument("dataset csv: line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    data.domains.push_back(parse_index(fields[0]));
    data.labels.push_back(parse_index(fields[1]));
    for (std::size_t j = 0; j < data.dim; ++j) {
      try {
        data.features.push_back(parse_double(fields[j + 2]));
      } catch (const std::invalid_argument &e) {
        throw std::invalid_argument("dataset csv: line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  if (data.size() == 0) throw std::invalid_argument("dataset csv: no rows");
  data.num_classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  data.num_domains = *std::max_element(data.domains.begin(), data.domains.end()) + 1;
  data.validate();
  return data;
}

void save_csv(const Dataset &data, const std::filesystem::path &path) { write_file_atomic(path, to_csv(data)); }

Dataset load_csv(const std::filesystem::path &path) { return parse_csv(read_file(path)); }

std::pair<Dataset, Dataset> split_lodo(const Dataset &data, std::size_t target_domain) {
  std::vector<std::size_t> source_rows;
  std::vector<std::size_t> target_rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data.domains[i] == target_domain ? target_rows : source_rows).push_back(i);
  }
  if (target_rows.empty()) {
    throw std::invalid_argument("split_lodo: target domain " + std::to_string(target_domain) + " not present");
  }
  if (source_rows.empty()) throw std::invalid_argument("split_lodo: no source domains left");
  return {data.subset(source_rows), data.subset(target_rows)};
}

}  // namespace naug
