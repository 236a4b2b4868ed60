#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace naug {

// Labeled multi-domain samples; features are row-major [size x dim].
struct Dataset {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::size_t num_domains = 0;  // domain ids are < num_domains
  std::vector<double> features;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> domains;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
  // Sorted ids of the domains that have at least one sample.
  std::vector<std::size_t> present_domains() const;
  std::vector<std::size_t> rows_of_domain(std::size_t domain) const;
  Dataset subset(std::span<const std::size_t> rows) const;
  // Throws std::invalid_argument unless sizes agree, labels/domains are in
  // range, and every (present domain, class) cell is nonempty.
  void validate() const;
};

// Style of one domain: x -> R(theta) (scale * x) + shift, where R rotates the
// (plane_a, plane_b) coordinate plane, followed by isotropic noise.
struct DomainSpec {
  std::size_t id = 0;
  std::vector<double> scale;
  std::vector<double> shift;
  double rotation = 0.0;
  std::size_t plane_a = 0;
  std::size_t plane_b = 1;
  double noise = 0.0;

  std::vector<double> apply(std::span<const double> x) const;
};

// Style magnitudes per unit of kappa. A domain's level in [-1, 1] sets its
// common log-scale and its position along the shared shift axis; the
// remaining shift is domain-specific.
struct StyleMagnitudes {
  double log_scale = 0.3;
  double scale_jitter = 0.3;
  double shift = 0.5;
  double shift_coherence = 0.9;  // share of the shift along the common axis
  double rotation = 0.3;
};

struct GeneratorConfig {
  std::size_t classes = 5;
  std::size_t source_domains = 3;
  std::size_t dim = 16;
  std::size_t per_cell = 200;
  double separation = 5.0;   // prototype sphere radius
  double shift = 2.0;        // kappa: source style magnitude
  double target_shift = 3.0; // held-out domain style magnitude (outside the source range)
  double noise = 1.0;
  StyleMagnitudes style;
  std::uint64_t seed = 0;
};

struct GeneratedData {
  Dataset data;  // source domains 0..N-1, held-out domain N
  std::vector<DomainSpec> specs;
  std::vector<std::vector<double>> prototypes;
};

GeneratedData generate(const GeneratorConfig &config);
// Draws one domain style at magnitude `kappa`; kappa = 0 gives the identity.
DomainSpec draw_domain_spec(std::size_t id, std::size_t dim, double kappa, double noise, std::uint64_t seed,
                            bool extreme, const StyleMagnitudes &style = {});

// Samples `per_cell` points per class through `spec`.
Dataset sample_domain(const DomainSpec &spec, const std::vector<std::vector<double>> &prototypes,
                      std::size_t per_cell, std::size_t num_domains, std::uint64_t seed);

// CSV with header `domain,label,f0..f{D-1}`, 17 significant digits.
void save_csv(const Dataset &data, const std::filesystem::path &path);
Dataset load_csv(const std::filesystem::path &path);
std::string to_csv(const Dataset &data);
Dataset parse_csv(const std::string &text);

// Leave-one-domain-out split: (all other domains, the target domain).
std::pair<Dataset, Dataset> split_lodo(const Dataset &data, std::size_t target_domain);

}  // namespace naug
