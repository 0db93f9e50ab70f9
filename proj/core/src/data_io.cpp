#include "dpmm/data_io.hpp"

#include <fmt/format.h>

#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

namespace dpmm {

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'P', 'M', 'M'};
constexpr std::uint32_t kBinaryVersion = 1;

template <class T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw InputError(std::string("truncated binary file while reading ") + what);
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

CountDataset load_csv(std::istream& in) {
  std::vector<std::uint32_t> counts;
  std::size_t dim = 0;
  std::size_t row = 0;
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    ++row;
    std::size_t fields = 0;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = text.find(',', pos);
      const std::string_view field =
          trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
      if (!field.empty() && field.front() == '-') {
        throw InputError(fmt::format("row {}: negative count '{}'", row, field));
      }
      std::uint32_t value = 0;
      const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
      if (field.empty() || ec != std::errc() || end != field.data() + field.size()) {
        throw InputError(fmt::format("row {}: cannot parse '{}' as a count", row, field));
      }
      counts.push_back(value);
      ++fields;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (dim == 0) {
      dim = fields;
    } else if (fields != dim) {
      throw InputError(fmt::format("row {}: expected {} values, found {}", row, dim, fields));
    }
    std::uint64_t total = 0;
    for (std::size_t d = 0; d < fields; ++d) total += counts[counts.size() - 1 - d];
    if (total == 0) throw InputError(fmt::format("row {}: all counts are zero", row));
  }
  if (dim == 0) throw InputError("dataset has no rows");
  return CountDataset(dim, std::move(counts));
}

CountDataset load_binary(std::istream& in) {
  std::array<char, 4> magic;
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw InputError("missing DPMM magic in binary count file");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kBinaryVersion) throw InputError(fmt::format("unsupported binary version {}", version));
  const auto n = get_le<std::uint64_t>(in, "row count");
  const auto dim = get_le<std::uint64_t>(in, "dimension");
  if (dim == 0) throw InputError("binary count file has zero dimension");
  std::vector<std::uint32_t> counts;
  counts.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n * dim, std::uint64_t{1} << 24)));
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint64_t total = 0;
    for (std::uint64_t d = 0; d < dim; ++d) {
      counts.push_back(get_le<std::uint32_t>(in, "counts"));
      total += counts.back();
    }
    if (total == 0) throw InputError(fmt::format("row {}: all counts are zero", i + 1));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InputError("trailing bytes after binary counts");
  return CountDataset(static_cast<std::size_t>(dim), std::move(counts));
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = {}) {
  std::ofstream out(path, std::ios::out | std::ios::trunc | mode);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

void SyntheticSpec::validate() const {
  if (dim == 0) throw InputError("dim must be >= 1");
  if (n_train == 0) throw InputError("n_train must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InputError("alpha must be > 0");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InputError("gamma must be > 0");
  if (trials_per_obs == 0) throw InputError("trials_per_obs must be >= 1");
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_stream(spec.seed, 0, 7);
  const std::size_t n = spec.n_train + spec.n_test;

  SyntheticData out;
  auto& truth = out.truth;
  std::vector<std::size_t> sizes;
  truth.assignments.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Table k with probability n_k / (i + alpha), a new one with alpha / (i + alpha).
    const double u = sample_uniform(rng) * (static_cast<double>(i) + spec.alpha);
    double acc = 0.0;
    std::size_t k = 0;
    for (; k < sizes.size(); ++k) {
      acc += static_cast<double>(sizes[k]);
      if (u < acc) break;
    }
    if (k == sizes.size()) sizes.push_back(0);
    ++sizes[k];
    truth.assignments.push_back(k);
  }
  for (std::size_t k = 0; k < sizes.size(); ++k) truth.thetas.push_back(sample_prior(spec.gamma, spec.dim, rng));

  std::vector<std::vector<double>> cumulative;
  for (const auto& t : truth.thetas) {
    std::vector<double> c(t.size());
    double acc = 0.0;
    for (std::size_t d = 0; d < t.size(); ++d) c[d] = acc += t[d];
    c.back() = std::max(c.back(), 1.0);
    cumulative.push_back(std::move(c));
  }

  std::vector<std::uint32_t> train, test;
  train.reserve(spec.n_train * spec.dim);
  test.reserve(spec.n_test * spec.dim);
  std::vector<std::uint32_t> row(spec.dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(row.begin(), row.end(), 0);
    for (std::uint32_t t = 0; t < spec.trials_per_obs; ++t) {
      ++row[sample_cumulative(cumulative[truth.assignments[i]], rng)];
    }
    auto& dest = i < spec.n_train ? train : test;
    dest.insert(dest.end(), row.begin(), row.end());
  }
  out.train = CountDataset(spec.dim, std::move(train));
  out.test = CountDataset(spec.dim, std::move(test));
  return out;
}

CountDataset load_counts(const std::filesystem::path& path, CountFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  if (format == CountFormat::detect) {
    std::array<char, 4> head{};
    in.read(head.data(), head.size());
    format = in.gcount() == 4 && head == kMagic ? CountFormat::dense_binary : CountFormat::csv;
    in.clear();
    in.seekg(0);
  }
  try {
    return format == CountFormat::dense_binary ? load_binary(in) : load_csv(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_csv(const std::filesystem::path& path, const CountDataset& data) {
  auto out = open_out(path);
  std::string line;
  for (std::size_t i = 0; i < data.size(); ++i) {
    line.clear();
    for (auto c : data.row(i)) {
      if (!line.empty()) line += ',';
      line += std::to_string(c);
    }
    line += '\n';
    out << line;
  }
  finish(out, path);
}

void write_dense_binary(const std::filesystem::path& path, const CountDataset& data) {
  auto out = open_out(path, std::ios::binary);
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kBinaryVersion);
  put_le<std::uint64_t>(out, data.size());
  put_le<std::uint64_t>(out, data.dim());
  for (auto c : data.data()) put_le<std::uint32_t>(out, c);
  finish(out, path);
}

void write_truth(const std::filesystem::path& path, const SyntheticTruth& truth, std::size_t n_train) {
  auto out = open_out(path);
  out << "observation_id,cluster_id,split\n";
  for (std::size_t i = 0; i < truth.assignments.size(); ++i) {
    const bool is_train = i < n_train;
    out << (is_train ? i : i - n_train) << ',' << truth.assignments[i] << ','
        << (is_train ? "train" : "test") << '\n';
  }
  finish(out, path);
}

}  // namespace dpmm
