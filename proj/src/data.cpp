#include "rcl/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "rcl/error.hpp"

namespace rcl {

Scaler Scaler::fit(const Tensor& rows) {
  const std::size_t n = rows.dim(0), f = rows.dim(1);
  Scaler s{std::vector<double>(f, 0.0), std::vector<double>(f, 0.0)};
  for (std::size_t c = 0; c < f; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < n; ++r) mu += rows[r * f + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (rows[r * f + c] - mu) * (rows[r * f + c] - mu);
    var /= static_cast<double>(n);
    s.mean[c] = mu;
    s.std[c] = std::sqrt(var);
    if (!(s.std[c] > 0.0)) {
      throw DataError("channel " + std::to_string(c) + " is constant over the training split");
    }
  }
  return s;
}

Tensor Scaler::apply(const Tensor& rows) const {
  Tensor out(rows.shape());
  const std::size_t f = mean.size();
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = (rows[i] - mean[i % f]) / std[i % f];
  return out;
}

Tensor Scaler::invert(const Tensor& rows) const {
  Tensor out(rows.shape());
  const std::size_t f = mean.size();
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = rows[i] * std[i % f] + mean[i % f];
  return out;
}

namespace {

Tensor row_range(const Tensor& rows, std::size_t begin, std::size_t end) {
  const std::size_t f = rows.dim(1);
  std::vector<double> buf(rows.data().begin() + begin * f, rows.data().begin() + end * f);
  return Tensor({end - begin, f}, std::move(buf));
}

}  // namespace

DatasetSplit split_dataset(const Tensor& rows, std::vector<std::string> channels) {
  if (rows.rank() != 2) throw DataError("dataset must be a [rows, channels] table");
  const std::size_t n = rows.dim(0);
  if (n < 10) throw DataError("dataset needs at least 10 rows, got " + std::to_string(n));
  if (!rows.all_finite()) throw DataError("dataset contains non-finite values");
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = (n - n_train) / 2;

  const Tensor raw_train = row_range(rows, 0, n_train);
  DatasetSplit split;
  split.scaler = Scaler::fit(raw_train);
  split.train = split.scaler.apply(raw_train);
  split.val = split.scaler.apply(row_range(rows, n_train, n_train + n_val));
  split.test = split.scaler.apply(row_range(rows, n_train + n_val, n));
  if (channels.empty()) {
    for (std::size_t c = 0; c < rows.dim(1); ++c) channels.push_back("ch" + std::to_string(c));
  }
  split.channels = std::move(channels);
  return split;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t\r");
    const auto e = cur.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

DatasetSplit load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty");
  const auto header = split_fields(line);
  if (header.size() < 2) throw DataError("CSV needs a timestamp column and at least one channel");
  const std::size_t f = header.size() - 1;

  std::vector<double> buf;
  std::size_t n = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " columns, got " +
                      std::to_string(fields.size()));
    }
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const std::string& cell = fields[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw DataError("row " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                        " ('" + header[c] + "'): non-numeric value '" + cell + "'");
      }
      buf.push_back(v);
    }
    ++n;
  }
  if (n < 10) throw DataError("'" + path.string() + "' has " + std::to_string(n) + " rows; need >= 10");
  return split_dataset(Tensor({n, f}, std::move(buf)),
                       std::vector<std::string>(header.begin() + 1, header.end()));
}

WindowSet WindowSet::gather(const std::vector<std::size_t>& idx) const {
  const std::size_t ti = t_in(), to = t_out(), f = features();
  WindowSet out{Tensor({idx.size(), ti, f}), Tensor({idx.size(), to, f})};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t m = idx[k];
    std::copy_n(&inputs[m * ti * f], ti * f, &out.inputs[k * ti * f]);
    std::copy_n(&targets[m * to * f], to * f, &out.targets[k * to * f]);
  }
  return out;
}

WindowSet make_windows(const Tensor& rows, std::size_t t_in, std::size_t t_out) {
  if (rows.rank() != 2) throw DataError("make_windows expects [rows, channels]");
  if (t_in == 0 || t_out == 0) throw DataError("window lengths must be positive");
  const std::size_t len = rows.dim(0), f = rows.dim(1);
  if (len < t_in + t_out) {
    throw DataError("split of " + std::to_string(len) + " rows is too short for t_in=" +
                    std::to_string(t_in) + " + t_out=" + std::to_string(t_out));
  }
  const std::size_t m = len - t_in - t_out + 1;
  WindowSet w{Tensor({m, t_in, f}), Tensor({m, t_out, f})};
  for (std::size_t k = 0; k < m; ++k) {
    std::copy_n(&rows[k * f], t_in * f, &w.inputs[k * t_in * f]);
    std::copy_n(&rows[(k + t_in) * f], t_out * f, &w.targets[k * t_out * f]);
  }
  return w;
}

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "multi-sine") return SynthKind::MultiSine;
  if (name == "ar1-with-spikes") return SynthKind::Ar1Spikes;
  throw DataError("unknown synthetic corpus kind '" + name +
                  "' (expected multi-sine or ar1-with-spikes)");
}

const char* synth_kind_name(SynthKind kind) {
  return kind == SynthKind::MultiSine ? "multi-sine" : "ar1-with-spikes";
}

double SineComponent::at(double t) const {
  return amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase);
}

std::vector<SineComponent> multi_sine_components(std::size_t channel, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + channel);
  std::uniform_real_distribution<double> base(12.0, 48.0);
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double p = base(rng);
  // Ratios 1 : sqrt(2) : golden ratio squared share no rational relation.
  const double ratios[3] = {1.0, std::numbers::sqrt2, std::numbers::phi * std::numbers::phi};
  std::vector<SineComponent> out;
  for (double r : ratios) {
    const double a = amp(rng);
    out.push_back({a, p * r, phase(rng)});
  }
  return out;
}

Tensor synth_corpus(SynthKind kind, std::size_t n_series, std::size_t steps, std::size_t features,
                    double noise_std, std::uint64_t seed) {
  if (n_series == 0 || steps == 0 || features == 0) throw DataError("synthetic corpus extents must be positive");
  if (!(noise_std >= 0.0)) throw DataError("noise_std must be non-negative");
  Tensor out({n_series, steps, features});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  if (kind == SynthKind::MultiSine) {
    for (std::size_t s = 0; s < n_series; ++s)
      for (std::size_t f = 0; f < features; ++f) {
        const auto comps = multi_sine_components(f, seed + 7919 * s);
        for (std::size_t t = 0; t < steps; ++t) {
          double v = 0.0;
          for (const auto& c : comps) v += c.at(static_cast<double>(t));
          if (noise_std > 0.0) v += noise_std * normal(rng);
          out[(s * steps + t) * features + f] = v;
        }
      }
    return out;
  }

  constexpr double phi = 0.9;
  const double stationary_std = 1.0 / std::sqrt(1.0 - phi * phi);
  std::bernoulli_distribution spike(0.02);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t s = 0; s < n_series; ++s)
    for (std::size_t f = 0; f < features; ++f) {
      double x = stationary_std * normal(rng);
      for (std::size_t t = 0; t < steps; ++t) {
        if (t > 0) {
          x = phi * x + normal(rng);
          if (spike(rng)) x += (sign(rng) ? 5.0 : -5.0) * stationary_std;
        }
        double v = x;
        if (noise_std > 0.0) v += noise_std * normal(rng);
        out[(s * steps + t) * features + f] = v;
      }
    }
  return out;
}

}  // namespace rcl
