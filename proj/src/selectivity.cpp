#include "rcl/selectivity.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <fstream>

#include "rcl/contrastive.hpp"
#include "rcl/error.hpp"
#include "rcl/util.hpp"

namespace rcl {

namespace {

// |cos(a, b)|, or 0 when either vector vanishes.
double abs_cos(const double* a, const double* b, std::size_t n) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::abs(dot) / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<MemoryScoreSeries> memory_scores(const BlockTrace& trace) {
  const std::size_t B = trace.batch(), T = trace.steps();
  if (T < 2) throw ShapeError("memory_scores needs a trace with T >= 2");
  const std::size_t width = trace.d_inner() * trace.d_state();
  std::vector<MemoryScoreSeries> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    auto& series = out[b].scores;
    series.reserve(T - 1);
    for (std::size_t t = 1; t < T; ++t) {
      const double* h = &trace.hidden[(b * T + t) * width];
      const double* h_prev = &trace.hidden[(b * T + t - 1) * width];
      const double* contrib = &trace.input_contrib[(b * T + t) * width];
      const double r_in = abs_cos(h, contrib, width);
      const double r_prev = abs_cos(h, h_prev, width);
      series.push_back(r_in + r_prev == 0.0 ? 0.5 : r_in / (r_in + r_prev));
    }
  }
  return out;
}

MemoryClass classify_score(double s) {
  if (s > 0.7) return MemoryClass::SignificantMemory;
  if (s < 0.3) return MemoryClass::SignificantIgnoring;
  return MemoryClass::Normal;
}

const char* memory_class_name(MemoryClass c) {
  switch (c) {
    case MemoryClass::SignificantMemory: return "SM";
    case MemoryClass::SignificantIgnoring: return "SI";
    case MemoryClass::Normal: return "NR";
  }
  return "?";
}

ClassCounts classify(const std::vector<double>& scores) {
  ClassCounts c;
  for (double s : scores) {
    switch (classify_score(s)) {
      case MemoryClass::SignificantMemory: ++c.n_sm; break;
      case MemoryClass::SignificantIgnoring: ++c.n_si; break;
      case MemoryClass::Normal: ++c.n_nr; break;
    }
  }
  return c;
}

double focus_ratio(std::size_t n_sm, std::size_t n_si, std::size_t n_nr) {
  const std::size_t total = n_sm + n_si + n_nr;
  if (total == 0) throw NumericError("focus_ratio: all counts are zero");
  return static_cast<double>(n_sm + n_si) / static_cast<double>(total);
}

double memory_entropy(const std::vector<double>& scores, std::size_t bins) {
  if (scores.empty()) throw NumericError("memory_entropy: no scores");
  if (bins == 0) throw NumericError("memory_entropy: bins must be positive");
  std::vector<std::size_t> hist(bins, 0);
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw NumericError("memory_entropy: score outside [0, 1]");
    const auto k = std::min(bins - 1, static_cast<std::size_t>(s * static_cast<double>(bins)));
    ++hist[k];
  }
  const double n = static_cast<double>(scores.size());
  double h = 0.0;
  for (auto c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

std::string SelectivityReport::to_json() const {
  return "{\"n_sm\": " + std::to_string(n_sm) + ", \"n_si\": " + std::to_string(n_si) +
         ", \"n_nr\": " + std::to_string(n_nr) + ", \"fr\": " + fmt_double(fr) +
         ", \"me\": " + fmt_double(me) + ", \"bins\": " + std::to_string(bins) + "}";
}

SelectivityReport selectivity_report(const std::vector<BlockTrace>& traces, std::size_t bins) {
  SelectivityReport rep;
  rep.bins = bins;
  ClassCounts counts;
  for (const auto& tr : traces) {
    for (const auto& series : memory_scores(tr)) {
      counts += classify(series.scores);
      rep.scores.insert(rep.scores.end(), series.scores.begin(), series.scores.end());
    }
  }
  rep.n_sm = counts.n_sm;
  rep.n_si = counts.n_si;
  rep.n_nr = counts.n_nr;
  rep.fr = focus_ratio(rep.n_sm, rep.n_si, rep.n_nr);
  rep.me = memory_entropy(rep.scores, bins);
  return rep;
}

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("pearson: series lengths differ");
  const std::size_t n = x.size();
  if (n < 3) throw NumericError("pearson: need at least 3 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson: degenerate (zero) variance");
  double r = sxy / std::sqrt(sxx * syy);
  r = std::clamp(r, -1.0, 1.0);

  const double df = static_cast<double>(n - 2);
  if (std::abs(r) == 1.0) return {r, 0.0};
  const double t = r * std::sqrt(df / (1.0 - r * r));
  const boost::math::students_t dist(df);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return {r, p};
}

Tensor similarity_heatmap(const Tensor& h) {
  if (h.rank() != 2) throw ShapeError("similarity_heatmap expects [T, D], got " + shape_str(h.shape()));
  const std::size_t T = h.dim(0), D = h.dim(1);
  for (std::size_t i = 0; i < T; ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < D; ++j) n2 += h[i * D + j] * h[i * D + j];
    if (n2 == 0.0) throw NumericError("similarity_heatmap: row " + std::to_string(i) + " has zero norm");
  }
  Tensor m({T, T});
  for (std::size_t i = 0; i < T; ++i) {
    m[i * T + i] = 1.0;
    for (std::size_t j = 0; j < i; ++j) {
      const double s = cosine_sim(std::span<const double>(&h[i * D], D), std::span<const double>(&h[j * D], D));
      m[i * T + j] = s;
      m[j * T + i] = s;
    }
  }
  return m;
}

TraceFiles emit_traces(const BlockTrace& trace, const Tensor& embeddings, std::size_t seq,
                       const std::filesystem::path& dir) {
  if (seq >= trace.batch()) throw ShapeError("emit_traces: sequence index out of range");
  std::filesystem::create_directories(dir);
  TraceFiles files{dir / "delta.csv", dir / "memory.csv", dir / "heatmap.csv"};
  const std::size_t T = trace.steps(), D = trace.d_inner();

  auto open = [](const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw Error("cannot write '" + p.string() + "'");
    return os;
  };

  {
    auto os = open(files.delta);
    os << "t,delta_mean\n";
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i < D; ++i) s += trace.delta[(seq * T + t) * D + i];
      os << t << ',' << fmt_double(s / static_cast<double>(D)) << '\n';
    }
  }
  {
    const auto series = memory_scores(trace)[seq].scores;
    auto os = open(files.memory);
    os << "t,score,class\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
      os << k + 1 << ',' << fmt_double(series[k]) << ',' << memory_class_name(classify_score(series[k])) << '\n';
    }
  }
  {
    if (embeddings.rank() != 3 || seq >= embeddings.dim(0)) {
      throw ShapeError("emit_traces: embeddings must be [B, T, D] covering the sequence");
    }
    const std::size_t et = embeddings.dim(1), ed = embeddings.dim(2);
    std::vector<double> rows(embeddings.data().begin() + seq * et * ed,
                             embeddings.data().begin() + (seq + 1) * et * ed);
    const Tensor m = similarity_heatmap(Tensor({et, ed}, std::move(rows)));
    auto os = open(files.heatmap);
    for (std::size_t i = 0; i < et; ++i) {
      for (std::size_t j = 0; j < et; ++j) os << (j ? "," : "") << fmt_double(m[i * et + j]);
      os << '\n';
    }
  }
  return files;
}

}  // namespace rcl
