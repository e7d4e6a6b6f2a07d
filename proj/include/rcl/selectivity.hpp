#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rcl/mamba.hpp"

namespace rcl {

// Per-step memory scores of one sequence, steps 1..T-1 of the trace.
struct MemoryScoreSeries {
  std::vector<double> scores;
};

// s_t = r_in / (r_in + r_prev) with r_in = |cos(h_t, input_contrib_t)| and
// r_prev = |cos(h_t, h_{t-1})| over the flattened (channel, state) vectors;
// 0.5 when both vanish. One series per sequence of the batch.
std::vector<MemoryScoreSeries> memory_scores(const BlockTrace& trace);

enum class MemoryClass { SignificantMemory, SignificantIgnoring, Normal };

// > 0.7 memory, < 0.3 ignoring, otherwise normal (both boundaries normal).
MemoryClass classify_score(double s);
const char* memory_class_name(MemoryClass c);

struct ClassCounts {
  std::size_t n_sm = 0;
  std::size_t n_si = 0;
  std::size_t n_nr = 0;

  ClassCounts& operator+=(const ClassCounts& o) {
    n_sm += o.n_sm;
    n_si += o.n_si;
    n_nr += o.n_nr;
    return *this;
  }
};

ClassCounts classify(const std::vector<double>& scores);

// (n_sm + n_si) / (n_sm + n_si + n_nr); throws when all counts are zero.
double focus_ratio(std::size_t n_sm, std::size_t n_si, std::size_t n_nr);

// Shannon entropy (nats) of the histogram of scores over `bins` equal-width bins on [0, 1].
double memory_entropy(const std::vector<double>& scores, std::size_t bins = 20);

struct SelectivityReport {
  std::size_t n_sm = 0;
  std::size_t n_si = 0;
  std::size_t n_nr = 0;
  double fr = 0.0;
  double me = 0.0;
  std::size_t bins = 20;
  std::vector<double> scores;  // every pooled score, in accumulation order

  std::string to_json() const;
};

// Pools counts and scores over every sequence of every trace.
SelectivityReport selectivity_report(const std::vector<BlockTrace>& traces, std::size_t bins = 20);

struct PearsonResult {
  double r = 0.0;
  double p = 1.0;  // two-sided, Student t with n - 2 degrees of freedom
};

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

// M[i][j] = cos(H_i, H_j) for H: [T, D].
Tensor similarity_heatmap(const Tensor& h);

struct TraceFiles {
  std::filesystem::path delta;
  std::filesystem::path memory;
  std::filesystem::path heatmap;
};

// Writes, for sequence `seq` of the trace:
//   delta.csv    "t,delta_mean"   mean over channels of delta_t, one row per step
//   memory.csv   "t,score,class"  memory score of steps 1..T-1
//   heatmap.csv  T rows of T comma-separated cosine similarities of `embeddings`, no header
TraceFiles emit_traces(const BlockTrace& trace, const Tensor& embeddings, std::size_t seq,
                       const std::filesystem::path& dir);

}  // namespace rcl
