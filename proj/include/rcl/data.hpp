#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rcl/tensor.hpp"

namespace rcl {

// Per-channel z-score statistics (population std) from the training rows.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  static Scaler fit(const Tensor& rows);
  Tensor apply(const Tensor& rows) const;
  Tensor invert(const Tensor& rows) const;
};

struct DatasetSplit {
  Tensor train;  // [N_train, F], normalized
  Tensor val;
  Tensor test;
  Scaler scaler;
  std::vector<std::string> channels;

  std::size_t features() const { return train.dim(1); }
};

// Chronological 60/20/20 split: floor(0.6 N) training rows, the remainder
// halved (floor) into validation, the rest test. Scaler fit on train only.
DatasetSplit split_dataset(const Tensor& rows, std::vector<std::string> channels = {});

// Header row, timestamp first column (dropped), numeric channels after it.
DatasetSplit load_csv(const std::filesystem::path& path);

struct WindowSet {
  Tensor inputs;   // [M, t_in, F]
  Tensor targets;  // [M, t_out, F]

  std::size_t size() const { return inputs.dim(0); }
  std::size_t t_in() const { return inputs.dim(1); }
  std::size_t t_out() const { return targets.dim(1); }
  std::size_t features() const { return inputs.dim(2); }

  // Gathers the listed windows into a batch.
  WindowSet gather(const std::vector<std::size_t>& idx) const;
};

// Stride-1 windows; window m reads rows [m, m+t_in) and targets [m+t_in, m+t_in+t_out).
WindowSet make_windows(const Tensor& rows, std::size_t t_in, std::size_t t_out);

enum class SynthKind { MultiSine, Ar1Spikes };

SynthKind parse_synth_kind(const std::string& name);
const char* synth_kind_name(SynthKind kind);

struct SineComponent {
  double amplitude;
  double period;
  double phase;

  double at(double t) const;
};

// The three sinusoids of channel f in a multi-sine corpus drawn with `seed`.
std::vector<SineComponent> multi_sine_components(std::size_t channel, std::uint64_t seed);

// [n_series, T, F]. multi-sine: three incommensurate sinusoids per channel plus
// N(0, noise_std^2). ar1-with-spikes: x_t = 0.9 x_{t-1} + e_t + spike_t with
// unit innovations, Bernoulli(0.02) spikes of 5 stationary standard deviations
// (random sign), plus N(0, noise_std^2) observation noise.
Tensor synth_corpus(SynthKind kind, std::size_t n_series, std::size_t steps, std::size_t features,
                    double noise_std, std::uint64_t seed);

}  // namespace rcl
