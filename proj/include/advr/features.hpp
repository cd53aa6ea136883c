#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advr/ndarray.hpp"

namespace advr {

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  unsigned sample_rate = 16000;
};

/// Reads a RIFF/WAVE file holding 16-bit little-endian mono PCM.
/// Samples are scaled by 1/32768.
AudioClip load_wav(const std::filesystem::path& path);

/// Writes 16-bit mono PCM; samples are rounded to the nearest step of
/// 1/32768 and saturated.
void save_wav(const AudioClip& clip, const std::filesystem::path& path);

struct FeatureConfig {
  unsigned sample_rate = 16000;
  std::size_t n_fft = 512;  // also the Hamming window length
  std::size_t frames = 600;
  double log_floor = 1e-10;

  std::size_t hop() const;   // 1 ms worth of samples
  std::size_t bins() const { return n_fft / 2 + 1; }
  void validate() const;
};

/// Log-power time-frequency plane, stored as a one-channel model input
/// of shape [1, frames, bins].
class Spectrogram {
 public:
  Spectrogram() = default;
  Spectrogram(std::size_t frames, std::size_t bins, double fill = 0.0);
  explicit Spectrogram(NdArray values);

  std::size_t frames() const { return values_.shape()[1]; }
  std::size_t bins() const { return values_.shape()[2]; }

  double& at(std::size_t frame, std::size_t bin) { return values_[frame * bins() + bin]; }
  double at(std::size_t frame, std::size_t bin) const { return values_[frame * bins() + bin]; }

  const NdArray& array() const noexcept { return values_; }
  NdArray& array() noexcept { return values_; }

  friend bool operator==(const Spectrogram& a, const Spectrogram& b) {
    return a.values_ == b.values_;
  }

 private:
  NdArray values_;
};

std::vector<double> hamming_window(std::size_t n);

/// |X_k|^2 for the one-sided bins k = 0..n/2 of a real frame.
std::vector<double> power_spectrum(std::span<const double> frame);

/// Frames a clip of `n_samples` yields before truncation or padding.
std::size_t frame_count(std::size_t n_samples, const FeatureConfig& cfg);

/// Windowed FFT, log(|X|^2 + floor) per bin. Only the first cfg.frames
/// frames are kept; shorter clips are padded with log(floor) rows.
Spectrogram log_power_spectrogram(const AudioClip& clip, const FeatureConfig& cfg);

/// Binary spectrogram file: 16-byte header ("ADSP", u32 version, u32
/// frames, u32 bins) followed by frames*bins little-endian float64.
void save_spectrogram(const Spectrogram& s, const std::filesystem::path& path);
Spectrogram load_spectrogram(const std::filesystem::path& path);

struct LabeledClip {
  std::string id;
  AudioClip clip;
  int label = 0;  // 0 bonafide, 1 spoof
};

struct SynthConfig {
  unsigned sample_rate = 16000;
  std::size_t samples = 10096;     // clip length
  double tone_amplitude = 0.3;
  double bonafide_noise = 1e-4;    // residual noise floor of harmonic clips
  double spoof_noise = 0.3;       // noise driving the modulated clips
};

/// Balanced two-class stand-in corpus. Bonafide clips are clean harmonic
/// tones; spoof clips are tones whose amplitude is modulated by noise plus
/// a broadband noise floor. Deterministic in seed; classes alternate.
std::vector<LabeledClip> synth_dataset(std::uint64_t seed, std::size_t n_per_class,
                                       const SynthConfig& cfg = {});

/// Clip length (samples) that yields exactly cfg.frames frames.
std::size_t samples_for_frames(const FeatureConfig& cfg);

}  // namespace advr

namespace advr {

/// One evaluation or training example in model input space.
struct LabeledSpectrogram {
  std::string id;
  Spectrogram spectrogram;
  std::size_t label = 0;
};

}  // namespace advr
