#include "advr/features.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <random>

#include <fftw3.h>
#include <fmt/format.h>

#include "advr/error.hpp"
#include "binary_io.hpp"

namespace advr {

namespace {

constexpr char kSpectrogramMagic[] = "ADSP";
constexpr std::uint32_t kSpectrogramVersion = 1;

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

// ---------------------------------------------------------------- WAV

AudioClip load_wav(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const std::string what = path.string();
  if (bytes.size() < 12) {
    throw FormatError(FormatError::Kind::truncated, what + ": truncated RIFF header");
  }
  io::Reader r(bytes, what);
  if (r.bytes(4) != "RIFF") throw FormatError(FormatError::Kind::bad_magic, what + ": not RIFF");
  r.u32();
  if (r.bytes(4) != "WAVE") throw FormatError(FormatError::Kind::bad_magic, what + ": not WAVE");

  bool have_fmt = false;
  AudioClip clip;
  while (true) {
    if (r.remaining() < 8) {
      throw FormatError(FormatError::Kind::truncated,
                        what + (have_fmt ? ": missing data chunk" : ": truncated header"));
    }
    const std::string id(r.bytes(4));
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16 || r.remaining() < size) {
        throw FormatError(FormatError::Kind::truncated, what + ": truncated fmt chunk");
      }
      const std::uint16_t format = r.u16();
      const std::uint16_t channels = r.u16();
      const std::uint32_t rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      const std::uint16_t bits = r.u16();
      r.skip(size - 16 + (size & 1));
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError(FormatError::Kind::unsupported_encoding,
                          fmt::format("{}: unsupported encoding (format {}, {} channels, {} bits);"
                                      " need 16-bit mono PCM",
                                      what, format, channels, bits));
      }
      if (rate == 0) {
        throw FormatError(FormatError::Kind::unsupported_encoding, what + ": zero sample rate");
      }
      clip.sample_rate = rate;
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) {
        throw FormatError(FormatError::Kind::truncated, what + ": data chunk before fmt chunk");
      }
      if (size == 0) throw FormatError(FormatError::Kind::empty_payload, what + ": no samples");
      if (r.remaining() < size || size % 2 != 0) {
        throw FormatError(FormatError::Kind::truncated,
                          fmt::format("{}: data chunk declares {} bytes, {} present", what, size,
                                      r.remaining()));
      }
      clip.samples.resize(size / 2);
      for (auto& s : clip.samples) {
        s = static_cast<double>(static_cast<std::int16_t>(r.u16())) / 32768.0;
      }
      return clip;
    } else {
      if (r.remaining() < size) {
        throw FormatError(FormatError::Kind::truncated, what + ": truncated '" + id + "' chunk");
      }
      r.skip(size + (size & 1 && r.remaining() > size ? 1 : 0));
    }
  }
}

void save_wav(const AudioClip& clip, const std::filesystem::path& path) {
  if (clip.samples.empty()) throw InvalidArgument("cannot write an empty clip");
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  io::Writer w;
  w.bytes("RIFF");
  w.u32(36 + data_bytes);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(clip.sample_rate);
  w.u32(clip.sample_rate * 2);
  w.u16(2);
  w.u16(16);
  w.bytes("data");
  w.u32(data_bytes);
  for (double s : clip.samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  io::write_file(path, w.buffer());
}

// ---------------------------------------------------------------- spectra

std::size_t FeatureConfig::hop() const {
  return static_cast<std::size_t>(std::lround(0.001 * sample_rate));
}

void FeatureConfig::validate() const {
  if (sample_rate < 1000) throw InvalidArgument("sample_rate must be at least 1000 Hz");
  if (!is_power_of_two(n_fft) || n_fft < 4) {
    throw InvalidArgument(fmt::format("n_fft must be a power of two >= 4, got {}", n_fft));
  }
  if (frames == 0) throw InvalidArgument("frames must be positive");
  if (!(log_floor > 0.0)) throw InvalidArgument("log_floor must be positive");
}

Spectrogram::Spectrogram(std::size_t frames, std::size_t bins, double fill)
    : values_({1, frames, bins}, fill) {}

Spectrogram::Spectrogram(NdArray values) : values_(std::move(values)) {
  const Shape& s = values_.shape();
  if (s.size() != 3 || s[0] != 1) {
    throw ShapeError("spectrogram must have shape [1,frames,bins], got " + to_string(s));
  }
}

std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n == 1) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n - 1));
  }
  return w;
}

namespace {

// FFTW planning touches global state; execution on a finished plan does not.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(fftw_alloc_real(n)),
        out_(fftw_alloc_complex(n / 2 + 1)) {
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    if (plan_ == nullptr) throw InvalidArgument(fmt::format("cannot plan an FFT of length {}", n));
  }
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void power(std::span<const double> frame, std::span<double> out) {
    std::copy(frame.begin(), frame.end(), in_);
    fftw_execute(plan_);
    for (std::size_t k = 0; k <= n_ / 2; ++k) {
      out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    }
  }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_ = nullptr;
};

}  // namespace

std::vector<double> power_spectrum(std::span<const double> frame) {
  if (frame.empty()) throw InvalidArgument("power_spectrum needs a non-empty frame");
  RealFft fft(frame.size());
  std::vector<double> power(frame.size() / 2 + 1);
  fft.power(frame, power);
  return power;
}

std::size_t frame_count(std::size_t n_samples, const FeatureConfig& cfg) {
  if (n_samples < cfg.n_fft) return 0;
  return (n_samples - cfg.n_fft) / cfg.hop() + 1;
}

std::size_t samples_for_frames(const FeatureConfig& cfg) {
  return cfg.n_fft + (cfg.frames - 1) * cfg.hop();
}

Spectrogram log_power_spectrogram(const AudioClip& clip, const FeatureConfig& cfg) {
  cfg.validate();
  const std::size_t available = frame_count(clip.samples.size(), cfg);
  if (available == 0) {
    throw InvalidArgument(fmt::format("clip of {} samples is shorter than one {}-sample window",
                                      clip.samples.size(), cfg.n_fft));
  }
  const std::size_t hop = cfg.hop();
  const std::vector<double> window = hamming_window(cfg.n_fft);
  const double floor_value = std::log(cfg.log_floor);

  Spectrogram out(cfg.frames, cfg.bins(), floor_value);
  std::vector<double> frame(cfg.n_fft);
  std::vector<double> power(cfg.bins());
  RealFft fft(cfg.n_fft);
  const std::size_t used = std::min(available, cfg.frames);
  for (std::size_t t = 0; t < used; ++t) {
    const double* src = clip.samples.data() + t * hop;
    for (std::size_t i = 0; i < cfg.n_fft; ++i) frame[i] = src[i] * window[i];
    fft.power(frame, power);
    for (std::size_t k = 0; k < power.size(); ++k) {
      out.at(t, k) = std::log(power[k] + cfg.log_floor);
    }
  }
  return out;
}

void save_spectrogram(const Spectrogram& s, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes(std::string_view(kSpectrogramMagic, 4));
  w.u32(kSpectrogramVersion);
  w.u32(static_cast<std::uint32_t>(s.frames()));
  w.u32(static_cast<std::uint32_t>(s.bins()));
  for (double v : s.array().values()) w.f64(v);
  io::write_file(path, w.buffer());
}

Spectrogram load_spectrogram(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const std::string what = path.string();
  io::Reader r(bytes, what);
  if (bytes.size() < 16) throw FormatError(FormatError::Kind::truncated, what + ": short header");
  if (r.bytes(4) != std::string_view(kSpectrogramMagic, 4)) {
    throw FormatError(FormatError::Kind::bad_magic, what + ": not a spectrogram file");
  }
  const std::uint32_t version = r.u32();
  if (version != kSpectrogramVersion) {
    throw FormatError(FormatError::Kind::version_mismatch,
                      fmt::format("{}: spectrogram version {} (expected {})", what, version,
                                  kSpectrogramVersion));
  }
  const std::uint32_t frames = r.u32();
  const std::uint32_t bins = r.u32();
  if (frames == 0 || bins == 0) {
    throw FormatError(FormatError::Kind::empty_payload, what + ": zero-sized spectrogram");
  }
  const std::size_t count = static_cast<std::size_t>(frames) * bins;
  if (r.remaining() != count * 8) {
    throw FormatError(FormatError::Kind::truncated,
                      fmt::format("{}: payload holds {} bytes, header needs {}", what,
                                  r.remaining(), count * 8));
  }
  Spectrogram s(frames, bins);
  for (std::size_t i = 0; i < count; ++i) {
    const double v = r.f64();
    if (!std::isfinite(v)) {
      throw FormatError(FormatError::Kind::syntax,
                        fmt::format("{}: non-finite value at frame {} bin {}", what, i / bins,
                                    i % bins));
    }
    s.array()[i] = v;
  }
  return s;
}

// ---------------------------------------------------------------- synthetic corpus

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

AudioClip synth_clip(std::uint64_t seed, int label, const SynthConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double sr = cfg.sample_rate;
  const double f0 = sr * (0.06 + 0.06 * unit(rng));
  const int harmonics = std::max(1, static_cast<int>(0.45 * sr / f0));
  std::vector<double> phase(harmonics);
  for (auto& p : phase) p = 2.0 * std::numbers::pi * unit(rng);

  AudioClip clip;
  clip.sample_rate = cfg.sample_rate;
  clip.samples.resize(cfg.samples);

  // Smoothed noise envelope for the modulated class.
  double envelope = 0.0;
  const double smoothing = 0.05;
  for (std::size_t n = 0; n < cfg.samples; ++n) {
    const double t = static_cast<double>(n) / sr;
    double tone = 0.0;
    for (int h = 1; h <= harmonics; ++h) {
      tone += std::sin(2.0 * std::numbers::pi * f0 * h * t + phase[h - 1]) / h;
    }
    tone *= cfg.tone_amplitude;
    double v;
    if (label == 0) {
      v = tone + cfg.bonafide_noise * gauss(rng);
    } else {
      envelope += smoothing * (gauss(rng) - envelope);
      v = tone * (1.0 + 2.0 * envelope) + cfg.spoof_noise * gauss(rng);
    }
    clip.samples[n] = std::clamp(v, -1.0, 1.0);
  }
  return clip;
}

}  // namespace

std::vector<LabeledClip> synth_dataset(std::uint64_t seed, std::size_t n_per_class,
                                       const SynthConfig& cfg) {
  if (n_per_class == 0) throw InvalidArgument("synth_dataset needs n_per_class >= 1");
  if (cfg.samples == 0 || cfg.sample_rate == 0) {
    throw InvalidArgument("synth_dataset needs a positive clip length and sample rate");
  }
  std::vector<LabeledClip> out;
  out.reserve(2 * n_per_class);
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    out.push_back({fmt::format("syn_{:06d}", i), synth_clip(mix_seed(seed, i), label, cfg), label});
  }
  return out;
}

}  // namespace advr
