#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace hafed {

// Shape of the whole model family: per-modality stems, one transformer
// stack per modality, and the shared LSTM decoder. Every ParamMap is laid
// out from one of these.
struct ArchSpec {
  std::size_t modalities = 3;                  // M
  std::vector<std::size_t> input_dims{6, 5, 4};  // d_m
  std::size_t t_min = 6;
  std::size_t t_max = 12;
  std::size_t d_model = 8;
  std::size_t heads = 2;
  std::size_t encoder_layers = 1;
  std::size_t lstm_hidden = 8;
  std::vector<std::size_t> decoder_widths{8};
  double out_lo = -3.0;
  double out_hi = 3.0;

  // throws std::invalid_argument with a field-qualified message
  void validate() const;

  std::string modality_label(std::size_t m) const;

  double clamp_output(double y) const {
    if (y < out_lo) return out_lo;
    if (y > out_hi) return out_hi;
    return y;
  }

  bool operator==(const ArchSpec&) const = default;
};

}  // namespace hafed
