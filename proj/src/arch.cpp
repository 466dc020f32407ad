#include "hafed/arch.hpp"

#include <stdexcept>

namespace hafed {

void ArchSpec::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("arch: " + msg);
  };
  if (modalities < 1) fail("modalities: must be >= 1");
  if (input_dims.size() != modalities)
    fail("input_dims: need one entry per modality");
  for (std::size_t m = 0; m < modalities; ++m) {
    if (input_dims[m] < 1) fail("input_dims[" + std::to_string(m) + "]: must be >= 1");
  }
  if (t_min < 1 || t_max < t_min) fail("t_min/t_max: need 1 <= t_min <= t_max");
  if (d_model < 1) fail("d_model: must be >= 1");
  if (heads < 1) fail("heads: must be >= 1");
  if (d_model % heads != 0) fail("d_model: must be divisible by heads");
  if (encoder_layers < 1) fail("encoder_layers: must be >= 1");
  if (lstm_hidden < 1) fail("lstm_hidden: must be >= 1");
  for (std::size_t i = 0; i < decoder_widths.size(); ++i) {
    if (decoder_widths[i] < 1)
      fail("decoder_widths[" + std::to_string(i) + "]: must be >= 1");
  }
  if (!(out_lo < out_hi)) fail("output_range: must be ordered");
}

std::string ArchSpec::modality_label(std::size_t m) const {
  static const char* lav[] = {"L", "A", "V"};
  if (m < 3) return lav[m];
  return "M" + std::to_string(m);
}

}  // namespace hafed
