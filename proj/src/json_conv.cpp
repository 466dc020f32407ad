#include "hafed/json_conv.hpp"

namespace hafed {

nlohmann::json arch_to_json(const ArchSpec& a) {
  return nlohmann::json{{"modalities", a.modalities},
                        {"input_dims", a.input_dims},
                        {"t_min", a.t_min},
                        {"t_max", a.t_max},
                        {"d_model", a.d_model},
                        {"heads", a.heads},
                        {"encoder_layers", a.encoder_layers},
                        {"lstm_hidden", a.lstm_hidden},
                        {"decoder_widths", a.decoder_widths},
                        {"output_range", {a.out_lo, a.out_hi}}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  a.modalities = j.at("modalities").get<std::size_t>();
  a.input_dims = j.at("input_dims").get<std::vector<std::size_t>>();
  a.t_min = j.at("t_min").get<std::size_t>();
  a.t_max = j.at("t_max").get<std::size_t>();
  a.d_model = j.at("d_model").get<std::size_t>();
  a.heads = j.at("heads").get<std::size_t>();
  a.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  a.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  a.decoder_widths = j.at("decoder_widths").get<std::vector<std::size_t>>();
  const auto range = j.at("output_range");
  a.out_lo = range.at(0).get<double>();
  a.out_hi = range.at(1).get<double>();
  return a;
}

}  // namespace hafed
