#include "hafed/config.hpp"

#include <set>

#include "hafed/io_util.hpp"
#include "hafed/json_conv.hpp"

namespace hafed {

namespace {

using nlohmann::json;

template <typename T>
void fetch(const json& j, const std::string& section, const char* key,
           T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config error at " + section + "." + key + ": " +
                      e.what());
  }
}

void reject_unknown(const json& j, const std::string& section,
                    const std::set<std::string>& known) {
  if (!j.is_object())
    throw ConfigError("config error at " + section + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key))
      throw ConfigError("config error at " + section + ": unknown key '" +
                        key + "'");
  }
}

Variant variant_from_string(const std::string& s) {
  if (s == "base") return Variant::base;
  if (s == "plus") return Variant::plus;
  if (s == "plus_plus_s") return Variant::plus_plus_s;
  if (s == "plus_plus") return Variant::plus_plus;
  throw ConfigError(
      "config error at aggregation.variant: expected one of "
      "base|plus|plus_plus_s|plus_plus, got '" +
      s + "'");
}

Setting setting_from_string(const std::string& s) {
  if (s == "utmp") return Setting::utmp;
  if (s == "vanilla_multimodal") return Setting::vanilla_multimodal;
  throw ConfigError(
      "config error at federation.setting: expected utmp|vanilla_multimodal, "
      "got '" + s + "'");
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  reject_unknown(j, "$",
                 {"arch", "data", "federation", "training", "aggregation",
                  "eval", "robustness", "seed", "workers"});

  if (j.contains("arch")) {
    const auto& a = j.at("arch");
    reject_unknown(a, "arch",
                   {"modalities", "input_dims", "t_min", "t_max", "d_model",
                    "heads", "encoder_layers", "lstm_hidden", "decoder_widths",
                    "output_range"});
    fetch(a, "arch", "modalities", cfg.arch.modalities);
    fetch(a, "arch", "input_dims", cfg.arch.input_dims);
    fetch(a, "arch", "t_min", cfg.arch.t_min);
    fetch(a, "arch", "t_max", cfg.arch.t_max);
    fetch(a, "arch", "d_model", cfg.arch.d_model);
    fetch(a, "arch", "heads", cfg.arch.heads);
    fetch(a, "arch", "encoder_layers", cfg.arch.encoder_layers);
    fetch(a, "arch", "lstm_hidden", cfg.arch.lstm_hidden);
    fetch(a, "arch", "decoder_widths", cfg.arch.decoder_widths);
    std::vector<double> range{cfg.arch.out_lo, cfg.arch.out_hi};
    fetch(a, "arch", "output_range", range);
    if (range.size() != 2)
      throw ConfigError("config error at arch.output_range: expected 2 values");
    cfg.arch.out_lo = range[0];
    cfg.arch.out_hi = range[1];
  }

  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, "data",
                   {"n_samples", "noise_sigma", "label_weights",
                    "pattern_freqs", "train_frac", "val_frac", "seed"});
    fetch(d, "data", "n_samples", cfg.synth.n_samples);
    fetch(d, "data", "noise_sigma", cfg.synth.noise_sigma);
    fetch(d, "data", "label_weights", cfg.synth.label_weights);
    fetch(d, "data", "pattern_freqs", cfg.synth.pattern_freqs);
    fetch(d, "data", "train_frac", cfg.synth.train_frac);
    fetch(d, "data", "val_frac", cfg.synth.val_frac);
    fetch(d, "data", "seed", cfg.data_seed);
  }

  if (j.contains("federation")) {
    const auto& f = j.at("federation");
    reject_unknown(f, "federation",
                   {"clients", "clients_per_round", "rounds", "local_epochs",
                    "batch_size", "setting", "alpha_skew", "missing_rate",
                    "active_modalities"});
    fetch(f, "federation", "active_modalities", cfg.active_modalities);
    fetch(f, "federation", "clients", cfg.clients_total);
    fetch(f, "federation", "clients_per_round", cfg.clients_per_round);
    fetch(f, "federation", "rounds", cfg.rounds);
    fetch(f, "federation", "local_epochs", cfg.local_epochs);
    fetch(f, "federation", "batch_size", cfg.batch_size);
    std::string setting = setting_name(cfg.setting);
    fetch(f, "federation", "setting", setting);
    cfg.setting = setting_from_string(setting);
    fetch(f, "federation", "alpha_skew", cfg.alpha_skew);
    fetch(f, "federation", "missing_rate", cfg.missing_rate);
  }

  if (j.contains("training")) {
    const auto& t = j.at("training");
    reject_unknown(t, "training",
                   {"lr", "update_steps", "sample_times", "mu_prox", "loss"});
    fetch(t, "training", "lr", cfg.lr);
    fetch(t, "training", "update_steps", cfg.update_steps);
    fetch(t, "training", "sample_times", cfg.sample_times);
    fetch(t, "training", "mu_prox", cfg.mu_prox);
    std::string loss = cfg.loss == nn::LossKind::squared ? "squared" : "l1";
    fetch(t, "training", "loss", loss);
    if (loss == "squared") {
      cfg.loss = nn::LossKind::squared;
    } else if (loss == "l1") {
      cfg.loss = nn::LossKind::l1;
    } else {
      throw ConfigError(
          "config error at training.loss: expected squared|l1, got '" + loss +
          "'");
    }
  }

  if (j.contains("aggregation")) {
    const auto& a = j.at("aggregation");
    reject_unknown(a, "aggregation",
                   {"variant", "eta", "beta", "norm_p", "var_floor"});
    std::string variant = variant_name(cfg.variant);
    fetch(a, "aggregation", "variant", variant);
    cfg.variant = variant_from_string(variant);
    fetch(a, "aggregation", "eta", cfg.eta);
    fetch(a, "aggregation", "beta", cfg.beta_override);
    fetch(a, "aggregation", "norm_p", cfg.norm_p);
    fetch(a, "aggregation", "var_floor", cfg.var_floor);
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, "eval", {"val_samples", "probe_samples"});
    fetch(e, "eval", "val_samples", cfg.eval_samples);
    fetch(e, "eval", "probe_samples", cfg.probe_samples);
  }

  if (j.contains("robustness")) {
    const auto& r = j.at("robustness");
    reject_unknown(r, "robustness", {"xi", "seeds"});
    fetch(r, "robustness", "xi", cfg.robustness_xi);
    fetch(r, "robustness", "seeds", cfg.robustness_seeds);
  }

  fetch(j, "$", "seed", cfg.master_seed);
  fetch(j, "$", "workers", cfg.workers);

  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config error at " + std::string(e.what()));
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw ConfigError("config error: cannot parse " + path.string() + ": " +
                      e.what());
  }
  return config_from_json(j);
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["arch"] = arch_to_json(cfg.arch);
  j["data"] = {{"n_samples", cfg.synth.n_samples},
               {"noise_sigma", cfg.synth.noise_sigma},
               {"label_weights", cfg.synth.label_weights},
               {"pattern_freqs", cfg.synth.pattern_freqs},
               {"train_frac", cfg.synth.train_frac},
               {"val_frac", cfg.synth.val_frac},
               {"seed", cfg.data_seed}};
  j["federation"] = {{"clients", cfg.clients_total},
                     {"clients_per_round", cfg.clients_per_round},
                     {"rounds", cfg.rounds},
                     {"local_epochs", cfg.local_epochs},
                     {"batch_size", cfg.batch_size},
                     {"setting", setting_name(cfg.setting)},
                     {"alpha_skew", cfg.alpha_skew},
                     {"missing_rate", cfg.missing_rate},
                     {"active_modalities", cfg.active_modalities}};
  j["training"] = {{"lr", cfg.lr},
                   {"update_steps", cfg.update_steps},
                   {"sample_times", cfg.sample_times},
                   {"mu_prox", cfg.mu_prox},
                   {"loss", cfg.loss == nn::LossKind::squared ? "squared" : "l1"}};
  j["aggregation"] = {{"variant", variant_name(cfg.variant)},
                      {"eta", cfg.eta},
                      {"beta", cfg.beta_override},
                      {"norm_p", cfg.norm_p},
                      {"var_floor", cfg.var_floor}};
  j["eval"] = {{"val_samples", cfg.eval_samples},
               {"probe_samples", cfg.probe_samples}};
  j["robustness"] = {{"xi", cfg.robustness_xi},
                     {"seeds", cfg.robustness_seeds}};
  j["seed"] = cfg.master_seed;
  j["workers"] = cfg.workers;
  return j;
}

}  // namespace hafed
