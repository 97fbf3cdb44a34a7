#include "cslb/config.hpp"

#include <set>

#include "cslb/data.hpp"
#include "cslb/error.hpp"

namespace cslb {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& section,
                const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigError("config: '" + section + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + section + "." + key + "'");
}

template <typename T>
T get_or(const json& j, const std::string& section, const std::string& key,
         T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + section + "." + key +
                      "' has the wrong type");
  }
}

AttenuationSpec parse_attenuation(const json& j, int n_layers) {
  check_keys(j, "attenuation",
             {"mode", "fixed_alphas", "cut_layer", "alpha", "cut_strength",
              "alpha_min"});
  const std::string mode = get_or<std::string>(j, "attenuation", "mode",
                                               "baseline");
  if (mode == "baseline") return AttenuationSpec::baseline();
  if (mode == "fixed") {
    if (j.contains("fixed_alphas")) {
      if (j.contains("cut_layer") || j.contains("alpha"))
        throw ConfigError(
            "config: attenuation gives both fixed_alphas and cut_layer/alpha");
      return AttenuationSpec::fixed(
          get_or<std::vector<double>>(j, "attenuation", "fixed_alphas", {}));
    }
    if (!j.contains("cut_layer"))
      throw ConfigError(
          "config: attenuation.mode=fixed needs fixed_alphas or cut_layer");
    return AttenuationSpec::fixed_cut(
        n_layers, get_or<int>(j, "attenuation", "cut_layer", 0),
        get_or<double>(j, "attenuation", "alpha", 0.1));
  }
  if (mode == "gated") {
    AttenuationSpec s = AttenuationSpec::gated(
        get_or<double>(j, "attenuation", "cut_strength", 0.9),
        get_or<double>(j, "attenuation", "alpha_min", 0.05));
    return s;
  }
  throw ConfigError("config: attenuation.mode must be baseline|fixed|gated, "
                    "got '" + mode + "'");
}

InputAnchor parse_input_anchor(const std::string& s) {
  if (s == "layer0_hidden") return InputAnchor::kLayer0Hidden;
  if (s == "input_embedding") return InputAnchor::kInputEmbedding;
  throw ConfigError(
      "config: lens.input_anchor must be layer0_hidden|input_embedding");
}

OutputAnchor parse_output_anchor(const std::string& s) {
  if (s == "final_hidden") return OutputAnchor::kFinalHidden;
  if (s == "target_embedding") return OutputAnchor::kTargetEmbedding;
  throw ConfigError(
      "config: lens.output_anchor must be final_hidden|target_embedding");
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  check_keys(j, "<root>", {"model", "attenuation", "train", "lens"});
  RunConfig c;

  const json model = j.value("model", json::object());
  check_keys(model, "model",
             {"n_layers", "d_model", "n_heads", "d_ff", "vocab_size",
              "max_seq_len", "seed"});
  c.model.n_layers = get_or<int>(model, "model", "n_layers", c.model.n_layers);
  c.model.d_model = get_or<int>(model, "model", "d_model", c.model.d_model);
  c.model.n_heads = get_or<int>(model, "model", "n_heads", c.model.n_heads);
  c.model.d_ff = get_or<int>(model, "model", "d_ff", c.model.d_ff);
  c.model.vocab_size =
      get_or<int>(model, "model", "vocab_size", c.model.vocab_size);
  c.model.max_seq_len =
      get_or<int>(model, "model", "max_seq_len", c.model.max_seq_len);
  c.model.seed =
      get_or<std::uint64_t>(model, "model", "seed", c.model.seed);

  c.model.attenuation =
      parse_attenuation(j.value("attenuation", json::object()),
                        c.model.n_layers);

  const json train = j.value("train", json::object());
  check_keys(train, "train",
             {"steps", "batch_size", "seq_len", "lr_peak", "warmup_steps",
              "beta1", "beta2", "eps", "weight_decay", "seed", "eval_every",
              "eval_windows", "corpus"});
  c.train.steps = get_or<std::int64_t>(train, "train", "steps", c.train.steps);
  c.train.batch_size =
      get_or<int>(train, "train", "batch_size", c.train.batch_size);
  c.train.seq_len = get_or<int>(train, "train", "seq_len", c.train.seq_len);
  c.train.lr_peak = get_or<double>(train, "train", "lr_peak", c.train.lr_peak);
  c.train.warmup_steps =
      get_or<std::int64_t>(train, "train", "warmup_steps", -1);
  c.train.beta1 = get_or<double>(train, "train", "beta1", c.train.beta1);
  c.train.beta2 = get_or<double>(train, "train", "beta2", c.train.beta2);
  c.train.eps = get_or<double>(train, "train", "eps", c.train.eps);
  c.train.weight_decay =
      get_or<double>(train, "train", "weight_decay", c.train.weight_decay);
  c.train.seed = get_or<std::uint64_t>(train, "train", "seed", c.train.seed);
  c.train.eval_every =
      get_or<std::int64_t>(train, "train", "eval_every", c.train.eval_every);
  c.train.eval_windows = get_or<std::int64_t>(train, "train", "eval_windows",
                                              c.train.eval_windows);
  c.train.corpus_path =
      get_or<std::string>(train, "train", "corpus", c.train.corpus_path);

  const json lens = j.value("lens", json::object());
  check_keys(lens, "lens",
             {"k", "apply_final_norm", "output_anchor", "input_anchor",
              "exclude_position0"});
  c.lens.k = get_or<int>(lens, "lens", "k", c.lens.k);
  c.lens.apply_final_norm = get_or<bool>(lens, "lens", "apply_final_norm",
                                         c.lens.apply_final_norm);
  c.lens.output_anchor = parse_output_anchor(get_or<std::string>(
      lens, "lens", "output_anchor", to_string(c.lens.output_anchor)));
  c.lens.input_anchor = parse_input_anchor(get_or<std::string>(
      lens, "lens", "input_anchor", to_string(c.lens.input_anchor)));
  c.lens.exclude_position0 = get_or<bool>(lens, "lens", "exclude_position0",
                                          c.lens.exclude_position0);

  c.validate();
  return c;
}

RunConfig parse_run_config_file(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " (in " + path + ")");
  }
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["model"] = {{"n_layers", c.model.n_layers},
                {"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},
                {"d_ff", c.model.d_ff},
                {"vocab_size", c.model.vocab_size},
                {"max_seq_len", c.model.max_seq_len},
                {"seed", c.model.seed}};
  nlohmann::json att;
  att["mode"] = to_string(c.model.attenuation.mode);
  switch (c.model.attenuation.mode) {
    case AttenuationMode::kBaseline:
      break;
    case AttenuationMode::kFixed:
      att["fixed_alphas"] = c.model.attenuation.fixed_alphas;
      break;
    case AttenuationMode::kGated:
      att["cut_strength"] = c.model.attenuation.cut_strength;
      att["alpha_min"] = c.model.attenuation.alpha_min;
      break;
  }
  j["attenuation"] = std::move(att);
  j["train"] = {{"steps", c.train.steps},
                {"batch_size", c.train.batch_size},
                {"seq_len", c.train.seq_len},
                {"lr_peak", c.train.lr_peak},
                {"warmup_steps", c.train.resolved_warmup()},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"weight_decay", c.train.weight_decay},
                {"seed", c.train.seed},
                {"eval_every", c.train.eval_every},
                {"eval_windows", c.train.eval_windows},
                {"corpus", c.train.corpus_path}};
  j["lens"] = {{"k", c.lens.k},
               {"apply_final_norm", c.lens.apply_final_norm},
               {"output_anchor", to_string(c.lens.output_anchor)},
               {"input_anchor", to_string(c.lens.input_anchor)},
               {"exclude_position0", c.lens.exclude_position0}};
  return j;
}

bool config_equal(const RunConfig& a, const RunConfig& b) {
  return run_config_to_json(a) == run_config_to_json(b);
}

}  // namespace cslb
