#include "drsim/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "drsim/errors.hpp"
#include "drsim/preference.hpp"
#include "drsim/rng.hpp"

namespace drsim {

using nlohmann::json;

std::string to_string(IncentiveKind kind) {
  switch (kind) {
    case IncentiveKind::none: return "none";
    case IncentiveKind::financial: return "financial";
    case IncentiveKind::social: return "social";
  }
  return "none";
}

std::size_t ScenarioConfig::horizon_samples() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(periods) * period_hours / profile_resolution_h));
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

// ---------------------------------------------------------------- parsing

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw ValidationError(fmt::format("{}: {}", field, msg));
}

template <class T>
T read(const json& j, const std::string& key, const std::string& field) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(field, "missing or of the wrong type");
  }
}

template <class T>
T read_or(const json& j, const std::string& key, T fallback, const std::string& field) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(field, "has the wrong type");
  }
}

std::pair<double, double> read_range(const json& j, const std::string& key, std::pair<double, double> fallback,
                                     const std::string& field) {
  if (!j.contains(key)) return fallback;
  const auto v = read<std::vector<double>>(j, key, field);
  if (v.size() != 2 || !(v[0] <= v[1])) fail(field, "expected [lo, hi] with lo <= hi");
  return {v[0], v[1]};
}

void warn_unknown(const json& j, const std::set<std::string>& known, const std::string& prefix,
                  std::vector<std::string>& warnings) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) warnings.push_back(fmt::format("{}{}: unknown key ignored", prefix, key));
  }
}

OpinionTopic parse_topic(const json& j, const std::string& field, OpinionTopic topic) {
  if (!j.is_object()) fail(field, "expected an object");
  if (j.contains("initial")) {
    const auto& in = j.at("initial");
    const std::string f = field + ".initial";
    const auto dist = read<std::string>(in, "distribution", f + ".distribution");
    if (dist == "uniform") {
      topic.initial.kind = OpinionInit::Kind::uniform;
      topic.initial.lo = read<double>(in, "lo", f + ".lo");
      topic.initial.hi = read<double>(in, "hi", f + ".hi");
      if (!(0.0 <= topic.initial.lo && topic.initial.lo <= topic.initial.hi && topic.initial.hi <= 1.0)) {
        fail(f, "uniform bounds must satisfy 0 <= lo <= hi <= 1");
      }
    } else if (dist == "beta") {
      topic.initial.kind = OpinionInit::Kind::beta;
      topic.initial.mean = read<double>(in, "mean", f + ".mean");
      topic.initial.concentration = read_or<double>(in, "concentration", 8.0, f + ".concentration");
      if (!(topic.initial.mean > 0.0 && topic.initial.mean < 1.0)) fail(f + ".mean", "must lie in (0,1)");
      if (!(topic.initial.concentration > 0.0)) fail(f + ".concentration", "must be positive");
    } else if (dist == "constant") {
      topic.initial.kind = OpinionInit::Kind::constant;
      topic.initial.value = read<double>(in, "value", f + ".value");
      if (!(topic.initial.value >= 0.0 && topic.initial.value <= 1.0)) fail(f + ".value", "must lie in [0,1]");
    } else {
      fail(f + ".distribution", fmt::format("unknown distribution '{}'", dist));
    }
  }
  std::tie(topic.mu_lo, topic.mu_hi) = read_range(j, "susceptibility", {topic.mu_lo, topic.mu_hi}, field + ".susceptibility");
  std::tie(topic.self_lo, topic.self_hi) =
      read_range(j, "self_confidence", {topic.self_lo, topic.self_hi}, field + ".self_confidence");
  if (topic.mu_lo < 0.0 || topic.mu_hi > 1.0) fail(field + ".susceptibility", "must lie in [0,1]");
  if (topic.self_lo < 0.0 || topic.self_hi > 1.0) fail(field + ".self_confidence", "must lie in [0,1]");
  return topic;
}

int parse_stratum_key(const std::string& key, const std::string& field) {
  try {
    std::size_t used = 0;
    const int s = std::stoi(key, &used);
    if (used != key.size() || s < 1 || s > 6) throw std::invalid_argument(key);
    return s;
  } catch (const std::exception&) {
    fail(field, fmt::format("'{}' is not a stratum between 1 and 6", key));
  }
}

StrataConfig parse_strata(const json& j, const std::string& field) {
  if (!j.is_object()) fail(field, "expected an object");
  StrataConfig s;
  if (j.contains("mix")) {
    for (const auto& [key, value] : j.at("mix").items()) {
      const int stratum = parse_stratum_key(key, field + ".mix");
      if (!value.is_number_integer() || value.get<long>() < 0) fail(field + ".mix." + key, "expected a count >= 0");
      s.mix[stratum] = value.get<std::size_t>();
    }
  }
  if (j.contains("targets")) {
    for (const auto& [key, value] : j.at("targets").items()) {
      const int stratum = parse_stratum_key(key, field + ".targets");
      const std::string f = field + ".targets." + key;
      s.targets[stratum] = {stratum, read<double>(value, "goal_kwh", f + ".goal_kwh"), read<double>(value, "tol_kwh", f + ".tol_kwh")};
    }
  } else if (j.contains("reference_goal_kwh")) {
    const double ref = read<double>(j, "reference_goal_kwh", field + ".reference_goal_kwh");
    const double tol_fraction = read_or<double>(j, "tol_fraction", 0.03, field + ".tol_fraction");
    if (!(ref > 0.0)) fail(field + ".reference_goal_kwh", "must be positive");
    if (!(tol_fraction > 0.0)) fail(field + ".tol_fraction", "must be positive");
    if (!j.contains("scales")) fail(field + ".scales", "required with reference_goal_kwh");
    for (const auto& [key, value] : j.at("scales").items()) {
      const int stratum = parse_stratum_key(key, field + ".scales");
      if (!value.is_number() || !(value.get<double>() > 0.0)) fail(field + ".scales." + key, "expected a positive number");
      const double goal = ref * value.get<double>();
      s.targets[stratum] = {stratum, goal, goal * tol_fraction};
    }
  }
  for (const auto& [stratum, t] : s.targets) {
    try {
      t.validate();
    } catch (const ParameterError& e) {
      fail(fmt::format("{}.targets.{}", field, stratum), e.what());
    }
  }
  if (j.contains("calibration")) {
    const auto& c = j.at("calibration");
    const std::string f = field + ".calibration";
    auto& o = s.calibration;
    o.horizon = read_or<std::size_t>(c, "horizon_hours", o.horizon, f + ".horizon_hours");
    o.num_test = read_or<std::size_t>(c, "num_test", o.num_test, f + ".num_test");
    o.delta = read_or<double>(c, "delta", o.delta, f + ".delta");
    o.max_iterations = read_or<std::size_t>(c, "max_iterations", o.max_iterations, f + ".max_iterations");
    o.halve_on_reversal = read_or<bool>(c, "halve_on_reversal", o.halve_on_reversal, f + ".halve_on_reversal");
    if (o.horizon == 0) fail(f + ".horizon_hours", "must be positive");
    if (o.num_test == 0) fail(f + ".num_test", "must be positive");
    if (!(o.delta > 0.0 && o.delta < 0.5)) fail(f + ".delta", "must lie in (0, 0.5)");
  }
  s.reference_sample_hours =
      read_or<std::size_t>(j, "reference_sample_hours", s.reference_sample_hours, field + ".reference_sample_hours");
  if (s.reference_sample_hours < 2) fail(field + ".reference_sample_hours", "must be at least 2");
  return s;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("{}: parse error: {}", path.string(), e.what()));
  }
}

QualifyingRule parse_qualifying(const json& j, const std::string& field) {
  if (j.contains("periods")) return QualifyingRule::list(read<std::vector<std::size_t>>(j, "periods", field + ".periods"));
  if (j.contains("quantile")) {
    const double q = read<double>(j, "quantile", field + ".quantile");
    if (!(q >= 0.0 && q <= 1.0)) fail(field + ".quantile", "must lie in [0,1]");
    return QualifyingRule::threshold(q);
  }
  fail(field, "expected 'periods' or 'quantile'");
}

json opinion_to_json(const OpinionTopic& t) {
  json init;
  switch (t.initial.kind) {
    case OpinionInit::Kind::uniform: init = {{"distribution", "uniform"}, {"lo", t.initial.lo}, {"hi", t.initial.hi}}; break;
    case OpinionInit::Kind::beta:
      init = {{"distribution", "beta"}, {"mean", t.initial.mean}, {"concentration", t.initial.concentration}};
      break;
    case OpinionInit::Kind::constant: init = {{"distribution", "constant"}, {"value", t.initial.value}}; break;
  }
  return {{"initial", init}, {"susceptibility", {t.mu_lo, t.mu_hi}}, {"self_confidence", {t.self_lo, t.self_hi}}};
}

std::string canonical(const ScenarioConfig& c) {
  // nlohmann::json objects are key-sorted, which gives a stable dump.
  json j;
  j["schema_version"] = kScenarioSchemaVersion;
  j["name"] = c.name;
  j["population"] = c.population;
  j["periods"] = c.periods;
  j["period_hours"] = c.period_hours;
  j["profile_resolution_hours"] = c.profile_resolution_h;
  json mix, targets;
  for (const auto& [s, n] : c.strata.mix) mix[std::to_string(s)] = n;
  for (const auto& [s, t] : c.strata.targets) targets[std::to_string(s)] = {{"goal_kwh", t.goal_energy_kwh}, {"tol_kwh", t.tol_kwh}};
  const auto& o = c.strata.calibration;
  j["strata"] = {{"mix", mix},
                 {"targets", targets},
                 {"reference_sample_hours", c.strata.reference_sample_hours},
                 {"calibration",
                  {{"horizon_hours", o.horizon},
                   {"num_test", o.num_test},
                   {"delta", o.delta},
                   {"max_iterations", o.max_iterations},
                   {"halve_on_reversal", o.halve_on_reversal}}}};
  json devices = json::array();
  for (const auto& d : c.devices) {
    devices.push_back({{"name", d.model.name},
                       {"power_kw", d.model.nominal_power_kw},
                       {"p_on", d.model.trans.p_on()},
                       {"p_off", d.model.trans.p_off()},
                       {"levels", d.levels}});
  }
  j["devices"] = devices;
  j["strategy_levels"] = c.default_levels;
  j["graph"] = {{"k", c.graph.k}, {"p_rewire", c.graph.p_rewire}, {"max_attempts", c.graph.max_attempts}};
  j["opinions"] = {{"valuation", opinion_to_json(c.valuation_opinion)},
                   {"dr_willingness", opinion_to_json(c.dr_opinion)},
                   {"tolerance", c.fj_tol},
                   {"max_steps", c.fj_max_steps}};
  j["valuation_factor"] = c.valuation_factor;
  j["device_weights"] = c.device_weights;
  j["elasticity"] = {c.elasticity_lo, c.elasticity_hi};
  j["price"] = {{"beta0", c.price.beta0}, {"beta1", c.price.beta1}, {"q_ref", c.price.q_ref}};
  j["protocol"] = {{"kind", to_string(c.protocol.kind)},
                   {"eta", c.protocol.eta},
                   {"delta", c.protocol.delta},
                   {"clock_rate", c.protocol.clock_rate}};
  j["stop"] = {{"window_per_agent", c.stop.window_per_agent},
               {"max_steps", c.stop.max_steps},
               {"record_every", c.stop.record_every}};
  json inc = {{"type", to_string(c.incentives.kind)}};
  if (c.incentives.kind != IncentiveKind::none) {
    const auto& q = c.incentives.qualifying;
    inc["qualifying"] = q.kind == QualifyingRule::Kind::explicit_list ? json{{"periods", q.periods}}
                                                                     : json{{"quantile", q.quantile}};
    if (c.incentives.kind == IncentiveKind::financial) inc["gamma_multiple"] = c.incentives.gamma_multiple;
    if (c.incentives.kind == IncentiveKind::social) {
      inc["eps_flex"] = c.incentives.eps_flex;
      inc["direction"] = c.incentives.direction;
    }
  }
  j["incentives"] = inc;
  j["seed"] = c.seed;
  j["tracked_household"] = c.tracked_household;
  return j.dump();
}

}  // namespace

void finalize_scenario(ScenarioConfig& c) {
  if (c.population < 1) fail("population", "must be >= 1");
  if (c.periods < 1) fail("periods", "must be >= 1");
  if (!(c.period_hours > 0.0)) fail("period_hours", "must be positive");
  if (!(c.profile_resolution_h > 0.0)) fail("profile_resolution_hours", "must be positive");
  const double ratio = c.period_hours / c.profile_resolution_h;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0) {
    fail("period_hours", "must be a whole multiple of profile_resolution_hours");
  }
  std::size_t mixed = 0;
  for (const auto& [stratum, n] : c.strata.mix) {
    mixed += n;
    if (n > 0 && !c.strata.targets.count(stratum)) fail(fmt::format("strata.targets.{}", stratum), "missing for a stratum in the mix");
  }
  if (mixed != c.population) {
    fail("strata.mix", fmt::format("household counts sum to {} but population is {}", mixed, c.population));
  }
  if (c.devices.empty()) fail("devices", "at least one device required");
  std::set<std::string> names;
  for (std::size_t d = 0; d < c.devices.size(); ++d) {
    const std::string f = fmt::format("devices[{}]", d);
    if (!names.insert(c.devices[d].model.name).second) fail(f + ".name", "duplicate device name");
    try {
      c.devices[d].model.validate();
      if (!c.devices[d].levels.empty()) StrategySet{c.devices[d].levels}.validate();
    } catch (const ParameterError& e) {
      fail(f, e.what());
    }
  }
  try {
    StrategySet{c.default_levels}.validate();
  } catch (const ParameterError& e) {
    fail("strategy_levels", e.what());
  }
  if (c.graph.k == 0 || c.graph.k % 2 != 0) fail("graph.k", "must be even and positive");
  if (!(c.graph.p_rewire >= 0.0 && c.graph.p_rewire <= 1.0)) fail("graph.p_rewire", "must lie in [0,1]");
  if (c.graph.max_attempts < 1) fail("graph.max_attempts", "must be >= 1");
  if (!(c.fj_tol > 0.0)) fail("opinions.tolerance", "must be positive");
  if (!(c.valuation_factor > 1.0)) fail("valuation_factor", "must exceed 1");
  if (c.device_weights.empty()) c.device_weights.assign(c.devices.size(), 1.0);
  if (c.device_weights.size() != c.devices.size()) fail("device_weights", "one weight per device required");
  double wsum = 0.0;
  for (double w : c.device_weights) {
    if (!(w >= 0.0)) fail("device_weights", "weights must be nonnegative");
    wsum += w;
  }
  if (std::abs(wsum - static_cast<double>(c.devices.size())) > 1e-9) fail("device_weights", "must sum to the device count");
  if (!(c.elasticity_lo > 0.0 && c.elasticity_lo <= c.elasticity_hi)) fail("elasticity", "expected 0 < lo <= hi");
  try {
    c.price.validate();
  } catch (const ParameterError& e) {
    fail("price", e.what());
  }
  try {
    c.protocol.validate();
  } catch (const ParameterError& e) {
    fail("protocol", e.what());
  }
  if (c.stop.window_per_agent == 0) fail("stop.window_per_agent", "must be positive");
  if (c.stop.max_steps == 0) fail("stop.max_steps", "must be positive");
  if (c.tracked_household >= c.population) fail("tracked_household", "must index a household");
  auto& inc = c.incentives;
  if (inc.kind != IncentiveKind::none) {
    if (inc.qualifying.kind == QualifyingRule::Kind::explicit_list) {
      for (std::size_t t : inc.qualifying.periods) {
        if (t >= c.periods) fail("incentives.qualifying.periods", fmt::format("period {} outside the horizon", t));
      }
    }
    if (inc.kind == IncentiveKind::financial && !(inc.gamma_multiple >= 0.0)) fail("incentives.gamma_multiple", "must be >= 0");
    if (inc.kind == IncentiveKind::social) {
      if (!(inc.eps_flex >= 0.0 && inc.eps_flex <= 1.0)) fail("incentives.eps_flex", "must lie in [0,1]");
      if (inc.direction < -1 || inc.direction > 1) fail("incentives.direction", "must be -1, 0 or 1");
    }
  }
  c.canonical_json = canonical(c);
}

ScenarioConfig parse_scenario(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("parse error: {}", e.what()));
  }
  if (!j.is_object()) fail("<root>", "expected an object");
  ScenarioConfig c;
  const int version = read_or<int>(j, "schema_version", kScenarioSchemaVersion, "schema_version");
  if (!j.contains("schema_version")) c.warnings.push_back("schema_version: missing, assuming 1");
  if (version != kScenarioSchemaVersion) fail("schema_version", fmt::format("unsupported version {}", version));
  warn_unknown(j,
               {"schema_version", "name", "population", "periods", "period_hours", "profile_resolution_hours", "strata",
                "devices", "strategy_levels", "graph", "opinions", "valuation_factor", "device_weights", "elasticity",
                "price", "protocol", "stop", "incentives", "seed", "tracked_household", "threads", "description"},
               "", c.warnings);

  c.name = read_or<std::string>(j, "name", c.name, "name");
  if (j.contains("population")) {
    const auto p = read<long long>(j, "population", "population");
    if (p < 1) fail("population", "must be >= 1");
    c.population = static_cast<std::size_t>(p);
  }
  if (j.contains("periods")) {
    const auto t = read<long long>(j, "periods", "periods");
    if (t < 1) fail("periods", "must be >= 1");
    c.periods = static_cast<std::size_t>(t);
  }
  c.period_hours = read_or<double>(j, "period_hours", c.period_hours, "period_hours");
  c.profile_resolution_h = read_or<double>(j, "profile_resolution_hours", c.profile_resolution_h, "profile_resolution_hours");

  if (!j.contains("strata")) fail("strata", "required");
  if (j.at("strata").is_string()) {
    std::filesystem::path p = j.at("strata").get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    c.strata = parse_strata(read_json_file(p), "strata");
  } else {
    c.strata = parse_strata(j.at("strata"), "strata");
  }
  if (c.strata.mix.empty()) {
    c.strata.mix[4] = c.population;
    c.warnings.push_back(fmt::format("strata.mix: missing, all {} households in stratum 4", c.population));
  }

  if (j.contains("devices")) {
    const auto& arr = j.at("devices");
    if (!arr.is_array()) fail("devices", "expected an array");
    for (std::size_t d = 0; d < arr.size(); ++d) {
      const std::string f = fmt::format("devices[{}]", d);
      DeviceSpec spec;
      spec.model.name = read<std::string>(arr[d], "name", f + ".name");
      spec.model.nominal_power_kw = read<double>(arr[d], "power_kw", f + ".power_kw");
      const double p_on = read<double>(arr[d], "p_on", f + ".p_on");
      const double p_off = read<double>(arr[d], "p_off", f + ".p_off");
      if (!(p_on >= 0.0 && p_on <= 1.0 && p_off >= 0.0 && p_off <= 1.0)) fail(f, "p_on and p_off must lie in [0,1]");
      spec.model.trans = TransitionMatrix::from_rates(p_on, p_off);
      spec.levels = read_or<std::vector<double>>(arr[d], "levels", {}, f + ".levels");
      c.devices.push_back(std::move(spec));
    }
  } else {
    for (auto& m : default_device_catalog()) c.devices.push_back({m, {}});
  }

  if (j.contains("strategy_levels")) {
    const auto& lv = j.at("strategy_levels");
    if (lv.is_number_integer()) {
      const auto count = lv.get<long long>();
      if (count < 2) fail("strategy_levels", "need at least two levels");
      c.default_levels = StrategySet::evenly_spaced(static_cast<std::size_t>(count)).levels;
    } else {
      c.default_levels = read<std::vector<double>>(j, "strategy_levels", "strategy_levels");
    }
  } else {
    c.default_levels = StrategySet::evenly_spaced(5).levels;
  }

  if (j.contains("graph")) {
    const auto& g = j.at("graph");
    c.graph.k = read_or<std::size_t>(g, "k", c.graph.k, "graph.k");
    c.graph.p_rewire = read_or<double>(g, "p_rewire", c.graph.p_rewire, "graph.p_rewire");
    c.graph.max_attempts = read_or<int>(g, "max_attempts", c.graph.max_attempts, "graph.max_attempts");
  }

  // The prose defaults: a broad valuation prior and a pessimistic DR prior.
  c.valuation_opinion.initial = {OpinionInit::Kind::uniform, 0.5, 1.0, 0.5, 8.0, 0.5};
  c.dr_opinion.initial = {OpinionInit::Kind::beta, 0.0, 1.0, 0.25, 8.0, 0.5};
  if (j.contains("opinions")) {
    const auto& o = j.at("opinions");
    if (o.contains("valuation")) c.valuation_opinion = parse_topic(o.at("valuation"), "opinions.valuation", c.valuation_opinion);
    if (o.contains("dr_willingness")) c.dr_opinion = parse_topic(o.at("dr_willingness"), "opinions.dr_willingness", c.dr_opinion);
    c.fj_tol = read_or<double>(o, "tolerance", c.fj_tol, "opinions.tolerance");
    c.fj_max_steps = read_or<std::size_t>(o, "max_steps", c.fj_max_steps, "opinions.max_steps");
  }

  c.valuation_factor = read_or<double>(j, "valuation_factor", c.valuation_factor, "valuation_factor");
  c.device_weights = read_or<std::vector<double>>(j, "device_weights", {}, "device_weights");
  std::tie(c.elasticity_lo, c.elasticity_hi) =
      read_range(j, "elasticity", {c.elasticity_lo, c.elasticity_hi}, "elasticity");

  if (j.contains("price")) {
    const auto& p = j.at("price");
    c.price.beta0 = read_or<double>(p, "beta0", c.price.beta0, "price.beta0");
    c.price.beta1 = read_or<double>(p, "beta1", c.price.beta1, "price.beta1");
    c.price.q_ref = read_or<double>(p, "q_ref", c.price.q_ref, "price.q_ref");
  } else {
    c.warnings.push_back(fmt::format("price: missing, using constant beta0 = {}", c.price.beta0));
  }

  c.protocol.eta = 0.02 * c.valuation_factor * c.price.beta0;
  if (j.contains("protocol")) {
    const auto& p = j.at("protocol");
    if (p.contains("kind")) {
      try {
        c.protocol.kind = protocol_kind_from_string(read<std::string>(p, "kind", "protocol.kind"));
      } catch (const ParameterError& e) {
        fail("protocol.kind", e.what());
      }
    }
    if (p.contains("eta") && p.contains("eta_factor")) fail("protocol", "give eta or eta_factor, not both");
    if (p.contains("eta_factor")) {
      c.protocol.eta = read<double>(p, "eta_factor", "protocol.eta_factor") * c.valuation_factor * c.price.beta0;
    }
    c.protocol.eta = read_or<double>(p, "eta", c.protocol.eta, "protocol.eta");
    c.protocol.delta = read_or<double>(p, "delta", c.protocol.delta, "protocol.delta");
    c.protocol.clock_rate = read_or<double>(p, "clock_rate", c.protocol.clock_rate, "protocol.clock_rate");
  }
  if (j.contains("stop")) {
    const auto& s = j.at("stop");
    c.stop.window_per_agent = read_or<std::size_t>(s, "window_per_agent", c.stop.window_per_agent, "stop.window_per_agent");
    c.stop.max_steps = read_or<std::size_t>(s, "max_steps", c.stop.max_steps, "stop.max_steps");
    c.stop.record_every = read_or<std::size_t>(s, "record_every", c.stop.record_every, "stop.record_every");
  }

  if (j.contains("incentives")) {
    const auto& in = j.at("incentives");
    const auto type = read<std::string>(in, "type", "incentives.type");
    if (type == "none") {
      c.incentives.kind = IncentiveKind::none;
    } else if (type == "financial") {
      c.incentives.kind = IncentiveKind::financial;
      c.incentives.gamma_multiple = read<double>(in, "gamma_multiple", "incentives.gamma_multiple");
    } else if (type == "social") {
      c.incentives.kind = IncentiveKind::social;
      c.incentives.eps_flex = read<double>(in, "eps_flex", "incentives.eps_flex");
      c.incentives.direction = read_or<int>(in, "direction", -1, "incentives.direction");
    } else {
      fail("incentives.type", fmt::format("unknown type '{}'", type));
    }
    if (c.incentives.kind != IncentiveKind::none) {
      if (!in.contains("qualifying")) fail("incentives.qualifying", "required");
      c.incentives.qualifying = parse_qualifying(in.at("qualifying"), "incentives.qualifying");
    }
  }

  if (j.contains("seed")) {
    const auto& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) fail("seed", "expected a nonnegative integer");
    c.seed = s.get<std::uint64_t>();
  }
  c.tracked_household = read_or<std::size_t>(j, "tracked_household", c.tracked_household, "tracked_household");
  c.threads = read_or<std::size_t>(j, "threads", c.threads, "threads");

  finalize_scenario(c);
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_scenario(ss.str(), path.parent_path());
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

StrataConfig load_strata(const std::filesystem::path& path) {
  try {
    return parse_strata(read_json_file(path), "strata");
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

// ---------------------------------------------------------------- pipeline

CalibrationBundle run_calibration(const StrataConfig& strata, std::span<const DeviceModel> catalog, std::uint64_t seed) {
  CalibrationBundle b;
  b.reference = estimate_reference_devices(catalog, strata.reference_sample_hours, derive_seed(seed, "reference-devices"));
  std::set<int> wanted;
  for (const auto& [stratum, n] : strata.mix) {
    if (n > 0) wanted.insert(stratum);
  }
  if (wanted.empty()) {
    for (const auto& [stratum, _] : strata.targets) wanted.insert(stratum);
  }
  for (int stratum : wanted) {
    const auto t = strata.targets.find(stratum);
    if (t == strata.targets.end()) throw ValidationError(fmt::format("strata.targets.{}: missing", stratum));
    b.table[stratum] = calibrate_stratum(b.reference, t->second, strata.calibration, derive_seed(seed, "calibration"));
  }
  return b;
}

namespace {

double draw_initial(const OpinionInit& init, Rng& rng) {
  switch (init.kind) {
    case OpinionInit::Kind::uniform: return uniform(rng, init.lo, init.hi);
    case OpinionInit::Kind::beta:
      return beta_variate(rng, init.mean * init.concentration, (1.0 - init.mean) * init.concentration);
    case OpinionInit::Kind::constant: return init.value;
  }
  return 0.0;
}

SocialGraph build_graph(const ScenarioConfig& c) {
  const std::size_t n = c.population;
  if (n > c.graph.k && n >= 3) {
    WsParams p = c.graph;
    p.n = n;
    p.seed = derive_seed(c.seed, "graph");
    return generate_ws_graph(p);
  }
  // Too few households for the lattice: everyone listens to everyone.
  SocialGraph g(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g.set_weight(i, j, i == j || n == 1 ? 0.0 : 1.0 / static_cast<double>(n - 1));
  }
  return g;
}

FjRun run_topic(const ScenarioConfig& c, const SocialGraph& base, const OpinionTopic& topic, std::uint64_t index) {
  SocialGraph g = base;
  Rng prm(derive_seed(c.seed, "opinion-params", index));
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.susceptibility()[i] = uniform(prm, topic.mu_lo, topic.mu_hi);
    g.self_confidence()[i] = uniform(prm, topic.self_lo, topic.self_hi);
  }
  Rng init(derive_seed(c.seed, "opinion-initial", index));
  std::vector<double> sigma(g.size());
  for (double& s : sigma) s = std::clamp(draw_initial(topic.initial, init), 0.0, 1.0);
  FjRun run = fj_run(g, OpinionState::from_initial(std::move(sigma)), c.fj_tol, c.fj_max_steps, true);
  for (double& s : run.state.current) s = std::clamp(s, 0.0, 1.0);
  return run;
}

std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(n, jobs));
}

GameRun run_games(const std::vector<PeriodGame>& games, const ScenarioConfig& c) {
  GameRun run;
  run.periods.resize(games.size());
  run.aggregate.resize(games.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t t = next++; t < games.size(); t = next++) {
      try {
        run.periods[t] = run_period_game(games[t], initial_state(games[t]), c.protocol, c.stop,
                                         derive_seed(c.seed, "period-game", t), c.tracked_household);
        run.aggregate[t] = run.periods[t].state.aggregate;
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t workers = worker_count(c.threads, games.size());
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return run;
}

std::uint64_t hash_run(const RunResult& r) {
  std::string buf;
  auto put = [&buf](const auto& v) { buf.append(reinterpret_cast<const char*>(&v), sizeof v); };
  for (const GameRun* g : {&r.natural, &r.incentivized}) {
    for (const auto& p : g->periods) {
      for (std::size_t lv : p.state.level) put(static_cast<std::uint64_t>(lv));
      put(p.state.aggregate);
      put(p.steps);
    }
  }
  for (double q : r.preference_profile) put(q);
  for (const auto& row : r.valuations) {
    for (double a : row) put(a);
  }
  for (auto e : r.engaged) put(e);
  return fnv1a(buf, fnv1a(r.config.canonical_json));
}

}  // namespace

RunResult run_scenario(const ScenarioConfig& config) {
  std::vector<DeviceModel> catalog;
  for (const auto& d : config.devices) catalog.push_back(d.model);
  return run_scenario(config, run_calibration(config.strata, catalog, config.seed));
}

RunResult run_scenario(const ScenarioConfig& config, const CalibrationBundle& calibration) {
  RunResult r;
  r.config = config;
  const ScenarioConfig& c = r.config;
  if (c.canonical_json.empty()) r.config.canonical_json = canonical(c);
  r.scenario_hash = fnv1a(c.canonical_json);
  r.reference_devices = calibration.reference;
  r.calibration = calibration.table;

  std::vector<DeviceModel> catalog;
  for (const auto& d : c.devices) catalog.push_back(d.model);
  r.profiles = build_population_profiles(c.strata.mix, catalog, r.calibration, c.horizon_samples(), c.profile_resolution_h,
                                         derive_seed(c.seed, "profiles"));
  r.preferences = extract_preferences(r.profiles, c.period_hours);

  const std::size_t households = c.population;
  const std::size_t devices = catalog.size();
  Rng erng(derive_seed(c.seed, "elasticity"));
  r.preferences.elasticity.assign(households, std::vector<double>(devices));
  for (auto& row : r.preferences.elasticity) {
    for (double& e : row) e = uniform(erng, c.elasticity_lo, c.elasticity_hi);
  }

  r.graph = build_graph(c);
  r.valuation_opinions = run_topic(c, r.graph, c.valuation_opinion, 0);
  r.dr_opinions = run_topic(c, r.graph, c.dr_opinion, 1);
  r.valuations = resolve_valuations(r.valuation_opinions.state.current, c.valuation_factor, c.price.beta0, c.device_weights);

  r.strategy_sets.push_back(StrategySet{c.default_levels});
  std::vector<std::size_t> set_of(devices, 0);
  for (std::size_t d = 0; d < devices; ++d) {
    if (c.devices[d].levels.empty()) continue;
    set_of[d] = r.strategy_sets.size();
    r.strategy_sets.push_back(StrategySet{c.devices[d].levels});
  }

  const double eps_flex = c.incentives.kind == IncentiveKind::social ? c.incentives.eps_flex : 0.0;
  for (std::size_t h = 0; h < households; ++h) {
    Household hh;
    hh.id = h;
    hh.stratum = r.profiles[h].stratum;
    hh.flexibility = eps_flex;
    for (std::size_t d = 0; d < devices; ++d) {
      HouseholdDevice dev;
      dev.name = catalog[d].name;
      dev.nominal_power_kw = catalog[d].nominal_power_kw;
      dev.strategy_set = set_of[d];
      dev.elasticity = r.preferences.elasticity[h][d];
      dev.valuation = r.valuations[h][d];
      dev.theta = r.preferences.theta[h][d];
      hh.devices.push_back(std::move(dev));
    }
    r.households.push_back(std::move(hh));
  }

  r.preference_profile.assign(c.periods, 0.0);
  for (const auto& hh : r.households) {
    for (const auto& dev : hh.devices) {
      for (std::size_t t = 0; t < c.periods; ++t) r.preference_profile[t] += dev.theta[t] * dev.nominal_power_kw * c.period_hours;
    }
  }

  std::vector<PeriodGame> natural_games;
  for (std::size_t t = 0; t < c.periods; ++t) {
    natural_games.push_back(build_period_game(r.households, r.strategy_sets, t, c.period_hours, c.price));
  }
  r.natural = run_games(natural_games, c);

  std::vector<PeriodGame> games = natural_games;
  if (c.incentives.kind != IncentiveKind::none) {
    r.qualifying = qualify_periods(r.preference_profile, c.incentives.qualifying);
    std::vector<char> qualifies(c.periods, 0);
    for (std::size_t t : r.qualifying) qualifies[t] = 1;
    if (c.incentives.kind == IncentiveKind::social) r.engaged = draw_engagement(r.dr_opinions.state.current, c.seed);
    for (std::size_t t = 0; t < c.periods; ++t) {
      if (!qualifies[t]) continue;
      PeriodIncentives inc;
      if (c.incentives.kind == IncentiveKind::financial) inc.bonus_rate = c.incentives.gamma_multiple * c.price.beta0;
      if (c.incentives.kind == IncentiveKind::social) {
        inc.direction = c.incentives.direction;
        inc.engaged = r.engaged;
      }
      games[t] = build_period_game(r.households, r.strategy_sets, t, c.period_hours, c.price, inc);
    }
    r.incentivized = run_games(games, c);
  } else {
    r.incentivized = r.natural;
  }
  if (r.engaged.empty()) r.engaged.assign(households, 0);

  for (std::size_t t = 0; t < c.periods; ++t) {
    const PeriodGame& g = games[t];
    const GameState& s = r.incentivized.periods[t].state;
    const double beta = c.price.unit_price(s.aggregate);
    std::vector<AccountingRow> rows(households);
    for (std::size_t h = 0; h < households; ++h) {
      rows[h].household = h;
      rows[h].period = t;
    }
    for (std::size_t a = 0; a < g.agents.size(); ++a) {
      const GameAgent& ag = g.agents[a];
      const auto& set = g.strategies(a);
      const double duty = s.duty(g, a);
      const double q = s.energy[a];
      const double pref_duty = set[set.nearest(ag.natural_theta)];
      auto& row = rows[ag.household];
      row.financial_bonus += financial_bonus(ag.reference_energy, q, ag.bonus_rate);
      row.social_value +=
          social_incentive_value(ag.valuation, ag.elasticity, duty, q, beta, ag.natural_theta, ag.theta);
      row.utility_at_preference +=
          ag.valuation * theta_signal(pref_duty, ag.natural_theta, ag.elasticity) - beta * ag.reference_energy;
      row.utility_at_play += ag.valuation * theta_signal(duty, ag.natural_theta, ag.elasticity) - beta * q;
    }
    r.accounting.insert(r.accounting.end(), rows.begin(), rows.end());
  }

  r.result_hash = hash_run(r);
  return r;
}

namespace {

double reduction_over(const RunResult& r, const std::vector<std::size_t>& periods) {
  double nat = 0.0, inc = 0.0;
  for (std::size_t t : periods) {
    nat += r.natural.aggregate[t];
    inc += r.incentivized.aggregate[t];
  }
  return nat > 0.0 ? 1.0 - inc / nat : 0.0;
}

}  // namespace

double RunResult::qualifying_reduction() const { return reduction_over(*this, qualifying); }

double RunResult::total_reduction() const {
  std::vector<std::size_t> all(natural.aggregate.size());
  for (std::size_t t = 0; t < all.size(); ++t) all[t] = t;
  return reduction_over(*this, all);
}

double RunResult::incentive_spend() const {
  double s = 0.0;
  for (const auto& row : accounting) s += row.financial_bonus;
  return s;
}

}  // namespace drsim
