#include "famarl/cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "famarl/errors.hpp"

namespace famarl::cli {

namespace {

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("bad value '" + s + "' for " + key);
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
Field num(const std::string& key, T& ref) {
  T* r = &ref;
  return {key, [r] {
            if constexpr (std::is_floating_point_v<T>) return fmt(*r);
            else return std::to_string(*r);
          },
          [r, key](const std::string& s) { *r = parse_number<T>(key, s); }};
}

template <typename T>
Field list(const std::string& key, std::vector<T>& ref) {
  std::vector<T>* r = &ref;
  return {key,
          [r] {
            std::string s;
            for (std::size_t i = 0; i < r->size(); ++i) {
              if (i) s += ',';
              if constexpr (std::is_floating_point_v<T>) s += fmt((*r)[i]);
              else s += std::to_string((*r)[i]);
            }
            return s;
          },
          [r, key](const std::string& s) {
            r->clear();
            if (s.empty()) return;
            for (const auto& item : split_list(s)) r->push_back(parse_number<T>(key, item));
          }};
}

std::vector<Field> fields(RunConfig& c) {
  auto& e = c.env;
  auto& sp = c.script_params;
  auto& sg = c.segmentation;
  auto& f = c.favae;
  auto& p = c.ppo;
  return {
      num("seed", c.seed),
      {"out", [&c] { return c.out; }, [&c](const std::string& s) { c.out = s; }},

      {"env.task", [&e = c.env] { return env::to_string(e.task); },
       [&e = c.env](const std::string& s) { e.task = env::task_from_string(s); }},
      num("env.map_size", e.map_size),
      num("env.min_map_size", e.min_map_size),
      num("env.max_map_size", e.max_map_size),
      num("env.max_steps", e.max_steps),
      num("env.goal_radius_frac", e.goal_radius_frac),
      num("env.dt", e.dt),
      num("env.max_speed_frac", e.max_speed_frac),
      num("env.num_walls", e.num_walls),
      num("env.gap_width_frac", e.gap_width_frac),
      num("env.corner_inset_frac", e.corner_inset_frac),

      {"scripts.kind", [&c] { return scripts::to_string(c.script); },
       [&c](const std::string& s) { c.script = scripts::script_from_string(s); }},
      num("scripts.n", c.demos),
      num("scripts.kp", sp.kp),
      num("scripts.kd", sp.kd),
      num("scripts.push", sp.push),
      num("scripts.jitter", sp.jitter),
      num("scripts.phase_tol", sp.phase_tol),

      num("segmentation.window_size", sg.window_size),
      num("segmentation.stride", sg.stride),
      num("segmentation.neighborhood", sg.peak_neighborhood),
      num("segmentation.margin", sg.peak_margin),
      num("segmentation.min_segment_length", sg.min_segment_length),
      num("segmentation.hidden", sg.hidden),
      num("segmentation.code_size", sg.code_size),
      num("segmentation.epochs", sg.epochs),
      num("segmentation.batch_size", sg.batch_size),
      num("segmentation.learning_rate", sg.learning_rate),

      list("favae.latent_dims", f.latent_dims),
      num("favae.beta", f.beta),
      {"favae.c_last",
       [&c] { return c.calibrated ? list("", c.favae.c_last).get() : std::string("auto"); },
       [&c](const std::string& s) {
         if (s == "auto") {
           c.calibrated = false;
           c.favae.c_last.assign(c.favae.latent_dims.size(), 0.0);
         } else {
           list("favae.c_last", c.favae.c_last).set(s);
           c.calibrated = true;
         }
       }},
      num("favae.epochs", f.epochs),
      num("favae.anneal_epochs", f.anneal_epochs),
      num("favae.batch_size", f.batch_size),
      num("favae.learning_rate", f.learning_rate),
      num("favae.final_lr_fraction", f.final_lr_fraction),
      {"favae.recon", [&f = c.favae] { return std::string(f.recon == favae::ReconReduction::Sum ? "sum" : "mean"); },
       [&f = c.favae](const std::string& s) {
         if (s == "sum") f.recon = favae::ReconReduction::Sum;
         else if (s == "mean") f.recon = favae::ReconReduction::Mean;
         else throw ConfigError("favae.recon must be sum or mean");
       }},
      num("favae.conv1_channels", f.conv1_channels),
      num("favae.conv2_channels", f.conv2_channels),
      num("favae.hidden", f.hidden),
      num("favae.length_quantile", c.length_quantile),

      num("traverse.ladder", c.traverse_ladder),
      num("traverse.index", c.traverse_index),
      num("traverse.base", c.traverse_base),
      list("traverse.values", c.traverse_values),

      {"policy.agent", [&c] { return policy::to_string(c.agent); },
       [&c](const std::string& s) { c.agent = policy::agent_from_string(s); }},
      num("policy.gamma", p.gamma),
      num("policy.lambda", p.lambda),
      num("policy.clip", p.clip),
      num("policy.epochs", p.epochs),
      num("policy.minibatch", p.minibatch),
      num("policy.entropy_coef", p.entropy_coef),
      num("policy.value_coef", p.value_coef),
      num("policy.horizon", p.horizon),
      num("policy.total_steps", p.total_steps),
      num("policy.actor_lr", p.actor_lr),
      num("policy.critic_lr", p.critic_lr),
      num("policy.max_grad_norm", p.max_grad_norm),
      num("policy.reward_scale", p.reward_scale),
      num("policy.hidden", p.hidden),
      num("policy.init_log_std", p.init_log_std),
      num("policy.min_log_std", p.min_log_std),
      num("policy.max_log_std", p.max_log_std),
      num("policy.latent_bound", p.latent_bound),
      num("policy.max_repeat", p.max_repeat),

      num("evaluate.episodes", c.eval_episodes),
  };
}

const Field& find(const std::vector<Field>& fs, const std::string& key) {
  for (const auto& f : fs)
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto fs = fields(*this);
  try {
    find(fs, key).set(trim(value));
  } catch (const UsageError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string RunConfig::get(const std::string& key) const {
  return find(fields(const_cast<RunConfig&>(*this)), key).get();
}

std::vector<std::string> RunConfig::keys() {
  RunConfig c;
  std::vector<std::string> out;
  for (const auto& f : fields(c)) out.push_back(f.key);
  return out;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& f : fields(const_cast<RunConfig&>(*this))) s += f.key + " = " + f.get() + "\n";
  return s;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write " + path.string());
  f << to_text();
}

void RunConfig::validate() const {
  env.validate();
  auto base_env = env;
  base_env.task = env::Task::Base;
  base_env.validate();
  segmentation.validate();
  favae.validate();
  ppo.validate();
  if (demos < 1) throw UsageError("scripts.n must be >= 1");
  if (!(length_quantile > 0 && length_quantile <= 1)) throw ConfigError("favae.length_quantile must be in (0, 1]");
  if (eval_episodes < 1) throw ConfigError("evaluate.episodes must be >= 1");
  if (traverse_values.empty()) throw ConfigError("traverse.values must not be empty");
}

}  // namespace famarl::cli
