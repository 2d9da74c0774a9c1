#include <cstdio>
#include <deque>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hyperql/harness.hpp"

namespace {

using hyperql::Json;

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDivergence = 3;
constexpr int kMissingInput = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> extras;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->allow_extras();
}

// Resolve a subcommand config: defaults <- file <- dotted overrides.
Json materialize(const Json& defaults, const CommonArgs& args,
                 const std::vector<std::pair<std::string, std::string>>& mapped) {
  Json cfg = defaults;
  if (!args.config_path.empty()) {
    Json user = hyperql::load_json_file(args.config_path);
    hyperql::validate_config(user, defaults);
    hyperql::merge_config(cfg, user);
  }
  for (const auto& [key, value] : mapped) hyperql::apply_override(cfg, key, value);
  // Remaining tokens are dotted overrides: --section.key value
  const auto& extras = args.extras;
  for (size_t i = 0; i < extras.size(); ++i) {
    std::string token = extras[i];
    if (token.rfind("--", 0) != 0) {
      throw hyperql::ConfigError("unexpected argument: " + token);
    }
    token = token.substr(2);
    std::string value;
    const size_t eq = token.find('=');
    if (eq != std::string::npos) {
      value = token.substr(eq + 1);
      token = token.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw hyperql::ConfigError("missing value for --" + token);
      value = extras[++i];
    }
    hyperql::apply_override(cfg, token, value);
  }
  if (!args.out_dir.empty()) cfg["out_dir"] = args.out_dir;
  return cfg;
}

int dispatch(const std::string& name, Json cfg) {
  if (name == "train") {
    hyperql::run_train(std::move(cfg));
  } else if (name == "cs-sweep") {
    hyperql::run_cs_sweep(std::move(cfg));
  } else if (name == "prop1") {
    hyperql::run_prop1(std::move(cfg));
  } else if (name == "meta-train") {
    hyperql::run_meta_train(std::move(cfg));
  } else if (name == "meta-variance") {
    hyperql::run_meta_variance(std::move(cfg));
  } else if (name == "init-audit") {
    hyperql::run_init_audit(std::move(cfg));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperql: hypernetwork actor-critic laboratory"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* cmd;
    CommonArgs args;
    Json defaults;
    std::vector<std::pair<std::string, std::string>> mapped;
  };
  // deque: element references must survive later insertions, CLI11 keeps them.
  std::deque<Sub> subs;

  auto make = [&](const char* name, const char* help, Json defaults) -> Sub& {
    subs.push_back(Sub{app.add_subcommand(name, help), {}, std::move(defaults), {}});
    add_common(subs.back().cmd, subs.back().args);
    return subs.back();
  };

  Sub& train = make("train", "off-policy actor-critic training on LQR",
                    hyperql::default_train_config());
  Sub& sweep = make("cs-sweep", "training with periodic gradient cosine evaluation",
                    hyperql::default_cs_sweep_config());
  Sub& prop1 = make("prop1", "learning-rate bound verification on quadratic bandits",
                    hyperql::default_prop1_config());
  Sub& meta_train = make("meta-train", "meta-policy training on point-mass tasks",
                         hyperql::default_meta_train_config());
  Sub& meta_var = make("meta-variance", "gradient-noise statistics at checkpoints",
                       hyperql::default_meta_variance_config());
  make("init-audit", "dynamic-weight distribution audit of the init schemes",
       hyperql::default_init_audit_config());

  // Convenience flags mapped onto config keys.
  auto map_flag = [](Sub& sub, const char* flag, const char* key, const char* help) {
    sub.cmd->add_option_function<std::string>(
        flag, [&sub, key](const std::string& v) { sub.mapped.emplace_back(key, v); }, help);
  };
  for (Sub* s : {&train, &sweep}) {
    map_flag(*s, "--env", "env.kind", "environment kind");
    map_flag(*s, "--critic", "trainer.critic", "critic kind");
    map_flag(*s, "--algo", "trainer.algo", "td3 or sac");
    map_flag(*s, "--steps", "trainer.total_steps", "total environment steps");
    map_flag(*s, "--seed", "seed", "run seed");
  }
  map_flag(prop1, "--alphas", "alphas", "alpha grid, JSON array");
  map_flag(prop1, "--instances", "instances", "bandit instance count");
  map_flag(prop1, "--seed", "seed", "run seed");
  for (Sub* s : {&meta_train, &meta_var}) {
    map_flag(*s, "--model", "model", "hyper or mlp");
    map_flag(*s, "--objective", "objective", "maml or multitask");
    map_flag(*s, "--family", "family", "fwdback or velocity");
    map_flag(*s, "--seed", "seed", "run seed");
  }

  // Plot stands alone: CSV in, SVG out.
  struct PlotArgs {
    std::vector<std::string> inputs;
    std::string out = "plot.svg";
    hyperql::PlotSpec spec;
  } plot_args;
  CLI::App* plot_cmd = app.add_subcommand("plot", "render a polyline chart from metrics CSV");
  plot_cmd->add_option("--in", plot_args.inputs, "input CSV file(s)")->required();
  plot_cmd->add_option("--out", plot_args.out, "output SVG path");
  plot_cmd->add_option("--x", plot_args.spec.x, "x column");
  plot_cmd->add_option("--y", plot_args.spec.y, "y column")->required();
  plot_cmd->add_option("--window", plot_args.spec.window, "moving average window");
  plot_cmd->add_flag("--iqr", plot_args.spec.iqr, "median with interquartile band");

  try {
    app.parse(argc, argv);

    if (plot_cmd->parsed()) {
      std::vector<hyperql::CsvTable> tables;
      for (const std::string& path : plot_args.inputs) {
        tables.push_back(hyperql::load_csv(path));
      }
      const std::string svg = hyperql::render_svg(tables, plot_args.spec);
      std::ofstream f(plot_args.out, std::ios::binary);
      if (!f) throw hyperql::IoError("cannot write " + plot_args.out);
      f << svg;
      return kOk;
    }
    for (Sub& sub : subs) {
      if (!sub.cmd->parsed()) continue;
      sub.args.extras = sub.cmd->remaining();
      Json cfg = materialize(sub.defaults, sub.args, sub.mapped);
      return dispatch(sub.cmd->get_name(), std::move(cfg));
    }
    return kConfigError;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  } catch (const hyperql::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const hyperql::TrainDivergence& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return kDivergence;
  } catch (const hyperql::EnvDivergence& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return kDivergence;
  } catch (const hyperql::InstabilityError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return kDivergence;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "missing input: %s\n", e.what());
    return kMissingInput;
  } catch (const hyperql::IoError& e) {
    std::fprintf(stderr, "missing input: %s\n", e.what());
    return kMissingInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
