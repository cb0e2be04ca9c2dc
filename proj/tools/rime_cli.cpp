#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <thread>

#include <malloc.h>

#include <CLI11.hpp>

#include "rime/rime.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

rime::RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  auto kv = rime::load_key_values(path);
  if (seed) kv["seed"] = std::to_string(*seed);
  return rime::RunConfig::from_key_values(kv);
}

int print_report(const rime::BoundCheckReport& r, bool json) {
  if (json) {
    std::cout << r.to_json().dump(2) << "\n";
  } else {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.grid << "\n"
              << "  points checked: " << r.points_checked << "\n"
              << "  worst margin:   " << rime::format_number(r.worst_margin) << " (tolerance " << r.tolerance << ")\n";
    if (r.counterexample)
      std::cout << "  counterexample: rho=" << r.counterexample->rho << " case " << r.counterexample->label_case
                << " p0=" << r.counterexample->p0 << " observed=" << r.counterexample->observed
                << " bound=" << r.counterexample->bound << "\n";
    std::cout << "  details: " << r.details.dump() << "\n";
  }
  return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);

  CLI::App app{"Robust preference-based RL: training, ablations, verification and the feedback service"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings");

  auto* run_cmd = app.add_subcommand("run", "Train one agent from a config file");
  std::string config_path, out_dir = "runs/run";
  std::optional<std::uint64_t> seed;
  run_cmd->add_option("--config", config_path, "Key-value config file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", seed, "Override the config seed");
  run_cmd->add_option("--out", out_dir, "Output directory for metrics and checkpoints");

  auto* ablate_cmd = app.add_subcommand("ablate", "Run the warm start / lower bound / upper bound ablation matrix");
  std::string ablate_config, ablate_out = "runs/ablation";
  ablate_cmd->add_option("--config", ablate_config, "Base config file")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--out", ablate_out, "Output directory; one subdirectory per variant");

  auto* verify_cmd = app.add_subcommand("verify", "Executable checks of the theoretical bounds");
  verify_cmd->require_subcommand(1);
  bool json_out = false;
  verify_cmd->add_flag("--json", json_out, "Print the machine-readable report");
  auto* th1 = verify_cmd->add_subcommand("theorem1", "KL lower bound for corrupted labels");
  std::size_t p_grid = 10000;
  th1->add_option("--p-grid", p_grid, "Probability grid size");
  auto* qb = verify_cmd->add_subcommand("qbound", "Reward error to Q error bound");
  std::size_t num_mdps = 100;
  qb->add_option("--mdps", num_mdps, "Random MDPs per (gamma, delta) setting");

  auto* serve_cmd = app.add_subcommand("serve", "Train with a human teacher behind the feedback service");
  int port = 8080;
  std::string host = "127.0.0.1", serve_config, data_dir = "feedback_data", ui_dir, serve_out = "runs/human";
  serve_cmd->add_option("--port", port, "HTTP port")->envname("RIME_PORT");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--config", serve_config, "Run config; teacher is forced to human")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--data-dir", data_dir, "Label journal directory")->envname("RIME_DATA_DIR");
  serve_cmd->add_option("--ui", ui_dir, "Directory with the annotation client to serve statically");
  serve_cmd->add_option("--out", serve_out, "Output directory for metrics and checkpoints");

  auto* plot_cmd = app.add_subcommand("plot", "Learning-curve SVG from one or more metrics.csv files");
  std::vector<std::string> plot_inputs;
  std::string plot_out = "curve.svg", plot_title = "eval return";
  plot_cmd->add_option("inputs", plot_inputs, "metrics.csv files")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("-o,--out", plot_out, "Output SVG");
  plot_cmd->add_option("--title", plot_title, "Chart title");

  CLI11_PARSE(app, argc, argv);
  if (quiet) rime::log_level() = rime::LogLevel::warn;

  try {
    if (*run_cmd) {
      const auto cfg = load_config(config_path, seed);
      const auto res = rime::run(cfg, out_dir);
      std::cout << "final eval return " << rime::format_number(res.final_eval.mean_return) << ", success "
                << rime::format_number(res.final_eval.success_rate) << ", labels " << res.labels_total << ", sessions "
                << res.sessions.size() << "\n";
      return 0;
    }
    if (*ablate_cmd) {
      const auto base = load_config(ablate_config, std::nullopt);
      using T = rime::AblationToggle;
      for (const auto& v : rime::ablation_matrix(base, {T::warm_start, T::tau_lower, T::tau_upper})) {
        const auto res = rime::run(v.config, ablate_out + "/" + v.name);
        std::cout << v.name << "  final eval return " << rime::format_number(res.final_eval.mean_return) << "\n";
      }
      return 0;
    }
    if (*verify_cmd) {
      if (*th1) return print_report(rime::check_theorem1(rime::default_rho_grid(), p_grid), json_out);
      int status = 0;
      nlohmann::json all = nlohmann::json::array();
      for (double gamma : {0.9, 0.99})
        for (double delta : {0.01, 0.1, 1.0}) {
          const auto r = rime::check_q_bound(num_mdps, delta, gamma);
          if (json_out) all.push_back(r.to_json());
          else print_report(r, false);
          status |= r.pass ? 0 : 1;
        }
      if (json_out) std::cout << nlohmann::json{{"pass", status == 0}, {"reports", all}}.dump(2) << "\n";
      return status;
    }
    if (*serve_cmd) {
      auto kv = rime::load_key_values(serve_config);
      kv["teacher"] = "human";
      const auto cfg = rime::RunConfig::from_key_values(kv);
      rime::FeedbackHub hub(data_dir);
      rime::FeedbackServer server(hub, ui_dir);
      server.start(host, port);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::thread watcher([&] {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
        hub.shutdown();
      });
      int status = 0;
      try {
        const auto res = rime::run(cfg, serve_out, &hub);
        std::cout << "final eval return " << rime::format_number(res.final_eval.mean_return) << "\n";
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        status = 1;
      }
      g_stop = true;
      watcher.join();
      server.stop();
      return status;
    }
    if (*plot_cmd) {
      std::vector<rime::PlotSeries> series;
      for (const auto& path : plot_inputs) {
        rime::PlotSeries s;
        s.name = std::filesystem::path(path).parent_path().filename().string();
        if (s.name.empty()) s.name = path;
        for (const auto& r : rime::read_metrics_csv(path)) {
          s.x.push_back(static_cast<double>(r.env_step));
          s.y.push_back(r.eval_return);
        }
        series.push_back(std::move(s));
      }
      rime::write_text(plot_out, rime::svg_plot(series, plot_title));
      std::cout << "wrote " << plot_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
