// wcpp: weighted coverage path planning pipeline.
// Subcommands run the stages of the hierarchy separately or end to end:
//   keypoints  GMM key-point extraction, prints and renders them
//   run        full scenario run (warm or cold), emits csv/svg/report
//   compare    tabulates report files side by side
//   genmap     rasterizes a Gaussian sum into the grid map format

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wcpp/sim.hpp"

namespace {

std::uint64_t resolve_seed(const CLI::Option* seed_opt, std::uint64_t cli_seed,
                           std::uint64_t cfg_seed) {
  if (seed_opt->count() > 0) return cli_seed;
  if (const char* env = std::getenv("WCPP_SEED")) {
    return static_cast<std::uint64_t>(
        wcpp::parse_double(env, "WCPP_SEED environment variable"));
  }
  return cfg_seed;
}

int cmd_run(const std::string& scenario_path, const std::string& mode_str,
            const CLI::Option* seed_opt, std::uint64_t cli_seed,
            const std::string& out_dir) {
  wcpp::ScenarioConfig cfg = wcpp::load_scenario(scenario_path);
  cfg.seed = resolve_seed(seed_opt, cli_seed, cfg.seed);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  wcpp::RunMode mode = mode_str == "cold" ? wcpp::RunMode::cold : wcpp::RunMode::warm;
  wcpp::RunReport report = wcpp::run_scenario(cfg, mode);
  std::cout << wcpp::make_report_table(std::vector<wcpp::RunReport>{report});
  std::cout << "trajectory: " << report.trajectory_csv << '\n'
            << "render:     " << report.svg << '\n'
            << "report:     " << report.report << '\n';
  return 0;
}

int cmd_keypoints(const std::string& scenario_path, int n_override, int m_override,
                  const CLI::Option* seed_opt, std::uint64_t cli_seed,
                  const std::string& out_dir) {
  wcpp::ScenarioConfig cfg = wcpp::load_scenario(scenario_path);
  cfg.seed = resolve_seed(seed_opt, cli_seed, cfg.seed);
  if (n_override > 0) cfg.n_components = n_override;
  if (m_override > 0) cfg.m_keypoints = m_override;
  if (m_override <= 0 && n_override > 0) {
    cfg.m_keypoints = std::min(cfg.m_keypoints, cfg.n_components);
  }
  if (cfg.m_keypoints > cfg.n_components) {
    throw wcpp::ConfigError("keypoints: m must not exceed n");
  }
  if (!out_dir.empty()) cfg.out_dir = out_dir;

  wcpp::ScenarioData data = wcpp::build_scenario_data(cfg);
  auto mass = wcpp::grid_mass_points(data.grid);
  wcpp::GmmModel model = wcpp::fit_gmm(mass, cfg.n_components, cfg.seed,
                                       data.grid.cell_size_m / 2.0);
  wcpp::KeyPointSet kps = wcpp::select_key_points(model, cfg.m_keypoints, data.field);

  std::cout << "key points (n = " << cfg.n_components << ", m = " << cfg.m_keypoints
            << ", seed = " << cfg.seed << "):\n";
  for (int i = 0; i < kps.m; ++i) {
    std::cout << "  " << i + 1 << ": (" << wcpp::format_double(kps.points[i].x())
              << ", " << wcpp::format_double(kps.points[i].y()) << ")  score "
              << wcpp::format_double(kps.source_scores[i]) << '\n';
  }

  std::filesystem::create_directories(cfg.out_dir);
  auto svg_path = cfg.out_dir / (cfg.name + ".keypoints.svg");
  wcpp::Overlays ov;
  ov.keypoints = kps.points;
  ov.x0 = cfg.x0.head<2>();
  std::ofstream out(svg_path);
  out << wcpp::render_svg(data.grid, ov);
  std::cout << "render: " << svg_path.string() << '\n';
  return 0;
}

int cmd_compare(const std::vector<std::string>& report_paths) {
  std::vector<wcpp::RunReport> reports;
  for (const auto& path : report_paths) {
    std::ifstream in(path);
    if (!in) throw wcpp::ConfigError("cannot open report file " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
      reports.push_back(j.get<wcpp::RunReport>());
    } catch (const nlohmann::json::exception& e) {
      throw wcpp::ConfigError("report file " + path + ": " + e.what());
    }
  }
  std::cout << wcpp::make_report_table(reports);
  return 0;
}

int cmd_genmap(const std::string& out_path, double width, double height, double cell,
               const std::string& components) {
  std::vector<wcpp::GaussComponent> comps;
  std::istringstream in(components);
  std::string part;
  while (std::getline(in, part, ';')) {
    std::istringstream ps(part);
    std::vector<double> nums;
    std::string tok;
    while (ps >> tok) nums.push_back(wcpp::parse_double(tok, "components"));
    if (nums.empty()) continue;
    if (nums.size() != 6) {
      throw wcpp::ConfigError("genmap: each component needs 6 numbers "
                              "(w mx my sxx sxy syy)");
    }
    wcpp::GaussComponent g;
    g.weight = nums[0];
    g.mean = wcpp::Vec2(nums[1], nums[2]);
    g.cov << nums[3], nums[4], nums[4], nums[5];
    comps.push_back(g);
  }
  if (comps.empty()) throw wcpp::ConfigError("genmap: no components given");
  wcpp::GridMap map =
      wcpp::rasterize_gaussians(comps, wcpp::Rect{0, 0, width, height}, cell);
  std::ofstream out(out_path);
  if (!out) throw wcpp::ConfigError("genmap: cannot write " + out_path);
  wcpp::write_grid_map(map, out);
  std::cout << "wrote " << map.rows << "x" << map.cols << " grid to " << out_path
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weighted coverage path planning toolkit"};
  app.require_subcommand(1);

  std::string scenario_path, mode = "warm", out_dir;
  std::uint64_t seed = 0;
  int n_override = 0, m_override = 0;
  std::vector<std::string> report_paths;
  std::string gen_out, gen_components;
  double gen_width = 600, gen_height = 600, gen_cell = 25;

  auto* run = app.add_subcommand("run", "run a scenario end to end");
  run->add_option("--scenario", scenario_path, "scenario config file")->required();
  run->add_option("--mode", mode, "warm or cold")
      ->check(CLI::IsMember({"warm", "cold"}));
  auto* run_seed = run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--out", out_dir, "output directory");

  auto* keypoints = app.add_subcommand("keypoints", "extract and render key points");
  keypoints->add_option("--scenario", scenario_path, "scenario config file")
      ->required();
  keypoints->add_option("--n", n_override, "mixture components");
  keypoints->add_option("--m", m_override, "selected key points");
  auto* kp_seed = keypoints->add_option("--seed", seed, "override the scenario seed");
  keypoints->add_option("--out", out_dir, "output directory");

  auto* compare = app.add_subcommand("compare", "tabulate report files");
  compare->add_option("--reports", report_paths, "report files")
      ->required()
      ->expected(-1);

  auto* genmap = app.add_subcommand("genmap", "rasterize a Gaussian sum to a grid map");
  genmap->add_option("--out", gen_out, "output grid file")->required();
  genmap->add_option("--width", gen_width, "map width, meters");
  genmap->add_option("--height", gen_height, "map height, meters");
  genmap->add_option("--cell", gen_cell, "cell size, meters");
  genmap
      ->add_option("--components", gen_components,
                   "'w mx my sxx sxy syy' list, ';' separated")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(scenario_path, mode, run_seed, seed, out_dir);
    if (keypoints->parsed())
      return cmd_keypoints(scenario_path, n_override, m_override, kp_seed, seed,
                           out_dir);
    if (compare->parsed()) return cmd_compare(report_paths);
    if (genmap->parsed())
      return cmd_genmap(gen_out, gen_width, gen_height, gen_cell, gen_components);
  } catch (const wcpp::SolverError& e) {
    std::cerr << "solver failure (mpc): " << e.what() << '\n';
    return 2;
  } catch (const wcpp::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const wcpp::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
