#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kerrcomb/io/run.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<unsigned> workers;
  std::optional<std::uint64_t> seed;
  bool plot = false;
  bool quiet = false;
};

void write_error(const std::string& out_dir, const kerrcomb::io::json& j) {
  std::cerr << j.dump() << "\n";
  if (out_dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream f(std::filesystem::path(out_dir) / "error.json");
  if (f) f << j.dump(2) << "\n";
}

int execute(const std::string& sub, const Flags& fl) {
  using namespace kerrcomb;
  std::string out_dir = fl.out;
  try {
    io::json doc = io::read_json_file(fl.config);
    if (fl.seed) doc["seed"] = *fl.seed;
    if (fl.workers) doc["workers"] = *fl.workers;
    if (!fl.out.empty()) doc["output"] = fl.out;
    auto rc = io::load_config(std::move(doc));
    out_dir = rc.output;
    if (!fl.quiet)
      io::progress_hook() = [](std::size_t k, std::size_t n) { std::cerr << "cell " << k << "/" << n << " done\n"; };
    const auto rep = io::run(sub, rc, out_dir, fl.plot);
    std::cout << io::json{{"status", "ok"},
                          {"subcommand", sub},
                          {"output", out_dir},
                          {"artifacts", rep.artifacts},
                          {"failed_cells", rep.failures}}
                     .dump()
              << "\n";
    return 0;
  } catch (const io::ConfigError& e) {
    write_error(out_dir, io::error_json(e));
    return 2;
  } catch (const std::exception& e) {
    write_error(out_dir, io::error_json(e));
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-comb analysis of a driven cavity coupled to a Kerr mode"};
  app.set_version_flag("--version", std::string(kerrcomb::io::kVersion));
  app.require_subcommand(1);
  Flags fl;
  std::string chosen;
  for (const auto& name : kerrcomb::io::subcommands()) {
    auto* sc = app.add_subcommand(name);
    sc->add_option("--config", fl.config, "JSON configuration file")->required()->check(CLI::ExistingFile);
    sc->add_option("--out", fl.out, "output directory (overrides the config)");
    sc->add_option("--workers", fl.workers, "worker threads")->check(CLI::PositiveNumber);
    sc->add_option("--seed", fl.seed, "master seed");
    sc->add_flag("--plot", fl.plot, "also write SVG plots");
    sc->add_flag("--quiet", fl.quiet, "suppress progress messages");
    sc->callback([&chosen, name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    const kerrcomb::io::json j = {{"error", {{"code", "CONFIG"}, {"message", e.what()}}}};
    std::cerr << j.dump() << "\n";
    return 2;
  }
  return execute(chosen, fl);
}
