// gduap command-line tool.
//
//   gduap <command> --config run.json [--seed N] [--out DIR] [--overwrite]
//   gduap synth-data [--out DIR] [--seed N]
//   gduap schema
//
// Exit status: 0 success, 2 invalid configuration, 1 runtime failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "gduap/config.hpp"
#include "gduap/errors.hpp"
#include "gduap/io.hpp"
#include "gduap/run.hpp"
#include "gduap/runtime.hpp"

namespace {

void log_error(const std::string& command, const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j{{"level", "error"}, {"command", command}, {"kind", kind}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  gduap::tune_allocator();
  CLI::App app{"Data-free universal adversarial perturbations: crafting and evaluation"};
  app.require_subcommand(1);

  struct RunFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool overwrite = false;
  };
  RunFlags flags;
  for (const auto& name : gduap::run::commands()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " stage");
    sub->add_option("--config", flags.config, "run configuration (JSON)")->required();
    sub->add_option("--seed", flags.seed, "replace every seed in the configuration");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_flag("--overwrite", flags.overwrite, "replace an existing output directory");
  }
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth-data", "write the synthetic desk datasets");
  synth->add_option("--out", synth_out, "target directory (default: $GDUAP_CACHE_DIR or ./data)");
  synth->add_option("--seed", synth_seed, "generator seed");
  auto* schema = app.add_subcommand("schema", "print the configuration JSON schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (schema->parsed()) {
    std::cout << gduap::config::kSchema;
    return 0;
  }
  if (synth->parsed()) {
    try {
      const auto root = synth_out.empty() ? gduap::run::default_cache_dir() : std::filesystem::path(synth_out);
      gduap::run::write_synthetic_datasets(root, synth_seed);
      std::cout << "wrote datasets under " << root.string() << "\n";
      return 0;
    } catch (const std::exception& e) {
      log_error("synth-data", "runtime", e.what());
      return 1;
    }
  }

  const std::string command = app.get_subcommands().front()->get_name();
  gduap::run::RunConfig cfg;
  try {
    std::string text;
    try {
      text = gduap::io::read_file(flags.config);
    } catch (const std::exception& e) {
      throw gduap::ConfigError("cannot read config '" + flags.config + "'");
    }
    auto doc = gduap::config::parse_and_validate(text, flags.config);
    cfg = gduap::run::build_config(std::move(doc), {command, flags.seed, flags.out, flags.overwrite});
    // preflight runs inside execute; config errors surface there as well
    return gduap::run::execute(cfg, flags.overwrite, std::cout);
  } catch (const gduap::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const gduap::Error& e) {
    log_error(command, e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    log_error(command, "internal", e.what());
    return 1;
  }
}
