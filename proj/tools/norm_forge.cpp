// Copyright 2026 The norm-forge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// norm-forge <command> --config <path> [--only <study|dimension|model>] [--seed N] [--out <dir>]

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "normforge/pipeline.hpp"

namespace pl = normforge::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Machine-generated psycholinguistic norms: elicitation, aggregation and validation"};
  app.set_version_flag("--version", std::string(NORMFORGE_VERSION));
  std::string command;
  std::string config_path;
  std::string only;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
  app.add_option("command", command,
                 "ingest | elicit | aggregate | validate | substitute | reliability | error-analysis | report | all")
      ->required();
  app.add_option("--config,-c", config_path, "run config (JSON)")->required();
  app.add_option("--only", only, "restrict to one study, dimension or model");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out, "override the output directory");
  app.add_flag("--quiet,-q", quiet, "suppress progress messages");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : pl::kExitConfig;
  }

  auto stage = pl::parse_stage(command);
  if (!stage) {
    std::cerr << "norm-forge: unknown command '" << command << "'\n" << app.help();
    return pl::kExitConfig;
  }
  try {
    auto config = normforge::load_run_config(config_path);
    pl::RunOptions options;
    options.only = only;
    options.seed = seed;
    if (out) options.output_dir = *out;
    if (!quiet) options.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
    pl::Pipeline pipeline(std::move(config), std::move(options));
    pipeline.run(*stage);
    if (!quiet) std::cerr << "outputs in " << pipeline.out().string() << "\n";
    return pl::kExitOk;
  } catch (const pl::StageFailure& e) {
    std::cerr << "norm-forge: " << e.what() << "\n";
    return e.exit_code();
  } catch (const normforge::Error& e) {
    std::cerr << "norm-forge: " << e.what() << "\n";
    return pl::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "norm-forge: internal error: " << e.what() << "\n";
    return pl::kExitOther;
  }
}
