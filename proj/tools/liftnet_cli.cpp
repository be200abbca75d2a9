/*
 * liftnet_cli.cpp - command-line experiment runner
 *
 *  Copyright (c) 2026 The liftnet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "liftnet/cli.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv) {
  using namespace liftnet;
  CLI::App app{"liftnet experiment runner"};
  app.require_subcommand(1, 1);

  cli::Overrides o;
  long seed = 0;
  std::string out;
  int precision = 64;
  std::string task;
  for (const char* name : {"train", "invert", "bench", "data"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", o.config_path, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--out", out, "output directory");
    sub->add_flag("--paper-scale", o.paper_scale, "full-scale experiment constants");
    sub->add_option("--precision", precision, "floating point width")->check(CLI::IsMember({32, 64}));
    sub->callback([&task, name] { task = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }
  CLI::App* sub = app.get_subcommand(task);
  if (sub->count("--seed")) o.seed = seed;
  if (sub->count("--out")) o.out = out;
  if (sub->count("--precision")) o.precision = precision;
  return cli::run_task(task, o);
}
