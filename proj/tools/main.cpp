#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dobs/commands.hpp"

namespace {

struct SubArgs {
  std::string config;
  std::string out;
  int stride = 0;
};

void add_common(CLI::App* sub, SubArgs& a) {
  sub->add_option("-c,--config", a.config, "configuration file")->required();
  sub->add_option("-o,--out", a.out, "output directory (overrides output.dir)");
  sub->add_option("--stride", a.stride,
                  "emit every stride-th grid row (overrides output.stride)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Delayed observer toolkit: simulate a triangular plant, synthesize "
      "certified gain schedules, run single and switching observers"};
  app.require_subcommand(1);

  SubArgs args;
  const char* names[] = {"simulate", "synthesize", "observe", "switch", "verify"};
  const char* briefs[] = {
      "integrate the plant and write its trace",
      "build the gain schedule, write it, and certify it",
      "run the delayed observer against the certified envelope",
      "run the stage-switching estimator from a growing start ball",
      "re-run every certificate and report worst margins"};
  for (int i = 0; i < 5; ++i) add_common(app.add_subcommand(names[i], briefs[i]), args);

  CLI11_PARSE(app, argc, argv);

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    dobs::RunConfig rc = dobs::load_config(args.config);
    if (!args.out.empty()) rc.out_dir = args.out;
    if (args.stride > 0) rc.stride = args.stride;
    return dobs::run_command(cmd, rc, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return dobs::exit_code_for(e);
  }
}
